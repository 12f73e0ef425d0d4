use std::fs::OpenOptions;
use std::io::{LineWriter, Write};
use std::path::Path;
use std::sync::Arc;

use parking_lot::Mutex;
use serde_json::{json, Value};

use super::{Phase, ScheduleCause, ToolCallbacks, ToolEvent};
use crate::sched::{current_task_id, current_worker};

fn cause_str(c: ScheduleCause) -> &'static str {
    match c {
        ScheduleCause::Complete => "complete",
        ScheduleCause::Yield => "yield",
        ScheduleCause::Suspend => "suspend",
    }
}

pub(crate) fn record(ev: &ToolEvent) -> Value {
    let mut worker = current_worker().map(|w| w.index());
    let mut task = current_task_id().map(|t| t.as_u64());
    let mut team = None;
    let mut extra = serde_json::Map::new();
    match ev {
        ToolEvent::ThreadBegin(w) | ToolEvent::ThreadEnd(w) => worker = Some(w.index()),
        ToolEvent::ParallelBegin(p) => {
            team = Some(p.team_id.as_u64());
            task = p.parent_task.map(|t| t.as_u64());
            extra.insert("team_size".into(), json!(p.team_size));
            extra.insert("codeptr".into(), json!(p.codeptr.map(|l| l.to_string())));
        }
        ToolEvent::ParallelEnd(t) => team = Some(t.as_u64()),
        ToolEvent::TaskCreate(c) => {
            task = Some(c.new_task.as_u64());
            extra.insert("creator".into(), json!(c.creator.map(|t| t.as_u64())));
            extra.insert("deps_count".into(), json!(c.deps_count));
        }
        ToolEvent::TaskSchedule(s) => {
            task = s.next_task.map(|t| t.as_u64());
            extra.insert("prior_task".into(), json!(s.prior.map(|p| p.task.as_u64())));
            extra.insert("prior_cause".into(), json!(s.prior.map(|p| cause_str(p.cause))));
        }
        ToolEvent::ImplicitTask(i) => {
            team = Some(i.team_id.as_u64());
            extra.insert(
                "phase".into(),
                json!(match i.phase {
                    Phase::Begin => "begin",
                    Phase::End => "end",
                }),
            );
            extra.insert("thread_num".into(), json!(i.thread_num));
        }
    }
    let mut obj = serde_json::Map::new();
    obj.insert("kind".into(), json!(ev.kind().as_str()));
    obj.insert("timestamp".into(), json!(crate::par::get_wtime()));
    obj.insert("worker".into(), json!(worker));
    obj.insert("task".into(), json!(task));
    obj.insert("team".into(), json!(team));
    obj.extend(extra);
    Value::Object(obj)
}

pub(super) fn json_lines(path: &Path) -> std::io::Result<ToolCallbacks> {
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let out = Arc::new(Mutex::new(LineWriter::new(file)));
    Ok(ToolCallbacks::new().all(move |ev| {
        let line = record(ev).to_string();
        let mut w = out.lock();
        if let Err(e) = writeln!(w, "{line}") {
            log::warn!("tool log write failed: {e}");
        }
    }))
}
