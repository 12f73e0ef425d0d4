use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use fj_core::par::{lock_init, SimpleLock};
use fj_core::policies::PolicyKind;
use fj_core::sched::{
    current_worker, in_task, suspend_current, yield_now, Priority, Runtime, RuntimeConfig, SchedError, WakeToken,
};
use fj_core::tooling::ToolCallbacks;

fn rt(workers: usize, policy: PolicyKind) -> Runtime {
    Runtime::start(RuntimeConfig::new(workers, policy)).unwrap()
}

#[test]
fn one_task_runs_once() {
    let rt = rt(2, PolicyKind::default());
    let c = Arc::new(AtomicUsize::new(0));
    let c2 = c.clone();
    rt.spawn(move || {
        c2.fetch_add(1, Ordering::Relaxed);
    }, Priority::Normal)
    .unwrap();
    rt.wait_idle().unwrap();
    assert_eq!(c.load(Ordering::Relaxed), 1);
}

#[test]
fn ten_thousand_tasks() {
    for policy in PolicyKind::ALL {
        let rt = rt(3, policy);
        let c = Arc::new(AtomicUsize::new(0));
        for _ in 0..10_000 {
            let c = c.clone();
            rt.spawn(move || {
                c.fetch_add(1, Ordering::Relaxed);
            }, Priority::Normal)
            .unwrap();
        }
        rt.wait_idle().unwrap();
        assert_eq!(c.load(Ordering::Relaxed), 10_000, "{policy}");
    }
}

#[test]
fn high_priority_completes_before_low() {
    let rt = rt(1, PolicyKind::PriorityLocal);
    let order = Arc::new(Mutex::new(Vec::new()));
    let o = order.clone();
    let inner = rt.clone();
    // The single worker is busy in this task while the queue fills up.
    rt.spawn(move || {
        for i in 0..20 {
            let prio = if i % 2 == 0 { Priority::Low } else { Priority::High };
            let o = o.clone();
            inner
                .spawn(move || o.lock().unwrap().push(prio), prio)
                .unwrap();
        }
    }, Priority::Normal)
    .unwrap();
    rt.wait_idle().unwrap();
    let order = order.lock().unwrap();
    let last_high = order.iter().rposition(|p| *p == Priority::High).unwrap();
    let first_low = order.iter().position(|p| *p == Priority::Low).unwrap();
    assert!(last_high < first_low, "{order:?}");
}

#[test]
fn yield_loop() {
    let rt = rt(1, PolicyKind::default());
    let counter = Arc::new(AtomicUsize::new(0));
    let c = counter.clone();
    rt.run(move || {
        for _ in 0..5 {
            yield_now();
            c.fetch_add(1, Ordering::Relaxed);
        }
    })
    .unwrap();
    assert_eq!(counter.load(Ordering::Relaxed), 5);
}

#[test]
fn yielding_tasks_do_not_starve() {
    for policy in PolicyKind::ALL {
        let rt = rt(1, policy);
        let done = Arc::new(AtomicUsize::new(0));
        for _ in 0..2 {
            let d = done.clone();
            rt.spawn(move || {
                for _ in 0..100 {
                    yield_now();
                }
                d.fetch_add(1, Ordering::Relaxed);
            }, Priority::Normal)
            .unwrap();
        }
        rt.wait_idle().unwrap();
        assert_eq!(done.load(Ordering::Relaxed), 2, "{policy}");
    }
}

#[test]
fn yield_among_many_peers() {
    let rt = rt(2, PolicyKind::default());
    let done = Arc::new(AtomicUsize::new(0));
    let (d, inner) = (done.clone(), rt.clone());
    rt.spawn(move || {
        for _ in 0..1000 {
            let d = d.clone();
            inner
                .spawn(move || {
                    d.fetch_add(1, Ordering::Relaxed);
                }, Priority::Normal)
                .unwrap();
        }
        yield_now();
        d.fetch_add(1, Ordering::Relaxed);
    }, Priority::Normal)
    .unwrap();
    rt.wait_idle().unwrap();
    assert_eq!(done.load(Ordering::Relaxed), 1001);
}

#[test]
fn yield_outside_task_is_noop_in_release() {
    assert!(!in_task());
    if !cfg!(debug_assertions) {
        yield_now();
    }
}

#[test]
fn suspend_sees_writes_made_before_resume() {
    let rt = rt(2, PolicyKind::default());
    let slot: Arc<Mutex<Option<WakeToken>>> = Arc::default();
    let value = Arc::new(AtomicUsize::new(0));
    let seen = Arc::new(AtomicUsize::new(0));
    let (s, v, seen2) = (slot.clone(), value.clone(), seen.clone());
    rt.spawn(move || {
        suspend_current(|t| *s.lock().unwrap() = Some(t));
        seen2.store(v.load(Ordering::Relaxed), Ordering::Relaxed);
    }, Priority::Normal)
    .unwrap();
    let (s, v) = (slot.clone(), value.clone());
    rt.spawn(move || {
        let token = loop {
            if let Some(t) = s.lock().unwrap().take() {
                break t;
            }
            yield_now();
        };
        v.store(42, Ordering::Relaxed);
        token.resume().unwrap();
    }, Priority::Normal)
    .unwrap();
    rt.wait_idle().unwrap();
    assert_eq!(seen.load(Ordering::Relaxed), 42);
}

#[test]
fn suspended_task_does_not_block_its_worker() {
    let rt = rt(1, PolicyKind::default());
    let token: Arc<Mutex<Option<WakeToken>>> = Arc::default();
    let done = Arc::new(AtomicUsize::new(0));
    let (t, d) = (token.clone(), done.clone());
    rt.spawn(move || {
        suspend_current(|tok| *t.lock().unwrap() = Some(tok));
        d.fetch_add(1, Ordering::Relaxed);
    }, Priority::Normal)
    .unwrap();
    for _ in 0..50 {
        let d = done.clone();
        rt.spawn(move || {
            d.fetch_add(1, Ordering::Relaxed);
        }, Priority::Normal)
        .unwrap();
    }
    while done.load(Ordering::Relaxed) < 50 {
        std::thread::yield_now();
    }
    let tok = loop {
        if let Some(t) = token.lock().unwrap().clone() {
            break t;
        }
        std::thread::yield_now();
    };
    tok.resume().unwrap();
    rt.wait_idle().unwrap();
    assert_eq!(done.load(Ordering::Relaxed), 51);
    assert_eq!(tok.resume(), Err(SchedError::AlreadyResumed));
}

#[test]
fn token_misuse() {
    assert_eq!(WakeToken::new().resume(), Err(SchedError::NotSuspended));
}

#[test]
fn lock_held_by_later_task_on_one_worker() {
    let rt = rt(1, PolicyKind::default());
    let lock = Arc::new(lock_init());
    let holder_in = Arc::new(AtomicBool::new(false));
    let log = Arc::new(Mutex::new(Vec::new()));
    let (l, h, lg) = (lock.clone(), holder_in.clone(), log.clone());
    let inner = rt.clone();
    rt.spawn(move || {
        l.set().unwrap();
        let (l2, lg2) = (l.clone(), lg.clone());
        inner
            .spawn(move || {
                l2.set().unwrap();
                lg2.lock().unwrap().push("waiter");
                l2.unset().unwrap();
            }, Priority::Normal)
            .unwrap();
        h.store(true, Ordering::Relaxed);
        // Let the waiter run and suspend on the lock.
        for _ in 0..10 {
            yield_now();
        }
        lg.lock().unwrap().push("holder");
        l.unset().unwrap();
    }, Priority::Normal)
    .unwrap();
    rt.wait_idle().unwrap();
    assert_eq!(*log.lock().unwrap(), vec!["holder", "waiter"]);
    assert!(!SimpleLock::is_locked(&lock));
}

#[test]
fn shutdown_runs_everything_then_rejects() {
    let rt = rt(2, PolicyKind::default());
    let c = Arc::new(AtomicUsize::new(0));
    for _ in 0..1000 {
        let c = c.clone();
        rt.spawn(move || {
            c.fetch_add(1, Ordering::Relaxed);
        }, Priority::Normal)
        .unwrap();
    }
    rt.shutdown().unwrap();
    assert_eq!(c.load(Ordering::Relaxed), 1000);
    assert_eq!(rt.spawn(|| {}, Priority::Normal), Err(SchedError::ShutDown));
    rt.shutdown().unwrap();
}

#[test]
fn empty_shutdown() {
    let rt = rt(3, PolicyKind::Global);
    rt.shutdown().unwrap();
    assert!(rt.is_shut_down());
}

#[test]
fn tasks_spawned_while_draining_still_run() {
    let rt = rt(1, PolicyKind::default());
    let c = Arc::new(AtomicUsize::new(0));
    let (c2, inner) = (c.clone(), rt.clone());
    rt.spawn(move || {
        for _ in 0..10 {
            yield_now();
        }
        let c3 = c2.clone();
        inner
            .spawn(move || {
                c3.fetch_add(1, Ordering::Relaxed);
            }, Priority::Normal)
            .unwrap();
    }, Priority::Normal)
    .unwrap();
    rt.shutdown().unwrap();
    assert_eq!(c.load(Ordering::Relaxed), 1);
}

#[test]
fn shutdown_from_worker_is_refused() {
    let rt = rt(1, PolicyKind::default());
    let inner = rt.clone();
    let r = rt.run(move || (inner.shutdown(), inner.wait_idle())).unwrap();
    assert_eq!(r.0, Err(SchedError::FromWorker("shutdown")));
    assert_eq!(r.1, Err(SchedError::FromWorker("wait_idle")));
}

#[test]
fn thread_events_match_worker_count() {
    let begins = Arc::new(AtomicUsize::new(0));
    let ends = Arc::new(AtomicUsize::new(0));
    let (b, e) = (begins.clone(), ends.clone());
    let tool = ToolCallbacks::new()
        .on_thread_begin(move |_| {
            b.fetch_add(1, Ordering::Relaxed);
        })
        .on_thread_end(move |_| {
            e.fetch_add(1, Ordering::Relaxed);
        });
    let rt = Runtime::start_with_tool(RuntimeConfig::new(5, PolicyKind::default()), tool).unwrap();
    rt.shutdown().unwrap();
    assert_eq!(begins.load(Ordering::Relaxed), 5);
    assert_eq!(ends.load(Ordering::Relaxed), 5);
}

#[test]
fn invalid_configs() {
    assert!(matches!(
        Runtime::start(RuntimeConfig::new(0, PolicyKind::default())),
        Err(SchedError::InvalidConfig(_))
    ));
}

#[test]
fn static_priority_round_robin_and_pinning() {
    let rt = rt(4, PolicyKind::StaticPriority);
    let ran_on = Arc::new(Mutex::new(vec![None; 8]));
    for i in 0..8 {
        let r = ran_on.clone();
        rt.spawn(move || {
            let first = current_worker().unwrap().index();
            yield_now();
            let second = current_worker().unwrap().index();
            assert_eq!(first, second, "pinned task migrated");
            r.lock().unwrap()[i] = Some(first);
        }, Priority::Normal)
        .unwrap();
    }
    rt.wait_idle().unwrap();
    let got: Vec<usize> = ran_on.lock().unwrap().iter().map(|w| w.unwrap()).collect();
    assert_eq!(got, vec![0, 1, 2, 3, 0, 1, 2, 3]);
}

#[test]
fn panicking_task_is_contained() {
    let rt = rt(1, PolicyKind::default());
    rt.spawn(|| panic!("expected"), Priority::Normal).unwrap();
    let ok = Arc::new(AtomicBool::new(false));
    let o = ok.clone();
    rt.spawn(move || o.store(true, Ordering::Relaxed), Priority::Normal).unwrap();
    rt.wait_idle().unwrap();
    assert!(ok.load(Ordering::Relaxed));
    assert_eq!(rt.panicked_tasks(), 1);
}

#[test]
fn deep_recursion_fits_default_stack() {
    fn depth(n: u32) -> u32 {
        let pad = std::hint::black_box([(n % 200) as u8 + 1; 64]);
        if n == 0 {
            0
        } else {
            depth(n - 1) + (pad[63] == 0) as u32
        }
    }
    let rt = rt(1, PolicyKind::default());
    assert_eq!(rt.run(|| depth(500)).unwrap(), 0);
}
