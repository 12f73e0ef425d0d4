//! Stackful execution contexts for user-level tasks.
//!
//! A task runs on its own mmap'd stack. Switching between the worker's
//! scheduling loop and a task saves the callee-saved registers plus the SSE
//! and x87 control words on the outgoing stack and restores them from the
//! incoming one. Nothing else crosses a switch, so a suspended task can be
//! resumed on a different OS thread.

use std::io;
use std::ptr;

#[cfg(not(target_arch = "x86_64"))]
compile_error!("fj-core context switching is only implemented for x86_64");

/// Entry point of a fresh context: `(value passed to the first switch, data)`.
pub(crate) type EntryFn = extern "C" fn(usize, usize) -> !;

/// A task stack with a guard page at its low end.
pub(crate) struct Stack {
    base: *mut u8,
    len: usize,
}

// The mapping is plain memory owned by whoever holds the `Stack`.
unsafe impl Send for Stack {}

impl Stack {
    pub(crate) fn new(size: usize) -> io::Result<Self> {
        let page = page_size();
        let usable = size.max(page).div_ceil(page) * page;
        let len = usable + page;
        // SAFETY: anonymous private mapping, checked for failure below.
        let base = unsafe {
            libc::mmap(
                ptr::null_mut(),
                len,
                libc::PROT_READ | libc::PROT_WRITE,
                libc::MAP_PRIVATE | libc::MAP_ANONYMOUS | libc::MAP_NORESERVE,
                -1,
                0,
            )
        };
        if base == libc::MAP_FAILED {
            return Err(io::Error::last_os_error());
        }
        // SAFETY: `base` is the start of a mapping at least one page long.
        if unsafe { libc::mprotect(base, page, libc::PROT_NONE) } != 0 {
            let err = io::Error::last_os_error();
            unsafe { libc::munmap(base, len) };
            return Err(err);
        }
        Ok(Stack {
            base: base.cast(),
            len,
        })
    }

    /// Highest address of the stack (exclusive), 16-byte aligned.
    #[cfg(test)]
    fn size(&self) -> usize {
        self.len - page_size()
    }

    fn top(&self) -> usize {
        (self.base as usize + self.len) & !15
    }

}

impl Drop for Stack {
    fn drop(&mut self) {
        // SAFETY: unmapping exactly the region mapped in `new`.
        unsafe {
            libc::munmap(self.base.cast(), self.len);
        }
    }
}

fn page_size() -> usize {
    use std::sync::OnceLock;
    static PAGE: OnceLock<usize> = OnceLock::new();
    *PAGE.get_or_init(|| {
        // SAFETY: sysconf has no preconditions.
        let v = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
        if v > 0 {
            v as usize
        } else {
            4096
        }
    })
}

/// Lays out an initial frame on `stack` so that the first `switch` into the
/// returned stack pointer lands in `entry(arg, data)`.
///
/// # Safety
/// The stack must not be in use by any other context.
pub(crate) unsafe fn prepare(stack: &Stack, entry: EntryFn, data: usize) -> usize {
    const MXCSR_DEFAULT: u64 = 0x1F80;
    const FPCW_DEFAULT: u64 = 0x037F;

    let top = stack.top();
    let sp = top - 80;
    let frame = sp as *mut u64;
    // Layout matches the pop sequence in `switch`; the return slot sits at
    // top - 24 so that the trampoline calls `entry` with an aligned stack.
    frame.add(0).write(MXCSR_DEFAULT | (FPCW_DEFAULT << 32));
    frame.add(1).write(0); // r15
    frame.add(2).write(0); // r14
    frame.add(3).write(data as u64); // r13
    frame.add(4).write(entry as *const () as usize as u64); // r12
    frame.add(5).write(0); // rbx
    frame.add(6).write(0); // rbp
    frame.add(7).write(trampoline as *const () as usize as u64);
    frame.add(8).write(0);
    frame.add(9).write(0);
    sp
}

/// Saves the current context into `*save`, resumes the context at `load` and
/// hands it `arg`. Returns the `arg` of whichever switch later resumes us.
///
/// # Safety
/// `load` must come from `prepare` or from a previous `switch` save of a
/// context that is not currently running anywhere.
#[unsafe(naked)]
pub(crate) unsafe extern "C" fn switch(save: *mut usize, load: usize, arg: usize) -> usize {
    core::arch::naked_asm!(
        "push rbp",
        "push rbx",
        "push r12",
        "push r13",
        "push r14",
        "push r15",
        "sub rsp, 8",
        "stmxcsr [rsp]",
        "fnstcw [rsp + 4]",
        "mov [rdi], rsp",
        "mov rsp, rsi",
        "ldmxcsr [rsp]",
        "fldcw [rsp + 4]",
        "add rsp, 8",
        "pop r15",
        "pop r14",
        "pop r13",
        "pop r12",
        "pop rbx",
        "pop rbp",
        "mov rax, rdx",
        "ret",
    )
}

#[unsafe(naked)]
unsafe extern "C" fn trampoline() -> ! {
    core::arch::naked_asm!("mov rdi, rax", "mov rsi, r13", "call r12", "ud2")
}
