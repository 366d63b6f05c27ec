//! A concrete gadget-by-gadget emulator.
//!
//! This is the ground truth the rest of the crate is checked against: it
//! interprets parsed instructions directly — register file, bounded stack
//! array, real width semantics — and never looks at lifted equations. Chains
//! are run from randomized initial states and judged purely by the syscall
//! register values they produce.
//!
//! `syscall` instructions are recorded, never performed. The instruction's
//! own architectural side effect is modeled: `rcx` and `r11` are overwritten
//! with values a chain must not rely on.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{Corpus, Gadget, Instruction, Lane, Mnemonic, Operand, Reg, RegisterRef, Width};

/// Default instruction budget for one payload execution.
pub const DEFAULT_BUDGET: u64 = 100_000;

/// Number of scratch words kept below the payload for gadget-local pushes.
const SLACK_BELOW: usize = 64;
/// Scratch words above the payload; reading into them ends the run cleanly
/// after a final `syscall ; ret`.
const SLACK_ABOVE: usize = 16;

/// Concrete machine: sixteen registers plus a bounded stack of 64-bit words.
///
/// The stack pointer is the word index `sp`; pushes move it down, pops move
/// it up. The `rsp` cell in `regs` is not used for addressing.
#[derive(Debug, Clone)]
pub struct MachineState {
    pub regs: [u64; 16],
    pub stack: Vec<u64>,
    pub sp: usize,
    pub budget: u64,
    syscalls_seen: u64,
}

/// Execution faults.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EmuFault {
    #[error("divide error")]
    DivideError,
    #[error("stack overrun (sp={sp}, stack={len} words)")]
    StackOverrun { sp: usize, len: usize },
    #[error("instruction budget exhausted")]
    BudgetExhausted,
    #[error("unsupported instruction: {0}")]
    UnsupportedInstruction(String),
}

/// Payload-level execution errors.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecuteError {
    #[error(transparent)]
    Fault(#[from] EmuFault),
    #[error("stack word 0x{0:x} does not resolve to a gadget")]
    UnresolvedAddress(u64),
    #[error("payload length {0} is not a multiple of 8 bytes")]
    BadPayloadLength(usize),
}

/// The register set captured when a `syscall` executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SyscallEvent {
    pub rax: u64,
    pub rdi: u64,
    pub rsi: u64,
    pub rdx: u64,
    pub r10: u64,
    pub r8: u64,
    pub r9: u64,
}

impl SyscallEvent {
    fn capture(regs: &[u64; 16]) -> SyscallEvent {
        SyscallEvent {
            rax: regs[Reg::Rax.index()],
            rdi: regs[Reg::Rdi.index()],
            rsi: regs[Reg::Rsi.index()],
            rdx: regs[Reg::Rdx.index()],
            r10: regs[Reg::R10.index()],
            r8: regs[Reg::R8.index()],
            r9: regs[Reg::R9.index()],
        }
    }

    /// The captured value for one of the seven syscall-relevant registers.
    pub fn value_of(&self, reg: Reg) -> Option<u64> {
        Some(match reg {
            Reg::Rax => self.rax,
            Reg::Rdi => self.rdi,
            Reg::Rsi => self.rsi,
            Reg::Rdx => self.rdx,
            Reg::R10 => self.r10,
            Reg::R8 => self.r8,
            Reg::R9 => self.r9,
            _ => return None,
        })
    }
}

/// What one gadget run did with control flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepResult {
    /// Address popped by a terminal `ret`, if the gadget had one.
    pub next: Option<u64>,
    /// Syscall capture, if the gadget executed `syscall`.
    pub syscall: Option<SyscallEvent>,
}

impl MachineState {
    /// A machine with the given registers and a zeroed stack of `words` words,
    /// stack pointer in the middle.
    pub fn with_stack(regs: [u64; 16], words: usize) -> MachineState {
        MachineState {
            regs,
            stack: vec![0; words],
            sp: words / 2,
            budget: DEFAULT_BUDGET,
            syscalls_seen: 0,
        }
    }

    fn push(&mut self, v: u64) -> Result<(), EmuFault> {
        if self.sp == 0 {
            return Err(EmuFault::StackOverrun { sp: self.sp, len: self.stack.len() });
        }
        self.sp -= 1;
        self.stack[self.sp] = v;
        Ok(())
    }

    fn pop(&mut self) -> Result<u64, EmuFault> {
        if self.sp >= self.stack.len() {
            return Err(EmuFault::StackOverrun { sp: self.sp, len: self.stack.len() });
        }
        let v = self.stack[self.sp];
        self.sp += 1;
        Ok(v)
    }

    fn spend(&mut self) -> Result<(), EmuFault> {
        if self.budget == 0 {
            return Err(EmuFault::BudgetExhausted);
        }
        self.budget -= 1;
        Ok(())
    }
}

fn read_ref(regs: &[u64; 16], rr: RegisterRef) -> u64 {
    let v = regs[rr.reg.index()];
    match (rr.width, rr.lane) {
        (Width::W64, _) => v,
        (Width::W32, _) => v & 0xffff_ffff,
        (Width::W16, _) => v & 0xffff,
        (Width::W8, Lane::Low) => v & 0xff,
        (Width::W8, Lane::High) => (v >> 8) & 0xff,
    }
}

fn write_ref(regs: &mut [u64; 16], rr: RegisterRef, v: u64) {
    let cell = &mut regs[rr.reg.index()];
    *cell = match (rr.width, rr.lane) {
        (Width::W64, _) => v,
        (Width::W32, _) => v & 0xffff_ffff,
        (Width::W16, _) => (*cell & !0xffff) | (v & 0xffff),
        (Width::W8, Lane::Low) => (*cell & !0xff) | (v & 0xff),
        (Width::W8, Lane::High) => (*cell & !0xff00) | ((v & 0xff) << 8),
    };
}

fn read_operand(regs: &[u64; 16], op: &Operand) -> Result<u64, EmuFault> {
    match op {
        Operand::Reg(rr) => Ok(read_ref(regs, *rr)),
        Operand::Imm(v) => Ok(*v as u64),
        Operand::Memory => Err(EmuFault::UnsupportedInstruction("memory operand".into())),
    }
}

fn reg_ref(op: &Operand) -> Result<RegisterRef, EmuFault> {
    match op {
        Operand::Reg(rr) => Ok(*rr),
        other => Err(EmuFault::UnsupportedInstruction(format!(
            "register operand expected, got {other}"
        ))),
    }
}

fn shift_count(regs: &[u64; 16], op: &Operand, width: Width) -> Result<u64, EmuFault> {
    let raw = match op {
        Operand::Imm(v) => *v as u64,
        Operand::Reg(_) => regs[Reg::Rcx.index()] & 0xff,
        Operand::Memory => {
            return Err(EmuFault::UnsupportedInstruction("memory shift count".into()))
        }
    };
    Ok(raw & if width == Width::W64 { 63 } else { 31 })
}

/// Execute one instruction. `Ok(Some(..))` means control flow left the
/// gadget (`ret` or `syscall`).
fn exec_insn(m: &mut MachineState, insn: &Instruction) -> Result<Option<StepResult>, EmuFault> {
    use Mnemonic::*;
    m.spend()?;
    let ops = &insn.operands;
    let uses_rsp = ops
        .iter()
        .any(|o| matches!(o, Operand::Reg(r) if r.reg == Reg::Rsp));
    if uses_rsp && !matches!(insn.mnemonic, Add | Sub) {
        return Err(EmuFault::UnsupportedInstruction(format!(
            "stack-pointer operand in `{insn}`"
        )));
    }
    match insn.mnemonic {
        Ret => {
            let next = m.pop()?;
            return Ok(Some(StepResult { next: Some(next), syscall: None }));
        }
        Syscall => {
            let event = SyscallEvent::capture(&m.regs);
            // Model the instruction's own clobbers with values no planner
            // may depend on; vary them per call so stale reuse is caught.
            let n = m.syscalls_seen;
            m.syscalls_seen += 1;
            m.regs[Reg::Rcx.index()] = 0xc1c1_c1c1_c1c1_c1c1 ^ n;
            m.regs[Reg::R11.index()] = 0x1b1b_1b1b_1b1b_1b1b ^ n;
            return Ok(Some(StepResult { next: None, syscall: Some(event) }));
        }
        Mov => {
            let d = reg_ref(&ops[0])?;
            let v = read_operand(&m.regs, &ops[1])?;
            write_ref(&mut m.regs, d, v);
        }
        Push => {
            let v = match &ops[0] {
                Operand::Reg(r) if r.width == Width::W64 => read_ref(&m.regs, *r),
                Operand::Imm(v) => *v as u64,
                other => {
                    return Err(EmuFault::UnsupportedInstruction(format!(
                        "push {other}"
                    )))
                }
            };
            m.push(v)?;
        }
        Pop => {
            let d = reg_ref(&ops[0])?;
            if d.width != Width::W64 {
                return Err(EmuFault::UnsupportedInstruction(format!("pop {d}")));
            }
            let v = m.pop()?;
            write_ref(&mut m.regs, d, v);
        }
        Add | Sub if matches!(ops[0], Operand::Reg(r) if r.reg == Reg::Rsp) => {
            let Operand::Imm(imm) = ops[1] else {
                return Err(EmuFault::UnsupportedInstruction(format!("{insn}")));
            };
            if imm % 8 != 0 {
                return Err(EmuFault::UnsupportedInstruction(format!(
                    "unaligned rsp adjust in `{insn}`"
                )));
            }
            let words = (imm / 8).unsigned_abs() as usize;
            let sub = (insn.mnemonic == Sub) != (imm < 0);
            if sub {
                m.sp = m
                    .sp
                    .checked_sub(words)
                    .ok_or(EmuFault::StackOverrun { sp: m.sp, len: m.stack.len() })?;
            } else {
                m.sp += words;
                if m.sp > m.stack.len() {
                    return Err(EmuFault::StackOverrun { sp: m.sp, len: m.stack.len() });
                }
            }
        }
        Add | Sub | And | Or | Xor => {
            let d = reg_ref(&ops[0])?;
            let a = read_ref(&m.regs, d);
            let b = read_operand(&m.regs, &ops[1])?;
            let v = match insn.mnemonic {
                Add => a.wrapping_add(b),
                Sub => a.wrapping_sub(b),
                And => a & b,
                Or => a | b,
                _ => a ^ b,
            };
            write_ref(&mut m.regs, d, v);
        }
        Inc | Dec => {
            let d = reg_ref(&ops[0])?;
            let a = read_ref(&m.regs, d);
            let v = if insn.mnemonic == Inc { a.wrapping_add(1) } else { a.wrapping_sub(1) };
            write_ref(&mut m.regs, d, v);
        }
        Neg => {
            let d = reg_ref(&ops[0])?;
            let v = read_ref(&m.regs, d).wrapping_neg();
            write_ref(&mut m.regs, d, v);
        }
        Not => {
            let d = reg_ref(&ops[0])?;
            let v = !read_ref(&m.regs, d);
            write_ref(&mut m.regs, d, v);
        }
        Imul => match ops.len() {
            1 => {
                let d = reg_ref(&ops[0])?;
                if d.width != Width::W64 {
                    return Err(EmuFault::UnsupportedInstruction(format!("imul {d}")));
                }
                let a = m.regs[Reg::Rax.index()] as i64 as i128;
                let b = read_ref(&m.regs, d) as i64 as i128;
                let p = a * b;
                m.regs[Reg::Rax.index()] = p as u64;
                m.regs[Reg::Rdx.index()] = (p >> 64) as u64;
            }
            2 => {
                let d = reg_ref(&ops[0])?;
                let a = read_ref(&m.regs, d);
                let b = read_operand(&m.regs, &ops[1])?;
                write_ref(&mut m.regs, d, a.wrapping_mul(b));
            }
            _ => {
                let d = reg_ref(&ops[0])?;
                let a = read_operand(&m.regs, &ops[1])?;
                let b = read_operand(&m.regs, &ops[2])?;
                write_ref(&mut m.regs, d, a.wrapping_mul(b));
            }
        },
        Idiv => {
            let d = reg_ref(&ops[0])?;
            if d.width != Width::W64 {
                return Err(EmuFault::UnsupportedInstruction(format!("idiv {d}")));
            }
            let divisor = read_ref(&m.regs, d) as i64 as i128;
            if divisor == 0 {
                return Err(EmuFault::DivideError);
            }
            let hi = m.regs[Reg::Rdx.index()] as i64 as i128;
            let lo = m.regs[Reg::Rax.index()] as i128 & 0xffff_ffff_ffff_ffff;
            let dividend = (hi << 64) | lo;
            let q = dividend / divisor;
            if q > i64::MAX as i128 || q < i64::MIN as i128 {
                return Err(EmuFault::DivideError);
            }
            m.regs[Reg::Rax.index()] = q as i64 as u64;
            m.regs[Reg::Rdx.index()] = (dividend % divisor) as i64 as u64;
        }
        Shl | Sal | Shr | Sar => {
            let d = reg_ref(&ops[0])?;
            let c = shift_count(&m.regs, &ops[1], d.width)?;
            let lane = read_ref(&m.regs, d);
            let v = match insn.mnemonic {
                Shl | Sal => {
                    if c >= 64 { 0 } else { lane << c }
                }
                Shr => {
                    if c >= 64 { 0 } else { lane >> c }
                }
                _ => {
                    // arithmetic: shift the lane sign-extended to 64 bits
                    let bits = d.width.bits();
                    let signed = ((lane << (64 - bits)) as i64) >> (64 - bits);
                    (signed >> c.min(63)) as u64
                }
            };
            write_ref(&mut m.regs, d, v);
        }
        Rol | Ror => {
            let d = reg_ref(&ops[0])?;
            let c = shift_count(&m.regs, &ops[1], d.width)?;
            let w = d.width.bits() as u64;
            let lane = read_ref(&m.regs, d);
            let e = (c % w) as u32;
            let v = if e == 0 {
                lane
            } else if insn.mnemonic == Rol {
                (lane << e) | (lane >> (w as u32 - e))
            } else {
                (lane >> e) | (lane << (w as u32 - e))
            };
            write_ref(&mut m.regs, d, v);
        }
        Xchg => {
            let a = reg_ref(&ops[0])?;
            let b = reg_ref(&ops[1])?;
            let va = read_ref(&m.regs, a);
            let vb = read_ref(&m.regs, b);
            write_ref(&mut m.regs, a, vb);
            write_ref(&mut m.regs, b, va);
        }
        Xadd => {
            let d = reg_ref(&ops[0])?;
            let s = reg_ref(&ops[1])?;
            let vd = read_ref(&m.regs, d);
            let vs = read_ref(&m.regs, s);
            write_ref(&mut m.regs, s, vd);
            write_ref(&mut m.regs, d, vs.wrapping_add(vd));
        }
    }
    Ok(None)
}

/// Run one gadget to its terminal instruction.
pub fn step_gadget(m: &mut MachineState, gadget: &Gadget) -> Result<StepResult, EmuFault> {
    for (pos, insn) in gadget.instructions.iter().enumerate() {
        if let Some(mut out) = exec_insn(m, insn)? {
            let last = pos + 1 == gadget.instructions.len();
            if out.syscall.is_some() && !last {
                // `syscall ; ret`: finish the trailing ret in the same step.
                let follow = &gadget.instructions[pos + 1];
                if follow.mnemonic == Mnemonic::Ret && pos + 2 == gadget.instructions.len() {
                    m.spend()?;
                    out.next = Some(m.pop()?);
                    return Ok(out);
                }
                return Err(EmuFault::UnsupportedInstruction(
                    "syscall outside trigger position".into(),
                ));
            }
            if !last && out.syscall.is_none() {
                return Err(EmuFault::UnsupportedInstruction(
                    "ret before end of gadget".into(),
                ));
            }
            return Ok(out);
        }
    }
    Err(EmuFault::UnsupportedInstruction("gadget has no terminal ret/syscall".into()))
}

/// One line of an execution trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub offset: u64,
    pub asm: String,
    /// FNV-1a digest of the register file after the step.
    pub reg_digest: String,
}

fn reg_digest(regs: &[u64; 16]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for r in regs {
        for b in r.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

/// The result of running a payload to completion.
#[derive(Debug, Clone)]
pub struct Execution {
    pub events: Vec<SyscallEvent>,
    pub final_regs: [u64; 16],
    pub gadgets_run: usize,
    pub trace: Vec<TraceRecord>,
}

/// Execute a payload of 64-bit words against a corpus.
///
/// The payload is copied onto a fresh stack, the stack pointer is parked at
/// its first word, and dispatch begins with a `ret`-style pop. Every address
/// word must resolve (minus `base`) to a corpus gadget. Execution ends at a
/// bare `syscall`, at a `syscall ; ret` that has consumed the whole payload,
/// or at a fault.
pub fn execute_payload(
    corpus: &Corpus,
    payload: &[u64],
    base: u64,
    entry_regs: [u64; 16],
    budget: u64,
    want_trace: bool,
) -> Result<Execution, ExecuteError> {
    let by_offset: BTreeMap<u64, &Gadget> =
        corpus.gadgets.iter().map(|g| (g.offset, g)).collect();
    let words = SLACK_BELOW + payload.len() + SLACK_ABOVE;
    let mut m = MachineState {
        regs: entry_regs,
        stack: vec![0; words],
        sp: SLACK_BELOW,
        budget,
        syscalls_seen: 0,
    };
    m.stack[SLACK_BELOW..SLACK_BELOW + payload.len()].copy_from_slice(payload);
    let payload_end = SLACK_BELOW + payload.len();

    let mut exec = Execution {
        events: Vec::new(),
        final_regs: entry_regs,
        gadgets_run: 0,
        trace: Vec::new(),
    };
    // Initial dispatch: pop the first gadget address.
    let mut addr = m.pop().map_err(EmuFault::from)?;
    loop {
        let offset = addr.checked_sub(base).ok_or(ExecuteError::UnresolvedAddress(addr))?;
        let gadget = by_offset
            .get(&offset)
            .copied()
            .ok_or(ExecuteError::UnresolvedAddress(addr))?;
        let result = step_gadget(&mut m, gadget)?;
        exec.gadgets_run += 1;
        if want_trace {
            exec.trace.push(TraceRecord {
                step: exec.gadgets_run,
                offset: gadget.offset,
                asm: gadget
                    .instructions
                    .iter()
                    .map(|i| i.to_string())
                    .collect::<Vec<_>>()
                    .join(" ; "),
                reg_digest: reg_digest(&m.regs),
            });
        }
        if let Some(event) = result.syscall {
            exec.events.push(event);
            match result.next {
                None => break,
                // `syscall ; ret` that consumed the final payload word has
                // nothing left to run; past-end reads are clean completion.
                Some(_) if m.sp > payload_end => break,
                Some(n) => {
                    addr = n;
                }
            }
        } else {
            match result.next {
                Some(n) => addr = n,
                None => break,
            }
        }
    }
    exec.final_regs = m.regs;
    Ok(exec)
}

/// The verdict of a randomized verification run.
#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub runs: usize,
    pub failures: Vec<String>,
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Decode a little-endian payload byte string into 64-bit words.
pub fn payload_words(bytes: &[u8]) -> Result<Vec<u64>, ExecuteError> {
    if bytes.len() % 8 != 0 {
        return Err(ExecuteError::BadPayloadLength(bytes.len()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// The deterministic random entry states a given seed produces; state `i`
/// is what `verify_chain` uses for run `i`.
pub fn seeded_states(seed: u64, runs: usize) -> Vec<[u64; 16]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..runs)
        .map(|_| std::array::from_fn(|_| rng.gen()))
        .collect()
}

/// Verify an emitted chain: execute its payload from `runs` randomized
/// initial register states and require every run to produce exactly the
/// expected syscall register values, in order.
pub fn verify_chain(
    corpus: &Corpus,
    payload_bytes: &[u8],
    base: u64,
    objectives: &[BTreeMap<Reg, u64>],
    runs: usize,
    seed: u64,
) -> Result<VerifyOutcome, ExecuteError> {
    let words = payload_words(payload_bytes)?;
    let states = seeded_states(seed, runs);
    let mut outcome = VerifyOutcome { runs, failures: Vec::new() };
    for (run, regs) in states.into_iter().enumerate() {
        let mut fail = |msg: String| {
            if outcome.failures.len() < 8 {
                outcome.failures.push(format!("run {run}: {msg}"));
            } else if outcome.failures.len() == 8 {
                outcome.failures.push("...".into());
            }
        };
        match execute_payload(corpus, &words, base, regs, DEFAULT_BUDGET, false) {
            Err(e) => fail(format!("execution failed: {e}")),
            Ok(exec) => {
                if exec.events.len() != objectives.len() {
                    fail(format!(
                        "expected {} syscall(s), saw {}",
                        objectives.len(),
                        exec.events.len()
                    ));
                    continue;
                }
                for (i, (event, objective)) in
                    exec.events.iter().zip(objectives).enumerate()
                {
                    for (&reg, &want) in objective {
                        match event.value_of(reg) {
                            Some(got) if got == want => {}
                            Some(got) => fail(format!(
                                "call {i}: {reg} = 0x{got:x}, expected 0x{want:x}"
                            )),
                            None => fail(format!("call {i}: {reg} is not a syscall register")),
                        }
                    }
                }
            }
        }
    }
    Ok(outcome)
}
