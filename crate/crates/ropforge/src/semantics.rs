//! Lifting gadgets into register equations.
//!
//! Every accepted gadget is summarized as a set of simultaneous equations
//! `dest = rhs`, where each `rhs` is a value tree over the *entry* register
//! state, immediates, and free stack slots (values the attacker places on the
//! stack). Stack motion is tracked with an imitated stack: `push` pushes the
//! current symbolic value, `pop` either consumes a pushed value or mints a
//! fresh free slot, and `add rsp, imm` discards pushed values before skipping
//! attacker-controlled words. A gadget that leaves pushed values behind at its
//! `ret` can never return cleanly through the payload, so it is rejected.
//!
//! Summaries fall into two groups that drive the chain search: equations with
//! no register reads produce the same result from any entry state (group 1),
//! everything else depends on what ran before it (group 2).

use std::fmt;

use crate::corpus::{Gadget, Instruction, Lane, Mnemonic, Operand, Reg, RegisterRef, Width};

/// Binary operators over 64-bit values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    And,
    Or,
    Xor,
    Mul,
    Div,
    Mod,
    Shl,
    Shr,
    Sar,
    Rol,
    Ror,
}

/// Unary operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnOp {
    Neg,
    Not,
}

/// Which half of a 128-bit division result a node selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DivPart {
    Quot,
    Rem,
}

/// A symbolic value: a tree over entry registers, constants and free slots.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RValue {
    /// A 64-bit constant (two's complement).
    Const(i64),
    /// The value a register held when the gadget was entered.
    Reg(Reg),
    /// The n-th stack word the gadget pops from the attacker payload.
    Free(usize),
    Bin(BinOp, Box<RValue>, Box<RValue>),
    Un(UnOp, Box<RValue>),
    /// Keep the low 32 bits, zero the rest (the 32-bit write rule).
    ZExt32(Box<RValue>),
    /// Merge a narrow write into a wider base: replaces `width` bits of
    /// `base` at `lane` with the low bits of `sub`.
    Insert { base: Box<RValue>, sub: Box<RValue>, width: Width, lane: Lane },
    /// High 64 bits of the signed 128-bit product (one-operand `imul`).
    MulHigh(Box<RValue>, Box<RValue>),
    /// Signed division of the 128-bit value `hi:lo` (`idiv`).
    WideDiv { hi: Box<RValue>, lo: Box<RValue>, divisor: Box<RValue>, part: DivPart },
    /// A constant expression that faulted during folding (division by zero or
    /// quotient overflow). Evaluating it reproduces the fault.
    Poison,
}

impl RValue {
    pub fn bin(op: BinOp, l: RValue, r: RValue) -> RValue {
        RValue::Bin(op, Box::new(l), Box::new(r))
    }

    /// Does any node in this tree read entry register state?
    pub fn reads_registers(&self) -> bool {
        self.any_node(&mut |n| matches!(n, RValue::Reg(_)))
    }

    pub fn contains_poison(&self) -> bool {
        self.any_node(&mut |n| matches!(n, RValue::Poison))
    }

    /// Could evaluating this tree fault? True if it divides anywhere.
    pub fn may_fault(&self) -> bool {
        self.any_node(&mut |n| {
            matches!(
                n,
                RValue::Poison
                    | RValue::WideDiv { .. }
                    | RValue::Bin(BinOp::Div | BinOp::Mod, _, _)
            )
        })
    }

    pub(crate) fn any_node(&self, pred: &mut dyn FnMut(&RValue) -> bool) -> bool {
        if pred(self) {
            return true;
        }
        match self {
            RValue::Const(_) | RValue::Reg(_) | RValue::Free(_) | RValue::Poison => false,
            RValue::Bin(_, l, r) => l.any_node(pred) || r.any_node(pred),
            RValue::Un(_, v) | RValue::ZExt32(v) => v.any_node(pred),
            RValue::Insert { base, sub, .. } => base.any_node(pred) || sub.any_node(pred),
            RValue::MulHigh(a, b) => a.any_node(pred) || b.any_node(pred),
            RValue::WideDiv { hi, lo, divisor, .. } => {
                hi.any_node(pred) || lo.any_node(pred) || divisor.any_node(pred)
            }
        }
    }
}

/// One register write: `dest = rhs`, plus the width the final write used
/// (display metadata only — the equation itself is always a full 64-bit
/// assignment).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Equation {
    pub dest: Reg,
    pub rhs: RValue,
    pub render_width: Width,
    pub render_lane: Lane,
}

impl Equation {
    pub fn full(dest: Reg, rhs: RValue) -> Equation {
        Equation { dest, rhs, render_width: Width::W64, render_lane: Lane::Low }
    }
}

/// Whether a summary's writes depend on the entry register state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    /// Entry-state independent: no equation reads a register.
    One,
    /// At least one equation reads entry register state.
    Two,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::One => "1",
            Category::Two => "2",
        })
    }
}

/// One attacker-visible stack word the gadget consumes, in consumption order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackSlot {
    /// Popped into a register: the payload supplies this word's value.
    Free { index: usize, popped_into: Reg },
    /// Skipped by `add rsp, 8`: the payload must supply a throwaway word.
    Skip,
}

/// The lifted form of a gadget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GadgetSummary {
    pub gadget: Gadget,
    pub equations: Vec<Equation>,
    /// Number of payload words popped into registers.
    pub free_slots: usize,
    /// Bytes of payload skipped by explicit stack-pointer adjustment.
    pub explicit_rsp_adjust: u64,
    /// Payload words in the order the gadget consumes them.
    pub schedule: Vec<StackSlot>,
    pub category: Category,
    pub is_syscall_trigger: bool,
    /// Fault conditions the gadget evaluates even when their results are
    /// later overwritten: each tree must evaluate without fault for the
    /// gadget to run to `ret`. Division instructions contribute here.
    pub hazards: Vec<RValue>,
}

impl GadgetSummary {
    /// Total payload bytes this step consumes: its own address word, the
    /// popped words, and the skipped words.
    pub fn total_stack_consumed(&self) -> u64 {
        8 * self.free_slots as u64 + self.explicit_rsp_adjust + 8
    }

    /// True if folding produced a faulting constant — such a gadget traps on
    /// every execution and is useless for chains.
    pub fn is_poisoned(&self) -> bool {
        self.equations.iter().any(|e| e.rhs.contains_poison())
            || self.hazards.iter().any(|h| h.contains_poison())
    }

    /// True if any execution of this gadget can fault.
    pub fn may_fault(&self) -> bool {
        !self.hazards.is_empty() || self.equations.iter().any(|e| e.rhs.may_fault())
    }
}

/// Why a gadget could not be lifted.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Rejection {
    /// A pushed value is still on the stack at `ret`: the gadget would return
    /// into its own data instead of the next payload word.
    #[error("unbalanced push at ret")]
    UnbalancedPush,
    #[error("memory instruction")]
    MemoryInstruction,
    #[error("unsupported instruction: {0}")]
    UnsupportedInstruction(String),
    /// `sub rsp` (or a negative `add rsp`) moves the stack pointer back into
    /// already-consumed payload.
    #[error("negative rsp adjustment")]
    NegativeRspAdjust,
    /// `add rsp, imm` with an adjustment that is not a multiple of 8.
    #[error("rsp adjustment not word-aligned")]
    RspMisaligned,
}

impl Rejection {
    /// Stable short name, used for statistics buckets and listing output.
    pub fn label(&self) -> &'static str {
        match self {
            Rejection::UnbalancedPush => "UnbalancedPush",
            Rejection::MemoryInstruction => "MemoryInstruction",
            Rejection::UnsupportedInstruction(_) => "UnsupportedInstruction",
            Rejection::NegativeRspAdjust => "NegativeRspAdjust",
            Rejection::RspMisaligned => "RspMisaligned",
        }
    }
}

/// Evaluation faults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("division overflow")]
    DivideOverflow,
    #[error("free slot {0} has no value")]
    MissingFreeSlot(usize),
}

/// Concrete values for all sixteen registers, indexed by [`Reg::index`].
pub type RegisterState = [u64; 16];

// ---------------------------------------------------------------------------
// Simplification
// ---------------------------------------------------------------------------

fn mask_for(width: Width, lane: Lane) -> u64 {
    match (width, lane) {
        (Width::W64, _) => u64::MAX,
        (Width::W32, _) => 0xffff_ffff,
        (Width::W16, _) => 0xffff,
        (Width::W8, Lane::Low) => 0xff,
        (Width::W8, Lane::High) => 0xff00,
    }
}

fn lane_shift(width: Width, lane: Lane) -> u32 {
    match (width, lane) {
        (Width::W8, Lane::High) => 8,
        _ => 0,
    }
}

pub(crate) fn fold_bin(op: BinOp, a: u64, b: u64) -> Result<u64, EvalError> {
    Ok(match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::And => a & b,
        BinOp::Or => a | b,
        BinOp::Xor => a ^ b,
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::Div | BinOp::Mod => {
            let (sa, sb) = (a as i64, b as i64);
            if sb == 0 {
                return Err(EvalError::DivisionByZero);
            }
            if sa == i64::MIN && sb == -1 {
                return Err(EvalError::DivideOverflow);
            }
            if op == BinOp::Div {
                (sa / sb) as u64
            } else {
                (sa % sb) as u64
            }
        }
        BinOp::Shl => a << (b & 63),
        BinOp::Shr => a >> (b & 63),
        BinOp::Sar => ((a as i64) >> (b & 63)) as u64,
        BinOp::Rol => a.rotate_left((b & 63) as u32),
        BinOp::Ror => a.rotate_right((b & 63) as u32),
    })
}

pub(crate) fn fold_wide_div(hi: u64, lo: u64, divisor: u64, part: DivPart) -> Result<u64, EvalError> {
    let dividend = (((hi as i64) as i128) << 64) | (lo as i128 & 0xffff_ffff_ffff_ffff);
    let d = (divisor as i64) as i128;
    if d == 0 {
        return Err(EvalError::DivisionByZero);
    }
    let q = dividend / d;
    if q > i64::MAX as i128 || q < i64::MIN as i128 {
        return Err(EvalError::DivideOverflow);
    }
    Ok(match part {
        DivPart::Quot => q as i64 as u64,
        DivPart::Rem => (dividend % d) as i64 as u64,
    })
}

pub(crate) fn fold_insert(base: u64, sub: u64, width: Width, lane: Lane) -> u64 {
    let mask = mask_for(width, lane);
    let shifted = sub << lane_shift(width, lane);
    (base & !mask) | (shifted & mask)
}

/// Recursively simplify a value tree. Constant subtrees are folded with
/// 64-bit wraparound; a constant division fault becomes [`RValue::Poison`].
/// Algebraic identities are applied only where they are exact, and a rule
/// never erases a subtree that might fault.
pub fn simplify(rv: RValue) -> RValue {
    use RValue::*;
    let cv = |v: &RValue| match v {
        Const(c) => Some(*c as u64),
        _ => None,
    };
    match rv {
        Const(_) | Reg(_) | Free(_) | Poison => rv,
        Un(op, v) => {
            let v = simplify(*v);
            if let Some(c) = cv(&v) {
                let folded = match op {
                    UnOp::Neg => c.wrapping_neg(),
                    UnOp::Not => !c,
                };
                return Const(folded as i64);
            }
            Un(op, Box::new(v))
        }
        ZExt32(v) => {
            let v = simplify(*v);
            match v {
                Const(c) => Const(((c as u64) & 0xffff_ffff) as i64),
                ZExt32(inner) => ZExt32(inner),
                other => ZExt32(Box::new(other)),
            }
        }
        Insert { base, sub, width, lane } => {
            let base = simplify(*base);
            let sub = simplify(*sub);
            if let (Some(b), Some(s)) = (cv(&base), cv(&sub)) {
                return Const(fold_insert(b, s, width, lane) as i64);
            }
            Insert { base: Box::new(base), sub: Box::new(sub), width, lane }
        }
        MulHigh(a, b) => {
            let a = simplify(*a);
            let b = simplify(*b);
            if let (Some(x), Some(y)) = (cv(&a), cv(&b)) {
                let p = (x as i64 as i128) * (y as i64 as i128);
                return Const((p >> 64) as i64);
            }
            MulHigh(Box::new(a), Box::new(b))
        }
        WideDiv { hi, lo, divisor, part } => {
            let hi = simplify(*hi);
            let lo = simplify(*lo);
            let divisor = simplify(*divisor);
            if cv(&divisor) == Some(0) {
                // A zero divisor faults for every dividend.
                return Poison;
            }
            if let (Some(h), Some(l), Some(d)) = (cv(&hi), cv(&lo), cv(&divisor)) {
                return match fold_wide_div(h, l, d, part) {
                    Ok(v) => Const(v as i64),
                    Err(_) => Poison,
                };
            }
            WideDiv { hi: Box::new(hi), lo: Box::new(lo), divisor: Box::new(divisor), part }
        }
        Bin(op, l, r) => {
            let l = simplify(*l);
            let r = simplify(*r);
            if let (Some(a), Some(b)) = (cv(&l), cv(&r)) {
                return match fold_bin(op, a, b) {
                    Ok(v) => Const(v as i64),
                    Err(_) => Poison,
                };
            }
            // Exact algebraic identities. Rules that drop an operand are
            // gated on the dropped side being unable to fault.
            match (op, cv(&l), cv(&r)) {
                // A zero divisor faults for every dividend.
                (BinOp::Div | BinOp::Mod, _, Some(0)) => return Poison,
                (BinOp::Add, Some(0), _) => return r,
                (BinOp::Add | BinOp::Sub | BinOp::Xor | BinOp::Or, _, Some(0)) => return l,
                (BinOp::Xor | BinOp::Or, Some(0), _) => return r,
                (BinOp::Shl | BinOp::Shr | BinOp::Sar | BinOp::Rol | BinOp::Ror, _, Some(0)) => {
                    return l
                }
                (BinOp::Mul, _, Some(1)) | (BinOp::Div, _, Some(1)) => return l,
                (BinOp::Mul, Some(1), _) => return r,
                (BinOp::And, _, Some(u64::MAX)) => return l,
                (BinOp::And, Some(u64::MAX), _) => return r,
                (BinOp::Mul | BinOp::And, _, Some(0)) if !l.may_fault() => return Const(0),
                (BinOp::Mul | BinOp::And, Some(0), _) if !r.may_fault() => return Const(0),
                _ => {}
            }
            if l == r && !l.may_fault() {
                match op {
                    BinOp::Xor | BinOp::Sub => return Const(0),
                    BinOp::And | BinOp::Or => return l,
                    _ => {}
                }
            }
            Bin(op, Box::new(l), Box::new(r))
        }
    }
}

/// Substitute register reads in `rhs` with the trees in `file`.
pub(crate) fn substitute(rhs: &RValue, file: &[RValue; 16]) -> RValue {
    match rhs {
        RValue::Reg(r) => file[r.index()].clone(),
        RValue::Const(_) | RValue::Free(_) | RValue::Poison => rhs.clone(),
        RValue::Bin(op, l, r) => {
            RValue::bin(*op, substitute(l, file), substitute(r, file))
        }
        RValue::Un(op, v) => RValue::Un(*op, Box::new(substitute(v, file))),
        RValue::ZExt32(v) => RValue::ZExt32(Box::new(substitute(v, file))),
        RValue::Insert { base, sub, width, lane } => RValue::Insert {
            base: Box::new(substitute(base, file)),
            sub: Box::new(substitute(sub, file)),
            width: *width,
            lane: *lane,
        },
        RValue::MulHigh(a, b) => {
            RValue::MulHigh(Box::new(substitute(a, file)), Box::new(substitute(b, file)))
        }
        RValue::WideDiv { hi, lo, divisor, part } => RValue::WideDiv {
            hi: Box::new(substitute(hi, file)),
            lo: Box::new(substitute(lo, file)),
            divisor: Box::new(substitute(divisor, file)),
            part: *part,
        },
    }
}

pub(crate) fn identity_file() -> [RValue; 16] {
    std::array::from_fn(|i| RValue::Reg(crate::corpus::ALL_REGS[i]))
}

/// Fold an ordered list of register writes into simultaneous equations.
///
/// In the input, `Reg` nodes mean "the value at this point in the sequence";
/// in the output they mean "the value at entry". Later writes see earlier
/// ones substituted in, constants are folded, and writes that turn out to be
/// identities (`rax = rax`) are dropped.
pub fn fold_equations(writes: &[Equation]) -> Vec<Equation> {
    let mut file = identity_file();
    let mut order: Vec<Reg> = Vec::new();
    let mut meta: [(Width, Lane); 16] = [(Width::W64, Lane::Low); 16];
    for w in writes {
        let folded = simplify(substitute(&w.rhs, &file));
        if !order.contains(&w.dest) {
            order.push(w.dest);
        }
        meta[w.dest.index()] = (w.render_width, w.render_lane);
        file[w.dest.index()] = folded;
    }
    order
        .into_iter()
        .filter(|r| file[r.index()] != RValue::Reg(*r))
        .map(|r| Equation {
            dest: r,
            rhs: file[r.index()].clone(),
            render_width: meta[r.index()].0,
            render_lane: meta[r.index()].1,
        })
        .collect()
}

/// Group a folded equation list: group 2 iff any right-hand side reads a
/// register.
pub fn classify(equations: &[Equation]) -> Category {
    if equations.iter().any(|e| e.rhs.reads_registers()) {
        Category::Two
    } else {
        Category::One
    }
}

// ---------------------------------------------------------------------------
// Lifting
// ---------------------------------------------------------------------------

struct Lifter {
    file: [RValue; 16],
    order: Vec<Reg>,
    meta: [(Width, Lane); 16],
    stack: Vec<RValue>,
    schedule: Vec<StackSlot>,
    free_count: usize,
    rsp_adjust: u64,
    hazards: Vec<RValue>,
}

impl Lifter {
    fn new() -> Self {
        Lifter {
            file: identity_file(),
            order: Vec::new(),
            meta: [(Width::W64, Lane::Low); 16],
            stack: Vec::new(),
            schedule: Vec::new(),
            free_count: 0,
            rsp_adjust: 0,
            hazards: Vec::new(),
        }
    }

    /// Current value of a register *read* at the given width/lane, as a
    /// 64-bit tree (narrow reads are masked, high-byte reads shifted down).
    fn read_reg(&self, rr: RegisterRef) -> RValue {
        let cur = self.file[rr.reg.index()].clone();
        let v = match (rr.width, rr.lane) {
            (Width::W64, _) => cur,
            (Width::W32, _) => RValue::ZExt32(Box::new(cur)),
            (Width::W16, _) => RValue::bin(BinOp::And, cur, RValue::Const(0xffff)),
            (Width::W8, Lane::Low) => RValue::bin(BinOp::And, cur, RValue::Const(0xff)),
            (Width::W8, Lane::High) => RValue::bin(
                BinOp::And,
                RValue::bin(BinOp::Shr, cur, RValue::Const(8)),
                RValue::Const(0xff),
            ),
        };
        simplify(v)
    }

    fn read_operand(&self, op: &Operand) -> RValue {
        match op {
            Operand::Reg(rr) => self.read_reg(*rr),
            Operand::Imm(v) => RValue::Const(*v),
            Operand::Memory => unreachable!("memory operands are rejected before lifting"),
        }
    }

    /// Write `v` to a register at the given width/lane, applying the 64-bit
    /// replace / 32-bit zero-extend / narrow merge rules.
    fn write_reg(&mut self, rr: RegisterRef, v: RValue) {
        let idx = rr.reg.index();
        let merged = match rr.width {
            Width::W64 => v,
            Width::W32 => RValue::ZExt32(Box::new(v)),
            Width::W16 | Width::W8 => RValue::Insert {
                base: Box::new(self.file[idx].clone()),
                sub: Box::new(v),
                width: rr.width,
                lane: rr.lane,
            },
        };
        if !self.order.contains(&rr.reg) {
            self.order.push(rr.reg);
        }
        self.meta[idx] = (rr.width, rr.lane);
        self.file[idx] = simplify(merged);
    }

    fn finish(self, gadget: &Gadget, is_trigger: bool) -> Result<GadgetSummary, Rejection> {
        if !self.stack.is_empty() {
            return Err(Rejection::UnbalancedPush);
        }
        let equations: Vec<Equation> = self
            .order
            .into_iter()
            .filter(|r| self.file[r.index()] != RValue::Reg(*r))
            .map(|r| Equation {
                dest: r,
                rhs: self.file[r.index()].clone(),
                render_width: self.meta[r.index()].0,
                render_lane: self.meta[r.index()].1,
            })
            .collect();
        // A gadget that could fault is never unconditional, whatever its
        // equations read: whether it reaches `ret` depends on the entry
        // state, so it gets the conditional category.
        let can_fault =
            !self.hazards.is_empty() || equations.iter().any(|e| e.rhs.may_fault());
        let category = if can_fault { Category::Two } else { classify(&equations) };
        Ok(GadgetSummary {
            gadget: gadget.clone(),
            equations,
            free_slots: self.free_count,
            explicit_rsp_adjust: self.rsp_adjust,
            schedule: self.schedule,
            category,
            is_syscall_trigger: is_trigger,
            hazards: self.hazards,
        })
    }
}

fn reg_operand(op: &Operand) -> Option<RegisterRef> {
    match op {
        Operand::Reg(rr) => Some(*rr),
        _ => None,
    }
}

fn unsupported(msg: impl Into<String>) -> Rejection {
    Rejection::UnsupportedInstruction(msg.into())
}

/// The effective shift count as a masked tree: an immediate, or `cl`.
fn shift_count(l: &Lifter, op: &Operand, width: Width) -> RValue {
    let raw = match op {
        Operand::Imm(v) => RValue::Const(*v),
        Operand::Reg(_) => l.read_reg(RegisterRef {
            reg: Reg::Rcx,
            width: Width::W8,
            lane: Lane::Low,
        }),
        Operand::Memory => unreachable!(),
    };
    let mask = if width == Width::W64 { 63 } else { 31 };
    simplify(RValue::bin(BinOp::And, raw, RValue::Const(mask)))
}

/// Sign-extend the low `bits` of a tree to 64 bits.
fn sext(v: RValue, bits: u32) -> RValue {
    let s = RValue::Const((64 - bits) as i64);
    RValue::bin(BinOp::Sar, RValue::bin(BinOp::Shl, v, s.clone()), s)
}

/// Lift one gadget to its summary, or reject it.
pub fn lift_gadget(gadget: &Gadget) -> Result<GadgetSummary, Rejection> {
    if gadget.is_syscall_trigger() {
        return Lifter::new().finish(gadget, true);
    }
    match gadget.instructions.last() {
        Some(i) if i.mnemonic == Mnemonic::Ret => {}
        _ => return Err(unsupported("missing terminal ret")),
    }
    let mut l = Lifter::new();
    for (pos, insn) in gadget.instructions.iter().enumerate() {
        let is_last = pos + 1 == gadget.instructions.len();
        if insn.touches_memory() {
            return Err(Rejection::MemoryInstruction);
        }
        lift_instruction(&mut l, insn, is_last)?;
    }
    l.finish(gadget, false)
}

fn lift_instruction(l: &mut Lifter, insn: &Instruction, is_last: bool) -> Result<(), Rejection> {
    use Mnemonic::*;
    let ops = &insn.operands;
    let rsp_operand = ops
        .iter()
        .any(|o| matches!(o, Operand::Reg(r) if r.reg == Reg::Rsp));
    if rsp_operand && !matches!(insn.mnemonic, Add | Sub) {
        return Err(unsupported(format!("stack-pointer operand in `{insn}`")));
    }
    match insn.mnemonic {
        Ret => {
            if !is_last {
                return Err(unsupported("ret before end of gadget"));
            }
        }
        Syscall => return Err(unsupported("syscall outside trigger position")),
        Mov => {
            let d = reg_operand(&ops[0]).ok_or_else(|| unsupported("mov to non-register"))?;
            let v = l.read_operand(&ops[1]);
            l.write_reg(d, v);
        }
        Push => {
            match &ops[0] {
                Operand::Reg(r) if r.width == Width::W64 => {
                    let v = l.read_reg(*r);
                    l.stack.push(v);
                }
                Operand::Imm(v) => l.stack.push(RValue::Const(*v)),
                Operand::Reg(r) => {
                    return Err(unsupported(format!("push of sub-word register {r}")))
                }
                Operand::Memory => unreachable!(),
            };
        }
        Pop => {
            let d = reg_operand(&ops[0]).ok_or_else(|| unsupported("pop to non-register"))?;
            if d.width != Width::W64 {
                return Err(unsupported(format!("pop to sub-word register {d}")));
            }
            let v = match l.stack.pop() {
                Some(v) => v,
                None => {
                    let idx = l.free_count;
                    l.free_count += 1;
                    l.schedule.push(StackSlot::Free { index: idx, popped_into: d.reg });
                    RValue::Free(idx)
                }
            };
            l.write_reg(d, v);
        }
        Add | Sub if matches!(ops[0], Operand::Reg(r) if r.reg == Reg::Rsp) => {
            let Operand::Imm(imm) = ops[1] else {
                return Err(unsupported("rsp adjustment by non-immediate"));
            };
            if insn.mnemonic == Sub {
                return Err(Rejection::NegativeRspAdjust);
            }
            if imm < 0 {
                return Err(Rejection::NegativeRspAdjust);
            }
            if imm % 8 != 0 {
                return Err(Rejection::RspMisaligned);
            }
            // The adjustment first discards the gadget's own pushed values;
            // only the remainder skips attacker payload words.
            let mut words = (imm / 8) as u64;
            while words > 0 && l.stack.pop().is_some() {
                words -= 1;
            }
            l.rsp_adjust += 8 * words;
            for _ in 0..words {
                l.schedule.push(StackSlot::Skip);
            }
        }
        Add | Sub | And | Or | Xor => {
            let d = reg_operand(&ops[0]).ok_or_else(|| unsupported("write to non-register"))?;
            let op = match insn.mnemonic {
                Add => BinOp::Add,
                Sub => BinOp::Sub,
                And => BinOp::And,
                Or => BinOp::Or,
                _ => BinOp::Xor,
            };
            let v = RValue::bin(op, l.read_reg(d), l.read_operand(&ops[1]));
            l.write_reg(d, v);
        }
        Inc | Dec => {
            let d = reg_operand(&ops[0]).ok_or_else(|| unsupported("write to non-register"))?;
            let op = if insn.mnemonic == Inc { BinOp::Add } else { BinOp::Sub };
            let v = RValue::bin(op, l.read_reg(d), RValue::Const(1));
            l.write_reg(d, v);
        }
        Neg | Not => {
            let d = reg_operand(&ops[0]).ok_or_else(|| unsupported("write to non-register"))?;
            let op = if insn.mnemonic == Neg { UnOp::Neg } else { UnOp::Not };
            let v = RValue::Un(op, Box::new(l.read_reg(d)));
            l.write_reg(d, v);
        }
        Imul => match ops.len() {
            1 => {
                let d = reg_operand(&ops[0]).ok_or_else(|| unsupported("imul non-register"))?;
                if d.width != Width::W64 {
                    return Err(unsupported("one-operand imul below 64 bits"));
                }
                let rax = l.read_reg(RegisterRef::full(Reg::Rax));
                let src = l.read_reg(d);
                let lo = RValue::bin(BinOp::Mul, rax.clone(), src.clone());
                let hi = RValue::MulHigh(Box::new(rax), Box::new(src));
                l.write_reg(RegisterRef::full(Reg::Rax), lo);
                l.write_reg(RegisterRef::full(Reg::Rdx), hi);
            }
            2 => {
                let d = reg_operand(&ops[0]).ok_or_else(|| unsupported("imul non-register"))?;
                let v = RValue::bin(BinOp::Mul, l.read_reg(d), l.read_operand(&ops[1]));
                l.write_reg(d, v);
            }
            _ => {
                let d = reg_operand(&ops[0]).ok_or_else(|| unsupported("imul non-register"))?;
                let v = RValue::bin(BinOp::Mul, l.read_operand(&ops[1]), l.read_operand(&ops[2]));
                l.write_reg(d, v);
            }
        },
        Idiv => {
            let d = reg_operand(&ops[0]).ok_or_else(|| unsupported("idiv non-register"))?;
            if d.width != Width::W64 {
                return Err(unsupported("idiv below 64 bits"));
            }
            let hi = l.read_reg(RegisterRef::full(Reg::Rdx));
            let lo = l.read_reg(RegisterRef::full(Reg::Rax));
            let divisor = l.read_reg(d);
            let quot = simplify(RValue::WideDiv {
                hi: Box::new(hi.clone()),
                lo: Box::new(lo.clone()),
                divisor: Box::new(divisor.clone()),
                part: DivPart::Quot,
            });
            let rem = RValue::WideDiv {
                hi: Box::new(hi),
                lo: Box::new(lo),
                divisor: Box::new(divisor),
                part: DivPart::Rem,
            };
            // The fault fires even if rax/rdx are overwritten afterwards.
            if quot.may_fault() {
                l.hazards.push(quot.clone());
            }
            l.write_reg(RegisterRef::full(Reg::Rax), quot);
            l.write_reg(RegisterRef::full(Reg::Rdx), rem);
        }
        Shl | Sal | Shr | Sar => {
            let d = reg_operand(&ops[0]).ok_or_else(|| unsupported("shift of non-register"))?;
            let count = shift_count(l, &ops[1], d.width);
            let lane_val = l.read_reg(d);
            let v = match insn.mnemonic {
                Shl | Sal => RValue::bin(BinOp::Shl, lane_val, count),
                Shr => RValue::bin(BinOp::Shr, lane_val, count),
                _ => {
                    // Arithmetic shift needs the lane's own sign bit.
                    let signed = if d.width == Width::W64 {
                        lane_val
                    } else {
                        sext(lane_val, d.width.bits())
                    };
                    RValue::bin(BinOp::Sar, signed, count)
                }
            };
            l.write_reg(d, v);
        }
        Rol | Ror => {
            let d = reg_operand(&ops[0]).ok_or_else(|| unsupported("rotate of non-register"))?;
            let count = shift_count(l, &ops[1], d.width);
            let lane_val = l.read_reg(d);
            let v = if d.width == Width::W64 {
                let op = if insn.mnemonic == Rol { BinOp::Rol } else { BinOp::Ror };
                RValue::bin(op, lane_val, count)
            } else {
                // Narrow rotates wrap within the lane: build them from shifts
                // so the wrapped-out bits come back in the right place.
                let w = d.width.bits() as i64;
                let c = simplify(RValue::bin(BinOp::Mod, count, RValue::Const(w)));
                let back = RValue::bin(BinOp::Sub, RValue::Const(w), c.clone());
                if insn.mnemonic == Rol {
                    RValue::bin(
                        BinOp::Or,
                        RValue::bin(BinOp::Shl, lane_val.clone(), c),
                        RValue::bin(BinOp::Shr, lane_val, back),
                    )
                } else {
                    RValue::bin(
                        BinOp::Or,
                        RValue::bin(BinOp::Shr, lane_val.clone(), c),
                        RValue::bin(BinOp::Shl, lane_val, back),
                    )
                }
            };
            l.write_reg(d, v);
        }
        Xchg => {
            let a = reg_operand(&ops[0]).ok_or_else(|| unsupported("xchg non-register"))?;
            let b = reg_operand(&ops[1]).ok_or_else(|| unsupported("xchg non-register"))?;
            let va = l.read_reg(a);
            let vb = l.read_reg(b);
            l.write_reg(a, vb);
            l.write_reg(b, va);
        }
        Xadd => {
            let d = reg_operand(&ops[0]).ok_or_else(|| unsupported("xadd non-register"))?;
            let s = reg_operand(&ops[1]).ok_or_else(|| unsupported("xadd non-register"))?;
            let vd = l.read_reg(d);
            let vs = l.read_reg(s);
            let sum = RValue::bin(BinOp::Add, vs, vd.clone());
            l.write_reg(s, vd);
            l.write_reg(d, sum);
        }
    }
    Ok(())
}

/// A corpus run through the lifter.
#[derive(Debug, Clone, Default)]
pub struct LiftedCorpus {
    pub summaries: Vec<GadgetSummary>,
    pub rejected: Vec<(Gadget, Rejection)>,
    /// Offsets dropped by the instruction-depth filter before lifting.
    pub depth_filtered: Vec<u64>,
}

/// Lift every gadget in a corpus, dropping gadgets longer than `max_depth`
/// instructions first.
pub fn lift_corpus(corpus: &crate::corpus::Corpus, max_depth: usize) -> LiftedCorpus {
    let mut out = LiftedCorpus::default();
    for g in &corpus.gadgets {
        if g.instructions.len() > max_depth {
            out.depth_filtered.push(g.offset);
            continue;
        }
        match lift_gadget(g) {
            Ok(s) => out.summaries.push(s),
            Err(r) => out.rejected.push((g.clone(), r)),
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

fn eval_rv(rv: &RValue, entry: &RegisterState, free: &[u64]) -> Result<u64, EvalError> {
    Ok(match rv {
        RValue::Const(c) => *c as u64,
        RValue::Reg(r) => entry[r.index()],
        RValue::Free(i) => *free.get(*i).ok_or(EvalError::MissingFreeSlot(*i))?,
        RValue::Poison => return Err(EvalError::DivisionByZero),
        RValue::Bin(op, l, r) => {
            let a = eval_rv(l, entry, free)?;
            let b = eval_rv(r, entry, free)?;
            fold_bin(*op, a, b)?
        }
        RValue::Un(op, v) => {
            let x = eval_rv(v, entry, free)?;
            match op {
                UnOp::Neg => x.wrapping_neg(),
                UnOp::Not => !x,
            }
        }
        RValue::ZExt32(v) => eval_rv(v, entry, free)? & 0xffff_ffff,
        RValue::Insert { base, sub, width, lane } => {
            let b = eval_rv(base, entry, free)?;
            let s = eval_rv(sub, entry, free)?;
            fold_insert(b, s, *width, *lane)
        }
        RValue::MulHigh(a, b) => {
            let x = eval_rv(a, entry, free)? as i64 as i128;
            let y = eval_rv(b, entry, free)? as i64 as i128;
            ((x * y) >> 64) as u64
        }
        RValue::WideDiv { hi, lo, divisor, part } => {
            let h = eval_rv(hi, entry, free)?;
            let l = eval_rv(lo, entry, free)?;
            let d = eval_rv(divisor, entry, free)?;
            fold_wide_div(h, l, d, *part)?
        }
    })
}

/// Evaluate a whole summary against an entry state: the fault conditions
/// first (a division that traps aborts the gadget no matter what happens to
/// its results), then the equations.
pub fn eval_summary(
    summary: &GadgetSummary,
    entry: &RegisterState,
    free: &[u64],
) -> Result<RegisterState, EvalError> {
    for h in &summary.hazards {
        eval_rv(h, entry, free)?;
    }
    eval_equations(&summary.equations, entry, free)
}

/// Evaluate folded equations against an entry state. All right-hand sides
/// read `entry`; the writes land together (a summary is simultaneous).
/// `free` supplies the values of the gadget's free stack slots.
pub fn eval_equations(
    equations: &[Equation],
    entry: &RegisterState,
    free: &[u64],
) -> Result<RegisterState, EvalError> {
    let mut out = *entry;
    for eq in equations {
        out[eq.dest.index()] = eval_rv(&eq.rhs, entry, free)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

fn render_const(c: i64) -> String {
    if (-9999..=9999).contains(&c) {
        format!("{c}")
    } else if c < 0 {
        format!("-0x{:x}", (c as i128).unsigned_abs())
    } else {
        format!("0x{c:x}")
    }
}

/// Render a register read at a width context, naming extraction patterns by
/// their alias (`(rax & 0xff)` reads as `al`, and so on).
fn render_rv(rv: &RValue, ctx: (Width, Lane)) -> String {
    use RValue::*;
    let alias =
        |r: crate::corpus::Reg, w: Width, lane: Lane| RegisterRef { reg: r, width: w, lane }.name();
    match rv {
        Const(c) => render_const(*c),
        Free(_) => "*".to_string(),
        Reg(r) => alias(*r, ctx.0, Lane::Low),
        Poison => "<div-fault>".to_string(),
        ZExt32(inner) => {
            if ctx.0 == Width::W32 {
                render_rv(inner, (Width::W32, Lane::Low))
            } else {
                format!("({} & 0xffffffff)", render_rv(inner, (Width::W64, Lane::Low)))
            }
        }
        Bin(BinOp::And, l, r) => {
            // Narrow-read extraction patterns.
            if let (Reg(reg), Const(0xffff)) = (l.as_ref(), r.as_ref()) {
                if ctx.0 == Width::W16 {
                    return alias(*reg, Width::W16, Lane::Low);
                }
            }
            if let (Reg(reg), Const(0xff)) = (l.as_ref(), r.as_ref()) {
                return alias(*reg, Width::W8, Lane::Low);
            }
            if let (Bin(BinOp::Shr, x, s), Const(0xff)) = (l.as_ref(), r.as_ref()) {
                if let (Reg(reg), Const(8)) = (x.as_ref(), s.as_ref()) {
                    if reg.has_high_byte() {
                        return alias(*reg, Width::W8, Lane::High);
                    }
                }
            }
            render_bin(BinOp::And, l, r, ctx)
        }
        Bin(op, l, r) => render_bin(*op, l, r, ctx),
        Un(op, v) => {
            let sym = match op {
                UnOp::Neg => "-",
                UnOp::Not => "~",
            };
            format!("{sym}({})", render_rv(v, ctx))
        }
        Insert { base, sub, width, lane } => {
            let tag = match (width, lane) {
                (Width::W16, _) => "ins16",
                (Width::W8, Lane::Low) => "ins8",
                _ => "ins8h",
            };
            format!(
                "{tag}({}, {})",
                render_rv(base, (Width::W64, Lane::Low)),
                render_rv(sub, (*width, *lane))
            )
        }
        MulHigh(a, b) => format!(
            "mulhi({}, {})",
            render_rv(a, (Width::W64, Lane::Low)),
            render_rv(b, (Width::W64, Lane::Low))
        ),
        WideDiv { hi, lo, divisor, part } => {
            let name = match part {
                DivPart::Quot => "quot128",
                DivPart::Rem => "rem128",
            };
            let w = (Width::W64, Lane::Low);
            format!(
                "{name}({}, {}, {})",
                render_rv(hi, w),
                render_rv(lo, w),
                render_rv(divisor, w)
            )
        }
    }
}

fn render_bin(op: BinOp, l: &RValue, r: &RValue, ctx: (Width, Lane)) -> String {
    let wrap = |v: &RValue| {
        let s = render_rv(v, ctx);
        if matches!(v, RValue::Bin(..) | RValue::Un(..)) && !s.starts_with(|c: char| c == '(')
        {
            // Alias-named subtrees come back as bare names; only wrap real
            // compound renderings.
            if s.contains(' ') {
                return format!("({s})");
            }
        }
        s
    };
    match op {
        BinOp::Rol => format!("rol({}, {})", render_rv(l, ctx), render_rv(r, ctx)),
        BinOp::Ror => format!("ror({}, {})", render_rv(l, ctx), render_rv(r, ctx)),
        _ => {
            let sym = match op {
                BinOp::Add => "+",
                BinOp::Sub => "-",
                BinOp::And => "&",
                BinOp::Or => "|",
                BinOp::Xor => "xor",
                BinOp::Mul => "*",
                BinOp::Div => "/",
                BinOp::Mod => "%",
                BinOp::Shl => "<<",
                BinOp::Shr => ">>",
                BinOp::Sar => ">>a",
                BinOp::Rol | BinOp::Ror => unreachable!(),
            };
            format!("{} {sym} {}", wrap(l), wrap(r))
        }
    }
}

/// Render one equation in the canonical `dest = rhs` style, using the alias
/// name of the write width where the tree shape preserves it.
pub fn render_equation(eq: &Equation) -> String {
    let full = RegisterRef::full(eq.dest).name();
    match (eq.render_width, &eq.rhs) {
        (Width::W64, rhs) => {
            format!("{} = {}", full, render_rv(rhs, (Width::W64, Lane::Low)))
        }
        (Width::W32, rhs) => {
            let name = RegisterRef { reg: eq.dest, width: Width::W32, lane: Lane::Low }.name();
            format!("{} = {}", name, render_rv(rhs, (Width::W32, Lane::Low)))
        }
        (w, RValue::Insert { base, sub, width, lane })
            if *width == w && **base == RValue::Reg(eq.dest) =>
        {
            let name = RegisterRef { reg: eq.dest, width: w, lane: *lane }.name();
            format!("{} = {}", name, render_rv(sub, (w, *lane)))
        }
        (_, rhs) => format!("{} = {}", full, render_rv(rhs, (Width::W64, Lane::Low))),
    }
}

/// Render a whole summary in the canonical `rax = *; rdx = rbx` style.
/// An explicit stack adjustment appears as a final `rsp = rsp + n` term.
pub fn render_summary(s: &GadgetSummary) -> String {
    if s.is_syscall_trigger {
        return "syscall".to_string();
    }
    let mut parts: Vec<String> = s.equations.iter().map(render_equation).collect();
    if s.explicit_rsp_adjust > 0 {
        parts.push(format!("rsp = rsp + {}", s.explicit_rsp_adjust));
    }
    if parts.is_empty() {
        return "(identity)".to_string();
    }
    parts.join("; ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_listing;

    fn lift_line(line: &str) -> Result<GadgetSummary, Rejection> {
        let text = format!("0x1000 : {line}");
        let corpus = parse_listing(&text).unwrap();
        assert_eq!(
            corpus.gadgets.len(),
            1,
            "line did not parse as a gadget: {line} ({:?})",
            corpus.unsupported
        );
        lift_gadget(&corpus.gadgets[0])
    }

    fn summary(line: &str) -> GadgetSummary {
        lift_line(line).unwrap()
    }

    #[test]
    fn pop_push_interleave_matches_by_hand_derivation() {
        let s = summary("pop rax ; push rbx ; pop rdx ; pop rcx ; ret");
        assert_eq!(render_summary(&s), "rax = *; rdx = rbx; rcx = *");
        assert_eq!(s.free_slots, 2);
        assert_eq!(s.category, Category::Two);
        assert_eq!(s.total_stack_consumed(), 8 * 2 + 8);
    }

    #[test]
    fn nested_push_pop_resolves_in_stack_order() {
        let s = summary("push r15 ; push r14 ; pop rax ; push r13 ; pop rbx ; pop rcx ; pop rdx ; ret");
        assert_eq!(render_summary(&s), "rax = r14; rbx = r13; rcx = r15; rdx = *");
        assert_eq!(s.free_slots, 1);
    }

    #[test]
    fn unbalanced_push_is_rejected() {
        assert_eq!(lift_line("push rbx ; ret"), Err(Rejection::UnbalancedPush));
        assert_eq!(
            lift_line("push rax ; push rbx ; pop rcx ; ret"),
            Err(Rejection::UnbalancedPush)
        );
    }

    #[test]
    fn rsp_adjustment_discards_own_pushes_first() {
        // the increment cancels the push, so the gadget is balanced
        let s = summary("push rax ; add rsp, 8 ; ret");
        assert_eq!(s.explicit_rsp_adjust, 0);
        assert_eq!(s.free_slots, 0);
        assert!(s.schedule.is_empty());
        // surplus beyond the pushed values skips payload words
        let s = summary("push rax ; add rsp, 24 ; ret");
        assert_eq!(s.explicit_rsp_adjust, 16);
        assert_eq!(s.schedule, vec![StackSlot::Skip, StackSlot::Skip]);
    }

    #[test]
    fn rsp_rejections() {
        assert_eq!(lift_line("sub rsp, 8 ; ret"), Err(Rejection::NegativeRspAdjust));
        assert_eq!(lift_line("add rsp, -8 ; ret"), Err(Rejection::NegativeRspAdjust));
        assert_eq!(lift_line("add rsp, 4 ; ret"), Err(Rejection::RspMisaligned));
    }

    #[test]
    fn narrow_write_merges_and_wide_write_replaces() {
        let s = summary("mov edx, eax ; add rsp, 8 ; ret");
        assert_eq!(render_summary(&s), "edx = eax; rsp = rsp + 8");
        assert_eq!(s.explicit_rsp_adjust, 8);
        assert_eq!(s.category, Category::Two);

        let s = summary("mov eax, 0x1 ; ret");
        assert_eq!(render_summary(&s), "eax = 1");
        assert_eq!(s.equations[0].rhs, RValue::Const(1));
        assert_eq!(s.category, Category::One);

        let s = summary("mov ah, bl ; ret");
        assert_eq!(render_summary(&s), "ah = bl");
        let entry_rax = 0x1122_3344_5566_7788u64;
        let entry_rbx = 0xabu64;
        let mut entry = [0u64; 16];
        entry[Reg::Rax.index()] = entry_rax;
        entry[Reg::Rbx.index()] = entry_rbx;
        let out = eval_equations(&s.equations, &entry, &[]).unwrap();
        assert_eq!(out[Reg::Rax.index()], 0x1122_3344_5566_ab88);
    }

    #[test]
    fn zeroing_idiom_is_constant() {
        let s = summary("xor eax, eax ; ret");
        assert_eq!(render_summary(&s), "eax = 0");
        assert_eq!(s.category, Category::One);
        let s = summary("sub rbx, rbx ; ret");
        assert_eq!(s.equations[0].rhs, RValue::Const(0));
    }

    #[test]
    fn xchg_and_xadd_fold_to_simultaneous_form() {
        let s = summary("xchg rax, rbx ; ret");
        assert_eq!(render_summary(&s), "rax = rbx; rbx = rax");
        let mut entry = [0u64; 16];
        entry[Reg::Rax.index()] = 2;
        entry[Reg::Rbx.index()] = 3;
        let out = eval_equations(&s.equations, &entry, &[]).unwrap();
        assert_eq!(out[Reg::Rax.index()], 3);
        assert_eq!(out[Reg::Rbx.index()], 2);

        // exchange-and-add: sum lands in the destination, old dest in source
        let s = summary("xadd rax, rbx ; ret");
        let out = eval_equations(&s.equations, &entry, &[]).unwrap();
        assert_eq!(out[Reg::Rax.index()], 5);
        assert_eq!(out[Reg::Rbx.index()], 2);
    }

    #[test]
    fn self_exchange_is_identity() {
        let s = summary("xchg rax, rax ; ret");
        assert!(s.equations.is_empty());
        assert_eq!(render_summary(&s), "(identity)");
    }

    #[test]
    fn one_operand_imul_splits_the_wide_product() {
        let s = summary("imul rbx ; ret");
        let mut entry = [0u64; 16];
        entry[Reg::Rax.index()] = u64::MAX; // -1
        entry[Reg::Rbx.index()] = 7;
        let out = eval_equations(&s.equations, &entry, &[]).unwrap();
        assert_eq!(out[Reg::Rax.index()] as i64, -7);
        assert_eq!(out[Reg::Rdx.index()] as i64, -1, "high half is the sign extension");
    }

    #[test]
    fn idiv_quotient_and_remainder() {
        let s = summary("idiv rbx ; ret");
        let mut entry = [0u64; 16];
        entry[Reg::Rdx.index()] = 0; // high half
        entry[Reg::Rax.index()] = 100;
        entry[Reg::Rbx.index()] = 7;
        let out = eval_equations(&s.equations, &entry, &[]).unwrap();
        assert_eq!(out[Reg::Rax.index()], 14);
        assert_eq!(out[Reg::Rdx.index()], 2);

        entry[Reg::Rbx.index()] = 0;
        assert_eq!(
            eval_equations(&s.equations, &entry, &[]),
            Err(EvalError::DivisionByZero)
        );
    }

    #[test]
    fn division_by_constant_zero_poisons_the_summary() {
        let s = summary("xor ebx, ebx ; idiv rbx ; ret");
        assert!(s.is_poisoned());
        // Poisoned gadgets are conditional by definition: they never run.
        assert_eq!(s.category, Category::Two);
    }

    #[test]
    fn overwritten_division_results_still_leave_a_fault_condition() {
        // The division executes (and can trap) even though both of its
        // results are replaced before ret.
        let s = summary("idiv rbx ; mov eax, 1 ; mov edx, 2 ; ret");
        assert!(!s.hazards.is_empty());
        assert!(s.may_fault());
        assert!(!s.is_poisoned());
        // Even with constant-only equations, a possible fault makes the
        // gadget's behavior depend on its entry state.
        assert_eq!(s.category, Category::Two);
        let entry = [0u64; 16]; // rbx = 0: the division faults
        assert!(eval_summary(&s, &entry, &[]).is_err());
        let mut ok = [1u64; 16];
        ok[Reg::Rdx.index()] = 0; // small positive dividend, divisor 1
        let out = eval_summary(&s, &ok, &[]).expect("no fault");
        assert_eq!(out[Reg::Rax.index()], 1);
        assert_eq!(out[Reg::Rdx.index()], 2);
    }

    #[test]
    fn guaranteed_fault_behind_overwrites_is_poisoned() {
        let s = summary("xor ebx, ebx ; idiv rbx ; mov eax, 1 ; mov edx, 2 ; ret");
        assert!(s.is_poisoned());
    }

    #[test]
    fn folding_substitutes_earlier_writes() {
        let writes = vec![
            Equation::full(Reg::Rax, RValue::Const(0)),
            Equation::full(
                Reg::Rbx,
                RValue::bin(BinOp::Add, RValue::Reg(Reg::Rax), RValue::Const(10)),
            ),
        ];
        let folded = fold_equations(&writes);
        assert_eq!(folded.len(), 2);
        assert_eq!(folded[1].rhs, RValue::Const(10));
    }

    #[test]
    fn folding_keeps_shared_free_slots_and_cancels_them_in_xor() {
        // rcx = slot0; rdx = rcx xor rcx -> both sides are the same slot,
        // so the xor is exactly zero no matter what the payload holds.
        let writes = vec![
            Equation::full(Reg::Rcx, RValue::Free(0)),
            Equation::full(
                Reg::Rdx,
                RValue::bin(BinOp::Xor, RValue::Reg(Reg::Rcx), RValue::Reg(Reg::Rcx)),
            ),
        ];
        let folded = fold_equations(&writes);
        assert_eq!(folded[0].rhs, RValue::Free(0));
        assert_eq!(folded[1].rhs, RValue::Const(0));
    }

    #[test]
    fn identity_writes_are_elided() {
        let writes = vec![Equation::full(Reg::Rax, RValue::Reg(Reg::Rax))];
        assert!(fold_equations(&writes).is_empty());
    }

    #[test]
    fn simplify_never_erases_a_faulting_subtree() {
        // (rax / rbx) xor (rax / rbx) is zero when it evaluates, but it can
        // also fault — the fold must keep the division.
        let div = RValue::bin(BinOp::Div, RValue::Reg(Reg::Rax), RValue::Reg(Reg::Rbx));
        let tree = RValue::bin(BinOp::Xor, div.clone(), div);
        assert!(simplify(tree).may_fault());
        // multiplying a faulting tree by zero must keep the fault too
        let div = RValue::bin(BinOp::Div, RValue::Reg(Reg::Rax), RValue::Reg(Reg::Rbx));
        let tree = RValue::bin(BinOp::Mul, div, RValue::Const(0));
        assert!(simplify(tree).may_fault());
    }

    #[test]
    fn narrow_shift_count_comes_from_cl_masked() {
        let s = summary("shl ax, cl ; ret");
        let mut entry = [0u64; 16];
        entry[Reg::Rax.index()] = 0xffff_0001;
        entry[Reg::Rcx.index()] = 0x21; // cl = 33 -> masked to 1
        let out = eval_equations(&s.equations, &entry, &[]).unwrap();
        assert_eq!(out[Reg::Rax.index()], 0xffff_0002);
    }

    #[test]
    fn narrow_rotate_wraps_within_the_lane() {
        let s = summary("rol al, 1 ; ret");
        let mut entry = [0u64; 16];
        entry[Reg::Rax.index()] = 0x80;
        let out = eval_equations(&s.equations, &entry, &[]).unwrap();
        assert_eq!(out[Reg::Rax.index()], 0x01);
    }

    #[test]
    fn trigger_gadgets_lift_to_empty_summaries() {
        let c = parse_listing("0x10 : syscall ; ret\n").unwrap();
        let s = lift_gadget(&c.gadgets[0]).unwrap();
        assert!(s.is_syscall_trigger);
        assert!(s.equations.is_empty());
        assert_eq!(render_summary(&s), "syscall");
    }

    #[test]
    fn categories_follow_register_reads() {
        assert_eq!(summary("pop rdi ; ret").category, Category::One);
        assert_eq!(summary("mov eax, 0xa ; ret").category, Category::One);
        assert_eq!(summary("mov rdi, rax ; ret").category, Category::Two);
        assert_eq!(summary("inc rbx ; ret").category, Category::Two);
        // a copy of a freshly-popped value is still entry-independent
        assert_eq!(summary("pop rax ; mov rbx, rax ; ret").category, Category::One);
    }
}
