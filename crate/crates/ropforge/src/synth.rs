//! Chain search: turning a desired register state into an ordered gadget list.
//!
//! The search works on lifted summaries only — it never looks at instruction
//! text. Entry-independent summaries (category 1) are composed breadth-first
//! into a catalog of reachable register states, deduplicated by a canonical
//! key so equivalent sequences are explored once. Entry-dependent summaries
//! (category 2) are then grafted on top of catalog entries by substituting
//! the entry's symbolic values into the dependent expression and back-solving
//! the result against the requested constant.
//!
//! A chain is assembled per target register: each register gets a candidate
//! block (a short gadget sequence plus bindings for the stack words it pops),
//! identical blocks are merged, and blocks are ordered so that no later block
//! overwrites an earlier block's delivered register with a different value.
//! The ordered chain is finally re-checked by abstract execution from a fully
//! unknown entry state, which is exactly the guarantee the verifier later
//! probes with random concrete states.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::collections::BinaryHeap;
use std::cmp::Reverse;
use std::fmt::Write as _;

use crate::corpus::Reg;
use crate::semantics::{
    fold_bin, fold_insert, fold_wide_div, identity_file, simplify, substitute, BinOp, Category,
    GadgetSummary, RValue, UnOp,
};

/// Filler word for stack slots a chain pops but places no requirement on.
pub const DUMMY_VALUE: u64 = 0x4242_4242_4242_4242;

/// Argument registers of the syscall calling convention, in position order.
pub const SYSCALL_ARG_REGS: [Reg; 6] = [Reg::Rdi, Reg::Rsi, Reg::Rdx, Reg::R10, Reg::R8, Reg::R9];

/// A desired register state at the moment the trigger runs: register -> value.
pub type ObjectiveState = BTreeMap<Reg, u64>;

/// Composite free-slot index stride: slot `s` of the gadget at chain position
/// `p` is tracked as `p * STRIDE + s` while sequences are composed.
const STRIDE: usize = 4096;

/// Cap on distinct catalog states explored per search.
const CATALOG_CAP: usize = 4096;
/// Cap on distinct entry-dependent sequences composed per search.
const SEQ_CAP: usize = 256;
/// Entry-dependent sequences are composed at most this deep.
const DEP_SEQ_MAX: usize = 2;
/// Cap on candidate blocks kept per target register.
const CAND_CAP: usize = 48;
/// Cap on block selections tried while assembling a chain.
const SELECTION_CAP: usize = 4096;

/// Why planning failed.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    /// No gadget sequence reaches the objective for the listed registers.
    #[error("no chain found; unsatisfiable registers: {}", join_regs(.unsatisfied))]
    NoChain {
        /// Every objective register the corpus cannot set, not just the first.
        unsatisfied: Vec<Reg>,
    },
    /// The corpus contains no syscall trigger gadget at all.
    #[error("corpus has no syscall trigger gadget")]
    MissingTrigger,
    /// Multi-call programs need `syscall ; ret` for every call but the last.
    #[error("multi-call program needs a resumable `syscall ; ret` trigger for every call but the last")]
    MissingResumableTrigger,
    /// The calling convention passes at most six arguments in registers.
    #[error("call `{name}` has {got} arguments; at most 6 fit in registers")]
    TooManyArgs {
        /// Offending call, as written in the program.
        name: String,
        /// Number of arguments it carried.
        got: usize,
    },
    /// A call name is absent from the active syscall table.
    #[error("unknown syscall `{0}`")]
    UnknownSyscall(String),
    /// The program file does not follow the `name(arg, ...)` grammar.
    #[error("bad program line {line}: {reason}")]
    BadProgram {
        /// 1-based line number.
        line: usize,
        /// What was wrong with it.
        reason: String,
    },
    /// The syscall table file does not follow the `name number` grammar.
    #[error("bad syscall table: {0}")]
    BadSyscallTable(String),
}

impl PlanError {
    /// Stable short name for error reporting and exit-code mapping.
    pub fn code(&self) -> &'static str {
        match self {
            PlanError::NoChain { .. } => "NoChain",
            PlanError::MissingTrigger => "MissingTrigger",
            PlanError::MissingResumableTrigger => "MissingResumableTrigger",
            PlanError::TooManyArgs { .. } => "TooManyArgs",
            PlanError::UnknownSyscall(_) => "UnknownSyscall",
            PlanError::BadProgram { .. } => "BadProgram",
            PlanError::BadSyscallTable(_) => "BadSyscallTable",
        }
    }

    /// True when the failure is a property of the search domain (no chain,
    /// no trigger) rather than bad input.
    pub fn is_domain_failure(&self) -> bool {
        matches!(
            self,
            PlanError::NoChain { .. }
                | PlanError::MissingTrigger
                | PlanError::MissingResumableTrigger
        )
    }
}

fn join_regs(regs: &[Reg]) -> String {
    let names: Vec<&str> = regs.iter().map(|r| r.name()).collect();
    names.join(", ")
}

// ---------------------------------------------------------------------------
// Syscall table and program files
// ---------------------------------------------------------------------------

/// Name -> number map used to resolve program calls.
#[derive(Debug, Clone)]
pub struct SyscallTable {
    entries: BTreeMap<String, u64>,
}

impl SyscallTable {
    /// Parse a table from `name number` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, PlanError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let name = parts.next().unwrap_or("");
            let number = parts.next().ok_or_else(|| {
                PlanError::BadSyscallTable(format!("line {}: missing number", idx + 1))
            })?;
            if parts.next().is_some() {
                return Err(PlanError::BadSyscallTable(format!(
                    "line {}: expected `name number`",
                    idx + 1
                )));
            }
            let number: u64 = parse_u64(number).ok_or_else(|| {
                PlanError::BadSyscallTable(format!("line {}: bad number `{number}`", idx + 1))
            })?;
            entries.insert(name.to_string(), number);
        }
        Ok(SyscallTable { entries })
    }

    /// The table built into the binary (x86-64 Linux numbers).
    pub fn embedded() -> Self {
        SyscallTable::parse(include_str!("../data/syscall_table.txt"))
            .expect("embedded syscall table is well-formed")
    }

    /// Embedded table unless `ROPFORGE_SYSCALL_TABLE` points at a file.
    pub fn load_default() -> Result<Self, PlanError> {
        match std::env::var_os("ROPFORGE_SYSCALL_TABLE") {
            None => Ok(SyscallTable::embedded()),
            Some(path) => {
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    PlanError::BadSyscallTable(format!("{}: {e}", path.to_string_lossy()))
                })?;
                SyscallTable::parse(&text)
            }
        }
    }

    /// Look up a syscall number by name.
    pub fn lookup(&self, name: &str) -> Option<u64> {
        self.entries.get(name).copied()
    }

    /// Number of entries in the table.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// True when the table has no entries.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One call in a program file, with its number already resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyscallCall {
    /// The call as written (`mprotect` or `@10`).
    pub name: String,
    /// Resolved syscall number.
    pub number: u64,
    /// Argument values in position order.
    pub args: Vec<u64>,
}

/// A parsed program file: the calls to make, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramSpec {
    /// Calls in execution order.
    pub calls: Vec<SyscallCall>,
}

fn parse_u64(text: &str) -> Option<u64> {
    let text = text.trim();
    if let Some(hex) = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        return u64::from_str_radix(hex, 16).ok();
    }
    if let Ok(v) = text.parse::<u64>() {
        return Some(v);
    }
    // Negative decimals wrap to the equivalent two's-complement word.
    text.parse::<i64>().ok().map(|v| v as u64)
}

/// Parse a program file: one `name(arg, ...)` or `@number(arg, ...)` per line.
pub fn parse_program(text: &str, table: &SyscallTable) -> Result<ProgramSpec, PlanError> {
    let mut calls = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| PlanError::BadProgram {
            line: idx + 1,
            reason,
        };
        let open = line
            .find('(')
            .ok_or_else(|| bad("expected `name(arg, ...)`".to_string()))?;
        if !line.ends_with(')') {
            return Err(bad("missing closing `)`".to_string()));
        }
        let head = line[..open].trim();
        let inner = &line[open + 1..line.len() - 1];
        if head.is_empty() {
            return Err(bad("missing call name".to_string()));
        }
        let number = if let Some(num) = head.strip_prefix('@') {
            parse_u64(num).ok_or_else(|| bad(format!("bad syscall number `{num}`")))?
        } else {
            if !head
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_')
            {
                return Err(bad(format!("bad call name `{head}`")));
            }
            table
                .lookup(head)
                .ok_or(PlanError::UnknownSyscall(head.to_string()))?
        };
        let mut args = Vec::new();
        if !inner.trim().is_empty() {
            for piece in inner.split(',') {
                let piece = piece.trim();
                if piece.is_empty() {
                    return Err(bad("empty argument".to_string()));
                }
                args.push(parse_u64(piece).ok_or_else(|| bad(format!("bad argument `{piece}`")))?);
            }
        }
        if args.len() > SYSCALL_ARG_REGS.len() {
            return Err(PlanError::TooManyArgs {
                name: head.to_string(),
                got: args.len(),
            });
        }
        calls.push(SyscallCall {
            name: head.to_string(),
            number,
            args,
        });
    }
    Ok(ProgramSpec { calls })
}

/// Registers a call pins down: the number in rax, arguments in order.
pub fn objective_from_call(call: &SyscallCall) -> Result<ObjectiveState, PlanError> {
    if call.args.len() > SYSCALL_ARG_REGS.len() {
        return Err(PlanError::TooManyArgs {
            name: call.name.clone(),
            got: call.args.len(),
        });
    }
    let mut objective = ObjectiveState::new();
    objective.insert(Reg::Rax, call.number);
    for (reg, value) in SYSCALL_ARG_REGS.iter().zip(&call.args) {
        objective.insert(*reg, *value);
    }
    Ok(objective)
}

// ---------------------------------------------------------------------------
// Chains
// ---------------------------------------------------------------------------

/// One gadget in a chain plus the values bound to the stack words it pops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainStep {
    /// The lifted gadget this step runs.
    pub summary: GadgetSummary,
    /// Value for each popped slot, index-aligned with the summary's slots.
    pub free_values: Vec<u64>,
}

/// A complete single-call chain: setup steps, then the trigger.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    /// Setup gadgets in execution order.
    pub steps: Vec<ChainStep>,
    /// The syscall gadget that fires once the state is reached.
    pub trigger: GadgetSummary,
    /// The register state the chain establishes.
    pub objective: ObjectiveState,
}

impl Chain {
    /// Total 64-bit words the payload occupies, trigger address included.
    pub fn payload_word_count(&self) -> usize {
        let setup: usize = self
            .steps
            .iter()
            .map(|s| (s.summary.total_stack_consumed() / 8) as usize)
            .sum();
        setup + 1
    }
}

/// Run chain steps over the value lattice `None` = unknown, `Some(v)` = known,
/// starting from a fully unknown entry state. Popped slots take their bound
/// values, so the result is exactly what holds for *every* concrete entry.
pub fn abstract_execute(steps: &[ChainStep]) -> [Option<u64>; 16] {
    let mut state: [Option<u64>; 16] = [None; 16];
    for step in steps {
        let writes: Vec<(Reg, Option<u64>)> = step
            .summary
            .equations
            .iter()
            .map(|eq| (eq.dest, abs_eval(&eq.rhs, &state, &step.free_values)))
            .collect();
        for (dest, value) in writes {
            state[dest.index()] = value;
        }
    }
    state
}

fn abs_eval(rv: &RValue, state: &[Option<u64>; 16], free: &[u64]) -> Option<u64> {
    match rv {
        RValue::Const(c) => Some(*c as u64),
        RValue::Reg(r) => state[r.index()],
        RValue::Free(i) => free.get(*i).copied(),
        RValue::Bin(op, l, r) => {
            let (l, r) = (abs_eval(l, state, free)?, abs_eval(r, state, free)?);
            fold_bin(*op, l, r).ok()
        }
        RValue::Un(op, v) => {
            let v = abs_eval(v, state, free)?;
            Some(match op {
                UnOp::Neg => v.wrapping_neg(),
                UnOp::Not => !v,
            })
        }
        RValue::ZExt32(v) => Some(abs_eval(v, state, free)? & 0xffff_ffff),
        RValue::Insert {
            base,
            sub,
            width,
            lane,
        } => {
            let b = abs_eval(base, state, free)?;
            let s = abs_eval(sub, state, free)?;
            Some(fold_insert(b, s, *width, *lane))
        }
        RValue::MulHigh(l, r) => {
            let (l, r) = (abs_eval(l, state, free)?, abs_eval(r, state, free)?);
            Some(((l as i64 as i128).wrapping_mul(r as i64 as i128) >> 64) as u64)
        }
        RValue::WideDiv {
            hi,
            lo,
            divisor,
            part,
        } => {
            let hi = abs_eval(hi, state, free)?;
            let lo = abs_eval(lo, state, free)?;
            let divisor = abs_eval(divisor, state, free)?;
            fold_wide_div(hi, lo, divisor, *part).ok()
        }
        RValue::Poison => None,
    }
}

// ---------------------------------------------------------------------------
// Symbolic sequence composition
// ---------------------------------------------------------------------------

/// Clone `rv` with every free slot shifted into the composite index space.
fn map_frees(rv: &RValue, base: usize) -> RValue {
    match rv {
        RValue::Free(i) => RValue::Free(i + base),
        RValue::Const(_) | RValue::Reg(_) | RValue::Poison => rv.clone(),
        RValue::Bin(op, l, r) => RValue::Bin(
            *op,
            Box::new(map_frees(l, base)),
            Box::new(map_frees(r, base)),
        ),
        RValue::Un(op, v) => RValue::Un(*op, Box::new(map_frees(v, base))),
        RValue::ZExt32(v) => RValue::ZExt32(Box::new(map_frees(v, base))),
        RValue::Insert {
            base: b,
            sub,
            width,
            lane,
        } => RValue::Insert {
            base: Box::new(map_frees(b, base)),
            sub: Box::new(map_frees(sub, base)),
            width: *width,
            lane: *lane,
        },
        RValue::MulHigh(l, r) => RValue::MulHigh(
            Box::new(map_frees(l, base)),
            Box::new(map_frees(r, base)),
        ),
        RValue::WideDiv {
            hi,
            lo,
            divisor,
            part,
        } => RValue::WideDiv {
            hi: Box::new(map_frees(hi, base)),
            lo: Box::new(map_frees(lo, base)),
            divisor: Box::new(map_frees(divisor, base)),
            part: *part,
        },
    }
}

/// Replace register reads with the values a catalog entry provides.
/// `None` when the expression reads a register the entry leaves unknown.
fn subst_entry(rv: &RValue, provided: &BTreeMap<Reg, RValue>) -> Option<RValue> {
    match rv {
        RValue::Reg(r) => provided.get(r).cloned(),
        RValue::Const(_) | RValue::Free(_) | RValue::Poison => Some(rv.clone()),
        RValue::Bin(op, l, r) => Some(RValue::Bin(
            *op,
            Box::new(subst_entry(l, provided)?),
            Box::new(subst_entry(r, provided)?),
        )),
        RValue::Un(op, v) => Some(RValue::Un(*op, Box::new(subst_entry(v, provided)?))),
        RValue::ZExt32(v) => Some(RValue::ZExt32(Box::new(subst_entry(v, provided)?))),
        RValue::Insert {
            base,
            sub,
            width,
            lane,
        } => Some(RValue::Insert {
            base: Box::new(subst_entry(base, provided)?),
            sub: Box::new(subst_entry(sub, provided)?),
            width: *width,
            lane: *lane,
        }),
        RValue::MulHigh(l, r) => Some(RValue::MulHigh(
            Box::new(subst_entry(l, provided)?),
            Box::new(subst_entry(r, provided)?),
        )),
        RValue::WideDiv {
            hi,
            lo,
            divisor,
            part,
        } => Some(RValue::WideDiv {
            hi: Box::new(subst_entry(hi, provided)?),
            lo: Box::new(subst_entry(lo, provided)?),
            divisor: Box::new(subst_entry(divisor, provided)?),
            part: *part,
        }),
    }
}

/// Canonical text for an expression with free slots renamed in first-seen
/// order, so structurally equal states compare equal regardless of which
/// stack slots happen to feed them.
fn encode(rv: &RValue, rename: &mut BTreeMap<usize, usize>, out: &mut String) {
    match rv {
        RValue::Const(c) => {
            let _ = write!(out, "c{c}");
        }
        RValue::Reg(r) => {
            let _ = write!(out, "r{}", r.index());
        }
        RValue::Free(i) => {
            let next = rename.len();
            let id = *rename.entry(*i).or_insert(next);
            let _ = write!(out, "f{id}");
        }
        RValue::Bin(op, l, r) => {
            let _ = write!(out, "({op:?} ");
            encode(l, rename, out);
            out.push(' ');
            encode(r, rename, out);
            out.push(')');
        }
        RValue::Un(op, v) => {
            let _ = write!(out, "({op:?} ");
            encode(v, rename, out);
            out.push(')');
        }
        RValue::ZExt32(v) => {
            out.push_str("(zx ");
            encode(v, rename, out);
            out.push(')');
        }
        RValue::Insert {
            base,
            sub,
            width,
            lane,
        } => {
            let _ = write!(out, "(ins{}{:?} ", width.bits(), lane);
            encode(base, rename, out);
            out.push(' ');
            encode(sub, rename, out);
            out.push(')');
        }
        RValue::MulHigh(l, r) => {
            out.push_str("(mulh ");
            encode(l, rename, out);
            out.push(' ');
            encode(r, rename, out);
            out.push(')');
        }
        RValue::WideDiv {
            hi,
            lo,
            divisor,
            part,
        } => {
            let _ = write!(out, "(wdiv{part:?} ");
            encode(hi, rename, out);
            out.push(' ');
            encode(lo, rename, out);
            out.push(' ');
            encode(divisor, rename, out);
            out.push(')');
        }
        RValue::Poison => out.push_str("poison"),
    }
}

fn state_key<'a>(pairs: impl Iterator<Item = (Reg, &'a RValue)>) -> String {
    let mut rename = BTreeMap::new();
    let mut out = String::new();
    for (reg, rv) in pairs {
        let _ = write!(out, "{}=", reg.index());
        encode(rv, &mut rename, &mut out);
        out.push(';');
    }
    out
}

/// A deduplicated reachable state: which gadgets to run (indices into the
/// usable summary list) and the symbolic value each relevant register holds.
struct CatalogEntry {
    steps: Vec<usize>,
    state: BTreeMap<Reg, RValue>,
}

/// Breadth-first composition of entry-independent summaries up to `max_len`,
/// keeping the first (shortest, then lexicographically earliest) sequence for
/// each distinct projected state.
fn enumerate_entry_states(
    summaries: &[GadgetSummary],
    cat1: &[usize],
    relevant: &BTreeSet<Reg>,
    max_len: usize,
) -> Vec<CatalogEntry> {
    let mut entries = vec![CatalogEntry {
        steps: Vec::new(),
        state: BTreeMap::new(),
    }];
    let mut seen = BTreeSet::new();
    seen.insert(String::new());
    let mut frontier: Vec<usize> = vec![0];
    for _ in 0..max_len {
        let mut next_frontier = Vec::new();
        'expand: for &ei in &frontier {
            for &si in cat1 {
                let pos = entries[ei].steps.len();
                let mut state = entries[ei].state.clone();
                for eq in &summaries[si].equations {
                    if relevant.contains(&eq.dest) {
                        state.insert(eq.dest, map_frees(&eq.rhs, pos * STRIDE));
                    }
                }
                let key = state_key(state.iter().map(|(r, v)| (*r, v)));
                if seen.insert(key) {
                    let mut steps = entries[ei].steps.clone();
                    steps.push(si);
                    entries.push(CatalogEntry { steps, state });
                    next_frontier.push(entries.len() - 1);
                    if entries.len() >= CATALOG_CAP {
                        break 'expand;
                    }
                }
            }
        }
        if next_frontier.is_empty() || entries.len() >= CATALOG_CAP {
            break;
        }
        frontier = next_frontier;
    }
    entries
}

/// A composed sequence of entry-dependent summaries: the symbolic register
/// file after running them from an untouched entry state.
struct DependentSeq {
    steps: Vec<usize>,
    file: [RValue; 16],
}

/// Compose entry-dependent summaries up to `max_len` deep (sequences, not
/// single gadgets, so two-stage moves like `rax -> rbx -> rdi` still solve).
fn enumerate_dependent_sequences(
    summaries: &[GadgetSummary],
    cat2: &[usize],
    max_len: usize,
) -> Vec<DependentSeq> {
    let mut seqs = vec![DependentSeq {
        steps: Vec::new(),
        file: identity_file(),
    }];
    let mut seen = BTreeSet::new();
    seen.insert(String::new());
    let mut frontier: Vec<usize> = vec![0];
    for _ in 0..max_len {
        let mut next_frontier = Vec::new();
        'expand: for &qi in &frontier {
            for &si in cat2 {
                let pos = seqs[qi].steps.len();
                let mut file = seqs[qi].file.clone();
                let writes: Vec<(Reg, RValue)> = summaries[si]
                    .equations
                    .iter()
                    .map(|eq| {
                        let shifted = map_frees(&eq.rhs, pos * STRIDE);
                        (eq.dest, simplify(substitute(&shifted, &seqs[qi].file)))
                    })
                    .collect();
                for (dest, rv) in writes {
                    file[dest.index()] = rv;
                }
                let key = state_key(
                    file.iter()
                        .enumerate()
                        .filter(|(i, rv)| **rv != RValue::Reg(crate::corpus::ALL_REGS[*i]))
                        .map(|(i, rv)| (crate::corpus::ALL_REGS[i], rv)),
                );
                if seen.insert(key) {
                    let mut steps = seqs[qi].steps.clone();
                    steps.push(si);
                    seqs.push(DependentSeq { steps, file });
                    next_frontier.push(seqs.len() - 1);
                    if seqs.len() >= SEQ_CAP {
                        break 'expand;
                    }
                }
            }
        }
        if next_frontier.is_empty() || seqs.len() >= SEQ_CAP {
            break;
        }
        frontier = next_frontier;
    }
    seqs
}

/// Peel invertible layers off `rv` until a free slot (or matching constant)
/// is exposed, accumulating the slot values that force `rv` to equal `target`.
fn invert(rv: &RValue, target: u64, out: &mut Vec<(usize, u64)>) -> bool {
    match rv {
        RValue::Const(c) => *c as u64 == target,
        RValue::Free(i) => {
            out.push((*i, target));
            true
        }
        RValue::ZExt32(inner) => target <= u32::MAX as u64 && invert(inner, target, out),
        RValue::Bin(op, l, r) => match (op, l.as_ref(), r.as_ref()) {
            (BinOp::Add, x, RValue::Const(c)) => invert(x, target.wrapping_sub(*c as u64), out),
            (BinOp::Add, RValue::Const(c), x) => invert(x, target.wrapping_sub(*c as u64), out),
            (BinOp::Sub, x, RValue::Const(c)) => invert(x, target.wrapping_add(*c as u64), out),
            (BinOp::Sub, RValue::Const(c), x) => invert(x, (*c as u64).wrapping_sub(target), out),
            (BinOp::Xor, x, RValue::Const(c)) => invert(x, target ^ *c as u64, out),
            (BinOp::Xor, RValue::Const(c), x) => invert(x, target ^ *c as u64, out),
            _ => false,
        },
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// Candidate blocks and chain assembly
// ---------------------------------------------------------------------------

/// A gadget sequence that delivers one target register, with the stack-slot
/// values (in composite index space) that make it do so.
#[derive(Debug, Clone)]
struct Route {
    steps: Vec<usize>,
    bindings: BTreeMap<usize, u64>,
    words: usize,
}

fn route_words(summaries: &[GadgetSummary], steps: &[usize]) -> usize {
    steps
        .iter()
        .map(|&si| (summaries[si].total_stack_consumed() / 8) as usize)
        .sum()
}

fn route_offsets(summaries: &[GadgetSummary], steps: &[usize]) -> Vec<u64> {
    steps.iter().map(|&si| summaries[si].gadget.offset).collect()
}

/// All bounded ways to force `reg == target`: a catalog entry on its own, or
/// a catalog entry followed by a dependent sequence whose expression for the
/// register back-solves against the entry's values.
fn candidates_for(
    summaries: &[GadgetSummary],
    entries: &[CatalogEntry],
    seqs: &[DependentSeq],
    reg: Reg,
    target: u64,
    max_chain_len: usize,
) -> Vec<Route> {
    let mut routes: Vec<Route> = Vec::new();
    let mut seen = BTreeSet::new();
    for seq in seqs {
        let expr_t = &seq.file[reg.index()];
        if !seq.steps.is_empty() && *expr_t == RValue::Reg(reg) {
            continue; // the sequence never writes the register
        }
        for entry in entries {
            if entry.steps.len() + seq.steps.len() > max_chain_len {
                continue;
            }
            let shifted = map_frees(expr_t, entry.steps.len() * STRIDE);
            let Some(expr) = subst_entry(&shifted, &entry.state) else {
                continue; // reads a register the entry leaves unknown
            };
            let expr = simplify(expr);
            let mut slot_values = Vec::new();
            if !invert(&expr, target, &mut slot_values) {
                continue;
            }
            let mut bindings = BTreeMap::new();
            let mut conflict = false;
            for (slot, value) in slot_values {
                if *bindings.entry(slot).or_insert(value) != value {
                    conflict = true;
                }
            }
            if conflict {
                continue;
            }
            let mut steps = entry.steps.clone();
            steps.extend_from_slice(&seq.steps);
            let key = format!("{steps:?}|{bindings:?}");
            if !seen.insert(key) {
                continue;
            }
            let words = route_words(summaries, &steps);
            routes.push(Route {
                steps,
                bindings,
                words,
            });
        }
    }
    routes.sort_by(|a, b| {
        (a.steps.len(), a.words, route_offsets(summaries, &a.steps)).cmp(&(
            b.steps.len(),
            b.words,
            route_offsets(summaries, &b.steps),
        ))
    });
    routes.truncate(CAND_CAP);
    routes
}

/// A merged block: one contiguous gadget run delivering a set of registers.
struct Block {
    steps: Vec<usize>,
    bindings: BTreeMap<usize, u64>,
    delivered: BTreeSet<Reg>,
}

impl Block {
    fn chain_steps(&self, summaries: &[GadgetSummary]) -> Vec<ChainStep> {
        self.steps
            .iter()
            .enumerate()
            .map(|(pos, &si)| {
                let summary = summaries[si].clone();
                let free_values = (0..summary.free_slots)
                    .map(|slot| {
                        self.bindings
                            .get(&(pos * STRIDE + slot))
                            .copied()
                            .unwrap_or(DUMMY_VALUE)
                    })
                    .collect();
                ChainStep {
                    summary,
                    free_values,
                }
            })
            .collect()
    }

    fn writes(&self, summaries: &[GadgetSummary]) -> BTreeSet<Reg> {
        self.steps
            .iter()
            .flat_map(|&si| summaries[si].equations.iter().map(|eq| eq.dest))
            .collect()
    }
}

/// How early a register must be placed; syscall arguments first, rax last so
/// nothing can disturb the call number once it is set.
fn placement_rank(reg: Reg) -> usize {
    match reg {
        Reg::Rdi => 0,
        Reg::Rsi => 1,
        Reg::Rdx => 2,
        Reg::R10 => 3,
        Reg::R8 => 4,
        Reg::R9 => 5,
        Reg::Rax => 6,
        other => 7 + other.index(),
    }
}

/// Try to turn one candidate selection (one route per target register) into a
/// valid ordered chain. Returns the chain steps, or `None` when routes merge
/// inconsistently, ordering constraints cycle, or the final abstract check
/// misses the objective.
fn try_selection(
    summaries: &[GadgetSummary],
    objective: &ObjectiveState,
    regs: &[Reg],
    selection: &[&Route],
) -> Option<Vec<ChainStep>> {
    // Merge identical step sequences into one block with unioned bindings.
    let mut blocks: BTreeMap<Vec<usize>, Block> = BTreeMap::new();
    for (reg, route) in regs.iter().zip(selection) {
        match blocks.get_mut(&route.steps) {
            None => {
                blocks.insert(
                    route.steps.clone(),
                    Block {
                        steps: route.steps.clone(),
                        bindings: route.bindings.clone(),
                        delivered: BTreeSet::from([*reg]),
                    },
                );
            }
            Some(block) => {
                for (&slot, &value) in &route.bindings {
                    if *block.bindings.entry(slot).or_insert(value) != value {
                        return None; // two registers need different words in one slot
                    }
                }
                block.delivered.insert(*reg);
            }
        }
    }
    let blocks: Vec<Block> = blocks.into_values().collect();

    // A block must run after any block that overwrites one of its delivered
    // registers with something other than the required value.
    let n = blocks.len();
    let abs: Vec<[Option<u64>; 16]> = blocks
        .iter()
        .map(|b| abstract_execute(&b.chain_steps(summaries)))
        .collect();
    let writes: Vec<BTreeSet<Reg>> = blocks.iter().map(|b| b.writes(summaries)).collect();
    let mut must_precede = vec![Vec::new(); n]; // edges y -> x: y before x
    let mut indegree = vec![0usize; n];
    for x in 0..n {
        for y in 0..n {
            if x == y {
                continue;
            }
            let clobbers = blocks[x].delivered.iter().any(|r| {
                writes[y].contains(r) && abs[y][r.index()] != Some(objective[r])
            });
            if clobbers {
                must_precede[y].push(x);
                indegree[x] += 1;
            }
        }
    }

    // Priority-directed topological order: lowest placement rank first.
    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    for _ in 0..n {
        let pick = (0..n)
            .filter(|&i| !placed[i] && indegree[i] == 0)
            .min_by_key(|&i| {
                let rank = blocks[i]
                    .delivered
                    .iter()
                    .map(|r| placement_rank(*r))
                    .min()
                    .unwrap_or(usize::MAX);
                (rank, blocks[i].steps.clone())
            })?;
        placed[pick] = true;
        order.push(pick);
        for &succ in &must_precede[pick] {
            indegree[succ] -= 1;
        }
    }

    let mut chain_steps = Vec::new();
    for &bi in &order {
        chain_steps.extend(blocks[bi].chain_steps(summaries));
    }

    // Final gate: from a fully unknown entry, every objective register must
    // provably hold its required value when the trigger runs.
    let final_state = abstract_execute(&chain_steps);
    for (reg, want) in objective {
        if final_state[reg.index()] != Some(*want) {
            return None;
        }
    }
    Some(chain_steps)
}

/// Chain cost: fewer gadgets, then fewer payload words. Ties keep the first
/// valid chain in exploration order, which favors the argument-priority
/// routes because selections are explored smallest-index first.
fn chain_metric(steps: &[ChainStep]) -> (usize, usize) {
    let words: usize = steps
        .iter()
        .map(|s| (s.summary.total_stack_consumed() / 8) as usize)
        .sum();
    (steps.len(), words)
}

/// Pick the trigger gadget: lowest offset wins; resumable (`syscall ; ret`)
/// required when another call follows.
fn select_trigger(summaries: &[GadgetSummary], need_resumable: bool) -> Option<GadgetSummary> {
    summaries
        .iter()
        .filter(|s| s.is_syscall_trigger)
        .filter(|s| !need_resumable || s.gadget.instructions.len() == 2)
        .min_by_key(|s| s.gadget.offset)
        .cloned()
}

/// Summaries the chain search may use: lifted cleanly and free of any
/// operation that could fault at run time, so a found chain can never trap.
fn search_usable(summary: &GadgetSummary) -> bool {
    !summary.is_syscall_trigger && !summary.may_fault()
}

/// Search for a chain that reaches `objective` and ends in a trigger.
///
/// `max_chain_len` bounds the gadget count of each candidate block, and the
/// result is deterministic for a given summary list and objective.
pub fn build_chain(
    objective: &ObjectiveState,
    summaries: &[GadgetSummary],
    max_chain_len: usize,
) -> Result<Chain, PlanError> {
    build_chain_with_trigger(objective, summaries, max_chain_len, false)
}

fn build_chain_with_trigger(
    objective: &ObjectiveState,
    summaries: &[GadgetSummary],
    max_chain_len: usize,
    need_resumable: bool,
) -> Result<Chain, PlanError> {
    let trigger = select_trigger(summaries, need_resumable).ok_or(if need_resumable {
        PlanError::MissingResumableTrigger
    } else {
        PlanError::MissingTrigger
    })?;

    if objective.is_empty() {
        return Ok(Chain {
            steps: Vec::new(),
            trigger,
            objective: objective.clone(),
        });
    }

    let usable: Vec<usize> = (0..summaries.len())
        .filter(|&i| search_usable(&summaries[i]))
        .collect();
    let cat1: Vec<usize> = usable
        .iter()
        .copied()
        .filter(|&i| summaries[i].category == Category::One)
        .collect();
    let cat2: Vec<usize> = usable
        .iter()
        .copied()
        .filter(|&i| summaries[i].category == Category::Two)
        .collect();

    // Registers whose values can influence the outcome: the targets plus
    // everything any entry-dependent summary reads.
    let mut relevant: BTreeSet<Reg> = objective.keys().copied().collect();
    for &i in &cat2 {
        for eq in &summaries[i].equations {
            eq.rhs.any_node(&mut |n| {
                if let RValue::Reg(r) = n {
                    relevant.insert(*r);
                }
                false
            });
        }
    }

    let entries = enumerate_entry_states(summaries, &cat1, &relevant, max_chain_len);
    let seqs =
        enumerate_dependent_sequences(summaries, &cat2, DEP_SEQ_MAX.min(max_chain_len));

    let regs: Vec<Reg> = {
        let mut r: Vec<Reg> = objective.keys().copied().collect();
        r.sort_by_key(|reg| (placement_rank(*reg), reg.index()));
        r
    };
    let mut per_reg: Vec<Vec<Route>> = Vec::with_capacity(regs.len());
    let mut unsatisfied = Vec::new();
    for &reg in &regs {
        let routes = candidates_for(
            summaries,
            &entries,
            &seqs,
            reg,
            objective[&reg],
            max_chain_len,
        );
        if routes.is_empty() {
            unsatisfied.push(reg);
        }
        per_reg.push(routes);
    }
    if !unsatisfied.is_empty() {
        unsatisfied.sort_by_key(|r| r.index());
        return Err(PlanError::NoChain { unsatisfied });
    }

    // Walk selections (one route per register) in nondecreasing pre-merge
    // cost; keep the best post-merge chain seen.
    let cost_of = |idxs: &[usize]| -> (usize, usize) {
        let mut steps = 0;
        let mut words = 0;
        for (ri, &ci) in idxs.iter().enumerate() {
            steps += per_reg[ri][ci].steps.len();
            words += per_reg[ri][ci].words;
        }
        (steps, words)
    };
    let mut heap = BinaryHeap::new();
    let start = vec![0usize; regs.len()];
    heap.push(Reverse((cost_of(&start), start.clone())));
    let mut seen_sel = BTreeSet::new();
    seen_sel.insert(start);
    let mut best: Option<(Vec<ChainStep>, (usize, usize))> = None;
    let mut explored = 0usize;
    while let Some(Reverse((_, idxs))) = heap.pop() {
        explored += 1;
        if explored > SELECTION_CAP {
            break;
        }
        let selection: Vec<&Route> = idxs
            .iter()
            .enumerate()
            .map(|(ri, &ci)| &per_reg[ri][ci])
            .collect();
        if let Some(steps) = try_selection(summaries, objective, &regs, &selection) {
            let metric = chain_metric(&steps);
            let better = match &best {
                None => true,
                Some((_, best_metric)) => metric < *best_metric,
            };
            if better {
                best = Some((steps, metric));
            }
        }
        for ri in 0..idxs.len() {
            if idxs[ri] + 1 < per_reg[ri].len() {
                let mut next = idxs.clone();
                next[ri] += 1;
                if seen_sel.insert(next.clone()) {
                    heap.push(Reverse((cost_of(&next), next)));
                }
            }
        }
    }

    match best {
        Some((steps, _)) => Ok(Chain {
            steps,
            trigger,
            objective: objective.clone(),
        }),
        None => {
            let mut regs_sorted: Vec<Reg> = objective.keys().copied().collect();
            regs_sorted.sort_by_key(|r| r.index());
            Err(PlanError::NoChain {
                unsatisfied: regs_sorted,
            })
        }
    }
}

/// Plan a whole program: one chain per call, later chains assuming nothing
/// about the registers the kernel return path may have changed.
///
/// Every call but the last needs a resumable trigger so control returns to
/// the stack; the final call may use a bare `syscall` gadget.
pub fn plan_program(
    program: &ProgramSpec,
    summaries: &[GadgetSummary],
    max_chain_len: usize,
) -> Result<Vec<Chain>, PlanError> {
    let mut chains = Vec::with_capacity(program.calls.len());
    for (idx, call) in program.calls.iter().enumerate() {
        let objective = objective_from_call(call)?;
        let need_resumable = idx + 1 < program.calls.len();
        chains.push(build_chain_with_trigger(
            &objective,
            summaries,
            max_chain_len,
            need_resumable,
        )?);
    }
    Ok(chains)
}
