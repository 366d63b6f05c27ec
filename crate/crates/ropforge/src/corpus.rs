//! Gadget listings: the textual corpus format and its instruction grammar.
//!
//! A corpus file is line-oriented: `0x<hex-offset> : insn ; insn ; ... ; ret`.
//! Lines that don't fit the supported instruction subset are recorded with a
//! reason instead of aborting the parse, so a noisy extractor dump can be fed
//! in directly. Duplicate offsets are the one fatal case — they would make
//! address resolution ambiguous later on.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

/// The sixteen general-purpose registers, in encoding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Reg {
    Rax,
    Rcx,
    Rdx,
    Rbx,
    Rsp,
    Rbp,
    Rsi,
    Rdi,
    R8,
    R9,
    R10,
    R11,
    R12,
    R13,
    R14,
    R15,
}

/// All sixteen registers, for iteration.
pub const ALL_REGS: [Reg; 16] = [
    Reg::Rax,
    Reg::Rcx,
    Reg::Rdx,
    Reg::Rbx,
    Reg::Rsp,
    Reg::Rbp,
    Reg::Rsi,
    Reg::Rdi,
    Reg::R8,
    Reg::R9,
    Reg::R10,
    Reg::R11,
    Reg::R12,
    Reg::R13,
    Reg::R14,
    Reg::R15,
];

impl Reg {
    /// Index into a 16-entry register file.
    pub fn index(self) -> usize {
        ALL_REGS.iter().position(|&r| r == self).unwrap()
    }

    /// Canonical 64-bit name (`rax`, `r8`, ...).
    pub fn name(self) -> &'static str {
        match self {
            Reg::Rax => "rax",
            Reg::Rcx => "rcx",
            Reg::Rdx => "rdx",
            Reg::Rbx => "rbx",
            Reg::Rsp => "rsp",
            Reg::Rbp => "rbp",
            Reg::Rsi => "rsi",
            Reg::Rdi => "rdi",
            Reg::R8 => "r8",
            Reg::R9 => "r9",
            Reg::R10 => "r10",
            Reg::R11 => "r11",
            Reg::R12 => "r12",
            Reg::R13 => "r13",
            Reg::R14 => "r14",
            Reg::R15 => "r15",
        }
    }

    /// True for `ah`/`bh`/`ch`/`dh`-style high-byte aliases' parents.
    pub fn has_high_byte(self) -> bool {
        matches!(self, Reg::Rax | Reg::Rbx | Reg::Rcx | Reg::Rdx)
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Operand width in bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Width {
    W64,
    W32,
    W16,
    W8,
}

impl Width {
    pub fn bits(self) -> u32 {
        match self {
            Width::W64 => 64,
            Width::W32 => 32,
            Width::W16 => 16,
            Width::W8 => 8,
        }
    }
}

/// Which byte of a 16-bit lane an 8-bit alias addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Lane {
    Low,
    High,
}

/// A register operand as written: canonical register plus access width/lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RegisterRef {
    pub reg: Reg,
    pub width: Width,
    pub lane: Lane,
}

impl RegisterRef {
    pub fn full(reg: Reg) -> Self {
        RegisterRef { reg, width: Width::W64, lane: Lane::Low }
    }

    /// The alias name for this register at this width (`rax`/`eax`/`ax`/`al`/`ah`).
    pub fn name(&self) -> String {
        let base = self.reg.name();
        let numbered = base.len() > 2 || base.as_bytes()[0] == b'r' && base.len() == 2;
        // r8..r15 use suffix aliases; the classic eight use prefix/suffix forms.
        if matches!(
            self.reg,
            Reg::R8
                | Reg::R9
                | Reg::R10
                | Reg::R11
                | Reg::R12
                | Reg::R13
                | Reg::R14
                | Reg::R15
        ) {
            let _ = numbered;
            return match self.width {
                Width::W64 => base.to_string(),
                Width::W32 => format!("{base}d"),
                Width::W16 => format!("{base}w"),
                Width::W8 => format!("{base}b"),
            };
        }
        let stem = &base[1..]; // "ax", "bx", "sp", "si", ...
        match (self.width, self.lane) {
            (Width::W64, _) => base.to_string(),
            (Width::W32, _) => format!("e{stem}"),
            (Width::W16, _) => stem.to_string(),
            (Width::W8, Lane::High) => format!("{}h", &stem[..1]),
            (Width::W8, Lane::Low) => match self.reg {
                Reg::Rax | Reg::Rbx | Reg::Rcx | Reg::Rdx => format!("{}l", &stem[..1]),
                _ => format!("{stem}l"), // sil, dil, bpl, spl
            },
        }
    }
}

impl fmt::Display for RegisterRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Instruction mnemonics in the supported subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mnemonic {
    Mov,
    Push,
    Pop,
    Add,
    Sub,
    And,
    Or,
    Xor,
    Inc,
    Dec,
    Neg,
    Not,
    Imul,
    Idiv,
    Shl,
    Shr,
    Sal,
    Sar,
    Rol,
    Ror,
    Xchg,
    Xadd,
    Ret,
    Syscall,
}

impl Mnemonic {
    pub fn name(self) -> &'static str {
        match self {
            Mnemonic::Mov => "mov",
            Mnemonic::Push => "push",
            Mnemonic::Pop => "pop",
            Mnemonic::Add => "add",
            Mnemonic::Sub => "sub",
            Mnemonic::And => "and",
            Mnemonic::Or => "or",
            Mnemonic::Xor => "xor",
            Mnemonic::Inc => "inc",
            Mnemonic::Dec => "dec",
            Mnemonic::Neg => "neg",
            Mnemonic::Not => "not",
            Mnemonic::Imul => "imul",
            Mnemonic::Idiv => "idiv",
            Mnemonic::Shl => "shl",
            Mnemonic::Shr => "shr",
            Mnemonic::Sal => "sal",
            Mnemonic::Sar => "sar",
            Mnemonic::Rol => "rol",
            Mnemonic::Ror => "ror",
            Mnemonic::Xchg => "xchg",
            Mnemonic::Xadd => "xadd",
            Mnemonic::Ret => "ret",
            Mnemonic::Syscall => "syscall",
        }
    }

    fn from_name(s: &str) -> Option<Mnemonic> {
        Some(match s {
            "mov" => Mnemonic::Mov,
            "push" => Mnemonic::Push,
            "pop" => Mnemonic::Pop,
            "add" => Mnemonic::Add,
            "sub" => Mnemonic::Sub,
            "and" => Mnemonic::And,
            "or" => Mnemonic::Or,
            "xor" => Mnemonic::Xor,
            "inc" => Mnemonic::Inc,
            "dec" => Mnemonic::Dec,
            "neg" => Mnemonic::Neg,
            "not" => Mnemonic::Not,
            "imul" => Mnemonic::Imul,
            "idiv" => Mnemonic::Idiv,
            "shl" => Mnemonic::Shl,
            "shr" => Mnemonic::Shr,
            "sal" => Mnemonic::Sal,
            "sar" => Mnemonic::Sar,
            "rol" => Mnemonic::Rol,
            "ror" => Mnemonic::Ror,
            "xchg" => Mnemonic::Xchg,
            "xadd" => Mnemonic::Xadd,
            "ret" => Mnemonic::Ret,
            "syscall" => Mnemonic::Syscall,
            _ => return None,
        })
    }

    /// Number of operands this mnemonic accepts. `imul` is special-cased (1–3).
    fn arity(self) -> std::ops::RangeInclusive<usize> {
        match self {
            Mnemonic::Ret | Mnemonic::Syscall => 0..=0,
            Mnemonic::Push
            | Mnemonic::Pop
            | Mnemonic::Inc
            | Mnemonic::Dec
            | Mnemonic::Neg
            | Mnemonic::Not
            | Mnemonic::Idiv => 1..=1,
            Mnemonic::Imul => 1..=3,
            _ => 2..=2,
        }
    }
}

/// One operand: a register reference, a signed 64-bit immediate, or a memory
/// operand we recognize but do not model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(RegisterRef),
    Imm(i64),
    Memory,
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Imm(v) => {
                if *v < 0 {
                    write!(f, "{v}")
                } else {
                    write!(f, "0x{v:x}")
                }
            }
            Operand::Memory => f.write_str("[mem]"),
        }
    }
}

/// A single decoded instruction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub mnemonic: Mnemonic,
    pub operands: Vec<Operand>,
}

impl Instruction {
    pub fn new(mnemonic: Mnemonic, operands: Vec<Operand>) -> Self {
        Instruction { mnemonic, operands }
    }

    pub fn touches_memory(&self) -> bool {
        self.operands.iter().any(|o| matches!(o, Operand::Memory))
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic.name())?;
        for (i, op) in self.operands.iter().enumerate() {
            if i == 0 {
                write!(f, " {op}")?;
            } else {
                write!(f, ", {op}")?;
            }
        }
        Ok(())
    }
}

/// An instruction sequence at a fixed offset, ending in `ret` or a
/// syscall-trigger form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gadget {
    pub offset: u64,
    pub instructions: Vec<Instruction>,
    pub source_line: String,
}

impl Gadget {
    /// Trigger gadgets are exactly `syscall` or `syscall ; ret`.
    pub fn is_syscall_trigger(&self) -> bool {
        match self.instructions.as_slice() {
            [i] => i.mnemonic == Mnemonic::Syscall,
            [i, r] => i.mnemonic == Mnemonic::Syscall && r.mnemonic == Mnemonic::Ret,
            _ => false,
        }
    }

    /// Canonical one-line rendering, re-parseable by [`parse_listing`].
    pub fn render(&self) -> String {
        let body: Vec<String> = self.instructions.iter().map(|i| i.to_string()).collect();
        format!("0x{:016x} : {}", self.offset, body.join(" ; "))
    }
}

impl fmt::Display for Gadget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Why a listing line was set aside rather than turned into a [`Gadget`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkipReason {
    /// Line has no `offset : instructions` structure.
    MalformedLine(String),
    /// An operand addresses memory; only register/immediate forms are modeled.
    MemoryOperand,
    /// An instruction failed to decode (unknown mnemonic, bad operand, ...).
    BadInstruction(ParseError),
    /// Last instruction is not `ret` and the line is not a trigger form.
    MissingRet,
    /// `ret` or `syscall` appears before the end of the sequence.
    EarlyExit,
    /// `rsp` used outside the `add rsp, imm` / `sub rsp, imm` shapes.
    StackPointerOperand,
}

impl SkipReason {
    /// Stable short name, used for statistics buckets.
    pub fn label(&self) -> &'static str {
        match self {
            SkipReason::MalformedLine(_) => "MalformedLine",
            SkipReason::MemoryOperand => "MemoryOperand",
            SkipReason::BadInstruction(_) => "BadInstruction",
            SkipReason::MissingRet => "MissingRet",
            SkipReason::EarlyExit => "EarlyExit",
            SkipReason::StackPointerOperand => "StackPointerOperand",
        }
    }
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::MalformedLine(why) => write!(f, "malformed line: {why}"),
            SkipReason::MemoryOperand => f.write_str("memory operand"),
            SkipReason::BadInstruction(e) => write!(f, "{e}"),
            SkipReason::MissingRet => f.write_str("does not end in ret"),
            SkipReason::EarlyExit => f.write_str("ret/syscall before end of sequence"),
            SkipReason::StackPointerOperand => {
                f.write_str("rsp operand outside add/sub rsp, imm")
            }
        }
    }
}

/// A listing line that was recorded but not admitted to the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnsupportedLine {
    pub source_line: String,
    pub reason: SkipReason,
}

/// A parsed listing: admitted gadgets plus the lines that were set aside.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub gadgets: Vec<Gadget>,
    pub unsupported: Vec<UnsupportedLine>,
}

impl Corpus {
    pub fn gadget_at(&self, offset: u64) -> Option<&Gadget> {
        self.gadgets.iter().find(|g| g.offset == offset)
    }
}

/// Instruction-level decode errors.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("`{mnemonic}` takes {expected} operand(s), got {got}")]
    BadOperandArity { mnemonic: &'static str, expected: String, got: usize },
    #[error("bad register name `{0}`")]
    BadRegisterName(String),
    #[error("bad immediate `{0}`")]
    BadImmediate(String),
    #[error("operand widths do not match in `{0}`")]
    WidthMismatch(String),
}

/// Corpus-level fatal errors.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("duplicate gadget offset 0x{0:x}")]
    DuplicateOffset(u64),
}

/// Resolve a register alias to its canonical register, width and lane.
///
/// Accepts the full x86-64 alias sets: `rax`/`eax`/`ax`/`al`/`ah`,
/// `rsi`/`esi`/`si`/`sil`, `r8`/`r8d`/`r8w`/`r8b`, and so on. `rip` is not a
/// general-purpose register and is rejected.
pub fn canonical_register(name: &str) -> Result<RegisterRef, ParseError> {
    // (canonical, w64, w32, w16, w8-low, w8-high?)
    const TABLE: [(Reg, &str, &str, &str, &str, Option<&str>); 16] = [
        (Reg::Rax, "rax", "eax", "ax", "al", Some("ah")),
        (Reg::Rbx, "rbx", "ebx", "bx", "bl", Some("bh")),
        (Reg::Rcx, "rcx", "ecx", "cx", "cl", Some("ch")),
        (Reg::Rdx, "rdx", "edx", "dx", "dl", Some("dh")),
        (Reg::Rsi, "rsi", "esi", "si", "sil", None),
        (Reg::Rdi, "rdi", "edi", "di", "dil", None),
        (Reg::Rbp, "rbp", "ebp", "bp", "bpl", None),
        (Reg::Rsp, "rsp", "esp", "sp", "spl", None),
        (Reg::R8, "r8", "r8d", "r8w", "r8b", None),
        (Reg::R9, "r9", "r9d", "r9w", "r9b", None),
        (Reg::R10, "r10", "r10d", "r10w", "r10b", None),
        (Reg::R11, "r11", "r11d", "r11w", "r11b", None),
        (Reg::R12, "r12", "r12d", "r12w", "r12b", None),
        (Reg::R13, "r13", "r13d", "r13w", "r13b", None),
        (Reg::R14, "r14", "r14d", "r14w", "r14b", None),
        (Reg::R15, "r15", "r15d", "r15w", "r15b", None),
    ];
    for (reg, w64, w32, w16, w8l, w8h) in TABLE {
        let hit = |width, lane| Ok(RegisterRef { reg, width, lane });
        if name == w64 {
            return hit(Width::W64, Lane::Low);
        }
        if name == w32 {
            return hit(Width::W32, Lane::Low);
        }
        if name == w16 {
            return hit(Width::W16, Lane::Low);
        }
        if name == w8l {
            return hit(Width::W8, Lane::Low);
        }
        if w8h == Some(name) {
            return hit(Width::W8, Lane::High);
        }
    }
    Err(ParseError::BadRegisterName(name.to_string()))
}

fn parse_immediate(tok: &str) -> Result<i64, ParseError> {
    let bad = || ParseError::BadImmediate(tok.to_string());
    let (neg, body) = match tok.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, tok),
    };
    if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        // Hex literals name a 64-bit pattern; 0xffffffffffffffff is -1.
        let raw = u64::from_str_radix(hex, 16).map_err(|_| bad())?;
        let v = raw as i64;
        return Ok(if neg { v.wrapping_neg() } else { v });
    }
    let mag: i128 = body.parse().map_err(|_| bad())?;
    let signed = if neg { -mag } else { mag };
    i64::try_from(signed).map_err(|_| bad())
}

fn parse_operand(tok: &str) -> Result<Operand, ParseError> {
    let tok = tok.trim();
    if tok.contains('[') || tok.contains(']') || tok.contains("ptr") {
        return Ok(Operand::Memory);
    }
    let first = tok.as_bytes().first().copied().unwrap_or(b' ');
    if first == b'-' || first.is_ascii_digit() {
        return Ok(Operand::Imm(parse_immediate(tok)?));
    }
    Ok(Operand::Reg(canonical_register(tok)?))
}

/// Decode one instruction in lowercase Intel syntax (`mov eax, 0x1`).
pub fn parse_instruction(text: &str) -> Result<Instruction, ParseError> {
    let text = text.trim();
    let (head, rest) = match text.find(char::is_whitespace) {
        Some(i) => (&text[..i], text[i..].trim()),
        None => (text, ""),
    };
    let mnemonic = Mnemonic::from_name(head)
        .ok_or_else(|| ParseError::UnknownMnemonic(head.to_string()))?;
    let operands: Vec<Operand> = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(',').map(parse_operand).collect::<Result<_, _>>()?
    };
    let arity = mnemonic.arity();
    if !arity.contains(&operands.len()) {
        let expected = if arity.start() == arity.end() {
            arity.start().to_string()
        } else {
            format!("{}..{}", arity.start(), arity.end())
        };
        return Err(ParseError::BadOperandArity {
            mnemonic: mnemonic.name(),
            expected,
            got: operands.len(),
        });
    }
    validate_operand_shapes(&mnemonic, &operands, text)?;
    Ok(Instruction { mnemonic, operands })
}

/// Per-mnemonic operand shape rules beyond bare arity.
fn validate_operand_shapes(
    m: &Mnemonic,
    ops: &[Operand],
    text: &str,
) -> Result<(), ParseError> {
    use Mnemonic::*;
    let reg_of = |op: &Operand| match op {
        Operand::Reg(r) => Some(*r),
        _ => None,
    };
    let want_reg = |op: &Operand| match op {
        Operand::Reg(r) => Ok(*r),
        Operand::Memory => Ok(RegisterRef::full(Reg::Rax)), // screened later
        Operand::Imm(v) => Err(ParseError::BadRegisterName(v.to_string())),
    };
    match m {
        Pop | Inc | Dec | Neg | Not | Idiv => {
            want_reg(&ops[0])?;
        }
        Push => {
            // push takes a register or an immediate; memory screened later.
        }
        Mov | Add | Sub | And | Or | Xor | Xadd => {
            want_reg(&ops[0])?;
            if let (Some(d), Some(s)) = (reg_of(&ops[0]), reg_of(&ops[1])) {
                if d.width != s.width {
                    return Err(ParseError::WidthMismatch(text.to_string()));
                }
            }
        }
        Xchg => {
            let d = want_reg(&ops[0])?;
            let s = want_reg(&ops[1])?;
            if matches!((&ops[0], &ops[1]), (Operand::Reg(_), Operand::Reg(_)))
                && d.width != s.width
            {
                return Err(ParseError::WidthMismatch(text.to_string()));
            }
            if matches!(ops[1], Operand::Imm(_)) {
                return Err(ParseError::BadRegisterName("immediate".into()));
            }
        }
        Imul => match ops.len() {
            1 => {
                want_reg(&ops[0])?;
            }
            2 | 3 => {
                let d = want_reg(&ops[0])?;
                let s = want_reg(&ops[1])?;
                if matches!((&ops[0], &ops[1]), (Operand::Reg(_), Operand::Reg(_))) {
                    if d.width != s.width {
                        return Err(ParseError::WidthMismatch(text.to_string()));
                    }
                    if d.width == Width::W8 {
                        // no two/three-operand byte imul in the ISA
                        return Err(ParseError::WidthMismatch(text.to_string()));
                    }
                }
                if ops.len() == 3 && !matches!(ops[2], Operand::Imm(_)) {
                    return Err(ParseError::BadImmediate(format!("{}", ops[2])));
                }
                if ops.len() == 2 && matches!(ops[1], Operand::Imm(_)) {
                    // `imul r, imm` is the three-operand form with dest = src
                    // in disguise; accept it as assemblers do.
                }
            }
            _ => unreachable!("arity checked"),
        },
        Shl | Shr | Sal | Sar | Rol | Ror => {
            want_reg(&ops[0])?;
            match &ops[1] {
                Operand::Imm(_) => {}
                Operand::Reg(r)
                    if r.reg == Reg::Rcx && r.width == Width::W8 && r.lane == Lane::Low => {}
                Operand::Reg(r) => {
                    return Err(ParseError::BadRegisterName(format!(
                        "{r} (shift count must be cl or an immediate)"
                    )));
                }
                Operand::Memory => {}
            }
        }
        Mnemonic::Ret | Mnemonic::Syscall => {}
    }
    Ok(())
}

/// Does this instruction use `rsp` in a form other than `add rsp, imm` /
/// `sub rsp, imm`?
fn misuses_rsp(insn: &Instruction) -> bool {
    let touches_rsp = insn
        .operands
        .iter()
        .any(|o| matches!(o, Operand::Reg(r) if r.reg == Reg::Rsp));
    if !touches_rsp {
        return false;
    }
    let adjust_shape = matches!(insn.mnemonic, Mnemonic::Add | Mnemonic::Sub)
        && matches!(insn.operands[0], Operand::Reg(r) if r.reg == Reg::Rsp && r.width == Width::W64)
        && matches!(insn.operands[1], Operand::Imm(_));
    !adjust_shape
}

/// Screen a decoded instruction sequence for gadget admission.
fn screen_sequence(insns: &[Instruction]) -> Result<(), SkipReason> {
    let last = insns.last().expect("sequence is non-empty");
    let is_trigger = match insns {
        [i] => i.mnemonic == Mnemonic::Syscall,
        [i, r] => i.mnemonic == Mnemonic::Syscall && r.mnemonic == Mnemonic::Ret,
        _ => false,
    };
    if !is_trigger && last.mnemonic != Mnemonic::Ret {
        return Err(SkipReason::MissingRet);
    }
    for (i, insn) in insns.iter().enumerate() {
        let interior = i + 1 < insns.len();
        if interior && matches!(insn.mnemonic, Mnemonic::Ret | Mnemonic::Syscall) && !is_trigger
        {
            return Err(SkipReason::EarlyExit);
        }
        if insn.touches_memory() {
            return Err(SkipReason::MemoryOperand);
        }
        if misuses_rsp(insn) {
            return Err(SkipReason::StackPointerOperand);
        }
    }
    Ok(())
}

/// Parse a whole listing. Undecodable or out-of-subset lines are recorded in
/// `Corpus::unsupported`; only a duplicate offset aborts the parse.
pub fn parse_listing(text: &str) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    let mut seen: HashMap<u64, ()> = HashMap::new();
    for raw_line in text.lines() {
        let line = raw_line.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let skip = |reason| UnsupportedLine { source_line: line.to_string(), reason };
        let Some((addr_part, body)) = line.split_once(':') else {
            corpus
                .unsupported
                .push(skip(SkipReason::MalformedLine("no `offset :` prefix".into())));
            continue;
        };
        let addr_part = addr_part.trim();
        let Some(hex) = addr_part.strip_prefix("0x").or_else(|| addr_part.strip_prefix("0X"))
        else {
            corpus
                .unsupported
                .push(skip(SkipReason::MalformedLine("offset must be 0x-hex".into())));
            continue;
        };
        let Ok(offset) = u64::from_str_radix(hex, 16) else {
            corpus
                .unsupported
                .push(skip(SkipReason::MalformedLine(format!("bad offset `{addr_part}`"))));
            continue;
        };
        let body = body.trim();
        if body.is_empty() {
            corpus
                .unsupported
                .push(skip(SkipReason::MalformedLine("empty instruction list".into())));
            continue;
        }
        let mut insns = Vec::new();
        let mut failed = None;
        for part in body.split(';') {
            match parse_instruction(part) {
                Ok(i) => insns.push(i),
                Err(e) => {
                    failed = Some(SkipReason::BadInstruction(e));
                    break;
                }
            }
        }
        if let Some(reason) = failed {
            corpus.unsupported.push(skip(reason));
            continue;
        }
        if let Err(reason) = screen_sequence(&insns) {
            corpus.unsupported.push(skip(reason));
            continue;
        }
        if seen.insert(offset, ()).is_some() {
            return Err(CorpusError::DuplicateOffset(offset));
        }
        corpus.gadgets.push(Gadget {
            offset,
            instructions: insns,
            source_line: line.to_string(),
        });
    }
    Ok(corpus)
}
