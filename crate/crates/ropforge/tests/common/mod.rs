//! Shared randomized-corpus machinery for the integration suites.
//!
//! Everything here is seeded: the same seed always yields the same listings,
//! objectives, and register states.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use ropforge::corpus::Reg;
use ropforge::semantics::{GadgetSummary, StackSlot};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// General-purpose 64-bit registers, `rsp` excluded.
pub const GP64: [&str; 15] = [
    "rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rbp", "r8", "r9", "r10", "r11", "r12", "r13",
    "r14", "r15",
];
pub const GP32: [&str; 15] = [
    "eax", "ebx", "ecx", "edx", "esi", "edi", "ebp", "r8d", "r9d", "r10d", "r11d", "r12d",
    "r13d", "r14d", "r15d",
];
pub const GP16: [&str; 15] = [
    "ax", "bx", "cx", "dx", "si", "di", "bp", "r8w", "r9w", "r10w", "r11w", "r12w", "r13w",
    "r14w", "r15w",
];
pub const GP8: [&str; 15] = [
    "al", "bl", "cl", "dl", "sil", "dil", "bpl", "r8b", "r9b", "r10b", "r11b", "r12b", "r13b",
    "r14b", "r15b",
];
pub const GP8H: [&str; 4] = ["ah", "bh", "ch", "dh"];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &'a [&'a str]) -> &'a str {
    xs[rng.gen_range(0..xs.len())]
}

/// A same-width register pair (distinct strings not required).
fn pair<'a>(rng: &mut ChaCha8Rng, xs: &'a [&'a str]) -> (&'a str, &'a str) {
    (pick(rng, xs), pick(rng, xs))
}

/// One random register-only instruction: no memory operands, no `syscall`,
/// and `rsp` only in the `add rsp, imm` shape. Everything produced here is
/// parseable; gadgets built from it can still be rejected by the lifter
/// (unbalanced pushes).
pub fn random_instruction(rng: &mut ChaCha8Rng) -> String {
    match rng.gen_range(0u32..100) {
        0..=22 => format!("pop {}", pick(rng, &GP64)),
        23..=32 => {
            if rng.gen_bool(0.8) {
                format!("push {}", pick(rng, &GP64))
            } else {
                format!("push 0x{:x}", rng.gen::<u32>())
            }
        }
        33..=46 => match rng.gen_range(0u32..6) {
            0 => {
                let (a, b) = pair(rng, &GP64);
                format!("mov {a}, {b}")
            }
            1 => {
                let (a, b) = pair(rng, &GP32);
                format!("mov {a}, {b}")
            }
            2 => format!("mov {}, 0x{:x}", pick(rng, &GP64), rng.gen::<u64>()),
            3 => format!("mov {}, 0x{:x}", pick(rng, &GP32), rng.gen::<u32>()),
            4 => {
                let (a, b) = pair(rng, &GP16);
                format!("mov {a}, {b}")
            }
            _ => {
                if rng.gen_bool(0.5) {
                    let (a, b) = pair(rng, &GP8);
                    format!("mov {a}, {b}")
                } else {
                    format!("mov {}, 0x{:x}", pick(rng, &GP8H), rng.gen::<u8>())
                }
            }
        },
        47..=66 => {
            let op = ["add", "sub", "and", "or", "xor"][rng.gen_range(0..5)];
            match rng.gen_range(0u32..4) {
                0 => {
                    let (a, b) = pair(rng, &GP64);
                    format!("{op} {a}, {b}")
                }
                1 => {
                    let (a, b) = pair(rng, &GP32);
                    format!("{op} {a}, {b}")
                }
                2 => format!("{op} {}, 0x{:x}", pick(rng, &GP64), rng.gen::<u16>()),
                _ => {
                    let (a, b) = pair(rng, &GP8);
                    format!("{op} {a}, {b}")
                }
            }
        }
        67..=74 => {
            let op = ["inc", "dec", "neg", "not"][rng.gen_range(0..4)];
            let table = [&GP64[..], &GP32[..], &GP16[..]][rng.gen_range(0..3)];
            format!("{op} {}", pick(rng, table))
        }
        75..=81 => {
            let op = ["shl", "shr", "sar", "rol", "ror"][rng.gen_range(0..5)];
            let table = [&GP64[..], &GP32[..], &GP16[..]][rng.gen_range(0..3)];
            let dest = pick(rng, table);
            if rng.gen_bool(0.7) {
                format!("{op} {dest}, {}", rng.gen_range(0..66))
            } else {
                format!("{op} {dest}, cl")
            }
        }
        82..=86 => match rng.gen_range(0u32..4) {
            0 => {
                let (a, b) = pair(rng, &GP64);
                format!("imul {a}, {b}")
            }
            1 => {
                let (a, b) = pair(rng, &GP32);
                format!("imul {a}, {b}, 0x{:x}", rng.gen::<u16>())
            }
            2 => format!("imul {}, {}, -{}", pick(rng, &GP64), pick(rng, &GP64), rng.gen::<u8>()),
            _ => format!("imul {}", pick(rng, &GP64)),
        },
        87..=88 => format!("idiv {}", pick(rng, &GP64)),
        89..=93 => {
            let table = if rng.gen_bool(0.7) { &GP64 } else { &GP32 };
            let (a, b) = pair(rng, table);
            if rng.gen_bool(0.5) {
                format!("xchg {a}, {b}")
            } else {
                format!("xadd {a}, {b}")
            }
        }
        _ => format!("add rsp, {}", 8 * rng.gen_range(1u32..=3)),
    }
}

/// A random gadget line `0x<offset> : insn ; ... ; ret`.
pub fn random_gadget_line(rng: &mut ChaCha8Rng, offset: u64) -> String {
    let len = rng.gen_range(1..=5);
    let body: Vec<String> = (0..len).map(|_| random_instruction(rng)).collect();
    format!("0x{offset:x} : {} ; ret", body.join(" ; "))
}

/// A random entry state mixing magnitudes, so small-value paths (divisions
/// that succeed, shift counts, narrow lanes) get exercised too.
pub fn random_state(rng: &mut ChaCha8Rng) -> [u64; 16] {
    std::array::from_fn(|_| match rng.gen_range(0u32..10) {
        0 => 0,
        1..=2 => rng.gen_range(0..1024),
        3 => rng.gen::<u32>() as u64,
        _ => rng.gen(),
    })
}

/// Number of payload words a gadget consumes after its address word.
pub fn consumed_words(summary: &GadgetSummary) -> usize {
    summary.schedule.len()
}

/// Map the consumed payload words to the gadget's free-slot values.
pub fn frees_from_words(summary: &GadgetSummary, words: &[u64]) -> Vec<u64> {
    let mut frees = vec![0u64; summary.free_slots];
    for (j, slot) in summary.schedule.iter().enumerate() {
        if let StackSlot::Free { index, .. } = slot {
            frees[*index] = words[j];
        }
    }
    frees
}

/// A push/pop-heavy gadget body plus an independently computed count of the
/// gadget's own words still on the stack when `ret` runs. The counter mirrors
/// the x86 stack discipline directly: a push leaves one word, a pop takes the
/// youngest of the gadget's own words first, and `add rsp, N` discards up to
/// `N/8` of them.
pub fn random_stack_body(rng: &mut ChaCha8Rng) -> (Vec<String>, u64) {
    let len = rng.gen_range(1..=5);
    let mut body = Vec::with_capacity(len);
    let mut height: u64 = 0;
    for _ in 0..len {
        match rng.gen_range(0u32..100) {
            0..=34 => {
                body.push(format!("push {}", pick(rng, &GP64)));
                height += 1;
            }
            35..=69 => {
                body.push(format!("pop {}", pick(rng, &GP64)));
                height = height.saturating_sub(1);
            }
            70..=79 => {
                let words = rng.gen_range(1u64..=3);
                body.push(format!("add rsp, {}", 8 * words));
                height = height.saturating_sub(words);
            }
            80..=89 => {
                let (a, b) = pair(rng, &GP64);
                body.push(format!("mov {a}, {b}"));
            }
            _ => body.push(format!("inc {}", pick(rng, &GP64))),
        }
    }
    (body, height)
}

/// A gadget line containing at least one memory operand.
pub fn random_memory_line(rng: &mut ChaCha8Rng, offset: u64) -> String {
    let (a, b) = pair(rng, &GP64);
    let e = pick(rng, &GP32);
    let d = 8 * rng.gen_range(0u64..16);
    let mem = match rng.gen_range(0u32..7) {
        0 => format!("mov qword ptr [{a}], {b}"),
        1 => format!("mov {a}, qword ptr [{b}]"),
        2 => format!("add {a}, [{b} + 0x{d:x}]"),
        3 => format!("mov dword ptr [{a} + 0x{d:x}], {e}"),
        4 => format!("push qword ptr [{a}]"),
        5 => format!("pop qword ptr [{a}]"),
        _ => format!("xor [{a}], {b}"),
    };
    // Sometimes bury the memory access between ordinary instructions.
    match rng.gen_range(0u32..3) {
        0 => format!("0x{offset:x} : {mem} ; ret"),
        1 => format!("0x{offset:x} : pop {a} ; {mem} ; ret"),
        _ => format!("0x{offset:x} : {mem} ; mov {a}, {b} ; ret"),
    }
}

/// A corpus with a guaranteed route to a random objective.
pub struct Planted {
    pub listing: String,
    pub objective: BTreeMap<Reg, u64>,
    pub base: u64,
}

fn name32(reg: Reg) -> &'static str {
    match reg {
        Reg::Rax => "eax",
        Reg::Rdi => "edi",
        Reg::Rsi => "esi",
        Reg::Rdx => "edx",
        _ => unreachable!("only objective registers need 32-bit names here"),
    }
}

/// An objective value: small, 32-bit, or full-width.
fn objective_value(rng: &mut ChaCha8Rng) -> u64 {
    match rng.gen_range(0u32..10) {
        0..=4 => rng.gen_range(0..4096),
        5..=7 => rng.gen::<u32>() as u64,
        _ => rng.gen(),
    }
}

/// Build a 10–30 gadget listing where every register of a random objective
/// over {rax, rdi, rsi, rdx} has a planted route that fits in six steps:
/// a direct pop, a 32-bit immediate move, a pop into a scratch register
/// followed by a copy, or a pop trailed by a junk pop.
pub fn planted_corpus(rng: &mut ChaCha8Rng) -> Planted {
    let mut used = BTreeSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng| loop {
        let offset = rng.gen_range(0x1000u64..0x100000);
        if used.insert(offset) {
            break offset;
        }
    };

    let mut pool = [Reg::Rax, Reg::Rdi, Reg::Rsi, Reg::Rdx];
    pool.shuffle(rng);
    let targets = &pool[..rng.gen_range(1..=4)];

    let mut scratch = vec!["rbx", "rbp", "r12", "r13", "r14", "r15"];
    scratch.shuffle(rng);

    let mut lines = Vec::new();
    let mut objective = BTreeMap::new();
    let mut budget = 6usize;
    for (i, &target) in targets.iter().enumerate() {
        let remaining = targets.len() - i - 1;
        let two_step_ok = budget >= 2 + remaining;
        let route = if two_step_ok { rng.gen_range(0u32..4) } else { rng.gen_range(0u32..3) };
        let t = target.name();
        let value;
        match route {
            0 => {
                value = objective_value(rng);
                lines.push(format!("0x{:x} : pop {t} ; ret", fresh(rng)));
                budget -= 1;
            }
            1 => {
                value = rng.gen::<u32>() as u64;
                lines.push(format!(
                    "0x{:x} : mov {}, 0x{value:x} ; ret",
                    fresh(rng),
                    name32(target)
                ));
                budget -= 1;
            }
            2 => {
                value = objective_value(rng);
                let junk = scratch.pop().expect("enough scratch registers");
                lines.push(format!("0x{:x} : pop {t} ; pop {junk} ; ret", fresh(rng)));
                budget -= 1;
            }
            _ => {
                value = objective_value(rng);
                let aux = scratch.pop().expect("enough scratch registers");
                lines.push(format!("0x{:x} : pop {aux} ; ret", fresh(rng)));
                lines.push(format!("0x{:x} : mov {t}, {aux} ; ret", fresh(rng)));
                budget -= 2;
            }
        }
        objective.insert(target, value);
    }

    let trigger = if rng.gen_bool(0.8) { "syscall ; ret" } else { "syscall" };
    lines.push(format!("0x{:x} : {trigger}", fresh(rng)));

    let total = rng.gen_range(10..=30).max(lines.len());
    while lines.len() < total {
        let offset = fresh(rng);
        let (a, b) = pair(rng, &GP64);
        let line = match rng.gen_range(0u32..8) {
            0 => format!("0x{offset:x} : inc {a} ; ret"),
            1 => format!("0x{offset:x} : mov {a}, {b} ; ret"),
            2 => format!("0x{offset:x} : xor {a}, {a} ; ret"),
            3 => format!("0x{offset:x} : add {a}, 0x{:x} ; ret", rng.gen::<u16>()),
            4 => format!("0x{offset:x} : pop {a} ; ret"),
            5 => format!("0x{offset:x} : push {a} ; ret"),
            6 => random_memory_line(rng, offset),
            _ => format!("0x{offset:x} : mov {}, 0x{:x} ; ret", pick(rng, &GP32), rng.gen::<u32>()),
        };
        lines.push(line);
    }

    lines.shuffle(rng);
    Planted {
        listing: lines.join("\n") + "\n",
        objective,
        base: rng.gen_range(0u64..1 << 40) & !7,
    }
}

/// The five-gadget worked-example listing plus one trigger.
pub const CORE_LISTING: &str = "\
0x00000000000054cf : mov edx, eax ; add rsp, 8 ; ret
0x0000000000005011 : mov eax, 0x1 ; ret
0x00000000000026d0 : mov eax, 0xa ; ret
0x00000000000022fe : pop rdi ; ret
0x00000000000022fc : pop rsi ; pop r15 ; ret
0x0000000000009000 : syscall ; ret
";

/// Fresh scratch directory for one test, cleaned up by the caller if desired.
pub fn scratch_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("ropforge-it-{}-{tag}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("create scratch dir");
    dir
}
