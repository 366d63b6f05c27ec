//! Payload emission: laying a chain out as stack words and serializing it.
//!
//! A chain becomes a flat list of 64-bit words: for each step the gadget's
//! absolute address, then the words that gadget consumes while it runs —
//! popped values in consumption order and throwaway words for explicit
//! stack-pointer skips — and finally the trigger's address. Word zero sits at
//! the lowest address and is consumed first; printed reports mirror the usual
//! stack-diagram orientation, highest address on top.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Reg;
use crate::semantics::{render_summary, StackSlot};
use crate::synth::{Chain, DUMMY_VALUE};

/// What a payload word is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordKind {
    /// Absolute address of a setup gadget (base + offset).
    GadgetAddress {
        /// File-relative offset of the gadget.
        offset: u64,
    },
    /// A word some gadget pops into a register.
    PoppedValue {
        /// Register the word lands in.
        register: Reg,
    },
    /// A word skipped over by `add rsp, imm`; its value never matters.
    RspSkipDummy,
    /// Absolute address of the syscall trigger.
    TriggerAddress {
        /// File-relative offset of the trigger.
        offset: u64,
    },
}

/// One payload word with its provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    /// The 64-bit value that goes on the stack.
    pub value: u64,
    /// Why the word is there.
    pub kind: WordKind,
}

/// The complete stack image of one or more chains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackLayout {
    /// Words in consumption order: `words[0]` is popped first.
    pub words: Vec<Word>,
    /// Load base added to every gadget offset.
    pub base: u64,
}

impl StackLayout {
    /// Raw word values in order.
    pub fn values(&self) -> Vec<u64> {
        self.words.iter().map(|w| w.value).collect()
    }
}

/// Lay out a single chain: per step the address word then the consumed words,
/// with the trigger's address last.
pub fn layout_stack(chain: &Chain, base: u64) -> StackLayout {
    let mut layout = StackLayout {
        words: Vec::new(),
        base,
    };
    append_chain(&mut layout, chain);
    layout
}

/// Lay out a whole program: each call's chain in order. The resumable
/// triggers of the earlier calls return straight into the next address word.
pub fn layout_program(chains: &[Chain], base: u64) -> StackLayout {
    let mut layout = StackLayout {
        words: Vec::new(),
        base,
    };
    for chain in chains {
        append_chain(&mut layout, chain);
    }
    layout
}

fn append_chain(layout: &mut StackLayout, chain: &Chain) {
    let base = layout.base;
    for step in &chain.steps {
        let offset = step.summary.gadget.offset;
        layout.words.push(Word {
            value: base.wrapping_add(offset),
            kind: WordKind::GadgetAddress { offset },
        });
        for slot in &step.summary.schedule {
            match slot {
                StackSlot::Free { index, popped_into } => layout.words.push(Word {
                    value: step.free_values[*index],
                    kind: WordKind::PoppedValue {
                        register: *popped_into,
                    },
                }),
                StackSlot::Skip => layout.words.push(Word {
                    value: DUMMY_VALUE,
                    kind: WordKind::RspSkipDummy,
                }),
            }
        }
    }
    let offset = chain.trigger.gadget.offset;
    layout.words.push(Word {
        value: base.wrapping_add(offset),
        kind: WordKind::TriggerAddress { offset },
    });
}

/// Serialize the layout: each word as 8 little-endian bytes, word 0 first.
pub fn emit_payload(layout: &StackLayout) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(layout.words.len() * 8);
    for word in &layout.words {
        bytes.extend_from_slice(&word.value.to_le_bytes());
    }
    bytes
}

/// Report flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Human-readable stack diagram.
    Text,
    /// JSON document that round-trips the word list.
    Structured,
}

/// One word of the structured report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportWord {
    /// Position in the payload; word 0 is consumed first.
    pub index: usize,
    /// The 64-bit word value.
    pub value: u64,
    /// `gadget_address`, `popped_value`, `rsp_skip_dummy`, or `trigger_address`.
    pub kind: String,
    /// Human-readable description of the word.
    pub annotation: String,
}

/// One chain step of the structured report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportStep {
    /// Which call of the program this step belongs to (0-based).
    pub call: usize,
    /// File-relative gadget offset.
    pub offset: u64,
    /// The gadget's instructions.
    pub gadget: String,
    /// The gadget's lifted equations.
    pub equations: String,
    /// Values bound to the gadget's popped slots, slot order.
    pub free_values: Vec<u64>,
}

/// The structured report document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    /// Load base the layout was absolutized against.
    pub base: u64,
    /// Number of payload words.
    pub word_count: usize,
    /// Number of payload bytes (8 per word).
    pub byte_count: usize,
    /// Register objective of each call, register name -> value.
    pub objectives: Vec<BTreeMap<String, u64>>,
    /// Every payload word, index order.
    pub words: Vec<ReportWord>,
    /// Every chain step, execution order.
    pub steps: Vec<ReportStep>,
}

/// Number gadgets by their position in the corpus listing (1-based), which is
/// how people refer to rows of a gadget table.
fn listing_ordinals(corpus_order: &[crate::semantics::GadgetSummary]) -> BTreeMap<u64, usize> {
    corpus_order
        .iter()
        .enumerate()
        .map(|(i, s)| (s.gadget.offset, i + 1))
        .collect()
}

fn instruction_text(summary: &crate::semantics::GadgetSummary) -> String {
    let parts: Vec<String> = summary
        .gadget
        .instructions
        .iter()
        .map(|i| i.to_string())
        .collect();
    parts.join(" ; ")
}

fn annotate(word: &Word, chains: &[Chain], ordinals: &BTreeMap<u64, usize>) -> String {
    match word.kind {
        WordKind::GadgetAddress { offset } => {
            let step = chains
                .iter()
                .flat_map(|c| c.steps.iter())
                .find(|s| s.summary.gadget.offset == offset);
            let text = step.map(|s| instruction_text(&s.summary)).unwrap_or_default();
            match ordinals.get(&offset) {
                Some(n) => format!("Gadget # {n} : {text}"),
                None => format!("Gadget @ 0x{offset:x} : {text}"),
            }
        }
        WordKind::PoppedValue { register } => {
            if word.value == DUMMY_VALUE {
                format!("dummy value ({})", register.name())
            } else {
                format!("popped value (= {})", register.name())
            }
        }
        WordKind::RspSkipDummy => "dummy value (rsp+8)".to_string(),
        WordKind::TriggerAddress { offset } => {
            let text = chains
                .iter()
                .find(|c| c.trigger.gadget.offset == offset)
                .map(|c| instruction_text(&c.trigger))
                .unwrap_or_else(|| "syscall".to_string());
            format!("syscall trigger : {text}")
        }
    }
}

fn kind_name(kind: WordKind) -> &'static str {
    match kind {
        WordKind::GadgetAddress { .. } => "gadget_address",
        WordKind::PoppedValue { .. } => "popped_value",
        WordKind::RspSkipDummy => "rsp_skip_dummy",
        WordKind::TriggerAddress { .. } => "trigger_address",
    }
}

/// Render the layout as a document.
///
/// `corpus_order` supplies the listing order used for `Gadget # n` labels;
/// pass the full lifted summary list. The text form prints the stack with the
/// highest address on top, so the bottom line is the first gadget to execute.
pub fn render_report(
    chains: &[Chain],
    layout: &StackLayout,
    corpus_order: &[crate::semantics::GadgetSummary],
    format: ReportFormat,
) -> String {
    let ordinals = listing_ordinals(corpus_order);
    match format {
        ReportFormat::Text => {
            let mut out = String::new();
            out.push_str(&format!(
                "stack layout: {} words, {} bytes, base 0x{:016x}\n",
                layout.words.len(),
                layout.words.len() * 8,
                layout.base
            ));
            out.push_str("(highest address on top; the bottom word executes first)\n\n");
            for (index, word) in layout.words.iter().enumerate().rev() {
                out.push_str(&format!(
                    "  [{index:3}] 0x{:016x}  {}\n",
                    word.value,
                    annotate(word, chains, &ordinals)
                ));
            }
            out
        }
        ReportFormat::Structured => {
            let report = Report {
                base: layout.base,
                word_count: layout.words.len(),
                byte_count: layout.words.len() * 8,
                objectives: chains
                    .iter()
                    .map(|c| {
                        c.objective
                            .iter()
                            .map(|(reg, value)| (reg.name().to_string(), *value))
                            .collect()
                    })
                    .collect(),
                words: layout
                    .words
                    .iter()
                    .enumerate()
                    .map(|(index, word)| ReportWord {
                        index,
                        value: word.value,
                        kind: kind_name(word.kind).to_string(),
                        annotation: annotate(word, chains, &ordinals),
                    })
                    .collect(),
                steps: chains
                    .iter()
                    .enumerate()
                    .flat_map(|(call, chain)| {
                        chain.steps.iter().map(move |step| ReportStep {
                            call,
                            offset: step.summary.gadget.offset,
                            gadget: instruction_text(&step.summary),
                            equations: render_summary(&step.summary),
                            free_values: step.free_values.clone(),
                        })
                    })
                    .collect(),
            };
            let mut text =
                serde_json::to_string_pretty(&report).expect("report serializes");
            text.push('\n');
            text
        }
    }
}
