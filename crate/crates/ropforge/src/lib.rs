//! Compile register objectives into verified return-oriented-programming
//! payloads.
//!
//! The pipeline has five stages, one module each:
//!
//! 1. [`corpus`] parses textual gadget listings (`0x<offset> : insn ; ... ; ret`)
//!    into instruction sequences, screening out anything that touches memory
//!    or abuses the stack pointer.
//! 2. [`semantics`] lifts each gadget to register equations by symbolic
//!    execution over an imitated stack, folds the equations, and classifies
//!    gadgets by whether their effect depends on entry register values.
//! 3. [`synth`] searches gadget compositions for a chain whose final state
//!    pins the syscall number and argument registers to requested values.
//! 4. [`emit`] lays the chain out as 64-bit stack words and serializes them
//!    little-endian, with human- and machine-readable reports.
//! 5. [`emu`] independently re-executes emitted payloads — interpreting the
//!    parsed instructions, never the lifted equations — from randomized
//!    entry states, so every chain is checked against a second opinion.
//!
//! ```
//! use ropforge::corpus::parse_listing;
//! use ropforge::semantics::lift_corpus;
//! use ropforge::synth::{build_chain, ObjectiveState};
//! use ropforge::emit::{emit_payload, layout_stack};
//! use ropforge::emu::verify_chain;
//! use ropforge::corpus::Reg;
//!
//! let listing = "\
//! 0x22fe : pop rdi ; ret
//! 0x26d0 : mov eax, 0xa ; ret
//! 0x9000 : syscall
//! ";
//! let corpus = parse_listing(listing)?;
//! let lifted = lift_corpus(&corpus, 10);
//!
//! // Ask for getpid-style state: rax = 10 is mprotect's number; rdi = 0x601000.
//! let mut objective = ObjectiveState::new();
//! objective.insert(Reg::Rax, 10);
//! objective.insert(Reg::Rdi, 0x601000);
//!
//! let chain = build_chain(&objective, &lifted.summaries, 6)?;
//! let payload = emit_payload(&layout_stack(&chain, 0));
//!
//! let outcome = verify_chain(&corpus, &payload, 0, &[objective], 100, 7)?;
//! assert!(outcome.passed());
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod corpus;
pub mod emit;
pub mod emu;
pub mod semantics;
pub mod synth;

pub use corpus::{parse_listing, Corpus, Gadget};
pub use emit::{
    emit_payload, layout_program, layout_stack, render_report, ReportFormat, StackLayout,
};
pub use emu::{execute_payload, verify_chain, MachineState, SyscallEvent, VerifyOutcome};
pub use semantics::{lift_corpus, lift_gadget, Category, GadgetSummary, LiftedCorpus};
pub use synth::{
    build_chain, parse_program, plan_program, Chain, ObjectiveState, PlanError, SyscallTable,
};

// Run every example in the guide as a doc-test, so the book can never drift
// from the code it documents.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/listings.md")]
    pub struct Listings;
    #[doc = include_str!("../../../book/src/equations.md")]
    pub struct Equations;
    #[doc = include_str!("../../../book/src/search.md")]
    pub struct Search;
    #[doc = include_str!("../../../book/src/payloads.md")]
    pub struct Payloads;
    #[doc = include_str!("../../../book/src/verification.md")]
    pub struct Verification;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct CliGuide;
}
