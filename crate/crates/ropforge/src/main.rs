//! Command-line front end: listings in, payloads and reports out.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ropforge::corpus::{parse_listing, Corpus};
use ropforge::emit::{emit_payload, layout_program, render_report, ReportFormat};
use ropforge::emu::{execute_payload, seeded_states, verify_chain, DEFAULT_BUDGET};
use ropforge::semantics::{lift_corpus, render_summary, Category, GadgetSummary, LiftedCorpus};
use ropforge::synth::{
    objective_from_call, parse_program, plan_program, PlanError, SyscallTable,
};

/// Compile register objectives into verified return-oriented-programming payloads.
#[derive(Parser)]
#[command(name = "ropforge", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print each gadget's register equations (or why it was set aside).
    Lift(CorpusArgs),
    /// Print each usable gadget with its category (1: entry-independent).
    Classify(CorpusArgs),
    /// Corpus statistics: totals, categories, rejection reasons.
    Stats(CorpusArgs),
    /// Compile a program of syscalls into a stack payload.
    Chain(ChainArgs),
    /// Re-execute an emitted payload from random states and check the calls.
    Verify(ChainArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// Gadget listing: `0x<offset> : insn ; insn ; ...` per line.
    #[arg(long, value_name = "PATH")]
    gadgets: PathBuf,
    /// Drop gadgets longer than this many instructions.
    #[arg(long, value_name = "N", default_value_t = 10, value_parser = parse_positive)]
    max_depth: usize,
    /// Output flavor.
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct ChainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Program file: one `name(arg, ...)` or `@number(arg, ...)` per line.
    #[arg(long, value_name = "PATH")]
    program: PathBuf,
    /// Load base added to every gadget offset (hex or decimal).
    #[arg(long, value_name = "ADDR", default_value = "0", value_parser = parse_address)]
    base: u64,
    /// Longest gadget sequence considered per target register.
    #[arg(long, value_name = "N", default_value_t = 6, value_parser = parse_positive)]
    max_chain_len: usize,
    /// Payload file: written by `chain`, read back by `verify`.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Seed for the randomized verification states.
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed: u64,
    /// Also emit a gadget-by-gadget execution trace (verify only).
    #[arg(long)]
    trace: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    /// Human-readable text.
    Text,
    /// Stable JSON.
    Structured,
}

impl Format {
    fn report(self) -> ReportFormat {
        match self {
            Format::Text => ReportFormat::Text,
            Format::Structured => ReportFormat::Structured,
        }
    }
}

fn parse_address(text: &str) -> Result<u64, String> {
    let t = text.trim();
    let parsed = if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()
    } else {
        t.parse::<u64>().ok()
    };
    parsed.ok_or_else(|| format!("`{text}` is not a hex or decimal address"))
}

fn parse_positive(text: &str) -> Result<usize, String> {
    match text.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("`{text}` is not a positive integer")),
    }
}

/// A command failure with its exit code class.
enum Failure {
    /// The domain said no: unreachable objective, missing trigger, bad verify.
    Domain(String),
    /// Bad input: unreadable files, malformed listings, unknown syscalls.
    Usage(String),
}

impl Failure {
    fn plan(err: PlanError) -> Failure {
        let msg = format!("error[{}]: {err}", err.code());
        if err.is_domain_failure() {
            Failure::Domain(msg)
        } else {
            Failure::Usage(msg)
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn load_corpus(path: &Path) -> Result<Corpus, Failure> {
    let text = read_text(path)?;
    parse_listing(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Lift(args) => cmd_lift(&args),
        Command::Classify(args) => cmd_classify(&args),
        Command::Stats(args) => cmd_stats(&args),
        Command::Chain(args) => cmd_chain(&args),
        Command::Verify(args) => cmd_verify(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}

/// How one listing line fared, for `lift`/`classify` output.
struct LineOutcome<'a> {
    offset_text: String,
    gadget_text: String,
    status: &'static str,
    detail: String,
    summary: Option<&'a GadgetSummary>,
}

fn line_outcomes<'a>(corpus: &'a Corpus, lifted: &'a LiftedCorpus) -> Vec<LineOutcome<'a>> {
    let by_offset: BTreeMap<u64, &GadgetSummary> = lifted
        .summaries
        .iter()
        .map(|s| (s.gadget.offset, s))
        .collect();
    let rejected: BTreeMap<u64, String> = lifted
        .rejected
        .iter()
        .map(|(g, r)| (g.offset, r.label().to_string()))
        .collect();
    let filtered: std::collections::BTreeSet<u64> =
        lifted.depth_filtered.iter().copied().collect();

    let mut out = Vec::new();
    for gadget in &corpus.gadgets {
        let offset_text = format!("0x{:x}", gadget.offset);
        let gadget_text = gadget
            .instructions
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(" ; ");
        if let Some(summary) = by_offset.get(&gadget.offset) {
            out.push(LineOutcome {
                offset_text,
                gadget_text,
                status: "lifted",
                detail: render_summary(summary),
                summary: Some(summary),
            });
        } else if let Some(label) = rejected.get(&gadget.offset) {
            out.push(LineOutcome {
                offset_text,
                gadget_text,
                status: "rejected",
                detail: label.clone(),
                summary: None,
            });
        } else if filtered.contains(&gadget.offset) {
            out.push(LineOutcome {
                offset_text,
                gadget_text,
                status: "depth_filtered",
                detail: "DepthFiltered".to_string(),
                summary: None,
            });
        }
    }
    for line in &corpus.unsupported {
        out.push(LineOutcome {
            offset_text: String::new(),
            gadget_text: line.source_line.clone(),
            status: "unsupported",
            detail: line.reason.label().to_string(),
            summary: None,
        });
    }
    out
}

fn outcomes_json(outcomes: &[LineOutcome]) -> serde_json::Value {
    let rows: Vec<serde_json::Value> = outcomes
        .iter()
        .map(|o| {
            let mut row = serde_json::Map::new();
            if !o.offset_text.is_empty() {
                row.insert("offset".into(), o.offset_text.clone().into());
            }
            row.insert("gadget".into(), o.gadget_text.clone().into());
            row.insert("status".into(), o.status.into());
            match o.status {
                "lifted" => {
                    row.insert("equations".into(), o.detail.clone().into());
                    if let Some(s) = o.summary {
                        if !s.is_syscall_trigger {
                            row.insert(
                                "category".into(),
                                s.category.to_string().into(),
                            );
                        }
                    }
                }
                _ => {
                    row.insert("reason".into(), o.detail.clone().into());
                }
            }
            serde_json::Value::Object(row)
        })
        .collect();
    serde_json::Value::Array(rows)
}

fn cmd_lift(args: &CorpusArgs) -> Result<(), Failure> {
    let corpus = load_corpus(&args.gadgets)?;
    let lifted = lift_corpus(&corpus, args.max_depth);
    let outcomes = line_outcomes(&corpus, &lifted);
    match args.format {
        Format::Text => {
            for o in &outcomes {
                match o.status {
                    "lifted" => println!("{} : {} => {}", o.offset_text, o.gadget_text, o.detail),
                    "rejected" => println!(
                        "{} : {} => rejected: {}",
                        o.offset_text, o.gadget_text, o.detail
                    ),
                    "depth_filtered" => println!(
                        "{} : {} => skipped: {}",
                        o.offset_text, o.gadget_text, o.detail
                    ),
                    _ => println!("{} => unsupported: {}", o.gadget_text, o.detail),
                }
            }
        }
        Format::Structured => {
            println!(
                "{}",
                serde_json::to_string_pretty(&outcomes_json(&outcomes)).expect("serializes")
            );
        }
    }
    Ok(())
}

fn cmd_classify(args: &CorpusArgs) -> Result<(), Failure> {
    let corpus = load_corpus(&args.gadgets)?;
    let lifted = lift_corpus(&corpus, args.max_depth);
    let outcomes = line_outcomes(&corpus, &lifted);
    match args.format {
        Format::Text => {
            for o in &outcomes {
                match (o.status, o.summary) {
                    ("lifted", Some(s)) if s.is_syscall_trigger => {
                        println!("{} : {} => trigger", o.offset_text, o.gadget_text)
                    }
                    ("lifted", Some(s)) => println!(
                        "{} : {} => category {} : {}",
                        o.offset_text, o.gadget_text, s.category, o.detail
                    ),
                    ("rejected", _) => println!(
                        "{} : {} => rejected: {}",
                        o.offset_text, o.gadget_text, o.detail
                    ),
                    ("depth_filtered", _) => println!(
                        "{} : {} => skipped: {}",
                        o.offset_text, o.gadget_text, o.detail
                    ),
                    _ => println!("{} => unsupported: {}", o.gadget_text, o.detail),
                }
            }
        }
        Format::Structured => {
            println!(
                "{}",
                serde_json::to_string_pretty(&outcomes_json(&outcomes)).expect("serializes")
            );
        }
    }
    Ok(())
}

fn cmd_stats(args: &CorpusArgs) -> Result<(), Failure> {
    let corpus = load_corpus(&args.gadgets)?;
    let lifted = lift_corpus(&corpus, args.max_depth);
    let total = corpus.gadgets.len() + corpus.unsupported.len();
    let usable = lifted.summaries.len();
    let triggers = lifted
        .summaries
        .iter()
        .filter(|s| s.is_syscall_trigger)
        .count();
    let category1 = lifted
        .summaries
        .iter()
        .filter(|s| !s.is_syscall_trigger && s.category == Category::One)
        .count();
    let category2 = lifted
        .summaries
        .iter()
        .filter(|s| !s.is_syscall_trigger && s.category == Category::Two)
        .count();
    let mut rejected: BTreeMap<String, usize> = BTreeMap::new();
    for (_, rejection) in &lifted.rejected {
        *rejected.entry(rejection.label().to_string()).or_insert(0) += 1;
    }
    for line in &corpus.unsupported {
        *rejected.entry(line.reason.label().to_string()).or_insert(0) += 1;
    }
    match args.format {
        Format::Text => {
            println!("total: {total}");
            println!("usable: {usable}");
            println!("category1: {category1}");
            println!("category2: {category2}");
            println!("triggers: {triggers}");
            println!("depth-filtered: {}", lifted.depth_filtered.len());
            if rejected.is_empty() {
                println!("rejected: (none)");
            } else {
                println!("rejected:");
                for (label, count) in &rejected {
                    println!("  {label}: {count}");
                }
            }
        }
        Format::Structured => {
            let doc = serde_json::json!({
                "total": total,
                "usable": usable,
                "category1": category1,
                "category2": category2,
                "triggers": triggers,
                "depthFiltered": lifted.depth_filtered.len(),
                "rejectedByReason": rejected,
            });
            println!("{}", serde_json::to_string_pretty(&doc).expect("serializes"));
        }
    }
    Ok(())
}

fn load_program(args: &ChainArgs) -> Result<ropforge::synth::ProgramSpec, Failure> {
    let table = SyscallTable::load_default().map_err(Failure::plan)?;
    let text = read_text(&args.program)?;
    let program = parse_program(&text, &table).map_err(Failure::plan)?;
    if program.calls.is_empty() {
        return Err(Failure::Usage(format!(
            "{}: program contains no calls",
            args.program.display()
        )));
    }
    Ok(program)
}

fn cmd_chain(args: &ChainArgs) -> Result<(), Failure> {
    let corpus = load_corpus(&args.corpus.gadgets)?;
    let lifted = lift_corpus(&corpus, args.corpus.max_depth);
    let program = load_program(args)?;
    let chains =
        plan_program(&program, &lifted.summaries, args.max_chain_len).map_err(Failure::plan)?;
    let layout = layout_program(&chains, args.base);
    let payload = emit_payload(&layout);
    if let Some(out) = &args.out {
        std::fs::write(out, &payload)
            .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", out.display())))?;
    }
    print!(
        "{}",
        render_report(&chains, &layout, &lifted.summaries, args.corpus.format.report())
    );
    if args.corpus.format == Format::Text {
        if let Some(out) = &args.out {
            println!();
            println!("payload: {} bytes -> {}", payload.len(), out.display());
        }
    }
    Ok(())
}

fn cmd_verify(args: &ChainArgs) -> Result<(), Failure> {
    let corpus = load_corpus(&args.corpus.gadgets)?;
    let program = load_program(args)?;
    let objectives: Vec<BTreeMap<ropforge::corpus::Reg, u64>> = program
        .calls
        .iter()
        .map(|call| objective_from_call(call).map_err(Failure::plan))
        .collect::<Result<_, _>>()?;
    let out = args.out.as_ref().ok_or_else(|| {
        Failure::Usage("verify needs --out pointing at the payload file".to_string())
    })?;
    let payload = std::fs::read(out)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", out.display())))?;

    const RUNS: usize = 100;
    let outcome = verify_chain(&corpus, &payload, args.base, &objectives, RUNS, args.seed)
        .map_err(|e| Failure::Usage(format!("{}: {e}", out.display())))?;

    let trace = if args.trace {
        let words = ropforge::emu::payload_words(&payload)
            .map_err(|e| Failure::Usage(format!("{}: {e}", out.display())))?;
        let entry = seeded_states(args.seed, 1)[0];
        match execute_payload(&corpus, &words, args.base, entry, DEFAULT_BUDGET, true) {
            Ok(exec) => Some(exec.trace),
            Err(_) => Some(Vec::new()),
        }
    } else {
        None
    };

    match args.corpus.format {
        Format::Text => {
            if let Some(trace) = &trace {
                println!("trace (seed {}, run 0):", args.seed);
                for record in trace {
                    println!(
                        "  step {:3}: 0x{:x} : {} [{}]",
                        record.step, record.offset, record.asm, record.reg_digest
                    );
                }
            }
            if outcome.passed() {
                println!("verify: pass ({} runs, seed {})", outcome.runs, args.seed);
            } else {
                println!(
                    "verify: FAIL ({} of {} checks reported)",
                    outcome.failures.len(),
                    outcome.runs
                );
                for failure in &outcome.failures {
                    println!("  {failure}");
                }
            }
        }
        Format::Structured => {
            let trace_json = trace.as_ref().map(|t| {
                t.iter()
                    .map(|r| {
                        serde_json::json!({
                            "step": r.step,
                            "offset": format!("0x{:x}", r.offset),
                            "asm": r.asm,
                            "regDigest": r.reg_digest,
                        })
                    })
                    .collect::<Vec<_>>()
            });
            let mut doc = serde_json::json!({
                "passed": outcome.passed(),
                "runs": outcome.runs,
                "seed": args.seed,
                "failures": outcome.failures,
            });
            if let Some(t) = trace_json {
                doc["trace"] = serde_json::Value::Array(t);
            }
            println!("{}", serde_json::to_string_pretty(&doc).expect("serializes"));
        }
    }
    if outcome.passed() {
        Ok(())
    } else {
        Err(Failure::Domain(format!(
            "verification failed: {}",
            outcome
                .failures
                .first()
                .cloned()
                .unwrap_or_else(|| "mismatch".to_string())
        )))
    }
}
