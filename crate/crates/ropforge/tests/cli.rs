//! End-to-end tests of the `ropforge` binary: flags, formats, exit codes.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{scratch_dir, CORE_LISTING};

/// The worked-example corpus without its syscall trigger line.
const CORE_NO_TRIGGER: &str = "\
0x00000000000054cf : mov edx, eax ; add rsp, 8 ; ret
0x0000000000005011 : mov eax, 0x1 ; ret
0x00000000000026d0 : mov eax, 0xa ; ret
0x00000000000022fe : pop rdi ; ret
0x00000000000022fc : pop rsi ; pop r15 ; ret
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ropforge"))
}

fn run(args: &[&str], paths: &[(&str, &Path)]) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    for (flag, path) in paths {
        cmd.arg(flag).arg(path);
    }
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf-8 stderr")
}

fn write_files(dir: &Path, files: &[(&str, &str)]) {
    for (name, content) in files {
        std::fs::write(dir.join(name), content).expect("write test input");
    }
}

#[test]
fn stats_reports_exact_counts() {
    let dir = scratch_dir("cli-stats");
    write_files(&dir, &[("g.txt", CORE_NO_TRIGGER)]);
    let out = run(
        &["stats", "--format", "structured"],
        &[("--gadgets", &dir.join("g.txt"))],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let got: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("json stats");
    let want = serde_json::json!({
        "total": 5,
        "usable": 5,
        "triggers": 0,
        "category1": 4,
        "category2": 1,
        "depthFiltered": 0,
        "rejectedByReason": {},
    });
    assert_eq!(got, want);
}

#[test]
fn lift_prints_golden_equations() {
    let dir = scratch_dir("cli-lift");
    let listing = "\
0x10 : pop rax ; push rbx ; pop rdx ; pop rcx ; ret
0x20 : push r15 ; push r14 ; pop rax ; push r13 ; pop rbx ; pop rcx ; pop rdx ; ret
";
    write_files(&dir, &[("g.txt", listing)]);
    let out = run(&["lift"], &[("--gadgets", &dir.join("g.txt"))]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains(
        "0x10 : pop rax ; push rbx ; pop rdx ; pop rcx ; ret => rax = *; rdx = rbx; rcx = *"
    ));
    assert!(text.contains(
        "0x20 : push r15 ; push r14 ; pop rax ; push r13 ; pop rbx ; pop rcx ; pop rdx ; ret \
         => rax = r14; rbx = r13; rcx = r15; rdx = *"
    ));
}

#[test]
fn lift_reports_rejections_and_unsupported_lines() {
    let dir = scratch_dir("cli-reject");
    let listing = "\
0x30 : push rax ; ret
0x40 : mov rax, [rbx] ; ret
0x50 : pop rax ; pop rbx ; pop rcx ; ret
";
    write_files(&dir, &[("g.txt", listing)]);

    let out = run(&["lift"], &[("--gadgets", &dir.join("g.txt"))]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("0x30 : push rax ; ret => rejected: UnbalancedPush"));
    assert!(text.contains("unsupported: MemoryOperand"));

    // A tight depth bound filters the three-instruction-deep gadget out.
    let out = run(
        &["stats", "--max-depth", "2", "--format", "structured"],
        &[("--gadgets", &dir.join("g.txt"))],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let got: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("json stats");
    assert_eq!(got["depthFiltered"], 1);
    assert_eq!(got["rejectedByReason"]["UnbalancedPush"], 1);
    assert_eq!(got["rejectedByReason"]["MemoryOperand"], 1);
}

#[test]
fn classify_marks_categories_and_trigger() {
    let dir = scratch_dir("cli-classify");
    write_files(&dir, &[("g.txt", CORE_LISTING)]);
    let out = run(&["classify"], &[("--gadgets", &dir.join("g.txt"))]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains(
        "0x54cf : mov edx, eax ; add rsp, 0x8 ; ret => category 2 : edx = eax; rsp = rsp + 8"
    ));
    assert!(text.contains("0x26d0 : mov eax, 0xa ; ret => category 1 : eax = 10"));
    assert!(text.contains("0x9000 : syscall ; ret => trigger"));
}

#[test]
fn chain_text_report_has_the_documented_shape() {
    let dir = scratch_dir("cli-chain");
    write_files(
        &dir,
        &[("g.txt", CORE_LISTING), ("p.txt", "mprotect(0x601000, 0x1000, 1)\n")],
    );
    let payload = dir.join("payload.bin");
    let out = run(
        &["chain"],
        &[
            ("--gadgets", &dir.join("g.txt")),
            ("--program", &dir.join("p.txt")),
            ("--out", &payload),
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("stack layout: 10 words, 80 bytes, base 0x0000000000000000"));
    assert!(text.contains("(highest address on top; the bottom word executes first)"));
    assert!(text.contains("Gadget # 4 : pop rdi ; ret"));
    assert!(text.contains("dummy value (r15)"));
    assert!(text.contains("dummy value (rsp+8)"));
    assert!(text.contains("syscall trigger : syscall ; ret"));
    assert!(text.contains("payload: 80 bytes -> "));
    let bytes = std::fs::read(&payload).expect("payload written");
    assert_eq!(bytes.len(), 80);
}

#[test]
fn verify_passes_then_fails_on_a_corrupted_payload() {
    let dir = scratch_dir("cli-verify");
    write_files(
        &dir,
        &[("g.txt", CORE_LISTING), ("p.txt", "mprotect(0x601000, 0x1000, 1)\n")],
    );
    let payload = dir.join("payload.bin");
    let gadgets = dir.join("g.txt");
    let program = dir.join("p.txt");
    let out = run(
        &["chain"],
        &[("--gadgets", &gadgets), ("--program", &program), ("--out", &payload)],
    );
    assert!(out.status.success(), "{}", stderr(&out));

    let out = run(
        &["verify"],
        &[("--gadgets", &gadgets), ("--program", &program), ("--out", &payload)],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("verify: pass (100 runs, seed 0)"));

    // Flip the first gadget address; every run must now fail to resolve it.
    let mut bytes = std::fs::read(&payload).expect("payload");
    bytes[0] ^= 0x01;
    std::fs::write(&payload, &bytes).expect("rewrite payload");
    let out = run(
        &["verify"],
        &[("--gadgets", &gadgets), ("--program", &program), ("--out", &payload)],
    );
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stdout(&out).contains("verify: FAIL"));
    assert!(stderr(&out).contains("verification failed"));
}

#[test]
fn unknown_syscall_is_a_usage_error() {
    let dir = scratch_dir("cli-unknown");
    write_files(&dir, &[("g.txt", CORE_LISTING), ("p.txt", "frobnicate(1)\n")]);
    let out = run(
        &["chain"],
        &[("--gadgets", &dir.join("g.txt")), ("--program", &dir.join("p.txt"))],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("error[UnknownSyscall]"));
}

#[test]
fn missing_trigger_is_a_domain_error() {
    let dir = scratch_dir("cli-notrigger");
    write_files(
        &dir,
        &[("g.txt", CORE_NO_TRIGGER), ("p.txt", "mprotect(0x601000, 0x1000, 1)\n")],
    );
    let out = run(
        &["chain"],
        &[("--gadgets", &dir.join("g.txt")), ("--program", &dir.join("p.txt"))],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("error[MissingTrigger]"));
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let out = bin().arg("lift").output().expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn structured_chain_report_round_trips() {
    let dir = scratch_dir("cli-structured");
    write_files(
        &dir,
        &[("g.txt", CORE_LISTING), ("p.txt", "mprotect(0x601000, 0x1000, 1)\n")],
    );
    let out = run(
        &["chain", "--format", "structured"],
        &[("--gadgets", &dir.join("g.txt")), ("--program", &dir.join("p.txt"))],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("json report");
    assert_eq!(report["word_count"], 10);
    assert_eq!(report["byte_count"], 80);
    assert_eq!(report["objectives"][0]["rax"], 10);
    assert_eq!(report["objectives"][0]["rdi"], 0x601000);
    assert_eq!(report["words"].as_array().map(Vec::len), Some(10));
    assert_eq!(report["steps"].as_array().map(Vec::len), Some(5));
}
