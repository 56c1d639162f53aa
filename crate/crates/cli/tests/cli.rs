use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_maptrace"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn fixture(kind: &str, name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(kind).join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Compiles `src` into `dir` and returns the image path.
fn compiled(dir: &Path, src: &Path) -> PathBuf {
    let img = dir.join("p.mtb");
    let o = run(&["compile", s(src), "-o", s(&img)]);
    assert!(o.status.success(), "{}", stderr(&o));
    img
}

#[test]
fn rule_violation_exits_one_and_names_the_rule() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["compile", s(&fixture("reject", "r1_ptr_to_int_cast.mt")), "-o", s(&d.path().join("x.mtb"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("R1"), "{}", stderr(&o));
    assert!(!d.path().join("x.mtb").exists());
}

#[test]
fn run_prints_guest_output() {
    let d = tempfile::tempdir().unwrap();
    let img = compiled(d.path(), &fixture("accept", "location_reuse.mt"));
    let o = run(&["run", s(&img)]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "42\n42\n4\n");
}

#[test]
fn trace_snapshot_matches_golden_dot_and_json() {
    let d = tempfile::tempdir().unwrap();
    let img = compiled(d.path(), &golden("list.mt"));
    let snap = d.path().join("s.mts");
    assert!(run(&["run", s(&img), "--snapshot", s(&snap)]).status.success());
    let (dot, json) = (d.path().join("g.dot"), d.path().join("g.json"));
    let o = run(&["trace", "--snapshot", s(&snap), "--image", s(&img), "--dot", s(&dot), "--json", s(&json)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(dot).unwrap(), std::fs::read_to_string(golden("list.dot")).unwrap());
    assert_eq!(std::fs::read_to_string(json).unwrap(), std::fs::read_to_string(golden("list.json")).unwrap());
}

#[test]
fn leakcheck_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let img = compiled(d.path(), &golden("list.mt"));
    let snap = d.path().join("s.mts");
    run(&["run", s(&img), "--snapshot", s(&snap)]);
    let report = d.path().join("r.json");
    let o = run(&["leakcheck", "--snapshot", s(&snap), "--image", s(&img), "--json", s(&report)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("1 leaked chunks, 16 bytes"), "{}", stdout(&o));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(report).unwrap()).unwrap();
    assert_eq!(v["leaks"][0]["chunk"], 2);

    let clean = compiled(d.path(), &fixture("accept", "location_reuse.mt"));
    run(&["run", s(&clean), "--snapshot", s(&snap)]);
    let o = run(&["leakcheck", "--snapshot", s(&snap), "--image", s(&clean)]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).starts_with("no leaks"));
}

#[test]
fn snapshot_from_another_image_is_refused() {
    let d = tempfile::tempdir().unwrap();
    let a = compiled(d.path(), &golden("list.mt"));
    let snap = d.path().join("s.mts");
    run(&["run", s(&a), "--snapshot", s(&snap)]);
    let b = compiled(d.path(), &fixture("accept", "location_reuse.mt"));
    let o = run(&["trace", "--snapshot", s(&snap), "--image", s(&b)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("different image"));
}

#[test]
fn trace_over_the_wire_matches_snapshot_file() {
    let d = tempfile::tempdir().unwrap();
    let img = compiled(d.path(), &golden("list.mt"));
    let snap = d.path().join("s.mts");
    run(&["run", s(&img), "--snapshot", s(&snap)]);
    let local = stdout(&run(&["trace", "--snapshot", s(&snap), "--image", s(&img)]));

    let mut server = bin()
        .args(["serve", s(&img), "--listen", "127.0.0.1:0", "--at-exit"])
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut err = BufReader::new(server.stderr.take().unwrap());
    let mut line = String::new();
    err.read_line(&mut line).unwrap();
    let addr = line.split_whitespace().nth(2).unwrap().to_string();
    let o = run(&["trace", "--connect", &addr, "--image", s(&img)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let status = server.wait().unwrap();
    let mut rest = String::new();
    std::io::Read::read_to_string(&mut err, &mut rest).unwrap();
    assert!(status.success(), "{rest}");
    assert_eq!(stdout(&o), local);
}

#[test]
fn swapdemo_with_dir_store() {
    let d = tempfile::tempdir().unwrap();
    let src = d.path().join("list.mt");
    std::fs::write(
        &src,
        "struct N { next: *N, v: int, pad: [int; 6] }\n\
         fn main() { let h: *N = null; let i: int = 0; \
         while i < 40 { let n: *N = alloc(N); n.v = i; n.next = h; h = n; i = i + 1; } \
         let s: int = 0; let p: *N = h; while p != null { s = s + p.v; p = p.next; } print(s); }",
    )
    .unwrap();
    let img = compiled(d.path(), &src);
    let plain = run(&["run", s(&img)]);
    let store = d.path().join("store");
    let o = run(&["swapdemo", s(&img), "--cap", "1024", "--store", "dir", s(&store)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), stdout(&plain));
    assert!(!stderr(&o).contains("swap_ins=0"), "{}", stderr(&o));
    assert!(stderr(&o).contains("audit_failures=0"));
}

#[test]
fn fuzz_prints_verdict_lines() {
    let o = run(&["fuzz", "--iters", "8", "--seed", "3"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 9);
    assert!(lines[..8].iter().enumerate().all(|(i, l)| l.starts_with(&format!("program {i}: PASS steps="))));
    assert_eq!(lines[8], "fuzz: 8 programs, 8 passed, 0 failed (seed 3)");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["trace", "--image", "x.mtb"]).status.code(), Some(2));
    assert_eq!(run(&["run", "/nonexistent.mtb"]).status.code(), Some(2));
    assert_eq!(run(&["swapdemo", "x.mtb", "--cap", "10", "--store", "dir"]).status.code(), Some(2));
}
