use std::path::PathBuf;
use std::process::{Command, Output};

use qbd::fixtures::{Fixture, MOLECULE_QUERY};
use qbd::qvm::{load_program, Vm, VmConfig};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn qbd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qbd"))
        .args(args)
        .current_dir(fixtures())
        .env_remove("QBD_GC_THRESHOLD")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("qbd-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn run_reports_the_collision() {
    let o = qbd(&["run", "molecules.qasm", "--query", MOLECULE_QUERY]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("#11430 delta q1 +[(Molecule@99, Ion@100), (Ion@100, Molecule@99)] -[]"));
    assert!(out.ends_with("halted after 2212040 instructions, 120625 events, 0 collections\n"));
}

#[test]
fn stop_on_change_stops_at_the_collision() {
    let o = qbd(&[
        "run",
        "molecules.qasm",
        "-q",
        MOLECULE_QUERY,
        "--stop-on-change",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("#11430 paused query-change q1\n"));
    assert!(out.contains("q1 [(Molecule@99, Ion@100), (Ion@100, Molecule@99)]\n"));
    assert!(!out.contains("halted"));
}

/// Program output from `qbd run` matches the reference interpreter running
/// the uninstrumented program.
#[test]
fn run_without_queries_is_transparent() {
    for f in Fixture::standard() {
        let o = qbd(&["run", &format!("{}.qasm", f.name)]);
        assert_eq!(o.status.code(), Some(0), "{}", f.name);
        let printed: Vec<String> = stdout(&o)
            .lines()
            .filter_map(|l| l.split_once(" output ").map(|(_, t)| t.to_string()))
            .collect();
        let mut vm = Vm::new(load_program(&f.source).unwrap().into(), VmConfig::default()).unwrap();
        vm.run(None);
        assert_eq!(printed, vm.output(), "{}", f.name);
    }
}

#[test]
fn errors_map_to_exit_codes() {
    let missing = qbd(&["run", "missing.qasm"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing.qasm"));

    let bad_query = qbd(&["run", "micro.qasm", "-q", "Test5 z. z.x <"]);
    assert_eq!(bad_query.status.code(), Some(2));

    assert_eq!(qbd(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(qbd(&["run"]).status.code(), Some(2));

    let broken = scratch("broken.qasm");
    std::fs::write(&broken, "class Main\n  method main 0 0\n    pop\n").unwrap();
    assert_eq!(
        qbd(&["run", broken.to_str().unwrap()]).status.code(),
        Some(2)
    );

    let faulty = scratch("fault.qasm");
    std::fs::write(
        &faulty,
        "class Main\n  method main 0 0\n    const 1\n    const 0\n    div\n    print\n    halt\n  end\nend\n",
    )
    .unwrap();
    let o = qbd(&["run", faulty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("faulted"));
}

#[test]
fn max_instr_bounds_the_run() {
    let o = qbd(&["run", "micro.qasm", "--max-instr", "1000"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).ends_with("paused after 1000 instructions, 72 events, 0 collections\n"));
}

#[test]
fn gc_threshold_comes_from_the_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_qbd"))
        .args(["run", "churn.qasm"])
        .current_dir(fixtures())
        .env("QBD_GC_THRESHOLD", "100")
        .output()
        .unwrap();
    assert!(
        stdout(&o).ends_with(", 999 collections\n"),
        "{}",
        stdout(&o)
    );
    let default = qbd(&["run", "churn.qasm"]);
    assert!(stdout(&default).ends_with(", 9 collections\n"));
}

#[test]
fn emitted_program_reloads() {
    let path = scratch("micro.instrumented.qasm");
    let o = qbd(&[
        "run",
        "micro.qasm",
        "--emit-instrumented",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&path).unwrap();
    let expected = std::fs::read_to_string(fixtures().join("micro.instrumented.qasm")).unwrap();
    assert_eq!(text, expected);
    assert!(load_program(&text).unwrap().is_instrumented());
}

fn golden(name: &str) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let script = dir.join(format!("{name}.script"));
    let o = qbd(&[
        "repl",
        &format!("{name}.qasm"),
        "--script",
        script.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let actual = stdout(&o);
    let expected_path = dir.join(format!("{name}.expected"));
    if std::env::var_os("QBD_BLESS").is_some() {
        std::fs::write(&expected_path, &actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&expected_path).unwrap();
    assert!(actual == expected, "{name} transcript differs:\n{actual}");
    // Replaying gives the same bytes.
    let again = qbd(&[
        "repl",
        &format!("{name}.qasm"),
        "--script",
        script.to_str().unwrap(),
    ]);
    assert_eq!(stdout(&again), actual);
}

#[test]
fn repl_golden_molecules() {
    golden("molecules");
}

#[test]
fn repl_golden_astshare() {
    golden("astshare");
}

#[test]
fn repl_reads_stdin() {
    use std::io::Write;
    let mut child = Command::new(env!("CARGO_BIN_EXE_qbd"))
        .args(["repl", "micro.qasm"])
        .current_dir(fixtures())
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"query add \"Test5 z. z.x <\"\nquery ls\nbogus\nrun\n")
        .unwrap();
    let o = child.wait_with_output().unwrap();
    let out = stdout(&o);
    assert!(out.contains("error: "));
    assert!(out.contains("no queries"));
    assert!(out.contains("commands:"), "{out}");
    assert!(out.contains("#100001 halted"));
}

#[test]
fn bench_writes_csv_and_json() {
    let csv = scratch("bench.csv");
    let o = qbd(&[
        "bench",
        "--scenario",
        "micro",
        "--tier",
        "baseline",
        "--tier",
        "query-active",
        "--reps",
        "1",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("scenario,tier,plan,reps"));
    assert!(lines[2].starts_with("micro,query-active,selection,1"));

    let json = scratch("bench.json");
    let o = qbd(&[
        "bench",
        "--scenario",
        "hashjoin",
        "--tier",
        "query-active",
        "--reps",
        "1",
        "--out",
        json.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let report = qbd::bench::Report::from_json(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].constraint_evals, 6048);

    assert_eq!(qbd(&["bench", "--tier", "warp"]).status.code(), Some(2));
    assert_eq!(qbd(&["bench", "--scenario", "nope"]).status.code(), Some(2));
    assert_eq!(qbd(&["bench", "--out", "x.txt"]).status.code(), Some(2));
}

#[test]
fn serve_binds_and_serves_the_page() {
    use std::io::{BufRead, BufReader, Read, Write};
    let mut child = Command::new(env!("CARGO_BIN_EXE_qbd"))
        .args(["serve", "molecules.qasm", "--bind", "127.0.0.1:0"])
        .current_dir(fixtures())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap()
        .to_string();
    let mut s = std::net::TcpStream::connect(&addr).unwrap();
    write!(s, "GET / HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
    let mut page = String::new();
    s.read_to_string(&mut page).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(page.starts_with("HTTP/1.1 200"), "{page}");

    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().to_string();
    let o = qbd(&["serve", "--bind", &port]);
    assert_ne!(o.status.code(), Some(0));
}
