use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn shb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shb"))
        .args(args)
        .env_remove("SHB_ORACLE_CAP")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn analyze_fig1_shb_pairs() {
    let o = shb(&[
        "analyze",
        &fixture("fig1.trace"),
        "--engine",
        "shb",
        "--report",
        "pairs",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(
        stdout(&o),
        "engine shb: 4 events, 1 warning, 1 pair, 1 location pair\n\
         note: 2 events without a location; using event indices\n\
         1 2 1 2\n"
    );
}

#[test]
fn analyze_fig1_hb_pairs() {
    let o = shb(&[
        "analyze",
        &fixture("fig1.trace"),
        "--engine",
        "hb",
        "--report",
        "pairs",
        "--format",
        "csv",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stdout(&o), "e1,e2,loc1,loc2\n1,2,1,2\n0,3,0,3\n");
}

#[test]
fn analyze_empty_trace() {
    let o = shb(&["analyze", &fixture("empty.trace"), "--engine", "shb"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "engine shb: 0 events, 0 warnings\n");
}

#[test]
fn analyze_json_schema() {
    let o = shb(&[
        "analyze",
        &fixture("fig3.trace"),
        "--report",
        "pairs",
        "--format",
        "json",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for key in [
        "engine",
        "event_count",
        "warnings",
        "pairs",
        "location_pairs",
        "stats",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["pairs"], serde_json::json!([[1, 6], [4, 6]]));
}

#[test]
fn analyze_writes_to_out_file() {
    let dir = std::env::temp_dir().join(format!("shb-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let out = dir.join("report.txt");
    let o = shb(&[
        "analyze",
        &fixture("fig2.trace"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
    assert_eq!(
        std::fs::read_to_string(&out).unwrap(),
        "engine shb: 4 events, 2 warnings\n2 with_read\n3 with_read\n"
    );
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn missing_file_is_an_error() {
    let o = shb(&["analyze", "/nonexistent/trace"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot read"));
}

#[test]
fn compare_fig2_counts() {
    let o = shb(&["compare", &fixture("fig2.trace")]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let counts: Vec<(String, usize)> = text
        .lines()
        .skip(1)
        .take(4)
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[0].to_owned(), f[2].parse().unwrap())
        })
        .collect();
    assert_eq!(
        counts,
        vec![
            ("hb".to_owned(), 2),
            ("shb".to_owned(), 2),
            ("shb-epoch".to_owned(), 2),
            ("fhb".to_owned(), 1)
        ]
    );
    assert!(text.contains("shb pairs not in fhb: (0, 3)"));
    assert!(text.contains("shb-epoch agrees with shb"));
}

#[test]
fn compare_fig3_and_fig4() {
    let o = shb(&["compare", &fixture("fig3.trace"), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["engines"]["hb"]["pairs"].as_array().unwrap().len(), 8);
    assert_eq!(v["engines"]["shb"]["pairs"].as_array().unwrap().len(), 2);

    let o = shb(&["compare", &fixture("fig4.trace"), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let extra = v["hb_not_shb"].as_array().unwrap();
    for p in [[1, 4], [8, 11], [3, 10]] {
        assert!(extra.contains(&serde_json::json!(p)), "{p:?}");
    }
    assert_eq!(v["epoch_agrees"], true);
}

#[test]
fn oracle_check_matches() {
    let o = shb(&["oracle", &fixture("fig1.trace"), "--check"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).ends_with("MATCH: 1 pair\n"));
    let o = shb(&["oracle", &fixture("fig3.trace"), "--check"]);
    assert!(stdout(&o).ends_with("MATCH: 2 pairs\n"));
}

#[test]
fn oracle_cap_from_env_and_flag() {
    let gen = shb(&["gen", "--events", "30", "--seed", "3"]);
    let dir = std::env::temp_dir().join(format!("shb-cap-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("big.trace");
    std::fs::write(&path, &gen.stdout).unwrap();
    let p = path.to_str().unwrap();

    let o = shb(&["oracle", p]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("oracle cap is 24 events"));

    let o = Command::new(env!("CARGO_BIN_EXE_shb"))
        .args(["oracle", p, "--check"])
        .env("SHB_ORACLE_CAP", "30")
        .output()
        .unwrap();
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).contains("MATCH"));

    let o = shb(&["oracle", p, "--max-events", "10"]);
    assert_eq!(o.status.code(), Some(1));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn gen_is_byte_identical() {
    let args = ["gen", "--threads", "2", "--events", "8", "--seed", "1"];
    assert_eq!(shb(&args).stdout, shb(&args).stdout);
}

#[test]
fn single_thread_trace_is_race_free() {
    let dir = std::env::temp_dir().join(format!("shb-one-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("one.trace");
    let gen = shb(&[
        "gen",
        "--threads",
        "1",
        "--events",
        "50",
        "--seed",
        "9",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(gen.status.code(), Some(0));
    for engine in ["hb", "shb", "shb-epoch", "fhb"] {
        let o = shb(&["analyze", path.to_str().unwrap(), "--engine", engine]);
        assert_eq!(o.status.code(), Some(0), "{engine}");
        assert!(stdout(&o).contains("0 warnings"));
    }
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn gen_fuzz_ok_line() {
    let o = shb(&["gen", "--fuzz", "1000", "--max-events", "12"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "1000/1000 OK\n");
}

#[test]
fn help_exits_zero() {
    let o = shb(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("analyze"));
}
