use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn ripple(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ripple"))
        .args(args)
        .env_remove("RIPPLE_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = ripple(args);
    assert!(
        out.status.success(),
        "ripple {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn error_line(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {line}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small synthetic dataset and its run document.
fn dataset(tmp: &TempDir) -> PathBuf {
    let cfg = tmp.path().join("gen.toml");
    fs::write(
        &cfg,
        "[synth]\nfirms = 30\nevents = 60\nmonths = 4\nwarmup_days = 70\nk = 8\nl = 60\n",
    )
    .unwrap();
    let data = tmp.path().join("data");
    ok(&[
        "synth",
        "gen",
        "--config",
        s(&cfg),
        "--seed",
        "3",
        "--out",
        s(&data),
    ]);
    data.join("run.toml")
}

#[test]
fn print_config_round_trips() {
    let out = ok(&["--print-config"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("[reward]") && text.contains("lambda = 0.1"));
    let tmp = TempDir::new().unwrap();
    let p = tmp.path().join("c.toml");
    fs::write(&p, &text).unwrap();
    let again = ok(&["--config", s(&p), "--print-config"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn usage_errors_exit_1() {
    let out = ripple(&["synth", "gen", "--out", "/nonexistent/never"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["error"], "usage");

    let out = ripple(&["eval", "run", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["code"], 1);

    let tmp = TempDir::new().unwrap();
    let p = tmp.path().join("bad.toml");
    fs::write(&p, "sed = 1\n").unwrap();
    assert_eq!(
        ripple(&["--config", s(&p), "kg", "stats"]).status.code(),
        Some(1)
    );

    assert_eq!(ripple(&[]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path().join("c.toml");
    fs::write(&p, "[data]\nedges = \"missing.csv\"\n").unwrap();
    let out = ripple(&["--config", s(&p), "kg", "stats", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "data");

    let bad = tmp.path().join("edges.csv");
    fs::write(
        &bad,
        "month,src,dst,relation,weight,sign\n2021-01,A,B,friendship,1,1\n",
    )
    .unwrap();
    fs::write(&p, "[data]\nedges = \"edges.csv\"\n").unwrap();
    let out = ripple(&["--config", s(&p), "kg", "stats", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_3() {
    let tmp = TempDir::new().unwrap();
    let run = dataset(&tmp);
    let client = format!(
        "external:{} mock-client --mode chaos --chaos-rate 1",
        env!("CARGO_BIN_EXE_ripple")
    );
    let out = ripple(&[
        "eval",
        "run",
        "--config",
        s(&run),
        "--propagator",
        &client,
        "--out",
        s(&tmp.path().join("e")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(error_line(&out)["error"], "runtime");
}

#[test]
fn synth_gen_writes_dataset_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let run = dataset(&tmp);
    let dir = run.parent().unwrap();
    for f in [
        "edges.csv",
        "returns.csv",
        "factors.csv",
        "events.jsonl",
        "truth.csv",
        "betas.csv",
        "run.toml",
    ] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "synth gen");
    assert_eq!(m["seed"], 3);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 7);
}

#[test]
fn output_dir_from_environment() {
    let tmp = TempDir::new().unwrap();
    let run = dataset(&tmp);
    let target = tmp.path().join("from_env");
    let out = Command::new(env!("CARGO_BIN_EXE_ripple"))
        .args(["kg", "stats", "--config", s(&run)])
        .env("RIPPLE_OUTPUT_DIR", &target)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(target.join("stats.csv").exists());
    assert!(target.join("manifest.json").exists());
}

#[test]
fn kg_commands() {
    let tmp = TempDir::new().unwrap();
    let run = dataset(&tmp);
    let out = tmp.path().join("kg");
    ok(&["kg", "build", "--config", s(&run), "--out", s(&out)]);
    assert_eq!(fs::read_dir(out.join("snapshots")).unwrap().count(), 4);
    ok(&["kg", "stats", "--config", s(&run), "--out", s(&out)]);
    let stats = fs::read_to_string(out.join("stats.csv")).unwrap();
    assert!(stats.starts_with("graphs,avg_nodes,avg_edges,single_pct,dual_pct,triple_pct,quad_pct"));
    ok(&[
        "kg",
        "ablate",
        "--relation",
        "leadership",
        "--config",
        s(&run),
        "--out",
        s(&out),
    ]);
    let ablated = out.join("snapshots_without_leadership/2021-01.csv");
    assert!(!fs::read_to_string(ablated).unwrap().contains("leadership"));
    assert_eq!(
        ripple(&[
            "kg",
            "ablate",
            "--relation",
            "friends",
            "--config",
            s(&run),
            "--out",
            s(&out)
        ])
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn instr_gen_writes_jsonl() {
    let tmp = TempDir::new().unwrap();
    let run = dataset(&tmp);
    let out = tmp.path().join("i");
    ok(&["instr", "gen", "--config", s(&run), "--out", s(&out)]);
    let text = fs::read_to_string(out.join("instructions.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["question", "answer", "class", "month", "triple"] {
        assert!(first.get(key).is_some(), "{key}");
    }
}

#[test]
fn eval_reports_have_expected_columns() {
    let tmp = TempDir::new().unwrap();
    let run = dataset(&tmp);
    let out = tmp.path().join("e");
    ok(&[
        "eval",
        "run",
        "--config",
        s(&run),
        "--ablate",
        "--out",
        s(&out),
    ]);
    let reg = fs::read_to_string(out.join("regression.csv")).unwrap();
    let lines: Vec<&str> = reg.lines().collect();
    assert_eq!(lines[0], "model,method,coef,p,r2,r2_phi");
    assert_eq!(lines.len(), 6);
    assert!(lines[1].starts_with("diffusion,capm,"));
    assert!(lines[2].starts_with("diffusion_without_technical,capm,"));
    let anova = fs::read_to_string(out.join("anova.csv")).unwrap();
    assert!(anova.starts_with("model,method,anova_f,anova_p,es\n"));
    let refusals = fs::read_to_string(out.join("refusals.csv")).unwrap();
    assert!(refusals.contains("diffusion,capm,all,0,0"));

    let out = tmp.path().join("j");
    ok(&[
        "eval",
        "run",
        "--config",
        s(&run),
        "--propagator",
        "oracle",
        "--format",
        "jsonl",
        "--out",
        s(&out),
    ]);
    let line = fs::read_to_string(out.join("eval.jsonl")).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["model"], "oracle");
    assert!(v["regression"]["p_gamma1"].as_f64().unwrap() < 0.01);
}

#[test]
fn eval_through_external_mock_client() {
    let tmp = TempDir::new().unwrap();
    let run = dataset(&tmp);
    let out = tmp.path().join("x");
    let client = format!(
        "external:{} mock-client --decay 0.5",
        env!("CARGO_BIN_EXE_ripple")
    );
    ok(&[
        "eval",
        "run",
        "--config",
        s(&run),
        "--propagator",
        &client,
        "--out",
        s(&out),
    ]);
    let refusals = fs::read_to_string(out.join("refusals.csv")).unwrap();
    assert!(refusals.contains("external,capm,all,0,0"), "{refusals}");
}

#[test]
fn align_then_eval_with_aligned_parameters() {
    let tmp = TempDir::new().unwrap();
    let run = dataset(&tmp);
    let out = tmp.path().join("a");
    ok(&[
        "align",
        "run",
        "--config",
        s(&run),
        "--max-updates",
        "10",
        "--holdout",
        "1",
        "--out",
        s(&out),
    ]);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 11);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["scored_on"], "holdout");
    assert!(summary["oracle"]["total"].is_number());

    let e = tmp.path().join("e");
    let theta = out.join("theta.toml");
    ok(&[
        "eval",
        "run",
        "--config",
        s(&run),
        "--params",
        s(&theta),
        "--out",
        s(&e),
    ]);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(e.join("manifest.json")).unwrap()).unwrap();
    let aligned = fs::read_to_string(&theta).unwrap();
    let hops: u64 = aligned
        .lines()
        .find_map(|l| l.strip_prefix("hops = "))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(m["config"]["eval"]["params"]["hops"], hops);
}

#[test]
fn backtest_reports_all_strategies() {
    let tmp = TempDir::new().unwrap();
    let run = dataset(&tmp);
    let out = tmp.path().join("b");
    ok(&[
        "backtest",
        "run",
        "--config",
        s(&run),
        "--propagator",
        "oracle",
        "--out",
        s(&out),
    ]);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    let rows: Vec<&str> = report.lines().collect();
    assert_eq!(
        rows[0],
        "strategy,daily_return,sharpe,mdd,win_rate,sharpe_annualized"
    );
    let names: Vec<&str> = rows[1..]
        .iter()
        .map(|r| r.split(',').next().unwrap())
        .collect();
    assert_eq!(
        names,
        ["ripple", "equal", "volatility", "markowitz", "min_variance"]
    );
    let sharpe = |i: usize| rows[i].split(',').nth(2).unwrap().parse::<f64>().unwrap();
    assert!(sharpe(1) > sharpe(2));
    let equity = fs::read_to_string(out.join("equity.csv")).unwrap();
    assert!(equity.starts_with("date,strategy,equity\n"));
}

#[test]
fn mock_client_serves_stdin() {
    use std::io::Write;
    use std::process::Stdio;
    let req = r#"{"id":"Q1","event":{"datetime":"2021-01-05T09:30:00","company_codes":["AAA"],"title":"","body":""},"context":{"firms":["AAA","BBB"],"edges":[["AAA","BBB","supply_chain",0.5]]}}"#;
    let mut child = Command::new(env!("CARGO_BIN_EXE_ripple"))
        .arg("mock-client")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    writeln!(child.stdin.take().unwrap(), "{req}").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["id"], "Q1");
    let claims = v["impact_analysis"]["affected_companies"]
        .as_array()
        .unwrap();
    assert_eq!(claims[0]["impact_score"], 8);
    assert_eq!(claims[1]["name"], "BBB");
    assert_eq!(claims[1]["impact_score"], 2);
}
