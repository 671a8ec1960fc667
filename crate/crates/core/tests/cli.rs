use std::process::Command;

fn mldep() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mldep"));
    c.env("RUST_LOG", "error");
    c
}

#[test]
fn bound_calc_to_stdout() {
    let out = mldep()
        .args(["bound-calc", "--set", "L_list=16,32", "--threads", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let s = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("L,eps,"));
    assert!(lines[1].starts_with("16,"));
}

#[test]
fn config_errors_exit_two() {
    for args in [
        vec!["clt-rate", "--set", "L_list=32,16"],
        vec!["clt-rate", "--set", "bogus=1"],
        vec!["tails", "--set", "n_samples=10"],
        vec!["bound-calc", "--policy", "C_eps"],
    ] {
        let out = mldep().args(&args).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    }
    let out = mldep().args(["no-such-command"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn out_flag_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "experiment = clt-rate\nL_list = 4, 8\npreset = identity-gauss\nn_samples = 1000\n",
    )
    .unwrap();
    let csv = dir.path().join("a.csv");
    let run = |out: &std::path::Path| {
        let st = mldep()
            .arg("clt-rate")
            .arg("--config")
            .arg(&cfg)
            .args(["--seed", "5", "--threads", "1", "--out"])
            .arg(out)
            .output()
            .unwrap();
        assert!(
            st.status.success(),
            "{}",
            String::from_utf8_lossy(&st.stderr)
        );
        assert!(st.stdout.is_empty());
    };
    run(&csv);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["master_seed"], 5);
    assert_eq!(manifest["threads"], 1);
    let again = dir.path().join("b.csv");
    run(&again);
    assert_eq!(text, std::fs::read_to_string(&again).unwrap());
}
