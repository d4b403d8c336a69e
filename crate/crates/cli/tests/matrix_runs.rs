use std::fs;
use std::path::Path;
use std::process::Command;

use layermatch::trainer::Method;
use layermatch_cli::config::{parse_config, ExperimentPlan};
use layermatch_cli::matrix::{
    cell_dir, read_runs_csv, run_matrix, CellStatus, CHECKPOINT_FILE, METRICS_FILE, RUNS_FILE, SUMMARY_FILE,
};
use layermatch_cli::report::{render, summarize, Format};
use layermatch_cli::CliError;

const SMALL: &str = "\
methods = supervised_only, layermatch
seeds = 0, 1, 2
iterations = 60
eval_every = 20
n_unlabeled = 120
n_test = 80
hidden = 8
";

fn plan(text: &str, dir: &Path) -> ExperimentPlan {
    let mut p = parse_config(text).unwrap();
    p.output_dir = dir.to_path_buf();
    p
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_layermatch"))
}

#[test]
fn two_methods_three_seeds_make_six_runs_and_one_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let p = plan(SMALL, tmp.path());
    let out = run_matrix(&p, 3).unwrap();
    assert_eq!(out.len(), 6);
    assert!(out.iter().all(|o| o.status == CellStatus::Ran));
    let cells = p.cells().unwrap();
    for c in &cells {
        let d = cell_dir(&p, c);
        assert!(d.join(METRICS_FILE).is_file());
        assert!(d.join(CHECKPOINT_FILE).is_file());
    }
    let metrics = walk(tmp.path()).into_iter().filter(|f| f.ends_with(METRICS_FILE)).count();
    assert_eq!(metrics, 6);
    let summary = fs::read_to_string(tmp.path().join(SUMMARY_FILE)).unwrap();
    assert_eq!(summary.lines().count(), 3, "{summary}");
    assert!(summary.starts_with("method,sweep,n,mean,two_sigma\nsupervised_only,-,3,"));
    // Results come back in plan order whatever the scheduling was.
    let names: Vec<String> = read_runs_csv(&tmp.path().join(RUNS_FILE)).unwrap().into_iter().map(|r| r.cell).collect();
    assert_eq!(names, cells.iter().map(|c| c.name()).collect::<Vec<_>>());
    assert!(names.iter().all(|n| tmp.path().join(n).is_dir()));
}

fn walk(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p.to_string_lossy().into_owned());
        }
    }
    out
}

#[test]
fn sweeps_cross_with_methods_and_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let p = plan(
        "method = layermatch\nseeds = 0\niterations = 10\neval_every = 5\nn_unlabeled = 50\nn_test = 20\nhidden = 4\n\
         sweep.avg_period = 1, 2048, 204800\nsweep.grad_relu = true, false\n",
        tmp.path(),
    );
    let cells = p.cells().unwrap();
    let names: Vec<String> = cells.iter().map(|c| c.name()).collect();
    assert_eq!(names[0], "layermatch.seed0.avg_period=1.grad_relu=true");
    assert_eq!(names[1], "layermatch.seed0.avg_period=1.grad_relu=false");
    assert_eq!(names[5], "layermatch.seed0.avg_period=204800.grad_relu=false");
    assert_eq!(cells[2].settings.train.avg_period, 2048);
    assert!(!cells[1].settings.train.grad_relu);
    run_matrix(&p, 2).unwrap();
    let s = summarize(&read_runs_csv(&tmp.path().join(RUNS_FILE)).unwrap());
    assert_eq!(s.len(), 6);
    assert_eq!(s[0].sweep, "avg_period=1;grad_relu=true");
    assert_eq!(s[0].two_sigma, None);
}

#[test]
fn resume_skips_cells_with_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let p = plan(SMALL, tmp.path());
    let first = run_matrix(&p, 2).unwrap();
    let victim = cell_dir(&p, &first[4].cell);
    fs::remove_file(victim.join(CHECKPOINT_FILE)).unwrap();
    let before = fs::read(victim.join(METRICS_FILE)).unwrap();
    let second = run_matrix(&p, 2).unwrap();
    let statuses: Vec<CellStatus> = second.iter().map(|o| o.status).collect();
    assert_eq!(statuses.iter().filter(|s| **s == CellStatus::Skipped).count(), 5);
    assert_eq!(statuses[4], CellStatus::Ran);
    assert_eq!(fs::read(victim.join(METRICS_FILE)).unwrap(), before);
    for (a, b) in first.iter().zip(&second) {
        assert_eq!(a.final_accuracy, b.final_accuracy);
    }
}

#[test]
fn reruns_are_byte_identical_regardless_of_jobs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_matrix(&plan(SMALL, a.path()), 1).unwrap();
    run_matrix(&plan(SMALL, b.path()), 4).unwrap();
    let p = plan(SMALL, a.path());
    for c in p.cells().unwrap() {
        for f in [METRICS_FILE, CHECKPOINT_FILE] {
            let x = fs::read(a.path().join(c.name()).join(f)).unwrap();
            let y = fs::read(b.path().join(c.name()).join(f)).unwrap();
            assert!(x == y, "{} {f} differs", c.name());
        }
    }
    for f in [RUNS_FILE, SUMMARY_FILE] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn failed_cells_are_recorded_not_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    // An absurd learning rate diverges within the first few steps.
    let mut p = plan(&format!("{SMALL}lr = 1e200\n"), tmp.path());
    p.methods = vec![Method::SupervisedOnly];
    let out = run_matrix(&p, 2).unwrap();
    assert!(out.iter().all(|o| o.status == CellStatus::Failed));
    let err = out[0].error.as_deref().unwrap();
    assert!(err.contains("iteration"), "{err}");
    let runs = read_runs_csv(&tmp.path().join(RUNS_FILE)).unwrap();
    assert!(runs.iter().all(|r| r.status == "failed" && r.final_accuracy.is_none()));
    assert!(render(&summarize(&runs), Format::Csv).is_err());
}

#[test]
fn config_errors_name_the_key() {
    let err = parse_config("taau = 1").unwrap_err();
    assert_eq!(err.to_string(), "unknown key taau");
    let err = parse_config("tau = 1.5").unwrap_err();
    assert!(matches!(&err, CliError::Config { key, .. } if key == "tau"));
    assert!(parse_config("sweep.avg_perod = 1,2").is_err());
    assert!(parse_config("sweep.tau = 0.9, 2").is_err());
    assert!(parse_config("method = meanteacher").is_err());
    assert!(parse_config("iterations = 0").is_err());
}

#[test]
fn dump_parses_back_to_the_same_plan() {
    let p = parse_config("methods = fixmatch, layermatch\nseeds = 0,1,2\ntau = 0.9\nsweep.avg_period = 1,2048\n").unwrap();
    assert_eq!(parse_config(&p.dump()).unwrap(), p);
}

#[test]
fn binary_matrix_report_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("m.cfg");
    let out = tmp.path().join("out");
    fs::write(&cfg, format!("{SMALL}output_dir = {}\n", out.display())).unwrap();
    let st = bin().args(["matrix", "--config"]).arg(&cfg).args(["--jobs", "2"]).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    assert!(String::from_utf8_lossy(&st.stdout).contains(" ± "));

    let csv = bin().args(["report", "--format", "csv", "--in"]).arg(&out).output().unwrap();
    let json = bin().args(["report", "--format", "json", "--in"]).arg(&out).output().unwrap();
    assert!(csv.status.success() && json.status.success());
    let csv = String::from_utf8(csv.stdout).unwrap();
    assert_eq!(csv, fs::read_to_string(out.join(SUMMARY_FILE)).unwrap());
    let json: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    for (i, line) in csv.lines().skip(1).enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(json[i]["mean"].as_f64().unwrap(), f[3].parse::<f64>().unwrap());
    }
    let bad = bin().args(["report", "--format", "xml", "--in"]).arg(&out).output().unwrap();
    assert!(!bad.status.success());

    fs::write(&cfg, "taau = 0.5\n").unwrap();
    let bad = bin().args(["matrix", "--config"]).arg(&cfg).output().unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown key taau"));

    fs::write(&cfg, format!("{SMALL}lr = 1e200\noutput_dir = {}\n", tmp.path().join("bad").display())).unwrap();
    let bad = bin().args(["matrix", "--config"]).arg(&cfg).output().unwrap();
    assert!(!bad.status.success());
    assert!(tmp.path().join("bad").join(RUNS_FILE).is_file());
}

#[test]
fn binary_train_honours_env_seed_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("t.cfg");
    fs::write(&cfg, "method = layermatch\nseed = 1\niterations = 20\neval_every = 10\nn_unlabeled = 40\nn_test = 20\n").unwrap();
    let run = |env: Option<&str>, extra: &[&str], out: &str| {
        let mut c = bin();
        c.args(["train", "--config"]).arg(&cfg).args(extra).arg("--out").arg(tmp.path().join(out));
        match env {
            Some(v) => c.env("LAYERMATCH_SEED", v),
            None => c.env_remove("LAYERMATCH_SEED"),
        };
        let o = c.output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    assert!(run(None, &[], "a").contains("layermatch.seed1:"));
    assert!(run(Some("7"), &[], "b").contains("layermatch.seed7:"));
    assert!(run(Some("7"), &["--seed", "3", "--method", "fixmatch"], "c").contains("fixmatch.seed3:"));
    for d in ["a", "b", "c"] {
        assert!(tmp.path().join(d).join(CHECKPOINT_FILE).is_file());
        assert!(tmp.path().join(d).join(METRICS_FILE).is_file());
    }
    let header = fs::read_to_string(tmp.path().join("a").join(METRICS_FILE)).unwrap();
    assert!(header.starts_with("iteration,loss_s,loss_u,loss_ac,test_acc,gamma,upsilon,tau,lr\n"));
}

#[test]
fn binary_verify_exit_status_follows_the_check() {
    let ok = bin().args(["verify", "--check", "lemma41", "--format", "csv"]).output().unwrap();
    assert!(ok.status.success());
    let out = String::from_utf8(ok.stdout).unwrap();
    assert!(out.starts_with("check,quantity,value,threshold,pass\n"));
    // 1e-9 is far tighter than the h=0.1 discretisation error.
    let bad = bin().args(["verify", "--check", "lemma41", "--tolerance", "1e-9"]).output().unwrap();
    assert!(!bad.status.success());
    assert!(!bin().args(["verify", "--check", "lemma"]).output().unwrap().status.success());
}
