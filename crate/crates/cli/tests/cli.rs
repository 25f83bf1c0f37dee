use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn kbl(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kbl"));
    cmd.args(args).env_remove("KBL_SEED");
    if let Some(s) = seed {
        cmd.env("KBL_SEED", s);
    }
    cmd.output().expect("kbl runs")
}

fn config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TVR: &str = "seed = 0\n[env]\nid = \"tvr-chain\"\n[data]\nn = 2000\n";

#[test]
fn collect_writes_dataset_and_repeats_identically() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "c.toml", TVR);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = kbl(&["collect", arg(&cfg), "--out", arg(out)], None);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let csv = fs::read(a.join("dataset.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&csv).lines().count(), 2001);
    assert_eq!(csv, fs::read(b.join("dataset.csv")).unwrap());
    assert!(a.join("dataset.csv.meta").exists());
    assert!(a.join("manifest.toml").exists() && a.join("config.toml").exists());
}

#[test]
fn collect_rejects_empty_dataset() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "c.toml", &TVR.replace("n = 2000", "n = 0"));
    let o = kbl(&["collect", arg(&cfg), "--out", arg(&tmp.path().join("o"))], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("data.n"));
}

#[test]
fn unknown_env_names_valid_ids() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "c.toml", &TVR.replace("tvr-chain", "lunar-lander"));
    let o = kbl(&["collect", arg(&cfg), "--out", arg(&tmp.path().join("o"))], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("puddle-world"));
}

#[test]
fn unknown_loss_and_keys_listed_together() {
    let tmp = TempDir::new().unwrap();
    let text = format!("{TVR}bogus = 1\n[train]\nloss = \"huber\"\nlearning_rate = 0.1\n");
    let cfg = config(tmp.path(), "c.toml", &text);
    let o = kbl(&["train", arg(&cfg), "--out", arg(&tmp.path().join("o"))], None);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for needle in ["bogus", "train.learning_rate", "kloss-v", "td0"] {
        assert!(err.contains(needle), "missing {needle} in {err}");
    }
    assert!(!tmp.path().join("o").exists(), "nothing is written on a config error");
}

#[test]
fn unwritable_output_is_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "c.toml", TVR);
    let blocker = config(tmp.path(), "file", "");
    let o = kbl(&["collect", arg(&cfg), "--out", arg(&blocker.join("sub"))], None);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn train_is_reproducible_and_honours_seed_override() {
    let tmp = TempDir::new().unwrap();
    let text = format!("{TVR}[train]\nloss = \"kloss-v\"\nepochs = 50\ncheckpoint_every = 25\n");
    let cfg = config(tmp.path(), "c.toml", &text);
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert!(kbl(&["train", arg(&cfg), "--out", arg(&a)], None).status.success());
    assert!(kbl(&["train", arg(&cfg), "--out", arg(&b)], None).status.success());
    assert!(kbl(&["train", arg(&cfg), "--out", arg(&c)], Some("7")).status.success());
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics, fs::read_to_string(b.join("metrics.csv")).unwrap());
    assert_ne!(metrics, fs::read_to_string(c.join("metrics.csv")).unwrap());
    assert!(metrics.starts_with("epoch,loss,mse,bellman,theta_norm,status,mse_train\n"));
    assert_eq!(metrics.lines().count(), 52);
    assert!(fs::read_to_string(c.join("config.toml")).unwrap().contains("seed = 7"));
    assert!(a.join("final.ckpt").exists() && a.join("epoch-000025.ckpt").exists());

    // The snapshot alone reruns the experiment.
    let rerun = tmp.path().join("rerun");
    let snap = a.join("config.toml");
    assert!(kbl(&["train", arg(&snap), "--out", arg(&rerun)], None).status.success());
    assert_eq!(metrics, fs::read_to_string(rerun.join("metrics.csv")).unwrap());
}

#[test]
fn diverged_run_exits_zero() {
    let tmp = TempDir::new().unwrap();
    let text = format!("{TVR}[train]\nloss = \"fvi\"\nepochs = 2000\nmetric_every = 100\n");
    let cfg = config(tmp.path(), "c.toml", &text);
    let o = kbl(&["train", arg(&cfg), "--out", arg(&tmp.path().join("o"))], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let meta = fs::read_to_string(tmp.path().join("o/run.meta")).unwrap();
    assert!(
        meta.contains("status = DIVERGED") || meta.contains("status = OK"),
        "{meta}"
    );
}

#[test]
fn train_mode_verify_emits_table() {
    let tmp = TempDir::new().unwrap();
    let text = "mode = \"verify\"\n[verify]\nmdps = 2\nvalues = 3\nrg_samples = 20000\nbundles = 3\n";
    let cfg = config(tmp.path(), "v.toml", text);
    let o = kbl(&["train", arg(&cfg), "--out", arg(&tmp.path().join("o"))], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(tmp.path().join("o/verify.csv")).unwrap();
    assert_eq!(table.lines().count(), 10);
    assert!(!table.contains("FAIL"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("dual-kernel-identity"));
}

#[test]
fn solve_linear_agrees_with_td() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "s.toml", TVR);
    let out = tmp.path().join("o");
    let o = kbl(&["solve-linear", arg(&cfg), "--out", arg(&out)], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let sol = fs::read_to_string(out.join("solution.csv")).unwrap();
    let rows: Vec<Vec<f64>> = sol
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert!((r[1] - r[2]).abs() <= 1e-8 * r[1].abs().max(1.0));
    }
}

fn metrics_csv(dir: &Path, name: &str, epochs: &[usize]) -> PathBuf {
    let mut s = String::from("epoch,loss,mse,bellman,theta_norm,status,mse_train\n");
    for &e in epochs {
        let x = 1.0 / (e as f64 + 1.0);
        s.push_str(&format!("{e},{x:e},{:e},{x:e},1e0,OK,NaN\n", 2.0 * x));
    }
    config(dir, name, &s)
}

#[test]
fn compare_single_run_one_curve() {
    let tmp = TempDir::new().unwrap();
    let m = metrics_csv(tmp.path(), "only.csv", &[0, 1, 2, 3]);
    let out = tmp.path().join("cmp");
    let o = kbl(&["compare", arg(&m), "--out", arg(&out)], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = fs::read_to_string(out.join("mse.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);
    let caption = fs::read_to_string(out.join("loss_vs_mse.svg")).unwrap();
    assert!(caption.contains("only r=1.000"));
}

#[test]
fn compare_resamples_mismatched_grids() {
    let tmp = TempDir::new().unwrap();
    let fine = metrics_csv(tmp.path(), "fine.csv", &[0, 1, 2, 3, 4]);
    let coarse = metrics_csv(tmp.path(), "coarse.csv", &[0, 2, 4]);
    let out = tmp.path().join("cmp");
    let o = kbl(&["compare", arg(&fine), arg(&coarse), "--out", arg(&out)], None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
    let combined = fs::read_to_string(out.join("combined.csv")).unwrap();
    assert_eq!(combined.lines().count(), 1 + 2 * 3);
    let again = tmp.path().join("cmp2");
    kbl(&["compare", arg(&fine), arg(&coarse), "--out", arg(&again)], None);
    for f in [
        "combined.csv",
        "mse.svg",
        "bellman.svg",
        "loss_vs_mse.svg",
        "correlation.csv",
    ] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn compare_runs_tvr_methods() {
    let tmp = TempDir::new().unwrap();
    let mut inputs = Vec::new();
    for loss in ["kloss-v", "rg", "fvi", "td0"] {
        let text = format!("name = \"{loss}\"\n{TVR}[train]\nloss = \"{loss}\"\nepochs = 2000\nmetric_every = 20\n");
        inputs.push(config(tmp.path(), &format!("{loss}.toml"), &text));
    }
    let out = tmp.path().join("cmp");
    let mut args = vec!["compare"];
    args.extend(inputs.iter().map(|p| arg(p)));
    args.extend(["--out", arg(&out)]);
    let o = kbl(&args, None);
    assert!(o.status.success(), "{}", stderr(&o));
    let combined = fs::read_to_string(out.join("combined.csv")).unwrap();
    let final_mse = |run: &str| -> f64 {
        let row = combined
            .lines()
            .filter(|l| l.starts_with(&format!("{run},")))
            .rfind(|l| !l.ends_with("ABSENT"))
            .unwrap();
        row.split(',').nth(3).unwrap().parse().unwrap()
    };
    let k = final_mse("kloss-v");
    assert!(k < final_mse("rg"));
    assert!(k < 1e-3);
    for run in ["fvi", "td0"] {
        let m = final_mse(run);
        assert!(m.is_nan() || m >= 100.0 * k, "{run} mse {m} vs kloss {k}");
    }
    assert_eq!(
        fs::read_to_string(out.join("mse.svg"))
            .unwrap()
            .matches("<rect x=")
            .count()
            - 1,
        4
    );
}

#[test]
fn policy_opt_smoke() {
    let tmp = TempDir::new().unwrap();
    let text = "mode = \"policy-opt\"\nseed = 0\n[policy]\niterations = 20\neval_every = 10\neval_episodes = 2\nhidden = [8]\nbatch_size = 4\nepisode_len = 20\n";
    let cfg = config(tmp.path(), "p.toml", text);
    let out = tmp.path().join("o");
    let o = kbl(&["train", arg(&cfg), "--out", arg(&out)], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.lines().next().unwrap().ends_with("return_mean,return_std"));
    assert_eq!(metrics.lines().count(), 4);
    assert!(out.join("value.ckpt").exists() && out.join("policy.ckpt").exists());
}
