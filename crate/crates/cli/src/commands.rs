//! Subcommand drivers. Each one reads and validates its whole config, writes
//! the manifest, and only then computes.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use kbl_core::envs::TransitionDataset;
use kbl_core::io::{self, Checkpoint};
use kbl_core::linear::{self, LinearSystemBundle};
use kbl_core::policy_opt::{run_policy_optimization, PolicyLog};
use kbl_core::trainer::{grid_search, run_evaluation_experiment, MetricLog, TrainConfig};
use kbl_core::value_fn::{Activation, Architecture, FeatureMap};

use crate::chart::{self, Series};
use crate::config::{Config, ConfigError, Value};
use crate::experiment::{self, DataSource};
use crate::manifest::RunManifest;
use crate::verify::{self, VerifySettings};

pub const DATASET_FILE: &str = "dataset.csv";
pub const METRICS_FILE: &str = "metrics.csv";

/// Output directory: `--out` wins over `output.dir`.
fn output_dir(c: &Config, out: Option<&Path>, default: &str) -> PathBuf {
    let from_config = PathBuf::from(c.str_or("output.dir", default));
    out.map(Path::to_path_buf).unwrap_or(from_config)
}

/// Fails on config errors, then freezes the effective seed and output
/// directory into the snapshot and writes the manifest.
fn start(command: &str, c: &mut Config, seed: u64, dir: &Path, inputs: &[PathBuf]) -> anyhow::Result<RunManifest> {
    c.finish()?;
    c.set("seed", Value::Int(seed as i64));
    c.set("output.dir", Value::Str(dir.display().to_string()));
    let mut m = RunManifest::new(command, c.snapshot(), seed, dir);
    for p in inputs {
        m.add_input(p)?;
    }
    m.write()?;
    Ok(m)
}

fn write(dir: &Path, name: &str, text: impl AsRef<[u8]>) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn collect(config: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let mut c = Config::load(config)?;
    let seed = c.seed();
    let settings = experiment::env_settings(&c, seed);
    if c.contains("data.path") {
        c.invalid("data.path", "collect writes a dataset; it does not read one");
    }
    let policy = c.opt_str("env.policy");
    if let (Some(p), Some(s)) = (&policy, &settings) {
        if p != s.env.policy_id() {
            c.invalid(
                "env.policy",
                format!("{} is evaluated under {:?}", s.env.kind().name(), s.env.policy_id()),
            );
        }
    }
    let dir = output_dir(&c, out, "out/collect");
    start("collect", &mut c, seed, &dir, &[])?;
    let settings = settings.expect("validated");
    let ds = settings.dataset()?;
    io::write_dataset(&dir.join(DATASET_FILE), &ds)?;
    println!("wrote {} transitions to {}", ds.len(), dir.join(DATASET_FILE).display());
    Ok(())
}

fn dataset_inputs(settings: &experiment::EnvSettings) -> Vec<PathBuf> {
    match &settings.data {
        DataSource::File(p) => vec![p.clone(), io::sidecar_path(p)],
        DataSource::Collect { .. } => Vec::new(),
    }
}

fn data_len(settings: &experiment::EnvSettings) -> anyhow::Result<usize> {
    match &settings.data {
        DataSource::File(p) => {
            let ds = io::read_dataset(p).map_err(|e| ConfigError::one(format!("data.path {}: {e}", p.display())))?;
            Ok(ds.len())
        }
        DataSource::Collect { n, .. } => Ok(*n),
    }
}

pub fn train(config: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let c = Config::load(config)?;
    let mode = c.str_or("mode", "evaluate");
    match mode.as_str() {
        "evaluate" => train_evaluate(c, out),
        "policy-opt" => train_policy(c, out),
        "verify" => verify_with(c, out, "train"),
        other => Err(ConfigError::one(format!(
            "`mode` = {other:?} is not one of: evaluate, policy-opt, verify"
        ))
        .into()),
    }
}

/// Everything an evaluation run needs, read from the config.
pub struct EvaluationPlan {
    pub name: String,
    pub settings: experiment::EnvSettings,
    pub grid: experiment::GridSettings,
    pub hidden: Vec<usize>,
    pub cfg: TrainConfig,
    pub search: Option<experiment::SearchSettings>,
}

pub fn evaluation_plan(c: &Config, default_name: &str) -> anyhow::Result<Option<EvaluationPlan>> {
    let seed = c.seed();
    let name = c.str_or("name", default_name);
    let Some(settings) = experiment::env_settings(c, seed) else {
        return Ok(None);
    };
    let n = data_len(&settings)?;
    let hidden = c.sizes_or("model.hidden", &[80]);
    let grid = experiment::grid_settings(c, Some(&settings.env));
    let search = experiment::search_settings(c);
    let Some(cfg) = experiment::train_config(c, Some(&settings.env), n, seed) else {
        return Ok(None);
    };
    if cfg.batch_size > n {
        c.invalid(
            "train.batch_size",
            format!("{} exceeds the {n} available transitions", cfg.batch_size),
        );
    }
    Ok(Some(EvaluationPlan {
        name,
        settings,
        grid,
        hidden,
        cfg,
        search,
    }))
}

pub struct EvaluationOutcome {
    pub log: MetricLog,
    pub arch: Architecture,
    /// `(lr, mean score)` per sweep entry when a search ran.
    pub sweep: Vec<(f64, f64)>,
    pub chosen_lr: Option<f64>,
}

pub fn run_plan(plan: &EvaluationPlan) -> anyhow::Result<EvaluationOutcome> {
    let ds: TransitionDataset = plan.settings.dataset()?;
    let problem = experiment::evaluation_problem(&plan.settings.env, &ds, &plan.grid, &plan.hidden, plan.cfg.gamma)?;
    match &plan.search {
        None => Ok(EvaluationOutcome {
            log: run_evaluation_experiment(&problem, &plan.cfg)?,
            arch: problem.arch,
            sweep: Vec::new(),
            chosen_lr: None,
        }),
        Some(s) => {
            let configs: Vec<TrainConfig> = s.lrs.iter().map(|&lr| TrainConfig { lr, ..plan.cfg.clone() }).collect();
            let r = grid_search(&configs, &problem, s.trials, s.metric)?;
            let sweep = s.lrs.iter().copied().zip(r.scores.iter().copied()).collect();
            Ok(EvaluationOutcome {
                log: r.best_log().clone(),
                arch: problem.arch,
                sweep,
                chosen_lr: Some(s.lrs[r.best]),
            })
        }
    }
}

fn train_evaluate(mut c: Config, out: Option<&Path>) -> anyhow::Result<()> {
    let plan = evaluation_plan(&c, "run")?;
    let dir = output_dir(&c, out, "out/train");
    let inputs = plan.as_ref().map(|p| dataset_inputs(&p.settings)).unwrap_or_default();
    let seed = c.seed();
    start("train", &mut c, seed, &dir, &inputs)?;
    let plan = plan.expect("validated");
    let result = run_plan(&plan)?;
    let log = &result.log;
    write(&dir, METRICS_FILE, log.to_csv())?;
    Checkpoint::for_value(&result.arch, &log.final_params).save(&dir.join("final.ckpt"))?;
    for (epoch, params) in &log.checkpoints {
        Checkpoint::for_value(&result.arch, params).save(&dir.join(format!("epoch-{epoch:06}.ckpt")))?;
    }
    let last = log.last();
    let mut meta = vec![
        ("name", plan.name.clone()),
        ("env", plan.settings.env.kind().name().to_string()),
        ("loss", plan.cfg.loss.name().to_string()),
        ("lr", format!("{:e}", plan.cfg.lr)),
        ("status", log.status.name().to_string()),
        ("epochs_completed", last.epoch.to_string()),
        ("final_mse", format!("{:e}", last.mse)),
        ("final_bellman", format!("{:e}", last.bellman)),
        ("final_theta_norm", format!("{:e}", last.theta_norm)),
    ];
    if let Some(lr) = result.chosen_lr {
        let mut csv = String::from("lr,mean_score\n");
        for (lr, score) in &result.sweep {
            csv.push_str(&format!("{lr:e},{score:e}\n"));
        }
        write(&dir, "search.csv", csv)?;
        meta[3] = ("lr", format!("{lr:e}"));
    }
    write(&dir, "run.meta", io::format_kv(&meta))?;
    println!(
        "{} on {}: status {} after {} epochs, final mse {:e}",
        plan.cfg.loss.name(),
        plan.settings.env.kind().name(),
        log.status.name(),
        last.epoch,
        last.mse
    );
    Ok(())
}

fn train_policy(mut c: Config, out: Option<&Path>) -> anyhow::Result<()> {
    let seed = c.seed();
    let cfg = experiment::policy_config(&c, seed);
    let dir = output_dir(&c, out, "out/policy");
    start("train", &mut c, seed, &dir, &[])?;
    let cfg = cfg.expect("validated");
    let log: PolicyLog = run_policy_optimization(&cfg)?;
    write(&dir, METRICS_FILE, log.to_csv())?;
    let value_arch = Architecture::mlp(
        kbl_core::policy_opt::PendulumToy::OBS_DIM,
        &cfg.hidden,
        Activation::Tanh,
    )?;
    Checkpoint::for_value(&value_arch, &log.value_params).save(&dir.join("value.ckpt"))?;
    let widths: Vec<String> = std::iter::once(kbl_core::policy_opt::PendulumToy::OBS_DIM)
        .chain(cfg.hidden.iter().copied())
        .chain(std::iter::once(1))
        .map(|w| w.to_string())
        .collect();
    Checkpoint {
        kind: "gaussian-policy".into(),
        arch: format!("mlp:{}:tanh+log-std:1", widths.join("-")),
        params: log.policy_params.clone(),
    }
    .save(&dir.join("policy.ckpt"))?;
    write(
        &dir,
        "run.meta",
        io::format_kv(&[
            ("status", log.status.name().to_string()),
            ("initial_return", format!("{:e}", log.first_return())),
            ("final_return", format!("{:e}", log.final_return())),
        ]),
    )?;
    println!(
        "policy optimization: status {}, return {:.3} -> {:.3}",
        log.status.name(),
        log.first_return(),
        log.final_return()
    );
    Ok(())
}

/// Outcome of the identity suite; failures map to the numerical exit code.
#[derive(Debug)]
pub struct VerificationFailed(pub usize);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} verification check(s) failed", self.0)
    }
}

impl std::error::Error for VerificationFailed {}

pub fn verify(config: Option<&Path>, out: Option<&Path>) -> anyhow::Result<()> {
    let c = match config {
        Some(p) => Config::load(p)?,
        None => Config::parse("")?,
    };
    verify_with(c, out, "verify")
}

fn verify_with(mut c: Config, out: Option<&Path>, command: &str) -> anyhow::Result<()> {
    c.str_or("mode", "verify");
    let seed = c.seed();
    let d = VerifySettings::default();
    let s = VerifySettings {
        n_mdps: c.usize_or("verify.mdps", d.n_mdps),
        n_states: c.usize_or("verify.states", d.n_states),
        n_actions: c.usize_or("verify.actions", d.n_actions),
        values_per_mdp: c.usize_or("verify.values", d.values_per_mdp),
        gamma: c.real_or("verify.gamma", d.gamma),
        rg_samples: c.usize_or("verify.rg_samples", d.rg_samples),
        n_bundles: c.usize_or("verify.bundles", d.n_bundles),
        seed,
    };
    if s.n_mdps == 0 || s.n_states < 2 || s.n_actions == 0 || s.values_per_mdp == 0 || s.n_bundles == 0 {
        c.invalid("verify", "needs at least one instance of each kind and two states");
    }
    if s.rg_samples < 2 {
        c.invalid("verify.rg_samples", "must be at least 2");
    }
    if !(s.gamma > 0.0 && s.gamma < 1.0) {
        c.invalid("verify.gamma", "must lie in (0, 1)");
    }
    let dir = output_dir(&c, out, "out/verify");
    start(command, &mut c, seed, &dir, &[])?;
    let rows = verify::run_suite(&s)?;
    write(&dir, "verify.csv", verify::table_csv(&rows))?;
    print!("{}", verify::table_text(&rows));
    let failed = rows.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(VerificationFailed(failed).into());
    }
    Ok(())
}

pub fn solve_linear(config: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let mut c = Config::load(config)?;
    let seed = c.seed();
    let settings = experiment::env_settings(&c, seed);
    let default_features = match &settings {
        Some(s) if s.env.chain().is_some() => "env",
        _ => "raw",
    };
    let features = c.str_or("linear.features", default_features);
    let chain_gamma = settings
        .as_ref()
        .and_then(|s| s.env.chain())
        .map(|spec| spec.mdp.discount());
    let gamma = c.real_or("linear.gamma", chain_gamma.unwrap_or(0.98));
    let ridge = c.real_or("linear.ridge", 0.0);
    if ridge < 0.0 {
        c.invalid("linear.ridge", "must be nonnegative");
    }
    if !(0.0..=1.0).contains(&gamma) {
        c.invalid("linear.gamma", "must lie in [0, 1]");
    }
    let is_chain = settings.as_ref().is_some_and(|s| s.env.chain().is_some());
    match features.as_str() {
        "env" | "onehot" if !is_chain => {
            c.invalid("linear.features", format!("{features:?} needs a chain environment"))
        }
        "env" | "onehot" | "raw" => {}
        other => c.invalid("linear.features", format!("{other:?} is not one of: env, onehot, raw")),
    }
    let dir = output_dir(&c, out, "out/solve-linear");
    let inputs = settings.as_ref().map(dataset_inputs).unwrap_or_default();
    start("solve-linear", &mut c, seed, &dir, &inputs)?;
    let settings = settings.expect("validated");
    let ds = settings.dataset()?;
    let (batch, fm) = match (features.as_str(), settings.env.chain()) {
        ("env", Some(spec)) => (ds.transitions.clone(), spec.feature_map()),
        ("onehot", Some(spec)) => (ds.transitions.clone(), FeatureMap::OneHot { n: spec.mdp.n_states() }),
        _ => {
            // Normalized state with a constant feature appended.
            let env = &settings.env;
            let aug = ds.map_states(|s| {
                let mut x = env.normalize(s);
                x.push(1.0);
                x
            });
            (
                aug.transitions,
                FeatureMap::Raw {
                    dim: ds.state_dim() + 1,
                },
            )
        }
    };
    let bundle = LinearSystemBundle::from_transitions(&batch, &fm, gamma)?;
    let td = linear::td_closed_form(&bundle)?;
    let kbe = if ridge > 0.0 {
        linear::kloss_closed_form_ridge(&bundle, ridge)?
    } else {
        linear::kloss_closed_form(&bundle)?
    };
    let mut csv = String::from("index,td,kbe\n");
    for i in 0..td.len() {
        csv.push_str(&format!("{i},{:e},{:e}\n", td[i], kbe[i]));
    }
    write(&dir, "solution.csv", csv)?;
    let rel = (&kbe - &td).norm() / td.norm().max(f64::MIN_POSITIVE);
    write(
        &dir,
        "solve.meta",
        io::format_kv(&[
            ("features", features.clone()),
            ("dim", td.len().to_string()),
            ("gamma", format!("{gamma:e}")),
            ("ridge", format!("{ridge:e}")),
            (
                "td_condition",
                format!("{:e}", linear::condition_number(&bundle.td_matrix())),
            ),
            ("relative_difference", format!("{rel:e}")),
            ("neu_td", format!("{:e}", bundle.neu_loss(&td))),
            ("neu_kbe", format!("{:e}", bundle.neu_loss(&kbe))),
        ]),
    )?;
    println!("solved {}-dimensional system: |kbe - td| / |td| = {rel:e}", td.len());
    Ok(())
}

/// One run on the shared epoch grid.
pub struct AlignedRun {
    pub label: String,
    pub epochs: Vec<f64>,
    pub columns: Vec<(String, Vec<f64>)>,
    pub status: Vec<String>,
}

const COMPARE_COLUMNS: [&str; 4] = ["loss", "mse", "bellman", "theta_norm"];

struct RawRun {
    label: String,
    table: io::Table,
}

fn load_input(path: &Path, index: usize, work: &Path) -> anyhow::Result<RawRun> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| format!("run{index}"));
    if path.extension().is_some_and(|e| e == "csv") {
        let table = io::read_table(path).map_err(|e| ConfigError::one(format!("{}: {e}", path.display())))?;
        for col in ["epoch", "status"].iter().chain(COMPARE_COLUMNS.iter()) {
            if table.column(col).is_none() {
                return Err(ConfigError::one(format!("{}: missing column `{col}`", path.display())).into());
            }
        }
        // `runs/foo/metrics.csv` is labelled `foo`
        let label = match path.parent().and_then(|d| d.file_name()) {
            Some(dir) if stem == "metrics" => dir.to_string_lossy().to_string(),
            _ => stem,
        };
        return Ok(RawRun { label, table });
    }
    let c = Config::load(path)?;
    let mode = c.str_or("mode", "evaluate");
    if mode != "evaluate" {
        return Err(ConfigError::one(format!(
            "{}: compare runs evaluation configs, got mode {mode:?}",
            path.display()
        ))
        .into());
    }
    let plan = evaluation_plan(&c, &stem)?;
    c.finish()
        .map_err(|e| ConfigError(e.0.into_iter().map(|m| format!("{}: {m}", path.display())).collect()))?;
    let plan = plan.expect("validated");
    let result = run_plan(&plan)?;
    let csv_path = work.join(format!("{:02}-{}.csv", index, plan.name));
    fs::write(&csv_path, result.log.to_csv())?;
    Ok(RawRun {
        label: plan.name,
        table: io::read_table(&csv_path)?,
    })
}

/// Value at `epoch` by linear interpolation; NaN outside the logged range.
fn sample(epochs: &[f64], values: &[f64], epoch: f64) -> f64 {
    match epochs.iter().position(|&e| e >= epoch) {
        Some(i) if epochs[i] == epoch => values[i],
        Some(0) | None => f64::NAN,
        Some(i) => {
            let (e0, e1) = (epochs[i - 1], epochs[i]);
            let t = (epoch - e0) / (e1 - e0);
            values[i - 1] + t * (values[i] - values[i - 1])
        }
    }
}

/// Puts every run on the coarsest epoch spacing among the inputs, extended
/// to the longest run; returns whether any run had to be resampled.
pub fn align(runs: &[(String, io::Table)]) -> (Vec<f64>, Vec<AlignedRun>, bool) {
    let epochs: Vec<Vec<f64>> = runs.iter().map(|(_, t)| t.reals("epoch").unwrap_or_default()).collect();
    let step = |e: &Vec<f64>| if e.len() >= 2 { e[1] - e[0] } else { 1.0 };
    let coarsest = epochs.iter().map(step).fold(1.0, f64::max);
    let last = epochs.iter().filter_map(|e| e.last().copied()).fold(0.0, f64::max);
    let mut grid: Vec<f64> = (0..).map(|k| k as f64 * coarsest).take_while(|&e| e <= last).collect();
    if grid.last() != Some(&last) {
        grid.push(last);
    }
    let mut resampled = false;
    let aligned = runs
        .iter()
        .zip(&epochs)
        .map(|((label, table), ep)| {
            if step(ep) != coarsest {
                resampled = true;
            }
            let columns = COMPARE_COLUMNS
                .iter()
                .map(|name| {
                    let v = table.reals(name).unwrap_or_default();
                    (name.to_string(), grid.iter().map(|&g| sample(ep, &v, g)).collect())
                })
                .collect();
            let sj = table.column("status").unwrap_or(0);
            let status = grid
                .iter()
                .map(|&g| match ep.iter().rposition(|&e| e <= g) {
                    Some(i) if g <= *ep.last().unwrap() => table.rows[i][sj].clone(),
                    _ => "ABSENT".to_string(),
                })
                .collect();
            AlignedRun {
                label: label.clone(),
                epochs: grid.clone(),
                columns,
                status,
            }
        })
        .collect();
    (grid, aligned, resampled)
}

pub fn combined_csv(runs: &[AlignedRun]) -> String {
    let mut out = String::from("run,epoch,loss,mse,bellman,theta_norm,status\n");
    for r in runs {
        for (i, e) in r.epochs.iter().enumerate() {
            out.push_str(&format!("{},{}", r.label, e));
            for (_, col) in &r.columns {
                out.push_str(&format!(",{:e}", col[i]));
            }
            out.push_str(&format!(",{}\n", r.status[i]));
        }
    }
    out
}

fn column<'a>(r: &'a AlignedRun, name: &str) -> &'a [f64] {
    &r.columns.iter().find(|(n, _)| n == name).expect("known column").1
}

pub fn compare(inputs: &[PathBuf], out: &Path) -> anyhow::Result<()> {
    if inputs.is_empty() {
        return Err(ConfigError::one("compare needs at least one config or metrics CSV").into());
    }
    let seed_note = std::env::var(crate::config::SEED_ENV)
        .ok()
        .and_then(|s| s.parse::<u64>().ok())
        .unwrap_or(0);
    let mut listing = String::new();
    for p in inputs {
        listing.push_str(&format!("input = {:?}\n", p.display().to_string()));
    }
    let mut m = RunManifest::new("compare", listing, seed_note, out);
    for p in inputs {
        m.add_input(p)?;
    }
    m.write()?;
    let work = out.join("runs");
    crate::manifest::prepare_dir(&work)?;
    let mut raw = Vec::new();
    for (i, p) in inputs.iter().enumerate() {
        let r = load_input(p, i, &work)?;
        raw.push((r.label, r.table));
    }
    let mut seen = std::collections::BTreeMap::new();
    for (label, _) in raw.iter_mut() {
        let n = seen.entry(label.clone()).or_insert(0usize);
        *n += 1;
        if *n > 1 {
            *label = format!("{label}-{n}");
        }
    }
    let (_, runs, resampled) = align(&raw);
    if resampled {
        eprintln!("warning: epoch grids differ; all runs resampled to the coarsest grid");
    }
    write(out, "combined.csv", combined_csv(&runs))?;
    let series = |name: &str| -> Vec<Series> {
        runs.iter()
            .map(|r| Series {
                name: r.label.clone(),
                points: r.epochs.iter().copied().zip(column(r, name).iter().copied()).collect(),
            })
            .collect()
    };
    write(
        out,
        "mse.svg",
        chart::line_chart("MSE vs. epoch", "epoch", "MSE (log10)", &series("mse"), true),
    )?;
    write(
        out,
        "bellman.svg",
        chart::line_chart(
            "Empirical Bellman error vs. epoch",
            "epoch",
            "Bellman error (log10)",
            &series("bellman"),
            true,
        ),
    )?;
    let scatter: Vec<Series> = runs
        .iter()
        .map(|r| Series {
            name: r.label.clone(),
            points: column(r, "loss")
                .iter()
                .copied()
                .zip(column(r, "mse").iter().copied())
                .collect(),
        })
        .collect();
    let mut corr_csv = String::from("run,pearson_r,points\n");
    let mut caption = Vec::new();
    for s in &scatter {
        let r = chart::pearson(&s.points);
        let n = s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).count();
        let shown = r.map_or("n/a".to_string(), |r| format!("{r:.3}"));
        caption.push(format!("{} r={shown}", s.name));
        corr_csv.push_str(&format!(
            "{},{},{n}\n",
            s.name,
            r.map_or("NaN".to_string(), |r| format!("{r:e}"))
        ));
    }
    write(out, "correlation.csv", corr_csv)?;
    write(
        out,
        "loss_vs_mse.svg",
        chart::scatter_chart(
            "Loss vs. MSE",
            "training loss",
            "MSE",
            &scatter,
            &format!("Pearson {}", caption.join(", ")),
            false,
        ),
    )?;
    println!("compared {} run(s); wrote {}", runs.len(), out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(epochs: &[f64], mse: &[f64]) -> io::Table {
        io::Table {
            columns: ["epoch", "loss", "mse", "bellman", "theta_norm", "status"]
                .map(String::from)
                .to_vec(),
            rows: epochs
                .iter()
                .zip(mse)
                .map(|(e, m)| {
                    vec![
                        e.to_string(),
                        "1".into(),
                        m.to_string(),
                        "2".into(),
                        "3".into(),
                        "OK".into(),
                    ]
                })
                .collect(),
        }
    }

    #[test]
    fn identical_grids_pass_through() {
        let a = table(&[0.0, 1.0, 2.0], &[3.0, 2.0, 1.0]);
        let (grid, runs, resampled) = align(&[("a".into(), a.clone()), ("b".into(), a)]);
        assert_eq!(grid, vec![0.0, 1.0, 2.0]);
        assert!(!resampled);
        assert_eq!(column(&runs[1], "mse"), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn finer_grid_resampled_to_coarsest() {
        let fine = table(&[0.0, 1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0, 0.0]);
        let coarse = table(&[0.0, 2.0, 4.0], &[10.0, 20.0, 30.0]);
        let (grid, runs, resampled) = align(&[("f".into(), fine), ("c".into(), coarse)]);
        assert!(resampled);
        assert_eq!(grid, vec![0.0, 2.0, 4.0]);
        assert_eq!(column(&runs[0], "mse"), &[4.0, 2.0, 0.0]);
    }

    #[test]
    fn early_stopped_run_padded() {
        let long = table(&[0.0, 1.0, 2.0, 3.0], &[1.0; 4]);
        let short = table(&[0.0, 1.0], &[5.0, 6.0]);
        let (_, runs, resampled) = align(&[("l".into(), long), ("s".into(), short)]);
        assert!(!resampled);
        let m = column(&runs[1], "mse");
        assert_eq!(&m[..2], &[5.0, 6.0]);
        assert!(m[2].is_nan() && m[3].is_nan());
        assert_eq!(runs[1].status[3], "ABSENT");
    }

    #[test]
    fn interpolation_between_records() {
        assert_eq!(sample(&[0.0, 10.0], &[0.0, 1.0], 5.0), 0.5);
        assert!(sample(&[0.0, 10.0], &[0.0, 1.0], 11.0).is_nan());
    }
}
