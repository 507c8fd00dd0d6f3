use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use proxipush::cpm::{classification_accuracy, location_rmse, train as fit};
use proxipush::pipeline::{
    build_windows, collect_dataset, generate_target_grid, metrics_csv, min_distance_csv, push_plan, read_dataset,
    read_trial_log, resummarize, run_trials, success_table_csv, suite_metrics, training_plan, write_dataset,
    write_trial_log, DatasetHeader, LSource, TickRow, DATASET_FORMAT,
};
use proxipush::{
    load_model, save_model, wilcoxon_signed_rank, ContactEstimator, ContactType, Cpm, GridSpec, LstmModel,
    ModelKind, SensingMode, SwapPointLine, TrialKind, TrialLog, TrialSummary, WorkbenchConfig,
};

use crate::outcome::Failure;

pub const MANIFEST_FORMAT: &str = "proxipush-manifest";
/// Evaluation trial ids start here so they never collide with dataset trials.
pub const EVAL_FIRST_ID: u64 = 1000;

pub struct Global {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub force: bool,
    pub out: Option<PathBuf>,
}

impl Global {
    fn workbench(&self) -> Result<WorkbenchConfig> {
        let mut wb = match &self.config {
            Some(p) => WorkbenchConfig::load(p)?,
            None => WorkbenchConfig::default(),
        };
        if let Some(s) = self.seed {
            wb.seed = s;
        }
        if let Some(o) = &self.out {
            wb.output_dir = o.clone();
        }
        wb.validate()?;
        Ok(wb)
    }
}

fn announce(wb: &WorkbenchConfig) {
    println!("config_hash={}", wb.hash());
}

fn is_nonempty_dir(p: &Path) -> bool {
    fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTrial {
    pub trial_id: u64,
    pub split: String,
    pub kind: TrialKind,
    pub object: String,
    pub friction: String,
    pub target: [f64; 2],
    pub seed: u64,
    pub ticks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    /// Descriptor length per tick.
    pub features: usize,
    pub objects: Vec<String>,
    pub friction_sets: Vec<String>,
    pub train_targets: usize,
    pub val_targets: usize,
    /// objects × friction sets × train targets.
    pub train_push_trials: usize,
    pub no_contact_trials: usize,
    pub train_trials: usize,
    /// objects × friction sets × validation targets.
    pub val_trials: usize,
    pub train_ticks: usize,
    pub val_ticks: usize,
    pub trials: Vec<ManifestTrial>,
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| Failure::validation(format!("no dataset manifest at {}: {e}", path.display())))?;
    let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if m.format != MANIFEST_FORMAT {
        return Err(Failure::validation(format!("{} is not a dataset manifest", path.display())));
    }
    Ok(m)
}

pub fn collect(g: &Global, objects: &[String]) -> Result<()> {
    let mut wb = g.workbench()?;
    if !objects.is_empty() {
        for name in objects {
            wb.object(name)?;
        }
        wb.world.objects.retain(|o| objects.contains(&o.name));
    }
    announce(&wb);
    let out = wb.output_dir.clone();
    if is_nonempty_dir(&out) && !g.force {
        return Err(Failure::validation(format!(
            "output directory {} is not empty (use --force to write into it)",
            out.display()
        )));
    }
    fs::create_dir_all(out.join("logs")).with_context(|| format!("creating {}", out.display()))?;

    let data = collect_dataset(&wb)?;
    let hash = wb.hash();
    let header = |split: &str, logs: &[TrialLog]| DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: 1,
        config_hash: hash.clone(),
        split: split.into(),
        trials: logs.iter().map(|l| l.config.clone()).collect(),
    };
    write_dataset(create(&out.join("train.jsonl"))?, &header("train", &data.train), &data.train)?;
    write_dataset(create(&out.join("val.jsonl"))?, &header("val", &data.val), &data.val)?;
    for log in data.train.iter().chain(&data.val) {
        let path = out.join("logs").join(format!("trial_{:05}.jsonl", log.config.trial_id));
        write_trial_log(create(&path)?, log, &hash)?;
    }

    let train_targets = generate_target_grid(&wb.protocol.train_grid).len();
    let val_targets = generate_target_grid(&wb.protocol.val_grid).len();
    let per_target = wb.world.objects.len() * wb.world.friction_sets.len();
    let entry = |split: &str, l: &TrialLog| ManifestTrial {
        trial_id: l.config.trial_id,
        split: split.into(),
        kind: l.config.kind,
        object: l.config.object.clone(),
        friction: l.config.friction.clone(),
        target: l.config.target,
        seed: l.config.seed,
        ticks: l.ticks.len(),
    };
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        config_hash: hash.clone(),
        seed: wb.seed,
        features: wb.descriptor.s(),
        objects: wb.world.objects.iter().map(|o| o.name.clone()).collect(),
        friction_sets: wb.world.friction_sets.iter().map(|f| f.name.clone()).collect(),
        train_targets,
        val_targets,
        train_push_trials: per_target * train_targets,
        no_contact_trials: wb.protocol.no_contact_trials,
        train_trials: data.train.len(),
        val_trials: data.val.len(),
        train_ticks: data.train.iter().map(|l| l.ticks.len()).sum(),
        val_ticks: data.val.iter().map(|l| l.ticks.len()).sum(),
        trials: data
            .train
            .iter()
            .map(|l| entry("train", l))
            .chain(data.val.iter().map(|l| entry("val", l)))
            .collect(),
    };
    debug_assert_eq!(manifest.train_trials, training_plan(&wb, 0).len());
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_text(&out.join("manifest.json"), &json)?;
    write_text(&out.join("config.toml"), &wb.to_toml())?;

    println!("train_trials={}", manifest.train_trials);
    println!("val_trials={}", manifest.val_trials);
    println!("train_ticks={}", manifest.train_ticks);
    println!("val_ticks={}", manifest.val_ticks);
    println!("out={}", out.display());
    Ok(())
}

fn load_split(dir: &Path, split: &str, features: usize) -> Result<Vec<Vec<TickRow>>> {
    let path = dir.join(format!("{split}.jsonl"));
    let f = File::open(&path).map_err(|e| Failure::validation(format!("cannot open {}: {e}", path.display())))?;
    let (header, rows): (DatasetHeader, _) =
        read_dataset(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
    if header.split != split {
        return Err(Failure::validation(format!(
            "{} holds the {:?} split, expected {split:?}",
            path.display(),
            header.split
        )));
    }
    let rows: Vec<Vec<TickRow>> = rows;
    if let Some(r) = rows.iter().flatten().find(|r| r.norms.len() != features) {
        return Err(Failure::validation(format!(
            "{}: trial {} has {} features per tick, manifest declares {features}",
            path.display(),
            r.trial_id,
            r.norms.len()
        )));
    }
    Ok(rows)
}

pub fn train(g: &Global, dataset: &Path, kind: ModelKind) -> Result<()> {
    let wb = g.workbench()?;
    announce(&wb);
    let manifest = read_manifest(dataset)?;
    if manifest.features != wb.descriptor.s() {
        return Err(Failure::validation(format!(
            "dataset has {} features per tick but the config's descriptor produces {}",
            manifest.features,
            wb.descriptor.s()
        )));
    }
    let tr = load_split(dataset, "train", manifest.features)?;
    let va = load_split(dataset, "val", manifest.features)?;
    let stride = wb.protocol.window_stride;
    let train_set = build_windows(&tr, kind, stride)?;
    let val_set = build_windows(&va, kind, stride)?;
    match kind {
        ModelKind::Cle if train_set.is_empty() || val_set.is_empty() => {
            return Err(Failure::validation("dataset has no contact ticks to train a cle model on"));
        }
        ModelKind::Cte => {
            let present: Vec<bool> = (0..ContactType::ALL.len())
                .map(|c| train_set.targets.iter().any(|&t| t as usize == c))
                .collect();
            if present.iter().any(|p| !p) {
                return Err(Failure::validation(format!(
                    "dataset lacks some contact classes needed for a cte model (present: {present:?})"
                )));
            }
        }
        _ => {}
    }

    let out = wb.output_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let model_path = out.join(format!("{kind}.model"));
    let curve_path = out.join(format!("{kind}_curve.csv"));
    if model_path.exists() && !g.force {
        return Err(Failure::validation(format!(
            "{} exists (use --force to overwrite)",
            model_path.display()
        )));
    }

    let outcome = fit(&train_set, &val_set, kind, &wb.train)?;
    save_model(&outcome.model, &model_path)?;
    let mut w = csv::Writer::from_writer(create(&curve_path)?);
    for s in &outcome.curve {
        w.serialize(s)?;
    }
    w.flush()?;

    let full_val = build_windows(&va, kind, 1)?;
    println!("train_windows={}", train_set.len());
    println!("val_windows={}", val_set.len());
    println!("epochs_run={}", outcome.model.meta.epochs_run);
    println!("best_epoch={}", outcome.model.meta.best_epoch);
    println!("best_val_loss={}", outcome.model.meta.best_val_loss);
    match kind {
        ModelKind::Cle => println!("val_rmse={}", location_rmse(&outcome.model, &full_val)?),
        ModelKind::Cte => println!("val_accuracy={}", classification_accuracy(&outcome.model, &full_val)?),
    }
    println!("model={}", model_path.display());
    Ok(())
}

fn load_kind(dir: &Path, kind: ModelKind) -> Result<LstmModel> {
    let path = dir.join(format!("{kind}.model"));
    if !path.exists() {
        return Err(Failure::validation(format!("missing {kind} model: {} not found", path.display())));
    }
    let m = load_model(&path)?;
    if m.kind != kind {
        return Err(Failure::validation(format!("{} holds a {} model, expected {kind}", path.display(), m.kind)));
    }
    Ok(m)
}

#[derive(Debug, Deserialize)]
struct TargetRow {
    x: f64,
    y: f64,
}

fn targets_for(wb: &WorkbenchConfig, grid: &str) -> Result<(String, Vec<[f64; 2]>)> {
    let spec = match grid {
        "train" => wb.protocol.train_grid.clone(),
        "val" => wb.protocol.val_grid.clone(),
        path => {
            let mut rd = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_path(path)
                .map_err(|e| Failure::validation(format!("cannot read grid file {path}: {e}")))?;
            let mut points = Vec::new();
            for (i, row) in rd.deserialize::<TargetRow>().enumerate() {
                let r = row.map_err(|e| Failure::validation(format!("grid file {path}, row {}: {e}", i + 2)))?;
                if !(r.x.is_finite() && r.y.is_finite()) {
                    return Err(Failure::validation(format!("grid file {path}, row {}: non-finite target", i + 2)));
                }
                points.push([r.x, r.y]);
            }
            GridSpec::Points { points }
        }
    };
    let targets = generate_target_grid(&spec);
    if targets.is_empty() {
        return Err(Failure::validation(format!("grid {grid:?} has no targets")));
    }
    let name = match grid {
        "train" | "val" => grid.to_string(),
        _ => "custom".to_string(),
    };
    Ok((name, targets))
}

const EVAL_OUTPUTS: [&str; 4] = ["success.csv", "min_distance.csv", "metrics.csv", "wilcoxon.csv"];

pub fn eval(g: &Global, models: Option<&Path>, grid: &str, mode: SensingMode, swap: bool) -> Result<()> {
    let wb = g.workbench()?;
    announce(&wb);
    let (grid_name, targets) = targets_for(&wb, grid)?;
    let learned = mode != SensingMode::ContactSkin;
    let cpm = if learned {
        let dir = models.ok_or_else(|| Failure::validation(format!("--mode {mode} needs --models")))?;
        Some(Cpm::new(load_kind(dir, ModelKind::Cle)?, load_kind(dir, ModelKind::Cte)?)?)
    } else {
        if swap {
            return Err(Failure::validation("--swap-point-line applies to learned modes only"));
        }
        None
    };
    let out = wb.output_dir.clone();
    if !g.force && EVAL_OUTPUTS.iter().any(|f| out.join(f).exists()) {
        return Err(Failure::validation(format!(
            "{} already holds evaluation results (use --force to overwrite)",
            out.display()
        )));
    }
    fs::create_dir_all(out.join("logs")).with_context(|| format!("creating {}", out.display()))?;

    let plan = push_plan(&wb, &targets, mode, EVAL_FIRST_ID);
    let swapped = cpm.clone().map(SwapPointLine);
    let estimator: Option<&dyn ContactEstimator> = match (&cpm, &swapped, swap) {
        (Some(_), Some(s), true) => Some(s),
        (Some(c), _, false) => Some(c),
        _ => None,
    };
    let logs = run_trials(&plan, &wb, estimator)?;
    // The skin run on the same trial ids and seeds is the paired baseline.
    let baseline = if learned {
        let skin_plan = push_plan(&wb, &targets, SensingMode::ContactSkin, EVAL_FIRST_ID);
        Some(run_trials(&skin_plan, &wb, None)?)
    } else {
        None
    };

    let hash = wb.hash();
    let mut all: Vec<&TrialLog> = Vec::new();
    if let Some(b) = &baseline {
        all.extend(b.iter());
    }
    all.extend(logs.iter());
    for log in &all {
        let path = out
            .join("logs")
            .join(format!("{}_trial_{:05}.jsonl", log.config.mode, log.config.trial_id));
        write_trial_log(create(&path)?, log, &hash)?;
    }

    let summaries: Vec<TrialSummary> = all.iter().map(|l| l.summary.clone()).collect();
    write_text(&out.join("success.csv"), &success_table_csv(&wb, &summaries))?;
    write_text(&out.join("min_distance.csv"), &min_distance_csv(&summaries))?;
    let mut rows = Vec::new();
    if let Some(b) = &baseline {
        rows.extend(suite_metrics(b));
    }
    rows.extend(suite_metrics(&logs));
    write_text(&out.join("metrics.csv"), &metrics_csv(&rows))?;
    write_wilcoxon(&out.join("wilcoxon.csv"), &logs, baseline.as_deref())?;

    println!("grid={grid_name}");
    println!("targets={}", targets.len());
    for m in &rows {
        println!("success_rate[{}]={:.6}", m.mode, m.success_rate);
    }
    if let Some(m) = rows.last().filter(|_| learned) {
        println!("type_accuracy={:.6}", m.type_accuracy);
        println!("contact_accuracy={:.6}", m.contact_accuracy);
        println!("l_rmse={}", m.l_rmse.map_or("nan".into(), |v| format!("{v:.6}")));
    }
    println!("out={}", out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct WilcoxonRow {
    comparison: String,
    pairs: usize,
    mean_a: f64,
    mean_b: f64,
    n: Option<usize>,
    w_plus: Option<f64>,
    w_minus: Option<f64>,
    statistic: Option<f64>,
    p_two_sided: Option<f64>,
    p_less: Option<f64>,
    p_greater: Option<f64>,
    exact: Option<bool>,
    note: String,
}

fn wilcoxon_row(comparison: &str, pairs: &[(f64, f64)]) -> WilcoxonRow {
    let mean = |f: fn(&(f64, f64)) -> f64| {
        if pairs.is_empty() {
            f64::NAN
        } else {
            pairs.iter().map(f).sum::<f64>() / pairs.len() as f64
        }
    };
    let mut row = WilcoxonRow {
        comparison: comparison.into(),
        pairs: pairs.len(),
        mean_a: mean(|p| p.0),
        mean_b: mean(|p| p.1),
        n: None,
        w_plus: None,
        w_minus: None,
        statistic: None,
        p_two_sided: None,
        p_less: None,
        p_greater: None,
        exact: None,
        note: String::new(),
    };
    match wilcoxon_signed_rank(pairs) {
        Ok(r) => {
            row.n = Some(r.n);
            row.w_plus = Some(r.w_plus);
            row.w_minus = Some(r.w_minus);
            row.statistic = Some(r.statistic);
            row.p_two_sided = Some(r.p_two_sided);
            row.p_less = Some(r.p_less);
            row.p_greater = Some(r.p_greater);
            row.exact = Some(r.exact);
        }
        Err(e) => row.note = e.to_string(),
    }
    row
}

fn per_trial_abs_l(log: &TrialLog, source: LSource) -> Option<f64> {
    let v: Vec<f64> = log
        .ticks
        .iter()
        .filter_map(|r| match source {
            LSource::Truth => r.truth.l,
            LSource::Estimate => r.estimate.l,
        })
        .map(f64::abs)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Paired tests: per-trial mean `|l|` from the skin versus the estimate, and
/// ΔΘ_norm of the evaluated mode versus the skin run with the same seed.
fn write_wilcoxon(path: &Path, logs: &[TrialLog], baseline: Option<&[TrialLog]>) -> Result<()> {
    let l_pairs: Vec<(f64, f64)> = logs
        .iter()
        .filter_map(|l| Some((per_trial_abs_l(l, LSource::Truth)?, per_trial_abs_l(l, LSource::Estimate)?)))
        .collect();
    let mut rows = vec![wilcoxon_row("abs_l_truth_vs_estimate", &l_pairs)];
    if let Some(base) = baseline {
        let by_id: BTreeMap<u64, &TrialLog> = base.iter().map(|l| (l.config.trial_id, l)).collect();
        let pairs: Vec<(f64, f64)> = logs
            .iter()
            .filter_map(|l| {
                let b = by_id.get(&l.config.trial_id)?;
                let (x, y) = (&l.summary.delta_theta_norm, &b.summary.delta_theta_norm);
                (x.defined && y.defined).then_some((x.value, y.value))
            })
            .collect();
        rows.push(wilcoxon_row("delta_theta_norm_estimated_vs_skin", &pairs));
    }
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn replay(path: &Path) -> Result<()> {
    let f = File::open(path).map_err(|e| Failure::validation(format!("cannot open {}: {e}", path.display())))?;
    let (hash, log) = read_trial_log(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
    println!("config_hash={hash}");
    let fresh = resummarize(&log)?;
    let s = &fresh;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "trial_id={}", s.trial_id)?;
    writeln!(stdout, "ticks={}", log.ticks.len())?;
    writeln!(stdout, "success={}", s.success)?;
    writeln!(stdout, "min_distance={}", opt(s.min_distance))?;
    writeln!(stdout, "t_min={}", opt(s.t_min))?;
    writeln!(
        stdout,
        "delta_theta_norm={}",
        if s.delta_theta_norm.defined { s.delta_theta_norm.value.to_string() } else { "undefined".into() }
    )?;
    writeln!(stdout, "l_rmse={}", opt(s.l_rmse))?;
    drop(stdout);
    let stored = serde_json::to_value(&log.summary)?;
    let recomputed = serde_json::to_value(&fresh)?;
    if stored != recomputed {
        let fields: Vec<String> = match (&stored, &recomputed) {
            (serde_json::Value::Object(a), serde_json::Value::Object(b)) => {
                a.iter().filter(|(k, v)| b.get(*k) != Some(v)).map(|(k, _)| k.clone()).collect()
            }
            _ => vec![],
        };
        println!("summary_match=false");
        return Err(Failure::validation(format!(
            "recomputed summary differs from the stored one in: {}",
            fields.join(", ")
        )));
    }
    println!("summary_match=true");
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or("none".into(), |v| v.to_string())
}
