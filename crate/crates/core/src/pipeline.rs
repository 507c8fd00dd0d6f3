//! Trials, dataset collection, training orchestration and evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{GridSpec, WorkbenchConfig};
use crate::cpm::{Cpm, ModelKind, NormHistory, SequenceDataset, SEQ_LEN};
use crate::descriptor::{descriptor_pipeline, SensorInput};
use crate::error::{Error, Result};
use crate::geometry::Pose2;
use crate::metrics::{angle_swept_rate, mean_abs_across_groups, MeanSe, Normalized};
use crate::rps::{rps_step, ControlCommand, RpsMode, RpsPhase};
use crate::sensors::{contact_skin_read, depth_render, lidar_scan};
use crate::world::{place_object, step, ContactState, ContactType, WorldSpecs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensingMode {
    ContactSkin,
    Lidar,
    DepthCam,
}

impl std::fmt::Display for SensingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SensingMode::ContactSkin => "skin",
            SensingMode::Lidar => "lidar",
            SensingMode::DepthCam => "depth",
        })
    }
}

impl std::str::FromStr for SensingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skin" | "contact_skin" => Ok(SensingMode::ContactSkin),
            "lidar" => Ok(SensingMode::Lidar),
            "depth" | "depth_cam" => Ok(SensingMode::DepthCam),
            other => Err(Error::invalid(format!("unknown sensing mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialKind {
    /// Push the contact point to the target.
    Push,
    /// Back away from an object that starts just out of reach.
    NoContact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub trial_id: u64,
    pub kind: TrialKind,
    pub object: String,
    pub friction: String,
    pub target: [f64; 2],
    pub mode: SensingMode,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Success,
    Timeout,
    ContactLoss,
    /// A no-contact trial ran its full duration.
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: usize,
    pub t: f64,
    pub robot: Pose2,
    pub object: Pose2,
    pub cmd: ControlCommand,
    /// Contact skin reading.
    pub truth: ContactState,
    /// The contact state the controller acted on.
    pub estimate: ContactState,
    pub norms: Vec<f64>,
    pub phase: RpsPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial_id: u64,
    pub object: String,
    pub friction: String,
    pub target: [f64; 2],
    pub mode: SensingMode,
    pub termination: Termination,
    pub success: bool,
    /// Closest approach of the contact point to the target; `None` if the
    /// controller never saw contact.
    pub min_distance: Option<f64>,
    pub t_min: Option<f64>,
    pub duration: f64,
    pub delta_theta_norm: Normalized,
    /// RMSE of the estimated `l` over ticks where both truth and estimate
    /// report contact.
    pub l_rmse: Option<f64>,
    /// `confusion[truth][estimate]` tick counts.
    pub confusion: [[u64; 3]; 3],
    pub contact_loss_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub config: TrialConfig,
    pub d_succ: f64,
    pub front_x: f64,
    pub ticks: Vec<TickRecord>,
    pub summary: TrialSummary,
}

/// Anything that can stand in for the contact skin during a trial.
pub trait ContactEstimator: Send + Sync {
    fn estimate(&self, history: &NormHistory, truth: &ContactState, half_width: f64) -> Result<ContactState>;
}

/// Passes the skin reading through unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruth;

impl ContactEstimator for GroundTruth {
    fn estimate(&self, _: &NormHistory, truth: &ContactState, _: f64) -> Result<ContactState> {
        Ok(*truth)
    }
}

impl ContactEstimator for Cpm {
    fn estimate(&self, history: &NormHistory, _: &ContactState, half_width: f64) -> Result<ContactState> {
        let window = history
            .window()
            .ok_or_else(|| Error::invalid("no descriptor vectors observed yet"))?;
        Cpm::estimate(self, &window, half_width)
    }
}

/// Wraps an estimator and reports every point contact as a line and vice versa.
#[derive(Debug, Clone)]
pub struct SwapPointLine<E>(pub E);

impl<E: ContactEstimator> ContactEstimator for SwapPointLine<E> {
    fn estimate(&self, history: &NormHistory, truth: &ContactState, half_width: f64) -> Result<ContactState> {
        let c = self.0.estimate(history, truth, half_width)?;
        Ok(match (c.contact_type, c.l) {
            (ContactType::Point, Some(l)) => ContactState::line(l),
            (ContactType::Line, Some(l)) => ContactState::point(l),
            _ => c,
        })
    }
}

pub fn generate_target_grid(spec: &GridSpec) -> Vec<[f64; 2]> {
    match spec {
        GridSpec::Square { half_extent, step } => {
            let mut out = Vec::new();
            for i in -half_extent..=*half_extent {
                for j in -half_extent..=*half_extent {
                    if i != 0 || j != 0 {
                        out.push([i as f64 * step, j as f64 * step]);
                    }
                }
            }
            out
        }
        GridSpec::Points { points } => points.iter().copied().filter(|p| *p != [0.0, 0.0]).collect(),
    }
}

/// Per-trial seed derived from the global seed and the trial id.
pub fn trial_seed(global: u64, trial_id: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(global);
    rng.set_stream(trial_id);
    rng.random()
}

/// Robot start pose putting the initial contact point at the world origin.
pub fn start_pose(wb: &WorkbenchConfig) -> Pose2 {
    Pose2::new(-wb.world.robot.front_x, 0.0, 0.0)
}

fn specs_for(wb: &WorkbenchConfig, cfg: &TrialConfig) -> Result<WorldSpecs> {
    let object = wb.object(&cfg.object)?;
    let friction = wb
        .world
        .friction_sets
        .iter()
        .find(|f| f.name == cfg.friction)
        .ok_or_else(|| Error::Config(format!("unknown friction set '{}'", cfg.friction)))?;
    Ok(WorldSpecs {
        robot: wb.world.robot,
        object: object.with_friction(friction.mu_ground, friction.mu_robot),
    })
}

fn contact_point(robot: &Pose2, c: &ContactState, front_x: f64) -> Option<Vector2<f64>> {
    c.p_c_r(front_x).map(|p| robot.to_parent(p))
}

/// Runs one trial at the control rate with physics substeps in between.
pub fn run_trial(
    cfg: &TrialConfig,
    wb: &WorkbenchConfig,
    estimator: Option<&dyn ContactEstimator>,
) -> Result<TrialLog> {
    let specs = specs_for(wb, cfg)?;
    let estimator: &dyn ContactEstimator = match (cfg.mode, estimator) {
        (SensingMode::ContactSkin, _) => &GroundTruth,
        (_, Some(e)) => e,
        (mode, None) => return Err(Error::invalid(format!("{mode} mode needs a contact estimator"))),
    };
    let p = &wb.protocol;
    let robot_spec = &wb.world.robot;
    let (dt, sub_dt) = (p.control_dt(), p.physics_dt());

    let mut place_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lidar_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    lidar_rng.set_stream(1);
    let mut camera_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    camera_rng.set_stream(2);

    let jitter = |rng: &mut ChaCha8Rng, half: f64| if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 };
    let lateral = jitter(&mut place_rng, p.lateral_jitter);
    let yaw = jitter(&mut place_rng, p.yaw_jitter_deg.to_radians());
    let gap = match cfg.kind {
        TrialKind::Push => 0.0,
        TrialKind::NoContact => p.no_contact_gap,
    };
    let mut state = place_object(start_pose(wb), lateral, yaw, gap, &specs)?;
    state.rng_seed = cfg.seed;

    let target = Vector2::from(cfg.target);
    let lidar = &wb.sensors.lidar;
    let camera = &wb.sensors.camera;
    let h_b = robot_spec.base_height;
    let mut history = NormHistory::new(SEQ_LEN);
    let mut mode = RpsMode::default();
    let mut ticks = Vec::new();
    let mut contact_loss = 0.0;
    let termination;
    let mut k = 0usize;
    loop {
        let t = k as f64 * dt;
        let truth = contact_skin_read(&state, &specs);
        let scan = lidar_scan(&state, lidar, &specs, &mut lidar_rng);
        let norms = match cfg.mode {
            SensingMode::DepthCam => {
                let frame = depth_render(&state, camera, &specs, &mut camera_rng);
                descriptor_pipeline(SensorInput::Depth(&frame), &camera.mount, &wb.descriptor, h_b)?
            }
            _ => descriptor_pipeline(SensorInput::Lidar(&scan), &lidar.mount, &wb.descriptor, h_b)?,
        };
        history.push(norms.clone());
        let estimate = estimator.estimate(&history, &truth, robot_spec.half_width)?;

        let mut record = TickRecord {
            tick: k,
            t,
            robot: state.robot,
            object: state.object,
            cmd: ControlCommand::default(),
            truth,
            estimate,
            norms,
            phase: mode.phase,
        };

        let stop = match cfg.kind {
            TrialKind::Push => {
                let reached = contact_point(&state.robot, &estimate, robot_spec.front_x)
                    .is_some_and(|c| (target - c).norm() <= p.d_succ);
                if reached {
                    Some(Termination::Success)
                } else if t >= p.t_max {
                    Some(Termination::Timeout)
                } else if contact_loss > p.contact_loss_max {
                    Some(Termination::ContactLoss)
                } else {
                    None
                }
            }
            TrialKind::NoContact => (t >= p.no_contact_duration).then_some(Termination::Completed),
        };
        if let Some(reason) = stop {
            ticks.push(record);
            termination = reason;
            break;
        }

        let cmd = match cfg.kind {
            TrialKind::Push => {
                let (cmd, next) = rps_step(&estimate, &state.robot, target, mode, &wb.rps, robot_spec.front_x, dt);
                mode = next;
                cmd
            }
            TrialKind::NoContact => ControlCommand::new(-p.retreat_speed, 0.0, 0.0),
        };
        record.cmd = cmd;
        ticks.push(record);
        for _ in 0..p.physics_substeps {
            state = step(&state, &cmd, sub_dt, &specs)?;
        }
        if !truth.in_contact() {
            contact_loss += dt;
        }
        k += 1;
    }

    let summary = summarize(cfg, &ticks, termination, p.d_succ, robot_spec.front_x, contact_loss)?;
    Ok(TrialLog {
        config: cfg.clone(),
        d_succ: p.d_succ,
        front_x: robot_spec.front_x,
        ticks,
        summary,
    })
}

/// Metrics derived from a tick sequence. Pure, so a stored log can be audited.
pub fn summarize(
    cfg: &TrialConfig,
    ticks: &[TickRecord],
    termination: Termination,
    d_succ: f64,
    front_x: f64,
    contact_loss_time: f64,
) -> Result<TrialSummary> {
    if ticks.is_empty() {
        return Err(Error::invalid("trial log has no ticks"));
    }
    let target = Vector2::from(cfg.target);
    let mut best: Option<(f64, f64)> = None;
    let mut sse = 0.0;
    let mut n_l = 0usize;
    let mut confusion = [[0u64; 3]; 3];
    for r in ticks {
        if let Some(c) = contact_point(&r.robot, &r.estimate, front_x) {
            let dist = (target - c).norm();
            if best.is_none_or(|(d, _)| dist < d) {
                best = Some((dist, r.t));
            }
        }
        if let (Some(a), Some(b)) = (r.truth.l, r.estimate.l) {
            sse += (a - b).powi(2);
            n_l += 1;
        }
        confusion[r.truth.contact_type.index()][r.estimate.contact_type.index()] += 1;
    }
    let times: Vec<f64> = ticks.iter().map(|r| r.t).collect();
    let thetas: Vec<f64> = ticks.iter().map(|r| r.robot.theta).collect();
    let t_min = best.map(|(_, t)| t);
    let delta_theta_norm = angle_swept_rate(&times, &thetas, t_min.unwrap_or(times[0]))?;
    let min_distance = best.map(|(d, _)| d);
    Ok(TrialSummary {
        trial_id: cfg.trial_id,
        object: cfg.object.clone(),
        friction: cfg.friction.clone(),
        target: cfg.target,
        mode: cfg.mode,
        termination,
        success: cfg.kind == TrialKind::Push && min_distance.is_some_and(|d| d <= d_succ),
        min_distance,
        t_min,
        duration: times[times.len() - 1] - times[0],
        delta_theta_norm,
        l_rmse: (n_l > 0).then(|| (sse / n_l as f64).sqrt()),
        confusion,
        contact_loss_time,
    })
}

/// Recomputes a stored log's summary from its ticks.
pub fn resummarize(log: &TrialLog) -> Result<TrialSummary> {
    summarize(
        &log.config,
        &log.ticks,
        log.summary.termination,
        log.d_succ,
        log.front_x,
        log.summary.contact_loss_time,
    )
}

/// ΔΘ_norm of a log: heading swept up to the closest approach per second.
pub fn delta_theta_norm(log: &TrialLog) -> Result<Normalized> {
    let times: Vec<f64> = log.ticks.iter().map(|r| r.t).collect();
    let thetas: Vec<f64> = log.ticks.iter().map(|r| r.robot.theta).collect();
    let t_min = log.summary.t_min.unwrap_or(times[0]);
    angle_swept_rate(&times, &thetas, t_min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LSource {
    Truth,
    Estimate,
}

/// Mean `|l|` over contact ticks per trial, averaged across trials.
pub fn mean_abs_l(logs: &[TrialLog], source: LSource) -> MeanSe {
    let per_trial: Vec<Vec<f64>> = logs
        .iter()
        .map(|log| {
            log.ticks
                .iter()
                .filter_map(|r| match source {
                    LSource::Truth => r.truth.l,
                    LSource::Estimate => r.estimate.l,
                })
                .collect()
        })
        .collect();
    mean_abs_across_groups(per_trial.iter().map(|v| v.as_slice()))
}

/// Trial plan for the training split: every object × friction set × target,
/// then the no-contact trials cycling through objects and friction sets.
pub fn training_plan(wb: &WorkbenchConfig, first_id: u64) -> Vec<TrialConfig> {
    let mut plan = push_plan(wb, &generate_target_grid(&wb.protocol.train_grid), SensingMode::ContactSkin, first_id);
    let objects = &wb.world.objects;
    let frictions = &wb.world.friction_sets;
    for i in 0..wb.protocol.no_contact_trials {
        let id = first_id + plan.len() as u64;
        plan.push(TrialConfig {
            trial_id: id,
            kind: TrialKind::NoContact,
            object: objects[i % objects.len()].name.clone(),
            friction: frictions[(i / objects.len()) % frictions.len()].name.clone(),
            target: [0.0, 0.0],
            mode: SensingMode::ContactSkin,
            seed: trial_seed(wb.seed, id),
        });
    }
    plan
}

/// Every object × friction set × target as push trials in `mode`.
pub fn push_plan(wb: &WorkbenchConfig, targets: &[[f64; 2]], mode: SensingMode, first_id: u64) -> Vec<TrialConfig> {
    let mut plan = Vec::new();
    for o in &wb.world.objects {
        for f in &wb.world.friction_sets {
            for t in targets {
                let id = first_id + plan.len() as u64;
                plan.push(TrialConfig {
                    trial_id: id,
                    kind: TrialKind::Push,
                    object: o.name.clone(),
                    friction: f.name.clone(),
                    target: *t,
                    mode,
                    seed: trial_seed(wb.seed, id),
                });
            }
        }
    }
    plan
}

/// Runs trials in parallel on the current rayon pool; results keep plan order.
pub fn run_trials(
    plan: &[TrialConfig],
    wb: &WorkbenchConfig,
    estimator: Option<&dyn ContactEstimator>,
) -> Result<Vec<TrialLog>> {
    plan.par_iter().map(|c| run_trial(c, wb, estimator)).collect()
}

#[derive(Debug, Clone)]
pub struct CollectedData {
    pub train: Vec<TrialLog>,
    pub val: Vec<TrialLog>,
}

/// Training split ids start at 0; validation ids follow.
pub fn collect_dataset(wb: &WorkbenchConfig) -> Result<CollectedData> {
    let train_plan = training_plan(wb, 0);
    let val_targets = generate_target_grid(&wb.protocol.val_grid);
    let val_plan = push_plan(wb, &val_targets, SensingMode::ContactSkin, train_plan.len() as u64);
    Ok(CollectedData {
        train: run_trials(&train_plan, wb, None)?,
        val: run_trials(&val_plan, wb, None)?,
    })
}

/// Label-free per-tick row used to rebuild windows from logs or dataset files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRow {
    pub trial_id: u64,
    pub tick: usize,
    pub t: f64,
    pub norms: Vec<f64>,
    pub l: Option<f64>,
    pub contact_type: ContactType,
    pub robot: [f64; 3],
    pub object: [f64; 3],
    pub mode: RpsPhase,
}

impl TickRow {
    pub fn from_record(trial_id: u64, r: &TickRecord) -> Self {
        Self {
            trial_id,
            tick: r.tick,
            t: r.t,
            norms: r.norms.clone(),
            l: r.truth.l,
            contact_type: r.truth.contact_type,
            robot: [r.robot.x, r.robot.y, r.robot.theta],
            object: [r.object.x, r.object.y, r.object.theta],
            mode: r.phase,
        }
    }
}

/// Windows of `SEQ_LEN` consecutive ticks labelled by their final tick. CLE
/// windows are kept only where the final tick is in contact. `stride` keeps
/// every n-th window of each trial.
pub fn build_windows(trials: &[Vec<TickRow>], kind: ModelKind, stride: usize) -> Result<SequenceDataset> {
    let dim = trials
        .iter()
        .flat_map(|t| t.first())
        .map(|r| r.norms.len())
        .next()
        .unwrap_or(0);
    let mut ds = SequenceDataset::new(SEQ_LEN, dim);
    let mut window = Vec::with_capacity(SEQ_LEN * dim);
    for rows in trials {
        if rows.len() < SEQ_LEN {
            continue;
        }
        for end in (SEQ_LEN - 1..rows.len()).step_by(stride.max(1)) {
            let last = &rows[end];
            let target = match (kind, last.l) {
                (ModelKind::Cle, Some(l)) => l,
                (ModelKind::Cle, None) => continue,
                (ModelKind::Cte, _) => last.contact_type.index() as f64,
            };
            window.clear();
            for r in &rows[end + 1 - SEQ_LEN..=end] {
                window.extend_from_slice(&r.norms);
            }
            ds.push(&window, target, last.trial_id, last.tick)?;
        }
    }
    Ok(ds)
}

pub fn rows_of(logs: &[TrialLog]) -> Vec<Vec<TickRow>> {
    logs.iter()
        .map(|log| log.ticks.iter().map(|r| TickRow::from_record(log.config.trial_id, r)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub split: String,
    pub trials: Vec<TrialConfig>,
}

pub const DATASET_FORMAT: &str = "proxipush-dataset";

/// Writes a header line and one JSON record per tick.
pub fn write_dataset<W: Write>(mut w: W, header: &DatasetHeader, logs: &[TrialLog]) -> Result<()> {
    let io = |e: std::io::Error| Error::invalid(format!("dataset write failed: {e}"));
    writeln!(w, "{}", header.to_json()).map_err(io)?;
    for log in logs {
        for r in &log.ticks {
            writeln!(w, "{}", TickRow::from_record(log.config.trial_id, r).to_json()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

trait ToJson {
    fn to_json(&self) -> String;
}

impl<T: Serialize> ToJson for T {
    fn to_json(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

/// Reads a dataset file back into per-trial tick rows in file order.
pub fn read_dataset<R: BufRead>(r: R) -> Result<(DatasetHeader, Vec<Vec<TickRow>>)> {
    let mut lines = r.lines().enumerate();
    let (_, first) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty dataset file".into(),
    })?;
    let first = first.map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    let header: DatasetHeader =
        serde_json::from_str(&first).map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    if header.format != DATASET_FORMAT {
        return Err(Error::Parse {
            line: 1,
            message: format!("not a dataset file (format {:?})", header.format),
        });
    }
    let mut trials: BTreeMap<u64, Vec<TickRow>> = BTreeMap::new();
    let mut order = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: TickRow =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        let rows = trials.entry(row.trial_id).or_insert_with(|| {
            order.push(row.trial_id);
            Vec::new()
        });
        if rows.last().is_some_and(|p| p.tick + 1 != row.tick) || (rows.is_empty() && row.tick != 0) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("trial {} ticks are not contiguous", row.trial_id),
            });
        }
        rows.push(row);
    }
    let rows = order.into_iter().map(|id| trials.remove(&id).expect("seen id")).collect();
    Ok((header, rows))
}

/// First line of a trial log file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLogHeader {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub config: TrialConfig,
    pub d_succ: f64,
    pub front_x: f64,
    pub summary: TrialSummary,
}

pub const TRIAL_LOG_FORMAT: &str = "proxipush-trial-log";

/// Writes a header line with the summary followed by one JSON line per tick.
pub fn write_trial_log<W: Write>(mut w: W, log: &TrialLog, config_hash: &str) -> Result<()> {
    let io = |e: std::io::Error| Error::invalid(format!("trial log write failed: {e}"));
    let header = TrialLogHeader {
        format: TRIAL_LOG_FORMAT.into(),
        version: 1,
        config_hash: config_hash.into(),
        config: log.config.clone(),
        d_succ: log.d_succ,
        front_x: log.front_x,
        summary: log.summary.clone(),
    };
    writeln!(w, "{}", header.to_json()).map_err(io)?;
    for r in &log.ticks {
        writeln!(w, "{}", r.to_json()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a trial log; returns the header's config hash alongside the log.
pub fn read_trial_log<R: BufRead>(r: R) -> Result<(String, TrialLog)> {
    let parse = |line: usize, e: &dyn std::fmt::Display| Error::Parse {
        line,
        message: e.to_string(),
    };
    let mut lines = r.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| parse(1, &"empty trial log"))?;
    let first = first.map_err(|e| parse(1, &e))?;
    let header: TrialLogHeader = serde_json::from_str(&first).map_err(|e| parse(1, &e))?;
    if header.format != TRIAL_LOG_FORMAT {
        return Err(parse(1, &format!("not a trial log (format {:?})", header.format)));
    }
    let mut ticks: Vec<TickRecord> = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| parse(i + 1, &e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TickRecord = serde_json::from_str(&line).map_err(|e| parse(i + 1, &e))?;
        if rec.tick != ticks.len() {
            return Err(parse(i + 1, &format!("expected tick {}, found {}", ticks.len(), rec.tick)));
        }
        ticks.push(rec);
    }
    if ticks.is_empty() {
        return Err(parse(1, &"trial log has no tick records"));
    }
    Ok((
        header.config_hash,
        TrialLog {
            config: header.config,
            d_succ: header.d_succ,
            front_x: header.front_x,
            ticks,
            summary: header.summary,
        },
    ))
}

/// Contact-type accuracy and contact-vs-no-contact accuracy over all ticks.
pub fn type_accuracy(summaries: &[TrialSummary]) -> (f64, f64) {
    let mut total = 0u64;
    let mut exact = 0u64;
    let mut binary = 0u64;
    for s in summaries {
        for (i, row) in s.confusion.iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                total += n;
                if i == j {
                    exact += n;
                }
                if (i == 0) == (j == 0) {
                    binary += n;
                }
            }
        }
    }
    if total == 0 {
        return (f64::NAN, f64::NAN);
    }
    (exact as f64 / total as f64, binary as f64 / total as f64)
}

/// Pooled RMSE of `l̂` across trials.
pub fn pooled_l_rmse(logs: &[TrialLog]) -> Option<f64> {
    let mut sse = 0.0;
    let mut n = 0usize;
    for log in logs {
        for r in &log.ticks {
            if let (Some(a), Some(b)) = (r.truth.l, r.estimate.l) {
                sse += (a - b).powi(2);
                n += 1;
            }
        }
    }
    (n > 0).then(|| (sse / n as f64).sqrt())
}

pub fn success_rate(summaries: &[TrialSummary]) -> f64 {
    if summaries.is_empty() {
        return f64::NAN;
    }
    summaries.iter().filter(|s| s.success).count() as f64 / summaries.len() as f64
}

/// Success counts laid out with one column per object × friction set and one
/// row per sensing mode.
pub fn success_table_csv(wb: &WorkbenchConfig, summaries: &[TrialSummary]) -> String {
    let mut columns = Vec::new();
    for o in &wb.world.objects {
        for f in &wb.world.friction_sets {
            columns.push((o.name.clone(), f.name.clone()));
        }
    }
    let mut out = String::from("mode");
    for (o, f) in &columns {
        let _ = write!(out, ",{o}/{f}");
    }
    out.push('\n');
    let mut modes: Vec<SensingMode> = summaries.iter().map(|s| s.mode).collect();
    modes.sort();
    modes.dedup();
    for m in modes {
        let _ = write!(out, "{m}");
        for (o, f) in &columns {
            let cell: Vec<&TrialSummary> = summaries
                .iter()
                .filter(|s| s.mode == m && &s.object == o && &s.friction == f)
                .collect();
            let ok = cell.iter().filter(|s| s.success).count();
            let _ = write!(out, ",{ok}/{}", cell.len());
        }
        out.push('\n');
    }
    out
}

/// Mean minimum distance and success count per target.
pub fn min_distance_csv(summaries: &[TrialSummary]) -> String {
    let mut by_target: BTreeMap<(SensingMode, i64, i64), Vec<&TrialSummary>> = BTreeMap::new();
    for s in summaries {
        let key = (s.mode, (s.target[0] * 1e6).round() as i64, (s.target[1] * 1e6).round() as i64);
        by_target.entry(key).or_default().push(s);
    }
    let mut out = String::from("mode,target_x,target_y,mean_min_distance,successes,trials\n");
    for ((mode, _, _), group) in by_target {
        let dists: Vec<f64> = group.iter().filter_map(|s| s.min_distance).collect();
        let mean = if dists.is_empty() {
            f64::NAN
        } else {
            dists.iter().sum::<f64>() / dists.len() as f64
        };
        let t = group[0].target;
        let ok = group.iter().filter(|s| s.success).count();
        let _ = writeln!(out, "{mode},{},{},{mean:.6},{ok},{}", t[0], t[1], group.len());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteMetrics {
    pub mode: SensingMode,
    pub trials: usize,
    pub success_rate: f64,
    pub l_rmse: Option<f64>,
    pub type_accuracy: f64,
    pub contact_accuracy: f64,
    pub delta_theta_norm_mean: f64,
    pub mean_abs_l_truth: MeanSe,
    pub mean_abs_l_estimate: MeanSe,
}

pub fn suite_metrics(logs: &[TrialLog]) -> Option<SuiteMetrics> {
    let first = logs.first()?;
    let summaries: Vec<TrialSummary> = logs.iter().map(|l| l.summary.clone()).collect();
    let (type_acc, contact_acc) = type_accuracy(&summaries);
    let dtn: Vec<f64> = summaries
        .iter()
        .filter(|s| s.delta_theta_norm.defined)
        .map(|s| s.delta_theta_norm.value)
        .collect();
    Some(SuiteMetrics {
        mode: first.config.mode,
        trials: logs.len(),
        success_rate: success_rate(&summaries),
        l_rmse: pooled_l_rmse(logs),
        type_accuracy: type_acc,
        contact_accuracy: contact_acc,
        delta_theta_norm_mean: if dtn.is_empty() { f64::NAN } else { dtn.iter().sum::<f64>() / dtn.len() as f64 },
        mean_abs_l_truth: mean_abs_l(logs, LSource::Truth),
        mean_abs_l_estimate: mean_abs_l(logs, LSource::Estimate),
    })
}

pub fn metrics_csv(rows: &[SuiteMetrics]) -> String {
    let mut out = String::from(
        "mode,trials,success_rate,l_rmse,type_accuracy,contact_accuracy,delta_theta_norm,mean_abs_l_truth,se_truth,mean_abs_l_estimate,se_estimate\n",
    );
    for m in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            m.mode,
            m.trials,
            m.success_rate,
            m.l_rmse.map_or("".into(), |v| format!("{v:.6}")),
            m.type_accuracy,
            m.contact_accuracy,
            m.delta_theta_norm_mean,
            m.mean_abs_l_truth.mean,
            m.mean_abs_l_truth.se,
            m.mean_abs_l_estimate.mean,
            m.mean_abs_l_estimate.se,
        );
    }
    out
}
