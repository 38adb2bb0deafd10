//! Controlled-error sweeps, greedy behaviour rollouts, and the CSV tables
//! derived from them.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::control::{greedy_action, ActionSet, Joint, RewardMode, ACTION_COUNT};
use crate::environment::{Actions, EnvConfig, Environment, JointErrors};
use crate::error::{Error, Result};
use crate::perception::{Perception, Scale};
use crate::stimulus::StimulusSet;
use crate::training::{observe, ActionValues, EpisodeStats, EvalPoint, TrainConfig};

/// Iterations recorded per behaviour trajectory.
pub const BEHAVIOUR_ITERATIONS: usize = 20;
/// Initial errors of `testing_error`.
pub const TESTING_ERRORS: [f64; 4] = [-4.0, -2.0, 2.0, 4.0];
/// Moving-average window of training curves.
pub const SMOOTHING_WINDOW: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub env: EnvConfig,
    pub distance_m: f64,
    /// Greedy iterations before `testing_error` is read.
    pub horizon: usize,
    /// At most this many stimuli are used from the evaluation set.
    pub stimuli: usize,
}

impl From<&TrainConfig> for EvalConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            env: c.env,
            distance_m: 2.0,
            horizon: c.episode_length,
            stimuli: 20,
        }
    }
}

/// Symmetric grid `-max, -max+step, ..., max`.
pub fn error_grid(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step).round() as i64;
    (-n..=n).map(|i| i as f64 * step).collect()
}

/// Default sweep: vergence ±8 px, pan/tilt ±4 px/it, step 0.5.
pub fn default_grid(joint: Joint) -> Vec<f64> {
    match joint {
        Joint::Vergence => error_grid(8.0, 0.5),
        Joint::Pan | Joint::Tilt => error_grid(4.0, 0.5),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlledErrorRecord {
    pub joint: Joint,
    pub error: f64,
    pub stimulus: usize,
    /// Loss of the joint's stream, `[fine, coarse]`.
    pub losses: [f32; 2],
    pub combined_loss: f32,
    pub greedy_action: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub joint: Joint,
    pub initial_error: f64,
    /// Signed error after each iteration.
    pub errors: Vec<f64>,
    pub stimulus: usize,
}

impl TrajectoryRecord {
    /// Iterations until `|error| < tolerance` first holds (0 if it already
    /// holds initially); `None` if it never does.
    pub fn iterations_to(&self, tolerance: f64) -> Option<usize> {
        if self.initial_error.abs() < tolerance {
            return Some(0);
        }
        self.errors.iter().position(|e| e.abs() < tolerance).map(|i| i + 1)
    }
}

fn stimulus_count(stimuli: &StimulusSet, cfg: &EvalConfig) -> usize {
    stimuli.len().min(cfg.stimuli.max(1))
}

/// Places the screen at the evaluation distance with `error` on `joint` and
/// zero on the others, then lets one iteration of screen motion pass with
/// the eyes still so speed errors are visible in the temporal stream. The
/// imposed errors are unchanged by that null step.
fn setup(env: &mut Environment, joint: Joint, error: f64, stimulus: usize, cfg: &EvalConfig, horizon: usize) -> Result<()> {
    env.impose_errors(stimulus, cfg.distance_m, JointErrors::only(joint, error), horizon + 1)?;
    env.step(Actions::default())
}

pub fn controlled_error_sweep(
    perception: &Perception,
    policy: &dyn ActionValues,
    stimuli: &Arc<StimulusSet>,
    cfg: &EvalConfig,
    grid: &dyn Fn(Joint) -> Vec<f64>,
) -> Result<Vec<ControlledErrorRecord>> {
    let mut env = Environment::new(cfg.env, Arc::clone(stimuli))?;
    let mut records = Vec::new();
    for joint in Joint::ALL {
        let stream = joint.stream();
        for error in grid(joint) {
            for stimulus in 0..stimulus_count(stimuli, cfg) {
                if let Err(e) = setup(&mut env, joint, error, stimulus, cfg, 1) {
                    log::warn!("skipping {} error {error}: {e}", joint.name());
                    continue;
                }
                let step = observe(&env, perception)?;
                let q = policy.q_values(joint, &step, &env)?;
                records.push(ControlledErrorRecord {
                    joint,
                    error,
                    stimulus,
                    losses: [step.percept.loss(stream, Scale::Fine), step.percept.loss(stream, Scale::Coarse)],
                    combined_loss: step.percept.combined_loss(stream),
                    greedy_action: greedy_action(&q),
                });
            }
        }
    }
    Ok(records)
}

/// Greedy rollout on all three joints; returns `joint`'s signed error after
/// each iteration.
pub fn greedy_rollout(
    env: &mut Environment,
    perception: &Perception,
    policy: &dyn ActionValues,
    joint: Joint,
    iterations: usize,
) -> Result<Vec<f64>> {
    let mut errors = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let step = observe(env, perception)?;
        let mut actions = Actions::default();
        for j in Joint::ALL {
            let q = policy.q_values(j, &step, env)?;
            actions.set(j, ActionSet::value(greedy_action(&q)));
        }
        env.step(actions)?;
        errors.push(env.ground_truth_errors().get(joint));
    }
    Ok(errors)
}

pub fn behaviour_suite(
    perception: &Perception,
    policy: &dyn ActionValues,
    stimuli: &Arc<StimulusSet>,
    cfg: &EvalConfig,
    initial_errors: &[f64],
) -> Result<Vec<TrajectoryRecord>> {
    let mut env = Environment::new(cfg.env, Arc::clone(stimuli))?;
    let mut records = Vec::new();
    for joint in Joint::ALL {
        for &initial_error in initial_errors {
            for stimulus in 0..stimulus_count(stimuli, cfg) {
                if let Err(e) = setup(&mut env, joint, initial_error, stimulus, cfg, BEHAVIOUR_ITERATIONS) {
                    log::warn!("skipping {} trajectory from {initial_error}: {e}", joint.name());
                    continue;
                }
                let errors = greedy_rollout(&mut env, perception, policy, joint, BEHAVIOUR_ITERATIONS)?;
                records.push(TrajectoryRecord {
                    joint,
                    initial_error,
                    errors,
                    stimulus,
                });
            }
        }
    }
    Ok(records)
}

/// Mean `|error|` per joint (vergence, pan, tilt) after `cfg.horizon` greedy
/// iterations from each of [`TESTING_ERRORS`].
pub fn testing_error(
    perception: &Perception,
    policy: &dyn ActionValues,
    stimuli: &Arc<StimulusSet>,
    cfg: &EvalConfig,
) -> Result<[f64; 3]> {
    let mut env = Environment::new(cfg.env, Arc::clone(stimuli))?;
    let mut out = [0.0; 3];
    for joint in Joint::ALL {
        let mut sum = 0.0;
        let mut n = 0usize;
        for &e in &TESTING_ERRORS {
            for stimulus in 0..stimulus_count(stimuli, cfg) {
                setup(&mut env, joint, e, stimulus, cfg, cfg.horizon)?;
                let errors = greedy_rollout(&mut env, perception, policy, joint, cfg.horizon)?;
                sum += errors.last().map_or(e, |x| *x).abs();
                n += 1;
            }
        }
        out[joint as usize] = sum / n as f64;
    }
    Ok(out)
}

// ---------------------------------------------------------------- tables

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VCurveRow {
    pub joint: Joint,
    pub error: f64,
    pub stimulus: usize,
    /// `fine`, `coarse` or `combined`.
    pub scale: String,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub joint: Joint,
    pub error: f64,
    pub action_value: f64,
    pub frequency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub joint: Joint,
    pub initial_error: f64,
    /// 0 is the initial error.
    pub iteration: usize,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurveRow {
    pub episode: usize,
    pub joint: Joint,
    /// Moving average of the final `|error|` of training episodes.
    pub train_error: f64,
    /// `testing_error` where an evaluation happened at this episode.
    pub test_error: Option<f64>,
    pub reward_mode: RewardMode,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLogRow {
    pub episode: usize,
    pub joint: Joint,
    pub final_abs_error: f64,
    pub mean_ae_loss: f64,
    pub reward_mode: RewardMode,
    pub worker: usize,
}

pub fn vcurve_rows(records: &[ControlledErrorRecord]) -> Vec<VCurveRow> {
    let mut rows = Vec::with_capacity(records.len() * 3);
    for r in records {
        let losses = [("fine", r.losses[0]), ("coarse", r.losses[1]), ("combined", r.combined_loss)];
        for (scale, loss) in losses {
            rows.push(VCurveRow {
                joint: r.joint,
                error: r.error,
                stimulus: r.stimulus,
                scale: scale.to_string(),
                loss: loss as f64,
            });
        }
    }
    rows
}

/// Order-independent key for an error value.
fn key(x: f64) -> i64 {
    (x * 1e6).round() as i64
}

/// Mean loss per `(joint, error)` for one scale (`fine`, `coarse` or
/// `combined`), sorted by joint then error.
pub fn mean_vcurve(records: &[ControlledErrorRecord], scale: &str) -> BTreeMap<(Joint, i64), (f64, f64)> {
    let mut acc: BTreeMap<(Joint, i64), (f64, f64, usize)> = BTreeMap::new();
    for r in records {
        let loss = match scale {
            "fine" => r.losses[0],
            "coarse" => r.losses[1],
            _ => r.combined_loss,
        } as f64;
        let e = acc.entry((r.joint, key(r.error))).or_insert((r.error, 0.0, 0));
        e.1 += loss;
        e.2 += 1;
    }
    acc.into_iter().map(|(k, (err, sum, n))| (k, (err, sum / n as f64))).collect()
}

/// Mean combined loss at exactly `error` for `joint`, if swept.
pub fn mean_loss_at(records: &[ControlledErrorRecord], joint: Joint, error: f64, scale: &str) -> Option<f64> {
    mean_vcurve(records, scale).get(&(joint, key(error))).map(|v| v.1)
}

/// Greedy-action frequency over stimuli for every `(joint, error)` bin; each
/// bin's nine frequencies sum to one.
pub fn policy_rows(records: &[ControlledErrorRecord]) -> Vec<PolicyRow> {
    let mut bins: BTreeMap<(Joint, i64), (f64, [usize; ACTION_COUNT])> = BTreeMap::new();
    for r in records {
        bins.entry((r.joint, key(r.error))).or_insert((r.error, [0; ACTION_COUNT])).1[r.greedy_action] += 1;
    }
    let mut rows = Vec::with_capacity(bins.len() * ACTION_COUNT);
    for ((joint, _), (error, counts)) in bins {
        let total: usize = counts.iter().sum();
        for (a, &c) in counts.iter().enumerate() {
            rows.push(PolicyRow {
                joint,
                error,
                action_value: ActionSet::value(a),
                frequency: c as f64 / total as f64,
            });
        }
    }
    rows
}

pub fn trajectory_rows(records: &[TrajectoryRecord]) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for r in records {
        let errors = std::iter::once(r.initial_error).chain(r.errors.iter().copied());
        rows.extend(errors.enumerate().map(|(iteration, error)| TrajectoryRow {
            joint: r.joint,
            initial_error: r.initial_error,
            iteration,
            error,
        }));
    }
    rows
}

/// Trailing moving average with a window of up to `window` values.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Final `|error|` of `joint` per episode, in episode order.
pub fn final_errors(log: &[EpisodeStats], joint: Joint) -> Vec<f64> {
    let mut v: Vec<&EpisodeStats> = log.iter().collect();
    v.sort_by_key(|s| s.episode);
    v.iter().map(|s| s.final_abs_error[joint as usize]).collect()
}

pub fn training_curve_rows(
    log: &[EpisodeStats],
    evals: &[EvalPoint],
    reward_mode: RewardMode,
    seed: u64,
) -> Vec<TrainingCurveRow> {
    let mut rows = Vec::new();
    for joint in Joint::ALL {
        let smooth = moving_average(&final_errors(log, joint), SMOOTHING_WINDOW);
        for (i, train_error) in smooth.into_iter().enumerate() {
            let episode = i + 1;
            let test_error = evals.iter().find(|e| e.episode == episode).map(|e| e.testing_error[joint as usize]);
            rows.push(TrainingCurveRow {
                episode,
                joint,
                train_error,
                test_error,
                reward_mode,
                seed,
            });
        }
    }
    rows
}

pub fn training_log_rows(log: &[EpisodeStats], reward_mode: RewardMode) -> Vec<TrainingLogRow> {
    let mut rows = Vec::with_capacity(log.len() * 3);
    for s in log {
        for joint in Joint::ALL {
            let stream = joint.stream() as usize;
            rows.push(TrainingLogRow {
                episode: s.episode,
                joint,
                final_abs_error: s.final_abs_error[joint as usize],
                mean_ae_loss: s.mean_loss[stream],
                reward_mode,
                worker: s.worker,
            });
        }
    }
    rows
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

/// A row type of one of the CSV tables, with its fixed column names.
pub trait CsvRow: Serialize + DeserializeOwned {
    const HEADER: &'static [&'static str];
}

macro_rules! csv_row {
    ($($row:ty => $header:ident),* $(,)?) => {
        $(impl CsvRow for $row {
            const HEADER: &'static [&'static str] = &$header;
        })*
    };
}

csv_row! {
    VCurveRow => VCURVE_HEADER,
    PolicyRow => POLICY_HEADER,
    TrajectoryRow => TRAJECTORY_HEADER,
    TrainingCurveRow => TRAINING_CURVE_HEADER,
    TrainingLogRow => TRAINING_LOG_HEADER,
}

/// Writes the header, even for an empty table, then one line per row.
pub fn write_csv<T: CsvRow, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(T::HEADER).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a CSV table whose header must match `T`'s columns exactly.
pub fn read_csv<T: CsvRow, R: Read>(input: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if !header.iter().eq(T::HEADER.iter().copied()) {
        return Err(Error::InvalidArgument(format!(
            "csv header {:?}, expected {:?}",
            header.iter().collect::<Vec<_>>(),
            T::HEADER
        )));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub const VCURVE_HEADER: [&str; 5] = ["joint", "error", "stimulus", "scale", "loss"];
pub const POLICY_HEADER: [&str; 4] = ["joint", "error", "action_value", "frequency"];
pub const TRAJECTORY_HEADER: [&str; 4] = ["joint", "initial_error", "iteration", "error"];
pub const TRAINING_CURVE_HEADER: [&str; 6] = ["episode", "joint", "train_error", "test_error", "reward_mode", "seed"];
pub const TRAINING_LOG_HEADER: [&str; 6] = ["episode", "joint", "final_abs_error", "mean_ae_loss", "reward_mode", "worker"];
