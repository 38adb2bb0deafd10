//! Episode loop, asynchronous workers around a parameter server, and
//! checkpointing.

pub mod checkpoint;
mod server;

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use server::ParameterServer;

use crate::control::{
    compute_reward, critic_deltas, select_action, ActionSet, Critic, CriticOptimizer, Joint, ReplayBuffer,
    RewardMode, Step, Transition, ACTION_COUNT,
};
use crate::environment::{Actions, BinocularObservation, EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::evaluation::{self, EvalConfig};
use crate::numerics::{AdamConfig, Tensor};
use crate::perception::{build_stream, AeOptimizer, Autoencoder, Perception, Percept, Scale, Stream};
use crate::stimulus::StimulusSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// `procedural:<count>:<seed>` or a PNG directory.
    pub stimuli: String,
    /// Held-out stimuli for periodic evaluation.
    pub eval_stimuli: String,
    pub texture_size: usize,
    pub episodes: usize,
    pub episode_length: usize,
    pub workers: usize,
    pub seed: u64,
    pub reward_mode: RewardMode,
    pub reward_scale_c: f32,
    pub gamma: f32,
    pub epsilon: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub ae_learning_rate: f32,
    pub critic_learning_rate: f32,
    pub critic_filters: usize,
    pub critic_hidden: usize,
    pub huber_delta: f32,
    pub ae_updates_per_episode: usize,
    pub critic_updates_per_episode: usize,
    /// Episodes between evaluations of `testing_error`; 0 disables them.
    pub eval_interval: usize,
    pub env: EnvConfig,
}

// Sanity bounds so a hostile config or checkpoint cannot request
// arbitrarily large allocations.
const MAX_TEXTURE_SIZE: usize = 8192;
const MAX_CRITIC_WIDTH: usize = 4096;
const MAX_WORKERS: usize = 1024;
const MAX_REPLAY: usize = 10_000_000;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stimuli: "procedural:20:7".into(),
            eval_stimuli: "procedural:20:1000".into(),
            texture_size: 512,
            episodes: 2000,
            episode_length: 10,
            workers: 1,
            seed: 1,
            reward_mode: RewardMode::New,
            reward_scale_c: 10.0,
            gamma: 0.1,
            epsilon: 0.05,
            batch_size: 64,
            replay_capacity: 1000,
            ae_learning_rate: 1e-4,
            critic_learning_rate: 1e-3,
            critic_filters: 32,
            critic_hidden: 200,
            huber_delta: 1.0,
            ae_updates_per_episode: 1,
            critic_updates_per_episode: 4,
            eval_interval: 200,
            env: EnvConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        self.env.validate()?;
        if self.episode_length < 2 {
            return bad("episode_length must be >= 2");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must be in [0, 1]");
        }
        if !(self.reward_scale_c > 0.0 && self.reward_scale_c.is_finite()) {
            return bad("reward_scale_c must be positive");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 {
            return bad("batch_size and replay_capacity must be positive");
        }
        for (name, lr) in [("ae_learning_rate", self.ae_learning_rate), ("critic_learning_rate", self.critic_learning_rate)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        if self.critic_filters == 0 || self.critic_hidden == 0 {
            return bad("critic_filters and critic_hidden must be positive");
        }
        if !(self.huber_delta > 0.0) {
            return bad("huber_delta must be positive");
        }
        if !(256..=MAX_TEXTURE_SIZE).contains(&self.texture_size) {
            return Err(Error::Config(format!("texture_size must be in [256, {MAX_TEXTURE_SIZE}]")));
        }
        if self.critic_filters > MAX_CRITIC_WIDTH || self.critic_hidden > MAX_CRITIC_WIDTH {
            return Err(Error::Config(format!("critic_filters and critic_hidden must be <= {MAX_CRITIC_WIDTH}")));
        }
        if self.workers > MAX_WORKERS || self.replay_capacity > MAX_REPLAY || self.batch_size > MAX_REPLAY {
            return Err(Error::Config(format!("workers must be <= {MAX_WORKERS}, replay_capacity and batch_size <= {MAX_REPLAY}")));
        }
        Ok(())
    }

    pub fn load_stimuli(&self) -> Result<(Arc<StimulusSet>, Arc<StimulusSet>)> {
        Ok((
            Arc::new(StimulusSet::from_spec(&self.stimuli, self.texture_size)?),
            Arc::new(StimulusSet::from_spec(&self.eval_stimuli, self.texture_size)?),
        ))
    }
}

/// The four autoencoders and the three critics.
#[derive(Clone, Debug, PartialEq)]
pub struct Models {
    pub perception: Perception,
    /// Indexed by `Joint as usize`.
    pub critics: Vec<Critic>,
}

impl Models {
    pub fn new<R: Rng + ?Sized>(config: &TrainConfig, rng: &mut R) -> Self {
        let perception = Perception::new(rng);
        let critics = Joint::ALL
            .iter()
            .map(|&j| Critic::new(j, config.critic_filters, config.critic_hidden, rng))
            .collect();
        Self { perception, critics }
    }

    pub fn critic(&self, joint: Joint) -> &Critic {
        &self.critics[joint as usize]
    }

    pub fn names(&self) -> Vec<String> {
        let ae = self.perception.models.iter().flat_map(Autoencoder::param_names);
        ae.chain(self.critics.iter().flat_map(Critic::param_names)).collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let ae = self.perception.models.iter().flat_map(|m| &m.params);
        ae.chain(self.critics.iter().flat_map(|c| &c.params)).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let ae = self.perception.models.iter_mut().flat_map(|m| &mut m.params);
        ae.chain(self.critics.iter_mut().flat_map(|c| &mut c.params)).collect()
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        self.names().into_iter().zip(self.tensors()).collect()
    }

    /// Overwrites every tensor, in [`Models::names`] order.
    pub fn assign(&mut self, values: Vec<Tensor>) -> Result<()> {
        let slots = self.tensors_mut();
        if slots.len() != values.len() {
            return Err(Error::InvalidArgument(format!("{} tensors for {} slots", values.len(), slots.len())));
        }
        for (slot, v) in slots.into_iter().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::Shape {
                    op: "assign",
                    detail: format!("{:?} into {:?}", v.shape(), slot.shape()),
                });
            }
            *slot = v;
        }
        Ok(())
    }

    /// Copies tensors by name; every slot must be present in `named`.
    pub fn assign_named(&mut self, named: &HashMap<String, Tensor>) -> Result<()> {
        let values = self
            .names()
            .iter()
            .map(|n| named.get(n).cloned().ok_or_else(|| Error::Checkpoint(format!("missing tensor `{n}`"))))
            .collect::<Result<Vec<_>>>()?;
        self.assign(values)
    }
}

/// Source of action values for the three joints.
pub trait ActionValues: Sync {
    fn q_values(&self, joint: Joint, step: &Step, env: &Environment) -> Result<[f32; ACTION_COUNT]>;
}

impl ActionValues for Models {
    fn q_values(&self, joint: Joint, step: &Step, _env: &Environment) -> Result<[f32; ACTION_COUNT]> {
        let stream = joint.stream();
        let q = self
            .critic(joint)
            .q_values(step.percept.code(stream, Scale::Fine), step.percept.code(stream, Scale::Coarse))?;
        Ok(q.data().try_into().expect("nine actions"))
    }
}

/// Scripted critic that reads the ground-truth error: `q(a) = −|e − a|`.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleCritic;

impl ActionValues for OracleCritic {
    fn q_values(&self, joint: Joint, _step: &Step, env: &Environment) -> Result<[f32; ACTION_COUNT]> {
        let e = env.ground_truth_errors().get(joint);
        Ok(std::array::from_fn(|a| -(e - ActionSet::value(a)).abs() as f32))
    }
}

/// Renders nothing new: encodes the environment's current observation.
pub fn observe(env: &Environment, perception: &Perception) -> Result<Step> {
    let observation = env.observation();
    let percept = perception.perceive(&observation)?;
    Ok(Step { observation, percept })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub worker: usize,
    /// `|error|` after the last iteration, per joint (vergence, pan, tilt).
    pub final_abs_error: [f64; 3],
    /// Mean combined loss over the episode, per stream (binocular, temporal).
    pub mean_loss: [f64; 2],
    /// Batch losses of the updates that followed the episode.
    pub ae_loss: [f64; 4],
    pub critic_loss: [f64; 3],
}

pub struct EpisodeOutcome {
    /// Indexed by `Joint as usize`; `episode_length − 1` each.
    pub transitions: [Vec<Transition>; 3],
    pub final_errors: [f64; 3],
    pub mean_loss: [f64; 2],
}

/// Runs one episode from a fresh reset: observe, act ε-greedily on all
/// three joints, step, and reward each action with the change in its
/// stream's combined loss.
///
/// Losses enter the reward divided by `loss_scale` (per stream); a zero
/// entry means "use this episode's first loss".
pub fn run_episode<R: Rng + ?Sized>(
    env: &mut Environment,
    perception: &Perception,
    policy: &dyn ActionValues,
    config: &TrainConfig,
    loss_scale: [f64; 2],
    rng: &mut R,
) -> Result<EpisodeOutcome> {
    let length = config.episode_length;
    if length < 2 {
        return Err(Error::Config("episode_length must be >= 2".into()));
    }
    env.reset(rng, length)?;
    let mut step = Arc::new(observe(env, perception)?);
    let scale: [f32; 2] = std::array::from_fn(|i| {
        let s = if loss_scale[i] > 0.0 { loss_scale[i] } else { step.percept.combined_loss(Stream::ALL[i]) as f64 };
        s.max(1e-12) as f32
    });
    let mut loss_sum = [0.0f64; 2];
    let mut add_losses = |p: &Percept| {
        for s in Stream::ALL {
            loss_sum[s as usize] += p.combined_loss(s) as f64;
        }
    };
    add_losses(&step.percept);
    let mut transitions: [Vec<Transition>; 3] = Default::default();
    for t in 0..length - 1 {
        let mut chosen = [0usize; 3];
        let mut actions = Actions::default();
        for joint in Joint::ALL {
            let q = policy.q_values(joint, &step, env)?;
            let a = select_action(&q, config.epsilon, rng);
            chosen[joint as usize] = a;
            actions.set(joint, ActionSet::value(a));
        }
        env.step(actions)?;
        let next = Arc::new(observe(env, perception)?);
        add_losses(&next.percept);
        for joint in Joint::ALL {
            let stream = joint.stream();
            let norm = scale[stream as usize];
            let reward = compute_reward(
                step.percept.combined_loss(stream) / norm,
                next.percept.combined_loss(stream) / norm,
                config.reward_mode,
                config.reward_scale_c,
            );
            if !reward.is_finite() {
                return Err(Error::NonFinite(format!("{} reward", joint.name())));
            }
            transitions[joint as usize].push(Transition {
                state: Arc::clone(&step),
                action: chosen[joint as usize],
                reward,
                next: Arc::clone(&next),
                terminal: t == length - 2,
            });
        }
        step = next;
    }
    let err = env.ground_truth_errors();
    Ok(EpisodeOutcome {
        transitions,
        final_errors: Joint::ALL.map(|j| err.get(j)),
        mean_loss: loss_sum.map(|s| s / length as f64),
    })
}

fn stream_batch(steps: &[&Step], stream: Stream, scale: Scale) -> Result<Tensor> {
    let c = stream.channels();
    let mut data = Vec::with_capacity(steps.len() * 32 * 32 * c);
    for s in steps {
        data.extend_from_slice(build_stream(&s.observation, stream, scale).data());
    }
    let side = crate::environment::CROP;
    Tensor::from_vec(&[steps.len(), side, side, c], data)
}

/// Per-worker learning state: environment, RNG, optimizers and replay.
#[derive(Clone, Debug)]
pub struct Worker {
    pub id: usize,
    rng: ChaCha8Rng,
    env: Environment,
    ae_opt: Vec<AeOptimizer>,
    critic_opt: Vec<CriticOptimizer>,
    buffers: Vec<ReplayBuffer>,
    /// Local copy refreshed from the server before every episode.
    local: Models,
    /// Running mean of each stream's combined loss (0 until the first episode).
    loss_scale: [f64; 2],
}

/// Weight of the newest episode in the running loss scale.
const LOSS_SCALE_RATE: f64 = 0.01;

/// Stream 1 of ChaCha keeps worker randomness disjoint from initialization.
fn worker_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(id as u64));
    rng.set_stream(1);
    rng
}

impl Worker {
    pub fn new(id: usize, config: &TrainConfig, models: &Models, stimuli: Arc<StimulusSet>) -> Result<Self> {
        let ae_cfg = AdamConfig::with_learning_rate(config.ae_learning_rate);
        let critic_cfg = AdamConfig::with_learning_rate(config.critic_learning_rate);
        Ok(Self {
            id,
            rng: worker_rng(config.seed, id),
            env: Environment::new(config.env, stimuli)?,
            ae_opt: models.perception.models.iter().map(|m| AeOptimizer::new(m.stream, ae_cfg)).collect(),
            critic_opt: models.critics.iter().map(|c| CriticOptimizer::new(&c.shape, critic_cfg)).collect(),
            buffers: Joint::ALL.iter().map(|_| ReplayBuffer::new(config.replay_capacity)).collect(),
            local: models.clone(),
            loss_scale: [0.0; 2],
        })
    }

    /// Pull → episode → replay, then per update round: pull → local Adam
    /// deltas → push.
    pub fn train_episode(&mut self, server: &ParameterServer, config: &TrainConfig, episode: usize) -> Result<EpisodeStats> {
        self.local.assign(server.snapshot()?)?;
        let models = &mut self.local;
        let names = models.names();

        let out = run_episode(&mut self.env, &models.perception, &*models, config, self.loss_scale, &mut self.rng)?;
        for (s, &m) in self.loss_scale.iter_mut().zip(&out.mean_loss) {
            *s = if *s > 0.0 { (1.0 - LOSS_SCALE_RATE) * *s + LOSS_SCALE_RATE * m } else { m };
        }
        for (buffer, ts) in self.buffers.iter_mut().zip(out.transitions) {
            ts.into_iter().for_each(|t| buffer.push(t));
        }

        let mut ae_loss = [0.0f64; 4];
        let mut critic_loss = [0.0f64; 3];
        let rounds = config.ae_updates_per_episode.max(config.critic_updates_per_episode);
        for round in 0..rounds {
            // Each round starts from fresh weights and publishes its deltas at
            // once, so concurrent workers never stack several blind steps.
            if round > 0 {
                models.assign(server.snapshot()?)?;
            }
            let batches: Vec<Vec<Transition>> = self
                .buffers
                .iter()
                .map(|b| Ok(b.sample(config.batch_size, &mut self.rng)?.into_iter().cloned().collect()))
                .collect::<Result<_>>()?;
            let mut deltas: Vec<(usize, Tensor)> = Vec::new();
            let mut offset = 0;
            if round < config.ae_updates_per_episode {
                for (i, (model, opt)) in models.perception.models.iter().zip(&mut self.ae_opt).enumerate() {
                    // binocular models learn from the vergence batch, temporal ones from the pan batch
                    let source = match model.stream {
                        Stream::Binocular => Joint::Vergence,
                        Stream::Temporal => Joint::Pan,
                    };
                    let steps: Vec<&Step> = batches[source as usize].iter().map(|t| t.state.as_ref()).collect();
                    let batch = stream_batch(&steps, model.stream, model.scale)?;
                    let (loss, d) = opt.deltas(model, &batch)?;
                    ae_loss[i] = loss as f64;
                    deltas.extend(d.into_iter().enumerate().map(|(k, t)| (offset + k, t)));
                    offset += model.params.len();
                }
            } else {
                offset = models.perception.models.iter().map(|m| m.params.len()).sum();
            }
            if round < config.critic_updates_per_episode {
                for (j, (critic, opt)) in models.critics.iter().zip(&mut self.critic_opt).enumerate() {
                    let batch: Vec<&Transition> = batches[j].iter().collect();
                    let (loss, d) = critic_deltas(&batch, critic, opt, config.gamma, config.huber_delta)?;
                    critic_loss[j] = loss as f64;
                    deltas.extend(d.into_iter().enumerate().map(|(k, t)| (offset + k, t)));
                    offset += critic.params.len();
                }
            }
            let named: Vec<(&str, &Tensor)> = deltas.iter().map(|(i, d)| (names[*i].as_str(), d)).collect();
            server.apply(&named)?;
        }

        Ok(EpisodeStats {
            episode,
            worker: self.id,
            final_abs_error: out.final_errors.map(f64::abs),
            mean_loss: out.mean_loss,
            ae_loss,
            critic_loss,
        })
    }
}

/// `testing_error` measured on a snapshot during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// Number of episodes completed when the snapshot was taken.
    pub episode: usize,
    pub testing_error: [f64; 3],
}

/// Owns the server, the workers and the training history.
pub struct Trainer {
    config: TrainConfig,
    stimuli: Arc<StimulusSet>,
    eval_stimuli: Arc<StimulusSet>,
    server: ParameterServer,
    workers: Vec<Worker>,
    episodes_done: usize,
    log: Vec<EpisodeStats>,
    evals: Vec<EvalPoint>,
    max_threads: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let (stimuli, eval_stimuli) = config.load_stimuli()?;
        Self::with_stimuli(config, stimuli, eval_stimuli)
    }

    pub fn with_stimuli(config: TrainConfig, stimuli: Arc<StimulusSet>, eval_stimuli: Arc<StimulusSet>) -> Result<Self> {
        config.validate()?;
        let models = Models::new(&config, &mut ChaCha8Rng::seed_from_u64(config.seed));
        let server = ParameterServer::new(models.names().into_iter().zip(models.tensors().into_iter().cloned()).collect())?;
        let workers = (0..config.workers)
            .map(|id| Worker::new(id, &config, &models, Arc::clone(&stimuli)))
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            stimuli,
            eval_stimuli,
            server,
            workers,
            episodes_done: 0,
            log: Vec::new(),
            evals: Vec::new(),
            max_threads: usize::MAX,
        })
    }

    /// Caps OS threads; workers beyond the cap share threads round-robin.
    pub fn set_max_threads(&mut self, threads: usize) {
        self.max_threads = threads.max(1);
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn server(&self) -> &ParameterServer {
        &self.server
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn log(&self) -> &[EpisodeStats] {
        &self.log
    }

    pub fn evals(&self) -> &[EvalPoint] {
        &self.evals
    }

    pub fn stimuli(&self) -> &Arc<StimulusSet> {
        &self.stimuli
    }

    pub fn eval_stimuli(&self) -> &Arc<StimulusSet> {
        &self.eval_stimuli
    }

    pub fn models(&self) -> Result<Models> {
        let mut m = Models::new(&self.config, &mut ChaCha8Rng::seed_from_u64(0));
        m.assign(self.server.snapshot()?)?;
        Ok(m)
    }

    /// Trains until `until` episodes have completed in total.
    pub fn run_until(&mut self, until: usize) -> Result<()> {
        if until <= self.episodes_done {
            return Ok(());
        }
        let threads = self.workers.len().min(self.max_threads);
        let next = AtomicUsize::new(self.episodes_done);
        let stop = AtomicBool::new(false);
        let results = Mutex::new((Vec::new(), Vec::new()));
        let first_error: Mutex<Option<Error>> = Mutex::new(None);
        let mut lanes: Vec<Vec<&mut Worker>> = (0..threads).map(|_| Vec::new()).collect();
        for (i, w) in self.workers.iter_mut().enumerate() {
            lanes[i % threads].push(w);
        }
        let (config, server, eval_stimuli) = (&self.config, &self.server, &self.eval_stimuli);
        let lane = |workers: &mut Vec<&mut Worker>| -> Result<()> {
            loop {
                for w in workers.iter_mut() {
                    if stop.load(Ordering::SeqCst) {
                        return Ok(());
                    }
                    let episode = next.fetch_add(1, Ordering::SeqCst);
                    if episode >= until {
                        return Ok(());
                    }
                    let stats = w.train_episode(server, config, episode)?;
                    let done = episode + 1;
                    let eval = if config.eval_interval > 0 && done.is_multiple_of(config.eval_interval) {
                        let mut models = Models::new(config, &mut ChaCha8Rng::seed_from_u64(0));
                        models.assign(server.snapshot()?)?;
                        let testing_error = evaluation::testing_error(&models.perception, &models, eval_stimuli, &EvalConfig::from(config))?;
                        Some(EvalPoint { episode: done, testing_error })
                    } else {
                        None
                    };
                    let mut r = results.lock().map_err(|_| Error::Server("result log poisoned".into()))?;
                    r.0.push(stats);
                    r.1.extend(eval);
                }
            }
        };
        let run_lane = |workers: &mut Vec<&mut Worker>| {
            if let Err(e) = lane(workers) {
                stop.store(true, Ordering::SeqCst);
                first_error.lock().expect("error slot").get_or_insert(e);
            }
        };
        if threads == 1 {
            run_lane(&mut lanes[0]);
        } else {
            std::thread::scope(|s| {
                for l in lanes.iter_mut() {
                    s.spawn(|| run_lane(l));
                }
            });
        }
        let (mut log, mut evals) = results.into_inner().map_err(|_| Error::Server("result log poisoned".into()))?;
        log.sort_by_key(|s| s.episode);
        evals.sort_by_key(|e| e.episode);
        self.episodes_done += log.len();
        self.log.extend(log);
        self.evals.extend(evals);
        match first_error.into_inner().expect("error slot") {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.config.episodes)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionRecord {
    state: u32,
    action: u8,
    reward_bits: u32,
    next: u32,
    terminal: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkerMeta {
    id: usize,
    rng: ChaCha8Rng,
    loss_scale: [f64; 2],
    ae_adam_t: Vec<Vec<u64>>,
    critic_adam_t: Vec<Vec<u64>>,
    steps: usize,
    transitions: Vec<Vec<TransitionRecord>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    config: TrainConfig,
    episodes_done: usize,
    counters: Vec<u64>,
    workers: Vec<WorkerMeta>,
    log: Vec<EpisodeStats>,
    evals: Vec<EvalPoint>,
}

const CODE_LEN: [usize; 4] = [
    crate::perception::GRID * crate::perception::GRID * 24,
    crate::perception::GRID * crate::perception::GRID * 24,
    crate::perception::GRID * crate::perception::GRID * 48,
    crate::perception::GRID * crate::perception::GRID * 48,
];

fn ckpt_err(e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(e.to_string())
}

impl Trainer {
    fn encode_checkpoint(&self) -> Result<Vec<u8>> {
        let models = self.models()?;
        let mut owned: Vec<(String, Tensor)> = Vec::new();
        let mut metas = Vec::new();
        for w in &self.workers {
            let p = format!("worker.{}", w.id);
            let mut opt_t = |prefix: &str, states: &[crate::numerics::AdamState], names: &[String]| -> Vec<u64> {
                for (s, n) in states.iter().zip(names) {
                    owned.push((format!("{p}.{prefix}.{n}.m"), s.m.clone()));
                    owned.push((format!("{p}.{prefix}.{n}.v"), s.v.clone()));
                }
                states.iter().map(|s| s.t).collect()
            };
            let ae_adam_t = w
                .ae_opt
                .iter()
                .zip(&models.perception.models)
                .map(|(o, m)| opt_t("adam", &o.states, &m.param_names()))
                .collect();
            let critic_adam_t = w
                .critic_opt
                .iter()
                .zip(&models.critics)
                .map(|(o, c)| opt_t("adam", &o.states, &c.param_names()))
                .collect();

            // replay: unique steps in first-seen order, transitions by index
            let mut index: HashMap<*const Step, u32> = HashMap::new();
            let mut steps: Vec<Arc<Step>> = Vec::new();
            let mut id_of = |s: &Arc<Step>| {
                *index.entry(Arc::as_ptr(s)).or_insert_with(|| {
                    steps.push(Arc::clone(s));
                    (steps.len() - 1) as u32
                })
            };
            let transitions: Vec<Vec<TransitionRecord>> = w
                .buffers
                .iter()
                .map(|b| {
                    b.iter()
                        .map(|t| TransitionRecord {
                            state: id_of(&t.state),
                            action: t.action as u8,
                            reward_bits: t.reward.to_bits(),
                            next: id_of(&t.next),
                            terminal: t.terminal,
                        })
                        .collect()
                })
                .collect();
            if !steps.is_empty() {
                let n = steps.len();
                let mut obs = Vec::with_capacity(n * BinocularObservation::FLAT_LEN);
                let mut codes = Vec::with_capacity(n * CODE_LEN.iter().sum::<usize>());
                let mut losses = Vec::with_capacity(n * 4);
                for s in &steps {
                    obs.extend(s.observation.to_flat());
                    for c in &s.percept.codes {
                        codes.extend_from_slice(c.data());
                    }
                    losses.extend(s.percept.losses.iter().flatten());
                }
                owned.push((format!("{p}.replay.observations"), Tensor::from_vec(&[n, BinocularObservation::FLAT_LEN], obs)?));
                owned.push((format!("{p}.replay.codes"), Tensor::from_vec(&[n, CODE_LEN.iter().sum()], codes)?));
                owned.push((format!("{p}.replay.losses"), Tensor::from_vec(&[n, 4], losses)?));
            }
            metas.push(WorkerMeta {
                id: w.id,
                rng: w.rng.clone(),
                loss_scale: w.loss_scale,
                ae_adam_t,
                critic_adam_t,
                steps: steps.len(),
                transitions,
            });
        }
        let meta = CheckpointMeta {
            config: self.config.clone(),
            episodes_done: self.episodes_done,
            counters: self.server.counters(),
            workers: metas,
            log: self.log.clone(),
            evals: self.evals.clone(),
        };
        let json = serde_json::to_string(&meta).map_err(ckpt_err)?;
        let mut all: Vec<(String, &Tensor)> = models.named();
        all.extend(owned.iter().map(|(n, t)| (n.clone(), t)));
        Ok(checkpoint::encode(&json, &all))
    }

    /// Saves models, optimizer moments, replay buffers, RNG states and the
    /// training history.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write_file(path, &self.encode_checkpoint()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let (json, tensors) = checkpoint::decode(&bytes)?;
        let meta: CheckpointMeta = serde_json::from_str(&json).map_err(ckpt_err)?;
        meta.config.validate()?;
        let (stimuli, eval_stimuli) = meta.config.load_stimuli()?;
        Self::restore(meta, tensors, stimuli, eval_stimuli)
    }

    /// Like [`Trainer::load`] but with caller-supplied stimuli.
    pub fn load_with_stimuli(path: &Path, stimuli: Arc<StimulusSet>, eval_stimuli: Arc<StimulusSet>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let (json, tensors) = checkpoint::decode(&bytes)?;
        let meta: CheckpointMeta = serde_json::from_str(&json).map_err(ckpt_err)?;
        Self::restore(meta, tensors, stimuli, eval_stimuli)
    }

    fn restore(
        meta: CheckpointMeta,
        tensors: Vec<(String, Tensor)>,
        stimuli: Arc<StimulusSet>,
        eval_stimuli: Arc<StimulusSet>,
    ) -> Result<Self> {
        let mut named: HashMap<String, Tensor> = tensors.into_iter().collect();
        let mut trainer = Self::with_stimuli(meta.config, stimuli, eval_stimuli)?;
        let mut models = trainer.models()?;
        models.assign_named(&named)?;
        trainer.server = ParameterServer::new(models.names().into_iter().zip(models.tensors().into_iter().cloned()).collect())?;
        trainer.server.set_counters(&meta.counters)?;
        if meta.workers.len() != trainer.workers.len() {
            return Err(Error::Checkpoint("worker count differs from config".into()));
        }
        let mut take = |name: String| named.remove(&name).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")));
        for (w, wm) in trainer.workers.iter_mut().zip(meta.workers) {
            let p = format!("worker.{}", w.id);
            w.rng = wm.rng;
            w.loss_scale = wm.loss_scale;
            let groups = w
                .ae_opt
                .iter_mut()
                .map(|o| &mut o.states)
                .zip(models.perception.models.iter().map(|m| m.param_names()))
                .zip(&wm.ae_adam_t)
                .chain(
                    w.critic_opt
                        .iter_mut()
                        .map(|o| &mut o.states)
                        .zip(models.critics.iter().map(|c| c.param_names()))
                        .zip(&wm.critic_adam_t),
                );
            for ((states, names), ts) in groups {
                if ts.len() != states.len() {
                    return Err(Error::Checkpoint("optimizer step count mismatch".into()));
                }
                for ((s, n), &t) in states.iter_mut().zip(names).zip(ts) {
                    let m = take(format!("{p}.adam.{n}.m"))?;
                    let v = take(format!("{p}.adam.{n}.v"))?;
                    if m.shape() != s.m.shape() || v.shape() != s.v.shape() {
                        return Err(Error::Checkpoint(format!("optimizer moment shape for `{n}`")));
                    }
                    s.m = m;
                    s.v = v;
                    s.t = t;
                }
            }
            let mut steps: Vec<Arc<Step>> = Vec::with_capacity(wm.steps);
            if wm.steps > 0 {
                let obs = take(format!("{p}.replay.observations"))?;
                let codes = take(format!("{p}.replay.codes"))?;
                let losses = take(format!("{p}.replay.losses"))?;
                let code_total: usize = CODE_LEN.iter().sum();
                if obs.shape() != [wm.steps, BinocularObservation::FLAT_LEN]
                    || codes.shape() != [wm.steps, code_total]
                    || losses.shape() != [wm.steps, 4]
                {
                    return Err(Error::Checkpoint("replay tensor shapes".into()));
                }
                for i in 0..wm.steps {
                    let observation = BinocularObservation::from_flat(&obs.data()[i * BinocularObservation::FLAT_LEN..][..BinocularObservation::FLAT_LEN])
                        .ok_or_else(|| Error::Checkpoint("replay observation".into()))?;
                    let mut row = &codes.data()[i * code_total..][..code_total];
                    let mut code_tensors = Vec::with_capacity(4);
                    for (k, len) in CODE_LEN.iter().enumerate() {
                        let channels = if k < 2 { 24 } else { 48 };
                        let g = crate::perception::GRID;
                        code_tensors.push(Tensor::from_vec(&[g, g, channels], row[..*len].to_vec())?);
                        row = &row[*len..];
                    }
                    let l = &losses.data()[4 * i..4 * i + 4];
                    steps.push(Arc::new(Step {
                        observation,
                        percept: Percept {
                            codes: code_tensors,
                            losses: [[l[0], l[1]], [l[2], l[3]]],
                        },
                    }));
                }
            }
            if wm.transitions.len() != w.buffers.len() {
                return Err(Error::Checkpoint("replay buffer count".into()));
            }
            for (buffer, records) in w.buffers.iter_mut().zip(wm.transitions) {
                for r in records {
                    let get = |i: u32| steps.get(i as usize).cloned().ok_or_else(|| Error::Checkpoint("replay step index".into()));
                    if r.action as usize >= ACTION_COUNT {
                        return Err(Error::Checkpoint("replay action index".into()));
                    }
                    buffer.push(Transition {
                        state: get(r.state)?,
                        action: r.action as usize,
                        reward: f32::from_bits(r.reward_bits),
                        next: get(r.next)?,
                        terminal: r.terminal,
                    });
                }
            }
        }
        trainer.episodes_done = meta.episodes_done;
        trainer.log = meta.log;
        trainer.evals = meta.evals;
        Ok(trainer)
    }
}

/// Models and config from a checkpoint, ignoring worker state.
pub fn load_models(path: &Path) -> Result<(TrainConfig, Models)> {
    models_from_bytes(&std::fs::read(path)?)
}

/// [`load_models`] on an in-memory checkpoint image.
pub fn models_from_bytes(bytes: &[u8]) -> Result<(TrainConfig, Models)> {
    let (json, tensors) = checkpoint::decode(bytes)?;
    let meta: CheckpointMeta = serde_json::from_str(&json).map_err(ckpt_err)?;
    meta.config.validate()?;
    let mut models = Models::new(&meta.config, &mut ChaCha8Rng::seed_from_u64(0));
    models.assign_named(&tensors.into_iter().collect())?;
    Ok((meta.config, models))
}
