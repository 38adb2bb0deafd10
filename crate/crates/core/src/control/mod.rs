//! Intrinsic rewards, per-joint Q-critics, ε-greedy action selection and
//! experience replay.

mod critic;
mod replay;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use critic::{critic_backward, critic_forward, critic_loss_and_grads, Critic, CriticForward, CriticOptimizer, CriticShape};
pub use replay::{ReplayBuffer, Step, Transition};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::perception::{Scale, Stream};

pub const ACTION_COUNT: usize = 9;

/// Discrete actions shared by every joint: px/it for vergence, px/it² for
/// pan and tilt.
pub struct ActionSet;

impl ActionSet {
    pub const VALUES: [f64; ACTION_COUNT] = [-4.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 4.0];
    pub const NULL: usize = 4;

    pub fn value(index: usize) -> f64 {
        Self::VALUES[index]
    }

    pub fn index_of(value: f64) -> Option<usize> {
        Self::VALUES.iter().position(|&v| v == value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Joint {
    Vergence,
    Pan,
    Tilt,
}

impl Joint {
    pub const ALL: [Joint; 3] = [Joint::Vergence, Joint::Pan, Joint::Tilt];

    pub fn name(self) -> &'static str {
        match self {
            Joint::Vergence => "vergence",
            Joint::Pan => "pan",
            Joint::Tilt => "tilt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|j| j.name() == s)
    }

    /// Stream whose encoding and loss drive this joint.
    pub fn stream(self) -> Stream {
        match self {
            Joint::Vergence => Stream::Binocular,
            Joint::Pan | Joint::Tilt => Stream::Temporal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    /// Improvement of encoding quality: `C·(l_t − l_{t+1})`.
    New,
    /// Quality of the encoding: `−C·l_{t+1}`.
    Old,
}

impl RewardMode {
    pub fn name(self) -> &'static str {
        match self {
            RewardMode::New => "new",
            RewardMode::Old => "old",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "new" => Some(RewardMode::New),
            "old" => Some(RewardMode::Old),
            _ => None,
        }
    }
}

pub fn compute_reward(loss_now: f32, loss_next: f32, mode: RewardMode, scale: f32) -> f32 {
    match mode {
        RewardMode::New => scale * (loss_now - loss_next),
        RewardMode::Old => -scale * loss_next,
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn greedy_action(q: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy: uniform over all actions with probability ε, otherwise greedy.
pub fn select_action<R: Rng + ?Sized>(q: &[f32], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        rng.gen_range(0..q.len())
    } else {
        greedy_action(q)
    }
}

fn stack(codes: &[&Tensor]) -> Result<Tensor> {
    let first = codes.first().ok_or(Error::EmptyBuffer)?;
    let mut shape = vec![codes.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(first.len() * codes.len());
    for c in codes {
        data.extend_from_slice(c.data());
    }
    Tensor::from_vec(&shape, data)
}

/// Stacks the fine and coarse encodings of `stream` from several steps.
pub fn stack_codes<'a>(steps: impl Iterator<Item = &'a Step> + Clone, stream: Stream) -> Result<(Tensor, Tensor)> {
    let fine: Vec<&Tensor> = steps.clone().map(|s| s.percept.code(stream, Scale::Fine)).collect();
    let coarse: Vec<&Tensor> = steps.map(|s| s.percept.code(stream, Scale::Coarse)).collect();
    Ok((stack(&fine)?, stack(&coarse)?))
}

/// One-step bootstrapped targets: `r` for terminal transitions, otherwise
/// `r + γ·max_a' q(s')`.
pub fn q_targets(batch: &[&Transition], critic: &Critic, gamma: f32) -> Result<Vec<f32>> {
    let (nf, nc) = stack_codes(batch.iter().map(|t| t.next.as_ref()), critic.joint.stream())?;
    let next_q = critic.q_values(&nf, &nc)?;
    let targets: Vec<f32> = batch
        .iter()
        .zip(next_q.data().chunks_exact(ACTION_COUNT))
        .map(|(t, q)| {
            if t.terminal || gamma == 0.0 {
                t.reward
            } else {
                t.reward + gamma * q.iter().copied().fold(f32::NEG_INFINITY, f32::max)
            }
        })
        .collect();
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("q target".into()));
    }
    Ok(targets)
}

/// Mean Huber loss and the Adam deltas of one critic step; the critic itself
/// is not modified.
pub fn critic_deltas(
    batch: &[&Transition],
    critic: &Critic,
    opt: &mut CriticOptimizer,
    gamma: f32,
    huber_delta: f32,
) -> Result<(f32, Vec<Tensor>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma {gamma} outside [0, 1)")));
    }
    let targets = q_targets(batch, critic, gamma)?;
    let (fine, coarse) = stack_codes(batch.iter().map(|t| t.state.as_ref()), critic.joint.stream())?;
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
    let (loss, grads) = critic_loss_and_grads(&critic.params, &fine, &coarse, &actions, &targets, huber_delta)?;
    if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("critic loss".into()));
    }
    let deltas = opt
        .states
        .iter_mut()
        .zip(&grads)
        .map(|(s, g)| s.delta(g))
        .collect::<Result<Vec<_>>>()?;
    Ok((loss, deltas))
}

/// One Adam step on the critic against a batch of transitions.
pub fn critic_train_step(
    batch: &[&Transition],
    critic: &mut Critic,
    opt: &mut CriticOptimizer,
    gamma: f32,
    huber_delta: f32,
) -> Result<f32> {
    let (loss, deltas) = critic_deltas(batch, critic, opt, gamma, huber_delta)?;
    for (p, d) in critic.params.iter_mut().zip(&deltas) {
        p.add_assign(d)?;
    }
    Ok(loss)
}
