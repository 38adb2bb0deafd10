//! Q-network over the two-scale encoding of one visual stream.
//!
//! Per scale: conv 2×2 (stride 1) + ReLU, max-pool 2×2. Both pooled maps
//! are flattened and concatenated, then dense + ReLU and a linear dense
//! layer with one output per action.

use rand::Rng;

use crate::control::{Joint, ACTION_COUNT};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{
    conv2d, conv2d_grads, dense, dense_backward, glorot_uniform, huber_loss, maxpool2, maxpool2_backward,
    relu_backward, relu_inplace, AdamConfig, AdamState, Scalar, Tensor,
};
use crate::perception::{Scale, GRID};

/// Width of the per-scale convolution and the hidden dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CriticShape {
    pub code_channels: usize,
    pub filters: usize,
    pub hidden: usize,
}

impl CriticShape {
    const CONV_KERNEL: usize = 2;

    pub fn pooled_side() -> usize {
        let conv_side = GRID - Self::CONV_KERNEL + 1;
        conv_side / 2
    }

    pub fn flat_per_scale(&self) -> usize {
        Self::pooled_side() * Self::pooled_side() * self.filters
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let k = Self::CONV_KERNEL;
        let flat = 2 * self.flat_per_scale();
        vec![
            vec![k, k, self.code_channels, self.filters],
            vec![self.filters],
            vec![k, k, self.code_channels, self.filters],
            vec![self.filters],
            vec![flat, self.hidden],
            vec![self.hidden],
            vec![self.hidden, ACTION_COUNT],
            vec![ACTION_COUNT],
        ]
    }
}

const LAYER_NAMES: [&str; 8] = [
    "conv_fine.w",
    "conv_fine.b",
    "conv_coarse.w",
    "conv_coarse.b",
    "fc1.w",
    "fc1.b",
    "fc2.w",
    "fc2.b",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub joint: Joint,
    pub shape: CriticShape,
    pub params: Vec<Tensor>,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(joint: Joint, filters: usize, hidden: usize, rng: &mut R) -> Self {
        let shape = CriticShape {
            code_channels: joint.stream().bottleneck(),
            filters,
            hidden,
        };
        let params = shape
            .param_shapes()
            .iter()
            .map(|s| match s.as_slice() {
                [k, _, cin, cout] => glorot_uniform(s, k * k * cin, k * k * cout, rng),
                [n, m] => glorot_uniform(s, *n, *m, rng),
                _ => Tensor::zeros(s),
            })
            .collect();
        Self { joint, shape, params }
    }

    pub fn param_names(&self) -> Vec<String> {
        LAYER_NAMES
            .iter()
            .map(|l| format!("critic.{}.{l}", self.joint.name()))
            .collect()
    }

    fn check(&self, fine: &Tensor, coarse: &Tensor) -> Result<()> {
        let c = self.shape.code_channels;
        for (scale, t) in [(Scale::Fine, fine), (Scale::Coarse, coarse)] {
            let ok = match t.shape() {
                [h, w, ch] | [_, h, w, ch] => *h == GRID && *w == GRID && *ch == c,
                _ => false,
            };
            if !ok {
                return shape_err(
                    "q_values",
                    format!("{} encoding must be [.., {GRID}, {GRID}, {c}], got {:?}", scale.name(), t.shape()),
                );
            }
        }
        if fine.rank() != coarse.rank() || fine.shape()[0] != coarse.shape()[0] {
            return shape_err("q_values", "fine and coarse batches differ");
        }
        Ok(())
    }

    /// Action values; `[9]` for a single state or `[B, 9]` for a batch.
    pub fn q_values(&self, fine: &Tensor, coarse: &Tensor) -> Result<Tensor> {
        self.check(fine, coarse)?;
        Ok(critic_forward(&self.params, fine, coarse)?.q)
    }
}

/// Activations kept for the backward pass.
pub struct CriticForward<T: Scalar> {
    conv: [Tensor<T>; 2],
    pool_idx: [Vec<usize>; 2],
    flat: Tensor<T>,
    hidden: Tensor<T>,
    pub q: Tensor<T>,
}

fn to_batch<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    if t.rank() == 4 {
        Ok(t.clone())
    } else {
        let mut s = vec![1];
        s.extend_from_slice(t.shape());
        t.clone().reshape(&s)
    }
}

pub fn critic_forward<T: Scalar>(params: &[Tensor<T>], fine: &Tensor<T>, coarse: &Tensor<T>) -> Result<CriticForward<T>> {
    let single = fine.rank() == 3;
    let inputs = [to_batch(fine)?, to_batch(coarse)?];
    let batch = inputs[0].shape()[0];
    let mut conv = Vec::with_capacity(2);
    let mut pool_idx = Vec::with_capacity(2);
    let mut pooled = Vec::with_capacity(2);
    for (i, x) in inputs.iter().enumerate() {
        let mut c = conv2d(x, &params[2 * i], &params[2 * i + 1], 1)?;
        relu_inplace(&mut c);
        let (p, idx) = maxpool2(&c)?;
        conv.push(c);
        pool_idx.push(idx);
        pooled.push(p);
    }
    let per = pooled[0].len() / batch;
    let mut flat = Vec::with_capacity(2 * per * batch);
    for b in 0..batch {
        for p in &pooled {
            flat.extend_from_slice(&p.data()[b * per..(b + 1) * per]);
        }
    }
    let flat = Tensor::from_vec(&[batch, 2 * per], flat)?;
    let mut hidden = dense(&flat, &params[4], &params[5])?;
    relu_inplace(&mut hidden);
    let mut q = dense(&hidden, &params[6], &params[7])?;
    if single {
        q = q.reshape(&[ACTION_COUNT])?;
    }
    let [c0, c1]: [Tensor<T>; 2] = conv.try_into().map_err(|_| Error::InvalidArgument("two scales".into()))?;
    let [i0, i1]: [Vec<usize>; 2] = pool_idx.try_into().map_err(|_| Error::InvalidArgument("two scales".into()))?;
    Ok(CriticForward {
        conv: [c0, c1],
        pool_idx: [i0, i1],
        flat,
        hidden,
        q,
    })
}

/// Parameter gradients given `d_q` (`[B, 9]`).
pub fn critic_backward<T: Scalar>(
    params: &[Tensor<T>],
    fwd: &CriticForward<T>,
    fine: &Tensor<T>,
    coarse: &Tensor<T>,
    d_q: &Tensor<T>,
) -> Result<Vec<Tensor<T>>> {
    let inputs = [to_batch(fine)?, to_batch(coarse)?];
    let batch = inputs[0].shape()[0];
    let d_q = d_q.clone().reshape(&[batch, ACTION_COUNT])?;
    let (d_hidden, g_fc2_w, g_fc2_b) = dense_backward(&fwd.hidden, &params[6], &d_q)?;
    let d_hidden = relu_backward(&fwd.hidden, &d_hidden)?;
    let (d_flat, g_fc1_w, g_fc1_b) = dense_backward(&fwd.flat, &params[4], &d_hidden)?;

    let per = fwd.flat.shape()[1] / 2;
    let mut grads = Vec::with_capacity(8);
    for (i, x) in inputs.iter().enumerate() {
        let mut d_pooled = Vec::with_capacity(per * batch);
        for b in 0..batch {
            let row = &d_flat.data()[b * 2 * per..(b + 1) * 2 * per];
            d_pooled.extend_from_slice(&row[i * per..(i + 1) * per]);
        }
        let d_pooled = Tensor::from_vec(&[d_pooled.len()], d_pooled)?;
        let d_conv = maxpool2_backward(fwd.conv[i].shape(), &fwd.pool_idx[i], &d_pooled)?;
        let d_conv = relu_backward(&fwd.conv[i], &d_conv)?;
        let g = conv2d_grads(x, &params[2 * i], 1, &d_conv, false)?;
        grads.push(g.weights);
        grads.push(g.bias);
    }
    grads.extend([g_fc1_w, g_fc1_b, g_fc2_w, g_fc2_b]);
    Ok(grads)
}

/// Mean Huber loss of the taken actions' values against `targets`, and its
/// parameter gradients. Only the taken action's output receives gradient.
pub fn critic_loss_and_grads<T: Scalar>(
    params: &[Tensor<T>],
    fine: &Tensor<T>,
    coarse: &Tensor<T>,
    actions: &[usize],
    targets: &[T],
    huber_delta: T,
) -> Result<(T, Vec<Tensor<T>>)> {
    let fwd = critic_forward(params, fine, coarse)?;
    let batch = actions.len();
    if targets.len() != batch || fwd.q.len() != batch * ACTION_COUNT {
        return shape_err("critic_train_step", "one action and target per batch item");
    }
    let n = T::cast_from(batch as f64);
    let mut loss = T::zero();
    let mut d_q = Tensor::zeros(&[batch, ACTION_COUNT]);
    for (b, (&a, &target)) in actions.iter().zip(targets).enumerate() {
        if a >= ACTION_COUNT {
            return Err(Error::InvalidArgument(format!("action index {a}")));
        }
        let (l, g) = huber_loss(fwd.q.data()[b * ACTION_COUNT + a], target, huber_delta);
        loss += l / n;
        d_q.data_mut()[b * ACTION_COUNT + a] = g / n;
    }
    let grads = critic_backward(params, &fwd, fine, coarse, &d_q)?;
    Ok((loss, grads))
}

/// Worker-local Adam state for one critic.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticOptimizer {
    pub states: Vec<AdamState>,
}

impl CriticOptimizer {
    pub fn new(shape: &CriticShape, config: AdamConfig) -> Self {
        Self {
            states: shape.param_shapes().iter().map(|s| AdamState::new(s, config)).collect(),
        }
    }
}
