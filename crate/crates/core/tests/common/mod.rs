//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use agz_core::control::{critic_loss_and_grads, Critic, Joint, ACTION_COUNT};
use agz_core::numerics::*;
use agz_core::perception::{ae_loss_and_grads, Autoencoder, Scale, Stream, GRID};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// `Σ y ⊙ r`: a scalar probe whose upstream gradient is `r`.
fn probe(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

pub fn opts(seed: u64) -> GradCheckOptions {
    GradCheckOptions { seed, ..GradCheckOptions::default() }
}

pub fn check_conv(seed: u64) -> f64 {
    let mut g = rng(seed);
    let x = random_tensor(&[2, 9, 9, 3], -1.0, 1.0, &mut g);
    let w = random_tensor(&[3, 3, 3, 4], -1.0, 1.0, &mut g);
    let b = random_tensor(&[4], -1.0, 1.0, &mut g);
    let r = random_tensor(&[2, 4, 4, 4], -1.0, 1.0, &mut g);
    let (gi, gw, gb) = conv2d_backward(&x, &w, 2, &r).unwrap();
    let f = |p: &[Tensor<f64>]| probe(&conv2d(&p[0], &p[1], &p[2], 2).unwrap(), &r);
    grad_check(f, &[x, w, b], &[gi, gw, gb], opts(seed))
}

pub fn check_dense(seed: u64) -> f64 {
    let mut g = rng(seed);
    let x = random_tensor(&[3, 5], -1.0, 1.0, &mut g);
    let w = random_tensor(&[5, 4], -1.0, 1.0, &mut g);
    let b = random_tensor(&[4], -1.0, 1.0, &mut g);
    let r = random_tensor(&[3, 4], -1.0, 1.0, &mut g);
    let (gi, gw, gb) = dense_backward(&x, &w, &r).unwrap();
    let f = |p: &[Tensor<f64>]| probe(&dense(&p[0], &p[1], &p[2]).unwrap(), &r);
    grad_check(f, &[x, w, b], &[gi, gw, gb], opts(seed))
}

pub fn check_relu(seed: u64) -> f64 {
    let mut g = rng(seed);
    // keep inputs away from the kink so central differences stay on one side
    let data = (0..40).map(|_| g.gen_range(0.01..1.0) * if g.gen::<bool>() { 1.0 } else { -1.0 }).collect();
    let x = Tensor::from_vec(&[40], data).unwrap();
    let r = random_tensor(&[40], -1.0, 1.0, &mut g);
    let y = relu(&x);
    let gi = relu_backward(&y, &r).unwrap();
    let f = |p: &[Tensor<f64>]| probe(&relu(&p[0]), &r);
    grad_check(f, &[x], &[gi], opts(seed))
}

pub fn check_maxpool(seed: u64) -> f64 {
    let mut g = rng(seed);
    // distinct values so the argmax is stable under ±ε
    let mut vals: Vec<f64> = (0..2 * 5 * 5 * 2).map(|i| i as f64 * 0.01).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, g.gen_range(0..=i));
    }
    let x = Tensor::from_vec(&[2, 5, 5, 2], vals).unwrap();
    let r = random_tensor(&[2, 2, 2, 2], -1.0, 1.0, &mut g);
    let (_, idx) = maxpool2(&x).unwrap();
    let gi = maxpool2_backward(x.shape(), &idx, &r).unwrap();
    let f = |p: &[Tensor<f64>]| probe(&maxpool2(&p[0]).unwrap().0, &r);
    grad_check(f, &[x], &[gi], opts(seed))
}

pub fn check_huber(seed: u64) -> f64 {
    let mut g = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (p, t): (f64, f64) = (g.gen_range(-3.0..3.0), g.gen_range(-3.0..3.0));
        if ((p - t).abs() - 1.0).abs() < 1e-3 {
            continue;
        }
        let (_, d) = huber_loss(p, t, 1.0);
        let eps = 1e-6;
        let n = (huber_loss(p + eps, t, 1.0).0 - huber_loss(p - eps, t, 1.0).0) / (2.0 * eps);
        worst = worst.max(relative_error(d, n));
    }
    worst
}

fn ae_params(stream: Stream, seed: u64) -> Vec<Tensor<f64>> {
    let mut g = rng(seed);
    let mut ae = Autoencoder::new(stream, Scale::Fine, &mut g);
    // small positive biases keep most ReLUs active
    for p in ae.params.iter_mut().filter(|p| p.rank() == 1) {
        *p = p.map(|_| 0.05);
    }
    ae.params.iter().map(|p| p.cast()).collect()
}

pub fn check_autoencoder(stream: Stream, seed: u64) -> f64 {
    let params = ae_params(stream, seed);
    let v = random_tensor(&[32, 32, stream.channels()], 0.0, 1.0, &mut rng(seed + 1000));
    let (_, grads) = ae_loss_and_grads(&params, &v).unwrap();
    let f = |p: &[Tensor<f64>]| ae_loss_and_grads(p, &v).unwrap().0;
    grad_check(f, &params, &grads, opts(seed))
}

pub struct CriticCase {
    pub params: Vec<Tensor<f64>>,
    pub fine: Tensor<f64>,
    pub coarse: Tensor<f64>,
    pub actions: Vec<usize>,
    pub targets: Vec<f64>,
}

pub fn critic_case(seed: u64) -> CriticCase {
    let mut g = rng(seed);
    let critic = Critic::new(Joint::Vergence, 8, 16, &mut g);
    let c = Stream::Binocular.bottleneck();
    let batch = 3;
    CriticCase {
        params: critic.params.iter().map(|p| p.cast()).collect(),
        fine: random_tensor(&[batch, GRID, GRID, c], 0.0, 1.0, &mut g),
        coarse: random_tensor(&[batch, GRID, GRID, c], 0.0, 1.0, &mut g),
        actions: (0..batch).map(|_| g.gen_range(0..ACTION_COUNT)).collect(),
        // mix of quadratic and linear Huber regimes
        targets: (0..batch).map(|i| if i == 0 { 5.0 } else { g.gen_range(-0.2..0.2) }).collect(),
    }
}

pub fn critic_loss(case: &CriticCase, p: &[Tensor<f64>]) -> f64 {
    critic_loss_and_grads(p, &case.fine, &case.coarse, &case.actions, &case.targets, 1.0).unwrap().0
}

pub fn check_critic(seed: u64) -> f64 {
    let case = critic_case(seed);
    let (_, grads) = critic_loss_and_grads(&case.params, &case.fine, &case.coarse, &case.actions, &case.targets, 1.0).unwrap();
    grad_check(|p| critic_loss(&case, p), &case.params, &grads, opts(seed))
}

/// Every layer and both full networks, worst relative error per check.
pub fn all_gradient_checks(seed: u64) -> Vec<(&'static str, f64)> {
    vec![
        ("conv2d", check_conv(seed)),
        ("dense", check_dense(seed)),
        ("relu", check_relu(seed)),
        ("maxpool2", check_maxpool(seed)),
        ("huber", check_huber(seed)),
        ("binocular autoencoder", check_autoencoder(Stream::Binocular, seed)),
        ("temporal autoencoder", check_autoencoder(Stream::Temporal, seed)),
        ("critic", check_critic(seed)),
    ]
}

/// Horizontal disparity `x_left − x_right` (px) of the central region of a
/// stereo pair, from the normalized cross-correlation peak over integer
/// shifts refined by a parabola through the peak and its neighbours.
pub fn measured_disparity(left: &agz_core::environment::Image, right: &agz_core::environment::Image, max_shift: i64) -> f64 {
    let gray = |img: &agz_core::environment::Image, x: i64, y: i64| {
        let p = img.at(x as usize, y as usize);
        (p[0] + p[1] + p[2]) as f64 / 3.0
    };
    let (cx, cy) = ((left.origin_x + left.width / 2) as i64, (left.origin_y + left.height / 2) as i64);
    let (hw, hh) = (24i64, 16i64);
    let ncc = |s: i64| {
        let mut pairs = Vec::new();
        for y in cy - hh..cy + hh {
            for x in cx - hw..cx + hw {
                pairs.push((gray(left, x, y), gray(right, x - s, y)));
            }
        }
        let n = pairs.len() as f64;
        let (ma, mb) = pairs.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 / n, b + p.1 / n));
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (a, b) in pairs {
            sab += (a - ma) * (b - mb);
            saa += (a - ma) * (a - ma);
            sbb += (b - mb) * (b - mb);
        }
        sab / (saa * sbb).sqrt().max(1e-12)
    };
    let scores: Vec<(i64, f64)> = (-max_shift..=max_shift).map(|s| (s, ncc(s))).collect();
    let (best, _) = scores.iter().copied().fold((0, f64::MIN), |acc, (s, v)| if v > acc.1 { (s, v) } else { acc });
    if best.abs() == max_shift {
        return best as f64;
    }
    let (a, b, c) = (ncc(best - 1), ncc(best), ncc(best + 1));
    let denom = a - 2.0 * b + c;
    best as f64 + if denom.abs() > 1e-12 { 0.5 * (a - c) / denom } else { 0.0 }
}
