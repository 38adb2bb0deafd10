//! Central finite-difference verification of analytic gradients.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Coordinates probed; every coordinate is probed when the parameter
    /// count does not exceed this.
    pub samples: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            samples: 100,
            epsilon: 1e-5,
            seed: 0,
        }
    }
}

/// Relative error used throughout: `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` gradients of `loss` against central differences and
/// returns the worst relative error over the probed coordinates.
///
/// Each coordinate is probed with steps `10ε`, `ε` and `ε/10` and the best
/// agreement counts: one step may straddle a ReLU kink and another may drown
/// a tiny gradient in roundoff, but a wrong gradient disagrees at all three.
pub fn grad_check<F>(loss: F, params: &[Tensor<f64>], analytic: &[Tensor<f64>], opts: GradCheckOptions) -> f64
where
    F: Fn(&[Tensor<f64>]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "one gradient per parameter");
    for (p, g) in params.iter().zip(analytic) {
        assert_eq!(p.shape(), g.shape(), "gradient shape");
    }
    let total: usize = params.iter().map(Tensor::len).sum();
    let coords: Vec<usize> = if total <= opts.samples {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        (0..opts.samples).map(|_| rng.gen_range(0..total)).collect()
    };

    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for flat in coords {
        let (ti, ei) = locate(params, flat);
        let orig = work[ti].data()[ei];
        let mut best = f64::INFINITY;
        for h in [10.0 * opts.epsilon, opts.epsilon, 0.1 * opts.epsilon] {
            work[ti].data_mut()[ei] = orig + h;
            let up = loss(&work);
            work[ti].data_mut()[ei] = orig - h;
            let down = loss(&work);
            work[ti].data_mut()[ei] = orig;
            best = best.min(relative_error(analytic[ti].data()[ei], (up - down) / (2.0 * h)));
        }
        worst = worst.max(best);
    }
    worst
}

fn locate(params: &[Tensor<f64>], mut flat: usize) -> (usize, usize) {
    for (i, p) in params.iter().enumerate() {
        if flat < p.len() {
            return (i, flat);
        }
        flat -= p.len();
    }
    unreachable!("coordinate beyond parameter count")
}
