mod common;

use agz_core::control::*;
use agz_core::numerics::Tensor;
use agz_core::perception::{Stream, GRID};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn epsilon_one_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let q = [0.0, 9.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let mut counts = [0usize; ACTION_COUNT];
    let n = 90_000;
    for _ in 0..n {
        counts[select_action(&q, 1.0, &mut rng)] += 1;
    }
    for c in counts {
        assert!((c as f64 / n as f64 - 1.0 / 9.0).abs() < 0.01, "{counts:?}");
    }
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buffer = ReplayBuffer::new(100);
    for i in 0..100usize {
        buffer.push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut counts = [0usize; 100];
    let n = 100_000;
    for _ in 0..n / 100 {
        for &i in buffer.sample(100, &mut rng).unwrap() {
            counts[i] += 1;
        }
    }
    for c in counts {
        assert!((c as f64 / n as f64 - 0.01).abs() < 0.002);
    }
}

fn codes(batch: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = Stream::Temporal.bottleneck();
    let mut t = || {
        let n = batch * GRID * GRID * c;
        Tensor::from_vec(&[batch, GRID, GRID, c], (0..n).map(|_| rng.gen_range(0.0..2.0)).collect()).unwrap()
    };
    (t(), t())
}

#[test]
fn critic_shapes_and_zero_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut critic = Critic::new(Joint::Pan, 32, 200, &mut rng);
    assert_eq!(CriticShape::pooled_side(), 3);
    assert_eq!(critic.params[4].shape(), [2 * 3 * 3 * 32, 200]);
    let (f, c) = codes(2, 2);
    assert_eq!(critic.q_values(&f, &c).unwrap().shape(), [2, ACTION_COUNT]);
    let single_f = Tensor::from_vec(&[GRID, GRID, 48], f.data()[..GRID * GRID * 48].to_vec()).unwrap();
    let single_c = Tensor::from_vec(&[GRID, GRID, 48], c.data()[..GRID * GRID * 48].to_vec()).unwrap();
    assert_eq!(critic.q_values(&single_f, &single_c).unwrap().shape(), [ACTION_COUNT]);
    // a binocular-sized code is rejected by a temporal critic
    assert!(critic.q_values(&Tensor::zeros(&[GRID, GRID, 24]), &Tensor::zeros(&[GRID, GRID, 24])).is_err());

    for p in &mut critic.params {
        *p = Tensor::zeros(p.shape());
    }
    assert!(critic.q_values(&f, &c).unwrap().data().iter().all(|&q| q == 0.0));
}

fn step(seed: u64) -> std::sync::Arc<Step> {
    use agz_core::environment::{EnvConfig, Environment};
    use agz_core::perception::Perception;
    use agz_core::stimulus::StimulusSet;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stimuli = std::sync::Arc::new(StimulusSet::procedural(2, seed, 256).unwrap());
    let mut env = Environment::new(EnvConfig::default(), stimuli).unwrap();
    env.reset(&mut rng, 10).unwrap();
    let perception = Perception::new(&mut rng);
    std::sync::Arc::new(agz_core::training::observe(&env, &perception).unwrap())
}

#[test]
fn targets_and_fixed_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut critic = Critic::new(Joint::Vergence, 8, 16, &mut rng);
    let (s, s2) = (step(1), step(2));
    let t = |reward: f32, terminal: bool| Transition { state: s.clone(), action: 3, reward, next: s2.clone(), terminal };
    let batch = [t(0.7, false), t(-0.2, true)];
    let refs: Vec<&Transition> = batch.iter().collect();
    assert_eq!(q_targets(&refs, &critic, 0.0).unwrap(), vec![0.7, -0.2]);

    let (nf, nc) = stack_codes([s2.as_ref()].into_iter(), Stream::Binocular).unwrap();
    let max_next = critic.q_values(&nf, &nc).unwrap().data().iter().cloned().fold(f32::MIN, f32::max);
    let targets = q_targets(&refs, &critic, 0.5).unwrap();
    assert!((targets[0] - (0.7 + 0.5 * max_next)).abs() < 1e-6);
    assert_eq!(targets[1], -0.2);

    // q(s, a) already equal to a terminal target: zero loss, no movement
    let (f, c) = stack_codes([s.as_ref()].into_iter(), Stream::Binocular).unwrap();
    let q = critic.q_values(&f, &c).unwrap().data()[3];
    let exact = [t(q, true)];
    let before = critic.clone();
    let mut opt = CriticOptimizer::new(&critic.shape, agz_core::numerics::AdamConfig::default());
    let loss = critic_train_step(&exact.iter().collect::<Vec<_>>(), &mut critic, &mut opt, 0.1, 1.0).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(critic, before);

    assert!(critic_train_step(&[], &mut critic, &mut opt, 0.1, 1.0).is_err());
    assert!(critic_train_step(&refs, &mut critic, &mut opt, 1.0, 1.0).is_err());
    let bad = [t(f32::NAN, true)];
    assert!(critic_train_step(&bad.iter().collect::<Vec<_>>(), &mut critic, &mut opt, 0.1, 1.0).is_err());
}

#[test]
fn training_fits_a_fixed_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut critic = Critic::new(Joint::Vergence, 8, 16, &mut rng);
    let mut opt = CriticOptimizer::new(&critic.shape, agz_core::numerics::AdamConfig::with_learning_rate(1e-3));
    let s = step(5);
    let batch = [Transition { state: s.clone(), action: 6, reward: 1.5, next: s, terminal: true }];
    let refs: Vec<&Transition> = batch.iter().collect();
    let first = critic_train_step(&refs, &mut critic, &mut opt, 0.0, 1.0).unwrap();
    let mut last = first;
    for _ in 0..300 {
        last = critic_train_step(&refs, &mut critic, &mut opt, 0.0, 1.0).unwrap();
    }
    assert!(last < 0.01 * first.max(1e-3), "{first} -> {last}");
}

proptest! {
    #[test]
    fn new_reward_is_antisymmetric(a in 0.0f32..10.0, b in 0.0f32..10.0, c in 0.1f32..100.0) {
        prop_assert_eq!(compute_reward(a, b, RewardMode::New, c), -compute_reward(b, a, RewardMode::New, c));
    }

    #[test]
    fn greedy_ignores_constant_shift(q in prop::array::uniform9(-100.0f32..100.0), k in -1000.0f32..1000.0) {
        // keep the shift exact in f32
        let k = k.round();
        let shifted: Vec<f32> = q.iter().map(|v| (v * 16.0).round() / 16.0 + k).collect();
        let base: Vec<f32> = q.iter().map(|v| (v * 16.0).round() / 16.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        prop_assert_eq!(select_action(&base, 0.0, &mut rng), select_action(&shifted, 0.0, &mut rng));
    }

    #[test]
    fn replay_never_exceeds_capacity(cap in 1usize..50, pushes in 0usize..200) {
        let mut b = ReplayBuffer::new(cap);
        for i in 0..pushes {
            b.push(i);
        }
        prop_assert_eq!(b.len(), pushes.min(cap));
        let oldest = pushes.saturating_sub(cap);
        prop_assert!(b.iter().copied().eq(oldest..pushes));
    }

    #[test]
    fn huber_is_symmetric_and_bounded_slope(e in -50.0f32..50.0, d in 0.1f32..5.0) {
        let (l, g) = agz_core::numerics::huber_loss(e, 0.0, d);
        let (l2, g2) = agz_core::numerics::huber_loss(-e, 0.0, d);
        prop_assert_eq!(l, l2);
        prop_assert_eq!(g, -g2);
        prop_assert!(g.abs() <= d + 1e-6);
    }
}
