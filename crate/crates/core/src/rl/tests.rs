use super::*;
use crate::env::{EnvConfig, Observation, OBS_DIM};
use crate::error::Error;
use crate::linalg::Matrix;
use crate::milestones::{AugmentConfig, TaskId};
use crate::rng::stream;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

fn transition(rng: &mut crate::rng::Rng) -> Transition {
    Transition {
        obs: core::array::from_fn(|_| rng.random_range(-0.3..0.3)),
        action: core::array::from_fn(|_| rng.random_range(-1.0..1.0)),
        next_obs: core::array::from_fn(|_| rng.random_range(-0.3..0.3)),
        done: false,
        task: TaskId(0),
    }
}

fn tagged(k: usize) -> Transition {
    let mut t = transition(&mut stream(0, 0));
    t.obs[0] = k as f64;
    t
}

fn small(cfg: SacConfig) -> SacConfig {
    SacConfig { hidden: vec![32, 32], ..cfg }
}

fn exact() -> SacConfig {
    small(SacConfig { critic_dropout: 0.0, ..Default::default() })
}

fn agent(cfg: SacConfig, seed: u64) -> SacAgent {
    SacAgent::new(cfg, AugmentConfig::default(), EnvConfig::default(), &mut stream(seed, 0)).unwrap()
}

/// Agent without state noise.
fn quiet(cfg: SacConfig, seed: u64) -> SacAgent {
    SacAgent::new(cfg, AugmentConfig { sigma: 0.0, ..Default::default() }, EnvConfig::default(), &mut stream(seed, 0)).unwrap()
}

fn batch(n: usize, seed: u64) -> Batch {
    let mut rng = stream(seed, 1);
    let items: Vec<Transition> = (0..n).map(|_| transition(&mut rng)).collect();
    let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..0.0)).collect();
    Batch::from_transitions(&items, |_| Ok(rewards.clone())).unwrap()
}

#[test]
fn ring_evicts_oldest() {
    let mut b = ReplayBuffer::new(3).unwrap();
    for k in 0..4 {
        b.push(tagged(k));
    }
    assert_eq!(b.len(), 3);
    let firsts: Vec<f64> = b.iter().map(|t| t.obs[0]).collect();
    assert_eq!(firsts, vec![1.0, 2.0, 3.0]);
    assert_eq!(b.get(0).unwrap().obs[0], 1.0);
}

#[test]
fn single_element_sample() {
    let mut b = ReplayBuffer::new(5).unwrap();
    let t = tagged(9);
    b.push(t);
    assert_eq!(b.sample(1, &mut stream(1, 0)).unwrap(), vec![t]);
}

#[test]
fn underflow_is_an_error() {
    let mut b = ReplayBuffer::new(5).unwrap();
    b.push(tagged(0));
    assert!(matches!(b.sample(2, &mut stream(1, 0)), Err(Error::Underflow { requested: 2, available: 1 })));
    assert!(matches!(ReplayBuffer::new(0), Err(Error::Validation(_))));
}

#[test]
fn sampling_is_uniform_chi_squared() {
    let mut b = ReplayBuffer::new(10).unwrap();
    for k in 0..13 {
        b.push(tagged(k));
    }
    let mut counts = [0usize; 10];
    let mut rng = stream(2, 0);
    for _ in 0..10_000 {
        for t in b.sample(10, &mut rng).unwrap() {
            counts[t.obs[0] as usize - 3] += 1;
        }
    }
    let expected = 10_000.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of chi-squared with 9 degrees of freedom.
    assert!(chi2 < 21.666, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn recent_window_only_draws_newest() {
    let mut b = ReplayBuffer::new(10).unwrap();
    for k in 0..25 {
        let mut t = tagged(k);
        t.next_obs[0] = k as f64;
        b.push(t);
    }
    let got = b.sample_recent_next_obs(500, 4, &mut stream(3, 0)).unwrap();
    assert!(got.iter().all(|o| (21.0..=24.0).contains(&o[0])));
}

#[test]
fn rewards_follow_the_live_reward_function() {
    let mut b = ReplayBuffer::new(50).unwrap();
    let mut rng = stream(4, 0);
    for _ in 0..50 {
        b.push(transition(&mut rng));
    }
    let idx = b.sample_indices(16, &mut rng).unwrap();
    let items = b.gather(&idx);
    let mut clf = crate::rewards::SuccessClassifier::new(
        TaskId(0),
        &crate::rewards::ClassifierConfig { hidden: vec![16], ..Default::default() },
        &mut rng,
    )
    .unwrap();
    let cfg = crate::rewards::ClassifierConfig::default();
    let before = Batch::from_transitions(&items, |m| clf.rewards(m, &cfg)).unwrap();
    clf.net.layers_mut().last_mut().unwrap().bias[0] += 1.0;
    let after = Batch::from_transitions(&items, |m| clf.rewards(m, &cfg)).unwrap();
    assert_eq!(before.obs, after.obs);
    for (r0, r1) in before.rewards.iter().zip(&after.rewards) {
        assert!(r1 > r0, "{r1} vs {r0}");
    }
}

#[test]
fn deterministic_actions_repeat_and_stay_small_at_init() {
    let a = agent(SacConfig::default(), 1);
    let mut rng = stream(5, 0);
    for _ in 0..100 {
        let o: Observation = core::array::from_fn(|_| rng.random_range(-0.3..0.3));
        let x = a.act(&o, false, &mut rng).unwrap();
        assert_eq!(x, a.act(&o, false, &mut rng).unwrap());
        assert!(x.iter().all(|v| v.abs() < 0.1), "{x:?}");
    }
}

#[test]
fn stochastic_actions_stay_in_range() {
    let a = agent(small(SacConfig::default()), 2);
    let mut rng = stream(6, 0);
    let o = [0.1; OBS_DIM];
    for _ in 0..100_000 {
        let x = a.act(&o, true, &mut rng).unwrap();
        assert!(x.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn zero_discount_target_is_reward() {
    let a = agent(small(SacConfig { gamma: 0.0, ..Default::default() }), 3);
    let b = batch(12, 3);
    let y = a.compute_target(&b, &mut stream(7, 0)).unwrap();
    assert_eq!(y, b.rewards);
}

#[test]
fn degenerate_target_matches_reference() {
    let cfg = SacConfig { target_augmentations: 1, entropy_bonus: false, ..exact() };
    let mut a = quiet(cfg, 4);
    // Make the targets differ from the online critics so the min matters.
    a.targets[1] = quiet(exact(), 40).critics[1].clone();
    let b = batch(9, 4);
    let mut rng = stream(8, 0);
    let y = a.compute_target(&b, &mut rng).unwrap();
    // Replay the same action draws.
    let mut rng = stream(8, 0);
    let (acts, _) = a.sample_actions(&b.next_obs, &mut rng).unwrap();
    for i in 0..b.len() {
        let mut x = b.next_obs.row(i).to_vec();
        x.extend_from_slice(acts.row(i));
        let q1 = a.targets[0].predict_one(&x).unwrap()[0];
        let q2 = a.targets[1].predict_one(&x).unwrap()[0];
        let want = b.rewards[i] + 0.99 * q1.min(q2);
        assert!((y[i] - want).abs() < 1e-12, "{} vs {want}", y[i]);
    }
}

#[test]
fn noiseless_target_is_mean_of_single_draw_targets() {
    let cfg = SacConfig { target_augmentations: 2, entropy_bonus: false, ..exact() };
    let two = quiet(cfg, 5);
    let mut one = two.clone();
    one.config.target_augmentations = 1;
    let b = batch(16, 5);
    let y2 = two.compute_target(&b, &mut stream(9, 0)).unwrap();
    // With sigma = 0 the only randomness is the action draw, so replaying
    // the stream reproduces each of the two inner draws.
    let mut rng = stream(9, 0);
    let ya = one.compute_target(&b, &mut rng).unwrap();
    let yb = one.compute_target(&b, &mut rng).unwrap();
    for i in 0..b.len() {
        let want = 0.5 * (ya[i] + yb[i]);
        assert!((y2[i] - want).abs() < 1e-12, "{} vs {want}", y2[i]);
    }
}

#[test]
fn zero_residual_leaves_critics_still() {
    let mut a = quiet(SacConfig { q_augmentations: 1, ..exact() }, 6);
    let b = batch(8, 6);
    let x = critic_input(&b.obs, &b.actions);
    let p0 = a.critics[0].predict(&x).unwrap().data;
    // Both critics must see zero residual, so give them the same weights.
    a.critics[1] = a.critics[0].clone();
    let before = a.critics.clone();
    let loss = a.critic_update(&b, &p0, &mut stream(11, 0)).unwrap();
    assert!(loss < 1e-20);
    for (c, c0) in a.critics.iter().zip(&before) {
        for (t, t0) in c.tensors().iter().zip(c0.tensors()) {
            for (v, v0) in t.iter().zip(t0) {
                assert!((v - v0).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn plain_mse_reference_with_single_augmentation() {
    let mut a = quiet(SacConfig { q_augmentations: 1, ..exact() }, 7);
    let b = batch(3, 7);
    let y = vec![-0.5, 0.25, 1.0];
    let mut want = 0.0;
    for c in &a.critics {
        for i in 0..3 {
            let mut x = b.obs.row(i).to_vec();
            x.extend_from_slice(b.actions.row(i));
            let d = c.predict_one(&x).unwrap()[0] - y[i];
            want += d * d / 3.0;
        }
    }
    let got = a.critic_update(&b, &y, &mut stream(12, 0)).unwrap();
    assert!((got - want / 2.0).abs() < 1e-12, "{got} vs {}", want / 2.0);
}

#[test]
fn fixed_batch_residual_halves() {
    let mut a = agent(small(SacConfig::default()), 8);
    let b = batch(32, 8);
    let mut rng = stream(13, 0);
    let y = a.compute_target(&b, &mut rng).unwrap();
    let first = a.critic_update(&b, &y, &mut rng).unwrap();
    let mut last = first;
    for _ in 0..200 {
        last = a.critic_update(&b, &y, &mut rng).unwrap();
    }
    assert!(last <= 0.5 * first, "{last} vs {first}");
}

#[test]
fn ten_transition_overfit() {
    // Zero discount: the targets are the fixed rewards themselves.
    let mut a = agent(SacConfig { gamma: 0.0, ..Default::default() }, 9);
    let b = batch(10, 9);
    let mut rng = stream(14, 0);
    let mut loss = f64::INFINITY;
    for _ in 0..2000 {
        let y = a.compute_target(&b, &mut rng).unwrap();
        loss = a.critic_update(&b, &y, &mut rng).unwrap();
        a.polyak_update();
        if loss < 1e-3 {
            break;
        }
    }
    assert!(loss < 1e-3, "{loss}");
}

#[test]
fn entropy_target_defaults_to_minus_action_dim() {
    assert_eq!(SacConfig::default().entropy_target(), -4.0);
}

fn entropy(a: &SacAgent, obs: &Matrix) -> f64 {
    let mut rng = stream(99, 0);
    let mut total = 0.0;
    for _ in 0..50 {
        let (_, lp) = a.sample_actions(obs, &mut rng).unwrap();
        total -= lp.iter().sum::<f64>();
    }
    total / (50 * obs.rows) as f64
}

#[test]
fn actor_gains_entropy_against_flat_critics() {
    let mut a = quiet(exact(), 10);
    for c in &mut a.critics {
        c.scale_output_layer(0.0);
    }
    let b = batch(64, 10);
    let h0 = entropy(&a, &b.obs);
    let mut rng = stream(15, 0);
    for _ in 0..50 {
        a.actor_and_alpha_update(&b, &mut rng).unwrap();
    }
    let h1 = entropy(&a, &b.obs);
    assert!(h1 > h0, "{h1} vs {h0}");
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let a = quiet(SacConfig { init_temperature: 0.3, ..exact() }, 11);
    let s = batch(5, 11).obs;
    let (_, grads, _) = a.actor_objective(&s, &mut stream(16, 0)).unwrap();
    let loss_at = |net: &crate::nn::Mlp| {
        let mut b = a.clone();
        b.actor = net.clone();
        b.actor_objective(&s, &mut stream(16, 0)).unwrap().0
    };
    let mut worst: f64 = 0.0;
    let mut probe = stream(17, 0);
    for _ in 0..40 {
        let mut plus = a.actor.clone();
        let t = probe.random_range(0..plus.tensors().len());
        let i = probe.random_range(0..plus.tensors()[t].len());
        let h = 1e-5;
        plus.tensors_mut()[t][i] += h;
        let mut minus = a.actor.clone();
        minus.tensors_mut()[t][i] -= h;
        let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        let analytic = grads.tensors()[t][i];
        worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1e-6));
    }
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn temperature_stays_positive() {
    let cfg = SacConfig { hidden: vec![16], batch_size: 16, ..Default::default() };
    let mut a = agent(cfg, 12);
    let b = batch(16, 12);
    let mut rng = stream(18, 0);
    for _ in 0..10_000 {
        a.actor_and_alpha_update(&b, &mut rng).unwrap();
        assert!(a.alpha() > 0.0 && a.alpha().is_finite());
    }
}

#[test]
fn polyak_endpoints_and_geometric_decay() {
    let mut a = agent(small(SacConfig { tau: 1.0, ..Default::default() }), 13);
    a.critics[0].scale_output_layer(3.0);
    a.polyak_update();
    assert_eq!(a.targets[0], a.critics[0]);

    let mut a = agent(small(SacConfig { tau: 0.0, ..Default::default() }), 13);
    a.critics[0].scale_output_layer(3.0);
    let t0 = a.targets.clone();
    a.polyak_update();
    assert_eq!(a.targets, t0);

    let mut a = agent(small(SacConfig::default()), 13);
    a.critics[0].scale_output_layer(3.0);
    let gap0: Vec<f64> = a.targets[0].layers().last().unwrap().weights.iter().zip(&a.critics[0].layers().last().unwrap().weights).map(|(t, o)| t - o).collect();
    let k = 500;
    for _ in 0..k {
        a.polyak_update();
    }
    let ratio = libm::pow(1.0 - 0.005, k as f64);
    let last_t = &a.targets[0].layers().last().unwrap().weights;
    let last_o = &a.critics[0].layers().last().unwrap().weights;
    for ((t, o), g0) in last_t.iter().zip(last_o).zip(&gap0) {
        assert!(((t - o) - g0 * ratio).abs() < 1e-10);
    }
}

#[test]
fn targets_trail_inside_online_history() {
    let mut a = agent(small(SacConfig { tau: 0.05, ..Default::default() }), 14);
    let b = batch(32, 14);
    let mut rng = stream(19, 0);
    let flat = |m: &crate::nn::Mlp| m.tensors().concat();
    let mut lo = flat(&a.critics[0]);
    let mut hi = lo.clone();
    for _ in 0..30 {
        a.update(&b, &mut rng).unwrap();
        for (k, v) in flat(&a.critics[0]).into_iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
        for (k, v) in flat(&a.targets[0]).into_iter().enumerate() {
            assert!(v >= lo[k] - 1e-12 && v <= hi[k] + 1e-12);
        }
    }
}

#[test]
fn updating_one_agent_leaves_another_untouched() {
    let mut a = agent(small(SacConfig::default()), 15);
    let other = agent(small(SacConfig::default()), 16);
    let snapshot = other.clone();
    a.update(&batch(16, 15), &mut stream(20, 0)).unwrap();
    assert_eq!(other, snapshot);
    assert_eq!(a.updates, 1);
}
