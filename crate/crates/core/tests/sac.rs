//! SAC losses and targets against a plain-`Vec` forward pass.

use lcsac::autodiff::Tape;
use lcsac::params::ParamSet;
use lcsac::replay::{RlBatch, RlTuple};
use lcsac::sac::{standard_normal, SacAgent, SacConfig};
use lcsac::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn layer(p: &ParamSet, name: &str, x: &[f64]) -> Vec<f64> {
    let w = p.get(&format!("{name}.w")).unwrap();
    let b = p.get(&format!("{name}.b")).unwrap();
    let (inp, out) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), inp);
    (0..out)
        .map(|j| b.data()[j] + (0..inp).map(|i| x[i] * w.data()[i * out + j]).sum::<f64>())
        .collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

/// `q.l0 -> relu -> q.l1 -> relu -> q.l2`.
fn q_value(p: &ParamSet, prefix: &str, x: &[f64]) -> f64 {
    let h = relu(layer(p, &format!("{prefix}.l0"), x));
    let h = relu(layer(p, &format!("{prefix}.l1"), &h));
    layer(p, &format!("{prefix}.l2"), &h)[0]
}

/// Squashed sample and its log density for one row.
fn policy_sample(p: &ParamSet, x: &[f64], z: &[f64]) -> (Vec<f64>, f64) {
    let h = relu(layer(p, "policy.trunk.l0", x));
    let h = relu(layer(p, "policy.trunk.l1", &h));
    let mean = layer(p, "policy.mean", &h);
    let log_std: Vec<f64> = layer(p, "policy.log_std", &h).into_iter().map(|v| v.clamp(-20.0, 2.0)).collect();
    let mut action = Vec::new();
    let mut lp = 0.0;
    for k in 0..mean.len() {
        let u = (mean[k] + log_std[k].exp() * z[k]).clamp(-15.0, 15.0);
        let a = u.tanh();
        lp += -0.5 * z[k] * z[k] - log_std[k] - 0.5 * (2.0 * std::f64::consts::PI).ln();
        lp -= (1.0 - a * a + 1e-6).ln();
        action.push(a);
    }
    (action, lp)
}

fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

struct Instance {
    agent: SacAgent,
    batch: RlBatch,
    target_noise: Tensor,
    policy_noise: Tensor,
}

fn instance(seed: u64, context_dim: usize, lr: f64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SacConfig {
        hidden: vec![6, 5],
        batch: 8,
        lr,
        ..SacConfig::default()
    };
    let (sd, ad) = (3, 2);
    let mut agent = SacAgent::new(cfg, sd, ad, context_dim, &mut rng).unwrap();
    // targets differ from the online critics
    for (_, t) in agent.critics.target.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let v = |n: usize, rng: &mut ChaCha8Rng| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let tuples: Vec<RlTuple> = (0..8)
        .map(|i| RlTuple {
            c: v(context_dim, &mut rng),
            s: v(sd, &mut rng),
            a: v(ad, &mut rng),
            r: rng.random_range(-2.0..0.0),
            s_next: v(sd, &mut rng),
            c_next: v(context_dim, &mut rng),
            done: i % 3 == 0,
        })
        .collect();
    let batch = RlBatch::from_tuples(&tuples).unwrap();
    Instance {
        agent,
        target_noise: standard_normal(8, ad, &mut rng),
        policy_noise: standard_normal(8, ad, &mut rng),
        batch,
    }
}

fn oracle_targets(x: &Instance) -> Vec<f64> {
    let ag = &x.agent;
    (0..x.batch.len())
        .map(|i| {
            let t = x.batch.tuple(i);
            let (a2, lp) = policy_sample(&ag.policy_params, &cat(&[&t.s_next, &t.c_next]), x.target_noise.row_slice(i));
            let q_in = cat(&[&t.s_next, &a2, &t.c_next]);
            let q = q_value(&ag.critics.target, "q1", &q_in).min(q_value(&ag.critics.target, "q2", &q_in));
            let mask = if t.done { 0.0 } else { 1.0 };
            t.r + ag.cfg.gamma * mask * (q - ag.cfg.alpha * lp)
        })
        .collect()
}

fn oracle_critic_loss(x: &Instance, critics: &ParamSet, y: &[f64]) -> (f64, f64) {
    let n = x.batch.len() as f64;
    let mut j = (0.0, 0.0);
    for (i, yi) in y.iter().enumerate() {
        let t = x.batch.tuple(i);
        let q_in = cat(&[&t.s, &t.a, &t.c]);
        j.0 += 0.5 * (q_value(critics, "q1", &q_in) - yi).powi(2) / n;
        j.1 += 0.5 * (q_value(critics, "q2", &q_in) - yi).powi(2) / n;
    }
    j
}

fn oracle_policy_loss(x: &Instance, policy: &ParamSet, critics: &ParamSet) -> f64 {
    let n = x.batch.len();
    (0..n)
        .map(|i| {
            let t = x.batch.tuple(i);
            let (a, lp) = policy_sample(policy, &cat(&[&t.s, &t.c]), x.policy_noise.row_slice(i));
            let q_in = cat(&[&t.s, &a, &t.c]);
            let q = q_value(critics, "q1", &q_in).min(q_value(critics, "q2", &q_in));
            x.agent.cfg.alpha * lp - q
        })
        .sum::<f64>()
        / n as f64
}

fn tape_critic_loss(x: &Instance, critics: &ParamSet, y: &[f64]) -> (f64, f64) {
    let mut tape = Tape::new();
    let b = critics.bind(&mut tape, false);
    let s = tape.constant(x.batch.s.clone());
    let a = tape.constant(x.batch.a.clone());
    let c = x.batch.c.as_ref().map(|c| tape.constant(c.clone()));
    let (j1, j2) = x.agent.critic_loss(&mut tape, &b, s, a, c, y).unwrap();
    (tape.value(j1).item(), tape.value(j2).item())
}

fn tape_policy_loss(x: &Instance, policy: &ParamSet, critics: &ParamSet) -> f64 {
    let mut tape = Tape::new();
    let pb = policy.bind(&mut tape, false);
    let cb = critics.bind(&mut tape, false);
    let s = tape.constant(x.batch.s.clone());
    let c = x.batch.c.as_ref().map(|c| tape.constant(c.clone()));
    let (j, _) = x.agent.policy_loss(&mut tape, &pb, &cb, s, c, &x.policy_noise).unwrap();
    tape.value(j).item()
}

#[test]
fn targets_and_losses_match_the_oracle() {
    for seed in 0..20 {
        for cd in [0, 3] {
            let x = instance(seed, cd, 3e-4);
            let y = x.agent.q_target(&x.batch, &x.target_noise).unwrap();
            for (got, want) in y.iter().zip(oracle_targets(&x)) {
                assert!((got - want).abs() < 1e-12, "seed {seed}: {got} vs {want}");
            }
            let got = tape_critic_loss(&x, &x.agent.critics.params, &y);
            let want = oracle_critic_loss(&x, &x.agent.critics.params, &y);
            assert!((got.0 - want.0).abs() < 1e-12 && (got.1 - want.1).abs() < 1e-12);
            let got = tape_policy_loss(&x, &x.agent.policy_params, &x.agent.critics.params);
            let want = oracle_policy_loss(&x, &x.agent.policy_params, &x.agent.critics.params);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }
}

#[test]
fn terminal_rows_target_the_reward_alone() {
    let x = instance(4, 2, 3e-4);
    let y = x.agent.q_target(&x.batch, &x.target_noise).unwrap();
    for (i, yi) in y.iter().enumerate() {
        if x.batch.done[i] {
            assert_eq!(*yi, x.batch.r[i]);
        } else {
            assert_ne!(*yi, x.batch.r[i]);
        }
    }
}

#[test]
fn update_reports_the_pre_step_losses_and_averages_targets() {
    let mut x = instance(5, 3, 3e-4);
    let before = x.agent.clone();
    let y = before.q_target(&x.batch, &x.target_noise).unwrap();
    let m = x.agent.update_on_batch(&x.batch, &x.target_noise, &x.policy_noise).unwrap();
    let (j1, j2) = oracle_critic_loss(&x, &before.critics.params, &y);
    assert!((m.j_q1 - j1).abs() < 1e-12 && (m.j_q2 - j2).abs() < 1e-12);
    let j_pi = oracle_policy_loss(&x, &before.policy_params, &x.agent.critics.params);
    assert!((m.j_pi - j_pi).abs() < 1e-12);

    let tau = x.agent.cfg.tau;
    for (name, t) in x.agent.critics.target.iter() {
        let old = before.critics.target.get(name).unwrap();
        let online = x.agent.critics.params.get(name).unwrap();
        for k in 0..t.numel() {
            let want = tau * online.data()[k] + (1.0 - tau) * old.data()[k];
            assert!((t.data()[k] - want).abs() < 1e-15);
        }
    }
    assert_eq!(x.agent.updates(), 1);
}

/// With a small step, one update lowers both critic losses and then the
/// policy loss on the same batch in at least 95 of 100 random instances.
#[test]
fn small_steps_descend() {
    let (mut critic_down, mut policy_down) = (0, 0);
    for seed in 0..100 {
        let mut x = instance(1_000 + seed, 2, 1e-4);
        let before = x.agent.clone();
        let y = before.q_target(&x.batch, &x.target_noise).unwrap();
        x.agent.update_on_batch(&x.batch, &x.target_noise, &x.policy_noise).unwrap();
        let pre = oracle_critic_loss(&x, &before.critics.params, &y);
        let post = oracle_critic_loss(&x, &x.agent.critics.params, &y);
        if post.0 < pre.0 && post.1 < pre.1 {
            critic_down += 1;
        }
        let pre = oracle_policy_loss(&x, &before.policy_params, &x.agent.critics.params);
        let post = oracle_policy_loss(&x, &x.agent.policy_params, &x.agent.critics.params);
        if post < pre {
            policy_down += 1;
        }
    }
    assert!(critic_down >= 95, "critic descended in {critic_down}/100");
    assert!(policy_down >= 95, "policy descended in {policy_down}/100");
}

#[test]
fn plain_reference_agrees_with_the_context_free_agent() {
    use lcsac::replay::RlBuffer;
    use lcsac::sac::reference::PlainSac;
    let cfg = SacConfig {
        hidden: vec![8, 8],
        batch: 16,
        ..SacConfig::default()
    };
    let mut a = SacAgent::new(cfg.clone(), 2, 2, 0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut b = PlainSac::new(cfg, 2, 2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut buf = RlBuffer::new(0, 2, 2, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..60 {
        buf.push(&RlTuple {
            c: vec![],
            s: vec![rng.random(), rng.random()],
            a: vec![rng.random(), rng.random()],
            r: rng.random(),
            s_next: vec![rng.random(), rng.random()],
            c_next: vec![],
            done: rng.random_bool(0.1),
        })
        .unwrap();
    }
    let (mut ra, mut rb) = (ChaCha8Rng::seed_from_u64(5), ChaCha8Rng::seed_from_u64(5));
    for _ in 0..25 {
        assert_eq!(a.update(&buf, &mut ra).unwrap(), b.update(&buf, &mut rb).unwrap());
    }
    assert_eq!(a.act(&[0.1, 0.2], &[], None).unwrap(), b.act(&[0.1, 0.2], None).unwrap());
}

proptest! {
    #[test]
    fn actions_stay_in_the_box_and_log_probs_are_bounded(seed in any::<u64>(), scale in 0.0f64..50.0) {
        let x = instance(seed, 1, 3e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<f64> = (0..3).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..2).map(|_| 3.0 * rng.random_range(-1.0..1.0)).collect();
        let a = x.agent.act(&s, &[0.3], Some(&z)).unwrap();
        prop_assert!(a.iter().all(|v| v.abs() <= 1.0));
        let (_, lp) = policy_sample(&x.agent.policy_params, &cat(&[&s, &[0.3]]), &z);
        prop_assert!(lp <= x.agent.policy.log_prob_upper_bound());
    }
}
