//! Central finite-difference checks of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{NodeId, Tape};
use crate::encoder::{ContextEncoder, ContextMode, EncoderConfig, ObjectiveWeights};
use crate::error::{Error, Result};
use crate::nets::{GaussianPolicy, Linear, LstmCell, Mlp};
use crate::params::{Bound, ParamSet};
use crate::replay::{SegmentBatch, Transition};
use crate::sac::{standard_normal, SacAgent, SacConfig};
use crate::tensor::Tensor;

/// Denominator floor of the relative error, so exact zeros compare by
/// absolute difference.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// `(input, element)` where the worst error occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares the reverse-mode gradient of the scalar built by `f` against
/// central differences with step `h * max(1, |x|)` for every input element.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &ids)?;
        if !tape.value(out).is_scalar() {
            return Err(Error::contract("gradient check needs a scalar output"));
        }
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &ids)?;
    let grads = tape.backward(out)?;

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut xs = inputs.to_vec();
    for (i, &id) in ids.iter().enumerate() {
        let g = grads.get(id);
        for e in 0..xs[i].numel() {
            let x0 = xs[i].data()[e];
            let step = h * x0.abs().max(1.0);
            xs[i].data_mut()[e] = x0 + step;
            let up = eval(&xs)?;
            xs[i].data_mut()[e] = x0 - step;
            let down = eval(&xs)?;
            xs[i].data_mut()[e] = x0;
            let numeric = (up - down) / (2.0 * step);
            let analytic = g.data()[e];
            let err = rel_err(analytic, numeric);
            if err > report.max_rel_err || !err.is_finite() {
                report = GradReport {
                    max_rel_err: err,
                    worst: (i, e),
                    analytic,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

/// Step used by [`suite`].
pub const SUITE_STEP: f64 = 1e-5;

/// One randomised gradient check. `run` draws a fresh instance from the rng.
#[derive(Clone, Copy)]
pub struct Case {
    pub name: &'static str,
    pub run: fn(&mut ChaCha8Rng) -> Result<GradReport>,
}

impl std::fmt::Debug for Case {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name)
    }
}

/// Every tape op plus every composite loss used in training.
pub fn suite() -> Vec<Case> {
    macro_rules! case {
        ($name:ident) => {
            Case {
                name: stringify!($name),
                run: $name,
            }
        };
    }
    vec![
        case!(add),
        case!(sub),
        case!(mul),
        case!(matmul),
        case!(squared_diff),
        case!(minimum),
        case!(relu),
        case!(tanh),
        case!(sigmoid),
        case!(exp),
        case!(log),
        case!(neg),
        case!(scale),
        case!(add_scalar),
        case!(clamp),
        case!(sum),
        case!(mean),
        case!(sum_axis),
        case!(logsumexp),
        case!(concat),
        case!(slice),
        case!(transpose),
        case!(broadcast_rows),
        case!(linear),
        case!(mlp),
        case!(lstm_unroll),
        case!(policy_sample),
        case!(policy_mean_action),
        case!(infonce_scores),
        case!(kl),
        case!(encoder_infonce),
        case!(encoder_objective),
        case!(critic_loss),
        case!(critic_loss_context),
        case!(policy_loss),
    ]
}

fn dims(rng: &mut ChaCha8Rng) -> [usize; 2] {
    [rng.random_range(1..=4), rng.random_range(1..=4)]
}

fn normal(rng: &mut ChaCha8Rng, shape: [usize; 2]) -> Tensor {
    let data = (0..shape[0] * shape[1]).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Normal draws pushed at least `gap` away from every point in `kinks`.
fn away_from(rng: &mut ChaCha8Rng, shape: [usize; 2], kinks: &[f64], gap: f64) -> Tensor {
    normal(rng, shape).map(|v| {
        let mut v = v;
        for &k in kinks {
            if (v - k).abs() < gap {
                v = if v >= k { k + gap } else { k - gap };
            }
        }
        v
    })
}

/// `sum(y * w)` for fixed weights, so every output element carries a
/// distinct upstream gradient.
fn project(t: &mut Tape, y: NodeId, w: &Tensor) -> Result<NodeId> {
    let w = t.constant(w.clone());
    let p = t.mul(y, w)?;
    t.sum(p)
}

fn unary(rng: &mut ChaCha8Rng, x: Tensor, op: fn(&mut Tape, NodeId) -> Result<NodeId>) -> Result<GradReport> {
    let shape = [x.rows(), x.cols()];
    let w = normal(rng, shape);
    check(&[x], SUITE_STEP, |t, ids| {
        let y = op(t, ids[0])?;
        project(t, y, &w)
    })
}

fn binary(rng: &mut ChaCha8Rng, op: fn(&mut Tape, NodeId, NodeId) -> Result<NodeId>) -> Result<GradReport> {
    let shape = dims(rng);
    let (a, b, w) = (normal(rng, shape), normal(rng, shape), normal(rng, shape));
    check(&[a, b], SUITE_STEP, |t, ids| {
        let y = op(t, ids[0], ids[1])?;
        project(t, y, &w)
    })
}

fn add(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    binary(rng, |t, a, b| t.add(a, b))
}

fn sub(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    binary(rng, |t, a, b| t.sub(a, b))
}

fn mul(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    binary(rng, |t, a, b| t.mul(a, b))
}

fn squared_diff(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    binary(rng, |t, a, b| t.squared_diff(a, b))
}

fn minimum(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let shape = dims(rng);
    let a = normal(rng, shape);
    // keep every pair at least 0.05 apart so no tie sits inside the stencil
    let offset = away_from(rng, shape, &[0.0], 0.05);
    let b = a.zip_map(&offset, |x, o| x + o);
    let w = normal(rng, shape);
    check(&[a, b], SUITE_STEP, |t, ids| {
        let y = t.minimum(ids[0], ids[1])?;
        project(t, y, &w)
    })
}

fn matmul(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let [m, k] = dims(rng);
    let n = rng.random_range(1..=4);
    let (a, b, w) = (normal(rng, [m, k]), normal(rng, [k, n]), normal(rng, [m, n]));
    check(&[a, b], SUITE_STEP, |t, ids| {
        let y = t.matmul(ids[0], ids[1])?;
        project(t, y, &w)
    })
}

fn relu(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let shape = dims(rng);
    let x = away_from(rng, shape, &[0.0], 0.01);
    unary(rng, x, |t, a| t.relu(a))
}

fn tanh(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let shape = dims(rng);
    let x = normal(rng, shape);
    unary(rng, x, |t, a| t.tanh(a))
}

fn sigmoid(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let shape = dims(rng);
    let x = normal(rng, shape).map(|v| 2.0 * v);
    unary(rng, x, |t, a| t.sigmoid(a))
}

fn exp(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let shape = dims(rng);
    let x = normal(rng, shape);
    unary(rng, x, |t, a| t.exp(a))
}

fn log(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let shape = dims(rng);
    let x = normal(rng, shape).map(|v| 0.1 + v.abs());
    unary(rng, x, |t, a| t.log(a))
}

fn neg(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let shape = dims(rng);
    let x = normal(rng, shape);
    unary(rng, x, |t, a| t.neg(a))
}

fn scale(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let shape = dims(rng);
    let x = normal(rng, shape);
    unary(rng, x, |t, a| t.scale(a, -1.7))
}

fn add_scalar(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let shape = dims(rng);
    let x = normal(rng, shape);
    unary(rng, x, |t, a| t.add_scalar(a, 0.3))
}

fn clamp(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let shape = dims(rng);
    let x = away_from(rng, shape, &[-0.5, 0.8], 0.01);
    unary(rng, x, |t, a| t.clamp(a, -0.5, 0.8))
}

fn sum(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let shape = dims(rng);
    let x = normal(rng, shape);
    check(&[x], SUITE_STEP, |t, ids| {
        let s = t.sum(ids[0])?;
        t.mul(s, s)
    })
}

fn mean(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let shape = dims(rng);
    let x = normal(rng, shape);
    check(&[x], SUITE_STEP, |t, ids| {
        let s = t.mean(ids[0])?;
        t.mul(s, s)
    })
}

fn reduce_axis(rng: &mut ChaCha8Rng, op: fn(&mut Tape, NodeId, usize) -> Result<NodeId>) -> Result<GradReport> {
    let [r, c] = dims(rng);
    let axis = rng.random_range(0..2);
    let x = normal(rng, [r, c]);
    let w = if axis == 0 { normal(rng, [1, c]) } else { normal(rng, [r, 1]) };
    check(&[x], SUITE_STEP, |t, ids| {
        let y = op(t, ids[0], axis)?;
        project(t, y, &w)
    })
}

fn sum_axis(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    reduce_axis(rng, |t, a, axis| t.sum_axis(a, axis))
}

fn logsumexp(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    reduce_axis(rng, |t, a, axis| t.logsumexp(a, axis))
}

fn concat(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let r = rng.random_range(1..=4);
    let widths: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=3)).collect();
    let parts: Vec<Tensor> = widths.iter().map(|&c| normal(rng, [r, c])).collect();
    let w = normal(rng, [r, widths.iter().sum()]);
    check(&parts, SUITE_STEP, |t, ids| {
        let y = t.concat(ids)?;
        project(t, y, &w)
    })
}

fn slice(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let r = rng.random_range(1..=4);
    let c = rng.random_range(1..=6);
    let start = rng.random_range(0..c);
    let len = rng.random_range(1..=c - start);
    let x = normal(rng, [r, c]);
    let w = normal(rng, [r, len]);
    check(&[x], SUITE_STEP, |t, ids| {
        let y = t.slice(ids[0], start, len)?;
        project(t, y, &w)
    })
}

fn transpose(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let [r, c] = dims(rng);
    let x = normal(rng, [r, c]);
    let w = normal(rng, [c, r]);
    check(&[x], SUITE_STEP, |t, ids| {
        let y = t.transpose(ids[0])?;
        project(t, y, &w)
    })
}

fn broadcast_rows(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let [n, c] = dims(rng);
    let x = normal(rng, [1, c]);
    let w = normal(rng, [n, c]);
    check(&[x], SUITE_STEP, |t, ids| {
        let y = t.broadcast_rows(ids[0], n)?;
        project(t, y, &w)
    })
}

/// Checks gradients with respect to every tensor of `params`.
fn check_params<F>(params: &ParamSet, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<NodeId>,
{
    let names: Vec<String> = params.names().cloned().collect();
    let inputs: Vec<Tensor> = params.iter().map(|(_, v)| v.clone()).collect();
    check(&inputs, SUITE_STEP, |t, ids| {
        let b = Bound::from_nodes(names.iter().cloned().zip(ids.iter().copied()));
        f(t, &b)
    })
}

fn linear(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let [i, o] = dims(rng);
    let b = rng.random_range(1..=4);
    let layer = Linear::new("l", i, o);
    let mut p = ParamSet::new();
    layer.init(&mut p, rng);
    let (x, w) = (normal(rng, [b, i]), normal(rng, [b, o]));
    check_params(&p, |t, bound| {
        let x = t.constant(x.clone());
        let y = layer.forward(t, bound, x)?;
        project(t, y, &w)
    })
}

fn mlp(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let [i, o] = dims(rng);
    let hidden = [rng.random_range(2..=5), rng.random_range(2..=5)];
    let net = Mlp::new("m", i, &hidden, o);
    let mut p = ParamSet::new();
    net.init(&mut p, rng);
    let b = rng.random_range(1..=4);
    let (x, w) = (normal(rng, [b, i]), normal(rng, [b, o]));
    check_params(&p, |t, bound| {
        let x = t.constant(x.clone());
        let y = net.forward(t, bound, x)?;
        project(t, y, &w)
    })
}

fn lstm_unroll(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let [i, h] = dims(rng);
    let (b, steps) = (rng.random_range(1..=3), rng.random_range(1..=4));
    let cell = LstmCell::new("lstm", i, h);
    let mut p = ParamSet::new();
    cell.init(&mut p, rng);
    let xs: Vec<Tensor> = (0..steps).map(|_| normal(rng, [b, i])).collect();
    let (wh, wc) = (normal(rng, [b, h]), normal(rng, [b, h]));
    check_params(&p, |t, bound| {
        let mut hs = t.constant(Tensor::zeros(&[b, h]));
        let mut cs = t.constant(Tensor::zeros(&[b, h]));
        for x in &xs {
            let x = t.constant(x.clone());
            (hs, cs) = cell.step(t, bound, x, hs, cs)?;
        }
        let a = project(t, hs, &wh)?;
        let c = project(t, cs, &wc)?;
        t.add(a, c)
    })
}

fn small_policy(rng: &mut ChaCha8Rng) -> (GaussianPolicy, ParamSet, usize, usize) {
    let (input, act) = (rng.random_range(1..=4), rng.random_range(1..=3));
    let policy = GaussianPolicy::new(input, &[rng.random_range(2..=5), rng.random_range(2..=5)], act);
    let mut p = ParamSet::new();
    policy.init(&mut p, rng);
    (policy, p, input, act)
}

fn policy_sample(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (policy, p, input, act) = small_policy(rng);
    let b = rng.random_range(1..=4);
    let (x, noise, w) = (normal(rng, [b, input]), normal(rng, [b, act]), normal(rng, [b, act]));
    check_params(&p, |t, bound| {
        let x = t.constant(x.clone());
        let out = policy.sample(t, bound, x, &noise)?;
        let lp = t.mean(out.log_prob)?;
        let a = project(t, out.action, &w)?;
        t.add(lp, a)
    })
}

fn policy_mean_action(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (policy, p, input, act) = small_policy(rng);
    let b = rng.random_range(1..=4);
    let (x, w) = (normal(rng, [b, input]), normal(rng, [b, act]));
    check(&[x], SUITE_STEP, |t, ids| {
        let bound = p.bind(t, false);
        let a = policy.mean_action(t, &bound, ids[0])?;
        project(t, a, &w)
    })
}

fn infonce_scores(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let n = rng.random_range(2..=5);
    let (e, d) = (rng.random_range(1..=4), rng.random_range(1..=4));
    let inputs = [normal(rng, [n, e]), normal(rng, [e, d]), normal(rng, [n, d])];
    check(&inputs, SUITE_STEP, |t, ids| crate::encoder::infonce_from_nodes(t, ids[0], ids[1], ids[2]))
}

fn kl(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let shape = dims(rng);
    let inputs = [normal(rng, shape), normal(rng, shape).map(|v| 0.5 * v)];
    check(&inputs, SUITE_STEP, |t, ids| crate::encoder::kl_from_nodes(t, ids[0], ids[1]))
}

fn random_segments(rng: &mut ChaCha8Rng, n: usize, l: usize, sd: usize, ad: usize) -> Result<SegmentBatch> {
    let segs = (0..n)
        .map(|_| {
            (0..l)
                .map(|_| Transition {
                    s: (0..sd).map(|_| rng.sample(StandardNormal)).collect(),
                    a: (0..ad).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    r: rng.sample(StandardNormal),
                    s_next: (0..sd).map(|_| rng.sample(StandardNormal)).collect(),
                    done: rng.random_bool(0.2),
                })
                .collect()
        })
        .collect();
    SegmentBatch::from_segments(segs)
}

fn small_encoder(rng: &mut ChaCha8Rng, sd: usize, ad: usize, d: usize, mode: ContextMode) -> Result<(ContextEncoder, ParamSet)> {
    let mut cfg = EncoderConfig::new(sd, ad, d);
    cfg.embed_width = rng.random_range(2..=4);
    cfg.lstm_hidden = rng.random_range(2..=4);
    cfg.mode = mode;
    let enc = ContextEncoder::new(cfg)?;
    let p = enc.init(rng);
    Ok((enc, p))
}

fn encoder_infonce(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (sd, ad, d) = (rng.random_range(1..=3), rng.random_range(1..=2), rng.random_range(1..=3));
    let (enc, p) = small_encoder(rng, sd, ad, d, ContextMode::Deterministic)?;
    let (n, l) = (rng.random_range(2..=4), rng.random_range(2..=4));
    let batch = random_segments(rng, n, l, sd, ad)?;
    check_params(&p, |t, bound| {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        Ok(enc.infonce(t, bound, &batch, &mut unused)?.loss)
    })
}

fn small_agent(rng: &mut ChaCha8Rng, sd: usize, ad: usize, d: usize) -> Result<SacAgent> {
    let cfg = SacConfig {
        hidden: vec![rng.random_range(2..=5), rng.random_range(2..=5)],
        ..SacConfig::default()
    };
    SacAgent::new(cfg, sd, ad, d, rng)
}

/// Probabilistic encoder with the KL and critic terms switched on. The
/// critic targets are a stop-gradient, so they are frozen at their value for
/// the unperturbed parameters; the frozen loss must agree with the trainer's
/// term there.
fn encoder_objective(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (sd, ad, d) = (rng.random_range(1..=3), rng.random_range(1..=2), rng.random_range(1..=3));
    let (enc, p) = small_encoder(rng, sd, ad, d, ContextMode::Probabilistic)?;
    let agent = small_agent(rng, sd, ad, d)?;
    let n = rng.random_range(2..=4);
    let l = rng.random_range(2..=4);
    let batch = random_segments(rng, n, l, sd, ad)?;
    let policy_noise = standard_normal(n, ad, rng);
    let noise_seed = rng.random();
    let weights = ObjectiveWeights {
        beta1: rng.random_range(0.1..1.0),
        beta2: rng.random_range(0.1..1.0),
    };

    let base = std::cell::RefCell::new(None);
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, false);
    let live = |t: &mut Tape, c: NodeId, c_next: NodeId| {
        let targets = crate::trainer::critic_targets(&agent, &batch, t.value(c_next), &policy_noise)?;
        let out = crate::trainer::critic_term(&agent, &batch, &policy_noise, t, c, c_next)?;
        *base.borrow_mut() = Some((targets, t.value(out).item()));
        Ok(out)
    };
    let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
    let live_total = enc.objective(&mut tape, &bound, &batch, weights, Some(&live), &mut noise)?.total;
    let live_total = tape.value(live_total).item();
    let (targets, live_term) = base.into_inner().expect("critic term evaluated");

    let frozen_at_base = std::cell::Cell::new(None);
    let report = check_params(&p, |t, bound| {
        let critic = |t: &mut Tape, c: NodeId, _: NodeId| crate::trainer::critic_fit(&agent, &batch, t, c, &targets);
        // same context noise on every evaluation
        let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
        let total = enc.objective(t, bound, &batch, weights, Some(&critic), &mut noise)?.total;
        if frozen_at_base.get().is_none() {
            frozen_at_base.set(Some(t.value(total).item()));
        }
        Ok(total)
    })?;
    if frozen_at_base.get() != Some(live_total) {
        return Err(Error::contract(format!(
            "frozen critic term disagrees with the trainer's ({:?} vs {live_total}, term {live_term})",
            frozen_at_base.get()
        )));
    }
    Ok(report)
}

struct RlInstance {
    agent: SacAgent,
    s: Tensor,
    a: Tensor,
    c: Tensor,
    targets: Vec<f64>,
    noise: Tensor,
}

fn rl_instance(rng: &mut ChaCha8Rng) -> Result<RlInstance> {
    let (sd, ad, d) = (rng.random_range(1..=3), rng.random_range(1..=2), rng.random_range(1..=3));
    let agent = small_agent(rng, sd, ad, d)?;
    let b = rng.random_range(1..=4);
    let s = normal(rng, [b, sd]);
    let a = Tensor::from_parts(vec![b, ad], (0..b * ad).map(|_| rng.random_range(-0.9..0.9)).collect());
    let c = normal(rng, [b, d]);
    let targets = (0..b).map(|_| rng.sample(StandardNormal)).collect();
    let noise = standard_normal(b, ad, rng);
    Ok(RlInstance {
        agent,
        s,
        a,
        c,
        targets,
        noise,
    })
}

fn critic_loss(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let x = rl_instance(rng)?;
    check_params(&x.agent.critics.params, |t, bound| {
        let (s, a, c) = (t.constant(x.s.clone()), t.constant(x.a.clone()), t.constant(x.c.clone()));
        let (j1, j2) = x.agent.critic_loss(t, bound, s, a, Some(c), &x.targets)?;
        let j2 = t.scale(j2, 0.5)?;
        t.add(j1, j2)
    })
}

/// Gradient of the critic loss with respect to the context input.
fn critic_loss_context(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let x = rl_instance(rng)?;
    check(&[x.c.clone()], SUITE_STEP, |t, ids| {
        let bound = x.agent.critics.params.bind(t, false);
        let (s, a) = (t.constant(x.s.clone()), t.constant(x.a.clone()));
        let (j1, j2) = x.agent.critic_loss(t, &bound, s, a, Some(ids[0]), &x.targets)?;
        t.add(j1, j2)
    })
}

fn policy_loss(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let x = rl_instance(rng)?;
    check_params(&x.agent.policy_params, |t, bound| {
        let critic = x.agent.critics.params.bind(t, false);
        let (s, c) = (t.constant(x.s.clone()), t.constant(x.c.clone()));
        Ok(x.agent.policy_loss(t, bound, &critic, s, Some(c), &x.noise)?.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_correct_gradient() {
        let x = Tensor::new(vec![1, 3], vec![0.3, -1.2, 2.0]).unwrap();
        let r = check(&[x], 1e-6, |t, ids| {
            let y = t.tanh(ids[0])?;
            let y = t.mul(y, ids[0])?;
            t.sum(y)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-7, "{r:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu at a kink with a one-sided tape gradient
        let x = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
        let r = check(&[x], 1e-6, |t, ids| {
            let y = t.relu(ids[0])?;
            t.sum(y)
        })
        .unwrap();
        assert!(r.max_rel_err > 0.1);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert!((rel_err(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((rel_err(0.0, 1e-9) - 1e-3).abs() < 1e-15);
    }
}
