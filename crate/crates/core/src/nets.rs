//! Network building blocks: linear layers, MLPs, an LSTM cell, the
//! tanh-squashed diagonal Gaussian policy and Polyak target averaging.
//!
//! Architectures are plain descriptions (names and widths). Parameter values
//! live in a [`ParamSet`] and are bound onto a tape for each pass.

use rand::Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamSet};
use crate::tensor::Tensor;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Added inside `log(1 - tanh(u)^2 + eps)`.
pub const SQUASH_EPS: f64 = 1e-6;
/// Pre-squash values are clipped here so `tanh` stays strictly inside (-1, 1).
pub const PRE_SQUASH_LIMIT: f64 = 15.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    name: String,
    input: usize,
    output: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, input: usize, output: usize) -> Self {
        Linear {
            name: name.into(),
            input,
            output,
        }
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn output(&self) -> usize {
        self.output
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        let bound = 1.0 / (self.input as f64).sqrt();
        params.init_uniform(&self.weight_name(), &[self.input, self.output], bound, rng);
        params.init_uniform(&self.bias_name(), &[1, self.output], bound, rng);
    }

    /// `x (B x in) -> x W + b`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: NodeId) -> Result<NodeId> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.input {
            return Err(Error::dim("linear", shape, &[self.input, self.output]));
        }
        let rows = shape[0];
        let xw = tape.matmul(x, p.get(&self.weight_name())?)?;
        let b = tape.broadcast_rows(p.get(&self.bias_name())?, rows)?;
        tape.add(xw, b)
    }
}

/// Fully connected stack with ReLU between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(prefix: &str, input: usize, hidden: &[usize], output: usize) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(format!("{prefix}.l{i}"), w[0], w[1]))
            .collect();
        Mlp { layers }
    }

    pub fn input(&self) -> usize {
        self.layers[0].input
    }

    pub fn output(&self) -> usize {
        self.layers.last().unwrap().output
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        for l in &self.layers {
            l.init(params, rng);
        }
    }

    /// Linear -> ReLU -> ... -> Linear, final layer unactivated.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, p, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Every layer followed by ReLU.
    pub fn forward_features(&self, tape: &mut Tape, p: &Bound, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, p, h)?;
            h = tape.relu(h)?;
        }
        Ok(h)
    }
}

/// LSTM cell with fused gate weights in `i, f, g, o` order.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    prefix: String,
    input: usize,
    hidden: usize,
}

impl LstmCell {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize) -> Self {
        LstmCell {
            prefix: prefix.into(),
            input,
            hidden,
        }
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn wx_name(&self) -> String {
        format!("{}.wx", self.prefix)
    }

    pub fn wh_name(&self) -> String {
        format!("{}.wh", self.prefix)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        let h = self.hidden;
        let bound = 1.0 / (h as f64).sqrt();
        params.init_uniform(&self.wx_name(), &[self.input, 4 * h], bound, rng);
        params.init_uniform(&self.wh_name(), &[h, 4 * h], bound, rng);
        params.init_uniform(&self.bias_name(), &[1, 4 * h], bound, rng);
        let b = params.get_mut(&self.bias_name()).expect("just inserted");
        for v in &mut b.data_mut()[h..2 * h] {
            *v += 1.0;
        }
    }

    /// One step on a batch: `x (B x in)`, `h, c (B x H)`; returns `(h', c')`.
    pub fn step(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let hd = self.hidden;
        let (xs, hs, cs) = (tape.shape(x), tape.shape(h), tape.shape(c));
        if xs.len() != 2 || xs[1] != self.input {
            return Err(Error::dim("lstm_step", xs, &[self.input]));
        }
        if hs != [xs[0], hd] || cs != hs {
            return Err(Error::dim("lstm_step", hs, cs));
        }
        let rows = xs[0];
        let gx = tape.matmul(x, p.get(&self.wx_name())?)?;
        let gh = tape.matmul(h, p.get(&self.wh_name())?)?;
        let b = tape.broadcast_rows(p.get(&self.bias_name())?, rows)?;
        let pre = tape.add(gx, gh)?;
        let pre = tape.add(pre, b)?;

        let i = tape.slice(pre, 0, hd)?;
        let f = tape.slice(pre, hd, hd)?;
        let g = tape.slice(pre, 2 * hd, hd)?;
        let o = tape.slice(pre, 3 * hd, hd)?;
        let i = tape.sigmoid(i)?;
        let f = tape.sigmoid(f)?;
        let g = tape.tanh(g)?;
        let o = tape.sigmoid(o)?;

        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        let c_next = tape.add(keep, write)?;
        let squashed = tape.tanh(c_next)?;
        let h_next = tape.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}

/// Diagonal Gaussian policy with a shared ReLU trunk and separate mean and
/// log-std heads; samples are squashed through `tanh`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    trunk: Mlp,
    mean: Linear,
    log_std: Linear,
}

/// Tape nodes produced by one policy evaluation.
#[derive(Debug, Clone, Copy)]
pub struct PolicyNodes {
    /// Squashed action in (-1, 1), `B x A`.
    pub action: NodeId,
    /// `B x 1`.
    pub log_prob: NodeId,
    pub mean: NodeId,
    pub log_std: NodeId,
}

impl GaussianPolicy {
    /// `hidden` lists the trunk widths (two layers of 256 by default).
    pub fn new(input: usize, hidden: &[usize], action_dim: usize) -> Self {
        assert!(!hidden.is_empty(), "policy trunk needs at least one layer");
        let last = *hidden.last().unwrap();
        let trunk = Mlp::new("policy.trunk", input, &hidden[..hidden.len() - 1], last);
        GaussianPolicy {
            trunk,
            mean: Linear::new("policy.mean", last, action_dim),
            log_std: Linear::new("policy.log_std", last, action_dim),
        }
    }

    pub fn input(&self) -> usize {
        self.trunk.input()
    }

    pub fn action_dim(&self) -> usize {
        self.mean.output
    }

    pub fn mean_head(&self) -> &Linear {
        &self.mean
    }

    pub fn log_std_head(&self) -> &Linear {
        &self.log_std
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        self.trunk.init(params, rng);
        self.mean.init(params, rng);
        self.log_std.init(params, rng);
    }

    fn heads(&self, tape: &mut Tape, p: &Bound, input: NodeId) -> Result<(NodeId, NodeId)> {
        let features = self.trunk.forward_features(tape, p, input)?;
        let mean = self.mean.forward(tape, p, features)?;
        let raw = self.log_std.forward(tape, p, features)?;
        let log_std = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX)?;
        Ok((mean, log_std))
    }

    /// Reparameterised sample `tanh(mean + std * noise)` with its log density.
    pub fn sample(&self, tape: &mut Tape, p: &Bound, input: NodeId, noise: &Tensor) -> Result<PolicyNodes> {
        let (mean, log_std) = self.heads(tape, p, input)?;
        if noise.shape() != tape.shape(mean) {
            return Err(Error::dim("policy_sample", tape.shape(mean), noise.shape()));
        }
        let eps = tape.constant(noise.clone());
        let std = tape.exp(log_std)?;
        let spread = tape.mul(std, eps)?;
        let u = tape.add(mean, spread)?;
        let u = tape.clamp(u, -PRE_SQUASH_LIMIT, PRE_SQUASH_LIMIT)?;
        let action = tape.tanh(u)?;

        // log N(u; mean, std) = -noise^2/2 - log std - log(2 pi)/2
        let base = tape.constant(noise.map(|z| -0.5 * z * z - HALF_LN_2PI));
        let gauss = tape.sub(base, log_std)?;
        let gauss = tape.sum_axis(gauss, 1)?;

        let a2 = tape.mul(action, action)?;
        let one_minus = tape.neg(a2)?;
        let one_minus = tape.add_scalar(one_minus, 1.0 + SQUASH_EPS)?;
        let log_det = tape.log(one_minus)?;
        let log_det = tape.sum_axis(log_det, 1)?;
        let log_prob = tape.sub(gauss, log_det)?;

        let lp = tape.value(log_prob);
        if !lp.all_finite() {
            return Err(Error::NonFinite("policy log_prob".into()));
        }
        Ok(PolicyNodes {
            action,
            log_prob,
            mean,
            log_std,
        })
    }

    /// Deterministic action `tanh(mean)` used for evaluation.
    pub fn mean_action(&self, tape: &mut Tape, p: &Bound, input: NodeId) -> Result<NodeId> {
        let (mean, _) = self.heads(tape, p, input)?;
        let u = tape.clamp(mean, -PRE_SQUASH_LIMIT, PRE_SQUASH_LIMIT)?;
        tape.tanh(u)
    }

    /// Upper bound on the per-row log-probability implied by the log-std
    /// clamp and the squash epsilon.
    pub fn log_prob_upper_bound(&self) -> f64 {
        self.action_dim() as f64 * (-LOG_STD_MIN - HALF_LN_2PI - SQUASH_EPS.ln())
    }
}

/// `target <- tau * current + (1 - tau) * target`, elementwise.
pub fn polyak_update(target: &mut ParamSet, current: &ParamSet, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::contract(format!("polyak tau {tau} outside [0, 1]")));
    }
    target.check_aligned(current)?;
    for ((_, t), (_, c)) in target.iter_mut().zip(current.iter()) {
        for (tv, &cv) in t.data_mut().iter_mut().zip(c.data()) {
            *tv = tau * cv + (1.0 - tau) * *tv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn zeroed(p: &ParamSet) -> ParamSet {
        let mut z = p.clone();
        for (_, t) in z.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    #[test]
    fn zero_mlp_gives_zero_output() {
        let mlp = Mlp::new("q", 3, &[8, 8], 2);
        let mut p = ParamSet::new();
        mlp.init(&mut p, &mut rng());
        let p = zeroed(&p);
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, true);
        let x = tape.constant(Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.1, 9.0]).unwrap());
        let y = mlp.forward(&mut tape, &b, x).unwrap();
        assert_eq!(tape.value(y), &Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn identity_path_passes_positive_input() {
        let mlp = Mlp::new("q", 2, &[2, 2], 2);
        let mut p = ParamSet::new();
        for l in mlp.layers() {
            p.insert(l.weight_name(), Tensor::identity(2));
            p.insert(l.bias_name(), Tensor::zeros(&[1, 2]));
        }
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let x = tape.constant(Tensor::row(&[0.25, 3.5]).unwrap());
        let y = mlp.forward(&mut tape, &b, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.25, 3.5]);
    }

    #[test]
    fn mlp_width_mismatch_is_dimension_error() {
        let mlp = Mlp::new("q", 3, &[4], 1);
        let mut p = ParamSet::new();
        mlp.init(&mut p, &mut rng());
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, true);
        let x = tape.constant(Tensor::ones(&[1, 2]));
        assert!(matches!(mlp.forward(&mut tape, &b, x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_lstm_keeps_hidden_zero() {
        let cell = LstmCell::new("enc.lstm", 3, 4);
        let mut p = ParamSet::new();
        cell.init(&mut p, &mut rng());
        let p = zeroed(&p);
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, true);
        let x = tape.constant(Tensor::ones(&[1, 3]));
        let h = tape.constant(Tensor::zeros(&[1, 4]));
        let c = tape.constant(Tensor::zeros(&[1, 4]));
        let (h2, c2) = cell.step(&mut tape, &b, x, h, c).unwrap();
        assert_eq!(tape.value(h2), &Tensor::zeros(&[1, 4]));
        assert_eq!(tape.value(c2), &Tensor::zeros(&[1, 4]));
    }

    #[test]
    fn forget_gate_bias_starts_near_one() {
        let cell = LstmCell::new("l", 2, 3);
        let mut p = ParamSet::new();
        cell.init(&mut p, &mut rng());
        let b = p.get("l.b").unwrap().data().to_vec();
        let bound = 1.0 / 3f64.sqrt();
        assert!(b[3..6].iter().all(|v| (v - 1.0).abs() <= bound));
    }

    #[test]
    fn lstm_width_mismatch_is_dimension_error() {
        let cell = LstmCell::new("l", 2, 3);
        let mut p = ParamSet::new();
        cell.init(&mut p, &mut rng());
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, true);
        let x = tape.constant(Tensor::ones(&[1, 2]));
        let h = tape.constant(Tensor::zeros(&[1, 2]));
        let c = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(cell.step(&mut tape, &b, x, h, c).is_err());
    }

    fn fixed_policy(mean: f64, log_std: f64) -> (GaussianPolicy, ParamSet) {
        let pol = GaussianPolicy::new(1, &[2, 2], 1);
        let mut p = ParamSet::new();
        pol.init(&mut p, &mut rng());
        let mut p = zeroed(&p);
        p.insert(pol.mean_head().bias_name(), Tensor::new(vec![1, 1], vec![mean]).unwrap());
        p.insert(pol.log_std_head().bias_name(), Tensor::new(vec![1, 1], vec![log_std]).unwrap());
        (pol, p)
    }

    #[test]
    fn standard_normal_at_zero_noise() {
        let (pol, p) = fixed_policy(0.0, 0.0);
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, true);
        let x = tape.constant(Tensor::ones(&[1, 1]));
        let out = pol.sample(&mut tape, &b, x, &Tensor::zeros(&[1, 1])).unwrap();
        assert_eq!(tape.value(out.action).item(), 0.0);
        let lp = tape.value(out.log_prob).item();
        // the squash term is log(1 + 1e-6) at a = 0
        assert!((lp - (-0.5 * (2.0 * std::f64::consts::PI).ln())).abs() < 2e-6, "{lp}");
    }

    #[test]
    fn small_std_collapses_to_tanh_mean() {
        let (pol, p) = fixed_policy(0.7, -18.0);
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, true);
        let x = tape.constant(Tensor::ones(&[1, 1]));
        let out = pol.sample(&mut tape, &b, x, &Tensor::filled(&[1, 1], 1.3)).unwrap();
        assert!((tape.value(out.action).item() - 0.7f64.tanh()).abs() < 1e-7);
    }

    #[test]
    fn mean_action_matches_zero_noise_sample() {
        let pol = GaussianPolicy::new(3, &[5, 5], 2);
        let mut p = ParamSet::new();
        pol.init(&mut p, &mut rng());
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let x = tape.constant(Tensor::row(&[0.3, -0.1, 0.8]).unwrap());
        let det = pol.mean_action(&mut tape, &b, x).unwrap();
        let s = pol.sample(&mut tape, &b, x, &Tensor::zeros(&[1, 2])).unwrap();
        assert_eq!(tape.value(det), tape.value(s.action));
    }

    #[test]
    fn large_mean_saturates_but_stays_inside_box() {
        let (pol, p) = fixed_policy(1e6, 0.0);
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let x = tape.constant(Tensor::ones(&[1, 1]));
        let id = pol.mean_action(&mut tape, &b, x).unwrap();
        let a = tape.value(id).item();
        assert!(a < 1.0 && a > 1.0 - 1e-9);
    }

    #[test]
    fn noise_shape_is_checked() {
        let (pol, p) = fixed_policy(0.0, 0.0);
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let x = tape.constant(Tensor::ones(&[1, 1]));
        assert!(pol.sample(&mut tape, &b, x, &Tensor::zeros(&[1, 2])).is_err());
    }

    #[test]
    fn polyak_extremes_and_midpoint() {
        let mut cur = ParamSet::new();
        cur.insert("w", Tensor::filled(&[2], 2.0));
        let mut tgt = ParamSet::new();
        tgt.insert("w", Tensor::filled(&[2], 1.0));

        let mut t0 = tgt.clone();
        polyak_update(&mut t0, &cur, 0.0).unwrap();
        assert_eq!(t0, tgt);

        let mut t1 = tgt.clone();
        polyak_update(&mut t1, &cur, 1.0).unwrap();
        assert_eq!(t1, cur);

        let mut t = tgt.clone();
        polyak_update(&mut t, &cur, 0.005).unwrap();
        assert!((t.get("w").unwrap().data()[0] - 1.005).abs() < 1e-15);

        let mut other = ParamSet::new();
        other.insert("v", Tensor::filled(&[2], 2.0));
        assert!(polyak_update(&mut t, &other, 0.5).is_err());
    }
}
