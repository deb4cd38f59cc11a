//! Soft actor-critic on context-augmented inputs.
//!
//! The critics see `concat(s, a, c)` and the policy sees `concat(s, c)`.
//! With a zero-width context both reduce to plain SAC.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::nets::{polyak_update, GaussianPolicy, Mlp};
use crate::optim::{Adam, AdamState, DEFAULT_LR};
use crate::params::{Bound, ParamSet};
use crate::replay::{RlBatch, RlBuffer};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch: usize,
    pub hidden: Vec<usize>,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            alpha: 0.2,
            gamma: 0.99,
            tau: 0.005,
            lr: DEFAULT_LR,
            batch: 128,
            hidden: vec![256, 256],
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("sac.gamma must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("sac.tau must lie in (0, 1]");
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad("sac.alpha must be non-negative");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("sac.lr must be positive");
        }
        if self.batch == 0 {
            return bad("sac.batch must be at least 1");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("sac.hidden needs at least one non-zero width");
        }
        Ok(())
    }
}

/// Two Q networks and their slow-moving copies. Both critics live in one
/// parameter set under `q1.` and `q2.`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticEnsemble {
    pub q1: Mlp,
    pub q2: Mlp,
    pub params: ParamSet,
    pub target: ParamSet,
}

impl CriticEnsemble {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], rng: &mut R) -> Self {
        let q1 = Mlp::new("q1", input, hidden, 1);
        let q2 = Mlp::new("q2", input, hidden, 1);
        let mut params = ParamSet::new();
        q1.init(&mut params, rng);
        q2.init(&mut params, rng);
        let target = params.clone();
        CriticEnsemble { q1, q2, params, target }
    }

    /// Both Q values, each `B x 1`.
    pub fn q_values(&self, tape: &mut Tape, p: &Bound, input: NodeId) -> Result<(NodeId, NodeId)> {
        Ok((self.q1.forward(tape, p, input)?, self.q2.forward(tape, p, input)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct UpdateMetrics {
    pub j_q1: f64,
    pub j_q2: f64,
    pub j_pi: f64,
    pub mean_q: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent {
    pub cfg: SacConfig,
    pub policy: GaussianPolicy,
    pub policy_params: ParamSet,
    pub critics: CriticEnsemble,
    state_dim: usize,
    action_dim: usize,
    context_dim: usize,
    policy_opt: AdamState,
    critic_opt: AdamState,
}

/// `rows x cols` standard normals, row-major.
pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_parts(vec![rows, cols], data)
}

fn concat_inputs(tape: &mut Tape, parts: &[Option<NodeId>]) -> Result<NodeId> {
    let ids: Vec<NodeId> = parts.iter().flatten().copied().collect();
    if ids.len() == 1 {
        return Ok(ids[0]);
    }
    tape.concat(&ids)
}

/// Batch rows placed on a tape as constants.
#[derive(Debug, Clone, Copy)]
pub struct BatchNodes {
    pub s: NodeId,
    pub a: NodeId,
    pub s_next: NodeId,
    pub c: Option<NodeId>,
    pub c_next: Option<NodeId>,
}

impl BatchNodes {
    pub fn constants(tape: &mut Tape, batch: &RlBatch) -> Self {
        BatchNodes {
            s: tape.constant(batch.s.clone()),
            a: tape.constant(batch.a.clone()),
            s_next: tape.constant(batch.s_next.clone()),
            c: batch.c.as_ref().map(|c| tape.constant(c.clone())),
            c_next: batch.c_next.as_ref().map(|c| tape.constant(c.clone())),
        }
    }
}

impl SacAgent {
    /// Policy parameters are drawn before critic parameters.
    pub fn new<R: Rng + ?Sized>(
        cfg: SacConfig,
        state_dim: usize,
        action_dim: usize,
        context_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let policy = GaussianPolicy::new(state_dim + context_dim, &cfg.hidden, action_dim);
        let mut policy_params = ParamSet::new();
        policy.init(&mut policy_params, rng);
        let critics = CriticEnsemble::new(state_dim + action_dim + context_dim, &cfg.hidden, rng);
        Ok(SacAgent {
            cfg,
            policy,
            policy_params,
            critics,
            state_dim,
            action_dim,
            context_dim,
            policy_opt: AdamState::default(),
            critic_opt: AdamState::default(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn updates(&self) -> u64 {
        self.critic_opt.steps()
    }

    fn check_batch(&self, batch: &RlBatch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InsufficientData("empty rl batch".into()));
        }
        let cd = batch.c.as_ref().map_or(0, |c| c.cols());
        if batch.s.cols() != self.state_dim || batch.a.cols() != self.action_dim || cd != self.context_dim {
            return Err(Error::dim(
                "sac_batch",
                &[self.state_dim, self.action_dim, self.context_dim],
                &[batch.s.cols(), batch.a.cols(), cd],
            ));
        }
        Ok(())
    }

    /// Entropy-regularised bootstrap targets; every parameter enters as a
    /// constant so nothing receives gradient from here.
    pub fn q_target(&self, batch: &RlBatch, noise: &Tensor) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let mut tape = Tape::new();
        let nodes = BatchNodes::constants(&mut tape, batch);
        self.q_target_on(&mut tape, batch, nodes.s_next, nodes.c_next, noise)
    }

    /// Targets with `s'` and `c'` supplied as existing tape nodes. Only their
    /// values are used.
    pub fn q_target_on(
        &self,
        tape: &mut Tape,
        batch: &RlBatch,
        s_next: NodeId,
        c_next: Option<NodeId>,
        noise: &Tensor,
    ) -> Result<Vec<f64>> {
        let s_next = tape.constant(tape.value(s_next).clone());
        let c_next = c_next.map(|c| tape.constant(tape.value(c).clone()));
        let pol = self.policy_params.bind(tape, false);
        let tgt = self.critics.target.bind(tape, false);
        let pi_in = concat_inputs(tape, &[Some(s_next), c_next])?;
        let next = self.policy.sample(tape, &pol, pi_in, noise)?;
        let q_in = concat_inputs(tape, &[Some(s_next), Some(next.action), c_next])?;
        let (q1, q2) = self.critics.q_values(tape, &tgt, q_in)?;
        let q_min = tape.minimum(q1, q2)?;
        let soft = tape.value(q_min).data();
        let lp = tape.value(next.log_prob).data();
        let (gamma, alpha) = (self.cfg.gamma, self.cfg.alpha);
        Ok((0..batch.len())
            .map(|i| {
                let mask = if batch.done[i] { 0.0 } else { 1.0 };
                batch.r[i] + gamma * mask * (soft[i] - alpha * lp[i])
            })
            .collect())
    }

    /// `(J_Q1, J_Q2)` as tape nodes, `mean ½ (Q_i(s, a, c) - y)^2`.
    pub fn critic_loss(
        &self,
        tape: &mut Tape,
        critic: &Bound,
        s: NodeId,
        a: NodeId,
        c: Option<NodeId>,
        targets: &[f64],
    ) -> Result<(NodeId, NodeId)> {
        let rows = tape.shape(s)[0];
        if targets.len() != rows {
            return Err(Error::dim("critic_loss", &[rows], &[targets.len()]));
        }
        let q_in = concat_inputs(tape, &[Some(s), Some(a), c])?;
        let (q1, q2) = self.critics.q_values(tape, critic, q_in)?;
        let y = tape.constant(Tensor::from_parts(vec![rows, 1], targets.to_vec()));
        let mut half_mse = |q| -> Result<NodeId> {
            let d = tape.squared_diff(q, y)?;
            let m = tape.mean(d)?;
            tape.scale(m, 0.5)
        };
        Ok((half_mse(q1)?, half_mse(q2)?))
    }

    /// `mean(alpha log pi(a|s,c) - min Q(s, a, c))` with `a` reparameterised
    /// from `noise`. Returns the loss and the per-row log-probabilities.
    pub fn policy_loss(
        &self,
        tape: &mut Tape,
        policy: &Bound,
        critic: &Bound,
        s: NodeId,
        c: Option<NodeId>,
        noise: &Tensor,
    ) -> Result<(NodeId, NodeId)> {
        let pi_in = concat_inputs(tape, &[Some(s), c])?;
        let out = self.policy.sample(tape, policy, pi_in, noise)?;
        let q_in = concat_inputs(tape, &[Some(s), Some(out.action), c])?;
        let (q1, q2) = self.critics.q_values(tape, critic, q_in)?;
        let q_min = tape.minimum(q1, q2)?;
        let ent = tape.scale(out.log_prob, self.cfg.alpha)?;
        let diff = tape.sub(ent, q_min)?;
        Ok((tape.mean(diff)?, out.log_prob))
    }

    /// One critic step, one policy step, then target averaging.
    pub fn update_on_batch(&mut self, batch: &RlBatch, target_noise: &Tensor, policy_noise: &Tensor) -> Result<UpdateMetrics> {
        self.check_batch(batch)?;
        let opt = Adam::with_lr(self.cfg.lr);
        let targets = self.q_target(batch, target_noise)?;

        let mut tape = Tape::new();
        let nodes = BatchNodes::constants(&mut tape, batch);
        let critic = self.critics.params.bind(&mut tape, true);
        let (j1, j2) = self.critic_loss(&mut tape, &critic, nodes.s, nodes.a, nodes.c, &targets)?;
        let q_in = concat_inputs(&mut tape, &[Some(nodes.s), Some(nodes.a), nodes.c])?;
        let (q1, q2) = self.critics.q_values(&mut tape, &critic, q_in)?;
        let q_min = tape.minimum(q1, q2)?;
        let mean_q = tape.value(q_min).mean();
        let total = tape.add(j1, j2)?;
        let grads = critic.grads(&tape.backward(total)?);
        let (j_q1, j_q2) = (tape.value(j1).item(), tape.value(j2).item());
        opt.step(&mut self.critics.params, &grads, &mut self.critic_opt)?;

        let mut tape = Tape::new();
        let nodes = BatchNodes::constants(&mut tape, batch);
        let pol = self.policy_params.bind(&mut tape, true);
        let critic = self.critics.params.bind(&mut tape, false);
        let (j_pi, lp) = self.policy_loss(&mut tape, &pol, &critic, nodes.s, nodes.c, policy_noise)?;
        let grads = pol.grads(&tape.backward(j_pi)?);
        let j_pi_v = tape.value(j_pi).item();
        let entropy = -tape.value(lp).mean();
        opt.step(&mut self.policy_params, &grads, &mut self.policy_opt)?;

        polyak_update(&mut self.critics.target, &self.critics.params, self.cfg.tau)?;
        Ok(UpdateMetrics {
            j_q1,
            j_q2,
            j_pi: j_pi_v,
            mean_q,
            entropy,
        })
    }

    /// Samples a batch and both noise tensors from `rng` in that order, then
    /// runs [`SacAgent::update_on_batch`].
    pub fn update<R: Rng + ?Sized>(&mut self, buf: &RlBuffer, rng: &mut R) -> Result<UpdateMetrics> {
        let batch = buf.sample(self.cfg.batch, rng)?;
        let target_noise = standard_normal(batch.len(), self.action_dim, rng);
        let policy_noise = standard_normal(batch.len(), self.action_dim, rng);
        self.update_on_batch(&batch, &target_noise, &policy_noise)
    }

    /// Squashed action in `[-1, 1]^A` for one observation. `noise = None`
    /// gives the deterministic mean action.
    pub fn act(&self, s: &[f64], c: &[f64], noise: Option<&[f64]>) -> Result<Vec<f64>> {
        if s.len() != self.state_dim || c.len() != self.context_dim {
            return Err(Error::dim("act", &[self.state_dim, self.context_dim], &[s.len(), c.len()]));
        }
        let mut input = s.to_vec();
        input.extend_from_slice(c);
        let mut tape = Tape::new();
        let p = self.policy_params.bind(&mut tape, false);
        let x = tape.constant(Tensor::row(&input)?);
        let a = match noise {
            Some(z) => self.policy.sample(&mut tape, &p, x, &Tensor::row(z)?)?.action,
            None => self.policy.mean_action(&mut tape, &p, x)?,
        };
        Ok(tape.value(a).data().to_vec())
    }

    /// All trainable parameters under `policy/`, `critic/` and `target/`.
    pub fn checkpoint(&self) -> ParamSet {
        let mut out = self.policy_params.prefixed("policy");
        out.extend(self.critics.params.prefixed("critic"));
        out.extend(self.critics.target.prefixed("target"));
        out
    }

    pub fn load_checkpoint(&mut self, ckpt: &ParamSet) -> Result<()> {
        let policy = ckpt.section("policy");
        let critic = ckpt.section("critic");
        let target = ckpt.section("target");
        policy.check_aligned(&self.policy_params)?;
        critic.check_aligned(&self.critics.params)?;
        target.check_aligned(&self.critics.target)?;
        self.policy_params = policy;
        self.critics.params = critic;
        self.critics.target = target;
        Ok(())
    }
}

/// Context-free SAC written directly against `(s, a, r, s', done)` rows.
/// Serves as the reference the context-augmented path must reduce to.
pub mod reference {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    pub struct PlainSac {
        pub cfg: SacConfig,
        pub policy: GaussianPolicy,
        pub q1: Mlp,
        pub q2: Mlp,
        pub pi: ParamSet,
        pub q: ParamSet,
        pub q_bar: ParamSet,
        pi_opt: AdamState,
        q_opt: AdamState,
        action_dim: usize,
    }

    impl PlainSac {
        pub fn new<R: Rng + ?Sized>(cfg: SacConfig, state_dim: usize, action_dim: usize, rng: &mut R) -> Result<Self> {
            cfg.validate()?;
            let policy = GaussianPolicy::new(state_dim, &cfg.hidden, action_dim);
            let mut pi = ParamSet::new();
            policy.init(&mut pi, rng);
            let q1 = Mlp::new("q1", state_dim + action_dim, &cfg.hidden, 1);
            let q2 = Mlp::new("q2", state_dim + action_dim, &cfg.hidden, 1);
            let mut q = ParamSet::new();
            q1.init(&mut q, rng);
            q2.init(&mut q, rng);
            let q_bar = q.clone();
            Ok(PlainSac {
                cfg,
                policy,
                q1,
                q2,
                pi,
                q,
                q_bar,
                pi_opt: AdamState::default(),
                q_opt: AdamState::default(),
                action_dim,
            })
        }

        pub fn act(&self, s: &[f64], noise: Option<&[f64]>) -> Result<Vec<f64>> {
            let mut tape = Tape::new();
            let p = self.pi.bind(&mut tape, false);
            let x = tape.constant(Tensor::row(s)?);
            let a = match noise {
                Some(z) => self.policy.sample(&mut tape, &p, x, &Tensor::row(z)?)?.action,
                None => self.policy.mean_action(&mut tape, &p, x)?,
            };
            Ok(tape.value(a).data().to_vec())
        }

        pub fn update<R: Rng + ?Sized>(&mut self, buf: &RlBuffer, rng: &mut R) -> Result<UpdateMetrics> {
            let b = buf.sample(self.cfg.batch, rng)?;
            let n = b.len();
            let z_next = standard_normal(n, self.action_dim, rng);
            let z_pi = standard_normal(n, self.action_dim, rng);
            let (alpha, gamma) = (self.cfg.alpha, self.cfg.gamma);
            let opt = Adam::with_lr(self.cfg.lr);

            let y: Vec<f64> = {
                let mut t = Tape::new();
                let pi = self.pi.bind(&mut t, false);
                let qb = self.q_bar.bind(&mut t, false);
                let s2 = t.constant(b.s_next.clone());
                let next = self.policy.sample(&mut t, &pi, s2, &z_next)?;
                let x = t.concat(&[s2, next.action])?;
                let v1 = self.q1.forward(&mut t, &qb, x)?;
                let v2 = self.q2.forward(&mut t, &qb, x)?;
                let v = t.minimum(v1, v2)?;
                let (v, lp) = (t.value(v).data(), t.value(next.log_prob).data());
                (0..n)
                    .map(|i| {
                        let live = if b.done[i] { 0.0 } else { 1.0 };
                        b.r[i] + gamma * live * (v[i] - alpha * lp[i])
                    })
                    .collect()
            };

            let mut t = Tape::new();
            let s = t.constant(b.s.clone());
            let a = t.constant(b.a.clone());
            let q = self.q.bind(&mut t, true);
            let x = t.concat(&[s, a])?;
            let q1 = self.q1.forward(&mut t, &q, x)?;
            let q2 = self.q2.forward(&mut t, &q, x)?;
            let yt = t.constant(Tensor::from_parts(vec![n, 1], y));
            let d1 = t.squared_diff(q1, yt)?;
            let d1 = t.mean(d1)?;
            let j1 = t.scale(d1, 0.5)?;
            let d2 = t.squared_diff(q2, yt)?;
            let d2 = t.mean(d2)?;
            let j2 = t.scale(d2, 0.5)?;
            let x = t.concat(&[s, a])?;
            let m1 = self.q1.forward(&mut t, &q, x)?;
            let m2 = self.q2.forward(&mut t, &q, x)?;
            let m = t.minimum(m1, m2)?;
            let mean_q = t.value(m).mean();
            let both = t.add(j1, j2)?;
            let g = q.grads(&t.backward(both)?);
            let (j_q1, j_q2) = (t.value(j1).item(), t.value(j2).item());
            opt.step(&mut self.q, &g, &mut self.q_opt)?;

            let mut t = Tape::new();
            let s = t.constant(b.s.clone());
            let pi = self.pi.bind(&mut t, true);
            let q = self.q.bind(&mut t, false);
            let out = self.policy.sample(&mut t, &pi, s, &z_pi)?;
            let x = t.concat(&[s, out.action])?;
            let v1 = self.q1.forward(&mut t, &q, x)?;
            let v2 = self.q2.forward(&mut t, &q, x)?;
            let v = t.minimum(v1, v2)?;
            let e = t.scale(out.log_prob, alpha)?;
            let d = t.sub(e, v)?;
            let j_pi = t.mean(d)?;
            let g = pi.grads(&t.backward(j_pi)?);
            let j_pi_v = t.value(j_pi).item();
            let entropy = -t.value(out.log_prob).mean();
            opt.step(&mut self.pi, &g, &mut self.pi_opt)?;

            polyak_update(&mut self.q_bar, &self.q, self.cfg.tau)?;
            Ok(UpdateMetrics {
                j_q1,
                j_q2,
                j_pi: j_pi_v,
                mean_q,
                entropy,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::RlTuple;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> SacConfig {
        SacConfig {
            hidden: vec![8, 8],
            batch: 4,
            ..SacConfig::default()
        }
    }

    fn agent(cd: usize) -> SacAgent {
        SacAgent::new(small_cfg(), 2, 1, cd, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    fn tuple(i: usize, cd: usize, done: bool) -> RlTuple {
        let x = i as f64 * 0.3;
        RlTuple {
            c: (0..cd).map(|k| (x + k as f64).sin()).collect(),
            s: vec![x.cos(), x.sin()],
            a: vec![(0.7 * x).sin()],
            r: -x,
            s_next: vec![(x + 0.1).cos(), (x + 0.1).sin()],
            c_next: (0..cd).map(|k| (x + 0.5 + k as f64).sin()).collect(),
            done,
        }
    }

    fn batch(cd: usize, n: usize) -> RlBatch {
        RlBatch::from_tuples(&(0..n).map(|i| tuple(i, cd, i % 3 == 2)).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SacConfig::default().validate().is_ok());
        for bad in [
            SacConfig { gamma: 1.5, ..SacConfig::default() },
            SacConfig { tau: 0.0, ..SacConfig::default() },
            SacConfig { alpha: -0.1, ..SacConfig::default() },
            SacConfig { batch: 0, ..SacConfig::default() },
            SacConfig { hidden: vec![], ..SacConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn zero_gamma_target_is_reward() {
        let mut ag = agent(2);
        ag.cfg.gamma = 0.0;
        let b = batch(2, 5);
        let y = ag.q_target(&b, &Tensor::zeros(&[5, 1])).unwrap();
        assert_eq!(y, b.r);
    }

    #[test]
    fn done_rows_ignore_next_state() {
        let ag = agent(2);
        let mut b = batch(2, 3);
        let z = Tensor::zeros(&[3, 1]);
        let before = ag.q_target(&b, &z).unwrap();
        assert_eq!(before[2], b.r[2]);
        b.s_next.data_mut().iter_mut().for_each(|v| *v += 3.0);
        b.c_next.as_mut().unwrap().data_mut().iter_mut().for_each(|v| *v -= 1.0);
        let after = ag.q_target(&b, &z).unwrap();
        assert_eq!(before[2], after[2]);
        assert_ne!(before[0], after[0]);
    }

    #[test]
    fn critic_loss_arithmetic() {
        let mut ag = agent(0);
        for (_, t) in ag.critics.params.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let b = batch(0, 3);
        let mut tape = Tape::new();
        let n = BatchNodes::constants(&mut tape, &b);
        let cr = ag.critics.params.bind(&mut tape, true);
        let (j1, j2) = ag.critic_loss(&mut tape, &cr, n.s, n.a, n.c, &[2.0; 3]).unwrap();
        assert_eq!(tape.value(j1).item(), 2.0);
        assert_eq!(tape.value(j2).item(), 2.0);
        assert!(ag.critic_loss(&mut tape, &cr, n.s, n.a, n.c, &[2.0; 2]).is_err());
    }

    #[test]
    fn policy_loss_leaves_critics_untouched() {
        let ag = agent(2);
        let b = batch(2, 4);
        let mut tape = Tape::new();
        let n = BatchNodes::constants(&mut tape, &b);
        let pol = ag.policy_params.bind(&mut tape, true);
        let cr = ag.critics.params.bind(&mut tape, false);
        let (j, _) = ag
            .policy_loss(&mut tape, &pol, &cr, n.s, n.c, &Tensor::zeros(&[4, 1]))
            .unwrap();
        let g = tape.backward(j).unwrap();
        assert!(cr.grads(&g).values().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(pol.grads(&g).values().any(|t| t.data().iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn mean_q_is_bounded_by_each_critic() {
        let mut ag = agent(1);
        let b = batch(1, 6);
        let mut tape = Tape::new();
        let n = BatchNodes::constants(&mut tape, &b);
        let cr = ag.critics.params.bind(&mut tape, false);
        let x = concat_inputs(&mut tape, &[Some(n.s), Some(n.a), n.c]).unwrap();
        let (q1, q2) = ag.critics.q_values(&mut tape, &cr, x).unwrap();
        let (m1, m2) = (tape.value(q1).mean(), tape.value(q2).mean());
        let z = Tensor::zeros(&[6, 1]);
        let m = ag.update_on_batch(&b, &z, &z).unwrap();
        assert!(m.mean_q <= m1 + 1e-15 && m.mean_q <= m2 + 1e-15);
    }

    #[test]
    fn update_moves_every_network_and_targets_slowly() {
        let mut ag = agent(2);
        let before = ag.clone();
        let z = Tensor::zeros(&[4, 1]);
        ag.update_on_batch(&batch(2, 4), &z, &z).unwrap();
        assert_ne!(ag.policy_params, before.policy_params);
        assert_ne!(ag.critics.params, before.critics.params);
        for ((_, t), ((_, c), (_, t0))) in ag
            .critics
            .target
            .iter()
            .zip(ag.critics.params.iter().zip(before.critics.target.iter()))
        {
            for ((&tv, &cv), &t0v) in t.data().iter().zip(c.data()).zip(t0.data()) {
                let want = 0.005 * cv + 0.995 * t0v;
                assert!((tv - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let ag = agent(3);
        let mut other = SacAgent::new(small_cfg(), 2, 1, 3, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        other.load_checkpoint(&ag.checkpoint()).unwrap();
        assert_eq!(other.checkpoint(), ag.checkpoint());
        let mismatched = agent(1);
        assert!(other.load_checkpoint(&mismatched.checkpoint()).is_err());
    }

    #[test]
    fn act_stays_in_box_and_checks_dims() {
        let ag = agent(2);
        let a = ag.act(&[0.1, 0.2], &[0.0, 1.0], Some(&[3.0])).unwrap();
        assert!(a[0].abs() < 1.0);
        assert!(ag.act(&[0.1], &[0.0, 1.0], None).is_err());
    }
}
