//! Recurrent context encoder and its contrastive training objective.
//!
//! Each step consumes the triple `(s, a, r)` through
//! `Linear -> ReLU -> LSTM -> Linear` and emits a context vector. The encoder
//! is trained by scoring the next transition against the context with a
//! log-bilinear model `exp(e^T W c)` and minimising the softmax
//! cross-entropy of the true next transition against the other segments in
//! the batch (InfoNCE).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::nets::{Linear, LstmCell, LOG_STD_MAX, LOG_STD_MIN};
use crate::params::{Bound, ParamSet};
use crate::replay::{SegmentBatch, Transition};
use crate::tensor::Tensor;

pub const DEFAULT_CONTEXT_DIM: usize = 5;
pub const DEFAULT_SEGMENT_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    #[default]
    Deterministic,
    Probabilistic,
}

/// What the scorer compares the context against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetEncoding {
    /// `(s, a, r)` of the next step.
    #[default]
    Transition,
    /// Only the next state.
    StateOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub context_dim: usize,
    pub embed_width: usize,
    pub lstm_hidden: usize,
    pub mode: ContextMode,
    pub target: TargetEncoding,
}

impl EncoderConfig {
    pub fn new(state_dim: usize, action_dim: usize, context_dim: usize) -> Self {
        EncoderConfig {
            state_dim,
            action_dim,
            context_dim,
            embed_width: 128,
            lstm_hidden: 128,
            mode: ContextMode::Deterministic,
            target: TargetEncoding::Transition,
        }
    }

    pub fn triple_width(&self) -> usize {
        self.state_dim + self.action_dim + 1
    }

    pub fn target_width(&self) -> usize {
        match self.target {
            TargetEncoding::Transition => self.triple_width(),
            TargetEncoding::StateOnly => self.state_dim,
        }
    }
}

/// Encoder output for one step: the value fed to the policy plus, in
/// probabilistic mode, the distribution it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVariable {
    pub value: Vec<f64>,
    pub mean: Vec<f64>,
    pub log_std: Option<Vec<f64>>,
}

impl ContextVariable {
    pub fn zeros(d: usize) -> Self {
        ContextVariable {
            value: vec![0.0; d],
            mean: vec![0.0; d],
            log_std: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextEncoder {
    cfg: EncoderConfig,
    embed: Linear,
    lstm: LstmCell,
    mean: Linear,
    log_std: Option<Linear>,
}

/// Per-step context nodes for a batch.
#[derive(Debug, Clone, Copy)]
pub struct ContextNodes {
    pub mean: NodeId,
    pub log_std: Option<NodeId>,
}

/// Recurrent state of a batch of sequences on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Hidden {
    pub h: NodeId,
    pub c: NodeId,
}

impl ContextEncoder {
    pub const SCORER: &'static str = "encoder.scorer";

    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        if cfg.context_dim == 0 {
            return Err(Error::contract("context dimension must be at least 1"));
        }
        let embed = Linear::new("encoder.embed", cfg.triple_width(), cfg.embed_width);
        let lstm = LstmCell::new("encoder.lstm", cfg.embed_width, cfg.lstm_hidden);
        let mean = Linear::new("encoder.mean", cfg.lstm_hidden, cfg.context_dim);
        let log_std = (cfg.mode == ContextMode::Probabilistic)
            .then(|| Linear::new("encoder.log_std", cfg.lstm_hidden, cfg.context_dim));
        Ok(ContextEncoder {
            cfg,
            embed,
            lstm,
            mean,
            log_std,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn context_dim(&self) -> usize {
        self.cfg.context_dim
    }

    pub fn mode(&self) -> ContextMode {
        self.cfg.mode
    }

    pub fn embed(&self) -> &Linear {
        &self.embed
    }

    pub fn lstm(&self) -> &LstmCell {
        &self.lstm
    }

    pub fn mean_head(&self) -> &Linear {
        &self.mean
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let mut p = ParamSet::new();
        self.embed.init(&mut p, rng);
        self.lstm.init(&mut p, rng);
        self.mean.init(&mut p, rng);
        if let Some(ls) = &self.log_std {
            ls.init(&mut p, rng);
        }
        let bound = 1.0 / (self.cfg.target_width() as f64).sqrt();
        p.init_uniform(Self::SCORER, &[self.cfg.target_width(), self.cfg.context_dim], bound, rng);
        p
    }

    pub fn zero_hidden(&self, tape: &mut Tape, rows: usize) -> Hidden {
        let z = Tensor::zeros(&[rows, self.cfg.lstm_hidden]);
        Hidden {
            h: tape.constant(z.clone()),
            c: tape.constant(z),
        }
    }

    /// Consumes one `(s, a, r)` row per sequence and returns the new hidden
    /// state with its context heads.
    pub fn step(&self, tape: &mut Tape, p: &Bound, triple: NodeId, hidden: Hidden) -> Result<(Hidden, ContextNodes)> {
        let x = self.embed.forward(tape, p, triple)?;
        let x = tape.relu(x)?;
        let (h, c) = self.lstm.step(tape, p, x, hidden.h, hidden.c)?;
        let mean = self.mean.forward(tape, p, h)?;
        let log_std = match &self.log_std {
            Some(head) => {
                let raw = head.forward(tape, p, h)?;
                Some(tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX)?)
            }
            None => None,
        };
        Ok((Hidden { h, c }, ContextNodes { mean, log_std }))
    }

    /// Context value node: the mean, or `mean + exp(log_std) * noise` in
    /// probabilistic mode.
    pub fn context_value(&self, tape: &mut Tape, nodes: ContextNodes, noise: Option<&Tensor>) -> Result<NodeId> {
        match (nodes.log_std, noise) {
            (Some(ls), Some(eps)) => {
                let std = tape.exp(ls)?;
                let eps = tape.constant(eps.clone());
                let spread = tape.mul(std, eps)?;
                tape.add(nodes.mean, spread)
            }
            _ => Ok(nodes.mean),
        }
    }

    /// Encodes a whole segment from a fresh hidden state; returns one
    /// context per transition (`c_t` after consuming the first `t` triples).
    pub fn encode_segment(&self, params: &ParamSet, segment: &[Transition]) -> Result<Vec<ContextVariable>> {
        if segment.is_empty() {
            return Err(Error::contract("cannot encode an empty segment"));
        }
        let mut stream = EncoderStream::new(self);
        segment
            .iter()
            .map(|t| stream.step(self, params, &t.s, &t.a, t.r, None))
            .collect()
    }

    fn target_row(&self, t: &Transition) -> Vec<f64> {
        match self.cfg.target {
            TargetEncoding::Transition => t.triple(),
            TargetEncoding::StateOnly => t.s.clone(),
        }
    }

    /// Unrolls the encoder over the batch and builds the InfoNCE loss.
    ///
    /// The context after `l - 1` steps is scored against the `l`-th
    /// transition of every segment; the matching segment is the positive.
    pub fn infonce<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: &SegmentBatch,
        rng: &mut R,
    ) -> Result<InfoNce> {
        let (n, l) = (batch.n(), batch.len());
        if n < 2 {
            return Err(Error::DegenerateBatch(format!("InfoNCE needs at least 2 segments, got {n}")));
        }
        if l < 2 {
            return Err(Error::DegenerateBatch(format!("segments must span at least 2 steps, got {l}")));
        }
        if batch.state_dim() != self.cfg.state_dim || batch.action_dim() != self.cfg.action_dim {
            return Err(Error::dim(
                "infonce",
                &[self.cfg.state_dim, self.cfg.action_dim],
                &[batch.state_dim(), batch.action_dim()],
            ));
        }

        let mut hidden = self.zero_hidden(tape, n);
        let mut last = None;
        for t in 0..l - 1 {
            let x = tape.constant(batch.step_rows(t, Transition::triple)?);
            let (h, nodes) = self.step(tape, p, x, hidden)?;
            hidden = h;
            last = Some(nodes);
        }
        let heads = last.expect("l >= 2");
        let noise = self.draw_noise(n, rng);
        let context = self.context_value(tape, heads, noise.as_ref())?;

        let targets = tape.constant(batch.step_rows(l - 1, |t| self.target_row(t))?);
        let loss = infonce_from_nodes(tape, targets, p.get(Self::SCORER)?, context)?;
        Ok(InfoNce {
            loss,
            context,
            heads,
            hidden,
        })
    }

    pub(crate) fn draw_noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Option<Tensor> {
        (self.cfg.mode == ContextMode::Probabilistic).then(|| {
            let d = self.cfg.context_dim;
            let data = (0..rows * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            Tensor::from_parts(vec![rows, d], data)
        })
    }

    /// Composite objective `L_CP + beta1 * L_critic + beta2 * KL`.
    ///
    /// `critic` builds the critic loss from the contexts before and after the
    /// last transition of each segment; gradients flow back into the encoder
    /// through those contexts.
    pub fn objective<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: &SegmentBatch,
        weights: ObjectiveWeights,
        critic: Option<&CriticTerm<'_>>,
        rng: &mut R,
    ) -> Result<Objective> {
        if weights.beta1 < 0.0 || weights.beta2 < 0.0 {
            return Err(Error::contract("objective weights must be non-negative"));
        }
        if weights.beta1 > 0.0 && critic.is_none() {
            return Err(Error::contract("beta1 > 0 requires a critic loss"));
        }
        let nce = self.infonce(tape, p, batch, rng)?;
        let mut total = nce.loss;

        let kl = match (self.cfg.mode, nce.heads.log_std) {
            (ContextMode::Probabilistic, Some(ls)) => {
                let kl = kl_from_nodes(tape, nce.heads.mean, ls)?;
                if weights.beta2 > 0.0 {
                    let scaled = tape.scale(kl, weights.beta2)?;
                    total = tape.add(total, scaled)?;
                }
                Some(kl)
            }
            _ => None,
        };

        let critic_loss = match critic {
            Some(build) if weights.beta1 > 0.0 => {
                let last = batch.len() - 1;
                let x = tape.constant(batch.step_rows(last, Transition::triple)?);
                let (_, next_heads) = self.step(tape, p, x, nce.hidden)?;
                let noise = self.draw_noise(batch.n(), rng);
                let next = self.context_value(tape, next_heads, noise.as_ref())?;
                let loss = build(tape, nce.context, next)?;
                let scaled = tape.scale(loss, weights.beta1)?;
                total = tape.add(total, scaled)?;
                Some(loss)
            }
            _ => None,
        };

        Ok(Objective {
            total,
            infonce: nce.loss,
            kl,
            critic: critic_loss,
        })
    }
}

/// Builds the critic regulariser from `(context, next_context)` nodes.
pub type CriticTerm<'a> = dyn Fn(&mut Tape, NodeId, NodeId) -> Result<NodeId> + 'a;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights { beta1: 0.0, beta2: 0.2 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InfoNce {
    pub loss: NodeId,
    /// Context value scored by the loss, `N x d`.
    pub context: NodeId,
    pub heads: ContextNodes,
    hidden: Hidden,
}

#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub total: NodeId,
    pub infonce: NodeId,
    pub kl: Option<NodeId>,
    pub critic: Option<NodeId>,
}

/// InfoNCE loss for targets `E (N x e)`, scorer `W (e x d)` and contexts
/// `C (N x d)`: `mean_i [logsumexp_j (e_j^T W c_i) - e_i^T W c_i]`.
pub fn infonce_from_nodes(tape: &mut Tape, targets: NodeId, scorer: NodeId, contexts: NodeId) -> Result<NodeId> {
    let n = tape.shape(contexts)[0];
    if tape.shape(targets)[0] != n {
        return Err(Error::dim("infonce", tape.shape(targets), tape.shape(contexts)));
    }
    let ew = tape.matmul(targets, scorer)?;
    let ew_t = tape.transpose(ew)?;
    let scores = tape.matmul(contexts, ew_t)?;
    let lse = tape.logsumexp(scores, 1)?;
    let eye = tape.constant(Tensor::identity(n));
    let diag = tape.mul(scores, eye)?;
    let positive = tape.sum_axis(diag, 1)?;
    let per_row = tape.sub(lse, positive)?;
    tape.mean(per_row)
}

/// Mean over rows of `KL(N(mu, diag sigma^2) || N(0, I))`.
pub fn kl_from_nodes(tape: &mut Tape, mean: NodeId, log_std: NodeId) -> Result<NodeId> {
    let two_ls = tape.scale(log_std, 2.0)?;
    let var = tape.exp(two_ls)?;
    let mu2 = tape.mul(mean, mean)?;
    let s = tape.add(var, mu2)?;
    let s = tape.sub(s, two_ls)?;
    let s = tape.add_scalar(s, -1.0)?;
    let per_row = tape.sum_axis(s, 1)?;
    let per_row = tape.scale(per_row, 0.5)?;
    tape.mean(per_row)
}

/// Closed-form KL of probabilistic contexts to the standard normal,
/// averaged over `contexts`.
pub fn kl_regularizer(contexts: &[ContextVariable]) -> Result<f64> {
    if contexts.is_empty() {
        return Err(Error::contract("no contexts"));
    }
    let mut total = 0.0;
    for c in contexts {
        let ls = c
            .log_std
            .as_ref()
            .ok_or_else(|| Error::contract("KL regulariser needs probabilistic contexts"))?;
        total += c
            .mean
            .iter()
            .zip(ls)
            .map(|(m, s)| 0.5 * ((2.0 * s).exp() + m * m - 1.0 - 2.0 * s))
            .sum::<f64>();
    }
    Ok(total / contexts.len() as f64)
}

/// Mutual-information lower bound `log n - loss`.
pub fn mi_lower_bound(loss: f64, n: usize) -> f64 {
    (n as f64).ln() - loss
}

/// Streaming encoder state for a single episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStream {
    h: Tensor,
    c: Tensor,
    steps: usize,
    context_dim: usize,
}

impl EncoderStream {
    pub fn new(encoder: &ContextEncoder) -> Self {
        let hd = encoder.cfg.lstm_hidden;
        EncoderStream {
            h: Tensor::zeros(&[1, hd]),
            c: Tensor::zeros(&[1, hd]),
            steps: 0,
            context_dim: encoder.cfg.context_dim,
        }
    }

    /// Back to the empty-history state at an episode start.
    pub fn reset(&mut self) {
        self.h.data_mut().iter_mut().for_each(|v| *v = 0.0);
        self.c.data_mut().iter_mut().for_each(|v| *v = 0.0);
        self.steps = 0;
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Context held before any triple has been observed.
    pub fn initial_context(&self) -> ContextVariable {
        ContextVariable::zeros(self.context_dim)
    }

    /// Consumes `(s, a, r)` and returns the updated context. In
    /// probabilistic mode `noise` selects a reparameterised sample; without
    /// it the value is the mean.
    pub fn step(
        &mut self,
        encoder: &ContextEncoder,
        params: &ParamSet,
        s: &[f64],
        a: &[f64],
        r: f64,
        noise: Option<&[f64]>,
    ) -> Result<ContextVariable> {
        let cfg = &encoder.cfg;
        if s.len() != cfg.state_dim || a.len() != cfg.action_dim {
            return Err(Error::dim(
                "encode_step",
                &[cfg.state_dim, cfg.action_dim],
                &[s.len(), a.len()],
            ));
        }
        let mut triple = Vec::with_capacity(cfg.triple_width());
        triple.extend_from_slice(s);
        triple.extend_from_slice(a);
        triple.push(r);

        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let x = tape.constant(Tensor::row(&triple)?);
        let hidden = Hidden {
            h: tape.constant(self.h.clone()),
            c: tape.constant(self.c.clone()),
        };
        let (next, heads) = encoder.step(&mut tape, &p, x, hidden)?;
        let noise = match noise {
            Some(z) => Some(Tensor::row(z)?),
            None => None,
        };
        let value = encoder.context_value(&mut tape, heads, noise.as_ref())?;

        self.h = tape.value(next.h).clone();
        self.c = tape.value(next.c).clone();
        self.steps += 1;
        Ok(ContextVariable {
            value: tape.value(value).data().to_vec(),
            mean: tape.value(heads.mean).data().to_vec(),
            log_std: heads.log_std.map(|ls| tape.value(ls).data().to_vec()),
        })
    }
}
