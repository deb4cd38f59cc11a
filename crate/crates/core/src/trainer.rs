//! The three-phase training loop.
//!
//! Every environment step streams the encoder to get the current context,
//! acts, and writes both buffers. Every `rl_every` steps after warmup the
//! agent takes a block of SAC updates; every `encoder_every` steps the
//! encoder takes a block of contrastive updates. Evaluation runs on a
//! separate environment copy with its own random stream.
//!
//! Each consumer of randomness owns a ChaCha stream derived from the run
//! seed, so disabling the encoder leaves every other draw unchanged.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{NodeId, Tape};
use crate::codec::encode_checkpoint;
use crate::config::RunConfig;
use crate::encoder::{ContextEncoder, ContextVariable, EncoderStream, ObjectiveWeights};
use crate::envs::{EnvInstance, Environment};
use crate::error::{Error, Result};
use crate::metrics::{write_atomic, RunMetrics, Summary};
use crate::optim::{Adam, AdamState};
use crate::params::ParamSet;
use crate::replay::{ContextBuffer, RlBatch, RlBuffer, RlTuple, SegmentBatch, Transition};
use crate::sac::{reference::PlainSac, standard_normal, SacAgent, UpdateMetrics};
use crate::stats::{mean, std_pop, welch_t_test, Welch};
use crate::tensor::Tensor;

/// Stream ids for [`stream`].
pub mod streams {
    pub const NET_INIT: u64 = 0;
    pub const ENCODER_INIT: u64 = 1;
    pub const ENV: u64 = 2;
    pub const ACTION: u64 = 3;
    pub const CONTEXT_NOISE: u64 = 4;
    pub const RL_SAMPLE: u64 = 5;
    pub const ENCODER_SAMPLE: u64 = 6;
    pub const EVAL: u64 = 7;
}

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    Rollout,
    RlUpdate,
    EncoderUpdate,
    Eval,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub env_steps: u64,
    pub env_resets: u64,
    pub stream_resets: u64,
    pub episodes: u64,
    pub rl_updates: u64,
    pub encoder_updates: u64,
    pub encoder_skips: u64,
    /// Environment steps taken while an update phase was active.
    pub phase_violations: u64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep every SAC update's losses in [`Trainer::update_log`].
    pub record_updates: bool,
    /// Write `checkpoint_<step>.bin` here after every evaluation.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

/// Encoder model, weights and optimiser state.
#[derive(Debug, Clone)]
pub struct EncoderState {
    pub model: ContextEncoder,
    pub params: ParamSet,
    opt: AdamState,
}

#[derive(Debug, Clone, Copy, Default)]
struct EncoderLog {
    l_cp: f64,
    kl: Option<f64>,
}

struct Rngs {
    env: ChaCha8Rng,
    action: ChaCha8Rng,
    context_noise: ChaCha8Rng,
    rl_sample: ChaCha8Rng,
    enc_sample: ChaCha8Rng,
    eval: ChaCha8Rng,
}

pub struct Trainer<E: Environment + Clone = EnvInstance> {
    cfg: RunConfig,
    opts: RunOptions,
    env: E,
    eval_env: E,
    agent: SacAgent,
    encoder: Option<EncoderState>,
    stream: Option<EncoderStream>,
    cbuf: ContextBuffer,
    rl: RlBuffer,
    rngs: Rngs,
    step: u64,
    obs: Vec<f64>,
    ctx: ContextVariable,
    episode_open: bool,
    ep_return: f64,
    ep_len: usize,
    pending_returns: Vec<f64>,
    episode_returns: Vec<f64>,
    metrics: RunMetrics,
    stats: RunStats,
    update_log: Vec<UpdateMetrics>,
    phase: Phase,
    started: Instant,
}

fn at_step(step: u64, phase: &str, e: Error) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{m} (step {step}, {phase})")),
        other => other,
    }
}

impl Trainer<EnvInstance> {
    pub fn from_config(cfg: RunConfig, opts: RunOptions) -> Result<Self> {
        let env = cfg.env.build()?;
        Trainer::new(cfg, env, opts)
    }
}

impl<E: Environment + Clone> Trainer<E> {
    pub fn new(cfg: RunConfig, env: E, opts: RunOptions) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.train.seed;
        let spec = env.spec().clone();
        let (sd, ad, cd) = (spec.obs_dim, spec.action_dim, cfg.encoder.context_dim);
        let agent = SacAgent::new(cfg.sac.clone(), sd, ad, cd, &mut stream(seed, streams::NET_INIT))?;
        let encoder = if cfg.encoder.enabled() {
            let model = ContextEncoder::new(cfg.encoder.encoder_config(sd, ad))?;
            let params = model.init(&mut stream(seed, streams::ENCODER_INIT));
            Some(EncoderState {
                model,
                params,
                opt: AdamState::default(),
            })
        } else {
            None
        };
        let stream_state = encoder.as_ref().map(|e| EncoderStream::new(&e.model));
        let cap = cfg.train.replay_capacity;
        Ok(Trainer {
            opts,
            eval_env: env.clone(),
            env,
            agent,
            encoder,
            stream: stream_state,
            cbuf: ContextBuffer::new(sd, ad, cap),
            rl: RlBuffer::new(cd, sd, ad, cap),
            rngs: Rngs {
                env: stream(seed, streams::ENV),
                action: stream(seed, streams::ACTION),
                context_noise: stream(seed, streams::CONTEXT_NOISE),
                rl_sample: stream(seed, streams::RL_SAMPLE),
                enc_sample: stream(seed, streams::ENCODER_SAMPLE),
                eval: stream(seed, streams::EVAL),
            },
            step: 0,
            obs: Vec::new(),
            ctx: ContextVariable::zeros(cd),
            episode_open: false,
            ep_return: 0.0,
            ep_len: 0,
            pending_returns: Vec::new(),
            episode_returns: Vec::new(),
            metrics: RunMetrics::default(),
            stats: RunStats::default(),
            update_log: Vec::new(),
            phase: Phase::Rollout,
            started: Instant::now(),
            cfg,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn agent(&self) -> &SacAgent {
        &self.agent
    }

    pub fn encoder(&self) -> Option<&EncoderState> {
        self.encoder.as_ref()
    }

    pub fn context_buffer(&self) -> &ContextBuffer {
        &self.cbuf
    }

    pub fn rl_buffer(&self) -> &RlBuffer {
        &self.rl
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    pub fn update_log(&self) -> &[UpdateMetrics] {
        &self.update_log
    }

    pub fn episode_returns(&self) -> &[f64] {
        &self.episode_returns
    }

    /// Context the agent currently holds.
    pub fn current_context(&self) -> &ContextVariable {
        &self.ctx
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.train.total_steps
    }

    /// Agent, critic targets and encoder weights in one parameter set.
    pub fn checkpoint(&self) -> ParamSet {
        let mut out = self.agent.checkpoint();
        if let Some(enc) = &self.encoder {
            out.extend(enc.params.prefixed("encoder"));
        }
        out
    }

    /// Runs to `total_steps`.
    pub fn run(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step_once()?;
        }
        Ok(())
    }

    /// One environment step followed by whichever phases it triggers.
    pub fn step_once(&mut self) -> Result<()> {
        if self.is_done() {
            return Err(Error::contract("training already finished"));
        }
        self.rollout_step()?;
        let t = self.step;
        let tc = &self.cfg.train;
        if t > tc.warmup && t % tc.rl_every == 0 {
            self.rl_block()?;
        }
        if let Some(nc) = self.cfg.train.encoder_every {
            if self.encoder.is_some() && t > self.cfg.train.warmup && t % nc == 0 {
                self.encoder_block()?;
            }
        }
        if t % self.cfg.train.eval_every == 0 {
            self.eval_block()?;
        }
        Ok(())
    }

    fn rollout_step(&mut self) -> Result<()> {
        if self.phase != Phase::Rollout {
            self.stats.phase_violations += 1;
        }
        if !self.episode_open {
            self.obs = self.env.reset(&mut self.rngs.env);
            self.stats.env_resets += 1;
            if let Some(s) = &mut self.stream {
                s.reset();
                self.stats.stream_resets += 1;
            }
            self.ctx = ContextVariable::zeros(self.cfg.encoder.context_dim);
            self.episode_open = true;
            self.ep_return = 0.0;
            self.ep_len = 0;
        }
        self.step += 1;
        let t = self.step;
        let spec = self.env.spec().clone();
        let action = if t <= self.cfg.train.warmup {
            (0..spec.action_dim)
                .map(|_| self.rngs.action.random_range(-1.0..=1.0))
                .collect()
        } else {
            let noise = standard_normal(1, spec.action_dim, &mut self.rngs.action);
            self.agent
                .act(&self.obs, &self.ctx.value, Some(noise.data()))
                .map_err(|e| at_step(t, "rollout", e))?
        };
        let res = self.env.step(&spec.rescale(&action))?;
        self.stats.env_steps += 1;
        self.ep_return += res.reward;
        self.ep_len += 1;

        let next_ctx = match (&self.encoder, &mut self.stream) {
            (Some(enc), Some(stream)) => {
                let noise = (enc.model.mode() == crate::encoder::ContextMode::Probabilistic).then(|| {
                    standard_normal(1, enc.model.context_dim(), &mut self.rngs.context_noise).into_data()
                });
                stream
                    .step(&enc.model, &enc.params, &self.obs, &action, res.reward, noise.as_deref())
                    .map_err(|e| at_step(t, "rollout", e))?
            }
            _ => ContextVariable::zeros(0),
        };

        // Hitting the horizon is a time limit, not a terminal state.
        let timeout = self.ep_len >= spec.max_steps && res.info.get("success") != Some(&1.0);
        let terminal = res.done && !timeout;
        self.cbuf.push(&Transition {
            s: self.obs.clone(),
            a: action.clone(),
            r: res.reward,
            s_next: res.obs.clone(),
            done: res.done,
        })?;
        self.rl.push(&RlTuple {
            c: self.ctx.value.clone(),
            s: std::mem::take(&mut self.obs),
            a: action,
            r: res.reward,
            s_next: res.obs.clone(),
            c_next: next_ctx.value.clone(),
            done: terminal,
        })?;
        self.obs = res.obs;
        self.ctx = next_ctx;
        if res.done {
            self.episode_open = false;
            self.stats.episodes += 1;
            self.pending_returns.push(self.ep_return);
            self.episode_returns.push(self.ep_return);
        }
        Ok(())
    }

    fn flush_returns(&mut self, row_step: u64) -> Result<()> {
        if !self.pending_returns.is_empty() {
            let m = mean(&self.pending_returns);
            self.pending_returns.clear();
            self.metrics.row_mut(row_step)?.train_return = Some(m);
        }
        Ok(())
    }

    fn rl_block(&mut self) -> Result<()> {
        self.phase = Phase::RlUpdate;
        let n = self.cfg.train.updates_per_trigger();
        let mut acc = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let m = match self.agent.update(&self.rl, &mut self.rngs.rl_sample) {
                Ok(m) => m,
                Err(Error::InsufficientData(_)) => break,
                Err(e) => {
                    self.phase = Phase::Rollout;
                    return Err(at_step(self.step, "rl update", e));
                }
            };
            for v in [m.j_q1, m.j_q2, m.j_pi] {
                if !v.is_finite() {
                    self.phase = Phase::Rollout;
                    return Err(Error::NonFinite(format!("sac loss (step {}, rl update)", self.step)));
                }
            }
            self.stats.rl_updates += 1;
            if self.opts.record_updates {
                self.update_log.push(m);
            }
            acc.push(m);
        }
        self.phase = Phase::Rollout;
        if acc.is_empty() {
            return Ok(());
        }
        let avg = |f: fn(&UpdateMetrics) -> f64| mean(&acc.iter().map(f).collect::<Vec<_>>());
        let skips = self.stats.encoder_skips;
        let row = self.metrics.row_mut(self.step)?;
        row.j_q1 = Some(avg(|m| m.j_q1));
        row.j_q2 = Some(avg(|m| m.j_q2));
        row.j_pi = Some(avg(|m| m.j_pi));
        row.mean_q = Some(avg(|m| m.mean_q));
        row.entropy = Some(avg(|m| m.entropy));
        row.encoder_skips = skips;
        self.flush_returns(self.step)
    }

    fn encoder_block(&mut self) -> Result<()> {
        self.phase = Phase::EncoderUpdate;
        let out = self.encoder_block_inner();
        self.phase = Phase::Rollout;
        let logs = out.map_err(|e| at_step(self.step, "encoder update", e))?;
        let row = self.metrics.row_mut(self.step)?;
        if let Some(logs) = logs {
            let l_cp = mean(&logs.iter().map(|l| l.l_cp).collect::<Vec<_>>());
            row.l_cp = Some(l_cp);
            row.mi_lower_bound = Some(crate::encoder::mi_lower_bound(l_cp, self.cfg.encoder.batch));
            let kls: Vec<f64> = logs.iter().filter_map(|l| l.kl).collect();
            if !kls.is_empty() {
                row.kl = Some(mean(&kls));
            }
        }
        row.encoder_skips = self.stats.encoder_skips;
        Ok(())
    }

    fn encoder_block_inner(&mut self) -> Result<Option<Vec<EncoderLog>>> {
        let ec = self.cfg.encoder.clone();
        let enc = self.encoder.as_mut().expect("encoder enabled");
        let weights = ObjectiveWeights {
            beta1: ec.beta1,
            beta2: ec.beta2,
        };
        let mut logs = Vec::new();
        for _ in 0..self.cfg.train.encoder_updates {
            let batch = match self.cbuf.sample_segments(ec.batch, ec.segment_len, &mut self.rngs.enc_sample) {
                Ok(b) => b,
                Err(Error::InsufficientData(_)) => {
                    self.stats.encoder_skips += 1;
                    return Ok(None);
                }
                Err(e) => return Err(e),
            };
            logs.push(encoder_update(enc, &self.agent, &batch, weights, ec.lr, &mut self.rngs.enc_sample)?);
            self.stats.encoder_updates += 1;
        }
        Ok(Some(logs))
    }

    fn eval_block(&mut self) -> Result<()> {
        self.phase = Phase::Eval;
        let enc = self.encoder.as_ref().map(|e| (&e.model, &e.params));
        let res = evaluate(
            &self.agent,
            enc,
            &mut self.eval_env,
            self.cfg.train.eval_episodes,
            &mut self.rngs.eval,
        );
        self.phase = Phase::Rollout;
        let res = res.map_err(|e| at_step(self.step, "eval", e))?;
        let skips = self.stats.encoder_skips;
        let row = self.metrics.row_mut(self.step)?;
        row.eval_mean = Some(res.mean);
        row.eval_std = Some(res.std);
        row.encoder_skips = skips;
        self.flush_returns(self.step)?;
        if let Some(dir) = &self.opts.checkpoint_dir {
            let path = dir.join(format!("checkpoint_{}.bin", self.step));
            write_atomic(&path, &encode_checkpoint(&self.checkpoint()))?;
        }
        Ok(())
    }

    pub fn summary(&self) -> Summary {
        let fin = self.metrics.final_eval();
        Summary {
            config_hash: self.cfg.hash_hex(),
            env: self.env.spec().name.clone(),
            seed: self.cfg.train.seed,
            steps: self.step,
            final_mean: fin.map(|f| f.0),
            final_std: fin.map(|f| f.1),
            rl_updates: self.stats.rl_updates,
            encoder_updates: self.stats.encoder_updates,
            encoder_skips: self.stats.encoder_skips,
            episodes: self.stats.episodes,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
        }
    }
}

/// One Adam step on the encoder objective.
fn encoder_update(
    enc: &mut EncoderState,
    agent: &SacAgent,
    batch: &SegmentBatch,
    weights: ObjectiveWeights,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<EncoderLog> {
    let mut tape = Tape::new();
    let p = enc.params.bind(&mut tape, true);
    let noise = standard_normal(batch.n(), agent.action_dim(), rng);
    let critic = |tape: &mut Tape, c: NodeId, c_next: NodeId| critic_term(agent, batch, &noise, tape, c, c_next);
    let obj = enc.model.objective(
        &mut tape,
        &p,
        batch,
        weights,
        (weights.beta1 > 0.0).then_some(&critic as &crate::encoder::CriticTerm<'_>),
        rng,
    )?;
    let grads = p.grads(&tape.backward(obj.total)?);
    Adam::with_lr(lr).step(&mut enc.params, &grads, &mut enc.opt)?;
    Ok(EncoderLog {
        l_cp: tape.value(obj.infonce).item(),
        kl: obj.kl.map(|k| tape.value(k).item()),
    })
}

/// Last transition of every segment as an RL batch with the given contexts.
fn segment_tails(batch: &SegmentBatch, c: &Tensor, c_next: &Tensor) -> Result<RlBatch> {
    let tuples: Vec<RlTuple> = batch
        .segments()
        .enumerate()
        .map(|(i, seg)| {
            let t = seg.last().expect("non-empty segment");
            RlTuple {
                c: c.row_slice(i).to_vec(),
                s: t.s.clone(),
                a: t.a.clone(),
                r: t.r,
                s_next: t.s_next.clone(),
                c_next: c_next.row_slice(i).to_vec(),
                done: t.done,
            }
        })
        .collect();
    RlBatch::from_tuples(&tuples)
}

/// Bootstrap targets for the critic regulariser from the contexts after each
/// segment's last transition.
pub fn critic_targets(agent: &SacAgent, batch: &SegmentBatch, c_next: &Tensor, noise: &Tensor) -> Result<Vec<f64>> {
    agent.q_target(&segment_tails(batch, c_next, c_next)?, noise)
}

/// `J_Q1 + J_Q2` on the last transition of every segment against fixed
/// targets, with `c` feeding the critics. Critic weights are constants.
pub fn critic_fit(agent: &SacAgent, batch: &SegmentBatch, tape: &mut Tape, c: NodeId, targets: &[f64]) -> Result<NodeId> {
    let rb = segment_tails(batch, tape.value(c), tape.value(c))?;
    let s = tape.constant(rb.s.clone());
    let a = tape.constant(rb.a.clone());
    let critics = agent.critics.params.bind(tape, false);
    let (j1, j2) = agent.critic_loss(tape, &critics, s, a, Some(c), targets)?;
    tape.add(j1, j2)
}

/// Encoder critic regulariser. Targets come from the value of `c_next` and
/// carry no gradient.
pub fn critic_term(
    agent: &SacAgent,
    batch: &SegmentBatch,
    noise: &Tensor,
    tape: &mut Tape,
    c: NodeId,
    c_next: NodeId,
) -> Result<NodeId> {
    let targets = critic_targets(agent, batch, tape.value(c_next), noise)?;
    critic_fit(agent, batch, tape, c, &targets)
}

/// Deterministic-action evaluation with online context streaming (the
/// context mean in probabilistic mode). Touches no buffer or parameter.
pub fn evaluate<E: Environment + ?Sized>(
    agent: &SacAgent,
    encoder: Option<(&ContextEncoder, &ParamSet)>,
    env: &mut E,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::contract("evaluation needs at least one episode"));
    }
    let spec = env.spec().clone();
    let cd = agent.context_dim();
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(rng);
        let mut stream = encoder.map(|(m, _)| EncoderStream::new(m));
        let mut ctx = vec![0.0; cd];
        let mut ret = 0.0;
        loop {
            let a = agent.act(&obs, &ctx, None)?;
            let res = env.step(&spec.rescale(&a))?;
            ret += res.reward;
            if res.done {
                break;
            }
            if let (Some(s), Some((m, p))) = (&mut stream, encoder) {
                ctx = s.step(m, p, &obs, &a, res.reward, None)?.mean;
            }
            obs = res.obs;
        }
        returns.push(ret);
    }
    Ok(EvalResult {
        mean: mean(&returns),
        std: std_pop(&returns),
        returns,
    })
}

pub struct TrainOutput {
    pub metrics: RunMetrics,
    pub summary: Summary,
    pub stats: RunStats,
    pub checkpoint: ParamSet,
    pub update_log: Vec<UpdateMetrics>,
}

pub fn run_training(cfg: RunConfig, opts: RunOptions) -> Result<TrainOutput> {
    let mut t = Trainer::from_config(cfg, opts)?;
    t.run()?;
    Ok(TrainOutput {
        summary: t.summary(),
        checkpoint: t.checkpoint(),
        stats: t.stats.clone(),
        update_log: std::mem::take(&mut t.update_log),
        metrics: std::mem::take(&mut t.metrics),
    })
}

/// Rebuilds an agent (and encoder) from a checkpoint written by
/// [`Trainer::checkpoint`].
pub fn load_policy(cfg: &RunConfig, ckpt: &ParamSet) -> Result<(SacAgent, Option<(ContextEncoder, ParamSet)>)> {
    let env = cfg.env.build()?;
    let spec = env.spec();
    let mut rng = stream(0, streams::NET_INIT);
    let mut agent = SacAgent::new(
        cfg.sac.clone(),
        spec.obs_dim,
        spec.action_dim,
        cfg.encoder.context_dim,
        &mut rng,
    )?;
    agent.load_checkpoint(ckpt)?;
    let encoder = if cfg.encoder.enabled() {
        let model = ContextEncoder::new(cfg.encoder.encoder_config(spec.obs_dim, spec.action_dim))?;
        let params = ckpt.section("encoder");
        params.check_aligned(&model.init(&mut rng))?;
        Some((model, params))
    } else {
        None
    };
    Ok((agent, encoder))
}

/// Context-free SAC loop with the same random streams as [`Trainer`]. Its
/// per-update losses are the reference the context-augmented path must
/// reproduce when the context is disabled.
pub fn run_plain_sac<E: Environment>(cfg: &RunConfig, env: &mut E) -> Result<Vec<UpdateMetrics>> {
    cfg.validate()?;
    let seed = cfg.train.seed;
    let spec = env.spec().clone();
    let mut sac = PlainSac::new(cfg.sac.clone(), spec.obs_dim, spec.action_dim, &mut stream(seed, streams::NET_INIT))?;
    let mut env_rng = stream(seed, streams::ENV);
    let mut act_rng = stream(seed, streams::ACTION);
    let mut sample_rng = stream(seed, streams::RL_SAMPLE);
    let mut buf = RlBuffer::new(0, spec.obs_dim, spec.action_dim, cfg.train.replay_capacity);
    let mut log = Vec::new();
    let mut obs: Option<Vec<f64>> = None;
    let mut ep_len = 0;
    for t in 1..=cfg.train.total_steps {
        let s = match obs.take() {
            Some(s) => s,
            None => {
                ep_len = 0;
                env.reset(&mut env_rng)
            }
        };
        let a: Vec<f64> = if t <= cfg.train.warmup {
            (0..spec.action_dim).map(|_| act_rng.random_range(-1.0..=1.0)).collect()
        } else {
            let z = standard_normal(1, spec.action_dim, &mut act_rng);
            sac.act(&s, Some(z.data()))?
        };
        let res = env.step(&spec.rescale(&a))?;
        ep_len += 1;
        let timeout = ep_len >= spec.max_steps && res.info.get("success") != Some(&1.0);
        buf.push(&RlTuple {
            c: vec![],
            s,
            a,
            r: res.reward,
            s_next: res.obs.clone(),
            c_next: vec![],
            done: res.done && !timeout,
        })?;
        if !res.done {
            obs = Some(res.obs);
        }
        if t > cfg.train.warmup && t % cfg.train.rl_every == 0 {
            for _ in 0..cfg.train.updates_per_trigger() {
                log.push(sac.update(&buf, &mut sample_rng)?);
            }
        }
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: u64,
    pub mean: f64,
    pub std: f64,
    pub half_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmReport {
    pub label: String,
    pub seeds: Vec<u64>,
    pub final_returns: Vec<f64>,
    pub final_mean: f64,
    pub final_std: f64,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub env: String,
    pub arms: [ArmReport; 2],
    pub welch: Welch,
}

impl ArmReport {
    /// `step,eval_mean,eval_std` where `eval_std` is the spread across seeds.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("step,eval_mean,eval_std\n");
        for p in &self.curve {
            out.push_str(&format!("{},{},{}\n", p.step, p.mean, p.std));
        }
        out
    }
}

fn arm_report(label: &str, seeds: &[u64], runs: &[RunMetrics]) -> Result<ArmReport> {
    let steps: Vec<u64> = runs[0].evals().map(|e| e.0).collect();
    let mut curve = Vec::with_capacity(steps.len());
    for (k, &step) in steps.iter().enumerate() {
        let vals: Vec<f64> = runs
            .iter()
            .map(|r| {
                r.evals()
                    .nth(k)
                    .filter(|e| e.0 == step)
                    .map(|e| e.1)
                    .ok_or_else(|| Error::contract("runs disagree on evaluation steps"))
            })
            .collect::<Result<_>>()?;
        let std = std_pop(&vals);
        curve.push(CurvePoint {
            step,
            mean: mean(&vals),
            std,
            half_std: 0.5 * std,
        });
    }
    let final_returns: Vec<f64> = runs
        .iter()
        .map(|r| r.final_eval().map(|f| f.0).ok_or_else(|| Error::contract("run has no evaluation")))
        .collect::<Result<_>>()?;
    Ok(ArmReport {
        label: label.to_string(),
        seeds: seeds.to_vec(),
        final_mean: mean(&final_returns),
        final_std: std_pop(&final_returns),
        final_returns,
        curve,
    })
}

/// Runs both configs over `seeds` (overriding each config's seed) and
/// compares final evaluation returns. Cells run on up to `threads` threads;
/// every cell owns its state, so results do not depend on the split.
pub fn ab_experiment(
    a: (&str, &RunConfig),
    b: (&str, &RunConfig),
    seeds: &[u64],
    threads: usize,
) -> Result<(Comparison, [Vec<TrainOutput>; 2])> {
    if a.1.env != b.1.env {
        return Err(Error::Config(format!(
            "arms must share the environment: {:?} vs {:?}",
            a.1.env.name, b.1.env.name
        )));
    }
    if seeds.len() < 2 {
        return Err(Error::Config("compare needs at least 2 seeds".into()));
    }
    a.1.validate()?;
    b.1.validate()?;
    let cells: Vec<RunConfig> = [a.1, b.1]
        .iter()
        .flat_map(|c| {
            seeds.iter().map(move |&s| {
                let mut c = (*c).clone();
                c.train.seed = s;
                c
            })
        })
        .collect();
    let outputs = run_cells(cells, threads.max(1))?;
    let mut outputs = outputs.into_iter();
    let arm_a: Vec<TrainOutput> = outputs.by_ref().take(seeds.len()).collect();
    let arm_b: Vec<TrainOutput> = outputs.collect();
    let metrics = |o: &[TrainOutput]| o.iter().map(|x| x.metrics.clone()).collect::<Vec<_>>();
    let ra = arm_report(a.0, seeds, &metrics(&arm_a))?;
    let rb = arm_report(b.0, seeds, &metrics(&arm_b))?;
    let welch = welch_t_test(&ra.final_returns, &rb.final_returns)?;
    Ok((
        Comparison {
            env: a.1.env.name.clone(),
            arms: [ra, rb],
            welch,
        },
        [arm_a, arm_b],
    ))
}

fn run_cells(cells: Vec<RunConfig>, threads: usize) -> Result<Vec<TrainOutput>> {
    let n = cells.len();
    let mut slots: Vec<Option<Result<TrainOutput>>> = (0..n).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..threads.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let out = run_training(cells[i].clone(), RunOptions::default());
                results.lock().unwrap()[i] = Some(out);
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every cell ran")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.env.name = "GoalReach2D-3".into();
        c.sac.hidden = vec![8, 8];
        c.sac.batch = 8;
        c.encoder.context_dim = 2;
        c.encoder.embed_width = 6;
        c.encoder.lstm_hidden = 5;
        c.encoder.batch = 4;
        c.encoder.segment_len = 5;
        c.train.total_steps = 400;
        c.train.warmup = 200;
        c.train.rl_every = 20;
        c.train.rl_updates = Some(2);
        c.train.encoder_every = Some(100);
        c.train.encoder_updates = 2;
        c.train.eval_every = 200;
        c.train.eval_episodes = 2;
        c
    }

    #[test]
    fn streams_are_distinct_and_seeded() {
        let a: u64 = stream(1, 0).random();
        let b: u64 = stream(1, 1).random();
        let c: u64 = stream(2, 0).random();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, stream(1, 0).random::<u64>());
    }

    #[test]
    fn warmup_only_run_leaves_parameters_untouched() {
        let mut c = tiny();
        c.train.total_steps = 201;
        let init = Trainer::from_config(c.clone(), RunOptions::default()).unwrap();
        let mut t = Trainer::from_config(c, RunOptions::default()).unwrap();
        for _ in 0..200 {
            t.step_once().unwrap();
            assert_eq!(t.phase(), Phase::Rollout);
        }
        assert_eq!(t.checkpoint(), init.checkpoint());
        assert_eq!(t.stats().rl_updates, 0);
        assert_eq!(t.rl_buffer().len(), 200);
    }

    #[test]
    fn bookkeeping_invariants_hold() {
        let mut t = Trainer::from_config(tiny(), RunOptions::default()).unwrap();
        t.run().unwrap();
        let s = t.stats();
        assert_eq!(s.env_resets, s.stream_resets);
        assert_eq!(s.phase_violations, 0);
        assert_eq!(s.rl_updates, 10 * 2);
        assert!(s.encoder_updates + s.encoder_skips > 0);
        let steps: Vec<u64> = t.metrics().rows.iter().map(|r| r.step).collect();
        assert!(steps.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(t.metrics().evals().count(), 2);
    }

    #[test]
    fn ab_rejects_mismatched_envs_and_single_seed() {
        let a = tiny();
        let mut b = tiny();
        b.env.name = "StationaryReach2D".into();
        assert!(matches!(ab_experiment(("a", &a), ("b", &b), &[1, 2], 1), Err(Error::Config(_))));
        assert!(ab_experiment(("a", &a), ("b", &a), &[1], 1).is_err());
    }
}
