//! Policy-gradient training and the three-stage pipeline.
//!
//! Stage 1 trains the shared policy with REINFORCE against a learned value
//! baseline. Each epoch plays whole episodes until `steps_per_epoch` agent
//! transitions are collected, keeping one tape per episode alive so the loss
//! backpropagates through time and through every unperturbed message into
//! its sender's encoder. Stages 2 and 3 build the reliability dataset and fit
//! the estimator on it.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::agent::{act, broadcast, ActMode, AgentConfig, AgentCore, Aggregator};
use crate::attacks::{apply_channel, AttackSpec, ReceiverState};
use crate::config::KvConfig;
use crate::envs::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::ndnet::{checkpoint, Activation, Adam, Dense, Mlp, NodeId, ParamGrads, ParamStore, Tape};
use crate::reliability::{
    build_dataset, train_estimator, DatasetConfig, DatasetStats, Estimator, EstimatorConfig, EstimatorMetrics,
    EstimatorTrainConfig,
};
use crate::seeding::derive;

/// One agent's decision at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub episode: u64,
    pub t: usize,
    pub agent: usize,
    pub h: Vec<f64>,
    pub o: Vec<f64>,
    /// delivered incoming payloads
    pub m: Vec<Vec<f64>>,
    pub v: f64,
    pub a: usize,
    /// probability the policy gave `a`
    pub pi: f64,
    pub r: f64,
    pub o_next: Vec<f64>,
    /// last transition of this agent in the episode
    pub done: bool,
}

/// A complete episode; transitions ordered by `(t, agent)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub id: u64,
    pub seed: u64,
    pub length: usize,
    pub transitions: Vec<Transition>,
}

/// Recorded computation for one episode. `logp[k]` is `log π(a_k)` of
/// `transitions[k]`, `entropy[k]` the policy entropy at that decision.
pub struct EpisodeTape<'a> {
    tape: Tape<'a>,
    logp: Vec<NodeId>,
    entropy: Vec<NodeId>,
}

pub struct Rollout<'a> {
    pub episodes: Vec<EpisodeLog>,
    pub tapes: Vec<EpisodeTape<'a>>,
}

impl Rollout<'_> {
    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flat_map(|e| e.transitions.iter())
    }

    pub fn num_transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.transitions.len()).sum()
    }
}

/// `V_φ(h, o)`: one ReLU hidden layer over `[h, embed(o)]` with its own embedding.
#[derive(Clone, Debug)]
pub struct ValueNet {
    pub store: ParamStore,
    embed: Dense,
    net: Mlp,
}

impl ValueNet {
    pub fn new<R: rand::Rng + ?Sized>(obs_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let embed = Dense::new(&mut store, "value.embed", obs_dim, hidden, Activation::Linear, rng)?;
        let net = Mlp::new(&mut store, "value.net", &[2 * hidden, hidden, 1], Activation::Linear, rng)?;
        Ok(Self { store, embed, net })
    }

    pub fn from_store(store: ParamStore) -> Result<Self> {
        let embed = Dense::bind(&store, "value.embed", Activation::Linear)?;
        let net = Mlp::bind(&store, "value.net", 2, Activation::Linear)?;
        if net.input() != 2 * embed.output || net.output() != 1 {
            return Err(Error::Format("value checkpoint has inconsistent widths".into()));
        }
        Ok(Self { store, embed, net })
    }

    fn node(&self, tape: &mut Tape, h: &[f64], o: &[f64]) -> Result<NodeId> {
        if h.len() != self.embed.output || o.len() != self.embed.input {
            return Err(Error::InvalidInput("value net input widths do not match".into()));
        }
        let hn = tape.input(h.to_vec())?;
        let on = tape.input(o.to_vec())?;
        let e = self.embed.forward(tape, on)?;
        let x = tape.concat(&[hn, e])?;
        self.net.forward(tape, x)
    }

    pub fn value(&self, h: &[f64], o: &[f64]) -> Result<f64> {
        let mut tape = Tape::new(&self.store);
        let v = self.node(&mut tape, h, o)?;
        Ok(tape.scalar(v))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub gamma: f64,
    pub lr: f64,
    pub grad_clip: f64,
    pub hidden_size: usize,
    pub msg_len: usize,
    pub aggregator: Aggregator,
    pub entropy_coef: f64,
    /// multiply each term by the detached action probability
    pub literal_gradient: bool,
    pub at_enabled: bool,
    pub at_attack: AttackSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            steps_per_epoch: 1500,
            gamma: 0.98,
            lr: 3e-4,
            grad_clip: 5.0,
            hidden_size: 128,
            msg_len: 16,
            aggregator: Aggregator::Decomposable,
            entropy_coef: 0.0,
            literal_gradient: false,
            at_enabled: false,
            at_attack: AttackSpec::none(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.hidden_size == 0 || self.msg_len == 0 {
            return Err(Error::Config("epochs, steps_per_epoch, hidden_size and msg_len must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.grad_clip > 0.0) || self.entropy_coef < 0.0 {
            return Err(Error::Config("lr and grad_clip must be positive, entropy_coef non-negative".into()));
        }
        self.at_attack.validate()
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            epochs: kv.get_or("epochs", d.epochs)?,
            steps_per_epoch: kv.get_or("steps_per_epoch", d.steps_per_epoch)?,
            gamma: kv.get_or("gamma", d.gamma)?,
            lr: kv.get_or("lr", d.lr)?,
            grad_clip: kv.get_or("grad_clip", d.grad_clip)?,
            hidden_size: kv.get_or("hidden_size", d.hidden_size)?,
            msg_len: kv.get_or("msg_len", d.msg_len)?,
            aggregator: kv.get_or("aggregator", d.aggregator)?,
            entropy_coef: kv.get_or("entropy_coef", d.entropy_coef)?,
            literal_gradient: kv.get_or("literal_gradient", d.literal_gradient)?,
            at_enabled: kv.get_or("at_enabled", d.at_enabled)?,
            at_attack: AttackSpec::from_kv(kv, "at_")?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_kv(&self, kv: &mut KvConfig) {
        kv.set("epochs", self.epochs);
        kv.set("steps_per_epoch", self.steps_per_epoch);
        kv.set("gamma", self.gamma);
        kv.set("lr", self.lr);
        kv.set("grad_clip", self.grad_clip);
        kv.set("hidden_size", self.hidden_size);
        kv.set("msg_len", self.msg_len);
        kv.set("aggregator", self.aggregator);
        kv.set("entropy_coef", self.entropy_coef);
        kv.set("literal_gradient", self.literal_gradient);
        kv.set("at_enabled", self.at_enabled);
        self.at_attack.write_kv(kv, "at_");
        kv.set("seed", self.seed);
    }

    pub fn agent_config(&self, env: &EnvConfig) -> AgentConfig {
        AgentConfig::for_env(env, self.hidden_size, self.msg_len, self.aggregator)
    }

    /// The attack used during rollouts, if adversarial training applies.
    fn effective_attack(&self) -> Option<&AttackSpec> {
        (self.at_enabled && self.at_attack.p > 0.0).then_some(&self.at_attack)
    }
}

/// Backward recursion `Q_t = r_t + γ Q_{t+1}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut q = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        q[t] = acc;
    }
    q
}

/// Returns along one agent's trajectory. The trajectory must be complete:
/// one agent, contiguous timesteps, and ending on its terminal transition.
pub fn compute_returns(trajectory: &[Transition], gamma: f64) -> Result<Vec<f64>> {
    let Some(last) = trajectory.last() else { return Ok(Vec::new()) };
    if !last.done {
        return Err(Error::InvalidInput("trajectory does not end on a terminal transition".into()));
    }
    for w in trajectory.windows(2) {
        if w[0].agent != w[1].agent || w[0].episode != w[1].episode || w[1].t != w[0].t + 1 || w[0].done {
            return Err(Error::InvalidInput(format!(
                "trajectory is not contiguous at episode {} t {}",
                w[0].episode, w[0].t
            )));
        }
    }
    let rewards: Vec<f64> = trajectory.iter().map(|tr| tr.r).collect();
    Ok(discounted_returns(&rewards, gamma))
}

/// Returns for every transition of an episode, aligned with `transitions`.
pub fn episode_returns(ep: &EpisodeLog, gamma: f64) -> Result<Vec<f64>> {
    let mut q = vec![0.0; ep.transitions.len()];
    let agents = ep.transitions.iter().map(|t| t.agent).max().map_or(0, |a| a + 1);
    for agent in 0..agents {
        let idx: Vec<usize> = (0..ep.transitions.len()).filter(|&k| ep.transitions[k].agent == agent).collect();
        let traj: Vec<Transition> = idx.iter().map(|&k| ep.transitions[k].clone()).collect();
        for (&k, qk) in idx.iter().zip(compute_returns(&traj, gamma)?) {
            q[k] = qk;
        }
    }
    Ok(q)
}

pub fn advantage(q: f64, v: f64) -> f64 {
    q - v
}

/// Advantage using a fresh value-net evaluation.
pub fn advantage_of(tr: &Transition, q: f64, value: &ValueNet) -> Result<f64> {
    Ok(advantage(q, value.value(&tr.h, &tr.o)?))
}

/// Plays `ceil`-many whole episodes until at least `steps` transitions exist.
///
/// Actions are sampled. When `attack` is given every directed message goes
/// through the attack channel; perturbed payloads enter the tape as
/// constants, so no gradient reaches their senders.
pub fn rollout<'a>(
    env_cfg: &EnvConfig,
    core: &'a AgentCore,
    value: &ValueNet,
    attack: Option<&AttackSpec>,
    steps: usize,
    seed: u64,
) -> Result<Rollout<'a>> {
    let mut env = Env::new(env_cfg.clone())?;
    let n = env.n_agents();
    let mut out = Rollout { episodes: Vec::new(), tapes: Vec::new() };
    let mut collected = 0;
    let mut id = 0u64;
    while collected < steps.max(1) {
        let ep_seed = derive(seed, &[id]);
        let (log, tape) = play_episode(&mut env, core, value, attack, id, ep_seed, n)?;
        collected += log.transitions.len();
        out.episodes.push(log);
        out.tapes.push(tape);
        id += 1;
    }
    Ok(out)
}

fn play_episode<'a>(
    env: &mut Env,
    core: &'a AgentCore,
    value: &ValueNet,
    attack: Option<&AttackSpec>,
    id: u64,
    ep_seed: u64,
    n: usize,
) -> Result<(EpisodeLog, EpisodeTape<'a>)> {
    let mut act_rng = ChaCha8Rng::seed_from_u64(derive(ep_seed, &[0xAC7]));
    let mut obs = env.reset(ep_seed);
    let mut tape = Tape::new(&core.store);
    let mut h_nodes = Vec::with_capacity(n);
    for _ in 0..n {
        h_nodes.push(tape.input(core.initial_hidden())?);
    }
    let mut transitions: Vec<Transition> = Vec::new();
    let (mut logp, mut entropy) = (Vec::new(), Vec::new());
    let mut open: Vec<Option<usize>> = vec![None; n];
    while !env.is_done() {
        let t = env.timestep();
        let mut e_nodes = Vec::with_capacity(n);
        for i in 0..n {
            let o = tape.input(obs[i].clone())?;
            let e = core.embed_obs(&mut tape, o)?;
            h_nodes[i] = core.update_hidden_node(&mut tape, h_nodes[i], e)?;
            e_nodes.push(e);
        }
        let hs: Vec<Vec<f64>> = h_nodes.iter().map(|&h| tape.value(h).to_vec()).collect();
        let (msg_nodes, sent): (Vec<Option<NodeId>>, Vec<Option<Vec<f64>>>) = if core.config.learned_comm {
            let mut nodes = Vec::with_capacity(n);
            for i in 0..n {
                nodes.push(Some(core.encode_node(&mut tape, h_nodes[i], e_nodes[i])?));
            }
            let sent = nodes.iter().map(|m| m.map(|m| tape.value(m).to_vec())).collect();
            (nodes, sent)
        } else {
            let sent = broadcast(core, env, &hs, &obs)?;
            (vec![None; n], sent)
        };
        let delivery = match attack {
            Some(spec) => {
                let receivers: Vec<ReceiverState> = (0..n)
                    .map(|i| ReceiverState { h: hs[i].clone(), obs: obs[i].clone(), active: env.acts(i) })
                    .collect();
                Some(apply_channel(core, &sent, &receivers, spec, ep_seed, t)?)
            }
            None => None,
        };
        let mut actions = vec![0; n];
        let mut step_ids = Vec::new();
        for i in (0..n).filter(|&i| env.acts(i)) {
            let mut inc_nodes = Vec::new();
            let mut inc_vals = Vec::new();
            for j in (0..n).filter(|&j| j != i) {
                let (payload, perturbed) = match &delivery {
                    Some(d) => (d.messages[i][j].clone(), d.perturbed[i][j]),
                    None => (sent[j].clone(), false),
                };
                let Some(payload) = payload else { continue };
                let node = match msg_nodes[j] {
                    Some(node) if !perturbed => node,
                    _ => tape.input(payload.clone())?,
                };
                inc_nodes.push(node);
                inc_vals.push(payload);
            }
            let pref = core.preference_node(&mut tape, h_nodes[i], e_nodes[i], &inc_nodes, None)?;
            let lp = tape.log_softmax(pref)?;
            let p = tape.softmax(pref)?;
            let dist = tape.value(p).to_vec();
            let a = act(&dist, &mut act_rng, ActMode::Sample);
            actions[i] = a;
            logp.push(tape.pick(lp, a)?);
            let neg_h = tape.dot(p, lp)?;
            entropy.push(tape.affine(neg_h, -1.0, 0.0)?);
            let v = value.value(&hs[i], &obs[i])?;
            step_ids.push(transitions.len());
            open[i] = Some(transitions.len());
            transitions.push(Transition {
                episode: id,
                t,
                agent: i,
                h: hs[i].clone(),
                o: obs[i].clone(),
                m: inc_vals,
                v,
                a,
                pi: dist[a],
                r: 0.0,
                o_next: Vec::new(),
                done: false,
            });
        }
        let step = env.step(&actions)?;
        for k in step_ids {
            let tr = &mut transitions[k];
            tr.r = step.rewards[tr.agent];
            tr.o_next = step.observations[tr.agent].clone();
            if step.done || !env.acts(tr.agent) {
                tr.done = true;
                open[tr.agent] = None;
            }
        }
        obs = step.observations;
    }
    debug_assert!(open.iter().all(Option::is_none));
    let log = EpisodeLog { id, seed: ep_seed, length: env.timestep(), transitions };
    Ok((log, EpisodeTape { tape, logp, entropy }))
}

/// Policy-gradient estimate over the whole batch, averaged per transition:
/// `-(1/N) Σ A_k ∇log π(a_k)` (optionally with the detached `π(a_k)` factor)
/// minus the entropy bonus. Consumes the recorded tapes.
pub fn policy_gradient(
    episodes: &[EpisodeLog],
    tapes: Vec<EpisodeTape<'_>>,
    advantages: &[Vec<f64>],
    cfg: &TrainConfig,
    n_params: usize,
) -> Result<(ParamGrads, f64)> {
    let total: usize = episodes.iter().map(|e| e.transitions.len()).sum();
    let scale = 1.0 / total.max(1) as f64;
    let mut acc = ParamGrads::new(n_params);
    let mut loss = 0.0;
    for ((ep, mut rec), adv) in episodes.iter().zip(tapes).zip(advantages) {
        if ep.transitions.is_empty() {
            continue;
        }
        let mut terms = Vec::with_capacity(2 * ep.transitions.len());
        for (k, tr) in ep.transitions.iter().enumerate() {
            let factor = if cfg.literal_gradient { tr.pi } else { 1.0 };
            terms.push((rec.logp[k], -adv[k] * factor * scale));
            if cfg.entropy_coef > 0.0 {
                terms.push((rec.entropy[k], -cfg.entropy_coef * scale));
            }
        }
        let out = rec.tape.weighted_sum(&terms)?;
        loss += rec.tape.scalar(out);
        let g = rec.tape.backward(out, &[1.0])?;
        acc.add_assign(&g.params);
    }
    if !loss.is_finite() {
        return Err(Error::Training(format!("non-finite policy loss {loss}")));
    }
    Ok((acc, loss))
}

/// Adds `grads`, clips to `max_norm`, takes one Adam step. Returns the
/// pre-clip norm.
pub fn apply_gradients(store: &mut ParamStore, grads: &ParamGrads, adam: &Adam, max_norm: f64) -> Result<f64> {
    store.zero_grad();
    store.accumulate(grads);
    let norm = store.clip_grad_norm(max_norm);
    if !norm.is_finite() {
        store.zero_grad();
        return Err(Error::Training(format!("non-finite gradient norm {norm}")));
    }
    adam.step(store);
    Ok(norm)
}

/// One Adam step on the mean squared error `(1/N) Σ (Q - V)²`; returns the
/// pre-step loss.
pub fn value_update(
    value: &mut ValueNet,
    batch: &[(&Transition, f64)],
    adam: &Adam,
    max_norm: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let n = batch.len() as f64;
    let mut acc = ParamGrads::new(value.store.len());
    let mut loss = 0.0;
    for &(tr, q) in batch {
        let mut tape = Tape::new(&value.store);
        let v = value.node(&mut tape, &tr.h, &tr.o)?;
        let err = q - tape.scalar(v);
        loss += err * err / n;
        let g = tape.backward(v, &[-2.0 * err / n])?;
        acc.add_assign(&g.params);
    }
    if !loss.is_finite() {
        return Err(Error::Training(format!("non-finite value loss {loss}")));
    }
    apply_gradients(&mut value.store, &acc, adam, max_norm)?;
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub episodes: usize,
    pub transitions: usize,
    pub mean_length: f64,
    pub mean_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct Stage1 {
    pub core: AgentCore,
    pub value: ValueNet,
    pub curve: Vec<EpochStats>,
    pub warnings: Vec<String>,
}

/// Stage 1: on-policy REINFORCE with a value baseline; message weights are all 1.
pub fn train_stage1(env_cfg: &EnvConfig, cfg: &TrainConfig) -> Result<Stage1> {
    cfg.validate()?;
    env_cfg.validate()?;
    let mut warnings = Vec::new();
    if !cfg.at_enabled && cfg.at_attack.p > 0.0 && cfg.at_attack.kind != crate::attacks::AttackKind::None {
        let w = "at_attack is set but at_enabled = false; training without attacks".to_string();
        log::warn!("{w}");
        warnings.push(w);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, &[0x1417]));
    let mut core = AgentCore::new(cfg.agent_config(env_cfg), &mut rng)?;
    let mut value = ValueNet::new(env_cfg.obs_dim(), cfg.hidden_size, &mut rng)?;
    let adam = Adam::new(cfg.lr);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let stats = train_epoch(env_cfg, cfg, &mut core, &mut value, &adam, epoch)?;
        log::info!(
            "epoch {epoch}: mean length {:.2}, return {:.3}, value loss {:.4}",
            stats.mean_length,
            stats.mean_return,
            stats.value_loss
        );
        curve.push(stats);
    }
    Ok(Stage1 { core, value, curve, warnings })
}

/// One rollout plus one policy step and one value step.
pub fn train_epoch(
    env_cfg: &EnvConfig,
    cfg: &TrainConfig,
    core: &mut AgentCore,
    value: &mut ValueNet,
    adam: &Adam,
    epoch: usize,
) -> Result<EpochStats> {
    let seed = derive(cfg.seed, &[0xE90C, epoch as u64]);
    let ro = rollout(env_cfg, core, value, cfg.effective_attack(), cfg.steps_per_epoch, seed)?;
    let Rollout { episodes, tapes } = ro;
    let qs = episodes.iter().map(|ep| episode_returns(ep, cfg.gamma)).collect::<Result<Vec<_>>>()?;
    let advs: Vec<Vec<f64>> = episodes
        .iter()
        .zip(&qs)
        .map(|(ep, q)| ep.transitions.iter().zip(q).map(|(tr, &q)| advantage(q, tr.v)).collect())
        .collect();
    let (grads, policy_loss) = policy_gradient(&episodes, tapes, &advs, cfg, core.store.len())?;
    let grad_norm = apply_gradients(&mut core.store, &grads, adam, cfg.grad_clip)
        .map_err(|e| Error::Training(format!("epoch {epoch}: {e}")))?;
    let batch: Vec<(&Transition, f64)> = episodes
        .iter()
        .zip(&qs)
        .flat_map(|(ep, q)| ep.transitions.iter().zip(q.iter().copied()))
        .collect();
    let value_loss =
        value_update(value, &batch, adam, cfg.grad_clip).map_err(|e| Error::Training(format!("epoch {epoch}: {e}")))?;
    let n_ep = episodes.len() as f64;
    let transitions = batch.len();
    let mean_return = episodes
        .iter()
        .map(|ep| ep.transitions.iter().map(|t| t.r).sum::<f64>() / ep.transitions.len().max(1) as f64)
        .sum::<f64>()
        / n_ep;
    Ok(EpochStats {
        epoch,
        episodes: episodes.len(),
        transitions,
        mean_length: episodes.iter().map(|e| e.length as f64).sum::<f64>() / n_ep,
        mean_return,
        policy_loss,
        value_loss,
        grad_norm,
    })
}

#[derive(Clone, Debug, PartialEq)]
#[derive(Default)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    pub estimator: EstimatorTrainConfig,
}

impl PipelineConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let train = TrainConfig::from_kv(kv)?;
        let dd = DatasetConfig::default();
        let de = EstimatorTrainConfig::default();
        let dataset = DatasetConfig {
            target_samples: kv.get_or("dataset_size", dd.target_samples)?,
            p_a: kv.get_or("p_a", dd.p_a)?,
            p_b: kv.get_or("p_b", dd.p_b)?,
            lambda: kv.get_or("dataset_lambda", dd.lambda)?,
            seed: train.seed,
        };
        let estimator = EstimatorTrainConfig {
            epochs: kv.get_or("estimator_epochs", de.epochs)?,
            batch: kv.get_or("estimator_batch", de.batch)?,
            lr: kv.get_or("estimator_lr", de.lr)?,
            width: kv.get_or("estimator_width", de.width)?,
            holdout: kv.get_or("estimator_holdout", de.holdout)?,
            seed: train.seed,
        };
        Ok(Self { train, dataset, estimator })
    }

    pub fn write_kv(&self, kv: &mut KvConfig) {
        self.train.write_kv(kv);
        kv.set("dataset_size", self.dataset.target_samples);
        kv.set("p_a", self.dataset.p_a);
        kv.set("p_b", self.dataset.p_b);
        kv.set("dataset_lambda", self.dataset.lambda);
        kv.set("estimator_epochs", self.estimator.epochs);
        kv.set("estimator_batch", self.estimator.batch);
        kv.set("estimator_lr", self.estimator.lr);
        kv.set("estimator_width", self.estimator.width);
        kv.set("estimator_holdout", self.estimator.holdout);
    }
}


/// Trained artefacts plus the configuration that produced them.
#[derive(Clone, Debug)]
pub struct Bundle {
    pub env: EnvConfig,
    pub config: PipelineConfig,
    pub core: AgentCore,
    pub value: ValueNet,
    pub estimator: Option<Estimator>,
    pub estimator_metrics: Option<EstimatorMetrics>,
    pub dataset_stats: Option<DatasetStats>,
    pub final_mean_length: f64,
}

pub const POLICY_FILE: &str = "policy.ckpt";
pub const VALUE_FILE: &str = "value.ckpt";
pub const ESTIMATOR_FILE: &str = "estimator.ckpt";
pub const META_FILE: &str = "meta.cfg";
const HASH_MISMATCH: &str = "bundle fails its content hash";

fn store_bytes(store: &ParamStore) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    checkpoint::write_store(store, &mut buf)?;
    Ok(buf)
}

fn content_hash(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

impl Bundle {
    /// Writes the bundle directory: three checkpoints and a metadata file
    /// whose `content_hash` covers the checkpoint bytes.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let policy = store_bytes(&self.core.store)?;
        let value = store_bytes(&self.value.store)?;
        let est = self.estimator.as_ref().map(|e| store_bytes(&e.store)).transpose()?;
        fs::write(dir.join(POLICY_FILE), &policy)?;
        fs::write(dir.join(VALUE_FILE), &value)?;
        match &est {
            Some(bytes) => fs::write(dir.join(ESTIMATOR_FILE), bytes)?,
            None => {
                if dir.join(ESTIMATOR_FILE).exists() {
                    fs::remove_file(dir.join(ESTIMATOR_FILE))?;
                }
            }
        }
        let mut parts: Vec<&[u8]> = vec![&policy, &value];
        if let Some(b) = &est {
            parts.push(b);
        }
        let mut kv = KvConfig::new();
        self.env.write_kv(&mut kv);
        self.config.write_kv(&mut kv);
        kv.set("has_estimator", self.estimator.is_some());
        if let Some(e) = &self.estimator {
            kv.set("estimator_hidden", e.config.hidden_size);
        }
        if let Some(m) = &self.estimator_metrics {
            kv.set("metric_recall", m.recall);
            kv.set("metric_precision", m.precision);
            kv.set("metric_accuracy", m.accuracy);
            kv.set("metric_train_samples", m.train_samples);
            kv.set("metric_holdout_samples", m.holdout_samples);
            kv.set("metric_initial_loss", m.initial_loss);
            kv.set("metric_final_loss", m.final_loss);
        }
        if let Some(s) = &self.dataset_stats {
            kv.set("dataset_samples", s.samples);
            kv.set("dataset_reliable", s.reliable);
            kv.set("dataset_raw", s.raw);
            kv.set("dataset_random", s.random);
            kv.set("dataset_adversarial", s.adversarial);
        }
        kv.set("final_mean_length", self.final_mean_length);
        kv.set("content_hash", content_hash(&parts));
        fs::write(dir.join(META_FILE), kv.render())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(|source| Error::Load { path: p, source })
        };
        let meta = read(META_FILE)?;
        let meta = String::from_utf8(meta).map_err(|_| Error::Format(format!("{META_FILE} is not UTF-8")))?;
        let has_est: bool = KvConfig::parse(&meta)?.get_or("has_estimator", false)?;
        let est = if has_est { Some(read(ESTIMATOR_FILE)?) } else { None };
        Self::from_parts(&meta, &read(POLICY_FILE)?, &read(VALUE_FILE)?, est.as_deref())
            .map_err(|e| match e {
                Error::Format(msg) if msg == HASH_MISMATCH => {
                    Error::Format(format!("bundle {} fails its content hash", dir.display()))
                }
                e => e,
            })
    }

    /// Rebuilds a bundle from the metadata text and raw checkpoint bytes.
    pub fn from_parts(meta: &str, policy: &[u8], value_bytes: &[u8], est_bytes: Option<&[u8]>) -> Result<Self> {
        let kv = KvConfig::parse(meta)?;
        let env = EnvConfig::from_kv(&kv)?;
        let config = PipelineConfig::from_kv(&kv)?;
        let has_est: bool = kv.get_or("has_estimator", false)?;
        if has_est != est_bytes.is_some() {
            return Err(Error::Format("estimator checkpoint presence disagrees with metadata".into()));
        }
        let mut parts: Vec<&[u8]> = vec![policy, value_bytes];
        if let Some(b) = est_bytes {
            parts.push(b);
        }
        let expected: String = kv.get("content_hash")?.ok_or_else(|| Error::Format("bundle has no content_hash".into()))?;
        if content_hash(&parts) != expected {
            return Err(Error::Format(HASH_MISMATCH.into()));
        }
        let core = AgentCore::from_store(config.train.agent_config(&env), checkpoint::read_store(policy)?)?;
        let value = ValueNet::from_store(checkpoint::read_store(value_bytes)?)?;
        let estimator = match est_bytes {
            Some(b) => {
                let ecfg = EstimatorConfig {
                    obs_dim: env.obs_dim(),
                    hidden_size: kv.get_or("estimator_hidden", core.hidden_size())?,
                    msg_len: core.msg_len(),
                    width: config.estimator.width,
                };
                Some(Estimator::from_store(ecfg, checkpoint::read_store(b)?)?)
            }
            None => None,
        };
        let estimator_metrics = match kv.get::<f64>("metric_recall")? {
            Some(recall) => Some(EstimatorMetrics {
                recall,
                precision: kv.get_or("metric_precision", 0.0)?,
                accuracy: kv.get_or("metric_accuracy", 0.0)?,
                initial_loss: kv.get_or("metric_initial_loss", 0.0)?,
                final_loss: kv.get_or("metric_final_loss", 0.0)?,
                train_samples: kv.get_or("metric_train_samples", 0)?,
                holdout_samples: kv.get_or("metric_holdout_samples", 0)?,
            }),
            None => None,
        };
        let dataset_stats = match kv.get::<usize>("dataset_samples")? {
            Some(samples) => Some(DatasetStats {
                samples,
                reliable: kv.get_or("dataset_reliable", 0)?,
                raw: kv.get_or("dataset_raw", 0)?,
                random: kv.get_or("dataset_random", 0)?,
                adversarial: kv.get_or("dataset_adversarial", 0)?,
            }),
            None => None,
        };
        Ok(Self {
            env,
            config,
            core,
            value,
            estimator,
            estimator_metrics,
            dataset_stats,
            final_mean_length: kv.get_or("final_mean_length", 0.0)?,
        })
    }

    /// Hash recorded for the bundle's current parameters.
    pub fn content_hash(&self) -> Result<String> {
        let policy = store_bytes(&self.core.store)?;
        let value = store_bytes(&self.value.store)?;
        let est = self.estimator.as_ref().map(|e| store_bytes(&e.store)).transpose()?;
        let mut parts: Vec<&[u8]> = vec![&policy, &value];
        if let Some(b) = &est {
            parts.push(b);
        }
        Ok(content_hash(&parts))
    }
}

/// Mean episode length over the last tenth of the learning curve.
pub fn tail_mean_length(curve: &[EpochStats]) -> f64 {
    let k = (curve.len() / 10).max(1).min(curve.len());
    if k == 0 {
        return 0.0;
    }
    curve[curve.len() - k..].iter().map(|s| s.mean_length).sum::<f64>() / k as f64
}

/// Stages 1 to 3. The estimator stages run only for the decomposable aggregator.
pub fn train_full_pipeline(env_cfg: &EnvConfig, cfg: &PipelineConfig) -> Result<(Bundle, Vec<EpochStats>)> {
    let s1 = train_stage1(env_cfg, &cfg.train)?;
    let mut bundle = Bundle {
        env: env_cfg.clone(),
        config: cfg.clone(),
        final_mean_length: tail_mean_length(&s1.curve),
        core: s1.core,
        value: s1.value,
        estimator: None,
        estimator_metrics: None,
        dataset_stats: None,
    };
    if cfg.train.aggregator == Aggregator::Decomposable {
        let (data, stats) = build_dataset(&bundle.core, env_cfg, &cfg.dataset)?;
        log::info!("reliability dataset: {} samples, {:.3} reliable", data.len(), data.reliable_fraction());
        let (est, metrics) = train_estimator(&data, &cfg.estimator)?;
        log::info!("estimator recall {:.3} precision {:.3}", metrics.recall, metrics.precision);
        bundle.estimator = Some(est);
        bundle.estimator_metrics = Some(metrics);
        bundle.dataset_stats = Some(stats);
    }
    Ok((bundle, s1.curve))
}

/// `log π(a | h, o, m)` for one receiver at one step, with parameter gradients.
pub fn log_prob_and_grad(core: &AgentCore, h: &[f64], o: &[f64], msgs: &[&[f64]], a: usize) -> Result<(f64, ParamGrads)> {
    let mut tape = Tape::new(&core.store);
    let hn = tape.input(h.to_vec())?;
    let on = tape.input(o.to_vec())?;
    let e = core.embed_obs(&mut tape, on)?;
    let nodes = msgs.iter().map(|m| tape.input(m.to_vec())).collect::<Result<Vec<_>>>()?;
    let pref = core.preference_node(&mut tape, hn, e, &nodes, None)?;
    let lp = tape.log_softmax(pref)?;
    let out = tape.pick(lp, a)?;
    let value = tape.scalar(out);
    Ok((value, tape.backward(out, &[1.0])?.params))
}

/// Receiver's `log π(a)` after one joint step from zero hidden states, with
/// every sender's message produced by its encoder on the same tape.
pub fn team_log_prob_and_grad(
    core: &AgentCore,
    obs: &[Vec<f64>],
    receiver: usize,
    a: usize,
) -> Result<(f64, ParamGrads)> {
    let mut tape = Tape::new(&core.store);
    let mut hs = Vec::new();
    let mut es = Vec::new();
    for o in obs {
        let h0 = tape.input(core.initial_hidden())?;
        let on = tape.input(o.clone())?;
        let e = core.embed_obs(&mut tape, on)?;
        hs.push(core.update_hidden_node(&mut tape, h0, e)?);
        es.push(e);
    }
    let mut msgs = Vec::new();
    for j in (0..obs.len()).filter(|&j| j != receiver) {
        msgs.push(core.encode_node(&mut tape, hs[j], es[j])?);
    }
    let pref = core.preference_node(&mut tape, hs[receiver], es[receiver], &msgs, None)?;
    let lp = tape.log_softmax(pref)?;
    let out = tape.pick(lp, a)?;
    let value = tape.scalar(out);
    Ok((value, tape.backward(out, &[1.0])?.params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{AttackKind, Objective};
    use crate::envs::TaskKind;
    use crate::ndnet::grad_check_store;
    use crate::reliability::Label;
    use rand::Rng;

    fn small_env(task: TaskKind) -> EnvConfig {
        let mut e = EnvConfig::new(task);
        e.n_agents = 3;
        e.grid_size = 5;
        e.t_max = 15;
        e
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig { epochs: 2, steps_per_epoch: 60, hidden_size: 8, msg_len: 3, ..TrainConfig::default() }
    }

    fn tr(agent: usize, t: usize, r: f64, done: bool) -> Transition {
        Transition {
            episode: 0,
            t,
            agent,
            h: vec![],
            o: vec![],
            m: vec![],
            v: 0.0,
            a: 0,
            pi: 1.0,
            r,
            o_next: vec![],
            done,
        }
    }

    #[test]
    fn returns_examples() {
        assert_eq!(discounted_returns(&[1.0, 1.0, 1.0], 0.5), vec![1.75, 1.5, 1.0]);
        assert_eq!(discounted_returns(&[1.0; 4], 1.0), vec![4.0, 3.0, 2.0, 1.0]);
        assert_eq!(discounted_returns(&[0.3, -2.0, 5.0], 0.0), vec![0.3, -2.0, 5.0]);
    }

    #[test]
    fn incomplete_trajectory_rejected() {
        let traj = vec![tr(0, 0, 1.0, false), tr(0, 1, 1.0, false)];
        assert!(compute_returns(&traj, 0.9).is_err());
        let gap = vec![tr(0, 0, 1.0, false), tr(0, 2, 1.0, true)];
        assert!(compute_returns(&gap, 0.9).is_err());
        let ok = vec![tr(0, 0, 1.0, false), tr(0, 1, 1.0, true)];
        assert_eq!(compute_returns(&ok, 0.5).unwrap(), vec![1.5, 1.0]);
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(advantage(2.5, 0.0), 2.5);
        assert_eq!(advantage(2.5, 2.5), 0.0);
    }

    #[test]
    fn rollout_episode_bounds_and_determinism() {
        let env = small_env(TaskKind::PredatorPrey);
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let core = AgentCore::new(cfg.agent_config(&env), &mut rng).unwrap();
        let value = ValueNet::new(env.obs_dim(), 8, &mut rng).unwrap();
        let a = rollout(&env, &core, &value, None, 100, 7).unwrap();
        assert!(a.num_transitions() >= 100);
        for ep in &a.episodes {
            assert!(ep.length <= env.t_max && ep.length >= 1);
            let q = episode_returns(ep, 0.98).unwrap();
            assert_eq!(q.len(), ep.transitions.len());
        }
        let b = rollout(&env, &core, &value, None, 100, 7).unwrap();
        assert_eq!(a.episodes, b.episodes);
        let p0 = AttackSpec::new(AttackKind::Fgsm, Objective::A, 0.0);
        let c = rollout(&env, &core, &value, Some(&p0), 100, 7).unwrap();
        assert_eq!(a.episodes, c.episodes);
    }

    #[test]
    fn rollout_under_attack_delivers_bounded_messages() {
        let env = small_env(TaskKind::PredatorPrey);
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let core = AgentCore::new(cfg.agent_config(&env), &mut rng).unwrap();
        let value = ValueNet::new(env.obs_dim(), 8, &mut rng).unwrap();
        let spec = AttackSpec::new(AttackKind::Gaussian, Objective::A, 1.0);
        let clean = rollout(&env, &core, &value, None, 50, 3).unwrap();
        let hit = rollout(&env, &core, &value, Some(&spec), 50, 3).unwrap();
        assert_ne!(clean.episodes, hit.episodes);
        for t in hit.transitions() {
            assert!(t.m.iter().flatten().all(|x| x.abs() <= 1.0));
        }
    }

    #[test]
    fn zero_advantages_leave_parameters_unchanged() {
        let env = small_env(TaskKind::PredatorPrey);
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut core = AgentCore::new(cfg.agent_config(&env), &mut rng).unwrap();
        let value = ValueNet::new(env.obs_dim(), 8, &mut rng).unwrap();
        let before = core.store.clone();
        let ro = rollout(&env, &core, &value, None, 40, 1).unwrap();
        let Rollout { episodes, tapes } = ro;
        let advs: Vec<Vec<f64>> = episodes.iter().map(|e| vec![0.0; e.transitions.len()]).collect();
        let (g, _) = policy_gradient(&episodes, tapes, &advs, &cfg, core.store.len()).unwrap();
        assert!(g.flatten(&core.store).iter().all(|&x| x == 0.0));
        apply_gradients(&mut core.store, &g, &Adam::new(1e-3), 5.0).unwrap();
        assert!(core.store.same_values(&before));
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let env = small_env(TaskKind::PredatorPrey);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for agg in [Aggregator::Decomposable, Aggregator::Attention] {
            let cfg = TrainConfig { aggregator: agg, ..small_cfg() };
            let core = AgentCore::new(cfg.agent_config(&env), &mut rng).unwrap();
            let h: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let o: Vec<f64> = (0..env.obs_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m1: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m2: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let err = grad_check_store(&core.store, |s| {
                let c = AgentCore::from_store(core.config, s.clone())?;
                log_prob_and_grad(&c, &h, &o, &[&m1, &m2], 2)
            })
            .unwrap();
            assert!(err <= 1e-5, "{agg}: {err}");
        }
    }

    #[test]
    fn gradient_reaches_sender_encoder() {
        let env = small_env(TaskKind::PredatorPrey);
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let core = AgentCore::new(cfg.agent_config(&env), &mut rng).unwrap();
        let obs: Vec<Vec<f64>> = (0..3).map(|_| (0..env.obs_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let (_, g) = team_log_prob_and_grad(&core, &obs, 0, 1).unwrap();
        let enc = core.store.find("encoder.w").unwrap();
        let analytic = g.get(enc).unwrap().to_vec();
        assert!(analytic.iter().any(|x| x.abs() > 0.0));
        let base = core.store.flat_values();
        let offset: usize = core.store.ids().take_while(|&i| i != enc).map(|i| core.store.values(i).len()).sum();
        let mut worst: f64 = 0.0;
        for k in [0, 5, 17] {
            let eval = |d: f64| {
                let mut s = core.store.clone();
                let mut flat = base.clone();
                flat[offset + k] += d;
                s.set_flat_values(&flat).unwrap();
                let c = AgentCore::from_store(core.config, s).unwrap();
                team_log_prob_and_grad(&c, &obs, 0, 1).unwrap().0
            };
            let fd = (eval(1e-5) - eval(-1e-5)) / 2e-5;
            worst = worst.max((fd - analytic[k]).abs() / (fd.abs() + analytic[k].abs() + 1e-12));
        }
        assert!(worst <= 1e-5, "{worst}");
    }

    #[test]
    fn value_update_reduces_loss_and_noop_when_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut value = ValueNet::new(4, 6, &mut rng).unwrap();
        let trs: Vec<Transition> = (0..20)
            .map(|k| {
                let mut t = tr(0, k, 0.0, false);
                t.h = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
                t.o = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                t
            })
            .collect();
        let batch: Vec<(&Transition, f64)> = trs.iter().map(|t| (t, t.o[0] * 2.0 + 1.0)).collect();
        let adam = Adam::new(1e-2);
        let first = value_update(&mut value, &batch, &adam, 5.0).unwrap();
        let mut last = first;
        for _ in 0..100 {
            last = value_update(&mut value, &batch, &adam, 5.0).unwrap();
        }
        assert!(last < first);
        let exact: Vec<(&Transition, f64)> = trs.iter().map(|t| (t, value.value(&t.h, &t.o).unwrap())).collect();
        let before = value.store.clone();
        let fresh = Adam::new(1e-2);
        let mut fresh_value = ValueNet::from_store(before.clone()).unwrap();
        let loss = value_update(&mut fresh_value, &exact, &fresh, 5.0).unwrap();
        assert_eq!(loss, 0.0);
        // zero gradient: Adam's first moment only decays, so the step is tiny
        let moved = fresh_value.store.flat_values().iter().zip(before.flat_values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(moved < 1e-2);
    }

    #[test]
    fn at_disabled_warns_and_ignores_attack() {
        let env = small_env(TaskKind::PredatorPrey);
        let mut cfg = small_cfg();
        cfg.at_attack = AttackSpec::new(AttackKind::Random, Objective::A, 0.5);
        let warned = train_stage1(&env, &cfg).unwrap();
        assert_eq!(warned.warnings.len(), 1);
        cfg.at_attack = AttackSpec::none();
        let plain = train_stage1(&env, &cfg).unwrap();
        assert!(plain.warnings.is_empty());
        assert!(warned.core.store.same_values(&plain.core.store));
        cfg.at_enabled = true;
        cfg.at_attack = AttackSpec::new(AttackKind::Random, Objective::A, 0.5);
        let at = train_stage1(&env, &cfg).unwrap();
        assert!(!at.core.store.same_values(&plain.core.store));
    }

    #[test]
    fn stage1_is_deterministic_for_all_tasks() {
        for task in [TaskKind::FoodCollector, TaskKind::PredatorPrey, TaskKind::TreasureHunt] {
            let env = small_env(task);
            let cfg = small_cfg();
            let a = train_stage1(&env, &cfg).unwrap();
            let b = train_stage1(&env, &cfg).unwrap();
            assert!(a.core.store.same_values(&b.core.store), "{task}");
            assert_eq!(a.curve, b.curve);
        }
    }

    #[test]
    fn literal_gradient_differs() {
        let env = small_env(TaskKind::PredatorPrey);
        let cfg = small_cfg();
        let lit = TrainConfig { literal_gradient: true, ..cfg.clone() };
        let a = train_stage1(&env, &cfg).unwrap();
        let b = train_stage1(&env, &lit).unwrap();
        assert!(!a.core.store.same_values(&b.core.store));
    }

    #[test]
    fn bundle_round_trip() {
        let env = small_env(TaskKind::PredatorPrey);
        let cfg = PipelineConfig {
            train: small_cfg(),
            dataset: DatasetConfig { target_samples: 400, ..DatasetConfig::default() },
            estimator: EstimatorTrainConfig { epochs: 2, width: 8, ..EstimatorTrainConfig::default() },
        };
        let s1 = train_stage1(&env, &cfg.train).unwrap();
        let (mut data, stats) = build_dataset(&s1.core, &env, &cfg.dataset).unwrap();
        // an untrained policy labels nearly everything alike; alternate labels
        // so the estimator stage has two classes to fit
        for (k, s) in data.episodes.iter_mut().flatten().enumerate() {
            s.label = if k % 2 == 0 { Label::Reliable } else { Label::Unreliable };
        }
        let (est, metrics) = train_estimator(&data, &cfg.estimator).unwrap();
        let bundle = Bundle {
            env: env.clone(),
            config: cfg.clone(),
            core: s1.core,
            value: s1.value,
            estimator: Some(est),
            estimator_metrics: Some(metrics),
            dataset_stats: Some(stats),
            final_mean_length: tail_mean_length(&s1.curve),
        };
        let dir = tempfile::tempdir().unwrap();
        bundle.save(dir.path()).unwrap();
        let loaded = Bundle::load(dir.path()).unwrap();
        assert!(loaded.core.store.same_values(&bundle.core.store));
        assert!(loaded.value.store.same_values(&bundle.value.store));
        assert!(loaded.estimator.as_ref().unwrap().store.same_values(&bundle.estimator.as_ref().unwrap().store));
        assert_eq!(loaded.estimator_metrics, bundle.estimator_metrics);
        assert_eq!(loaded.dataset_stats, bundle.dataset_stats);
        assert_eq!(loaded.config, bundle.config);
        assert_eq!(loaded.content_hash().unwrap(), bundle.content_hash().unwrap());
        assert!(stats.random > 0 && stats.adversarial > 0 && stats.raw > 0);
        // tampering is detected
        let p = dir.path().join(VALUE_FILE);
        let mut bytes = fs::read(&p).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&p, bytes).unwrap();
        assert!(Bundle::load(dir.path()).is_err());
    }

    #[test]
    fn attention_pipeline_skips_estimator() {
        let env = small_env(TaskKind::PredatorPrey);
        let cfg = PipelineConfig { train: TrainConfig { aggregator: Aggregator::Attention, ..small_cfg() }, ..PipelineConfig::default() };
        let (bundle, curve) = train_full_pipeline(&env, &cfg).unwrap();
        assert!(bundle.estimator.is_none());
        assert_eq!(curve.len(), 2);
        let dir = tempfile::tempdir().unwrap();
        bundle.save(dir.path()).unwrap();
        assert!(Bundle::load(dir.path()).unwrap().core.store.same_values(&bundle.core.store));
    }

    #[test]
    fn config_kv_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.train.at_enabled = true;
        cfg.train.at_attack = AttackSpec::new(AttackKind::Pgd, Objective::A, 0.3);
        cfg.dataset.target_samples = 1234;
        let mut kv = KvConfig::new();
        cfg.write_kv(&mut kv);
        let back = PipelineConfig::from_kv(&KvConfig::parse(&kv.render()).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let mut bad = kv.clone();
        bad.set("gamma", 0.0);
        assert!(PipelineConfig::from_kv(&bad).is_err());
    }
}
