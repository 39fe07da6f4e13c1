//! Message reliability: ground-truth labels, the learned estimator, and the
//! dataset it is trained on.
//!
//! A message is *reliable* for a receiver when its own preference vector
//! favours the receiver's best action (the greedy choice under raw messages,
//! all weights 1) more than its average action. The estimator sees only the
//! receiver's hidden state, observation and the delivered payload, so at
//! deployment it can down-weight suspect messages without knowing which
//! ones were tampered with.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{argmax, broadcast, decide, ActMode, AgentCore, Defense};
use crate::attacks::{attack_l2grad, attack_random, message_rng, VictimView};
use crate::envs::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::ndnet::{softmax, Activation, Adam, Dense, Mlp, NodeId, ParamGrads, ParamStore, Tape};
use crate::seeding::derive;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Reliable = 0,
    Unreliable = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            0 => Ok(Label::Reliable),
            1 => Ok(Label::Unreliable),
            o => Err(Error::Format(format!("label byte {o} is not 0 or 1"))),
        }
    }
}

/// Whether `m` pushes the receiver towards action `k`.
pub fn recommends(core: &AgentCore, o: &[f64], m: &[f64], k: usize) -> Result<bool> {
    let pref = core.message_preference(o, m)?;
    if k >= pref.len() {
        return Err(Error::InvalidInput(format!("action {k} out of range for {} actions", pref.len())));
    }
    let mean = pref.iter().sum::<f64>() / pref.len() as f64;
    Ok(pref[k] > mean)
}

/// Greedy action of the undefended policy on raw messages.
pub fn best_action(core: &AgentCore, o: &[f64], h: &[f64], raw: &[&[f64]]) -> Result<usize> {
    Ok(argmax(&decide(&core.preference(h, o, raw, None)?)))
}

pub fn label_message(core: &AgentCore, o: &[f64], h: &[f64], m: &[f64], raw: &[&[f64]]) -> Result<Label> {
    let best = best_action(core, o, h, raw)?;
    label_against(core, o, m, best)
}

/// Label for a known best action; lets callers label many messages per receiver.
pub fn label_against(core: &AgentCore, o: &[f64], m: &[f64], best: usize) -> Result<Label> {
    Ok(if recommends(core, o, m, best)? { Label::Reliable } else { Label::Unreliable })
}

pub fn ire_weight(label: Label) -> f64 {
    match label {
        Label::Reliable => 1.0,
        Label::Unreliable => 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EstimatorConfig {
    pub obs_dim: usize,
    pub hidden_size: usize,
    pub msg_len: usize,
    /// width of both hidden layers
    pub width: usize,
}

/// `f_R(h, o, m)`: two ReLU hidden layers over `[h, embed(o), m]`, two logits.
#[derive(Clone, Debug)]
pub struct Estimator {
    pub config: EstimatorConfig,
    pub store: ParamStore,
    embed: Dense,
    net: Mlp,
}

impl Estimator {
    pub fn new<R: Rng + ?Sized>(config: EstimatorConfig, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let embed = Dense::new(&mut store, "rel.embed", config.obs_dim, config.hidden_size, Activation::Linear, rng)?;
        let input = 2 * config.hidden_size + config.msg_len;
        let net = Mlp::new(&mut store, "rel.net", &[input, config.width, config.width, 2], Activation::Linear, rng)?;
        Ok(Self { config, store, embed, net })
    }

    pub fn from_store(config: EstimatorConfig, store: ParamStore) -> Result<Self> {
        let embed = Dense::bind(&store, "rel.embed", Activation::Linear)?;
        let net = Mlp::bind(&store, "rel.net", 3, Activation::Linear)?;
        if embed.input != config.obs_dim
            || embed.output != config.hidden_size
            || net.input() != 2 * config.hidden_size + config.msg_len
            || net.output() != 2
        {
            return Err(Error::Format("estimator checkpoint does not match its config".into()));
        }
        Ok(Self { config, store, embed, net })
    }

    fn logits_node(&self, tape: &mut Tape, h: &[f64], o: &[f64], m: &[f64]) -> Result<NodeId> {
        let c = &self.config;
        if h.len() != c.hidden_size || o.len() != c.obs_dim || m.len() != c.msg_len {
            return Err(Error::InvalidInput(format!(
                "estimator expects widths ({}, {}, {}), got ({}, {}, {})",
                c.hidden_size,
                c.obs_dim,
                c.msg_len,
                h.len(),
                o.len(),
                m.len()
            )));
        }
        let hn = tape.input(h.to_vec())?;
        let on = tape.input(o.to_vec())?;
        let mn = tape.input(m.to_vec())?;
        let e = self.embed.forward(tape, on)?;
        let x = tape.concat(&[hn, e, mn])?;
        self.net.forward(tape, x)
    }

    pub fn logits(&self, h: &[f64], o: &[f64], m: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let out = self.logits_node(&mut tape, h, o, m)?;
        Ok(tape.value(out).to_vec())
    }

    /// Smallest |pre-activation| over the hidden ReLU units for one input.
    pub(crate) fn relu_margin(&self, h: &[f64], o: &[f64], m: &[f64]) -> Result<f64> {
        let mut tape = Tape::new(&self.store);
        let hn = tape.input(h.to_vec())?;
        let on = tape.input(o.to_vec())?;
        let mn = tape.input(m.to_vec())?;
        let e = self.embed.forward(&mut tape, on)?;
        let mut x = tape.concat(&[hn, e, mn])?;
        let mut margin = f64::INFINITY;
        for layer in &self.net.layers[..self.net.layers.len() - 1] {
            let z = tape.linear(layer.w, Some(layer.b), x)?;
            margin = tape.value(z).iter().fold(margin, |acc, v| acc.min(v.abs()));
            x = tape.relu(z)?;
        }
        Ok(margin)
    }

    /// Cross-entropy of one sample and its parameter gradient.
    pub fn loss_and_grad(&self, s: &ReliabilitySample) -> Result<(f64, ParamGrads)> {
        let mut tape = Tape::new(&self.store);
        let logits = self.logits_node(&mut tape, &s.h, &s.o, &s.m)?;
        let loss = tape.cross_entropy_logits(logits, s.label.index())?;
        let value = tape.scalar(loss);
        let g = tape.backward(loss, &[1.0])?;
        Ok((value, g.params))
    }
}

/// Probability that `m` is reliable; used directly as its aggregation weight.
pub fn estimate(est: &Estimator, h: &[f64], o: &[f64], m: &[f64]) -> Result<f64> {
    Ok(softmax(&est.logits(h, o, m)?)[0])
}

/// Aggregation weights for a receiver's delivered messages. `raw` holds the
/// unperturbed payloads in the same order and is only read by `Ire`.
pub fn defense_weights(
    defense: Defense,
    core: &AgentCore,
    estimator: Option<&Estimator>,
    h: &[f64],
    o: &[f64],
    delivered: &[&[f64]],
    raw: &[&[f64]],
) -> Result<Vec<f64>> {
    match defense {
        Defense::None => Ok(vec![1.0; delivered.len()]),
        Defense::Mute => Ok(vec![0.0; delivered.len()]),
        Defense::Re => {
            let est = estimator.ok_or_else(|| Error::Usage("re defense needs a trained estimator".into()))?;
            delivered.iter().map(|m| estimate(est, h, o, m)).collect()
        }
        Defense::Ire => {
            if raw.len() != delivered.len() {
                return Err(Error::InvalidInput("ire needs the raw version of every delivered message".into()));
            }
            let best = best_action(core, o, h, raw)?;
            delivered.iter().map(|m| label_against(core, o, m, best).map(ire_weight)).collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilitySample {
    pub h: Vec<f64>,
    pub o: Vec<f64>,
    pub m: Vec<f64>,
    pub label: Label,
}

/// Samples grouped by the episode that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub h_dim: usize,
    pub o_dim: usize,
    pub m_dim: usize,
    pub episodes: Vec<Vec<ReliabilitySample>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct DatasetStats {
    pub samples: usize,
    pub reliable: usize,
    pub raw: usize,
    pub random: usize,
    pub adversarial: usize,
}

const DATASET_MAGIC: &[u8; 8] = b"ADMACREL";
const DATASET_VERSION: u32 = 1;

impl Dataset {
    pub fn new(h_dim: usize, o_dim: usize, m_dim: usize) -> Self {
        Self { h_dim, o_dim, m_dim, episodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.episodes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self) -> impl Iterator<Item = &ReliabilitySample> {
        self.episodes.iter().flatten()
    }

    pub fn reliable_fraction(&self) -> f64 {
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        self.samples().filter(|s| s.label == Label::Reliable).count() as f64 / n as f64
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        for d in [self.h_dim, self.o_dim, self.m_dim] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.episodes.len() as u32).to_le_bytes())?;
        for ep in &self.episodes {
            w.write_all(&(ep.len() as u32).to_le_bytes())?;
        }
        for s in self.samples() {
            for x in s.h.iter().chain(&s.o).chain(&s.m) {
                w.write_all(&x.to_le_bytes())?;
            }
            w.write_all(&[s.label.index() as u8])?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format("not a reliability dataset".into()));
        }
        let version = read_u32(r)?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let (h_dim, o_dim, m_dim) = (read_u32(r)? as usize, read_u32(r)? as usize, read_u32(r)? as usize);
        let total = read_u64(r)? as usize;
        let n_episodes = read_u32(r)? as usize;
        let counts = (0..n_episodes).map(|_| read_u32(r).map(|c| c as usize)).collect::<Result<Vec<_>>>()?;
        if counts.iter().sum::<usize>() != total {
            return Err(Error::Format("episode counts do not add up to the sample count".into()));
        }
        let mut episodes = Vec::with_capacity(n_episodes);
        for c in counts {
            let mut ep = Vec::with_capacity(c);
            for _ in 0..c {
                let h = read_f64s(r, h_dim)?;
                let o = read_f64s(r, o_dim)?;
                let m = read_f64s(r, m_dim)?;
                let mut b = [0u8; 1];
                r.read_exact(&mut b)?;
                ep.push(ReliabilitySample { h, o, m, label: Label::from_index(b[0])? });
            }
            episodes.push(ep);
        }
        Ok(Self { h_dim, o_dim, m_dim, episodes })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| Error::Load { path: path.to_path_buf(), source })?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        let x = f64::from_le_bytes(b);
        if !x.is_finite() {
            return Err(Error::Format("non-finite value in dataset".into()));
        }
        out.push(x);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetConfig {
    /// stop after the episode that reaches this many samples
    pub target_samples: usize,
    /// chance a message is replaced at all
    pub p_a: f64,
    /// chance a replacement is random rather than adversarial
    pub p_b: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { target_samples: 30_000, p_a: 0.5, p_b: 0.5, lambda: 0.5, seed: 0 }
    }
}

/// Plays the trained policy and labels every delivered message.
///
/// Messages are replaced with probability `p_a`, by a random payload with
/// probability `p_b` and by a gradient-step payload otherwise. Decisions
/// that move the environment are always taken on raw messages, so the
/// replaced messages never change the trajectory.
pub fn build_dataset(core: &AgentCore, env_cfg: &EnvConfig, cfg: &DatasetConfig) -> Result<(Dataset, DatasetStats)> {
    for (name, p) in [("p_a", cfg.p_a), ("p_b", cfg.p_b)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
        }
    }
    let mut env = Env::new(env_cfg.clone())?;
    let n = env.n_agents();
    let mut data = Dataset::new(core.hidden_size(), env_cfg.obs_dim(), core.msg_len());
    let mut stats = DatasetStats::default();
    let mut episode = 0u64;
    while data.len() < cfg.target_samples.max(1) {
        let ep_seed = derive(cfg.seed, &[0xDA7A, episode]);
        let mut act_rng = ChaCha8Rng::seed_from_u64(derive(ep_seed, &[1]));
        let mut obs = env.reset(ep_seed);
        let mut hs = vec![core.initial_hidden(); n];
        let mut samples = Vec::new();
        while !env.is_done() {
            for i in 0..n {
                hs[i] = core.update_hidden(&hs[i], &obs[i])?;
            }
            let sent = broadcast(core, &env, &hs, &obs)?;
            let mut actions = vec![0; n];
            for i in (0..n).filter(|&i| env.acts(i)) {
                let incoming: Vec<(usize, &[f64])> = (0..n)
                    .filter(|&j| j != i)
                    .filter_map(|j| sent[j].as_deref().map(|m| (j, m)))
                    .collect();
                let raw: Vec<&[f64]> = incoming.iter().map(|&(_, m)| m).collect();
                let dist = decide(&core.preference(&hs[i], &obs[i], &raw, None)?);
                let best = argmax(&dist);
                actions[i] = crate::agent::act(&dist, &mut act_rng, ActMode::Sample);
                for (slot, &(j, m)) in incoming.iter().enumerate() {
                    let mut rng = message_rng(ep_seed, env.timestep(), j, i);
                    let payload = if rng.gen::<f64>() < cfg.p_a {
                        if rng.gen::<f64>() < cfg.p_b {
                            stats.random += 1;
                            attack_random(m.len(), &mut rng)
                        } else {
                            stats.adversarial += 1;
                            let others: Vec<Vec<f64>> =
                                raw.iter().enumerate().filter(|&(k, _)| k != slot).map(|(_, x)| x.to_vec()).collect();
                            let view = VictimView::new(core, j, m, vec![(i, hs[i].clone(), obs[i].clone(), others)])?;
                            attack_l2grad(&view, m, cfg.lambda, true)?
                        }
                    } else {
                        stats.raw += 1;
                        m.to_vec()
                    };
                    let label = label_against(core, &obs[i], &payload, best)?;
                    if label == Label::Reliable {
                        stats.reliable += 1;
                    }
                    samples.push(ReliabilitySample { h: hs[i].clone(), o: obs[i].clone(), m: payload, label });
                }
            }
            obs = env.step(&actions)?.observations;
        }
        stats.samples += samples.len();
        data.episodes.push(samples);
        episode += 1;
    }
    Ok((data, stats))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub width: usize,
    pub holdout: f64,
    pub seed: u64,
}

impl Default for EstimatorTrainConfig {
    fn default() -> Self {
        Self { epochs: 20, batch: 64, lr: 1e-3, width: 128, holdout: 0.2, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorMetrics {
    pub recall: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub train_samples: usize,
    pub holdout_samples: usize,
}

/// Recall and precision of the reliable class, predicting reliable when the
/// estimated weight exceeds one half.
pub fn classification_metrics<'a>(
    est: &Estimator,
    samples: impl IntoIterator<Item = &'a ReliabilitySample>,
) -> Result<(f64, f64, f64)> {
    let (mut tp, mut fp, mut fn_, mut total, mut correct) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for s in samples {
        let predicted = estimate(est, &s.h, &s.o, &s.m)? > 0.5;
        let actual = s.label == Label::Reliable;
        match (predicted, actual) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
        total += 1;
        correct += usize::from(predicted == actual);
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok((ratio(tp, tp + fn_), ratio(tp, tp + fp), ratio(correct, total)))
}

fn mean_loss<'a>(est: &Estimator, samples: impl IntoIterator<Item = &'a ReliabilitySample>) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for s in samples {
        let mut tape = Tape::new(&est.store);
        let logits = est.logits_node(&mut tape, &s.h, &s.o, &s.m)?;
        sum += tape.cross_entropy_logits(logits, s.label.index()).map(|l| tape.scalar(l))?;
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Splits episodes into train and holdout sets; holdout gets `frac` of them
/// (at least one when there are two or more).
pub fn split_episodes(data: &Dataset, frac: f64, seed: u64) -> (Vec<&ReliabilitySample>, Vec<&ReliabilitySample>) {
    let mut order: Vec<usize> = (0..data.episodes.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(seed, &[0x5B117])));
    let mut n_hold = (frac * order.len() as f64).round() as usize;
    if order.len() >= 2 {
        n_hold = n_hold.clamp(1, order.len() - 1);
    } else {
        n_hold = 0;
    }
    let (hold, train) = order.split_at(n_hold);
    let pick = |idx: &[usize]| idx.iter().flat_map(|&e| data.episodes[e].iter()).collect::<Vec<_>>();
    (pick(train), pick(hold))
}

/// Minibatch Adam on cross-entropy. Metrics are measured on the holdout
/// episodes, or on the training set when there is only one episode.
pub fn train_estimator(data: &Dataset, cfg: &EstimatorTrainConfig) -> Result<(Estimator, EstimatorMetrics)> {
    if data.is_empty() {
        return Err(Error::Training("reliability dataset is empty".into()));
    }
    let reliable = data.samples().filter(|s| s.label == Label::Reliable).count();
    if reliable == 0 || reliable == data.len() {
        return Err(Error::Training("reliability dataset contains a single class".into()));
    }
    if cfg.batch == 0 || cfg.width == 0 {
        return Err(Error::Config("estimator batch and width must be positive".into()));
    }
    let ecfg = EstimatorConfig { obs_dim: data.o_dim, hidden_size: data.h_dim, msg_len: data.m_dim, width: cfg.width };
    let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, &[0xE57]));
    let mut est = Estimator::new(ecfg, &mut rng)?;
    let (train, hold) = split_episodes(data, cfg.holdout, cfg.seed);
    let eval_set = if hold.is_empty() { &train } else { &hold };
    let adam = Adam::new(cfg.lr);
    let initial_loss = mean_loss(&est, train.iter().copied())?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let mut acc = ParamGrads::new(est.store.len());
            for &k in chunk {
                let (loss, g) = est.loss_and_grad(train[k])?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("estimator loss at epoch {epoch}")));
                }
                acc.add_assign(&g);
            }
            acc.scale(1.0 / chunk.len() as f64);
            est.store.accumulate(&acc);
            adam.step(&mut est.store);
        }
        log::debug!("estimator epoch {epoch} done");
    }
    let final_loss = mean_loss(&est, train.iter().copied())?;
    let (recall, precision, accuracy) = classification_metrics(&est, eval_set.iter().copied())?;
    let metrics = EstimatorMetrics {
        recall,
        precision,
        accuracy,
        initial_loss,
        final_loss,
        train_samples: train.len(),
        holdout_samples: hold.len(),
    };
    Ok((est, metrics))
}
