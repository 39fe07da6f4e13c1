//! Decomposable message-aggregation policy.
//!
//! An agent keeps a GRU hidden state over embedded observations. Its action
//! preferences are a base vector from the hidden state plus one weighted
//! preference vector per received message:
//!
//! ```text
//! h  = gru(h_prev, embed(o))
//! v  = base(h) + Σ_j w_j · msg_pref(embed(o), m_j)
//! p  = softmax(v)
//! ```
//!
//! Each message can only move `v` along its own preference vector, so the
//! weight `w_j` directly scales that message's influence on the decision.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::config::KvConfig;
use crate::envs::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::ndnet::{softmax, Activation, Dense, GruCell, Mlp, NodeId, ParamStore, Tape};

pub type PreferenceVector = Vec<f64>;
pub type ActionId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Aggregator {
    Decomposable,
    Attention,
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Decomposable => "decomposable",
            Aggregator::Attention => "attention",
        })
    }
}

impl FromStr for Aggregator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decomposable" => Ok(Aggregator::Decomposable),
            "attention" => Ok(Aggregator::Attention),
            o => Err(Error::Config(format!("unknown aggregator {o:?}"))),
        }
    }
}

/// How message weights are produced at decision time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Defense {
    /// every message weighted 1
    None,
    /// learned reliability estimator
    Re,
    /// ground-truth labels as 0/1 weights (evaluation only)
    Ire,
    /// every message weighted 0
    Mute,
}

impl fmt::Display for Defense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Defense::None => "none",
            Defense::Re => "re",
            Defense::Ire => "ire",
            Defense::Mute => "mute",
        })
    }
}

impl FromStr for Defense {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Defense::None),
            "re" => Ok(Defense::Re),
            "ire" => Ok(Defense::Ire),
            "mute" => Ok(Defense::Mute),
            o => Err(Error::Config(format!("unknown defense {o:?}"))),
        }
    }
}

/// A broadcast payload. Every component lies in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub sender: usize,
    pub payload: Vec<f64>,
    pub null: bool,
}

impl Message {
    pub fn new(sender: usize, payload: Vec<f64>) -> Result<Self> {
        if payload.iter().any(|x| !(-1.0..=1.0).contains(x)) {
            return Err(Error::InvalidInput("message component outside [-1, 1]".into()));
        }
        Ok(Self { sender, payload, null: false })
    }

    pub fn null(sender: usize, len: usize) -> Self {
        Self { sender, payload: vec![0.0; len], null: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentConfig {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub hidden_size: usize,
    pub msg_len: usize,
    pub aggregator: Aggregator,
    /// false when the environment supplies messages
    pub learned_comm: bool,
}

impl AgentConfig {
    /// Widths for `env`. Learned messages have length `msg_len`; the
    /// predefined Food Collector messages fix their own length.
    pub fn for_env(env: &EnvConfig, hidden_size: usize, msg_len: usize, aggregator: Aggregator) -> Self {
        let learned_comm = !env.task.predefined_comm();
        Self {
            obs_dim: env.obs_dim(),
            n_actions: env.n_actions(),
            hidden_size,
            msg_len: if learned_comm { msg_len } else { env.predefined_msg_len() },
            aggregator,
            learned_comm,
        }
    }

    pub fn write_kv(&self, kv: &mut KvConfig) {
        kv.set("obs_dim", self.obs_dim);
        kv.set("n_actions", self.n_actions);
        kv.set("hidden_size", self.hidden_size);
        kv.set("msg_len", self.msg_len);
        kv.set("aggregator", self.aggregator);
        kv.set("learned_comm", self.learned_comm);
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let need = |k: &str| -> Result<usize> {
            kv.get(k)?.ok_or_else(|| Error::Config(format!("missing key {k}")))
        };
        Ok(Self {
            obs_dim: need("obs_dim")?,
            n_actions: need("n_actions")?,
            hidden_size: kv.get_or("hidden_size", 128)?,
            msg_len: kv.get_or("msg_len", 16)?,
            aggregator: kv.get_or("aggregator", Aggregator::Decomposable)?,
            learned_comm: kv.get_or("learned_comm", true)?,
        })
    }
}

#[derive(Clone, Debug)]
struct AttentionHead {
    query: Dense,
    key: Dense,
}

/// Shared policy parameters for a team of homogeneous agents.
#[derive(Clone, Debug)]
pub struct AgentCore {
    pub config: AgentConfig,
    pub store: ParamStore,
    embed: Dense,
    gru: GruCell,
    base: Mlp,
    msg_pref: Mlp,
    encoder: Option<Dense>,
    attention: Option<AttentionHead>,
}

/// Message weight fed to the aggregation: either a constant or a tape node.
#[derive(Clone, Copy, Debug)]
pub enum Weight {
    Const(f64),
    Node(NodeId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

impl AgentCore {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, rng: &mut R) -> Result<Self> {
        let h = config.hidden_size;
        let mut store = ParamStore::new();
        let embed = Dense::new(&mut store, "embed", config.obs_dim, h, Activation::Linear, rng)?;
        let gru = GruCell::new(&mut store, "gru", h, h, rng)?;
        let base = Mlp::new(&mut store, "base", &[h, h, config.n_actions], Activation::Linear, rng)?;
        let msg_pref =
            Mlp::new(&mut store, "msg_pref", &[h + config.msg_len, h, config.n_actions], Activation::Linear, rng)?;
        let encoder = if config.learned_comm {
            Some(Dense::new(&mut store, "encoder", 2 * h, config.msg_len, Activation::Tanh, rng)?)
        } else {
            None
        };
        let attention = match config.aggregator {
            Aggregator::Attention => Some(AttentionHead {
                query: Dense::new(&mut store, "attn.query", h, config.msg_len, Activation::Linear, rng)?,
                key: Dense::new(&mut store, "attn.key", config.msg_len, config.msg_len, Activation::Linear, rng)?,
            }),
            Aggregator::Decomposable => None,
        };
        Ok(Self { config, store, embed, gru, base, msg_pref, encoder, attention })
    }

    /// Rebinds a loaded parameter store to the layer layout of `config`.
    pub fn from_store(config: AgentConfig, store: ParamStore) -> Result<Self> {
        let embed = Dense::bind(&store, "embed", Activation::Linear)?;
        let gru = GruCell::bind(&store, "gru")?;
        let base = Mlp::bind(&store, "base", 2, Activation::Linear)?;
        let msg_pref = Mlp::bind(&store, "msg_pref", 2, Activation::Linear)?;
        let encoder = if config.learned_comm { Some(Dense::bind(&store, "encoder", Activation::Tanh)?) } else { None };
        let attention = match config.aggregator {
            Aggregator::Attention => Some(AttentionHead {
                query: Dense::bind(&store, "attn.query", Activation::Linear)?,
                key: Dense::bind(&store, "attn.key", Activation::Linear)?,
            }),
            Aggregator::Decomposable => None,
        };
        if embed.input != config.obs_dim || base.output() != config.n_actions || gru.hidden != config.hidden_size {
            return Err(Error::Format("checkpoint does not match agent config".into()));
        }
        Ok(Self { config, store, embed, gru, base, msg_pref, encoder, attention })
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    pub fn n_actions(&self) -> usize {
        self.config.n_actions
    }

    pub fn msg_len(&self) -> usize {
        self.config.msg_len
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.config.hidden_size]
    }

    // ---- tape-level building blocks ----

    pub fn embed_obs(&self, tape: &mut Tape, o: NodeId) -> Result<NodeId> {
        if tape.value(o).len() != self.config.obs_dim {
            return Err(Error::InvalidInput(format!(
                "observation width {} but agent expects {}",
                tape.value(o).len(),
                self.config.obs_dim
            )));
        }
        self.embed.forward(tape, o)
    }

    pub fn update_hidden_node(&self, tape: &mut Tape, h_prev: NodeId, e: NodeId) -> Result<NodeId> {
        self.gru.forward(tape, h_prev, e)
    }

    pub fn encode_node(&self, tape: &mut Tape, h: NodeId, e: NodeId) -> Result<NodeId> {
        let enc = self
            .encoder
            .as_ref()
            .ok_or_else(|| Error::Usage("agent has no learned message encoder".into()))?;
        let x = tape.concat(&[h, e])?;
        enc.forward(tape, x)
    }

    pub fn base_preference_node(&self, tape: &mut Tape, h: NodeId) -> Result<NodeId> {
        self.base.forward(tape, h)
    }

    pub fn message_preference_node(&self, tape: &mut Tape, e: NodeId, m: NodeId) -> Result<NodeId> {
        if tape.value(m).len() != self.config.msg_len {
            return Err(Error::InvalidInput(format!(
                "message width {} but agent expects {}",
                tape.value(m).len(),
                self.config.msg_len
            )));
        }
        let x = tape.concat(&[e, m])?;
        self.msg_pref.forward(tape, x)
    }

    /// `base(h) + Σ w_j · msg_pref(e, m_j)`. Constant weights must lie in
    /// `[0, 1]`; zero-weight messages are skipped entirely.
    pub fn total_preference_node(
        &self,
        tape: &mut Tape,
        h: NodeId,
        e: NodeId,
        incoming: &[(NodeId, Weight)],
    ) -> Result<NodeId> {
        let base = self.base_preference_node(tape, h)?;
        let mut terms = vec![(base, 1.0)];
        for &(m, w) in incoming {
            match w {
                Weight::Const(w) => {
                    if !(0.0..=1.0).contains(&w) {
                        return Err(Error::InvalidInput(format!("message weight {w} outside [0, 1]")));
                    }
                    if w == 0.0 {
                        continue;
                    }
                    let pref = self.message_preference_node(tape, e, m)?;
                    terms.push((pref, w));
                }
                Weight::Node(wn) => {
                    let pref = self.message_preference_node(tape, e, m)?;
                    let scaled = tape.scale_by(pref, wn)?;
                    terms.push((scaled, 1.0));
                }
            }
        }
        if terms.len() == 1 {
            return Ok(base);
        }
        tape.weighted_sum(&terms)
    }

    /// Attention weights `softmax_j(q(h)·k(m_j)/√d)` as scalar nodes.
    pub fn attention_weights_node(&self, tape: &mut Tape, h: NodeId, msgs: &[NodeId]) -> Result<Vec<NodeId>> {
        let head = self
            .attention
            .as_ref()
            .ok_or_else(|| Error::Usage("agent has no attention head".into()))?;
        if msgs.is_empty() {
            return Ok(Vec::new());
        }
        let q = head.query.forward(tape, h)?;
        let scale = 1.0 / (self.config.msg_len as f64).sqrt();
        let mut scores = Vec::with_capacity(msgs.len());
        for &m in msgs {
            let k = head.key.forward(tape, m)?;
            let d = tape.dot(q, k)?;
            scores.push(tape.affine(d, scale, 0.0)?);
        }
        let s = tape.concat(&scores)?;
        let w = tape.softmax(s)?;
        (0..msgs.len()).map(|j| tape.pick(w, j)).collect()
    }

    /// Preference vector under this core's own aggregation rule. `weights`
    /// applies to the decomposable aggregator only; `None` means all ones.
    pub fn preference_node(
        &self,
        tape: &mut Tape,
        h: NodeId,
        e: NodeId,
        msgs: &[NodeId],
        weights: Option<&[f64]>,
    ) -> Result<NodeId> {
        match self.config.aggregator {
            Aggregator::Decomposable => {
                let incoming: Vec<(NodeId, Weight)> = match weights {
                    Some(w) => {
                        if w.len() != msgs.len() {
                            return Err(Error::InvalidInput("one weight per message required".into()));
                        }
                        msgs.iter().zip(w).map(|(&m, &w)| (m, Weight::Const(w))).collect()
                    }
                    None => msgs.iter().map(|&m| (m, Weight::Const(1.0))).collect(),
                };
                self.total_preference_node(tape, h, e, &incoming)
            }
            Aggregator::Attention => {
                // external weights only act as a mute switch here
                let kept: Vec<NodeId> = match weights {
                    Some(w) if w.len() != msgs.len() => {
                        return Err(Error::InvalidInput("one weight per message required".into()));
                    }
                    Some(w) => msgs.iter().zip(w).filter(|(_, &w)| w != 0.0).map(|(&m, _)| m).collect(),
                    None => msgs.to_vec(),
                };
                let ws = self.attention_weights_node(tape, h, &kept)?;
                let incoming: Vec<(NodeId, Weight)> =
                    kept.iter().zip(&ws).map(|(&m, &w)| (m, Weight::Node(w))).collect();
                self.total_preference_node(tape, h, e, &incoming)
            }
        }
    }

    // ---- value-level conveniences (one throwaway tape per call) ----

    pub fn update_hidden(&self, h_prev: &[f64], o: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let hp = tape.input(h_prev.to_vec())?;
        let on = tape.input(o.to_vec())?;
        let e = self.embed_obs(&mut tape, on)?;
        let h = self.update_hidden_node(&mut tape, hp, e)?;
        Ok(tape.value(h).to_vec())
    }

    pub fn encode_message(&self, h: &[f64], o: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let hn = tape.input(h.to_vec())?;
        let on = tape.input(o.to_vec())?;
        let e = self.embed_obs(&mut tape, on)?;
        let m = self.encode_node(&mut tape, hn, e)?;
        Ok(tape.value(m).to_vec())
    }

    pub fn base_preference(&self, h: &[f64]) -> Result<PreferenceVector> {
        let mut tape = Tape::new(&self.store);
        let hn = tape.input(h.to_vec())?;
        let v = self.base_preference_node(&mut tape, hn)?;
        Ok(tape.value(v).to_vec())
    }

    pub fn message_preference(&self, o: &[f64], m: &[f64]) -> Result<PreferenceVector> {
        let mut tape = Tape::new(&self.store);
        let on = tape.input(o.to_vec())?;
        let e = self.embed_obs(&mut tape, on)?;
        let mn = tape.input(m.to_vec())?;
        let v = self.message_preference_node(&mut tape, e, mn)?;
        Ok(tape.value(v).to_vec())
    }

    /// Decomposable aggregation with explicit weights; null messages are skipped.
    pub fn total_preference(&self, h: &[f64], o: &[f64], incoming: &[(&Message, f64)]) -> Result<PreferenceVector> {
        let mut tape = Tape::new(&self.store);
        let hn = tape.input(h.to_vec())?;
        let on = tape.input(o.to_vec())?;
        let e = self.embed_obs(&mut tape, on)?;
        let mut nodes = Vec::with_capacity(incoming.len());
        for (m, w) in incoming.iter().filter(|(m, _)| !m.null) {
            nodes.push((tape.input(m.payload.clone())?, Weight::Const(*w)));
        }
        let v = self.total_preference_node(&mut tape, hn, e, &nodes)?;
        Ok(tape.value(v).to_vec())
    }

    /// Action preferences under this core's aggregation rule for raw payloads.
    pub fn preference(&self, h: &[f64], o: &[f64], msgs: &[&[f64]], weights: Option<&[f64]>) -> Result<PreferenceVector> {
        let mut tape = Tape::new(&self.store);
        let hn = tape.input(h.to_vec())?;
        let on = tape.input(o.to_vec())?;
        let e = self.embed_obs(&mut tape, on)?;
        let nodes = msgs.iter().map(|m| tape.input(m.to_vec())).collect::<Result<Vec<_>>>()?;
        let v = self.preference_node(&mut tape, hn, e, &nodes, weights)?;
        Ok(tape.value(v).to_vec())
    }

    pub fn attention_weights(&self, h: &[f64], msgs: &[&[f64]]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let hn = tape.input(h.to_vec())?;
        let nodes = msgs.iter().map(|m| tape.input(m.to_vec())).collect::<Result<Vec<_>>>()?;
        let ws = self.attention_weights_node(&mut tape, hn, &nodes)?;
        Ok(ws.iter().map(|&w| tape.scalar(w)).collect())
    }

    /// Preference vector from the attention baseline with null messages removed.
    pub fn attention_aggregate_baseline(&self, h: &[f64], o: &[f64], messages: &[Message]) -> Result<PreferenceVector> {
        let payloads: Vec<&[f64]> = messages.iter().filter(|m| !m.null).map(|m| m.payload.as_slice()).collect();
        let mut tape = Tape::new(&self.store);
        let hn = tape.input(h.to_vec())?;
        let on = tape.input(o.to_vec())?;
        let e = self.embed_obs(&mut tape, on)?;
        let nodes = payloads.iter().map(|m| tape.input(m.to_vec())).collect::<Result<Vec<_>>>()?;
        let ws = self.attention_weights_node(&mut tape, hn, &nodes)?;
        let incoming: Vec<_> = nodes.iter().zip(&ws).map(|(&m, &w)| (m, Weight::Node(w))).collect();
        let v = self.total_preference_node(&mut tape, hn, e, &incoming)?;
        Ok(tape.value(v).to_vec())
    }
}

/// Every agent's outgoing message this step, from the encoder or the
/// environment. Finished agents keep broadcasting.
pub fn broadcast(core: &AgentCore, env: &Env, hs: &[Vec<f64>], obs: &[Vec<f64>]) -> Result<Vec<Option<Vec<f64>>>> {
    if core.config.learned_comm {
        hs.iter().zip(obs).map(|(h, o)| core.encode_message(h, o).map(Some)).collect()
    } else {
        env.predefined_messages()
    }
}

/// Final action distribution.
pub fn decide(v: &[f64]) -> Vec<f64> {
    softmax(v)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn act<R: Rng + ?Sized>(dist: &[f64], rng: &mut R, mode: ActMode) -> ActionId {
    match mode {
        ActMode::Greedy => argmax(dist),
        ActMode::Sample => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut last = 0;
            for (i, &p) in dist.iter().enumerate() {
                if p > 0.0 {
                    last = i;
                }
                acc += p;
                if u < acc {
                    return i;
                }
            }
            last
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(aggregator: Aggregator) -> AgentConfig {
        AgentConfig { obs_dim: 6, n_actions: 4, hidden_size: 8, msg_len: 3, aggregator, learned_comm: true }
    }

    fn core(seed: u64, aggregator: Aggregator) -> AgentCore {
        AgentCore::new(cfg(aggregator), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn zeroed(mut c: AgentCore) -> AgentCore {
        let n = c.store.num_scalars();
        c.store.set_flat_values(&vec![0.0; n]).unwrap();
        c
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_params_keep_zero_hidden_and_message() {
        let c = zeroed(core(0, Aggregator::Decomposable));
        let h = c.update_hidden(&c.initial_hidden(), &[0.3; 6]).unwrap();
        assert!(h.iter().all(|&x| x == 0.0));
        let m = c.encode_message(&[0.5; 8], &[0.3; 6]).unwrap();
        assert!(m.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hidden_update_is_pure_and_checks_width() {
        let c = core(1, Aggregator::Decomposable);
        let a = c.update_hidden(&[0.1; 8], &[0.2; 6]).unwrap();
        let b = c.update_hidden(&[0.1; 8], &[0.2; 6]).unwrap();
        assert_eq!(a, b);
        assert!(matches!(c.update_hidden(&[0.1; 8], &[0.2; 5]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn encoder_is_bounded_and_state_dependent() {
        let c = core(2, Aggregator::Decomposable);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let o = rand_vec(&mut rng, 6);
        let m1 = c.encode_message(&rand_vec(&mut rng, 8), &o).unwrap();
        let m2 = c.encode_message(&rand_vec(&mut rng, 8), &o).unwrap();
        assert!(m1.iter().chain(&m2).all(|x| x.abs() < 1.0));
        assert_ne!(m1, m2);
        let big = c.encode_message(&[50.0; 8], &[1.0; 6]).unwrap();
        assert!(big.iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn total_preference_cases() {
        let c = core(3, Aggregator::Decomposable);
        let h = [0.2; 8];
        let o = [0.1; 6];
        let base = c.base_preference(&h).unwrap();
        assert_eq!(c.total_preference(&h, &o, &[]).unwrap(), base);
        let m = Message::new(1, vec![0.5, -0.5, 0.1]).unwrap();
        // zero weight is bit-identical to no message
        assert_eq!(c.total_preference(&h, &o, &[(&m, 0.0)]).unwrap(), base);
        let null = Message::null(2, 3);
        assert_eq!(c.total_preference(&h, &o, &[(&null, 1.0)]).unwrap(), base);
        assert!(matches!(c.total_preference(&h, &o, &[(&m, 1.5)]), Err(Error::InvalidInput(_))));
        let full = c.total_preference(&h, &o, &[(&m, 1.0)]).unwrap();
        let pref = c.message_preference(&o, &m.payload).unwrap();
        for k in 0..4 {
            assert!((full[k] - base[k] - pref[k]).abs() < 1e-12);
        }
        let default = c.preference(&h, &o, &[&m.payload], None).unwrap();
        assert_eq!(default, full);
    }

    #[test]
    fn message_bounds_enforced() {
        assert!(Message::new(0, vec![1.2]).is_err());
        assert!(Message::new(0, vec![-1.0, 1.0]).is_ok());
    }

    #[test]
    fn aggregation_is_permutation_invariant() {
        let c = core(4, Aggregator::Decomposable);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = rand_vec(&mut rng, 8);
        let o = rand_vec(&mut rng, 6);
        let ms: Vec<Message> = (0..4).map(|j| Message::new(j, rand_vec(&mut rng, 3)).unwrap()).collect();
        let ws = [0.3, 1.0, 0.7, 0.05];
        let fwd: Vec<_> = ms.iter().zip(ws).collect();
        let rev: Vec<_> = ms.iter().zip(ws).rev().collect();
        let a = c.total_preference(&h, &o, &fwd).unwrap();
        let b = c.total_preference(&h, &o, &rev).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn decide_cases() {
        let p = decide(&[0.0; 5]);
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));
        // base [0,0], one message preferring action 0 by 1, weight w
        for (w, expected) in [(1.0, 0.731_058_578_630_004_9), (2.0, 0.880_797_077_977_882_3)] {
            let p = decide(&[w * 1.0, 0.0]);
            let closed = w.exp() / (w.exp() + 1.0);
            assert!((p[0] - closed).abs() < 1e-15);
            assert!((p[0] - expected).abs() < 1e-12);
        }
        let v = [0.3, -2.0, 1.7, 1.1];
        assert_eq!(argmax(&decide(&v)), argmax(&v));
    }

    #[test]
    fn act_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(act(&[1.0, 0.0, 0.0], &mut rng, ActMode::Sample), 0);
        }
        assert_eq!(act(&[0.2, 0.5, 0.3], &mut rng, ActMode::Greedy), 1);
        assert_eq!(act(&[0.4, 0.4, 0.2], &mut rng, ActMode::Greedy), 0);
    }

    #[test]
    fn sampling_matches_distribution() {
        let dist = [0.1, 0.45, 0.05, 0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[act(&dist, &mut rng, ActMode::Sample)] += 1;
        }
        for (c, p) in counts.iter().zip(dist) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn attention_weights_properties() {
        let c = core(6, Aggregator::Attention);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = rand_vec(&mut rng, 8);
        let m = rand_vec(&mut rng, 3);
        assert_eq!(c.attention_weights(&h, &[&m]).unwrap(), vec![1.0]);
        let same = c.attention_weights(&h, &[&m, &m, &m]).unwrap();
        assert!(same.iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));
        let others: Vec<Vec<f64>> = (0..4).map(|_| rand_vec(&mut rng, 3)).collect();
        let refs: Vec<&[f64]> = others.iter().map(|v| v.as_slice()).collect();
        let ws = c.attention_weights(&h, &refs).unwrap();
        assert!((ws.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let msgs: Vec<Message> = others.iter().map(|p| Message::new(0, p.clone()).unwrap()).collect();
        let o = rand_vec(&mut rng, 6);
        let v = c.attention_aggregate_baseline(&h, &o, &msgs).unwrap();
        assert_eq!(v, c.preference(&h, &o, &refs, None).unwrap());
    }

    #[test]
    fn from_store_round_trip() {
        for agg in [Aggregator::Decomposable, Aggregator::Attention] {
            let c = core(7, agg);
            let back = AgentCore::from_store(c.config, c.store.clone()).unwrap();
            let h = [0.3; 8];
            let o = [0.1; 6];
            let m = [0.2, 0.1, -0.4];
            assert_eq!(c.preference(&h, &o, &[&m], None).unwrap(), back.preference(&h, &o, &[&m], None).unwrap());
        }
    }
}
