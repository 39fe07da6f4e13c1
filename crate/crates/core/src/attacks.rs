//! Message-perturbation attacks.
//!
//! Every directed message `j → i` is independently replaced with
//! probability `p`. The white-box attacks score a candidate payload against
//! the receiving policy (all message weights 1, raw values for the other
//! incoming messages) under one of two objectives:
//!
//! * **A**: `Σ_i P̂_i(best_i)`, the probability victims still assign to the
//!   action they would pick on raw messages. The attacker minimises it.
//! * **B**: `Σ_i KL(p̂_i ‖ p_i)` between perturbed and raw decisions. The
//!   attacker maximises it.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::agent::{argmax, decide, AgentCore};
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::ndnet::{NodeId, Tape};
use crate::seeding::derive;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttackKind {
    None,
    Random,
    L2Grad,
    Gaussian,
    MonteCarlo,
    Fgsm,
    Pgd,
}

impl AttackKind {
    pub const ALL: [AttackKind; 7] = [
        AttackKind::None,
        AttackKind::Random,
        AttackKind::L2Grad,
        AttackKind::Gaussian,
        AttackKind::MonteCarlo,
        AttackKind::Fgsm,
        AttackKind::Pgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Random => "random",
            AttackKind::L2Grad => "l2grad",
            AttackKind::Gaussian => "gaussian",
            AttackKind::MonteCarlo => "montecarlo",
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
        }
    }

    pub fn uses_objective(self) -> bool {
        matches!(self, AttackKind::L2Grad | AttackKind::MonteCarlo | AttackKind::Fgsm | AttackKind::Pgd)
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown attack {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Objective {
    A,
    B,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::A => "A",
            Objective::B => "B",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Objective::A),
            "B" | "b" => Ok(Objective::B),
            o => Err(Error::Config(format!("unknown objective {o:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub objective: Objective,
    pub p: f64,
    pub sigma: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub pgd_steps: usize,
    pub mc_candidates: usize,
    pub lambda: f64,
    pub clip: bool,
    /// Radius of the random start used by gradient attacks under objective B,
    /// whose gradient vanishes at the raw message.
    pub b_start: f64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            kind: AttackKind::None,
            objective: Objective::A,
            p: 0.0,
            sigma: 0.5,
            eta: 1.0,
            epsilon: 0.3,
            pgd_steps: 5,
            mc_candidates: 10,
            lambda: 0.5,
            clip: true,
            b_start: 0.05,
        }
    }
}

impl AttackSpec {
    pub fn new(kind: AttackKind, objective: Objective, p: f64) -> Self {
        Self { kind, objective, p, ..Self::default() }
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("attack probability {} outside [0, 1]", self.p)));
        }
        let positive = [self.sigma, self.eta, self.epsilon, self.lambda];
        if positive.iter().any(|&x| !(x > 0.0)) || self.pgd_steps == 0 || self.mc_candidates == 0 {
            return Err(Error::Config("attack strength parameters must be positive".into()));
        }
        if self.b_start < 0.0 {
            return Err(Error::Config("b_start must be non-negative".into()));
        }
        Ok(())
    }

    /// Reads attack keys, each optionally prefixed (`at_` for adversarial training).
    pub fn from_kv(kv: &KvConfig, prefix: &str) -> Result<Self> {
        let d = Self::default();
        let k = |name: &str| format!("{prefix}{name}");
        let spec = Self {
            kind: kv.get_or(&k("attack"), d.kind)?,
            objective: kv.get_or(&k("objective"), d.objective)?,
            p: kv.get_or(&k("p"), d.p)?,
            sigma: kv.get_or(&k("sigma"), d.sigma)?,
            eta: kv.get_or(&k("eta"), d.eta)?,
            epsilon: kv.get_or(&k("epsilon"), d.epsilon)?,
            pgd_steps: kv.get_or(&k("pgd_steps"), d.pgd_steps)?,
            mc_candidates: kv.get_or(&k("mc_candidates"), d.mc_candidates)?,
            lambda: kv.get_or(&k("lambda"), d.lambda)?,
            clip: kv.get_or(&k("clip"), d.clip)?,
            b_start: kv.get_or(&k("b_start"), d.b_start)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn write_kv(&self, kv: &mut KvConfig, prefix: &str) {
        let k = |name: &str| format!("{prefix}{name}");
        kv.set(&k("attack"), self.kind);
        kv.set(&k("objective"), self.objective);
        kv.set(&k("p"), self.p);
        kv.set(&k("sigma"), self.sigma);
        kv.set(&k("eta"), self.eta);
        kv.set(&k("epsilon"), self.epsilon);
        kv.set(&k("pgd_steps"), self.pgd_steps);
        kv.set(&k("mc_candidates"), self.mc_candidates);
        kv.set(&k("lambda"), self.lambda);
        kv.set(&k("clip"), self.clip);
        kv.set(&k("b_start"), self.b_start);
    }
}

/// One receiving agent as seen by the attacker.
#[derive(Clone, Debug)]
pub struct Victim {
    pub h: Vec<f64>,
    pub obs: Vec<f64>,
    /// raw payloads of the receiver's other incoming messages
    pub others: Vec<Vec<f64>>,
    pub best_action: usize,
    pub raw_dist: Vec<f64>,
}

/// Everything needed to evaluate and differentiate an attack objective for
/// one sender's message.
#[derive(Clone, Debug)]
pub struct VictimView<'a> {
    pub core: &'a AgentCore,
    pub sender: usize,
    pub victims: Vec<Victim>,
}

impl<'a> VictimView<'a> {
    /// `receivers` holds `(id, h, obs, other incoming payloads)`; the sender is excluded.
    pub fn new(
        core: &'a AgentCore,
        sender: usize,
        raw: &[f64],
        receivers: Vec<(usize, Vec<f64>, Vec<f64>, Vec<Vec<f64>>)>,
    ) -> Result<Self> {
        let mut victims = Vec::with_capacity(receivers.len());
        for (id, h, obs, others) in receivers {
            if id == sender {
                continue;
            }
            let mut msgs: Vec<&[f64]> = others.iter().map(|m| m.as_slice()).collect();
            msgs.push(raw);
            let v = core.preference(&h, &obs, &msgs, None)?;
            let raw_dist = decide(&v);
            victims.push(Victim { best_action: argmax(&raw_dist), raw_dist, h, obs, others });
        }
        Ok(Self { core, sender, victims })
    }

    fn objective_on_tape(&self, tape: &mut Tape, cand: NodeId, objective: Objective) -> Result<NodeId> {
        let mut per_victim = Vec::with_capacity(self.victims.len());
        for v in &self.victims {
            let h = tape.input(v.h.clone())?;
            let o = tape.input(v.obs.clone())?;
            let e = self.core.embed_obs(tape, o)?;
            let mut msgs = v.others.iter().map(|m| tape.input(m.clone())).collect::<Result<Vec<_>>>()?;
            msgs.push(cand);
            let pref = self.core.preference_node(tape, h, e, &msgs, None)?;
            let term = match objective {
                Objective::A => {
                    let p = tape.softmax(pref)?;
                    tape.pick(p, v.best_action)?
                }
                Objective::B => {
                    let lp = tape.log_softmax(pref)?;
                    let p = tape.softmax(pref)?;
                    let log_raw = tape.input(v.raw_dist.iter().map(|x| x.max(f64::MIN_POSITIVE).ln()).collect())?;
                    let diff = tape.sub(lp, log_raw)?;
                    tape.dot(p, diff)?
                }
            };
            per_victim.push((term, 1.0));
        }
        if per_victim.is_empty() {
            return Err(Error::InvalidInput("attack view has no victims".into()));
        }
        tape.weighted_sum(&per_victim)
    }

    /// Objective value and its gradient with respect to the candidate payload.
    pub fn objective_with_grad(&self, candidate: &[f64], objective: Objective) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new(&self.core.store);
        let cand = tape.input(candidate.to_vec())?;
        let out = self.objective_on_tape(&mut tape, cand, objective)?;
        let value = clamp_kl(tape.scalar(out), objective);
        let g = tape.backward(out, &[1.0])?;
        Ok((value, g.wrt(cand, candidate.len())))
    }

    pub fn objective(&self, candidate: &[f64], objective: Objective) -> Result<f64> {
        let mut tape = Tape::new(&self.core.store);
        let cand = tape.input(candidate.to_vec())?;
        let out = self.objective_on_tape(&mut tape, cand, objective)?;
        Ok(clamp_kl(tape.scalar(out), objective))
    }

    /// Gradient of the quantity the attacker increases: `-A` or `B`.
    fn ascent_gradient(&self, x: &[f64], objective: Objective) -> Result<Vec<f64>> {
        let (_, g) = self.objective_with_grad(x, objective)?;
        Ok(match objective {
            Objective::A => g.into_iter().map(|v| -v).collect(),
            Objective::B => g,
        })
    }
}

/// A KL sum is non-negative; rounding can leave it at about -1e-16 when the
/// candidate equals the raw message.
fn clamp_kl(v: f64, objective: Objective) -> f64 {
    match objective {
        Objective::A => v,
        Objective::B => v.max(0.0),
    }
}

pub fn objective_a(view: &VictimView, candidate: &[f64]) -> Result<f64> {
    view.objective(candidate, Objective::A)
}

pub fn objective_b(view: &VictimView, candidate: &[f64]) -> Result<f64> {
    view.objective(candidate, Objective::B)
}

fn clip_unit(m: &mut [f64]) {
    m.iter_mut().for_each(|x| *x = x.clamp(-1.0, 1.0));
}

/// `sign` with `sign(0) = 0`.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Attack I: i.i.d. uniform components on `(-1, 1)`.
pub fn attack_random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len)
        .map(|_| loop {
            let x = rng.gen_range(-1.0..1.0);
            if x != -1.0 {
                break x;
            }
        })
        .collect()
}

/// Attack II: one unit-norm step of length `lambda` that decreases objective A.
pub fn attack_l2grad(view: &VictimView, m: &[f64], lambda: f64, clip: bool) -> Result<Vec<f64>> {
    let (_, g) = view.objective_with_grad(m, Objective::A)?;
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(m.to_vec());
    }
    let mut out: Vec<f64> = m.iter().zip(&g).map(|(x, gi)| x - lambda * gi / norm).collect();
    if clip {
        clip_unit(&mut out);
    }
    Ok(out)
}

/// Attack III: additive Gaussian noise.
pub fn attack_gaussian<R: Rng + ?Sized>(m: &[f64], sigma: f64, clip: bool, rng: &mut R) -> Vec<f64> {
    let mut out: Vec<f64> = m
        .iter()
        .map(|x| {
            let z: f64 = rng.sample(StandardNormal);
            x + sigma * z
        })
        .collect();
    if clip {
        clip_unit(&mut out);
    }
    out
}

/// Attack IV: best of `n` uniform candidates under `objective`.
pub fn attack_montecarlo<R: Rng + ?Sized>(
    view: &VictimView,
    len: usize,
    objective: Objective,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..n.max(1) {
        let cand = attack_random(len, rng);
        let v = view.objective(&cand, objective)?;
        let better = match (&best, objective) {
            (None, _) => true,
            (Some((b, _)), Objective::A) => v < *b,
            (Some((b, _)), Objective::B) => v > *b,
        };
        if better {
            best = Some((v, cand));
        }
    }
    Ok(best.map(|(_, c)| c).unwrap_or_default())
}

fn signed_step<R: Rng + ?Sized>(
    view: &VictimView,
    x: &[f64],
    step: f64,
    objective: Objective,
    b_start: f64,
    clip: bool,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let probe: Vec<f64> = if objective == Objective::B && b_start > 0.0 {
        x.iter().map(|v| v + rng.gen_range(-b_start..=b_start)).collect()
    } else {
        x.to_vec()
    };
    let g = view.ascent_gradient(&probe, objective)?;
    let mut out: Vec<f64> = x.iter().zip(&g).map(|(v, gi)| v + step * sign(*gi)).collect();
    if clip {
        clip_unit(&mut out);
    }
    Ok(out)
}

/// Attack V: `m + η·sign(∇f)`, ascending the attacker's objective.
pub fn attack_fgsm<R: Rng + ?Sized>(
    view: &VictimView,
    m: &[f64],
    eta: f64,
    objective: Objective,
    spec: &AttackSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    signed_step(view, m, eta, objective, spec.b_start, spec.clip, rng)
}

/// Attack VI: `steps` iterations of the signed step with size `epsilon`.
pub fn attack_pgd<R: Rng + ?Sized>(
    view: &VictimView,
    m: &[f64],
    epsilon: f64,
    steps: usize,
    objective: Objective,
    spec: &AttackSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut x = m.to_vec();
    for i in 0..steps {
        // only the first iterate sits at the raw message, where B has no gradient
        let b_start = if i == 0 { spec.b_start } else { 0.0 };
        x = signed_step(view, &x, epsilon, objective, b_start, spec.clip, rng)?;
    }
    Ok(x)
}

/// Produces the perturbed payload for one message according to `spec.kind`.
pub fn perturb<R: Rng + ?Sized>(view: Option<&VictimView>, m: &[f64], spec: &AttackSpec, rng: &mut R) -> Result<Vec<f64>> {
    let need_view = || view.ok_or_else(|| Error::Usage(format!("{} attack needs a victim view", spec.kind)));
    match spec.kind {
        AttackKind::None => Ok(m.to_vec()),
        AttackKind::Random => Ok(attack_random(m.len(), rng)),
        AttackKind::Gaussian => Ok(attack_gaussian(m, spec.sigma, spec.clip, rng)),
        AttackKind::L2Grad => attack_l2grad(need_view()?, m, spec.lambda, spec.clip),
        AttackKind::MonteCarlo => attack_montecarlo(need_view()?, m.len(), spec.objective, spec.mc_candidates, rng),
        AttackKind::Fgsm => attack_fgsm(need_view()?, m, spec.eta, spec.objective, spec, rng),
        AttackKind::Pgd => attack_pgd(need_view()?, m, spec.epsilon, spec.pgd_steps, spec.objective, spec, rng),
    }
}

/// Independent RNG for one directed message at one timestep.
pub fn message_rng(episode_seed: u64, t: usize, sender: usize, receiver: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(episode_seed ^ 0xA77A_C4ED, &[t as u64, sender as u64, receiver as u64]))
}

/// Receiver-side state the channel needs to build victim views.
#[derive(Clone, Debug)]
pub struct ReceiverState {
    pub h: Vec<f64>,
    pub obs: Vec<f64>,
    /// receivers that do not act are never attacked
    pub active: bool,
}

/// Messages as delivered, indexed `[receiver][sender]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Delivery {
    pub messages: Vec<Vec<Option<Vec<f64>>>>,
    /// metrics only; never shown to agents
    pub perturbed: Vec<Vec<bool>>,
}

impl Delivery {
    /// Non-null incoming payloads for `receiver`, with their senders, in sender order.
    pub fn incoming(&self, receiver: usize) -> Vec<(usize, &[f64])> {
        self.messages[receiver]
            .iter()
            .enumerate()
            .filter_map(|(j, m)| m.as_deref().map(|m| (j, m)))
            .collect()
    }
}

/// Delivers every sender's broadcast to every other agent, perturbing each
/// non-null directed message independently with probability `spec.p`.
pub fn apply_channel(
    core: &AgentCore,
    sent: &[Option<Vec<f64>>],
    receivers: &[ReceiverState],
    spec: &AttackSpec,
    episode_seed: u64,
    t: usize,
) -> Result<Delivery> {
    let n = sent.len();
    let mut messages = vec![vec![None; n]; n];
    let mut perturbed = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                messages[i][j] = sent[j].clone();
            }
        }
    }
    if spec.kind == AttackKind::None || spec.p == 0.0 {
        return Ok(Delivery { messages, perturbed });
    }
    for (i, recv) in receivers.iter().enumerate() {
        if !recv.active {
            continue;
        }
        for j in 0..n {
            let Some(raw) = sent[j].as_ref().filter(|_| i != j) else { continue };
            let mut rng = message_rng(episode_seed, t, j, i);
            if rng.gen::<f64>() >= spec.p {
                continue;
            }
            let view = if spec.kind.uses_objective() {
                let others: Vec<Vec<f64>> = (0..n)
                    .filter(|&k| k != i && k != j)
                    .filter_map(|k| sent[k].clone())
                    .collect();
                Some(VictimView::new(core, j, raw, vec![(i, recv.h.clone(), recv.obs.clone(), others)])?)
            } else {
                None
            };
            messages[i][j] = Some(perturb(view.as_ref(), raw, spec, &mut rng)?);
            perturbed[i][j] = true;
        }
    }
    Ok(Delivery { messages, perturbed })
}
