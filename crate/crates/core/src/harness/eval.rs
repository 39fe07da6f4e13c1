//! Greedy evaluation under attack, with optional active defense.

use std::path::PathBuf;

use crate::agent::{argmax, broadcast, AgentCore, Aggregator, Defense};
use crate::attacks::{apply_channel, AttackKind, AttackSpec, Delivery, ReceiverState};
use crate::config::KvConfig;
use crate::envs::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::reliability::{defense_weights, Estimator, EstimatorMetrics};
use crate::seeding::derive;
use crate::training::Bundle;

use super::results::{round_sig, ResultRow};

/// Fig.-style default grid of attack probabilities.
pub const DEFAULT_P_GRID: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSpec {
    pub bundle: PathBuf,
    /// overrides the bundle's environment when set
    pub env: Option<EnvConfig>,
    pub framework: String,
    pub defense: Defense,
    /// attack template; `kind` and `p` are swept
    pub attack: AttackSpec,
    pub attacks: Vec<AttackKind>,
    pub p_grid: Vec<f64>,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
}

fn parse_list<T: std::str::FromStr>(raw: &str, key: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Config(format!("cannot parse {s:?} in {key}"))))
        .collect()
}

pub(crate) fn list_or<T: std::str::FromStr>(kv: &KvConfig, key: &str, default: Vec<T>) -> Result<Vec<T>> {
    match kv.raw(key) {
        Some(raw) => parse_list(raw, key),
        None => Ok(default),
    }
}

impl EvalSpec {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let defense: Defense = kv.get_or("defense", Defense::None)?;
        let spec = Self {
            bundle: kv.get_or("bundle", PathBuf::from("bundle"))?,
            env: if kv.raw("task").is_some() { Some(EnvConfig::from_kv(kv)?) } else { None },
            framework: kv.get_or("framework", default_framework(defense))?,
            defense,
            attack: AttackSpec::from_kv(kv, "")?,
            attacks: list_or(kv, "attacks", vec![AttackKind::Random, AttackKind::Gaussian, AttackKind::Fgsm, AttackKind::Pgd])?,
            p_grid: list_or(kv, "p_grid", DEFAULT_P_GRID.to_vec())?,
            episodes: kv.get_or("episodes", 200)?,
            seeds: list_or(kv, "seeds", vec![kv.get_or("seed", 0u64)?])?,
            output: kv.get_or("output", PathBuf::from("results.csv"))?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be at least 1".into()));
        }
        if let Some(p) = self.p_grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("attack probability {p} outside [0, 1]")));
        }
        if self.attacks.is_empty() || self.p_grid.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("attacks, p_grid and seeds must be non-empty".into()));
        }
        Ok(())
    }
}

pub fn default_framework(defense: Defense) -> String {
    match defense {
        Defense::None => "dpn",
        Defense::Re => "dpn+re",
        Defense::Ire => "dpn+ire",
        Defense::Mute => "dpn+mute",
    }
    .to_string()
}

/// Label used in result rows for a policy and defense.
pub fn framework_name(core: &AgentCore, defense: Defense) -> String {
    match (core.config.aggregator, defense) {
        (Aggregator::Attention, Defense::None) => "attention".into(),
        (Aggregator::Attention, d) => format!("attention+{d}"),
        (Aggregator::Decomposable, d) => default_framework(d),
    }
}

/// Episode lengths under one attack setting.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub lengths: Vec<usize>,
}

impl EpisodeSummary {
    pub fn mean(&self) -> f64 {
        self.lengths.iter().sum::<usize>() as f64 / self.lengths.len().max(1) as f64
    }

    /// Sample standard deviation over `√n`; zero for a single episode.
    pub fn stderr(&self) -> f64 {
        let n = self.lengths.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        let var = self.lengths.iter().map(|&l| (l as f64 - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    }
}

/// Seed of evaluation episode `k`; shared by every attack setting so that
/// settings differ only in the channel.
pub fn eval_episode_seed(seed: u64, k: usize) -> u64 {
    derive(seed, &[0xE7A1, k as u64])
}

/// One greedy episode; returns its length and the actions taken per step.
pub fn run_episode(
    env: &mut Env,
    core: &AgentCore,
    estimator: Option<&Estimator>,
    attack: &AttackSpec,
    defense: Defense,
    ep_seed: u64,
) -> Result<(usize, Vec<Vec<usize>>)> {
    run_episode_observed(env, core, estimator, attack, defense, ep_seed, |_, _, _| {})
}

/// `run_episode` that also hands each step's pre-step environment, delivery
/// and chosen actions to `observe`.
pub fn run_episode_observed<F>(
    env: &mut Env,
    core: &AgentCore,
    estimator: Option<&Estimator>,
    attack: &AttackSpec,
    defense: Defense,
    ep_seed: u64,
    mut observe: F,
) -> Result<(usize, Vec<Vec<usize>>)>
where
    F: FnMut(&Env, &Delivery, &[usize]),
{
    let n = env.n_agents();
    let mut obs = env.reset(ep_seed);
    let mut hs = vec![core.initial_hidden(); n];
    let mut trace = Vec::new();
    while !env.is_done() {
        for i in 0..n {
            hs[i] = core.update_hidden(&hs[i], &obs[i])?;
        }
        let sent = broadcast(core, env, &hs, &obs)?;
        let receivers: Vec<ReceiverState> = (0..n)
            .map(|i| ReceiverState { h: hs[i].clone(), obs: obs[i].clone(), active: env.acts(i) })
            .collect();
        let delivery = apply_channel(core, &sent, &receivers, attack, ep_seed, env.timestep())?;
        let mut actions = vec![0; n];
        for i in (0..n).filter(|&i| env.acts(i)) {
            let incoming = delivery.incoming(i);
            let delivered: Vec<&[f64]> = incoming.iter().map(|&(_, m)| m).collect();
            let raw: Vec<&[f64]> = incoming
                .iter()
                .map(|&(j, _)| sent[j].as_deref().expect("delivered message has a raw original"))
                .collect();
            let weights = defense_weights(defense, core, estimator, &hs[i], &obs[i], &delivered, &raw)?;
            let pref = core.preference(&hs[i], &obs[i], &delivered, Some(&weights))?;
            actions[i] = argmax(&pref);
        }
        observe(env, &delivery, &actions);
        trace.push(actions.clone());
        obs = env.step(&actions)?.observations;
    }
    Ok((env.timestep(), trace))
}

pub fn run_episodes(
    env_cfg: &EnvConfig,
    core: &AgentCore,
    estimator: Option<&Estimator>,
    attack: &AttackSpec,
    defense: Defense,
    episodes: usize,
    seed: u64,
) -> Result<EpisodeSummary> {
    if defense == Defense::Re && estimator.is_none() {
        return Err(Error::Usage("re defense needs a bundle with an estimator".into()));
    }
    let mut env = Env::new(env_cfg.clone())?;
    let lengths = (0..episodes)
        .map(|k| run_episode(&mut env, core, estimator, attack, defense, eval_episode_seed(seed, k)).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(EpisodeSummary { lengths })
}

#[allow(clippy::too_many_arguments)]
pub fn result_row(
    framework: &str,
    env: &EnvConfig,
    attack: &AttackSpec,
    seed: u64,
    summary: &EpisodeSummary,
    metrics: Option<&EstimatorMetrics>,
) -> ResultRow {
    ResultRow {
        framework: framework.to_string(),
        task: env.task.to_string(),
        attack: attack.kind,
        objective: attack.objective,
        p: round_sig(attack.p),
        seed,
        episodes: summary.lengths.len(),
        mean_timesteps: round_sig(summary.mean()),
        stderr: round_sig(summary.stderr()),
        recall: metrics.map(|m| round_sig(m.recall)),
        precision: metrics.map(|m| round_sig(m.precision)),
    }
}

/// Sweeps attacks × p × seeds for one loaded bundle.
pub fn evaluate_bundle(bundle: &Bundle, spec: &EvalSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let env = spec.env.clone().unwrap_or_else(|| bundle.env.clone());
    if bundle.core.config.aggregator == Aggregator::Attention && matches!(spec.defense, Defense::Re | Defense::Ire) {
        return Err(Error::Usage("re and ire defenses need a decomposable policy".into()));
    }
    let metrics = if spec.defense == Defense::Re { bundle.estimator_metrics.as_ref() } else { None };
    let mut rows = Vec::new();
    for &kind in &spec.attacks {
        for &p in &spec.p_grid {
            let attack = AttackSpec { kind, p, ..spec.attack.clone() };
            for &seed in &spec.seeds {
                let summary =
                    run_episodes(&env, &bundle.core, bundle.estimator.as_ref(), &attack, spec.defense, spec.episodes, seed)?;
                log::info!("{} {kind} p={p} seed={seed}: {:.2}", spec.framework, summary.mean());
                rows.push(result_row(&spec.framework, &env, &attack, seed, &summary, metrics));
            }
        }
    }
    Ok(rows)
}

pub fn evaluate(spec: &EvalSpec) -> Result<Vec<ResultRow>> {
    let bundle = Bundle::load(&spec.bundle)?;
    evaluate_bundle(&bundle, spec)
}

/// DPN, DPN+RE, DPN+IRE and the attention baseline at one attack probability.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationSpec {
    pub dpn_bundle: PathBuf,
    pub attention_bundle: PathBuf,
    pub attack: AttackSpec,
    pub attacks: Vec<AttackKind>,
    pub p: f64,
    pub episodes: usize,
    pub seed: u64,
    pub output: PathBuf,
}

impl AblationSpec {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let spec = Self {
            dpn_bundle: kv.get_or("bundle", PathBuf::from("bundle"))?,
            attention_bundle: kv.get_or("attention_bundle", PathBuf::from("bundle-attention"))?,
            attack: AttackSpec::from_kv(kv, "")?,
            attacks: list_or(kv, "attacks", vec![AttackKind::Random, AttackKind::Gaussian, AttackKind::Fgsm, AttackKind::Pgd])?,
            p: kv.get_or("p", 0.3)?,
            episodes: kv.get_or("episodes", 200)?,
            seed: kv.get_or("seed", 0)?,
            output: kv.get_or("output", PathBuf::from("ablation.csv"))?,
        };
        if spec.episodes == 0 || !(0.0..=1.0).contains(&spec.p) || spec.attacks.is_empty() {
            return Err(Error::Config("ablation needs episodes >= 1, p in [0, 1] and at least one attack".into()));
        }
        Ok(spec)
    }
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            dpn_bundle: PathBuf::from("bundle"),
            attention_bundle: PathBuf::from("bundle-attention"),
            attack: AttackSpec::default(),
            attacks: vec![AttackKind::Random, AttackKind::Gaussian, AttackKind::Fgsm, AttackKind::Pgd],
            p: 0.3,
            episodes: 200,
            seed: 0,
            output: PathBuf::from("ablation.csv"),
        }
    }
}

/// Four rows per attack: dpn, dpn+re, dpn+ire, attention.
pub fn ablation_bundles(dpn: &Bundle, attention: &Bundle, env: &EnvConfig, spec: &AblationSpec) -> Result<Vec<ResultRow>> {
    if dpn.estimator.is_none() {
        return Err(Error::Usage("ablation needs a decomposable bundle with an estimator".into()));
    }
    if attention.core.config.aggregator != Aggregator::Attention {
        return Err(Error::Usage("attention_bundle does not hold an attention policy".into()));
    }
    let mut rows = Vec::new();
    for &kind in &spec.attacks {
        let attack = AttackSpec { kind, p: spec.p, ..spec.attack.clone() };
        for (bundle, defense) in
            [(dpn, Defense::None), (dpn, Defense::Re), (dpn, Defense::Ire), (attention, Defense::None)]
        {
            let summary =
                run_episodes(env, &bundle.core, bundle.estimator.as_ref(), &attack, defense, spec.episodes, spec.seed)?;
            let metrics = if bundle.estimator.is_some() { bundle.estimator_metrics.as_ref() } else { None };
            rows.push(result_row(&framework_name(&bundle.core, defense), env, &attack, spec.seed, &summary, metrics));
        }
    }
    Ok(rows)
}

pub fn ablation(spec: &AblationSpec) -> Result<Vec<ResultRow>> {
    let dpn = Bundle::load(&spec.dpn_bundle)?;
    let attention = Bundle::load(&spec.attention_bundle)?;
    ablation_bundles(&dpn, &attention, &dpn.env.clone(), spec)
}
