//! Browser bindings: play an episode through the attacked channel, perturb a
//! single message, and sweep one message's aggregation weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

use admac::agent::{broadcast, decide, AgentConfig, AgentCore, Aggregator, Defense};
use admac::attacks::{perturb, AttackKind, AttackSpec, Objective, VictimView};
use admac::envs::{Env, EnvConfig, TaskKind};
use admac::harness::run_episode_observed;
use admac::reliability::{label_message, Estimator, Label};
use admac::training::Bundle;

fn js(e: admac::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    env: EnvConfig,
    core: AgentCore,
    estimator: Option<Estimator>,
    trained: bool,
}

#[wasm_bindgen]
impl Demo {
    /// Randomly initialised decomposable policy on a small task instance.
    #[wasm_bindgen(constructor)]
    pub fn new(task: &str, seed: u64) -> Result<Demo, JsError> {
        let task: TaskKind = task.parse().map_err(js)?;
        let mut env = EnvConfig::new(task);
        if task == TaskKind::PredatorPrey {
            env.grid_size = 7;
            env.n_agents = 3;
        }
        let cfg = AgentConfig::for_env(&env, 32, 8, Aggregator::Decomposable);
        let core = AgentCore::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(js)?;
        Ok(Demo { env, core, estimator: None, trained: false })
    }

    /// Loads a trained bundle from the contents of its four files.
    #[wasm_bindgen(js_name = fromBundle)]
    pub fn from_bundle(meta: &str, policy: &[u8], value: &[u8], estimator: Option<Vec<u8>>) -> Result<Demo, JsError> {
        let b = Bundle::from_parts(meta, policy, value, estimator.as_deref()).map_err(js)?;
        Ok(Demo { env: b.env, core: b.core, estimator: b.estimator, trained: true })
    }

    pub fn info(&self) -> String {
        json!({
            "task": self.env.task.to_string(),
            "agents": self.env.n_agents,
            "t_max": self.env.t_max,
            "grid": self.env.grid_size,
            "aggregator": self.core.config.aggregator.to_string(),
            "hidden": self.core.hidden_size(),
            "msg_len": self.core.msg_len(),
            "estimator": self.estimator.is_some(),
            "trained": self.trained,
        })
        .to_string()
    }

    /// Greedy episode under the given attack and defense. Returns every
    /// frame's agent and target positions plus the perturbed message count.
    pub fn episode(&self, attack: &str, objective: &str, p: f64, defense: &str, seed: u64) -> Result<String, JsError> {
        let kind: AttackKind = attack.parse().map_err(js)?;
        let objective: Objective = objective.parse().map_err(js)?;
        let defense: Defense = defense.parse().map_err(js)?;
        let spec = AttackSpec::new(kind, objective, p);
        spec.validate().map_err(js)?;
        let mut env = Env::new(self.env.clone()).map_err(js)?;
        let mut frames = Vec::new();
        let (length, _) =
            run_episode_observed(&mut env, &self.core, self.estimator.as_ref(), &spec, defense, seed, |e, d, a| {
                let hit: usize = d.perturbed.iter().map(|row| row.iter().filter(|&&x| x).count()).sum();
                frames.push(json!({
                    "agents": e.agent_positions(),
                    "targets": e.target_positions(),
                    "finished": e.finished(),
                    "actions": a,
                    "perturbed": hit,
                }));
            })
            .map_err(js)?;
        Ok(json!({ "length": length, "frames": frames }).to_string())
    }

    /// One sender's message to one receiver after a few random steps, before
    /// and after the attack, with the receiver's action distributions.
    pub fn perturb(&self, attack: &str, objective: &str, seed: u64) -> Result<String, JsError> {
        let kind: AttackKind = attack.parse().map_err(js)?;
        let objective: Objective = objective.parse().map_err(js)?;
        let spec = AttackSpec::new(kind, objective, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = Env::new(self.env.clone()).map_err(js)?;
        let n = env.n_agents();
        let mut obs = env.reset(seed);
        let mut hs = vec![self.core.initial_hidden(); n];
        let warmup = rng.gen_range(1..6);
        for step in 0..warmup {
            for i in 0..n {
                hs[i] = self.core.update_hidden(&hs[i], &obs[i]).map_err(js)?;
            }
            if step + 1 == warmup || env.is_done() {
                break;
            }
            let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..self.env.n_actions())).collect();
            obs = env.step(&actions).map_err(js)?.observations;
        }
        let sent = broadcast(&self.core, &env, &hs, &obs).map_err(js)?;
        let (sender, receiver) = (0, 1);
        let raw = sent[sender].clone().ok_or_else(|| JsError::new("sender has no message"))?;
        let others: Vec<Vec<f64>> =
            (0..n).filter(|&k| k != sender && k != receiver).filter_map(|k| sent[k].clone()).collect();
        let view = VictimView::new(&self.core, sender, &raw, vec![(receiver, hs[receiver].clone(), obs[receiver].clone(), others.clone())])
            .map_err(js)?;
        let attacked = perturb(Some(&view), &raw, &spec, &mut rng).map_err(js)?;
        let dist = |m: &[f64]| -> Result<Vec<f64>, JsError> {
            let mut msgs: Vec<&[f64]> = others.iter().map(|m| m.as_slice()).collect();
            msgs.push(m);
            Ok(decide(&self.core.preference(&hs[receiver], &obs[receiver], &msgs, None).map_err(js)?))
        };
        let label = |m: &[f64]| -> Result<&'static str, JsError> {
            let mut msgs: Vec<&[f64]> = others.iter().map(|m| m.as_slice()).collect();
            msgs.push(&raw);
            let l = label_message(&self.core, &obs[receiver], &hs[receiver], m, &msgs).map_err(js)?;
            Ok(if l == Label::Reliable { "reliable" } else { "unreliable" })
        };
        Ok(json!({
            "raw": raw,
            "attacked": attacked,
            "best_action": view.victims[0].best_action,
            "dist_raw": dist(&raw)?,
            "dist_attacked": dist(&attacked)?,
            "objective_raw": view.objective(&raw, objective).map_err(js)?,
            "objective_attacked": view.objective(&attacked, objective).map_err(js)?,
            "label_raw": label(&raw)?,
            "label_attacked": label(&attacked)?,
        })
        .to_string())
    }

    /// Decide-probabilities of the message's most and least preferred actions
    /// as its weight moves over `[0, w_max]`, for a random hidden state,
    /// observation and message.
    #[wasm_bindgen(js_name = weightSweep)]
    pub fn weight_sweep(&self, seed: u64, w_max: f64, steps: usize) -> Result<String, JsError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sample = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let h = sample(self.core.hidden_size());
        let o = sample(self.env.obs_dim());
        let m = sample(self.core.msg_len());
        let base = self.core.base_preference(&h).map_err(js)?;
        let pref = self.core.message_preference(&o, &m).map_err(js)?;
        let k_max = admac::agent::argmax(&pref);
        let k_min = admac::agent::argmax(&pref.iter().map(|v| -v).collect::<Vec<_>>());
        let steps = steps.max(1);
        let mut rows = Vec::with_capacity(steps + 1);
        for s in 0..=steps {
            let w = w_max * s as f64 / steps as f64;
            let v: Vec<f64> = base.iter().zip(&pref).map(|(b, q)| b + w * q).collect();
            let d = decide(&v);
            rows.push(json!({ "w": w, "p_max": d[k_max], "p_min": d[k_min] }));
        }
        Ok(json!({ "k_max": k_max, "k_min": k_min, "sweep": rows }).to_string())
    }
}
