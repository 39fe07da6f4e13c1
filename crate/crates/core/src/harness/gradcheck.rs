//! Finite-difference checks for every differentiable component, run on
//! freshly sampled small networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{AgentConfig, AgentCore, Aggregator};
use crate::attacks::{Objective, VictimView};
use crate::error::Result;
use crate::ndnet::{grad_check, grad_check_store, Activation, Dense, GruCell, ParamGrads, ParamStore, Tape};
use crate::reliability::{Estimator, EstimatorConfig, Label, ReliabilitySample};
use crate::seeding::derive;
use crate::training::{log_prob_and_grad, team_log_prob_and_grad};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub cases: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

pub const NET_TOL: f64 = 1e-5;
pub const ATTACK_TOL: f64 = 1e-4;
const KINK_MARGIN: f64 = 1e-3;

fn rv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dense_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (i, o) = (rng.gen_range(1..6), rng.gen_range(1..6));
    let act = [Activation::Linear, Activation::Relu, Activation::Tanh][rng.gen_range(0..3)];
    let mut store = ParamStore::new();
    let layer = Dense::new(&mut store, "d", i, o, act, rng)?;
    let x = rv(rng, i);
    let c = rv(rng, o);
    let run = |s: &ParamStore, x: &[f64]| -> Result<(f64, ParamGrads, Vec<f64>)> {
        let mut tape = Tape::new(s);
        let xn = tape.input(x.to_vec())?;
        let y = layer.forward(&mut tape, xn)?;
        let cn = tape.input(c.clone())?;
        let out = tape.dot(y, cn)?;
        let v = tape.scalar(out);
        let g = tape.backward(out, &[1.0])?;
        Ok((v, g.params.clone(), g.wrt(xn, x.len())))
    };
    let p_err = grad_check_store(&store, |s| run(s, &x).map(|r| (r.0, r.1)))?;
    let (_, _, gx) = run(&store, &x)?;
    let x_err = grad_check(|xs| run(&store, xs).map(|r| r.0).unwrap_or(f64::NAN), &x, &gx);
    Ok(p_err.max(x_err))
}

fn gru_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (i, h) = (rng.gen_range(1..5), rng.gen_range(1..5));
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, "g", i, h, rng)?;
    let x = rv(rng, i);
    let h0 = rv(rng, h);
    let c = rv(rng, h);
    let run = |s: &ParamStore, x: &[f64], h0: &[f64]| -> Result<(f64, ParamGrads, Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new(s);
        let xn = tape.input(x.to_vec())?;
        let hn = tape.input(h0.to_vec())?;
        let h1 = cell.forward(&mut tape, hn, xn)?;
        // two steps, so the recurrence itself is differentiated
        let h2 = cell.forward(&mut tape, h1, xn)?;
        let cn = tape.input(c.clone())?;
        let out = tape.dot(h2, cn)?;
        let v = tape.scalar(out);
        let g = tape.backward(out, &[1.0])?;
        Ok((v, g.params.clone(), g.wrt(xn, x.len()), g.wrt(hn, h0.len())))
    };
    let p_err = grad_check_store(&store, |s| run(s, &x, &h0).map(|r| (r.0, r.1)))?;
    let (_, _, gx, gh) = run(&store, &x, &h0)?;
    let x_err = grad_check(|xs| run(&store, xs, &h0).map(|r| r.0).unwrap_or(f64::NAN), &x, &gx);
    let h_err = grad_check(|hs| run(&store, &x, hs).map(|r| r.0).unwrap_or(f64::NAN), &h0, &gh);
    Ok(p_err.max(x_err).max(h_err))
}

fn softmax_ce_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let k = rng.gen_range(2..8);
    let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let label = rng.gen_range(0..k);
    let c = rv(rng, k);
    let store = ParamStore::new();
    // cross-entropy plus a linear read-out of the softmax itself
    let run = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new(&store);
        let zn = tape.input(z.to_vec())?;
        let ce = tape.cross_entropy_logits(zn, label)?;
        let p = tape.softmax(zn)?;
        let cn = tape.input(c.clone())?;
        let read = tape.dot(p, cn)?;
        let out = tape.weighted_sum(&[(ce, 1.0), (read, 1.0)])?;
        let v = tape.scalar(out);
        Ok((v, tape.backward(out, &[1.0])?.wrt(zn, z.len())))
    };
    let (_, g) = run(&logits)?;
    Ok(grad_check(|z| run(z).map(|r| r.0).unwrap_or(f64::NAN), &logits, &g))
}

fn small_core(rng: &mut ChaCha8Rng, agg: Aggregator) -> Result<AgentCore> {
    let cfg = AgentConfig {
        obs_dim: rng.gen_range(2..6),
        n_actions: rng.gen_range(2..6),
        hidden_size: rng.gen_range(2..6),
        msg_len: rng.gen_range(1..4),
        aggregator: agg,
        learned_comm: true,
    };
    AgentCore::new(cfg, rng)
}

fn policy_case(rng: &mut ChaCha8Rng, k: usize) -> Result<f64> {
    let agg = if k.is_multiple_of(2) { Aggregator::Decomposable } else { Aggregator::Attention };
    let core = small_core(rng, agg)?;
    let c = core.config;
    let a = rng.gen_range(0..c.n_actions);
    if k % 4 < 2 {
        let h = rv(rng, c.hidden_size);
        let o = rv(rng, c.obs_dim);
        let msgs: Vec<Vec<f64>> = (0..rng.gen_range(0..4)).map(|_| rv(rng, c.msg_len)).collect();
        let refs: Vec<&[f64]> = msgs.iter().map(|m| m.as_slice()).collect();
        grad_check_store(&core.store, |s| {
            log_prob_and_grad(&AgentCore::from_store(c, s.clone())?, &h, &o, &refs, a)
        })
    } else {
        let obs: Vec<Vec<f64>> = (0..rng.gen_range(2..4)).map(|_| rv(rng, c.obs_dim)).collect();
        grad_check_store(&core.store, |s| team_log_prob_and_grad(&AgentCore::from_store(c, s.clone())?, &obs, 0, a))
    }
}

fn attack_case(rng: &mut ChaCha8Rng, k: usize) -> Result<f64> {
    let agg = if k.is_multiple_of(2) { Aggregator::Decomposable } else { Aggregator::Attention };
    let objective = if k % 4 < 2 { Objective::A } else { Objective::B };
    let core = small_core(rng, agg)?;
    let c = core.config;
    let raw = rv(rng, c.msg_len);
    let receivers = (1..=rng.gen_range(1..4))
        .map(|i| (i, rv(rng, c.hidden_size), rv(rng, c.obs_dim), (0..rng.gen_range(0..3)).map(|_| rv(rng, c.msg_len)).collect()))
        .collect();
    let view = VictimView::new(&core, 0, &raw, receivers)?;
    let cand = rv(rng, c.msg_len);
    let (_, g) = view.objective_with_grad(&cand, objective)?;
    Ok(grad_check(|x| view.objective(x, objective).unwrap_or(f64::NAN), &cand, &g))
}

fn estimator_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let cfg = EstimatorConfig {
        obs_dim: rng.gen_range(2..5),
        hidden_size: rng.gen_range(2..5),
        msg_len: rng.gen_range(1..4),
        width: rng.gen_range(2..6),
    };
    let est = Estimator::new(cfg, rng)?;
    // Central differences are meaningless across a ReLU kink, so redraw
    // inputs until every hidden unit sits clear of zero.
    let s = loop {
        let s = ReliabilitySample {
            h: rv(rng, cfg.hidden_size),
            o: rv(rng, cfg.obs_dim),
            m: rv(rng, cfg.msg_len),
            label: if rng.gen_bool(0.5) { Label::Reliable } else { Label::Unreliable },
        };
        if est.relu_margin(&s.h, &s.o, &s.m)? > KINK_MARGIN {
            break s;
        }
    };
    grad_check_store(&est.store, |st| Estimator::from_store(cfg, st.clone())?.loss_and_grad(&s))
}

/// Runs `cases` random instances of every check.
pub fn gradcheck_suite(cases: usize, seed: u64) -> Result<Vec<CheckReport>> {
    type Case = fn(&mut ChaCha8Rng, usize) -> Result<f64>;
    let checks: [(&'static str, f64, Case); 6] = [
        ("dense", NET_TOL, |r, _| dense_case(r)),
        ("gru", NET_TOL, |r, _| gru_case(r)),
        ("softmax_cross_entropy", NET_TOL, |r, _| softmax_ce_case(r)),
        ("policy", NET_TOL, policy_case),
        ("estimator", NET_TOL, |r, _| estimator_case(r)),
        ("attack_objectives", ATTACK_TOL, attack_case),
    ];
    let mut out = Vec::new();
    for (idx, (name, tolerance, case)) in checks.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &[idx as u64]));
        let mut worst = 0.0f64;
        for k in 0..cases {
            let e = case(&mut rng, k)?;
            worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
        }
        out.push(CheckReport { name, cases, max_rel_err: worst, tolerance });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_small() {
        for r in gradcheck_suite(10, 1).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }
}
