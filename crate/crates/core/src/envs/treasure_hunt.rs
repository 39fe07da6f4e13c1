use rand::Rng;

use super::{compass, scale_unit, EnvConfig};

/// Each agent knows where its own treasure is, but only another agent can
/// collect it.
#[derive(Clone, Debug, PartialEq)]
pub struct TreasureHunt {
    pub agents: Vec<(f64, f64)>,
    pub treasures: Vec<(f64, f64)>,
}

impl TreasureHunt {
    pub(crate) fn random<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Self {
        let n = cfg.n_agents;
        let mut point = || (rng.gen::<f64>(), rng.gen::<f64>());
        let agents = (0..n).map(|_| point()).collect();
        let treasures = (0..n).map(|_| point()).collect();
        Self { agents, treasures }
    }

    pub(crate) fn observe_core(&self, i: usize, finished: &[bool]) -> Vec<f64> {
        let (x, y) = self.agents[i];
        let (tx, ty) = if finished[i] { (0.0, 0.0) } else { (scale_unit(self.treasures[i].0), scale_unit(self.treasures[i].1)) };
        vec![scale_unit(x), scale_unit(y), tx, ty, 0.0]
    }

    pub(crate) fn advance(&mut self, cfg: &EnvConfig, actions: &[usize], finished: &mut [bool]) {
        for (p, &a) in self.agents.iter_mut().zip(actions) {
            let (ux, uy) = compass(a);
            p.0 = (p.0 + cfg.speed * ux).clamp(0.0, 1.0);
            p.1 = (p.1 + cfg.speed * uy).clamp(0.0, 1.0);
        }
        for (i, t) in self.treasures.iter().enumerate() {
            if finished[i] {
                continue;
            }
            let caught = self.agents.iter().enumerate().any(|(j, a)| {
                j != i && ((a.0 - t.0).powi(2) + (a.1 - t.1).powi(2)).sqrt() <= cfg.catch_radius
            });
            if caught {
                finished[i] = true;
            }
        }
    }
}
