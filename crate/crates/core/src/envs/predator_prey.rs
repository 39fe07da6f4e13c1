use rand::Rng;

use super::{flag, EnvConfig};

/// Grid world with one fixed prey. Vision is a Chebyshev radius; an agent
/// finishes when it steps onto the prey cell.
#[derive(Clone, Debug, PartialEq)]
pub struct PredatorPrey {
    pub agents: Vec<(i64, i64)>,
    pub prey: (i64, i64),
}

/// 0 = stay, 1 = up, 2 = down, 3 = right, 4 = left.
pub(crate) fn grid_move(action: usize) -> (i64, i64) {
    match action {
        1 => (0, 1),
        2 => (0, -1),
        3 => (1, 0),
        4 => (-1, 0),
        _ => (0, 0),
    }
}

impl PredatorPrey {
    pub(crate) fn random<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Self {
        let g = cfg.grid_size as i64;
        let prey = (rng.gen_range(0..g), rng.gen_range(0..g));
        let agents = (0..cfg.n_agents)
            .map(|_| loop {
                let p = (rng.gen_range(0..g), rng.gen_range(0..g));
                if p != prey {
                    break p;
                }
            })
            .collect();
        Self { agents, prey }
    }

    pub(crate) fn sees_prey(&self, cfg: &EnvConfig, i: usize) -> bool {
        let (x, y) = self.agents[i];
        let d = (x - self.prey.0).abs().max((y - self.prey.1).abs());
        d as f64 <= cfg.vision
    }

    pub(crate) fn observe_core(&self, cfg: &EnvConfig, i: usize) -> Vec<f64> {
        let (x, y) = self.agents[i];
        let span = (cfg.grid_size - 1) as f64;
        let visible = self.sees_prey(cfg, i);
        let (dx, dy) = if visible {
            (
                (self.prey.0 - x) as f64 / cfg.vision,
                (self.prey.1 - y) as f64 / cfg.vision,
            )
        } else {
            (0.0, 0.0)
        };
        vec![2.0 * x as f64 / span - 1.0, 2.0 * y as f64 / span - 1.0, flag(visible), dx, dy]
    }

    pub(crate) fn advance(&mut self, cfg: &EnvConfig, actions: &[usize], acting: &[bool], finished: &mut [bool]) {
        let g = cfg.grid_size as i64;
        for (i, &a) in actions.iter().enumerate() {
            if !acting[i] {
                continue;
            }
            let (dx, dy) = grid_move(a);
            let (nx, ny) = (self.agents[i].0 + dx, self.agents[i].1 + dy);
            if (0..g).contains(&nx) && (0..g).contains(&ny) {
                self.agents[i] = (nx, ny);
            }
        }
        for (i, f) in finished.iter_mut().enumerate() {
            if self.agents[i] == self.prey {
                *f = true;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Env, TaskKind, World};
    use super::*;

    fn env_with(agents: Vec<(i64, i64)>, prey: (i64, i64)) -> Env {
        let mut cfg = EnvConfig::new(TaskKind::PredatorPrey);
        cfg.n_agents = agents.len();
        let mut env = Env::new(cfg).unwrap();
        env.world = World::Grid(PredatorPrey { agents, prey });
        env
    }

    #[test]
    fn off_grid_move_rejected_but_counts() {
        let mut env = env_with(vec![(0, 0), (5, 5)], (9, 9));
        env.step(&[4, 0]).unwrap();
        assert_eq!(env.agent_positions()[0], (0.0, 0.0));
        assert_eq!(env.timestep(), 1);
    }

    #[test]
    fn vision_is_chebyshev_one() {
        let env = env_with(vec![(4, 4), (1, 4), (3, 3)], (3, 5));
        let obs = env.observations();
        assert_eq!(obs[0][2], 1.0);
        assert_eq!(obs[1][2], -1.0);
        assert_eq!(obs[2][2], -1.0);
        assert_eq!((obs[0][3], obs[0][4]), (-1.0, 1.0));
    }

    #[test]
    fn reaching_prey_finishes() {
        let mut env = env_with(vec![(4, 4), (0, 0)], (5, 4));
        let r = env.step(&[3, 0]).unwrap();
        assert_eq!(r.rewards, vec![1.0, -0.05]);
        assert!(!r.done);
        env.step(&[4, 0]).unwrap();
        assert_eq!(env.agent_positions()[0], (5.0, 4.0));
    }

    #[test]
    fn positions_stay_on_grid() {
        let mut env = env_with(vec![(9, 9), (0, 9)], (5, 5));
        for a in [1, 3, 1, 3, 4, 4] {
            env.step(&[a, a]).unwrap();
            for (x, y) in env.agent_positions() {
                assert!((0.0..=9.0).contains(&x) && (0.0..=9.0).contains(&y));
                assert_eq!(x.fract(), 0.0);
            }
        }
    }
}
