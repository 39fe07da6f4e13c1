use rand::Rng;

use super::{compass, flag, scale_unit, EnvConfig};

/// Agents search a unit field for the food carrying their id. Food `i` is
/// collected when agent `i` comes within `catch_radius` of it.
#[derive(Clone, Debug, PartialEq)]
pub struct FoodCollector {
    pub agents: Vec<(f64, f64)>,
    pub foods: Vec<(f64, f64)>,
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

impl FoodCollector {
    pub(crate) fn random<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Self {
        let n = cfg.n_agents;
        let mut point = || (rng.gen::<f64>(), rng.gen::<f64>());
        let agents: Vec<_> = (0..n).map(|_| point()).collect();
        let mut foods = Vec::with_capacity(n);
        for i in 0..n {
            // no agent starts on top of its own food
            let f = loop {
                let f = point();
                if dist(f, agents[i]) > cfg.catch_radius {
                    break f;
                }
            };
            foods.push(f);
        }
        Self { agents, foods }
    }

    pub(crate) fn observe_core(&self, cfg: &EnvConfig, i: usize, finished: &[bool]) -> Vec<f64> {
        let (x, y) = self.agents[i];
        let f = self.foods[i];
        let visible = !finished[i] && dist(f, (x, y)) <= cfg.vision;
        let (dx, dy) = if visible { ((f.0 - x) / cfg.vision, (f.1 - y) / cfg.vision) } else { (0.0, 0.0) };
        vec![scale_unit(x), scale_unit(y), flag(visible), dx, dy]
    }

    pub(crate) fn advance(&mut self, cfg: &EnvConfig, actions: &[usize], acting: &[bool], finished: &mut [bool]) {
        for (i, &a) in actions.iter().enumerate() {
            if !acting[i] {
                continue;
            }
            let (ux, uy) = compass(a);
            let p = &mut self.agents[i];
            p.0 = (p.0 + cfg.speed * ux).clamp(0.0, 1.0);
            p.1 = (p.1 + cfg.speed * uy).clamp(0.0, 1.0);
        }
        for i in 0..self.agents.len() {
            if !finished[i] && dist(self.agents[i], self.foods[i]) <= cfg.catch_radius {
                finished[i] = true;
            }
        }
    }

    /// Payload layout: one-hot (`1`/`0`) of the food's owner, then the food's
    /// coordinates mapped to `[-1, 1]`. Agents report the nearest visible
    /// unfinished food owned by someone else.
    pub(crate) fn messages(&self, cfg: &EnvConfig, finished: &[bool]) -> Vec<Option<Vec<f64>>> {
        let n = self.agents.len();
        (0..n)
            .map(|i| {
                let seen = (0..n)
                    .filter(|&j| j != i && !finished[j])
                    .map(|j| (j, dist(self.agents[i], self.foods[j])))
                    .filter(|&(_, d)| d <= cfg.vision)
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                seen.map(|(j, _)| encode_sighting(n, j, self.foods[j]))
            })
            .collect()
    }
}

pub(crate) fn encode_sighting(n: usize, owner: usize, pos: (f64, f64)) -> Vec<f64> {
    let mut m: Vec<f64> = (0..n).map(|k| if k == owner { 1.0 } else { 0.0 }).collect();
    m.push(scale_unit(pos.0));
    m.push(scale_unit(pos.1));
    m
}

#[cfg(test)]
mod tests {
    use super::super::{Env, TaskKind, World};
    use super::*;

    fn env_with(agents: Vec<(f64, f64)>, foods: Vec<(f64, f64)>) -> Env {
        let mut cfg = EnvConfig::new(TaskKind::FoodCollector);
        cfg.n_agents = agents.len();
        let mut env = Env::new(cfg).unwrap();
        env.world = World::Food(FoodCollector { agents, foods });
        env
    }

    #[test]
    fn east_move_by_speed() {
        let mut env = env_with(vec![(0.5, 0.5), (0.1, 0.1)], vec![(0.9, 0.9), (0.9, 0.1)]);
        env.step(&[3, 0]).unwrap();
        let p = env.agent_positions()[0];
        assert!((p.0 - 0.65).abs() < 1e-12 && (p.1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn diagonal_moves_are_bounded_by_speed() {
        let mut env = env_with(vec![(0.5, 0.5), (0.0, 0.0)], vec![(0.9, 0.9), (0.9, 0.1)]);
        for a in 0..9 {
            let before = env.agent_positions()[0];
            env.step(&[a, 6]).unwrap();
            let after = env.agent_positions()[0];
            assert!(dist(before, after) <= 0.15 + 1e-12);
        }
        // clamped in the corner
        assert_eq!(env.agent_positions()[1], (0.0, 0.0));
    }

    #[test]
    fn messages_follow_encoding() {
        let env = env_with(vec![(0.4, 0.4), (0.9, 0.9)], vec![(0.95, 0.95), (0.3, 0.4)]);
        let msgs = env.predefined_messages().unwrap();
        let m = msgs[0].as_ref().expect("agent 0 sees food 1");
        assert_eq!(m.len(), 4);
        assert_eq!(&m[..2], &[0.0, 1.0]);
        assert!((m[2] - (2.0 * 0.3 - 1.0)).abs() < 1e-12);
        assert!((m[3] - (2.0 * 0.4 - 1.0)).abs() < 1e-12);
        // agent 1 is next to food 0
        assert!(msgs[1].is_some());
    }

    #[test]
    fn own_food_and_empty_vision_give_null() {
        let env = env_with(vec![(0.5, 0.5), (0.05, 0.05)], vec![(0.55, 0.5), (0.95, 0.95)]);
        let msgs = env.predefined_messages().unwrap();
        assert!(msgs[0].is_none(), "own food only");
        assert!(msgs[1].is_none(), "nothing in vision");
    }

    #[test]
    fn completion_reward_and_freeze() {
        let mut env = env_with(vec![(0.5, 0.5), (0.0, 0.0)], vec![(0.6, 0.5), (1.0, 1.0)]);
        let r = env.step(&[3, 0]).unwrap();
        assert_eq!(r.rewards, vec![1.0, -0.05]);
        assert!(r.finished[0] && !env.acts(0));
        let r = env.step(&[7, 0]).unwrap();
        assert_eq!(r.rewards[0], 0.0);
        assert!((env.agent_positions()[0].0 - 0.65).abs() < 1e-12);
    }
}
