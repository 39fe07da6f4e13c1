//! The three cooperation tasks behind one interface.
//!
//! Every task uses the same observation skeleton, all components in `[-1, 1]`:
//!
//! | slot | Food Collector | Predator Prey | Treasure Hunt |
//! |------|----------------|---------------|---------------|
//! | 0..2 | own position | own position | own position |
//! | 2    | own food visible | prey visible | own treasure x |
//! | 3..5 | offset to own food / vision | offset to prey / vision | own treasure y, 0 |
//! | 5    | finished flag | finished flag | finished flag |
//! | 6..6+N | id one-hot | id one-hot | id one-hot |
//! | 6+N  | normalised timestep | normalised timestep | normalised timestep |
//!
//! Flags and one-hots are encoded as `±1`. Rewards per agent are `-0.05` per
//! step while its task element is unfinished and `+1.0` on the completing step.

mod food_collector;
mod predator_prey;
mod treasure_hunt;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KvConfig;
use crate::error::{Error, Result};

pub use food_collector::FoodCollector;
pub use predator_prey::PredatorPrey;
pub use treasure_hunt::TreasureHunt;

pub const STEP_PENALTY: f64 = -0.05;
pub const COMPLETION_REWARD: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    FoodCollector,
    PredatorPrey,
    TreasureHunt,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::FoodCollector, TaskKind::PredatorPrey, TaskKind::TreasureHunt];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::FoodCollector => "food_collector",
            TaskKind::PredatorPrey => "predator_prey",
            TaskKind::TreasureHunt => "treasure_hunt",
        }
    }

    pub fn n_actions(self) -> usize {
        match self {
            TaskKind::PredatorPrey => 5,
            TaskKind::FoodCollector | TaskKind::TreasureHunt => 9,
        }
    }

    /// Whether messages come from the environment rather than a learned encoder.
    pub fn predefined_comm(self) -> bool {
        matches!(self, TaskKind::FoodCollector)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "food_collector" => Ok(TaskKind::FoodCollector),
            "predator_prey" => Ok(TaskKind::PredatorPrey),
            "treasure_hunt" => Ok(TaskKind::TreasureHunt),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub task: TaskKind,
    pub n_agents: usize,
    pub vision: f64,
    pub speed: f64,
    pub t_max: usize,
    pub catch_radius: f64,
    pub grid_size: usize,
    pub seed: u64,
}

impl EnvConfig {
    pub fn new(task: TaskKind) -> Self {
        match task {
            TaskKind::FoodCollector => Self {
                task,
                n_agents: 5,
                vision: 0.2,
                speed: 0.15,
                t_max: 60,
                catch_radius: 0.1,
                grid_size: 10,
                seed: 0,
            },
            TaskKind::PredatorPrey => Self {
                task,
                n_agents: 5,
                vision: 1.0,
                speed: 1.0,
                t_max: 60,
                catch_radius: 0.0,
                grid_size: 10,
                seed: 0,
            },
            TaskKind::TreasureHunt => Self {
                task,
                n_agents: 5,
                vision: 1.0,
                speed: 0.09,
                t_max: 50,
                catch_radius: 0.1,
                grid_size: 10,
                seed: 0,
            },
        }
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let task: TaskKind = kv
            .raw("task")
            .ok_or_else(|| Error::Config("missing key task".into()))?
            .parse()?;
        let d = Self::new(task);
        let cfg = Self {
            task,
            n_agents: kv.get_or("n_agents", d.n_agents)?,
            vision: kv.get_or("vision", d.vision)?,
            speed: kv.get_or("speed", d.speed)?,
            t_max: kv.get_or("t_max", d.t_max)?,
            catch_radius: kv.get_or("catch_radius", d.catch_radius)?,
            grid_size: kv.get_or("grid_size", d.grid_size)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_kv(&self, kv: &mut KvConfig) {
        kv.set("task", self.task);
        kv.set("n_agents", self.n_agents);
        kv.set("vision", self.vision);
        kv.set("speed", self.speed);
        kv.set("t_max", self.t_max);
        kv.set("catch_radius", self.catch_radius);
        kv.set("grid_size", self.grid_size);
        kv.set("seed", self.seed);
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::Config("n_agents must be at least 2".into()));
        }
        if !(self.vision > 0.0) {
            return Err(Error::Config("vision must be positive".into()));
        }
        if !(self.speed > 0.0) {
            return Err(Error::Config("speed must be positive".into()));
        }
        if self.t_max == 0 {
            return Err(Error::Config("t_max must be positive".into()));
        }
        if self.task != TaskKind::PredatorPrey && !(self.catch_radius > 0.0) {
            return Err(Error::Config("catch_radius must be positive".into()));
        }
        if self.task == TaskKind::PredatorPrey && self.grid_size < 2 {
            return Err(Error::Config("grid_size must be at least 2".into()));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        7 + self.n_agents
    }

    pub fn n_actions(&self) -> usize {
        self.task.n_actions()
    }

    /// Width of environment-generated messages (Food Collector only).
    pub fn predefined_msg_len(&self) -> usize {
        self.n_agents + 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub rewards: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    pub done: bool,
    /// Per-agent task-completion flags after this step.
    pub finished: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum World {
    Food(FoodCollector),
    Grid(PredatorPrey),
    Treasure(TreasureHunt),
}

/// A seeded environment instance.
#[derive(Clone, Debug)]
pub struct Env {
    config: EnvConfig,
    world: World,
    finished: Vec<bool>,
    t: usize,
    rng: ChaCha8Rng,
}

pub(crate) fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        -1.0
    }
}

/// Maps `[0, 1]` to `[-1, 1]`.
pub(crate) fn scale_unit(x: f64) -> f64 {
    2.0 * x - 1.0
}

/// Unit displacement for the 9-action continuous tasks: 0 = stay, then
/// N, NE, E, SE, S, SW, W, NW.
pub(crate) fn compass(action: usize) -> (f64, f64) {
    let d = std::f64::consts::FRAC_1_SQRT_2;
    match action {
        1 => (0.0, 1.0),
        2 => (d, d),
        3 => (1.0, 0.0),
        4 => (d, -d),
        5 => (0.0, -1.0),
        6 => (-d, -d),
        7 => (-1.0, 0.0),
        8 => (-d, d),
        _ => (0.0, 0.0),
    }
}

impl Env {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let world = Self::layout(&config, &mut rng);
        Ok(Self { finished: vec![false; config.n_agents], t: 0, config, world, rng })
    }

    fn layout(config: &EnvConfig, rng: &mut ChaCha8Rng) -> World {
        match config.task {
            TaskKind::FoodCollector => World::Food(FoodCollector::random(config, rng)),
            TaskKind::PredatorPrey => World::Grid(PredatorPrey::random(config, rng)),
            TaskKind::TreasureHunt => World::Treasure(TreasureHunt::random(config, rng)),
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    pub fn timestep(&self) -> usize {
        self.t
    }

    pub fn finished(&self) -> &[bool] {
        &self.finished
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.config.t_max || self.finished.iter().all(|&f| f)
    }

    /// Whether agent `i` still chooses actions. Finished agents are frozen,
    /// except in Treasure Hunt where they keep helping the others.
    pub fn acts(&self, i: usize) -> bool {
        self.config.task == TaskKind::TreasureHunt || !self.finished[i]
    }

    /// Re-seeds and lays out a fresh episode.
    pub fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.world = Self::layout(&self.config, &mut self.rng);
        self.finished = vec![false; self.config.n_agents];
        self.t = 0;
        self.observations()
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.config.n_agents).map(|i| self.observe(i)).collect()
    }

    fn observe(&self, i: usize) -> Vec<f64> {
        let n = self.config.n_agents;
        let mut o = match &self.world {
            World::Food(w) => w.observe_core(&self.config, i, &self.finished),
            World::Grid(w) => w.observe_core(&self.config, i),
            World::Treasure(w) => w.observe_core(i, &self.finished),
        };
        o.push(flag(self.finished[i]));
        o.extend((0..n).map(|j| flag(j == i)));
        o.push(scale_unit(self.t as f64 / self.config.t_max as f64));
        debug_assert_eq!(o.len(), self.config.obs_dim());
        o
    }

    /// Advances one timestep. Actions of agents that do not act are ignored
    /// but must still be in range.
    pub fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        let n = self.config.n_agents;
        if actions.len() != n {
            return Err(Error::InvalidInput(format!("expected {n} actions, got {}", actions.len())));
        }
        let k = self.config.n_actions();
        if let Some(&a) = actions.iter().find(|&&a| a >= k) {
            return Err(Error::InvalidInput(format!("action {a} out of range for {k} actions")));
        }
        if self.is_done() {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        let before = self.finished.clone();
        let acting: Vec<bool> = (0..n).map(|i| self.acts(i)).collect();
        match &mut self.world {
            World::Food(w) => w.advance(&self.config, actions, &acting, &mut self.finished),
            World::Grid(w) => w.advance(&self.config, actions, &acting, &mut self.finished),
            World::Treasure(w) => w.advance(&self.config, actions, &mut self.finished),
        }
        self.t += 1;
        let element: Vec<f64> = (0..n)
            .map(|i| match (before[i], self.finished[i]) {
                (true, _) => 0.0,
                (false, true) => COMPLETION_REWARD,
                (false, false) => STEP_PENALTY,
            })
            .collect();
        let rewards = if self.config.task == TaskKind::TreasureHunt {
            // treasure i is collected by others, so credit is shared
            let mean = element.iter().sum::<f64>() / n as f64;
            vec![mean; n]
        } else {
            element
        };
        Ok(StepResult {
            rewards,
            observations: self.observations(),
            done: self.is_done(),
            finished: self.finished.clone(),
        })
    }

    /// Environment-generated broadcasts for Food Collector: `Some(payload)` when
    /// agent `i` sees an unfinished food belonging to another agent.
    pub fn predefined_messages(&self) -> Result<Vec<Option<Vec<f64>>>> {
        match &self.world {
            World::Food(w) => Ok(w.messages(&self.config, &self.finished)),
            _ => Err(Error::Usage(format!(
                "{} uses learned communication; no predefined messages",
                self.config.task
            ))),
        }
    }

    /// Agent positions in field units (grid cells for Predator Prey).
    pub fn agent_positions(&self) -> Vec<(f64, f64)> {
        match &self.world {
            World::Food(w) => w.agents.clone(),
            World::Grid(w) => w.agents.iter().map(|&(x, y)| (x as f64, y as f64)).collect(),
            World::Treasure(w) => w.agents.clone(),
        }
    }

    /// Target positions: foods, the prey, or treasures.
    pub fn target_positions(&self) -> Vec<(f64, f64)> {
        match &self.world {
            World::Food(w) => w.foods.clone(),
            World::Grid(w) => vec![(w.prey.0 as f64, w.prey.1 as f64)],
            World::Treasure(w) => w.treasures.clone(),
        }
    }
}

/// Completion timestep of an episode: its length, which is `t_max` when not
/// every agent finished.
pub fn task_metric(episode_len: usize) -> usize {
    episode_len
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn all_tasks() -> Vec<EnvConfig> {
        TaskKind::ALL.iter().map(|&t| EnvConfig::new(t)).collect()
    }

    #[test]
    fn same_seed_same_observations() {
        for cfg in all_tasks() {
            let mut a = Env::new(cfg.clone()).unwrap();
            let mut b = Env::new(cfg).unwrap();
            assert_eq!(a.reset(11), b.reset(11));
        }
    }

    #[test]
    fn different_seeds_differ() {
        for cfg in all_tasks() {
            let mut env = Env::new(cfg).unwrap();
            let a = env.reset(1);
            let b = env.reset(2);
            assert_ne!(a, b);
        }
    }

    #[test]
    fn predator_prey_observation_width() {
        let mut env = Env::new(EnvConfig::new(TaskKind::PredatorPrey)).unwrap();
        let obs = env.reset(0);
        assert_eq!(obs.len(), 5);
        assert!(obs.iter().all(|o| o.len() == 12));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = EnvConfig::new(TaskKind::FoodCollector);
        c.vision = 0.0;
        assert!(matches!(Env::new(c), Err(Error::Config(_))));
        let mut c = EnvConfig::new(TaskKind::PredatorPrey);
        c.n_agents = 1;
        assert!(Env::new(c).is_err());
    }

    #[test]
    fn forced_termination_at_t_max() {
        for mut cfg in all_tasks() {
            cfg.t_max = 3;
            let mut env = Env::new(cfg).unwrap();
            env.reset(5);
            let n = env.n_agents();
            let mut last = None;
            for _ in 0..3 {
                last = Some(env.step(&vec![0; n]).unwrap());
            }
            assert!(last.unwrap().done);
            assert!(matches!(env.step(&vec![0; n]), Err(Error::Usage(_))));
        }
    }

    #[test]
    fn out_of_range_action_rejected() {
        let mut env = Env::new(EnvConfig::new(TaskKind::PredatorPrey)).unwrap();
        env.reset(0);
        assert!(matches!(env.step(&[0, 0, 0, 0, 5]), Err(Error::InvalidInput(_))));
        assert!(env.step(&[0, 0]).is_err());
    }

    #[test]
    fn learned_tasks_have_no_predefined_messages() {
        let env = Env::new(EnvConfig::new(TaskKind::TreasureHunt)).unwrap();
        assert!(matches!(env.predefined_messages(), Err(Error::Usage(_))));
    }

    #[test]
    fn task_metric_cases() {
        assert_eq!(task_metric(12), 12);
        assert_eq!(task_metric(60), 60);
    }

    #[test]
    fn deterministic_and_bounded_under_random_play() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for cfg in all_tasks() {
            let k = cfg.n_actions();
            let mut a = Env::new(cfg.clone()).unwrap();
            let mut b = Env::new(cfg.clone()).unwrap();
            a.reset(3);
            b.reset(3);
            while !a.is_done() {
                let acts: Vec<usize> = (0..cfg.n_agents).map(|_| rng.gen_range(0..k)).collect();
                let frozen: Vec<_> = (0..cfg.n_agents)
                    .filter(|&i| !a.acts(i))
                    .map(|i| (i, a.agent_positions()[i]))
                    .collect();
                let ra = a.step(&acts).unwrap();
                let rb = b.step(&acts).unwrap();
                assert_eq!(ra, rb);
                for o in &ra.observations {
                    assert!(o.iter().all(|x| (-1.0..=1.0).contains(x)), "{o:?}");
                }
                for (i, p) in frozen {
                    assert_eq!(a.agent_positions()[i], p);
                    assert_eq!(ra.rewards[i], 0.0);
                }
                assert_eq!(ra.done, a.timestep() == cfg.t_max || ra.finished.iter().all(|&f| f));
            }
            assert!(a.timestep() <= cfg.t_max);
        }
    }
}
