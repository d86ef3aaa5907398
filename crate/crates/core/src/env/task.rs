use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{EnvObservation, Environment, Locomotor, LocomotorConfig, Step};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Hurdles,
    Goals,
    Vtrack,
    Limbos,
    Gaps,
    StairsLite,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] =
        [TaskKind::Hurdles, TaskKind::Goals, TaskKind::Vtrack, TaskKind::Limbos, TaskKind::Gaps, TaskKind::StairsLite];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Hurdles => "hurdles",
            TaskKind::Goals => "goals",
            TaskKind::Vtrack => "vtrack",
            TaskKind::Limbos => "limbos",
            TaskKind::Gaps => "gaps",
            TaskKind::StairsLite => "stairs-lite",
        }
    }

    pub fn external_dim(self) -> usize {
        match self {
            TaskKind::Goals => 2,
            TaskKind::Vtrack => 1,
            _ => 4,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = alloc::string::String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| alloc::format!("unknown task `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub horizon: usize,
    /// Position of the first obstacle.
    pub first_obstacle: f32,
    pub spacing_min: f32,
    pub spacing_max: f32,
    /// Body height needed to clear a hurdle, drawn per hurdle.
    pub hurdle_min: f32,
    pub hurdle_max: f32,
    /// Body height that fits under a limbo bar, drawn per bar.
    pub limbo_min: f32,
    pub limbo_max: f32,
    /// Speed needed to jump a gap.
    pub gap_speed: f32,
    pub stair_height: f32,
    /// Stairs are failed above this speed.
    pub stair_speed_cap: f32,
    pub goal_min: f32,
    pub goal_max: f32,
    pub goal_radius: f32,
    pub vtrack_speeds: Vec<f32>,
    pub vtrack_interval: usize,
    pub vtrack_band: f32,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::Goals,
            horizon: 1000,
            first_obstacle: 10.0,
            spacing_min: 8.0,
            spacing_max: 15.0,
            hurdle_min: 1.1,
            hurdle_max: 1.3,
            limbo_min: 0.7,
            limbo_max: 0.9,
            gap_speed: 0.5,
            stair_height: 1.1,
            stair_speed_cap: 0.8,
            goal_min: 20.0,
            goal_max: 40.0,
            goal_radius: 1.0,
            vtrack_speeds: vec![0.2, 0.4, 0.6, 0.8],
            vtrack_interval: 250,
            vtrack_band: 0.1,
        }
    }
}

impl TaskSpec {
    pub fn of(kind: TaskKind) -> Self {
        Self { kind, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Obstacle {
    at: f32,
    /// Required height, bar height or speed threshold depending on the task.
    param: f32,
}

/// A [`Locomotor`] inside a task with sparse rewards: `+1` per event
/// (obstacle cleared, goal touched, step on target speed), `-1` and the end
/// of the episode on any failure, `0` otherwise.
#[derive(Debug, Clone)]
pub struct TaskEnv {
    spec: TaskSpec,
    body: Locomotor,
    rng: crate::Rng,
    obstacles: Vec<Obstacle>,
    next: usize,
    goal: f32,
    v_target: f32,
}

impl TaskEnv {
    pub fn new(spec: TaskSpec, body: LocomotorConfig) -> Self {
        let mut body = Locomotor::new(body);
        body.set_horizon(spec.horizon);
        Self { spec, body, rng: crate::Rng::seed_from_u64(0), obstacles: Vec::new(), next: 0, goal: 0.0, v_target: 0.0 }
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn body(&self) -> &Locomotor {
        &self.body
    }

    pub fn goal(&self) -> f32 {
        self.goal
    }

    pub fn v_target(&self) -> f32 {
        self.v_target
    }

    fn draw(&mut self, lo: f32, hi: f32) -> f32 {
        if hi > lo {
            self.rng.random_range(lo..hi)
        } else {
            lo
        }
    }

    fn layout(&mut self) {
        self.obstacles.clear();
        self.next = 0;
        let s = self.spec.clone();
        let reach = s.horizon as f32 * 1.1 + s.first_obstacle;
        let mut at = s.first_obstacle;
        while at < reach {
            let param = match s.kind {
                TaskKind::Hurdles => self.draw(s.hurdle_min, s.hurdle_max),
                TaskKind::Limbos => self.draw(s.limbo_min, s.limbo_max),
                TaskKind::Gaps => s.gap_speed,
                TaskKind::StairsLite => s.stair_height,
                TaskKind::Goals | TaskKind::Vtrack => return,
            };
            self.obstacles.push(Obstacle { at, param });
            at += self.draw(s.spacing_min, s.spacing_max);
        }
    }

    fn respawn_goal(&mut self) {
        let d = self.draw(self.spec.goal_min, self.spec.goal_max);
        self.goal = self.body.position() + d;
    }

    fn pick_speed(&mut self) {
        let n = self.spec.vtrack_speeds.len();
        self.v_target = if n == 0 { 0.0 } else { self.spec.vtrack_speeds[self.rng.random_range(0..n)] };
    }

    fn external(&self) -> Vec<f32> {
        let x = self.body.position();
        match self.spec.kind {
            TaskKind::Goals => {
                let d = self.goal - x;
                vec![d.abs() / 10.0, if d >= 0.0 { 1.0 } else { -1.0 }]
            }
            TaskKind::Vtrack => vec![self.v_target],
            _ => {
                let mut e = Vec::with_capacity(4);
                for k in 0..2 {
                    match self.obstacles.get(self.next + k) {
                        Some(o) => e.extend_from_slice(&[(o.at - x) / 10.0, o.param]),
                        None => e.extend_from_slice(&[10.0, 0.0]),
                    }
                }
                e
            }
        }
    }

    fn observe(&self, mut obs: EnvObservation) -> EnvObservation {
        obs.external = self.external();
        obs
    }

    /// Passes obstacles crossed this step; `Err(())` on a failed one.
    fn obstacle_events(&mut self, before: f32) -> Result<u32, ()> {
        let (x, h, v) = (self.body.position(), self.body.height(), self.body.velocity());
        let mut cleared = 0;
        while let Some(o) = self.obstacles.get(self.next).copied() {
            if !(before < o.at && o.at <= x) {
                break;
            }
            let ok = match self.spec.kind {
                TaskKind::Hurdles => h >= o.param,
                TaskKind::Limbos => h <= o.param,
                TaskKind::Gaps => v >= o.param,
                TaskKind::StairsLite => h >= o.param && v <= self.spec.stair_speed_cap,
                TaskKind::Goals | TaskKind::Vtrack => true,
            };
            if !ok {
                return Err(());
            }
            self.next += 1;
            cleared += 1;
        }
        Ok(cleared)
    }
}

impl Environment for TaskEnv {
    fn proprio_dim(&self) -> usize {
        self.body.proprio_dim()
    }

    fn external_dim(&self) -> usize {
        self.spec.kind.external_dim()
    }

    fn action_dim(&self) -> usize {
        self.body.action_dim()
    }

    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    fn reset(&mut self, seed: u64) -> EnvObservation {
        self.rng = crate::Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let obs = self.body.reset(seed);
        self.layout();
        self.goal = 0.0;
        self.v_target = 0.0;
        match self.spec.kind {
            TaskKind::Goals => self.respawn_goal(),
            TaskKind::Vtrack => self.pick_speed(),
            _ => {}
        }
        self.observe(obs)
    }

    fn step(&mut self, action: &[f32]) -> Step {
        let before = self.body.position();
        let mut obs = self.body.advance(action);
        let x = self.body.position();
        let mut failed = obs.fallen;
        let mut reward = 0.0;
        if !failed {
            match self.spec.kind {
                TaskKind::Goals => {
                    let crossed = before < self.goal && self.goal <= x;
                    if crossed || (x - self.goal).abs() <= self.spec.goal_radius {
                        reward = 1.0;
                        self.respawn_goal();
                    }
                }
                TaskKind::Vtrack => {
                    if (self.body.velocity() - self.v_target).abs() <= self.spec.vtrack_band {
                        reward = 1.0;
                    }
                    let t = self.body.elapsed();
                    if self.spec.vtrack_interval > 0 && t % self.spec.vtrack_interval == 0 {
                        self.pick_speed();
                    }
                }
                _ => match self.obstacle_events(before) {
                    Ok(n) => reward = if n > 0 { 1.0 } else { 0.0 },
                    Err(()) => {
                        failed = true;
                        self.body.mark_fallen();
                        obs.fallen = true;
                    }
                },
            }
        }
        if failed {
            reward = -1.0;
        }
        let done = failed || self.body.elapsed() >= self.spec.horizon;
        Step { obs: self.observe(obs), reward, done, terminal: failed }
    }
}
