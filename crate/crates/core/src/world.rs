//! One-dimensional shuttle world: plant dynamics, terrain, sensors and the
//! goal monitor that turns a run into a reward.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack for comparing accumulated simulation time against `t_max`, so that
/// `120 * 0.01` counts as 1.2 s.
const TIME_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub g1: f64,
    pub g2: f64,
    pub epsilon_spec: f64,
    pub dt: f64,
    pub t_max: f64,
    pub mud_enabled: bool,
    pub mud_prob: f64,
    pub mud_region: [f64; 2],
    pub mud_factor: f64,
    pub odometry_bins: usize,
    pub odometry_range: [f64; 2],
    pub reward_success: f64,
    pub reward_failure: f64,
    pub step_penalty: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            g1: 0.0,
            g2: 10.0,
            epsilon_spec: 0.05,
            dt: 0.01,
            t_max: 1.2,
            mud_enabled: true,
            mud_prob: 0.5,
            mud_region: [4.0, 6.0],
            mud_factor: 0.2,
            odometry_bins: 20,
            odometry_range: [0.0, 10.0],
            reward_success: 100.0,
            reward_failure: -100.0,
            step_penalty: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid world config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Environment {
    /// The designer's model: terrain is sensed but has no effect on motion.
    Offline,
    /// The deployed world: mud slows the robot.
    Online,
}

impl EnvConfig {
    // Negated comparisons so that NaN fails every check.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError(m.to_string()));
        let [lo, hi] = self.mud_region;
        let [rmin, rmax] = self.odometry_range;
        if !(self.mud_factor > 0.0 && self.mud_factor <= 1.0) {
            return bad("mud_factor must lie in (0, 1]");
        }
        if !(self.epsilon_spec > 0.0) {
            return bad("epsilon_spec must be positive");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.t_max > 0.0) {
            return bad("t_max must be positive");
        }
        if !(0.0..=1.0).contains(&self.mud_prob) {
            return bad("mud_prob must lie in [0, 1]");
        }
        if !(rmin < rmax) {
            return bad("odometry_range must be increasing");
        }
        if !(lo <= hi && lo >= rmin && hi <= rmax) {
            return bad("mud_region must be an interval inside odometry_range");
        }
        if self.odometry_bins < 2 {
            return bad("odometry_bins must be at least 2");
        }
        let finite = [
            self.g1,
            self.g2,
            self.reward_success,
            self.reward_failure,
            self.step_penalty,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return bad("goals and rewards must be finite");
        }
        Ok(())
    }

    /// Same world with the environment variant applied.
    pub fn for_env(&self, env: Environment) -> EnvConfig {
        match env {
            Environment::Offline => EnvConfig {
                mud_factor: 1.0,
                ..self.clone()
            },
            Environment::Online => self.clone(),
        }
    }

    /// Largest reward magnitude a single transition can carry: the monitor
    /// reward plus one step penalty.
    pub fn reward_bound(&self) -> f64 {
        self.reward_success.abs().max(self.reward_failure.abs()) + self.step_penalty.abs()
    }

    /// Left edge (m) of an odometry bin.
    pub fn bin_lower(&self, bin: usize) -> f64 {
        let [rmin, rmax] = self.odometry_range;
        rmin + (rmax - rmin) * bin as f64 / self.odometry_bins as f64
    }

    pub fn max_publishes(&self) -> u64 {
        (10.0 * self.t_max / self.dt).ceil() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub position: f64,
    pub steps: u64,
    pub sim_time: f64,
    pub terrain: bool,
    pub episode_mud: Option<[f64; 2]>,
}

impl WorldState {
    fn in_mud(&self, x: f64) -> bool {
        self.episode_mud.is_some_and(|[lo, hi]| x >= lo && x <= hi)
    }

    /// Restarts the monitor clock without moving the robot.
    pub fn restart_clock(&mut self) {
        self.steps = 0;
        self.sim_time = 0.0;
    }
}

pub fn reset(config: &EnvConfig, rng: &mut impl Rng) -> WorldState {
    // Always draw, so the random stream stays aligned across configs.
    let draw: f64 = rng.gen();
    let episode_mud = (config.mud_enabled && draw < config.mud_prob).then_some(config.mud_region);
    let mut s = WorldState {
        position: config.g1,
        steps: 0,
        sim_time: 0.0,
        terrain: false,
        episode_mud,
    };
    s.terrain = s.in_mud(s.position);
    s
}

pub fn apply_velocity(state: &WorldState, v: f64, config: &EnvConfig) -> WorldState {
    let factor = if state.terrain { config.mud_factor } else { 1.0 };
    let mut next = state.clone();
    next.position = state.position + v * factor * config.dt;
    next.steps = state.steps + 1;
    next.sim_time = next.steps as f64 * config.dt;
    next.terrain = next.in_mud(next.position);
    next
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensors {
    pub odometry: f64,
    pub terrain: bool,
    pub odometry_bin: usize,
}

pub fn odometry_bin(position: f64, config: &EnvConfig) -> usize {
    let [rmin, rmax] = config.odometry_range;
    let p = config.odometry_bins;
    let raw = ((position - rmin) / (rmax - rmin) * p as f64).floor();
    if raw.is_nan() || raw < 0.0 {
        0
    } else {
        (raw as usize).min(p - 1)
    }
}

pub fn read_sensors(state: &WorldState, config: &EnvConfig) -> Sensors {
    Sensors {
        odometry: state.position,
        terrain: state.terrain,
        odometry_bin: odometry_bin(state.position, config),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictReason {
    ReachedWithinBounds,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    pub success: bool,
    pub reward_total: f64,
    pub reason: VerdictReason,
}

impl MonitorVerdict {
    pub fn failure(config: &EnvConfig) -> Self {
        MonitorVerdict {
            success: false,
            reward_total: config.reward_failure,
            reason: VerdictReason::Timeout,
        }
    }
}

pub fn judge(state: &WorldState, goal: f64, config: &EnvConfig) -> Option<MonitorVerdict> {
    let in_time = state.sim_time <= config.t_max + TIME_SLACK;
    if in_time && (state.position - goal).abs() <= config.epsilon_spec {
        return Some(MonitorVerdict {
            success: true,
            reward_total: config.reward_success,
            reason: VerdictReason::ReachedWithinBounds,
        });
    }
    (!in_time).then(|| MonitorVerdict::failure(config))
}

/// Messages carried on sensor topics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Message {
    /// `data.pose.pose.position` holds the position.
    Odometry(f64),
    /// `data.data` holds the terrain flag.
    Terrain(bool),
}

pub const ODOMETRY_TOPIC: &str = "Odometry";
pub const TERRAIN_TOPIC: &str = "Terrain";
pub const VELOCITY_TOPIC: &str = "Velocity";

impl Message {
    /// Current message on a sensor topic, or `None` for topics the world does
    /// not publish.
    pub fn on_topic(topic: &str, state: &WorldState) -> Option<Message> {
        match topic {
            ODOMETRY_TOPIC => Some(Message::Odometry(state.position)),
            TERRAIN_TOPIC => Some(Message::Terrain(state.terrain)),
            _ => None,
        }
    }

    /// Field access by attribute path below the message root.
    pub fn field(&self, path: &[String]) -> Option<f64> {
        let p: Vec<&str> = path.iter().map(String::as_str).collect();
        match (self, p.as_slice()) {
            (Message::Odometry(x), ["pose", "pose", "position"]) => Some(*x),
            (Message::Odometry(x), ["pose", "pose", "position", "x"]) => Some(*x),
            (Message::Terrain(b), ["data"]) => Some(if *b { 1.0 } else { 0.0 }),
            _ => None,
        }
    }

    /// Scalar summary used as the flow value of a source binding.
    pub fn scalar(&self) -> f64 {
        match self {
            Message::Odometry(x) => *x,
            Message::Terrain(b) => {
                if *b {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn muddy(position: f64) -> WorldState {
        let mut s = WorldState {
            position,
            steps: 0,
            sim_time: 0.0,
            terrain: false,
            episode_mud: Some([4.0, 6.0]),
        };
        s.terrain = s.in_mud(position);
        s
    }

    #[test]
    fn mud_slows_motion() {
        let c = EnvConfig::default();
        let next = apply_velocity(&muddy(4.5), 1.0, &c);
        assert!((next.position - 4.502).abs() < 1e-12);
        assert!((next.sim_time - 0.01).abs() < 1e-12);
    }

    #[test]
    fn zero_velocity_only_advances_time() {
        let c = EnvConfig::default();
        let s = muddy(2.0);
        let next = apply_velocity(&s, 0.0, &c);
        assert_eq!(next.position, s.position);
        assert_eq!(next.steps, 1);
    }

    #[test]
    fn reset_respects_mud_switches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let off = EnvConfig {
            mud_enabled: false,
            ..EnvConfig::default()
        };
        let always = EnvConfig {
            mud_prob: 1.0,
            ..EnvConfig::default()
        };
        for _ in 0..50 {
            assert!(reset(&off, &mut rng).episode_mud.is_none());
            assert_eq!(reset(&always, &mut rng).episode_mud, Some([4.0, 6.0]));
        }
    }

    #[test]
    fn bins_at_edges() {
        let c = EnvConfig::default();
        assert_eq!(odometry_bin(0.0, &c), 0);
        assert_eq!(odometry_bin(10.0, &c), 19);
        assert_eq!(odometry_bin(5.0, &c), 10);
        assert_eq!(odometry_bin(-3.0, &c), 0);
        assert_eq!(odometry_bin(42.0, &c), 19);
    }

    #[test]
    fn judge_outcomes() {
        let c = EnvConfig::default();
        let mut s = muddy(10.0);
        assert!(judge(&s, 10.0, &c).unwrap().success);
        s.position = 3.0;
        assert!(judge(&s, 10.0, &c).is_none());
        s.steps = 121;
        s.sim_time = 1.21;
        let v = judge(&s, 10.0, &c).unwrap();
        assert!(!v.success);
        assert_eq!(v.reason, VerdictReason::Timeout);
        assert_eq!(v.reward_total, -100.0);
    }

    #[test]
    fn config_validation() {
        assert!(EnvConfig::default().validate().is_ok());
        let bad = EnvConfig {
            mud_factor: 0.0,
            ..EnvConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EnvConfig {
            mud_region: [8.0, 12.0],
            ..EnvConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EnvConfig {
            odometry_bins: 1,
            ..EnvConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn offline_variant_keeps_terrain_sensing() {
        let c = EnvConfig::default().for_env(Environment::Offline);
        assert_eq!(c.mud_factor, 1.0);
        assert_eq!(c.mud_prob, 0.5);
    }
}
