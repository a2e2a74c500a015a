//! Long-path flight: splits a path into waypoints at most one bounding box
//! apart and flies them as consecutive navigation episodes.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::CascadeGains;
use crate::dynamics::{KinematicState, VehicleParams, WindField};
use crate::env::{observation_bounds, Episode, EpisodeConfig, SupervisoryAction, Termination, TickRecord, TICK_LOG_HEADER};
use crate::error::{Error, Result};
use crate::policy::PolicyParameters;
use crate::scalar::{Real, Vec3};

pub const SQUARE: &str = include_str!("../data/trajectories/square.txt");
pub const PATROL: &str = include_str!("../data/trajectories/patrol.txt");

/// Start point followed by the waypoints to visit, in navigation coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    pub name: String,
    pub points: Vec<Vec3<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn segments(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidInput(format!("trajectory `{}` has no points", self.name)));
        }
        if self.points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(format!("trajectory `{}` has a non-finite point", self.name)));
        }
        if self.points.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::DegeneratePath);
        }
        Ok(())
    }

    /// Bundled paths by name: `square` (20 m sides) or `patrol` (six legs, ~300 m).
    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "square" => SQUARE,
            "patrol" => PATROL,
            _ => return None,
        };
        Some(parse_path(text, name).expect("bundled trajectory parses"))
    }
}

/// Parses "x,y,z" lines; `#` starts a comment, blank lines are skipped.
pub fn parse_path<T: Real>(text: &str, name: &str) -> Result<Trajectory<T>> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse { line: i + 1, msg: format!("expected x,y,z, got `{line}`") });
        }
        let mut xyz = [T::zero(); 3];
        for (slot, f) in xyz.iter_mut().zip(&fields) {
            let v: f64 = f.parse().map_err(|_| Error::Parse { line: i + 1, msg: format!("not a number: `{f}`") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line: i + 1, msg: format!("non-finite coordinate `{f}`") });
            }
            *slot = T::lit(v);
        }
        points.push(Vec3(xyz));
    }
    if points.is_empty() {
        return Err(Error::Parse { line: 0, msg: "no waypoints".into() });
    }
    Ok(Trajectory { name: name.to_string(), points })
}

pub fn load_path<T: Real>(path: &Path) -> Result<Trajectory<T>> {
    let text = std::fs::read_to_string(path)?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_path(&text, &name)
}

/// Inserts evenly spaced intermediate waypoints so no leg exceeds
/// `bounding_box`. Zero-length legs are dropped.
pub fn decompose<T: Real>(path: &Trajectory<T>, bounding_box: T) -> Result<Trajectory<T>> {
    if path.points.is_empty() {
        return Err(Error::InvalidInput("empty path".into()));
    }
    if !(bounding_box > T::zero()) {
        return Err(Error::InvalidInput(format!("bounding box must be positive, got {bounding_box}")));
    }
    let mut out = vec![path.points[0]];
    for (k, w) in path.points.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let len = (b - a).norm();
        if len == T::zero() {
            log::warn!("dropping zero-length leg {k} of `{}`", path.name);
            continue;
        }
        let n = (len / bounding_box).ceil().to_usize().unwrap_or(1).max(1);
        let nt = T::from_usize_lossy(n);
        for i in 1..n {
            out.push(a + (b - a) * (T::from_usize_lossy(i) / nt));
        }
        out.push(b);
    }
    Ok(Trajectory { name: path.name.clone(), points: out })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    PidOnly,
    RlSupervised,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pid" | "pid_only" => Ok(Mode::PidOnly),
            "rl" | "rl_supervised" => Ok(Mode::RlSupervised),
            _ => Err(Error::InvalidInput(format!("unknown mode `{s}` (pid_only or rl_supervised)"))),
        }
    }
}

/// Wind before and after a segment index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindSchedule<T> {
    pub wind: WindField<T>,
    /// First segment flown in `wind`; earlier segments are calm.
    pub onset_segment: usize,
}

impl<T: Real> WindSchedule<T> {
    pub fn constant(wind: WindField<T>) -> Self {
        Self { wind, onset_segment: 0 }
    }

    /// Wind starting at the middle segment of an `n`-segment flight.
    pub fn midpoint(wind: WindField<T>, segments: usize) -> Self {
        Self { wind, onset_segment: segments / 2 }
    }

    pub fn at(&self, segment: usize) -> WindField<T> {
        if segment >= self.onset_segment {
            self.wind
        } else {
            WindField::calm()
        }
    }
}

pub const DEFAULT_START_SPEED: f64 = 1.0;

/// Initial state of a flight: level at the path start, with a velocity drawn
/// uniformly from the ball of radius `start_speed` by `seed`.
pub fn initial_state<T: Real>(start: Vec3<T>, start_speed: T, seed: u64) -> KinematicState<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vmax = start_speed.to_f64_lossy();
    let v = loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        if v.iter().map(|c| c * c).sum::<f64>() <= 1.0 {
            break v;
        }
    };
    KinematicState {
        velocity: Vec3(v.map(|c| T::lit(c * vmax))),
        ..KinematicState::at_rest(start)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentOutcome<T> {
    pub index: usize,
    pub start: Vec3<T>,
    /// Vehicle state when the segment began, navigation coordinates.
    pub initial_state: KinematicState<T>,
    pub waypoint: Vec3<T>,
    pub reason: Termination,
    pub reward: T,
    pub ticks: u64,
    pub flight_time: T,
    /// Tick log in navigation coordinates, time measured from flight start.
    pub log: Vec<TickRecord<T>>,
}

pub struct FlightSetup<'a, T: Real> {
    pub vehicle: &'a VehicleParams<T>,
    pub gains: &'a CascadeGains<T>,
    pub config: &'a EpisodeConfig<T>,
    pub policy: Option<&'a PolicyParameters<T>>,
    pub wind: WindSchedule<T>,
    /// Upper bound of the seeded initial speed, m/s.
    pub start_speed: T,
}

/// Flies every segment of `trajectory` in turn, carrying the vehicle state
/// and the cascade's internal state across segment boundaries. Stops after
/// a tipped or out-of-bounds segment.
pub fn fly<T: Real>(trajectory: &Trajectory<T>, mode: Mode, setup: &FlightSetup<'_, T>, seed: u64) -> Result<Vec<SegmentOutcome<T>>> {
    trajectory.validate()?;
    if !(setup.start_speed >= T::zero()) || !setup.start_speed.is_finite() {
        return Err(Error::InvalidConfig(format!("start speed must be finite and >= 0, got {}", setup.start_speed)));
    }
    let policy = match (mode, setup.policy) {
        (Mode::RlSupervised, None) => {
            return Err(Error::InvalidConfig("rl_supervised mode requires a policy".into()));
        }
        (Mode::RlSupervised, Some(p)) => {
            let bounds = observation_bounds(setup.config);
            if p.obs_bounds() != bounds.as_slice() {
                return Err(Error::InvalidConfig(
                    "policy was trained with different observation bounds than this episode config".into(),
                ));
            }
            Some(p)
        }
        (Mode::PidOnly, _) => None,
    };

    let mut episode = Episode::new(setup.config.clone(), setup.vehicle.clone(), setup.gains.clone(), setup.wind.at(0))?;
    episode.enable_log();
    let mut state = initial_state(trajectory.points[0], setup.start_speed, seed);
    let mut outcomes = Vec::with_capacity(trajectory.segments());
    let mut elapsed_ticks = 0u64;
    let dt = setup.config.dt;

    for (k, pair) in trajectory.points.windows(2).enumerate() {
        let waypoint = pair[1];
        episode.set_wind(setup.wind.at(k));
        let mut rel = state;
        rel.position = state.position - waypoint;
        let initial_state = state;
        let mut obs = if k == 0 { episode.reset_to(rel)? } else { episode.continue_from(rel)? };
        let mut reward = T::zero();
        let reason = loop {
            let action = match policy {
                Some(p) => {
                    let a = p.act(&obs.0)?;
                    SupervisoryAction([a[0], a[1], a[2]])
                }
                None => SupervisoryAction::zero(),
            };
            let step = episode.step(&action)?;
            reward += step.reward;
            obs = step.observation;
            if step.done {
                break step.reason;
            }
        };
        let offset = dt * T::from_u64(elapsed_ticks).expect("tick count representable");
        let log = episode
            .take_log()
            .into_iter()
            .map(|mut r| {
                r.t += offset;
                r.state.position += waypoint;
                r.reference += waypoint;
                r
            })
            .collect();
        let ticks = episode.ticks();
        elapsed_ticks += ticks;
        state = *episode.state();
        state.position += waypoint;
        outcomes.push(SegmentOutcome {
            index: k,
            start: state_start(&episode, waypoint),
            initial_state,
            waypoint,
            reason,
            reward,
            ticks,
            flight_time: dt * T::from_u64(ticks).expect("tick count representable"),
            log,
        });
        if matches!(reason, Termination::Tipped | Termination::OutOfBounds) {
            break;
        }
    }
    Ok(outcomes)
}

fn state_start<T: Real>(episode: &Episode<T>, waypoint: Vec3<T>) -> Vec3<T> {
    episode.start_position() + waypoint
}

/// Whole-flight summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlightSummary<T> {
    pub trajectory: String,
    pub segments_total: usize,
    pub segments_flown: usize,
    pub segments_reached: usize,
    pub completion: T,
    pub total_reward: T,
    pub flight_time: T,
    pub final_reason: Termination,
    pub mean_deviation: T,
    pub max_deviation: T,
    pub segment_rewards: Vec<T>,
}

/// Distance from `p` to the segment `a`-`b`.
pub fn chord_distance<T: Real>(p: &Vec3<T>, a: &Vec3<T>, b: &Vec3<T>) -> T {
    let ab = *b - *a;
    let len2 = ab.dot(&ab);
    let s = if len2 > T::zero() {
        ((*p - *a).dot(&ab) / len2).max(T::zero()).min(T::one())
    } else {
        T::zero()
    };
    (*p - (*a + ab * s)).norm()
}

/// Per-tick deviation of each logged position from the planned chord of its segment.
pub fn deviations<T: Real>(trajectory: &Trajectory<T>, outcomes: &[SegmentOutcome<T>]) -> Vec<T> {
    outcomes
        .iter()
        .flat_map(|o| {
            let a = trajectory.points[o.index];
            let b = trajectory.points[o.index + 1];
            o.log.iter().map(move |r| chord_distance(&r.state.position, &a, &b))
        })
        .collect()
}

pub fn score<T: Real>(trajectory: &Trajectory<T>, outcomes: &[SegmentOutcome<T>]) -> Result<FlightSummary<T>> {
    if outcomes.is_empty() {
        return Err(Error::InvalidInput("no segments flown".into()));
    }
    let reached = outcomes.iter().filter(|o| o.reason == Termination::Reached).count();
    let total = trajectory.segments().max(outcomes.len());
    let dev = deviations(trajectory, outcomes);
    let n = T::from_usize_lossy(dev.len().max(1));
    Ok(FlightSummary {
        trajectory: trajectory.name.clone(),
        segments_total: total,
        segments_flown: outcomes.len(),
        segments_reached: reached,
        completion: T::from_usize_lossy(reached) / T::from_usize_lossy(total),
        total_reward: outcomes.iter().map(|o| o.reward).sum(),
        flight_time: outcomes.iter().map(|o| o.flight_time).sum(),
        final_reason: outcomes.last().map(|o| o.reason).unwrap_or(Termination::Running),
        mean_deviation: dev.iter().copied().sum::<T>() / n,
        max_deviation: dev.iter().copied().fold(T::zero(), T::max),
        segment_rewards: outcomes.iter().map(|o| o.reward).collect(),
    })
}

pub const FLIGHT_LOG_HEADER_SUFFIX: &str = ",segment";

/// Flight log CSV: the episode tick schema plus a segment-index column.
pub fn flight_log_csv<T: Real>(outcomes: &[SegmentOutcome<T>]) -> String {
    let mut s = String::new();
    s.push_str(TICK_LOG_HEADER);
    s.push_str(FLIGHT_LOG_HEADER_SUFFIX);
    s.push('\n');
    let origin = Vec3::zeros();
    for o in outcomes {
        for r in &o.log {
            s.push_str(&r.csv_row(&origin));
            s.push(',');
            s.push_str(&o.index.to_string());
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::reward;
    use crate::env::terminal_reward;
    use crate::policy::NetShape;

    fn setup<'a>(v: &'a VehicleParams<f64>, g: &'a CascadeGains<f64>, c: &'a EpisodeConfig<f64>, wind: WindField<f64>) -> FlightSetup<'a, f64> {
        FlightSetup { vehicle: v, gains: g, config: c, policy: None, wind: WindSchedule::constant(wind), start_speed: DEFAULT_START_SPEED }
    }

    #[test]
    fn decompose_examples() {
        let line = Trajectory { name: "l".into(), points: vec![Vec3::<f64>::zeros(), Vec3::new(60.0, 0.0, 0.0)] };
        let d = decompose(&line, 20.0).unwrap();
        assert_eq!(d.points.len(), 4);
        assert_eq!(d.points[1], Vec3::new(20.0, 0.0, 0.0));
        assert_eq!(d.points[3], Vec3::new(60.0, 0.0, 0.0));

        let fifty = Trajectory { name: "f".into(), points: vec![Vec3::<f64>::zeros(), Vec3::new(50.0, 0.0, 0.0)] };
        let d = decompose(&fifty, 20.0).unwrap();
        assert_eq!(d.segments(), 3);
        for w in d.points.windows(2) {
            assert!(((w[1] - w[0]).norm() - 50.0 / 3.0).abs() < 1e-12);
        }

        let sq = Trajectory::<f64>::builtin("square").unwrap();
        assert_eq!(decompose(&sq, 20.0).unwrap(), sq);
        assert_eq!(sq.segments(), 4);

        let dup = Trajectory { name: "d".into(), points: vec![Vec3::<f64>::zeros(), Vec3::zeros(), Vec3::new(10.0, 0.0, 0.0)] };
        assert_eq!(decompose(&dup, 20.0).unwrap().points.len(), 2);
    }

    #[test]
    fn patrol_is_six_legs_near_three_hundred_metres() {
        let p = Trajectory::<f64>::builtin("patrol").unwrap();
        assert_eq!(p.segments(), 6);
        let len: f64 = p.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        assert!((280.0..320.0).contains(&len), "{len}");
    }

    #[test]
    fn parse_reports_line_numbers() {
        assert!(matches!(parse_path::<f64>("# c\n1,2,3\n1,2\n", "x"), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(parse_path::<f64>("1,2,abc\n", "x"), Err(Error::Parse { line: 1, .. })));
        let t = parse_path::<f64>("0,0,0 # start\n\n5,0,0\n", "x").unwrap();
        assert_eq!(t.points.len(), 2);
    }

    #[test]
    fn square_pid_only_completes() {
        let (v, g, c) = (VehicleParams::default(), CascadeGains::default(), EpisodeConfig::default());
        let sq = Trajectory::builtin("square").unwrap();
        let out = fly(&sq, Mode::PidOnly, &setup(&v, &g, &c, WindField::calm()), 1).unwrap();
        let s = score(&sq, &out).unwrap();
        assert_eq!(s.completion, 1.0);
        assert_eq!(s.segments_reached, 4);
        assert!((s.total_reward - out.iter().map(|o| o.reward).sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn zero_policy_matches_pid_only() {
        let (v, g, c) = (VehicleParams::default(), CascadeGains::default(), EpisodeConfig::default());
        let zero = PolicyParameters::<f64>::zeros(NetShape::supervisor());
        let mut zero = zero;
        zero.block_mut("obs_bounds").copy_from_slice(&observation_bounds(&c));
        let sq = Trajectory::builtin("square").unwrap();
        let wind = WindField::from_polar(5.0, 90.0);
        let pid = fly(&sq, Mode::PidOnly, &setup(&v, &g, &c, wind), 4).unwrap();
        let mut s = setup(&v, &g, &c, wind);
        s.policy = Some(&zero);
        let rl = fly(&sq, Mode::RlSupervised, &s, 4).unwrap();
        assert_eq!(flight_log_csv(&pid), flight_log_csv(&rl));
        assert_eq!(pid, rl);
    }

    #[test]
    fn rl_without_policy_is_config_error() {
        let (v, g, c) = (VehicleParams::default(), CascadeGains::default(), EpisodeConfig::default());
        let sq = Trajectory::builtin("square").unwrap();
        assert!(matches!(fly(&sq, Mode::RlSupervised, &setup(&v, &g, &c, WindField::calm()), 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn carry_over_and_rebasing() {
        let (v, g, c) = (VehicleParams::default(), CascadeGains::default(), EpisodeConfig::default());
        let sq = Trajectory::builtin("square").unwrap();
        let out = fly(&sq, Mode::PidOnly, &setup(&v, &g, &c, WindField::from_polar(5.0, 45.0)), 2).unwrap();
        for w in out.windows(2) {
            let last = w[0].log.last().unwrap();
            let next = &w[1].initial_state;
            assert_eq!(next.velocity, last.state.velocity);
            assert_eq!(next.attitude, last.state.attitude);
            assert_eq!(next.angular_rate, last.state.angular_rate);
            assert!((w[1].start - last.state.position).norm() < 1e-9);
        }
        let mut t_prev = 0.0;
        for o in &out {
            assert_eq!(o.log.len() as u64, o.ticks);
            for r in &o.log {
                assert!(r.t > t_prev);
                t_prev = r.t;
            }
        }
    }

    #[test]
    fn segment_rewards_replay_from_log() {
        let (v, g, c) = (VehicleParams::default(), CascadeGains::default(), EpisodeConfig::default());
        let sq = Trajectory::builtin("square").unwrap();
        let out = fly(&sq, Mode::PidOnly, &setup(&v, &g, &c, WindField::from_polar(5.0, 90.0)), 3).unwrap();
        for o in &out {
            // Decision instants are the flagged ticks; the first instant is the segment start.
            let mut prev_pos = o.start - o.waypoint;
            let mut prev_yaw = if o.index == 0 { 0.0 } else { out[o.index - 1].log.last().unwrap().state.attitude[2] };
            let mut prev_tick = 0usize;
            let mut total: f64 = 0.0;
            for (i, r) in o.log.iter().enumerate() {
                if !r.reward_flag {
                    continue;
                }
                let pos = r.state.position - o.waypoint;
                let n = i + 1 - prev_tick;
                total += reward(&prev_pos, &pos, prev_yaw, r.state.attitude[2], &Vec3::zeros(), &(o.start - o.waypoint), 0.01 * n as f64);
                prev_pos = pos;
                prev_yaw = r.state.attitude[2];
                prev_tick = i + 1;
            }
            total += terminal_reward(o.reason, &prev_pos, &Vec3::zeros(), 20.0);
            assert!((total - o.reward).abs() < 1e-9, "{total} vs {}", o.reward);
        }
    }

    #[test]
    fn straight_flight_has_zero_deviation() {
        let traj = Trajectory { name: "t".into(), points: vec![Vec3::zeros(), Vec3::new(10.0, 0.0, 0.0)] };
        let mut log = Vec::new();
        for i in 0..5 {
            let s = KinematicState::at_rest(Vec3::new(i as f64 * 2.0, 0.0, 0.0));
            log.push(TickRecord { t: i as f64, state: s, reference: Vec3::zeros(), reward_flag: false });
        }
        let o = SegmentOutcome {
            index: 0,
            start: Vec3::zeros(),
            initial_state: KinematicState::default(),
            waypoint: traj.points[1],
            reason: Termination::Reached,
            reward: 1.0,
            ticks: 5,
            flight_time: 0.05,
            log,
        };
        assert!(deviations(&traj, std::slice::from_ref(&o)).iter().all(|d| *d == 0.0));
        let tipped = SegmentOutcome { reason: Termination::Tipped, ..o.clone() };
        let four = Trajectory { name: "q".into(), points: Trajectory::<f64>::builtin("square").unwrap().points };
        let mut second = tipped.clone();
        second.index = 1;
        let s = score(&four, &[o, second]).unwrap();
        assert_eq!(s.completion, 0.25);
    }
}
