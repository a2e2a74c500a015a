//! Granular waypoint navigation episodes for the supervisory learner.
//!
//! The waypoint sits at the origin of the episode frame. Every
//! `steps_between_actions` physics ticks the supervisor moves the cascade's
//! position reference inside a cube of half-width
//! `scaling_factor * bounding_box` around the waypoint.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{CascadeController, CascadeGains, CascadeState};
use crate::dynamics::{dynamics_step, KinematicState, Mixer, VehicleParams, WindField};
use crate::error::{Error, Result};
use crate::scalar::{clamp, Real, Vec3};

pub const OBS_DIM: usize = 12;
pub const ACTION_DIM: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig<T> {
    /// Half-width of the cube around the waypoint, m.
    pub bounding_box: T,
    /// Fraction of the box the supervisor may offset the reference by, in (0, 1].
    pub scaling_factor: T,
    /// Physics ticks between supervisory decisions, `(f_RL * dt)^-1`.
    pub steps_between_actions: u32,
    pub dt: T,
    /// Episode time limit, s.
    pub max_time: T,
    /// Roll or pitch beyond this ends the episode as tipped, rad.
    pub tip_threshold: T,
    /// Distance to the waypoint that counts as reached, m.
    pub arrival_radius: T,
    /// Velocity normalisation bound and initial speed limit, m/s.
    pub max_velocity: T,
    /// Angular rate normalisation bound, rad/s.
    pub max_rate: T,
}

impl<T: Real> Default for EpisodeConfig<T> {
    fn default() -> Self {
        Self {
            bounding_box: T::lit(20.0),
            scaling_factor: T::lit(0.5),
            steps_between_actions: 10,
            dt: T::lit(0.01),
            max_time: T::lit(20.0),
            tip_threshold: T::lit(30.0).to_radians(),
            arrival_radius: T::lit(0.6),
            max_velocity: T::lit(3.0),
            max_rate: T::PI(),
        }
    }
}

impl<T: Real> EpisodeConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("episode: {m}")));
        if !(self.bounding_box > T::zero()) {
            return bad(format!("bounding_box must be positive, got {}", self.bounding_box));
        }
        if !(self.scaling_factor > T::zero() && self.scaling_factor <= T::one()) {
            return bad(format!("scaling_factor must be in (0, 1], got {}", self.scaling_factor));
        }
        if self.steps_between_actions < 1 {
            return bad("steps_between_actions must be >= 1".into());
        }
        for (name, v) in [
            ("dt", self.dt),
            ("max_time", self.max_time),
            ("tip_threshold", self.tip_threshold),
            ("arrival_radius", self.arrival_radius),
            ("max_velocity", self.max_velocity),
            ("max_rate", self.max_rate),
        ] {
            if !(v > T::zero()) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    /// Maximum number of physics ticks in one episode.
    pub fn max_ticks(&self) -> u64 {
        (self.max_time / self.dt).round().to_u64().unwrap_or(u64::MAX)
    }

    /// Simulated seconds between two supervisory decisions.
    pub fn decision_interval(&self) -> T {
        self.dt * T::from_u32(self.steps_between_actions).expect("u32 representable")
    }

    /// Half-width of the cube the position reference may move in.
    pub fn reference_half_width(&self) -> T {
        self.scaling_factor * self.bounding_box
    }

    /// Out-of-bounds limit per axis. A segment that starts at the arrival
    /// radius of the previous waypoint, one full box away, is still inside.
    pub fn out_of_bounds_limit(&self) -> T {
        self.bounding_box + self.arrival_radius
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Running,
    Reached,
    Tipped,
    OutOfBounds,
    TimedOut,
}

impl Termination {
    pub fn is_done(self) -> bool {
        self != Termination::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Running => "running",
            Termination::Reached => "reached",
            Termination::Tipped => "tipped",
            Termination::OutOfBounds => "out_of_bounds",
            Termination::TimedOut => "timed_out",
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Min-max normalised kinematic state, position relative to the waypoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation<T>(pub [T; OBS_DIM]);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisoryAction<T>(pub [T; ACTION_DIM]);

impl<T: Real> SupervisoryAction<T> {
    pub fn zero() -> Self {
        Self([T::zero(); ACTION_DIM])
    }

    pub fn clipped(&self) -> Self {
        Self(self.0.map(|a| clamp(a, -T::one(), T::one())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult<T> {
    pub observation: Observation<T>,
    pub reward: T,
    pub done: bool,
    pub reason: Termination,
}

/// One physics tick as written to flight logs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord<T> {
    pub t: T,
    pub state: KinematicState<T>,
    pub reference: Vec3<T>,
    /// Set on the tick that closes a supervisory interval (where a reward is issued).
    pub reward_flag: bool,
}

pub const TICK_LOG_HEADER: &str = "t,x,y,z,vx,vy,vz,roll,pitch,yaw,wx,wy,wz,ref_x,ref_y,ref_z,reward_flag";

impl<T: Real> TickRecord<T> {
    /// Comma-separated row matching [`TICK_LOG_HEADER`], positions shifted by `origin`.
    pub fn csv_row(&self, origin: &Vec3<T>) -> String {
        let mut fields: Vec<String> = Vec::with_capacity(17);
        fields.push(format!("{:.2}", self.t.to_f64_lossy()));
        let mut s = self.state;
        s.position += *origin;
        for v in s.to_array() {
            fields.push(format!("{}", v.to_f64_lossy()));
        }
        for v in (self.reference + *origin).0 {
            fields.push(format!("{}", v.to_f64_lossy()));
        }
        fields.push(if self.reward_flag { "1".into() } else { "0".into() });
        fields.join(",")
    }
}

/// Normalises a (waypoint-relative) state into [-1, 1]^12, clipping out-of-range components.
pub fn normalize<T: Real>(state: &KinematicState<T>, config: &EpisodeConfig<T>) -> Observation<T> {
    let bounds = observation_bounds(config);
    let raw = state.to_array();
    Observation(std::array::from_fn(|i| clamp(raw[i] / bounds[i], -T::one(), T::one())))
}

pub fn denormalize<T: Real>(obs: &Observation<T>, config: &EpisodeConfig<T>) -> KinematicState<T> {
    let bounds = observation_bounds(config);
    KinematicState::from_array(&std::array::from_fn(|i| obs.0[i] * bounds[i]))
}

/// Per-component normalisation bounds.
pub fn observation_bounds<T: Real>(config: &EpisodeConfig<T>) -> [T; OBS_DIM] {
    std::array::from_fn(|i| match i / 3 {
        0 => config.bounding_box,
        1 => config.max_velocity,
        2 => T::PI(),
        _ => config.max_rate,
    })
}

/// Per-decision reward: time penalty, turn penalty, unsigned advance, and the
/// cross-track distance relative to the unit start-to-waypoint direction.
pub fn reward<T: Real>(
    r_i: &Vec3<T>,
    r_next: &Vec3<T>,
    yaw_i: T,
    yaw_next: T,
    r_wp: &Vec3<T>,
    r_0: &Vec3<T>,
    dt: T,
) -> T {
    let chord = *r_wp - *r_0;
    let len = chord.norm();
    let dir = if len > T::zero() { chord / len } else { Vec3::zeros() };
    let motion = *r_next - *r_i;
    -dt - (yaw_next.abs() - yaw_i.abs()) + motion.norm() - motion.cross(&dir).norm()
}

/// Bonus or penalty added when an episode ends.
pub fn terminal_reward<T: Real>(reason: Termination, position: &Vec3<T>, waypoint: &Vec3<T>, bounding_box: T) -> T {
    let twenty = T::lit(20.0);
    match reason {
        Termination::Reached => bounding_box * twenty,
        Termination::Tipped | Termination::OutOfBounds => -bounding_box * twenty,
        Termination::TimedOut => -(*position - *waypoint).norm() * T::lit(10.0),
        Termination::Running => T::zero(),
    }
}

/// Samples an initial waypoint-relative state: position uniform in the box,
/// velocity uniform in the ball of radius `max_velocity`, level and still.
pub fn sample_initial_state<T: Real>(config: &EpisodeConfig<T>, rng: &mut impl Rng) -> KinematicState<T> {
    let b = config.bounding_box.to_f64_lossy();
    let position = Vec3(std::array::from_fn(|_| T::lit(rng.random_range(-b..=b))));
    let vmax = config.max_velocity.to_f64_lossy();
    let velocity = loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        if v.iter().map(|c| c * c).sum::<f64>() <= 1.0 {
            break Vec3(v.map(|c| T::lit(c * vmax)));
        }
    };
    KinematicState {
        position,
        velocity,
        attitude: Vec3::zeros(),
        angular_rate: Vec3::zeros(),
    }
}

/// A single navigation episode: cascade + allocation + dynamics + wind.
#[derive(Clone, Debug)]
pub struct Episode<T: Real> {
    config: EpisodeConfig<T>,
    vehicle: VehicleParams<T>,
    mixer: Mixer<T>,
    controller: CascadeController<T>,
    wind: WindField<T>,
    state: KinematicState<T>,
    start: Vec3<T>,
    reference: Vec3<T>,
    ticks: u64,
    reason: Termination,
    started: bool,
    log: Option<Vec<TickRecord<T>>>,
}

impl<T: Real> Episode<T> {
    pub fn new(
        config: EpisodeConfig<T>,
        vehicle: VehicleParams<T>,
        gains: CascadeGains<T>,
        wind: WindField<T>,
    ) -> Result<Self> {
        config.validate()?;
        vehicle.validate()?;
        let mixer = Mixer::new(&vehicle)?;
        let controller = CascadeController::new(gains)?;
        Ok(Self {
            config,
            vehicle,
            mixer,
            controller,
            wind,
            state: KinematicState::default(),
            start: Vec3::zeros(),
            reference: Vec3::zeros(),
            ticks: 0,
            reason: Termination::Running,
            started: false,
            log: None,
        })
    }

    /// Records every physics tick from now on.
    pub fn enable_log(&mut self) {
        self.log = Some(Vec::new());
    }

    pub fn take_log(&mut self) -> Vec<TickRecord<T>> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn config(&self) -> &EpisodeConfig<T> {
        &self.config
    }

    pub fn vehicle(&self) -> &VehicleParams<T> {
        &self.vehicle
    }

    pub fn state(&self) -> &KinematicState<T> {
        &self.state
    }

    pub fn controller_state(&self) -> &CascadeState<T> {
        &self.controller.state
    }

    pub fn reference(&self) -> Vec3<T> {
        self.reference
    }

    /// Ticks elapsed in the current episode.
    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn start_position(&self) -> Vec3<T> {
        self.start
    }

    pub fn reason(&self) -> Termination {
        self.reason
    }

    pub fn wind(&self) -> WindField<T> {
        self.wind
    }

    pub fn set_wind(&mut self, wind: WindField<T>) {
        self.wind = wind;
    }

    pub fn observation(&self) -> Observation<T> {
        normalize(&self.state, &self.config)
    }

    /// Random start drawn from `seed`; all controller state is zeroed.
    pub fn reset(&mut self, seed: u64) -> Result<Observation<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = sample_initial_state(&self.config, &mut rng);
        self.controller.reset();
        self.begin(state)
    }

    /// Starts from a given waypoint-relative state with zeroed controller state.
    pub fn reset_to(&mut self, state: KinematicState<T>) -> Result<Observation<T>> {
        self.controller.reset();
        self.begin(state)
    }

    /// Starts a new segment from `state`, keeping the cascade's internal
    /// state and tick phase from the previous segment.
    pub fn continue_from(&mut self, state: KinematicState<T>) -> Result<Observation<T>> {
        self.begin(state)
    }

    fn begin(&mut self, state: KinematicState<T>) -> Result<Observation<T>> {
        if !state.is_finite() {
            return Err(Error::InvalidInput("non-finite initial state".into()));
        }
        if state.position.norm() == T::zero() {
            return Err(Error::DegeneratePath);
        }
        self.state = state;
        self.start = state.position;
        self.reference = Vec3::zeros();
        self.ticks = 0;
        self.reason = Termination::Running;
        self.started = true;
        if let Some(log) = self.log.as_mut() {
            log.clear();
        }
        Ok(self.observation())
    }

    fn check_termination(&self) -> Termination {
        let c = &self.config;
        let p = &self.state.position;
        if p.norm() <= c.arrival_radius {
            Termination::Reached
        } else if self.state.attitude[0].abs() > c.tip_threshold || self.state.attitude[1].abs() > c.tip_threshold {
            Termination::Tipped
        } else if p.0.iter().any(|v| v.abs() > c.out_of_bounds_limit()) {
            Termination::OutOfBounds
        } else if self.ticks >= c.max_ticks() {
            Termination::TimedOut
        } else {
            Termination::Running
        }
    }

    /// Applies one supervisory action and advances up to
    /// `steps_between_actions` physics ticks (fewer if the episode ends).
    pub fn step(&mut self, action: &SupervisoryAction<T>) -> Result<StepResult<T>> {
        if !self.started || self.reason.is_done() {
            return Err(Error::Contract("step called on a finished or unstarted episode".into()));
        }
        if action.0.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidInput("non-finite supervisory action".into()));
        }
        let scale = self.config.reference_half_width();
        self.reference = Vec3(action.clipped().0.map(|a| a * scale));

        let r_i = self.state.position;
        let yaw_i = self.state.attitude[2];
        let dt = self.config.dt;
        let mut elapsed = 0u32;
        for k in 0..self.config.steps_between_actions {
            let wrench = self.controller.step(&self.vehicle, &self.reference, &self.state, dt);
            let speeds = self.mixer.allocate(&wrench)?;
            self.state = dynamics_step(&self.state, &speeds, &self.wind, &self.vehicle, dt)?;
            self.ticks += 1;
            elapsed += 1;
            self.reason = self.check_termination();
            let last = self.reason.is_done() || k + 1 == self.config.steps_between_actions;
            if let Some(log) = self.log.as_mut() {
                log.push(TickRecord {
                    t: dt * T::from_u64(self.ticks).expect("tick count representable"),
                    state: self.state,
                    reference: self.reference,
                    reward_flag: last,
                });
            }
            if self.reason.is_done() {
                break;
            }
        }

        let interval = dt * T::from_u32(elapsed).expect("u32 representable");
        let origin = Vec3::zeros();
        let mut r = reward(
            &r_i,
            &self.state.position,
            yaw_i,
            self.state.attitude[2],
            &origin,
            &self.start,
            interval,
        );
        if self.reason.is_done() {
            r += terminal_reward(self.reason, &self.state.position, &origin, self.config.bounding_box);
        }
        Ok(StepResult {
            observation: self.observation(),
            reward: r,
            done: self.reason.is_done(),
            reason: self.reason,
        })
    }
}
