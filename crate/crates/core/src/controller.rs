//! Four-loop cascaded PID (position -> velocity -> attitude -> rate) with
//! square-root proportional scaling, leashing and multi-rate scheduling.
//!
//! Lateral position and velocity loops run once every [`OUTER_LOOP_DIVIDER`]
//! ticks and hold their outputs in between; attitude, rate and the altitude
//! rate loop run every tick. Yaw is not controlled: the yaw torque is zero.

use serde::{Deserialize, Serialize};

use crate::dynamics::{KinematicState, VehicleParams, Wrench};
use crate::error::{Error, Result};
use crate::scalar::{clamp, wrap_angle, Real, Vec3};

/// Physics ticks per outer-loop (position/velocity) update: 100 Hz vs 10 Hz.
pub const OUTER_LOOP_DIVIDER: u64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidGains<T> {
    pub k_p: T,
    pub k_i: T,
    pub k_d: T,
    /// Clamp on the integral accumulator.
    pub integral_limit: T,
    /// Clamp on the loop output.
    pub output_limit: T,
}

impl<T: Real> PidGains<T> {
    /// Gains with the integral limit at 10% of the output limit.
    pub fn new(k_p: T, k_i: T, k_d: T, output_limit: T) -> Self {
        Self {
            k_p,
            k_i,
            k_d,
            integral_limit: output_limit * T::lit(0.1),
            output_limit,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = [self.k_p, self.k_i, self.k_d].iter().all(|g| *g >= T::zero() && g.is_finite())
            && self.integral_limit > T::zero()
            && self.output_limit > T::zero();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "{name}: gains must be finite and >= 0, limits > 0"
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PidState<T> {
    pub integral: T,
    /// `None` until the first step, so the first derivative is zero.
    pub prev_error: Option<T>,
    pub last_output: T,
}

/// How the proportional term is formed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Proportional<T> {
    Linear,
    /// Square-root scaled with the given error-acceleration limit.
    SqrtScaled { accel: T },
}

/// Square-root scaled proportional response.
///
/// Linear (`k_p * e`) inside `|e| <= accel / k_p^2`, square-root law outside,
/// then clipped to `±|e| / dt`.
pub fn sqrt_scale<T: Real>(e: T, k_p: T, accel: T, dt: T) -> Result<T> {
    if !(accel > T::zero()) {
        return Err(Error::InvalidConfig(format!(
            "square-root scaling needs a positive acceleration limit, got {accel}"
        )));
    }
    if !(dt > T::zero()) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    Ok(sqrt_scale_unchecked(e, k_p, accel, dt))
}

fn sqrt_scale_unchecked<T: Real>(e: T, k_p: T, accel: T, dt: T) -> T {
    let two = T::lit(2.0);
    let mag = e.abs();
    let raw = if k_p > T::zero() {
        let linear_half_width = accel / (k_p * k_p);
        if mag <= linear_half_width {
            k_p * e
        } else {
            (two * accel * (mag - linear_half_width / two)).sqrt() * e.signum()
        }
    } else if mag > T::zero() {
        (two * accel * mag).sqrt() * e.signum()
    } else {
        T::zero()
    };
    let bound = mag / dt;
    clamp(raw, -bound, bound)
}

/// Maximum error magnitude fed to the proportional path given the current speed.
///
/// Returns `None` when `k_p == 0`, in which case leashing is skipped.
pub fn leash<T: Real>(k_p: T, accel: T, speed: T) -> Option<T> {
    if !(k_p > T::zero()) || !(accel > T::zero()) {
        return None;
    }
    let two = T::lit(2.0);
    Some((accel / (two * k_p * k_p) + speed * speed / (two * accel)).abs())
}

/// One PID update. Returns the clamped output and the new state.
pub fn pid_step<T: Real>(
    gains: &PidGains<T>,
    state: &PidState<T>,
    e: T,
    dt: T,
    proportional: Proportional<T>,
) -> (T, PidState<T>) {
    let p = match proportional {
        Proportional::Linear => gains.k_p * e,
        Proportional::SqrtScaled { accel } => sqrt_scale_unchecked(e, gains.k_p, accel, dt),
    };
    let d = match state.prev_error {
        Some(prev) => gains.k_d * (e - prev) / dt,
        None => T::zero(),
    };
    let integral = clamp(state.integral + e * dt, -gains.integral_limit, gains.integral_limit);
    let out = clamp(p + d + gains.k_i * integral, -gains.output_limit, gains.output_limit);
    (
        out,
        PidState {
            integral,
            prev_error: Some(e),
            last_output: out,
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeGains<T> {
    pub position: PidGains<T>,
    pub velocity: PidGains<T>,
    pub attitude: PidGains<T>,
    pub rate: PidGains<T>,
    /// Angular acceleration limit of the rate loop, rad/s^2.
    pub rate_max_acc: T,
    /// Acceleration limit used by the position loop's square-root scaling, m/s^2.
    pub sqrt_scaling_accel: T,
    pub leash_enabled: bool,
    /// P gain of the altitude position -> climb-rate loop.
    pub altitude_velocity_kp: T,
    /// P gain of the climb-rate -> vertical acceleration loop.
    pub altitude_rate_kp: T,
    /// Velocity reference envelope, m/s.
    pub max_velocity: T,
    /// Roll/pitch reference envelope, rad.
    pub max_tilt: T,
}

impl<T: Real> Default for CascadeGains<T> {
    fn default() -> Self {
        let l = T::lit;
        Self {
            position: PidGains::new(l(1.0), l(0.1), l(0.0), l(3.0)),
            velocity: PidGains::new(l(2.0), l(0.5), l(0.0), l(2.6)),
            attitude: PidGains::new(l(6.0), l(0.0), l(0.0), l(2.0)),
            rate: PidGains::new(l(20.0), l(0.0), l(0.0), l(20.0)),
            rate_max_acc: l(5.0),
            sqrt_scaling_accel: l(2.5),
            leash_enabled: true,
            altitude_velocity_kp: l(1.0),
            altitude_rate_kp: l(10.0),
            max_velocity: l(3.0),
            max_tilt: T::PI() / l(12.0),
        }
    }
}

impl<T: Real> CascadeGains<T> {
    pub fn validate(&self) -> Result<()> {
        self.position.validate("position")?;
        self.velocity.validate("velocity")?;
        self.attitude.validate("attitude")?;
        self.rate.validate("rate")?;
        let positive = [
            ("rate max_acc", self.rate_max_acc),
            ("sqrt scaling accel", self.sqrt_scaling_accel),
            ("max velocity", self.max_velocity),
            ("max tilt", self.max_tilt),
        ];
        for (name, v) in positive {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.altitude_velocity_kp < T::zero() || self.altitude_rate_kp < T::zero() {
            return Err(Error::InvalidConfig("altitude gains must be >= 0".into()));
        }
        Ok(())
    }
}

/// Most recent output of each loop, for inspection and logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoopOutputs<T> {
    /// Navigation-frame velocity reference (x, y, z), m/s.
    pub velocity_ref: Vec3<T>,
    /// Lateral acceleration demanded by the velocity loop, m/s^2.
    pub accel_ref: [T; 2],
    /// (roll, pitch) references, rad.
    pub tilt_ref: [T; 2],
    /// Body rate references, rad/s.
    pub rate_ref: Vec3<T>,
    /// Commanded body angular acceleration, rad/s^2.
    pub angular_accel: Vec3<T>,
}

/// Internal state of every loop in the cascade.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CascadeState<T> {
    pub position: [PidState<T>; 2],
    pub velocity: [PidState<T>; 2],
    pub attitude: [PidState<T>; 2],
    pub rate: [PidState<T>; 2],
    pub outputs: LoopOutputs<T>,
}

impl<T: Real> CascadeState<T> {
    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// One 100 Hz cascade update; the outer loops only run when `tick` is a
/// multiple of [`OUTER_LOOP_DIVIDER`].
pub fn cascade_step<T: Real>(
    gains: &CascadeGains<T>,
    vehicle: &VehicleParams<T>,
    states: &mut CascadeState<T>,
    reference: &Vec3<T>,
    measured: &KinematicState<T>,
    dt: T,
    tick: u64,
) -> Wrench<T> {
    let g = vehicle.gravity;
    let v_nav = measured.nav_velocity();

    if tick % OUTER_LOOP_DIVIDER == 0 {
        let outer_dt = dt * T::from_u64(OUTER_LOOP_DIVIDER).expect("small integer");
        let accel = gains.sqrt_scaling_accel;

        // position -> velocity reference
        let mut err = [reference[0] - measured.position[0], reference[1] - measured.position[1]];
        if gains.leash_enabled {
            let speed = v_nav.norm_xy();
            if let Some(max_err) = leash(gains.position.k_p, accel, speed) {
                let mag = err[0].hypot(err[1]);
                if mag > max_err {
                    let s = max_err / mag;
                    err = [err[0] * s, err[1] * s];
                }
            }
        }
        let mut vel_ref = [T::zero(); 2];
        for axis in 0..2 {
            let (out, st) = pid_step(
                &gains.position,
                &states.position[axis],
                err[axis],
                outer_dt,
                Proportional::SqrtScaled { accel },
            );
            vel_ref[axis] = out;
            states.position[axis] = st;
        }
        let vmag = vel_ref[0].hypot(vel_ref[1]);
        if vmag > gains.max_velocity {
            let s = gains.max_velocity / vmag;
            vel_ref = [vel_ref[0] * s, vel_ref[1] * s];
        }
        let vz_ref = clamp(
            gains.altitude_velocity_kp * (reference[2] - measured.position[2]),
            -gains.max_velocity,
            gains.max_velocity,
        );

        // velocity -> lateral acceleration -> tilt references
        let mut acc = [T::zero(); 2];
        for axis in 0..2 {
            let (out, st) = pid_step(
                &gains.velocity,
                &states.velocity[axis],
                vel_ref[axis] - v_nav[axis],
                outer_dt,
                Proportional::Linear,
            );
            acc[axis] = out;
            states.velocity[axis] = st;
        }
        let (sy, cy) = measured.attitude[2].sin_cos();
        let a_fwd = cy * acc[0] + sy * acc[1];
        let a_right = -sy * acc[0] + cy * acc[1];
        let max_tilt = gains.max_tilt;
        let roll_ref = clamp(a_right / g, -max_tilt, max_tilt);
        let pitch_ref = clamp(-a_fwd / g, -max_tilt, max_tilt);

        states.outputs.velocity_ref = Vec3::new(vel_ref[0], vel_ref[1], vz_ref);
        states.outputs.accel_ref = acc;
        states.outputs.tilt_ref = [roll_ref, pitch_ref];
    }

    // attitude -> body rate references
    let mut rate_ref = Vec3::zeros();
    for axis in 0..2 {
        let e = wrap_angle(states.outputs.tilt_ref[axis] - measured.attitude[axis]);
        let (out, st) = pid_step(
            &gains.attitude,
            &states.attitude[axis],
            e,
            dt,
            Proportional::SqrtScaled {
                accel: gains.rate_max_acc,
            },
        );
        rate_ref[axis] = out;
        states.attitude[axis] = st;
    }

    // rate -> angular acceleration -> torque
    let mut alpha = Vec3::zeros();
    for axis in 0..2 {
        let (out, st) = pid_step(
            &gains.rate,
            &states.rate[axis],
            rate_ref[axis] - measured.angular_rate[axis],
            dt,
            Proportional::Linear,
        );
        alpha[axis] = clamp(out, -gains.rate_max_acc, gains.rate_max_acc);
        states.rate[axis] = st;
    }
    let torque = Vec3::new(alpha[0] * vehicle.inertia[0], alpha[1] * vehicle.inertia[1], T::zero());

    // altitude: climb-rate error -> vertical acceleration (NED, +down) -> thrust
    let az = gains.altitude_rate_kp * (states.outputs.velocity_ref[2] - v_nav[2]);
    let tilt_cos = (measured.attitude[0].cos() * measured.attitude[1].cos()).max(T::lit(0.5));
    let thrust = (vehicle.mass * (g - az) / tilt_cos).max(T::zero());

    states.outputs.rate_ref = rate_ref;
    states.outputs.angular_accel = alpha;
    Wrench { thrust, torque }
}

/// A cascade bound to one vehicle, owning its loop state and tick counter.
#[derive(Clone, Debug)]
pub struct CascadeController<T> {
    pub gains: CascadeGains<T>,
    pub state: CascadeState<T>,
    pub tick: u64,
}

impl<T: Real> CascadeController<T> {
    pub fn new(gains: CascadeGains<T>) -> Result<Self> {
        gains.validate()?;
        Ok(Self {
            gains,
            state: CascadeState::default(),
            tick: 0,
        })
    }

    pub fn reset(&mut self) {
        self.state.reset();
        self.tick = 0;
    }

    pub fn step(
        &mut self,
        vehicle: &VehicleParams<T>,
        reference: &Vec3<T>,
        measured: &KinematicState<T>,
        dt: T,
    ) -> Wrench<T> {
        let w = cascade_step(&self.gains, vehicle, &mut self.state, reference, measured, dt, self.tick);
        self.tick += 1;
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Mixer, WindField};
    use proptest::prelude::*;

    /// Piecewise law evaluated literally, branch by branch.
    fn sqrt_oracle(e: f64, kp: f64, acc: f64, dt: f64) -> f64 {
        let r = if kp > 0.0 {
            let l = acc / (kp * kp);
            if e.abs() <= l {
                kp * e
            } else if e > 0.0 {
                (2.0 * acc * (e - l / 2.0)).sqrt()
            } else {
                -(2.0 * acc * (-e - l / 2.0)).sqrt()
            }
        } else if e > 0.0 {
            (2.0 * acc * e).sqrt()
        } else if e < 0.0 {
            -(2.0 * acc * -e).sqrt()
        } else {
            0.0
        };
        r.max(-e.abs() / dt).min(e.abs() / dt)
    }

    #[test]
    fn sqrt_scale_examples() {
        assert_eq!(sqrt_scale(0.0f64, 2.0, 4.0, 0.1).unwrap(), 0.0);
        assert!((sqrt_scale(0.5f64, 2.0, 4.0, 0.1).unwrap() - 1.0).abs() < 1e-12);
        assert!((sqrt_scale(10.0f64, 2.0, 4.0, 0.1).unwrap() - 76f64.sqrt()).abs() < 1e-12);
        assert!((sqrt_scale(10.0f64, 2.0, 4.0, 0.1).unwrap() - 8.7178).abs() < 1e-4);
        assert!(matches!(sqrt_scale(1.0, 2.0, 0.0, 0.1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn sqrt_scale_outer_clip() {
        // raw response 1.0 would exceed |e|/dt = 0.5
        assert!((sqrt_scale(0.5f64, 2.0, 4.0, 1.0).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sqrt_scale_continuous_at_boundary() {
        for &(kp, acc) in &[(2.0, 4.0), (0.7, 2.5), (5.0, 1.0)] {
            let l: f64 = acc / (kp * kp);
            let inside = sqrt_scale(l, kp, acc, 1e6).unwrap();
            let outside = sqrt_scale(l * (1.0 + 1e-12), kp, acc, 1e6).unwrap();
            assert!((inside - outside).abs() < 1e-9, "{inside} vs {outside}");
        }
    }

    #[test]
    fn leash_examples() {
        assert!((leash(2.0f64, 4.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((leash(2.0f64, 4.0, 3.0).unwrap() - 1.625).abs() < 1e-15);
        assert!(leash(0.0f64, 4.0, 3.0).is_none());
    }

    #[test]
    fn pid_examples() {
        let zero = PidState::default();
        let g = PidGains::new(1.0f64, 0.0, 0.0, 100.0);
        let mut st = zero;
        for _ in 0..10 {
            let (o, s) = pid_step(&g, &st, 0.0, 0.01, Proportional::Linear);
            assert_eq!(o, 0.0);
            st = s;
        }
        assert_eq!(pid_step(&g, &zero, 2.0, 0.01, Proportional::Linear).0, 2.0);

        let gi = PidGains {
            k_p: 0.0f64,
            k_i: 1.0,
            k_d: 0.0,
            integral_limit: 10.0,
            output_limit: 10.0,
        };
        let (o1, s1) = pid_step(&gi, &zero, 2.0, 0.1, Proportional::Linear);
        let (o2, _) = pid_step(&gi, &s1, 2.0, 0.1, Proportional::Linear);
        assert!((o1 - 0.2).abs() < 1e-12 && (o2 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn first_derivative_is_zero() {
        let g = PidGains::new(0.0f64, 0.0, 5.0, 1000.0);
        let (o, s) = pid_step(&g, &PidState::default(), 3.0, 0.01, Proportional::Linear);
        assert_eq!(o, 0.0);
        let (o2, _) = pid_step(&g, &s, 4.0, 0.01, Proportional::Linear);
        assert!((o2 - 500.0).abs() < 1e-9);
    }

    #[test]
    fn zero_error_gives_hover_wrench() {
        let p = VehicleParams::<f64>::default();
        let gains = CascadeGains::default();
        let mut st = CascadeState::default();
        let m = KinematicState::at_rest(Vec3::new(1.0, -2.0, -5.0));
        let w = cascade_step(&gains, &p, &mut st, &m.position, &m, 0.01, 0);
        assert!((w.thrust - p.weight()).abs() < 1e-9);
        assert_eq!(w.torque, Vec3::zeros());
    }

    #[test]
    fn far_reference_respects_envelope() {
        let p = VehicleParams::<f64>::default();
        let gains = CascadeGains::default();
        let mut st = CascadeState::default();
        let m = KinematicState::at_rest(Vec3::zeros());
        cascade_step(&gains, &p, &mut st, &Vec3::new(20.0, 0.0, 0.0), &m, 0.01, 0);
        let o = st.outputs;
        assert!(o.tilt_ref[1] < 0.0, "nose-down pitch to accelerate forward");
        assert!(o.tilt_ref[1].abs() <= std::f64::consts::PI / 12.0 + 1e-15);
        assert!(o.velocity_ref.norm_xy() <= 3.0 + 1e-12);
    }

    #[test]
    fn outer_loops_hold_between_updates() {
        let p = VehicleParams::<f64>::default();
        let mut c = CascadeController::new(CascadeGains::default()).unwrap();
        let mixer = Mixer::new(&p).unwrap();
        let mut s = KinematicState::at_rest(Vec3::zeros());
        let target = Vec3::new(5.0, -3.0, -1.0);
        let mut prev = c.state.outputs;
        for tick in 0..200u64 {
            let w = c.step(&p, &target, &s, 0.01);
            let speeds = mixer.allocate(&w).unwrap();
            s = crate::dynamics::dynamics_step(&s, &speeds, &WindField::calm(), &p, 0.01).unwrap();
            let o = c.state.outputs;
            if tick % OUTER_LOOP_DIVIDER != 0 {
                assert_eq!(o.velocity_ref, prev.velocity_ref);
                assert_eq!(o.tilt_ref, prev.tilt_ref);
            }
            assert!(o.angular_accel.0.iter().all(|a| a.abs() <= 5.0));
            prev = o;
        }
    }

    #[test]
    fn reset_replays_identically() {
        let p = VehicleParams::<f64>::default();
        let mut c = CascadeController::new(CascadeGains::default()).unwrap();
        let inputs: Vec<KinematicState<f64>> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.1;
                let mut s = KinematicState::at_rest(Vec3::new(t.sin(), t.cos(), -t));
                s.attitude = Vec3::new(0.01 * t, -0.02 * t, 0.0);
                s
            })
            .collect();
        let run = |c: &mut CascadeController<f64>| -> Vec<Wrench<f64>> {
            inputs.iter().map(|s| c.step(&p, &Vec3::new(3.0, 1.0, -2.0), s, 0.01)).collect()
        };
        let a = run(&mut c);
        c.reset();
        let b = run(&mut c);
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn sqrt_scale_matches_oracle(e in -50.0f64..50.0, kp in 0.0f64..10.0, acc in 0.1f64..10.0, dt in 0.001f64..1.0) {
            let kp = if kp < 0.5 { 0.0 } else { kp };
            let got = sqrt_scale(e, kp, acc, dt).unwrap();
            prop_assert!((got - sqrt_oracle(e, kp, acc, dt)).abs() < 1e-9);
            prop_assert_eq!(sqrt_scale(-e, kp, acc, dt).unwrap(), -got);
        }

        #[test]
        fn leash_monotone_in_speed(kp in 0.1f64..10.0, acc in 0.1f64..10.0, s1 in 0.0f64..10.0, ds in 0.0f64..5.0) {
            prop_assert!(leash(kp, acc, s1 + ds).unwrap() >= leash(kp, acc, s1).unwrap());
        }

        #[test]
        fn integral_stays_clamped(errors in proptest::collection::vec(-100.0f64..100.0, 1..200)) {
            let g = PidGains::new(1.0, 2.0, 0.5, 3.0);
            let mut st = PidState::default();
            for e in errors {
                let (_, s) = pid_step(&g, &st, e, 0.01, Proportional::Linear);
                prop_assert!(s.integral.abs() <= g.integral_limit);
                st = s;
            }
        }
    }
}
