//! Rigid-body octorotor model.
//!
//! Frames follow the usual autopilot convention: the navigation frame is
//! north-east-down (z points down, gravity is `+g` along z) and the body frame
//! is forward-right-down. Rotor thrust acts along body `-z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{wrap_angle, Mat3, Real, Vec3};

pub const ROTOR_COUNT: usize = 8;

/// Vehicle kinematic state; doubles as the raw observation of the supervisor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KinematicState<T> {
    /// Navigation-frame position, m.
    pub position: Vec3<T>,
    /// Body-frame velocity, m/s.
    pub velocity: Vec3<T>,
    /// Euler angles (roll, pitch, yaw), rad, each in [-pi, pi].
    pub attitude: Vec3<T>,
    /// Body angular rate, rad/s.
    pub angular_rate: Vec3<T>,
}

impl<T: Real> KinematicState<T> {
    pub fn at_rest(position: Vec3<T>) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            attitude: Vec3::zeros(),
            angular_rate: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite()
            && self.velocity.is_finite()
            && self.attitude.is_finite()
            && self.angular_rate.is_finite()
    }

    pub fn rotation(&self) -> Mat3<T> {
        Mat3::from_euler(self.attitude[0], self.attitude[1], self.attitude[2])
    }

    /// Velocity expressed in the navigation frame.
    pub fn nav_velocity(&self) -> Vec3<T> {
        self.rotation().mul_vec(&self.velocity)
    }

    /// Flattens to the 12-component layout (r, v, attitude, rate).
    pub fn to_array(&self) -> [T; 12] {
        let mut out = [T::zero(); 12];
        for i in 0..3 {
            out[i] = self.position[i];
            out[3 + i] = self.velocity[i];
            out[6 + i] = self.attitude[i];
            out[9 + i] = self.angular_rate[i];
        }
        out
    }

    pub fn from_array(a: &[T; 12]) -> Self {
        Self {
            position: Vec3([a[0], a[1], a[2]]),
            velocity: Vec3([a[3], a[4], a[5]]),
            attitude: Vec3([a[6], a[7], a[8]]),
            angular_rate: Vec3([a[9], a[10], a[11]]),
        }
    }
}

/// Physical constants of the airframe. All units SI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams<T> {
    pub mass: T,
    /// Diagonal of the inertia tensor (Ixx, Iyy, Izz), kg m^2.
    pub inertia: [T; 3],
    pub arm_length: T,
    /// Arm azimuths measured from body +x towards body +y, rad.
    pub rotor_angles: [T; ROTOR_COUNT],
    /// +1 / -1 per rotor; the yaw reaction torque of rotor i is `spin * k_m * s^2`.
    pub spin_directions: [T; ROTOR_COUNT],
    pub thrust_coeff: T,
    pub torque_coeff: T,
    pub max_rotor_speed: T,
    pub gravity: T,
}

/// Fraction of the airframe mass lumped at the rotor tips for the inertia estimate.
const ROTOR_MASS_FRACTION: f64 = 0.4;

impl<T: Real> Default for VehicleParams<T> {
    /// Flat Tarot T-18 style octorotor with a 2:1 thrust-to-weight ratio.
    fn default() -> Self {
        Self::flat_octorotor(T::lit(10.66), T::lit(0.635), T::lit(1.0e-4), T::lit(1.6e-6), T::lit(2.0))
    }
}

impl<T: Real> VehicleParams<T> {
    /// Flat eight-arm layout with arms every 45 degrees (first arm at 22.5 degrees),
    /// alternating spin, point-mass inertia and a max rotor speed chosen to give
    /// `thrust_to_weight`.
    pub fn flat_octorotor(mass: T, arm_length: T, k_f: T, k_m: T, thrust_to_weight: T) -> Self {
        let gravity = T::lit(9.81);
        let step = T::FRAC_PI_4();
        let rotor_angles: [T; ROTOR_COUNT] =
            std::array::from_fn(|i| step * T::lit(0.5) + step * T::from_usize_lossy(i));
        let spin_directions: [T; ROTOR_COUNT] =
            std::array::from_fn(|i| if i % 2 == 0 { T::one() } else { -T::one() });
        let n = T::from_usize_lossy(ROTOR_COUNT);
        let max_rotor_speed = (thrust_to_weight * mass * gravity / (n * k_f)).sqrt();
        let mut p = Self {
            mass,
            inertia: [T::one(); 3],
            arm_length,
            rotor_angles,
            spin_directions,
            thrust_coeff: k_f,
            torque_coeff: k_m,
            max_rotor_speed,
            gravity,
        };
        p.inertia = p.point_mass_inertia(T::lit(ROTOR_MASS_FRACTION));
        p
    }

    /// Inertia of `fraction * mass` split evenly over the rotor tips.
    pub fn point_mass_inertia(&self, fraction: T) -> [T; 3] {
        let m_r = fraction * self.mass / T::from_usize_lossy(ROTOR_COUNT);
        let mut inertia = [T::zero(); 3];
        for &a in &self.rotor_angles {
            let x = self.arm_length * a.cos();
            let y = self.arm_length * a.sin();
            inertia[0] += m_r * y * y;
            inertia[1] += m_r * x * x;
            inertia[2] += m_r * (x * x + y * y);
        }
        inertia
    }

    /// Collective thrust with every rotor at `max_rotor_speed`, N.
    pub fn max_thrust(&self) -> T {
        T::from_usize_lossy(ROTOR_COUNT) * self.thrust_coeff * self.max_rotor_speed * self.max_rotor_speed
    }

    pub fn weight(&self) -> T {
        self.mass * self.gravity
    }

    pub fn thrust_to_weight(&self) -> T {
        self.max_thrust() / self.weight()
    }

    /// Lateral force available at `max_tilt` with full collective thrust, N.
    pub fn max_lateral_force(&self, max_tilt: T) -> T {
        self.max_thrust() * max_tilt.sin()
    }

    /// Rescales `max_rotor_speed` (with `thrust_coeff` held) so that the lateral
    /// force at `max_tilt` equals `force`.
    pub fn calibrate_lateral_force(&mut self, force: T, max_tilt: T) -> Result<()> {
        if !(force > T::zero()) || !(max_tilt > T::zero() && max_tilt < T::FRAC_PI_2()) {
            return Err(Error::InvalidInput(format!(
                "cannot calibrate lateral force {force} at tilt {max_tilt}"
            )));
        }
        let total = force / max_tilt.sin();
        self.max_rotor_speed = (total / (T::from_usize_lossy(ROTOR_COUNT) * self.thrust_coeff)).sqrt();
        Ok(())
    }

    /// Envelope preset: default geometry calibrated to a 26.65 N lateral force at
    /// a pi/12 tilt (2.5 m/s^2 on 10.66 kg).
    ///
    /// Note the resulting thrust-to-weight ratio is below one, so this preset is
    /// for envelope bookkeeping only; flights use [`VehicleParams::default`].
    pub fn lateral_envelope() -> Self {
        let mut p = Self::default();
        p.calibrate_lateral_force(T::lit(26.65), T::PI() / T::lit(12.0))
            .expect("valid calibration constants");
        p
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("vehicle: {what}")));
        if !(self.mass > T::zero()) {
            return bad("mass must be positive");
        }
        if self.inertia.iter().any(|&i| !(i > T::zero())) {
            return bad("inertia diagonal must be positive");
        }
        if !(self.thrust_coeff > T::zero()) || !(self.torque_coeff > T::zero()) {
            return bad("thrust and torque coefficients must be positive");
        }
        if !(self.max_rotor_speed > T::zero()) || !(self.gravity >= T::zero()) {
            return bad("max rotor speed must be positive and gravity non-negative");
        }
        let spin: T = self.spin_directions.iter().copied().sum();
        if spin != T::zero() || self.spin_directions.iter().any(|s| s.abs() != T::one()) {
            return bad("spin directions must be +/-1 and sum to zero");
        }
        if !(self.arm_length > T::zero()) {
            return bad("arm length must be positive");
        }
        Ok(())
    }
}

/// Largest lateral acceleration at `max_tilt`, m/s^2.
pub fn max_lateral_accel<T: Real>(params: &VehicleParams<T>, max_tilt: T) -> T {
    params.max_lateral_force(max_tilt) / params.mass
}

/// Share of the available lateral force taken by a wind of `wind_force` newtons.
pub fn wind_thrust_fraction<T: Real>(params: &VehicleParams<T>, max_tilt: T, wind_force: T) -> T {
    wind_force / params.max_lateral_force(max_tilt)
}

/// Constant horizontal wind force in the navigation frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WindField<T> {
    /// (Fx, Fy), N.
    pub force: [T; 2],
}

impl<T: Real> WindField<T> {
    pub fn calm() -> Self {
        Self { force: [T::zero(); 2] }
    }

    /// Force of `magnitude` newtons pointing `heading_deg` degrees from +x towards +y.
    pub fn from_polar(magnitude: T, heading_deg: T) -> Self {
        let h = heading_deg.to_radians();
        Self {
            force: [magnitude * h.cos(), magnitude * h.sin()],
        }
    }

    pub fn magnitude(&self) -> T {
        self.force[0].hypot(self.force[1])
    }

    /// Heading in degrees in [0, 360).
    pub fn heading_deg(&self) -> T {
        let mut h = self.force[1].atan2(self.force[0]).to_degrees();
        if h < T::zero() {
            h += T::lit(360.0);
        }
        h
    }

    pub fn as_vec3(&self) -> Vec3<T> {
        Vec3([self.force[0], self.force[1], T::zero()])
    }
}

/// Collective thrust and body torques demanded from the rotors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Wrench<T> {
    /// Thrust magnitude along body -z, N.
    pub thrust: T,
    /// (tau_x, tau_y, tau_z), N m.
    pub torque: Vec3<T>,
}

impl<T: Real> Wrench<T> {
    pub fn new(thrust: T, tx: T, ty: T, tz: T) -> Self {
        Self {
            thrust,
            torque: Vec3::new(tx, ty, tz),
        }
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.thrust, self.torque[0], self.torque[1], self.torque[2]]
    }

    pub fn is_finite(&self) -> bool {
        self.thrust.is_finite() && self.torque.is_finite()
    }
}

/// Linear map from squared rotor speeds to the wrench, plus its pseudo-inverse.
#[derive(Clone, Debug)]
pub struct Mixer<T> {
    matrix: [[T; ROTOR_COUNT]; 4],
    pinv: [[T; 4]; ROTOR_COUNT],
    max_speed: T,
}

impl<T: Real> Mixer<T> {
    pub fn new(params: &VehicleParams<T>) -> Result<Self> {
        let matrix = mixer_matrix(params);
        // M^+ = M^T (M M^T)^-1
        let mut mmt = [[T::zero(); 4]; 4];
        for (i, row) in mmt.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..ROTOR_COUNT).map(|k| matrix[i][k] * matrix[j][k]).sum();
            }
        }
        let inv = invert4(&mmt).ok_or_else(|| Error::InvalidConfig("singular mixer geometry".into()))?;
        let mut pinv = [[T::zero(); 4]; ROTOR_COUNT];
        for (k, row) in pinv.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..4).map(|i| matrix[i][k] * inv[i][j]).sum();
            }
        }
        Ok(Self {
            matrix,
            pinv,
            max_speed: params.max_rotor_speed,
        })
    }

    pub fn matrix(&self) -> &[[T; ROTOR_COUNT]; 4] {
        &self.matrix
    }

    /// Minimum-norm squared speeds for `wrench`, before clipping.
    pub fn squared_speeds(&self, wrench: &Wrench<T>) -> [T; ROTOR_COUNT] {
        let w = wrench.to_array();
        std::array::from_fn(|k| (0..4).map(|j| self.pinv[k][j] * w[j]).sum())
    }

    pub fn allocate(&self, wrench: &Wrench<T>) -> Result<[T; ROTOR_COUNT]> {
        if !wrench.is_finite() {
            return Err(Error::InvalidInput("non-finite wrench".into()));
        }
        let sq = self.squared_speeds(wrench);
        Ok(sq.map(|u| u.max(T::zero()).sqrt().min(self.max_speed)))
    }

    /// Wrench produced by the given rotor speeds.
    pub fn wrench(&self, speeds: &[T; ROTOR_COUNT]) -> Wrench<T> {
        let w: [T; 4] = std::array::from_fn(|i| {
            (0..ROTOR_COUNT)
                .map(|k| self.matrix[i][k] * speeds[k] * speeds[k])
                .sum()
        });
        Wrench::new(w[0], w[1], w[2], w[3])
    }
}

/// The 4x8 map from squared rotor speeds to (F_z, tau_x, tau_y, tau_z).
pub fn mixer_matrix<T: Real>(params: &VehicleParams<T>) -> [[T; ROTOR_COUNT]; 4] {
    let mut m = [[T::zero(); ROTOR_COUNT]; 4];
    for k in 0..ROTOR_COUNT {
        let a = params.rotor_angles[k];
        let x = params.arm_length * a.cos();
        let y = params.arm_length * a.sin();
        let kf = params.thrust_coeff;
        m[0][k] = kf;
        // r x F with F = (0, 0, -kf s^2)
        m[1][k] = -kf * y;
        m[2][k] = kf * x;
        m[3][k] = params.spin_directions[k] * params.torque_coeff;
    }
    m
}

/// Maps a wrench to eight rotor speeds (rad/s) via the pseudo-inverse mixer.
pub fn allocate<T: Real>(wrench: &Wrench<T>, params: &VehicleParams<T>) -> Result<[T; ROTOR_COUNT]> {
    Mixer::new(params)?.allocate(wrench)
}

fn invert4<T: Real>(m: &[[T; 4]; 4]) -> Option<[[T; 4]; 4]> {
    let mut a = *m;
    let mut inv = [[T::zero(); 4]; 4];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = T::one();
    }
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot][col].abs() <= T::epsilon() * T::epsilon() {
            return None;
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for j in 0..4 {
            a[col][j] = a[col][j] / d;
            inv[col][j] = inv[col][j] / d;
        }
        for r in 0..4 {
            if r != col {
                let f = a[r][col];
                if f != T::zero() {
                    for j in 0..4 {
                        a[r][j] = a[r][j] - f * a[col][j];
                        inv[r][j] = inv[r][j] - f * inv[col][j];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Time derivative of the Euler angles for body rate `omega`.
fn euler_rates<T: Real>(attitude: &Vec3<T>, omega: &Vec3<T>) -> Vec3<T> {
    let (sr, cr) = attitude[0].sin_cos();
    let (tp, cp) = (attitude[1].tan(), attitude[1].cos());
    let (p, q, r) = (omega[0], omega[1], omega[2]);
    Vec3::new(
        p + (q * sr + r * cr) * tp,
        q * cr - r * sr,
        (q * sr + r * cr) / cp,
    )
}

/// Advances the rigid body by one semi-implicit Euler step of length `dt`.
///
/// Rotor speeds apply instantly (no motor lag).
pub fn dynamics_step<T: Real>(
    state: &KinematicState<T>,
    rotor_speeds: &[T; ROTOR_COUNT],
    wind: &WindField<T>,
    params: &VehicleParams<T>,
    dt: T,
) -> Result<KinematicState<T>> {
    let mixer = mixer_matrix(params);
    let wrench = Wrench::new(
        (0..ROTOR_COUNT).map(|k| mixer[0][k] * rotor_speeds[k] * rotor_speeds[k]).sum(),
        (0..ROTOR_COUNT).map(|k| mixer[1][k] * rotor_speeds[k] * rotor_speeds[k]).sum(),
        (0..ROTOR_COUNT).map(|k| mixer[2][k] * rotor_speeds[k] * rotor_speeds[k]).sum(),
        (0..ROTOR_COUNT).map(|k| mixer[3][k] * rotor_speeds[k] * rotor_speeds[k]).sum(),
    );
    if rotor_speeds.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite rotor speed".into()));
    }
    step_with_wrench(state, &wrench, wind, params, dt)
}

/// Same as [`dynamics_step`] but driven directly by the realised wrench.
pub fn step_with_wrench<T: Real>(
    state: &KinematicState<T>,
    wrench: &Wrench<T>,
    wind: &WindField<T>,
    params: &VehicleParams<T>,
    dt: T,
) -> Result<KinematicState<T>> {
    if !(dt > T::zero()) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if !state.is_finite() || !wrench.is_finite() || !wind.force.iter().all(|f| f.is_finite()) {
        return Err(Error::InvalidInput("non-finite state, wrench or wind".into()));
    }
    let rot = state.rotation();
    let external_nav = Vec3::new(T::zero(), T::zero(), params.mass * params.gravity) + wind.as_vec3();
    let force_body = Vec3::new(T::zero(), T::zero(), -wrench.thrust) + rot.transpose().mul_vec(&external_nav);

    let v = state.velocity;
    let w = state.angular_rate;
    let accel = force_body / params.mass - w.cross(&v);

    let inertia = Vec3(params.inertia);
    let gyro = w.cross(&inertia.hadamard(&w));
    let ang_accel = Vec3::new(
        (wrench.torque[0] - gyro[0]) / inertia[0],
        (wrench.torque[1] - gyro[1]) / inertia[1],
        (wrench.torque[2] - gyro[2]) / inertia[2],
    );

    let velocity = v + accel * dt;
    let angular_rate = w + ang_accel * dt;
    let position = state.position + rot.mul_vec(&velocity) * dt;
    let attitude = (state.attitude + euler_rates(&state.attitude, &angular_rate) * dt).map(wrap_angle);

    let next = KinematicState {
        position,
        velocity,
        attitude,
        angular_rate,
    };
    if !next.is_finite() {
        return Err(Error::InvalidInput("integration produced a non-finite state".into()));
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> VehicleParams<f64> {
        VehicleParams::default()
    }

    /// Forward map evaluated element by element, independent of the pseudo-inverse path.
    fn forward_oracle(p: &VehicleParams<f64>, speeds: &[f64; 8]) -> [f64; 4] {
        let mut w = [0.0; 4];
        for k in 0..8 {
            let s2 = speeds[k] * speeds[k];
            let (x, y) = (p.arm_length * p.rotor_angles[k].cos(), p.arm_length * p.rotor_angles[k].sin());
            w[0] += p.thrust_coeff * s2;
            w[1] += -y * p.thrust_coeff * s2;
            w[2] += x * p.thrust_coeff * s2;
            w[3] += p.spin_directions[k] * p.torque_coeff * s2;
        }
        w
    }

    fn rel_err(a: &[f64; 4], b: &[f64; 4]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
        num / den
    }

    #[test]
    fn hover_allocation_is_symmetric() {
        let p = params();
        let w = Wrench::new(p.mass * p.gravity, 0.0, 0.0, 0.0);
        let s = allocate(&w, &p).unwrap();
        for k in 1..8 {
            assert!((s[k] - s[0]).abs() < 1e-9 * s[0]);
        }
        assert!(rel_err(&forward_oracle(&p, &s), &w.to_array()) < 1e-9);
    }

    #[test]
    fn zero_wrench_zero_speeds() {
        let s = allocate(&Wrench::default(), &params()).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_wrench_rejected() {
        let w = Wrench::new(f64::NAN, 0.0, 0.0, 0.0);
        assert!(matches!(allocate(&w, &params()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn equal_speeds_cancel_yaw() {
        let p = params();
        let m = Mixer::new(&p).unwrap();
        let w = m.wrench(&[300.0; 8]);
        assert_eq!(w.torque[2], 0.0);
    }

    #[test]
    fn free_fall_step() {
        let p = params();
        let s0 = KinematicState::at_rest(Vec3::zeros());
        let s1 = dynamics_step(&s0, &[0.0; 8], &WindField::calm(), &p, 0.01).unwrap();
        assert_eq!(s1.nav_velocity()[2], p.gravity * 0.01);
        assert!(s1.position.norm() < 1e-3);
    }

    #[test]
    fn hover_is_a_fixed_point() {
        let p = params();
        let mixer = Mixer::new(&p).unwrap();
        let speeds = mixer.allocate(&Wrench::new(p.weight(), 0.0, 0.0, 0.0)).unwrap();
        let mut s = KinematicState::at_rest(Vec3::zeros());
        for _ in 0..2000 {
            let next = dynamics_step(&s, &speeds, &WindField::calm(), &p, 0.01).unwrap();
            assert!((next.position - s.position).norm() < 1e-9);
            s = next;
        }
        assert!(s.position.norm() < 1e-6);
    }

    #[test]
    fn wind_acceleration_matches_f_over_m() {
        let p = params();
        let mixer = Mixer::new(&p).unwrap();
        let speeds = mixer.allocate(&Wrench::new(p.weight(), 0.0, 0.0, 0.0)).unwrap();
        let wind = WindField::from_polar(5.0, 0.0);
        let s1 = dynamics_step(&KinematicState::at_rest(Vec3::zeros()), &speeds, &wind, &p, 0.01).unwrap();
        let dv = s1.velocity[0];
        assert!((dv - 5.0 / 10.66 * 0.01).abs() < 1e-12);
        assert!((dv / 0.01 - 0.4690).abs() < 1e-4);
        // body frame equals nav frame at level attitude
        assert!(dv > 0.0 && s1.velocity[1].abs() < 1e-15);
    }

    #[test]
    fn envelope_calibration_matches_reported_force() {
        let p = VehicleParams::<f64>::lateral_envelope();
        let tilt = std::f64::consts::PI / 12.0;
        assert!((p.max_lateral_force(tilt) - 26.65).abs() < 1e-9);
        assert!((max_lateral_accel(&p, tilt) - 2.5).abs() < 1e-3);
        let frac = wind_thrust_fraction(&p, tilt, 5.0);
        assert!((frac * 100.0 - 18.76).abs() < 0.01);
        let mut heavy = p.clone();
        heavy.mass *= 2.0;
        assert!((max_lateral_accel(&heavy, tilt) - 1.25).abs() < 1e-3);
    }

    #[test]
    fn default_params_validate() {
        params().validate().unwrap();
        let mut bad = params();
        bad.spin_directions[0] = -1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn deterministic_step() {
        let p = params();
        let s = KinematicState {
            position: Vec3::new(1.0, 2.0, -3.0),
            velocity: Vec3::new(0.3, -0.1, 0.2),
            attitude: Vec3::new(0.1, -0.05, 0.7),
            angular_rate: Vec3::new(0.2, 0.1, -0.3),
        };
        let speeds = [250.0, 260.0, 270.0, 280.0, 290.0, 300.0, 310.0, 320.0];
        let wind = WindField::from_polar(3.0, 45.0);
        let a = dynamics_step(&s, &speeds, &wind, &p, 0.01).unwrap();
        let b = dynamics_step(&s, &speeds, &wind, &p, 0.01).unwrap();
        assert_eq!(a.to_array().map(f64::to_bits), b.to_array().map(f64::to_bits));
    }

    #[test]
    fn wind_polar_round_trip() {
        let w = WindField::from_polar(5.0f64, 90.0);
        assert!((w.force[1] - 5.0).abs() < 1e-12);
        assert!((w.heading_deg() - 90.0).abs() < 1e-9);
        assert!((w.magnitude() - 5.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn allocation_round_trip(
            thrust in 70.0f64..160.0,
            tx in -5.0f64..5.0,
            ty in -5.0f64..5.0,
            tz in -0.3f64..0.3,
        ) {
            let p = params();
            let w = Wrench::new(thrust, tx, ty, tz);
            let target = w.to_array();
            let mixer = Mixer::new(&p).unwrap();
            let s = mixer.allocate(&w).unwrap();
            prop_assert!(rel_err(&forward_oracle(&p, &s), &target) < 1e-6);
        }
    }
}
