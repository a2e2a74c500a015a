//! Robustness evaluation over seeds and wind conditions, and the
//! action-azimuth symmetry analysis of a trained supervisor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{VehicleParams, WindField};
use crate::controller::CascadeGains;
use crate::env::{EpisodeConfig, OBS_DIM};
use crate::error::{Error, Result};
use crate::policy::PolicyParameters;
use crate::runner::{fly, score, FlightSetup, FlightSummary, Mode, Trajectory, WindSchedule, DEFAULT_START_SPEED};

pub const AZIMUTH_BINS: usize = 36;
pub const AZIMUTH_SAMPLES: usize = 1000;
pub const SWEEP_HEADINGS: [f64; 8] = [0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0];

/// Counts of the horizontal action direction over `samples` uniformly drawn
/// observations in [-1, 1]^12. Bin `k` covers azimuths [k, k+1) * 360/bins
/// degrees, measured from +x towards +y.
pub fn azimuth_histogram(policy: &PolicyParameters<f64>, samples: usize, bins: usize, seed: u64) -> Result<Vec<u64>> {
    if bins == 0 || samples == 0 {
        return Err(Error::InvalidInput("histogram needs at least one bin and one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hist = vec![0u64; bins];
    let width = 360.0 / bins as f64;
    for _ in 0..samples {
        let obs: Vec<f64> = (0..OBS_DIM).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let a = policy.act(&obs)?;
        let deg = a[1].atan2(a[0]).to_degrees().rem_euclid(360.0);
        let k = ((deg / width) as usize).min(bins - 1);
        hist[k] += 1;
    }
    Ok(hist)
}

/// Cosine of the angle between two count vectors; zero when either is empty.
pub fn cosine_similarity(a: &[u64], b: &[u64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftPoint {
    pub shift_deg: f64,
    pub similarity: f64,
}

/// Similarity of `a` against `b` rotated by every whole-bin shift.
pub fn shifted_cosine(a: &[u64], b: &[u64]) -> Result<Vec<ShiftPoint>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidInput(format!("histogram lengths differ: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    Ok((0..n)
        .map(|s| {
            let rotated: Vec<u64> = (0..n).map(|i| b[(i + n - s) % n]).collect();
            ShiftPoint { shift_deg: s as f64 * 360.0 / n as f64, similarity: cosine_similarity(a, &rotated) }
        })
        .collect())
}

pub struct EvalSetup<'a> {
    pub vehicle: &'a VehicleParams<f64>,
    pub gains: &'a CascadeGains<f64>,
    pub config: &'a EpisodeConfig<f64>,
    pub policy: Option<&'a PolicyParameters<f64>>,
    pub trajectory: &'a Trajectory<f64>,
}

/// Flies the trajectory once per seed under a constant wind, in parallel.
pub fn evaluate(setup: &EvalSetup<'_>, mode: Mode, wind: WindField<f64>, seeds: &[u64]) -> Result<Vec<FlightSummary<f64>>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let fs = FlightSetup {
                vehicle: setup.vehicle,
                gains: setup.gains,
                config: setup.config,
                policy: setup.policy,
                wind: WindSchedule::constant(wind),
                start_speed: DEFAULT_START_SPEED,
            };
            let outcomes = fly(setup.trajectory, mode, &fs, seed)?;
            score(setup.trajectory, &outcomes)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub mode: Mode,
    pub magnitude: f64,
    pub heading_deg: f64,
    pub runs: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mean_completion: f64,
    pub rewards: Vec<f64>,
}

pub const CONDITION_HEADER: &str = "mode,magnitude_n,heading_deg,runs,mean_reward,std_reward,mean_completion";

impl ConditionRow {
    /// Row for flights under `magnitude` newtons from `heading_deg`.
    pub fn from_summaries(mode: Mode, magnitude: f64, heading_deg: f64, summaries: &[FlightSummary<f64>]) -> Self {
        let rewards: Vec<f64> = summaries.iter().map(|s| s.total_reward).collect();
        let completion: Vec<f64> = summaries.iter().map(|s| s.completion).collect();
        let (mean_reward, std_reward) = mean_std(&rewards);
        ConditionRow {
            mode,
            magnitude,
            heading_deg,
            runs: rewards.len(),
            mean_reward,
            std_reward,
            mean_completion: mean_std(&completion).0,
            rewards,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            mode_name(self.mode),
            self.magnitude,
            self.heading_deg,
            self.runs,
            self.mean_reward,
            self.std_reward,
            self.mean_completion
        )
    }
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::PidOnly => "pid_only",
        Mode::RlSupervised => "rl_supervised",
    }
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// One row per wind heading at fixed magnitude.
pub fn heading_sweep(setup: &EvalSetup<'_>, mode: Mode, magnitude: f64, headings: &[f64], seeds: &[u64]) -> Result<Vec<ConditionRow>> {
    headings
        .iter()
        .map(|&h| {
            let wind = WindField::from_polar(magnitude, h);
            Ok(ConditionRow::from_summaries(mode, magnitude, h, &evaluate(setup, mode, wind, seeds)?))
        })
        .collect()
}

/// One row per wind magnitude at fixed heading.
pub fn magnitude_sweep(setup: &EvalSetup<'_>, mode: Mode, magnitudes: &[f64], heading: f64, seeds: &[u64]) -> Result<Vec<ConditionRow>> {
    magnitudes
        .iter()
        .map(|&m| {
            let wind = if m == 0.0 { WindField::calm() } else { WindField::from_polar(m, heading) };
            Ok(ConditionRow::from_summaries(mode, m, heading, &evaluate(setup, mode, wind, seeds)?))
        })
        .collect()
}

/// Spread of per-condition mean rewards.
pub fn across_condition_std(rows: &[ConditionRow]) -> f64 {
    mean_std(&rows.iter().map(|r| r.mean_reward).collect::<Vec<_>>()).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::NetShape;
    use crate::runner::Trajectory;

    #[test]
    fn cosine_identity_and_shift() {
        let h = vec![5, 0, 3, 1, 0, 0, 2, 9, 0];
        let c = shifted_cosine(&h, &h).unwrap();
        assert_eq!(c.len(), 9);
        assert!((c[0].similarity - 1.0).abs() < 1e-15);
        assert_eq!(c[1].shift_deg, 40.0);
        let rotated: Vec<u64> = (0..9).map(|i| h[(i + 9 - 2) % 9]).collect();
        let c2 = shifted_cosine(&rotated, &h).unwrap();
        assert!((c2[2].similarity - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[0, 0], &[1, 2]), 0.0);
        assert!(shifted_cosine(&h, &h[..3]).is_err());
    }

    #[test]
    fn histogram_counts_every_sample() {
        let shape = NetShape::supervisor();
        let bounds = [1.0; OBS_DIM];
        let p = PolicyParameters::init(shape, 0.0, &bounds, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let h = azimuth_histogram(&p, AZIMUTH_SAMPLES, AZIMUTH_BINS, 3).unwrap();
        assert_eq!(h.len(), 36);
        assert_eq!(h.iter().sum::<u64>(), 1000);
        assert_eq!(h, azimuth_histogram(&p, AZIMUTH_SAMPLES, AZIMUTH_BINS, 3).unwrap());
    }

    #[test]
    fn zero_magnitude_sweep_point_matches_calm_evaluation() {
        let vehicle = VehicleParams::default();
        let gains = CascadeGains::default();
        let config = EpisodeConfig::default();
        let traj = Trajectory::<f64>::builtin("square").unwrap();
        let setup = EvalSetup { vehicle: &vehicle, gains: &gains, config: &config, policy: None, trajectory: &traj };
        let seeds = [1, 2];
        let sweep = magnitude_sweep(&setup, Mode::PidOnly, &[0.0], 90.0, &seeds).unwrap();
        let calm = ConditionRow::from_summaries(Mode::PidOnly, 0.0, 90.0, &evaluate(&setup, Mode::PidOnly, WindField::calm(), &seeds).unwrap());
        assert_eq!(sweep[0], calm);
        let hs = heading_sweep(&setup, Mode::PidOnly, 5.0, &SWEEP_HEADINGS[..2], &seeds[..1]).unwrap();
        assert_eq!(hs.len(), 2);
        assert_eq!(hs[1].heading_deg, 45.0);
    }
}
