//! Run configuration files: flat TOML sections whose key names follow the
//! parameter labels of the gain and learner tables (`k_p`, `max_acc`,
//! `"batch size"`, `"scaling factor"`, `"steps u"`, ...).
//!
//! ```toml
//! [position]
//! k_p = 1.0
//! k_i = 0.1
//! k_d = 0.0
//!
//! [rate]
//! k_p = 20.0
//! max_acc = 5.0
//!
//! [rl]
//! "batch size" = 128
//! "learning rate" = 3e-4
//! "scaling factor" = 0.12
//! "steps u" = 31
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{CascadeGains, PidGains};
use crate::dynamics::VehicleParams;
use crate::env::EpisodeConfig;
use crate::error::{Error, Result};
use crate::ppo::RlHyperparams;

/// Default number of training episodes per `train` run.
pub const DEFAULT_TRAIN_EPISODES: usize = 300;

/// Every model parameter a command needs, fully resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub vehicle: VehicleParams<f64>,
    pub gains: CascadeGains<f64>,
    pub episode: EpisodeConfig<f64>,
    pub rl: RlHyperparams<f64>,
    pub train_episodes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::default(),
            gains: CascadeGains::default(),
            episode: EpisodeConfig::default(),
            rl: RlHyperparams::default(),
            train_episodes: DEFAULT_TRAIN_EPISODES,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoopSection {
    k_p: Option<f64>,
    k_i: Option<f64>,
    k_d: Option<f64>,
    integral_limit: Option<f64>,
    output_limit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VehicleSection {
    mass: Option<f64>,
    arm_length: Option<f64>,
    thrust_coeff: Option<f64>,
    torque_coeff: Option<f64>,
    thrust_to_weight: Option<f64>,
    max_rotor_speed: Option<f64>,
    inertia: Option<[f64; 3]>,
    gravity: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AltitudeSection {
    velocity_kp: Option<f64>,
    rate_kp: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControllerSection {
    sqrt_scaling_accel: Option<f64>,
    leash: Option<bool>,
    max_velocity: Option<f64>,
    max_tilt_deg: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeSection {
    bounding_box: Option<f64>,
    dt: Option<f64>,
    max_time: Option<f64>,
    tip_threshold_deg: Option<f64>,
    arrival_radius: Option<f64>,
    max_velocity: Option<f64>,
    max_rate: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RlSection {
    #[serde(rename = "batch size", alias = "batch_size")]
    batch_size: Option<usize>,
    #[serde(rename = "learning rate", alias = "learning_rate")]
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    steps: Option<usize>,
    #[serde(rename = "scaling factor", alias = "scaling_factor")]
    scaling_factor: Option<f64>,
    #[serde(rename = "steps u", alias = "steps_u")]
    steps_u: Option<u32>,
    clip_ratio: Option<f64>,
    gamma: Option<f64>,
    gae_lambda: Option<f64>,
    entropy_coef: Option<f64>,
    value_coef: Option<f64>,
    max_grad_norm: Option<f64>,
    reward_scale: Option<f64>,
    init_log_std: Option<f64>,
    hidden: Option<Vec<usize>>,
    episodes: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default)]
    vehicle: VehicleSection,
    #[serde(default)]
    controller: ControllerSection,
    #[serde(default)]
    position: LoopSection,
    #[serde(default)]
    velocity: LoopSection,
    #[serde(default)]
    attitude: LoopSection,
    #[serde(default)]
    rate: LoopSection,
    #[serde(default)]
    altitude: AltitudeSection,
    #[serde(default)]
    episode: EpisodeSection,
    #[serde(default)]
    rl: RlSection,
}

fn set<T: Copy>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_loop(g: &mut PidGains<f64>, s: &LoopSection) {
    set(&mut g.k_p, s.k_p);
    set(&mut g.k_i, s.k_i);
    set(&mut g.k_d, s.k_d);
    set(&mut g.output_limit, s.output_limit);
    set(&mut g.integral_limit, s.integral_limit);
}

fn loop_section(g: &PidGains<f64>) -> LoopSection {
    LoopSection {
        k_p: Some(g.k_p),
        k_i: Some(g.k_i),
        k_d: Some(g.k_d),
        integral_limit: Some(g.integral_limit),
        output_limit: Some(g.output_limit),
        max_acc: None,
    }
}

/// Byte offset to 1-based line number.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

/// Names of the bundled configurations accepted by [`RunConfig::preset`].
pub const PRESETS: [&str; 4] = ["default", "rl-wind", "paper-pid-nominal", "paper-pid-wind"];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "default" => "",
            "rl-wind" => include_str!("../data/configs/rl_wind.toml"),
            "paper-pid-nominal" => include_str!("../data/configs/paper_pid_nominal.toml"),
            "paper-pid-wind" => include_str!("../data/configs/paper_pid_wind.toml"),
            _ => return Err(Error::InvalidConfig(format!("unknown preset `{name}` (known: {})", PRESETS.join(", ")))),
        };
        Self::from_toml(text)
    }

    /// Parses a config file; missing keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            msg: e.message().to_string(),
        })?;
        let mut c = RunConfig::default();

        let v = &file.vehicle;
        if v.mass.is_some() || v.arm_length.is_some() || v.thrust_coeff.is_some() || v.torque_coeff.is_some() || v.thrust_to_weight.is_some() {
            let d = VehicleParams::<f64>::default();
            c.vehicle = VehicleParams::flat_octorotor(
                v.mass.unwrap_or(d.mass),
                v.arm_length.unwrap_or(d.arm_length),
                v.thrust_coeff.unwrap_or(d.thrust_coeff),
                v.torque_coeff.unwrap_or(d.torque_coeff),
                v.thrust_to_weight.unwrap_or(d.thrust_to_weight()),
            );
        }
        set(&mut c.vehicle.max_rotor_speed, v.max_rotor_speed);
        set(&mut c.vehicle.inertia, v.inertia);
        set(&mut c.vehicle.gravity, v.gravity);

        let ctl = &file.controller;
        set(&mut c.gains.sqrt_scaling_accel, ctl.sqrt_scaling_accel);
        set(&mut c.gains.leash_enabled, ctl.leash);
        set(&mut c.gains.max_velocity, ctl.max_velocity);
        set(&mut c.gains.max_tilt, ctl.max_tilt_deg.map(f64::to_radians));
        apply_loop(&mut c.gains.position, &file.position);
        apply_loop(&mut c.gains.velocity, &file.velocity);
        apply_loop(&mut c.gains.attitude, &file.attitude);
        apply_loop(&mut c.gains.rate, &file.rate);
        set(&mut c.gains.rate_max_acc, file.rate.max_acc);
        for (name, s) in [("position", &file.position), ("velocity", &file.velocity), ("attitude", &file.attitude)] {
            if s.max_acc.is_some() {
                return Err(Error::InvalidConfig(format!("max_acc only applies to [rate], found in [{name}]")));
            }
        }
        set(&mut c.gains.altitude_velocity_kp, file.altitude.velocity_kp);
        set(&mut c.gains.altitude_rate_kp, file.altitude.rate_kp);

        let e = &file.episode;
        set(&mut c.episode.bounding_box, e.bounding_box);
        set(&mut c.episode.dt, e.dt);
        set(&mut c.episode.max_time, e.max_time);
        set(&mut c.episode.tip_threshold, e.tip_threshold_deg.map(f64::to_radians));
        set(&mut c.episode.arrival_radius, e.arrival_radius);
        set(&mut c.episode.max_velocity, e.max_velocity);
        set(&mut c.episode.max_rate, e.max_rate);

        let r = &file.rl;
        set(&mut c.rl.batch_size, r.batch_size);
        set(&mut c.rl.learning_rate, r.learning_rate);
        set(&mut c.rl.epochs, r.epochs);
        set(&mut c.rl.steps, r.steps);
        set(&mut c.episode.scaling_factor, r.scaling_factor);
        set(&mut c.episode.steps_between_actions, r.steps_u);
        set(&mut c.rl.clip_ratio, r.clip_ratio);
        set(&mut c.rl.gamma, r.gamma);
        set(&mut c.rl.gae_lambda, r.gae_lambda);
        set(&mut c.rl.entropy_coef, r.entropy_coef);
        set(&mut c.rl.value_coef, r.value_coef);
        set(&mut c.rl.max_grad_norm, r.max_grad_norm);
        set(&mut c.rl.reward_scale, r.reward_scale);
        set(&mut c.rl.init_log_std, r.init_log_std);
        if let Some(h) = &r.hidden {
            c.rl.hidden = h.clone();
        }
        set(&mut c.train_episodes, r.episodes);

        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.gains.validate()?;
        self.episode.validate()?;
        self.rl.validate()
    }

    /// Full config as TOML; parsing the output reproduces `self`.
    pub fn to_toml(&self) -> String {
        let v = &self.vehicle;
        let g = &self.gains;
        let e = &self.episode;
        let r = &self.rl;
        let mut rate = loop_section(&g.rate);
        rate.max_acc = Some(g.rate_max_acc);
        let file = ConfigFile {
            label: None,
            vehicle: VehicleSection {
                mass: Some(v.mass),
                arm_length: Some(v.arm_length),
                thrust_coeff: Some(v.thrust_coeff),
                torque_coeff: Some(v.torque_coeff),
                thrust_to_weight: None,
                max_rotor_speed: Some(v.max_rotor_speed),
                inertia: Some(v.inertia),
                gravity: Some(v.gravity),
            },
            controller: ControllerSection {
                sqrt_scaling_accel: Some(g.sqrt_scaling_accel),
                leash: Some(g.leash_enabled),
                max_velocity: Some(g.max_velocity),
                max_tilt_deg: Some(g.max_tilt.to_degrees()),
            },
            position: loop_section(&g.position),
            velocity: loop_section(&g.velocity),
            attitude: loop_section(&g.attitude),
            rate,
            altitude: AltitudeSection { velocity_kp: Some(g.altitude_velocity_kp), rate_kp: Some(g.altitude_rate_kp) },
            episode: EpisodeSection {
                bounding_box: Some(e.bounding_box),
                dt: Some(e.dt),
                max_time: Some(e.max_time),
                tip_threshold_deg: Some(e.tip_threshold.to_degrees()),
                arrival_radius: Some(e.arrival_radius),
                max_velocity: Some(e.max_velocity),
                max_rate: Some(e.max_rate),
            },
            rl: RlSection {
                batch_size: Some(r.batch_size),
                learning_rate: Some(r.learning_rate),
                epochs: Some(r.epochs),
                steps: Some(r.steps),
                scaling_factor: Some(e.scaling_factor),
                steps_u: Some(e.steps_between_actions),
                clip_ratio: Some(r.clip_ratio),
                gamma: Some(r.gamma),
                gae_lambda: Some(r.gae_lambda),
                entropy_coef: Some(r.entropy_coef),
                value_coef: Some(r.value_coef),
                max_grad_norm: Some(r.max_grad_norm),
                reward_scale: Some(r.reward_scale),
                init_log_std: Some(r.init_log_std),
                hidden: Some(r.hidden.clone()),
                episodes: Some(self.train_episodes),
            },
        };
        toml::to_string(&file).expect("config serialises")
    }

    /// Names accepted by [`RunConfig::set_param`], in table order.
    pub fn param_names() -> Vec<&'static str> {
        vec![
            "attitude.k_d",
            "attitude.k_i",
            "attitude.k_p",
            "position.k_d",
            "position.k_i",
            "position.k_p",
            "rate.k_d",
            "rate.k_i",
            "rate.k_p",
            "rate.max_acc",
            "velocity.k_d",
            "velocity.k_i",
            "velocity.k_p",
            "rl.batch size",
            "rl.learning rate",
            "rl.epochs",
            "rl.steps",
            "rl.scaling factor",
            "rl.steps u",
        ]
    }

    /// Sets one tunable parameter by its `section.label` name. Integer
    /// parameters are rounded.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        let round = |v: f64| v.round().max(1.0) as usize;
        let g = &mut self.gains;
        match name {
            "position.k_p" => g.position.k_p = value,
            "position.k_i" => g.position.k_i = value,
            "position.k_d" => g.position.k_d = value,
            "velocity.k_p" => g.velocity.k_p = value,
            "velocity.k_i" => g.velocity.k_i = value,
            "velocity.k_d" => g.velocity.k_d = value,
            "attitude.k_p" => g.attitude.k_p = value,
            "attitude.k_i" => g.attitude.k_i = value,
            "attitude.k_d" => g.attitude.k_d = value,
            "rate.k_p" => g.rate.k_p = value,
            "rate.k_i" => g.rate.k_i = value,
            "rate.k_d" => g.rate.k_d = value,
            "rate.max_acc" => g.rate_max_acc = value,
            "rl.batch size" => self.rl.batch_size = round(value),
            "rl.learning rate" => self.rl.learning_rate = value,
            "rl.epochs" => self.rl.epochs = round(value),
            "rl.steps" => self.rl.steps = round(value),
            "rl.scaling factor" => self.episode.scaling_factor = value,
            "rl.steps u" => self.episode.steps_between_actions = round(value) as u32,
            _ => return Err(Error::InvalidConfig(format!("unknown parameter `{name}`"))),
        }
        Ok(())
    }

    pub fn get_param(&self, name: &str) -> Result<f64> {
        let g = &self.gains;
        Ok(match name {
            "position.k_p" => g.position.k_p,
            "position.k_i" => g.position.k_i,
            "position.k_d" => g.position.k_d,
            "velocity.k_p" => g.velocity.k_p,
            "velocity.k_i" => g.velocity.k_i,
            "velocity.k_d" => g.velocity.k_d,
            "attitude.k_p" => g.attitude.k_p,
            "attitude.k_i" => g.attitude.k_i,
            "attitude.k_d" => g.attitude.k_d,
            "rate.k_p" => g.rate.k_p,
            "rate.k_i" => g.rate.k_i,
            "rate.k_d" => g.rate.k_d,
            "rate.max_acc" => g.rate_max_acc,
            "rl.batch size" => self.rl.batch_size as f64,
            "rl.learning rate" => self.rl.learning_rate,
            "rl.epochs" => self.rl.epochs as f64,
            "rl.steps" => self.rl.steps as f64,
            "rl.scaling factor" => self.episode.scaling_factor,
            "rl.steps u" => f64::from(self.episode.steps_between_actions),
            _ => return Err(Error::InvalidConfig(format!("unknown parameter `{name}`"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn presets_parse_and_validate() {
        for name in PRESETS {
            RunConfig::preset(name).unwrap().validate().unwrap();
        }
        let w = RunConfig::preset("rl-wind").unwrap();
        assert_eq!(w.episode.steps_between_actions, 31);
        assert_eq!(w.rl.batch_size, 128);
        assert_eq!(RunConfig::preset("paper-pid-wind").unwrap().get_param("position.k_p").unwrap(), 21.704);
        assert!(RunConfig::preset("fast").is_err());
    }

    #[test]
    fn table_labels_are_keys() {
        let c = RunConfig::from_toml(
            "[position]\nk_p = 2.5\n[rate]\nmax_acc = 8.0\n[rl]\n\"batch size\" = 128\n\"scaling factor\" = 0.12\n\"steps u\" = 31\nsteps = 826\n",
        )
        .unwrap();
        assert_eq!(c.gains.position.k_p, 2.5);
        assert_eq!(c.gains.rate_max_acc, 8.0);
        assert_eq!(c.rl.batch_size, 128);
        assert_eq!(c.episode.scaling_factor, 0.12);
        assert_eq!(c.episode.steps_between_actions, 31);
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.set_param("velocity.k_i", 0.75).unwrap();
        c.set_param("rl.steps u", 7.4).unwrap();
        c.train_episodes = 12;
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        for n in RunConfig::param_names() {
            assert_eq!(back.get_param(n).unwrap(), c.get_param(n).unwrap());
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        match RunConfig::from_toml("[position]\nk_p = 1.0\nk_q = 3.0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match RunConfig::from_toml("[rl]\n\n\"scaling factor\" = \"big\"\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(RunConfig::from_toml("[rl]\n\"scaling factor\" = 1.5\n"), Err(Error::InvalidConfig(_))));
    }
}
