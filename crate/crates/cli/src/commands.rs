use std::fs;
use std::path::Path;

use octoflight::analysis::{
    across_condition_std, azimuth_histogram, evaluate, heading_sweep, magnitude_sweep, mode_name, shifted_cosine, ConditionRow, EvalSetup,
    AZIMUTH_BINS, CONDITION_HEADER, SWEEP_HEADINGS,
};
use octoflight::config::RunConfig;
use octoflight::env::{ACTION_DIM, OBS_DIM};
use octoflight::policy::{load_checkpoint_as, save_checkpoint, NetShape};
use octoflight::ppo::{train, CURVE_HEADER};
use octoflight::runner::{decompose, flight_log_csv, fly, load_path, score, FlightSetup, Mode, WindSchedule};
use octoflight::tuner::{self, SearchSpace, TuneJob};
use octoflight::{Episode, Policy, Trajectory};
use serde_json::json;

use crate::args::{Common, EvalArgs, FlyArgs, ModeArg, Onset, PlotArgs, TrainArgs, TuneArgs};
use crate::output::OutDir;
use crate::plot::{self, Series};
use crate::CliError;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    load_config_from(common.config.as_deref(), &common.preset)
}

fn load_config_from(path: Option<&Path>, preset: &str) -> Result<RunConfig, CliError> {
    let cfg = match path {
        Some(p) => RunConfig::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => RunConfig::preset(preset).map_err(usage)?,
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

pub fn resolve_trajectory(spec: &str, bounding_box: f64) -> Result<Trajectory, CliError> {
    let raw = match Trajectory::builtin(spec) {
        Some(t) => t,
        None => {
            let p = Path::new(spec);
            if !p.exists() {
                return Err(usage(format!("trajectory `{spec}` is neither a bundled name (square, patrol) nor a file")));
            }
            load_path(p).map_err(|e| usage(format!("{spec}: {e}")))?
        }
    };
    decompose(&raw, bounding_box).map_err(usage)
}

fn load_policy(path: &Path, cfg: &RunConfig) -> Result<Policy, CliError> {
    let bytes = fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let shape = NetShape::new(OBS_DIM, &cfg.rl.hidden, ACTION_DIM);
    load_checkpoint_as(&bytes, &shape).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn non_empty_out(common: &Common) -> Result<(), CliError> {
    if common.out.as_os_str().is_empty() {
        return Err(usage("--out must not be empty"));
    }
    Ok(())
}

pub fn tune(a: &TuneArgs) -> Result<(), CliError> {
    non_empty_out(&a.common)?;
    let base = load_config(&a.common)?;
    let mode: Mode = a.mode.into();
    let trials = a.trials.unwrap_or(match (a.mode, a.paper_scale) {
        (ModeArg::Pid, false) => 50,
        (ModeArg::Rl, false) => 20,
        (ModeArg::Pid, true) => 1000,
        (ModeArg::Rl, true) => 500,
    });
    if trials == 0 {
        return Err(usage("--trials must be >= 1"));
    }
    let space = match &a.space {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            SearchSpace::from_toml(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => match mode {
            Mode::PidOnly => SearchSpace::pid_default(&base),
            Mode::RlSupervised => SearchSpace::rl_default(&base),
        },
    };
    let compare = match &a.compare {
        Some(p) if !p.exists() => return Err(usage(format!("{}: no such file", p.display()))),
        Some(p) => Some(tuner::read_log(p).map_err(|e| usage(format!("{}: {e}", p.display())))?),
        None => None,
    };

    let mut out = OutDir::create(&a.common.out, "tune", Some(a.common.seed))?;
    fs::write(out.path("space.toml"), space.to_toml()).map_err(runtime)?;
    out.record("space.toml", None)?;
    let job = TuneJob { space: &space, base: &base, mode, wind: a.wind, master_seed: a.common.seed, record_wall_time: a.record_wall_time };
    let log = out.path("trials.jsonl");
    let records = tuner::tune(&job, trials, Some(&log)).map_err(|e| match e {
        octoflight::Error::InvalidInput(m) => usage(m),
        e => runtime(e),
    })?;
    out.record("trials.jsonl", Some(a.common.seed))?;

    if let Some(best) = tuner::best(&records) {
        let cfg = tuner::apply(&base, best).map_err(runtime)?;
        let text = format!("# best of {} trials: trial {}, mean reward {}\n{}", records.len(), best.trial, best.mean_reward, cfg.to_toml());
        out.write("best.toml", text.as_bytes(), Some(a.common.seed))?;
    }
    let k = 10.min(records.len());
    let top = tuner::top_table(&records, k).map_err(runtime)?;
    out.write("top10.csv", tuner::top_table_csv(&top).as_bytes(), None)?;
    match tuner::importance(&records) {
        Ok(imp) => out.write("importance.csv", tuner::importance_csv(&imp).as_bytes(), None)?,
        Err(e) => log::warn!("importance skipped: {e}"),
    }
    if let Some(other) = compare {
        let ko = 10.min(other.len());
        let a_table = tuner::top_table(&other, ko).map_err(usage)?;
        let rows = tuner::compare(&a_table, &top);
        out.write("comparison.csv", tuner::comparison_csv(&rows, "reference", "this").as_bytes(), None)?;
    }
    out.finish()?;
    if let Some(b) = tuner::best(&records) {
        println!("{} trials; best trial {} with mean reward {:.3}", records.len(), b.trial, b.mean_reward);
    }
    Ok(())
}

pub fn train_cmd(a: &TrainArgs) -> Result<(), CliError> {
    non_empty_out(&a.common)?;
    let cfg = load_config(&a.common)?;
    let episodes = a.episodes.unwrap_or(cfg.train_episodes);
    let mut env = Episode::new(cfg.episode.clone(), cfg.vehicle.clone(), cfg.gains.clone(), a.wind).map_err(usage)?;

    let mut out = OutDir::create(&a.common.out, "train", Some(a.common.seed))?;
    let outcome = train(&mut env, &cfg.rl, episodes, a.common.seed).map_err(runtime)?;
    out.write("policy.ckpt", &save_checkpoint(&outcome.params), Some(a.common.seed))?;
    let mut curve = String::from(CURVE_HEADER);
    curve.push('\n');
    for r in &outcome.curve {
        curve.push_str(&r.csv_row());
        curve.push('\n');
    }
    out.write("curve.csv", curve.as_bytes(), Some(a.common.seed))?;
    out.write("config.toml", cfg.to_toml().as_bytes(), None)?;
    out.finish()?;
    let last = outcome.curve.last().map(|r| r.mean_episode_reward).unwrap_or(f64::NAN);
    println!("{} updates over {episodes} episodes; last mean episode reward {last:.3}", outcome.curve.len());
    Ok(())
}

pub fn fly_cmd(a: &FlyArgs) -> Result<(), CliError> {
    non_empty_out(&a.common)?;
    let cfg = load_config(&a.common)?;
    let traj = resolve_trajectory(&a.trajectory, cfg.episode.bounding_box)?;
    let mode: Mode = a.mode.into();
    let policy = match (mode, &a.policy) {
        (Mode::RlSupervised, None) => return Err(usage("rl mode requires --policy")),
        (Mode::RlSupervised, Some(p)) => Some(load_policy(p, &cfg)?),
        (Mode::PidOnly, Some(_)) => {
            log::warn!("--policy is ignored in pid mode");
            None
        }
        (Mode::PidOnly, None) => None,
    };
    if !(a.start_speed.is_finite() && a.start_speed >= 0.0) {
        return Err(usage(format!("--start-speed must be finite and >= 0, got {}", a.start_speed)));
    }
    let wind = match a.wind_onset_segment {
        Onset::Mid => WindSchedule::midpoint(a.wind, traj.segments()),
        Onset::Segment(k) if k >= traj.segments() => {
            return Err(usage(format!("--wind-onset-segment {k} is past the last segment ({})", traj.segments() - 1)))
        }
        Onset::Segment(k) => WindSchedule { wind: a.wind, onset_segment: k },
    };
    let setup = FlightSetup {
        vehicle: &cfg.vehicle,
        gains: &cfg.gains,
        config: &cfg.episode,
        policy: policy.as_ref(),
        wind,
        start_speed: a.start_speed,
    };
    let mut out = OutDir::create(&a.common.out, "fly", Some(a.common.seed))?;
    let outcomes = fly(&traj, mode, &setup, a.common.seed).map_err(runtime)?;
    let summary = score(&traj, &outcomes).map_err(runtime)?;
    out.write("flight.csv", flight_log_csv(&outcomes).as_bytes(), Some(a.common.seed))?;
    let report = json!({
        "mode": mode_name(mode),
        "seed": a.common.seed,
        "wind": { "magnitude_n": a.wind.magnitude(), "heading_deg": a.wind.heading_deg(), "onset_segment": wind.onset_segment },
        "summary": summary,
        "segments": outcomes.iter().map(|o| json!({
            "index": o.index, "reason": o.reason, "reward": o.reward, "ticks": o.ticks, "flight_time": o.flight_time,
        })).collect::<Vec<_>>(),
    });
    out.write("summary.json", (serde_json::to_string_pretty(&report).expect("serialises") + "\n").as_bytes(), Some(a.common.seed))?;
    out.finish()?;
    println!(
        "{}: {}/{} segments reached, total reward {:.3}, {}",
        summary.trajectory, summary.segments_reached, summary.segments_total, summary.total_reward, summary.final_reason
    );
    Ok(())
}

fn condition_csv(rows: &[ConditionRow]) -> String {
    let mut s = String::from(CONDITION_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

fn series_of(rows: &[ConditionRow], mode: Mode, x: impl Fn(&ConditionRow) -> f64) -> Series {
    Series { name: mode_name(mode).into(), points: rows.iter().filter(|r| r.mode == mode).map(|r| (x(r), r.mean_reward)).collect() }
}

pub fn eval_cmd(a: &EvalArgs) -> Result<(), CliError> {
    non_empty_out(&a.common)?;
    let cfg = load_config(&a.common)?;
    let traj = resolve_trajectory(&a.trajectory, cfg.episode.bounding_box)?;
    let policy = a.policy.as_deref().map(|p| load_policy(p, &cfg)).transpose()?;
    let policy_b = a.policy_b.as_deref().map(|p| load_policy(p, &cfg)).transpose()?;
    if a.seeds == 0 || a.runs == 0 || a.samples == 0 {
        return Err(usage("--seeds, --runs and --samples must be >= 1"));
    }
    if !(a.sweep_magnitude.is_finite() && a.sweep_magnitude >= 0.0) {
        return Err(usage("--sweep-magnitude must be finite and >= 0"));
    }
    if !(0.0..360.0).contains(&a.sweep_heading) {
        return Err(usage("--sweep-heading must be in [0, 360)"));
    }
    if a.magnitudes.is_empty() || a.magnitudes.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(usage("--magnitudes must be a non-empty list of finite values >= 0"));
    }

    let mut out = OutDir::create(&a.common.out, "eval", Some(a.common.seed))?;
    let seed = a.common.seed;
    let sweep_seeds: Vec<u64> = (seed..seed + a.seeds).collect();
    let run_seeds: Vec<u64> = (seed..seed + a.runs).collect();
    let mut modes = vec![(Mode::PidOnly, None)];
    if let Some(p) = &policy {
        modes.push((Mode::RlSupervised, Some(p)));
    }

    let mut headings = Vec::new();
    let mut magnitudes = Vec::new();
    let mut rewards = String::from("mode,run,seed,total_reward,completion,final_reason\n");
    let mut summary = serde_json::Map::new();
    for (mode, p) in &modes {
        let setup = EvalSetup { vehicle: &cfg.vehicle, gains: &cfg.gains, config: &cfg.episode, policy: *p, trajectory: &traj };
        let h = heading_sweep(&setup, *mode, a.sweep_magnitude, &SWEEP_HEADINGS, &sweep_seeds).map_err(runtime)?;
        summary.insert(format!("{}_across_heading_std", mode_name(*mode)), json!(across_condition_std(&h)));
        headings.extend(h);
        magnitudes.extend(magnitude_sweep(&setup, *mode, &a.magnitudes, a.sweep_heading, &sweep_seeds).map_err(runtime)?);
        let runs = evaluate(&setup, *mode, a.wind, &run_seeds).map_err(runtime)?;
        for (i, (s, r)) in run_seeds.iter().zip(&runs).enumerate() {
            rewards.push_str(&format!("{},{i},{s},{},{},{}\n", mode_name(*mode), r.total_reward, r.completion, r.final_reason));
        }
        let row = ConditionRow::from_summaries(*mode, a.wind.magnitude(), a.wind.heading_deg(), &runs);
        summary.insert(format!("{}_mean_reward", mode_name(*mode)), json!(row.mean_reward));
        summary.insert(format!("{}_std_reward", mode_name(*mode)), json!(row.std_reward));
    }
    out.write("headings.csv", condition_csv(&headings).as_bytes(), Some(seed))?;
    out.write("magnitudes.csv", condition_csv(&magnitudes).as_bytes(), Some(seed))?;
    out.write("rewards.csv", rewards.as_bytes(), Some(seed))?;
    let hs: Vec<Series> = modes.iter().map(|(m, _)| series_of(&headings, *m, |r| r.heading_deg)).collect();
    let title = format!("{} N wind by heading", a.sweep_magnitude);
    out.write("headings.svg", plot::line_chart(&title, "heading (deg)", "mean reward", &hs).map_err(runtime)?.as_bytes(), None)?;
    let ms: Vec<Series> = modes.iter().map(|(m, _)| series_of(&magnitudes, *m, |r| r.magnitude)).collect();
    let title = format!("wind magnitude at {} deg", a.sweep_heading);
    out.write("magnitudes.svg", plot::line_chart(&title, "magnitude (N)", "mean reward", &ms).map_err(runtime)?.as_bytes(), None)?;

    if let Some(pa) = &policy {
        let ha = azimuth_histogram(pa, a.samples, AZIMUTH_BINS, seed).map_err(runtime)?;
        let hb = match &policy_b {
            Some(pb) => azimuth_histogram(pb, a.samples, AZIMUTH_BINS, seed).map_err(runtime)?,
            None => ha.clone(),
        };
        let width = 360.0 / AZIMUTH_BINS as f64;
        let mut hist = String::from("bin_start_deg,count_a,count_b\n");
        for (i, (ca, cb)) in ha.iter().zip(&hb).enumerate() {
            hist.push_str(&format!("{},{ca},{cb}\n", i as f64 * width));
        }
        out.write("histogram.csv", hist.as_bytes(), Some(seed))?;
        let curve = shifted_cosine(&ha, &hb).map_err(runtime)?;
        let mut csv = String::from("shift_deg,similarity\n");
        for p in &curve {
            csv.push_str(&format!("{},{}\n", p.shift_deg, p.similarity));
        }
        out.write("cosine.csv", csv.as_bytes(), Some(seed))?;
        let series = [Series { name: "cosine similarity".into(), points: curve.iter().map(|p| (p.shift_deg, p.similarity)).collect() }];
        out.write("cosine.svg", plot::line_chart("shifted action-azimuth similarity", "shift (deg)", "cosine", &series).map_err(runtime)?.as_bytes(), None)?;
        let peak = curve.iter().fold(&curve[0], |b, p| if p.similarity > b.similarity { p } else { b });
        summary.insert("cosine_peak_shift_deg".into(), json!(peak.shift_deg));
        summary.insert("cosine_peak".into(), json!(peak.similarity));
    }
    out.write("summary.json", (serde_json::to_string_pretty(&summary).expect("serialises") + "\n").as_bytes(), Some(seed))?;
    out.finish()?;
    for (k, v) in &summary {
        println!("{k}: {v}");
    }
    Ok(())
}

pub fn plot_cmd(a: &PlotArgs) -> Result<(), CliError> {
    let traj = match &a.trajectory {
        Some(t) => {
            let cfg = load_config_from(a.config.as_deref(), "default")?;
            Some(resolve_trajectory(t, cfg.episode.bounding_box)?)
        }
        None => None,
    };
    let mut rendered = Vec::new();
    for p in &a.logs {
        let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("plot").to_string();
        let svg = plot::render(&text, &stem, traj.as_ref()).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        rendered.push((format!("{stem}.svg"), svg));
    }
    let mut out = OutDir::create(&a.out, "plot", None)?;
    for (name, svg) in &rendered {
        out.write(name, svg.as_bytes(), None)?;
        println!("{}", out.path(name).display());
    }
    out.finish()?;
    Ok(())
}
