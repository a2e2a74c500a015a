use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use octoflight::runner::Mode;
use octoflight::Wind;

#[derive(Debug, Parser)]
#[command(name = "octoflight", version, about = "Octorotor flight control experiments: tuning, training, flying, evaluation and plots")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Random-search the cascade gains (and learner knobs in rl mode).
    Tune(TuneArgs),
    /// Train a supervisory policy and write its checkpoint and learning curve.
    Train(TrainArgs),
    /// Fly a trajectory segment by segment and write the tick log and summary.
    Fly(FlyArgs),
    /// Wind sweeps, reward distributions and the action-azimuth analysis.
    Eval(EvalArgs),
    /// Render flight logs and learning curves as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file (TOML). Keys missing from the file keep their defaults.
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Bundled config: default, rl-wind, paper-pid-nominal, paper-pid-wind.
    #[arg(long, value_name = "NAME", default_value = "default")]
    pub preset: String,
    /// Output directory; every artifact is listed in DIR/manifest.json.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Pid,
    Rl,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pid => Mode::PidOnly,
            ModeArg::Rl => Mode::RlSupervised,
        }
    }
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "pid")]
    pub mode: ModeArg,
    /// Steady wind as MAGNITUDE@HEADING (newtons, degrees from +x), or 0.
    #[arg(long, default_value = "0", value_parser = parse_wind)]
    pub wind: Wind,
    /// Number of trials [default: 50 pid, 20 rl; 1000/500 with --paper-scale].
    #[arg(long)]
    pub trials: Option<u64>,
    /// Use the large default trial budgets.
    #[arg(long)]
    pub paper_scale: bool,
    /// Search space file; defaults to log-uniform x0.1..x10 around the config's gains.
    #[arg(long, value_name = "FILE")]
    pub space: Option<PathBuf>,
    /// Trial log of another condition; writes comparison.csv against it.
    #[arg(long, value_name = "FILE")]
    pub compare: Option<PathBuf>,
    /// Store per-trial wall time in the log (makes the log non-reproducible).
    #[arg(long)]
    pub record_wall_time: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training wind, MAGNITUDE@HEADING or 0.
    #[arg(long, default_value = "0", value_parser = parse_wind)]
    pub wind: Wind,
    /// Training episodes [default: from config].
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Onset {
    Segment(usize),
    Mid,
}

#[derive(Debug, Args)]
pub struct FlyArgs {
    #[command(flatten)]
    pub common: Common,
    /// `square`, `patrol` or a waypoint file (one x,y,z per line).
    #[arg(long, default_value = "square")]
    pub trajectory: String,
    #[arg(long, value_enum, default_value = "pid")]
    pub mode: ModeArg,
    /// Policy checkpoint, required in rl mode.
    #[arg(long, value_name = "FILE")]
    pub policy: Option<PathBuf>,
    /// Wind once it starts, MAGNITUDE@HEADING or 0.
    #[arg(long, default_value = "0", value_parser = parse_wind)]
    pub wind: Wind,
    /// Segment index at which the wind starts, or `mid`.
    #[arg(long, default_value = "mid", value_parser = parse_onset)]
    pub wind_onset_segment: Onset,
    /// Bound on the seeded initial speed, m/s.
    #[arg(long, default_value_t = octoflight::runner::DEFAULT_START_SPEED)]
    pub start_speed: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Supervisor checkpoint; without it only PID-only rows are produced.
    #[arg(long, value_name = "FILE")]
    pub policy: Option<PathBuf>,
    /// Second supervisor for the shifted cosine similarity.
    #[arg(long, value_name = "FILE", requires = "policy")]
    pub policy_b: Option<PathBuf>,
    #[arg(long, default_value = "square")]
    pub trajectory: String,
    /// Flights per sweep condition.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// Flights for the reward distribution under --wind.
    #[arg(long, default_value_t = 30)]
    pub runs: u64,
    /// Wind for the reward distribution.
    #[arg(long, default_value = "5@90", value_parser = parse_wind)]
    pub wind: Wind,
    /// Magnitude of the heading sweep, N.
    #[arg(long, default_value_t = 5.0)]
    pub sweep_magnitude: f64,
    /// Heading of the magnitude sweep, degrees.
    #[arg(long, default_value_t = 90.0)]
    pub sweep_heading: f64,
    /// Magnitudes of the magnitude sweep, N.
    #[arg(long, value_delimiter = ',', default_value = "0,2.5,5,7.5,10")]
    pub magnitudes: Vec<f64>,
    /// Random observations for the azimuth histogram.
    #[arg(long, default_value_t = octoflight::analysis::AZIMUTH_SAMPLES)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Flight logs or learning curves (CSV).
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Draw reference chords from this trajectory instead of estimating them from the log.
    #[arg(long)]
    pub trajectory: Option<String>,
    /// Config supplying the bounding box used to split --trajectory.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

/// `M@H` with M >= 0 newtons and H in [0, 360) degrees; a bare `0` is calm.
pub fn parse_wind(s: &str) -> Result<Wind, String> {
    let s = s.trim();
    let (m, h) = match s.split_once('@') {
        Some((m, h)) => (m, Some(h)),
        None => (s, None),
    };
    let m: f64 = m.trim().parse().map_err(|_| format!("bad wind magnitude in `{s}` (expected M@H)"))?;
    if !(m.is_finite() && m >= 0.0) {
        return Err(format!("wind magnitude must be finite and >= 0, got {m}"));
    }
    let h: f64 = match h {
        Some(h) => h.trim().parse().map_err(|_| format!("bad wind heading in `{s}` (expected M@H)"))?,
        None if m == 0.0 => 0.0,
        None => return Err(format!("wind `{s}` needs a heading (expected M@H)")),
    };
    if !(0.0..360.0).contains(&h) {
        return Err(format!("wind heading must be in [0, 360), got {h}"));
    }
    Ok(if m == 0.0 { Wind::calm() } else { Wind::from_polar(m, h) })
}

pub fn parse_onset(s: &str) -> Result<Onset, String> {
    if s == "mid" {
        return Ok(Onset::Mid);
    }
    s.parse().map(Onset::Segment).map_err(|_| format!("expected a segment index or `mid`, got `{s}`"))
}
