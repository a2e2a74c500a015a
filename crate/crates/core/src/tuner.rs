//! Random hyperparameter search, trial logging, permutation importance and
//! top-k summary tables.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dynamics::WindField;
use crate::env::{Episode, SupervisoryAction};
use crate::error::{Error, Result};
use crate::policy::PolicyParameters;
use crate::ppo::train;
use crate::runner::Mode;

pub const TRIAL_SCHEMA_VERSION: u32 = 1;
pub const EVAL_EPISODES: usize = 10;
pub const MIN_IMPORTANCE_TRIALS: usize = 30;

/// The fixed evaluation seeds every trial is scored on.
pub fn eval_seeds() -> Vec<u64> {
    (0..EVAL_EPISODES as u64).map(|i| 10_000 + i).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum Range {
    Uniform { low: f64, high: f64 },
    LogUniform { low: f64, high: f64 },
    Int { low: i64, high: i64 },
    Fixed { value: f64 },
}

impl Range {
    fn validate(&self, name: &str) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("range `{name}`: {m}")));
        match *self {
            Range::Uniform { low, high } if !(low.is_finite() && high.is_finite() && low < high) => bad("need finite low < high"),
            Range::LogUniform { low, high } if !(low > 0.0 && high.is_finite() && low < high) => bad("need 0 < low < high"),
            Range::Int { low, high } if low > high => bad("need low <= high"),
            Range::Fixed { value } if !value.is_finite() => bad("value must be finite"),
            _ => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            Range::Uniform { low, high } => rng.random_range(low..high),
            Range::LogUniform { low, high } => rng.random_range(low.ln()..high.ln()).exp(),
            Range::Int { low, high } => rng.random_range(low..=high) as f64,
            Range::Fixed { value } => value,
        }
    }
}

/// Parameter name (`section.label`) to range, sampled in key order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SearchSpace(pub BTreeMap<String, Range>);

impl SearchSpace {
    pub fn from_toml(text: &str) -> Result<Self> {
        let space: SearchSpace = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1).unwrap_or(0),
            msg: e.message().to_string(),
        })?;
        space.validate()?;
        Ok(space)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("search space serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::InvalidConfig("search space is empty".into()));
        }
        let known = RunConfig::param_names();
        for (name, range) in &self.0 {
            if !known.contains(&name.as_str()) {
                return Err(Error::InvalidConfig(format!("unknown parameter `{name}`")));
            }
            range.validate(name)?;
        }
        Ok(())
    }

    /// Cascade gains around `base`: each gain log-uniform over x0.1..x10 of its
    /// nominal value (1e-3..1 when the nominal value is zero).
    pub fn pid_default(base: &RunConfig) -> Self {
        let mut m = BTreeMap::new();
        for name in RunConfig::param_names().into_iter().filter(|n| !n.starts_with("rl.")) {
            let v = base.get_param(name).expect("known parameter");
            let range = if v > 0.0 {
                Range::LogUniform { low: v * 0.1, high: v * 10.0 }
            } else {
                Range::LogUniform { low: 1e-3, high: 1.0 }
            };
            m.insert(name.to_string(), range);
        }
        SearchSpace(m)
    }

    /// Gains as in [`SearchSpace::pid_default`] plus the learner rows.
    pub fn rl_default(base: &RunConfig) -> Self {
        let mut s = Self::pid_default(base);
        let m = &mut s.0;
        m.insert("rl.batch size".into(), Range::Int { low: 32, high: 256 });
        m.insert("rl.learning rate".into(), Range::LogUniform { low: 1e-5, high: 1e-2 });
        m.insert("rl.epochs".into(), Range::Int { low: 1, high: 10 });
        m.insert("rl.steps".into(), Range::Int { low: 256, high: 4096 });
        m.insert("rl.scaling factor".into(), Range::Uniform { low: 0.01, high: 1.0 });
        m.insert("rl.steps u".into(), Range::Int { low: 1, high: 50 });
        s
    }

    /// Stable fingerprint used to refuse resuming a log written for another space.
    pub fn fingerprint(&self) -> u64 {
        let text = serde_json::to_string(self).expect("space serialises");
        text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema: u32,
    pub trial: u64,
    pub master_seed: u64,
    pub space: u64,
    pub mode: Mode,
    pub params: BTreeMap<String, f64>,
    pub seeds: Vec<u64>,
    pub rewards: Vec<f64>,
    pub mean_reward: f64,
    /// Simulation or training failed; rewards hold the worst-case score.
    pub diverged: bool,
    /// Zero unless wall-clock recording was requested (keeps logs reproducible).
    pub wall_time_s: f64,
}

impl TrialRecord {
    pub fn recomputed_mean(&self) -> f64 {
        mean(&self.rewards)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Seed of trial `id` under `master`: splitmix64 of the pair.
pub fn trial_seed(master: u64, id: u64) -> u64 {
    let mut z = master ^ id.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Worst-case per-episode score recorded for a diverged trial.
pub fn worst_case_reward(base: &RunConfig) -> f64 {
    -base.episode.bounding_box * 20.0
}

/// Total reward of one navigation episode from `seed`, zero actions or a
/// deterministic policy.
pub fn episode_reward(cfg: &RunConfig, wind: WindField<f64>, policy: Option<&PolicyParameters<f64>>, seed: u64) -> Result<f64> {
    let mut env = Episode::new(cfg.episode.clone(), cfg.vehicle.clone(), cfg.gains.clone(), wind)?;
    let mut obs = env.reset(seed)?;
    let mut total = 0.0;
    loop {
        let action = match policy {
            Some(p) => {
                let a = p.act(&obs.0)?;
                SupervisoryAction([a[0], a[1], a[2]])
            }
            None => SupervisoryAction::zero(),
        };
        let r = env.step(&action)?;
        total += r.reward;
        obs = r.observation;
        if r.done {
            return Ok(total);
        }
    }
}

pub struct TuneJob<'a> {
    pub space: &'a SearchSpace,
    pub base: &'a RunConfig,
    pub mode: Mode,
    pub wind: WindField<f64>,
    pub master_seed: u64,
    pub record_wall_time: bool,
}

impl TuneJob<'_> {
    /// Samples, trains (RL mode) and scores trial `id`.
    pub fn run_trial(&self, id: u64) -> Result<TrialRecord> {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(self.master_seed, id));
        let mut cfg = self.base.clone();
        let mut params = BTreeMap::new();
        for (name, range) in &self.space.0 {
            let v = range.sample(&mut rng);
            cfg.set_param(name, v)?;
            params.insert(name.clone(), cfg.get_param(name)?);
        }
        if cfg.rl.batch_size > cfg.rl.steps {
            cfg.rl.batch_size = cfg.rl.steps;
        }
        let train_seed = rng.next_u64();
        let seeds = eval_seeds();
        let outcome = (|| -> Result<Vec<f64>> {
            cfg.validate()?;
            let policy = match self.mode {
                Mode::PidOnly => None,
                Mode::RlSupervised => {
                    let mut env = Episode::new(cfg.episode.clone(), cfg.vehicle.clone(), cfg.gains.clone(), self.wind)?;
                    Some(train(&mut env, &cfg.rl, cfg.train_episodes, train_seed)?.params)
                }
            };
            seeds.iter().map(|&s| episode_reward(&cfg, self.wind, policy.as_ref(), s)).collect()
        })();
        let (rewards, diverged) = match outcome {
            Ok(r) if r.iter().all(|v| v.is_finite()) => (r, false),
            Ok(_) | Err(Error::NonFiniteLoss(_)) | Err(Error::InvalidInput(_)) | Err(Error::InvalidConfig(_)) => {
                (vec![worst_case_reward(self.base); seeds.len()], true)
            }
            Err(e) => return Err(e),
        };
        Ok(TrialRecord {
            schema: TRIAL_SCHEMA_VERSION,
            trial: id,
            master_seed: self.master_seed,
            space: self.space.fingerprint(),
            mode: self.mode,
            params,
            seeds,
            mean_reward: mean(&rewards),
            rewards,
            diverged,
            wall_time_s: if self.record_wall_time { start.elapsed().as_secs_f64() } else { 0.0 },
        })
    }
}

/// Reads a trial log, one JSON record per line.
pub fn read_log(path: &Path) -> Result<Vec<TrialRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrialRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        if rec.schema != TRIAL_SCHEMA_VERSION {
            return Err(Error::Parse { line: i + 1, msg: format!("unsupported schema {}", rec.schema) });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Runs trials `0..n_trials`, appending each finished batch to `log` in
/// trial order. Trials already present in the log are kept, not rerun.
pub fn tune(job: &TuneJob<'_>, n_trials: u64, log: Option<&Path>) -> Result<Vec<TrialRecord>> {
    if n_trials == 0 {
        return Err(Error::InvalidInput("n_trials must be >= 1".into()));
    }
    job.space.validate()?;
    job.base.validate()?;
    let mut records = match log {
        Some(p) => read_log(p)?,
        None => Vec::new(),
    };
    for (i, r) in records.iter().enumerate() {
        if r.trial != i as u64 || r.master_seed != job.master_seed || r.space != job.space.fingerprint() || r.mode != job.mode {
            return Err(Error::InvalidInput(format!(
                "existing trial log does not match this search (record {i}); use a fresh output directory"
            )));
        }
    }
    records.truncate(n_trials as usize);
    let mut next = records.len() as u64;
    let batch = rayon::current_num_threads().max(1) as u64 * 2;
    while next < n_trials {
        let end = (next + batch).min(n_trials);
        let fresh: Vec<TrialRecord> = (next..end).into_par_iter().map(|id| job.run_trial(id)).collect::<Result<_>>()?;
        if let Some(p) = log {
            let mut f = OpenOptions::new().create(true).append(true).open(p)?;
            for r in &fresh {
                writeln!(f, "{}", serde_json::to_string(r).expect("record serialises"))?;
            }
        }
        for r in &fresh {
            log::info!("trial {} mean reward {:.3}{}", r.trial, r.mean_reward, if r.diverged { " (diverged)" } else { "" });
        }
        records.extend(fresh);
        next = end;
    }
    Ok(records)
}

/// Trial with the highest mean reward (lowest id on ties).
pub fn best(records: &[TrialRecord]) -> Option<&TrialRecord> {
    records.iter().fold(None, |acc: Option<&TrialRecord>, r| match acc {
        Some(b) if b.mean_reward >= r.mean_reward => Some(b),
        _ => Some(r),
    })
}

/// Applies a record's parameters on top of `base`.
pub fn apply(base: &RunConfig, record: &TrialRecord) -> Result<RunConfig> {
    let mut c = base.clone();
    for (k, v) in &record.params {
        c.set_param(k, *v)?;
    }
    Ok(c)
}

// ---------------------------------------------------------------------------
// Regression tree surrogate

#[derive(Clone, Debug)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

impl Node {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Node::Leaf(v) => *v,
            Node::Split { feature, threshold, left, right } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

const TREE_MAX_DEPTH: usize = 6;
const TREE_MIN_LEAF: usize = 3;

/// Least-squares CART on the rows in `idx`.
fn grow(x: &[Vec<f64>], y: &[f64], idx: &mut [usize], depth: usize) -> Node {
    let n = idx.len();
    let mean_y = idx.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
    if depth >= TREE_MAX_DEPTH || n < 2 * TREE_MIN_LEAF {
        return Node::Leaf(mean_y);
    }
    let total_sq: f64 = idx.iter().map(|&i| (y[i] - mean_y).powi(2)).sum();
    if total_sq <= 1e-12 * (1.0 + mean_y.abs()) {
        return Node::Leaf(mean_y);
    }
    let p = x[0].len();
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..p {
        idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        let total: f64 = idx.iter().map(|&i| y[i]).sum();
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        let total_sq_raw: f64 = idx.iter().map(|&i| y[i] * y[i]).sum();
        for k in 0..n - 1 {
            let yi = y[idx[k]];
            left_sum += yi;
            left_sq += yi * yi;
            let nl = (k + 1) as f64;
            let nr = (n - k - 1) as f64;
            if k + 1 < TREE_MIN_LEAF || n - k - 1 < TREE_MIN_LEAF {
                continue;
            }
            let (xa, xb) = (x[idx[k]][f], x[idx[k + 1]][f]);
            if xa == xb {
                continue;
            }
            let right_sum = total - left_sum;
            let right_sq = total_sq_raw - left_sq;
            let sse = (left_sq - left_sum * left_sum / nl) + (right_sq - right_sum * right_sum / nr);
            if best.is_none_or(|(b, _, _)| sse < b) {
                best = Some((sse, f, 0.5 * (xa + xb)));
            }
        }
    }
    match best {
        Some((sse, feature, threshold)) if sse < total_sq - 1e-12 => {
            let (mut l, mut r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][feature] <= threshold);
            Node::Split {
                feature,
                threshold,
                left: Box::new(grow(x, y, &mut l, depth + 1)),
                right: Box::new(grow(x, y, &mut r, depth + 1)),
            }
        }
        _ => Node::Leaf(mean_y),
    }
}

fn mse(tree: &Node, x: &[Vec<f64>], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(xi, yi)| (tree.predict(xi) - yi).powi(2)).sum::<f64>() / y.len() as f64
}

const PERMUTATION_REPEATS: usize = 10;
const PERMUTATION_SEED: u64 = 0x5eed;

/// Permutation importance of each parameter for predicting the mean reward,
/// from a regression-tree surrogate. Scores are >= 0 and sum to 1; with no
/// signal every parameter gets the same share.
pub fn importance(records: &[TrialRecord]) -> Result<BTreeMap<String, f64>> {
    if records.len() < MIN_IMPORTANCE_TRIALS {
        return Err(Error::InsufficientData { needed: MIN_IMPORTANCE_TRIALS, got: records.len() });
    }
    let names: Vec<String> = records[0].params.keys().cloned().collect();
    if names.is_empty() {
        return Err(Error::InvalidInput("trial records carry no parameters".into()));
    }
    let mut x = Vec::with_capacity(records.len());
    for r in records {
        if r.params.len() != names.len() || !names.iter().all(|n| r.params.contains_key(n)) {
            return Err(Error::InvalidInput(format!("trial {} has a different parameter set", r.trial)));
        }
        x.push(names.iter().map(|n| r.params[n]).collect::<Vec<f64>>());
    }
    let y: Vec<f64> = records.iter().map(|r| r.mean_reward).collect();
    let mut idx: Vec<usize> = (0..y.len()).collect();
    let tree = grow(&x, &y, &mut idx, 0);
    let base = mse(&tree, &x, &y);

    let mut rng = ChaCha8Rng::seed_from_u64(PERMUTATION_SEED);
    let mut scores = Vec::with_capacity(names.len());
    for f in 0..names.len() {
        let mut inc = 0.0;
        for _ in 0..PERMUTATION_REPEATS {
            let mut col: Vec<f64> = x.iter().map(|r| r[f]).collect();
            col.shuffle(&mut rng);
            let xp: Vec<Vec<f64>> = x
                .iter()
                .zip(&col)
                .map(|(r, c)| {
                    let mut r = r.clone();
                    r[f] = *c;
                    r
                })
                .collect();
            inc += mse(&tree, &xp, &y) - base;
        }
        scores.push((inc / PERMUTATION_REPEATS as f64).max(0.0));
    }
    let total: f64 = scores.iter().sum();
    let k = names.len() as f64;
    Ok(names
        .into_iter()
        .zip(scores)
        .map(|(n, s)| (n, if total > 0.0 { s / total } else { 1.0 / k }))
        .collect())
}

// ---------------------------------------------------------------------------
// Tables

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamStat {
    pub mean: f64,
    /// Population standard deviation as a percentage of |mean|.
    pub std_pct: f64,
}

fn stat(values: &[f64]) -> ParamStat {
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64;
    let std_pct = if m == 0.0 {
        if var == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        var.sqrt() / m.abs() * 100.0
    };
    ParamStat { mean: m, std_pct }
}

/// Mean and relative spread of each parameter over the `k` best trials.
pub fn top_table(records: &[TrialRecord], k: usize) -> Result<BTreeMap<String, ParamStat>> {
    if k == 0 || records.len() < k {
        return Err(Error::InsufficientData { needed: k.max(1), got: records.len() });
    }
    let mut sorted: Vec<&TrialRecord> = records.iter().collect();
    sorted.sort_by(|a, b| b.mean_reward.total_cmp(&a.mean_reward).then(a.trial.cmp(&b.trial)));
    let top = &sorted[..k];
    let names: Vec<String> = top[0].params.keys().cloned().collect();
    Ok(names
        .into_iter()
        .map(|n| {
            let vals: Vec<f64> = top.iter().filter_map(|r| r.params.get(&n).copied()).collect();
            let s = stat(&vals);
            (n, s)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub param: String,
    pub a: ParamStat,
    pub b: ParamStat,
    pub change_pct: f64,
    pub notable: bool,
}

/// Percent change from condition `a` to `b`.
pub fn percent_change(a: f64, b: f64) -> f64 {
    (b - a) / a.abs() * 100.0
}

/// The change is notable when its magnitude exceeds both conditions' spreads.
pub fn is_notable(change_pct: f64, std_a_pct: f64, std_b_pct: f64) -> bool {
    change_pct.abs() > std_a_pct && change_pct.abs() > std_b_pct
}

pub fn compare(a: &BTreeMap<String, ParamStat>, b: &BTreeMap<String, ParamStat>) -> Vec<ComparisonRow> {
    a.iter()
        .filter_map(|(name, sa)| {
            b.get(name).map(|sb| {
                let change = percent_change(sa.mean, sb.mean);
                ComparisonRow {
                    param: name.clone(),
                    a: sa.clone(),
                    b: sb.clone(),
                    change_pct: change,
                    notable: is_notable(change, sa.std_pct, sb.std_pct),
                }
            })
        })
        .collect()
}

pub fn top_table_csv(table: &BTreeMap<String, ParamStat>) -> String {
    let mut s = String::from("param,mean,std_pct\n");
    for (n, st) in table {
        s.push_str(&format!("{n},{},{}\n", st.mean, st.std_pct));
    }
    s
}

pub fn comparison_csv(rows: &[ComparisonRow], label_a: &str, label_b: &str) -> String {
    let mut s = format!("param,{label_a},{label_a}_std_pct,{label_b},{label_b}_std_pct,change_pct,notable\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.param, r.a.mean, r.a.std_pct, r.b.mean, r.b.std_pct, r.change_pct, r.notable
        ));
    }
    s
}

pub fn importance_csv(imp: &BTreeMap<String, f64>) -> String {
    let mut rows: Vec<(&String, &f64)> = imp.iter().collect();
    rows.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
    let mut s = String::from("param,importance\n");
    for (n, v) in rows {
        s.push_str(&format!("{n},{v}\n"));
    }
    s
}
