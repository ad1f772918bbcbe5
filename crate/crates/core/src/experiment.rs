//! Reproducible experiments: the G1-G8 parameter study, on-off attack suite,
//! sensor usage run, MovieLens prediction run, global trust analysis and the
//! throughput benchmark. Every experiment writes plain CSV.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::cipher::{CipherToken, KeySet};
use crate::datagen::{
    gen_fixed, gen_onoff, gen_sensor_dataset, ingest_movielens, DatagenError, FixedPreset, IngestReport, OnOffPattern,
    TagSource, DEFAULT_PERIOD,
};
use crate::pipeline::{encrypt_stream, Pipeline, PipelineError, PipelineOptions, StepTrace};
use crate::predict::ErrorSummary;
use crate::tokenchain::AccessServiceRecord;
use crate::trust::{estimate_kappa, write_trajectory_csv, Role, TrajectoryPoint, TrustError, WeightParams, BURN_IN, REFERENCE_KAPPA};

/// Key material used for experiment runs, so outputs are reproducible.
pub const EXPERIMENT_KEYS: &str = "0123456789abcdef,23456789abcdef01,456789abcdef0123";
pub const DEFAULT_MOVIELENS_LIMIT: usize = 100_000;
/// Start of the window over which the largest per-step change is measured.
pub const STEP_WINDOW_START: usize = 5000;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown experiment {0:?}")]
    Unknown(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Trust(#[from] TrustError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn experiment_keys() -> KeySet {
    KeySet::from_hex_list(EXPERIMENT_KEYS).expect("built-in keys are valid")
}

/// One of the eight parameter groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GConfig {
    pub id: &'static str,
    pub params: WeightParams,
    pub score: f64,
    pub s_max: f64,
}

const fn g(id: &'static str, alpha: f64, beta: f64, delta: f64, t0: f64, score: f64) -> GConfig {
    GConfig { id, params: WeightParams { alpha, beta, gamma: 1.0 - beta, delta, t0 }, score, s_max: 10.0 }
}

pub const G_CONFIGS: [GConfig; 8] = [
    g("G1", 0.05, 0.5, -0.5, 0.1, 5.0),
    g("G2", 0.01, 0.5, -0.5, 0.1, 5.0),
    g("G3", 0.05, 0.5, -1.0, 0.1, 5.0),
    g("G4", 0.05, 0.8, -0.5, 0.1, 5.0),
    g("G5", 0.05, 0.2, -0.5, 0.1, 5.0),
    g("G6", 0.05, 0.5, -0.5, 0.4, 5.0),
    g("G7", 0.05, 0.5, -0.5, 0.1, 1.0),
    g("G8", 0.05, 0.5, -0.5, 0.1, 10.0),
];

pub fn g_config(id: &str) -> Option<GConfig> {
    G_CONFIGS.iter().copied().find(|c| c.id.eq_ignore_ascii_case(id))
}

impl GConfig {
    pub fn records(&self, n: usize) -> Result<Vec<AccessServiceRecord>, DatagenError> {
        let ids = FixedPreset::Dataset1.identities();
        gen_fixed(n, self.score, self.s_max, &ids, 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoleSummary {
    pub role: Role,
    pub offset: f64,
    /// Mean trust over `n > BURN_IN`.
    pub tail_mean: f64,
    pub last_t: f64,
    pub last_t_prime: Option<f64>,
    pub tail_lambda: f64,
    pub kappa_hat: f64,
    /// Largest `|T_{n+1} - T_n|` for `n >= STEP_WINDOW_START`, if the run is that long.
    pub sup_step: Option<f64>,
}

fn tail(points: &[TrajectoryPoint]) -> impl Iterator<Item = &TrajectoryPoint> {
    points.iter().filter(|p| p.n > BURN_IN)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, c) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (c > 0).then(|| s / c as f64)
}

fn summarize_role(role: Role, points: &[TrajectoryPoint]) -> Result<RoleSummary, TrustError> {
    let last = points.last().ok_or(TrustError::EmptyTail(BURN_IN))?;
    let tail_mean = mean(tail(points).map(|p| p.t)).ok_or(TrustError::EmptyTail(BURN_IN))?;
    let tail_lambda = mean(tail(points).filter_map(TrajectoryPoint::lambda)).unwrap_or(f64::NAN);
    let sup_step = points
        .windows(2)
        .filter(|w| w[0].n >= STEP_WINDOW_START)
        .map(|w| (w[1].t - w[0].t).abs())
        .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.max(d))));
    Ok(RoleSummary {
        role,
        offset: last.offset,
        tail_mean,
        last_t: last.t,
        last_t_prime: last.t_prime,
        tail_lambda,
        kappa_hat: estimate_kappa(points, BURN_IN)?,
        sup_step,
    })
}

/// A completed parameter-group run.
#[derive(Debug, Clone)]
pub struct GRun {
    pub config: GConfig,
    pub n: usize,
    pub roles: [RoleSummary; 3],
    /// Mean kappa over the tails of all three roles.
    pub kappa_hat: f64,
    /// Trace of the second pass, carrying predictions made with `kappa_hat`.
    pub trace: Vec<StepTrace>,
    pub infeasible_states: usize,
}

impl GRun {
    pub fn trajectory(&self, role: Role) -> Vec<TrajectoryPoint> {
        self.trace.iter().map(|s| s.points[role.index()]).collect()
    }

    /// Largest tail `|T - (T' + kappa_hat S)|` over all roles.
    pub fn convergence_residual(&self) -> f64 {
        Role::ALL
            .iter()
            .flat_map(|&r| self.trajectory(r))
            .filter(|p| p.n > BURN_IN)
            .filter_map(|p| p.t_prime.map(|tp| (p.t - (tp + self.kappa_hat * p.offset)).abs()))
            .fold(0.0, f64::max)
    }

    /// Steps `n >= 2` at which `T_o > T_e > T_s` fails.
    pub fn role_order_violations(&self) -> usize {
        self.trace
            .iter()
            .filter(|s| s.points[0].n >= 2)
            .filter(|s| {
                let [ts, to, te] = s.points.map(|p| p.t);
                !(to > te && te > ts)
            })
            .count()
    }

    /// `(n, P)` for records after the burn-in.
    pub fn tail_predictions(&self) -> Vec<(usize, Option<f64>)> {
        self.trace
            .iter()
            .filter(|s| s.seq >= BURN_IN)
            .map(|s| (s.seq, s.prediction.and_then(|p| p.value)))
            .collect()
    }

    /// `<id>_<role>.csv` trajectories plus `<id>_prediction.csv`.
    pub fn write_csvs(&self, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for role in Role::ALL {
            let path = dir.join(format!("{}_{}.csv", self.config.id, role.label()));
            write_trajectory_csv(&self.trajectory(role), fs::File::create(&path)?)?;
            written.push(path);
        }
        let path = dir.join(format!("{}_prediction.csv", self.config.id));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["n", "score", "P", "omega"])?;
        for s in &self.trace {
            let p = s.prediction.and_then(|p| p.value);
            let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([(s.seq + 1).to_string(), s.score.to_string(), cell(p), cell(p.map(|p| s.score - p))])?;
        }
        w.flush()?;
        written.push(path);
        Ok(written)
    }
}

/// Runs a parameter group: a first pass estimates `kappa_hat`, a second pass
/// predicts each record with it before applying the record.
pub fn run_g_experiment(config: &GConfig, n: usize) -> Result<GRun, ExperimentError> {
    let records = encrypt_stream(&config.records(n)?, &experiment_keys())?;
    let mut first = Pipeline::new(PipelineOptions::new(config.params).with_trace());
    first.run(&records)?;
    let pooled: Vec<TrajectoryPoint> = Role::ALL.iter().flat_map(|&r| first.trajectory(r)).collect();
    let kappa_hat = estimate_kappa(&pooled, BURN_IN)?;

    let mut second = Pipeline::new(PipelineOptions::new(config.params).with_trace().with_prediction(kappa_hat));
    second.run(&records)?;
    let roles = [
        summarize_role(Role::Requester, &second.trajectory(Role::Requester))?,
        summarize_role(Role::Provider, &second.trajectory(Role::Provider))?,
        summarize_role(Role::Service, &second.trajectory(Role::Service))?,
    ];
    Ok(GRun {
        config: *config,
        n,
        roles,
        kappa_hat,
        infeasible_states: second.stats().infeasible_states,
        trace: second.trace().to_vec(),
    })
}

pub fn write_g_summary<W: Write>(runs: &[GRun], w: W) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "id", "role", "alpha", "beta", "gamma", "delta", "t0", "score", "offset", "tail_mean", "last_T", "last_Tprime",
        "tail_lambda", "kappa_hat", "run_kappa_hat", "sup_step",
    ])?;
    for run in runs {
        let p = run.config.params;
        for r in &run.roles {
            out.write_record([
                run.config.id.to_string(),
                r.role.label().to_string(),
                p.alpha.to_string(),
                p.beta.to_string(),
                p.gamma.to_string(),
                p.delta.to_string(),
                p.t0.to_string(),
                run.config.score.to_string(),
                r.offset.to_string(),
                r.tail_mean.to_string(),
                r.last_t.to_string(),
                r.last_t_prime.map(|v| v.to_string()).unwrap_or_default(),
                r.tail_lambda.to_string(),
                r.kappa_hat.to_string(),
                run.kappa_hat.to_string(),
                r.sup_step.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One on-off pattern run.
#[derive(Debug, Clone)]
pub struct OnOffRun {
    pub pattern: OnOffPattern,
    pub period: usize,
    pub seed: u64,
    pub scores: Vec<f64>,
    /// Per role, indexed by [`Role::index`].
    pub trajectories: [Vec<f64>; 3],
}

impl OnOffRun {
    /// `(min, max)` of trust over records after the burn-in.
    pub fn band(&self, role: Role) -> (f64, f64) {
        self.trajectories[role.index()]
            .iter()
            .skip(BURN_IN)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)))
    }

    pub fn band_width(&self, role: Role) -> f64 {
        let (lo, hi) = self.band(role);
        hi - lo
    }

    /// Peak-to-peak trust over the final period.
    pub fn amplitude(&self, role: Role) -> f64 {
        let t = &self.trajectories[role.index()];
        let last = &t[t.len().saturating_sub(self.period)..];
        let (lo, hi) = last.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        hi - lo
    }

    pub fn tail_mean(&self, role: Role) -> f64 {
        mean(self.trajectories[role.index()].iter().skip(BURN_IN).copied()).unwrap_or(f64::NAN)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ExperimentError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "score", "T_SR", "T_SP", "T_Service"])?;
        for (i, score) in self.scores.iter().enumerate() {
            out.write_record([
                (i + 1).to_string(),
                score.to_string(),
                self.trajectories[0][i].to_string(),
                self.trajectories[1][i].to_string(),
                self.trajectories[2][i].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn run_onoff(
    pattern: OnOffPattern,
    period: usize,
    n: usize,
    seed: u64,
    params: WeightParams,
) -> Result<OnOffRun, ExperimentError> {
    let stream = gen_onoff(pattern, period, n, seed)?;
    let records = encrypt_stream(&stream.records, &experiment_keys())?;
    let mut p = Pipeline::new(PipelineOptions::new(params).with_trace());
    p.run(&records)?;
    let trajectories = Role::ALL.map(|r| p.trajectory(r).iter().map(|pt| pt.t).collect());
    Ok(OnOffRun { pattern, period, seed, scores: stream.records.iter().map(|r| r.score).collect(), trajectories })
}

/// All four patterns with the default weights.
pub fn run_onoff_suite(n: usize, seed: u64) -> Result<Vec<OnOffRun>, ExperimentError> {
    OnOffPattern::ALL
        .iter()
        .map(|&p| run_onoff(p, DEFAULT_PERIOD, n, seed, WeightParams::default()))
        .collect()
}

pub fn write_onoff_summary<W: Write>(runs: &[OnOffRun], w: W) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["pattern", "seed", "role", "band_min", "band_max", "band_width", "amplitude", "tail_mean"])?;
    for run in runs {
        for role in Role::ALL {
            let (lo, hi) = run.band(role);
            out.write_record([
                run.pattern.id().to_string(),
                run.seed.to_string(),
                role.label().to_string(),
                lo.to_string(),
                hi.to_string(),
                (hi - lo).to_string(),
                run.amplitude(role).to_string(),
                run.tail_mean(role).to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTrust {
    pub role: Role,
    pub name: String,
    pub trust: f64,
    pub updates: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UsageComparison {
    pub name: String,
    pub trust: f64,
    pub actual: f64,
    /// Sum of defined predictions for this entity's records.
    pub predicted: f64,
}

#[derive(Debug, Clone)]
pub struct SensorRun {
    pub entities: Vec<NamedTrust>,
    /// Per record: `(record, P)`.
    pub predictions: Vec<(AccessServiceRecord, Option<f64>)>,
    /// Sensor classes (provider role) by descending trust.
    pub classes: Vec<UsageComparison>,
}

impl SensorRun {
    pub fn registered(&self) -> usize {
        self.entities.len()
    }

    /// Pairwise agreement between actual and predicted usage among the
    /// `k` most trusted classes, skipping pairs tied in actual usage.
    /// Returns `(agreeing, compared)`.
    pub fn top_k_agreement(&self, k: usize) -> (usize, usize) {
        let top = &self.classes[..k.min(self.classes.len())];
        let mut agree = 0;
        let mut compared = 0;
        for (i, a) in top.iter().enumerate() {
            for b in &top[i + 1..] {
                if a.actual == b.actual {
                    continue;
                }
                compared += 1;
                if (a.actual > b.actual) == (a.predicted > b.predicted) {
                    agree += 1;
                }
            }
        }
        (agree, compared)
    }
}

/// Names each token from the plaintext records it came from.
fn token_names(plain: &[AccessServiceRecord], enc: &[crate::tokenchain::EncryptedRecord]) -> [BTreeMap<CipherToken, String>; 3] {
    let mut names: [BTreeMap<CipherToken, String>; 3] = Default::default();
    for (p, e) in plain.iter().zip(enc) {
        names[0].entry(e.cs.clone()).or_insert_with(|| p.s.clone());
        names[1].entry(e.co.clone()).or_insert_with(|| p.o.clone());
        names[2].entry(e.ce.clone()).or_insert_with(|| p.e.clone());
    }
    names
}

/// The sensor usage dataset with default weights, predicting each record's
/// usage before applying it with the reference `kappa` (the stream is too
/// short for an estimate).
pub fn run_sensor_experiment() -> Result<SensorRun, ExperimentError> {
    let plain = gen_sensor_dataset();
    let enc = encrypt_stream(&plain, &experiment_keys())?;
    let names = token_names(&plain, &enc);
    let mut p = Pipeline::new(PipelineOptions::new(WeightParams::default()).with_trace().with_prediction(REFERENCE_KAPPA));
    p.run(&enc)?;

    let mut entities = Vec::new();
    for role in Role::ALL {
        for (pk, e) in p.entities(role) {
            entities.push(NamedTrust { role, name: names[role.index()][pk].clone(), trust: e.trust.last(), updates: e.updates });
        }
    }
    let predictions: Vec<(AccessServiceRecord, Option<f64>)> = plain
        .iter()
        .cloned()
        .zip(p.trace().iter().map(|s| s.prediction.and_then(|x| x.value)))
        .collect();

    let mut classes: Vec<UsageComparison> = p
        .entities(Role::Provider)
        .map(|(pk, e)| {
            let name = names[1][pk].clone();
            let mine = predictions.iter().filter(|(r, _)| r.o == name);
            let (actual, predicted) = mine.fold((0.0, 0.0), |(a, q), (r, pr)| (a + r.score, q + pr.unwrap_or(0.0)));
            UsageComparison { name, trust: e.trust.last(), actual, predicted }
        })
        .collect();
    classes.sort_by(|a, b| b.trust.total_cmp(&a.trust).then_with(|| a.name.cmp(&b.name)));
    Ok(SensorRun { entities, predictions, classes })
}

pub fn write_sensor_csvs(run: &SensorRun, dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("sensor_trust.csv"))?;
    w.write_record(["role", "entity", "trust", "updates"])?;
    for e in &run.entities {
        w.write_record([e.role.label(), &e.name, &e.trust.to_string(), &e.updates.to_string()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("sensor_prediction.csv"))?;
    w.write_record(["s", "o", "e", "score", "P", "omega"])?;
    for (r, p) in &run.predictions {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([&r.s, &r.o, &r.e, &r.score.to_string(), &cell(*p), &cell(p.map(|p| r.score - p))])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("sensor_usage.csv"))?;
    w.write_record(["class", "trust", "actual_hours", "predicted_hours"])?;
    for c in &run.classes {
        w.write_record([&c.name, &c.trust.to_string(), &c.actual.to_string(), &c.predicted.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct MovieLensRun {
    pub ingest: IngestReport,
    pub errors: ErrorSummary,
    pub kappa: f64,
    pub global: Vec<GlobalRow>,
}

/// Ratings are predicted with `kappa` from the pre-update states, then applied.
pub fn run_movielens(
    ratings: &Path,
    movies: &Path,
    limit: Option<usize>,
    tags: &TagSource,
    kappa: f64,
    predictions_out: Option<&Path>,
) -> Result<MovieLensRun, ExperimentError> {
    let ingest = ingest_movielens(ratings, movies, limit, tags)?;
    let enc = encrypt_stream(&ingest.records, &experiment_keys())?;
    let mut p = Pipeline::new(PipelineOptions::new(WeightParams::default()).with_trace().with_prediction(kappa));
    p.run(&enc)?;
    let mut errors = ErrorSummary::new(2.0);
    for s in p.trace() {
        errors.add(s.prediction.and_then(|x| x.error(s.score)));
    }
    if let Some(path) = predictions_out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["s", "o", "e", "score", "P", "omega"])?;
        for (r, s) in ingest.records.iter().zip(p.trace()) {
            let pv = s.prediction.and_then(|x| x.value);
            let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([&r.s, &r.o, &r.e, &r.score.to_string(), &cell(pv), &cell(pv.map(|v| r.score - v))])?;
        }
        w.flush()?;
    }
    let global = analyze_global(&p);
    Ok(MovieLensRun { ingest, errors, kappa, global })
}

/// Locates the MovieLens files: `TBTM_MOVIELENS_DIR`, then `data/movielens-100k`
/// under the workspace root.
pub fn movielens_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os("TBTM_MOVIELENS_DIR") {
        return PathBuf::from(dir);
    }
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/movielens-100k")
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalRow {
    pub role: Role,
    pub pk: CipherToken,
    pub trust: f64,
    pub updates: u64,
}

/// Latest trust of every entity, grouped by role.
pub fn analyze_global(p: &Pipeline) -> Vec<GlobalRow> {
    Role::ALL
        .iter()
        .flat_map(|&role| {
            p.entities(role).map(move |(pk, e)| GlobalRow { role, pk: pk.clone(), trust: e.trust.last(), updates: e.updates })
        })
        .collect()
}

pub fn write_global_csv<W: Write>(rows: &[GlobalRow], w: W) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["role", "pk", "trust", "updates"])?;
    for r in rows {
        out.write_record([r.role.label(), &r.pk.to_hex(), &r.trust.to_string(), &r.updates.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchPoint {
    pub n: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares line through the points; `None` with fewer than two
/// distinct `n`.
pub fn linear_fit(points: &[BenchPoint]) -> Option<LinearFit> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.n > 0).map(|p| (p.n as f64, p.seconds)).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if pts.len() < 2 || sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit { slope, intercept: my - slope * mx, r2 })
}

/// Records spread over many requesters, providers and services with varying
/// scores, for timing.
pub fn bench_records(n: usize) -> Vec<AccessServiceRecord> {
    (0..n)
        .map(|i| {
            let s = format!("user{}", i % 1000);
            let o = format!("tag{}", i % 20);
            let e = format!("item{}", (i * 7) % 2000);
            AccessServiceRecord::new(s, o, e, (i % 11) as f64, 10.0)
        })
        .collect()
}

/// Times trust evaluation (registration, updates, hash chaining) over the
/// first `n` records for each count; each count is the best of `repeats`.
pub fn bench(counts: &[usize], repeats: usize) -> Result<Vec<BenchPoint>, ExperimentError> {
    let max = counts.iter().copied().max().unwrap_or(0);
    let enc = encrypt_stream(&bench_records(max), &experiment_keys())?;
    let mut out = Vec::with_capacity(counts.len());
    for &n in counts {
        let mut best = f64::INFINITY;
        for _ in 0..repeats.max(1) {
            let mut p = Pipeline::new(PipelineOptions::new(WeightParams::default()));
            let start = Instant::now();
            p.run(&enc[..n])?;
            best = best.min(start.elapsed().as_secs_f64());
        }
        out.push(BenchPoint { n, seconds: best });
    }
    Ok(out)
}

pub fn write_bench_csv<W: Write>(points: &[BenchPoint], w: W) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n", "seconds"])?;
    for p in points {
        out.write_record([p.n.to_string(), p.seconds.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// A gnuplot script plotting `T` and `Tprime` from a trajectory CSV.
pub fn gnuplot_trajectory(csv_file: &str, title: &str) -> String {
    format!(
        "set datafile separator ','\nset key autotitle columnhead\nset title '{title}'\nset xlabel 'n'\nset ylabel 'trust'\n\
         plot '{csv_file}' using 1:2 with lines, '' using 1:3 with lines\n"
    )
}
