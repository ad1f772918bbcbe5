//! Record streams: the simulated fixed-score and attack datasets, on-off
//! attack patterns, the sensor usage dataset and MovieLens ingestion, plus the
//! plain-text record file format shared by the CLI.
//!
//! Record files are CSV with a leading `# s_max=<v>` comment:
//!
//! ```text
//! # s_max=10
//! s,o,e,score
//! honestSR,honestSP,honestService,5
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tokenchain::AccessServiceRecord;

pub const DEFAULT_RECORD_COUNT: usize = 10_000;
pub const DEFAULT_PERIOD: usize = 200;
pub const ONOFF_HIGH: f64 = 10.0;
pub const ONOFF_LOW: f64 = 1.0;
pub const ONOFF_S_MAX: f64 = 10.0;
pub const MOVIELENS_S_MAX: f64 = 5.0;
pub const SENSOR_S_MAX: f64 = 24.0;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("record count must be at least 1")]
    EmptyStream,
    #[error("score {score} outside [0, {s_max}]")]
    ScoreRange { score: f64, s_max: f64 },
    #[error("unknown on-off pattern {0} (expected 1..=4)")]
    UnknownPattern(u8),
    #[error("period must be a positive multiple of 4, got {0}")]
    BadPeriod(usize),
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("{file}:{line}: {reason}")]
    Malformed { file: String, line: u64, reason: String },
    #[error("s_max is not given in the file header nor on the command line")]
    MissingSMax,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Identity template for single-triple streams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Identities {
    pub s: String,
    pub o: String,
    pub e: String,
}

impl Identities {
    pub fn new(s: &str, o: &str, e: &str) -> Self {
        Self { s: s.into(), o: o.into(), e: e.into() }
    }

    /// The `k`-th copy when a stream spreads over several triples.
    fn nth(&self, k: usize, multiplicity: usize) -> (String, String, String) {
        if multiplicity <= 1 {
            (self.s.clone(), self.o.clone(), self.e.clone())
        } else {
            (format!("{}-{k}", self.s), format!("{}-{k}", self.o), format!("{}-{k}", self.e))
        }
    }
}

/// The simulated fixed-score datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedPreset {
    /// Honest requester, provider and service; score 5 of 10.
    Dataset1,
    /// Malicious requester scoring an honest provider and service 1 of 10.
    Dataset2_1,
    /// Malicious requester stuffing a malicious provider and service with 10 of 10.
    Dataset2_2,
}

impl FixedPreset {
    pub fn score(self) -> f64 {
        match self {
            FixedPreset::Dataset1 => 5.0,
            FixedPreset::Dataset2_1 => 1.0,
            FixedPreset::Dataset2_2 => 10.0,
        }
    }

    pub fn s_max(self) -> f64 {
        10.0
    }

    pub fn identities(self) -> Identities {
        match self {
            FixedPreset::Dataset1 => Identities::new("honestSR", "honestSP", "honestService"),
            FixedPreset::Dataset2_1 => Identities::new("maliciousSR", "honestSP", "honestService"),
            FixedPreset::Dataset2_2 => Identities::new("maliciousSR", "maliciousSP", "maliciousService"),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FixedPreset::Dataset1 => "dataset_1",
            FixedPreset::Dataset2_1 => "dataset_2_1",
            FixedPreset::Dataset2_2 => "dataset_2_2",
        }
    }

    pub fn generate(self, n: usize) -> Result<Vec<AccessServiceRecord>, DatagenError> {
        gen_fixed(n, self.score(), self.s_max(), &self.identities(), 1)
    }
}

/// `n` records with the same score, cycling over `multiplicity` identity triples.
pub fn gen_fixed(
    n: usize,
    score: f64,
    s_max: f64,
    ids: &Identities,
    multiplicity: usize,
) -> Result<Vec<AccessServiceRecord>, DatagenError> {
    if n == 0 {
        return Err(DatagenError::EmptyStream);
    }
    if s_max.is_nan() || s_max <= 0.0 || !(0.0..=s_max).contains(&score) {
        return Err(DatagenError::ScoreRange { score, s_max });
    }
    let m = multiplicity.max(1);
    Ok((0..n)
        .map(|i| {
            let (s, o, e) = ids.nth(i % m, m);
            AccessServiceRecord::new(s, o, e, score, s_max)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnOffPattern {
    /// Half a period on, then half off.
    OnThenOff = 1,
    /// Half a period off, then half on.
    OffThenOn = 2,
    /// Blocks of two on, two off: a quarter-period worth of pairs per period.
    FastSwitch = 3,
    /// Each record independently on or off with probability 1/2.
    Random = 4,
}

impl OnOffPattern {
    pub const ALL: [OnOffPattern; 4] =
        [OnOffPattern::OnThenOff, OnOffPattern::OffThenOn, OnOffPattern::FastSwitch, OnOffPattern::Random];

    pub fn from_id(id: u8) -> Result<Self, DatagenError> {
        match id {
            1 => Ok(OnOffPattern::OnThenOff),
            2 => Ok(OnOffPattern::OffThenOn),
            3 => Ok(OnOffPattern::FastSwitch),
            4 => Ok(OnOffPattern::Random),
            other => Err(DatagenError::UnknownPattern(other)),
        }
    }

    pub fn id(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone)]
pub struct OnOffStream {
    pub pattern: OnOffPattern,
    pub period: usize,
    pub seed: u64,
    pub records: Vec<AccessServiceRecord>,
}

impl OnOffStream {
    pub fn on_fraction(&self) -> f64 {
        let on = self.records.iter().filter(|r| r.score == ONOFF_HIGH).count();
        on as f64 / self.records.len() as f64
    }
}

pub fn gen_onoff(pattern: OnOffPattern, period: usize, n: usize, seed: u64) -> Result<OnOffStream, DatagenError> {
    if n == 0 {
        return Err(DatagenError::EmptyStream);
    }
    if period == 0 || !period.is_multiple_of(4) {
        return Err(DatagenError::BadPeriod(period));
    }
    let ids = Identities::new("onoffSR", "onoffSP", "onoffService");
    let half = period / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            let j = i % period;
            let on = match pattern {
                OnOffPattern::OnThenOff => j < half,
                OnOffPattern::OffThenOn => j >= half,
                OnOffPattern::FastSwitch => (j / 2).is_multiple_of(2),
                OnOffPattern::Random => rng.random_bool(0.5),
            };
            let score = if on { ONOFF_HIGH } else { ONOFF_LOW };
            AccessServiceRecord::new(&ids.s, &ids.o, &ids.e, score, ONOFF_S_MAX)
        })
        .collect();
    Ok(OnOffStream { pattern, period, seed, records })
}

/// Whether `(1 + a) mod b = 10` and `(10 + a) mod b = 1`, i.e. whether an
/// additive shift by `a` modulo `b` swaps the on and off scores.
pub fn verify_onoff_params(a: i64, b: i64) -> bool {
    if b <= 0 {
        return false;
    }
    (1 + a).rem_euclid(b) == 10 && (10 + a).rem_euclid(b) == 1
}

const SENSOR_ROWS: [(&str, &str, &str, f64); 12] = [
    ("Energy-Saving Lamp", "Noise Class", "Sound Sensor", 18.0),
    ("Energy-Saving Lamp", "Light Class", "Light Sensor", 24.0),
    ("Crowd", "Space Class", "Distance Sensor", 18.0),
    ("Mobile Device", "Strength Class", "Gravity Sensor", 24.0),
    ("Mobile Device", "Space Class", "GPS", 24.0),
    ("Mobile Device", "Light Class", "Light Sensor", 24.0),
    ("Fan", "Temperature Class", "Temperature Sensor", 24.0),
    ("Null", "Humidity Class", "Humidity Sensor", 24.0),
    ("Camera", "Light Class", "Infrared Sensor", 24.0),
    ("Touchable Device", "Strength Class", "Pressure Sensor", 18.0),
    ("Crowd", "Image Class", "Image Sensor", 18.0),
    ("Camera", "Color Class", "Color Sensor", 24.0),
];

/// Sensor usage records `(device, sensor class, sensor, hours used)`, 24 h scale.
pub fn gen_sensor_dataset() -> Vec<AccessServiceRecord> {
    SENSOR_ROWS
        .iter()
        .map(|&(s, o, e, h)| AccessServiceRecord::new(s, o, e, h, SENSOR_S_MAX))
        .collect()
}

/// How a movie is mapped to the provider ("tag") role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TagSource {
    /// First token of the `genres` column.
    FirstGenre,
    /// Highest-relevance tag from a `movieId,tagId,relevance` genome file.
    GenomeTop(std::path::PathBuf),
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub records: Vec<AccessServiceRecord>,
    pub rows_read: usize,
    pub missing_metadata: usize,
    pub range_violations: usize,
}

fn malformed(file: &str, line: u64, reason: impl Into<String>) -> DatagenError {
    DatagenError::Malformed { file: file.into(), line, reason: reason.into() }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn load_first_genres<R: Read>(movies: R, name: &str) -> Result<HashMap<String, String>, DatagenError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(movies);
    let mut out = HashMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = line_of(&row);
        let id = row.get(0).ok_or_else(|| malformed(name, line, "missing movieId"))?;
        let genres = row.get(row.len().saturating_sub(1)).filter(|_| row.len() >= 3);
        let genres = genres.ok_or_else(|| malformed(name, line, "expected movieId,title,genres"))?;
        let first = genres.split('|').next().unwrap_or("").trim();
        if !first.is_empty() && first != "(no genres listed)" {
            out.insert(id.trim().to_string(), first.to_string());
        }
    }
    Ok(out)
}

fn load_genome_top(path: &Path) -> Result<HashMap<String, String>, DatagenError> {
    let name = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path)?;
    let mut best: HashMap<String, (f64, String)> = HashMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = line_of(&row);
        let (Some(movie), Some(tag), Some(rel)) = (row.get(0), row.get(1), row.get(2)) else {
            return Err(malformed(&name, line, "expected movieId,tagId,relevance"));
        };
        let rel: f64 = rel.trim().parse().map_err(|_| malformed(&name, line, "relevance is not a number"))?;
        let entry = best.entry(movie.trim().to_string()).or_insert((f64::NEG_INFINITY, String::new()));
        if rel > entry.0 {
            *entry = (rel, format!("tag:{}", tag.trim()));
        }
    }
    Ok(best.into_iter().map(|(k, (_, t))| (k, t)).collect())
}

/// Reads `userId,movieId,rating,timestamp` rows into records
/// `(user, tag, movie, rating)` with `s_max = 5`. Ratings without movie
/// metadata and ratings outside `[0, 5]` are skipped and counted.
pub fn ingest_movielens(
    ratings: &Path,
    movies: &Path,
    limit: Option<usize>,
    tags: &TagSource,
) -> Result<IngestReport, DatagenError> {
    let tag_of = match tags {
        TagSource::FirstGenre => load_first_genres(File::open(movies)?, &movies.display().to_string())?,
        TagSource::GenomeTop(p) => load_genome_top(p)?,
    };
    ingest_ratings(File::open(ratings)?, &ratings.display().to_string(), &tag_of, limit)
}

pub fn ingest_movielens_from_readers<R1: Read, R2: Read>(
    ratings: R1,
    movies: R2,
    limit: Option<usize>,
) -> Result<IngestReport, DatagenError> {
    let tag_of = load_first_genres(movies, "movies")?;
    ingest_ratings(ratings, "ratings", &tag_of, limit)
}

fn ingest_ratings<R: Read>(
    ratings: R,
    name: &str,
    tag_of: &HashMap<String, String>,
    limit: Option<usize>,
) -> Result<IngestReport, DatagenError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(ratings);
    let mut report = IngestReport::default();
    for row in rdr.records() {
        if limit.is_some_and(|l| report.rows_read >= l) {
            break;
        }
        let row = row?;
        let line = line_of(&row);
        report.rows_read += 1;
        let (Some(user), Some(movie), Some(rating)) = (row.get(0), row.get(1), row.get(2)) else {
            return Err(malformed(name, line, "expected userId,movieId,rating,timestamp"));
        };
        let rating: f64 = rating
            .trim()
            .parse()
            .map_err(|_| malformed(name, line, format!("rating {rating:?} is not a number")))?;
        if !(0.0..=MOVIELENS_S_MAX).contains(&rating) {
            report.range_violations += 1;
            continue;
        }
        let movie = movie.trim();
        let Some(tag) = tag_of.get(movie) else {
            report.missing_metadata += 1;
            continue;
        };
        report.records.push(AccessServiceRecord::new(user.trim(), tag.as_str(), movie, rating, MOVIELENS_S_MAX));
    }
    Ok(report)
}

/// Writes the `# s_max` header, the column header and one row per record.
/// All records are expected to share `s_max`.
pub fn write_records_csv<W: Write>(records: &[AccessServiceRecord], s_max: f64, mut w: W) -> Result<(), DatagenError> {
    writeln!(w, "# s_max={s_max}")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["s", "o", "e", "score"])?;
    for r in records {
        out.write_record([r.s.as_str(), r.o.as_str(), r.e.as_str(), &r.score.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a record file. `s_max_override` wins over the file header.
pub fn read_records_csv<R: Read>(
    r: R,
    s_max_override: Option<f64>,
    name: &str,
) -> Result<Vec<AccessServiceRecord>, DatagenError> {
    let mut buf = BufReader::new(r);
    let mut header_s_max = None;
    let mut body = String::new();
    let mut first = String::new();
    buf.read_line(&mut first)?;
    let mut skipped_lines = 0u64;
    if let Some(rest) = first.trim().strip_prefix('#') {
        skipped_lines = 1;
        if let Some(v) = rest.trim().strip_prefix("s_max=") {
            header_s_max = Some(v.trim().parse::<f64>().map_err(|_| malformed(name, 1, "bad s_max header"))?);
        }
    } else {
        body.push_str(&first);
    }
    buf.read_to_string(&mut body)?;
    let s_max = s_max_override.or(header_s_max).ok_or(DatagenError::MissingSMax)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).from_reader(body.as_bytes());
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = line_of(&row) + skipped_lines;
        if row.len() != 4 {
            return Err(malformed(name, line, format!("expected 4 fields s,o,e,score, got {}", row.len())));
        }
        let score: f64 = row[3].trim().parse().map_err(|_| malformed(name, line, "score is not a number"))?;
        let rec = AccessServiceRecord::new(&row[0], &row[1], &row[2], score, s_max);
        rec.validate().map_err(|reason| malformed(name, line, reason))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_records(path: &Path, s_max_override: Option<f64>) -> Result<Vec<AccessServiceRecord>, DatagenError> {
    read_records_csv(File::open(path)?, s_max_override, &path.display().to_string())
}
