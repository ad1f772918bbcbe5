use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tbtm_core::cipher::{decrypt_field, encrypt_field, CipherToken, KeySet, KEYS_ENV};
use tbtm_core::control::{dynamic_thresholds, recommend, Candidate, EntityStatus};
use tbtm_core::datagen::{
    self, gen_onoff, gen_sensor_dataset, load_records, read_records_csv, write_records_csv, FixedPreset,
    OnOffPattern, TagSource, DEFAULT_PERIOD, DEFAULT_RECORD_COUNT, ONOFF_S_MAX, SENSOR_S_MAX,
};
use tbtm_core::experiment::{
    self, analyze_global, experiment_keys, g_config, gnuplot_trajectory, linear_fit, run_g_experiment,
    run_movielens, run_onoff_suite, run_sensor_experiment, write_bench_csv, write_g_summary, write_global_csv,
    write_onoff_summary, write_sensor_csvs, GlobalRow, DEFAULT_MOVIELENS_LIMIT, G_CONFIGS,
};
use tbtm_core::pipeline::{encrypt_stream, Pipeline, PipelineOptions};
use tbtm_core::registry::{CheckOutcome, Registry};
use tbtm_core::tokenchain::{EncryptedRecord, Ledger, SystemClock, DEFAULT_BLOCK_SIZE, DEFAULT_DIFFICULTY};
use tbtm_core::trust::{write_trajectory_csv, Role, REFERENCE_KAPPA};
use tbtm_core::Config;

#[derive(Parser)]
#[command(name = "tbtm", version, about = "Ledger-backed trust evaluation for service interactions")]
struct Cli {
    /// Flat key=value file with weights, thresholds and ratio.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output file for `gen`/`ingest`, output directory for everything else.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Three comma-separated 16-digit hex keys.
    #[arg(long, global = true, env = KEYS_ENV, hide_env_values = true)]
    keys: Option<String>,
    /// Accept key sets with repeated keys.
    #[arg(long, global = true)]
    allow_degenerate_keys: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic record file.
    Gen(GenArgs),
    /// Convert an external dataset into a record file.
    #[command(subcommand)]
    Ingest(IngestCommand),
    /// Build or validate a ledger.
    #[command(subcommand)]
    Chain(ChainCommand),
    /// Evaluate trust over a record file or ledger.
    Run(RunArgs),
    /// Run a named experiment.
    Experiment(ExperimentArgs),
    /// Predict satisfaction for one interaction or a batch.
    Predict(PredictArgs),
    /// Rank (provider, service) pairs for a requester.
    Recommend(RecommendArgs),
    /// Integrity checks and credential changes on a saved registry.
    #[command(subcommand)]
    Registry(RegistryCommand),
    /// Punishment thresholds.
    #[command(subcommand)]
    Control(ControlCommand),
    /// Latest trust of every entity.
    Analyze(AnalyzeArgs),
    /// Time trust evaluation against record count.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct Source {
    /// Plaintext record file `s,o,e,score`.
    #[arg(long, value_name = "FILE", conflicts_with = "ledger")]
    records: Option<PathBuf>,
    /// Overrides the file's `# s_max=` header.
    #[arg(long)]
    s_max: Option<f64>,
    /// Ledger file, validated before use.
    #[arg(long, value_name = "FILE")]
    ledger: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DIFFICULTY)]
    difficulty: u32,
}

#[derive(Copy, Clone, ValueEnum)]
enum Dataset {
    D1,
    #[value(name = "d2_1")]
    D2_1,
    #[value(name = "d2_2")]
    D2_2,
    Onoff,
    Sensor,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    dataset: Dataset,
    /// On-off pattern 1-4.
    #[arg(long, default_value_t = 1)]
    pattern: u8,
    #[arg(long, default_value_t = DEFAULT_PERIOD)]
    period: usize,
    #[arg(long, default_value_t = DEFAULT_RECORD_COUNT)]
    n: usize,
}

#[derive(Subcommand)]
enum IngestCommand {
    Movielens(MovieLensArgs),
}

#[derive(Args)]
struct MovieLensArgs {
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long)]
    movies: PathBuf,
    #[arg(long)]
    limit: Option<usize>,
    /// Tag-genome scores file; the top tag replaces the first genre.
    #[arg(long)]
    genome: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ChainCommand {
    Build {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        s_max: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
        block_size: usize,
        #[arg(long, default_value_t = DEFAULT_DIFFICULTY)]
        difficulty: u32,
        /// Ledger to write; defaults to `--out`.
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    Validate {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DIFFICULTY)]
        difficulty: u32,
    },
}

/// Control-layer switches; a repair replay must repeat those of the run.
#[derive(Args, Clone, Copy)]
struct Controls {
    #[arg(long)]
    no_replay_filter: bool,
    #[arg(long)]
    no_punish: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    controls: Controls,
}

#[derive(Args)]
struct ExperimentArgs {
    /// G1..G8, all, onoff, sensor or movielens.
    id: String,
    #[arg(long, default_value_t = DEFAULT_RECORD_COUNT)]
    n: usize,
    /// Also write gnuplot scripts next to the CSVs.
    #[arg(long)]
    gnuplot: bool,
    #[arg(long)]
    ratings: Option<PathBuf>,
    #[arg(long)]
    movies: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MOVIELENS_LIMIT)]
    limit: usize,
    #[arg(long, default_value_t = REFERENCE_KAPPA)]
    kappa: f64,
}

#[derive(Args)]
struct PredictArgs {
    /// History to evaluate before predicting.
    #[command(flatten)]
    source: Source,
    #[arg(long, requires_all = ["o", "e"])]
    s: Option<String>,
    #[arg(long)]
    o: Option<String>,
    #[arg(long)]
    e: Option<String>,
    /// Record file predicted one record at a time before each is applied.
    #[arg(long, value_name = "FILE", conflicts_with = "s")]
    batch: Option<PathBuf>,
    #[arg(long, default_value_t = REFERENCE_KAPPA)]
    kappa: f64,
}

#[derive(Args)]
struct RecommendArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    s: String,
    #[arg(short = 'k', default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = REFERENCE_KAPPA)]
    kappa: f64,
}

#[derive(Args)]
struct EntityRef {
    /// Registry directory of one role, as written by `run`.
    #[arg(long)]
    registry: PathBuf,
    /// Entity public key as hex.
    #[arg(long, conflicts_with = "id", required_unless_present = "id")]
    pk: Option<String>,
    /// Plaintext identity, encrypted with the active keys.
    #[arg(long)]
    id: Option<String>,
}

#[derive(Subcommand)]
enum RegistryCommand {
    /// Verify a stored history; with a source, repair it on mismatch.
    Check {
        #[command(flatten)]
        entity: EntityRef,
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        controls: Controls,
        /// Role of the registry, needed for repair.
        #[arg(long, value_parser = parse_role, default_value = "SP")]
        role: Role,
    },
    Passwd {
        #[command(flatten)]
        entity: EntityRef,
        #[arg(long)]
        old: String,
        #[arg(long)]
        new: String,
    },
}

#[derive(Subcommand)]
enum ControlCommand {
    Thresholds {
        /// Derive mu and nu from the latest trust of every entity.
        #[arg(long)]
        dynamic: bool,
        #[command(flatten)]
        source: Source,
        /// Root written by `run` (holding SR/, SP/, Service/).
        #[arg(long, conflicts_with_all = ["records", "ledger"])]
        registry: Option<PathBuf>,
    },
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    source: Source,
    /// Root written by `run` (holding SR/, SP/, Service/).
    #[arg(long, conflicts_with_all = ["records", "ledger"])]
    registry: Option<PathBuf>,
    /// Evaluate only the first N records; later entities stay at t0.
    #[arg(long)]
    eval_limit: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [10_000usize, 20_000, 40_000, 80_000])]
    counts: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
}

/// Invalid flag combination not caught by the parser; exits with 2.
#[derive(Debug)]
struct UsageError(&'static str);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.0)
    }
}

impl std::error::Error for UsageError {}

/// Runtime state shared by the subcommands.
struct Ctx {
    config: Config,
    seed: u64,
    out: Option<PathBuf>,
    keys: KeySet,
}

fn parse_role(s: &str) -> Result<Role, String> {
    Role::ALL
        .into_iter()
        .find(|r| r.label().eq_ignore_ascii_case(s) || r.letter() == s)
        .ok_or_else(|| format!("unknown role `{s}` (SR, SP or Service)"))
}

fn parse_keys(list: &str, allow_degenerate: bool) -> Result<KeySet> {
    Ok(if allow_degenerate { KeySet::from_hex_list_allow_degenerate(list)? } else { KeySet::from_hex_list(list)? })
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self> {
        let config = match &cli.config {
            Some(p) => Config::load(p).with_context(|| format!("config {}", p.display()))?,
            None => Config::default(),
        };
        let keys = match &cli.keys {
            Some(list) => parse_keys(list, cli.allow_degenerate_keys)?,
            None => experiment_keys(),
        };
        Ok(Self { config, seed: cli.seed, out: cli.out.clone(), keys })
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    /// `--out` as a file, or stdout.
    fn out_writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }

    fn options(&self) -> PipelineOptions {
        PipelineOptions::new(self.config.params).with_ratio(self.config.ratio)
    }

    fn controlled(&self, c: Controls) -> PipelineOptions {
        let mut opts = self.options();
        if !c.no_punish {
            opts = opts.with_thresholds(self.config.thresholds);
        }
        if !c.no_replay_filter {
            opts = opts.with_replay_window(self.config.thresholds.tau);
        }
        opts
    }

    fn token(&self, id: &str) -> Result<CipherToken> {
        Ok(encrypt_field(id.as_bytes(), &self.keys)?)
    }

    fn name_of(&self, token: &CipherToken) -> String {
        decrypt_field(token, &self.keys)
            .ok()
            .and_then(|b| String::from_utf8(b).ok())
            .unwrap_or_else(|| token.to_hex())
    }

    fn load_source(&self, src: &Source) -> Result<Vec<EncryptedRecord>> {
        match (&src.records, &src.ledger) {
            (Some(path), _) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                if text.trim().is_empty() {
                    return Ok(Vec::new());
                }
                let records = read_records_csv(text.as_bytes(), src.s_max, &path.display().to_string())?;
                Ok(encrypt_stream(&records, &self.keys)?)
            }
            (None, Some(path)) => {
                let ledger = Ledger::load(path, src.difficulty).with_context(|| format!("loading {}", path.display()))?;
                let records = ledger.read_records()?.cloned().collect();
                Ok(records)
            }
            (None, None) => Err(UsageError("one of --records or --ledger is required").into()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = Ctx::new(&cli).and_then(|ctx| {
        if cli.keys.is_none() && needs_keys(&cli.command) {
            eprintln!("warning: {KEYS_ENV} and --keys are unset; using the built-in experiment keys");
        }
        dispatch(&ctx, cli.command)
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn needs_keys(cmd: &Command) -> bool {
    match cmd {
        Command::Chain(ChainCommand::Build { .. }) => true,
        Command::Run(a) => a.source.records.is_some(),
        Command::Predict(_) | Command::Recommend(_) => true,
        Command::Registry(RegistryCommand::Check { entity, .. } | RegistryCommand::Passwd { entity, .. }) => {
            entity.id.is_some()
        }
        Command::Analyze(a) => a.source.records.is_some(),
        _ => false,
    }
}

fn dispatch(ctx: &Ctx, cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Gen(a) => gen(ctx, a),
        Command::Ingest(IngestCommand::Movielens(a)) => ingest(ctx, a),
        Command::Chain(ChainCommand::Build { records, s_max, block_size, difficulty, ledger }) => {
            let path = ledger.or_else(|| ctx.out.clone()).ok_or(UsageError("--ledger or --out is required"))?;
            let recs = load_records(&records, s_max)?;
            let mut l = Ledger::new(difficulty)?;
            let blocks = l.append_records(&recs, &ctx.keys, block_size, &SystemClock)?;
            l.save(&path)?;
            println!("{} records in {blocks} blocks -> {}", recs.len(), path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Chain(ChainCommand::Validate { ledger, difficulty }) => {
            let report = Ledger::load(&ledger, difficulty)?.validate();
            println!("{}", report.summary());
            Ok(if report.valid() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Run(a) => run(ctx, a),
        Command::Experiment(a) => run_experiment(ctx, a),
        Command::Predict(a) => predict(ctx, a),
        Command::Recommend(a) => recommend_cmd(ctx, a),
        Command::Registry(c) => registry_cmd(ctx, c),
        Command::Control(ControlCommand::Thresholds { dynamic, source, registry }) => {
            thresholds(ctx, dynamic, &source, registry.as_deref())
        }
        Command::Analyze(a) => analyze(ctx, a),
        Command::Bench(a) => bench(ctx, a),
    }
}

fn gen(ctx: &Ctx, a: GenArgs) -> Result<ExitCode> {
    let (records, s_max) = match a.dataset {
        Dataset::D1 => (FixedPreset::Dataset1.generate(a.n)?, FixedPreset::Dataset1.s_max()),
        Dataset::D2_1 => (FixedPreset::Dataset2_1.generate(a.n)?, FixedPreset::Dataset2_1.s_max()),
        Dataset::D2_2 => (FixedPreset::Dataset2_2.generate(a.n)?, FixedPreset::Dataset2_2.s_max()),
        Dataset::Onoff => {
            let pattern = OnOffPattern::from_id(a.pattern)?;
            (gen_onoff(pattern, a.period, a.n, ctx.seed)?.records, ONOFF_S_MAX)
        }
        Dataset::Sensor => (gen_sensor_dataset(), SENSOR_S_MAX),
    };
    let mut w = ctx.out_writer()?;
    write_records_csv(&records, s_max, &mut w)?;
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn ingest(ctx: &Ctx, a: MovieLensArgs) -> Result<ExitCode> {
    let tags = a.genome.map_or(TagSource::FirstGenre, TagSource::GenomeTop);
    let report = datagen::ingest_movielens(&a.ratings, &a.movies, a.limit, &tags)?;
    let mut w = ctx.out_writer()?;
    write_records_csv(&report.records, datagen::MOVIELENS_S_MAX, &mut w)?;
    w.flush()?;
    eprintln!(
        "{} rows read, {} records, {} without metadata, {} out of range",
        report.rows_read,
        report.records.len(),
        report.missing_metadata,
        report.range_violations
    );
    Ok(ExitCode::SUCCESS)
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn run(ctx: &Ctx, a: RunArgs) -> Result<ExitCode> {
    let records = ctx.load_source(&a.source)?;
    let mut p = Pipeline::new(ctx.controlled(a.controls).with_trace());
    let stats = p.run(&records)?;
    let dir = ctx.out_dir()?;
    for role in Role::ALL {
        let points = p.trajectory(role);
        write_file(&dir.join(format!("trajectory_{}.csv", role.label())), |w| Ok(write_trajectory_csv(&points, w)?))?;
        p.registry(role).save(&dir.join("registry").join(role.label()))?;
    }
    let rows = analyze_global(&p);
    write_file(&dir.join("global.csv"), |w| Ok(write_global_csv(&rows, w)?))?;
    write_file(&dir.join("status.csv"), |w| {
        writeln!(w, "role,entity,trust,status,updates")?;
        for role in Role::ALL {
            for (pk, e) in p.entities(role) {
                writeln!(w, "{},{},{},{:?},{}", role.label(), ctx.name_of(pk), e.trust.last(), e.status, e.updates)?;
            }
        }
        Ok(())
    })?;
    println!(
        "processed {} applied {} replays {} blocked {} registered-only {} infeasible {} entities {}",
        stats.processed,
        stats.applied,
        stats.replays,
        stats.blocked,
        stats.registered_only,
        stats.infeasible_states,
        p.entity_count()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_experiment(ctx: &Ctx, a: ExperimentArgs) -> Result<ExitCode> {
    let dir = ctx.out_dir()?;
    match a.id.to_ascii_lowercase().as_str() {
        "onoff" => {
            let runs = run_onoff_suite(a.n, ctx.seed)?;
            for run in &runs {
                let name = format!("onoff_{}.csv", run.pattern.id());
                write_file(&dir.join(&name), |w| Ok(run.write_csv(w)?))?;
            }
            write_file(&dir.join("onoff_summary.csv"), |w| Ok(write_onoff_summary(&runs, w)?))?;
            for run in &runs {
                println!(
                    "pattern {} SP band width {:.6} amplitude {:.6}",
                    run.pattern.id(),
                    run.band_width(Role::Provider),
                    run.amplitude(Role::Provider)
                );
            }
        }
        "sensor" => {
            let run = run_sensor_experiment()?;
            write_sensor_csvs(&run, &dir)?;
            let (agree, compared) = run.top_k_agreement(3);
            let top = run.classes.first().map_or("-", |c| c.name.as_str());
            println!("{} entities, top class {top}, top-3 agreement {agree}/{compared}", run.registered());
        }
        "movielens" => {
            let base = experiment::movielens_dir();
            let ratings = a.ratings.unwrap_or_else(|| base.join("ratings.csv"));
            let movies = a.movies.unwrap_or_else(|| base.join("movies.csv"));
            let pred_path = dir.join("movielens_prediction.csv");
            let run = run_movielens(&ratings, &movies, Some(a.limit), &TagSource::FirstGenre, a.kappa, Some(&pred_path))?;
            write_file(&dir.join("movielens_global.csv"), |w| Ok(write_global_csv(&run.global, w)?))?;
            println!(
                "{} records, {} defined predictions, {} undefined, {:.2}% within [-2, 2]",
                run.ingest.records.len(),
                run.errors.defined,
                run.errors.undefined,
                100.0 * run.errors.fraction_within()
            );
        }
        id => {
            let configs: Vec<_> = if id == "all" {
                G_CONFIGS.to_vec()
            } else {
                vec![g_config(id).ok_or_else(|| anyhow!("unknown experiment `{}`", a.id))?]
            };
            let mut runs = Vec::new();
            for cfg in &configs {
                let run = run_g_experiment(cfg, a.n)?;
                for path in run.write_csvs(&dir)? {
                    if a.gnuplot {
                        let file = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
                        if file.ends_with("_prediction.csv") {
                            continue;
                        }
                        fs::write(path.with_extension("gp"), gnuplot_trajectory(&file, &file))?;
                    }
                }
                println!("{} kappa_hat {:.8} residual {:.3e}", cfg.id, run.kappa_hat, run.convergence_residual());
                runs.push(run);
            }
            let name = if configs.len() == 1 { format!("{}_summary.csv", configs[0].id) } else { "g_summary.csv".into() };
            write_file(&dir.join(name), |w| Ok(write_g_summary(&runs, w)?))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn evaluated(ctx: &Ctx, src: &Source) -> Result<Pipeline> {
    let records = match (&src.records, &src.ledger) {
        (None, None) => Vec::new(),
        _ => ctx.load_source(src)?,
    };
    let mut p = Pipeline::new(ctx.options());
    p.run(&records)?;
    Ok(p)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn predict(ctx: &Ctx, a: PredictArgs) -> Result<ExitCode> {
    let mut out: Box<dyn Write> = match &ctx.out {
        Some(_) => Box::new(BufWriter::new(File::create(ctx.out_dir()?.join("prediction.csv"))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    if let Some(batch) = &a.batch {
        let mut p = evaluated(ctx, &a.source)?;
        let plain = load_records(batch, a.source.s_max)?;
        let enc = encrypt_stream(&plain, &ctx.keys)?;
        writeln!(out, "s,o,e,score,P,omega")?;
        for (r, er) in plain.iter().zip(&enc) {
            let pred = p.predict_for(&er.cs, &er.co, &er.ce, a.kappa, r.s_max);
            p.process(er)?;
            writeln!(out, "{},{},{},{},{},{}", r.s, r.o, r.e, r.score, cell(pred.value), cell(pred.error(r.score)))?;
        }
    } else {
        let (Some(s), Some(o), Some(e)) = (&a.s, &a.o, &a.e) else {
            return Err(UsageError("either --batch or all of --s, --o and --e are required").into());
        };
        let p = evaluated(ctx, &a.source)?;
        let s_max = a.source.s_max.unwrap_or(10.0);
        let pred = p.predict_for(&ctx.token(s)?, &ctx.token(o)?, &ctx.token(e)?, a.kappa, s_max);
        writeln!(out, "s,o,e,P")?;
        writeln!(out, "{s},{o},{e},{}", cell(pred.value))?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn recommend_cmd(ctx: &Ctx, a: RecommendArgs) -> Result<ExitCode> {
    let records = ctx.load_source(&a.source)?;
    let mut p = Pipeline::new(ctx.options().with_thresholds(ctx.config.thresholds));
    p.run(&records)?;
    let s = ctx.token(&a.s)?;
    let pairs: BTreeMap<(CipherToken, CipherToken), f64> =
        records.iter().map(|r| ((r.co.clone(), r.ce.clone()), r.s_max)).collect();
    let status = |role, pk: &CipherToken| p.entity(role, pk).map_or(EntityStatus::Normal, |e| e.status);
    let candidates = pairs
        .into_iter()
        .map(|((o, e), s_max)| Candidate {
            prediction: p.predict_for(&s, &o, &e, a.kappa, s_max),
            provider_trust: p.entity(Role::Provider, &o).map_or(ctx.config.params.t0, |x| x.trust.last()),
            provider_status: status(Role::Provider, &o),
            service_status: status(Role::Service, &e),
            o,
            e,
        })
        .collect();
    let mut out = BufWriter::new(io::stdout().lock());
    writeln!(out, "rank,o,e,P,provider_trust")?;
    for (i, c) in recommend(candidates, a.k).iter().enumerate() {
        let (o, e) = (ctx.name_of(&c.o), ctx.name_of(&c.e));
        writeln!(out, "{},{o},{e},{},{}", i + 1, cell(c.prediction.value), c.provider_trust)?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn resolve_pk(ctx: &Ctx, entity: &EntityRef) -> Result<CipherToken> {
    match (&entity.pk, &entity.id) {
        (Some(h), _) => Ok(h.parse::<CipherToken>().context("--pk")?),
        (None, Some(id)) => ctx.token(id),
        (None, None) => Err(UsageError("--pk or --id is required").into()),
    }
}

fn registry_cmd(ctx: &Ctx, cmd: RegistryCommand) -> Result<ExitCode> {
    match cmd {
        RegistryCommand::Check { entity, source, controls, role } => {
            let pk = resolve_pk(ctx, &entity)?;
            let mut reg = Registry::load(&entity.registry)?;
            let has_source = source.records.is_some() || source.ledger.is_some();
            let records = if has_source { ctx.load_source(&source)? } else { Vec::new() };
            let replay = Pipeline::new(ctx.controlled(controls));
            let outcome = reg.hash_check(&pk, |pk| has_source.then(|| replay.replay_history(&records, role, pk)).flatten())?;
            println!("{}: {outcome:?}", pk.to_hex());
            if outcome == CheckOutcome::Repaired {
                reg.save(&entity.registry)?;
            }
            Ok(if outcome == CheckOutcome::Unrepaired { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        RegistryCommand::Passwd { entity, old, new } => {
            let pk = resolve_pk(ctx, &entity)?;
            let mut reg = Registry::load(&entity.registry)?;
            reg.change_password(&pk, old.as_bytes(), new.as_bytes())?;
            reg.save(&entity.registry)?;
            println!("secret updated for {}", pk.to_hex());
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Latest trust per entity from the three role registries under `root`.
fn registry_rows(root: &Path) -> Result<Vec<GlobalRow>> {
    let mut rows = Vec::new();
    for role in Role::ALL {
        let dir = root.join(role.label());
        let reg = Registry::load(&dir).with_context(|| format!("loading {}", dir.display()))?;
        let pks: BTreeSet<CipherToken> = reg.entities().map(|r| r.pk.clone()).collect();
        for pk in pks {
            let history = reg.get_history(&pk)?;
            let trust = *history.last().ok_or_else(|| anyhow!("empty history for {}", pk.to_hex()))?;
            rows.push(GlobalRow { role, pk, trust, updates: history.len() as u64 - 1 });
        }
    }
    Ok(rows)
}

fn thresholds(ctx: &Ctx, dynamic: bool, src: &Source, registry: Option<&Path>) -> Result<ExitCode> {
    let th = ctx.config.thresholds;
    if !dynamic {
        println!("mu={} nu={} epsilon={} tau={}", th.mu, th.nu, th.epsilon, th.tau);
        return Ok(ExitCode::SUCCESS);
    }
    let rows = match registry {
        Some(root) => registry_rows(root)?,
        None => analyze_global(&evaluated(ctx, src)?),
    };
    let trusts: Vec<f64> = rows.iter().map(|r| r.trust).collect();
    let d = dynamic_thresholds(&trusts)?;
    println!("mu={} nu={} epsilon={} tau={}", d.mu, d.nu, th.epsilon, th.tau);
    if d.degenerate {
        eprintln!("warning: population has no spread; using fractions of the mean");
    }
    Ok(ExitCode::SUCCESS)
}

fn analyze(ctx: &Ctx, a: AnalyzeArgs) -> Result<ExitCode> {
    let rows = match &a.registry {
        Some(root) => registry_rows(root)?,
        None => {
            let records = ctx.load_source(&a.source)?;
            let mut opts = ctx.options();
            if let Some(limit) = a.eval_limit {
                opts = opts.with_eval_limit(limit);
            }
            let mut p = Pipeline::new(opts);
            p.run(&records)?;
            analyze_global(&p)
        }
    };
    match &ctx.out {
        Some(_) => write_file(&ctx.out_dir()?.join("global.csv"), |w| Ok(write_global_csv(&rows, w)?))?,
        None => write_global_csv(&rows, io::stdout().lock())?,
    }
    for role in Role::ALL {
        let vals: Vec<f64> = rows.iter().filter(|r| r.role == role).map(|r| r.trust).collect();
        let at_t0 = rows.iter().filter(|r| r.role == role && r.updates == 0).count();
        let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        eprintln!("{}: {} entities, {at_t0} never evaluated, range [{lo}, {hi}]", role.label(), vals.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn bench(ctx: &Ctx, a: BenchArgs) -> Result<ExitCode> {
    let points = experiment::bench(&a.counts, a.repeats)?;
    match &ctx.out {
        Some(_) => write_file(&ctx.out_dir()?.join("bench.csv"), |w| Ok(write_bench_csv(&points, w)?))?,
        None => write_bench_csv(&points, io::stdout().lock())?,
    }
    match linear_fit(&points) {
        Some(fit) => eprintln!("slope {:.3e} s/record, intercept {:.3e} s, R^2 {:.4}", fit.slope, fit.intercept, fit.r2),
        None => eprintln!("fewer than two non-zero counts; no fit"),
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn degenerate_keys_need_the_flag() {
        let list = "0123456789abcdef,0123456789abcdef,456789abcdef0123";
        assert!(parse_keys(list, false).is_err());
        assert!(parse_keys(list, true).unwrap().is_degenerate());
        assert!(parse_keys("0123", true).is_err());
    }

    #[test]
    fn roles_parse_by_label_or_letter() {
        assert_eq!(parse_role("sp").unwrap(), Role::Provider);
        assert_eq!(parse_role("e").unwrap(), Role::Service);
        assert!(parse_role("x").is_err());
    }
}
