use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ldtcast::data::{load_store, save_store, EntityKey, EntityRecord};
use ldtcast::embedding::{cluster_entities, ClusterMethod, ClusterOptions, ClusterSpec, Clustering};
use ldtcast::ldt::{generate_synthetic, AugmentOptions, GroupParams, MatchOptions, SyntheticScenario};
use ldtcast::losses::{LossKind, LossSpec};
use ldtcast::metrics::cluster_stability;
use ldtcast::model::{EmbedMode, EmbedSource, LstmModel};
use ldtcast::nn::AdamConfig;
use ldtcast::pipeline::{
    self, embed_entities, emit_report, evaluate_entities, forecast_entity, forecast_rows, ingest_sources, load_models,
    read_json, run_pipeline, save_models, save_synthetic, static_dim, train_entities, write_csv, write_json,
    EmbeddingSet, ReportOptions, RunConfig, Stages,
};
use ldtcast::training::{Budget, GridSpace, TrainRun, WindowSpec};
use ldtcast::{Error, Result};

#[derive(Parser)]
#[command(name = "ldtcast", version, about = "LSTM embeddings, clustering and donor-augmented forecasts for case series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Join census, USDA and daily case reports into an entity directory.
    Ingest(IngestArgs),
    /// Generate a synthetic entity directory with known groups and lags.
    Synth(SynthArgs),
    /// Train one model per entity.
    Train(TrainArgs),
    /// Extract hidden-state embeddings at one point in time.
    Embed(EmbedArgs),
    /// Cluster an embedding file.
    Cluster(ClusterArgs),
    /// Compare two clusterings of the same entities.
    Stability(StabilityArgs),
    /// Relative error per forecast horizon on the withheld test days.
    Evaluate(EvaluateArgs),
    /// Forecast one entity, optionally augmented with aligned donors.
    Forecast(ForecastArgs),
    /// Run the configured pipeline.
    Run(RunArgs),
    /// Build report tables from a run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    census: PathBuf,
    #[arg(long)]
    usda: PathBuf,
    #[arg(long)]
    cases_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Two-digit state FIPS code.
    #[arg(long)]
    state: Option<String>,
    /// Census YEAR code to keep.
    #[arg(long)]
    year: Option<u32>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    groups: usize,
    #[arg(long, default_value_t = 8)]
    per_group: usize,
    #[arg(long, default_value_t = 20)]
    max_lag: usize,
    #[arg(long, default_value_t = 100)]
    days: usize,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Explicit `rate:capacity` pairs, overriding --groups.
    #[arg(long, value_delimiter = ',')]
    group_params: Vec<String>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value = "mse_abs")]
    loss: String,
    #[arg(long, default_value_t = 14)]
    window: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    offsets: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 3)]
    mini_batches: usize,
    #[arg(long, default_value_t = 30)]
    test_days: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn window(&self) -> WindowSpec {
        WindowSpec {
            window_len: self.window,
            offsets: self.offsets.clone(),
        }
    }

    fn loss(&self) -> Result<LossSpec> {
        Ok(LossSpec::new(self.loss.parse::<LossKind>()?))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    entities: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated FIPS codes; all entities when omitted.
    #[arg(long, value_delimiter = ',')]
    fips: Vec<String>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 200)]
    budget_epochs: usize,
    #[arg(long)]
    budget_seconds: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    validation_fraction: f64,
    /// Successive-halving search over hidden sizes and depths.
    #[arg(long)]
    grid: bool,
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
    grid_hidden: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    grid_layers: Vec<usize>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    entities: PathBuf,
    #[arg(long)]
    models: PathBuf,
    #[arg(long, default_value_t = 60)]
    pit: usize,
    #[arg(long, default_value = "last")]
    mode: String,
    #[arg(long, default_value = "h")]
    source: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    /// An embedding file, or a run directory together with --pit.
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    pit: Option<usize>,
    #[arg(long, default_value = "last")]
    mode: String,
    #[arg(long, default_value = "kmeans")]
    method: String,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    with_static: bool,
    #[arg(long, default_value_t = 1.0)]
    w_static: f64,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StabilityArgs {
    #[arg(long)]
    first: PathBuf,
    #[arg(long)]
    second: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    entities: PathBuf,
    #[arg(long)]
    models: PathBuf,
    #[arg(long, value_delimiter = ',')]
    fips: Vec<String>,
    #[arg(long, default_value_t = 30)]
    test_days: usize,
    #[arg(long, default_value_t = 30)]
    horizons: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ForecastArgs {
    #[arg(long)]
    target: String,
    #[arg(long)]
    entities: PathBuf,
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    horizon: usize,
    /// Days of the target treated as observed; the whole series by default.
    #[arg(long)]
    observed_days: Option<usize>,
    #[arg(long)]
    augment: bool,
    #[arg(long, default_value_t = 20)]
    augment_epochs: usize,
    #[arg(long, default_value_t = 14)]
    min_extra_days: usize,
    #[arg(long, default_value = "mse_abs")]
    loss: String,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pits: Vec<usize>,
    /// Comma-separated stages to run, replacing the configured toggles.
    #[arg(long, value_delimiter = ',')]
    stages: Vec<String>,
    #[arg(long)]
    grid: bool,
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    svg: bool,
}

fn select(records: Vec<EntityRecord>, fips: &[String]) -> Result<Vec<EntityRecord>> {
    if fips.is_empty() || fips.iter().any(|f| f.eq_ignore_ascii_case("all")) {
        return Ok(records);
    }
    let wanted = fips.iter().map(|f| f.parse::<EntityKey>()).collect::<Result<Vec<_>>>()?;
    if let Some(missing) = wanted.iter().find(|k| !records.iter().any(|r| &r.key == *k)) {
        return Err(Error::Data(format!("entity {missing} not found")));
    }
    Ok(records.into_iter().filter(|r| wanted.contains(&r.key)).collect())
}

fn keys(records: &[EntityRecord]) -> Vec<EntityKey> {
    records.iter().map(|r| r.key.clone()).collect()
}

fn ingest(a: IngestArgs) -> Result<()> {
    let ing = ingest_sources(&a.census, &a.usda, &a.cases_dir, a.state.as_deref(), a.year)?;
    for w in &ing.warnings {
        log::warn!("{w}");
    }
    save_store(&a.out, &ing.assembled.records, &ing.assembled.manifest)?;
    println!(
        "{} entities, {} static features -> {}",
        ing.assembled.records.len(),
        ing.assembled.manifest.names.len(),
        a.out.display()
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut sc = SyntheticScenario {
        max_lag: a.max_lag,
        days: a.days,
        noise: a.noise,
        ..SyntheticScenario::with_groups(a.groups, a.per_group, a.seed)
    };
    if !a.group_params.is_empty() {
        sc.groups = a
            .group_params
            .iter()
            .map(|g| {
                let bad = || Error::Config(format!("group {g:?} is not rate:capacity"));
                let (r, k) = g.split_once(':').ok_or_else(bad)?;
                Ok(GroupParams {
                    r: r.trim().parse().map_err(|_| bad())?,
                    k: k.trim().parse().map_err(|_| bad())?,
                })
            })
            .collect::<Result<_>>()?;
    }
    let set = generate_synthetic(&sc)?;
    save_synthetic(&a.out, &set)?;
    println!("{} synthetic entities -> {}", set.records.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let records = select(load_store(&a.entities)?.records, &a.fips)?;
    let m = &a.model;
    let config = pipeline::RunConfig {
        hidden_size: m.hidden,
        num_layers: m.layers,
        window: m.window(),
        seed: m.seed,
        ..Default::default()
    }
    .model_config(static_dim(&records)?);
    let mut run = TrainRun::new(config, m.loss()?, m.window());
    run.test_days = m.test_days;
    run.mini_batches = m.mini_batches;
    run.budget = Budget {
        epochs: a.budget_epochs,
        max_seconds: a.budget_seconds,
    };
    run.adam = AdamConfig {
        learning_rate: m.lr,
        ..AdamConfig::default()
    };
    run.validation_fraction = a.validation_fraction;
    run.validate()?;
    let space = GridSpace {
        hidden: a.grid_hidden,
        layers: a.grid_layers,
    };
    let trained = train_entities(&records, &run, a.grid.then_some(&space))?;
    save_models(&a.out, &trained)?;
    for t in &trained.entities {
        let h = &t.outcome;
        println!(
            "{} epochs {} loss {:.6e} halt {:?}",
            t.key,
            h.history.len(),
            h.history.last().map_or(f64::NAN, |e| e.loss),
            h.halt
        );
    }
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let records = load_store(&a.entities)?.records;
    let models = load_models(&a.models, &keys(&records), &mut Vec::new())?;
    let mode: EmbedMode = a.mode.parse()?;
    let source: EmbedSource = a.source.parse()?;
    let (set, skipped) = embed_entities(&records, &models, a.pit, mode, source)?;
    for s in skipped {
        log::warn!("{s}");
    }
    write_json(&a.out, &set)?;
    println!("{} embeddings at PIT {} -> {}", set.embeddings.len(), a.pit, a.out.display());
    Ok(())
}

fn cluster(a: ClusterArgs) -> Result<()> {
    let path = if a.embeddings.is_dir() {
        let pit = a
            .pit
            .ok_or_else(|| Error::Usage("--pit is required when --embeddings is a directory".into()))?;
        pipeline::embeddings_path(&a.embeddings, pit, a.mode.parse()?)
    } else {
        a.embeddings.clone()
    };
    let set: EmbeddingSet = read_json(&path)?;
    let spec = ClusterSpec {
        method: a.method.parse::<ClusterMethod>()?,
        k: a.k,
        with_static: a.with_static,
        w_static: a.w_static,
        options: ClusterOptions {
            restarts: a.restarts,
            seed: a.seed,
            ..ClusterOptions::default()
        },
    };
    let c = cluster_entities(&set.embeddings, &spec)?;
    c.save(&a.out)?;
    let mut sizes = vec![0usize; c.k];
    for &l in c.labels.values() {
        sizes[l] += 1;
    }
    println!("{} k={} sizes {sizes:?} inertia {:.6e} -> {}", c.method, c.k, c.inertia, a.out.display());
    Ok(())
}

fn stability(a: StabilityArgs) -> Result<()> {
    let first = Clustering::load(&a.first)?;
    let second = Clustering::load(&a.second)?;
    let report = cluster_stability(&first.labels, &second.labels, first.k.max(second.k))?;
    println!(
        "accuracy {:.4} ({} of {}) ari {:.4}",
        report.accuracy, report.matched, report.n, report.ari
    );
    if let Some(out) = a.out {
        write_json(&out, &report)?;
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let records = select(load_store(&a.entities)?.records, &a.fips)?;
    let models = load_models(&a.models, &keys(&records), &mut Vec::new())?;
    let (rows, warnings) = evaluate_entities(&records, &models, a.test_days, a.horizons)?;
    for w in warnings {
        log::warn!("{w}");
    }
    write_csv(&a.out, &rows)?;
    println!("{} rows -> {}", rows.len(), a.out.display());
    Ok(())
}

fn forecast(a: ForecastArgs) -> Result<()> {
    let records = load_store(&a.entities)?.records;
    let key: EntityKey = a.target.parse()?;
    let target = records
        .iter()
        .find(|r| r.key == key)
        .ok_or_else(|| Error::Data(format!("entity {key} not found")))?;
    let model = LstmModel::load(&pipeline::model_path(&a.models, &key))?;
    let clustering = match (&a.clusters, a.augment) {
        (Some(p), _) => Some(Clustering::load(p)?),
        (None, true) => return Err(Error::Usage("--augment needs --clusters".into())),
        (None, false) => None,
    };
    let observed = a.observed_days.unwrap_or(target.series.len());
    let opts = AugmentOptions {
        epochs: a.augment_epochs,
        loss: LossSpec::new(a.loss.parse()?),
        adam: AdamConfig {
            learning_rate: a.lr,
            ..AdamConfig::default()
        },
        ..AugmentOptions::default()
    };
    let mopts = MatchOptions {
        min_extra_days: a.min_extra_days,
        ..MatchOptions::default()
    };
    let f = match &clustering {
        Some(c) => forecast_entity(target, observed, c, &records, &model, a.horizon, a.augment, &mopts, &opts)?,
        None => ldtcast::ldt::forecast_augmented(target, observed, &[], &model, a.horizon, &opts)?,
    };
    write_csv(&a.out, &forecast_rows(&f))?;
    write_json(&provenance_path(&a.out), &f.provenance)?;
    println!(
        "{key}: {} days from day {observed}, {} donors -> {}",
        a.horizon,
        f.provenance.donors.len(),
        a.out.display()
    );
    Ok(())
}

fn provenance_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("forecast");
    out.with_file_name(format!("{stem}_provenance.json"))
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = a.out {
        cfg.output_dir = v;
    }
    if let Some(v) = a.data_dir {
        cfg.data_dir = Some(v);
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.loss {
        cfg.loss.kind = v.parse()?;
    }
    if let Some(v) = a.hidden {
        cfg.hidden_size = v;
    }
    if let Some(v) = a.layers {
        cfg.num_layers = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.k {
        cfg.k = v;
    }
    if !a.pits.is_empty() {
        cfg.pits = a.pits;
    }
    if !a.stages.is_empty() {
        let mut stages = Stages::only(&a.stages[0])?;
        for s in &a.stages[1..] {
            *stages.flag_mut(s)? = true;
        }
        cfg.stages = stages;
    }
    cfg.grid |= a.grid;
    cfg.svg |= a.svg;
    let manifest = run_pipeline(&cfg)?;
    for s in &manifest.stages {
        println!("{:<10} {:>8.2}s {} outputs", s.name, s.seconds, s.outputs.len());
    }
    println!("manifest -> {}", cfg.output_dir.join(pipeline::RUN_MANIFEST).display());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    for p in emit_report(&a.run_dir, &ReportOptions { svg: a.svg })? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Embed(a) => embed(a),
        Command::Cluster(a) => cluster(a),
        Command::Stability(a) => stability(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Forecast(a) => forecast(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
