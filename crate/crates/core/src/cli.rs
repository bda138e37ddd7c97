//! The `odcast` command line: batch jobs over files, no interactive state.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{
    ingest_files, sparsity_report, split, synth_generate, synthetic_zones, zinb_field_for_zero_rate, DemandTensor,
    Seasonality, ZoneSubset,
};
use crate::error::{Error, Result};
use crate::graph::{OdGraph, Zone, ZoneTable};
use crate::heads::HeadKind;
use crate::metrics::{per_node_uncertainty, write_per_node_csv, HistoricalAverage, MetricsReport};
use crate::model::{Forecaster, ModelConfig};

#[derive(Parser, Debug)]
#[command(name = "odcast", version, about = "Probabilistic O-D demand forecasting")]
pub struct Cli {
    /// Model configuration file (key = value lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed overriding the configuration and generator defaults.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Aggregate a trips CSV into a demand tensor.
    Ingest(IngestArgs),
    /// Generate synthetic ZINB demand over random zones.
    Synth(SynthArgs),
    /// Train a forecaster and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint (or a baseline) on the test split.
    Evaluate(EvaluateArgs),
    /// Forecast the windows after the end of a tensor.
    Predict(PredictArgs),
    /// Sparsity summary and demand histogram of a tensor.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub trips: PathBuf,
    #[arg(long)]
    pub zones: PathBuf,
    #[arg(long, default_value_t = 15)]
    pub resolution: u32,
    /// Randomly sample this many origin zones.
    #[arg(long, requires = "subset_destinations")]
    pub subset_origins: Option<usize>,
    /// Randomly sample this many destination zones.
    #[arg(long, requires = "subset_origins")]
    pub subset_destinations: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub origins: usize,
    #[arg(long, default_value_t = 4)]
    pub destinations: usize,
    #[arg(long, default_value_t = 960)]
    pub windows: usize,
    #[arg(long, default_value_t = 15)]
    pub resolution: u32,
    /// Expected fraction of zero entries.
    #[arg(long, default_value_t = 0.8)]
    pub zero_rate: f64,
    /// Per-node zero probabilities are spread over zero_rate ± spread.
    #[arg(long, default_value_t = 0.1)]
    pub spread: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mean_min: f64,
    #[arg(long, default_value_t = 4.0)]
    pub mean_max: f64,
    /// Amplitude of the daily cycle on the NB mean (0 disables it).
    #[arg(long, default_value_t = 0.5)]
    pub seasonality: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Zones CSV; defaults to `<data>.zones.csv`.
    #[arg(long)]
    pub zones: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch training log as JSON.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Ha,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub zones: Option<PathBuf>,
    /// Checkpoint to score; not needed with `--baseline`.
    #[arg(long, required_unless_present = "baseline")]
    pub model: Option<PathBuf>,
    /// Report JSON path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-node `node_id,mean_demand,mpiw` CSV.
    #[arg(long)]
    pub per_node: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub zones: Option<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    /// Forecast CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// π-map CSV `node_id,origin_zone,dest_zone,step,pi` (ZINB head only).
    #[arg(long)]
    pub emit_pi: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Demand histogram CSV `value,count`.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
}

/// Parses `args`, runs the command and returns the process exit code.
/// Errors go to standard error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("odcast: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => ingest(cli, a),
        Command::Synth(a) => synth(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Evaluate(a) => evaluate(a),
        Command::Predict(a) => predict(a),
        Command::Report(a) => report(a),
    }
}

/// Zones file written next to a tensor by `ingest` and `synth`.
pub fn default_zones_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".zones.csv");
    PathBuf::from(s)
}

fn load_graph(data: &Path, zones: Option<&PathBuf>) -> Result<(DemandTensor, OdGraph)> {
    let tensor = DemandTensor::read(data)?;
    let zones_path = zones.cloned().unwrap_or_else(|| default_zones_path(data));
    let table = ZoneTable::from_csv(&zones_path)?;
    let graph = tensor.graph(&table)?;
    Ok((tensor, graph))
}

fn graph_zones(graph: &OdGraph) -> Result<ZoneTable> {
    let mut seen = BTreeMap::new();
    for z in graph.origins().iter().chain(graph.destinations()) {
        seen.entry(z.id.clone()).or_insert_with(|| z.clone());
    }
    ZoneTable::new(seen.into_values().collect::<Vec<Zone>>())
}

fn load_config(cli: &Cli) -> Result<ModelConfig> {
    let mut config = match &cli.config {
        Some(path) => ModelConfig::from_file(path)?,
        None => ModelConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, w: impl FnOnce() -> std::io::Result<()>) -> Result<()> {
    w().map_err(|e| Error::io(path, e))
}

fn ingest(cli: &Cli, a: &IngestArgs) -> Result<()> {
    let subset = match (a.subset_origins, a.subset_destinations) {
        (Some(o), Some(d)) => Some(ZoneSubset {
            origins: o,
            destinations: d,
            seed: cli.seed.unwrap_or(0),
        }),
        _ => None,
    };
    let out = ingest_files(&a.trips, &a.zones, a.resolution, subset)?;
    out.tensor.write(&a.out)?;
    graph_zones(&out.graph)?.write_csv(default_zones_path(&a.out))?;
    println!(
        "ingested {} trips ({} outside the selected pairs) into {} pairs x {} windows; zero rate {:.4}",
        out.accepted,
        out.skipped,
        out.tensor.num_nodes(),
        out.tensor.num_windows(),
        out.tensor.zero_rate()
    );
    Ok(())
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let count = a.origins.max(a.destinations);
    let zones = synthetic_zones(count, seed);
    let graph = OdGraph::from_zone_table(&zones, a.origins, a.destinations)?;
    let field = zinb_field_for_zero_rate(
        graph.num_nodes(),
        a.zero_rate,
        a.spread,
        (a.mean_min, a.mean_max),
        seed.wrapping_add(1),
    )?;
    let seasonality = (a.seasonality > 0.0).then(|| Seasonality {
        amplitude: a.seasonality,
        slots_per_day: (1440 / a.resolution.max(1)) as usize,
    });
    let tensor = synth_generate(
        &graph,
        a.windows,
        &field,
        seasonality,
        a.resolution,
        seed.wrapping_add(2),
    )?;
    tensor.write(&a.out)?;
    graph_zones(&graph)?.write_csv(default_zones_path(&a.out))?;
    println!(
        "synthesised {} pairs x {} windows; zero rate {:.4}",
        tensor.num_nodes(),
        tensor.num_windows(),
        tensor.zero_rate()
    );
    Ok(())
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let config = load_config(cli)?;
    let (tensor, graph) = load_graph(&a.data, a.zones.as_ref())?;
    let (model, log) = Forecaster::train(config, &tensor, &graph)?;
    model.save(&a.out)?;
    if let Some(path) = &a.log {
        let json = serde_json::to_string_pretty(&log).expect("log serialises");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
    }
    println!(
        "trained {} head for {} epochs; best validation NLL {:.5} at epoch {}{}",
        model.head(),
        log.epochs.len(),
        log.best_val_nll,
        log.best_epoch,
        if log.stopped_early { " (early stop)" } else { "" }
    );
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let (tensor, graph) = load_graph(&a.data, a.zones.as_ref())?;
    let (report, label) = match (a.baseline, &a.model) {
        (Some(Baseline::Ha), _) => {
            if a.per_node.is_some() {
                return Err(Error::Config(
                    "--per-node needs a model's intervals, not a baseline".into(),
                ));
            }
            // Same split and window geometry as the model defaults.
            let config = match &a.model {
                Some(path) => Forecaster::load(path)?.config().clone(),
                None => ModelConfig::default(),
            };
            let ranges = split(tensor.num_windows(), config.split_fractions())?;
            let [_, _, test] = ranges.windows(config.t_window, config.k_horizon)?;
            let ha = HistoricalAverage::fit(&tensor, ranges.train.clone())?;
            let pred = ha.predict_windows(&tensor, &test, config.t_window, config.k_horizon);
            let (_, y) = tensor.batch(&test, config.t_window, config.k_horizon)?;
            (
                MetricsReport::from_points(&pred, y.data())?,
                "historical average".to_string(),
            )
        }
        (None, Some(path)) => {
            let model = Forecaster::load(path)?;
            let config = model.config();
            let ranges = split(tensor.num_windows(), config.split_fractions())?;
            let [_, _, test] = ranges.windows(config.t_window, config.k_horizon)?;
            let supports = model.supports(&graph)?;
            let (bundle, truth) = model.predict_windows(&supports, &tensor, &test)?;
            if let Some(csv) = &a.per_node {
                let records = per_node_uncertainty(&bundle, &truth)?;
                let mut w = create(csv)?;
                finish(csv, || {
                    write_per_node_csv(&mut w, &records)?;
                    w.flush()
                })?;
            }
            (
                MetricsReport::from_bundle(&bundle, &truth)?,
                format!("{} head", model.head()),
            )
        }
        (None, None) => return Err(Error::Config("evaluate needs --model or --baseline".into())),
    };
    match &a.out {
        Some(path) => {
            std::fs::write(path, report.to_json()).map_err(|e| Error::io(path, e))?;
            print!("{}", report.to_table(&label));
        }
        None => println!("{}", report.to_json()),
    }
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let (tensor, graph) = load_graph(&a.data, a.zones.as_ref())?;
    let model = Forecaster::load(&a.model)?;
    if a.emit_pi.is_some() && model.head() != HeadKind::Zinb {
        return Err(Error::Config(format!(
            "--emit-pi needs a zinb model, checkpoint uses {}",
            model.head()
        )));
    }
    let history = tensor.latest_history(model.config().t_window)?;
    let bundle = model.predict(&history, &graph)?;
    let k = model.config().k_horizon;
    let mut w = create(&a.out)?;
    finish(&a.out, || {
        writeln!(w, "node_id,origin_zone,dest_zone,step,mean,median,lower,upper")?;
        for i in 0..bundle.len() {
            let (node, step) = (i / k, i % k + 1);
            let (o, d) = tensor.pair(node);
            writeln!(
                w,
                "{node},{o},{d},{step},{},{},{},{}",
                bundle.mean[i], bundle.median[i], bundle.lower[i], bundle.upper[i]
            )?;
        }
        w.flush()
    })?;
    if let (Some(path), Some(pi)) = (&a.emit_pi, &bundle.pi) {
        let mut w = create(path)?;
        finish(path, || {
            writeln!(w, "node_id,origin_zone,dest_zone,step,pi")?;
            for (i, p) in pi.iter().enumerate() {
                let (node, step) = (i / k, i % k + 1);
                let (o, d) = tensor.pair(node);
                writeln!(w, "{node},{o},{d},{step},{p}")?;
            }
            w.flush()
        })?;
    }
    println!("forecast {} pairs x {k} steps", tensor.num_nodes());
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let tensor = DemandTensor::read(&a.data)?;
    let rep = sparsity_report(&tensor);
    println!(
        "{} pairs x {} windows at {} min; total demand {}; zero rate {:.4}",
        tensor.num_nodes(),
        tensor.num_windows(),
        tensor.resolution_minutes(),
        tensor.total(),
        rep.zero_rate
    );
    if let Some(path) = &a.histogram {
        let mut w = create(path)?;
        finish(path, || {
            rep.write_histogram(&mut w)?;
            w.flush()
        })?;
    }
    Ok(())
}
