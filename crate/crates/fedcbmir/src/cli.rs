//! Subcommands of the `fedcbmir` binary.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fedcbmir_core::cae::{CaeConfig, CaeModel, TrainOptions};
use fedcbmir_core::eval::{evaluate, EvalReport};
use fedcbmir_core::fed::{FedClient, LocalTrainConfig, RosterEntry, RoundConfig, Strategy};
use fedcbmir_core::numerics::{OptimizerSpec, OptimizerState};
use fedcbmir_core::retrieval::{build_index, search, Scenario};
use fedcbmir_core::{Label, Magnification, Split};
use serde::Serialize;

use crate::data::{load_image_sized, load_images, load_manifest, synth_generate, DatasetManifest, SynthConfig};
use crate::error::{AppError, IoContext, Result};
use crate::files::{
    load_index, load_model, run_record_path, save_index, save_model, write_run_record, JsonLines, RoundLine,
    RunRecord,
};
use crate::net::{run_client, simulate_network, FaultPlan, FedServer, ServerOptions, SystemClock};

#[derive(Debug, Parser)]
#[command(name = "fedcbmir", version, about = "Federated autoencoder training and content-based image retrieval")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-client dataset.
    Synth(SynthArgs),
    /// Train one autoencoder on one manifest, without federation.
    TrainLocal(TrainLocalArgs),
    /// Run a whole federation in this process.
    FedSim(FedSimArgs),
    /// Coordinate a federation over TCP.
    FedServer(FedServerArgs),
    /// Take part in a federation over TCP.
    FedClient(FedClientArgs),
    /// Build a feature index from train and validation images.
    Index(IndexArgs),
    /// Retrieve the top-K entries for one image.
    Query(QueryArgs),
    /// Score every test image as a query.
    Eval(EvalArgs),
    /// Serve queries over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// Full filter widths.
    Default,
    /// Two-level network with narrow filters.
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyArg {
    Fedavg,
    Fedadagrad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioArg {
    Sen1,
    Sen2,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Sen1 => Scenario::Sen1,
            ScenarioArg::Sen2 => Scenario::Sen2,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "default")]
    pub arch: Arch,
    /// Square input size; images of other sizes are resampled.
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
    /// Seeds weight initialisation and data shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ModelArgs {
    pub fn config(&self) -> Result<CaeConfig> {
        let mut c = match self.arch {
            Arch::Default => CaeConfig::default(),
            Arch::Tiny => CaeConfig::tiny(),
        };
        c.height = self.image_size;
        c.width = self.image_size;
        c.seed = self.seed;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerArg,
}

impl TrainArgs {
    pub fn optimizer(&self) -> OptimizerSpec {
        match self.optimizer {
            OptimizerArg::Adam => OptimizerSpec::adam(self.lr),
            OptimizerArg::Sgd => OptimizerSpec::sgd(self.lr),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RoundArgs {
    #[arg(long, default_value_t = 30)]
    pub rounds: u32,
    #[arg(long, default_value_t = 1)]
    pub local_epochs: usize,
    #[arg(long, value_enum, default_value = "fedavg")]
    pub strategy: StrategyArg,
    /// FedAdagrad server step size.
    #[arg(long, default_value_t = 0.1)]
    pub server_lr: f64,
    /// FedAdagrad adaptivity.
    #[arg(long, default_value_t = 1e-3)]
    pub tau: f64,
}

impl RoundArgs {
    fn strategy(&self) -> Strategy {
        match self.strategy {
            StrategyArg::Fedavg => Strategy::FedAvg,
            StrategyArg::Fedadagrad => Strategy::FedAdagrad {
                server_lr: self.server_lr,
                tau: self.tau,
            },
        }
    }

    fn round_config(&self, train: &TrainArgs, seed: u64, roster: Vec<RosterEntry>) -> RoundConfig {
        RoundConfig {
            total_rounds: self.rounds,
            local_epochs: self.local_epochs,
            batch_size: train.batch,
            optimizer: train.optimizer(),
            strategy: self.strategy(),
            roster,
            seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub clients: usize,
    #[arg(long, default_value_t = 80)]
    pub train: usize,
    #[arg(long, default_value_t = 20)]
    pub validation: usize,
    #[arg(long, default_value_t = 20)]
    pub test: usize,
    #[arg(long, default_value_t = 32)]
    pub image_size: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainLocalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output weight file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FedSimArgs {
    /// One manifest per client, in roster order.
    #[arg(long, required = true)]
    pub manifest: Vec<PathBuf>,
    /// Client ids, one per manifest. Defaults to each manifest's directory name.
    #[arg(long)]
    pub client_id: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub rounds: RoundArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Lose `client:round`'s update.
    #[arg(long)]
    pub drop: Vec<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FedServerArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub listen: String,
    /// Comma-separated client ids, optionally `id:n_k`.
    #[arg(long)]
    pub roster: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    #[command(flatten)]
    pub rounds: RoundArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FedClientArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub server: String,
    #[arg(long)]
    pub client_id: Option<String>,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub local_epochs: usize,
    #[arg(long, default_value_t = 30)]
    pub connect_timeout_secs: u64,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IndexArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Train and validation records of every manifest are indexed.
    #[arg(long, required = true)]
    pub manifest: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct QueryArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "sen1")]
    pub scenario: ScenarioArg,
    /// Query magnification (`40x` … `400x` or `none`).
    #[arg(long, default_value = "none")]
    pub magnification: String,
    #[arg(long)]
    pub true_label: Option<String>,
    #[arg(long)]
    pub query_id: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    /// Test records of every manifest are used as queries.
    #[arg(long, required = true)]
    pub manifest: Vec<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "sen1")]
    pub scenario: ScenarioArg,
    /// Report file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: String,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    /// Directory searched for thumbnails of indexed images.
    #[arg(long)]
    pub data_root: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a).map(|_| ()),
        Command::TrainLocal(a) => cmd_train_local(&a).map(|_| ()),
        Command::FedSim(a) => cmd_fed_sim(&a),
        Command::FedServer(a) => cmd_fed_server(&a),
        Command::FedClient(a) => cmd_fed_client(&a),
        Command::Index(a) => cmd_index(&a),
        Command::Query(a) => cmd_query(&a, &mut std::io::stdout()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Serve(a) => cmd_serve(&a),
    }
}

fn record<C: Serialize>(command: &str, config: &C, output: &Path, layout: Option<String>, extra: serde_json::Value) -> Result<()> {
    write_run_record(
        run_record_path(output),
        &RunRecord {
            command,
            version: env!("CARGO_PKG_VERSION"),
            core_version: env!("CARGO_PKG_VERSION"),
            config,
            layout_id: layout,
            outputs: vec![output.display().to_string()],
            extra,
        },
    )
}

fn sized(c: &CaeConfig) -> (usize, usize) {
    (c.height, c.width)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<Vec<DatasetManifest>> {
    let config = SynthConfig {
        clients: a.clients,
        train: a.train,
        validation: a.validation,
        test: a.test,
        image_size: a.image_size,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let manifests = synth_generate(&config, &a.out)?;
    for (k, m) in manifests.iter().enumerate() {
        eprintln!("client-{k}: {} images", m.records.len());
    }
    Ok(manifests)
}

fn training_images(manifest: &DatasetManifest, config: &CaeConfig) -> Result<Vec<fedcbmir_core::numerics::Tensor<f32>>> {
    load_images(manifest.split(&[Split::Train]), sized(config))
}

/// Returns the per-epoch loss trace.
pub fn cmd_train_local(a: &TrainLocalArgs) -> Result<Vec<f64>> {
    let config = a.model.config()?;
    let manifest = load_manifest(&a.manifest)?;
    let data = training_images(&manifest, &config)?;
    let model = CaeModel::<f32>::build(config.clone())?;
    let mut opt = OptimizerState::new(a.train.optimizer())?;
    let trained = model.train(
        &data,
        &TrainOptions {
            epochs: a.epochs,
            batch_size: a.train.batch,
            seed: a.model.seed,
        },
        &mut opt,
    )?;
    save_model(&a.out, &config, trained.model.weights())?;
    let mut log = JsonLines::create(suffixed(&a.out, ".loss.jsonl"))?;
    for (epoch, loss) in trained.loss_trace.iter().enumerate() {
        log.push(&serde_json::json!({ "epoch": epoch, "loss": loss }))?;
    }
    record(
        "train-local",
        a,
        &a.out,
        Some(config.layout().id().to_string()),
        serde_json::json!({ "n_train": data.len() }),
    )?;
    Ok(trained.loss_trace)
}

fn suffixed(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn default_client_id(manifest: &Path) -> String {
    manifest
        .parent()
        .and_then(|d| d.file_name())
        .and_then(|n| n.to_str())
        .filter(|n| !n.is_empty())
        .unwrap_or("client-0")
        .to_string()
}

fn parse_drops(items: &[String]) -> Result<FaultPlan> {
    let mut plan = FaultPlan::default();
    for item in items {
        let (id, round) = item
            .rsplit_once(':')
            .and_then(|(id, r)| r.parse::<u32>().ok().map(|r| (id.to_string(), r)))
            .ok_or_else(|| AppError::Config(format!("--drop expects client:round, got {item:?}")))?;
        plan.drop.push((id, round));
    }
    Ok(plan)
}

fn round_logger(out: &Path) -> Result<JsonLines> {
    JsonLines::create(suffixed(out, ".rounds.jsonl"))
}

pub fn cmd_fed_sim(a: &FedSimArgs) -> Result<()> {
    let config = a.model.config()?;
    if !a.client_id.is_empty() && a.client_id.len() != a.manifest.len() {
        return Err(AppError::Config("give one --client-id per --manifest".into()));
    }
    let mut clients = Vec::new();
    for (i, path) in a.manifest.iter().enumerate() {
        let id = a.client_id.get(i).cloned().unwrap_or_else(|| default_client_id(path));
        let data = training_images(&load_manifest(path)?, &config)?;
        clients.push((id, data));
    }
    let roster = clients
        .iter()
        .map(|(id, d)| RosterEntry {
            client_id: id.clone(),
            expected_n: Some(d.len() as u64),
        })
        .collect();
    let rc = a.rounds.round_config(&a.train, a.model.seed, roster);
    let local = LocalTrainConfig::from(&rc);
    let clients = clients
        .into_iter()
        .map(|(id, data)| FedClient::new(id, config.clone(), data, local))
        .collect();
    let initial = CaeModel::<f32>::build(config.clone())?.into_weights();
    let mut log = round_logger(&a.out)?;
    let mut log_err = None;
    let outcome = simulate_network(&rc, initial, clients, parse_drops(&a.drop)?, &SystemClock::default(), |r| {
        eprintln!("round {} loss {:.6}", r.round, r.mean_client_loss);
        if let Err(e) = log.push(&RoundLine::from(r)) {
            log_err.get_or_insert(e);
        }
    });
    let mut transcript = JsonLines::create(suffixed(&a.out, ".transcript.jsonl"))?;
    for entry in &outcome.transcript {
        transcript.push(entry)?;
    }
    let fed = outcome.result?;
    if let Some(e) = log_err {
        return Err(e);
    }
    save_model(&a.out, &config, &fed.weights)?;
    record("fed-sim", a, &a.out, Some(config.layout().id().to_string()), serde_json::Value::Null)
}

pub fn parse_roster(s: &str) -> Result<Vec<RosterEntry>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| match p.split_once(':') {
            Some((id, n)) => n
                .parse::<u64>()
                .map(|n| RosterEntry {
                    client_id: id.to_string(),
                    expected_n: Some(n),
                })
                .map_err(|_| AppError::Config(format!("bad roster entry {p:?}"))),
            None => Ok(RosterEntry::new(p)),
        })
        .collect()
}

pub fn cmd_fed_server(a: &FedServerArgs) -> Result<()> {
    let config = a.model.config()?;
    let rc = a.rounds.round_config(&a.train, a.model.seed, parse_roster(&a.roster)?);
    rc.validate()?;
    let server = FedServer::bind(
        a.listen.as_str(),
        ServerOptions {
            timeout: Duration::from_secs(a.timeout_secs),
        },
    )?;
    eprintln!("listening on {}", server.local_addr()?);
    let initial = CaeModel::<f32>::build(config.clone())?.into_weights();
    let mut log = round_logger(&a.out)?;
    let mut log_err = None;
    let (result, transcript) = server.run(&rc, initial, &SystemClock::default(), |r| {
        eprintln!("round {} loss {:.6}", r.round, r.mean_client_loss);
        if let Err(e) = log.push(&RoundLine::from(r)) {
            log_err.get_or_insert(e);
        }
    });
    let mut t = JsonLines::create(suffixed(&a.out, ".transcript.jsonl"))?;
    for entry in &transcript {
        t.push(entry)?;
    }
    let fed = result?;
    if let Some(e) = log_err {
        return Err(e);
    }
    save_model(&a.out, &config, &fed.weights)?;
    record("fed-server", a, &a.out, Some(config.layout().id().to_string()), serde_json::Value::Null)
}

pub fn cmd_fed_client(a: &FedClientArgs) -> Result<()> {
    let config = a.model.config()?;
    let id = a.client_id.clone().unwrap_or_else(|| default_client_id(&a.manifest));
    let data = training_images(&load_manifest(&a.manifest)?, &config)?;
    let local = LocalTrainConfig {
        epochs: a.local_epochs,
        batch_size: a.train.batch,
        optimizer: a.train.optimizer(),
        seed: a.model.seed,
    };
    let layout = config.layout().id();
    let client = FedClient::new(id.clone(), config, data, local);
    let report = run_client(
        a.server.as_str(),
        &client,
        layout,
        Duration::from_secs(a.connect_timeout_secs),
    )?;
    eprintln!("{id}: {} rounds completed", report.rounds_completed);
    Ok(())
}

fn load_manifests(paths: &[PathBuf]) -> Result<DatasetManifest> {
    DatasetManifest::merge(paths.iter().map(load_manifest).collect::<Result<_>>()?)
}

pub fn cmd_index(a: &IndexArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let manifest = load_manifests(&a.manifest)?;
    let size = sized(model.config());
    let items = manifest
        .split(&[Split::Train, Split::Validation])
        .map(|r| load_image_sized(&r.path, Some(size)).map(|img| (r.meta(), img)));
    let mut first_err = None;
    let index = build_index(
        &model,
        items.map_while(|x| match x {
            Ok(v) => Some(Ok(v)),
            Err(e) => {
                first_err = Some(e);
                None
            }
        }),
    );
    if let Some(e) = first_err {
        return Err(e);
    }
    let index = index?;
    save_index(&a.out, &index)?;
    eprintln!("indexed {} images", index.len());
    record(
        "index",
        a,
        &a.out,
        Some(index.layout_id().to_string()),
        serde_json::json!({ "entries": index.len() }),
    )
}

pub fn cmd_query(a: &QueryArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let model = load_model(&a.model)?;
    let index = load_index(&a.index)?;
    let magnification = Magnification::parse_opt(&a.magnification)?;
    let truth: Option<Label> = a.true_label.as_deref().map(str::parse).transpose()?;
    let image = load_image_sized(&a.image, Some(sized(model.config())))?;
    let id = a.query_id.clone().unwrap_or_else(|| {
        a.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let result = search(
        &index,
        &model,
        &id,
        &image,
        a.k,
        a.scenario.into(),
        magnification,
        &SystemClock::default(),
    )?;
    let stdout = "<stdout>";
    for g in &result.groups {
        if result.scenario == Scenario::Sen2 {
            writeln!(out, "[{}]", Magnification::label_opt(g.magnification)).at(stdout)?;
        }
        for (rank, h) in g.hits.iter().enumerate() {
            let marker = match truth {
                Some(t) if t == h.label => " ✓",
                Some(_) => " ✗",
                None => "",
            };
            writeln!(
                out,
                "{:>3}  {:<24} {:>12.6}  {:<10} {:<5}{marker}",
                rank + 1,
                h.entry_id,
                h.distance,
                h.label.as_str(),
                Magnification::label_opt(h.magnification)
            )
            .at(stdout)?;
        }
    }
    writeln!(out, "search took {:.6} s", result.elapsed_secs).at(stdout)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<EvalReport> {
    let model = load_model(&a.model)?;
    let index = load_index(&a.index)?;
    let manifest = load_manifests(&a.manifest)?;
    let size = sized(model.config());
    let queries: Vec<_> = manifest.split(&[Split::Test]).collect();
    if queries.is_empty() {
        return Err(AppError::Config("no test-split records to evaluate".into()));
    }
    let mut load_err = None;
    let items = queries.iter().map_while(|r| match load_image_sized(&r.path, Some(size)) {
        Ok(img) => Some(Ok((r.meta(), img))),
        Err(e) => {
            load_err = Some(e);
            None
        }
    });
    let report = evaluate(&index, &model, items, a.k, a.scenario.into(), &SystemClock::default());
    if let Some(e) = load_err {
        return Err(e);
    }
    let report = report?;
    std::fs::write(&a.out, report.render()).at(&a.out)?;
    eprintln!(
        "accuracy {:.4} precision {:.4} f1 {:.4}",
        report.metrics.accuracy, report.metrics.precision, report.metrics.f1
    );
    record(
        "eval",
        a,
        &a.out,
        Some(index.layout_id().to_string()),
        serde_json::json!({ "queries": report.records.len() }),
    )?;
    Ok(report)
}

pub fn cmd_serve(a: &ServeArgs) -> Result<()> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| AppError::Network(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.listen)
            .await
            .map_err(|e| AppError::Network(e.to_string()))?;
        eprintln!("serving on {}", listener.local_addr().map_err(|e| AppError::Network(e.to_string()))?);
        let state = crate::service::ServiceState::new();
        let loader = std::sync::Arc::clone(&state);
        let (model, index, root) = (a.model.clone(), a.index.clone(), a.data_root.clone());
        let load = tokio::task::spawn_blocking(move || {
            crate::service::Loaded::from_files(&model, &index, root.as_deref()).map(|l| loader.install(l))
        });
        let server = tokio::spawn(crate::service::serve(listener, state));
        load.await.map_err(|e| AppError::Network(e.to_string()))??;
        eprintln!("model and index loaded");
        server
            .await
            .map_err(|e| AppError::Network(e.to_string()))?
            .map_err(|e| AppError::Network(e.to_string()))
    })
}
