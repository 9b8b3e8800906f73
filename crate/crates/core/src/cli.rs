//! Batch command-line front end. Every command reads files, runs one stage
//! of the pipeline and writes its outputs plus a `manifest.json` into the
//! output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dg::{fit_dg, sample_dg};
use crate::entropy::{
    dg_entropy_mc, entropy_size_sweep, ising_entropy_annealed, ising_entropy_exact_with_cap, write_sweep_csv,
    AnnealSchedule, EntropyEstimate, SweepConfig,
};
use crate::error::{Error, ErrorKind, Result};
use crate::fit::{fit_cd, fit_ml, synthesize_data, TrainConfig};
use crate::gibbs::{gibbs_sample, GibbsConfig};
use crate::hazard::{build_constraints, Coordinates, HazardScenario};
use crate::io::{self, SavedModel};
use crate::model::{constraints_to_second_moments, ensure_feasible, DEFAULT_ENUMERATION_CAP};
use crate::network::{
    grid_zones, ipf_adjust, od_pairs_from_matrix, phase_experiment, FailureMode, IpfOptions, PairPolicy, PhaseConfig,
    RoadNetwork,
};
use crate::rng;

pub const MANIFEST_FILE: &str = "manifest.json";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => EXIT_USAGE,
        ErrorKind::Input => EXIT_INPUT,
        ErrorKind::Numerical => EXIT_NUMERICAL,
    }
}

#[derive(Debug, Parser)]
#[command(name = "isingnet", about = "Correlated failure models for infrastructure networks", disable_version_flag = true)]
pub struct Cli {
    /// Top-level seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// JSON config for the command; omitted fields take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Resolve config and write the manifest without running the command.
    #[arg(long, global = true)]
    pub manifest_only: bool,
    /// Print version information as JSON.
    #[arg(long)]
    pub version: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Failure moment constraints from a site list and a scenario.
    Hazard(HazardArgs),
    /// Fit a surrogate model to a constraints directory.
    Fit(FitArgs),
    /// Draw samples from a fitted model.
    Sample(SampleArgs),
    /// Entropy of a model, or a size sweep over a constraints directory.
    Entropy(EntropyArgs),
    /// Balance an OD matrix to target marginals.
    Ipf(IpfArgs),
    /// Trip completion experiment across magnitudes and failure modes.
    Phase(PhaseArgs),
    /// Write a planar grid network with square zones and uniform demand.
    Grid(GridArgs),
}

#[derive(Debug, Args)]
pub struct HazardArgs {
    pub sites: PathBuf,
    pub scenario: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    IsingMl,
    IsingCd,
    Dg,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub constraints: PathBuf,
    #[arg(long, value_enum)]
    pub engine: Engine,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    pub model: PathBuf,
    #[arg(long)]
    pub n: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyMethodArg {
    Exact,
    Annealed,
    Mc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateArg {
    Ising,
    Dg,
}

#[derive(Debug, Args)]
pub struct EntropyArgs {
    /// Model directory, or constraints directory (fitted first).
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub method: Option<EntropyMethodArg>,
    /// Surrogate to fit when the input is a constraints directory.
    #[arg(long, value_enum, default_value = "ising")]
    pub surrogate: SurrogateArg,
    /// Report entropies in bits instead of nats.
    #[arg(long)]
    pub bits: bool,
    /// Prefix sizes for a sweep, e.g. `2..12` or `2,4,8`.
    #[arg(long)]
    pub sweep: Option<String>,
}

#[derive(Debug, Args)]
pub struct IpfArgs {
    /// Initial OD matrix CSV.
    pub init: PathBuf,
    /// Marginal targets CSV.
    pub targets: PathBuf,
    #[arg(long)]
    pub eps0: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Correlated,
    Independent,
    Both,
}

#[derive(Debug, Args)]
pub struct PhaseArgs {
    #[arg(long)]
    pub nodes: PathBuf,
    #[arg(long)]
    pub edges: PathBuf,
    /// Zone-level OD matrix CSV.
    #[arg(long)]
    pub od: PathBuf,
    #[arg(long)]
    pub zone_map: PathBuf,
    /// Scenario JSON; its magnitude is replaced by each scanned value.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Comma-separated magnitudes.
    #[arg(long, value_delimiter = ',')]
    pub magnitudes: Option<Vec<f64>>,
    #[arg(long)]
    pub n_reps: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = 15)]
    pub rows: usize,
    #[arg(long, default_value_t = 15)]
    pub cols: usize,
    #[arg(long, default_value_t = 0.25)]
    pub spacing_km: f64,
    #[arg(long, default_value_t = 3)]
    pub zones_per_side: usize,
    #[arg(long, default_value_t = 1.0)]
    pub demand: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HazardCmdConfig {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitCmdConfig {
    pub train: TrainConfig,
    /// Synthetic data rows drawn from a DG fit for contrastive divergence.
    pub cd_data_samples: usize,
}

impl Default for FitCmdConfig {
    fn default() -> Self {
        FitCmdConfig {
            train: TrainConfig::default(),
            cd_data_samples: 10_000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleCmdConfig {
    /// Used for Ising models; `n_samples` and `seed` come from the flags.
    pub gibbs: GibbsConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyCmdConfig {
    pub enumeration_cap: usize,
    pub anneal: AnnealSchedule,
    pub anneal_replicas: usize,
    pub dg_outer: usize,
    pub dg_pmf: usize,
    /// Training used when the input is a constraints directory.
    pub train: TrainConfig,
    pub sweep: SweepConfig,
}

impl Default for EntropyCmdConfig {
    fn default() -> Self {
        let sweep = SweepConfig::default();
        EntropyCmdConfig {
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            anneal: AnnealSchedule::default(),
            anneal_replicas: 4,
            dg_outer: 100_000,
            dg_pmf: 2_000_000,
            train: sweep.train.clone(),
            sweep,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseCmdConfig {
    pub phase: PhaseConfig,
    pub pair_policy: PairPolicy,
}

impl Default for PhaseCmdConfig {
    fn default() -> Self {
        PhaseCmdConfig {
            phase: PhaseConfig::default(),
            pair_policy: PairPolicy::CentroidNearest,
        }
    }
}

/// Written next to every command's outputs. Reruns whose manifests agree
/// apart from `duration_secs` produce identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub arguments: serde_json::Value,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub version: String,
    pub duration_secs: f64,
}

pub fn version_json() -> String {
    serde_json::json!({
        "name": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
    })
    .to_string()
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors are reported on stderr.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.kind())
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.version {
        println!("{}", version_json());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::InvalidConfig("no command given; see --help".into()));
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidConfig("--threads must be at least 1".into()));
        }
        // A second call in the same process (tests) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Context {
        seed: cli.seed,
        out: cli.out,
        config: cli.config,
        manifest_only: cli.manifest_only,
        started: Instant::now(),
    };
    match command {
        Command::Hazard(a) => cmd_hazard(&ctx, &a),
        Command::Fit(a) => cmd_fit(&ctx, &a),
        Command::Sample(a) => cmd_sample(&ctx, &a),
        Command::Entropy(a) => cmd_entropy(&ctx, &a),
        Command::Ipf(a) => cmd_ipf(&ctx, &a),
        Command::Phase(a) => cmd_phase(&ctx, &a),
        Command::Grid(a) => cmd_grid(&ctx, &a),
    }
}

struct Context {
    seed: u64,
    out: PathBuf,
    config: Option<PathBuf>,
    manifest_only: bool,
    started: Instant,
}

impl Context {
    fn load_config<T: Default + for<'de> Deserialize<'de>>(&self) -> Result<T> {
        match &self.config {
            None => Ok(T::default()),
            Some(p) => io::read_json(p).map_err(|e| match e {
                Error::Parse { path, line, message } => {
                    Error::InvalidConfig(format!("{}:{line}: {message}", path.display()))
                }
                other => other,
            }),
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes the manifest. Returns `true` when the command should stop here.
    fn manifest<C: Serialize, A: Serialize>(
        &self,
        command: &str,
        arguments: &A,
        config: &C,
        inputs: &[&Path],
    ) -> Result<bool> {
        io::ensure_dir(&self.out)?;
        let mut digests = BTreeMap::new();
        for p in inputs {
            collect_digests(p, &mut digests)?;
        }
        if let Some(c) = &self.config {
            collect_digests(c, &mut digests)?;
        }
        let m = RunManifest {
            command: command.into(),
            arguments: serde_json::to_value(arguments)?,
            config: serde_json::to_value(config)?,
            seed: self.seed,
            inputs: digests,
            version: env!("CARGO_PKG_VERSION").into(),
            duration_secs: if self.manifest_only {
                0.0
            } else {
                self.started.elapsed().as_secs_f64()
            },
        };
        io::write_json(&self.out(MANIFEST_FILE), &m)?;
        Ok(self.manifest_only)
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digests of a file, or of every regular file in a directory (sorted).
fn collect_digests(path: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != MANIFEST_FILE))
            .collect();
        entries.sort();
        for p in entries {
            out.insert(p.display().to_string(), sha256_file(&p)?);
        }
    } else {
        out.insert(path.display().to_string(), sha256_file(path)?);
    }
    Ok(())
}

fn cmd_hazard(ctx: &Context, a: &HazardArgs) -> Result<()> {
    let cfg: HazardCmdConfig = ctx.load_config()?;
    let sites = io::read_sites(&a.sites)?;
    let scenario = io::read_scenario(&a.scenario)?;
    let args = serde_json::json!({"sites": a.sites, "scenario": scenario});
    let c = build_constraints(&sites, &scenario)?;
    ensure_feasible(&c)?;
    let provenance = serde_json::json!({
        "scenario": scenario,
        "site_ids": sites.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(),
    });
    if ctx.manifest("hazard", &args, &cfg, &[&a.sites, &a.scenario])? {
        return Ok(());
    }
    io::write_constraints(&ctx.out, &c, provenance)?;
    ctx.manifest("hazard", &args, &cfg, &[&a.sites, &a.scenario])?;
    Ok(())
}

#[derive(Serialize)]
struct DgFitReport<'a> {
    method: &'static str,
    dimension: usize,
    repair_log: &'a crate::dg::RepairLog,
}

fn cmd_fit(ctx: &Context, a: &FitArgs) -> Result<()> {
    let mut cfg: FitCmdConfig = ctx.load_config()?;
    cfg.train.samples.seed = ctx.seed;
    cfg.train.validate()?;
    let args = serde_json::json!({"constraints": a.constraints, "engine": a.engine});
    if ctx.manifest("fit", &args, &cfg, &[&a.constraints])? {
        return Ok(());
    }
    let c = io::read_constraints(&a.constraints)?;
    ensure_feasible(&c)?;
    match a.engine {
        Engine::Dg => {
            let t = Instant::now();
            let model = fit_dg(&c)?;
            log::info!("DG fit took {:.3} s", t.elapsed().as_secs_f64());
            io::write_dg_model(&ctx.out, &model)?;
            io::write_json(
                &ctx.out("fit_report.json"),
                &DgFitReport {
                    method: "dg",
                    dimension: model.dim(),
                    repair_log: model.repair_log(),
                },
            )?;
        }
        Engine::IsingMl => {
            let report = fit_ml(&constraints_to_second_moments(&c)?, &cfg.train)?;
            io::write_ising_model(&ctx.out, &report.final_model)?;
            io::write_json(&ctx.out("fit_report.json"), &report)?;
        }
        Engine::IsingCd => {
            let data = synthesize_data(&c, cfg.cd_data_samples, rng::derive_seed(ctx.seed, "cd-data", 0))?;
            let report = fit_cd(&data, &cfg.train)?;
            io::write_ising_model(&ctx.out, &report.final_model)?;
            io::write_json(&ctx.out("fit_report.json"), &report)?;
        }
    }
    ctx.manifest("fit", &args, &cfg, &[&a.constraints])?;
    Ok(())
}

fn cmd_sample(ctx: &Context, a: &SampleArgs) -> Result<()> {
    let mut cfg: SampleCmdConfig = ctx.load_config()?;
    cfg.gibbs.n_samples = a.n;
    cfg.gibbs.seed = ctx.seed;
    let args = serde_json::json!({"model": a.model, "n": a.n});
    let model = io::read_model(&a.model)?;
    if ctx.manifest("sample", &args, &cfg, &[&a.model])? {
        return Ok(());
    }
    if a.n == 0 {
        return Err(Error::InvalidConfig("--n must be at least 1".into()));
    }
    let samples = match &model {
        SavedModel::Ising(m) => gibbs_sample(m, &cfg.gibbs)?,
        SavedModel::Dg(m) => sample_dg(m, a.n, rng::derive_seed(ctx.seed, "sample-dg", 0)),
    };
    io::write_samples(&ctx.out("samples.csv"), &samples, ctx.seed)?;
    ctx.manifest("sample", &args, &cfg, &[&a.model])?;
    Ok(())
}

/// `a..b` (inclusive) or a comma-separated list.
pub fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidConfig(format!("cannot parse sweep sizes {s:?}"));
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if lo == 0 || hi < lo {
            return Err(bad());
        }
        Ok((lo..=hi).collect())
    } else {
        s.split(',').map(|t| t.trim().parse::<usize>().map_err(|_| bad())).collect()
    }
}

fn cmd_entropy(ctx: &Context, a: &EntropyArgs) -> Result<()> {
    let mut cfg: EntropyCmdConfig = ctx.load_config()?;
    cfg.sweep.seed = ctx.seed;
    cfg.anneal.seed = rng::derive_seed(ctx.seed, "entropy-anneal", 0);
    cfg.train.samples.seed = rng::derive_seed(ctx.seed, "entropy-fit", 0);
    let args = serde_json::json!({
        "input": a.input, "method": a.method, "surrogate": a.surrogate, "bits": a.bits, "sweep": a.sweep,
    });
    let is_constraints = a.input.join(io::CONSTRAINTS_FILE).is_file();

    if let Some(spec) = &a.sweep {
        let sizes = parse_sizes(spec)?;
        if !is_constraints {
            return Err(Error::InvalidInput("a sweep needs a constraints directory".into()));
        }
        if ctx.manifest("entropy", &args, &cfg, &[&a.input])? {
            return Ok(());
        }
        let c = io::read_constraints(&a.input)?;
        let rows = entropy_size_sweep(&c, &sizes, &cfg.sweep)?;
        write_sweep_csv(&rows, &ctx.out("sweep.csv"), a.bits)?;
        ctx.manifest("entropy", &args, &cfg, &[&a.input])?;
        return Ok(());
    }

    let model = if is_constraints {
        None
    } else {
        Some(io::read_model(&a.input)?)
    };
    let dim = match &model {
        Some(m) => m.dim(),
        None => io::read_constraints(&a.input)?.dimension(),
    };
    let is_dg = matches!(model, Some(SavedModel::Dg(_))) || (model.is_none() && a.surrogate == SurrogateArg::Dg);
    let method = match (a.method, is_dg) {
        (Some(m), _) => m,
        (None, true) => EntropyMethodArg::Mc,
        (None, false) if dim <= cfg.enumeration_cap => EntropyMethodArg::Exact,
        (None, false) => EntropyMethodArg::Annealed,
    };
    if is_dg != (method == EntropyMethodArg::Mc) {
        return Err(Error::InvalidConfig(
            "method mc applies to DG models; exact and annealed apply to Ising models".into(),
        ));
    }
    if method == EntropyMethodArg::Exact && dim > cfg.enumeration_cap {
        return Err(Error::EnumerationCap {
            dim,
            cap: cfg.enumeration_cap,
        });
    }
    if ctx.manifest("entropy", &args, &cfg, &[&a.input])? {
        return Ok(());
    }
    let model = match model {
        Some(m) => m,
        None => {
            let c = io::read_constraints(&a.input)?;
            ensure_feasible(&c)?;
            if is_dg {
                SavedModel::Dg(fit_dg(&c)?)
            } else {
                let report = fit_ml(&constraints_to_second_moments(&c)?, &cfg.train)?;
                SavedModel::Ising(report.final_model)
            }
        }
    };
    let est: EntropyEstimate = match (&model, method) {
        (SavedModel::Ising(m), EntropyMethodArg::Exact) => ising_entropy_exact_with_cap(m, cfg.enumeration_cap)?,
        (SavedModel::Ising(m), _) => ising_entropy_annealed(m, &cfg.anneal, cfg.anneal_replicas)?,
        (SavedModel::Dg(m), _) => dg_entropy_mc(m, cfg.dg_outer, cfg.dg_pmf, rng::derive_seed(ctx.seed, "entropy-dg", 0))?,
    };
    let est = if a.bits { est.to_bits() } else { est };
    io::write_json(&ctx.out("entropy.json"), &est)?;
    ctx.manifest("entropy", &args, &cfg, &[&a.input])?;
    Ok(())
}

#[derive(Serialize)]
struct IpfSummary {
    iterations: usize,
    error: f64,
    converged: bool,
    rescaled: bool,
}

fn cmd_ipf(ctx: &Context, a: &IpfArgs) -> Result<()> {
    let mut cfg: IpfOptions = ctx.load_config()?;
    if let Some(e) = a.eps0 {
        cfg.eps0 = e;
    }
    let args = serde_json::json!({"init": a.init, "targets": a.targets});
    if ctx.manifest("ipf", &args, &cfg, &[&a.init, &a.targets])? {
        return Ok(());
    }
    let (zones, init) = io::read_od_matrix(&a.init)?;
    let (tz, o, d) = io::read_od_targets(&a.targets)?;
    if tz != zones {
        return Err(Error::InvalidInput("target zones must match the matrix zones in order".into()));
    }
    let r = ipf_adjust(&init, &o, &d, &cfg)?;
    if !r.converged {
        log::warn!("IPF stopped after {} iterations with error {:.3e}", r.iterations, r.error);
    }
    io::write_od_matrix(&ctx.out("od.csv"), &zones, &r.matrix)?;
    io::write_json(
        &ctx.out("ipf.json"),
        &IpfSummary {
            iterations: r.iterations,
            error: r.error,
            converged: r.converged,
            rescaled: r.rescaled,
        },
    )?;
    ctx.manifest("ipf", &args, &cfg, &[&a.init, &a.targets])?;
    Ok(())
}

pub fn histogram_file_name(magnitude: f64, mode: FailureMode) -> String {
    format!("hist_M{magnitude:.2}_{}.csv", mode.as_str())
}

fn cmd_phase(ctx: &Context, a: &PhaseArgs) -> Result<()> {
    let mut cfg: PhaseCmdConfig = ctx.load_config()?;
    if let Some(m) = &a.magnitudes {
        cfg.phase.magnitudes = m.clone();
    }
    if let Some(n) = a.n_reps {
        cfg.phase.n_reps = n;
    }
    match a.mode {
        Some(ModeArg::Correlated) => cfg.phase.modes = vec![FailureMode::Correlated],
        Some(ModeArg::Independent) => cfg.phase.modes = vec![FailureMode::Independent],
        Some(ModeArg::Both) => cfg.phase.modes = vec![FailureMode::Correlated, FailureMode::Independent],
        None => {}
    }
    cfg.phase.seed = ctx.seed;
    let inputs: [&Path; 5] = [&a.nodes, &a.edges, &a.od, &a.zone_map, &a.scenario];
    let args = serde_json::json!({
        "nodes": a.nodes, "edges": a.edges, "od": a.od, "zone_map": a.zone_map, "scenario": a.scenario,
    });
    if ctx.manifest("phase", &args, &cfg, &inputs)? {
        return Ok(());
    }
    let net = io::read_network(&a.nodes, &a.edges)?;
    let od = io::read_od(&a.od, &a.zone_map)?;
    let scenario = io::read_scenario(&a.scenario)?;
    let pairs = od_pairs_from_matrix(&od, &net, cfg.pair_policy)?;
    let results = phase_experiment(&net, &pairs, &scenario, &cfg.phase)?;

    let mut lines = Vec::new();
    for res in &results {
        for (k, r) in res.replicates.iter().enumerate() {
            lines.push(
                serde_json::json!({
                    "magnitude": res.magnitude,
                    "mode": res.mode,
                    "replicate": k,
                    "removal_rate": r.removal_rate,
                    "completion_rate": r.completion_rate,
                })
                .to_string(),
            );
        }
        io::write_string(&ctx.out(&histogram_file_name(res.magnitude, res.mode)), &res.histogram().to_csv())?;
    }
    io::write_lines(&ctx.out("phase.jsonl"), lines)?;
    let summary: Vec<_> = results
        .iter()
        .map(|r| {
            serde_json::json!({
                "magnitude": r.magnitude,
                "mode": r.mode,
                "mean_failure_probability": r.mean_failure_probability,
                "completion_mass_low": r.completion_mass(0.0, 0.2),
                "completion_mass_high": r.completion_mass(0.8, 1.0),
                "self_pairs": r.self_pairs,
            })
        })
        .collect();
    io::write_json(&ctx.out("summary.json"), &summary)?;
    ctx.manifest("phase", &args, &cfg, &inputs)?;
    Ok(())
}

fn cmd_grid(ctx: &Context, a: &GridArgs) -> Result<()> {
    let cfg: HazardCmdConfig = ctx.load_config()?;
    let args = serde_json::json!({
        "rows": a.rows, "cols": a.cols, "spacing_km": a.spacing_km,
        "zones_per_side": a.zones_per_side, "demand": a.demand,
    });
    if ctx.manifest("grid", &args, &cfg, &[])? {
        return Ok(());
    }
    let net = RoadNetwork::grid(a.rows, a.cols, a.spacing_km, (0.0, 0.0))?;
    let od = grid_zones(a.rows, a.cols, a.zones_per_side, a.demand)?;
    io::write_network(&ctx.out("nodes.csv"), &ctx.out("edges.csv"), &net)?;
    io::write_zone_map(&ctx.out("zone_map.csv"), &od.zone_map)?;
    io::write_od_matrix(&ctx.out("od.csv"), &od.zones, &od.demand)?;
    let centre = Coordinates::Planar {
        x_km: a.spacing_km * (a.cols - 1) as f64 / 2.0,
        y_km: a.spacing_km * (a.rows - 1) as f64 / 2.0,
    };
    io::write_json(&ctx.out("scenario.json"), &HazardScenario::new(7.0, centre))?;
    ctx.manifest("grid", &args, &cfg, &[])?;
    Ok(())
}
