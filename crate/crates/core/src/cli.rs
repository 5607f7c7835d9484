//! Command line front end. Every pipeline is a subcommand with file-based
//! inputs and outputs; see `navlab --help`.

use crate::config::LabConfig;
use crate::dynamics::{DynParams, Mode};
use crate::error::{Error, Result};
use crate::io::{encode_ppm, write_atomic, write_raster};
use crate::metrics::{metrics_csv, results_from_logs, summarize};
use crate::planner::{
    log_quality, quality_heatmap, quality_samples, solve_time_field, ExpertPolicy, FieldCache, PoseSource,
    SpeedModel,
};
use crate::policy::{ConstantPolicy, Policy, ReplayPolicy};
use crate::probing::{
    aggregate_on_map, evaluate_occupancy, evaluate_probe, train_occupancy_probe, train_probe, LatentDataset,
    OccupancyProbe, ProbeModel, ProbeVariant, Split,
};
use crate::sensitivity::{
    build_action_bank, d_belief, sensitivity_sweep, ActionBank, CorruptionAxis, CorruptionSpec,
};
use crate::shapley::{shapley_importance, ObservationBank, Player, ValueMetric};
use crate::world::{read_log_files, run_task_set, write_logs, OccupancyGrid, TaskSet, TrajectoryLog};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Parser, Debug)]
#[command(name = "navlab", version, about = "Desk-scale navigation dynamics lab")]
pub struct Cli {
    /// JSON run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for episode-level parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Report failures as a JSON object on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate random desk maps with solvable episodes.
    GenEpisodes(GenArgs),
    /// Run a policy on an episode set and write trajectory logs.
    Simulate(SimulateArgs),
    /// Harvest an action bank for D_belief.
    Bank(BankArgs),
    /// Corruption sweep: SR, SPL and SCT against D_belief.
    Sweep(SweepArgs),
    /// D_belief between two parameter sets.
    Dbelief(DbeliefArgs),
    /// Fast-Marching time field of a map and goal.
    PlanField(PlanFieldArgs),
    /// Planning-quality density rasters from logs.
    Heatmap(HeatmapArgs),
    /// Latent probing pipeline.
    #[command(subcommand)]
    Probe(ProbeCmd),
    /// Shapley importance of observation modalities.
    Shapley(ShapleyArgs),
    /// SR, SPL and SCT of logs as CSV.
    Metrics(MetricsArgs),
    /// HTTP and WebSocket playground service.
    #[cfg(feature = "server")]
    Serve(ServeArgs),
}

#[derive(Args, Debug, Default)]
pub struct TaskArgs {
    /// Directory written by `gen-episodes` (episodes.jsonl + maps/).
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    /// Map directory, or one map file shared by every episode.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Episodes as JSON lines.
    #[arg(long)]
    pub episodes: Option<PathBuf>,
    /// Use only the first N episodes.
    #[arg(long)]
    pub limit: Option<usize>,
}

impl TaskArgs {
    pub fn load(&self) -> Result<TaskSet> {
        let mut set = match (&self.tasks, &self.map, &self.episodes) {
            (Some(dir), None, None) => TaskSet::load_dir(dir)?,
            (Some(dir), Some(map), None) => TaskSet::load(&dir.join("episodes.jsonl"), map)?,
            (tasks, map, Some(eps)) => {
                let map = match (map, tasks) {
                    (Some(m), _) => m.clone(),
                    (None, Some(t)) => t.join("maps"),
                    (None, None) => return Err(Error::InvalidParams("--episodes needs --map".into())),
                };
                if map.is_file() {
                    load_single_map(eps, &map)?
                } else {
                    TaskSet::load(eps, &map)?
                }
            }
            _ => return Err(Error::InvalidParams("give --tasks DIR or --map and --episodes".into())),
        };
        if let Some(n) = self.limit {
            set.episodes.truncate(n);
        }
        if set.episodes.is_empty() {
            return Err(Error::Empty("episode set"));
        }
        Ok(set)
    }
}

fn load_single_map(episodes: &Path, map: &Path) -> Result<TaskSet> {
    let grid = Arc::new(OccupancyGrid::load(map)?);
    let eps: Vec<crate::world::Episode> = crate::io::read_jsonl(episodes)?;
    let mut maps = BTreeMap::new();
    for e in &eps {
        e.validate(&grid)?;
        maps.insert(e.map_id.clone(), grid.clone());
    }
    Ok(TaskSet { maps, episodes: eps })
}

/// Loads every map referenced by `logs` from a directory or a single file.
fn load_maps_for(logs: &[TrajectoryLog], map: &Path) -> Result<BTreeMap<String, Arc<OccupancyGrid>>> {
    let mut maps = BTreeMap::new();
    let single = if map.is_file() { Some(Arc::new(OccupancyGrid::load(map)?)) } else { None };
    for l in logs {
        let id = &l.header.episode.map_id;
        if maps.contains_key(id) {
            continue;
        }
        let g = match &single {
            Some(g) => g.clone(),
            None => Arc::new(OccupancyGrid::load(&map.join(format!("{id}.grid")))?),
        };
        maps.insert(id.clone(), g);
    }
    Ok(maps)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Expert,
    Zero,
    Replay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PoseArg {
    GroundTruth,
    Odometry,
    Localization,
    Estimator,
    Average,
}

impl From<PoseArg> for PoseSource {
    fn from(p: PoseArg) -> Self {
        match p {
            PoseArg::GroundTruth => PoseSource::GroundTruth,
            PoseArg::Odometry => PoseSource::Odometry,
            PoseArg::Localization => PoseSource::Localization,
            PoseArg::Estimator => PoseSource::Estimator,
            PoseArg::Average => PoseSource::Average,
        }
    }
}

#[derive(Args, Debug)]
pub struct PolicyArgs {
    #[arg(long, value_enum, default_value = "expert")]
    pub policy: PolicyKind,
    /// Comma-separated action ids for `--policy replay`.
    #[arg(long, value_delimiter = ',')]
    pub actions: Vec<usize>,
    /// Where the expert reads its own pose.
    #[arg(long, value_enum)]
    pub pose_source: Option<PoseArg>,
}

#[derive(Args, Debug, Default)]
pub struct HarnessArgs {
    #[arg(long)]
    pub obs_delay_ms: Option<f64>,
    /// Cap on commanded linear velocity as a fraction of v_max.
    #[arg(long)]
    pub velocity_clip: Option<f64>,
    /// Clear policy memory every this many seconds.
    #[arg(long)]
    pub zero_period: Option<f64>,
    #[arg(long)]
    pub frame_reset: bool,
    /// Attach the reference estimator.
    #[arg(long)]
    pub estimator: bool,
    /// Store estimator latents in the log.
    #[arg(long)]
    pub record_latent: bool,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub maps: usize,
    #[arg(long, default_value_t = 5)]
    pub per_map: usize,
    #[arg(long, default_value = "map")]
    pub prefix: String,
    /// Square room side in meters.
    #[arg(long)]
    pub size: Option<f64>,
    /// Rooms without boxes or partition walls.
    #[arg(long)]
    pub empty: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub tasks: TaskArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub harness: HarnessArgs,
    /// Run in a corrupted world, e.g. `damping=0.1`.
    #[arg(long)]
    pub corrupt: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BankArgs {
    #[command(flatten)]
    pub tasks: TaskArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Uniformly random actions from rest instead of policy rollouts.
    #[arg(long)]
    pub random: bool,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub tasks: TaskArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Corruption axes; all of them when omitted.
    #[arg(long, value_delimiter = ',')]
    pub axis: Vec<String>,
    /// Values to sweep; factors on dynamics axes, meters on odometry axes.
    #[arg(long, value_delimiter = ',')]
    pub factors: Vec<f64>,
    /// Action bank JSON; harvested from the episode set when omitted.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DbeliefArgs {
    /// Nominal DynParams JSON; configured dynamics when omitted.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Corrupted DynParams JSON file or `axis=value`.
    #[arg(long)]
    pub corrupt: Option<String>,
    /// Action bank JSON; a random bank when omitted.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub instant: bool,
    /// Print the full result as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct PlanFieldArgs {
    /// Map file (`.grid` or `.pgm` with a `.json` sidecar).
    #[arg(long)]
    pub map: PathBuf,
    /// Goal as `x,y` in meters.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    pub goal: Vec<f64>,
    /// Constant speed instead of slowing near walls.
    #[arg(long)]
    pub uniform: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct HeatmapArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub logs: Vec<PathBuf>,
    /// Map directory or map file of the logged episodes.
    #[arg(long)]
    pub map: PathBuf,
    /// Restrict to one map when the logs span several.
    #[arg(long)]
    pub map_id: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// Raster resolution; the map's when omitted.
    #[arg(long)]
    pub resolution: Option<f64>,
    /// Positive and negative PPM paths; float32 rasters go next to them.
    #[arg(long, num_args = 2, required = true)]
    pub out: Vec<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum ProbeCmd {
    /// Record estimator latents along policy rollouts, or from logs.
    Collect(ProbeCollectArgs),
    /// Fit a future-pose probe.
    Train(ProbeTrainArgs),
    /// Per-horizon errors of a probe.
    Eval(ProbeEvalArgs),
    /// Fit and evaluate the local occupancy probe.
    Occupancy(ProbeOccupancyArgs),
}

#[derive(Args, Debug)]
pub struct ProbeCollectArgs {
    #[command(flatten)]
    pub tasks: TaskArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Existing logs to convert instead of running episodes.
    #[arg(long, num_args = 1..)]
    pub logs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ProbeTrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = ["linear", "linear_prev_action", "latent_rollout"])]
    pub variant: Option<String>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ProbeEvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: String,
    /// Per-horizon CSV; also printed as JSON on stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProbeOccupancyArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub tasks: TaskArgs,
    /// Evaluation splits.
    #[arg(long, value_delimiter = ',', default_value = "val,test")]
    pub split: Vec<String>,
    /// Output prefix: `<prefix>.json`, `<prefix>.f32`, `<prefix>.ppm`.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the probe itself.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Aggregate predictions on this map into `<prefix>.<map>.f32`.
    #[arg(long)]
    pub aggregate_map: Option<String>,
}

#[derive(Args, Debug)]
pub struct ShapleyArgs {
    #[command(flatten)]
    pub tasks: TaskArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Episode set whose observations form the background.
    #[arg(long)]
    pub background: PathBuf,
    #[arg(long)]
    pub perms: Option<usize>,
    #[arg(long, value_parser = ["sr", "spl"])]
    pub metric: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub players: Vec<String>,
    /// Report JSON; CSV goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub logs: Vec<PathBuf>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[cfg(feature = "server")]
#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Episode set whose maps are served.
    #[command(flatten)]
    pub tasks: TaskArgs,
    /// Content-addressed store for uploaded banks, logs and rasters.
    #[arg(long, default_value = "navlab-store")]
    pub store: PathBuf,
    /// Allowed CORS origin; any origin when omitted.
    #[arg(long)]
    pub cors_origin: Option<String>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let json_errors = args.iter().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            if json_errors && e.use_stderr() {
                report_error("usage", &e.kind().to_string(), 2);
                return 2;
            }
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            if cli.json_errors {
                report_error(e.kind(), &e.to_string(), code);
            } else {
                eprintln!("error: {e}");
            }
            code
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: ErrorInner<'a>,
}

#[derive(Serialize)]
struct ErrorInner<'a> {
    kind: &'a str,
    message: &'a str,
    exit_code: i32,
}

fn report_error(kind: &str, message: &str, exit_code: i32) {
    let body = ErrorBody { error: ErrorInner { kind, message, exit_code } };
    eprintln!("{}", serde_json::to_string(&body).unwrap_or_default());
}

/// Effective configuration: flags over file over defaults.
fn load_config(cli: &Cli) -> Result<LabConfig> {
    let mut cfg = match &cli.config {
        Some(p) => LabConfig::load(p)?,
        None => LabConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Error::InvalidParams("--jobs must be > 0".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::GenEpisodes(a) => gen_episodes(&mut cfg, a),
        Command::Simulate(a) => simulate(&mut cfg, a),
        Command::Bank(a) => bank(&mut cfg, a),
        Command::Sweep(a) => sweep(&mut cfg, a),
        Command::Dbelief(a) => dbelief(&cfg, a),
        Command::PlanField(a) => plan_field(&cfg, a),
        Command::Heatmap(a) => heatmap(&cfg, a),
        Command::Probe(p) => match p {
            ProbeCmd::Collect(a) => probe_collect(&mut cfg, a),
            ProbeCmd::Train(a) => probe_train(&mut cfg, a),
            ProbeCmd::Eval(a) => probe_eval(a),
            ProbeCmd::Occupancy(a) => probe_occupancy(&mut cfg, a),
        },
        Command::Shapley(a) => shapley(&mut cfg, a),
        Command::Metrics(a) => metrics(a),
        #[cfg(feature = "server")]
        Command::Serve(a) => serve(&cfg, a),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(value)?)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn parse_corruption(s: &str) -> Result<CorruptionSpec> {
    let (axis, value) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidParams(format!("corruption `{s}` is not axis=value")))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParams(format!("corruption value `{value}` is not a number")))?;
    CorruptionSpec::new(CorruptionAxis::parse(axis.trim())?, value)
}

fn apply_harness(cfg: &mut LabConfig, h: &HarnessArgs) {
    if let Some(v) = h.obs_delay_ms {
        cfg.harness.obs_delay_ms = v;
    }
    if h.velocity_clip.is_some() {
        cfg.harness.velocity_clip = h.velocity_clip;
    }
    if h.zero_period.is_some() {
        cfg.harness.zero_period_s = h.zero_period;
    }
    cfg.harness.frame_reset |= h.frame_reset;
}

type PolicyFactory = Box<dyn Fn() -> Box<dyn Policy> + Sync>;

/// Validated policy constructor shared by the episode runners.
pub fn policy_factory(
    kind: PolicyKind,
    actions: &[usize],
    cfg: &LabConfig,
    cache: Arc<FieldCache>,
) -> Result<PolicyFactory> {
    let dynamics = cfg.world.dynamics;
    Ok(match kind {
        PolicyKind::Expert => {
            let expert = cfg.expert.clone();
            ExpertPolicy::new(expert.clone(), cache.clone())?;
            Box::new(move || Box::new(ExpertPolicy::new(expert.clone(), cache.clone()).expect("validated")))
        }
        PolicyKind::Zero => Box::new(move || Box::new(ConstantPolicy::zero(&dynamics))),
        PolicyKind::Replay => {
            if actions.is_empty() {
                return Err(Error::InvalidParams("--policy replay needs --actions".into()));
            }
            let actions = actions.to_vec();
            ReplayPolicy::new(actions.clone(), dynamics)?;
            Box::new(move || Box::new(ReplayPolicy::new(actions.clone(), dynamics).expect("validated")))
        }
    })
}

fn make_factory(cfg: &mut LabConfig, p: &PolicyArgs) -> Result<PolicyFactory> {
    if let Some(ps) = p.pose_source {
        cfg.expert.pose_source = ps.into();
    }
    policy_factory(p.policy, &p.actions, cfg, Arc::new(FieldCache::default()))
}

fn gen_episodes(cfg: &mut LabConfig, a: &GenArgs) -> Result<()> {
    if let Some(s) = a.size {
        cfg.map_gen.width_m = s;
        cfg.map_gen.height_m = s;
    }
    if a.empty {
        cfg.map_gen.n_boxes = 0;
        cfg.map_gen.wall_probability = 0.0;
    }
    let set = TaskSet::generate_desk(a.maps, a.per_map, &cfg.map_gen, &cfg.episode_gen, cfg.seed, &a.prefix)?;
    set.save(&a.out)?;
    print_json(&serde_json::json!({ "maps": set.maps.len(), "episodes": set.episodes.len() }))
}

fn simulate(cfg: &mut LabConfig, a: &SimulateArgs) -> Result<()> {
    let tasks = a.tasks.load()?;
    apply_harness(cfg, &a.harness);
    let world = match &a.corrupt {
        Some(c) => parse_corruption(c)?.apply(&cfg.world),
        None => cfg.world.clone(),
    };
    let needs_estimator = a.harness.estimator
        || a.harness.record_latent
        || (a.policy.policy == PolicyKind::Expert
            && a.policy.pose_source.map(PoseSource::from).unwrap_or(cfg.expert.pose_source) == PoseSource::Estimator);
    let factory = make_factory(cfg, &a.policy)?;
    let est = needs_estimator.then(|| cfg.estimator.clone());
    let logs = run_task_set(&tasks, &world, &cfg.harness, est.as_ref(), a.harness.record_latent, cfg.seed, factory)?;
    write_logs(&a.out, &logs)?;
    print_json(&summarize(&results_from_logs(&logs))?)
}

fn bank(cfg: &mut LabConfig, a: &BankArgs) -> Result<()> {
    let k = a.k.unwrap_or(cfg.bank.k);
    let horizon = a.horizon.unwrap_or(cfg.bank.horizon);
    let bank = if a.random {
        ActionBank::random(k, horizon, cfg.seed)?
    } else {
        let tasks = a.tasks.load()?;
        let factory = make_factory(cfg, &a.policy)?;
        build_action_bank(&tasks, &cfg.world, k, horizon, cfg.seed, factory)?
    };
    write_json(&a.out, &bank)?;
    print_json(&serde_json::json!({ "k": bank.sequences.len(), "horizon": bank.horizon }))
}

fn read_bank(path: &Path) -> Result<ActionBank> {
    let bank: ActionBank = serde_json::from_slice(&std::fs::read(path)?)?;
    bank.validate()?;
    Ok(bank)
}

/// Sweep values used when `--factors` is omitted.
pub fn default_factors(axis: CorruptionAxis) -> Vec<f64> {
    match axis {
        CorruptionAxis::Damping => vec![1.0, 0.5, 0.2, 0.1, 0.05, 0.02],
        CorruptionAxis::ResponseTime => vec![1.0, 2.0, 4.0, 8.0],
        CorruptionAxis::MaxVelocity => vec![1.0, 2.0, 3.0, 4.0],
        CorruptionAxis::OdomNoiseMean => vec![0.0, 0.002, 0.005, 0.01, 0.02],
        CorruptionAxis::OdomNoiseStd => vec![0.0, 0.005, 0.01, 0.02, 0.05],
    }
}

fn sweep(cfg: &mut LabConfig, a: &SweepArgs) -> Result<()> {
    let tasks = a.tasks.load()?;
    let axes: Vec<CorruptionAxis> = if a.axis.is_empty() {
        vec![
            CorruptionAxis::Damping,
            CorruptionAxis::ResponseTime,
            CorruptionAxis::MaxVelocity,
            CorruptionAxis::OdomNoiseMean,
            CorruptionAxis::OdomNoiseStd,
        ]
    } else {
        a.axis.iter().map(|s| CorruptionAxis::parse(s)).collect::<Result<_>>()?
    };
    let mut specs = Vec::new();
    for &axis in &axes {
        let values = if a.factors.is_empty() { default_factors(axis) } else { a.factors.clone() };
        for v in values {
            specs.push(CorruptionSpec::new(axis, v)?);
        }
    }
    let factory = make_factory(cfg, &a.policy)?;
    let bank = match &a.bank {
        Some(p) => read_bank(p)?,
        None => build_action_bank(&tasks, &cfg.world, cfg.bank.k, cfg.bank.horizon, cfg.seed, &factory)?,
    };
    let report = sensitivity_sweep(&tasks, &cfg.world, &specs, &bank, cfg.seed, &factory)?;
    write_atomic(&a.out, &report.to_csv()?)?;
    if let Some(j) = &a.json {
        write_json(j, &report)?;
    }
    print_json(&serde_json::json!({ "rows": report.rows.len() }))
}

fn read_params(path: &Path) -> Result<DynParams> {
    let p: DynParams = serde_json::from_slice(&std::fs::read(path)?)
        .map_err(|e| Error::InvalidParams(format!("{}: {e}", path.display())))?;
    p.validate()?;
    Ok(p)
}

fn dbelief(cfg: &LabConfig, a: &DbeliefArgs) -> Result<()> {
    let nominal = match &a.params {
        Some(p) => read_params(p)?,
        None => cfg.world.dynamics,
    };
    let corrupted = match &a.corrupt {
        None => nominal,
        Some(c) if Path::new(c).is_file() => read_params(Path::new(c))?,
        Some(c) => {
            let spec = parse_corruption(c)?;
            if !spec.axis.is_dynamics() {
                return Err(Error::InvalidParams("D_belief compares dynamics axes only".into()));
            }
            spec.apply_dynamics(&nominal)
        }
    };
    let bank = match &a.bank {
        Some(p) => read_bank(p)?,
        None => ActionBank::random(cfg.bank.k, cfg.bank.horizon, cfg.seed)?,
    };
    let mode = if a.instant { Mode::Instant } else { cfg.world.mode };
    let d = d_belief(&nominal, &corrupted, &bank, mode)?;
    if a.json {
        print_json(&d)
    } else {
        println!("{:?}", d.value);
        Ok(())
    }
}

fn plan_field(cfg: &LabConfig, a: &PlanFieldArgs) -> Result<()> {
    if a.goal.len() != 2 {
        return Err(Error::InvalidParams("--goal takes x,y".into()));
    }
    let grid = OccupancyGrid::load(&a.map)?;
    let goal = [a.goal[0], a.goal[1]];
    let v_max = cfg.expert.dynamics.v_max;
    let model = if a.uniform {
        SpeedModel::Uniform { v_max }
    } else {
        cfg.expert.speed_model()
    };
    let field = solve_time_field(&grid, goal, model)?;
    field.export(&a.out)?;
    print_json(&field.header())
}

fn heatmap(cfg: &LabConfig, a: &HeatmapArgs) -> Result<()> {
    let mut logs = read_log_files(&a.logs)?;
    if let Some(id) = &a.map_id {
        logs.retain(|l| &l.header.episode.map_id == id);
    }
    if logs.is_empty() {
        return Err(Error::Empty("logs"));
    }
    let first = logs[0].header.episode.map_id.clone();
    if logs.iter().any(|l| l.header.episode.map_id != first) {
        return Err(Error::InvalidParams("logs span several maps; pick one with --map-id".into()));
    }
    let maps = load_maps_for(&logs, &a.map)?;
    let grid = &maps[&first];
    let cache = FieldCache::default();
    let mut samples = Vec::new();
    for l in &logs {
        let m = log_quality(l, grid, &cache, &cfg.expert)?;
        samples.extend(quality_samples(l, &m));
    }
    let res = a.resolution.unwrap_or(grid.resolution());
    let b = grid.bounds();
    let (w, h) = (((b[2] - b[0]) / res).round() as usize, ((b[3] - b[1]) / res).round() as usize);
    let hm = quality_heatmap(&samples, w.max(1), h.max(1), res, [b[0], b[1]], a.sigma)?;
    let scale = hm.positive.iter().chain(&hm.negative).fold(0.0f64, |m, v| m.max(*v));
    let scale = (scale > 0.0).then_some(scale);
    write_atomic(&a.out[0], &encode_ppm(&hm.positive, w, h, scale))?;
    let negated: Vec<f64> = hm.negative.iter().map(|v| -v).collect();
    write_atomic(&a.out[1], &encode_ppm(&negated, w, h, scale))?;
    write_raster(&with_suffix(&a.out[0], ".f32"), &hm.header, &hm.positive)?;
    write_raster(&with_suffix(&a.out[1], ".f32"), &hm.header, &hm.negative)?;
    print_json(&serde_json::json!({ "samples": samples.len(), "map_id": first, "header": hm.header }))
}

fn probe_collect(cfg: &mut LabConfig, a: &ProbeCollectArgs) -> Result<()> {
    let logs = if a.logs.is_empty() {
        let tasks = a.tasks.load()?;
        let factory = make_factory(cfg, &a.policy)?;
        run_task_set(&tasks, &cfg.world, &cfg.harness, Some(&cfg.estimator), true, cfg.seed, factory)?
    } else {
        read_log_files(&a.logs)?
    };
    let mut split = cfg.split;
    split.seed = cfg.seed;
    let ds = LatentDataset::from_logs(&logs, &cfg.estimator, split)?;
    ds.save(&a.out)?;
    print_json(&serde_json::json!({ "episodes": ds.episodes.len(), "rows": ds.rows(), "dim": ds.dim }))
}

fn probe_train(cfg: &mut LabConfig, a: &ProbeTrainArgs) -> Result<()> {
    let ds = LatentDataset::load(&a.data)?;
    let mut pc = cfg.probe.clone();
    if let Some(v) = &a.variant {
        pc.variant = ProbeVariant::parse(v)?;
    }
    if let Some(h) = a.horizon {
        pc.horizon = h;
    }
    if let Some(s) = a.steps {
        pc.steps = s;
    }
    pc.seed = cfg.seed;
    let model = train_probe(&ds, &pc)?;
    write_json(&a.out, &model)?;
    print_json(&serde_json::json!({ "variant": model.variant(), "horizon": model.horizon }))
}

fn probe_eval(a: &ProbeEvalArgs) -> Result<()> {
    let ds = LatentDataset::load(&a.data)?;
    let model: ProbeModel = serde_json::from_slice(&std::fs::read(&a.model)?)?;
    let report = evaluate_probe(&model, &ds, Split::parse(&a.split)?)?;
    if let Some(out) = &a.out {
        write_atomic(out, &report.to_csv()?)?;
    }
    print_json(&report)
}

fn probe_occupancy(cfg: &mut LabConfig, a: &ProbeOccupancyArgs) -> Result<()> {
    let ds = LatentDataset::load(&a.data)?;
    let tasks = a.tasks.load()?;
    let splits = a.split.iter().map(|s| Split::parse(s)).collect::<Result<Vec<_>>>()?;
    let probe: OccupancyProbe = train_occupancy_probe(&ds, &tasks, &cfg.occupancy)?;
    let report = evaluate_occupancy(&probe, &ds, &tasks, &splits)?;
    let header = report.raster_header();
    write_raster(&with_suffix(&a.out, ".f32"), &header, &report.cell_accuracy)?;
    // centre the colour map on chance so poorly probed cells stand out
    let centred: Vec<f64> = report.cell_accuracy.iter().map(|v| 2.0 * v - 1.0).collect();
    write_atomic(&with_suffix(&a.out, ".ppm"), &encode_ppm(&centred, header.width, header.height, Some(1.0)))?;
    write_json(&with_suffix(&a.out, ".json"), &report)?;
    if let Some(m) = &a.model_out {
        write_json(m, &probe)?;
    }
    if let Some(id) = &a.aggregate_map {
        let grid = tasks.map(id)?;
        let split = splits.first().copied().unwrap_or(Split::Val);
        let agg = aggregate_on_map(&probe, &ds, grid, id, split);
        let mut h = crate::io::RasterHeader::new(grid.width(), grid.height(), grid.resolution(), grid.origin());
        h.label = Some("predicted occupancy".into());
        write_raster(&with_suffix(&a.out, &format!(".{id}.f32")), &h, &agg)?;
    }
    let (i, j, worst) = report.worst_cell();
    print_json(&serde_json::json!({
        "accuracy": report.accuracy,
        "all_free_accuracy": report.all_free_accuracy,
        "rows": report.rows,
        "worst_cell": [i, j],
        "worst_accuracy": worst,
        "worst_bearing_deg": cfg.occupancy.cell_bearing(i, j).to_degrees(),
    }))
}

fn shapley(cfg: &mut LabConfig, a: &ShapleyArgs) -> Result<()> {
    let tasks = a.tasks.load()?;
    let background_tasks = TaskSet::load_dir(&a.background)?;
    if let Some(p) = a.perms {
        cfg.shapley.permutations = p;
    }
    if let Some(m) = &a.metric {
        cfg.shapley.metric = ValueMetric::parse(m)?;
    }
    if !a.players.is_empty() {
        cfg.shapley.players = a.players.iter().map(|p| Player::parse(p)).collect::<Result<_>>()?;
    }
    let factory = make_factory(cfg, &a.policy)?;
    let bg_logs = run_task_set(
        &background_tasks,
        &cfg.world,
        &cfg.harness,
        None,
        false,
        crate::world::derive_seed(cfg.seed, 0x4247),
        &factory,
    )?;
    let background = ObservationBank::from_logs(&bg_logs);
    let report = shapley_importance(
        &tasks,
        &cfg.world,
        &cfg.harness,
        &background,
        &cfg.shapley.players,
        cfg.shapley.metric,
        cfg.shapley.permutations,
        cfg.seed,
        factory,
    )?;
    write_json(&a.out, &report)?;
    write_atomic(&a.out.with_extension("csv"), &report.to_csv()?)?;
    print_json(&report)
}

fn metrics(a: &MetricsArgs) -> Result<()> {
    let logs = read_log_files(&a.logs)?;
    let csv = metrics_csv(&results_from_logs(&logs))?;
    match &a.out {
        Some(p) => write_atomic(p, &csv),
        None => {
            print!("{}", String::from_utf8_lossy(&csv));
            Ok(())
        }
    }
}

#[cfg(feature = "server")]
fn serve(cfg: &LabConfig, a: &ServeArgs) -> Result<()> {
    let tasks = if a.tasks.tasks.is_some() || a.tasks.map.is_some() || a.tasks.episodes.is_some() {
        a.tasks.load()?
    } else {
        TaskSet::default()
    };
    let state = crate::service::AppState::new(cfg.clone(), tasks, &a.store)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(crate::service::serve(state, &a.host, a.port, a.cors_origin.clone()))
}
