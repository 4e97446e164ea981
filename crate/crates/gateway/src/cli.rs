use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use entrain_core::arena::{
    compare_methods, observe, prepare_models, read_jsonl, run_episode_logged, write_jsonl,
    ArenaConfig, ComparisonRow, EpisodeReport, Method, Models, SetupConfig,
};
use entrain_core::discriminator::{bce_loss, build_corpus, train, Architecture, CorpusConfig, TrainConfig};
use entrain_core::iohmm::{em_fit, EmConfig};
use entrain_core::policy::{select_action, FepConfig};
use entrain_core::roadmap::{action_features, build_roadmap, fit_kinematic_bound, sample_sequences, RoadmapConfig};
use entrain_core::signal::io::PoseFile;
use entrain_core::signal::{gen_synthetic_interaction, negative_sample, PreprocessConfig, Recording, Side, SyntheticConfig};
use entrain_core::{Belief, Discriminator, IoHmm, PoseSeq, Roadmap};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::server::{serve, ServeConfig, DEFAULT_BIND};

#[derive(Debug, Parser)]
#[command(name = "entrain", version, about = "Free-energy gesture agent", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Outlier removal, resampling and low-pass filtering of a pose file
    Preprocess(PreprocessArgs),
    /// Write a synthetic two-person recording
    GenSynthetic(GenSyntheticArgs),
    /// Train the interaction discriminator on a recording
    TrainDiscriminator(TrainDiscriminatorArgs),
    /// Accuracy and mean BCE of a discriminator on real and shifted windows
    EvalDiscriminator(EvalDiscriminatorArgs),
    /// Discriminator verdicts for every full window of a recording
    Observe(ObserveArgs),
    /// Build the posture roadmap from the agent stream of a recording
    BuildRoadmap(BuildRoadmapArgs),
    /// Random walks on a roadmap
    Sample(SampleArgs),
    /// Fit the IO-HMM with EM
    TrainIohmm(TrainIohmmArgs),
    /// Pick the least-free-energy candidate sequence
    Select(SelectArgs),
    /// Train all three models on a synthetic recording
    Prepare(PrepareArgs),
    /// Run one episode against a partner stream and log every tick
    Simulate(SimulateArgs),
    /// Pairwise Mann-Whitney comparison of logged episodes
    Compare(CompareArgs),
    /// Live websocket service
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8.0)]
    resample_hz: f64,
    #[arg(long, default_value_t = 4.0)]
    cutoff_hz: f64,
    #[arg(long, default_value_t = 3.5)]
    outlier_z: f64,
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    #[arg(long)]
    frames: usize,
    #[arg(long)]
    coupling: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    dim: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ArchChoice {
    Temporal,
    Published,
}

#[derive(Debug, Args)]
pub struct TrainDiscriminatorArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Total windows, half real and half shifted; all real windows if unset
    #[arg(long)]
    n_windows: Option<usize>,
    #[arg(long, default_value_t = 24)]
    window_len: usize,
    #[arg(long, value_enum, default_value_t = ArchChoice::Temporal)]
    arch: ArchChoice,
    /// JSON training config; flags above take precedence
    #[arg(long)]
    cfg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalDiscriminatorArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    stride: usize,
}

#[derive(Debug, Args)]
pub struct ObserveArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Debug, Args)]
pub struct BuildRoadmapArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    fuse_eps: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long, default_value_t = 0)]
    start: usize,
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 32)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainIohmmArgs {
    /// Pose file; the agent stream supplies the actions
    #[arg(long)]
    actions: PathBuf,
    /// JSON list of booleans or scores, or the output of `observe`
    #[arg(long)]
    observations: PathBuf,
    #[arg(long, default_value_t = 3)]
    states: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Threshold for numeric observations
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    hmm: PathBuf,
    #[arg(long)]
    map: PathBuf,
    /// Belief JSON (`{"probs": [..]}` or a plain list); the initial prior if unset
    #[arg(long)]
    belief: Option<PathBuf>,
    #[arg(long)]
    cfg: Option<PathBuf>,
    /// Current roadmap node; the first start node if unset
    #[arg(long)]
    node: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    cfg: Option<PathBuf>,
    /// Also write a held-out synthetic partner recording of this many frames
    #[arg(long, default_value_t = 600)]
    partner_frames: usize,
}

#[derive(Debug, Args)]
pub struct ModelPaths {
    #[arg(long)]
    hmm: PathBuf,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    disc: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_method)]
    method: Method,
    #[arg(long)]
    partner: PathBuf,
    #[command(flatten)]
    models: ModelPaths,
    #[arg(long, default_value_t = 500)]
    ticks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// JSON arena config
    #[arg(long)]
    cfg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long = "in", num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    models: ModelPaths,
    #[arg(long, env = "FEP_BIND", default_value = DEFAULT_BIND)]
    bind: String,
    #[arg(long)]
    cfg: Option<PathBuf>,
    #[arg(long, default_value_t = 5.0)]
    heartbeat_secs: f64,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: entrain_core::Error| e.to_string())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    init_logging(matches!(cli.command, Command::Serve(_)));
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn init_logging(verbose: bool) {
    let default = if verbose { "info" } else { "warn" };
    let filter = tracing_subscriber::EnvFilter::try_from_env("FEP_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Preprocess(a) => preprocess(a),
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::TrainDiscriminator(a) => train_discriminator(a),
        Command::EvalDiscriminator(a) => eval_discriminator(a),
        Command::Observe(a) => observe_cmd(a),
        Command::BuildRoadmap(a) => build_roadmap_cmd(a),
        Command::Sample(a) => sample(a),
        Command::TrainIohmm(a) => train_iohmm(a),
        Command::Select(a) => select(a),
        Command::Prepare(a) => prepare(a),
        Command::Simulate(a) => simulate(a),
        Command::Compare(a) => compare(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes to stdout; a reader that went away early is not an error.
fn emit(f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match f(&mut out).and_then(|()| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    emit(|out| writeln!(out, "{text}"))
}

fn load_poses(path: &Path) -> Result<PoseFile> {
    PoseFile::load(path).with_context(|| format!("loading {}", path.display()))
}

fn load_recording(path: &Path) -> Result<Recording<f64>> {
    load_poses(path)?
        .recording()
        .with_context(|| format!("{} is not a two-person recording", path.display()))
}

fn load_stream(path: &Path, side: Side) -> Result<PoseSeq> {
    load_poses(path)?
        .sequence(side)
        .with_context(|| format!("reading {side:?} stream of {}", path.display()))
}

fn load_disc(path: &Path) -> Result<Discriminator> {
    Discriminator::load(path).with_context(|| format!("loading discriminator {}", path.display()))
}

fn load_hmm(path: &Path) -> Result<IoHmm> {
    IoHmm::load(path).with_context(|| format!("loading IO-HMM {}", path.display()))
}

fn load_map(path: &Path) -> Result<Roadmap> {
    Roadmap::load(path).with_context(|| format!("loading roadmap {}", path.display()))
}

fn load_models(p: &ModelPaths) -> Result<Models> {
    Ok(Models::new(load_hmm(&p.hmm)?, load_map(&p.map)?, load_disc(&p.disc)?)?)
}

fn load_cfg<T: DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), |p| read_json(p))
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let file = load_poses(&a.input)?;
    let cfg = PreprocessConfig {
        outlier_z: a.outlier_z,
        resample_hz: a.resample_hz,
        cutoff_hz: a.cutoff_hz,
    };
    let seqs = file
        .persons
        .keys()
        .map(|&side| Ok(cfg.apply(&file.sequence::<f64>(side)?)?))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&PoseSeq> = seqs.iter().collect();
    PoseFile::from_sequences(&refs)?
        .save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))
}

fn gen_synthetic(a: GenSyntheticArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        dim: a.dim,
        ..SyntheticConfig::default()
    };
    let (agent, partner) = gen_synthetic_interaction::<f64>(a.frames, a.coupling, a.seed, &cfg)?;
    PoseFile::from_sequences(&[&agent, &partner])?
        .save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))
}

fn train_discriminator(a: TrainDiscriminatorArgs) -> Result<()> {
    let rec = load_recording(&a.data)?;
    let mut cfg: TrainConfig = load_cfg(a.cfg.as_ref())?;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let corpus = CorpusConfig {
        window_len: a.window_len,
        shift_min: CorpusConfig::default().shift_min.max(2 * a.window_len),
        n_windows: a.n_windows,
        ..CorpusConfig::default()
    };
    let (windows, scale) = build_corpus(&rec, &corpus, a.seed)?;
    let arch = match a.arch {
        ArchChoice::Temporal => Architecture::default_for(rec.dim(), a.window_len)?,
        ArchChoice::Published => Architecture::published(rec.dim(), a.window_len)?,
    };
    let (mut disc, report) = train(&windows, arch, &cfg, a.seed)?;
    disc.scale_params = Some(scale);
    disc.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    print_json(&report)
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    n: usize,
    accuracy: f64,
    mean_bce: f64,
}

fn eval_discriminator(a: EvalDiscriminatorArgs) -> Result<()> {
    let disc = load_disc(&a.model)?;
    let rec = load_recording(&a.data)?;
    let l = disc.window_len();
    let real = rec.windows(l, a.stride.max(1));
    let fakes = negative_sample(&rec, &real, 2 * l, a.seed)?;
    let (mut correct, mut loss, mut n) = (0usize, 0.0, 0usize);
    for (w, label) in real.iter().map(|w| (w, true)).chain(fakes.windows.iter().map(|w| (w, false))) {
        let p = disc.score(w)?;
        correct += usize::from((p >= 0.5) == label);
        loss += bce_loss(p, label);
        n += 1;
    }
    if n == 0 {
        bail!("{} is too short for {l}-frame windows", a.data.display());
    }
    print_json(&EvalSummary {
        n,
        accuracy: correct as f64 / n as f64,
        mean_bce: loss / n as f64,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Observations {
    /// Frame index of the first verdict (the end of the first window).
    first_frame: usize,
    scores: Vec<f64>,
    o: Vec<bool>,
}

fn observe_cmd(a: ObserveArgs) -> Result<()> {
    let disc = load_disc(&a.model)?;
    let rec = load_recording(&a.data)?;
    let scores = observe(&disc, &rec)?;
    let out = Observations {
        first_frame: disc.window_len() - 1,
        o: scores.iter().map(|&s| s >= a.threshold).collect(),
        scores,
    };
    write_text(&a.out, &serde_json::to_string(&out)?)
}

fn build_roadmap_cmd(a: BuildRoadmapArgs) -> Result<()> {
    let agent = load_stream(&a.data, Side::AgentSide)?;
    let bound = fit_kinematic_bound(std::slice::from_ref(&agent))?;
    let cfg = RoadmapConfig {
        fuse_eps: a.fuse_eps,
        lambda: a.lambda,
        ..RoadmapConfig::default()
    };
    let map = build_roadmap(std::slice::from_ref(&agent), &bound, &cfg)?;
    map.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    print_json(&serde_json::json!({ "nodes": map.len(), "edges": map.n_edges() }))
}

fn sample(a: SampleArgs) -> Result<()> {
    let map = load_map(&a.map)?;
    print_json(&sample_sequences(&map, a.start, a.k, a.m, a.seed)?)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ObservationFile {
    Flags(Vec<bool>),
    Scores(Vec<f64>),
    Observed(Observations),
}

fn train_iohmm(a: TrainIohmmArgs) -> Result<()> {
    let agent = load_stream(&a.actions, Side::AgentSide)?;
    let obs: Vec<bool> = match read_json::<ObservationFile>(&a.observations)? {
        ObservationFile::Flags(o) => o,
        ObservationFile::Scores(s) => s.iter().map(|&x| x >= a.threshold).collect(),
        ObservationFile::Observed(o) => o.o,
    };
    // Verdicts belong to the last frames: a window scores the frame it ends on.
    if obs.is_empty() || obs.len() > agent.len() {
        bail!(
            "{} observations for {} action frames; need between 1 and the frame count",
            obs.len(),
            agent.len()
        );
    }
    let actions: Vec<Vec<f64>> = agent.frames[agent.len() - obs.len()..].iter().map(action_features).collect();
    let mut cfg = EmConfig::default();
    if let Some(m) = a.max_iter {
        cfg.max_iter = m;
    }
    if let Some(r) = a.restarts {
        cfg.restarts = r;
    }
    let (hmm, trace) = em_fit(&obs, &actions, a.states, &cfg, a.seed)?;
    hmm.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    print_json(&trace)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BeliefFile {
    Full(Belief),
    Probs(Vec<f64>),
}

#[derive(Serialize)]
struct Selection {
    chosen: usize,
    sequence: entrain_core::ActionSequence,
    candidates: Vec<CandidateScore>,
}

#[derive(Serialize)]
struct CandidateScore {
    nodes: Vec<usize>,
    free_energy: f64,
    /// Per-step terms.
    entropy: Vec<f64>,
    pragmatic: Vec<f64>,
}

fn select(a: SelectArgs) -> Result<()> {
    let hmm = load_hmm(&a.hmm)?;
    let map = load_map(&a.map)?;
    let cfg: FepConfig = load_cfg(a.cfg.as_ref())?;
    let node = a.node.or_else(|| map.start_nodes.first().copied()).unwrap_or(0);
    if node >= map.len() {
        bail!("node {node} is outside the roadmap ({} nodes)", map.len());
    }
    let belief = match &a.belief {
        Some(p) => match read_json::<BeliefFile>(p)? {
            BeliefFile::Full(b) => b,
            BeliefFile::Probs(probs) => Belief {
                probs,
                log_evidence: 0.0,
            },
        },
        None => Belief::prior(&hmm, &action_features(&map.nodes[node])),
    };
    if belief.n_states() != hmm.n_states || !belief.is_valid() {
        bail!("belief must be a distribution over {} states", hmm.n_states);
    }
    let (sequence, scored) = select_action(&hmm, &belief, &map, node, &cfg, a.seed)?;
    let chosen = entrain_core::policy::argmin(&scored).expect("non-empty candidates");
    print_json(&Selection {
        chosen,
        sequence,
        candidates: scored
            .into_iter()
            .map(|c| CandidateScore {
                nodes: c.sequence.nodes,
                free_energy: c.free_energy,
                entropy: c.entropy,
                pragmatic: c.pragmatic,
            })
            .collect(),
    })
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let cfg: SetupConfig = load_cfg(a.cfg.as_ref())?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let (models, report) = prepare_models(&cfg, a.seed)?;
    let path = |name: &str| a.out_dir.join(name);
    models.disc.save(path("disc.json"))?;
    models.map.save(path("map.json"))?;
    models.hmm.save(path("hmm.json"))?;
    if a.partner_frames > 0 {
        let (agent, partner) =
            gen_synthetic_interaction::<f64>(a.partner_frames, cfg.coupling, a.seed.wrapping_add(1000), &cfg.synthetic)?;
        PoseFile::from_sequences(&[&agent, &partner])?.save(&path("partner.json"))?;
    }
    print_json(&report)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let models = Arc::new(load_models(&a.models)?);
    let partner = load_stream(&a.partner, Side::PartnerSide)?;
    let cfg: ArenaConfig = load_cfg(a.cfg.as_ref())?;
    let (report, records) = run_episode_logged(a.method, &partner, &models, &cfg, Some(a.ticks), a.seed)?;
    let file = File::create(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    write_jsonl(&records, BufWriter::new(file))?;
    eprintln!(
        "{}: {} ticks, mean score {:.4}, intensity {:.4}",
        report.method, report.ticks, report.mean_score, report.intensity
    );
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let mut by: BTreeMap<Method, Vec<EpisodeReport>> = BTreeMap::new();
    for p in &a.inputs {
        let file = File::open(p).with_context(|| format!("reading {}", p.display()))?;
        let records = read_jsonl(BufReader::new(file)).with_context(|| format!("parsing {}", p.display()))?;
        let report = EpisodeReport::from_records(&records).with_context(|| format!("summarizing {}", p.display()))?;
        by.entry(report.method).or_default().push(report);
    }
    if by.len() < 2 {
        bail!("need episodes of at least two methods, got {}", by.len());
    }
    let rows = compare_methods(&by);
    if a.json {
        return print_json(&rows);
    }
    emit(|out| write_table(out, &by, &rows))
}

fn write_table(
    out: &mut dyn Write,
    by: &BTreeMap<Method, Vec<EpisodeReport>>,
    rows: &[ComparisonRow],
) -> std::io::Result<()> {
    for (m, reports) in by {
        writeln!(out, "{m}: {} episodes", reports.len())?;
    }
    writeln!(
        out,
        "{:<11} {:<11} {:<9} {:>23} {:>23} {:>8} {:>9} {:>9} {:>9}",
        "a", "b", "metric", "a median [q1, q3]", "b median [q1, q3]", "U", "p", "p(a>b)", "p(a<b)"
    )?;
    for r in rows {
        for (name, c) in [("score", &r.score), ("intensity", &r.intensity)] {
            let cell = |s: &entrain_core::arena::Summary| format!("{:.4} [{:.4}, {:.4}]", s.median, s.q1, s.q3);
            writeln!(
                out,
                "{:<11} {:<11} {:<9} {:>23} {:>23} {:>8.1} {:>9.4} {:>9.4} {:>9.4}",
                r.a.as_str(),
                r.b.as_str(),
                name,
                cell(&c.a),
                cell(&c.b),
                c.test.u_x,
                c.test.p_two_sided,
                c.test.p_greater,
                c.test.p_less
            )?;
        }
    }
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let models = Arc::new(load_models(&a.models)?);
    let arena: ArenaConfig = load_cfg(a.cfg.as_ref())?;
    arena.validate()?;
    if !(a.heartbeat_secs > 0.0) {
        bail!("heartbeat must be positive");
    }
    let cfg = ServeConfig {
        arena,
        heartbeat: Duration::from_secs_f64(a.heartbeat_secs),
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .with_context(|| format!("binding {}", a.bind))?;
        eprintln!("listening on {}", listener.local_addr()?);
        serve(listener, models, cfg).await?;
        Ok(())
    })
}
