//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use kinact_core::act::{ActModel, Head, TrainConfig, Variant};
use kinact_core::augment::Augmenter;
use kinact_core::biomech::BiomechModel;
use kinact_core::camgeo::{triangulate_frame, GapFiller, Keypoints2D, TriangulationConfig};
use kinact_core::ik::{Budget, IkConfig, IkSession, Unlimited};
use kinact_core::metrics::EvalReport;
use kinact_core::runtime::{ActionMessage, DEFAULT_CAPACITY};
use kinact_core::synth::{CorpusConfig, MotionConfig};
use log::{info, warn};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::{self, ActOverrides, AblationReport, ViewpointConfig};
use crate::formats::{self, Checkpoint};
use crate::timing::Deadline;
use crate::udp::{self, BoardSnapshot, Broadcaster, ListenOptions, PenListener};

#[derive(Debug, Parser)]
#[command(name = "kinact", version, about = "Joint-angle action recognition pipeline")]
pub struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Triangulate multi-camera keypoints into joint centers (and optionally markers).
    Triangulate(TriangulateArgs),
    /// Fit joint angles to marker frames.
    Ik(IkArgs),
    /// Generate a synthetic labeled corpus.
    Synth(SynthArgs),
    /// Train the lower- and upper-limb classifiers.
    Train(TrainArgs),
    /// Evaluate a pair of classifiers on a corpus split.
    Eval(EvalArgs),
    /// Train and compare the four classifier variants over several seeds.
    Ablate(AblateArgs),
    /// Compare joint-angle and joint-center inputs under rigid transforms.
    TransformJcp(TransformArgs),
    /// Replay joint-angle frames through the online recognizer and broadcast results.
    Serve(ServeArgs),
    /// Run the pen subscriber.
    Pen(PenArgs),
    /// Report throughput per pipeline stage.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct TriangulateArgs {
    /// Calibration JSON.
    #[arg(long)]
    pub calib: PathBuf,
    /// Keypoint NDJSON, one record per camera and frame.
    #[arg(long)]
    pub keypoints: PathBuf,
    /// Joint-center NDJSON output.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write marker NDJSON.
    #[arg(long)]
    pub markers_out: Option<PathBuf>,
    /// KALW1 augmenter weights; the model's geometric fallback otherwise.
    #[arg(long)]
    pub augmenter: Option<PathBuf>,
    /// Model JSON used by the fallback; the bundled template otherwise.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    pub min_confidence: f64,
    /// Camera frame rate (Hz).
    #[arg(long, default_value_t = 10.0)]
    pub rate: f64,
    /// Frames a missing joint center is carried forward.
    #[arg(long, default_value_t = 3)]
    pub max_fill: u32,
}

#[derive(Debug, Args)]
pub struct IkArgs {
    /// Model JSON; the bundled template otherwise.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Marker NDJSON input.
    #[arg(long)]
    pub markers: PathBuf,
    /// Joint-angle NDJSON output.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    pub damping: f64,
    #[arg(long, default_value_t = 10)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// Per-frame wall-clock budget in ms; 0 disables it.
    #[arg(long, default_value_t = 0.0)]
    pub budget_ms: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Trial length (s).
    #[arg(long, default_value_t = 180.0)]
    pub duration: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Joint-angle noise (rad).
    #[arg(long, default_value_t = 0.02)]
    pub noise_sigma: f64,
    /// Frame rate (Hz).
    #[arg(long, default_value_t = 10.0)]
    pub rate: f64,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct TrainOpts {
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Frames between training windows.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Frames between validation positions.
    #[arg(long, default_value_t = 1)]
    pub val_stride: usize,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub mlp_dim: Option<usize>,
    /// Smoothing-loss weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Smoothing-loss clamp.
    #[arg(long)]
    pub tau: Option<f64>,
}

impl TrainOpts {
    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            stride: self.stride,
            val_stride: self.val_stride,
            seed,
        }
    }

    fn overrides(&self) -> ActOverrides {
        ActOverrides {
            window: self.window,
            layers: self.layers,
            d_model: self.d_model,
            ffn_dim: self.ffn_dim,
            mlp_dim: self.mlp_dim,
            lambda: self.lambda,
            tau: self.tau,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory; CORPUS/model when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "sar", value_parser = parse_variant)]
    pub variant: Variant,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct WeightArgs {
    /// Directory holding lower.kadc and upper.kadc.
    #[arg(long, conflicts_with_all = ["weights_lower", "weights_upper"])]
    pub weights: Option<PathBuf>,
    #[arg(long, requires = "weights_upper")]
    pub weights_lower: Option<PathBuf>,
    #[arg(long, requires = "weights_lower")]
    pub weights_upper: Option<PathBuf>,
}

impl WeightArgs {
    fn paths(&self) -> Option<(PathBuf, PathBuf)> {
        match (&self.weights, &self.weights_lower, &self.weights_upper) {
            (Some(d), _, _) => Some((d.join("lower.kadc"), d.join("upper.kadc"))),
            (None, Some(l), Some(u)) => Some((l.clone(), u.clone())),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub weights: WeightArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// Report JSON; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-class CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Number of training seeds, starting at --seed.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    /// Variants to compare; all four when omitted.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    pub variants: Vec<Variant>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub stride: usize,
    #[arg(long, default_value_t = 5)]
    pub val_stride: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Table JSON; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One CSV row per variant.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub transforms: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub stride: usize,
    #[arg(long, default_value_t = 5)]
    pub val_stride: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Reuse trained joint-angle classifiers instead of training them.
    #[command(flatten)]
    pub weights: WeightArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Report JSON; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub weights_lower: PathBuf,
    #[arg(long)]
    pub weights_upper: PathBuf,
    /// Destination host:port; messages are only written locally when omitted.
    #[arg(long)]
    pub dest: Option<String>,
    /// Frames per second; 0 replays as fast as possible.
    #[arg(long, default_value_t = 10.0)]
    pub rate: f64,
    /// Joint-angle NDJSON (IK output or a corpus trial file).
    #[arg(long)]
    pub input: PathBuf,
    /// Also write every message as NDJSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Latency report JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Confirmation buffer length in frames.
    #[arg(long, default_value_t = DEFAULT_CAPACITY)]
    pub capacity: usize,
}

#[derive(Debug, Args)]
pub struct PenArgs {
    /// Port, or host:port, to listen on.
    #[arg(long)]
    pub listen: String,
    /// Board JSON, rewritten whenever the pen changes.
    #[arg(long)]
    pub board_out: PathBuf,
    /// Exit after this many messages.
    #[arg(long)]
    pub max_messages: Option<u64>,
    /// Exit after this many seconds without messages.
    #[arg(long)]
    pub idle_timeout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Classifier weights; freshly initialized default models otherwise.
    #[command(flatten)]
    pub weights: WeightArgs,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Results JSON; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|_| format!("expected one of {}", Variant::ALL.map(Variant::name).join(", ")))
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Input(format!("{}: no such file", p.display())))
    }
}

fn require_dir(p: &Path) -> Result<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(Error::Input(format!("{}: no such directory", p.display())))
    }
}

/// The parent directory of an output file must already exist.
fn require_parent(p: &Path) -> Result<()> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => require_dir(d),
        _ => Ok(()),
    }
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => formats::write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value).map_err(Error::runtime)?);
            Ok(())
        }
    }
}

fn standard_model(path: Option<&Path>) -> Result<BiomechModel> {
    let m = formats::model_or_default(path)?;
    m.validate_standard().map_err(Error::input)?;
    Ok(m)
}

fn load_pair(lower: &Path, upper: &Path) -> Result<(Checkpoint, Checkpoint)> {
    let (lo, up) = (formats::load_checkpoint(lower)?, formats::load_checkpoint(upper)?);
    if lo.head != Head::Lower || up.head != Head::Upper {
        return Err(Error::Input(format!("{} must hold the lower-limb head and {} the upper-limb head", lower.display(), upper.display())));
    }
    Ok((lo, up))
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Triangulate(a) => triangulate(a),
        Command::Ik(a) => ik(a),
        Command::Synth(a) => synth(a, seed),
        Command::Train(a) => train(a, seed),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a, seed),
        Command::TransformJcp(a) => transform_jcp(a, seed),
        Command::Serve(a) => serve(a),
        Command::Pen(a) => pen(a),
        Command::Bench(a) => bench(a, seed),
    }
}

/// Group records into synchronized frames: consecutive records within half a
/// frame period of the group's first timestamp.
fn group_frames(mut records: Vec<Keypoints2D>, rate: f64) -> Vec<Vec<Keypoints2D>> {
    records.sort_by(|a, b| a.t.total_cmp(&b.t));
    let tol = 0.5 / rate;
    let mut out: Vec<Vec<Keypoints2D>> = Vec::new();
    for r in records {
        match out.last_mut() {
            Some(g) if r.t - g[0].t < tol && g.iter().all(|k| k.camera_id != r.camera_id) => g.push(r),
            _ => out.push(vec![r]),
        }
    }
    out
}

fn triangulate(a: TriangulateArgs) -> Result<()> {
    require_file(&a.calib)?;
    require_file(&a.keypoints)?;
    require_parent(&a.out)?;
    if let Some(p) = &a.markers_out {
        require_parent(p)?;
    }
    if !(a.rate > 0.0) || !(0.0..1.0).contains(&a.min_confidence) {
        return Err(Error::Input("--rate must be positive and --min-confidence in [0, 1)".into()));
    }
    let cams = formats::load_calibration(&a.calib)?;
    let frames = group_frames(formats::read_keypoints(&a.keypoints)?, a.rate);
    let cfg = TriangulationConfig {
        min_confidence: a.min_confidence,
        rate_hz: a.rate,
        max_fill: a.max_fill,
        ..TriangulationConfig::default()
    };
    let mut filler = GapFiller::new(cfg.max_fill);
    let mut jcps = Vec::with_capacity(frames.len());
    for g in &frames {
        let mut jc = triangulate_frame(&cams, g, &cfg).map_err(Error::input)?;
        filler.apply(&mut jc);
        jcps.push(jc);
    }
    formats::write_jcps(&a.out, &jcps)?;
    info!("{} frames triangulated from {} cameras", jcps.len(), cams.len());
    if let Some(out) = &a.markers_out {
        let model = formats::model_or_default(a.model.as_deref())?;
        let mut aug = match &a.augmenter {
            Some(p) => Augmenter::lstm(formats::read_kalw(p)?).map_err(Error::input)?,
            None => Augmenter::Fallback(model),
        };
        let markers = jcps.iter().map(|j| aug.apply(j)).collect::<std::result::Result<Vec<_>, _>>().map_err(Error::runtime)?;
        formats::write_markers(out, &markers)?;
    }
    Ok(())
}

fn ik(a: IkArgs) -> Result<()> {
    require_file(&a.markers)?;
    require_parent(&a.out)?;
    let model = formats::model_or_default(a.model.as_deref())?;
    let cfg = IkConfig {
        damping: a.damping,
        max_iterations: a.max_iterations,
        tol: a.tol,
        time_budget_ms: a.budget_ms,
        weights: Vec::new(),
    };
    cfg.validate().map_err(Error::input)?;
    let markers = formats::read_markers(&a.markers, model.n_markers())?;
    let mut session = IkSession::new(model, cfg).map_err(Error::input)?;
    let mut frames = Vec::with_capacity(markers.len());
    let mut res = Vec::with_capacity(markers.len());
    for m in &markers {
        let budget: Box<dyn Budget> = if a.budget_ms > 0.0 { Box::new(Deadline::after_ms(a.budget_ms)) } else { Box::new(Unlimited) };
        let sol = session.solve(m, budget.as_ref()).map_err(Error::runtime)?;
        if !sol.converged {
            log::debug!("frame t={} stopped after {} iterations", m.t, sol.iterations_used);
        }
        res.push(sol.residual_rms);
        frames.push(sol.frame);
    }
    formats::write_angles(&a.out, &frames, Some(&res))?;
    info!("{} frames solved", frames.len());
    Ok(())
}

fn synth(a: SynthArgs, seed: u64) -> Result<()> {
    let model = standard_model(a.model.as_deref())?;
    let cfg = CorpusConfig {
        trials: a.trials,
        seed,
        duration: a.duration,
        motion: MotionConfig {
            rate_hz: a.rate,
            noise_sigma: a.noise_sigma,
            ..MotionConfig::default()
        },
    };
    cfg.motion.validate().map_err(Error::input)?;
    let corpus = experiments::synth_corpus(&cfg, seed, &model)?;
    formats::write_corpus(&a.out, &corpus)?;
    let frames: usize = corpus.trials.iter().map(|t| t.len()).sum();
    info!("{} trials, {frames} frames written to {}", corpus.trials.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    variant: Variant,
    train: TrainConfig,
    heads: Vec<experiments::HeadSummary>,
}

fn train(a: TrainArgs, seed: u64) -> Result<()> {
    require_dir(&a.corpus)?;
    let out = a.out.clone().unwrap_or_else(|| a.corpus.join("model"));
    let model = standard_model(a.model.as_deref())?;
    let corpus = formats::read_corpus(&a.corpus)?;
    let tc = a.opts.train_config(seed);
    let ov = a.opts.overrides();
    for head in Head::BOTH {
        ov.config(head, experiments::head_dofs(&model, head).len(), a.variant).validate().map_err(Error::input)?;
    }
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let heads = experiments::train_heads(&corpus, &model, a.variant, &tc, &ov)?;
    for h in &heads {
        formats::save_checkpoint(&out.join(format!("{}.kadc", h.checkpoint.head.name())), &h.checkpoint)?;
    }
    formats::write_json(
        &out.join("history.json"),
        &TrainSummary {
            variant: a.variant,
            train: tc,
            heads: heads.iter().map(|h| h.summary()).collect(),
        },
    )
}

fn split_trials(corpus: &formats::Corpus, split: SplitName) -> Vec<&kinact_core::act::LabeledSequence> {
    let s = &corpus.manifest.split;
    match split {
        SplitName::Train => corpus.select(&s.train),
        SplitName::Val => corpus.select(&s.val),
        SplitName::Test => corpus.select(&s.test),
        SplitName::All => corpus.trials.iter().collect(),
    }
}

#[derive(Serialize)]
struct ClassCsvRow {
    head: &'static str,
    label: u8,
    ap: Option<f64>,
    precision: f64,
    recall: f64,
    f1: f64,
    support: usize,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_eval_csv(path: &Path, rep: &EvalReport) -> Result<()> {
    let rows = [(Head::Lower, &rep.lower), (Head::Upper, &rep.upper)].into_iter().flat_map(|(h, r)| {
        r.classes.iter().map(move |c| ClassCsvRow {
            head: h.name(),
            label: c.label,
            ap: c.ap,
            precision: c.precision,
            recall: c.recall,
            f1: c.f1,
            support: c.support,
        })
    });
    write_csv(path, rows)
}

fn eval(a: EvalArgs) -> Result<()> {
    require_dir(&a.corpus)?;
    let (lo_p, up_p) = a.weights.paths().ok_or_else(|| Error::Input("give --weights DIR or --weights-lower and --weights-upper".into()))?;
    for p in [&a.out, &a.csv].into_iter().flatten() {
        require_parent(p)?;
    }
    let (lo, up) = load_pair(&lo_p, &up_p)?;
    let corpus = formats::read_corpus(&a.corpus)?;
    let trials = split_trials(&corpus, a.split);
    let rep = experiments::evaluate_heads(&lo, &up, &trials)?;
    info!("acc {:.4} mAP {:.4} F1 {:.4} binary acc {:.4} fps {:.0}", rep.acc, rep.map, rep.f1_macro, rep.binary_acc, rep.fps);
    if let Some(p) = &a.csv {
        write_eval_csv(p, &rep)?;
    }
    emit(a.out.as_deref(), &rep)
}

#[derive(Serialize)]
struct AblationCsvRow {
    variant: Variant,
    acc: f64,
    map: f64,
    f1: f64,
    binary_acc: f64,
    fps: f64,
}

pub fn write_ablation_csv(path: &Path, rep: &AblationReport) -> Result<()> {
    write_csv(
        path,
        rep.rows.iter().map(|r| AblationCsvRow {
            variant: r.variant,
            acc: r.acc,
            map: r.map,
            f1: r.f1,
            binary_acc: r.binary_acc,
            fps: r.fps,
        }),
    )
}

fn ablate(a: AblateArgs, seed: u64) -> Result<()> {
    require_dir(&a.corpus)?;
    for p in [&a.out, &a.csv].into_iter().flatten() {
        require_parent(p)?;
    }
    if a.seeds == 0 {
        return Err(Error::Input("--seeds must be at least 1".into()));
    }
    let model = standard_model(a.model.as_deref())?;
    let corpus = formats::read_corpus(&a.corpus)?;
    let variants = if a.variants.is_empty() { Variant::ALL.to_vec() } else { a.variants.clone() };
    let seeds: Vec<u64> = (0..a.seeds).map(|k| seed + k).collect();
    let tc = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        stride: a.stride,
        val_stride: a.val_stride,
        seed,
    };
    let rep = experiments::ablate(&corpus, &model, &variants, &seeds, &tc, &ActOverrides::default(), |_, _, _| {})?;
    for r in &rep.rows {
        info!("{:<17} acc {:.4}  mAP {:.4}  F1 {:.4}  binary {:.4}  fps {:.0}", r.variant.name(), r.acc, r.map, r.f1, r.binary_acc, r.fps);
    }
    if let Some(p) = &a.csv {
        write_ablation_csv(p, &rep)?;
    }
    emit(a.out.as_deref(), &rep)
}

fn transform_jcp(a: TransformArgs, seed: u64) -> Result<()> {
    require_dir(&a.corpus)?;
    if let Some(p) = &a.out {
        require_parent(p)?;
    }
    if a.transforms == 0 {
        return Err(Error::Input("--transforms must be at least 1".into()));
    }
    let model = standard_model(a.model.as_deref())?;
    let corpus = formats::read_corpus(&a.corpus)?;
    let heads = match a.weights.paths() {
        Some((l, u)) => {
            let (lo, up) = load_pair(&l, &u)?;
            Some([lo, up])
        }
        None => None,
    };
    let cfg = ViewpointConfig {
        transforms: a.transforms,
        transform_seed: seed,
        variant: Variant::Sar,
        train: TrainConfig {
            epochs: a.epochs,
            lr: a.lr,
            batch_size: a.batch_size,
            stride: a.stride,
            val_stride: a.val_stride,
            seed,
        },
        overrides: ActOverrides::default(),
        ik: IkConfig::default(),
    };
    let rep = experiments::viewpoint(&corpus, &model, &cfg, heads)?;
    info!("accuracy drop: joint angles {:.2} pp, joint centers {:.2} pp", rep.angle_drop_pp, rep.jcp_drop_pp);
    emit(a.out.as_deref(), &rep)
}

fn serve(a: ServeArgs) -> Result<()> {
    require_file(&a.input)?;
    for p in [&a.out, &a.report].into_iter().flatten() {
        require_parent(p)?;
    }
    if !(a.rate >= 0.0) {
        return Err(Error::Input("--rate must be non-negative".into()));
    }
    let (lo, up) = load_pair(&a.weights_lower, &a.weights_upper)?;
    let n_dof = lo.dofs.iter().chain(&up.dofs).max().map_or(0, |m| m + 1).max(kinact_core::biomech::N_DOF);
    let frames = formats::read_angles(&a.input, n_dof)?;
    let broadcaster = match &a.dest {
        Some(d) => Some(Broadcaster::new(udp::resolve(d).map_err(Error::input)?).map_err(Error::runtime)?),
        None => None,
    };
    let mut session = experiments::new_session(&lo, &up, n_dof, a.capacity)?;
    let mut messages: Vec<ActionMessage> = Vec::new();
    let keep = a.out.is_some();
    let rep = experiments::run_session(&mut session, &frames, a.rate, broadcaster, |m| {
        if keep {
            messages.push(m.clone());
        }
        Ok(())
    })?;
    if let Some(p) = &a.out {
        formats::write_ndjson(p, &messages)?;
    }
    info!(
        "{} frames: step p95 {:.2} ms, end-to-end p95 {:.2} ms",
        rep.frames, rep.step.p95_ms, rep.end_to_end.p95_ms
    );
    if let Some(s) = &rep.sender {
        if s.failed > 0 || s.dropped > 0 {
            warn!("{} datagrams failed, {} dropped", s.failed, s.dropped);
        }
    }
    match &a.report {
        Some(p) => formats::write_json(p, &rep),
        None => Ok(()),
    }
}

fn pen(a: PenArgs) -> Result<()> {
    require_parent(&a.board_out)?;
    let addr = if a.listen.contains(':') { a.listen.clone() } else { format!("127.0.0.1:{}", a.listen) };
    let mut listener = PenListener::bind(addr.as_str()).map_err(Error::input)?;
    info!("listening on {}", listener.local_addr().map_err(Error::runtime)?);
    let opts = ListenOptions {
        max_messages: a.max_messages,
        idle_timeout: a.idle_timeout.map(Duration::from_secs_f64),
    };
    let mut write_err = None;
    let stats = listener
        .run(opts, |ctl, n| {
            if let Err(e) = formats::write_json(&a.board_out, &BoardSnapshot::of(ctl, n)) {
                write_err.get_or_insert(e);
            }
        })
        .map_err(Error::runtime)?;
    if let Some(e) = write_err {
        return Err(e);
    }
    formats::write_json(&a.board_out, &BoardSnapshot::of(&listener.controller, stats.accepted))?;
    info!("{} messages accepted, {} rejected", stats.accepted, stats.rejected);
    Ok(())
}

fn bench(a: BenchArgs, seed: u64) -> Result<()> {
    if let Some(p) = &a.out {
        require_parent(p)?;
    }
    let model = standard_model(a.model.as_deref())?;
    let (lo, up) = match a.weights.paths() {
        Some((l, u)) => load_pair(&l, &u)?,
        None => {
            let mk = |head: Head| -> Result<Checkpoint> {
                let dofs = experiments::head_dofs(&model, head);
                let cfg = ActOverrides::default().config(head, dofs.len(), Variant::Sar);
                Ok(Checkpoint {
                    model: ActModel::init(cfg, seed).map_err(Error::runtime)?,
                    head,
                    dofs,
                })
            };
            (mk(Head::Lower)?, mk(Head::Upper)?)
        }
    };
    let corpus = experiments::synth_corpus(
        &CorpusConfig {
            trials: 3,
            seed,
            duration: 30.0,
            motion: MotionConfig::default(),
        },
        seed,
        &model,
    )?;
    let stages = experiments::bench(&model, &lo, &up, &corpus.trials[0], a.trials)?;
    for s in &stages {
        info!("{:<12} {:>9.1} fps  p95 {:.3} ms", s.stage, s.fps, s.latency.p95_ms);
    }
    emit(a.out.as_deref(), &stages)
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
