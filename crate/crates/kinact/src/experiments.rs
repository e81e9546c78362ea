//! Training, evaluation, ablation, viewpoint-transform and timing runs shared
//! by the CLI and the acceptance suite.

use std::time::Instant;

use kinact_core::act::{evaluate_stream, train, ActConfig, ActModel, Head, LabeledSequence, Sequence, TrainConfig, TrainHistory, Variant};
use kinact_core::biomech::{fallback_markers, BiomechModel};
use kinact_core::camgeo::{triangulate_frame, JointCenters3D, TriangulationConfig, N_KEYPOINTS};
use kinact_core::ik::{IkConfig, IkSession, Unlimited};
use kinact_core::metrics::{evaluate, EvalReport, HeadData};
use kinact_core::runtime::{HeadModel, Session, DEFAULT_CAPACITY, DEFAULT_THRESHOLD};
use kinact_core::synth::{default_rig, generate_corpus, recover_angles, render_keypoints, split_corpus, transform_schedule, CorpusConfig, RigidTransform};
use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{Checkpoint, Corpus, Manifest, TrialEntry};
use crate::timing::{fps_benchmark, time_trials, LatencyStats};
use crate::udp;

pub const SPLIT_RATIOS: [f64; 3] = [0.7, 0.2, 0.1];
const FPS_WARMUP: usize = 5;
const FPS_TRIALS: usize = 50;

pub fn head_dofs(model: &BiomechModel, head: Head) -> Vec<usize> {
    match head {
        Head::Lower => model.masks().lower.clone(),
        Head::Upper => model.masks().upper.clone(),
    }
}

/// Generate a corpus and its trial split.
pub fn synth_corpus(cfg: &CorpusConfig, split_seed: u64, model: &BiomechModel) -> Result<Corpus> {
    let generated = generate_corpus(cfg, model).map_err(Error::input)?;
    let split = split_corpus(cfg.trials, SPLIT_RATIOS, split_seed).map_err(Error::input)?;
    let trials = generated
        .iter()
        .enumerate()
        .map(|(i, (script, _))| TrialEntry {
            file: format!("trial_{i:03}.ndjson"),
            seed: script.seed,
            script: script.clone(),
        })
        .collect();
    Ok(Corpus {
        manifest: Manifest {
            config: cfg.clone(),
            split_seed,
            split,
            trials,
        },
        trials: generated.into_iter().map(|(_, s)| s).collect(),
    })
}

/// Architecture overrides applied on top of the per-head defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActOverrides {
    pub window: Option<usize>,
    pub layers: Option<usize>,
    pub d_model: Option<usize>,
    pub ffn_dim: Option<usize>,
    pub mlp_dim: Option<usize>,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
}

impl ActOverrides {
    pub fn config(&self, head: Head, input_dim: usize, variant: Variant) -> ActConfig {
        let mut c = ActConfig::for_head(head, input_dim, variant);
        c.window = self.window.unwrap_or(c.window);
        c.layers = self.layers.unwrap_or(c.layers);
        c.d_model = self.d_model.unwrap_or(c.d_model);
        c.ffn_dim = self.ffn_dim.unwrap_or(c.ffn_dim);
        c.mlp_dim = self.mlp_dim.unwrap_or(c.mlp_dim);
        c.lambda = self.lambda.unwrap_or(c.lambda);
        c.tau = self.tau.unwrap_or(c.tau);
        c
    }
}

fn jcp_row(jc: &JointCenters3D) -> Vec<f64> {
    jc.points.iter().flatten().copied().collect()
}

fn jcp_sequence(head: Head, seq: &LabeledSequence, jcps: &[JointCenters3D]) -> Sequence {
    Sequence {
        x: jcps.iter().map(jcp_row).collect(),
        y: seq.labels(head).iter().map(|&l| head.class_of(l).expect("validated label")).collect(),
    }
}

/// Ground-truth joint centers of a trial.
pub fn trial_jcps(seq: &LabeledSequence, model: &BiomechModel) -> Result<Vec<JointCenters3D>> {
    seq.frames.iter().map(|f| model.joint_centers(&f.q, &f.base, f.t).map_err(Error::runtime)).collect()
}

fn sequences(trials: &[&LabeledSequence], head: Head, dofs: &[usize]) -> Result<Vec<Sequence>> {
    trials.iter().map(|s| s.head_sequence(head, dofs).map_err(Error::input)).collect()
}

#[derive(Clone, Debug)]
pub struct TrainedHead {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeadSummary {
    pub head: Head,
    pub params: usize,
    pub seconds: f64,
    pub history: TrainHistory,
}

impl TrainedHead {
    pub fn summary(&self) -> HeadSummary {
        HeadSummary {
            head: self.checkpoint.head,
            params: self.checkpoint.model.num_params(),
            seconds: self.seconds,
            history: self.history.clone(),
        }
    }
}

fn fit(head: Head, cfg: ActConfig, dofs: Vec<usize>, tc: &TrainConfig, tr: &[Sequence], va: &[Sequence]) -> Result<TrainedHead> {
    let t0 = Instant::now();
    let out = train(cfg, tc, tr, va).map_err(Error::runtime)?;
    let seconds = t0.elapsed().as_secs_f64();
    info!(
        "{} head: {} epochs in {seconds:.1}s, best validation accuracy {:.4} at epoch {}",
        head.name(),
        out.history.loss.len(),
        out.history.best_val_acc,
        out.history.best_epoch
    );
    Ok(TrainedHead {
        checkpoint: Checkpoint { model: out.model, head, dofs },
        history: out.history,
        seconds,
    })
}

/// Train one joint-angle classifier per head on the corpus's train split,
/// selecting on its validation split.
pub fn train_heads(corpus: &Corpus, model: &BiomechModel, variant: Variant, tc: &TrainConfig, ov: &ActOverrides) -> Result<[TrainedHead; 2]> {
    let split = &corpus.manifest.split;
    let (tr, va) = (corpus.select(&split.train), corpus.select(&split.val));
    let mut out = Vec::with_capacity(2);
    for head in Head::BOTH {
        let dofs = head_dofs(model, head);
        let cfg = ov.config(head, dofs.len(), variant);
        out.push(fit(head, cfg, dofs.clone(), tc, &sequences(&tr, head, &dofs)?, &sequences(&va, head, &dofs)?)?);
    }
    Ok(out.try_into().expect("two heads"))
}

/// Scores, predictions and truth of one head over concatenated test streams.
#[derive(Clone, Debug, Default)]
pub struct HeadStream {
    pub scores: Vec<Vec<f64>>,
    pub pred: Vec<usize>,
    pub truth: Vec<usize>,
}

impl HeadStream {
    fn extend(&mut self, model: &ActModel, seq: &Sequence) -> Result<()> {
        for (e, class, probs) in evaluate_stream(model, &seq.x, 1).map_err(Error::runtime)? {
            self.scores.push(probs);
            self.pred.push(class);
            self.truth.push(seq.y[e]);
        }
        Ok(())
    }

    fn data(&self, head: Head) -> HeadData<'_> {
        HeadData {
            first_label: head.first_label(),
            scores: &self.scores,
            pred: &self.pred,
            truth: &self.truth,
        }
    }

    pub fn accuracy(&self) -> f64 {
        let hit = self.pred.iter().zip(&self.truth).filter(|(p, t)| p == t).count();
        hit as f64 / self.pred.len().max(1) as f64
    }
}

/// Fraction of frames where both heads are right.
pub fn combined_accuracy(lower: &HeadStream, upper: &HeadStream) -> f64 {
    let hit = (0..lower.pred.len())
        .filter(|&i| lower.pred[i] == lower.truth[i] && upper.pred[i] == upper.truth[i])
        .count();
    hit as f64 / lower.pred.len().max(1) as f64
}

/// Streaming predictions of a head over trials, with inputs taken from the
/// joint angles of each trial.
pub fn stream_angles(ck: &Checkpoint, trials: &[&LabeledSequence]) -> Result<HeadStream> {
    let mut s = HeadStream::default();
    for t in trials {
        s.extend(&ck.model, &t.head_sequence(ck.head, &ck.dofs).map_err(Error::input)?)?;
    }
    Ok(s)
}

/// Frames per second of classifying one window with both heads.
pub fn inference_fps(lower: &ActModel, upper: &ActModel, x: &[Vec<f64>], dofs: [&[usize]; 2]) -> Result<f64> {
    let n = lower.config().window.min(x.len());
    let rows = |d: &[usize]| -> Vec<Vec<f64>> { x[..n].iter().map(|q| d.iter().map(|&j| q[j]).collect()).collect() };
    let (lo, up) = (rows(dofs[0]), rows(dofs[1]));
    fps_benchmark(
        || {
            lower.infer(&lo)?;
            upper.infer(&up).map(|_| ())
        },
        FPS_WARMUP,
        FPS_TRIALS,
    )
    .map_err(Error::runtime)
}

/// Full report for a pair of checkpoints on the given trials.
pub fn evaluate_heads(lower: &Checkpoint, upper: &Checkpoint, trials: &[&LabeledSequence]) -> Result<EvalReport> {
    if trials.is_empty() {
        return Err(Error::Input("no trials to evaluate".into()));
    }
    let lo = stream_angles(lower, trials)?;
    let up = stream_angles(upper, trials)?;
    let q: Vec<Vec<f64>> = trials[0].frames.iter().map(|f| f.q.clone()).collect();
    let fps = inference_fps(&lower.model, &upper.model, &q, [&lower.dofs, &upper.dofs])?;
    evaluate(lo.data(Head::Lower), up.data(Head::Upper), fps).map_err(Error::runtime)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub acc: f64,
    pub map: f64,
    pub f1: f64,
    pub binary_acc: f64,
    pub fps: f64,
    pub train_seconds: f64,
}

/// One variant's medians over seeds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub acc: f64,
    pub map: f64,
    pub f1: f64,
    pub binary_acc: f64,
    pub fps: f64,
    pub seeds: Vec<SeedResult>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub epochs: usize,
    pub rows: Vec<AblationRow>,
    pub train_seconds: f64,
}

impl AblationReport {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Train and test every variant once per seed; the corpus and split stay fixed.
/// `keep` receives the trained heads of each run.
pub fn ablate(
    corpus: &Corpus,
    model: &BiomechModel,
    variants: &[Variant],
    seeds: &[u64],
    tc: &TrainConfig,
    ov: &ActOverrides,
    mut keep: impl FnMut(Variant, u64, &[TrainedHead; 2]),
) -> Result<AblationReport> {
    if seeds.is_empty() || variants.is_empty() {
        return Err(Error::Input("ablation needs at least one seed and one variant".into()));
    }
    let test = corpus.select(&corpus.manifest.split.test);
    let mut rows = Vec::with_capacity(variants.len());
    let mut total = 0.0;
    for &variant in variants {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let tc = TrainConfig { seed, ..tc.clone() };
            let heads = train_heads(corpus, model, variant, &tc, ov)?;
            let rep = evaluate_heads(&heads[0].checkpoint, &heads[1].checkpoint, &test)?;
            let train_seconds = heads[0].seconds + heads[1].seconds;
            total += train_seconds;
            info!("{variant} seed {seed}: acc {:.4} mAP {:.4} F1 {:.4} binary {:.4}", rep.acc, rep.map, rep.f1_macro, rep.binary_acc);
            keep(variant, seed, &heads);
            runs.push(SeedResult {
                seed,
                acc: rep.acc,
                map: rep.map,
                f1: rep.f1_macro,
                binary_acc: rep.binary_acc,
                fps: rep.fps,
                train_seconds,
            });
        }
        let med = |f: fn(&SeedResult) -> f64| median(&runs.iter().map(f).collect::<Vec<_>>());
        rows.push(AblationRow {
            variant,
            acc: med(|r| r.acc),
            map: med(|r| r.map),
            f1: med(|r| r.f1),
            binary_acc: med(|r| r.binary_acc),
            fps: med(|r| r.fps),
            seeds: runs,
        });
    }
    Ok(AblationReport {
        epochs: tc.epochs,
        rows,
        train_seconds: total,
    })
}

/// Accuracy of one input type under one transform.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformResult {
    /// Rotation angle (rad) and translation norm (m) of the transform.
    pub angle: f64,
    pub shift: f64,
    pub angle_acc: f64,
    pub jcp_acc: f64,
    /// RMS difference (rad) between angles recovered from transformed and
    /// original joint centers.
    pub angle_rms_diff: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ViewpointReport {
    pub original_angle_acc: f64,
    pub original_jcp_acc: f64,
    pub transforms: Vec<TransformResult>,
    /// Mean accuracy drop in percentage points.
    pub angle_drop_pp: f64,
    pub jcp_drop_pp: f64,
    pub max_angle_rms_diff: f64,
}

#[derive(Clone, Debug)]
pub struct ViewpointConfig {
    pub transforms: usize,
    pub transform_seed: u64,
    pub variant: Variant,
    pub train: TrainConfig,
    pub overrides: ActOverrides,
    pub ik: IkConfig,
}

fn with_frames(seq: &LabeledSequence, frames: Vec<kinact_core::biomech::JointAngleFrame>) -> LabeledSequence {
    LabeledSequence {
        frames,
        lower: seq.lower.clone(),
        upper: seq.upper.clone(),
    }
}

fn rms_diff(a: &[kinact_core::biomech::JointAngleFrame], b: &[kinact_core::biomech::JointAngleFrame]) -> f64 {
    let mut sq = 0.0;
    let mut n = 0usize;
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.q.iter().zip(&y.q) {
            sq += (p - q) * (p - q);
            n += 1;
        }
    }
    (sq / n.max(1) as f64).sqrt()
}

/// Joint-angle inputs versus raw joint-center inputs under rigid transforms of
/// the test joint centers. The angle classifier reads angles recovered by IK
/// from the (transformed) joint centers; the JCP classifier reads the joint
/// centers directly. `angle_heads` reuses already trained angle classifiers.
pub fn viewpoint(corpus: &Corpus, model: &BiomechModel, cfg: &ViewpointConfig, angle_heads: Option<[Checkpoint; 2]>) -> Result<ViewpointReport> {
    let split = &corpus.manifest.split;
    let angle_heads = match angle_heads {
        Some(h) => h,
        None => train_heads(corpus, model, cfg.variant, &cfg.train, &cfg.overrides)?.map(|h| h.checkpoint),
    };

    // joint-center classifiers trained on untransformed world coordinates
    let jcps_of = |idx: &[usize]| -> Result<Vec<Vec<JointCenters3D>>> { idx.iter().map(|&i| trial_jcps(&corpus.trials[i], model)).collect() };
    let (tr_j, va_j, te_j) = (jcps_of(&split.train)?, jcps_of(&split.val)?, jcps_of(&split.test)?);
    let mut jcp_heads = Vec::with_capacity(2);
    for head in Head::BOTH {
        let seqs = |idx: &[usize], j: &[Vec<JointCenters3D>]| -> Vec<Sequence> { idx.iter().zip(j).map(|(&i, j)| jcp_sequence(head, &corpus.trials[i], j)).collect() };
        let c = cfg.overrides.config(head, 3 * N_KEYPOINTS, cfg.variant);
        jcp_heads.push(fit(head, c, Vec::new(), &cfg.train, &seqs(&split.train, &tr_j), &seqs(&split.val, &va_j))?);
    }

    let test: Vec<&LabeledSequence> = corpus.select(&split.test);
    let evaluate_both = |jcps: &[Vec<JointCenters3D>]| -> Result<(f64, f64, Vec<Vec<kinact_core::biomech::JointAngleFrame>>)> {
        let mut recovered = Vec::with_capacity(test.len());
        let mut lo_a = HeadStream::default();
        let mut up_a = HeadStream::default();
        let mut lo_j = HeadStream::default();
        let mut up_j = HeadStream::default();
        for (seq, j) in test.iter().zip(jcps) {
            let frames = recover_angles(j, model, &cfg.ik).map_err(Error::runtime)?;
            let rec = with_frames(seq, frames);
            lo_a.extend(&angle_heads[0].model, &rec.head_sequence(Head::Lower, &angle_heads[0].dofs).map_err(Error::runtime)?)?;
            up_a.extend(&angle_heads[1].model, &rec.head_sequence(Head::Upper, &angle_heads[1].dofs).map_err(Error::runtime)?)?;
            lo_j.extend(&jcp_heads[0].checkpoint.model, &jcp_sequence(Head::Lower, seq, j))?;
            up_j.extend(&jcp_heads[1].checkpoint.model, &jcp_sequence(Head::Upper, seq, j))?;
            recovered.push(rec.frames);
        }
        Ok((combined_accuracy(&lo_a, &up_a), combined_accuracy(&lo_j, &up_j), recovered))
    };

    let (a0, j0, rec0) = evaluate_both(&te_j)?;
    info!("untransformed: angle inputs {a0:.4}, joint-center inputs {j0:.4}");
    let mut transforms = Vec::with_capacity(cfg.transforms);
    for tf in transform_schedule(cfg.transform_seed, cfg.transforms) {
        let moved: Vec<Vec<JointCenters3D>> = te_j.iter().map(|s| s.iter().map(|jc| tf.apply_jcp(jc)).collect()).collect();
        let (a, j, rec) = evaluate_both(&moved)?;
        let diff = rec0.iter().zip(&rec).map(|(x, y)| rms_diff(x, y)).fold(0.0, f64::max);
        let angle = tf.angle_to(&RigidTransform::identity());
        info!("transform {angle:.3} rad: angle inputs {a:.4}, joint-center inputs {j:.4}, angle RMS difference {diff:.2e}");
        transforms.push(TransformResult {
            angle,
            shift: tf.trans.norm(),
            angle_acc: a,
            jcp_acc: j,
            angle_rms_diff: diff,
        });
    }
    let k = transforms.len().max(1) as f64;
    Ok(ViewpointReport {
        original_angle_acc: a0,
        original_jcp_acc: j0,
        angle_drop_pp: 100.0 * transforms.iter().map(|t| a0 - t.angle_acc).sum::<f64>() / k,
        jcp_drop_pp: 100.0 * transforms.iter().map(|t| j0 - t.jcp_acc).sum::<f64>() / k,
        max_angle_rms_diff: transforms.iter().map(|t| t.angle_rms_diff).fold(0.0, f64::max),
        transforms,
    })
}

/// Per-stage throughput of the online pipeline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageBench {
    pub stage: String,
    pub fps: f64,
    pub latency: LatencyStats,
}

/// Time every stage on frames rendered from `frames` through the default rig.
pub fn bench(model: &BiomechModel, lower: &Checkpoint, upper: &Checkpoint, seq: &LabeledSequence, trials: usize) -> Result<Vec<StageBench>> {
    if trials < kinact_core::metrics::MIN_FPS_TRIALS {
        return Err(Error::Input(format!("bench needs at least {} trials", kinact_core::metrics::MIN_FPS_TRIALS)));
    }
    let n = trials + FPS_WARMUP;
    let frames: Vec<_> = seq.frames.iter().cycle().take(n).cloned().collect();
    let cams = default_rig();
    let views = render_keypoints(&frames, model, &cams, 0.0, 0).map_err(Error::runtime)?;
    let tcfg = TriangulationConfig::default();
    let per_frame = |i: usize| -> Vec<_> { views.iter().map(|v| v[i].clone()).collect() };
    let jcps: Vec<JointCenters3D> = (0..n).map(|i| triangulate_frame(&cams, &per_frame(i), &tcfg)).collect::<Result<_, _>>().map_err(Error::runtime)?;
    let markers: Vec<_> = jcps.iter().map(|j| fallback_markers(model, j)).collect::<Result<_, _>>().map_err(Error::runtime)?;

    let mut out = Vec::new();
    let mut record = |stage: &str, lat: Vec<f64>| -> Result<()> {
        let fps = kinact_core::metrics::fps_from_latencies(&lat).map_err(Error::runtime)?;
        out.push(StageBench {
            stage: stage.into(),
            fps,
            latency: LatencyStats::from_secs(&lat),
        });
        Ok(())
    };
    let timed = |mut op: Box<dyn FnMut(usize) -> Result<()> + '_>| -> Result<Vec<f64>> {
        let mut i = 0;
        time_trials(
            || {
                i += 1;
                op(i - 1)
            },
            FPS_WARMUP,
            trials,
        )
    };
    record(
        "triangulate",
        timed(Box::new(|i| triangulate_frame(&cams, &per_frame(i), &tcfg).map(|_| ()).map_err(Error::runtime)))?,
    )?;
    record("augment", timed(Box::new(|i| fallback_markers(model, &jcps[i]).map(|_| ()).map_err(Error::runtime)))?)?;
    let mut ik = IkSession::new(model.clone(), IkConfig::default()).map_err(Error::runtime)?;
    record("ik", timed(Box::new(|i| ik.solve(&markers[i], &Unlimited).map(|_| ()).map_err(Error::runtime)))?)?;
    let window = lower.model.config().window.min(frames.len());
    for ck in [lower, upper] {
        let rows: Vec<Vec<f64>> = frames[..window].iter().map(|f| ck.dofs.iter().map(|&j| f.q[j]).collect()).collect();
        record(
            &format!("infer-{}", ck.head.name()),
            timed(Box::new(|_| ck.model.infer(&rows).map(|_| ()).map_err(Error::runtime)))?,
        )?;
    }
    let mut session = new_session(lower, upper, model.n_dof(), DEFAULT_CAPACITY)?;
    record(
        "step",
        timed(Box::new(|i| {
            let msg = session.step(&frames[i]).map_err(Error::runtime)?;
            udp::encode(&msg).map(|_| ()).map_err(Error::runtime)
        }))?,
    )?;
    Ok(out)
}

pub fn new_session(lower: &Checkpoint, upper: &Checkpoint, n_dof: usize, capacity: usize) -> Result<Session> {
    if lower.head != Head::Lower || upper.head != Head::Upper {
        return Err(Error::Input("checkpoints must be a lower-limb and an upper-limb classifier".into()));
    }
    let hm = |c: &Checkpoint| HeadModel {
        model: c.model.clone(),
        dofs: c.dofs.clone(),
    };
    Session::new(hm(lower), hm(upper), n_dof, capacity, DEFAULT_THRESHOLD).map_err(Error::input)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionReport {
    pub frames: usize,
    /// Window update, both heads and the buffer filters.
    pub step: LatencyStats,
    /// `step` plus datagram encoding and enqueueing.
    pub end_to_end: LatencyStats,
    pub sender: Option<udp::SenderStats>,
}

/// Replay frames through a session at `rate_hz` (0 for as fast as possible),
/// broadcasting each message when a broadcaster is given.
pub fn run_session(
    session: &mut Session,
    frames: &[kinact_core::biomech::JointAngleFrame],
    rate_hz: f64,
    broadcaster: Option<udp::Broadcaster>,
    mut sink: impl FnMut(&kinact_core::runtime::ActionMessage) -> Result<()>,
) -> Result<SessionReport> {
    let period = (rate_hz > 0.0).then(|| std::time::Duration::from_secs_f64(1.0 / rate_hz));
    let start = Instant::now();
    let mut step = Vec::with_capacity(frames.len());
    let mut total = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        if let Some(p) = period {
            let due = start + p * i as u32;
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        let t0 = Instant::now();
        let msg = session.step(f).map_err(Error::runtime)?;
        step.push(t0.elapsed().as_secs_f64());
        match &broadcaster {
            Some(b) => b.send(&msg).map_err(Error::runtime)?,
            None => {
                udp::encode(&msg).map_err(Error::runtime)?;
            }
        }
        total.push(t0.elapsed().as_secs_f64());
        sink(&msg)?;
    }
    Ok(SessionReport {
        frames: frames.len(),
        step: LatencyStats::from_secs(&step),
        end_to_end: LatencyStats::from_secs(&total),
        sender: broadcaster.map(udp::Broadcaster::finish),
    })
}
