use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{centered_input, centered_output, lstm_forward, AugmentError, LstmLayer, LstmWeights, Normalization, INPUT_SIZE, OUTPUT_SIZE};
use crate::autodiff::{cosine_lr, AutodiffError, Adam, Graph, ParamId, ParamStore, Tensor, Var};
use crate::biomech::MarkerFrame;
use crate::camgeo::JointCenters3D;

/// A joint-center sequence with its ground-truth markers, frame by frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPair {
    pub jc: Vec<JointCenters3D>,
    pub markers: Vec<MarkerFrame>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentTrainConfig {
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Truncated-backpropagation window in frames.
    pub chunk_len: usize,
    /// Fraction of sequences held out for validation (at least one when more than one sequence).
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for AugmentTrainConfig {
    fn default() -> Self {
        Self {
            hidden: LstmWeights::DEFAULT_HIDDEN,
            layers: LstmWeights::DEFAULT_LAYERS,
            epochs: 50,
            lr: 3e-3,
            batch_size: 8,
            chunk_len: 20,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub weights: LstmWeights,
    /// Per-marker Euclidean RMS on the validation split, metres.
    pub best_val_rms: f64,
    pub best_epoch: usize,
    pub epoch_val_rms: Vec<f64>,
}

/// Graph handles for every network tensor.
#[derive(Clone, Debug)]
pub struct LstmVars {
    /// `(w_ih, w_hh, bias)` per layer.
    pub layers: Vec<(Var, Var, Var)>,
    pub w_out: Var,
    pub b_out: Var,
}

/// Mean squared error in normalized output space over a batch of
/// equal-length sequences. `xs[t]` is `[B, 78]` normalized input, `ys[t]` is
/// `[B, 87]` normalized target.
pub fn lstm_loss(g: &mut Graph, vars: &LstmVars, hidden: usize, xs: &[Tensor], ys: &[Tensor]) -> Result<Var, AutodiffError> {
    let b = xs.first().map(|x| x.shape()[0]).ok_or(AutodiffError::EmptyConcat)?;
    let mut h: Vec<Var> = (0..vars.layers.len()).map(|_| g.constant(Tensor::zeros(&[b, hidden]))).collect();
    let mut c = h.clone();
    let mut total: Option<Var> = None;
    for (x, y) in xs.iter().zip(ys) {
        let mut input = g.constant(x.clone());
        for (l, &(w_ih, w_hh, bias)) in vars.layers.iter().enumerate() {
            let a = g.matmul(input, w_ih)?;
            let r = g.matmul(h[l], w_hh)?;
            let z = g.add(a, r)?;
            let z = g.add(z, bias)?;
            let zi = g.slice(z, 1, 0, hidden)?;
            let zf = g.slice(z, 1, hidden, hidden)?;
            let zg = g.slice(z, 1, 2 * hidden, hidden)?;
            let zo = g.slice(z, 1, 3 * hidden, hidden)?;
            let i = g.sigmoid(zi);
            let f = g.sigmoid(zf);
            let gg = g.tanh(zg);
            let o = g.sigmoid(zo);
            let fc = g.mul(f, c[l])?;
            let ig = g.mul(i, gg)?;
            c[l] = g.add(fc, ig)?;
            let tc = g.tanh(c[l]);
            h[l] = g.mul(o, tc)?;
            input = h[l];
        }
        let out = g.matmul(input, vars.w_out)?;
        let out = g.add(out, vars.b_out)?;
        let target = g.constant(y.clone());
        let diff = g.sub(out, target)?;
        let sq = g.square(diff);
        let m = g.mean(sq);
        total = Some(match total {
            None => m,
            Some(t) => g.add(t, m)?,
        });
    }
    let total = total.ok_or(AutodiffError::EmptyConcat)?;
    Ok(g.scale(total, 1.0 / xs.len() as f64))
}

struct Ids {
    layers: Vec<(ParamId, ParamId, ParamId)>,
    w_out: ParamId,
    b_out: ParamId,
}

fn to_store(w: &LstmWeights) -> Result<(ParamStore, Ids), AugmentError> {
    let h = w.hidden;
    let mut store = ParamStore::new();
    let mut layers = Vec::new();
    for (l, layer) in w.layers.iter().enumerate() {
        let input = if l == 0 { INPUT_SIZE } else { h };
        let a = store.add(alloc::format!("l{l}.w_ih"), Tensor::new(&[input, 4 * h], layer.w_ih.clone())?);
        let b = store.add(alloc::format!("l{l}.w_hh"), Tensor::new(&[h, 4 * h], layer.w_hh.clone())?);
        let c = store.add(alloc::format!("l{l}.bias"), Tensor::new(&[4 * h], layer.bias.clone())?);
        layers.push((a, b, c));
    }
    let w_out = store.add("out.w", Tensor::new(&[h, OUTPUT_SIZE], w.w_out.clone())?);
    let b_out = store.add("out.b", Tensor::new(&[OUTPUT_SIZE], w.b_out.clone())?);
    Ok((store, Ids { layers, w_out, b_out }))
}

fn from_store(template: &LstmWeights, store: &ParamStore, ids: &Ids) -> LstmWeights {
    let mut w = template.clone();
    for (layer, &(a, b, c)) in w.layers.iter_mut().zip(&ids.layers) {
        *layer = LstmLayer {
            w_ih: store.get(a).data().to_vec(),
            w_hh: store.get(b).data().to_vec(),
            bias: store.get(c).data().to_vec(),
        };
    }
    w.w_out = store.get(ids.w_out).data().to_vec();
    w.b_out = store.get(ids.b_out).data().to_vec();
    w
}

struct Prepared {
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

fn prepare(pair: &AugmentPair) -> Result<Prepared, AugmentError> {
    let mut x = Vec::with_capacity(pair.jc.len());
    let mut y = Vec::with_capacity(pair.jc.len());
    for (jc, m) in pair.jc.iter().zip(&pair.markers) {
        let (xi, anchor) = centered_input(jc)?;
        y.push(centered_output(m, &anchor)?);
        x.push(xi);
    }
    Ok(Prepared { x, y })
}

fn normalize(rows: &[Vec<f64>], n: &Normalization) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().zip(n.mean.iter().zip(&n.std)).map(|(v, (m, s))| (v - m) / s).collect())
        .collect()
}

fn validation_rms(w: &LstmWeights, val: &[AugmentPair]) -> Result<f64, AugmentError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for pair in val {
        let pred = lstm_forward(w, &pair.jc)?;
        for (p, t) in pred.iter().zip(&pair.markers) {
            for (a, b) in p.markers.iter().zip(&t.markers) {
                sum += (0..3).map(|d| (a[d] - b[d]) * (a[d] - b[d])).sum::<f64>();
                count += 1;
            }
        }
    }
    Ok((sum / count as f64).sqrt())
}

fn split(corpus: &[AugmentPair], fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let n = corpus.len();
    if n < 2 {
        return ((0..n).collect(), (0..n).collect());
    }
    let n_val = ((n as f64 * fraction).ceil() as usize).clamp(1, n - 1);
    ((0..n - n_val).collect(), (n - n_val..n).collect())
}

/// Initial weights for `cfg`: random network, normalization fitted on the training split.
pub fn initial_weights(corpus: &[AugmentPair], cfg: &AugmentTrainConfig) -> Result<LstmWeights, AugmentError> {
    check(corpus, cfg)?;
    let (train, _) = split(corpus, cfg.val_fraction);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &i in &train {
        let p = prepare(&corpus[i])?;
        xs.extend(p.x);
        ys.extend(p.y);
    }
    let mut w = LstmWeights::random(cfg.hidden, cfg.layers, cfg.seed);
    w.input_norm = Normalization::fit(&xs, INPUT_SIZE);
    w.output_norm = Normalization::fit(&ys, OUTPUT_SIZE);
    Ok(w)
}

fn check(corpus: &[AugmentPair], cfg: &AugmentTrainConfig) -> Result<(), AugmentError> {
    if corpus.is_empty() {
        return Err(AugmentError::EmptyCorpus);
    }
    for (index, p) in corpus.iter().enumerate() {
        if p.jc.len() != p.markers.len() || p.jc.is_empty() {
            return Err(AugmentError::PairLength {
                index,
                jc: p.jc.len(),
                markers: p.markers.len(),
            });
        }
    }
    if cfg.hidden == 0 || cfg.layers == 0 || cfg.batch_size == 0 || cfg.chunk_len == 0 {
        return Err(AugmentError::Config("sizes must be positive"));
    }
    if !(cfg.lr > 0.0) || !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(AugmentError::Config("lr > 0 and val_fraction in [0, 1)"));
    }
    Ok(())
}

/// Fit an augmenter with Adam and cosine decay on truncated windows; returns the weights with
/// the lowest validation RMS (the initialization when `epochs == 0`).
pub fn train_augmenter(corpus: &[AugmentPair], cfg: &AugmentTrainConfig) -> Result<TrainReport, AugmentError> {
    let init = initial_weights(corpus, cfg)?;
    let (train_idx, val_idx) = split(corpus, cfg.val_fraction);
    let val: Vec<AugmentPair> = val_idx.iter().map(|&i| corpus[i].clone()).collect();

    // Windows of normalized data, grouped by length so they batch.
    let mut chunks: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = Vec::new();
    for &i in &train_idx {
        let p = prepare(&corpus[i])?;
        let x = normalize(&p.x, &init.input_norm);
        let y = normalize(&p.y, &init.output_norm);
        let mut s = 0;
        while s < x.len() {
            let e = (s + cfg.chunk_len).min(x.len());
            chunks.push((x[s..e].to_vec(), y[s..e].to_vec()));
            s = e;
        }
    }

    let (mut store, ids) = to_store(&init)?;
    let mut adam = Adam::new(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut best = init.clone();
    let mut best_rms = validation_rms(&init, &val)?;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(cfg.epochs);

    let batches_per_epoch = chunks.len().div_ceil(cfg.batch_size).max(1);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..chunks.len()).collect();
        order.shuffle(&mut rng);
        order.sort_by_key(|&i| chunks[i].0.len());
        let mut batches: Vec<Vec<usize>> = Vec::new();
        for i in order {
            match batches.last_mut() {
                Some(b) if b.len() < cfg.batch_size && chunks[b[0]].0.len() == chunks[i].0.len() => b.push(i),
                _ => batches.push(vec![i]),
            }
        }
        batches.shuffle(&mut rng);
        for batch in &batches {
            let t_len = chunks[batch[0]].0.len();
            let bsz = batch.len();
            let mut xs = Vec::with_capacity(t_len);
            let mut ys = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let xd: Vec<f64> = batch.iter().flat_map(|&i| chunks[i].0[t].iter().copied()).collect();
                let yd: Vec<f64> = batch.iter().flat_map(|&i| chunks[i].1[t].iter().copied()).collect();
                xs.push(Tensor::new(&[bsz, INPUT_SIZE], xd)?);
                ys.push(Tensor::new(&[bsz, OUTPUT_SIZE], yd)?);
            }
            let mut g = Graph::new();
            let vars = LstmVars {
                layers: ids
                    .layers
                    .iter()
                    .map(|&(a, b, c)| (g.param(&store, a), g.param(&store, b), g.param(&store, c)))
                    .collect(),
                w_out: g.param(&store, ids.w_out),
                b_out: g.param(&store, ids.b_out),
            };
            let loss = lstm_loss(&mut g, &vars, cfg.hidden, &xs, &ys)?;
            let grads = g.backward(loss)?.param_grads(&g, store.len());
            adam.step(&mut store, &grads, cosine_lr(step, total_steps, cfg.lr));
            step += 1;
        }
        let w = from_store(&init, &store, &ids);
        let rms = validation_rms(&w, &val)?;
        history.push(rms);
        if rms < best_rms {
            best_rms = rms;
            best = w;
            best_epoch = epoch;
        }
    }
    Ok(TrainReport {
        weights: best,
        best_val_rms: best_rms,
        best_epoch,
        epoch_val_rms: history,
    })
}
