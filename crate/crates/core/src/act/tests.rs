use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck;

fn small_cfg(variant: Variant) -> ActConfig {
    ActConfig {
        window: 6,
        input_dim: 5,
        layers: 2,
        heads: 1,
        d_model: 8,
        ffn_dim: 8,
        mlp_dim: 12,
        classes: 3,
        lambda: 0.15,
        tau: 4.0,
        variant,
    }
}

fn random_window(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn set(model: &mut ActModel, name: &str, f: impl Fn(usize) -> f64) {
    let id = model.params().id(name).unwrap();
    for (i, v) in model.params_mut().get_mut(id).data_mut().iter_mut().enumerate() {
        *v = f(i);
    }
}

fn get(model: &ActModel, name: &str) -> Vec<f64> {
    model.params().get(model.params().id(name).unwrap()).data().to_vec()
}

#[test]
fn causal_mask_shapes() {
    assert_eq!(causal_mask(3).data(), &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0]);
    assert_eq!(causal_mask(1).data(), &[1.0]);
    let m = additive_mask(3);
    assert_eq!(m.data()[1], f64::NEG_INFINITY);
    assert_eq!(m.data()[3], 0.0);
}

#[test]
fn masked_softmax_has_no_future_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t = 5;
    let mut g = Graph::new();
    let s = g.constant(Tensor::new(&[t, t], (0..t * t).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap());
    let s = g.add_mask(s, &additive_mask(t)).unwrap();
    let a = g.softmax(s);
    let a = g.value(a).data();
    for i in 0..t {
        for j in i + 1..t {
            assert_eq!(a[i * t + j], 0.0);
        }
    }
}

#[test]
fn embed_linearity_and_positions() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let w0 = g.constant(Tensor::zeros(&[2, 3]));
    let p0 = g.constant(Tensor::zeros(&[3, 3]));
    let e = embed(&mut g, x, w0, p0).unwrap();
    assert!(g.value(e).data().iter().all(|v| *v == 0.0));
    let pos = Tensor::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let p = g.constant(pos.clone());
    let e = embed(&mut g, x, w0, p).unwrap();
    assert_eq!(g.value(e), &pos);
}

#[test]
fn embedding_is_position_sensitive() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = ActModel::init(small_cfg(Variant::Sar), 3).unwrap();
    let w = random_window(&mut rng, 6, 5);
    let mut perm = w.clone();
    perm.swap(0, 5);
    let mut g = Graph::new();
    let ew = g.constant(model.params().get(model.params().id("embed.w").unwrap()).clone());
    let pos = g.constant(model.params().get(model.params().id("pos").unwrap()).clone());
    let flat = |w: &Vec<Vec<f64>>| Tensor::new(&[6, 5], w.iter().flatten().copied().collect()).unwrap();
    let a = g.constant(flat(&w));
    let b = g.constant(flat(&perm));
    let ea = embed(&mut g, a, ew, pos).unwrap();
    let eb = embed(&mut g, b, ew, pos).unwrap();
    // Row sets differ once positions are added, not just their order.
    let ra: Vec<f64> = g.value(ea).data()[..8].to_vec();
    let rb: Vec<f64> = g.value(eb).data()[40..].to_vec();
    assert_ne!(ra, rb);
    assert_ne!(g.value(ea), g.value(eb));
}

#[test]
fn attention_hand_instance() {
    let mut g = Graph::new();
    let eye = Tensor::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let vals = Tensor::new(&[3, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]).unwrap();
    let q = g.constant(eye.clone());
    let v = g.constant(vals.clone());
    let out = attention(&mut g, q, q, v, None).unwrap();
    let s = 1.0 / 3f64.sqrt();
    let (hi, lo) = (libm::exp(s), 1.0);
    let z = hi + 2.0 * lo;
    for i in 0..3 {
        for c in 0..3 {
            let mut want = 0.0;
            for j in 0..3 {
                let a = if i == j { hi / z } else { lo / z };
                want += a * vals.data()[j * 3 + c];
            }
            assert!((g.value(out).data()[i * 3 + c] - want).abs() < 1e-14);
        }
    }
    let zero = g.constant(Tensor::zeros(&[3, 3]));
    let out = attention(&mut g, q, q, zero, None).unwrap();
    assert!(g.value(out).data().iter().all(|v| *v == 0.0));
    let mask = additive_mask(3);
    let out = attention(&mut g, q, q, v, Some(&mask)).unwrap();
    assert_eq!(&g.value(out).data()[..3], &vals.data()[..3]);
}

fn layer_norm_ref(row: &[f64]) -> Vec<f64> {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    row.iter().map(|v| (v - mean) / libm::sqrt(var + LN_EPS)).collect()
}

#[test]
fn degenerate_layer_is_layer_norm() {
    let mut cfg = small_cfg(Variant::Sar);
    cfg.layers = 1;
    let mut model = ActModel::init(cfg, 2).unwrap();
    for name in ["l0.wo", "l0.bo", "l0.ff2.w", "l0.ff2.b"] {
        set(&mut model, name, |_| 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::new(&[6, 8], (0..48).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let xv = g.constant(x.clone());
    let v = |id: ParamId| vars.vars[id.0];
    let out = encoder_layer(&mut g, xv, &model.layout.layers[0], &v, Some(&additive_mask(6))).unwrap();
    for (r, row) in x.data().chunks(8).enumerate() {
        let want = layer_norm_ref(&layer_norm_ref(row));
        for (a, b) in g.value(out).data()[r * 8..(r + 1) * 8].iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        let once = layer_norm_ref(row);
        for (a, b) in g.value(out).data()[r * 8..(r + 1) * 8].iter().zip(&once) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}

#[test]
fn causality_is_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for variant in [Variant::Sar, Variant::MaskedNoSmooth] {
        let model = ActModel::init(small_cfg(variant), 17).unwrap();
        for _ in 0..20 {
            let w = random_window(&mut rng, 6, 5);
            let base = model.classify(&w).unwrap();
            let t = rng.random_range(0..5);
            let mut w2 = w.clone();
            for row in w2.iter_mut().skip(t + 1) {
                for v in row.iter_mut() {
                    *v = rng.random_range(-5.0..5.0);
                }
            }
            let pert = model.classify(&w2).unwrap();
            let c = 3;
            assert_eq!(&base.data()[..(t + 1) * c], &pert.data()[..(t + 1) * c]);
            assert_ne!(&base.data()[(t + 1) * c..], &pert.data()[(t + 1) * c..]);
        }
    }
}

#[test]
fn unmasked_variant_sees_the_future() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = ActModel::init(small_cfg(Variant::PerStepNoMask), 1).unwrap();
    let w = random_window(&mut rng, 6, 5);
    let mut w2 = w.clone();
    w2[5][0] += 1.0;
    let a = model.classify(&w).unwrap();
    let b = model.classify(&w2).unwrap();
    assert_ne!(&a.data()[..3], &b.data()[..3]);
}

fn gelu_ref(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / core::f64::consts::SQRT_2))
}

fn matvec(row: &[f64], w: &[f64], cols: usize, b: Option<&[f64]>) -> Vec<f64> {
    (0..cols)
        .map(|c| {
            let mut s = b.map_or(0.0, |b| b[c]);
            for (r, x) in row.iter().enumerate() {
                s += x * w[r * cols + c];
            }
            s
        })
        .collect()
}

/// Step-by-step forward pass written against the parameter tables only.
fn oracle_classify(model: &ActModel, window: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cfg = model.config();
    let d = cfg.d_model;
    let p = |n: &str| get(model, n);
    let (ew, pos) = (p("embed.w"), p("pos"));
    let mut h: Vec<Vec<f64>> = window
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let e = matvec(q, &ew, d, None);
            e.iter().zip(&pos[i * d..(i + 1) * d]).map(|(a, b)| a + b).collect()
        })
        .collect();
    let t = h.len();
    for l in 0..cfg.layers {
        let n = |s: &str| p(&alloc::format!("l{l}.{s}"));
        let proj = |h: &Vec<Vec<f64>>, w: &str, b: &str| -> Vec<Vec<f64>> { h.iter().map(|r| matvec(r, &n(w), d, Some(&n(b)))).collect() };
        let (q, k, v) = (proj(&h, "wq", "bq"), proj(&h, "wk", "bk"), proj(&h, "wv", "bv"));
        let mut att = Vec::new();
        for i in 0..t {
            let last = if cfg.variant.masked() { i } else { t - 1 };
            let scores: Vec<f64> = (0..=last)
                .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / libm::sqrt(d as f64))
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| libm::exp(s - m)).collect();
            let z: f64 = e.iter().sum();
            let mut o = vec![0.0; d];
            for (j, ej) in e.iter().enumerate() {
                for c in 0..d {
                    o[c] += ej / z * v[j][c];
                }
            }
            att.push(o);
        }
        let att = proj(&att, "wo", "bo");
        let affine = |x: Vec<f64>, g: &[f64], b: &[f64]| -> Vec<f64> { x.iter().enumerate().map(|(i, v)| v * g[i] + b[i]).collect() };
        let (g1, b1, g2, b2) = (n("ln1.g"), n("ln1.b"), n("ln2.g"), n("ln2.b"));
        let mut next = Vec::new();
        for i in 0..t {
            let r: Vec<f64> = h[i].iter().zip(&att[i]).map(|(a, b)| a + b).collect();
            let x = affine(layer_norm_ref(&r), &g1, &b1);
            let f: Vec<f64> = matvec(&x, &n("ff1.w"), cfg.ffn_dim, Some(&n("ff1.b"))).into_iter().map(gelu_ref).collect();
            let f = matvec(&f, &n("ff2.w"), d, Some(&n("ff2.b")));
            let r: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a + b).collect();
            next.push(affine(layer_norm_ref(&r), &g2, &b2));
        }
        h = next;
    }
    h.iter()
        .map(|r| {
            let z: Vec<f64> = matvec(r, &p("head.w1"), cfg.mlp_dim, Some(&p("head.b1"))).into_iter().map(gelu_ref).collect();
            let logits = matvec(&z, &p("head.w2"), cfg.classes, Some(&p("head.b2")));
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|v| libm::exp(v - m)).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect()
}

#[test]
fn forward_matches_independent_implementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for variant in [Variant::Sar, Variant::PerStepNoMask] {
        let mut model = ActModel::init(small_cfg(variant), 5).unwrap();
        for name in ["l0.bq", "l1.bv", "l0.ln1.b", "l1.ln2.g", "head.b1", "pos"] {
            let vals: Vec<f64> = (0..64).map(|_| rng.random_range(-0.5..0.5)).collect();
            set(&mut model, name, |i| 1.0 * (name == "l1.ln2.g") as u8 as f64 + vals[i % 64]);
        }
        let w = random_window(&mut rng, 6, 5);
        let got = model.classify(&w).unwrap();
        let want = oracle_classify(&model, &w);
        for (i, row) in want.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((got.data()[i * 3 + c] - v).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn probabilities_are_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for variant in Variant::ALL {
        let model = ActModel::init(small_cfg(variant), 8).unwrap();
        for _ in 0..10 {
            let p = model.classify(&random_window(&mut rng, 6, 5)).unwrap();
            for row in p.data().chunks(3) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn uniform_logits_give_uniform_distribution() {
    let mut model = ActModel::init(small_cfg(Variant::Sar), 8).unwrap();
    set(&mut model, "head.w2", |_| 0.0);
    set(&mut model, "head.b2", |_| 0.7);
    let p = model.classify(&vec![vec![0.3; 5]; 6]).unwrap();
    assert!(p.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn variant_output_shapes() {
    let sar = ActModel::init(small_cfg(Variant::Sar), 1).unwrap();
    let tok = ActModel::init(small_cfg(Variant::BaselineToken), 1).unwrap();
    let w = vec![vec![0.1; 5]; 6];
    assert_eq!(sar.classify(&w).unwrap().shape(), &[6, 3]);
    assert_eq!(tok.classify(&w).unwrap().shape(), &[1, 3]);
}

fn scalar_loss(probs: &[f64], shape: &[usize], f: impl Fn(&mut Graph, Var) -> Result<Var, ActError>) -> f64 {
    let mut g = Graph::new();
    let p = g.constant(Tensor::new(shape, probs.to_vec()).unwrap());
    let l = f(&mut g, p).unwrap();
    g.value(l).item()
}

#[test]
fn classification_loss_examples() {
    let onehot = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    assert_eq!(scalar_loss(&onehot, &[2, 3], |g, p| loss_cls(g, p, &[0, 1])), 0.0);
    let uniform = vec![1.0 / 17.0; 17];
    let l = scalar_loss(&uniform, &[1, 17], |g, p| loss_cls(g, p, &[4]));
    assert!((l - libm::log(17.0)).abs() < 1e-12);
    assert!((l - 2.833).abs() < 1e-3);
    let probs = [0.5, 0.5, 0.25, 0.75];
    let a = -libm::log(0.5);
    let b = -libm::log(0.25);
    let l = scalar_loss(&probs, &[2, 2], |g, p| loss_cls(g, p, &[0, 0]));
    assert!((l - (a + b) / 2.0).abs() < 1e-15);
    // Zero probability is floored, not infinite.
    let l = scalar_loss(&[1.0, 0.0], &[1, 2], |g, p| loss_cls(g, p, &[1]));
    assert!((l - -libm::log(PROB_FLOOR)).abs() < 1e-9);
}

#[test]
fn tmse_examples() {
    let constant = [0.2, 0.3, 0.5].repeat(4);
    assert_eq!(scalar_loss(&constant, &[4, 3], |g, p| loss_tmse(g, p, 4.0)), 0.0);

    let (n, c) = (4, 2);
    let mut probs = vec![0.5; n * c];
    probs[2 * c] = 0.25;
    probs[2 * c + 1] = 0.75;
    probs[3 * c] = 0.25;
    probs[3 * c + 1] = 0.75;
    let l = scalar_loss(&probs, &[n, c], |g, p| loss_tmse(g, p, 4.0));
    let d1 = libm::log(0.75 / 0.5);
    let want = (libm::log(2.0).powi(2) + d1 * d1) / (n * c) as f64;
    assert!((l - want).abs() < 1e-12);
    // The ln 2 term alone.
    assert!((libm::log(2.0).powi(2) - 0.4805).abs() < 1e-4);

    let tiny = libm::exp(-12.0);
    let probs = [0.5, 0.5, 1.0 - tiny, tiny];
    let l = scalar_loss(&probs, &[2, 2], |g, p| loss_tmse(g, p, 4.0));
    let d0 = libm::log((1.0 - tiny) / 0.5);
    assert!((l * 4.0 - (d0 * d0 + 16.0)).abs() < 1e-9);
}

#[test]
fn total_loss_decomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let raw: Vec<f64> = (0..12).map(|_| rng.random_range(0.1..1.0)).collect();
    let probs: Vec<f64> = raw.chunks(3).flat_map(|r| {
        let s: f64 = r.iter().sum();
        r.iter().map(move |v| v / s)
    }).collect();
    let labels = [0, 2, 1, 1];
    let cls = scalar_loss(&probs, &[4, 3], |g, p| loss_cls(g, p, &labels));
    let tot = scalar_loss(&probs, &[4, 3], |g, p| loss_total(g, p, &labels, 0.0, 4.0));
    assert_eq!(cls, tot);
    assert!((combine_losses(1.0, 0.2, 0.15) - 1.03).abs() < 1e-15);
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let cfg = ActConfig {
        window: 4,
        input_dim: 3,
        layers: 2,
        heads: 1,
        d_model: 4,
        ffn_dim: 6,
        mlp_dim: 5,
        classes: 3,
        lambda: 0.15,
        tau: 4.0,
        variant: Variant::Sar,
    };
    let model = ActModel::init(cfg.clone(), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = Tensor::new(&[2, 4, 3], (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let labels = [0, 0, 1, 2, 2, 1, 1, 0];
    let inputs: Vec<Tensor> = model.params().iter().map(|(_, _, t)| t.clone()).collect();
    // The previous step is excluded from differentiation, so the numeric side
    // holds it at its value for the unperturbed parameters.
    let frozen = {
        let mut g = Graph::new();
        let vars = model.bind(&mut g);
        let xv = g.constant(x.clone());
        let p = model.forward(&mut g, &vars, xv).unwrap();
        let lp = log_probs(&mut g, p);
        let prev = g.slice(lp, 1, 0, 3).unwrap();
        g.value(prev).clone()
    };
    let report = gradcheck(&inputs, 1e-5, 1e-4, 1e-6, |g, vars| {
        let av = ActVars { vars: vars.to_vec() };
        let xv = g.constant(x.clone());
        let fail = |_| AutodiffError::EmptyConcat;
        let p = model.forward(g, &av, xv).map_err(fail)?;
        let cls = loss_cls(g, p, &labels).map_err(fail)?;
        let lp = log_probs(g, p);
        let prev = g.constant(frozen.clone());
        let sm = tmse_against(g, p, lp, prev, cfg.tau).map_err(fail)?;
        let sm = g.scale(sm, cfg.lambda);
        g.add(cls, sm)
    })
    .unwrap();
    assert!(report.passed, "{report:?}");

    // The detached graph yields exactly these gradients.
    let mut g1 = Graph::new();
    let v1 = model.bind(&mut g1);
    let x1 = g1.constant(x.clone());
    let p1 = model.forward(&mut g1, &v1, x1).unwrap();
    let l1 = loss_total(&mut g1, p1, &labels, cfg.lambda, cfg.tau).unwrap();
    let mut g2 = Graph::new();
    let v2 = model.bind(&mut g2);
    let x2 = g2.constant(x.clone());
    let p2 = model.forward(&mut g2, &v2, x2).unwrap();
    let cls = loss_cls(&mut g2, p2, &labels).unwrap();
    let lp = log_probs(&mut g2, p2);
    let prev = g2.constant(frozen);
    let sm = tmse_against(&mut g2, p2, lp, prev, cfg.tau).unwrap();
    let sm = g2.scale(sm, cfg.lambda);
    let l2 = g2.add(cls, sm).unwrap();
    assert_eq!(g1.value(l1), g2.value(l2));
    let n = model.params().len();
    let a = g1.backward(l1).unwrap().param_grads(&g1, n);
    let b = g2.backward(l2).unwrap().param_grads(&g2, n);
    assert_eq!(a, b);
}

#[test]
fn default_parameter_count() {
    let cfg = ActConfig::new(18, 10, Variant::Sar);
    let model = ActModel::init(cfg.clone(), 0).unwrap();
    assert_eq!(model.num_params(), cfg.param_count());
    let d = 64;
    let layer = 4 * (d * d + d) + 2 * (d * d) + 64 + d + 4 * d;
    assert_eq!(cfg.param_count(), 18 * d + 20 * d + 4 * layer + d * 256 + 256 + 256 * 10 + 10);
}

#[test]
fn infer_pads_short_prefixes() {
    let model = ActModel::init(small_cfg(Variant::Sar), 4).unwrap();
    let frames = vec![vec![0.2, -0.1, 0.0, 0.4, 0.3], vec![0.1; 5]];
    let inf = model.infer(&frames).unwrap();
    assert_eq!(inf.padded, 4);
    let mut full = vec![frames[0].clone(); 4];
    full.extend(frames.iter().cloned());
    assert_eq!(inf.probs.concat(), model.classify(&full).unwrap().into_data());
    assert_eq!(inf.label, *inf.argmax.last().unwrap());
    assert_eq!(model.infer(&[]).unwrap_err(), ActError::EmptyWindow);
    assert!(matches!(model.infer(&vec![vec![0.0; 5]; 7]), Err(ActError::WindowTooLong { .. })));
}

/// Two classes separated by the sign of the first feature, in blocks.
fn separable(seed: u64, len: usize) -> Sequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..len {
        let class = (i / 15) % 2;
        let s = if class == 0 { -1.0 } else { 1.0 };
        x.push(vec![s * rng.random_range(0.5..1.5), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        y.push(class);
    }
    Sequence { x, y }
}

fn toy_cfg(variant: Variant) -> ActConfig {
    ActConfig {
        window: 5,
        input_dim: 3,
        layers: 1,
        heads: 1,
        d_model: 16,
        ffn_dim: 16,
        mlp_dim: 16,
        classes: 2,
        lambda: 0.15,
        tau: 4.0,
        variant,
    }
}

#[test]
fn learns_separable_toy() {
    let train_set = vec![separable(1, 120)];
    let held_out = [separable(2, 120)];
    let tc = TrainConfig {
        epochs: 50,
        lr: 3e-3,
        batch_size: 16,
        seed: 4,
        ..TrainConfig::default()
    };
    let out = train(toy_cfg(Variant::Sar), &tc, &train_set, &[]).unwrap();
    // Per-step argmax over every window position on the training windows.
    let mut hit = 0;
    let mut total = 0;
    for e in 0..120usize {
        let w: Vec<Vec<f64>> = (0..5).map(|k| train_set[0].x[(e + k + 1).saturating_sub(5)].clone()).collect();
        let inf = out.model.infer(&w).unwrap();
        for (k, pred) in inf.argmax.iter().enumerate() {
            hit += usize::from(*pred == train_set[0].y[(e + k + 1).saturating_sub(5)]);
            total += 1;
        }
    }
    assert_eq!(hit, total, "train accuracy {hit}/{total}");
    let preds = evaluate_stream(&out.model, &held_out[0].x, 1).unwrap();
    let acc = preds.iter().filter(|(e, p, _)| *p == held_out[0].y[*e]).count() as f64 / preds.len() as f64;
    assert!(acc >= 0.9, "held-out accuracy {acc}");
    let l = &out.history.loss;
    let increases = l.windows(2).filter(|w| w[1] > w[0] * 1.05).count();
    assert!(l.last().unwrap() < &(l[0] * 0.2), "{l:?}");
    assert!(increases <= 2, "loss rose {increases} times: {l:?}");
}

#[test]
fn training_is_deterministic() {
    let data = vec![separable(3, 60)];
    let tc = TrainConfig {
        epochs: 3,
        lr: 3e-3,
        batch_size: 8,
        seed: 9,
        ..TrainConfig::default()
    };
    let a = train(toy_cfg(Variant::Sar), &tc, &data, &data).unwrap();
    let b = train(toy_cfg(Variant::Sar), &tc, &data, &data).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.history, b.history);
}

#[test]
fn training_rejects_bad_input() {
    let tc = TrainConfig::default();
    assert_eq!(train(toy_cfg(Variant::Sar), &tc, &[], &[]).unwrap_err(), ActError::EmptyCorpus);
    let mut s = separable(1, 10);
    s.y[3] = 2;
    assert!(matches!(train(toy_cfg(Variant::Sar), &tc, &[s], &[]), Err(ActError::LabelRange { label: 2, .. })));
}

#[test]
fn head_label_mapping() {
    assert_eq!(Head::Lower.class_of(1), Some(0));
    assert_eq!(Head::Lower.class_of(7), Some(6));
    assert_eq!(Head::Lower.class_of(8), None);
    assert_eq!(Head::Upper.class_of(8), Some(0));
    assert_eq!(Head::Upper.class_of(17), Some(9));
    assert_eq!(Head::Upper.label_of(3), 11);
    assert_eq!("masked-no-smooth".parse::<Variant>().unwrap(), Variant::MaskedNoSmooth);
}
