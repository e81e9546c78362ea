//! Exhaustive brute-force comparisons for the metric functions on small instances.

use kinact_core::metrics::{accuracy, average_precision, binary_accuracy, macro_f1, mean_average_precision};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// All label vectors of length `n` over `c` classes.
fn all_vectors(n: usize, c: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v| {
                (0..c).map(move |k| {
                    let mut w = v.clone();
                    w.push(k);
                    w
                })
            })
            .collect();
    }
    out
}

fn brute_accuracy(p: &[usize], t: &[usize]) -> f64 {
    let mut hits = 0;
    for i in 0..p.len() {
        if p[i] == t[i] {
            hits += 1;
        }
    }
    hits as f64 / p.len() as f64
}

fn brute_f1(p: &[usize], t: &[usize], c: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..c {
        let tp = (0..p.len()).filter(|&i| p[i] == k && t[i] == k).count();
        let pp = (0..p.len()).filter(|&i| p[i] == k).count();
        let ap = (0..p.len()).filter(|&i| t[i] == k).count();
        let prec = if pp == 0 { 0.0 } else { tp as f64 / pp as f64 };
        let rec = if ap == 0 { 0.0 } else { tp as f64 / ap as f64 };
        total += if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
    }
    total / c as f64
}

/// AP by walking every threshold position: rank each frame by counting the
/// frames ahead of it, then accumulate precision at each positive.
fn brute_ap(scores: &[Vec<f64>], t: &[usize], k: usize) -> Option<f64> {
    let n = t.len();
    let npos = t.iter().filter(|&&x| x == k).count();
    if npos == 0 {
        return None;
    }
    let ahead = |i: usize, j: usize| scores[j][k] > scores[i][k] || (scores[j][k] == scores[i][k] && j < i);
    let rank: Vec<usize> = (0..n).map(|i| (0..n).filter(|&j| ahead(i, j)).count() + 1).collect();
    let mut ap = 0.0;
    for r in 1..=n {
        let i = (0..n).find(|&i| rank[i] == r).unwrap();
        if t[i] == k {
            let hits = (0..n).filter(|&j| rank[j] <= r && t[j] == k).count();
            ap += (hits as f64 / r as f64) / npos as f64;
        }
    }
    Some(ap)
}

fn brute_map(scores: &[Vec<f64>], t: &[usize], c: usize) -> f64 {
    let aps: Vec<f64> = (0..c).filter_map(|k| brute_ap(scores, t, k)).collect();
    aps.iter().sum::<f64>() / aps.len() as f64
}

#[test]
fn accuracy_and_f1_exhaustive() {
    for c in 1..=3 {
        for n in 1..=6 {
            let vs = all_vectors(n, c);
            for p in &vs {
                for t in &vs {
                    assert_eq!(accuracy(p, t).unwrap(), brute_accuracy(p, t));
                    assert_eq!(macro_f1(p, t, c).unwrap(), brute_f1(p, t, c));
                }
            }
        }
    }
}

#[test]
fn binary_accuracy_exhaustive() {
    for c in 1..=3 {
        for n in 1..=3 {
            let vs = all_vectors(n, c);
            for pl in &vs {
                for pu in &vs {
                    for tl in &vs {
                        for tu in &vs {
                            let p: Vec<_> = pl.iter().copied().zip(pu.iter().copied()).collect();
                            let t: Vec<_> = tl.iter().copied().zip(tu.iter().copied()).collect();
                            let mut slots = 0;
                            for i in 0..n {
                                slots += usize::from(pl[i] == tl[i]) + usize::from(pu[i] == tu[i]);
                            }
                            assert_eq!(binary_accuracy(&p, &t).unwrap(), slots as f64 / (2 * n) as f64);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn map_matches_threshold_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for c in 1..=3 {
        for n in 1..=6 {
            for t in all_vectors(n, c) {
                for _ in 0..8 {
                    // coarse grid so ties are frequent
                    let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..c).map(|_| rng.random_range(0..4) as f64 / 4.0).collect()).collect();
                    for k in 0..c {
                        assert_eq!(average_precision(&scores, &t, k), brute_ap(&scores, &t, k));
                    }
                    assert_eq!(mean_average_precision(&scores, &t).unwrap(), brute_map(&scores, &t, c));
                }
            }
        }
    }
}

#[test]
fn binary_accuracy_is_mean_of_head_accuracies() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let n = rng.random_range(1..200);
        let lo: Vec<(u8, u8)> = (0..n).map(|_| (rng.random_range(1..8), rng.random_range(1..8))).collect();
        let up: Vec<(u8, u8)> = (0..n).map(|_| (rng.random_range(8..18), rng.random_range(8..18))).collect();
        let pred: Vec<_> = lo.iter().zip(&up).map(|(a, b)| (a.0, b.0)).collect();
        let truth: Vec<_> = lo.iter().zip(&up).map(|(a, b)| (a.1, b.1)).collect();
        let acc_lo = accuracy(&lo.iter().map(|x| x.0).collect::<Vec<_>>(), &lo.iter().map(|x| x.1).collect::<Vec<_>>()).unwrap();
        let acc_up = accuracy(&up.iter().map(|x| x.0).collect::<Vec<_>>(), &up.iter().map(|x| x.1).collect::<Vec<_>>()).unwrap();
        let b = binary_accuracy(&pred, &truth).unwrap();
        assert!((b - (acc_lo + acc_up) / 2.0).abs() <= 1e-15, "{b} vs {acc_lo} {acc_up}");
    }
}

#[test]
fn relabeling_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let perm = [2usize, 0, 1];
    for _ in 0..200 {
        let n = rng.random_range(1..30);
        let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let s: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(0..5) as f64).collect()).collect();
        let pp: Vec<usize> = p.iter().map(|&x| perm[x]).collect();
        let tp: Vec<usize> = t.iter().map(|&x| perm[x]).collect();
        let mut sp = s.clone();
        for (row, orig) in sp.iter_mut().zip(&s) {
            for k in 0..3 {
                row[perm[k]] = orig[k];
            }
        }
        assert_eq!(accuracy(&p, &t).unwrap(), accuracy(&pp, &tp).unwrap());
        let f = macro_f1(&p, &t, 3).unwrap();
        assert!((f - macro_f1(&pp, &tp, 3).unwrap()).abs() < 1e-15);
        let m = mean_average_precision(&s, &t).unwrap();
        assert!((m - mean_average_precision(&sp, &tp).unwrap()).abs() < 1e-15);
    }
}
