//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use degen_core::rng::SplitMix64;

/// Every `(lambda, rho)` with `rho + 2 * lambda <= len` such that the
/// sequence is `lambda`-periodic from `rho` to the end.
pub fn periodic_pairs(tokens: &[u32]) -> Vec<(usize, usize)> {
    let len = tokens.len();
    let mut out = Vec::new();
    for lambda in 1..=len / 2 {
        for rho in 0..=len - 2 * lambda {
            if (rho..len - lambda).all(|j| tokens[j] == tokens[j + lambda]) {
                out.push((lambda, rho));
            }
        }
    }
    out
}

/// Expected detector answer: the first period in `4..=len/2, 1, 2, 3` order
/// that admits any start, with its earliest start.
pub fn loop_oracle(tokens: &[u32]) -> Option<(usize, usize)> {
    let pairs = periodic_pairs(tokens);
    let half = tokens.len() / 2;
    let order: Vec<usize> = (4..=half).chain((1..=3).filter(|&l| l <= half)).collect();
    order.into_iter().find_map(|lambda| {
        pairs
            .iter()
            .filter(|(l, _)| *l == lambda)
            .map(|&(_, rho)| rho)
            .min()
            .map(|rho| (lambda, rho))
    })
}

/// Random sequence over `alphabet` symbols, with a planted loop half the time.
pub fn random_sequence(rng: &mut SplitMix64, max_len: usize, alphabet: u64) -> Vec<u32> {
    let len = 1 + rng.below(max_len as u64) as usize;
    let sym = |rng: &mut SplitMix64| rng.below(alphabet) as u32;
    if rng.below(2) == 0 || len < 2 {
        return (0..len).map(|_| sym(rng)).collect();
    }
    let lambda = 1 + rng.below((len / 2) as u64) as usize;
    let block: Vec<u32> = (0..lambda).map(|_| sym(rng)).collect();
    let max_reps = len / lambda;
    let reps = 2 + rng.below((max_reps - 1) as u64) as usize;
    let tail = if reps * lambda < len {
        rng.below((len - reps * lambda) as u64 + 1) as usize
    } else {
        0
    };
    let prefix_len = len.saturating_sub(reps * lambda + tail);
    let mut out: Vec<u32> = (0..prefix_len).map(|_| sym(rng)).collect();
    for _ in 0..reps {
        out.extend_from_slice(&block);
    }
    out.extend_from_slice(&block[..tail.min(lambda)]);
    out
}

/// Random probability vector; some entries are zero when `zeros` is set.
pub fn random_distribution(rng: &mut SplitMix64, vocab: usize, zeros: bool) -> Vec<f64> {
    let mut w: Vec<f64> = (0..vocab)
        .map(|_| {
            if zeros && rng.below(4) == 0 {
                0.0
            } else {
                rng.next_f64().powi(3) + 1e-6
            }
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[0] = 1.0;
    }
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= z);
    w
}

/// Indices by descending mass, ties to the lower index, found by repeated
/// linear max scans.
pub fn rank_by_scan(p: &[f64]) -> Vec<usize> {
    let mut taken = vec![false; p.len()];
    let mut out = Vec::with_capacity(p.len());
    for _ in 0..p.len() {
        let mut best: Option<usize> = None;
        for i in 0..p.len() {
            if !taken[i] && best.map_or(true, |b| p[i] > p[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push(b);
    }
    out
}

/// Renormalizes `p` on `keep`.
pub fn renormalize(p: &[f64], keep: &[usize]) -> Vec<f64> {
    let mass: f64 = keep.iter().map(|&i| p[i]).sum();
    let mut out = vec![0.0; p.len()];
    for &i in keep {
        out[i] = p[i] / mass;
    }
    out
}

fn subsets(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0u32..1 << n).map(move |m| (0..n).filter(|&i| m >> i & 1 == 1).collect())
}

fn mass(p: &[f64], s: &[usize]) -> f64 {
    s.iter().map(|&i| p[i]).sum()
}

/// Top-k by exhaustive search: the size-`k` subset of largest mass.
/// Assumes distinct probabilities.
pub fn top_k_exhaustive(p: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(p.len());
    subsets(p.len())
        .filter(|s| s.len() == k)
        .max_by(|a, b| mass(p, a).total_cmp(&mass(p, b)))
        .unwrap()
}

/// Nucleus set by exhaustive search: among the smallest subsets reaching
/// mass `p_cut`, the one of largest mass. Assumes distinct probabilities.
pub fn nucleus_exhaustive(p: &[f64], p_cut: f64) -> Vec<usize> {
    let all: Vec<Vec<usize>> = subsets(p.len()).filter(|s| !s.is_empty()).collect();
    let size = all
        .iter()
        .filter(|s| mass(p, s) >= p_cut)
        .map(|s| s.len())
        .min()
        .unwrap_or(p.len());
    all.into_iter()
        .filter(|s| s.len() == size)
        .max_by(|a, b| mass(p, a).total_cmp(&mass(p, b)))
        .unwrap()
}

/// Shortest prefix of the scan ranking whose mass reaches `p_cut`.
pub fn nucleus_prefix(p: &[f64], p_cut: f64) -> Vec<usize> {
    let ranked = rank_by_scan(p);
    let mut acc = 0.0;
    for (n, &i) in ranked.iter().enumerate() {
        acc += p[i];
        if acc >= p_cut {
            return ranked[..=n].to_vec();
        }
    }
    ranked
}

/// Sorted prefix masses, used to keep random nucleus cut-offs away from
/// floating-point ties.
pub fn prefix_masses(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    rank_by_scan(p)
        .into_iter()
        .map(|i| {
            acc += p[i];
            acc
        })
        .collect()
}

/// Textbook quadratic LCS table.
pub fn lcs_table<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            dp[i][j] = if a[i - 1] == b[j - 1] {
                dp[i - 1][j - 1] + 1
            } else {
                dp[i - 1][j].max(dp[i][j - 1])
            };
        }
    }
    dp[a.len()][b.len()]
}

/// Linear-scan neighbor count with the same strict-inequality semantics.
pub fn scan_count(
    entries: &[(usize, Vec<f32>)],
    state: &[f32],
    t: usize,
    radius: f64,
    window: usize,
) -> usize {
    let r2 = radius * radius;
    entries
        .iter()
        .filter(|(tau, h)| {
            let dt = if *tau > t { tau - t } else { t - tau };
            if dt > window {
                return false;
            }
            let mut d2 = 0.0f64;
            for k in 0..h.len() {
                let d = f64::from(state[k]) - f64::from(h[k]);
                d2 += d * d;
            }
            d2 < r2
        })
        .count()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in descending order with matching unit eigenvectors.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k][i]).collect())
        .collect();
    (values, vectors)
}

/// Sample covariance (`n - 1`) of row vectors.
pub fn covariance(rows: &[Vec<f32>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for k in 0..d {
            mean[k] += f64::from(r[k]) / n as f64;
        }
    }
    let mut c = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            let xi = f64::from(r[i]) - mean[i];
            for j in 0..d {
                c[i][j] += xi * (f64::from(r[j]) - mean[j]);
            }
        }
    }
    for row in c.iter_mut() {
        for x in row.iter_mut() {
            *x /= (n - 1) as f64;
        }
    }
    c
}

/// Continuation counts of `last` inside the trailing window, tallied with a
/// plain map over all positions.
pub fn continuation_histogram(prefix: &[u32], window: usize, vocab: usize) -> Vec<f64> {
    let mut hist = vec![0.0; vocab];
    let last = *prefix.last().unwrap();
    let start = prefix.len().saturating_sub(window);
    let win = &prefix[start..];
    for pair in win.windows(2) {
        if pair[0] == last {
            hist[pair[1] as usize] += 1.0;
        }
    }
    hist
}

pub fn gaussian(rng: &mut SplitMix64) -> f64 {
    let u1 = 1.0 - rng.next_f64();
    let u2 = rng.next_f64();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// `n` vectors spread over `steps` time steps, drawn around shared cluster
/// centres with cluster scales from tight to loose so that radii between 0.5
/// and 4 see both empty and crowded neighborhoods.
pub fn clustered_entries(
    rng: &mut SplitMix64,
    n: usize,
    dim: usize,
    steps: usize,
) -> Vec<(usize, Vec<f32>)> {
    let scales = [0.02, 0.05, 0.1, 0.2, 0.4];
    let centres: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..dim).map(|_| gaussian(rng)).collect())
        .collect();
    (0..n)
        .map(|_| {
            let c = rng.below(centres.len() as u64) as usize;
            let s = scales[c % scales.len()];
            let v = centres[c].iter().map(|&x| (x + s * gaussian(rng)) as f32).collect();
            (rng.below(steps as u64) as usize, v)
        })
        .collect()
}

/// A query near a random entry (or far away, one time in ten).
pub fn query_near(rng: &mut SplitMix64, entries: &[(usize, Vec<f32>)]) -> (usize, Vec<f32>) {
    let (t, base) = &entries[rng.below(entries.len() as u64) as usize];
    let jitter = if rng.below(10) == 0 { 5.0 } else { 0.1 };
    let v = base.iter().map(|&x| x + (jitter * gaussian(rng)) as f32).collect();
    (*t, v)
}
