//! Naive loop-based reference implementations.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tnt::classifier::AttentionParams;

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let e: f64 = rng.sample(StandardNormal);
        scale * e
    })
}

pub fn balanced_labels(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).flat_map(|c| std::iter::repeat_n(c, k)).collect();
    labels.shuffle(rng);
    labels
}


pub fn oracle_inverse(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    // Gauss-Jordan with partial pivoting.
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[pivot][col].abs() {
                pivot = r;
            }
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        for j in 0..n {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                for j in 0..n {
                    a[r][j] -= f * a[col][j];
                    inv[r][j] -= f * inv[col][j];
                }
            }
        }
    }
    inv
}

/// Class probabilities and prototypes computed with explicit loops.
#[allow(clippy::too_many_arguments)]
pub fn oracle_head(
    e_class: &Array2<f64>,
    v_query: &Array2<f64>,
    v_support: &Array2<f64>,
    labels: &[usize],
    n: usize,
    k: usize,
    att: &AttentionParams,
    ridge: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let g = e_class.ncols();
    let b = v_query.nrows();
    // Scaled dot-product attention of class embeddings over queries.
    let mut q = vec![vec![0.0; g]; n];
    for i in 0..n {
        for c in 0..g {
            for r in 0..g {
                q[i][c] += e_class[[i, r]] * att.w_q[[r, c]];
            }
        }
    }
    let mut kk = vec![vec![0.0; g]; b];
    for j in 0..b {
        for c in 0..g {
            for r in 0..g {
                kk[j][c] += v_query[[j, r]] * att.w_k[[r, c]];
            }
        }
    }
    let mut w = vec![vec![0.0; b + n * k]; n];
    for i in 0..n {
        let mut scores = vec![0.0; b];
        for j in 0..b {
            for c in 0..g {
                scores[j] += q[i][c] * kk[j][c];
            }
            scores[j] /= (g as f64).sqrt();
        }
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
        for j in 0..b {
            w[i][j] = (scores[j] - mx).exp() / z;
        }
        // Equal weight 1/K on the class's own supports.
        for (s, &l) in labels.iter().enumerate() {
            if l == i {
                w[i][b + s] = 1.0 / k as f64;
            }
        }
    }
    let rows: Vec<Vec<f64>> = (0..b)
        .map(|j| v_query.row(j).to_vec())
        .chain((0..n * k).map(|s| v_support.row(s).to_vec()))
        .collect();
    let m = rows.len();
    // Relevance-weighted prototypes.
    let mut mu = vec![vec![0.0; g]; n];
    for i in 0..n {
        let total: f64 = w[i].iter().sum();
        for j in 0..m {
            for c in 0..g {
                mu[i][c] += w[i][j] * rows[j][c] / total;
            }
        }
    }
    let mut mu_task = vec![0.0; g];
    for i in 0..n {
        for c in 0..g {
            mu_task[c] += mu[i][c] / n as f64;
        }
    }
    let mut task_cov = vec![vec![0.0; g]; g];
    for row in &rows {
        for a in 0..g {
            for c in 0..g {
                task_cov[a][c] += (row[a] - mu_task[a]) * (row[c] - mu_task[c]) / m as f64;
            }
        }
    }
    let lambda = k as f64 / (k as f64 + 1.0);
    let mut probs = vec![vec![0.0; n]; b];
    let mut dist = vec![vec![0.0; n]; b];
    for i in 0..n {
        let total: f64 = w[i].iter().sum();
        let mut cov = vec![vec![0.0; g]; g];
        for (j, row) in rows.iter().enumerate() {
            let wt = w[i][j] / total;
            for a in 0..g {
                for c in 0..g {
                    cov[a][c] += wt * (row[a] - mu[i][a]) * (row[c] - mu[i][c]);
                }
            }
        }
        for a in 0..g {
            for c in 0..g {
                cov[a][c] = lambda * cov[a][c] + (1.0 - lambda) * task_cov[a][c] + if a == c { ridge } else { 0.0 };
            }
        }
        let inv = oracle_inverse(&cov);
        for j in 0..b {
            let diff: Vec<f64> = (0..g).map(|c| v_query[[j, c]] - mu[i][c]).collect();
            let mut d = 0.0;
            for a in 0..g {
                for c in 0..g {
                    d += diff[a] * inv[a][c] * diff[c];
                }
            }
            dist[j][i] = d;
        }
    }
    for j in 0..b {
        let mx = dist[j].iter().map(|d| -d).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = dist[j].iter().map(|d| (-d - mx).exp()).sum();
        for i in 0..n {
            probs[j][i] = (-dist[j][i] - mx).exp() / z;
        }
    }
    (probs, mu)
}
