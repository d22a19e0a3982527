//! Task-conditioned transductive classifier.
//!
//! Class text embeddings attend over the query embeddings to pick relevant
//! unlabeled samples; prototypes are relevance-weighted means of queries and
//! supports, and queries are scored with a blended-covariance squared
//! Mahalanobis distance.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::nn::{log_softmax_rows, softmax_rows, softmax_rows_backward};

/// Bias-free projections for the class embeddings (`w_q`) and the query
/// video embeddings (`w_k`), both `G × G`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
}

impl AttentionParams {
    pub fn identity(dim: usize) -> Self {
        AttentionParams {
            w_q: Array2::eye(dim),
            w_k: Array2::eye(dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        AttentionParams {
            w_q: Array2::zeros((dim, dim)),
            w_k: Array2::zeros((dim, dim)),
        }
    }

    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let lin = |rng: &mut R| crate::nn::Linear::random(dim, dim, 1.0, rng).weight;
        AttentionParams {
            w_q: lin(rng),
            w_k: lin(rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// Blended class/task covariance plus ridge.
    #[default]
    Mahalanobis,
    /// `Q_i = I`: squared Euclidean distance.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default)]
    pub covariance: CovarianceMode,
    /// Fixed class-covariance weight; `None` uses `K / (K + 1)`.
    #[serde(default)]
    pub lambda: Option<f64>,
}

fn default_ridge() -> f64 {
    1.0
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            ridge: default_ridge(),
            covariance: CovarianceMode::default(),
            lambda: None,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge > 0.0) || !self.ridge.is_finite() {
            return Err(Error::Config("classifier.ridge must be positive".into()));
        }
        if let Some(l) = self.lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::Config("classifier.lambda must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn lambda_for(&self, k_shot: usize) -> f64 {
        self.lambda
            .unwrap_or(k_shot as f64 / (k_shot as f64 + 1.0))
    }
}

/// `W = [W_att | W_S]` over `R = Q ∪ S`, columns ordered queries first.
/// In inductive mode the query block has zero columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceWeights {
    pub weights: Array2<f64>,
    pub n_query: usize,
    pub k_shot: usize,
}

impl RelevanceWeights {
    pub fn n_way(&self) -> usize {
        self.weights.nrows()
    }

    pub fn attention_block(&self) -> ndarray::ArrayView2<'_, f64> {
        self.weights.slice(s![.., ..self.n_query])
    }

    pub fn support_block(&self) -> ndarray::ArrayView2<'_, f64> {
        self.weights.slice(s![.., self.n_query..])
    }
}

/// Prototypes, regularized covariances and the task prototype of one episode.
#[derive(Debug, Clone)]
pub struct ClassModel {
    pub prototypes: Array2<f64>,
    pub covariances: Vec<Array2<f64>>,
    pub task_prototype: Array1<f64>,
}

fn check_finite(m: &Array2<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn attention_scores(
    e_class: &Array2<f64>,
    v_query: &Array2<f64>,
    params: &AttentionParams,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    let g = params.dim();
    if e_class.ncols() != g || v_query.ncols() != g || params.w_k.dim() != (g, g) || params.w_q.ncols() != g {
        return Err(Error::Shape(format!(
            "attention over G = {g} with class embeddings of width {} and queries of width {}",
            e_class.ncols(),
            v_query.ncols()
        )));
    }
    if v_query.nrows() == 0 {
        return Err(Error::Shape("attention needs at least one query".into()));
    }
    check_finite(e_class, "class embeddings")?;
    check_finite(v_query, "query embeddings")?;
    let q = e_class.dot(&params.w_q);
    let k = v_query.dot(&params.w_k);
    let scores = q.dot(&k.t()) / (g as f64).sqrt();
    Ok((q, k, scores))
}

/// `softmax(E_class W_Q (V_Q W_K)ᵀ / √G)` with the softmax taken over the `B`
/// queries of each class row.
pub fn attention_weights(
    e_class: &Array2<f64>,
    v_query: &Array2<f64>,
    params: &AttentionParams,
) -> Result<Array2<f64>> {
    let (_, _, scores) = attention_scores(e_class, v_query, params)?;
    Ok(softmax_rows(&scores))
}

fn check_support(labels: &[usize], n_way: usize, k_shot: usize) -> Result<()> {
    if k_shot == 0 || labels.len() != n_way * k_shot {
        return Err(Error::Shape(format!(
            "{} support labels for {n_way}-way {k_shot}-shot",
            labels.len()
        )));
    }
    let mut counts = vec![0usize; n_way];
    for &l in labels {
        if l >= n_way {
            return Err(Error::Shape(format!("support label {l} out of range")));
        }
        counts[l] += 1;
    }
    if counts.iter().any(|&c| c != k_shot) {
        return Err(Error::Shape(format!("unbalanced support labels: {counts:?}")));
    }
    Ok(())
}

/// Builds `W = [W_att | W_S]` with `W_S[i, j] = 1/K` when support `j` has label `i`.
pub fn assemble_relevance(
    w_att: &Array2<f64>,
    support_labels: &[usize],
    n_way: usize,
    k_shot: usize,
) -> Result<RelevanceWeights> {
    if w_att.nrows() != n_way {
        return Err(Error::Shape(format!(
            "attention block has {} rows for {n_way} classes",
            w_att.nrows()
        )));
    }
    check_support(support_labels, n_way, k_shot)?;
    let mut w_s = Array2::zeros((n_way, support_labels.len()));
    for (j, &l) in support_labels.iter().enumerate() {
        w_s[[l, j]] = 1.0 / k_shot as f64;
    }
    Ok(RelevanceWeights {
        weights: concatenate![Axis(1), w_att.view(), w_s.view()],
        n_query: w_att.ncols(),
        k_shot,
    })
}

/// Relevance weights without a query block (inductive inference).
pub fn support_relevance(support_labels: &[usize], n_way: usize, k_shot: usize) -> Result<RelevanceWeights> {
    assemble_relevance(&Array2::zeros((n_way, 0)), support_labels, n_way, k_shot)
}

fn normalized_rows(w: &RelevanceWeights) -> Result<(Array2<f64>, Array1<f64>)> {
    let sums = w.weights.sum_axis(Axis(1));
    if sums.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Internal("relevance row with zero total weight".into()));
    }
    let normalized = &w.weights / &sums.view().insert_axis(Axis(1));
    Ok((normalized, sums))
}

/// `μ_i = Σ_j W_ij v_j / Σ_j W_ij` over the rows of `v_r` (queries then supports).
pub fn prototypes(w: &RelevanceWeights, v_r: &Array2<f64>) -> Result<Array2<f64>> {
    if w.weights.ncols() != v_r.nrows() {
        return Err(Error::Shape(format!(
            "{} relevance columns for {} samples",
            w.weights.ncols(),
            v_r.nrows()
        )));
    }
    let (normalized, _) = normalized_rows(w)?;
    Ok(normalized.dot(v_r))
}

fn weighted_scatter(centered: &Array2<f64>, weights: ndarray::ArrayView1<'_, f64>) -> Array2<f64> {
    let scaled = centered * &weights.insert_axis(Axis(1));
    centered.t().dot(&scaled)
}

/// Per-class regularized covariances
/// `Q_i = λ Σ_i + (1 − λ) Σ_task + ε I`, where `Σ_i` is the covariance of the
/// samples under normalized row `i` of `W` and `Σ_task` the uniform covariance
/// of all samples around the mean prototype.
pub fn class_covariances(
    w: &RelevanceWeights,
    v_r: &Array2<f64>,
    protos: &Array2<f64>,
    config: &ClassifierConfig,
) -> Result<ClassModel> {
    let n_way = w.n_way();
    let g = v_r.ncols();
    if protos.dim() != (n_way, g) {
        return Err(Error::Shape("prototype matrix does not match relevance weights".into()));
    }
    let task_prototype = protos.mean_axis(Axis(0)).expect("n_way > 0");
    let covariances = match config.covariance {
        CovarianceMode::Identity => vec![Array2::eye(g); n_way],
        CovarianceMode::Mahalanobis => {
            let (normalized, _) = normalized_rows(w)?;
            let m = v_r.nrows() as f64;
            let centered_task = v_r - &task_prototype;
            let task_cov = centered_task.t().dot(&centered_task) / m;
            let lambda = config.lambda_for(w.k_shot);
            let ridge = Array2::<f64>::eye(g) * config.ridge;
            let mut out = Vec::with_capacity(n_way);
            for i in 0..n_way {
                let centered = v_r - &protos.row(i);
                let class_cov = weighted_scatter(&centered, normalized.row(i));
                let q = class_cov * lambda + &task_cov * (1.0 - lambda) + &ridge;
                check_finite(&q, "class covariance")?;
                out.push(q);
            }
            out
        }
    };
    Ok(ClassModel {
        prototypes: protos.clone(),
        covariances,
        task_prototype,
    })
}

/// Squared Mahalanobis distances `B × N` plus the solved vectors
/// `u_bi = Q_i⁻¹ (x_b − μ_i)` (one `B × G` matrix per class).
fn distances(v_query: &Array2<f64>, model: &ClassModel) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
    let (n_way, g) = model.prototypes.dim();
    if v_query.ncols() != g {
        return Err(Error::Shape(format!(
            "queries have width {}, prototypes {g}",
            v_query.ncols()
        )));
    }
    let b = v_query.nrows();
    let mut d = Array2::zeros((b, n_way));
    let mut solved = Vec::with_capacity(n_way);
    for i in 0..n_way {
        let chol = Cholesky::factor(&model.covariances[i])?;
        let mut u = Array2::zeros((b, g));
        for q in 0..b {
            let r = &v_query.row(q) - &model.prototypes.row(i);
            let x = chol.solve(r.view());
            d[[q, i]] = r.dot(&x);
            u.row_mut(q).assign(&x);
        }
        solved.push(u);
    }
    Ok((d, solved))
}

/// Class probabilities `softmax(−d_i)` for each query row.
pub fn classify(v_query: &Array2<f64>, model: &ClassModel) -> Result<Array2<f64>> {
    let (d, _) = distances(v_query, model)?;
    Ok(softmax_rows(&d.mapv(|x| -x)))
}

/// Whether queries contribute to prototype construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inference {
    Transductive,
    Inductive,
}

/// Everything the classifier head computed for one episode.
#[derive(Debug, Clone)]
pub struct HeadForward {
    pub relevance: RelevanceWeights,
    pub model: ClassModel,
    /// `B × N` logits, `−d`.
    pub logits: Array2<f64>,
    pub log_probs: Array2<f64>,
    v_r: Array2<f64>,
    normalized: Array2<f64>,
    row_sums: Array1<f64>,
    solved: Vec<Array2<f64>>,
    attention: Option<AttentionTrace>,
    lambda: f64,
    covariance: CovarianceMode,
}

#[derive(Debug, Clone)]
struct AttentionTrace {
    e_class: Array2<f64>,
    v_query: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    probs: Array2<f64>,
}

impl HeadForward {
    pub fn probabilities(&self) -> Array2<f64> {
        self.log_probs.mapv(f64::exp)
    }
}

/// Gradients produced by [`head_backward`].
#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub attention: AttentionParams,
    pub e_class: Option<Array2<f64>>,
    pub v_query: Array2<f64>,
    pub v_support: Array2<f64>,
}

/// Runs attention (transductive only), relevance assembly, prototypes,
/// covariances and distances for one episode.
pub fn head_forward(
    e_class: Option<&Array2<f64>>,
    v_query: &Array2<f64>,
    v_support: &Array2<f64>,
    support_labels: &[usize],
    n_way: usize,
    params: &AttentionParams,
    config: &ClassifierConfig,
    inference: Inference,
) -> Result<HeadForward> {
    if n_way == 0 || support_labels.len() % n_way != 0 {
        return Err(Error::Shape(format!(
            "{} support labels for {n_way} classes",
            support_labels.len()
        )));
    }
    let k_shot = support_labels.len() / n_way;
    let (relevance, v_r, attention) = match inference {
        Inference::Transductive => {
            let e_class = e_class.ok_or_else(|| {
                Error::Shape("transductive inference needs class embeddings".into())
            })?;
            if e_class.nrows() != n_way {
                return Err(Error::Shape(format!(
                    "{} class embeddings for {n_way} classes",
                    e_class.nrows()
                )));
            }
            let (q, k, scores) = attention_scores(e_class, v_query, params)?;
            let probs = softmax_rows(&scores);
            let relevance = assemble_relevance(&probs, support_labels, n_way, k_shot)?;
            let v_r = concatenate![Axis(0), v_query.view(), v_support.view()];
            let trace = AttentionTrace {
                e_class: e_class.clone(),
                v_query: v_query.clone(),
                q,
                k,
                probs,
            };
            (relevance, v_r, Some(trace))
        }
        Inference::Inductive => (
            support_relevance(support_labels, n_way, k_shot)?,
            v_support.clone(),
            None,
        ),
    };
    check_finite(&v_r, "sample embeddings")?;
    let (normalized, row_sums) = normalized_rows(&relevance)?;
    let protos = normalized.dot(&v_r);
    let model = class_covariances(&relevance, &v_r, &protos, config)?;
    let (d, solved) = distances(v_query, &model)?;
    let logits = d.mapv(|x| -x);
    let log_probs = log_softmax_rows(&logits);
    Ok(HeadForward {
        relevance,
        model,
        logits,
        log_probs,
        v_r,
        normalized,
        row_sums,
        solved,
        attention,
        lambda: config.lambda_for(k_shot),
        covariance: config.covariance,
    })
}

/// Cross-entropy of the true local labels, averaged over queries, and its
/// gradient with respect to the logits.
pub fn cross_entropy(log_probs: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let b = log_probs.nrows() as f64;
    let mut loss = 0.0;
    let mut grad = log_probs.mapv(f64::exp);
    for (q, &y) in labels.iter().enumerate() {
        loss -= log_probs[[q, y]];
        grad[[q, y]] -= 1.0;
    }
    (loss / b, grad / b)
}

/// Backpropagates `grad_logits` (`B × N`) through [`head_forward`].
pub fn head_backward(fwd: &HeadForward, params: &AttentionParams, grad_logits: &Array2<f64>) -> HeadGrads {
    let (n_way, g) = fwd.model.prototypes.dim();
    let b = grad_logits.nrows();
    let m = fwd.v_r.nrows();
    let n_query_cols = fwd.relevance.n_query;

    let mut d_vq = Array2::<f64>::zeros((b, g));
    let mut d_vr = Array2::<f64>::zeros((m, g));
    let mut d_mu = Array2::<f64>::zeros((n_way, g));
    let mut d_norm = Array2::<f64>::zeros((n_way, m));

    // d = rᵀ Q⁻¹ r: ∂d/∂r = 2u, ∂d/∂Q = −u uᵀ.
    let mut d_q: Vec<Array2<f64>> = Vec::with_capacity(n_way);
    for i in 0..n_way {
        let gd = grad_logits.column(i).mapv(|x| -x);
        let u = &fwd.solved[i];
        let gu = u * &gd.view().insert_axis(Axis(1));
        d_vq.scaled_add(2.0, &gu);
        let mut row = d_mu.row_mut(i);
        row.scaled_add(-2.0, &gu.sum_axis(Axis(0)));
        if fwd.covariance == CovarianceMode::Mahalanobis {
            d_q.push(-u.t().dot(&gu));
        }
    }

    if fwd.covariance == CovarianceMode::Mahalanobis {
        let task_proto = &fwd.model.task_prototype;
        let mut d_task = Array2::<f64>::zeros((g, g));
        for i in 0..n_way {
            let dq = &d_q[i];
            d_task.scaled_add(1.0 - fwd.lambda, dq);
            let d_class = dq * fwd.lambda;
            let centered = &fwd.v_r - &fwd.model.prototypes.row(i);
            let cg = centered.dot(&d_class);
            let w = fwd.normalized.row(i);
            // ∂/∂c_j = 2 w_j G c_j, ∂/∂w_j = c_jᵀ G c_j.
            let dc = &cg * &w.insert_axis(Axis(1)) * 2.0;
            for j in 0..m {
                d_norm[[i, j]] += centered.row(j).dot(&cg.row(j));
            }
            d_vr += &dc;
            let mut row = d_mu.row_mut(i);
            row -= &dc.sum_axis(Axis(0));
        }
        let centered = &fwd.v_r - task_proto;
        let dc = centered.dot(&d_task) * (2.0 / m as f64);
        d_vr += &dc;
        let d_task_proto = -dc.sum_axis(Axis(0)) / n_way as f64;
        d_mu += &d_task_proto;
    }

    // μ = W̃ V_R.
    d_norm += &d_mu.dot(&fwd.v_r.t());
    d_vr += &fwd.normalized.t().dot(&d_mu);

    let mut grads = HeadGrads {
        attention: AttentionParams::zeros(params.dim()),
        e_class: None,
        v_query: d_vq,
        v_support: Array2::zeros((m - n_query_cols, g)),
    };

    if let Some(att) = &fwd.attention {
        // W̃_ij = W_ij / s_i.
        let mut d_att = Array2::<f64>::zeros((n_way, n_query_cols));
        for i in 0..n_way {
            let dot = d_norm.row(i).dot(&fwd.normalized.row(i));
            for j in 0..n_query_cols {
                d_att[[i, j]] = (d_norm[[i, j]] - dot) / fwd.row_sums[i];
            }
        }
        let scale = 1.0 / (g as f64).sqrt();
        let d_scores = softmax_rows_backward(&att.probs, &d_att) * scale;
        let d_q = d_scores.dot(&att.k);
        let d_k = d_scores.t().dot(&att.q);
        grads.attention.w_q = att.e_class.t().dot(&d_q);
        grads.attention.w_k = att.v_query.t().dot(&d_k);
        grads.e_class = Some(d_q.dot(&params.w_q.t()));
        grads.v_query += &d_k.dot(&params.w_k.t());
        grads.v_query += &d_vr.slice(s![..n_query_cols, ..]);
    }
    grads.v_support.assign(&d_vr.slice(s![n_query_cols.., ..]));
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn relevance_support_block_uses_one_over_k() {
        let w_att = Array2::from_elem((2, 3), 1.0 / 3.0);
        let w = assemble_relevance(&w_att, &[0, 1, 1, 0, 0, 1, 1, 0, 0, 1], 2, 5).unwrap();
        for col in w.support_block().columns() {
            let nz: Vec<_> = col.iter().filter(|&&v| v != 0.0).collect();
            assert_eq!(nz, vec![&0.2]);
        }
        for row in w.weights.rows() {
            assert!((row.sum() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn one_shot_support_block_is_permuted_identity() {
        let w = assemble_relevance(&Array2::zeros((3, 1)), &[2, 0, 1], 3, 1).unwrap();
        assert_eq!(
            w.support_block(),
            array![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]
        );
    }

    #[test]
    fn unbalanced_support_is_rejected() {
        assert!(assemble_relevance(&Array2::zeros((2, 1)), &[0, 0, 0, 1], 2, 2).is_err());
    }

    #[test]
    fn zero_attention_gives_support_means() {
        let w = assemble_relevance(&Array2::zeros((2, 1)), &[0, 1, 0, 1], 2, 2).unwrap();
        let v_r = array![[100.0, 100.0], [1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]];
        let mu = prototypes(&w, &v_r).unwrap();
        assert_eq!(mu, array![[3.0, 4.0], [5.0, 6.0]]);
    }

    #[test]
    fn focused_attention_halves_between_support_mean_and_query() {
        let w_att = array![[0.0, 1.0], [0.5, 0.5]];
        let w = assemble_relevance(&w_att, &[0, 1], 2, 1).unwrap();
        let v_r = array![[2.0], [10.0], [4.0], [6.0]];
        let mu = prototypes(&w, &v_r).unwrap();
        assert_eq!(mu[[0, 0]], 7.0);
        assert_eq!(mu[[1, 0]], 6.0);
    }

    #[test]
    fn scalar_covariance_of_two_equidistant_samples() {
        // Class 0 has weight 1/2 on samples at 1 and 3 around μ = 2.
        let w = RelevanceWeights {
            weights: array![[0.5, 0.5]],
            n_query: 0,
            k_shot: 2,
        };
        let v_r = array![[1.0], [3.0]];
        let mu = prototypes(&w, &v_r).unwrap();
        let cfg = ClassifierConfig {
            ridge: 1e-9,
            lambda: Some(1.0),
            ..ClassifierConfig::default()
        };
        let model = class_covariances(&w, &v_r, &mu, &cfg).unwrap();
        assert!((model.covariances[0][[0, 0]] - (1.0 + 1e-9)).abs() < 1e-15);
    }

    #[test]
    fn identity_covariance_is_euclidean_softmax() {
        let model = ClassModel {
            prototypes: array![[0.0, 0.0], [1.0, 1.0]],
            covariances: vec![Array2::eye(2), Array2::eye(2)],
            task_prototype: array![0.5, 0.5],
        };
        let x = array![[0.5, 0.0]];
        let p = classify(&x, &model).unwrap();
        let d0: f64 = 0.25;
        let d1: f64 = 0.25 + 1.0;
        let expected = (-d0).exp() / ((-d0).exp() + (-d1).exp());
        assert!((p[[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn query_on_prototype_dominates() {
        let model = ClassModel {
            prototypes: array![[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]],
            covariances: vec![Array2::eye(2); 3],
            task_prototype: array![0.0, 0.0],
        };
        let p = classify(&array![[0.0, 0.0]], &model).unwrap();
        assert!(p[[0, 0]] > 0.99);
    }

    #[test]
    fn uniform_attention_for_identical_queries() {
        let e = array![[1.0, -2.0], [0.3, 0.4]];
        let v = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        let a = attention_weights(&e, &v, &AttentionParams::identity(2)).unwrap();
        for x in a.iter() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let e = array![[f64::NAN, 0.0]];
        let v = array![[1.0, 2.0]];
        assert!(matches!(
            attention_weights(&e, &v, &AttentionParams::identity(2)),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let logits = array![[1.0, 2.0, 0.5]];
        let lp = log_softmax_rows(&logits);
        let (loss, g) = cross_entropy(&lp, &[1]);
        assert!((loss + lp[[0, 1]]).abs() < 1e-15);
        assert!((g.sum()).abs() < 1e-15);
        assert!(g[[0, 1]] < 0.0);
    }
}
