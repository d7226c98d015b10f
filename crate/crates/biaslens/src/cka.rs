//! Representation similarity: unbiased HSIC, linear centered kernel alignment
//! (full-batch and mini-batch), layer-by-layer similarity matrices, and the
//! block/progressive structure scores read off those matrices.
//!
//! Features enter as n×d matrices, one example per row; activations with
//! spatial extent are already flattened by the network trace. The mini-batch
//! estimator averages unbiased HSIC scores over batches drawn without
//! replacement and normalizes by the self-similarity sums; because the
//! unbiased estimator can dip slightly below zero, similarity-matrix entries
//! are reported clamped at −1e-9 while `cka_minibatch` itself returns the raw
//! value.

use crate::matrix::Matrix;
use crate::nn::ActivationTrace;
use crate::{Error, Result};

/// Threshold below which a tiny negative mini-batch CKA is clamped when
/// reported inside a [`SimilarityMatrix`].
const REPORT_CLAMP: f64 = -1e-9;
pub const DEFAULT_TAU: f64 = 0.9;

/// A linear Gram matrix K = X·Xᵀ over one batch of features.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    values: Matrix,
}

impl Gram {
    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }
}

/// K = x·xᵀ for features x of shape n×d. Row-dot evaluation makes the result
/// symmetric bitwise, not merely to rounding.
pub fn gram_linear(x: &Matrix) -> Gram {
    Gram { values: x.matmul_bt(x).expect("x is compatible with itself") }
}

/// The unbiased HSIC₁ estimator:
///
/// HSIC₁(K,L) = [tr(K̃L̃) + (1ᵀK̃1·1ᵀL̃1)/((n−1)(n−2)) − 2·1ᵀK̃L̃1/(n−2)] / (n(n−3))
///
/// where K̃ and L̃ are the Gram matrices with zeroed diagonals. It vanishes
/// exactly (up to rounding) when either input comes from constant features,
/// and needs n ≥ 4 to be defined.
pub fn hsic_unbiased(k: &Gram, l: &Gram) -> Result<f64> {
    let n = k.n();
    if l.n() != n {
        return Err(Error::Argument(format!("gram sizes differ: {} vs {}", n, l.n())));
    }
    if n < 4 {
        return Err(Error::Argument(format!("unbiased HSIC needs n ≥ 4, got {n}")));
    }
    let nf = n as f64;
    let mut frob = 0.0; // tr(K̃L̃) = Σ_ij K̃_ij·L̃_ij by symmetry
    let mut row_k = vec![0.0; n];
    let mut row_l = vec![0.0; n];
    for i in 0..n {
        let (kr, lr) = (k.values.row(i), l.values.row(i));
        for j in 0..n {
            if i != j {
                frob += kr[j] * lr[j];
                row_k[i] += kr[j];
                row_l[i] += lr[j];
            }
        }
    }
    let sum_k: f64 = row_k.iter().sum();
    let sum_l: f64 = row_l.iter().sum();
    // 1ᵀK̃L̃1 = Σ_m (column sum of K̃)_m · (row sum of L̃)_m; both matrices are
    // symmetric so row sums serve for both.
    let cross: f64 = (0..n).map(|m| row_k[m] * row_l[m]).sum();
    let value = frob + sum_k * sum_l / ((nf - 1.0) * (nf - 2.0)) - 2.0 * cross / (nf - 2.0);
    Ok(value / (nf * (nf - 3.0)))
}

/// Full-batch linear CKA on column-centered features:
/// ‖ȲᵀX̄‖²_F / (‖X̄ᵀX̄‖_F · ‖ȲᵀȲ‖_F).
///
/// Invariant to orthogonal transforms and isotropic scaling of either side,
/// and equal to 1 for a matrix with itself.
pub fn cka_full(x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(Error::Argument(format!(
            "feature row counts differ: {} vs {}",
            x.rows(),
            y.rows()
        )));
    }
    let xc = x.center_columns();
    let yc = y.center_columns();
    for (name, raw, centered) in [("x", x, &xc), ("y", y, &yc)] {
        if centered.frob_norm() <= 1e-12 * raw.frob_norm().max(1.0) {
            return Err(Error::Degenerate(format!("{name} has zero variance across rows")));
        }
    }
    let yx = yc.t_matmul(&xc)?;
    let xx = xc.t_matmul(&xc)?;
    let yy = yc.t_matmul(&yc)?;
    let denom = xx.frob_norm() * yy.frob_norm();
    if !(denom > 0.0) {
        return Err(Error::Degenerate("zero similarity denominator".into()));
    }
    Ok(yx.frob_dot(&yx)? / denom)
}

/// Sums a slice in ascending value order. Summation order is thereby a
/// function of the multiset of values alone, which makes every consumer of
/// this helper exactly invariant to how its batch list was ordered.
fn ordered_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum()
}

/// Σ nums / √(Σ dxs · Σ dys) with order-independent sums.
fn mb_ratio(nums: &[f64], dxs: &[f64], dys: &[f64]) -> Result<f64> {
    let denom = (ordered_sum(dxs) * ordered_sum(dys)).sqrt();
    if !(denom > 0.0) {
        return Err(Error::Degenerate(format!(
            "non-positive mini-batch self-similarity (denominator {denom})"
        )));
    }
    Ok(ordered_sum(nums) / denom)
}

/// Mini-batch linear CKA: Σᵢ HSIC(X̃ᵢ,Ỹᵢ) / √(Σᵢ HSIC(X̃ᵢ,X̃ᵢ) · Σᵢ HSIC(Ỹᵢ,Ỹᵢ))
/// over batches the caller sampled without replacement.
///
/// The batch lists must pair up: xs[i] and ys[i] hold the two feature sets for
/// the same batch of examples. Returns the raw value (small negatives from the
/// unbiased estimator are not clamped here), and is exactly invariant to
/// reordering the batch list.
pub fn cka_minibatch(xs: &[Matrix], ys: &[Matrix]) -> Result<f64> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Argument(format!(
            "need matching non-empty batch lists, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let mut nums = Vec::with_capacity(xs.len());
    let mut dxs = Vec::with_capacity(xs.len());
    let mut dys = Vec::with_capacity(xs.len());
    for (x, y) in xs.iter().zip(ys) {
        let kx = gram_linear(x);
        let ky = gram_linear(y);
        nums.push(hsic_unbiased(&kx, &ky)?);
        dxs.push(hsic_unbiased(&kx, &kx)?);
        dys.push(hsic_unbiased(&ky, &ky)?);
    }
    mb_ratio(&nums, &dxs, &dys)
}

/// Layer-by-layer similarity of a network with itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    layer_names: Vec<String>,
    values: Matrix,
}

impl SimilarityMatrix {
    /// Validates shape, symmetry (1e-8) and a unit diagonal (1e-8).
    pub fn new(layer_names: Vec<String>, values: Matrix) -> Result<SimilarityMatrix> {
        let l = layer_names.len();
        if values.shape() != (l, l) {
            return Err(Error::Argument(format!(
                "{l} layer names but a {}x{} value matrix",
                values.rows(),
                values.cols()
            )));
        }
        for i in 0..l {
            if (values[(i, i)] - 1.0).abs() > 1e-8 {
                return Err(Error::Argument(format!(
                    "diagonal entry {i} is {}, expected 1",
                    values[(i, i)]
                )));
            }
            for j in 0..i {
                if (values[(i, j)] - values[(j, i)]).abs() > 1e-8 {
                    return Err(Error::Argument(format!(
                        "asymmetric entries at ({i},{j}): {} vs {}",
                        values[(i, j)],
                        values[(j, i)]
                    )));
                }
            }
        }
        Ok(SimilarityMatrix { layer_names, values })
    }

    pub fn len(&self) -> usize {
        self.layer_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layer_names.is_empty()
    }

    pub fn layer_names(&self) -> &[String] {
        &self.layer_names
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Text grid: a header line of layer names, then one row per line with
    /// values at nine significant digits. Layer names must not contain
    /// whitespace (network layer names never do).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.layer_names.join(" "));
        out.push('\n');
        for i in 0..self.len() {
            let row: Vec<String> =
                self.values.row(i).iter().map(|v| format!("{v:.8e}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<SimilarityMatrix> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Data("empty similarity text".into()))?;
        let names: Vec<String> = header.split_whitespace().map(str::to_string).collect();
        if names.is_empty() {
            return Err(Error::Data("similarity header has no layer names".into()));
        }
        let l = names.len();
        let mut data = Vec::with_capacity(l * l);
        for (i, line) in lines.by_ref().take(l).enumerate() {
            let row: Vec<&str> = line.split_whitespace().collect();
            if row.len() != l {
                return Err(Error::Data(format!(
                    "similarity row {i} has {} values, expected {l}",
                    row.len()
                )));
            }
            for v in row {
                data.push(v.parse::<f64>().map_err(|_| {
                    Error::Data(format!("similarity row {i}: unparseable value `{v}`"))
                })?);
            }
        }
        if data.len() != l * l {
            return Err(Error::Data(format!(
                "similarity text has {} rows, expected {l}",
                data.len() / l
            )));
        }
        if lines.next().is_some() {
            return Err(Error::Data("trailing lines after similarity grid".into()));
        }
        SimilarityMatrix::new(names, Matrix::from_vec(l, l, data)?)
    }
}

/// Builds the L×L similarity matrix S over network layers from eval-mode
/// activation traces of N mini-batches: S_ij is the mini-batch CKA between
/// layer i and layer j features, the diagonal is pinned to exactly 1, and
/// tiny estimator negatives are clamped at −1e-9 for reporting.
///
/// Grams are computed one batch at a time so peak memory stays at
/// L·n² per batch rather than N·L·n².
pub fn layer_similarity(trace_batches: &[ActivationTrace]) -> Result<SimilarityMatrix> {
    let first = trace_batches
        .first()
        .ok_or_else(|| Error::Argument("no trace batches supplied".into()))?;
    let names: Vec<String> = first.layer_names().iter().map(|s| s.to_string()).collect();
    if names.is_empty() {
        return Err(Error::Argument("traces capture no layers".into()));
    }
    let l = names.len();
    for (b, trace) in trace_batches.iter().enumerate() {
        if trace.layer_names() != first.layer_names() {
            return Err(Error::Argument(format!(
                "trace batch {b} has a different layer list than batch 0"
            )));
        }
        let n = trace.entries()[0].1.rows();
        if n < 4 {
            return Err(Error::Argument(format!("trace batch {b} has {n} samples, need ≥ 4")));
        }
    }

    let pairs = l * (l + 1) / 2;
    let n_batches = trace_batches.len();
    let mut nums = vec![vec![0.0; n_batches]; pairs];
    let mut selfs = vec![vec![0.0; n_batches]; l];
    for (b, trace) in trace_batches.iter().enumerate() {
        let grams: Vec<Gram> =
            trace.entries().iter().map(|(_, feats)| gram_linear(feats)).collect();
        for i in 0..l {
            selfs[i][b] = hsic_unbiased(&grams[i], &grams[i])?;
        }
        let mut p = 0;
        for i in 0..l {
            for j in i..l {
                nums[p][b] = hsic_unbiased(&grams[i], &grams[j])?;
                p += 1;
            }
        }
    }

    let mut values = Matrix::zeros(l, l);
    let mut p = 0;
    for i in 0..l {
        for j in i..l {
            if i == j {
                values[(i, i)] = 1.0;
            } else {
                let raw = mb_ratio(&nums[p], &selfs[i], &selfs[j])?;
                let clamped = raw.max(REPORT_CLAMP);
                values[(i, j)] = clamped;
                values[(j, i)] = clamped;
            }
            p += 1;
        }
    }
    SimilarityMatrix::new(names, values)
}

/// Summary of heatmap structure. `block_score` is the size of the largest
/// contiguous diagonal block (at least 2 layers) whose pairwise similarities
/// all exceed `tau`, divided by the layer count — 0 when no block qualifies.
/// `progressive_score` is the negated Spearman rank correlation between layer
/// distance |i−j| and similarity S_ij.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureReport {
    pub block_score: f64,
    pub progressive_score: f64,
    pub tau: f64,
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation with average ranks; 0 when either side has no rank
/// variance (everything tied).
fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx <= 0.0 || vy <= 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Computes both structure scores for a similarity matrix with at least three
/// layers.
///
/// The rank correlation runs over all unordered index pairs *including*
/// self-pairs (i, i): the unit diagonal anchors the zero-distance end, so a
/// perfectly decaying matrix (identity-like) scores positive instead of
/// having every off-diagonal tie collapse the correlation to zero.
pub fn structure_report(s: &SimilarityMatrix, tau: f64) -> Result<StructureReport> {
    let l = s.len();
    if l < 3 {
        return Err(Error::Argument(format!("structure scores need ≥ 3 layers, got {l}")));
    }
    if !tau.is_finite() {
        return Err(Error::Argument(format!("tau must be finite, got {tau}")));
    }

    let mut best_block = 0usize;
    for start in 0..l {
        // Grow the block while every similarity against the new layer stays
        // above tau; entries between earlier members were checked already.
        let mut end = start;
        'grow: while end + 1 < l {
            for p in start..=end {
                if s.get(p, end + 1) <= tau {
                    break 'grow;
                }
            }
            end += 1;
        }
        if end > start {
            best_block = best_block.max(end - start + 1);
        }
    }
    let block_score = best_block as f64 / l as f64;

    let mut dists = Vec::with_capacity(l * (l + 1) / 2);
    let mut sims = Vec::with_capacity(l * (l + 1) / 2);
    for i in 0..l {
        for j in i..l {
            dists.push((j - i) as f64);
            sims.push(s.get(i, j));
        }
    }
    let progressive_score = -spearman(&dists, &sims);

    Ok(StructureReport { block_score, progressive_score, tau })
}
