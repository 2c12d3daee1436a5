//! Gaussian-RBF mixture kernels, Gram matrices and squared-MMD estimators.
//!
//! The kernel is `k(x, y) = sum_i exp(-||x - y||^2 / (2 sigma_i^2))` over the
//! configured bandwidths, so `k(x, x)` equals the number of mixture
//! components. Squared MMD between two sample sets comes in two flavours:
//! the biased V-statistic (mean of the full Gram blocks, never meaningfully
//! negative, defined from one sample per side) and the unbiased U-statistic
//! (same-index pairs excluded, may be negative, needs two samples per side).
//! Both are linear in the kernel, so the mixture estimate is the sum of the
//! per-bandwidth estimates.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// Default bandwidth mixture used throughout the toolkit.
pub const DEFAULT_BANDWIDTHS: [f64; 6] = [2.0, 5.0, 10.0, 20.0, 40.0, 80.0];

/// A mixture of Gaussian RBF bandwidths.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    bandwidths: Vec<f64>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec { bandwidths: DEFAULT_BANDWIDTHS.to_vec() }
    }
}

impl KernelSpec {
    pub fn new(bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() {
            return Err(CoreError::invalid("kernel_spec", "empty bandwidth list"));
        }
        if bandwidths.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(CoreError::invalid(
                "kernel_spec",
                format!("bandwidths must be positive and finite, got {:?}", bandwidths),
            ));
        }
        Ok(KernelSpec { bandwidths })
    }

    pub fn single(sigma: f64) -> Result<Self> {
        KernelSpec::new(vec![sigma])
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn components(&self) -> usize {
        self.bandwidths.len()
    }

    /// Mixture kernel value for a squared distance.
    pub fn eval_sq_dist(&self, sq_dist: f64) -> f64 {
        let mut acc = 0.0;
        for s in &self.bandwidths {
            acc += libm::exp(-sq_dist / (2.0 * s * s));
        }
        acc
    }

    /// `sum_i exp(-d2 / (2 s_i^2)) / s_i^2`, the scalar weight that appears
    /// in the gradient of the mixture kernel with respect to its arguments.
    fn grad_weight(&self, sq_dist: f64) -> f64 {
        let mut acc = 0.0;
        for s in &self.bandwidths {
            let s2 = s * s;
            acc += libm::exp(-sq_dist / (2.0 * s2)) / s2;
        }
        acc
    }
}

/// A set of feature vectors, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    points: Tensor,
}

impl SampleSet {
    pub fn new(points: Tensor) -> Result<Self> {
        let (m, _d) = points.dims2("sample_set")?;
        if m == 0 {
            return Err(CoreError::invalid("sample_set", "empty set"));
        }
        points.check_finite("sample_set")?;
        Ok(SampleSet { points })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let m = rows.len();
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(m * d);
        for r in rows {
            if r.len() != d {
                return Err(CoreError::shape("sample_set", "ragged rows"));
            }
            data.extend_from_slice(r);
        }
        SampleSet::new(Tensor::new(vec![m, d], data)?)
    }

    pub fn len(&self) -> usize {
        self.points.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires m >= 1
    }

    pub fn dim(&self) -> usize {
        self.points.shape()[1]
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }
}

/// Single-bandwidth RBF kernel value, `exp(-||x - y||^2 / (2 sigma^2))`.
pub fn rbf_eval(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(CoreError::shape(
            "rbf_eval",
            format!("dimension mismatch: {} vs {}", x.len(), y.len()),
        ));
    }
    if !(sigma > 0.0) {
        return Err(CoreError::invalid("rbf_eval", format!("bandwidth must be > 0, got {sigma}")));
    }
    let mut d2 = 0.0;
    for (a, b) in x.iter().zip(y) {
        let diff = a - b;
        d2 += diff * diff;
    }
    Ok(libm::exp(-d2 / (2.0 * sigma * sigma)))
}

/// Mixture kernel value across all configured bandwidths.
pub fn mixture_eval(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64> {
    if x.len() != y.len() {
        return Err(CoreError::shape(
            "mixture_eval",
            format!("dimension mismatch: {} vs {}", x.len(), y.len()),
        ));
    }
    let mut d2 = 0.0;
    for (a, b) in x.iter().zip(y) {
        let diff = a - b;
        d2 += diff * diff;
    }
    Ok(spec.eval_sq_dist(d2))
}

/// Squared distances between all rows of `x` and all rows of `y`, computed
/// through the `||x||^2 + ||y||^2 - 2 x.y` expansion and clamped at zero so
/// rounding never produces a negative squared distance.
pub(crate) fn sq_dist_matrix(x: &[f64], m: usize, y: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut x_norms = vec![0.0; m];
    for i in 0..m {
        let row = &x[i * d..(i + 1) * d];
        x_norms[i] = row.iter().map(|v| v * v).sum();
    }
    let mut y_norms = vec![0.0; n];
    for j in 0..n {
        let row = &y[j * d..(j + 1) * d];
        y_norms[j] = row.iter().map(|v| v * v).sum();
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let xi = &x[i * d..(i + 1) * d];
        for j in 0..n {
            let yj = &y[j * d..(j + 1) * d];
            let mut dot = 0.0;
            for k in 0..d {
                dot += xi[k] * yj[k];
            }
            out[i * n + j] = (x_norms[i] + y_norms[j] - 2.0 * dot).max(0.0);
        }
    }
    out
}

/// Gram matrix `G[i][j] = k(x_i, y_j)` under the mixture kernel.
pub fn gram(x: &SampleSet, y: &SampleSet, spec: &KernelSpec) -> Result<Tensor> {
    if x.dim() != y.dim() {
        return Err(CoreError::shape(
            "gram",
            format!("dimension mismatch: {} vs {}", x.dim(), y.dim()),
        ));
    }
    let (m, n, d) = (x.len(), y.len(), x.dim());
    let mut data = sq_dist_matrix(x.points.data(), m, y.points.data(), n, d);
    for v in data.iter_mut() {
        *v = spec.eval_sq_dist(*v);
    }
    Tensor::new(vec![m, n], data)
}

/// Which squared-MMD estimator to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmdEstimator {
    /// V-statistic: plug-in mean over full Gram blocks. Defined for one
    /// sample per side; at least -1e-12 up to rounding.
    Biased,
    /// U-statistic: same-index pairs excluded. Needs two samples per side
    /// and may legitimately be negative.
    Unbiased,
}

impl MmdEstimator {
    pub fn name(self) -> &'static str {
        match self {
            MmdEstimator::Biased => "biased",
            MmdEstimator::Unbiased => "unbiased",
        }
    }
}

/// Raw-slice MMD entry point shared by the public functions and the tape
/// node, so composed losses and standalone calls agree bit for bit.
///
/// To make `mmd2(x, y) == mmd2(y, x)` exact (not just up to summation
/// order), the operands are put in a canonical order before evaluation; the
/// estimators are symmetric, so the value is unaffected.
pub(crate) fn mmd2_value(
    x: &[f64],
    m: usize,
    y: &[f64],
    n: usize,
    d: usize,
    spec: &KernelSpec,
    estimator: MmdEstimator,
) -> Result<f64> {
    match estimator {
        MmdEstimator::Biased => {
            if m == 0 || n == 0 {
                return Err(CoreError::invalid("mmd2_biased", "empty sample set"));
            }
        }
        MmdEstimator::Unbiased => {
            if m < 2 || n < 2 {
                return Err(CoreError::invalid(
                    "mmd2_unbiased",
                    format!("needs at least 2 samples per side, got {m} and {n}"),
                ));
            }
        }
    }
    let ((x, m), (y, n)) = canonical_order((x, m), (y, n));

    let kxx = kernel_block(x, m, x, m, d, spec);
    let kyy = kernel_block(y, n, y, n, d, spec);
    let kxy = kernel_block(x, m, y, n, d, spec);

    let value = match estimator {
        MmdEstimator::Biased => {
            let mean_xx: f64 = kxx.iter().sum::<f64>() / (m * m) as f64;
            let mean_yy: f64 = kyy.iter().sum::<f64>() / (n * n) as f64;
            let mean_xy: f64 = kxy.iter().sum::<f64>() / (m * n) as f64;
            mean_xx + mean_yy - 2.0 * mean_xy
        }
        MmdEstimator::Unbiased => {
            let off_xx: f64 = off_diagonal_sum(&kxx, m);
            let off_yy: f64 = off_diagonal_sum(&kyy, n);
            let sum_xy: f64 = kxy.iter().sum();
            off_xx / (m * (m - 1)) as f64 + off_yy / (n * (n - 1)) as f64
                - 2.0 * sum_xy / (m * n) as f64
        }
    };
    if !value.is_finite() {
        return Err(CoreError::NonFinite { op: "mmd2" });
    }
    Ok(value)
}

/// Gradients of the squared-MMD estimate with respect to the entries of
/// both sample sets. Returns (value, grad_x, grad_y).
pub(crate) fn mmd2_value_and_grads(
    x: &[f64],
    m: usize,
    y: &[f64],
    n: usize,
    d: usize,
    spec: &KernelSpec,
    estimator: MmdEstimator,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let value = mmd2_value(x, m, y, n, d, spec, estimator)?;

    let wxx = weight_block(x, m, x, m, d, spec);
    let wyy = weight_block(y, n, y, n, d, spec);
    let wxy = weight_block(x, m, y, n, d, spec);

    let mut gx = vec![0.0; m * d];
    let mut gy = vec![0.0; n * d];

    // d k(u, v) / du = -w(u, v) (u - v) with w the exp-weighted inverse
    // squared bandwidth sum; the within-set term doubles by symmetry.
    let (self_xx, self_yy) = match estimator {
        MmdEstimator::Biased => (2.0 / (m * m) as f64, 2.0 / (n * n) as f64),
        MmdEstimator::Unbiased => {
            (2.0 / (m * (m - 1)) as f64, 2.0 / (n * (n - 1)) as f64)
        }
    };
    let cross = 2.0 / (m * n) as f64;

    for i in 0..m {
        let xi = &x[i * d..(i + 1) * d];
        let gi = &mut gx[i * d..(i + 1) * d];
        for j in 0..m {
            if matches!(estimator, MmdEstimator::Unbiased) && i == j {
                continue;
            }
            let w = wxx[i * m + j] * self_xx;
            let xj = &x[j * d..(j + 1) * d];
            for k in 0..d {
                gi[k] += w * (xj[k] - xi[k]);
            }
        }
        for j in 0..n {
            let w = wxy[i * n + j] * cross;
            let yj = &y[j * d..(j + 1) * d];
            for k in 0..d {
                gi[k] += w * (xi[k] - yj[k]);
            }
        }
    }
    for j in 0..n {
        let yj = &y[j * d..(j + 1) * d];
        let gj = &mut gy[j * d..(j + 1) * d];
        for l in 0..n {
            if matches!(estimator, MmdEstimator::Unbiased) && j == l {
                continue;
            }
            let w = wyy[j * n + l] * self_yy;
            let yl = &y[l * d..(l + 1) * d];
            for k in 0..d {
                gj[k] += w * (yl[k] - yj[k]);
            }
        }
        for i in 0..m {
            let w = wxy[i * n + j] * cross;
            let xi = &x[i * d..(i + 1) * d];
            for k in 0..d {
                gj[k] += w * (yj[k] - xi[k]);
            }
        }
    }
    Ok((value, gx, gy))
}

type SetView<'a> = (&'a [f64], usize);

fn canonical_order<'a>(a: SetView<'a>, b: SetView<'a>) -> (SetView<'a>, SetView<'a>) {
    let swap = match a.1.cmp(&b.1) {
        core::cmp::Ordering::Less => false,
        core::cmp::Ordering::Greater => true,
        core::cmp::Ordering::Equal => {
            let mut swap = false;
            for (va, vb) in a.0.iter().zip(b.0) {
                match va.to_bits().cmp(&vb.to_bits()) {
                    core::cmp::Ordering::Less => break,
                    core::cmp::Ordering::Greater => {
                        swap = true;
                        break;
                    }
                    core::cmp::Ordering::Equal => {}
                }
            }
            swap
        }
    };
    if swap {
        (b, a)
    } else {
        (a, b)
    }
}

fn kernel_block(x: &[f64], m: usize, y: &[f64], n: usize, d: usize, spec: &KernelSpec) -> Vec<f64> {
    let mut block = sq_dist_matrix(x, m, y, n, d);
    for v in block.iter_mut() {
        *v = spec.eval_sq_dist(*v);
    }
    block
}

fn weight_block(x: &[f64], m: usize, y: &[f64], n: usize, d: usize, spec: &KernelSpec) -> Vec<f64> {
    let mut block = sq_dist_matrix(x, m, y, n, d);
    for v in block.iter_mut() {
        *v = spec.grad_weight(*v);
    }
    block
}

fn off_diagonal_sum(block: &[f64], n: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += block[i * n + j];
            }
        }
    }
    acc
}

/// Biased (V-statistic) squared MMD between two sample sets.
pub fn mmd2_biased(x: &SampleSet, y: &SampleSet, spec: &KernelSpec) -> Result<f64> {
    check_dims(x, y)?;
    mmd2_value(
        x.points.data(),
        x.len(),
        y.points.data(),
        y.len(),
        x.dim(),
        spec,
        MmdEstimator::Biased,
    )
}

/// Unbiased (U-statistic) squared MMD between two sample sets.
pub fn mmd2_unbiased(x: &SampleSet, y: &SampleSet, spec: &KernelSpec) -> Result<f64> {
    check_dims(x, y)?;
    mmd2_value(
        x.points.data(),
        x.len(),
        y.points.data(),
        y.len(),
        x.dim(),
        spec,
        MmdEstimator::Unbiased,
    )
}

/// Squared MMD under the chosen estimator.
pub fn mmd2(x: &SampleSet, y: &SampleSet, spec: &KernelSpec, estimator: MmdEstimator) -> Result<f64> {
    match estimator {
        MmdEstimator::Biased => mmd2_biased(x, y, spec),
        MmdEstimator::Unbiased => mmd2_unbiased(x, y, spec),
    }
}

/// Squared MMD and its gradient with respect to the entries of `x`.
pub fn mmd2_grad(
    x: &SampleSet,
    y: &SampleSet,
    spec: &KernelSpec,
    estimator: MmdEstimator,
) -> Result<(f64, Tensor)> {
    check_dims(x, y)?;
    let (value, gx, _gy) = mmd2_value_and_grads(
        x.points.data(),
        x.len(),
        y.points.data(),
        y.len(),
        x.dim(),
        spec,
        estimator,
    )?;
    Ok((value, Tensor::new(vec![x.len(), x.dim()], gx)?))
}

/// Variant estimator that scales all three pairwise sums by `m/2` and skips
/// matching-index cross pairs; requires equally sized sets. It is not an
/// unbiased estimator and is excluded from every training and reporting
/// path - it exists only so published values computed with this
/// normalization can be cross-checked.
pub fn mmd2_half_normalized(x: &SampleSet, y: &SampleSet, spec: &KernelSpec) -> Result<f64> {
    check_dims(x, y)?;
    let (m, n) = (x.len(), y.len());
    if m != n {
        return Err(CoreError::invalid(
            "mmd2_half_normalized",
            format!("requires equal set sizes, got {m} and {n}"),
        ));
    }
    if m < 2 {
        return Err(CoreError::invalid("mmd2_half_normalized", "needs at least 2 samples per side"));
    }
    let d = x.dim();
    let kxx = kernel_block(x.points.data(), m, x.points.data(), m, d, spec);
    let kyy = kernel_block(y.points.data(), n, y.points.data(), n, d, spec);
    let kxy = kernel_block(x.points.data(), m, y.points.data(), n, d, spec);
    let scale = 2.0 / m as f64;
    let mut cross = 0.0;
    for i in 0..m {
        for j in 0..n {
            if i != j {
                cross += kxy[i * n + j];
            }
        }
    }
    Ok(scale * (off_diagonal_sum(&kxx, m) + off_diagonal_sum(&kyy, n) - cross))
}

fn check_dims(x: &SampleSet, y: &SampleSet) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(CoreError::shape(
            "mmd2",
            format!("dimension mismatch: {} vs {}", x.dim(), y.dim()),
        ));
    }
    Ok(())
}
