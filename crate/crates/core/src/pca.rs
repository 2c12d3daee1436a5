//! Principal-component projection via power iteration with deflation.
//!
//! Good enough for projecting a few hundred feature vectors onto their top
//! three components; no external linear algebra needed. Rank deficiency is
//! allowed: components beyond the data rank come back with zero variance
//! and a zero direction.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct PcaProjection {
    /// N x k coordinates in component space.
    pub projected: Tensor,
    /// Variance captured by each component, non-increasing.
    pub explained_variance: Vec<f64>,
    /// k x f component directions (unit vectors, or zero when the data rank
    /// is exhausted).
    pub components: Tensor,
    /// Per-feature mean removed before projection.
    pub mean: Vec<f64>,
}

const POWER_ITERATIONS: usize = 1000;
const CONVERGENCE_TOL: f64 = 1e-13;

/// Project `features` (N x f) onto its top `components` principal axes.
pub fn pca_project(features: &Tensor, components: usize) -> Result<PcaProjection> {
    let (n, f) = features.dims2("pca_project")?;
    if components == 0 {
        return Err(CoreError::invalid("pca_project", "need at least one component"));
    }
    if n <= components {
        return Err(CoreError::invalid(
            "pca_project",
            alloc::format!("need more than {components} samples, got {n}"),
        ));
    }
    features.check_finite("pca_project")?;

    let mut mean = vec![0.0; f];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(features.row(i)) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    // sample covariance (divided by n - 1)
    let mut cov = vec![0.0; f * f];
    for i in 0..n {
        let row = features.row(i);
        for a in 0..f {
            let da = row[a] - mean[a];
            for b in a..f {
                cov[a * f + b] += da * (row[b] - mean[b]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..f {
        for b in a..f {
            let v = cov[a * f + b] / denom;
            cov[a * f + b] = v;
            cov[b * f + a] = v;
        }
    }

    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(components);
    let mut variances = Vec::with_capacity(components);
    let mut rng = Rng::stream(0x70776572, "pca-start");
    for _ in 0..components {
        let (axis, variance) = dominant_eigenpair(&cov, f, &mut rng);
        if variance > 0.0 {
            deflate(&mut cov, f, &axis, variance);
        }
        axes.push(axis);
        variances.push(variance);
    }

    // deflation gives a non-increasing sequence in exact arithmetic; sort to
    // absorb rounding on near-equal eigenvalues
    let mut order: Vec<usize> = (0..components).collect();
    order.sort_by(|&a, &b| f64::total_cmp(&variances[b], &variances[a]));
    let axes: Vec<Vec<f64>> = order.iter().map(|&i| axes[i].clone()).collect();
    let variances: Vec<f64> = order.iter().map(|&i| variances[i]).collect();

    let mut projected = vec![0.0; n * components];
    for i in 0..n {
        let row = features.row(i);
        for (k, axis) in axes.iter().enumerate() {
            let mut dot = 0.0;
            for a in 0..f {
                dot += (row[a] - mean[a]) * axis[a];
            }
            projected[i * components + k] = dot;
        }
    }

    let mut axes_flat = Vec::with_capacity(components * f);
    for axis in &axes {
        axes_flat.extend_from_slice(axis);
    }
    Ok(PcaProjection {
        projected: Tensor::new(vec![n, components], projected)?,
        explained_variance: variances,
        components: Tensor::new(vec![components, f], axes_flat)?,
        mean,
    })
}

fn dominant_eigenpair(cov: &[f64], f: usize, rng: &mut Rng) -> (Vec<f64>, f64) {
    // quick exit for an (almost) zero matrix: no variance left
    let max_abs = cov.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max_abs < 1e-300 {
        return (vec![0.0; f], 0.0);
    }

    let mut v: Vec<f64> = (0..f).map(|_| rng.normal()).collect();
    normalize(&mut v);
    let mut value = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let mut w = vec![0.0; f];
        for a in 0..f {
            let mut acc = 0.0;
            let row = &cov[a * f..(a + 1) * f];
            for b in 0..f {
                acc += row[b] * v[b];
            }
            w[a] = acc;
        }
        let norm = l2(&w);
        if norm < 1e-300 {
            return (vec![0.0; f], 0.0);
        }
        for x in w.iter_mut() {
            *x /= norm;
        }
        let mut delta = 0.0f64;
        for (a, b) in w.iter().zip(&v) {
            delta = delta.max((a - b).abs().min((a + b).abs()));
        }
        v = w;
        value = norm;
        if delta < CONVERGENCE_TOL {
            break;
        }
    }
    // Rayleigh quotient for the final value
    let mut quad = 0.0;
    for a in 0..f {
        let row = &cov[a * f..(a + 1) * f];
        let mut acc = 0.0;
        for b in 0..f {
            acc += row[b] * v[b];
        }
        quad += v[a] * acc;
    }
    let _ = value;
    (v, quad.max(0.0))
}

fn deflate(cov: &mut [f64], f: usize, axis: &[f64], value: f64) {
    for a in 0..f {
        for b in 0..f {
            cov[a * f + b] -= value * axis[a] * axis[b];
        }
    }
}

fn l2(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

fn normalize(v: &mut [f64]) {
    let n = l2(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}
