//! Histogram KL estimate: bin both sample sets over their joint bounding
//! box, Laplace-smooth the counts, and take the discrete KL. Crude next to
//! the quadrature oracles, but it needs nothing but samples and is bounded
//! by construction — useful as a sanity metric on trained generators.

use crate::MetricsError;
use autodiff_nn::Tensor;

/// KL divergence between Laplace-smoothed histograms of `a` against `b`,
/// on a `bins`-per-axis grid spanning the union bounding box of both sets.
/// Supports 1-D and 2-D samples.
pub fn histogram_kl(a: &Tensor, b: &Tensor, bins: usize) -> Result<f64, MetricsError> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(MetricsError::EmptySamples);
    }
    if a.ncols() != b.ncols() {
        return Err(MetricsError::DimMismatch { expected: a.ncols(), got: b.ncols() });
    }
    let dim = a.ncols();
    if dim == 0 || dim > 2 {
        return Err(MetricsError::UnsupportedDim(dim));
    }
    if bins < 2 {
        return Err(MetricsError::BadParam(format!("need >= 2 bins per axis, got {bins}")));
    }

    // Joint bounding box, padded so that boundary samples land inside.
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for set in [a, b] {
        for i in 0..set.nrows() {
            for d in 0..dim {
                lo[d] = lo[d].min(set[(i, d)]);
                hi[d] = hi[d].max(set[(i, d)]);
            }
        }
    }
    for d in 0..dim {
        let pad = (hi[d] - lo[d]).max(1e-9) * 1e-9;
        lo[d] -= pad;
        hi[d] += pad;
    }

    let cells = if dim == 1 { bins } else { bins * bins };
    let index = |set: &Tensor, i: usize| -> usize {
        let mut idx = 0usize;
        for d in 0..dim {
            let w = (hi[d] - lo[d]) / bins as f64;
            let k = (((set[(i, d)] - lo[d]) / w) as usize).min(bins - 1);
            idx = idx * bins + k;
        }
        idx
    };

    let mut ca = vec![0u64; cells];
    let mut cb = vec![0u64; cells];
    for i in 0..a.nrows() {
        ca[index(a, i)] += 1;
    }
    for i in 0..b.nrows() {
        cb[index(b, i)] += 1;
    }

    // Laplace smoothing: one pseudo-count per cell.
    let na = a.nrows() as f64 + cells as f64;
    let nb = b.nrows() as f64 + cells as f64;
    let mut kl = 0.0f64;
    for (&x, &y) in ca.iter().zip(&cb) {
        let pa = (x as f64 + 1.0) / na;
        let pb = (y as f64 + 1.0) / nb;
        kl += pa * (pa / pb).ln();
    }
    Ok(kl.max(0.0))
}
