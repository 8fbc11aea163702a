//! Rank-2 tensor conveniences.
//!
//! All values in this workspace are 64-bit floats arranged as `ndarray`
//! matrices. Scalars are `(1, 1)` matrices, column vectors `(n, 1)`, row
//! vectors `(1, n)`, and batches `(batch, features)`. Keeping a single
//! concrete type makes broadcasting rules and gradient shapes explicit.

use ndarray::{Array2, Axis};

/// The one tensor type of the workspace: a dense row-major `f64` matrix.
pub type Tensor = Array2<f64>;

/// `(1, 1)` scalar tensor.
pub fn scalar(v: f64) -> Tensor {
    Array2::from_elem((1, 1), v)
}

/// `(n, 1)` column vector.
pub fn col(values: &[f64]) -> Tensor {
    Array2::from_shape_vec((values.len(), 1), values.to_vec())
        .expect("column construction cannot fail")
}

/// `(1, n)` row vector.
pub fn row(values: &[f64]) -> Tensor {
    Array2::from_shape_vec((1, values.len()), values.to_vec())
        .expect("row construction cannot fail")
}

/// Dense matrix from row-major data.
pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Array2::from_shape_vec((rows, cols), data).expect("shape/data length mismatch")
}

/// True when every entry is finite.
pub fn all_finite(t: &Tensor) -> bool {
    t.iter().all(|v| v.is_finite())
}

/// Sum the gradient of a broadcast operation back down to the parent shape.
///
/// Broadcasting stretches axes of size 1; the adjoint of stretching is
/// summation over the stretched axis.
pub fn reduce_to_shape(grad: &Tensor, shape: (usize, usize)) -> Tensor {
    let mut g = grad.clone();
    if shape.0 == 1 && g.nrows() > 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() > 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    assert_eq!(g.dim(), shape, "gradient not reducible to parent shape");
    g
}

// ───────────────────────── tests ─────────────────────────
