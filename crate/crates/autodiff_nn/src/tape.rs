//! Reverse-mode automatic differentiation on a linear tape.
//!
//! The tape is an arena of nodes created in topological order: every
//! operation references already-existing nodes, so reverse iteration over the
//! arena is a valid reverse-topological traversal and `backward` visits each
//! node exactly once. Nodes hold rank-2 tensors; elementwise operations
//! broadcast exactly like `ndarray`/NumPy (axes of size 1 stretch), and the
//! backward pass sums gradients over stretched axes so that a node's gradient
//! accumulator always has the shape of its value.
//!
//! Differentiable primitives cover what multilayer perceptrons and the
//! score-matching losses in this workspace need: matrix product, broadcasting
//! arithmetic, `tanh`/softplus/exp nonlinearities, per-row dot products,
//! column concatenation, and full reduction. Domain-specific differentiable
//! functions (e.g. analytic mixture scores) plug in through [`CustomOp`]
//! with a caller-supplied exact vector–Jacobian product.
//!
//! Stop-gradient semantics: a leaf created with `requires_grad = false`
//! contributes its value but never receives gradient, and no gradient flows
//! through it to anything else.

use crate::tensor::{all_finite, reduce_to_shape, scalar, Tensor};
use thiserror::Error;

/// Errors raised by graph construction and the backward pass.
#[derive(Debug, Error)]
pub enum TapeError {
    /// `backward` requires a scalar (1×1) root node.
    #[error("backward root must be scalar (1x1), got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    /// An input tensor contained NaN or infinity.
    #[error("non-finite values in {context}")]
    NonFinite { context: String },
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Exact backward rule for a caller-defined operation.
pub trait CustomOp {
    /// Name used in diagnostics.
    fn name(&self) -> &'static str;
    /// Given `d loss / d output` and the input values, return
    /// `d loss / d input` for every input, in order.
    fn backward(&self, grad_out: &Tensor, inputs: &[Tensor]) -> Vec<Tensor>;
}

enum Rule {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    RowDot(NodeId, NodeId),
    ConcatCols(NodeId, NodeId),
    Sum(NodeId),
    Custom { inputs: Vec<NodeId>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Tensor,
    rule: Rule,
    requires_grad: bool,
}

/// Arena holding one computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `id`, if any flowed there.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient as a dense tensor, zeros when no gradient flowed.
    pub fn dense(&self, tape: &Tape, id: NodeId) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(id).raw_dim()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Whether gradients flow into this node.
    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, rule: Rule, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, rule, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// New leaf. `requires_grad = false` makes it a frozen constant
    /// (stop-gradient semantics).
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Rule::Leaf, requires_grad)
    }

    /// Frozen constant leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    fn binary_grad(&self, a: NodeId, b: NodeId) -> bool {
        self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad
    }

    // ───────────────────────── primitive operations ─────────────────────────

    /// Elementwise sum with NumPy-style broadcasting.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Rule::Add(a, b), self.binary_grad(a, b))
    }

    /// Elementwise difference with broadcasting.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Rule::Sub(a, b), self.binary_grad(a, b))
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Rule::Mul(a, b), self.binary_grad(a, b))
    }

    /// Elementwise quotient with broadcasting.
    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value / &self.nodes[b.0].value;
        self.push(v, Rule::Div(a, b), self.binary_grad(a, b))
    }

    /// Matrix product `(m,k) · (k,n) -> (m,n)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(v, Rule::MatMul(a, b), self.binary_grad(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.mapv(|x| -x);
        self.push(v, Rule::Neg(a), self.nodes[a.0].requires_grad)
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a.0].value.mapv(|x| c * x);
        self.push(v, Rule::Scale(a, c), self.nodes[a.0].requires_grad)
    }

    /// Add a constant to every entry.
    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a.0].value.mapv(|x| x + c);
        self.push(v, Rule::AddConst(a), self.nodes[a.0].requires_grad)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.mapv(f64::tanh);
        self.push(v, Rule::Tanh(a), self.nodes[a.0].requires_grad)
    }

    /// Numerically stable softplus `ln(1 + e^x)`.
    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.mapv(softplus_stable);
        self.push(v, Rule::Softplus(a), self.nodes[a.0].requires_grad)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.mapv(f64::exp);
        self.push(v, Rule::Exp(a), self.nodes[a.0].requires_grad)
    }

    /// Per-row dot product: `(B,n) x (B,n) -> (B,1)`.
    pub fn rowdot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.dim(), vb.dim(), "rowdot expects equal shapes");
        let mut out = Tensor::zeros((va.nrows(), 1));
        for (i, (ra, rb)) in va.rows().into_iter().zip(vb.rows()).enumerate() {
            out[(i, 0)] = ra.dot(&rb);
        }
        self.push(out, Rule::RowDot(a, b), self.binary_grad(a, b))
    }

    /// Concatenate along columns: `(B,n) ++ (B,m) -> (B,n+m)`.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.nrows(), vb.nrows(), "concat_cols expects equal row counts");
        let mut out = Tensor::zeros((va.nrows(), va.ncols() + vb.ncols()));
        out.slice_mut(ndarray::s![.., ..va.ncols()]).assign(va);
        out.slice_mut(ndarray::s![.., va.ncols()..]).assign(vb);
        self.push(out, Rule::ConcatCols(a, b), self.binary_grad(a, b))
    }

    /// Sum of all entries, producing a scalar node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = scalar(self.nodes[a.0].value.sum());
        self.push(v, Rule::Sum(a), self.nodes[a.0].requires_grad)
    }

    /// Mean of all entries, producing a scalar node.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a.0].value.len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Caller-defined operation with an exact custom backward rule.
    ///
    /// `value` must be the result of applying the operation to the current
    /// values of `inputs`; the tape stores it verbatim.
    pub fn custom(&mut self, inputs: Vec<NodeId>, value: Tensor, op: Box<dyn CustomOp>) -> NodeId {
        let rg = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        self.push(value, Rule::Custom { inputs, op }, rg)
    }

    // ───────────────────────── backward pass ─────────────────────────

    /// Reverse-mode sweep from a scalar root.
    ///
    /// Returns the gradient of `root` with respect to every node that both
    /// requires gradient and is an ancestor of `root`. Nodes with
    /// `requires_grad = false` never receive gradient.
    pub fn backward(&self, root: NodeId) -> Result<Gradients, TapeError> {
        let rv = &self.nodes[root.0].value;
        if rv.dim() != (1, 1) {
            return Err(TapeError::NonScalarRoot { rows: rv.nrows(), cols: rv.ncols() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(scalar(1.0));

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                grads[idx] = None; // invariant: frozen nodes never hold gradient
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            debug_assert_eq!(
                g.dim(),
                self.nodes[idx].value.dim(),
                "gradient shape must equal value shape"
            );
            self.accumulate_parents(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate_parents(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let add_into = |grads: &mut [Option<Tensor>], id: NodeId, contrib: Tensor| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => *acc += &contrib,
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |id: NodeId| &self.nodes[id.0].value;

        match &self.nodes[idx].rule {
            Rule::Leaf => {}
            Rule::Add(a, b) => {
                add_into(grads, *a, reduce_to_shape(g, val(*a).dim()));
                add_into(grads, *b, reduce_to_shape(g, val(*b).dim()));
            }
            Rule::Sub(a, b) => {
                add_into(grads, *a, reduce_to_shape(g, val(*a).dim()));
                add_into(grads, *b, reduce_to_shape(&g.mapv(|x| -x), val(*b).dim()));
            }
            Rule::Mul(a, b) => {
                add_into(grads, *a, reduce_to_shape(&(g * val(*b)), val(*a).dim()));
                add_into(grads, *b, reduce_to_shape(&(g * val(*a)), val(*b).dim()));
            }
            Rule::Div(a, b) => {
                add_into(grads, *a, reduce_to_shape(&(g / val(*b)), val(*a).dim()));
                let gb = g * &(-val(*a) / &(val(*b) * val(*b)));
                add_into(grads, *b, reduce_to_shape(&gb, val(*b).dim()));
            }
            Rule::MatMul(a, b) => {
                add_into(grads, *a, g.dot(&val(*b).t()));
                add_into(grads, *b, val(*a).t().dot(g));
            }
            Rule::Neg(a) => add_into(grads, *a, g.mapv(|x| -x)),
            Rule::Scale(a, c) => add_into(grads, *a, g.mapv(|x| c * x)),
            Rule::AddConst(a) => add_into(grads, *a, g.clone()),
            Rule::Tanh(a) => {
                let y = &self.nodes[idx].value;
                add_into(grads, *a, g * &y.mapv(|t| 1.0 - t * t));
            }
            Rule::Softplus(a) => {
                let d = val(*a).mapv(sigmoid_stable);
                add_into(grads, *a, g * &d);
            }
            Rule::Exp(a) => {
                add_into(grads, *a, g * &self.nodes[idx].value);
            }
            Rule::RowDot(a, b) => {
                // g is (B,1); broadcast it across the row entries.
                add_into(grads, *a, g * val(*b));
                add_into(grads, *b, g * val(*a));
            }
            Rule::ConcatCols(a, b) => {
                let na = val(*a).ncols();
                add_into(grads, *a, g.slice(ndarray::s![.., ..na]).to_owned());
                add_into(grads, *b, g.slice(ndarray::s![.., na..]).to_owned());
            }
            Rule::Sum(a) => {
                let c = g[(0, 0)];
                add_into(grads, *a, Tensor::from_elem(val(*a).raw_dim(), c));
            }
            Rule::Custom { inputs, op } => {
                let vals: Vec<Tensor> = inputs.iter().map(|id| val(*id).clone()).collect();
                let contribs = op.backward(g, &vals);
                assert_eq!(
                    contribs.len(),
                    inputs.len(),
                    "custom op `{}` must return one gradient per input",
                    op.name()
                );
                for (id, contrib) in inputs.iter().zip(contribs) {
                    assert_eq!(
                        contrib.dim(),
                        val(*id).dim(),
                        "custom op `{}` gradient shape mismatch",
                        op.name()
                    );
                    add_into(grads, *id, contrib);
                }
            }
        }
    }

    /// Guard helper for entry points: error if a tensor contains NaN/inf.
    pub fn check_finite(t: &Tensor, context: &str) -> Result<(), TapeError> {
        if all_finite(t) {
            Ok(())
        } else {
            Err(TapeError::NonFinite { context: context.to_string() })
        }
    }
}

fn softplus_stable(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid_stable(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ───────────────────────── tests ─────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{col, matrix, row};

    #[test]
    fn sum_of_squares_gradient_is_two_p() {
        // loss = sum(p * p), p = (1, 2, 3) -> grad = (2, 4, 6)
        let mut tape = Tape::new();
        let p = tape.leaf(col(&[1.0, 2.0, 3.0]), true);
        let sq = tape.mul(p, p);
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap(), &col(&[2.0, 4.0, 6.0]));
    }

    #[test]
    fn linear_gradient_is_the_constant() {
        // loss = c * p with c = 2.5 -> grad = 2.5
        let mut tape = Tape::new();
        let p = tape.leaf(scalar(0.3), true);
        let loss = tape.scale(p, 2.5);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap(), &scalar(2.5));
    }

    #[test]
    fn frozen_leaf_receives_no_gradient() {
        let mut tape = Tape::new();
        let live = tape.leaf(scalar(2.0), true);
        let frozen = tape.leaf(scalar(3.0), false);
        let prod = tape.mul(live, frozen);
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(live).unwrap(), &scalar(3.0));
        assert!(grads.get(frozen).is_none());
        assert_eq!(grads.dense(&tape, frozen), scalar(0.0));
    }

    #[test]
    fn loss_through_frozen_only_gives_zero_everywhere() {
        // A frozen snapshot participating alone contributes zero gradient.
        let mut tape = Tape::new();
        let frozen = tape.constant(col(&[1.0, -2.0]));
        let sq = tape.mul(frozen, frozen);
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(frozen).is_none());
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let v = tape.leaf(col(&[1.0, 2.0]), true);
        let doubled = tape.scale(v, 2.0);
        match tape.backward(doubled) {
            Err(TapeError::NonScalarRoot { rows: 2, cols: 1 }) => {}
            other => panic!("expected NonScalarRoot, got {other:?}"),
        }
    }

    #[test]
    fn matmul_backward_matches_hand_formula() {
        // loss = sum(A·B); dA = 1·B^T, dB = A^T·1
        let mut tape = Tape::new();
        let a = tape.leaf(matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]), true);
        let b = tape.leaf(matrix(3, 2, vec![7., 8., 9., 10., 11., 12.]), true);
        let ab = tape.matmul(a, b);
        let loss = tape.sum(ab);
        let grads = tape.backward(loss).unwrap();
        let ones = Tensor::ones((2, 2));
        assert_eq!(grads.get(a).unwrap(), &ones.dot(&tape.value(b).t()));
        assert_eq!(grads.get(b).unwrap(), &tape.value(a).t().dot(&ones));
    }

    #[test]
    fn broadcast_backward_reduces_shapes() {
        // (B,n) + (1,n): bias gradient sums over the batch.
        let mut tape = Tape::new();
        let x = tape.leaf(matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]), true);
        let bias = tape.leaf(row(&[10.0, 20.0]), true);
        let shifted = tape.add(x, bias);
        let loss = tape.sum(shifted);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(bias).unwrap(), &row(&[3.0, 3.0]));
        assert_eq!(grads.get(x).unwrap(), &Tensor::ones((3, 2)));
    }

    #[test]
    fn column_broadcast_mul_backward() {
        // (B,n) * (B,1): per-sample scaling, gradient of the column sums cols.
        let mut tape = Tape::new();
        let x = tape.leaf(matrix(2, 2, vec![1., 2., 3., 4.]), true);
        let c = tape.leaf(col(&[10.0, 100.0]), true);
        let scaled = tape.mul(x, c);
        let loss = tape.sum(scaled);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(c).unwrap(), &col(&[3.0, 7.0]));
        assert_eq!(grads.get(x).unwrap(), &matrix(2, 2, vec![10., 10., 100., 100.]));
    }

    #[test]
    fn concat_and_rowdot_roundtrip_gradients() {
        let mut tape = Tape::new();
        let a = tape.leaf(matrix(2, 2, vec![1., 2., 3., 4.]), true);
        let b = tape.leaf(matrix(2, 1, vec![5., 6.]), true);
        let cat = tape.concat_cols(a, b); // (2,3)
        let d = tape.rowdot(cat, cat); // per-row squared norm
        let loss = tape.sum(d);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap(), &matrix(2, 2, vec![2., 4., 6., 8.]));
        assert_eq!(grads.get(b).unwrap(), &matrix(2, 1, vec![10., 12.]));
    }

    /// Central finite differences of a scalar-valued builder over one leaf.
    fn fd_grad(build: impl Fn(&Tensor) -> f64, at: &Tensor, h: f64) -> Tensor {
        let mut g = Tensor::zeros(at.raw_dim());
        for idx in 0..at.len() {
            let (r, c) = (idx / at.ncols(), idx % at.ncols());
            let mut plus = at.clone();
            plus[(r, c)] += h;
            let mut minus = at.clone();
            minus[(r, c)] -= h;
            g[(r, c)] = (build(&plus) - build(&minus)) / (2.0 * h);
        }
        g
    }

    #[test]
    fn elementwise_chain_matches_finite_differences() {
        // loss = sum(softplus(tanh(x) * x / (x^2 + 2)) + exp(-x))
        let x0 = matrix(2, 3, vec![0.3, -1.2, 0.8, 2.1, -0.4, 0.05]);
        let eval = |xv: &Tensor| -> f64 {
            let mut tape = Tape::new();
            let x = tape.leaf(xv.clone(), true);
            let tx = tape.tanh(x);
            let prod = tape.mul(tx, x);
            let xsq = tape.mul(x, x);
            let denom = tape.add_const(xsq, 2.0);
            let ratio = tape.div(prod, denom);
            let sp = tape.softplus(ratio);
            let nx = tape.neg(x);
            let ex = tape.exp(nx);
            let tot = tape.add(sp, ex);
            let loss = tape.sum(tot);
            tape.value(loss)[(0, 0)]
        };
        let autodiff = {
            let mut tape = Tape::new();
            let x = tape.leaf(x0.clone(), true);
            let tx = tape.tanh(x);
            let prod = tape.mul(tx, x);
            let xsq = tape.mul(x, x);
            let denom = tape.add_const(xsq, 2.0);
            let ratio = tape.div(prod, denom);
            let sp = tape.softplus(ratio);
            let nx = tape.neg(x);
            let ex = tape.exp(nx);
            let tot = tape.add(sp, ex);
            let loss = tape.sum(tot);
            let grads = tape.backward(loss).unwrap();
            grads.get(x).unwrap().clone()
        };
        let numeric = fd_grad(eval, &x0, 1e-6);
        for (a, n) in autodiff.iter().zip(numeric.iter()) {
            assert!((a - n).abs() < 1e-7, "autodiff {a} vs fd {n}");
        }
    }

    #[test]
    fn custom_op_backward_is_applied() {
        // y = x^3 via custom op with exact backward 3x^2.
        struct Cube;
        impl CustomOp for Cube {
            fn name(&self) -> &'static str {
                "cube"
            }
            fn backward(&self, grad_out: &Tensor, inputs: &[Tensor]) -> Vec<Tensor> {
                vec![grad_out * &inputs[0].mapv(|v| 3.0 * v * v)]
            }
        }
        let mut tape = Tape::new();
        let x = tape.leaf(col(&[1.0, 2.0]), true);
        let cubed = tape.value(x).mapv(|v| v * v * v);
        let y = tape.custom(vec![x], cubed, Box::new(Cube));
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &col(&[3.0, 12.0]));
    }

    #[test]
    fn gradient_accumulates_across_reuse() {
        // loss = sum(x*x) + sum(x) -> grad = 2x + 1
        let mut tape = Tape::new();
        let x = tape.leaf(col(&[1.5, -0.5]), true);
        let sq = tape.mul(x, x);
        let s1 = tape.sum(sq);
        let s2 = tape.sum(x);
        let loss = tape.add(s1, s2);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &col(&[4.0, 0.0]));
    }
}
