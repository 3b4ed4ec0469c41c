//! The tensor tape: reverse-mode autodiff with paired value/tangent
//! adjoints.
//!
//! Nodes hold matrix values (`Array2<f64>`) and optional forward-mode
//! tangents. Complex amplitude vectors are stored as `[B, 2]` matrices
//! (column 0 = real part, column 1 = imaginary part), so no complex
//! differentiation calculus is needed anywhere.
//!
//! Recording is single-threaded by design; independent tapes may run
//! concurrently. The backward pass visits nodes in reverse creation order
//! (which is a reverse topological order, since operands always precede
//! their consumers) exactly once, accumulating both ∂L/∂value and
//! ∂L/∂tangent for every node. The latter is what makes losses that
//! *consume* a tangent — extracted with [`Tape::tangent_of`] — exactly
//! differentiable in the parameters.

use ndarray::{Array2, Axis};
use num_complex::Complex64;

use crate::AdError;

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// A named block inside a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct BlockInfo {
    pub label: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl BlockInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat storage for every trainable parameter of a model: network weights,
/// Hamiltonian coefficients, and noise parameters alike. Gradients come
/// back as one flat vector aligned with this store, so a single optimizer
/// updates everything jointly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    data: Vec<f64>,
    blocks: Vec<BlockInfo>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a `rows × cols` block initialized by `init`, returning its
    /// offset.
    pub fn register(
        &mut self,
        label: impl Into<String>,
        rows: usize,
        cols: usize,
        mut init: impl FnMut() -> f64,
    ) -> usize {
        let offset = self.data.len();
        self.data.extend(std::iter::repeat_with(&mut init).take(rows * cols));
        self.blocks.push(BlockInfo {
            label: label.into(),
            offset,
            rows,
            cols,
        });
        offset
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn blocks(&self) -> &[BlockInfo] {
        &self.blocks
    }

    pub fn slice(&self, offset: usize, len: usize) -> &[f64] {
        &self.data[offset..offset + len]
    }

    /// Rebuilds a store from checkpointed raw parts.
    pub fn from_raw(data: Vec<f64>, blocks: Vec<BlockInfo>) -> Result<Self, AdError> {
        for b in &blocks {
            if b.offset + b.len() > data.len() {
                return Err(AdError::CorruptCheckpoint {
                    reason: format!(
                        "block '{}' spans {}..{} but the store holds {} values",
                        b.label,
                        b.offset,
                        b.offset + b.len(),
                        data.len()
                    ),
                });
            }
        }
        Ok(Self { data, blocks })
    }

    /// Restores a snapshot taken from an identical layout.
    pub fn restore(&mut self, data: &[f64]) -> Result<(), AdError> {
        if data.len() != self.data.len() {
            return Err(AdError::ShapeMismatch {
                context: "parameter restore",
                expected: self.data.len().to_string(),
                got: data.len().to_string(),
            });
        }
        self.data.copy_from_slice(data);
        Ok(())
    }
}

#[derive(Debug)]
enum Op {
    /// Constant or external input; may carry a tangent seed.
    Leaf,
    /// Copy of `len` store values starting at `offset`; receives gradient.
    Param { offset: usize },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Neg(NodeId),
    /// Elementwise product of same-shape nodes.
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    /// `[B,K] + [1,K]` row broadcast.
    AddRow(NodeId, NodeId),
    Tanh(NodeId),
    Square(NodeId),
    Exp(NodeId),
    Sigmoid(NodeId),
    Recip(NodeId),
    /// ln(max(a, floor)); clamped entries count toward `clamp_events` and
    /// receive zero derivative.
    LogClamped(NodeId, f64),
    Scale(NodeId, f64),
    AddConst(NodeId),
    /// Elementwise product with a constant matrix.
    MulConst(NodeId),
    /// Sum of every element, yielding 1×1.
    Sum(NodeId),
    /// Broadcast product of a 1×1 scalar node with a matrix node.
    ScalarMul(NodeId, NodeId),
    GatherRows(NodeId, Vec<usize>),
    PermuteRows(NodeId, Vec<usize>),
    /// Complex signed permutation on [B,2]: out[y] = phase[y]·a[src[y]].
    PhasePermute {
        a: NodeId,
        src: Vec<usize>,
        phase_re: Vec<f64>,
        phase_im: Vec<f64>,
    },
    /// Complex multiplication by i on [B,2].
    MulByI(NodeId),
    /// Tensor-product single-qubit unitaries on [B,2] (B = 2ⁿ).
    LocalUnitary {
        a: NodeId,
        gates: Vec<Option<[Complex64; 4]>>,
    },
    /// Extracts the tangent of `a` as a value.
    TangentOf(NodeId),
    /// Passes the value through, dropping the tangent (exact: use when the
    /// tangent of `a` is consumed solely via TangentOf elsewhere).
    StopTangent(NodeId),
    /// [B,2] → [B,1]: squared complex modulus per row.
    AbsSqRows(NodeId),
}

struct Node {
    op: Op,
    value: Array2<f64>,
    tangent: Option<Array2<f64>>,
    /// Constant payload for MulConst (kept out of `Op` to keep it Copy-ish).
    aux: Option<Array2<f64>>,
}

/// A recording of a computation, ready for a backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    clamp_events: u64,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of logarithm inputs that hit the clamp floor while
    /// recording.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn tangent(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.nodes[id.0].tangent.as_ref()
    }

    /// The value of a 1×1 node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.dim(), (1, 1));
        v[(0, 0)]
    }

    fn push(&mut self, op: Op, value: Array2<f64>, tangent: Option<Array2<f64>>) -> NodeId {
        self.push_aux(op, value, tangent, None)
    }

    fn push_aux(
        &mut self,
        op: Op,
        value: Array2<f64>,
        tangent: Option<Array2<f64>>,
        aux: Option<Array2<f64>>,
    ) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            tangent,
            aux,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant with no tangent and no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Leaf, value, None)
    }

    /// An input leaf, optionally carrying a forward-mode tangent seed.
    pub fn input(&mut self, value: Array2<f64>, tangent: Option<Array2<f64>>) -> NodeId {
        if let Some(t) = &tangent {
            debug_assert_eq!(t.dim(), value.dim());
        }
        self.push(Op::Leaf, value, tangent)
    }

    /// A parameter block read from the store; its gradient lands at
    /// `offset` in the vector returned by [`Tape::backward`].
    pub fn param(
        &mut self,
        store: &ParamStore,
        offset: usize,
        rows: usize,
        cols: usize,
    ) -> NodeId {
        let value = Array2::from_shape_vec(
            (rows, cols),
            store.slice(offset, rows * cols).to_vec(),
        )
        .expect("slice length matches shape by construction");
        self.push(Op::Param { offset }, value, None)
    }

    /// A 1×1 parameter node.
    pub fn scalar_param(&mut self, store: &ParamStore, offset: usize) -> NodeId {
        self.param(store, offset, 1, 1)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.value(a).dim(), self.value(b).dim());
        let value = self.value(a) + self.value(b);
        let tangent = match (self.tangent(a), self.tangent(b)) {
            (None, None) => None,
            (ta, tb) => {
                let mut t = Array2::zeros(value.dim());
                if let Some(x) = ta {
                    t += x;
                }
                if let Some(x) = tb {
                    t += x;
                }
                Some(t)
            }
        };
        self.push(Op::Add(a, b), value, tangent)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.value(a).dim(), self.value(b).dim());
        let value = self.value(a) - self.value(b);
        let tangent = match (self.tangent(a), self.tangent(b)) {
            (None, None) => None,
            (ta, tb) => {
                let mut t = Array2::zeros(value.dim());
                if let Some(x) = ta {
                    t += x;
                }
                if let Some(x) = tb {
                    t -= x;
                }
                Some(t)
            }
        };
        self.push(Op::Sub(a, b), value, tangent)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let value = -self.value(a);
        let tangent = self.tangent(a).map(|t| -t);
        self.push(Op::Neg(a), value, tangent)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.value(a).dim(), self.value(b).dim());
        let (av, bv) = (self.value(a), self.value(b));
        let value = av * bv;
        let tangent = match (self.tangent(a), self.tangent(b)) {
            (None, None) => None,
            (ta, tb) => {
                let mut t = Array2::zeros(value.dim());
                if let Some(x) = ta {
                    t += &(x * bv);
                }
                if let Some(x) = tb {
                    t += &(av * x);
                }
                Some(t)
            }
        };
        self.push(Op::Mul(a, b), value, tangent)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        debug_assert_eq!(av.ncols(), bv.nrows());
        let value = av.dot(bv);
        let tangent = match (self.tangent(a), self.tangent(b)) {
            (None, None) => None,
            (ta, tb) => {
                let mut t = Array2::zeros(value.dim());
                if let Some(x) = ta {
                    t += &x.dot(bv);
                }
                if let Some(x) = tb {
                    t += &av.dot(x);
                }
                Some(t)
            }
        };
        self.push(Op::MatMul(a, b), value, tangent)
    }

    /// `[B,K] + [1,K]` with the row broadcast over all B rows.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        debug_assert_eq!(self.value(row).nrows(), 1);
        debug_assert_eq!(self.value(a).ncols(), self.value(row).ncols());
        let value = self.value(a) + self.value(row);
        let tangent = match (self.tangent(a), self.tangent(row)) {
            (None, None) => None,
            (ta, tr) => {
                let mut t = Array2::zeros(self.value(a).dim());
                if let Some(x) = ta {
                    t += x;
                }
                if let Some(x) = tr {
                    t += x;
                }
                Some(t)
            }
        };
        self.push(Op::AddRow(a, row), value, tangent)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(f64::tanh);
        let tangent = self.tangent(a).map(|t| {
            let slope = value.mapv(|c| 1.0 - c * c);
            &slope * t
        });
        self.push(Op::Tanh(a), value, tangent)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let value = av * av;
        let tangent = self.tangent(a).map(|t| 2.0 * (av * t));
        self.push(Op::Square(a), value, tangent)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(f64::exp);
        let tangent = self.tangent(a).map(|t| &value * t);
        self.push(Op::Exp(a), value, tangent)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let tangent = self.tangent(a).map(|t| {
            let slope = value.mapv(|s| s * (1.0 - s));
            &slope * t
        });
        self.push(Op::Sigmoid(a), value, tangent)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(f64::recip);
        let tangent = self.tangent(a).map(|t| {
            let slope = value.mapv(|f| -f * f);
            &slope * t
        });
        self.push(Op::Recip(a), value, tangent)
    }

    /// ln(max(a, floor)). Entries at or below the floor are clamped,
    /// counted, and receive zero derivative.
    pub fn log_clamped(&mut self, a: NodeId, floor: f64) -> NodeId {
        let mut clamped = 0u64;
        let (value, tangent) = {
            let av = self.value(a);
            let value = av.mapv(|x| {
                if x > floor {
                    x.ln()
                } else {
                    clamped += 1;
                    floor.ln()
                }
            });
            let tangent = self.tangent(a).map(|t| {
                let slope = av.mapv(|x| if x > floor { 1.0 / x } else { 0.0 });
                &slope * t
            });
            (value, tangent)
        };
        self.clamp_events += clamped;
        self.push(Op::LogClamped(a, floor), value, tangent)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = self.value(a) * factor;
        let tangent = self.tangent(a).map(|t| t * factor);
        self.push(Op::Scale(a, factor), value, tangent)
    }

    pub fn add_const(&mut self, a: NodeId, constant: f64) -> NodeId {
        let value = self.value(a) + constant;
        let tangent = self.tangent(a).cloned();
        self.push(Op::AddConst(a), value, tangent)
    }

    /// Elementwise product with a constant matrix.
    pub fn mul_const(&mut self, a: NodeId, constant: Array2<f64>) -> NodeId {
        debug_assert_eq!(self.value(a).dim(), constant.dim());
        let value = self.value(a) * &constant;
        let tangent = self.tangent(a).map(|t| t * &constant);
        self.push_aux(Op::MulConst(a), value, tangent, Some(constant))
    }

    /// Sum of all elements → 1×1.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let tangent = self
            .tangent(a)
            .map(|t| Array2::from_elem((1, 1), t.sum()));
        self.push(Op::Sum(a), value, tangent)
    }

    /// Broadcast product scalar(1×1) × matrix.
    pub fn scalar_mul(&mut self, s: NodeId, a: NodeId) -> NodeId {
        debug_assert_eq!(self.value(s).dim(), (1, 1));
        let sv = self.scalar_value(s);
        let av = self.value(a);
        let value = av * sv;
        let tangent = match (self.tangent(s), self.tangent(a)) {
            (None, None) => None,
            (ts, ta) => {
                let mut t = Array2::zeros(av.dim());
                if let Some(x) = ts {
                    t += &(av * x[(0, 0)]);
                }
                if let Some(x) = ta {
                    t += &(x * sv);
                }
                Some(t)
            }
        };
        self.push(Op::ScalarMul(s, a), value, tangent)
    }

    /// Selects rows by index (duplicates allowed).
    pub fn gather_rows(&mut self, a: NodeId, indices: Vec<usize>) -> NodeId {
        let av = self.value(a);
        let value = gather(av, &indices);
        let tangent = self.tangent(a).map(|t| gather(t, &indices));
        self.push(Op::GatherRows(a, indices), value, tangent)
    }

    /// Row permutation: out[i] = a[perm[i]].
    pub fn permute_rows(&mut self, a: NodeId, perm: Vec<usize>) -> NodeId {
        debug_assert_eq!(self.value(a).nrows(), perm.len());
        let value = gather(self.value(a), &perm);
        let tangent = self.tangent(a).map(|t| gather(t, &perm));
        self.push(Op::PermuteRows(a, perm), value, tangent)
    }

    /// Complex signed permutation on a [B,2] node:
    /// out[y] = (phase_re[y] + i·phase_im[y]) · a[src[y]].
    pub fn phase_permute(
        &mut self,
        a: NodeId,
        src: Vec<usize>,
        phase_re: Vec<f64>,
        phase_im: Vec<f64>,
    ) -> NodeId {
        debug_assert_eq!(self.value(a).ncols(), 2);
        debug_assert_eq!(src.len(), self.value(a).nrows());
        let value = phase_permute_apply(self.value(a), &src, &phase_re, &phase_im);
        let tangent = self
            .tangent(a)
            .map(|t| phase_permute_apply(t, &src, &phase_re, &phase_im));
        self.push(
            Op::PhasePermute {
                a,
                src,
                phase_re,
                phase_im,
            },
            value,
            tangent,
        )
    }

    /// Complex multiplication by i on a [B,2] node.
    pub fn mul_by_i(&mut self, a: NodeId) -> NodeId {
        debug_assert_eq!(self.value(a).ncols(), 2);
        let value = mul_i_apply(self.value(a));
        let tangent = self.tangent(a).map(mul_i_apply);
        self.push(Op::MulByI(a), value, tangent)
    }

    /// Applies per-qubit 2×2 unitaries (None = identity) to a [2ⁿ,2] node.
    /// Gate matrices are `[m00, m01, m10, m11]`.
    pub fn local_unitary(
        &mut self,
        a: NodeId,
        gates: Vec<Option<[Complex64; 4]>>,
    ) -> NodeId {
        debug_assert_eq!(self.value(a).nrows(), 1usize << gates.len());
        debug_assert_eq!(self.value(a).ncols(), 2);
        let value = local_unitary_apply(self.value(a), &gates, false);
        let tangent = self
            .tangent(a)
            .map(|t| local_unitary_apply(t, &gates, false));
        self.push(Op::LocalUnitary { a, gates }, value, tangent)
    }

    /// The tangent of `a`, exposed as an ordinary value node (its own
    /// tangent is empty). Backward routes the adjoint into `a`'s tangent
    /// adjoint — the forward-over-reverse contract.
    pub fn tangent_of(&mut self, a: NodeId) -> Result<NodeId, AdError> {
        let value = self
            .tangent(a)
            .cloned()
            .ok_or(AdError::MissingTangent)?;
        Ok(self.push(Op::TangentOf(a), value, None))
    }

    /// The value of `a` with the tangent dropped. Exact whenever `a`'s
    /// tangent is consumed only through [`Tape::tangent_of`]; saves the
    /// cost of propagating tangents through downstream ops.
    pub fn stop_tangent(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).clone();
        self.push(Op::StopTangent(a), value, None)
    }

    /// [B,2] → [B,1]: re² + im² per row.
    pub fn abs_sq_rows(&mut self, a: NodeId) -> NodeId {
        debug_assert_eq!(self.value(a).ncols(), 2);
        let value = abs_sq_apply(self.value(a));
        let tangent = self.tangent(a).map(|t| {
            let av = self.value(a);
            let mut out = Array2::zeros((av.nrows(), 1));
            for r in 0..av.nrows() {
                out[(r, 0)] = 2.0 * (av[(r, 0)] * t[(r, 0)] + av[(r, 1)] * t[(r, 1)]);
            }
            out
        });
        self.push(Op::AbsSqRows(a), value, tangent)
    }

    /// Reverse pass from a scalar loss node. Returns the gradient over a
    /// flat parameter vector of length `param_len` (the associated
    /// [`ParamStore`]'s length).
    pub fn backward(&self, loss: NodeId, param_len: usize) -> Result<Vec<f64>, AdError> {
        let loss_val = self.value(loss);
        if loss_val.dim() != (1, 1) {
            return Err(AdError::NonScalarLoss {
                rows: loss_val.nrows(),
                cols: loss_val.ncols(),
            });
        }
        let mut adj_v: Vec<Option<Array2<f64>>> = (0..=loss.0).map(|_| None).collect();
        let mut adj_t: Vec<Option<Array2<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj_v[loss.0] = Some(Array2::from_elem((1, 1), 1.0));
        let mut grads = vec![0.0; param_len];

        for id in (0..=loss.0).rev() {
            let gv = adj_v[id].take();
            let gt = adj_t[id].take();
            if gv.is_none() && gt.is_none() {
                continue;
            }
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Param { offset } => {
                    if let Some(g) = &gv {
                        let flat = &mut grads[*offset..*offset + g.len()];
                        for (dst, src) in flat.iter_mut().zip(g.iter()) {
                            *dst += src;
                        }
                    }
                    // A parameter's tangent is identically zero, so the
                    // tangent adjoint carries no gradient.
                }
                Op::Add(a, b) => {
                    acc_opt(&mut adj_v, *a, gv.as_ref());
                    acc_opt(&mut adj_v, *b, gv.as_ref());
                    if self.nodes[a.0].tangent.is_some() {
                        acc_opt(&mut adj_t, *a, gt.as_ref());
                    }
                    if self.nodes[b.0].tangent.is_some() {
                        acc_opt(&mut adj_t, *b, gt.as_ref());
                    }
                }
                Op::Sub(a, b) => {
                    acc_opt(&mut adj_v, *a, gv.as_ref());
                    if let Some(g) = &gv {
                        acc(&mut adj_v, *b, &-g);
                    }
                    if self.nodes[a.0].tangent.is_some() {
                        acc_opt(&mut adj_t, *a, gt.as_ref());
                    }
                    if self.nodes[b.0].tangent.is_some() {
                        if let Some(g) = &gt {
                            acc(&mut adj_t, *b, &-g);
                        }
                    }
                }
                Op::Neg(a) => {
                    if let Some(g) = &gv {
                        acc(&mut adj_v, *a, &-g);
                    }
                    if self.nodes[a.0].tangent.is_some() {
                        if let Some(g) = &gt {
                            acc(&mut adj_t, *a, &-g);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let at = self.nodes[a.0].tangent.as_ref();
                    let bt = self.nodes[b.0].tangent.as_ref();
                    if let Some(g) = &gv {
                        acc(&mut adj_v, *a, &(g * bv));
                        acc(&mut adj_v, *b, &(g * av));
                    }
                    if let Some(g) = &gt {
                        // c_t = a_t∘b_v + a_v∘b_t.
                        if let Some(x) = bt {
                            acc(&mut adj_v, *a, &(g * x));
                        }
                        if let Some(x) = at {
                            acc(&mut adj_v, *b, &(g * x));
                        }
                        if at.is_some() {
                            acc(&mut adj_t, *a, &(g * bv));
                        }
                        if bt.is_some() {
                            acc(&mut adj_t, *b, &(g * av));
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let at = self.nodes[a.0].tangent.as_ref();
                    let bt = self.nodes[b.0].tangent.as_ref();
                    if let Some(g) = &gv {
                        acc(&mut adj_v, *a, &g.dot(&bv.t()));
                        acc(&mut adj_v, *b, &av.t().dot(g));
                    }
                    if let Some(g) = &gt {
                        // C_t = A_t·B_v + A_v·B_t.
                        if let Some(x) = bt {
                            acc(&mut adj_v, *a, &g.dot(&x.t()));
                        }
                        if let Some(x) = at {
                            acc(&mut adj_v, *b, &x.t().dot(g));
                        }
                        if at.is_some() {
                            acc(&mut adj_t, *a, &g.dot(&bv.t()));
                        }
                        if bt.is_some() {
                            acc(&mut adj_t, *b, &av.t().dot(g));
                        }
                    }
                }
                Op::AddRow(a, row) => {
                    if let Some(g) = &gv {
                        acc(&mut adj_v, *a, g);
                        acc(&mut adj_v, *row, &row_sum(g));
                    }
                    if let Some(g) = &gt {
                        if self.nodes[a.0].tangent.is_some() {
                            acc(&mut adj_t, *a, g);
                        }
                        if self.nodes[row.0].tangent.is_some() {
                            acc(&mut adj_t, *row, &row_sum(g));
                        }
                    }
                }
                Op::Tanh(a) => {
                    let slope = node.value.mapv(|c| 1.0 - c * c);
                    let second = || node.value.mapv(|c| -2.0 * c * (1.0 - c * c));
                    unary_dual(
                        &mut adj_v,
                        &mut adj_t,
                        *a,
                        self.nodes[a.0].tangent.as_ref(),
                        &gv,
                        &gt,
                        &slope,
                        second,
                    );
                }
                Op::Square(a) => {
                    let av = &self.nodes[a.0].value;
                    let slope = 2.0 * av;
                    let second = || Array2::from_elem(av.dim(), 2.0);
                    unary_dual(
                        &mut adj_v,
                        &mut adj_t,
                        *a,
                        self.nodes[a.0].tangent.as_ref(),
                        &gv,
                        &gt,
                        &slope,
                        second,
                    );
                }
                Op::Exp(a) => {
                    let slope = node.value.clone();
                    let second = || node.value.clone();
                    unary_dual(
                        &mut adj_v,
                        &mut adj_t,
                        *a,
                        self.nodes[a.0].tangent.as_ref(),
                        &gv,
                        &gt,
                        &slope,
                        second,
                    );
                }
                Op::Sigmoid(a) => {
                    let slope = node.value.mapv(|s| s * (1.0 - s));
                    let second = || node.value.mapv(|s| s * (1.0 - s) * (1.0 - 2.0 * s));
                    unary_dual(
                        &mut adj_v,
                        &mut adj_t,
                        *a,
                        self.nodes[a.0].tangent.as_ref(),
                        &gv,
                        &gt,
                        &slope,
                        second,
                    );
                }
                Op::Recip(a) => {
                    let slope = node.value.mapv(|f| -f * f);
                    let second = || node.value.mapv(|f| 2.0 * f * f * f);
                    unary_dual(
                        &mut adj_v,
                        &mut adj_t,
                        *a,
                        self.nodes[a.0].tangent.as_ref(),
                        &gv,
                        &gt,
                        &slope,
                        second,
                    );
                }
                Op::LogClamped(a, floor) => {
                    let av = &self.nodes[a.0].value;
                    let floor = *floor;
                    let slope = av.mapv(|x| if x > floor { 1.0 / x } else { 0.0 });
                    let second =
                        || av.mapv(|x| if x > floor { -1.0 / (x * x) } else { 0.0 });
                    unary_dual(
                        &mut adj_v,
                        &mut adj_t,
                        *a,
                        self.nodes[a.0].tangent.as_ref(),
                        &gv,
                        &gt,
                        &slope,
                        second,
                    );
                }
                Op::Scale(a, f) => {
                    if let Some(g) = &gv {
                        acc(&mut adj_v, *a, &(g * *f));
                    }
                    if self.nodes[a.0].tangent.is_some() {
                        if let Some(g) = &gt {
                            acc(&mut adj_t, *a, &(g * *f));
                        }
                    }
                }
                Op::AddConst(a) => {
                    acc_opt(&mut adj_v, *a, gv.as_ref());
                    if self.nodes[a.0].tangent.is_some() {
                        acc_opt(&mut adj_t, *a, gt.as_ref());
                    }
                }
                Op::MulConst(a) => {
                    let k = node.aux.as_ref().expect("MulConst carries aux");
                    if let Some(g) = &gv {
                        acc(&mut adj_v, *a, &(g * k));
                    }
                    if self.nodes[a.0].tangent.is_some() {
                        if let Some(g) = &gt {
                            acc(&mut adj_t, *a, &(g * k));
                        }
                    }
                }
                Op::Sum(a) => {
                    let dim = self.nodes[a.0].value.dim();
                    if let Some(g) = &gv {
                        acc(&mut adj_v, *a, &Array2::from_elem(dim, g[(0, 0)]));
                    }
                    if self.nodes[a.0].tangent.is_some() {
                        if let Some(g) = &gt {
                            acc(&mut adj_t, *a, &Array2::from_elem(dim, g[(0, 0)]));
                        }
                    }
                }
                Op::ScalarMul(s, a) => {
                    let sv = self.nodes[s.0].value[(0, 0)];
                    let av = &self.nodes[a.0].value;
                    let st = self.nodes[s.0].tangent.as_ref();
                    let at = self.nodes[a.0].tangent.as_ref();
                    if let Some(g) = &gv {
                        acc(
                            &mut adj_v,
                            *s,
                            &Array2::from_elem((1, 1), (g * av).sum()),
                        );
                        acc(&mut adj_v, *a, &(g * sv));
                    }
                    if let Some(g) = &gt {
                        // c_t = s_t·a_v + s_v·a_t.
                        if let Some(x) = at {
                            acc(
                                &mut adj_v,
                                *s,
                                &Array2::from_elem((1, 1), (g * x).sum()),
                            );
                        }
                        if let Some(x) = st {
                            acc(&mut adj_v, *a, &(g * x[(0, 0)]));
                        }
                        if st.is_some() {
                            acc(
                                &mut adj_t,
                                *s,
                                &Array2::from_elem((1, 1), (g * av).sum()),
                            );
                        }
                        if at.is_some() {
                            acc(&mut adj_t, *a, &(g * sv));
                        }
                    }
                }
                Op::GatherRows(a, indices) => {
                    let dim = self.nodes[a.0].value.dim();
                    if let Some(g) = &gv {
                        acc(&mut adj_v, *a, &scatter(g, indices, dim));
                    }
                    if self.nodes[a.0].tangent.is_some() {
                        if let Some(g) = &gt {
                            acc(&mut adj_t, *a, &scatter(g, indices, dim));
                        }
                    }
                }
                Op::PermuteRows(a, perm) => {
                    let dim = self.nodes[a.0].value.dim();
                    if let Some(g) = &gv {
                        acc(&mut adj_v, *a, &scatter(g, perm, dim));
                    }
                    if self.nodes[a.0].tangent.is_some() {
                        if let Some(g) = &gt {
                            acc(&mut adj_t, *a, &scatter(g, perm, dim));
                        }
                    }
                }
                Op::PhasePermute {
                    a,
                    src,
                    phase_re,
                    phase_im,
                } => {
                    // Real transpose of the complex-linear map z ↦ p∘(Pz)
                    // is z ↦ Pᵀ(conj(p)∘z).
                    let back = |g: &Array2<f64>| {
                        let mut out = Array2::zeros(g.dim());
                        for y in 0..src.len() {
                            let (gre, gim) = (g[(y, 0)], g[(y, 1)]);
                            let (pr, pi) = (phase_re[y], phase_im[y]);
                            out[(src[y], 0)] += pr * gre + pi * gim;
                            out[(src[y], 1)] += pr * gim - pi * gre;
                        }
                        out
                    };
                    if let Some(g) = &gv {
                        acc(&mut adj_v, *a, &back(g));
                    }
                    if self.nodes[a.0].tangent.is_some() {
                        if let Some(g) = &gt {
                            acc(&mut adj_t, *a, &back(g));
                        }
                    }
                }
                Op::MulByI(a) => {
                    // Adjoint of multiplication by i is multiplication by −i.
                    let back = |g: &Array2<f64>| {
                        let mut out = Array2::zeros(g.dim());
                        for r in 0..g.nrows() {
                            out[(r, 0)] = g[(r, 1)];
                            out[(r, 1)] = -g[(r, 0)];
                        }
                        out
                    };
                    if let Some(g) = &gv {
                        acc(&mut adj_v, *a, &back(g));
                    }
                    if self.nodes[a.0].tangent.is_some() {
                        if let Some(g) = &gt {
                            acc(&mut adj_t, *a, &back(g));
                        }
                    }
                }
                Op::LocalUnitary { a, gates } => {
                    // Adjoint flows through U†.
                    if let Some(g) = &gv {
                        acc(&mut adj_v, *a, &local_unitary_apply(g, gates, true));
                    }
                    if self.nodes[a.0].tangent.is_some() {
                        if let Some(g) = &gt {
                            acc(&mut adj_t, *a, &local_unitary_apply(g, gates, true));
                        }
                    }
                }
                Op::TangentOf(a) => {
                    // The value of this node *is* a's tangent.
                    acc_opt(&mut adj_t, *a, gv.as_ref());
                }
                Op::StopTangent(a) => {
                    acc_opt(&mut adj_v, *a, gv.as_ref());
                }
                Op::AbsSqRows(a) => {
                    let av = &self.nodes[a.0].value;
                    let at = self.nodes[a.0].tangent.as_ref();
                    if let Some(g) = &gv {
                        let mut out = Array2::zeros(av.dim());
                        for r in 0..av.nrows() {
                            out[(r, 0)] = 2.0 * av[(r, 0)] * g[(r, 0)];
                            out[(r, 1)] = 2.0 * av[(r, 1)] * g[(r, 0)];
                        }
                        acc(&mut adj_v, *a, &out);
                    }
                    if let Some(g) = &gt {
                        // c_t = 2(a_v∘a_t summed over re/im): both a_v and
                        // a_t receive adjoint.
                        if let Some(x) = at {
                            let mut dv = Array2::zeros(av.dim());
                            let mut dt = Array2::zeros(av.dim());
                            for r in 0..av.nrows() {
                                dv[(r, 0)] = 2.0 * x[(r, 0)] * g[(r, 0)];
                                dv[(r, 1)] = 2.0 * x[(r, 1)] * g[(r, 0)];
                                dt[(r, 0)] = 2.0 * av[(r, 0)] * g[(r, 0)];
                                dt[(r, 1)] = 2.0 * av[(r, 1)] * g[(r, 0)];
                            }
                            acc(&mut adj_v, *a, &dv);
                            acc(&mut adj_t, *a, &dt);
                        }
                    }
                }
            }
        }
        Ok(grads)
    }
}

/// Shared backward rule for elementwise unary ops `c = f(a)` carrying dual
/// payloads: a.adj_v += g_v∘f′ + g_t∘f″∘a_t and a.adj_t += g_t∘f′, where
/// g_v/g_t are the adjoints of the output's value and tangent. `second`
/// produces f″ evaluated at a and is only called when a tangent adjoint
/// actually flows.
#[allow(clippy::too_many_arguments)]
fn unary_dual(
    adj_v: &mut [Option<Array2<f64>>],
    adj_t: &mut [Option<Array2<f64>>],
    a: NodeId,
    a_tangent: Option<&Array2<f64>>,
    gv: &Option<Array2<f64>>,
    gt: &Option<Array2<f64>>,
    slope: &Array2<f64>,
    second: impl FnOnce() -> Array2<f64>,
) {
    if let Some(g) = gv {
        acc(adj_v, a, &(g * slope));
    }
    if let Some(g) = gt {
        if let Some(at) = a_tangent {
            let f2 = second();
            acc(adj_v, a, &(g * &(&f2 * at)));
            acc(adj_t, a, &(g * slope));
        }
    }
}

fn acc(slots: &mut [Option<Array2<f64>>], id: NodeId, delta: &Array2<f64>) {
    match &mut slots[id.0] {
        Some(existing) => *existing += delta,
        slot => *slot = Some(delta.clone()),
    }
}

fn acc_opt(slots: &mut [Option<Array2<f64>>], id: NodeId, delta: Option<&Array2<f64>>) {
    if let Some(d) = delta {
        acc(slots, id, d);
    }
}

fn gather(a: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), a.ncols()));
    for (r, &i) in indices.iter().enumerate() {
        out.row_mut(r).assign(&a.row(i));
    }
    out
}

fn scatter(g: &Array2<f64>, indices: &[usize], dim: (usize, usize)) -> Array2<f64> {
    let mut out = Array2::zeros(dim);
    for (r, &i) in indices.iter().enumerate() {
        let mut row = out.row_mut(i);
        row += &g.row(r);
    }
    out
}

fn row_sum(g: &Array2<f64>) -> Array2<f64> {
    g.sum_axis(Axis(0)).insert_axis(Axis(0))
}

fn phase_permute_apply(
    a: &Array2<f64>,
    src: &[usize],
    phase_re: &[f64],
    phase_im: &[f64],
) -> Array2<f64> {
    let mut out = Array2::zeros(a.dim());
    for y in 0..src.len() {
        let (re, im) = (a[(src[y], 0)], a[(src[y], 1)]);
        let (pr, pi) = (phase_re[y], phase_im[y]);
        out[(y, 0)] = pr * re - pi * im;
        out[(y, 1)] = pr * im + pi * re;
    }
    out
}

fn mul_i_apply(a: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(a.dim());
    for r in 0..a.nrows() {
        out[(r, 0)] = -a[(r, 1)];
        out[(r, 1)] = a[(r, 0)];
    }
    out
}

fn abs_sq_apply(a: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), 1));
    for r in 0..a.nrows() {
        out[(r, 0)] = a[(r, 0)] * a[(r, 0)] + a[(r, 1)] * a[(r, 1)];
    }
    out
}

/// Applies per-qubit 2×2 complex gates to [2ⁿ,2] real/imag columns;
/// `adjoint` applies the conjugate transposes instead.
fn local_unitary_apply(
    a: &Array2<f64>,
    gates: &[Option<[Complex64; 4]>],
    adjoint: bool,
) -> Array2<f64> {
    let n = gates.len();
    let dim = a.nrows();
    let mut out = a.clone();
    for (qubit, gate) in gates.iter().enumerate() {
        let Some(m) = gate else { continue };
        let [m00, m01, m10, m11] = if adjoint {
            [m[0].conj(), m[2].conj(), m[1].conj(), m[3].conj()]
        } else {
            *m
        };
        let mask = 1usize << (n - 1 - qubit);
        for b in 0..dim {
            if b & mask == 0 {
                let hi = b | mask;
                let lo = Complex64::new(out[(b, 0)], out[(b, 1)]);
                let hi_v = Complex64::new(out[(hi, 0)], out[(hi, 1)]);
                let new_lo = m00 * lo + m01 * hi_v;
                let new_hi = m10 * lo + m11 * hi_v;
                out[(b, 0)] = new_lo.re;
                out[(b, 1)] = new_lo.im;
                out[(hi, 0)] = new_hi.re;
                out[(hi, 1)] = new_hi.im;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sum_of_squares_gradient_is_2w() {
        let mut store = ParamStore::new();
        let mut vals = [0.5, -1.5, 2.0].into_iter();
        let off = store.register("w", 3, 1, || vals.next().unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&store, off, 3, 1);
        let sq = tape.square(w);
        let loss = tape.sum(sq);
        let grads = tape.backward(loss, store.len()).unwrap();
        assert_eq!(grads, vec![1.0, -3.0, 4.0]);
    }

    #[test]
    fn constant_in_parameter_gets_zero_gradient() {
        let mut store = ParamStore::new();
        let a_off = store.register("a", 1, 1, || 0.7);
        let b_off = store.register("b", 1, 1, || -0.3);
        let mut tape = Tape::new();
        let a = tape.scalar_param(&store, a_off);
        let _b = tape.scalar_param(&store, b_off);
        let loss = tape.square(a);
        let grads = tape.backward(loss, store.len()).unwrap();
        assert_eq!(grads[0], 1.4);
        assert_eq!(grads[1], 0.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(array![[1.0, 2.0]]);
        assert!(matches!(
            tape.backward(x, 0),
            Err(AdError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn tangent_flows_through_composition() {
        // f(t) = tanh(3t): tangent at t=0.2 must be 3(1−tanh²(0.6)).
        let mut tape = Tape::new();
        let t = tape.input(array![[0.2]], Some(array![[1.0]]));
        let scaled = tape.scale(t, 3.0);
        let y = tape.tanh(scaled);
        let tangent = tape.tangent(y).unwrap()[(0, 0)];
        let want = 3.0 * (1.0 - (0.6f64).tanh().powi(2));
        assert!((tangent - want).abs() < 1e-14);
    }

    #[test]
    fn tangent_of_exposes_tangent_and_backward_reaches_params() {
        // y = w·t (scalar). dy/dt = w; L = (dy/dt)² → dL/dw = 2w.
        let mut store = ParamStore::new();
        let off = store.register("w", 1, 1, || 1.7);
        let mut tape = Tape::new();
        let t = tape.input(array![[0.4]], Some(array![[1.0]]));
        let w = tape.scalar_param(&store, off);
        let y = tape.mul(w, t);
        let dy = tape.tangent_of(y).unwrap();
        let loss = tape.square(dy);
        assert!((tape.scalar_value(loss) - 1.7f64.powi(2)).abs() < 1e-15);
        let grads = tape.backward(loss, store.len()).unwrap();
        assert!((grads[0] - 2.0 * 1.7).abs() < 1e-14);
    }

    #[test]
    fn linearity_of_gradients() {
        let mut store = ParamStore::new();
        let mut vals = [0.3, -0.9].into_iter();
        let off = store.register("w", 2, 1, || vals.next().unwrap());

        let grad_of = |a: f64, b: f64, store: &ParamStore| {
            let mut tape = Tape::new();
            let w = tape.param(store, off, 2, 1);
            let sq = tape.square(w);
            let l1 = tape.sum(sq);
            let tanh = tape.tanh(w);
            let l2 = tape.sum(tanh);
            let l1s = tape.scale(l1, a);
            let l2s = tape.scale(l2, b);
            let loss = tape.add(l1s, l2s);
            tape.backward(loss, store.len()).unwrap()
        };

        let g1 = grad_of(1.0, 0.0, &store);
        let g2 = grad_of(0.0, 1.0, &store);
        let combo = grad_of(2.5, -1.25, &store);
        for i in 0..2 {
            let want = 2.5 * g1[i] - 1.25 * g2[i];
            assert!((combo[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn log_clamp_counts_and_zeroes_derivative() {
        let mut store = ParamStore::new();
        let off = store.register("p", 2, 1, || 0.0);
        store.data_mut()[off] = 1e-15; // below the floor
        store.data_mut()[off + 1] = 0.5;
        let mut tape = Tape::new();
        let p = tape.param(&store, off, 2, 1);
        let lp = tape.log_clamped(p, 1e-12);
        let loss = tape.sum(lp);
        assert_eq!(tape.clamp_events(), 1);
        let grads = tape.backward(loss, store.len()).unwrap();
        assert_eq!(grads[0], 0.0);
        assert!((grads[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn phase_permute_matches_manual_complex_arithmetic() {
        // Apply "Y" on one qubit: out[1] = i·a[0], out[0] = −i·a[1].
        let mut tape = Tape::new();
        let a = tape.input(array![[0.6, 0.1], [0.2, -0.4]], None);
        let y = tape.phase_permute(
            a,
            vec![1, 0],
            vec![0.0, 0.0],
            vec![-1.0, 1.0],
        );
        let v = tape.value(y);
        // out[0] = −i·(0.2 − 0.4i) = −0.4 − 0.2i.
        assert!((v[(0, 0)] - (-0.4)).abs() < 1e-15);
        assert!((v[(0, 1)] - (-0.2)).abs() < 1e-15);
        // out[1] = i·(0.6 + 0.1i) = −0.1 + 0.6i.
        assert!((v[(1, 0)] - (-0.1)).abs() < 1e-15);
        assert!((v[(1, 1)] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn local_unitary_is_norm_preserving_and_inverts_with_adjoint() {
        let h = 1.0 / 2f64.sqrt();
        let hadamard = [
            Complex64::new(h, 0.0),
            Complex64::new(h, 0.0),
            Complex64::new(h, 0.0),
            Complex64::new(-h, 0.0),
        ];
        let a = array![[0.3, 0.2], [0.1, -0.5], [0.7, 0.0], [0.1, 0.4]];
        let fwd = local_unitary_apply(&a, &[Some(hadamard), None], false);
        let back = local_unitary_apply(&fwd, &[Some(hadamard), None], true);
        for (x, y) in a.iter().zip(back.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
        let norm = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>();
        assert!((norm(&a) - norm(&fwd)).abs() < 1e-14);
    }

    #[test]
    fn determinism_bitwise_identical_losses_and_gradients() {
        let run = || {
            let mut store = ParamStore::new();
            let mut k = 0u64;
            let off = store.register("w", 4, 3, || {
                k += 1;
                (k as f64 * 0.37).sin()
            });
            let mut tape = Tape::new();
            let w = tape.param(&store, off, 4, 3);
            let x = tape.input(array![[0.2, -0.4, 0.6, 0.8]], Some(array![[1.0, 0.0, 0.0, 0.0]]));
            let z = tape.matmul(x, w);
            let h = tape.tanh(z);
            let dz = tape.tangent_of(h).unwrap();
            let sq = tape.square(dz);
            let loss = tape.sum(sq);
            let grads = tape.backward(loss, store.len()).unwrap();
            (tape.scalar_value(loss).to_bits(), grads.iter().map(|g| g.to_bits()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }
}
