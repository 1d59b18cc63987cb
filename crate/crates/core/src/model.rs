//! Fast feedforward tree: sigmoid node neurons arranged as a complete binary
//! tree in heap order, one-hidden-layer ReLU leaves, and an optional master
//! leaf fused with the tree output through `k = sigmoid(kappa)`.
//!
//! Conventions:
//! - node `j` has children `2j + 1` (left) and `2j + 2` (right);
//! - a node activation `s` is the mass sent to the right child, `1 - s` goes left;
//! - leaf `i` sits at heap position `nodes + i`, so leaf order is the
//!   big-endian reading of the path bits (1 = right);
//! - hard routing goes right iff `s > 0.5`; `s == 0.5` goes left.

use serde::{Deserialize, Serialize};

use crate::numeric::{
    accumulate_col_sums, add_row_bias, argmax, dot, gemm_nn, gemm_nt, gemm_tn, init_params,
    sigmoid, InitScheme, Rng, Scalar, Tensor1, Tensor2,
};
use crate::{Error, Result};

/// Parameter groups used for gradient checks and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamClass {
    Node,
    Leaf,
    Master,
    Kappa,
}

impl ParamClass {
    pub const ALL: [ParamClass; 4] = [
        ParamClass::Node,
        ParamClass::Leaf,
        ParamClass::Master,
        ParamClass::Kappa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamClass::Node => "node",
            ParamClass::Leaf => "leaf",
            ParamClass::Master => "master",
            ParamClass::Kappa => "kappa",
        }
    }
}

/// Flat access to every trainable tensor in a fixed order.
///
/// Gradients are stored in a value of the same type (see `zeros_like`), so
/// visiting a model and its gradient yields matching slices.
pub trait Parameters<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(ParamClass, &'a [T]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamClass, &mut [T]));
    fn zeros_like(&self) -> Self
    where
        Self: Sized;

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, s| n += s.len());
        n
    }

    fn fill_zero(&mut self)
    where
        T: Scalar,
    {
        self.visit_mut(&mut |_, s| s.iter_mut().for_each(|v| *v = T::zero()));
    }
}

/// Receives callbacks for every neuron evaluated during hard inference.
pub trait InferenceProbe {
    fn node(&mut self, _index: usize, _macs: usize) {}
    fn leaf(&mut self, _index: usize, _hidden: usize, _macs: usize) {}
    fn master(&mut self, _hidden: usize, _macs: usize) {}
}

impl InferenceProbe for () {}

/// Counts evaluated neurons and multiply-accumulates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountingProbe {
    pub nodes: usize,
    pub leaves: usize,
    pub leaf_hidden: usize,
    pub master_hidden: usize,
    pub macs: usize,
    pub master_macs: usize,
}

impl InferenceProbe for CountingProbe {
    fn node(&mut self, _index: usize, macs: usize) {
        self.nodes += 1;
        self.macs += macs;
    }

    fn leaf(&mut self, _index: usize, hidden: usize, macs: usize) {
        self.leaves += 1;
        self.leaf_hidden += hidden;
        self.macs += macs;
    }

    fn master(&mut self, hidden: usize, macs: usize) {
        self.master_hidden += hidden;
        self.master_macs += macs;
    }
}

/// One-hidden-layer ReLU block mapping an input to class logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafBlock<T> {
    w1: Tensor2<T>,
    b1: Vec<T>,
    w2: Tensor2<T>,
    b2: Vec<T>,
}

/// Batched leaf activations.
#[derive(Debug, Clone)]
pub struct LeafTrace<T> {
    pub pre: Tensor2<T>,
    pub hidden: Tensor2<T>,
    pub logits: Tensor2<T>,
}

impl<T: Scalar> LeafBlock<T> {
    pub fn new(input_dim: usize, width: usize, classes: usize, rng: &mut Rng, scheme: InitScheme) -> Self {
        Self {
            w1: init_params(rng, input_dim, width, scheme),
            b1: vec![T::zero(); width],
            w2: init_params(rng, width, classes, scheme),
            b2: vec![T::zero(); classes],
        }
    }

    pub fn from_parts(w1: Tensor2<T>, b1: Vec<T>, w2: Tensor2<T>, b2: Vec<T>) -> Result<Self> {
        let width = w1.rows();
        if width == 0 {
            return Err(Error::Config("leaf width must be >= 1".into()));
        }
        if b1.len() != width || w2.cols() != width || b2.len() != w2.rows() {
            return Err(Error::Dimension(format!(
                "leaf parts disagree: w1 {:?}, b1 {}, w2 {:?}, b2 {}",
                w1.shape(),
                b1.len(),
                w2.shape(),
                b2.len()
            )));
        }
        Ok(Self { w1, b1, w2, b2 })
    }

    pub fn width(&self) -> usize {
        self.w1.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn class_count(&self) -> usize {
        self.w2.rows()
    }

    pub fn w1(&self) -> &Tensor2<T> {
        &self.w1
    }

    pub fn b1(&self) -> &[T] {
        &self.b1
    }

    pub fn w2(&self) -> &Tensor2<T> {
        &self.w2
    }

    pub fn b2(&self) -> &[T] {
        &self.b2
    }

    pub fn w1_mut(&mut self) -> &mut [T] {
        self.w1.as_mut_slice()
    }

    pub fn b1_mut(&mut self) -> &mut [T] {
        &mut self.b1
    }

    pub fn w2_mut(&mut self) -> &mut [T] {
        self.w2.as_mut_slice()
    }

    pub fn b2_mut(&mut self) -> &mut [T] {
        &mut self.b2
    }

    pub fn cast<U: Scalar>(&self) -> LeafBlock<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.to_f64_lossy())).collect();
        LeafBlock {
            w1: self.w1.cast(),
            b1: conv(&self.b1),
            w2: self.w2.cast(),
            b2: conv(&self.b2),
        }
    }

    /// Multiply-accumulates for one sample.
    pub fn macs(&self) -> usize {
        self.width() * (self.input_dim() + self.class_count())
    }

    /// Single-sample forward returning class logits.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "leaf expects input of {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let out = self.forward_unchecked(x);
        crate::numeric::ensure_finite(&out, "leaf logits")?;
        Ok(out)
    }

    pub(crate) fn forward_unchecked(&self, x: &[T]) -> Vec<T> {
        let hidden: Vec<T> = (0..self.width())
            .map(|r| (dot(self.w1.row(r), x) + self.b1[r]).max(T::zero()))
            .collect();
        (0..self.class_count())
            .map(|c| dot(self.w2.row(c), &hidden) + self.b2[c])
            .collect()
    }

    pub fn forward_rows(&self, x: &Tensor2<T>) -> Result<LeafTrace<T>> {
        if x.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "leaf expects input of {}, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut pre = Tensor2::zeros(x.rows(), self.width());
        gemm_nt(x, &self.w1, T::zero(), &mut pre)?;
        add_row_bias(&mut pre, &self.b1);
        self.forward_from_pre(pre)
    }

    /// Second half of [`forward_rows`](Self::forward_rows), given the
    /// hidden pre-activations.
    pub fn forward_from_pre(&self, pre: Tensor2<T>) -> Result<LeafTrace<T>> {
        let mut hidden = pre.clone();
        hidden
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = v.max(T::zero()));
        let mut logits = Tensor2::zeros(pre.rows(), self.class_count());
        gemm_nt(&hidden, &self.w2, T::zero(), &mut logits)?;
        add_row_bias(&mut logits, &self.b2);
        Ok(LeafTrace { pre, hidden, logits })
    }

    /// Accumulates parameter gradients for upstream `d_logits` into `grad`.
    pub fn backward_rows(
        &self,
        x: &Tensor2<T>,
        trace: &LeafTrace<T>,
        d_logits: &Tensor2<T>,
        grad: &mut LeafBlock<T>,
    ) -> Result<()> {
        let d_pre = self.backward_to_pre(trace, d_logits, grad)?;
        gemm_tn(&d_pre, x, T::one(), &mut grad.w1)?;
        Ok(())
    }

    /// Accumulates the output-layer and hidden-bias gradients and returns
    /// d loss / d pre-activation; the caller owns the `w1` product.
    pub fn backward_to_pre(
        &self,
        trace: &LeafTrace<T>,
        d_logits: &Tensor2<T>,
        grad: &mut LeafBlock<T>,
    ) -> Result<Tensor2<T>> {
        gemm_tn(d_logits, &trace.hidden, T::one(), &mut grad.w2)?;
        accumulate_col_sums(d_logits, &mut grad.b2);
        let mut d_pre = Tensor2::zeros(d_logits.rows(), self.width());
        gemm_nn(d_logits, &self.w2, T::zero(), &mut d_pre)?;
        for (d, p) in d_pre.as_mut_slice().iter_mut().zip(trace.pre.as_slice()) {
            if *p <= T::zero() {
                *d = T::zero();
            }
        }
        accumulate_col_sums(&d_pre, &mut grad.b1);
        Ok(d_pre)
    }
}

impl<T: Scalar> Parameters<T> for LeafBlock<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(ParamClass, &'a [T])) {
        f(ParamClass::Leaf, self.w1.as_slice());
        f(ParamClass::Leaf, &self.b1);
        f(ParamClass::Leaf, self.w2.as_slice());
        f(ParamClass::Leaf, &self.b2);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamClass, &mut [T])) {
        f(ParamClass::Leaf, self.w1.as_mut_slice());
        f(ParamClass::Leaf, &mut self.b1);
        f(ParamClass::Leaf, self.w2.as_mut_slice());
        f(ParamClass::Leaf, &mut self.b2);
    }

    fn zeros_like(&self) -> Self {
        Self {
            w1: Tensor2::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![T::zero(); self.b1.len()],
            w2: Tensor2::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![T::zero(); self.b2.len()],
        }
    }
}

/// The plain feedforward baseline of hidden width `width`.
pub fn build_vanilla_ff<T: Scalar>(input_dim: usize, width: usize, classes: usize, rng: &mut Rng) -> LeafBlock<T> {
    LeafBlock::new(input_dim, width, classes, rng, InitScheme::UniformFanIn)
}

/// Always-active block mixed with the tree output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasterLeaf<T> {
    pub block: LeafBlock<T>,
    /// Unconstrained; the mixing weight is `sigmoid(kappa)`.
    pub kappa: T,
}

impl<T: Scalar> MasterLeaf<T> {
    pub fn k(&self) -> T {
        sigmoid(self.kappa)
    }

    pub fn cast<U: Scalar>(&self) -> MasterLeaf<U> {
        MasterLeaf {
            block: self.block.cast(),
            kappa: U::lit(self.kappa.to_f64_lossy()),
        }
    }
}

/// Borrowed view of a single node neuron.
#[derive(Debug, Clone, Copy)]
pub struct NodeUnit<'a, T> {
    pub weight: &'a [T],
    pub bias: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FffShape {
    pub depth: usize,
    pub input_dim: usize,
    pub class_count: usize,
    pub leaf_width: usize,
    pub master_width: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FffModel<T> {
    depth: usize,
    input_dim: usize,
    class_count: usize,
    leaf_width: usize,
    node_w: Tensor2<T>,
    node_b: Vec<T>,
    leaves: Vec<LeafBlock<T>>,
    master: Option<MasterLeaf<T>>,
}

/// Per-row activations of a training forward pass; consumed by the losses
/// and by [`FffModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub inputs: Tensor2<T>,
    pub node_pre: Tensor2<T>,
    pub node_act: Tensor2<T>,
    /// Probability of reaching each node from the root.
    pub node_reach: Tensor2<T>,
    pub coeffs: Tensor2<T>,
    pub leaves: Vec<LeafTrace<T>>,
    /// `sum_i c_i l_i(x)`.
    pub fff_logits: Tensor2<T>,
    pub master: Option<MasterTrace<T>>,
    /// The model output: `fff_logits`, or the fused output when a master leaf took part.
    pub logits: Tensor2<T>,
}

#[derive(Debug, Clone)]
pub struct MasterTrace<T> {
    pub leaf: LeafTrace<T>,
    pub k: T,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn batch_size(&self) -> usize {
        self.inputs.rows()
    }

    pub fn leaf_count(&self) -> usize {
        self.coeffs.cols()
    }

    pub fn node_count(&self) -> usize {
        self.node_act.cols()
    }
}

/// Upstream derivatives handed to [`FffModel::backward`].
#[derive(Debug, Clone)]
pub struct GradSeed<T> {
    /// d loss / d output logits, `batch x classes`.
    pub d_logits: Tensor2<T>,
    /// Extra d loss / d c_i, `batch x leaves`.
    pub d_coeffs: Option<Tensor2<T>>,
    /// Extra d loss / d s_j, `batch x nodes`.
    pub d_node_act: Option<Tensor2<T>>,
}

impl<T: Scalar> GradSeed<T> {
    pub fn zeros(batch: usize, classes: usize) -> Self {
        Self {
            d_logits: Tensor2::zeros(batch, classes),
            d_coeffs: None,
            d_node_act: None,
        }
    }
}

/// Neurons and multiply-accumulates touched by one hard-routed inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceCost {
    pub node_neurons: usize,
    pub leaf_hidden_neurons: usize,
    pub macs: usize,
    pub master_hidden_neurons: usize,
    pub master_macs: usize,
}

impl<T: Scalar> FffModel<T> {
    pub fn new(shape: FffShape, rng: &mut Rng, scheme: InitScheme) -> Result<Self> {
        if shape.depth < 1 || shape.depth > 20 {
            return Err(Error::Config(format!("depth must be in 1..=20, got {}", shape.depth)));
        }
        if shape.leaf_width < 1 || shape.input_dim < 1 || shape.class_count < 1 {
            return Err(Error::Config(format!("degenerate shape {shape:?}")));
        }
        if shape.master_width == Some(0) {
            return Err(Error::Config("master width must be >= 1".into()));
        }
        let nodes = (1usize << shape.depth) - 1;
        let node_w = init_params(rng, shape.input_dim, nodes, scheme);
        let leaves = (0..=nodes)
            .map(|_| LeafBlock::new(shape.input_dim, shape.leaf_width, shape.class_count, rng, scheme))
            .collect();
        let master = shape.master_width.map(|m| MasterLeaf {
            block: LeafBlock::new(shape.input_dim, m, shape.class_count, rng, scheme),
            kappa: T::zero(),
        });
        Ok(Self {
            depth: shape.depth,
            input_dim: shape.input_dim,
            class_count: shape.class_count,
            leaf_width: shape.leaf_width,
            node_w,
            node_b: vec![T::zero(); nodes],
            leaves,
            master,
        })
    }

    pub fn from_parts(
        depth: usize,
        node_w: Tensor2<T>,
        node_b: Vec<T>,
        leaves: Vec<LeafBlock<T>>,
        master: Option<MasterLeaf<T>>,
    ) -> Result<Self> {
        if depth < 1 || depth > 20 {
            return Err(Error::Config(format!("depth must be in 1..=20, got {depth}")));
        }
        let nodes = (1usize << depth) - 1;
        if node_w.rows() != nodes || node_b.len() != nodes || leaves.len() != nodes + 1 {
            return Err(Error::Dimension(format!(
                "depth {depth} needs {nodes} nodes and {} leaves",
                nodes + 1
            )));
        }
        let input_dim = node_w.cols();
        let first = &leaves[0];
        let (leaf_width, class_count) = (first.width(), first.class_count());
        let leaf_ok = |l: &LeafBlock<T>| {
            l.width() == leaf_width && l.input_dim() == input_dim && l.class_count() == class_count
        };
        if !leaves.iter().all(leaf_ok) {
            return Err(Error::Dimension("all leaves must share one shape".into()));
        }
        if let Some(m) = &master {
            if m.block.input_dim() != input_dim || m.block.class_count() != class_count {
                return Err(Error::Dimension("master leaf shape disagrees with the tree".into()));
            }
        }
        Ok(Self {
            depth,
            input_dim,
            class_count,
            leaf_width,
            node_w,
            node_b,
            leaves,
            master,
        })
    }

    pub fn cast<U: Scalar>(&self) -> FffModel<U> {
        FffModel {
            depth: self.depth,
            input_dim: self.input_dim,
            class_count: self.class_count,
            leaf_width: self.leaf_width,
            node_w: self.node_w.cast(),
            node_b: self.node_b.iter().map(|x| U::lit(x.to_f64_lossy())).collect(),
            leaves: self.leaves.iter().map(LeafBlock::cast).collect(),
            master: self.master.as_ref().map(MasterLeaf::cast),
        }
    }

    pub fn shape(&self) -> FffShape {
        FffShape {
            depth: self.depth,
            input_dim: self.input_dim,
            class_count: self.class_count,
            leaf_width: self.leaf_width,
            master_width: self.master.as_ref().map(|m| m.block.width()),
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn leaf_width(&self) -> usize {
        self.leaf_width
    }

    pub fn node_count(&self) -> usize {
        self.node_b.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    /// Total leaf hidden neurons, `2^d * leaf_width`.
    pub fn training_width(&self) -> usize {
        self.leaf_count() * self.leaf_width
    }

    /// Neurons used in a training pass: `2^d * leaf_width + 2^d - 1`.
    pub fn training_neurons(&self) -> usize {
        self.training_width() + self.node_count()
    }

    pub fn node(&self, j: usize) -> NodeUnit<'_, T> {
        NodeUnit {
            weight: self.node_w.row(j),
            bias: self.node_b[j],
        }
    }

    pub fn node_weights(&self) -> &Tensor2<T> {
        &self.node_w
    }

    pub fn node_biases(&self) -> &[T] {
        &self.node_b
    }

    pub fn node_weights_mut(&mut self) -> &mut [T] {
        self.node_w.as_mut_slice()
    }

    pub fn node_biases_mut(&mut self) -> &mut [T] {
        &mut self.node_b
    }

    pub fn leaves(&self) -> &[LeafBlock<T>] {
        &self.leaves
    }

    pub fn leaves_mut(&mut self) -> &mut [LeafBlock<T>] {
        &mut self.leaves
    }

    pub fn master(&self) -> Option<&MasterLeaf<T>> {
        self.master.as_ref()
    }

    pub fn master_mut(&mut self) -> Option<&mut MasterLeaf<T>> {
        self.master.as_mut()
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim {
            return Err(Error::Dimension(format!(
                "model expects input of {}, got {len}",
                self.input_dim
            )));
        }
        Ok(())
    }

    fn require_master(&self) -> Result<&MasterLeaf<T>> {
        self.master
            .as_ref()
            .ok_or_else(|| Error::Config("model has no master leaf".into()))
    }

    /// Soft routing weights over leaves plus all node activations.
    pub fn mixture_coefficients(&self, x: &[T]) -> Result<(Tensor1<T>, Tensor1<T>)> {
        self.check_input(x.len())?;
        let acts: Vec<T> = (0..self.node_count())
            .map(|j| sigmoid(dot(self.node_w.row(j), x) + self.node_b[j]))
            .collect();
        crate::numeric::ensure_finite(&acts, "node activations")?;
        let mut reach = vec![T::zero(); self.node_count()];
        let mut coeffs = vec![T::zero(); self.leaf_count()];
        expand_coefficients(&acts, &mut reach, &mut coeffs);
        Ok((Tensor1(coeffs), Tensor1(acts)))
    }

    /// Batched training forward. `fused` mixes in the master leaf.
    pub fn forward_rows(&self, x: &Tensor2<T>, fused: bool) -> Result<ForwardTrace<T>> {
        self.check_input(x.cols())?;
        if fused {
            self.require_master()?;
        }
        let b = x.rows();
        let nodes = self.node_count();
        let (stack, bias) = self.first_layer_stack(fused);
        let mut pre_all = Tensor2::zeros(b, stack.rows());
        gemm_nt(x, &stack, T::zero(), &mut pre_all)?;
        add_row_bias(&mut pre_all, &bias);
        let node_pre = column_block(&pre_all, 0, nodes);
        let mut node_act = node_pre.clone();
        node_act
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = sigmoid(*v));

        let mut node_reach = Tensor2::zeros(b, nodes);
        let mut coeffs = Tensor2::zeros(b, self.leaf_count());
        for r in 0..b {
            expand_coefficients(node_act.row(r), node_reach.row_mut(r), coeffs.row_mut(r));
        }

        let lw = self.leaf_width;
        let leaves = self
            .leaves
            .iter()
            .enumerate()
            .map(|(i, l)| l.forward_from_pre(column_block(&pre_all, nodes + i * lw, lw)))
            .collect::<Result<Vec<_>>>()?;
        let mut fff_logits = Tensor2::zeros(b, self.class_count);
        for (i, lt) in leaves.iter().enumerate() {
            for r in 0..b {
                let c = coeffs.get(r, i);
                for (o, v) in fff_logits.row_mut(r).iter_mut().zip(lt.logits.row(r)) {
                    *o += c * *v;
                }
            }
        }

        let (master, logits) = if fused {
            let m = self.require_master()?;
            let off = nodes + self.leaf_count() * lw;
            let leaf = m.block.forward_from_pre(column_block(&pre_all, off, m.block.width()))?;
            let k = m.k();
            let mut out = fff_logits.clone();
            for (o, v) in out.as_mut_slice().iter_mut().zip(leaf.logits.as_slice()) {
                *o = k * *o + (T::one() - k) * *v;
            }
            (Some(MasterTrace { leaf, k }), out)
        } else {
            (None, fff_logits.clone())
        };

        if !logits.all_finite() || !node_act.all_finite() {
            return Err(Error::Numeric("non-finite activation in training forward".into()));
        }
        Ok(ForwardTrace {
            inputs: x.clone(),
            node_pre,
            node_act,
            node_reach,
            coeffs,
            leaves,
            fff_logits,
            master,
            logits,
        })
    }

    /// `sum_i c_i(x) l_i(x)` for one sample.
    pub fn forward_train(&self, x: &[T]) -> Result<(Tensor1<T>, ForwardTrace<T>)> {
        let rows = Tensor2::from_vec(1, x.len(), x.to_vec())?;
        let trace = self.forward_rows(&rows, false)?;
        Ok((Tensor1(trace.logits.row(0).to_vec()), trace))
    }

    /// `k * FFF_train(x) + (1 - k) * ML(x)` for one sample.
    pub fn forward_train_ml(&self, x: &[T]) -> Result<(Tensor1<T>, ForwardTrace<T>)> {
        self.require_master()?;
        let rows = Tensor2::from_vec(1, x.len(), x.to_vec())?;
        let trace = self.forward_rows(&rows, true)?;
        Ok((Tensor1(trace.logits.row(0).to_vec()), trace))
    }

    /// Leaf reached by hard descent: exactly `depth` node evaluations.
    pub fn route<P: InferenceProbe>(&self, x: &[T], probe: &mut P) -> usize {
        let half = T::lit(0.5);
        let mut n = 0usize;
        for _ in 0..self.depth {
            let s = sigmoid(dot(self.node_w.row(n), x) + self.node_b[n]);
            probe.node(n, self.input_dim);
            n = if s > half { 2 * n + 2 } else { 2 * n + 1 };
        }
        n - self.node_count()
    }

    pub fn forward_inference_probed<P: InferenceProbe>(&self, x: &[T], probe: &mut P) -> Result<(Tensor1<T>, usize)> {
        self.check_input(x.len())?;
        let leaf = self.route(x, probe);
        let block = &self.leaves[leaf];
        probe.leaf(leaf, block.width(), block.macs());
        let out = block.forward_unchecked(x);
        crate::numeric::ensure_finite(&out, "inference logits")?;
        Ok((Tensor1(out), leaf))
    }

    /// Hard-routed output `l*(x)` and the chosen leaf index.
    pub fn forward_inference(&self, x: &[T]) -> Result<(Tensor1<T>, usize)> {
        self.forward_inference_probed(x, &mut ())
    }

    pub fn forward_inference_ml_probed<P: InferenceProbe>(
        &self,
        x: &[T],
        probe: &mut P,
    ) -> Result<(Tensor1<T>, usize)> {
        let m = self.require_master()?;
        let (leaf_out, leaf) = self.forward_inference_probed(x, probe)?;
        probe.master(m.block.width(), m.block.macs());
        let ml = m.block.forward_unchecked(x);
        let k = m.k();
        let out: Vec<T> = leaf_out
            .0
            .iter()
            .zip(&ml)
            .map(|(a, b)| k * *a + (T::one() - k) * *b)
            .collect();
        crate::numeric::ensure_finite(&out, "inference logits")?;
        Ok((Tensor1(out), leaf))
    }

    /// `k * l*(x) + (1 - k) * ML(x)`.
    pub fn forward_inference_ml(&self, x: &[T]) -> Result<(Tensor1<T>, usize)> {
        self.forward_inference_ml_probed(x, &mut ())
    }

    /// Deployed output: hard routing, fused with the master leaf when present.
    pub fn infer(&self, x: &[T]) -> Result<(Tensor1<T>, usize)> {
        if self.master.is_some() {
            self.forward_inference_ml(x)
        } else {
            self.forward_inference(x)
        }
    }

    pub fn inference_cost(&self) -> InferenceCost {
        let leaf = &self.leaves[0];
        let (m_hidden, m_macs) = self
            .master
            .as_ref()
            .map_or((0, 0), |m| (m.block.width(), m.block.macs()));
        InferenceCost {
            node_neurons: self.depth,
            leaf_hidden_neurons: self.leaf_width,
            macs: self.depth * self.input_dim + leaf.macs(),
            master_hidden_neurons: m_hidden,
            master_macs: m_macs,
        }
    }

    fn check_trace(&self, trace: &ForwardTrace<T>) -> Result<()> {
        let ok = trace.inputs.cols() == self.input_dim
            && trace.node_act.cols() == self.node_count()
            && trace.coeffs.cols() == self.leaf_count()
            && trace.leaves.len() == self.leaf_count()
            && trace.logits.cols() == self.class_count
            && (trace.master.is_none() || self.master.is_some());
        if !ok {
            return Err(Error::Invariant("trace was not produced by this model shape".into()));
        }
        Ok(())
    }

    /// Gradient of the loss whose upstream derivatives are `seed`.
    pub fn backward(&self, trace: &ForwardTrace<T>, seed: &GradSeed<T>) -> Result<FffModel<T>> {
        let mut grads = self.zeros_like();
        self.backward_into(trace, seed, &mut grads)?;
        Ok(grads)
    }

    /// Accumulating form of [`backward`](Self::backward).
    pub fn backward_into(&self, trace: &ForwardTrace<T>, seed: &GradSeed<T>, grads: &mut FffModel<T>) -> Result<()> {
        self.check_trace(trace)?;
        let b = trace.batch_size();
        if seed.d_logits.shape() != (b, self.class_count) {
            return Err(Error::Invariant("gradient seed does not match trace".into()));
        }
        let x = &trace.inputs;

        let nodes = self.node_count();
        let lw = self.leaf_width;
        let mut d_master_pre = None;
        // Split the output derivative between the tree and the master leaf.
        let d_fff = match (&trace.master, &self.master, grads.master.as_mut()) {
            (Some(mt), Some(m), Some(gm)) => {
                let k = mt.k;
                let mut d_fff = seed.d_logits.clone();
                let mut d_ml = seed.d_logits.clone();
                let mut dk = T::zero();
                for ((dl, f), ml) in seed
                    .d_logits
                    .as_slice()
                    .iter()
                    .zip(trace.fff_logits.as_slice())
                    .zip(mt.leaf.logits.as_slice())
                {
                    dk += *dl * (*f - *ml);
                }
                d_fff.as_mut_slice().iter_mut().for_each(|v| *v = *v * k);
                d_ml
                    .as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = *v * (T::one() - k));
                d_master_pre = Some(m.block.backward_to_pre(&mt.leaf, &d_ml, &mut gm.block)?);
                gm.kappa += dk * k * (T::one() - k);
                d_fff
            }
            (None, _, _) => seed.d_logits.clone(),
            _ => return Err(Error::Invariant("gradient buffer lacks a master leaf".into())),
        };

        let leaves = self.leaf_count();
        let mut d_coeffs = match &seed.d_coeffs {
            Some(d) if d.shape() == (b, leaves) => d.clone(),
            Some(_) => return Err(Error::Invariant("d_coeffs shape mismatch".into())),
            None => Tensor2::zeros(b, leaves),
        };
        let stack_rows = nodes + leaves * lw + d_master_pre.as_ref().map_or(0, |d| d.cols());
        let mut d_all = Tensor2::zeros(b, stack_rows);
        let mut d_leaf = Tensor2::zeros(b, self.class_count);
        for (i, (leaf, lt)) in self.leaves.iter().zip(&trace.leaves).enumerate() {
            for r in 0..b {
                let c = trace.coeffs.get(r, i);
                let up = d_fff.row(r);
                let dc = dot(lt.logits.row(r), up);
                *d_coeffs.row_mut(r).get_mut(i).expect("leaf index") += dc;
                for (o, u) in d_leaf.row_mut(r).iter_mut().zip(up) {
                    *o = c * *u;
                }
            }
            let d_pre = leaf.backward_to_pre(lt, &d_leaf, &mut grads.leaves[i])?;
            set_column_block(&mut d_all, nodes + i * lw, &d_pre);
        }
        if let Some(d) = &d_master_pre {
            set_column_block(&mut d_all, nodes + leaves * lw, d);
        }

        let mut d_node_pre = Tensor2::zeros(b, nodes);
        let mut g = vec![T::zero(); nodes + leaves];
        for r in 0..b {
            g[nodes..].copy_from_slice(d_coeffs.row(r));
            let s_row = trace.node_act.row(r);
            let reach = trace.node_reach.row(r);
            for j in (0..nodes).rev() {
                let s = s_row[j];
                let (gl, gr) = (g[2 * j + 1], g[2 * j + 2]);
                g[j] = (T::one() - s) * gl + s * gr;
                let mut ds = reach[j] * (gr - gl);
                if let Some(extra) = &seed.d_node_act {
                    ds += extra.get(r, j);
                }
                d_node_pre.set(r, j, ds * s * (T::one() - s));
            }
        }
        accumulate_col_sums(&d_node_pre, &mut grads.node_b);
        set_column_block(&mut d_all, 0, &d_node_pre);

        let mut g_all = Tensor2::zeros(stack_rows, self.input_dim);
        gemm_tn(&d_all, x, T::zero(), &mut g_all)?;
        let d = self.input_dim;
        let rows = |from: usize, n: usize| &g_all.as_slice()[from * d..(from + n) * d];
        add_into(grads.node_w.as_mut_slice(), rows(0, nodes));
        for (i, gl) in grads.leaves.iter_mut().enumerate() {
            add_into(gl.w1.as_mut_slice(), rows(nodes + i * lw, lw));
        }
        if let (Some(dm), Some(gm)) = (&d_master_pre, grads.master.as_mut()) {
            add_into(gm.block.w1.as_mut_slice(), rows(nodes + leaves * lw, dm.cols()));
        }
        Ok(())
    }

    /// Node weights, every leaf's hidden layer and optionally the master's
    /// hidden layer stacked into one matrix, so the input is read once.
    fn first_layer_stack(&self, with_master: bool) -> (Tensor2<T>, Vec<T>) {
        let d = self.input_dim;
        let master = self.master.as_ref().filter(|_| with_master);
        let rows = self.node_count()
            + self.leaf_count() * self.leaf_width
            + master.map_or(0, |m| m.block.width());
        let mut data = Vec::with_capacity(rows * d);
        let mut bias = Vec::with_capacity(rows);
        data.extend_from_slice(self.node_w.as_slice());
        bias.extend_from_slice(&self.node_b);
        for l in self.leaves.iter().chain(master.map(|m| &m.block)) {
            data.extend_from_slice(l.w1.as_slice());
            bias.extend_from_slice(&l.b1);
        }
        (Tensor2::from_vec(rows, d, data).expect("stack shape"), bias)
    }
}

fn column_block<T: Scalar>(t: &Tensor2<T>, from: usize, width: usize) -> Tensor2<T> {
    let mut out = Vec::with_capacity(t.rows() * width);
    for r in 0..t.rows() {
        out.extend_from_slice(&t.row(r)[from..from + width]);
    }
    Tensor2::from_vec(t.rows(), width, out).expect("block shape")
}

fn set_column_block<T: Scalar>(t: &mut Tensor2<T>, from: usize, block: &Tensor2<T>) {
    let w = block.cols();
    for r in 0..t.rows() {
        t.row_mut(r)[from..from + w].copy_from_slice(block.row(r));
    }
}

fn add_into<T: Scalar>(acc: &mut [T], v: &[T]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += *b);
}

/// Fills reach probabilities and leaf coefficients from node activations.
pub(crate) fn expand_coefficients<T: Scalar>(acts: &[T], reach: &mut [T], coeffs: &mut [T]) {
    let nodes = acts.len();
    reach[0] = T::one();
    for j in 0..nodes {
        let s = acts[j];
        let (left, right) = (2 * j + 1, 2 * j + 2);
        let (pl, pr) = (reach[j] * (T::one() - s), reach[j] * s);
        if right < nodes {
            reach[left] = pl;
            reach[right] = pr;
        } else {
            coeffs[left - nodes] = pl;
            coeffs[right - nodes] = pr;
        }
    }
}

impl<T: Scalar> Parameters<T> for FffModel<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(ParamClass, &'a [T])) {
        f(ParamClass::Node, self.node_w.as_slice());
        f(ParamClass::Node, &self.node_b);
        for l in &self.leaves {
            l.visit(f);
        }
        if let Some(m) = &self.master {
            m.block.visit(&mut |_, s| f(ParamClass::Master, s));
            f(ParamClass::Kappa, std::slice::from_ref(&m.kappa));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamClass, &mut [T])) {
        f(ParamClass::Node, self.node_w.as_mut_slice());
        f(ParamClass::Node, &mut self.node_b);
        for l in &mut self.leaves {
            l.visit_mut(f);
        }
        if let Some(m) = &mut self.master {
            m.block.visit_mut(&mut |_, s| f(ParamClass::Master, s));
            f(ParamClass::Kappa, std::slice::from_mut(&mut m.kappa));
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            depth: self.depth,
            input_dim: self.input_dim,
            class_count: self.class_count,
            leaf_width: self.leaf_width,
            node_w: Tensor2::zeros(self.node_w.rows(), self.node_w.cols()),
            node_b: vec![T::zero(); self.node_b.len()],
            leaves: self.leaves.iter().map(LeafBlock::zeros_like).collect(),
            master: self.master.as_ref().map(|m| MasterLeaf {
                block: m.block.zeros_like(),
                kappa: T::zero(),
            }),
        }
    }
}

/// Anything the trainer can fit: the plain baseline or a tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classifier<T> {
    Vanilla(LeafBlock<T>),
    Fff(FffModel<T>),
}

impl<T: Scalar> Classifier<T> {
    pub fn input_dim(&self) -> usize {
        match self {
            Classifier::Vanilla(l) => l.input_dim(),
            Classifier::Fff(m) => m.input_dim(),
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            Classifier::Vanilla(l) => l.class_count(),
            Classifier::Fff(m) => m.class_count(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Classifier<U> {
        match self {
            Classifier::Vanilla(l) => Classifier::Vanilla(l.cast()),
            Classifier::Fff(m) => Classifier::Fff(m.cast()),
        }
    }

    pub fn as_fff(&self) -> Option<&FffModel<T>> {
        match self {
            Classifier::Fff(m) => Some(m),
            Classifier::Vanilla(_) => None,
        }
    }

    /// Deployed prediction: hard routing for trees.
    pub fn predict(&self, x: &[T]) -> Result<usize> {
        let logits = match self {
            Classifier::Vanilla(l) => l.forward(x)?,
            Classifier::Fff(m) => m.infer(x)?.0 .0,
        };
        Ok(argmax(&logits))
    }

    /// Soft-mixture prediction over a batch of rows (identical to
    /// [`predict`](Self::predict) for the vanilla baseline).
    pub fn predict_soft_rows(&self, x: &Tensor2<T>) -> Result<Vec<usize>> {
        let logits = match self {
            Classifier::Vanilla(l) => l.forward_rows(x)?.logits,
            Classifier::Fff(m) => m.forward_rows(x, m.master().is_some())?.logits,
        };
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }
}

impl<T: Scalar> Parameters<T> for Classifier<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(ParamClass, &'a [T])) {
        match self {
            Classifier::Vanilla(l) => l.visit(f),
            Classifier::Fff(m) => m.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamClass, &mut [T])) {
        match self {
            Classifier::Vanilla(l) => l.visit_mut(f),
            Classifier::Fff(m) => m.visit_mut(f),
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            Classifier::Vanilla(l) => Classifier::Vanilla(l.zeros_like()),
            Classifier::Fff(m) => Classifier::Fff(m.zeros_like()),
        }
    }
}
