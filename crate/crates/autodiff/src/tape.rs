//! Recording tape and the differentiable operations the model needs.
//!
//! Every operation appends one node holding its output value. Nodes are
//! only ever appended, so inputs always precede the operations that read
//! them and a single reverse sweep visits each node once.

use crate::conv::{self, Conv2dSpec, ConvGeom};
use crate::error::{AutodiffError, Result};
use crate::real::{gemm, Real};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this crate.
///
/// `backward` returns one entry per input; `None` means no gradient flows
/// to that input. Entries for inputs with `needs[i] == false` are ignored.
pub trait BackwardRule<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Real> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Relu(Var),
    Sigmoid(Var),
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    GlobalAvgPool(Var),
    ScaleChannels {
        x: Var,
        g: Var,
    },
    L2Normalize {
        x: Var,
        norms: Vec<T>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Custom {
        inputs: Vec<Var>,
        rule: Box<dyn BackwardRule<T>>,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Norm threshold below which [`Tape::l2_normalize`] refuses a row.
pub const MIN_NORM: f64 = 1e-12;

/// Single-owner record of a forward computation.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`, if any
    /// flowed to it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(AutodiffError::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Scale(x, factor), rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, T::one() / T::from_usize(n).expect("count"))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// `x (N×D) · w (D×K) + b (K)`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let [n, d] = self.value(x).dims::<2>("dense")?;
        let [wd, k] = self.value(w).dims::<2>("dense")?;
        if wd != d || self.value(b).shape() != [k] {
            return Err(AutodiffError::shape(
                "dense",
                format!(
                    "x {:?}, w {:?}, b {:?}",
                    self.value(x).shape(),
                    self.value(w).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        let mut out = Vec::with_capacity(n * k);
        for _ in 0..n {
            out.extend_from_slice(self.value(b).data());
        }
        gemm(n, d, k, self.value(x).data(), false, self.value(w).data(), false, &mut out, T::one());
        let out = Tensor::new(vec![n, k], out)?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(out, Op::Dense { x, w, b }, rg))
    }

    /// Cross-correlation of `x (N×C×H×W)` with `w (F×C×kH×kW)` plus bias `b (F)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: Conv2dSpec) -> Result<Var> {
        let geom = ConvGeom::new(self.value(x), self.value(w), self.value(b), spec)?;
        let out = conv::forward(self.value(x), self.value(w), self.value(b), &geom);
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// Spatial mean: `N×C×H×W -> N×C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims::<4>("global_avg_pool")?;
        let hw = h * w;
        let inv = T::one() / T::from_usize(hw.max(1)).expect("count");
        let data = self
            .value(x)
            .data()
            .chunks(hw.max(1))
            .take(n * c)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new(vec![n, c], data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::GlobalAvgPool(x), rg))
    }

    /// Multiplies every `H×W` plane of `x (N×C×H×W)` by `g[n, c]`.
    pub fn scale_channels(&mut self, x: Var, g: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims::<4>("scale_channels")?;
        if self.value(g).shape() != [n, c] {
            return Err(AutodiffError::shape(
                "scale_channels",
                format!("x {:?}, gate {:?}", self.value(x).shape(), self.value(g).shape()),
            ));
        }
        let hw = h * w;
        let gate = self.value(g).data();
        let mut data = self.value(x).data().to_vec();
        for (i, plane) in data.chunks_mut(hw.max(1)).take(n * c).enumerate() {
            for v in plane {
                *v *= gate[i];
            }
        }
        let out = Tensor::new(vec![n, c, h, w], data)?;
        let rg = self.any_grad(&[x, g]);
        Ok(self.push(out, Op::ScaleChannels { x, g }, rg))
    }

    /// Divides each row of `x (N×D)` by its Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let [_, d] = self.value(x).dims::<2>("l2_normalize")?;
        let mut data = self.value(x).data().to_vec();
        let mut norms = Vec::new();
        for (row_idx, row) in data.chunks_mut(d.max(1)).enumerate() {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            let norm_f64 = norm.to_f64_lossy();
            if norm_f64.is_nan() || norm_f64 <= MIN_NORM {
                return Err(AutodiffError::DegenerateNorm {
                    row: row_idx,
                    norm: norm.to_f64_lossy(),
                });
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
            norms.push(norm);
        }
        let out = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::L2Normalize { x, norms }, rg))
    }

    /// Mean categorical cross-entropy of softmax(`logits`) against class
    /// indices, computed in log-sum-exp form.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let [n, k] = self.value(logits).dims::<2>("softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(AutodiffError::shape(
                "softmax_cross_entropy",
                format!("{n} rows but {} labels", labels.len()),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(AutodiffError::LabelOutOfRange { label, classes: k });
        }
        let mut probs = Vec::with_capacity(n * k);
        let mut total = T::zero();
        for (row, &label) in self.value(logits).data().chunks(k.max(1)).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let denom = row.iter().map(|&v| (v - max).exp()).sum::<T>();
            let lse = max + denom.ln();
            total += lse - row[label];
            probs.extend(row.iter().map(|&v| (v - max).exp() / denom));
        }
        let loss = if n == 0 {
            T::zero()
        } else {
            total / T::from_usize(n).expect("count")
        };
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Records an externally computed operation with its own backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, rule: impl BackwardRule<T> + 'static) -> Var {
        let rg = self.any_grad(inputs);
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule: Box::new(rule),
            },
            rg,
        )
    }

    /// Propagates `d loss / d node` to every node that requires a gradient.
    ///
    /// Gradients from several consumers of one node are summed. A tape can
    /// be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(AutodiffError::DoubleBackward);
        }
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Tensor::full(shape, T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let contributions = self.input_grads(idx, &g);
            self.nodes[idx].grad = Some(g);
            for (v, delta) in contributions {
                let node = &mut self.nodes[v.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&delta)?,
                    None => node.grad = Some(delta),
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, idx: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[idx];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        let like = |v: Var, data: Vec<T>| Tensor::new(val(v).shape().to_vec(), data).expect("grad shape");
        let gd = g.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        out.push((v, g.clone()));
                    }
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let d = gd.iter().zip(val(*b).data()).map(|(&g, &y)| g * y).collect();
                    out.push((*a, like(*a, d)));
                }
                if needs(*b) {
                    let d = gd.iter().zip(val(*a).data()).map(|(&g, &x)| g * x).collect();
                    out.push((*b, like(*b, d)));
                }
            }
            Op::Scale(x, factor) => {
                out.push((*x, g.map(|v| v * *factor)));
            }
            Op::Sum(x) => {
                out.push((*x, Tensor::full(val(*x).shape().to_vec(), g.item())));
            }
            Op::Relu(x) => {
                let d = gd
                    .iter()
                    .zip(val(*x).data())
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                out.push((*x, like(*x, d)));
            }
            Op::Sigmoid(x) => {
                let d = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(&g, &s)| g * s * (T::one() - s))
                    .collect();
                out.push((*x, like(*x, d)));
            }
            Op::Dense { x, w, b } => {
                let [n, d] = [val(*x).shape()[0], val(*x).shape()[1]];
                let k = val(*w).shape()[1];
                if needs(*x) {
                    let mut dx = vec![T::zero(); n * d];
                    gemm(n, k, d, gd, false, val(*w).data(), true, &mut dx, T::zero());
                    out.push((*x, like(*x, dx)));
                }
                if needs(*w) {
                    let mut dw = vec![T::zero(); d * k];
                    gemm(d, n, k, val(*x).data(), true, gd, false, &mut dw, T::zero());
                    out.push((*w, like(*w, dw)));
                }
                if needs(*b) {
                    let mut db = vec![T::zero(); k];
                    for row in gd.chunks(k.max(1)) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    out.push((*b, like(*b, db)));
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let grads = conv::backward(val(*x), val(*w), g, geom, [needs(*x), needs(*w), needs(*b)]);
                out.extend(grads.dx.map(|t| (*x, t)));
                out.extend(grads.dw.map(|t| (*w, t)));
                out.extend(grads.db.map(|t| (*b, t)));
            }
            Op::GlobalAvgPool(x) => {
                let s = val(*x).shape();
                let hw = s[2] * s[3];
                let inv = T::one() / T::from_usize(hw.max(1)).expect("count");
                let mut dx = Vec::with_capacity(val(*x).len());
                for &gv in gd {
                    dx.extend(std::iter::repeat_n(gv * inv, hw));
                }
                out.push((*x, like(*x, dx)));
            }
            Op::ScaleChannels { x, g: gate } => {
                let s = val(*x).shape();
                let hw = (s[2] * s[3]).max(1);
                if needs(*x) {
                    let gates = val(*gate).data();
                    let mut dx = gd.to_vec();
                    for (i, plane) in dx.chunks_mut(hw).enumerate() {
                        for v in plane {
                            *v *= gates[i];
                        }
                    }
                    out.push((*x, like(*x, dx)));
                }
                if needs(*gate) {
                    let dg = gd
                        .chunks(hw)
                        .zip(val(*x).data().chunks(hw))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(&a, &b)| a * b).sum::<T>())
                        .collect();
                    out.push((*gate, like(*gate, dg)));
                }
            }
            Op::L2Normalize { x, norms } => {
                let d = val(*x).shape()[1].max(1);
                let mut dx = Vec::with_capacity(val(*x).len());
                for ((gy, y), &norm) in gd.chunks(d).zip(node.value.data().chunks(d)).zip(norms) {
                    let dot = gy.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>();
                    dx.extend(gy.iter().zip(y).map(|(&a, &b)| (a - b * dot) / norm));
                }
                out.push((*x, like(*x, dx)));
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let n = labels.len().max(1);
                let k = val(*logits).shape()[1].max(1);
                let scale = g.item() / T::from_usize(n).expect("count");
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (row, &label) in labels.iter().enumerate() {
                    d[row * k + label] -= scale;
                }
                out.push((*logits, like(*logits, d)));
            }
            Op::Custom { inputs, rule } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                let need: Vec<bool> = inputs.iter().map(|&v| needs(v)).collect();
                let grads = rule.backward(&values, &node.value, g, &need);
                for ((&v, grad), need) in inputs.iter().zip(grads).zip(need) {
                    if let (Some(grad), true) = (grad, need) {
                        debug_assert_eq!(grad.shape(), val(v).shape(), "{} gradient shape", rule.name());
                        out.push((v, grad));
                    }
                }
            }
        }
        out
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
