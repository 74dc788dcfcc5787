//! Minimal reverse-mode differentiation over mesh fields.
//!
//! A [`Tape`] records one forward pass against a read-only [`ParamStore`];
//! [`Tape::backward`] walks the recorded ops in reverse and returns exact
//! gradients for every parameter (and every recorded node).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, MeshHierarchy, KERNEL_TAPS};

use super::conv::{conv_backward, conv_forward};
use super::loss::{l2_value_grad, rc_value_grad, RcWeights};
use super::pool::{pool_backward, pool_forward, unpool_backward, unpool_forward};
use super::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * KERNEL_TAPS
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.out_channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All convolution parameters of a network in one flat buffer.
///
/// Layer `l` occupies `offsets[l]..offsets[l] + shape.len()`: weights
/// (`out×in×7`) followed by biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    shapes: Vec<ConvShape>,
    offsets: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> ParamStore<T> {
    pub fn zeros(shapes: Vec<ConvShape>) -> Self {
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut total = 0;
        for s in &shapes {
            offsets.push(total);
            total += s.len();
        }
        ParamStore {
            shapes,
            offsets,
            data: vec![T::zero(); total],
        }
    }

    /// Glorot-uniform weights (fans count all 7 taps), zero bias.
    pub fn init_uniform<R: Rng>(shapes: Vec<ConvShape>, rng: &mut R) -> Self {
        let mut store = Self::zeros(shapes);
        for l in 0..store.shapes.len() {
            let s = store.shapes[l];
            let bound = (6.0 / ((s.in_channels + s.out_channels) * KERNEL_TAPS) as f64).sqrt();
            let (w, _) = store.layer_mut(l);
            for x in w.iter_mut() {
                *x = T::from_f64(rng.random_range(-bound..bound));
            }
        }
        store
    }

    pub fn from_data(shapes: Vec<ConvShape>, data: Vec<T>) -> Result<Self> {
        let mut store = Self::zeros(shapes);
        if data.len() != store.data.len() {
            return Err(Error::shape(format!(
                "parameter buffer has {} values, layers need {}",
                data.len(),
                store.data.len()
            )));
        }
        store.data = data;
        Ok(store)
    }

    pub fn shapes(&self) -> &[ConvShape] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn layer(&self, l: usize) -> (&[T], &[T]) {
        let s = self.shapes[l];
        let chunk = &self.data[self.offsets[l]..self.offsets[l] + s.len()];
        chunk.split_at(s.weight_len())
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [T], &mut [T]) {
        let s = self.shapes[l];
        let chunk = &mut self.data[self.offsets[l]..self.offsets[l] + s.len()];
        chunk.split_at_mut(s.weight_len())
    }

    pub fn offset(&self, l: usize) -> usize {
        self.offsets[l]
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            shapes: self.shapes.clone(),
            offsets: self.offsets.clone(),
            data: self.data.iter().map(|x| U::from_f64(x.as_f64())).collect(),
        }
    }
}

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<'a, T> {
    Leaf,
    Conv {
        x: usize,
        layer: usize,
        mesh: &'a Mesh,
    },
    Relu {
        x: usize,
    },
    Pool {
        x: usize,
        sets: &'a [Vec<usize>],
    },
    Unpool {
        x: usize,
        parents: &'a [[usize; 2]],
    },
    Concat {
        parts: Vec<usize>,
    },
    /// Scalar loss; `grad` is d(loss)/d(pred), computed during the forward pass.
    Loss {
        pred: usize,
        grad: Vec<T>,
    },
}

struct Node<'a, T> {
    value: Vec<T>,
    channels: usize,
    vertices: usize,
    op: Op<'a, T>,
}

pub struct Tape<'a, T: Real> {
    params: &'a ParamStore<T>,
    nodes: Vec<Node<'a, T>>,
    scratch: Vec<T>,
    input_grads: bool,
}

/// Result of a backward pass.
pub struct Gradients<T> {
    pub params: Vec<T>,
    nodes: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a recorded value, if it influenced the loss.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new(params: &'a ParamStore<T>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            scratch: Vec::new(),
            input_grads: false,
        }
    }

    /// Also propagate gradients into input leaves (off by default).
    pub fn with_input_gradients(mut self) -> Self {
        self.input_grads = true;
        self
    }

    fn push(&mut self, value: Vec<T>, channels: usize, vertices: usize, op: Op<'a, T>) -> Var {
        debug_assert_eq!(value.len(), channels * vertices);
        self.nodes.push(Node {
            value,
            channels,
            vertices,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Vec<T>, channels: usize, vertices: usize) -> Result<Var> {
        if value.len() != channels * vertices {
            return Err(Error::shape(format!(
                "input has {} values, expected {channels}x{vertices}",
                value.len()
            )));
        }
        Ok(self.push(value, channels, vertices, Op::Leaf))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn channels(&self, v: Var) -> usize {
        self.nodes[v.0].channels
    }

    pub fn vertices(&self, v: Var) -> usize {
        self.nodes[v.0].vertices
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0].as_f64()
    }

    pub fn conv(&mut self, x: Var, layer: usize, mesh: &'a Mesh) -> Result<Var> {
        let shape = *self
            .params
            .shapes()
            .get(layer)
            .ok_or(Error::IndexOutOfRange {
                index: layer,
                len: self.params.shapes().len(),
            })?;
        let (c, n) = (self.channels(x), self.vertices(x));
        if c != shape.in_channels || n != mesh.num_vertices() {
            return Err(Error::shape(format!(
                "conv layer {layer} expects {} channels on {} vertices, got {c}x{n}",
                shape.in_channels,
                mesh.num_vertices()
            )));
        }
        let (w, b) = self.params.layer(layer);
        let mut out = vec![T::zero(); shape.out_channels * n];
        conv_forward(
            &self.nodes[x.0].value,
            c,
            mesh.kernel_taps(),
            w,
            b,
            shape.out_channels,
            &mut self.scratch,
            &mut out,
        );
        Ok(self.push(out, shape.out_channels, n, Op::Conv { x: x.0, layer, mesh }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let node = &self.nodes[x.0];
        let out = node.value.iter().map(|&v| v.max(T::zero())).collect();
        let (c, n) = (node.channels, node.vertices);
        self.push(out, c, n, Op::Relu { x: x.0 })
    }

    /// Pools a field living on `fine_level` of `h` one level down.
    pub fn pool(&mut self, x: Var, h: &'a MeshHierarchy, fine_level: usize) -> Result<Var> {
        let sets = h.pool_sets(fine_level)?;
        let (c, n) = (self.channels(x), self.vertices(x));
        if n != h.level(fine_level)?.num_vertices() {
            return Err(Error::shape(format!("pool input has {n} vertices")));
        }
        let mut out = vec![T::zero(); c * sets.len()];
        pool_forward(&self.nodes[x.0].value, c, n, sets, &mut out);
        Ok(self.push(out, c, sets.len(), Op::Pool { x: x.0, sets }))
    }

    /// Unpools a field living on `coarse_level` of `h` one level up.
    pub fn unpool(&mut self, x: Var, h: &'a MeshHierarchy, coarse_level: usize) -> Result<Var> {
        let parents = h.parents(coarse_level + 1)?;
        let (c, n) = (self.channels(x), self.vertices(x));
        if n != h.level(coarse_level)?.num_vertices() {
            return Err(Error::shape(format!("unpool input has {n} vertices")));
        }
        let fine_n = n + parents.len();
        let mut out = vec![T::zero(); c * fine_n];
        unpool_forward(&self.nodes[x.0].value, c, n, parents, &mut out);
        Ok(self.push(out, c, fine_n, Op::Unpool { x: x.0, parents }))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.vertices(parts[0]);
        if parts.iter().any(|p| self.vertices(*p) != n) {
            return Err(Error::shape("concatenated values must share vertices"));
        }
        let mut out = Vec::new();
        let mut c = 0;
        for p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
            c += self.channels(*p);
        }
        Ok(self.push(out, c, n, Op::Concat {
            parts: parts.iter().map(|p| p.0).collect(),
        }))
    }

    pub fn l2_loss(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        if target.len() != self.nodes[pred.0].value.len() {
            return Err(Error::shape("l2 target length differs from prediction"));
        }
        let (value, grad) = l2_value_grad(&self.nodes[pred.0].value, target);
        Ok(self.push(vec![T::from_f64(value)], 1, 1, Op::Loss { pred: pred.0, grad }))
    }

    pub fn rc_loss(
        &mut self,
        pred: Var,
        own: &[T],
        others: &[&[T]],
        weights: RcWeights,
    ) -> Result<Var> {
        weights.validate()?;
        let len = self.nodes[pred.0].value.len();
        if others.is_empty() {
            return Err(Error::InvalidArgument("rc loss needs other targets".into()));
        }
        if own.len() != len || others.iter().any(|o| o.len() != len) {
            return Err(Error::shape("rc targets differ from prediction"));
        }
        let (value, grad) = rc_value_grad(&self.nodes[pred.0].value, own, others, weights);
        Ok(self.push(vec![T::from_f64(value)], 1, 1, Op::Loss { pred: pred.0, grad }))
    }

    /// Exact gradients of the scalar `loss` with respect to all parameters.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        for (i, node) in self.nodes[..=loss.0].iter().enumerate() {
            if node.value.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("tape node {i}")));
            }
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::InvalidArgument("backward needs a scalar loss".into()));
        }

        let mut params = vec![T::zero(); self.params.len()];
        let mut adj: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Loss { pred, grad } => {
                    let s = g[0];
                    let d = accum(&mut adj, *pred, grad.len());
                    for (a, &x) in d.iter_mut().zip(grad) {
                        *a += s * x;
                    }
                }
                Op::Relu { x } => {
                    let d = accum(&mut adj, *x, g.len());
                    for ((a, &gi), &y) in d.iter_mut().zip(&g).zip(&node.value) {
                        if y > T::zero() {
                            *a += gi;
                        }
                    }
                }
                Op::Conv { x, layer, mesh } => {
                    let (x, layer) = (*x, *layer);
                    let shape = self.params.shapes()[layer];
                    let (w, _) = self.params.layer(layer);
                    let off = self.params.offset(layer);
                    let (dw, db) =
                        params[off..off + shape.len()].split_at_mut(shape.weight_len());
                    let xin = &self.nodes[x].value;
                    let needs_dx = self.input_grads || !matches!(self.nodes[x].op, Op::Leaf);
                    let dx = if needs_dx {
                        Some(accum(&mut adj, x, xin.len()))
                    } else {
                        None
                    };
                    conv_backward(
                        xin,
                        shape.in_channels,
                        mesh.kernel_taps(),
                        w,
                        shape.out_channels,
                        &g,
                        dw,
                        db,
                        dx.map(|v| v.as_mut_slice()),
                        &mut self.scratch,
                    );
                }
                Op::Pool { x, sets } => {
                    let (c, n) = (self.nodes[*x].channels, self.nodes[*x].vertices);
                    let d = accum(&mut adj, *x, c * n);
                    pool_backward(&g, c, n, sets, d);
                }
                Op::Unpool { x, parents } => {
                    let (c, n) = (self.nodes[*x].channels, self.nodes[*x].vertices);
                    let d = accum(&mut adj, *x, c * n);
                    unpool_backward(&g, c, n, parents, d);
                }
                Op::Concat { parts } => {
                    let mut start = 0;
                    for &p in parts {
                        let len = self.nodes[p].value.len();
                        let d = accum(&mut adj, p, len);
                        for (a, &gi) in d.iter_mut().zip(&g[start..start + len]) {
                            *a += gi;
                        }
                        start += len;
                    }
                }
            }
            adj[i] = Some(g);
        }
        if let Some(i) = params.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
        Ok(Gradients { params, nodes: adj })
    }
}

fn accum<T: Real>(adj: &mut [Option<Vec<T>>], i: usize, len: usize) -> &mut Vec<T> {
    adj[i].get_or_insert_with(|| vec![T::zero(); len])
}
