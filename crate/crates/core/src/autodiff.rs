//! A small reverse-mode tape over [`Tensor`] values.
//!
//! Every operation appends a node holding its output and whatever it needs for
//! the backward pass. A tape built with [`Tape::no_grad`] records values only.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::losses;
use crate::params::{ComponentSet, ParamId, ParamStore};
use crate::tensor::{self, Tensor};

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        stride: usize,
        pad: usize,
        cols: Vec<f32>,
    },
    GroupNorm {
        x: usize,
        inv_std: Vec<f32>,
    },
    Affine {
        x: usize,
        scale: usize,
        shift: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        k: f32,
    },
    AddScalar {
        a: usize,
    },
    Relu {
        x: usize,
    },
    LeakyRelu {
        x: usize,
        slope: f32,
    },
    Tanh {
        x: usize,
    },
    Upsample2x {
        x: usize,
    },
    GlobalAvgPool {
        x: usize,
    },
    Linear {
        x: usize,
        w: usize,
        b: usize,
    },
    Narrow {
        x: usize,
        start: usize,
    },
    L1Mean {
        a: usize,
        b: usize,
    },
    LsganD {
        real: usize,
        fake: usize,
    },
    LsganG {
        fake: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    params: HashMap<ParamId, usize>,
}

pub struct Tape {
    inner: RefCell<Inner>,
    grad_enabled: bool,
    trainable: ComponentSet,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape that records gradients for every parameter.
    pub fn new() -> Self {
        Self::with_trainable(ComponentSet::all())
    }

    /// A tape whose parameters outside `trainable` act as constants.
    pub fn with_trainable(trainable: ComponentSet) -> Self {
        Self {
            inner: RefCell::new(Inner::default()),
            grad_enabled: true,
            trainable,
        }
    }

    /// Inference mode: no gradient bookkeeping at all.
    pub fn no_grad() -> Self {
        Self {
            inner: RefCell::new(Inner::default()),
            grad_enabled: false,
            trainable: ComponentSet::default(),
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.inner.borrow().nodes[id].value)
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let inner = self.inner.borrow();
        ids.iter().any(|&i| inner.nodes[i].requires_grad)
    }

    /// A value that never receives gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives gradients (for gradient checks on inputs).
    pub fn variable(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// The tape node for a stored parameter; one node per parameter per tape.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&node) = self.inner.borrow().params.get(&id) {
            return Var { tape: self, id: node };
        }
        let p = store.get(id);
        let trainable = self.trainable.contains(p.component);
        let var = self.push(p.tensor.clone(), Op::Leaf, trainable);
        self.inner.borrow_mut().params.insert(id, var.id);
        var
    }

    /// Reverse pass from weighted scalar roots: the gradient of
    /// `sum_i weight_i * root_i` with respect to every leaf.
    pub fn backward(&self, roots: &[(Var<'_>, f32)]) -> Grads {
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (root, weight) in roots {
            assert!(std::ptr::eq(root.tape, self), "root from another tape");
            let v = &nodes[root.id].value;
            assert_eq!(v.len(), 1, "backward roots must be scalars");
            accumulate(&mut grads, root.id, Tensor::full(v.shape(), *weight));
            last = last.max(root.id);
        }
        for id in (0..=last).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(nodes, id, &g, &mut grads);
        }
        let params = inner.params.iter().map(|(&p, &n)| (p, n)).collect();
        Grads { grads, params }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn map2(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn backprop(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let req = |i: usize| nodes[i].requires_grad;
    let val = |i: usize| &*nodes[i].value;
    let out = &*nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Conv2d {
            x,
            w,
            b,
            stride,
            pad,
            cols,
        } => {
            let xs = val(*x).dims4().expect("4-D");
            let (dx, dw, db) =
                tensor::conv2d_backward(xs, val(*w), cols, g, *stride, *pad, req(*x));
            if let Some(dx) = dx {
                accumulate(grads, *x, dx);
            }
            if req(*w) {
                accumulate(grads, *w, dw);
            }
            if req(*b) {
                accumulate(grads, *b, db);
            }
        }
        Op::GroupNorm { x, inv_std } => {
            if req(*x) {
                accumulate(grads, *x, tensor::group_norm_backward(out, inv_std, g));
            }
        }
        Op::Affine { x, scale, shift } => {
            let xv = val(*x);
            let [_, c, h, w] = xv.dims4().expect("4-D");
            let hw = h * w;
            let sv = val(*scale);
            let per_sample = sv.shape().len() == 2;
            let sidx = |ni: usize, ci: usize| if per_sample { ni * c + ci } else { ci };
            if req(*x) {
                let mut dx = g.clone();
                for (k, chunk) in dx.data_mut().chunks_mut(hw).enumerate() {
                    let s = sv.data()[sidx(k / c, k % c)];
                    chunk.iter_mut().for_each(|v| *v *= s);
                }
                accumulate(grads, *x, dx);
            }
            if req(*scale) || req(*shift) {
                let mut ds = Tensor::zeros(sv.shape());
                let mut dt = Tensor::zeros(sv.shape());
                for (k, (gc, xc)) in g.data().chunks(hw).zip(xv.data().chunks(hw)).enumerate() {
                    let j = sidx(k / c, k % c);
                    ds.data_mut()[j] += gc.iter().zip(xc).map(|(a, b)| a * b).sum::<f32>();
                    dt.data_mut()[j] += gc.iter().sum::<f32>();
                }
                if req(*scale) {
                    accumulate(grads, *scale, ds);
                }
                if req(*shift) {
                    accumulate(grads, *shift, dt);
                }
            }
        }
        Op::Add { a, b } => {
            if req(*a) {
                accumulate(grads, *a, g.clone());
            }
            if req(*b) {
                accumulate(grads, *b, g.clone());
            }
        }
        Op::Scale { a, k } => {
            let mut d = g.clone();
            d.data_mut().iter_mut().for_each(|v| *v *= k);
            accumulate(grads, *a, d);
        }
        Op::AddScalar { a } => accumulate(grads, *a, g.clone()),
        Op::Relu { x } => {
            let d = map2(g, val(*x), |g, x| if x > 0.0 { g } else { 0.0 });
            accumulate(grads, *x, d);
        }
        Op::LeakyRelu { x, slope } => {
            let s = *slope;
            let d = map2(g, val(*x), |g, x| if x > 0.0 { g } else { g * s });
            accumulate(grads, *x, d);
        }
        Op::Tanh { x } => {
            let d = map2(g, out, |g, y| g * (1.0 - y * y));
            accumulate(grads, *x, d);
        }
        Op::Upsample2x { x } => {
            let [n, c, h, w] = val(*x).dims4().expect("4-D");
            let mut d = Tensor::zeros(&[n, c, h, w]);
            let (ho, wo) = (2 * h, 2 * w);
            for (plane, dplane) in g
                .data()
                .chunks(ho * wo)
                .zip(d.data_mut().chunks_mut(h * w))
            {
                for oy in 0..ho {
                    for ox in 0..wo {
                        dplane[(oy / 2) * w + ox / 2] += plane[oy * wo + ox];
                    }
                }
            }
            accumulate(grads, *x, d);
        }
        Op::GlobalAvgPool { x } => {
            let xs = val(*x).shape().to_vec();
            let hw = xs[2] * xs[3];
            let inv = 1.0 / hw as f32;
            let mut d = Tensor::zeros(&xs);
            for (chunk, &gv) in d.data_mut().chunks_mut(hw).zip(g.data()) {
                chunk.fill(gv * inv);
            }
            accumulate(grads, *x, d);
        }
        Op::Linear { x, w, b } => {
            let (xv, wv) = (val(*x), val(*w));
            let (n, fin) = (xv.shape()[0], xv.shape()[1]);
            let fout = wv.shape()[0];
            if req(*x) {
                let mut dx = Tensor::zeros(&[n, fin]);
                tensor::gemm(
                    n,
                    fout,
                    fin,
                    1.0,
                    g.data(),
                    fout as isize,
                    1,
                    wv.data(),
                    fin as isize,
                    1,
                    0.0,
                    dx.data_mut(),
                    fin as isize,
                    1,
                );
                accumulate(grads, *x, dx);
            }
            if req(*w) {
                let mut dw = Tensor::zeros(&[fout, fin]);
                tensor::gemm(
                    fout,
                    n,
                    fin,
                    1.0,
                    g.data(),
                    1,
                    fout as isize,
                    xv.data(),
                    fin as isize,
                    1,
                    0.0,
                    dw.data_mut(),
                    fin as isize,
                    1,
                );
                accumulate(grads, *w, dw);
            }
            if req(*b) {
                let mut db = Tensor::zeros(&[fout]);
                for row in g.data().chunks(fout) {
                    db.data_mut().iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                accumulate(grads, *b, db);
            }
        }
        Op::Narrow { x, start } => {
            let xs = val(*x).shape().to_vec();
            let (n, f) = (xs[0], xs[1]);
            let len = out.shape()[1];
            let mut d = Tensor::zeros(&xs);
            for i in 0..n {
                d.data_mut()[i * f + start..i * f + start + len]
                    .copy_from_slice(&g.data()[i * len..(i + 1) * len]);
            }
            accumulate(grads, *x, d);
        }
        Op::L1Mean { a, b } => {
            let up = g.item();
            let da = losses::l1_mean_grad(&val(*a).view(), &val(*b).view()).expect("checked");
            let da = Tensor::from_array(da.mapv(|v| v * up));
            if req(*b) {
                let mut db = da.clone();
                db.data_mut().iter_mut().for_each(|v| *v = -*v);
                accumulate(grads, *b, db);
            }
            if req(*a) {
                accumulate(grads, *a, da);
            }
        }
        Op::LsganD { real, fake } => {
            let up = g.item();
            let (dr, df) =
                losses::lsgan_d_grad(&val(*real).view(), &val(*fake).view());
            if req(*real) {
                accumulate(grads, *real, Tensor::from_array(dr.mapv(|v| v * up)));
            }
            if req(*fake) {
                accumulate(grads, *fake, Tensor::from_array(df.mapv(|v| v * up)));
            }
        }
        Op::LsganG { fake } => {
            let up = g.item();
            let df = losses::lsgan_g_grad(&val(*fake).view());
            accumulate(grads, *fake, Tensor::from_array(df.mapv(|v| v * up)));
        }
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Grads {
    /// Gradient of a leaf, if it received one.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads[var.id].as_ref()
    }

    /// Gradients of every trainable parameter touched by the tape, by id.
    pub fn params(&self) -> Vec<(ParamId, &Tensor)> {
        let mut out: Vec<(ParamId, &Tensor)> = self
            .params
            .iter()
            .filter_map(|&(p, n)| self.grads[n].as_ref().map(|g| (p, g)))
            .collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    /// A copy of the current value.
    pub fn tensor(&self) -> Tensor {
        (*self.value()).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(&[self.id])
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    pub fn conv2d(self, w: Var<'t>, b: Var<'t>, stride: usize, pad: usize) -> Var<'t> {
        self.same_tape(&w);
        let t = self.tape;
        let req = t.requires(&[self.id, w.id, b.id]);
        let (out, cols) = tensor::conv2d_forward(
            &self.value(),
            &w.value(),
            &b.value(),
            stride,
            pad,
            req && t.grad_enabled,
        );
        t.push(
            out,
            Op::Conv2d {
                x: self.id,
                w: w.id,
                b: b.id,
                stride,
                pad,
                cols,
            },
            req,
        )
    }

    /// Normalization over `(channels / groups) * H * W` slabs, no affine.
    pub fn group_norm(self, groups: usize) -> Var<'t> {
        let (out, inv_std) = tensor::group_norm_forward(&self.value(), groups);
        let req = self.requires_grad();
        self.tape.push(out, Op::GroupNorm { x: self.id, inv_std }, req)
    }

    pub fn instance_norm(self) -> Var<'t> {
        let c = self.shape()[1];
        self.group_norm(c)
    }

    pub fn layer_norm(self) -> Var<'t> {
        self.group_norm(1)
    }

    /// Per-channel `x * scale + shift`. `scale`/`shift` are `[C]` (shared by
    /// the batch) or `[N, C]` (per sample).
    pub fn affine(self, scale: Var<'t>, shift: Var<'t>) -> Var<'t> {
        let xv = self.value();
        let [n, c, _, _] = xv.dims4().expect("affine input must be 4-D");
        let (sv, tv) = (scale.value(), shift.value());
        assert_eq!(sv.shape(), tv.shape(), "scale/shift shapes differ");
        let per_sample = match sv.shape() {
            [cc] if *cc == c => false,
            [nn, cc] if *nn == n && *cc == c => true,
            other => panic!("affine parameters of shape {other:?} for input {:?}", xv.shape()),
        };
        let hw = xv.len() / (n * c);
        let mut out = (*xv).clone();
        for (k, chunk) in out.data_mut().chunks_mut(hw).enumerate() {
            let j = if per_sample { k } else { k % c };
            let (s, t) = (sv.data()[j], tv.data()[j]);
            chunk.iter_mut().for_each(|v| *v = *v * s + t);
        }
        let req = self.tape.requires(&[self.id, scale.id, shift.id]);
        self.tape.push(
            out,
            Op::Affine {
                x: self.id,
                scale: scale.id,
                shift: shift.id,
            },
            req,
        )
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        let out = map2(&self.value(), &other.value(), |a, b| a + b);
        let req = self.tape.requires(&[self.id, other.id]);
        self.tape.push(
            out,
            Op::Add {
                a: self.id,
                b: other.id,
            },
            req,
        )
    }

    pub fn scale(self, k: f32) -> Var<'t> {
        let mut out = self.tensor();
        out.data_mut().iter_mut().for_each(|v| *v *= k);
        let req = self.requires_grad();
        self.tape.push(out, Op::Scale { a: self.id, k }, req)
    }

    pub fn add_scalar(self, k: f32) -> Var<'t> {
        let mut out = self.tensor();
        out.data_mut().iter_mut().for_each(|v| *v += k);
        let req = self.requires_grad();
        self.tape.push(out, Op::AddScalar { a: self.id }, req)
    }

    pub fn relu(self) -> Var<'t> {
        let mut out = self.tensor();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let req = self.requires_grad();
        self.tape.push(out, Op::Relu { x: self.id }, req)
    }

    pub fn leaky_relu(self, slope: f32) -> Var<'t> {
        let mut out = self.tensor();
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = if *v > 0.0 { *v } else { *v * slope });
        let req = self.requires_grad();
        self.tape.push(out, Op::LeakyRelu { x: self.id, slope }, req)
    }

    pub fn tanh(self) -> Var<'t> {
        let mut out = self.tensor();
        out.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        let req = self.requires_grad();
        self.tape.push(out, Op::Tanh { x: self.id }, req)
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2x(self) -> Var<'t> {
        let xv = self.value();
        let [n, c, h, w] = xv.dims4().expect("upsample input must be 4-D");
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        for (plane, oplane) in xv
            .data()
            .chunks(h * w)
            .zip(out.data_mut().chunks_mut(ho * wo))
        {
            for oy in 0..ho {
                for ox in 0..wo {
                    oplane[oy * wo + ox] = plane[(oy / 2) * w + ox / 2];
                }
            }
        }
        let req = self.requires_grad();
        self.tape.push(out, Op::Upsample2x { x: self.id }, req)
    }

    /// `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(self) -> Var<'t> {
        let xv = self.value();
        let [n, c, h, w] = xv.dims4().expect("pool input must be 4-D");
        let inv = 1.0 / (h * w) as f32;
        let data = xv
            .data()
            .chunks(h * w)
            .map(|p| p.iter().sum::<f32>() * inv)
            .collect();
        let out = Tensor::new(vec![n, c], data).expect("consistent");
        let req = self.requires_grad();
        self.tape.push(out, Op::GlobalAvgPool { x: self.id }, req)
    }

    /// `[N, in] @ W[out, in]^T + b`.
    pub fn linear(self, w: Var<'t>, b: Var<'t>) -> Var<'t> {
        let (xv, wv, bv) = (self.value(), w.value(), b.value());
        assert_eq!(xv.shape().len(), 2, "linear input must be 2-D");
        let (n, fin) = (xv.shape()[0], xv.shape()[1]);
        assert_eq!(wv.shape(), [wv.shape()[0], fin], "linear weight shape");
        let fout = wv.shape()[0];
        assert_eq!(bv.len(), fout, "linear bias length");
        let mut out = Tensor::zeros(&[n, fout]);
        for row in out.data_mut().chunks_mut(fout) {
            row.copy_from_slice(bv.data());
        }
        tensor::gemm(
            n,
            fin,
            fout,
            1.0,
            xv.data(),
            fin as isize,
            1,
            wv.data(),
            1,
            fin as isize,
            1.0,
            out.data_mut(),
            fout as isize,
            1,
        );
        let req = self.tape.requires(&[self.id, w.id, b.id]);
        self.tape.push(
            out,
            Op::Linear {
                x: self.id,
                w: w.id,
                b: b.id,
            },
            req,
        )
    }

    /// Columns `start..start + len` of a 2-D value.
    pub fn narrow(self, start: usize, len: usize) -> Var<'t> {
        let xv = self.value();
        assert_eq!(xv.shape().len(), 2, "narrow input must be 2-D");
        let (n, f) = (xv.shape()[0], xv.shape()[1]);
        assert!(start + len <= f, "narrow {start}+{len} beyond {f}");
        let mut data = Vec::with_capacity(n * len);
        for row in xv.data().chunks(f) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let out = Tensor::new(vec![n, len], data).expect("consistent");
        let req = self.requires_grad();
        self.tape.push(out, Op::Narrow { x: self.id, start }, req)
    }

    /// Mean absolute difference, a scalar.
    pub fn l1_mean(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        let v = losses::l1_mean(&self.value().view(), &other.value().view())
            .unwrap_or_else(|e| panic!("l1_mean: {e}"));
        let req = self.tape.requires(&[self.id, other.id]);
        self.tape.push(
            Tensor::scalar(v),
            Op::L1Mean {
                a: self.id,
                b: other.id,
            },
            req,
        )
    }
}

/// Least-squares discriminator objective on real and fake score maps.
pub fn lsgan_d<'t>(real: Var<'t>, fake: Var<'t>) -> Var<'t> {
    real.same_tape(&fake);
    let v = losses::lsgan_d(&real.value().view(), &fake.value().view());
    let req = real.tape.requires(&[real.id, fake.id]);
    real.tape.push(
        Tensor::scalar(v),
        Op::LsganD {
            real: real.id,
            fake: fake.id,
        },
        req,
    )
}

/// Least-squares generator objective on fake score maps.
pub fn lsgan_g(fake: Var<'_>) -> Var<'_> {
    let v = losses::lsgan_g(&fake.value().view());
    let req = fake.requires_grad();
    fake.tape
        .push(Tensor::scalar(v), Op::LsganG { fake: fake.id }, req)
}
