//! Layer building blocks. Each layer stores the ids of its parameters and
//! replays itself onto a tape.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::params::{Component, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Standard deviation of the Gaussian initializer of convolution weights.
pub const INIT_STD: f32 = 0.02;

/// He-normal standard deviation for a linear layer. The style MLP is three
/// layers deep, so a fixed small std would shrink the modulation it emits
/// to the point where the generator ignores the style code.
fn linear_std(fan_in: usize) -> f32 {
    (2.0 / fan_in as f32).sqrt()
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        component: Component,
        layer: &str,
        index: usize,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = store.add_gaussian(
            rng,
            component,
            layer,
            index,
            "weight",
            &[cout, cin, kernel, kernel],
            INIT_STD,
        );
        let b = store.add(component, layer, index, "bias", Tensor::zeros(&[cout]));
        Self { w, b, stride, pad }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        x.conv2d(
            tape.param(store, self.w),
            tape.param(store, self.b),
            self.stride,
            self.pad,
        )
    }
}

/// Learnable per-channel scale and shift, initialized to identity.
#[derive(Clone, Debug)]
pub(crate) struct ChannelAffine {
    gamma: ParamId,
    beta: ParamId,
}

impl ChannelAffine {
    pub fn new(store: &mut ParamStore, component: Component, layer: &str, index: usize, c: usize) -> Self {
        let gamma = store.add(component, layer, index, "gamma", Tensor::full(&[c], 1.0));
        let beta = store.add(component, layer, index, "beta", Tensor::zeros(&[c]));
        Self { gamma, beta }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        x.affine(tape.param(store, self.gamma), tape.param(store, self.beta))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        component: Component,
        layer: &str,
        index: usize,
        fin: usize,
        fout: usize,
    ) -> Self {
        let w = store.add_gaussian(rng, component, layer, index, "weight", &[fout, fin], linear_std(fin));
        let b = store.add(component, layer, index, "bias", Tensor::zeros(&[fout]));
        Self { w, b }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        x.linear(tape.param(store, self.w), tape.param(store, self.b))
    }
}

/// `x + IN(conv(relu(IN(conv(x)))))` with affine instance norms.
#[derive(Clone, Debug)]
pub(crate) struct ResBlock {
    conv1: Conv,
    norm1: ChannelAffine,
    conv2: Conv,
    norm2: ChannelAffine,
}

impl ResBlock {
    fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, component: Component, index: usize, c: usize) -> Self {
        let (i1, i2) = (2 * index, 2 * index + 1);
        Self {
            conv1: Conv::new(store, rng, component, "conv", i1, c, c, 3, 1, 1),
            norm1: ChannelAffine::new(store, component, "norm", i1, c),
            conv2: Conv::new(store, rng, component, "conv", i2, c, c, 3, 1, 1),
            norm2: ChannelAffine::new(store, component, "norm", i2, c),
        }
    }

    fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let y = self.conv1.forward(tape, store, x).instance_norm();
        let y = self.norm1.forward(tape, store, y).relu();
        let y = self.conv2.forward(tape, store, y).instance_norm();
        let y = self.norm2.forward(tape, store, y);
        x.add(y)
    }
}

/// A stack of shape-preserving residual blocks.
#[derive(Clone, Debug)]
pub(crate) struct ResStack {
    blocks: Vec<ResBlock>,
}

impl ResStack {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, component: Component, n: usize, c: usize) -> Self {
        Self {
            blocks: (0..n).map(|i| ResBlock::new(store, rng, component, i, c)).collect(),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        self.blocks.iter().fold(x, |h, b| b.forward(tape, store, h))
    }
}

/// Residual block whose normalizations take their scale/shift from a style code.
#[derive(Clone, Debug)]
pub(crate) struct AdaResBlock {
    conv1: Conv,
    conv2: Conv,
}

impl AdaResBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, component: Component, index: usize, c: usize) -> Self {
        Self {
            conv1: Conv::new(store, rng, component, "res_conv", 2 * index, c, c, 3, 1, 1),
            conv2: Conv::new(store, rng, component, "res_conv", 2 * index + 1, c, c, 3, 1, 1),
        }
    }

    /// `ada` holds `[gamma1, beta1, gamma2, beta2]`, each `[N, C]`; the
    /// applied scale is `1 + gamma`.
    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, ada: [Var<'t>; 4]) -> Var<'t> {
        let [g1, b1, g2, b2] = ada;
        let y = self.conv1.forward(tape, store, x).instance_norm();
        let y = y.affine(g1.add_scalar(1.0), b1).relu();
        let y = self.conv2.forward(tape, store, y).instance_norm();
        let y = y.affine(g2.add_scalar(1.0), b2);
        x.add(y)
    }
}
