//! Networks and the forward composition of the translation pipeline.
//!
//! Each domain owns a content downsampler, a style encoder, a content mapping
//! from the shared space into its own content space, a generator and a patch
//! discriminator. The residual projector that turns a domain-specific content
//! code into a shared one is either shared by both domains or duplicated.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{AdaResBlock, ChannelAffine, Conv, Linear, ResStack};
use crate::params::{Component, ParamStore};
use crate::tensor::Tensor;

pub const IMAGE_CHANNELS: usize = 3;
const LEAKY_SLOPE: f32 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DomainId {
    A,
    B,
}

impl DomainId {
    pub const BOTH: [DomainId; 2] = [DomainId::A, DomainId::B];

    pub fn other(self) -> DomainId {
        match self {
            DomainId::A => DomainId::B,
            DomainId::B => DomainId::A,
        }
    }

    fn pick<T>(self, a: T, b: T) -> T {
        match self {
            DomainId::A => a,
            DomainId::B => b,
        }
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.pick("A", "B"))
    }
}

impl FromStr for DomainId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "A" => Ok(DomainId::A),
            "b" | "B" => Ok(DomainId::B),
            _ => Err(Error::InvalidInput(format!("unknown domain {s:?} (expected A or B)"))),
        }
    }
}

/// Which content space a code lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CodeKind {
    Shared,
    DomainSpecific(DomainId),
}

/// A batch of RGB images in `[-1, 1]`, laid out `N x 3 x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch(Tensor);

impl ImageBatch {
    pub fn new(t: Tensor) -> Result<Self> {
        let [n, c, h, w] = t.dims4()?;
        if c != IMAGE_CHANNELS {
            return Err(Error::InvalidInput(format!("images need 3 channels, got {c}")));
        }
        if n == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidInput(format!("empty image batch {:?}", t.shape())));
        }
        if !t.all_finite() {
            return Err(Error::NonFinite("image batch".into()));
        }
        let (lo, hi) = t.min_max();
        if lo < -1.0 || hi > 1.0 {
            return Err(Error::InvalidInput(format!(
                "image values must lie in [-1, 1], got [{lo}, {hi}]"
            )));
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn shape(&self) -> &[usize] {
        self.0.shape()
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        Ok(Self(self.0.slice_batch(start, len)?))
    }

    pub fn concat(parts: &[&ImageBatch]) -> Result<Self> {
        let ts: Vec<&Tensor> = parts.iter().map(|p| &p.0).collect();
        Ok(Self(Tensor::concat_batch(&ts)?))
    }
}

/// A spatial content feature map with its space tag.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentCode {
    data: Tensor,
    kind: CodeKind,
}

impl ContentCode {
    pub fn new(data: Tensor, kind: CodeKind) -> Result<Self> {
        data.dims4()?;
        if !data.all_finite() {
            return Err(Error::NonFinite("content code".into()));
        }
        Ok(Self { data, kind })
    }

    pub fn kind(&self) -> CodeKind {
        self.kind
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }
}

/// A batch of style vectors, `N x style_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleCode(Tensor);

impl StyleCode {
    pub fn new(data: Tensor) -> Result<Self> {
        if data.shape().len() != 2 {
            return Err(Error::InvalidInput(format!(
                "style codes are 2-D, got shape {:?}",
                data.shape()
            )));
        }
        if !data.all_finite() {
            return Err(Error::NonFinite("style code".into()));
        }
        Ok(Self(data))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.0.shape()[1]
    }
}

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub n_downsample: usize,
    pub base_channels: usize,
    pub n_res_shared: usize,
    pub n_res_mapping: usize,
    pub style_dim: usize,
    pub share_residual_projector: bool,
    pub n_gen_res: usize,
    pub disc_layers: usize,
    /// When false the content mappings are replaced by the identity
    /// (the "without mapping" ablation).
    pub use_mapping: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            n_downsample: 2,
            base_channels: 64,
            n_res_shared: 2,
            n_res_mapping: 2,
            style_dim: 8,
            share_residual_projector: true,
            n_gen_res: 4,
            disc_layers: 3,
            use_mapping: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// A small configuration that trains in minutes on one CPU core.
    pub fn toy(image_size: usize, seed: u64) -> Self {
        Self {
            image_size,
            n_downsample: 2,
            base_channels: 8,
            n_res_shared: 1,
            n_res_mapping: 1,
            style_dim: 8,
            share_residual_projector: true,
            n_gen_res: 2,
            disc_layers: 3,
            use_mapping: true,
            seed,
        }
    }

    /// Channels of content codes: `base_channels * 2^n_downsample`.
    pub fn content_channels(&self) -> usize {
        self.base_channels << self.n_downsample
    }

    pub fn content_size(&self) -> usize {
        self.image_size >> self.n_downsample
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("image_size", self.image_size),
            ("n_downsample", self.n_downsample),
            ("base_channels", self.base_channels),
            ("n_res_shared", self.n_res_shared),
            ("n_res_mapping", self.n_res_mapping),
            ("style_dim", self.style_dim),
            ("n_gen_res", self.n_gen_res),
            ("disc_layers", self.disc_layers),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{k} must be >= 1")));
        }
        if self.n_downsample > 8 || !self.image_size.is_multiple_of(1 << self.n_downsample) {
            return Err(Error::Config(format!(
                "image_size {} is not divisible by 2^{}",
                self.image_size, self.n_downsample
            )));
        }
        if self.disc_layers > 8 || self.image_size >> self.disc_layers == 0 {
            return Err(Error::Config(format!(
                "{} discriminator layers collapse a {}-pixel image",
                self.disc_layers, self.image_size
            )));
        }
        Ok(())
    }
}

/// A content code on a tape, with its tag.
#[derive(Clone, Copy, Debug)]
pub struct Code<'t> {
    pub var: Var<'t>,
    pub kind: CodeKind,
}

#[derive(Clone, Debug)]
struct StyleEncoder {
    convs: Vec<Conv>,
    head: Linear,
}

#[derive(Clone, Debug)]
struct Generator {
    mlp: Vec<Linear>,
    res: Vec<AdaResBlock>,
    ups: Vec<(Conv, ChannelAffine)>,
    out: Conv,
}

#[derive(Clone, Debug)]
struct Discriminator {
    convs: Vec<Conv>,
    out: Conv,
}

#[derive(Clone, Debug)]
struct DomainNets {
    content_down: Vec<Conv>,
    style: StyleEncoder,
    mapping: Option<ResStack>,
    generator: Generator,
    disc: Discriminator,
}

#[derive(Clone, Debug)]
enum ResProjector {
    Shared(ResStack),
    PerDomain(ResStack, ResStack),
}

/// All networks of both domains plus their parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    nets: [DomainNets; 2],
    res_proj: ResProjector,
}

fn domain_components(d: DomainId) -> [Component; 5] {
    match d {
        DomainId::A => [
            Component::ContentA,
            Component::StyleA,
            Component::MapA,
            Component::GenA,
            Component::DiscA,
        ],
        DomainId::B => [
            Component::ContentB,
            Component::StyleB,
            Component::MapB,
            Component::GenB,
            Component::DiscB,
        ],
    }
}

impl Model {
    /// Builds a model with seeded Gaussian initialization.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let cfg = &config;
        let cc = cfg.content_channels();

        let build_domain = |store: &mut ParamStore, rng: &mut ChaCha8Rng, d: DomainId| {
            let [content, style, map, gen, disc] = domain_components(d);
            let base = cfg.base_channels;

            let mut content_down = vec![Conv::new(store, rng, content, "conv", 0, IMAGE_CHANNELS, base, 7, 1, 3)];
            let mut ch = base;
            for i in 0..cfg.n_downsample {
                content_down.push(Conv::new(store, rng, content, "conv", i + 1, ch, ch * 2, 4, 2, 1));
                ch *= 2;
            }

            let mut convs = vec![Conv::new(store, rng, style, "conv", 0, IMAGE_CHANNELS, base, 7, 1, 3)];
            let mut ch = base;
            for i in 0..cfg.n_downsample {
                convs.push(Conv::new(store, rng, style, "conv", i + 1, ch, ch * 2, 4, 2, 1));
                ch *= 2;
            }
            let head = Linear::new(store, rng, style, "linear", 0, ch, cfg.style_dim);
            let style_enc = StyleEncoder { convs, head };

            let mapping = cfg
                .use_mapping
                .then(|| ResStack::new(store, rng, map, cfg.n_res_mapping, cc));

            let ada_dim = 4 * cfg.n_gen_res * cc;
            let mlp = vec![
                Linear::new(store, rng, gen, "mlp", 0, cfg.style_dim, cc),
                Linear::new(store, rng, gen, "mlp", 1, cc, cc),
                Linear::new(store, rng, gen, "mlp", 2, cc, ada_dim),
            ];
            let res = (0..cfg.n_gen_res)
                .map(|i| AdaResBlock::new(store, rng, gen, i, cc))
                .collect();
            let mut ups = Vec::new();
            let mut ch = cc;
            for i in 0..cfg.n_downsample {
                let conv = Conv::new(store, rng, gen, "up_conv", i, ch, ch / 2, 3, 1, 1);
                let norm = ChannelAffine::new(store, gen, "up_norm", i, ch / 2);
                ups.push((conv, norm));
                ch /= 2;
            }
            let out = Conv::new(store, rng, gen, "out_conv", 0, ch, IMAGE_CHANNELS, 7, 1, 3);
            let generator = Generator { mlp, res, ups, out };

            let mut convs = Vec::new();
            let (mut cin, mut cout) = (IMAGE_CHANNELS, base);
            for i in 0..cfg.disc_layers {
                convs.push(Conv::new(store, rng, disc, "conv", i, cin, cout, 4, 2, 1));
                cin = cout;
                cout *= 2;
            }
            let out = Conv::new(store, rng, disc, "out_conv", 0, cin, 1, 1, 1, 0);
            DomainNets {
                content_down,
                style: style_enc,
                mapping,
                generator,
                disc: Discriminator { convs, out },
            }
        };

        let net_a = build_domain(&mut store, &mut rng, DomainId::A);
        let net_b = build_domain(&mut store, &mut rng, DomainId::B);
        let res_proj = if cfg.share_residual_projector {
            ResProjector::Shared(ResStack::new(&mut store, &mut rng, Component::ResProj, cfg.n_res_shared, cc))
        } else {
            ResProjector::PerDomain(
                ResStack::new(&mut store, &mut rng, Component::ResProjA, cfg.n_res_shared, cc),
                ResStack::new(&mut store, &mut rng, Component::ResProjB, cfg.n_res_shared, cc),
            )
        };
        Ok(Self {
            config,
            params: store,
            nets: [net_a, net_b],
            res_proj,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn nets(&self, d: DomainId) -> &DomainNets {
        &self.nets[d as usize]
    }

    fn res_stack(&self, d: DomainId) -> &ResStack {
        match &self.res_proj {
            ResProjector::Shared(s) => s,
            ResProjector::PerDomain(a, b) => d.pick(a, b),
        }
    }

    /// Rejects images whose layout does not match this configuration.
    pub fn check_images(&self, x: &ImageBatch) -> Result<()> {
        let [_, _, h, w] = x.tensor().dims4()?;
        let s = self.config.image_size;
        if h != s || w != s {
            return Err(Error::Shape {
                expected: vec![x.batch(), IMAGE_CHANNELS, s, s],
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn check_content(&self, code: &Tensor) -> Result<()> {
        let [n, c, h, w] = code.dims4()?;
        let (cc, cs) = (self.config.content_channels(), self.config.content_size());
        if c != cc || h != cs || w != cs {
            return Err(Error::shape(&[n, cc, cs, cs], code.shape()));
        }
        Ok(())
    }

    fn check_style(&self, s: &StyleCode) -> Result<()> {
        if s.dim() != self.config.style_dim {
            return Err(Error::shape(&[s.batch(), self.config.style_dim], s.tensor().shape()));
        }
        Ok(())
    }

    // ---- graph-level forward passes ------------------------------------------------

    /// `(h, c)`: the domain-specific code from the downsampler and the shared
    /// code after the residual projector.
    pub fn content_graph<'t>(&self, tape: &'t Tape, x: Var<'t>, d: DomainId) -> (Code<'t>, Code<'t>) {
        let store = &self.params;
        let h = self
            .nets(d)
            .content_down
            .iter()
            .fold(x, |y, conv| conv.forward(tape, store, y).instance_norm().relu());
        let c = self.res_stack(d).forward(tape, store, h);
        (
            Code {
                var: h,
                kind: CodeKind::DomainSpecific(d),
            },
            Code {
                var: c,
                kind: CodeKind::Shared,
            },
        )
    }

    pub fn style_graph<'t>(&self, tape: &'t Tape, x: Var<'t>, d: DomainId) -> Var<'t> {
        let store = &self.params;
        let enc = &self.nets(d).style;
        let y = enc
            .convs
            .iter()
            .fold(x, |y, conv| conv.forward(tape, store, y).relu());
        enc.head.forward(tape, store, y.global_avg_pool())
    }

    /// Maps a shared code into `target`'s content space.
    pub fn map_graph<'t>(&self, tape: &'t Tape, c: Code<'t>, target: DomainId) -> Result<Code<'t>> {
        if c.kind != CodeKind::Shared {
            return Err(Error::Tag(format!(
                "the content mapping takes shared codes, got {:?}",
                c.kind
            )));
        }
        let var = match &self.nets(target).mapping {
            Some(stack) => stack.forward(tape, &self.params, c.var),
            None => c.var,
        };
        Ok(Code {
            var,
            kind: CodeKind::DomainSpecific(target),
        })
    }

    pub fn generate_graph<'t>(&self, tape: &'t Tape, h: Code<'t>, s: Var<'t>, d: DomainId) -> Result<Var<'t>> {
        if h.kind != CodeKind::DomainSpecific(d) {
            return Err(Error::Tag(format!(
                "generator {d} needs a code specific to domain {d}, got {:?}",
                h.kind
            )));
        }
        let (hn, sn) = (h.var.shape()[0], s.shape()[0]);
        if hn != sn {
            return Err(Error::InvalidInput(format!(
                "content batch {hn} does not match style batch {sn}"
            )));
        }
        let store = &self.params;
        let g = &self.nets(d).generator;
        let cc = self.config.content_channels();
        let ada = g.mlp[2].forward(
            tape,
            store,
            g.mlp[1]
                .forward(tape, store, g.mlp[0].forward(tape, store, s).relu())
                .relu(),
        );
        let mut y = h.var;
        for (i, block) in g.res.iter().enumerate() {
            let at = |j: usize| ada.narrow((4 * i + j) * cc, cc);
            y = block.forward(tape, store, y, [at(0), at(1), at(2), at(3)]);
        }
        for (conv, norm) in &g.ups {
            let u = conv.forward(tape, store, y.upsample2x()).layer_norm();
            y = norm.forward(tape, store, u).relu();
        }
        Ok(g.out.forward(tape, store, y).tanh())
    }

    /// Patch-level realness scores, `N x 1 x H/2^L x W/2^L`.
    pub fn discriminate_graph<'t>(&self, tape: &'t Tape, x: Var<'t>, d: DomainId) -> Var<'t> {
        let store = &self.params;
        let disc = &self.nets(d).disc;
        let y = disc
            .convs
            .iter()
            .fold(x, |y, conv| conv.forward(tape, store, y).leaky_relu(LEAKY_SLOPE));
        disc.out.forward(tape, store, y)
    }

    // ---- value-level operations ---------------------------------------------------

    pub fn encode_content(&self, x: &ImageBatch, d: DomainId) -> Result<(ContentCode, ContentCode)> {
        self.check_images(x)?;
        let tape = Tape::no_grad();
        let (h, c) = self.content_graph(&tape, tape.constant(x.tensor().clone()), d);
        Ok((
            ContentCode::new(h.var.tensor(), h.kind)?,
            ContentCode::new(c.var.tensor(), c.kind)?,
        ))
    }

    pub fn encode_style(&self, x: &ImageBatch, d: DomainId) -> Result<StyleCode> {
        self.check_images(x)?;
        let tape = Tape::no_grad();
        let s = self.style_graph(&tape, tape.constant(x.tensor().clone()), d);
        StyleCode::new(s.tensor())
    }

    pub fn map_content(&self, c: &ContentCode, target: DomainId) -> Result<ContentCode> {
        self.check_content(c.tensor())?;
        let tape = Tape::no_grad();
        let code = Code {
            var: tape.constant(c.tensor().clone()),
            kind: c.kind(),
        };
        let out = self.map_graph(&tape, code, target)?;
        ContentCode::new(out.var.tensor(), out.kind)
    }

    pub fn generate(&self, h: &ContentCode, s: &StyleCode, d: DomainId) -> Result<ImageBatch> {
        self.check_content(h.tensor())?;
        self.check_style(s)?;
        let tape = Tape::no_grad();
        let code = Code {
            var: tape.constant(h.tensor().clone()),
            kind: h.kind(),
        };
        let x = self.generate_graph(&tape, code, tape.constant(s.tensor().clone()), d)?;
        ImageBatch::new(x.tensor())
    }

    pub fn discriminate(&self, x: &ImageBatch, d: DomainId) -> Result<Tensor> {
        self.check_images(x)?;
        let tape = Tape::no_grad();
        let scores = self.discriminate_graph(&tape, tape.constant(x.tensor().clone()), d);
        let t = scores.tensor();
        if !t.all_finite() {
            return Err(Error::NonFinite("discriminator scores".into()));
        }
        Ok(t)
    }

    /// Content of `x_src` rendered with the style of `x_style`, in domain `dst`.
    pub fn translate(&self, x_src: &ImageBatch, x_style: &ImageBatch, src: DomainId, dst: DomainId) -> Result<ImageBatch> {
        let (_, c) = self.encode_content(x_src, src)?;
        let s = self.encode_style(x_style, dst)?;
        self.translate_with_style(&c, &s, dst)
    }

    /// Maps a shared code into `dst` and renders it with an explicit style.
    pub fn translate_with_style(&self, c: &ContentCode, s: &StyleCode, dst: DomainId) -> Result<ImageBatch> {
        let h = self.map_content(c, dst)?;
        self.generate(&h, s, dst)
    }

    /// `batch` i.i.d. standard-normal style vectors from a seeded stream.
    pub fn sample_style(&self, batch: usize, seed: u64) -> Result<StyleCode> {
        sample_style(batch, self.config.style_dim, seed)
    }
}

/// Seeded standard-normal style codes.
pub fn sample_style(batch: usize, style_dim: usize, seed: u64) -> Result<StyleCode> {
    if batch == 0 {
        return Err(Error::InvalidInput("style batch must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..batch * style_dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    StyleCode::new(Tensor::new(vec![batch, style_dim], data)?)
}
