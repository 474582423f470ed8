//! The bidirectional training step and the training loop.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{lsgan_d, lsgan_g, Tape, Var};
use crate::checkpoint;
use crate::data::ImagePool;
use crate::error::{Error, Result};
use crate::losses::{LossComponents, LossReport, LossWeights};
use crate::model::{sample_style, CodeKind, ContentCode, DomainId, ImageBatch, Model, ModelConfig, StyleCode};
use crate::optim::{Adam, AdamConfig};
use crate::params::ComponentSet;
use crate::seeding::{derive_seed, STREAM_STYLE_PRIOR};

pub const METRICS_FILE: &str = "metrics.log";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Index of the last step to run (steps are numbered from 1).
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weight_decay: f64,
    /// 0 disables periodic checkpoints; the final state is always written.
    pub checkpoint_every: u64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Re-encode translated images from a detached copy in the
    /// content-consistency term.
    pub detach_dic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 1,
            learning_rate: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            weight_decay: 1e-4,
            checkpoint_every: 0,
            seed: 0,
            loss_weights: LossWeights::default(),
            detach_dic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("train.steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "train.learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        for (k, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("train.{k} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("train.weight_decay must be finite and >= 0".into()));
        }
        self.loss_weights.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate as f32,
            beta1: self.adam_beta1 as f32,
            beta2: self.adam_beta2 as f32,
            weight_decay: self.weight_decay as f32,
        }
    }
}

/// Model parameters plus both optimizers and the step counter.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub model: Model,
    pub d_opt: Adam,
    pub g_opt: Adam,
    pub step: u64,
}

impl ModelState {
    pub fn new(config: ModelConfig, adam: AdamConfig) -> Result<Self> {
        let model = Model::new(config)?;
        Ok(Self::from_model(model, adam))
    }

    pub fn from_model(model: Model, adam: AdamConfig) -> Self {
        let d_opt = Adam::new(adam, ComponentSet::discriminators(), model.params());
        let g_opt = Adam::new(adam, ComponentSet::generators(), model.params());
        Self {
            model,
            d_opt,
            g_opt,
            step: 0,
        }
    }

    pub fn set_adam(&mut self, adam: AdamConfig) {
        self.d_opt.set_config(adam);
        self.g_opt.set_config(adam);
    }
}

/// The Gaussian style codes used for the cross-domain generations of a step.
pub fn prior_styles(style_dim: usize, batch: usize, seed: u64, step: u64) -> Result<(StyleCode, StyleCode)> {
    let a = sample_style(batch, style_dim, derive_seed(seed, &[STREAM_STYLE_PRIOR, step, 0]))?;
    let b = sample_style(batch, style_dim, derive_seed(seed, &[STREAM_STYLE_PRIOR, step, 1]))?;
    Ok((a, b))
}

/// Generator-side graph of one step, for both directions.
struct Graph<'t> {
    h_a: Var<'t>,
    h_b: Var<'t>,
    c_a: Var<'t>,
    c_b: Var<'t>,
    c_aa: Var<'t>,
    c_bb: Var<'t>,
    c_ab: Var<'t>,
    c_ba: Var<'t>,
    s_a_enc: Var<'t>,
    s_b_enc: Var<'t>,
    s_a_prior: Var<'t>,
    s_b_prior: Var<'t>,
    x_a: Var<'t>,
    x_b: Var<'t>,
    x_ab: Var<'t>,
    x_ba: Var<'t>,
    x_aa: Var<'t>,
    x_bb: Var<'t>,
    x_aba: Var<'t>,
    x_bab: Var<'t>,
    c_ab_re: Var<'t>,
    c_ba_re: Var<'t>,
    s_b_rec: Var<'t>,
    s_a_rec: Var<'t>,
}

struct Inputs<'a> {
    x_a: &'a ImageBatch,
    x_b: &'a ImageBatch,
    s_a_prior: &'a StyleCode,
    s_b_prior: &'a StyleCode,
}

fn build_graph<'t>(model: &Model, tape: &'t Tape, inp: &Inputs<'_>, detach_dic: bool) -> Result<Graph<'t>> {
    use DomainId::{A, B};
    let x_a = tape.constant(inp.x_a.tensor().clone());
    let x_b = tape.constant(inp.x_b.tensor().clone());
    let s_a_prior = tape.constant(inp.s_a_prior.tensor().clone());
    let s_b_prior = tape.constant(inp.s_b_prior.tensor().clone());

    let (h_a, c_a) = model.content_graph(tape, x_a, A);
    let (h_b, c_b) = model.content_graph(tape, x_b, B);
    let s_a_enc = model.style_graph(tape, x_a, A);
    let s_b_enc = model.style_graph(tape, x_b, B);

    let c_aa = model.map_graph(tape, c_a, A)?;
    let c_bb = model.map_graph(tape, c_b, B)?;
    let c_ab = model.map_graph(tape, c_a, B)?;
    let c_ba = model.map_graph(tape, c_b, A)?;

    let x_aa = model.generate_graph(tape, c_aa, s_a_enc, A)?;
    let x_bb = model.generate_graph(tape, c_bb, s_b_enc, B)?;
    let x_ab = model.generate_graph(tape, c_ab, s_b_prior, B)?;
    let x_ba = model.generate_graph(tape, c_ba, s_a_prior, A)?;

    let (_, c_ab_re) = model.content_graph(tape, x_ab, B);
    let (_, c_ba_re) = model.content_graph(tape, x_ba, A);
    let s_b_rec = model.style_graph(tape, x_ab, B);
    let s_a_rec = model.style_graph(tape, x_ba, A);

    let x_aba = model.generate_graph(tape, model.map_graph(tape, c_ab_re, A)?, s_a_enc, A)?;
    let x_bab = model.generate_graph(tape, model.map_graph(tape, c_ba_re, B)?, s_b_enc, B)?;

    // With detaching, the content-consistency term sees a re-encoding of a
    // constant copy of the translation, so it cannot reach the generators.
    let (c_ab_re, c_ba_re) = if detach_dic {
        let (_, ab) = model.content_graph(tape, tape.constant(x_ab.tensor()), B);
        let (_, ba) = model.content_graph(tape, tape.constant(x_ba.tensor()), A);
        (ab, ba)
    } else {
        (c_ab_re, c_ba_re)
    };

    Ok(Graph {
        h_a: h_a.var,
        h_b: h_b.var,
        c_a: c_a.var,
        c_b: c_b.var,
        c_aa: c_aa.var,
        c_bb: c_bb.var,
        c_ab: c_ab.var,
        c_ba: c_ba.var,
        s_a_enc,
        s_b_enc,
        s_a_prior,
        s_b_prior,
        x_a,
        x_b,
        x_ab,
        x_ba,
        x_aa,
        x_bb,
        x_aba,
        x_bab,
        c_ab_re: c_ab_re.var,
        c_ba_re: c_ba_re.var,
        s_b_rec,
        s_a_rec,
    })
}

/// Every intermediate of one forward pass through both directions.
#[derive(Clone, Debug)]
pub struct StepOutputs {
    pub h_a: ContentCode,
    pub h_b: ContentCode,
    pub c_a: ContentCode,
    pub c_b: ContentCode,
    pub c_aa: ContentCode,
    pub c_bb: ContentCode,
    pub c_ab: ContentCode,
    pub c_ba: ContentCode,
    pub s_a_enc: StyleCode,
    pub s_b_enc: StyleCode,
    pub s_a_prior: StyleCode,
    pub s_b_prior: StyleCode,
    pub x_ab: ImageBatch,
    pub x_ba: ImageBatch,
    pub x_aa: ImageBatch,
    pub x_bb: ImageBatch,
    pub x_aba: ImageBatch,
    pub x_bab: ImageBatch,
    /// Shared codes of the translated images, re-encoded in their new domain.
    pub c_ab_re: ContentCode,
    pub c_ba_re: ContentCode,
    /// Styles recovered from the translated images.
    pub s_b_rec: StyleCode,
    pub s_a_rec: StyleCode,
}

/// The name of the first non-finite intermediate on the tape, if any.
fn first_non_finite(g: &Graph<'_>) -> Option<&'static str> {
    let fields: [(&str, Var<'_>); 20] = [
        ("h_a", g.h_a),
        ("h_b", g.h_b),
        ("c_a", g.c_a),
        ("c_b", g.c_b),
        ("c_aa", g.c_aa),
        ("c_bb", g.c_bb),
        ("c_ab", g.c_ab),
        ("c_ba", g.c_ba),
        ("s_a_enc", g.s_a_enc),
        ("s_b_enc", g.s_b_enc),
        ("x_ab", g.x_ab),
        ("x_ba", g.x_ba),
        ("x_aa", g.x_aa),
        ("x_bb", g.x_bb),
        ("x_aba", g.x_aba),
        ("x_bab", g.x_bab),
        ("c_ab_re", g.c_ab_re),
        ("c_ba_re", g.c_ba_re),
        ("s_b_rec", g.s_b_rec),
        ("s_a_rec", g.s_a_rec),
    ];
    fields
        .into_iter()
        .find(|(_, v)| !v.value().all_finite())
        .map(|(k, _)| k)
}

fn check_batches(model: &Model, x_a: &ImageBatch, x_b: &ImageBatch) -> Result<()> {
    model.check_images(x_a)?;
    model.check_images(x_b)?;
    if x_a.batch() != x_b.batch() {
        return Err(Error::InvalidInput(format!(
            "batch sizes differ: {} in A, {} in B",
            x_a.batch(),
            x_b.batch()
        )));
    }
    Ok(())
}

/// Runs the full pipeline for both directions in inference mode.
pub fn forward_all(
    model: &Model,
    x_a: &ImageBatch,
    x_b: &ImageBatch,
    s_a_prior: &StyleCode,
    s_b_prior: &StyleCode,
) -> Result<StepOutputs> {
    check_batches(model, x_a, x_b)?;
    let tape = Tape::no_grad();
    let inp = Inputs {
        x_a,
        x_b,
        s_a_prior,
        s_b_prior,
    };
    let g = build_graph(model, &tape, &inp, false)?;
    if let Some(field) = first_non_finite(&g) {
        return Err(Error::NonFinite(format!("forward pass produced non-finite {field}")));
    }
    let spec = |v: Var<'_>, d| ContentCode::new(v.tensor(), CodeKind::DomainSpecific(d));
    let shared = |v: Var<'_>| ContentCode::new(v.tensor(), CodeKind::Shared);
    let img = |v: Var<'_>| ImageBatch::new(v.tensor());
    let sty = |v: Var<'_>| StyleCode::new(v.tensor());
    use DomainId::{A, B};
    Ok(StepOutputs {
        h_a: spec(g.h_a, A)?,
        h_b: spec(g.h_b, B)?,
        c_a: shared(g.c_a)?,
        c_b: shared(g.c_b)?,
        c_aa: spec(g.c_aa, A)?,
        c_bb: spec(g.c_bb, B)?,
        c_ab: spec(g.c_ab, B)?,
        c_ba: spec(g.c_ba, A)?,
        s_a_enc: sty(g.s_a_enc)?,
        s_b_enc: sty(g.s_b_enc)?,
        s_a_prior: sty(g.s_a_prior)?,
        s_b_prior: sty(g.s_b_prior)?,
        x_ab: img(g.x_ab)?,
        x_ba: img(g.x_ba)?,
        x_aa: img(g.x_aa)?,
        x_bb: img(g.x_bb)?,
        x_aba: img(g.x_aba)?,
        x_bab: img(g.x_bab)?,
        c_ab_re: shared(g.c_ab_re)?,
        c_ba_re: shared(g.c_ba_re)?,
        s_b_rec: sty(g.s_b_rec)?,
        s_a_rec: sty(g.s_a_rec)?,
    })
}

fn scalar(v: Var<'_>) -> f64 {
    f64::from(v.value().item())
}

/// Discriminator update on constant copies of the translations. Returns the
/// two discriminator losses measured before the update.
fn discriminator_phase(state: &mut ModelState, g: &Graph<'_>, w: &LossWeights) -> Result<(f64, f64)> {
    use DomainId::{A, B};
    let tape = Tape::with_trainable(ComponentSet::discriminators());
    let m = &state.model;
    let adv = |real: Var<'_>, fake: Var<'_>, d| {
        let real = m.discriminate_graph(&tape, tape.constant(real.tensor()), d);
        let fake = m.discriminate_graph(&tape, tape.constant(fake.tensor()), d);
        lsgan_d(real, fake)
    };
    let la = adv(g.x_a, g.x_ba, A);
    let lb = adv(g.x_b, g.x_ab, B);
    let (va, vb) = (scalar(la), scalar(lb));
    if w.adv != 0.0 {
        let grads = tape.backward(&[(la, w.adv as f32), (lb, w.adv as f32)]);
        state.d_opt.step(state.model.params_mut(), &grads)?;
    }
    Ok((va, vb))
}

/// Generator update on the graph `g` built on `g_tape`. The discriminator
/// parameters enter the tape only here, so they carry their current values.
fn generator_phase<'t>(
    state: &mut ModelState,
    g_tape: &'t Tape,
    g: Graph<'t>,
    w: &LossWeights,
    step: u64,
    d_adv: (f64, f64),
) -> Result<LossReport> {
    use DomainId::{A, B};
    let m = &state.model;
    let g_adv_a = lsgan_g(m.discriminate_graph(g_tape, g.x_ba, A));
    let g_adv_b = lsgan_g(m.discriminate_graph(g_tape, g.x_ab, B));
    let terms = [
        (g.x_aba.l1_mean(g.x_a), w.cc),
        (g.x_bab.l1_mean(g.x_b), w.cc),
        (g.x_aa.l1_mean(g.x_a), w.x),
        (g.x_bb.l1_mean(g.x_b), w.x),
        (g.h_a.l1_mean(g.c_aa), w.dsc),
        (g.h_b.l1_mean(g.c_bb), w.dsc),
        (g.c_ab_re.l1_mean(g.c_a), w.dic),
        (g.c_ba_re.l1_mean(g.c_b), w.dic),
        (g.s_a_rec.l1_mean(g.s_a_prior), w.s),
        (g.s_b_rec.l1_mean(g.s_b_prior), w.s),
        (g_adv_a, w.adv),
        (g_adv_b, w.adv),
    ];
    let mut values = [0.0; 14];
    for (slot, (v, _)) in values.iter_mut().zip(&terms) {
        *slot = scalar(*v);
    }
    values[12] = d_adv.0;
    values[13] = d_adv.1;
    let components = LossComponents::from_array(values);
    let report = LossReport::new(step, components, w).map_err(|e| Error::NonFinite(format!("step {step}: {e}")))?;

    let roots: Vec<(Var<'_>, f32)> = terms
        .iter()
        .filter(|(_, wt)| *wt != 0.0)
        .map(|&(v, wt)| (v, wt as f32))
        .collect();
    let grads = g_tape.backward(&roots);
    state.g_opt.step(state.model.params_mut(), &grads)?;
    Ok(report)
}

fn step_graph<'t>(state: &ModelState, tape: &'t Tape, x_a: &ImageBatch, x_b: &ImageBatch, cfg: &TrainConfig, step: u64) -> Result<Graph<'t>> {
    check_batches(&state.model, x_a, x_b)?;
    let (s_a_prior, s_b_prior) = prior_styles(state.model.config().style_dim, x_a.batch(), cfg.seed, step)?;
    let inp = Inputs {
        x_a,
        x_b,
        s_a_prior: &s_a_prior,
        s_b_prior: &s_b_prior,
    };
    let g = build_graph(&state.model, tape, &inp, cfg.detach_dic)?;
    if let Some(field) = first_non_finite(&g) {
        return Err(Error::NonFinite(format!("step {step}: non-finite {field}")));
    }
    Ok(g)
}

/// One discriminator update followed by one generator update.
///
/// The discriminators see the translations produced by the current
/// generators; the generator objective is then evaluated against the
/// freshly updated discriminators.
pub fn train_step(
    state: &mut ModelState,
    x_a: &ImageBatch,
    x_b: &ImageBatch,
    cfg: &TrainConfig,
    step: u64,
) -> Result<LossReport> {
    let g_tape = Tape::with_trainable(ComponentSet::generators());
    let g = step_graph(state, &g_tape, x_a, x_b, cfg, step)?;
    let d_adv = discriminator_phase(state, &g, &cfg.loss_weights)?;
    let report = generator_phase(state, &g_tape, g, &cfg.loss_weights, step, d_adv)?;
    state.step = step;
    Ok(report)
}

/// Only the discriminator half of step `step`. Returns the discriminator
/// losses for A and B before the update. The step counter is not advanced.
pub fn discriminator_step(state: &mut ModelState, x_a: &ImageBatch, x_b: &ImageBatch, cfg: &TrainConfig, step: u64) -> Result<(f64, f64)> {
    let tape = Tape::no_grad();
    let g = step_graph(state, &tape, x_a, x_b, cfg, step)?;
    discriminator_phase(state, &g, &cfg.loss_weights)
}

/// Only the generator half of step `step`, against the current
/// discriminators. The reported discriminator losses are zero. The step
/// counter is not advanced.
pub fn generator_step(state: &mut ModelState, x_a: &ImageBatch, x_b: &ImageBatch, cfg: &TrainConfig, step: u64) -> Result<LossReport> {
    let g_tape = Tape::with_trainable(ComponentSet::generators());
    let g = step_graph(state, &g_tape, x_a, x_b, cfg, step)?;
    generator_phase(state, &g_tape, g, &cfg.loss_weights, step, (0.0, 0.0))
}

/// Where `fit` writes its outputs.
#[derive(Clone, Debug)]
pub struct RunDir(PathBuf);

impl RunDir {
    pub fn new(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self(path))
    }

    pub fn path(&self) -> &Path {
        &self.0
    }

    pub fn metrics(&self) -> PathBuf {
        self.0.join(METRICS_FILE)
    }

    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.0.join(format!("step_{step:06}.ckpt"))
    }

    pub fn latest(&self) -> PathBuf {
        self.0.join(LATEST_CHECKPOINT)
    }
}

/// Keeps metrics lines up to and including `step`, dropping anything later
/// (left behind by a run that went further than the checkpoint).
fn truncate_metrics(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let report = LossReport::parse_log_line(&line)?;
        if report.step <= step {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}

/// Trains from `state.step + 1` through `cfg.steps`.
///
/// Batches are a pure function of `(seed, step)`, so resuming from a
/// checkpoint replays exactly the batches an uninterrupted run would see.
/// With a run directory, one metrics line is appended per step, numbered
/// checkpoints are written every `checkpoint_every` steps and the final
/// state is saved as `latest.ckpt`.
pub fn fit(
    state: &mut ModelState,
    pool_a: &ImagePool,
    pool_b: &ImagePool,
    cfg: &TrainConfig,
    out: Option<&RunDir>,
) -> Result<Vec<LossReport>> {
    cfg.validate()?;
    if pool_a.is_empty() || pool_b.is_empty() {
        return Err(Error::Dataset("both training pools must be nonempty".into()));
    }
    state.set_adam(cfg.adam());
    let mut log = match out {
        Some(dir) => {
            truncate_metrics(&dir.metrics(), state.step)?;
            let path = dir.metrics();
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            Some((f, path))
        }
        None => None,
    };
    let mut reports = Vec::new();
    for step in state.step + 1..=cfg.steps {
        let x_a = pool_a.batch(cfg.batch_size, step, cfg.seed)?;
        let x_b = pool_b.batch(cfg.batch_size, step, cfg.seed)?;
        let report = match train_step(state, &x_a, &x_b, cfg, step) {
            Ok(r) => r,
            Err(e) => {
                if let Some(dir) = out {
                    let dump = dir.path().join(format!("failed_step_{step:06}.ckpt"));
                    if checkpoint::save(&dump, state, Some(cfg)).is_ok() {
                        log::error!("state before the failed step saved to {}", dump.display());
                    }
                }
                return Err(e);
            }
        };
        if let Some((f, path)) = log.as_mut() {
            writeln!(f, "{}", report.to_log_line()).map_err(|e| Error::io(&*path, e))?;
        }
        if step % 100 == 0 {
            log::info!("{}", report.to_log_line());
        }
        if let Some(dir) = out {
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                checkpoint::save(&dir.checkpoint(step), state, Some(cfg))?;
            }
        }
        reports.push(report);
    }
    if let Some((f, path)) = log.as_mut() {
        f.flush().map_err(|e| Error::io(&*path, e))?;
    }
    if let Some(dir) = out {
        checkpoint::save(&dir.latest(), state, Some(cfg))?;
    }
    Ok(reports)
}

/// Mean of `values[range]`, for moving-average summaries of a loss curve.
pub fn window_mean(values: &[f64], start: usize, len: usize) -> Option<f64> {
    let w = values.get(start..start.checked_add(len)?)?;
    (!w.is_empty()).then(|| w.iter().sum::<f64>() / w.len() as f64)
}

/// Reads a metrics log back.
pub fn read_metrics(path: &Path) -> Result<Vec<LossReport>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().map(LossReport::parse_log_line).collect()
}
