//! Training objectives.
//!
//! The numeric kernels are generic over the float type so the same code runs
//! in `f32` on the tape and in `f64` under finite-difference checks. The
//! typed wrappers (`loss_dsc`, `loss_style`, ...) add the shape and tag checks
//! each objective needs before delegating to a kernel.

use std::fmt::Write as _;

use ndarray::{ArrayD, ArrayViewD, Zip};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CodeKind, ContentCode, ImageBatch, StyleCode};

fn check_same_shape<T>(a: &ArrayViewD<T>, b: &ArrayViewD<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("loss over an empty array".into()));
    }
    Ok(())
}

fn count<T: Float>(n: usize) -> T {
    T::from(n).expect("element count representable")
}

/// Mean absolute difference, the `||.||_1` primitive of every reconstruction
/// objective. Normalized by element count.
pub fn l1_mean<T: Float>(a: &ArrayViewD<T>, b: &ArrayViewD<T>) -> Result<T> {
    check_same_shape(a, b)?;
    let mut acc = T::zero();
    Zip::from(a).and(b).for_each(|&x, &y| acc = acc + (x - y).abs());
    Ok(acc / count(a.len()))
}

/// `d l1_mean / d a`; the gradient for `b` is its negation. The subgradient
/// at `a == b` is taken as zero.
pub fn l1_mean_grad<T: Float>(a: &ArrayViewD<T>, b: &ArrayViewD<T>) -> Result<ArrayD<T>> {
    check_same_shape(a, b)?;
    let inv = T::one() / count(a.len());
    Ok(Zip::from(a).and(b).map_collect(|&x, &y| {
        let d = x - y;
        if d > T::zero() {
            inv
        } else if d < T::zero() {
            -inv
        } else {
            T::zero()
        }
    }))
}

fn half_mean_sq_to<T: Float>(x: &ArrayViewD<T>, target: T) -> T {
    let half = T::from(0.5).expect("representable");
    let s = x.iter().fold(T::zero(), |acc, &v| acc + (v - target) * (v - target));
    half * s / count(x.len().max(1))
}

fn half_mean_sq_grad<T: Float>(x: &ArrayViewD<T>, target: T) -> ArrayD<T> {
    let inv = T::one() / count(x.len().max(1));
    x.mapv(|v| (v - target) * inv)
}

/// Least-squares discriminator objective:
/// `0.5 * E[(D(real) - 1)^2] + 0.5 * E[D(fake)^2]`.
pub fn lsgan_d<T: Float>(real: &ArrayViewD<T>, fake: &ArrayViewD<T>) -> T {
    half_mean_sq_to(real, T::one()) + half_mean_sq_to(fake, T::zero())
}

pub fn lsgan_d_grad<T: Float>(real: &ArrayViewD<T>, fake: &ArrayViewD<T>) -> (ArrayD<T>, ArrayD<T>) {
    (
        half_mean_sq_grad(real, T::one()),
        half_mean_sq_grad(fake, T::zero()),
    )
}

/// Least-squares generator objective: `0.5 * E[(D(fake) - 1)^2]`.
pub fn lsgan_g<T: Float>(fake: &ArrayViewD<T>) -> T {
    half_mean_sq_to(fake, T::one())
}

pub fn lsgan_g_grad<T: Float>(fake: &ArrayViewD<T>) -> ArrayD<T> {
    half_mean_sq_grad(fake, T::one())
}

/// The individual objectives, for code that iterates over all of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossTerm {
    DomainSpecificContent,
    Style,
    DomainInvariantContent,
    ImageReconstruction,
    CycleConsistency,
    AdversarialDiscriminator,
    AdversarialGenerator,
}

impl LossTerm {
    pub const ALL: [LossTerm; 7] = [
        LossTerm::DomainSpecificContent,
        LossTerm::Style,
        LossTerm::DomainInvariantContent,
        LossTerm::ImageReconstruction,
        LossTerm::CycleConsistency,
        LossTerm::AdversarialDiscriminator,
        LossTerm::AdversarialGenerator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::DomainSpecificContent => "dsc",
            LossTerm::Style => "style",
            LossTerm::DomainInvariantContent => "dic",
            LossTerm::ImageReconstruction => "image_recon",
            LossTerm::CycleConsistency => "cycle",
            LossTerm::AdversarialDiscriminator => "adv_d",
            LossTerm::AdversarialGenerator => "adv_g",
        }
    }

    /// Number of array arguments.
    pub fn arity(self) -> usize {
        match self {
            LossTerm::AdversarialGenerator => 1,
            _ => 2,
        }
    }

    fn check_arity<T>(self, inputs: &[ArrayViewD<T>]) -> Result<()> {
        if inputs.len() != self.arity() {
            return Err(Error::InvalidInput(format!(
                "{} takes {} arrays, got {}",
                self.name(),
                self.arity(),
                inputs.len()
            )));
        }
        Ok(())
    }

    pub fn value<T: Float>(self, inputs: &[ArrayViewD<T>]) -> Result<T> {
        self.check_arity(inputs)?;
        match self {
            LossTerm::AdversarialDiscriminator => Ok(lsgan_d(&inputs[0], &inputs[1])),
            LossTerm::AdversarialGenerator => Ok(lsgan_g(&inputs[0])),
            _ => l1_mean(&inputs[0], &inputs[1]),
        }
    }

    /// Analytic gradient with respect to each input array.
    pub fn gradient<T: Float>(self, inputs: &[ArrayViewD<T>]) -> Result<Vec<ArrayD<T>>> {
        self.check_arity(inputs)?;
        match self {
            LossTerm::AdversarialDiscriminator => {
                let (r, f) = lsgan_d_grad(&inputs[0], &inputs[1]);
                Ok(vec![r, f])
            }
            LossTerm::AdversarialGenerator => Ok(vec![lsgan_g_grad(&inputs[0])]),
            _ => {
                let ga = l1_mean_grad(&inputs[0], &inputs[1])?;
                let gb = ga.mapv(|v| -v);
                Ok(vec![ga, gb])
            }
        }
    }
}

fn require_domain_specific(code: &ContentCode, what: &str) -> Result<()> {
    match code.kind() {
        CodeKind::DomainSpecific(_) => Ok(()),
        CodeKind::Shared => Err(Error::Tag(format!("{what} must be a domain-specific code"))),
    }
}

fn require_shared(code: &ContentCode, what: &str) -> Result<()> {
    match code.kind() {
        CodeKind::Shared => Ok(()),
        CodeKind::DomainSpecific(d) => Err(Error::Tag(format!(
            "{what} must be a shared code, got one specific to domain {d}"
        ))),
    }
}

fn l1_tensors(a: &crate::tensor::Tensor, b: &crate::tensor::Tensor) -> Result<f64> {
    l1_mean(&a.to_f64_array().view(), &b.to_f64_array().view())
}

/// Domain-specific content reconstruction: `|h - Phi(E^c(x))|`.
pub fn loss_dsc(h: &ContentCode, mapped: &ContentCode) -> Result<f64> {
    require_domain_specific(h, "h")?;
    require_domain_specific(mapped, "mapped code")?;
    if h.kind() != mapped.kind() {
        return Err(Error::Tag(format!(
            "dsc loss compares codes of different domains ({:?} vs {:?})",
            h.kind(),
            mapped.kind()
        )));
    }
    l1_tensors(h.tensor(), mapped.tensor())
}

/// Style reconstruction: `|E^s(G(c, s)) - s|` for a prior-sampled `s`.
pub fn loss_style(s_sampled: &StyleCode, s_recovered: &StyleCode) -> Result<f64> {
    l1_tensors(s_sampled.tensor(), s_recovered.tensor())
}

/// Domain-invariant content: `|E^c(x_translated) - E^c(x)|`.
pub fn loss_dic(c_src: &ContentCode, c_of_translated: &ContentCode) -> Result<f64> {
    require_shared(c_src, "source content")?;
    require_shared(c_of_translated, "re-encoded content")?;
    l1_tensors(c_src.tensor(), c_of_translated.tensor())
}

/// Within-domain image reconstruction.
pub fn loss_image_recon(x: &ImageBatch, x_recon: &ImageBatch) -> Result<f64> {
    l1_tensors(x.tensor(), x_recon.tensor())
}

/// Cycle consistency: `|x_{A->B->A} - x_A|`.
pub fn loss_cycle(x: &ImageBatch, x_cycled: &ImageBatch) -> Result<f64> {
    l1_tensors(x.tensor(), x_cycled.tensor())
}

fn check_scores(scores: &ArrayViewD<f64>, what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::InvalidInput(format!("{what} score map is empty")));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(())
}

pub fn loss_adv_d(scores_real: &ArrayViewD<f64>, scores_fake: &ArrayViewD<f64>) -> Result<f64> {
    check_scores(scores_real, "real")?;
    check_scores(scores_fake, "fake")?;
    Ok(lsgan_d(scores_real, scores_fake))
}

pub fn loss_adv_g(scores_fake: &ArrayViewD<f64>) -> Result<f64> {
    check_scores(scores_fake, "fake")?;
    Ok(lsgan_g(scores_fake))
}

/// Relative weights of the objectives in the generator and discriminator totals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cc: f64,
    pub x: f64,
    pub dsc: f64,
    pub dic: f64,
    pub s: f64,
    pub adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cc: 10.0,
            x: 10.0,
            dsc: 1.0,
            dic: 1.0,
            s: 1.0,
            adv: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("cc", self.cc),
            ("x", self.x),
            ("dsc", self.dsc),
            ("dic", self.dic),
            ("s", self.s),
            ("adv", self.adv),
        ]
    }
}

/// Per-direction values of every objective for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub cc_a: f64,
    pub cc_b: f64,
    pub x_a: f64,
    pub x_b: f64,
    pub dsc_a: f64,
    pub dsc_b: f64,
    pub dic_a: f64,
    pub dic_b: f64,
    pub s_a: f64,
    pub s_b: f64,
    pub g_adv_a: f64,
    pub g_adv_b: f64,
    pub d_adv_a: f64,
    pub d_adv_b: f64,
}

impl LossComponents {
    pub const KEYS: [&'static str; 14] = [
        "cc_a", "cc_b", "x_a", "x_b", "dsc_a", "dsc_b", "dic_a", "dic_b", "s_a", "s_b",
        "g_adv_a", "g_adv_b", "d_adv_a", "d_adv_b",
    ];

    pub fn to_array(&self) -> [f64; 14] {
        [
            self.cc_a,
            self.cc_b,
            self.x_a,
            self.x_b,
            self.dsc_a,
            self.dsc_b,
            self.dic_a,
            self.dic_b,
            self.s_a,
            self.s_b,
            self.g_adv_a,
            self.g_adv_b,
            self.d_adv_a,
            self.d_adv_b,
        ]
    }

    pub fn from_array(v: [f64; 14]) -> Self {
        Self {
            cc_a: v[0],
            cc_b: v[1],
            x_a: v[2],
            x_b: v[3],
            dsc_a: v[4],
            dsc_b: v[5],
            dic_a: v[6],
            dic_b: v[7],
            s_a: v[8],
            s_b: v[9],
            g_adv_a: v[10],
            g_adv_b: v[11],
            d_adv_a: v[12],
            d_adv_b: v[13],
        }
    }

    pub fn cycle(&self) -> f64 {
        self.cc_a + self.cc_b
    }

    pub fn recon(&self) -> f64 {
        self.x_a + self.x_b
    }

    pub fn dsc(&self) -> f64 {
        self.dsc_a + self.dsc_b
    }
}

/// Generator and discriminator totals. Each objective sums its A and B
/// directions before weighting.
pub fn total_losses(c: &LossComponents, w: &LossWeights) -> Result<(f64, f64)> {
    w.validate()?;
    if let Some((k, v)) = LossComponents::KEYS
        .iter()
        .zip(c.to_array())
        .find(|(_, v)| !v.is_finite())
    {
        return Err(Error::NonFinite(format!("loss component {k} = {v}")));
    }
    let g = w.cc * (c.cc_a + c.cc_b)
        + w.x * (c.x_a + c.x_b)
        + w.dsc * (c.dsc_a + c.dsc_b)
        + w.dic * (c.dic_a + c.dic_b)
        + w.s * (c.s_a + c.s_b)
        + w.adv * (c.g_adv_a + c.g_adv_b);
    let d = w.adv * (c.d_adv_a + c.d_adv_b);
    Ok((g, d))
}

/// Gradients of `(L_G_total, L_D)` with respect to each component.
pub fn total_losses_grad(w: &LossWeights) -> ([f64; 14], [f64; 14]) {
    let g = [
        w.cc, w.cc, w.x, w.x, w.dsc, w.dsc, w.dic, w.dic, w.s, w.s, w.adv, w.adv, 0.0, 0.0,
    ];
    let mut d = [0.0; 14];
    d[12] = w.adv;
    d[13] = w.adv;
    (g, d)
}

/// One step's worth of losses, as written to the metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub components: LossComponents,
    pub g_total: f64,
    pub d_total: f64,
}

impl LossReport {
    pub fn new(step: u64, components: LossComponents, weights: &LossWeights) -> Result<Self> {
        let (g_total, d_total) = total_losses(&components, weights)?;
        Ok(Self {
            step,
            components,
            g_total,
            d_total,
        })
    }

    /// `step=<n> cc_a=<v> ... g_total=<v> d_total=<v>` in a fixed key order.
    /// Values use the shortest representation that parses back exactly.
    pub fn to_log_line(&self) -> String {
        let mut s = format!("step={}", self.step);
        for (k, v) in LossComponents::KEYS.iter().zip(self.components.to_array()) {
            let _ = write!(s, " {k}={v}");
        }
        let _ = write!(s, " g_total={} d_total={}", self.g_total, self.d_total);
        s
    }

    pub fn parse_log_line(line: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("malformed metrics line: {line:?}"));
        let mut fields = line.split_whitespace().map(|f| f.split_once('=').ok_or_else(bad));
        let step = match fields.next() {
            Some(Ok(("step", v))) => v.parse().map_err(|_| bad())?,
            _ => return Err(bad()),
        };
        let mut vals = [0.0; 14];
        for (slot, key) in vals.iter_mut().zip(LossComponents::KEYS) {
            match fields.next() {
                Some(Ok((k, v))) if k == key => *slot = v.parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
        }
        let mut total = |key: &str| match fields.next() {
            Some(Ok((k, v))) if k == key => v.parse::<f64>().map_err(|_| bad()),
            _ => Err(bad()),
        };
        let g_total = total("g_total")?;
        let d_total = total("d_total")?;
        Ok(Self {
            step,
            components: LossComponents::from_array(vals),
            g_total,
            d_total,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DomainId;
    use crate::tensor::Tensor;
    use ndarray::{ArrayD, IxDyn};
    use proptest::prelude::*;

    fn arr(shape: &[usize], v: Vec<f64>) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(shape), v).unwrap()
    }

    fn code(kind: CodeKind, v: f32) -> ContentCode {
        ContentCode::new(Tensor::full(&[1, 2, 2, 2], v), kind).unwrap()
    }

    #[test]
    fn l1_identity_and_offset() {
        let a = arr(&[3, 4], (0..12).map(|i| i as f64 * 0.3 - 1.0).collect());
        assert_eq!(l1_mean(&a.view(), &a.view()).unwrap(), 0.0);
        let b = a.mapv(|v| v + 0.5);
        assert_eq!(l1_mean(&a.view(), &b.view()).unwrap(), 0.5);
    }

    #[test]
    fn l1_rejects_shape_mismatch() {
        let a = arr(&[2, 3], vec![0.0; 6]);
        let b = arr(&[3, 2], vec![0.0; 6]);
        assert!(matches!(l1_mean(&a.view(), &b.view()), Err(Error::Shape { .. })));
    }

    #[test]
    fn lsgan_constants() {
        let ones = arr(&[2, 1, 2, 2], vec![1.0; 8]);
        let zeros = arr(&[2, 1, 2, 2], vec![0.0; 8]);
        let half = arr(&[2, 1, 2, 2], vec![0.5; 8]);
        assert_eq!(lsgan_d(&ones.view(), &zeros.view()), 0.0);
        assert_eq!(lsgan_d(&half.view(), &half.view()), 0.25);
        assert_eq!(lsgan_g(&ones.view()), 0.0);
        assert_eq!(lsgan_g(&half.view()), 0.125);
    }

    #[test]
    fn dsc_checks_tags() {
        let a = CodeKind::DomainSpecific(DomainId::A);
        let b = CodeKind::DomainSpecific(DomainId::B);
        assert_eq!(loss_dsc(&code(a, 0.2), &code(a, 0.2)).unwrap(), 0.0);
        assert_eq!(loss_dsc(&code(a, 0.0), &code(a, 1.0)).unwrap(), 1.0);
        assert!(matches!(loss_dsc(&code(a, 0.0), &code(b, 0.0)), Err(Error::Tag(_))));
        assert!(matches!(
            loss_dsc(&code(CodeKind::Shared, 0.0), &code(a, 0.0)),
            Err(Error::Tag(_))
        ));
    }

    #[test]
    fn dic_checks_tags() {
        let s = CodeKind::Shared;
        assert_eq!(loss_dic(&code(s, 1.0), &code(s, 3.0)).unwrap(), 2.0);
        let a = CodeKind::DomainSpecific(DomainId::A);
        assert!(matches!(loss_dic(&code(a, 0.0), &code(s, 0.0)), Err(Error::Tag(_))));
    }

    #[test]
    fn unit_weights_sum_components() {
        let c = LossComponents {
            cc_a: 0.5,
            cc_b: 0.5,
            x_a: 0.5,
            x_b: 0.5,
            dsc_a: 0.5,
            dsc_b: 0.5,
            dic_a: 0.5,
            dic_b: 0.5,
            s_a: 0.5,
            s_b: 0.5,
            g_adv_a: 0.5,
            g_adv_b: 0.5,
            d_adv_a: 0.25,
            d_adv_b: 0.25,
        };
        let w = LossWeights {
            cc: 1.0,
            x: 1.0,
            dsc: 1.0,
            dic: 1.0,
            s: 1.0,
            adv: 1.0,
        };
        assert_eq!(total_losses(&c, &w).unwrap(), (6.0, 0.5));
        assert_eq!(
            total_losses(&LossComponents::default(), &w).unwrap(),
            (0.0, 0.0)
        );
    }

    #[test]
    fn negative_weight_rejected() {
        let w = LossWeights {
            dic: -1.0,
            ..LossWeights::default()
        };
        assert!(matches!(
            total_losses(&LossComponents::default(), &w),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn log_line_round_trips() {
        let mut c = LossComponents::default();
        c.cc_a = 0.1 + 0.2;
        c.d_adv_b = 1e-30;
        let r = LossReport::new(7, c, &LossWeights::default()).unwrap();
        let line = r.to_log_line();
        assert!(line.starts_with("step=7 cc_a=0.30000000000000004 "));
        assert_eq!(LossReport::parse_log_line(&line).unwrap(), r);
    }

    proptest! {
        #[test]
        fn l1_symmetric_and_nonnegative(v in proptest::collection::vec(-5.0f64..5.0, 12),
                                        u in proptest::collection::vec(-5.0f64..5.0, 12)) {
            let a = arr(&[3, 4], v);
            let b = arr(&[3, 4], u);
            let ab = l1_mean(&a.view(), &b.view()).unwrap();
            let ba = l1_mean(&b.view(), &a.view()).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn totals_are_linear_in_weights(c in proptest::collection::vec(0.0f64..3.0, 14),
                                        w1 in proptest::collection::vec(0.0f64..5.0, 6),
                                        w2 in proptest::collection::vec(0.0f64..5.0, 6)) {
            let comps = LossComponents::from_array(c.try_into().unwrap());
            let mk = |w: &[f64]| LossWeights { cc: w[0], x: w[1], dsc: w[2], dic: w[3], s: w[4], adv: w[5] };
            let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
            let (g1, d1) = total_losses(&comps, &mk(&w1)).unwrap();
            let (g2, d2) = total_losses(&comps, &mk(&w2)).unwrap();
            let (gs, ds) = total_losses(&comps, &mk(&sum)).unwrap();
            prop_assert!((gs - (g1 + g2)).abs() <= 1e-12 * (1.0 + gs.abs()));
            prop_assert!((ds - (d1 + d2)).abs() <= 1e-12 * (1.0 + ds.abs()));
        }
    }
}
