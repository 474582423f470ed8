//! Adam with L2 weight decay, restricted to one partition of the parameters.

use crate::autodiff::Grads;
use crate::error::{Error, Result};
use crate::params::{ComponentSet, ParamId, ParamStore};
use crate::tensor::Tensor;

const ADAM_EPS: f32 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub weight_decay: f32,
}

/// Moment estimates for the parameters in `owns`. Gradients for any other
/// parameter are refused, which keeps the discriminator and generator
/// updates from touching each other's weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    cfg: AdamConfig,
    owns: ComponentSet,
    t: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, owns: ComponentSet, store: &ParamStore) -> Self {
        let slots = |store: &ParamStore| {
            store
                .iter()
                .map(|(_, p)| owns.contains(p.component).then(|| Tensor::zeros(p.tensor.shape())))
                .collect::<Vec<_>>()
        };
        Self {
            cfg,
            owns,
            t: 0,
            m: slots(store),
            v: slots(store),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn set_config(&mut self, cfg: AdamConfig) {
        self.cfg = cfg;
    }

    pub fn owns(&self) -> ComponentSet {
        self.owns
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub(crate) fn set_steps(&mut self, t: u64) {
        self.t = t;
    }

    /// First and second moments of a parameter, if this optimizer owns it.
    pub fn moments(&self, id: ParamId) -> Option<(&Tensor, &Tensor)> {
        Some((self.m[id.index()].as_ref()?, self.v[id.index()].as_ref()?))
    }

    pub(crate) fn moments_mut(&mut self, id: ParamId) -> Option<(&mut Tensor, &mut Tensor)> {
        Some((self.m[id.index()].as_mut()?, self.v[id.index()].as_mut()?))
    }

    /// One update from `grads`. Parameters without a gradient are left alone.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> Result<()> {
        let updates = grads.params();
        for (id, g) in &updates {
            let p = store.get(*id);
            if !self.owns.contains(p.component) {
                return Err(Error::InvalidInput(format!(
                    "optimizer received a gradient for {}, which it does not own",
                    p.name
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            weight_decay,
        } = self.cfg;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (id, g) in updates {
            let i = id.index();
            let (m, v) = match (self.m[i].as_mut(), self.v[i].as_mut()) {
                (Some(m), Some(v)) => (m.data_mut(), v.data_mut()),
                _ => unreachable!("ownership checked above"),
            };
            let w = store.tensor_mut(id).data_mut();
            for (((w, m), v), &g) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                let g = g + weight_decay * *w;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::params::Component;

    fn store() -> (ParamStore, ParamId, ParamId) {
        let mut s = ParamStore::new();
        let g = s.add(Component::GenA, "w", 0, "weight", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        let d = s.add(Component::DiscA, "w", 0, "weight", Tensor::new(vec![2], vec![0.5, 0.5]).unwrap());
        (s, g, d)
    }

    fn cfg(lr: f32, wd: f32) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            weight_decay: wd,
        }
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let (mut s, g, _) = store();
        let mut opt = Adam::new(cfg(0.1, 0.0), ComponentSet::generators(), &s);
        let grads = {
            let tape = Tape::with_trainable(ComponentSet::generators());
            let w = tape.param(&s, g);
            let target = tape.constant(Tensor::zeros(&[2]));
            let loss = w.l1_mean(target);
            tape.backward(&[(loss, 1.0)])
        };
        opt.step(&mut s, &grads).unwrap();
        let w = s.get(g).tensor.data();
        assert!((w[0] - 0.9).abs() < 1e-6, "{w:?}");
        assert!((w[1] + 1.9).abs() < 1e-6, "{w:?}");
    }

    #[test]
    fn foreign_gradients_are_refused() {
        let (mut s, _, d) = store();
        let mut opt = Adam::new(cfg(0.1, 0.0), ComponentSet::generators(), &s);
        let grads = {
            let tape = Tape::new();
            let w = tape.param(&s, d);
            let loss = w.l1_mean(tape.constant(Tensor::zeros(&[2])));
            tape.backward(&[(loss, 1.0)])
        };
        assert!(opt.step(&mut s, &grads).is_err());
        assert_eq!(s.get(d).tensor.data(), &[0.5, 0.5]);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let (mut s, g, _) = store();
        let before = s.get(g).tensor.clone();
        let mut opt = Adam::new(cfg(0.0, 1e-4), ComponentSet::generators(), &s);
        let grads = {
            let tape = Tape::with_trainable(ComponentSet::generators());
            let loss = tape.param(&s, g).l1_mean(tape.constant(Tensor::zeros(&[2])));
            tape.backward(&[(loss, 1.0)])
        };
        opt.step(&mut s, &grads).unwrap();
        assert_eq!(s.get(g).tensor, before);
        assert_eq!(opt.steps(), 1);
    }
}
