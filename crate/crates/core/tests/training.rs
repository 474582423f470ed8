mod common;

use common::{random_images, tiny_config, totals_oracle};
use dsmap::checkpoint;
use dsmap::data::{Augment, ImagePool};
use dsmap::losses::{LossWeights, LossReport};
use dsmap::model::{DomainId, ImageBatch, Model};
use dsmap::params::{Component, ParamStore};
use dsmap::training::{
    discriminator_step, fit, forward_all, generator_step, prior_styles, read_metrics, train_step, ModelState, RunDir,
    TrainConfig,
};
use image::RgbImage;

use DomainId::{A, B};

fn cfg(steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 2,
        learning_rate: 1e-3,
        seed: 9,
        ..TrainConfig::default()
    }
}

fn state(c: &TrainConfig) -> ModelState {
    ModelState::new(tiny_config(1), c.adam()).unwrap()
}

fn batches() -> (ImageBatch, ImageBatch) {
    (random_images(1, [2, 3, 16, 16]), random_images(2, [2, 3, 16, 16]))
}

fn pool(domain: DomainId, seed: u64, n: usize) -> ImagePool {
    let images = (0..n)
        .map(|i| {
            let t = random_images(seed * 100 + i as u64, [1, 3, 16, 16]);
            dsmap::data::batch_to_images(&t).remove(0)
        })
        .collect::<Vec<RgbImage>>();
    ImagePool::from_images(domain, images, Augment::none(16)).unwrap()
}

/// Names of parameters whose values differ between the two stores.
fn changed(before: &ParamStore, after: &ParamStore) -> Vec<(String, Component)> {
    before
        .iter()
        .zip(after.iter())
        .filter(|((_, p), (_, q))| p.tensor != q.tensor)
        .map(|((_, p), _)| (p.name.clone(), p.component))
        .collect()
}

#[test]
fn forward_all_is_finite_and_composes() {
    let m = Model::new(tiny_config(3)).unwrap();
    let (xa, xb) = batches();
    let (sa, sb) = prior_styles(8, 2, 0, 1).unwrap();
    let o = forward_all(&m, &xa, &xb, &sa, &sb).unwrap();
    for t in [o.h_a.tensor(), o.c_b.tensor(), o.x_aba.tensor(), o.x_bab.tensor(), o.s_a_rec.tensor(), o.c_ab_re.tensor()] {
        assert!(t.all_finite());
    }
    assert_eq!(o.x_aa, m.translate(&xa, &xa, A, A).unwrap());
    assert_eq!(o.x_bb, m.translate(&xb, &xb, B, B).unwrap());
    assert_eq!(o.x_aba, m.translate(&o.x_ab, &xa, B, A).unwrap());
    assert_eq!(o.x_bab, m.translate(&o.x_ba, &xb, A, B).unwrap());
    let (_, c) = m.encode_content(&xa, A).unwrap();
    assert_eq!(o.x_ab, m.translate_with_style(&c, &sb, B).unwrap());
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let c = TrainConfig {
        learning_rate: 0.0,
        ..cfg(1)
    };
    let mut st = state(&c);
    let before = st.model.params().clone();
    let (xa, xb) = batches();
    train_step(&mut st, &xa, &xb, &c, 1).unwrap();
    assert_eq!(st.model.params(), &before);
}

#[test]
fn one_step_changes_every_component() {
    let c = TrainConfig {
        learning_rate: 1e-4,
        ..cfg(1)
    };
    let mut st = state(&c);
    let before = st.model.params().clone();
    let (xa, xb) = batches();
    train_step(&mut st, &xa, &xb, &c, 1).unwrap();
    let moved: Vec<Component> = changed(&before, st.model.params()).into_iter().map(|(_, c)| c).collect();
    for comp in before.components() {
        assert!(moved.contains(&comp), "{comp} did not change");
    }
    assert_eq!(st.step, 1);
}

#[test]
fn discriminator_update_leaves_generators_untouched() {
    let c = cfg(1);
    let mut st = state(&c);
    let before = st.model.params().clone();
    let (xa, xb) = batches();
    discriminator_step(&mut st, &xa, &xb, &c, 1).unwrap();
    let moved = changed(&before, st.model.params());
    assert!(!moved.is_empty());
    assert!(moved.iter().all(|(_, comp)| comp.is_discriminator()), "{moved:?}");
    assert_eq!(st.g_opt.steps(), 0);
}

#[test]
fn generator_update_leaves_discriminators_untouched() {
    let c = cfg(1);
    let mut st = state(&c);
    let before = st.model.params().clone();
    let (xa, xb) = batches();
    generator_step(&mut st, &xa, &xb, &c, 1).unwrap();
    let moved = changed(&before, st.model.params());
    assert!(!moved.is_empty());
    assert!(moved.iter().all(|(_, comp)| !comp.is_discriminator()), "{moved:?}");
    assert_eq!(st.d_opt.steps(), 0);
}

#[test]
fn full_step_equals_discriminator_then_generator() {
    let c = cfg(1);
    let (xa, xb) = batches();
    let mut whole = state(&c);
    let r = train_step(&mut whole, &xa, &xb, &c, 1).unwrap();
    let mut split = state(&c);
    let (da, db) = discriminator_step(&mut split, &xa, &xb, &c, 1).unwrap();
    let g = generator_step(&mut split, &xa, &xb, &c, 1).unwrap();
    assert_eq!(whole.model.params(), split.model.params());
    assert_eq!((r.components.d_adv_a, r.components.d_adv_b), (da, db));
    assert_eq!(r.components.cc_a, g.components.cc_a);
    assert_eq!(r.components.g_adv_b, g.components.g_adv_b);
}

#[test]
fn reported_totals_match_components() {
    let w = LossWeights {
        cc: 3.0,
        x: 2.5,
        dsc: 0.5,
        dic: 1.5,
        s: 0.25,
        adv: 2.0,
    };
    let c = TrainConfig {
        loss_weights: w,
        ..cfg(3)
    };
    let mut st = state(&c);
    let reports = fit(&mut st, &pool(A, 1, 4), &pool(B, 2, 4), &c, None).unwrap();
    let wv = [w.cc, w.x, w.dsc, w.dic, w.s, w.adv];
    for r in &reports {
        let (g, d) = totals_oracle(&r.components.to_array(), &wv);
        assert!((r.g_total - g).abs() <= 1e-12 * g.abs(), "{} vs {g}", r.g_total);
        assert!((r.d_total - d).abs() <= 1e-12 * d.abs());
        let again = LossReport::new(r.step, r.components, &w).unwrap();
        assert_eq!(again.g_total, r.g_total);
    }
}

#[test]
fn zero_weight_terms_do_not_train() {
    let w = LossWeights {
        cc: 0.0,
        x: 0.0,
        dsc: 0.0,
        dic: 0.0,
        s: 0.0,
        adv: 1.0,
    };
    let c = TrainConfig {
        loss_weights: w,
        weight_decay: 0.0,
        ..cfg(1)
    };
    let mut st = state(&c);
    let before = st.model.params().clone();
    let (xa, xb) = batches();
    train_step(&mut st, &xa, &xb, &c, 1).unwrap();
    let moved = changed(&before, st.model.params());
    assert!(moved.iter().any(|(_, c)| *c == Component::GenA));
    // Encoded styles only feed the reconstruction and cycle paths.
    for (name, _) in moved {
        assert!(!name.starts_with("style_"), "{name} moved without a style objective");
    }
}

#[test]
fn fit_is_deterministic() {
    let dir1 = tempfile::tempdir().unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    let c = cfg(10);
    for d in [&dir1, &dir2] {
        let mut st = state(&c);
        fit(&mut st, &pool(A, 1, 5), &pool(B, 2, 5), &c, Some(&RunDir::new(d.path()).unwrap())).unwrap();
    }
    let m1 = std::fs::read(dir1.path().join("metrics.log")).unwrap();
    let m2 = std::fs::read(dir2.path().join("metrics.log")).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(String::from_utf8(m1).unwrap().lines().count(), 10);
    assert_eq!(
        std::fs::read(dir1.path().join("latest.ckpt")).unwrap(),
        std::fs::read(dir2.path().join("latest.ckpt")).unwrap()
    );
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (pa, pb) = (pool(A, 1, 5), pool(B, 2, 5));
    let full_dir = tempfile::tempdir().unwrap();
    let c = TrainConfig {
        checkpoint_every: 4,
        ..cfg(8)
    };
    let mut st = state(&c);
    let full_run = RunDir::new(full_dir.path()).unwrap();
    let full = fit(&mut st, &pa, &pb, &c, Some(&full_run)).unwrap();

    // Resume from the step-4 checkpoint into a copy of the log that
    // already holds the lines of an interrupted run.
    let resumed_dir = tempfile::tempdir().unwrap();
    let resumed_run = RunDir::new(resumed_dir.path()).unwrap();
    let log = std::fs::read_to_string(full_run.metrics()).unwrap();
    let partial: String = log.lines().take(6).map(|l| format!("{l}\n")).collect();
    std::fs::write(resumed_run.metrics(), partial).unwrap();
    let (mut st2, saved) = checkpoint::load(&full_run.checkpoint(4)).unwrap();
    assert_eq!(st2.step, 4);
    assert_eq!(saved.as_ref(), Some(&c));
    let tail = fit(&mut st2, &pa, &pb, &c, Some(&resumed_run)).unwrap();
    assert_eq!(tail.len(), 4);
    assert_eq!(&full[4..], &tail[..]);
    assert_eq!(st.model.params(), st2.model.params());
    assert_eq!(std::fs::read_to_string(resumed_run.metrics()).unwrap(), log);
    assert_eq!(read_metrics(&resumed_run.metrics()).unwrap(), full);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let c = cfg(2);
    let mut st = state(&c);
    fit(&mut st, &pool(A, 1, 3), &pool(B, 2, 3), &c, None).unwrap();
    let bytes = checkpoint::to_bytes(&st, Some(&c)).unwrap();
    let (back, tc) = checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(tc, Some(c));
    assert_eq!(back.model.params(), st.model.params());
    assert_eq!(back.g_opt.steps(), st.g_opt.steps());
    assert_eq!(checkpoint::to_bytes(&back, tc.as_ref()).unwrap(), bytes);
    assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn mismatched_batches_are_rejected() {
    let c = cfg(1);
    let mut st = state(&c);
    let xa = random_images(1, [2, 3, 16, 16]);
    let xb = random_images(2, [1, 3, 16, 16]);
    assert!(train_step(&mut st, &xa, &xb, &c, 1).is_err());
    let big = random_images(3, [2, 3, 32, 32]);
    assert!(train_step(&mut st, &big, &big, &c, 1).is_err());
}

#[test]
fn invalid_config_is_rejected() {
    let mut st = state(&cfg(1));
    let (pa, pb) = (pool(A, 1, 2), pool(B, 2, 2));
    for bad in [
        TrainConfig { batch_size: 0, ..cfg(1) },
        TrainConfig { steps: 0, ..cfg(1) },
        TrainConfig { adam_beta1: 1.0, ..cfg(1) },
        TrainConfig { learning_rate: f64::NAN, ..cfg(1) },
    ] {
        assert!(matches!(fit(&mut st, &pa, &pb, &bad, None), Err(dsmap::Error::Config(_))));
    }
}
