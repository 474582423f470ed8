mod common;

use std::fs;
use std::path::Path;

use dsmap::data::{
    classify_hue, images_to_batch, load_batch, make_toy_dataset, read_manifest, shape_centroid, toy_records, Augment,
    DatasetSpec, ImagePool, Split, ToySpec, TOY_HUE_A, TOY_HUE_B,
};
use dsmap::model::DomainId;
use image::{Rgb, RgbImage};

use DomainId::{A, B};

fn write_folder(root: &Path, n: usize, size: u32) {
    for split in [Split::Train, Split::Test] {
        for d in DomainId::BOTH {
            let dir = root.join(split.folder(d));
            fs::create_dir_all(&dir).unwrap();
            for i in 0..n {
                let img = RgbImage::from_fn(size, size, |x, y| Rgb([(x * 3 + i as u32 * 40) as u8, (y * 5) as u8, (d as u8) * 200]));
                img.save(dir.join(format!("img_{i}.png"))).unwrap();
            }
        }
    }
}

/// Hue in degrees from 8-bit RGB, or `None` for grays.
fn hue_oracle(p: [u8; 3]) -> Option<f64> {
    let [r, g, b] = p.map(f64::from);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    if max == min {
        return None;
    }
    let d = max - min;
    let h = if max == r {
        60.0 * ((g - b) / d)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    Some(h.rem_euclid(360.0))
}

#[test]
fn batch_from_folder() {
    let dir = tempfile::tempdir().unwrap();
    write_folder(dir.path(), 5, 64);
    let spec = DatasetSpec::new(dir.path(), Augment::none(64), 3);
    spec.validate().unwrap();
    let b = load_batch(&spec, Split::Train, A, 2, 1).unwrap();
    assert_eq!(b.shape(), &[2, 3, 64, 64]);
    let (lo, hi) = b.tensor().min_max();
    assert!(lo >= -1.0 && hi <= 1.0);
    assert_eq!(b, load_batch(&spec, Split::Train, A, 2, 1).unwrap());
    assert_ne!(b, load_batch(&spec, Split::Train, A, 2, 2).unwrap());
}

#[test]
fn resizes_and_augments() {
    let dir = tempfile::tempdir().unwrap();
    write_folder(dir.path(), 3, 40);
    let aug = Augment {
        image_size: 32,
        load_size: Some(36),
        random_crop: true,
        horizontal_flip: true,
    };
    let spec = DatasetSpec::new(dir.path(), aug, 1);
    let pool = ImagePool::load(&spec, Split::Test, B).unwrap();
    let b = pool.batch(3, 5, 1).unwrap();
    assert_eq!(b.shape(), &[3, 3, 32, 32]);
    assert_eq!(b, pool.batch(3, 5, 1).unwrap());
    assert_eq!(pool.get(&[0, 2]).unwrap().shape(), &[2, 3, 32, 32]);
}

#[test]
fn every_image_seen_once_per_epoch() {
    let imgs: Vec<RgbImage> = (0..6).map(|i| RgbImage::from_pixel(16, 16, Rgb([i * 40, 0, 0]))).collect();
    let pool = ImagePool::from_images(A, imgs, Augment::none(16)).unwrap();
    let mut seen: Vec<u8> = (1..=3)
        .flat_map(|step| {
            let b = pool.batch(2, step, 7).unwrap();
            dsmap::data::batch_to_images(&b).into_iter().map(|im| im.get_pixel(0, 0)[0])
        })
        .collect();
    seen.sort_unstable();
    assert_eq!(seen, vec![0, 40, 80, 120, 160, 200]);
}

#[test]
fn corrupt_file_is_skipped_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    write_folder(dir.path(), 4, 64);
    let bad = dir.path().join("trainA").join("img_9.png");
    fs::write(&bad, b"definitely not a png").unwrap();
    let spec = DatasetSpec::new(dir.path(), Augment::none(64), 0);
    let pool = ImagePool::load(&spec, Split::Train, A).unwrap();
    assert_eq!(pool.len(), 4);
    assert_eq!(pool.warnings().len(), 1);
    assert!(pool.warnings()[0].contains("img_9.png"));
    assert_eq!(pool.batch(2, 1, 0).unwrap().batch(), 2);
}

#[test]
fn missing_or_empty_folders_are_dataset_errors() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec::new(dir.path(), Augment::none(64), 0);
    assert!(matches!(spec.validate(), Err(dsmap::Error::Dataset(_))));
    write_folder(dir.path(), 1, 64);
    fs::remove_file(dir.path().join("testB").join("img_0.png")).unwrap();
    assert!(matches!(spec.validate(), Err(dsmap::Error::Dataset(_))));
}

#[test]
fn toy_dataset_is_reproducible() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let spec = ToySpec::new(8, 32, 7);
    let rows = make_toy_dataset(&spec, d1.path()).unwrap();
    make_toy_dataset(&spec, d2.path()).unwrap();
    assert_eq!(rows.len(), 16);
    assert_eq!(rows.iter().filter(|r| r.domain == "A").count(), 8);
    assert_eq!(rows.iter().filter(|r| r.domain == "B").count(), 8);
    assert_eq!(read_manifest(d1.path()).unwrap(), rows);
    for r in &rows {
        assert_eq!(fs::read(d1.path().join(&r.filename)).unwrap(), fs::read(d2.path().join(&r.filename)).unwrap());
    }
    assert_eq!(fs::read(d1.path().join("manifest.csv")).unwrap(), fs::read(d2.path().join("manifest.csv")).unwrap());
    let n_test = fs::read_dir(d1.path().join("testA")).unwrap().count();
    assert_eq!(n_test, spec.n_test);

    let other = toy_records(&ToySpec::new(8, 32, 8)).unwrap();
    assert_ne!(other[0].0, rows[0].clone());
}

#[test]
fn toy_palettes_stay_in_their_hue_ranges() {
    let recs = toy_records(&ToySpec::new(20, 32, 3)).unwrap();
    for (rec, img) in &recs {
        let (lo, hi) = if rec.domain == "A" { TOY_HUE_A } else { TOY_HUE_B };
        let mut fg = 0;
        for p in img.pixels() {
            if p.0 == [0, 0, 0] {
                continue;
            }
            fg += 1;
            let h = hue_oracle(p.0).expect("foreground pixels are saturated");
            // 8-bit quantization moves hue by well under a degree here
            assert!(h >= lo - 1.0 && h <= hi + 1.0, "{}: hue {h}", rec.filename);
        }
        assert!(fg > 0);
    }
}

#[test]
fn toy_domains_are_separable_and_centroids_match_manifest() {
    let recs = toy_records(&ToySpec::new(30, 32, 5)).unwrap();
    for (rec, img) in &recs {
        let b = images_to_batch(std::slice::from_ref(img)).unwrap();
        let want = if rec.domain == "A" { A } else { B };
        assert_eq!(classify_hue(&b, 0), Some(want));
        let (cx, cy) = shape_centroid(&b, 0).unwrap();
        assert!((cx - rec.shape_x).abs() < 1.0 && (cy - rec.shape_y).abs() < 1.0, "{rec:?} vs ({cx}, {cy})");
    }
}

#[test]
fn toy_spec_preconditions() {
    assert!(ToySpec::new(2, 32, 0).validate().is_err());
    assert!(ToySpec::new(8, 8, 0).validate().is_err());
    assert!(ToySpec { n_test: 8, ..ToySpec::new(8, 32, 0) }.validate().is_err());
}
