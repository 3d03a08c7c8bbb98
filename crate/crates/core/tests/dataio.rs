use std::fs;
use std::path::Path;

use ndarray::Array2;
use octseg::dataio::{
    batch_images, batch_targets, decode_one_hot, load_dataset, load_dataset_with, normalize_image, one_hot_encode,
    preprocess_sample, read_cache, resize_bilinear, resize_nearest, split_dataset, split_indices, summarize,
    synthetic::layered_samples, write_cache, write_npy_sample, DatasetFormat, LoaderOptions, RawSample,
};
use octseg::Error;
use proptest::prelude::*;

/// Minimal uncompressed MAT level-5 writer for double arrays.
struct MatWriter {
    bytes: Vec<u8>,
}

impl MatWriter {
    fn new() -> Self {
        let mut bytes = vec![b' '; 128];
        let text = b"MATLAB 5.0 MAT-file, test fixture";
        bytes[..text.len()].copy_from_slice(text);
        bytes[116..124].fill(0);
        bytes[124..126].copy_from_slice(&0x0100u16.to_le_bytes());
        bytes[126..128].copy_from_slice(b"IM");
        MatWriter { bytes }
    }

    fn element(out: &mut Vec<u8>, ty: u32, payload: &[u8]) {
        out.extend_from_slice(&ty.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(payload);
        while out.len() % 8 != 0 {
            out.push(0);
        }
    }

    /// `values` in column-major order.
    fn double(mut self, name: &str, dims: &[usize], values: &[f64]) -> Self {
        assert_eq!(dims.iter().product::<usize>(), values.len());
        let mut body = Vec::new();
        let flags = [6u32, 0].iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>();
        Self::element(&mut body, 6, &flags);
        let d: Vec<u8> = dims.iter().flat_map(|&v| (v as i32).to_le_bytes()).collect();
        Self::element(&mut body, 5, &d);
        Self::element(&mut body, 1, name.as_bytes());
        let v: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::element(&mut body, 9, &v);
        Self::element(&mut self.bytes, 14, &body);
        self
    }

    fn save(self, path: &Path) {
        fs::write(path, self.bytes).unwrap();
    }
}

/// Label of row `y` (0-based) given 1-based boundary rows: count of
/// boundaries at or above the row, wrapping to 0 below the last one.
fn oracle_label(y: usize, boundaries: &[f64]) -> u8 {
    let count = boundaries.iter().filter(|&&b| b <= (y + 1) as f64).count();
    if count == boundaries.len() { 0 } else { count as u8 }
}

#[test]
fn mat_volume_with_graders_and_unannotated_slices() {
    let dir = tempfile::tempdir().unwrap();
    let (h, w, n, layers) = (20usize, 6usize, 3usize, 8usize);
    let image = |y: usize, x: usize, k: usize| (y * 7 + x * 3 + k * 11) as f64;
    let boundary = |l: usize, x: usize, k: usize| (2 + l * 2 + (x + k) % 2) as f64;

    let mut images = Vec::new();
    for k in 0..n {
        for x in 0..w {
            for y in 0..h {
                images.push(image(y, x, k));
            }
        }
    }
    // Grader 1 annotates slices 0 and 2; slice 1 is all NaN. Grader 2
    // leaves column 4 of slice 0 unannotated.
    let mut g1 = Vec::new();
    let mut g2 = Vec::new();
    for k in 0..n {
        for x in 0..w {
            for l in 0..layers {
                g1.push(if k == 1 { f64::NAN } else { boundary(l, x, k) });
                g2.push(if k == 0 && x == 4 { f64::NAN } else { boundary(l, x, k) });
            }
        }
    }
    MatWriter::new()
        .double("images", &[h, w, n], &images)
        .double("manualLayers1", &[layers, w, n], &g1)
        .double("manualLayers2", &[layers, w, n], &g2)
        .double("unrelated", &[1, 1], &[1.0])
        .save(&dir.path().join("Subject_01.mat"));

    let samples = load_dataset(dir.path()).unwrap();
    let ids: Vec<&str> = samples.iter().map(|s| s.source_id.as_str()).collect();
    assert_eq!(
        ids,
        [
            "Subject_01_manualLayers1_000",
            "Subject_01_manualLayers1_002",
            "Subject_01_manualLayers2_000",
            "Subject_01_manualLayers2_001",
            "Subject_01_manualLayers2_002",
        ]
    );
    for s in &samples {
        let k: usize = s.source_id[s.source_id.len() - 3..].parse().unwrap();
        let grader2 = s.source_id.contains("Layers2");
        assert_eq!(s.image.dim(), (h, w));
        for y in 0..h {
            for x in 0..w {
                assert_eq!(s.image[[y, x]], image(y, x, k));
                let want = if grader2 && k == 0 && x == 4 {
                    0
                } else {
                    let b: Vec<f64> = (0..layers).map(|l| boundary(l, x, k)).collect();
                    oracle_label(y, &b)
                };
                assert_eq!(s.mask[[y, x]], want, "{} ({y}, {x})", s.source_id);
            }
        }
    }
    let labels = summarize(&samples).labels;
    assert_eq!(labels, (0..8).collect::<Vec<u8>>());

    let npy_only = LoaderOptions {
        format: DatasetFormat::Npy,
        ..LoaderOptions::default()
    };
    assert!(matches!(load_dataset_with(dir.path(), &npy_only), Err(Error::EmptyDataset(_))));
}

#[test]
fn mat_without_boundaries_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    MatWriter::new().double("images", &[4, 4], &[0.0; 16]).save(&dir.path().join("a.mat"));
    assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })));
    fs::write(dir.path().join("a.mat"), b"garbage").unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })));
}

#[test]
fn npy_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let samples = layered_samples(3, 24, 30, 4);
    for s in &samples {
        write_npy_sample(dir.path(), s).unwrap();
    }
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back, samples);

    // Label outside the class range.
    let mut bad = samples[0].clone();
    bad.source_id = "zz_bad".into();
    bad.mask[[0, 0]] = 9;
    write_npy_sample(dir.path(), &bad).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::Validation { source_id, message }) => {
            assert_eq!(source_id, "zz_bad");
            assert!(message.contains("(0, 0)"), "{message}");
        }
        other => panic!("expected a validation error, got {other:?}"),
    }
    fs::remove_file(dir.path().join("zz_bad_mask.npy")).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Validation { .. })));

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(empty.path()), Err(Error::EmptyDataset(_))));
    assert!(matches!(load_dataset(&empty.path().join("missing")), Err(Error::NotFound(_))));
}

#[test]
fn preprocessing_reaches_target_shapes() {
    let raw = &layered_samples(1, 216, 500, 9)[0];
    let p = preprocess_sample(raw, (256, 256), 8).unwrap();
    assert_eq!(p.image.dim(), (256, 256));
    assert_eq!(p.onehot_mask.dim(), (256, 256, 8));
    let (lo, hi) = p.image.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    assert_eq!((lo, hi), (0.0, 1.0));
    assert!(p.onehot_mask.lanes(ndarray::Axis(2)).into_iter().all(|l| l.sum() == 1));
    assert_eq!(p.mask(), resize_nearest(raw.mask.view(), (256, 256)).unwrap());

    let x = batch_images::<f64>([&p, &p]);
    let y = batch_targets::<f32>([&p]);
    assert_eq!(x.dim(), (2, 256, 256, 1));
    assert_eq!(y.dim(), (1, 256, 256, 8));
}

#[test]
fn constant_image_normalizes_to_zero() {
    let img = Array2::from_elem((3, 4), 5.0);
    assert!(normalize_image(img.view()).iter().all(|&v| v == 0.0));
}

#[test]
fn nearest_resize_never_invents_labels() {
    let mask = Array2::from_shape_fn((216, 500), |(y, x)| ((y / 30 + x / 100) % 8) as u8);
    let r = resize_nearest(mask.view(), (256, 256)).unwrap();
    let before: std::collections::BTreeSet<u8> = mask.iter().copied().collect();
    let after: std::collections::BTreeSet<u8> = r.iter().copied().collect();
    assert!(after.is_subset(&before));
    assert!(resize_nearest(mask.view(), (0, 4)).is_err());
}

#[test]
fn split_and_cache_are_deterministic() {
    let samples: Vec<_> = layered_samples(10, 40, 40, 1)
        .iter()
        .map(|s| preprocess_sample(s, (32, 32), 8).unwrap())
        .collect();
    let (train, val) = split_indices(10, 0.8, 42).unwrap();
    assert_eq!((train.len(), val.len()), (8, 2));
    assert_eq!(split_indices(10, 0.8, 42).unwrap(), (train.clone(), val.clone()));
    assert_ne!(split_indices(10, 0.8, 43).unwrap(), (train, val));
    assert!(split_indices(10, 1.5, 0).is_err());

    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.safetensors");
    let b = dir.path().join("b.safetensors");
    let split = split_dataset(samples.clone(), 0.8, 42).unwrap();
    write_cache(&split, &a).unwrap();
    write_cache(&split_dataset(samples, 0.8, 42).unwrap(), &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let (back, header) = read_cache(&a).unwrap();
    assert_eq!(back, split);
    assert_eq!((header.height, header.width, header.num_classes), (32, 32, 8));
    assert_eq!(header.train_ids.len(), 8);

    fs::write(&a, b"truncated").unwrap();
    assert!(read_cache(&a).is_err());
}

fn arb_mask() -> impl Strategy<Value = Array2<u8>> {
    (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
        proptest::collection::vec(0u8..8, h * w).prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap())
    })
}

proptest! {
    #[test]
    fn one_hot_round_trip(mask in arb_mask()) {
        let encoded = one_hot_encode(mask.view(), 8).unwrap();
        prop_assert_eq!(encoded.dim(), (mask.nrows(), mask.ncols(), 8));
        prop_assert!(encoded.iter().all(|&v| v <= 1));
        prop_assert_eq!(decode_one_hot(encoded.view()), mask);
    }

    #[test]
    fn normalized_values_stay_in_unit_range(v in proptest::collection::vec(-1e6f64..1e6, 1..64)) {
        let n = v.len();
        let img = Array2::from_shape_vec((1, n), v).unwrap();
        let out = normalize_image(img.view());
        prop_assert!(out.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn bilinear_stays_within_input_range(
        v in proptest::collection::vec(0.0f64..1.0, 16),
        th in 1usize..20,
        tw in 1usize..20,
    ) {
        let img = Array2::from_shape_vec((4, 4), v).unwrap();
        let (lo, hi) = img.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        let out = resize_bilinear(img.view(), (th, tw)).unwrap();
        prop_assert!(out.iter().all(|&x| x >= lo - 1e-12 && x <= hi + 1e-12));
    }

    #[test]
    fn split_is_a_partition(n in 1usize..60, ratio in 0.05f64..=1.0, seed in any::<u64>()) {
        let (train, val) = split_indices(n, ratio, seed).unwrap();
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(train.len(), ((ratio * n as f64).round() as usize).min(n));
    }
}

#[test]
fn raw_sample_validation() {
    let s = RawSample {
        image: Array2::zeros((2, 2)),
        mask: Array2::zeros((2, 3)),
        source_id: "x".into(),
    };
    assert!(s.validate(8).is_err());
}
