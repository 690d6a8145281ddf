mod common;

use std::fs;
use std::path::Path;

use afrnet::data::{
    generate_synthetic_benchmark, load_dataset, load_matrix, save_matrix, validate_split, Dataset, Split,
    SyntheticBenchmarkConfig,
};
use afrnet::{AfrError, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Assembles the binary matrix layout byte by byte.
fn hand_encoded(rows: u64, cols: u64, values: &[f64]) -> Vec<u8> {
    let mut b = b"AFRM".to_vec();
    b.extend(1u32.to_le_bytes());
    b.extend(rows.to_le_bytes());
    b.extend(cols.to_le_bytes());
    for v in values {
        b.extend(v.to_le_bytes());
    }
    b
}

/// Three classes (0, 1 seen; 2 unseen), two samples each, v = 2, s = 3.
fn write_fixture(dir: &Path, semantic_rows: u64) {
    let feats = [0.0, 0.0, 0.1, 0.0, 5.0, 5.0, 5.1, 5.0, -5.0, 5.0, -5.1, 5.0];
    fs::write(dir.join("features.afrm"), hand_encoded(6, 2, &feats)).unwrap();
    fs::write(dir.join("labels.csv"), "0\n0\n1\n1\n2\n2\n").unwrap();
    let sem: Vec<f64> = (0..semantic_rows * 3).map(|i| i as f64).collect();
    fs::write(dir.join("semantics.afrm"), hand_encoded(semantic_rows, 3, &sem)).unwrap();
    fs::write(
        dir.join("split.json"),
        r#"{"seen":[0,1],"unseen":[2],"test_seen":[1,3],"test_unseen":[4,5]}"#,
    )
    .unwrap();
}

#[test]
fn fixture_loads_with_expected_shapes() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 3);
    let d = load_dataset(dir.path()).unwrap();
    assert_eq!(d.features().shape(), (6, 2));
    assert_eq!(d.semantics().shape(), (3, 3));
    assert_eq!(d.labels(), &[0, 0, 1, 1, 2, 2]);
    assert_eq!(d.train_indices(), vec![0, 2]);
    assert_eq!(d.features().get(3, 0), 5.1);
    assert_eq!(d.semantics().get(2, 1), 7.0);
}

#[test]
fn fixture_missing_semantic_row_names_class() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 2);
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, AfrError::Data(_)));
    assert!(err.to_string().contains("class 2 has no semantic row"), "{err}");
}

#[test]
fn overlapping_split_names_both_ids() {
    let feats = Matrix::zeros(4, 2);
    let labels = vec![0, 1, 2, 3];
    let sem = Matrix::zeros(4, 2);
    let split = Split {
        seen: vec![0, 1, 3],
        unseen: vec![2, 3, 1],
        test_seen: vec![0],
        test_unseen: vec![2],
    };
    let report = validate_split(&feats, &labels, &sem, &split);
    assert!(!report.passed);
    let msg = report.violations.join("; ");
    assert!(msg.contains("[1, 3]"), "{msg}");
    assert!(Dataset::new(feats, labels, sem, split).is_err());
}

#[test]
fn valid_split_passes() {
    let split = Split { seen: vec![0], unseen: vec![1], test_seen: vec![0], test_unseen: vec![2] };
    let report = validate_split(&Matrix::zeros(3, 1), &[0, 0, 1], &Matrix::zeros(2, 1), &split);
    assert!(report.passed, "{:?}", report.violations);
}

#[test]
fn distinct_diagnostics_for_missing_file_and_row_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 3);
    fs::remove_file(dir.path().join("split.json")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, AfrError::Io { .. }) && err.to_string().contains("split.json"), "{err}");

    write_fixture(dir.path(), 3);
    fs::write(dir.path().join("labels.csv"), "0\n0\n1\n").unwrap();
    assert!(matches!(load_dataset(dir.path()).unwrap_err(), AfrError::Dimension { .. }));

    let missing = dir.path().join("nope");
    assert!(load_dataset(&missing).unwrap_err().to_string().contains("nope"));
}

#[test]
fn random_matrix_round_trips_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let m = common::random_matrix(&mut rng, 7, 13, 1e3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.afrm");
    save_matrix(&path, &m).unwrap();
    let back = load_matrix(&path).unwrap();
    assert_eq!(back.shape(), (7, 13));
    for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(fs::read(&path).unwrap(), hand_encoded(7, 13, m.as_slice()));
}

#[test]
fn dataset_round_trip_is_identity() {
    let cfg = SyntheticBenchmarkConfig { samples_per_class: 8, ..Default::default() };
    let b = generate_synthetic_benchmark(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    b.dataset.save(dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), b.dataset);
}

#[test]
fn generator_is_deterministic_and_seed_sensitive() {
    let cfg = SyntheticBenchmarkConfig::default();
    let a = generate_synthetic_benchmark(&cfg).unwrap();
    let b = generate_synthetic_benchmark(&cfg).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.noise_dims, b.noise_dims);
    let c = generate_synthetic_benchmark(&SyntheticBenchmarkConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a.dataset, c.dataset);
}

#[test]
fn tiny_intra_spread_collapses_samples_onto_prototypes() {
    let cfg = SyntheticBenchmarkConfig { sigma_intra: 1e-12, samples_per_class: 5, ..Default::default() };
    let b = generate_synthetic_benchmark(&cfg).unwrap();
    let d = &b.dataset;
    for (r, &c) in d.labels().iter().enumerate() {
        for j in 0..d.visual_dim() {
            assert!((d.features().get(r, j) - b.prototypes.get(c, j)).abs() < 1e-10);
        }
    }
}

#[test]
fn class_means_converge_to_generating_prototypes() {
    let cfg = SyntheticBenchmarkConfig { samples_per_class: 400, ..Default::default() };
    let b = generate_synthetic_benchmark(&cfg).unwrap();
    let d = &b.dataset;
    let n = cfg.samples_per_class as f64;
    let bound = 3.0 * cfg.sigma_intra / n.sqrt();
    let classes = cfg.seen_classes + cfg.unseen_classes;
    let mut within = 0usize;
    let mut total = 0usize;
    for c in 0..classes {
        for j in 0..d.visual_dim() {
            let mean: f64 = (0..d.labels().len())
                .filter(|&r| d.labels()[r] == c)
                .map(|r| d.features().get(r, j))
                .sum::<f64>()
                / n;
            total += 1;
            if (mean - b.prototypes.get(c, j)).abs() <= bound {
                within += 1;
            }
        }
    }
    // A 3-sigma band holds for ~99.7% of coordinates.
    assert!(within as f64 / total as f64 >= 0.99, "{within}/{total}");
}

#[test]
fn noiseless_well_separated_benchmark_is_pure() {
    let cfg = SyntheticBenchmarkConfig { noise_fraction: 0.0, sigma_intra: 0.01, ..Default::default() };
    let b = generate_synthetic_benchmark(&cfg).unwrap();
    let d = &b.dataset;
    let mut own = 0usize;
    for (r, &c) in d.labels().iter().enumerate() {
        let x = d.features().row(r);
        let dist = |k: usize| -> f64 { x.iter().zip(b.prototypes.row(k)).map(|(a, p)| (a - p).powi(2)).sum() };
        let nearest = (0..b.prototypes.rows()).min_by(|&i, &j| dist(i).total_cmp(&dist(j))).unwrap();
        own += usize::from(nearest == c);
    }
    assert!(own as f64 / d.labels().len() as f64 > 0.99);
}

#[test]
fn split_layout_of_generated_benchmark() {
    let cfg = SyntheticBenchmarkConfig { samples_per_class: 10, test_fraction: 0.2, ..Default::default() };
    let b = generate_synthetic_benchmark(&cfg).unwrap();
    let s = b.dataset.split();
    assert_eq!(s.seen, (0..20).collect::<Vec<_>>());
    assert_eq!(s.unseen, (20..25).collect::<Vec<_>>());
    assert_eq!(s.test_seen.len(), 20 * 2);
    assert_eq!(s.test_unseen.len(), 5 * 10);
    assert_eq!(b.dataset.train_indices().len(), 20 * 8);
}
