use std::fs;

use rankcore::checkpoint;
use rankcore::csv::{parse_matrix_csv, read_matrix, read_sps, write_matrix, write_sps};
use rankcore::dataset_io::{load_dataset, save_dataset, MANIFEST};
use rankcore::fcstore::{compute_store, load_index, load_table, pair_path};
use rankcore::fsutil::encode_name;
use rankcore::Error;
use rankcore_core::dataset::{generate_windowed, SynthConfig};
use rankcore_core::encoder::{init_params, EncoderShape};
use rankcore_core::matrix::Matrix;
use rankcore_core::rng;
use rankcore_core::spi::{registry, select_operators, ParamOverride};
use rankcore_core::sps::SpsRecord;

fn small() -> SynthConfig {
    SynthConfig { n_subjects: 6, t_total: 80, window_len: 40, stride: 40, seed: 4, ..SynthConfig::default() }
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let d = generate_windowed(&small()).unwrap();
    save_dataset(&d, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), d.len());
    for (a, b) in d.samples.iter().zip(&back.samples) {
        assert_eq!(a.sample_id, b.sample_id);
        assert_eq!(a.subject_id, b.subject_id);
        assert_eq!(a.class_label, b.class_label);
        let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.data), bits(&b.data));
    }
    assert_eq!(back, d);
}

#[test]
fn dataset_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let d = generate_windowed(&small()).unwrap();
    save_dataset(&d, dir.path()).unwrap();
    let first = dir.path().join("samples").join(format!("{}.csv", encode_name(&d.samples[0].sample_id)));
    fs::remove_file(&first).unwrap();
    let err = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains(&first.display().to_string()), "{err}");

    fs::write(&first, "1,2\n3\n").unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Parse { .. }) | Err(Error::Format { .. })));
    fs::remove_file(dir.path().join(MANIFEST)).unwrap();
    assert!(load_dataset(dir.path()).is_err());
}

#[test]
fn matrix_csv_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng::seeded(1);
    let m = Matrix::from_fn(4, 7, |_, _| rng::normal(&mut r) * 1e-7);
    let p = dir.path().join("m.csv");
    write_matrix(&p, &m).unwrap();
    assert_eq!(read_matrix(&p).unwrap(), m);
    match parse_matrix_csv(&p, "1,2\n3,x\n") {
        Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (2, 2)),
        other => panic!("{other:?}"),
    }
    assert!(parse_matrix_csv(&p, "1,2\n3\n").is_err());
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let p = init_params(17, &EncoderShape { heads: 3, head_dim: 4, value_dim: 5, out_dim: 2 }, 9).unwrap();
    let path = dir.path().join("params.bin");
    checkpoint::save(&path, &p).unwrap();
    assert_eq!(checkpoint::load(&path).unwrap(), p);
    let bytes = checkpoint::encode(&p);
    assert!(checkpoint::decode(&bytes[..bytes.len() - 8], &path).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint::decode(&bad, &path).is_err());
}

#[test]
fn sps_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sps = SpsRecord {
        scores: [("a".to_string(), 0.125), ("b,c".to_string(), 3.0e-9), ("say \"hi\"".to_string(), 17.5)].into_iter().collect(),
        epochs: 12,
    };
    let path = dir.path().join("sps.csv");
    write_sps(&path, &sps).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("sample_id,sps,epochs\n"), "{text}");
    let back = read_sps(&path).unwrap();
    assert_eq!(back.epochs, 12);
    for (k, v) in &sps.scores {
        assert!((back.scores[k] - v).abs() <= 1e-11 * v.abs(), "{k}");
    }
    let broken = SpsRecord { scores: [("x\ny".to_string(), 1.0)].into_iter().collect(), epochs: 1 };
    assert!(write_sps(&path, &broken).is_err());
}

#[test]
fn fc_store_resumes_and_honours_force() {
    let dir = tempfile::tempdir().unwrap();
    let d = generate_windowed(&small()).unwrap();
    let ops = select_operators(&["pearson", "cov_shrunk"]).unwrap();
    let first = compute_store(&d, &ops, dir.path(), false, 1).unwrap();
    assert_eq!((first.computed, first.skipped, first.failed), (2 * d.len(), 0, 0));

    // A missing file is recomputed, everything else is skipped.
    fs::remove_file(pair_path(dir.path(), "pearson", &d.samples[0].sample_id)).unwrap();
    let mut idx = load_index(dir.path()).unwrap();
    idx.completed.get_mut("pearson").unwrap().remove(&d.samples[0].sample_id);
    rankcore::fsutil::write_json(&dir.path().join("index.json"), &idx).unwrap();
    let resumed = compute_store(&d, &ops, dir.path(), false, 1).unwrap();
    assert_eq!((resumed.computed, resumed.skipped), (1, 2 * d.len() - 1));

    let forced = compute_store(&d, &ops, dir.path(), true, 2).unwrap();
    assert_eq!(forced.computed, 2 * d.len());

    // Changing an operator's parameters invalidates only that operator.
    let changed: Vec<_> = registry(&[ParamOverride { operator: "cov_shrunk".into(), key: "shrinkage".into(), value: 0.3 }])
        .unwrap()
        .into_iter()
        .filter(|o| o.name == "pearson" || o.name == "cov_shrunk")
        .collect();
    let s = compute_store(&d, &changed, dir.path(), false, 1).unwrap();
    assert_eq!((s.computed, s.skipped), (d.len(), d.len()));
    let ops = changed;

    let (table, index) = load_table(dir.path(), None, None).unwrap();
    assert_eq!(table.len(), 2 * d.len());
    assert_eq!(index.labels.labels.len(), d.len());
    let direct = rankcore_core::spi::compute_fc(&ops[0], &d.samples[1]).unwrap().values;
    let stored = table.get(&ops[0].name, &d.samples[1].sample_id).unwrap();
    assert_eq!(stored, &direct);
}

#[test]
fn json_floats_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.json");
    let mut r = rng::seeded(77);
    let values: Vec<f64> = (0..5_000).map(|i| rng::normal(&mut r) * 10f64.powi(i % 40 - 20)).collect();
    rankcore::fsutil::write_json(&path, &values).unwrap();
    let back: Vec<f64> = rankcore::fsutil::read_json(&path).unwrap();
    assert!(values.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
}
