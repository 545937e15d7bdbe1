//! On-disk formats: IDX ingestion and memory-pool files.

use ibm_core::harness::idx::{export_tasks, write_idx, IdxArray, IdxSpec};
use ibm_core::harness::{ingest_idx, load_pool, save_pool};
use ibm_core::mask::MemoryPool;
use ibm_core::{gaussian_sample, IbmError, LossScale, Network, SeededRng};

fn synthetic_digits(n: usize, seed: u64) -> (IdxArray, IdxArray) {
    let mut rng = SeededRng::new(seed);
    let data = (0..n * 9).map(|_| (rng.next_u64() % 256) as u8).collect();
    let labels = (0..n).map(|i| (i % 10) as u8).collect();
    (IdxArray { dims: vec![n, 3, 3], data }, IdxArray { dims: vec![n], data: labels })
}

#[test]
fn idx_files_round_trip_through_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let (ti, tl) = synthetic_digits(50, 1);
    let (vi, vl) = synthetic_digits(30, 2);
    let spec = IdxSpec {
        train_images: dir.path().join("train-images"),
        train_labels: dir.path().join("train-labels"),
        test_images: dir.path().join("test-images"),
        test_labels: dir.path().join("test-labels"),
        ..IdxSpec::default()
    };
    write_idx(&spec.train_images, &ti).unwrap();
    write_idx(&spec.train_labels, &tl).unwrap();
    write_idx(&spec.test_images, &vi).unwrap();
    write_idx(&spec.test_labels, &vl).unwrap();

    let tasks = ingest_idx(&spec).unwrap();
    assert_eq!(tasks.len(), 5);
    assert_eq!(tasks.iter().map(|t| t.train.len()).sum::<usize>(), 50);
    assert!(tasks.iter().all(|t| t.input_width() == 9 && t.classes == 2));

    // every image and label survives, grouped by task
    let (images, labels) = export_tasks(&tasks, &[3, 3], false).unwrap();
    let mut original: Vec<(u8, Vec<u8>)> = (0..50).map(|i| (tl.data[i], ti.item(i).to_vec())).collect();
    let mut exported: Vec<(u8, Vec<u8>)> = (0..50).map(|i| (labels.data[i], images.item(i).to_vec())).collect();
    original.sort();
    exported.sort();
    assert_eq!(original, exported);
}

#[test]
fn truncated_idx_file_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let (ti, _) = synthetic_digits(4, 3);
    let path = dir.path().join("short");
    write_idx(&path, &ti).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    let spec = IdxSpec { train_images: path, ..IdxSpec::default() };
    match ingest_idx(&spec) {
        Err(IbmError::Idx { offset, reason }) => {
            assert_eq!(offset, bytes.len() - 5);
            assert!(reason.contains("truncated"));
        }
        other => panic!("expected an IDX error, got {other:?}"),
    }
}

#[test]
fn pool_file_size_stays_near_raw_payload() {
    let mut rng = SeededRng::new(4);
    let mut net = Network::new(64, &[64, 64], 0.5, LossScale::Layers, &mut rng).unwrap();
    let mut pool = MemoryPool::new();
    for t in 0..10 {
        net.add_head(t, 2, &mut rng).unwrap();
        for l in net.layers.iter_mut() {
            l.mu = gaussian_sample(&mut rng, 64, 64, 0.0, 1.0).unwrap();
        }
        pool.finalize_task(&net, t, 1.0).unwrap();
    }
    let weights_per_layer = 64 * 64;
    let per_task = 2 * (weights_per_layer / 8 + 2 * 8 * weights_per_layer + 8) + 8 * (2 * 64 + 2);
    let payload = 10 * per_task;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pool.ibm");
    save_pool(&path, &net, &pool).unwrap();
    let size = std::fs::metadata(&path).unwrap().len() as usize;
    assert!(size >= payload && size <= 2 * payload, "file {size} vs payload {payload}");

    let (_, loaded) = load_pool(&path).unwrap();
    assert_eq!(loaded.artifacts, pool.artifacts);
}
