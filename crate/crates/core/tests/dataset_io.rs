use std::collections::BTreeSet;
use std::fs;

use kae_core::dataset::{
    batch_indices, from_bytes, generate_split, to_bytes, write_trajectory_csv, Dataset, DatasetManifest, Split,
    SplitCounts,
};
use kae_core::numcore::Tensor;
use kae_core::pde::{Grid, IcFamily, PdeKind, PdeSpec, Trajectory};
use kae_core::Error;
use proptest::prelude::*;

fn small_manifest(kind: PdeKind, counts: SplitCounts) -> DatasetManifest {
    let mut m = DatasetManifest::new(PdeSpec::default_for(kind), Grid::for_pde(kind, 32).unwrap(), counts, 7);
    m.steps = 6;
    m
}

fn counts(train: usize, val: usize, test: usize) -> SplitCounts {
    SplitCounts { train, val, test }
}

#[test]
fn test_split_has_three_per_family() {
    let m = small_manifest(PdeKind::Fisher, counts(0, 0, 21));
    let ds = generate_split(&m, Split::Test).unwrap();
    let fc = ds.family_counts();
    assert_eq!(fc.len(), 7);
    assert!(fc.values().all(|&c| c == 3));
    // interleaved
    for (i, t) in ds.trajectories.iter().enumerate() {
        assert_eq!(t.ic_kind, IcFamily::ALL[i % 7]);
    }
}

#[test]
fn train_split_has_training_families_only() {
    let m = small_manifest(PdeKind::Burgers, counts(6, 0, 0));
    let ds = generate_split(&m, Split::Train).unwrap();
    let fc = ds.family_counts();
    assert_eq!(fc.keys().copied().collect::<Vec<_>>(), IcFamily::TRAINING.to_vec());
    assert!(fc.values().all(|&c| c == 2));
}

#[test]
fn indivisible_count_is_config_error() {
    let m = small_manifest(PdeKind::Fisher, counts(5, 0, 0));
    assert!(matches!(generate_split(&m, Split::Train), Err(Error::Config(_))));
    let m = small_manifest(PdeKind::Fisher, counts(0, 0, 20));
    assert!(matches!(generate_split(&m, Split::Test), Err(Error::Config(_))));
}

#[test]
fn empty_split_is_header_only() {
    let m = small_manifest(PdeKind::Ks, counts(0, 0, 0));
    let ds = generate_split(&m, Split::Val).unwrap();
    let bytes = to_bytes(&ds);
    assert_eq!(bytes.len(), 45);
    assert_eq!(&bytes[..4], b"KAE1");
    assert_eq!(from_bytes(&bytes).unwrap(), ds);
}

#[test]
fn header_layout_is_little_endian() {
    let m = small_manifest(PdeKind::Burgers, counts(3, 0, 0));
    let ds = generate_split(&m, Split::Train).unwrap();
    let b = to_bytes(&ds);
    assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
    assert_eq!(b[8], 1);
    assert_eq!(u32::from_le_bytes(b[9..13].try_into().unwrap()), 32);
    assert_eq!(u32::from_le_bytes(b[13..17].try_into().unwrap()), 6);
    assert_eq!(f64::from_le_bytes(b[17..25].try_into().unwrap()), 0.002);
    assert_eq!(u32::from_le_bytes(b[41..45].try_into().unwrap()), 3);
    assert_eq!(b.len(), 45 + 3 * (1 + 8 + 6 * 32 * 8));
    // first trajectory record
    assert_eq!(b[45], IcFamily::WhiteNoise.tag());
    assert_eq!(u64::from_le_bytes(b[46..54].try_into().unwrap()), m.seed(Split::Train, 0));
    assert_eq!(f64::from_le_bytes(b[54..62].try_into().unwrap()), ds.trajectories[0].states.data()[0]);
}

#[test]
fn file_round_trip_is_bit_identical_and_regeneration_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_manifest(PdeKind::Fisher, counts(9, 3, 7));
    for split in Split::ALL {
        let ds = generate_split(&m, split).unwrap();
        let path = dir.path().join(format!("{split}.kae"));
        ds.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(back, ds);
        back.check_against(&m).unwrap();
        let again = generate_split(&m, split).unwrap();
        assert_eq!(to_bytes(&again), fs::read(&path).unwrap());
    }
    // no temporary files left behind
    let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 3, "{names:?}");
}

#[test]
fn truncated_and_corrupted_files_report_offsets() {
    let m = small_manifest(PdeKind::Fisher, counts(3, 0, 0));
    let bytes = to_bytes(&generate_split(&m, Split::Train).unwrap());
    for cut in [0, 3, 20, 44, 45, 100, bytes.len() - 1] {
        match from_bytes(&bytes[..cut]) {
            Err(Error::Format { offset, .. }) => assert!(offset <= cut as u64),
            other => panic!("cut {cut}: expected format error, got {other:?}"),
        }
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
    let mut bad = bytes.clone();
    bad[4] = 2;
    assert!(matches!(from_bytes(&bad), Err(Error::Format { offset: 4, .. })));
    let mut bad = bytes.clone();
    bad[45] = 99;
    assert!(matches!(from_bytes(&bad), Err(Error::Format { offset: 45, .. })));
    let mut long = bytes;
    long.push(0);
    assert!(matches!(from_bytes(&long), Err(Error::Format { offset: 45, .. })));
}

#[test]
fn load_of_missing_file_is_io_error() {
    assert!(matches!(Dataset::load("/nonexistent/x.kae".as_ref()), Err(Error::Io { .. })));
}

#[test]
fn batches_of_ten_by_four() {
    let b = batch_indices(10, 4, 3, 0).unwrap();
    assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
    assert_eq!(b, batch_indices(10, 4, 3, 0).unwrap());
    assert_ne!(b, batch_indices(10, 4, 3, 1).unwrap());
}

#[test]
fn batch_iterator_yields_stacked_tensors() {
    let m = small_manifest(PdeKind::Fisher, counts(9, 0, 0));
    let ds = generate_split(&m, Split::Train).unwrap();
    let it = ds.batches(4, 1, 2).unwrap();
    let idx = it.indices().to_vec();
    let batches: Vec<Tensor> = it.collect();
    assert_eq!(batches.len(), 3);
    assert_eq!(batches[2].shape(), &[1, 6, 32]);
    let first = idx[0][1];
    let per = 6 * 32;
    assert_eq!(&batches[0].data()[per..2 * per], ds.trajectories[first].states.data());
}

#[test]
fn csv_export_round_trips_values() {
    let m = small_manifest(PdeKind::Ks, counts(3, 0, 0));
    let ds = generate_split(&m, Split::Train).unwrap();
    let t: &Trajectory = &ds.trajectories[1];
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    write_trajectory_csv(t, &p).unwrap();
    let text = fs::read_to_string(&p).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 6);
    for (k, row) in rows.iter().enumerate() {
        let vals: Vec<f64> = row.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals, t.states.row(k));
    }
}

proptest! {
    #[test]
    fn batches_partition_the_index_set(len in 0usize..200, bs in 1usize..40, seed: u64, epoch in 0u64..50) {
        let b = batch_indices(len, bs, seed, epoch).unwrap();
        let all: Vec<usize> = b.iter().flatten().copied().collect();
        prop_assert_eq!(all.len(), len);
        let set: BTreeSet<usize> = all.into_iter().collect();
        prop_assert_eq!(set, (0..len).collect::<BTreeSet<_>>());
        prop_assert!(b.iter().rev().skip(1).all(|c| c.len() == bs));
    }

    #[test]
    fn random_payload_round_trips(vals in proptest::collection::vec(any::<f64>(), 2 * 8 * 2), seeds in proptest::array::uniform2(any::<u64>())) {
        let grid = Grid::new(8, -1.0, 1.0).unwrap();
        let trajectories = (0..2).map(|i| Trajectory {
            states: Tensor::matrix(2, 8, vals[i * 16..(i + 1) * 16].to_vec()).unwrap(),
            dt: 0.5,
            ic_kind: IcFamily::ALL[i],
            seed: seeds[i],
        }).collect();
        let ds = Dataset { pde: PdeKind::Ks, grid, steps: 2, dt: 0.5, trajectories };
        let bytes = to_bytes(&ds);
        let back = from_bytes(&bytes).unwrap();
        prop_assert_eq!(to_bytes(&back), bytes);
    }
}
