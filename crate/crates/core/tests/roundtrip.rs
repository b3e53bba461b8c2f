use fplab::harness::snapshot::Snapshot;
use fplab::harness::{ExperimentConfig, ExperimentKind};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn snapshot_bytes_roundtrip(shape in prop::collection::vec(1u64..6, 1..4), times in 1u64..4, seed in any::<u64>()) {
        let len = (shape.iter().product::<u64>() * times) as usize;
        let data: Vec<f64> = (0..len).map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2)).collect();
        let snap = Snapshot::new(shape, times, data).unwrap();
        let bytes = snap.to_bytes();
        let back = Snapshot::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), snap.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back.shape, snap.shape);
    }

    #[test]
    fn snapshot_detects_any_flipped_byte(pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let snap = Snapshot::new(vec![40], 3, (0..120).map(|i| i as f64 * 0.1).collect()).unwrap();
        let mut bytes = snap.to_bytes();
        let i = pos.index(bytes.len());
        bytes[i] ^= 1 << bit;
        prop_assert!(Snapshot::from_bytes(&bytes).is_err());
    }

    #[test]
    fn config_json_roundtrip(seed in any::<u64>(), points in 8usize..2048, horizon in 0.01f64..10.0, paths in 1usize..1_000_000) {
        let mut c = ExperimentConfig { kind: ExperimentKind::Superpose, seed, n_paths: paths, ..Default::default() };
        c.grid.points = points;
        c.time.horizon = horizon;
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        prop_assert_eq!(back.to_json(), c.to_json());
        prop_assert_eq!(back.time.horizon.to_bits(), horizon.to_bits());
    }
}
