use fusescan_core::geometry::{downsample_voxels, voxelize, CentroidMode, GridSpec, PointCloud};
use fusescan_core::hybrid::pos_embedding;
use fusescan_core::numerics::rms_norm;
use fusescan_core::serialization::{CurveOrder, Paradigm, Permutation};
use fusescan_core::ssm::{hippo_init, selective_scan_parallel_with, selective_scan_seq};
use fusescan_core::{SeededRng, Tensor};
use proptest::prelude::*;

fn paradigm() -> impl Strategy<Value = Paradigm> {
    prop_oneof![Just(Paradigm::Hilbert), Just(Paradigm::Zorder), Just(Paradigm::Coordinate)]
}

fn cloud(seed: u64, n: usize) -> PointCloud {
    let mut rng = SeededRng::new(seed);
    let xs = rng.uniform_vec(3 * n, 0.0, 8.0);
    let points = xs.chunks(3).map(|c| [c[0], c[1], c[2] * 0.5]).collect();
    PointCloud::new(points, Some(rng.uniform_vec(n, 0.0, 1.0))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn curve_index_inverts(p in paradigm(), order in 1u32..8, raw in any::<[u64; 3]>()) {
        let curve = CurveOrder::new(p, order).unwrap();
        let cell = raw.map(|v| v % curve.side());
        let i = curve.index(cell).unwrap();
        prop_assert!(i < curve.cell_count());
        prop_assert_eq!(curve.inverse(i).unwrap(), cell);
    }

    #[test]
    fn permutation_round_trips(seed in any::<u64>(), n in 1usize..200) {
        let mut order: Vec<usize> = (0..n).collect();
        SeededRng::new(seed).shuffle(&mut order);
        let p = Permutation::from_order(order).unwrap();
        let items: Vec<u32> = (0..n as u32).map(|v| v * 3 + 1).collect();
        prop_assert_eq!(p.unapply(&p.apply(&items)), items);
    }

    #[test]
    fn parallel_scan_matches_sequential(seed in any::<u64>(), n in 1usize..300, chunks in 1usize..40) {
        let mut rng = SeededRng::new(seed);
        let params = hippo_init(3, 4, &mut rng.fork(1)).unwrap();
        let x = Tensor::new(vec![n, 3], rng.uniform_vec(n * 3, -2.0, 2.0)).unwrap();
        let a = selective_scan_parallel_with(&params, &x, chunks).unwrap();
        let b = selective_scan_seq(&params, &x).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            prop_assert!((u - v).abs() <= 1e-10 * v.abs().max(1.0));
        }
    }

    #[test]
    fn continuous_downsampling_conserves_centroid(seed in any::<u64>(), n in 1usize..400, fz in 1u64..4) {
        let grid = GridSpec::new([0.0; 3], [8.0, 8.0, 4.0], [0.5, 0.5, 0.25]).unwrap();
        let vs = voxelize(&cloud(seed, n), &grid).unwrap();
        vs.check_invariants().unwrap();
        prop_assert_eq!(vs.counts().iter().sum::<u64>(), n as u64);
        let down = downsample_voxels(&vs, [2, 2, fz], CentroidMode::Continuous).unwrap();
        down.check_invariants().unwrap();
        prop_assert!(down.len() <= vs.len());
        let (g0, g1) = (vs.global_centroid(), down.global_centroid());
        for a in 0..3 {
            prop_assert!((g0[a] - g1[a]).abs() <= 1e-12 * g0[a].abs().max(1.0));
        }
    }

    #[test]
    fn byte_formats_round_trip(seed in any::<u64>(), n in 1usize..50) {
        let pc = cloud(seed, n);
        let f32_points: Vec<[f64; 3]> = pc.points().iter().map(|p| p.map(|v| v as f32 as f64)).collect();
        let f32_int: Vec<f64> = pc.intensity().unwrap().iter().map(|&v| v as f32 as f64).collect();
        let back = PointCloud::read_from(pc.to_bytes().as_slice()).unwrap();
        prop_assert_eq!(back.points(), f32_points.as_slice());
        prop_assert_eq!(back.intensity(), Some(f32_int.as_slice()));
        let t = Tensor::new(vec![n, 2], SeededRng::new(seed).uniform_vec(2 * n, -1e6, 1e6)).unwrap();
        prop_assert_eq!(Tensor::<f64>::read_from(t.to_bytes().as_slice()).unwrap(), t);
    }

    #[test]
    fn rms_norm_is_scale_invariant(seed in any::<u64>(), scale in 0.1f64..100.0) {
        let x = Tensor::new(vec![5, 4], SeededRng::new(seed).uniform_vec(20, -1.0, 1.0)).unwrap();
        let scaled = Tensor::new(vec![5, 4], x.data().iter().map(|v| v * scale).collect()).unwrap();
        let (a, _) = rms_norm(&x, 0.0).unwrap();
        let (b, _) = rms_norm(&scaled, 0.0).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn pos_embedding_is_deterministic_and_bounded(seed in any::<u64>(), n in 1usize..40) {
        let xs = SeededRng::new(seed).uniform_vec(3 * n, 0.0, 1.0);
        let coords: Vec<[f64; 3]> = xs.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        let a = pos_embedding(&coords, 12, 2).unwrap();
        prop_assert_eq!(&a, &pos_embedding(&coords, 12, 2).unwrap());
        prop_assert!(a.data().iter().all(|v| v.abs() <= 1.0));
    }
}

#[test]
fn empty_point_cloud_reads_back_without_intensity() {
    let empty = PointCloud::new(Vec::new(), None).unwrap();
    assert_eq!(PointCloud::read_from(empty.to_bytes().as_slice()).unwrap(), empty);
}
