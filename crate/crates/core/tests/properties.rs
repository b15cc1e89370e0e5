use ngemm::{
    gemm_conventional, gemm_ngemm, gemm_ref, gemm_ref_saturating, kernel_shape, mat_random, pack_weights,
    unpack_weights, ElemKind, GemmProblem, IsaProfile, Permutation, SatMode, TileConfig, TuneRecord,
};
use proptest::prelude::*;

fn kinds() -> impl Strategy<Value = (ElemKind, ElemKind)> {
    prop_oneof![Just((ElemKind::U8, ElemKind::I8)), Just((ElemKind::I16, ElemKind::I16))]
}

fn isa() -> impl Strategy<Value = IsaProfile> {
    prop::sample::select(IsaProfile::ALL.to_vec())
}

fn perm() -> impl Strategy<Value = Permutation> {
    prop::sample::select(Permutation::ALL.to_vec())
}

fn full(kind: ElemKind, rows: usize, cols: usize, seed: u64) -> ngemm::MatrixBuf {
    let (lo, hi) = kind.range();
    mat_random(kind, rows, cols, seed, lo, hi).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pack_unpack_round_trips(
        (ak, _) in kinds(), isa in isa(), p in perm(),
        m in 1usize..40, k in 1usize..90, alpha in 1usize..4, beta in 1usize..4, seed in any::<u64>(),
    ) {
        let shape = kernel_shape(isa, ak).unwrap();
        let tile = TileConfig::from_multipliers(&shape, alpha, beta, 4, p);
        let a = full(ak, m, k, seed);
        let packed = pack_weights(&a, shape, tile).unwrap();
        packed.verify_padding().unwrap();
        prop_assert_eq!(packed.m_pad() % tile.tm, 0);
        prop_assert_eq!(packed.k_pad() % tile.tk, 0);
        prop_assert_eq!(unpack_weights(&packed).unwrap(), a);
    }

    #[test]
    fn offset_and_coord_are_inverse(
        (ak, _) in kinds(), isa in isa(), p in perm(),
        m in 1usize..30, k in 1usize..70, alpha in 1usize..3, beta in 1usize..3,
    ) {
        let shape = kernel_shape(isa, ak).unwrap();
        let tile = TileConfig::from_multipliers(&shape, alpha, beta, 4, p);
        let packed = pack_weights(&mat_random(ak, m, k, 0, 0, 0).unwrap(), shape, tile).unwrap();
        let mut seen = vec![false; packed.m_pad() * packed.k_pad()];
        for r in 0..packed.m_pad() {
            for c in 0..packed.k_pad() {
                let off = packed.offset_of(r, c);
                prop_assert!(!seen[off]);
                seen[off] = true;
                prop_assert_eq!(packed.coord_of(off), (r, c));
            }
        }
    }

    #[test]
    fn exact_kernels_match_reference(
        (ak, bk) in kinds(), isa in isa(), p in perm(),
        m in 1usize..24, n in 1usize..12, k in 1usize..80, seed in any::<u64>(),
    ) {
        let a = full(ak, m, k, seed);
        let b = full(bk, n, k, seed.wrapping_add(1));
        let shape = kernel_shape(isa, ak).unwrap();
        let problem = GemmProblem::new(m, n, k, ak, bk).unwrap();
        let expect = gemm_ref(&a, &b, &problem).unwrap();
        prop_assert_eq!(&gemm_conventional(&a, &b, &shape, SatMode::WideningExact).unwrap(), &expect);
        let tile = TileConfig::from_multipliers(&shape, 1, 1, 4, p);
        let packed = pack_weights(&a, shape, tile).unwrap();
        prop_assert_eq!(&gemm_ngemm(&packed, &b, SatMode::WideningExact).unwrap(), &expect);
    }

    #[test]
    fn saturating_kernels_agree(
        isa in isa(), p in perm(), m in 1usize..20, n in 1usize..10, k in 1usize..70, seed in any::<u64>(),
    ) {
        let a = full(ElemKind::U8, m, k, seed);
        let b = full(ElemKind::I8, n, k, seed ^ 0x55);
        let shape = kernel_shape(isa, ElemKind::U8).unwrap();
        let problem = GemmProblem::new(m, n, k, ElemKind::U8, ElemKind::I8).unwrap();
        let expect = gemm_ref_saturating(&a, &b, &problem).unwrap();
        prop_assert_eq!(&gemm_conventional(&a, &b, &shape, SatMode::HardwareSaturating).unwrap(), &expect);
        let packed = pack_weights(&a, shape, TileConfig::from_multipliers(&shape, 2, 1, 3, p)).unwrap();
        prop_assert_eq!(&gemm_ngemm(&packed, &b, SatMode::HardwareSaturating).unwrap(), &expect);
    }

    #[test]
    fn tune_record_round_trips(
        (ak, bk) in kinds(), isa in isa(), p in perm(),
        m in 1usize..5000, n in 1usize..5000, k in 1usize..5000,
        alpha in 1usize..8, beta in 1usize..8, tn in 1usize..128,
        median_ns in any::<u64>(), trials in 1usize..1000, timestamp in any::<u64>(),
    ) {
        let shape = kernel_shape(isa, ak).unwrap();
        let rec = TuneRecord {
            problem: GemmProblem::new(m, n, k, ak, bk).unwrap(),
            isa,
            best: TileConfig::from_multipliers(&shape, alpha, beta, tn, p),
            median_ns,
            trials,
            timestamp,
        };
        let back: TuneRecord = rec.to_string().parse().unwrap();
        prop_assert_eq!(back, rec);
    }
}
