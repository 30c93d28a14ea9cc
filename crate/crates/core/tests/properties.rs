use flrq::io::{pack_codes, unpack_codes, TensorContainer, TensorData};
use flrq::linalg::{amax, fro_norm, gemv, gemv_t, svd_oracle, Matrix};
use flrq::quantize::{clip, code_range, dequantize, quantize_with, search_clip, QuantMode, QuantSpec};
use flrq::rankselect::{qk, select_rank, RankSelectionConfig};
use flrq::sketch::{deflate, r1_step, SketchConfig};
use flrq::SketchRng;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn gaussian(m: usize, n: usize, seed: u64) -> Matrix {
    Matrix::new(m, n, SketchRng::new(seed).gaussian_vec(m * n)).unwrap()
}

fn to_na(a: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.data())
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..12, 1usize..12)
}

fn modes() -> impl Strategy<Value = QuantMode> {
    prop_oneof![Just(QuantMode::Symmetric), Just(QuantMode::Asymmetric)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gemv_t_is_gemv_of_transpose((m, n) in dims(), seed in any::<u64>()) {
        let a = gaussian(m, n, seed);
        let x = SketchRng::new(seed ^ 1).gaussian_vec(m);
        let y = gemv_t(&a, &x).unwrap();
        let z = gemv(&a.transpose(), &x).unwrap();
        for (p, q) in y.iter().zip(&z) {
            prop_assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn amax_and_frobenius_bound_each_other((m, n) in dims(), seed in any::<u64>()) {
        let a = gaussian(m, n, seed);
        let (mx, fr) = (amax(&a).unwrap(), fro_norm(&a));
        prop_assert!(mx <= fr + 1e-15);
        prop_assert!(fr <= ((m * n) as f64).sqrt() * mx + 1e-12);
    }

    #[test]
    fn svd_matches_eigen_decomposition((m, n) in dims(), seed in any::<u64>()) {
        let a = gaussian(m, n, seed);
        let svd = svd_oracle(&a).unwrap();
        let na = to_na(&a);
        let gram = if m >= n { na.transpose() * &na } else { &na * na.transpose() };
        let mut eig: Vec<f64> = gram.symmetric_eigen().eigenvalues.iter().map(|v| v.max(0.0)).collect();
        eig.sort_by(|x, y| y.total_cmp(x));
        let top = eig[0].max(1e-300);
        for (s, e) in svd.singular_values.iter().zip(&eig) {
            prop_assert!((s * s - e).abs() <= 1e-8 * top, "σ² {} vs λ {}", s * s, e);
        }
        for w in svd.singular_values.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        let recon = svd.truncated(svd.singular_values.len());
        prop_assert!(fro_norm(&a.sub(&recon).unwrap()) <= 1e-10 * (1.0 + fro_norm(&a)));
    }

    #[test]
    fn truncation_is_optimal((m, n) in (2usize..10, 2usize..10), seed in any::<u64>(), r in 1usize..4) {
        let a = gaussian(m, n, seed);
        let r = r.min(m.min(n));
        let svd = svd_oracle(&a).unwrap();
        let best = fro_norm(&a.sub(&svd.truncated(r)).unwrap());
        prop_assert!((best - svd.tail_norm(r)).abs() <= 1e-10 * (1.0 + best));
        let sketch = deflate(&a, r, &SketchConfig { it: 1, seed, reorthogonalize: false }).unwrap();
        let greedy = fro_norm(&a.sub(&sketch.factors.reconstruct()).unwrap());
        prop_assert!(best <= greedy + 1e-10);
    }

    #[test]
    fn deflation_residual_never_grows((m, n) in (2usize..16, 2usize..16), seed in any::<u64>(), it in 0usize..3) {
        let a = gaussian(m, n, seed);
        let r = m.min(n);
        let d = deflate(&a, r, &SketchConfig { it, seed, reorthogonalize: false }).unwrap();
        for w in d.residual_norms.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn sketch_matches_straight_line_oracle((m, n) in (1usize..10, 1usize..10), seed in any::<u64>(), it in 0usize..4) {
        // P = (A Aᵀ)^it A S, K = Aᵀ P without intermediate rescaling.
        let a = gaussian(m, n, seed);
        let cfg = SketchConfig { it, seed: 0, reorthogonalize: false };
        let pair = r1_step(&a, &cfg, &mut SketchRng::new(seed ^ 0x5eed)).unwrap();
        let s = DMatrix::from_column_slice(n, 1, &SketchRng::new(seed ^ 0x5eed).gaussian_vec(n));
        let na = to_na(&a);
        let mut p = &na * s;
        for _ in 0..it {
            p = &na * (na.transpose() * p);
        }
        let k = na.transpose() * &p;
        let left = &p * (k.norm() / p.norm_squared());
        let right = &k / k.norm();
        for (x, y) in pair.left.iter().zip(left.iter()) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + left.norm()));
        }
        for (x, y) in pair.right.iter().zip(right.iter()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn rounding_error_is_half_a_step(
        (m, n) in dims(),
        seed in any::<u64>(),
        bits in 2u8..=4,
        group in 1usize..9,
        mode in modes(),
        scale in 1e-3f64..1e3,
    ) {
        let a = Matrix::new(m, n, gaussian(m, n, seed).data().iter().map(|v| v * scale).collect()).unwrap();
        let spec = QuantSpec::new(bits, group, mode).unwrap();
        let q = quantize_with(&a, spec).unwrap();
        let deq = dequantize(&q);
        let (lo, hi) = code_range(spec);
        for i in 0..m {
            for j in 0..n {
                let step = q.scales()[q.group_of(i, j)];
                prop_assert!((a.get(i, j) - deq.get(i, j)).abs() <= step / 2.0 + 1e-12 * (1.0 + scale));
                let c = q.codes()[i * n + j] as i32;
                prop_assert!(lo <= c && c <= hi);
            }
        }
    }

    #[test]
    fn clipping_is_idempotent((m, n) in dims(), seed in any::<u64>(), p in 0.01f64..3.0) {
        let a = gaussian(m, n, seed);
        let once = clip(&a, p).unwrap();
        prop_assert_eq!(clip(&once, p).unwrap(), once.clone());
        prop_assert!(amax(&once).unwrap() <= p);
    }

    #[test]
    fn clip_search_never_loses_to_no_clip(seed in any::<u64>(), bits in 2u8..=4, mode in modes()) {
        let w = gaussian(6, 16, seed);
        let x = gaussian(16, 5, seed ^ 7);
        let spec = QuantSpec::new(bits, 8, mode).unwrap();
        let res = search_clip(&w, &x, spec, &[1.0, 0.95, 0.9, 0.8, 0.7]).unwrap();
        // grid order: the first entry is the unclipped ratio 1.0
        let at_one = res.grid_errors[0].1;
        let chosen = res.grid_errors.iter().find(|(p, _)| *p == res.p_clp).unwrap().1;
        prop_assert!(chosen <= at_one);
    }

    #[test]
    fn pack_round_trip(bits in 2u8..=4, raw in prop::collection::vec(any::<u8>(), 0..200)) {
        let codes: Vec<u8> = raw.iter().map(|c| c & ((1 << bits) - 1)).collect();
        let packed = pack_codes(&codes, bits).unwrap();
        prop_assert_eq!(unpack_codes(&packed, bits, codes.len()).unwrap(), codes);
    }

    #[test]
    fn container_round_trip_is_bit_exact(dims in prop::collection::vec(0u64..5, 0..4), seed in any::<u64>()) {
        let count: u64 = dims.iter().product();
        let bits: Vec<u64> = {
            let mut rng = SketchRng::new(seed);
            rng.gaussian_vec(count as usize).iter().map(|v| v.to_bits() ^ seed).collect()
        };
        let values: Vec<f64> = bits.iter().map(|b| f64::from_bits(*b)).collect();
        let c = TensorContainer::new(dims.clone(), TensorData::F64(values)).unwrap();
        let back = TensorContainer::from_bytes(&c.to_bytes()).unwrap();
        let TensorData::F64(got) = back.data() else { panic!("dtype changed") };
        prop_assert_eq!(got.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), bits);
        prop_assert_eq!(back.dims(), &dims[..]);
    }

    #[test]
    fn selected_rank_respects_memory_cap(
        (m, n) in (4usize..24, 4usize..24),
        seed in any::<u64>(),
        d in 2u8..=4,
        x in 0.0f64..1.5,
    ) {
        let w = gaussian(m, n, seed);
        let cfg = RankSelectionConfig { d, x, seed, ..Default::default() };
        let (f, trace) = select_rank(&w, &cfg).unwrap();
        prop_assert_eq!(f.rank(), trace.selected_rank);
        let (_, k) = qk(d, cfg.d_fp, m, n, f.rank(), 1.0, 1.0).unwrap();
        prop_assert!(k <= 1.0 + x + 1e-12);
        for rec in &trace.records[..f.rank()] {
            prop_assert!(rec.q > rec.k);
        }
    }
}
