use flrq::blc::{alpha, scaled_flr};
use flrq::linalg::fro_norm;
use flrq::quantize::quantize_matrix;
use flrq::{
    flrq_layer, gen_layer, layer_error, select_rank, BlcConfig, CalibrationBatch, Family, LowRankFactors, Matrix,
    QuantMode, RankSelectionConfig, SketchRng, SynthSpec,
};

fn gaussian(m: usize, n: usize, seed: u64) -> Matrix {
    Matrix::new(m, n, SketchRng::new(seed).gaussian_vec(m * n)).unwrap()
}

#[test]
fn unit_alpha_single_pass_is_plain_composition() {
    let w = gaussian(32, 48, 1);
    let batch = CalibrationBatch::new(gaussian(48, 20, 2)).unwrap();
    let rank = RankSelectionConfig { x: 1.0, seed: 17, ..Default::default() };
    let cfg = BlcConfig {
        epochs: 1,
        activation_scaling: false,
        clip_grid: vec![1.0],
        group_size: 16,
        rank,
        ..BlcConfig::for_bits(4)
    };
    let layer = flrq_layer(&w, &batch, &cfg).unwrap();

    let (factors, _) = select_rank(&w, &rank).unwrap();
    let q = quantize_matrix(&w.sub(&factors.reconstruct()).unwrap(), 4, 16, QuantMode::Asymmetric).unwrap();
    assert_eq!(layer.factors, factors);
    assert_eq!(layer.quantized, q);
    assert!(layer.alpha.iter().all(|a| *a == 1.0));
}

#[test]
fn zero_memory_cap_is_clip_searched_quantization() {
    let w = gaussian(16, 32, 5);
    let batch = CalibrationBatch::new(gaussian(32, 10, 6)).unwrap();
    let cfg = BlcConfig {
        group_size: 16,
        rank: RankSelectionConfig { x: 0.0, ..Default::default() },
        ..BlcConfig::for_bits(3)
    };
    let layer = flrq_layer(&w, &batch, &cfg).unwrap();
    assert_eq!(layer.rank(), 0);
    let (_, q) = flrq::quantize::search_clip_with(
        &w,
        &batch.x,
        cfg.quant_spec().unwrap(),
        &cfg.clip_grid,
        cfg.clip_mode,
    )
    .unwrap();
    assert_eq!(layer.quantized, q);
}

#[test]
fn outlier_channel_scaling_helps_when_outliers_match() {
    // 32×32 W whose column 31 carries the outliers; alpha boosts that channel.
    let mut w = gaussian(32, 32, 8);
    for i in 0..32 {
        w.set(i, 31, w.get(i, 31) * 12.0);
    }
    let mut a = vec![1.0; 32];
    a[31] = 10.0;
    let cfg = RankSelectionConfig { x: 1.0, seed: 2, ..Default::default() };
    let (scaled, _) = scaled_flr(&w, &a, &cfg).unwrap();
    let (plain, _) = select_rank(&w, &cfg).unwrap();
    let err = |f: &LowRankFactors| fro_norm(&w.sub(&f.reconstruct()).unwrap());
    assert!(
        err(&scaled) <= err(&plain) + 1e-9,
        "scaled {} plain {}",
        err(&scaled),
        err(&plain)
    );
}

#[test]
fn two_bit_ordering_on_outlier_layers() {
    // Averaged over seeds: BLC ≤ single pass ≤ plain group quantization.
    let (mut blc, mut single, mut plain) = (0.0, 0.0, 0.0);
    let seeds = 10;
    for seed in 0..seeds {
        let s = gen_layer(&SynthSpec {
            m: 64,
            n: 64,
            family: Family::OutlierChannels { count: 2, boost: 10.0 },
            seed,
            tokens: 32,
        })
        .unwrap();
        let base = BlcConfig {
            group_size: 32,
            rank: RankSelectionConfig { d: 2, seed, ..Default::default() },
            ..BlcConfig::for_bits(2)
        };
        blc += flrq_layer(&s.weight, &s.calibration, &base).unwrap().error.rel;
        single += flrq_layer(&s.weight, &s.calibration, &BlcConfig { epochs: 1, ..base.clone() })
            .unwrap()
            .error
            .rel;
        let q = quantize_matrix(&s.weight, 2, 32, QuantMode::Asymmetric).unwrap();
        plain += layer_error(&s.weight, &q, &LowRankFactors::empty(64, 64), &s.calibration.x)
            .unwrap()
            .rel;
    }
    let n = seeds as f64;
    let (blc, single, plain) = (blc / n, single / n, plain / n);
    assert!(blc <= single, "blc {blc} single {single}");
    assert!(single <= plain, "single {single} plain {plain}");
}

#[test]
#[ignore = "does not hold: rank selection on the epoch-2 residual often recovers outlier components that epoch 1 missed"]
fn four_bit_converges_in_one_epoch() {
    let s = gen_layer(&SynthSpec {
        m: 256,
        n: 256,
        family: Family::OutlierChannels { count: 4, boost: 10.0 },
        seed: 2,
        tokens: 128,
    })
    .unwrap();
    let cfg = BlcConfig {
        epochs: 5,
        rank: RankSelectionConfig { seed: 2, ..Default::default() },
        ..BlcConfig::for_bits(4)
    };
    let layer = flrq_layer(&s.weight, &s.calibration, &cfg).unwrap();
    let first = layer.blc_trace[0].abs_error;
    assert!(layer.error.abs >= 0.99 * first, "best {} epoch-1 {first}", layer.error.abs);
}

#[test]
fn alpha_is_scale_free() {
    let mean = [0.5, 1.0, 2.0];
    let a = alpha(&mean, 2.5).unwrap();
    let b = alpha(&mean.map(|v| v * 3.0), 2.5).unwrap();
    for (x, y) in a.iter().zip(&b) {
        // x̄^2.5 / sqrt(max·min) scales by 3^1.5
        assert!((y / x - 3f64.powf(1.5)).abs() < 1e-12);
    }
}
