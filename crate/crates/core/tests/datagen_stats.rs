use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use core_elements::datagen::{
    gen_design, gen_misspecified, gen_response, generate, inject_outliers, misspec_term, outlier_group_sizes,
    replication_rng, sparsify, train_test_split, DatagenError, DesignDistribution, ExperimentConfig, Misspec,
    MisspecConfig, OutlierKind,
};
use core_elements::matrix::DesignMatrix;

fn config(n: usize, p: usize, dist: DesignDistribution) -> ExperimentConfig {
    ExperimentConfig::new(n, p, dist, 1.0, 0)
}

fn design(n: usize, p: usize, dist: DesignDistribution, seed: u64) -> DesignMatrix {
    gen_design(&config(n, p, dist), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

#[test]
fn normal_marginal_passes_ks() {
    let x = design(5000, 1, DesignDistribution::D1, 1);
    let mut v = x.col(0).to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let cdf = Normal::standard();
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let f = cdf.cdf(a);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0f64, f64::max);
    // Critical value at level 0.001.
    assert!(d < 1.95 / n.sqrt(), "KS statistic {d}");
}

#[test]
fn adjacent_columns_have_ar_correlation() {
    let x = design(10_000, 4, DesignDistribution::D1, 2);
    for j in 0..3 {
        let (a, b) = (x.col(j), x.col(j + 1));
        let cov: f64 = a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>() / (a.len() - 1) as f64;
        let corr = cov / (var(a) * var(b)).sqrt();
        assert!((corr - 0.6).abs() < 0.05, "corr({j},{}) = {corr}", j + 1);
    }
}

#[test]
fn designs_are_centered() {
    for dist in [DesignDistribution::D1, DesignDistribution::D2, DesignDistribution::D3] {
        let x = design(2000, 5, dist, 3);
        assert!(x.is_centered());
        for (j, m) in x.column_means().iter().enumerate() {
            let scale = x.col(j).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(m.abs() <= 1e-12 * scale.max(1.0), "{dist:?} column {j} mean {m}");
        }
    }
}

#[test]
fn t3_design_is_heavy_tailed() {
    let x = design(20_000, 1, DesignDistribution::D3, 4);
    let v = x.col(0);
    let m2 = var(v);
    let m4 = v.iter().map(|a| a.powi(4)).sum::<f64>() / v.len() as f64;
    assert!(m4 / (m2 * m2) - 3.0 > 1.0);
    let ln = design(20_000, 1, DesignDistribution::D2, 5);
    let skew_num = ln.col(0).iter().map(|a| a.powi(3)).sum::<f64>() / 20_000.0;
    assert!(skew_num > 0.0);
}

#[test]
fn sparsify_replaces_expected_count() {
    let x = design(10_000, 100, DesignDistribution::D1, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = sparsify(&x, 0.2, 1e-2, &mut rng).unwrap();
    let mut replaced = Vec::new();
    for j in 0..100 {
        for (a, b) in x.col(j).iter().zip(s.col(j)) {
            if a != b {
                replaced.push(*b);
            }
        }
    }
    assert_eq!(replaced.len(), 800_000);
    let sd = var(&replaced).sqrt();
    assert!((0.009..=0.011).contains(&sd), "perturbation sd {sd}");

    let same = sparsify(&x, 1.0, 1e-2, &mut rng).unwrap();
    assert_eq!(same, x);
    assert!(matches!(sparsify(&x, 0.0, 1e-2, &mut rng), Err(DatagenError::InvalidConfig(_))));
}

#[test]
fn response_snr_is_calibrated() {
    let x = design(20_000, 5, DesignDistribution::D1, 8);
    let beta = vec![1.0; 5];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (y, sigma2) = gen_response(&x, &beta, 4.0, &mut rng).unwrap();
    let signal = x.matvec(&beta);
    let noise: Vec<f64> = y.iter().zip(&signal).map(|(a, b)| a - b).collect();
    let snr = var(&signal) / var(&noise);
    assert!((3.5..=4.5).contains(&snr), "snr {snr}");
    assert!((var(&signal) / sigma2 - 4.0).abs() < 1e-12);
    assert!(gen_response(&x, &beta, 0.0, &mut rng).is_err());
}

#[test]
fn misspecification_is_calibrated() {
    let x = design(500, 8, DesignDistribution::D1, 10);
    for kind in [Misspec::H1, Misspec::H2, Misspec::H3] {
        let h = misspec_term(&x, MisspecConfig { kind, amplitude: 10.0 }).unwrap();
        let peak = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!((peak - 10.0).abs() < 1e-12);
    }
    let h3 = misspec_term(&x, MisspecConfig { kind: Misspec::H3, amplitude: 10.0 }).unwrap();
    assert!(h3.iter().all(|v| *v >= 0.0));
    let small = design(100, 4, DesignDistribution::D1, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = MisspecConfig { kind: Misspec::H1, amplitude: 10.0 };
    assert!(matches!(
        gen_misspecified(&small, &[1.0; 4], 4.0, cfg, &mut rng),
        Err(DatagenError::DimensionTooSmall { needed: 8, p: 4, .. })
    ));
}

#[test]
fn outlier_groups_and_regimes() {
    assert_eq!(outlier_group_sizes(19), [5, 5, 5, 4]);
    assert_eq!(outlier_group_sizes(4), [1, 1, 1, 1]);
    assert_eq!(outlier_group_sizes(2), [1, 1, 0, 0]);
    assert_eq!(outlier_group_sizes(0), [0, 0, 0, 0]);

    let x = design(1000, 4, DesignDistribution::D1, 12);
    let beta = vec![1.0; 4];
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (y, s2) = gen_response(&x, &beta, 4.0, &mut rng).unwrap();
    let ds = inject_outliers(x, y, &beta, s2, 19, &mut rng).unwrap();
    assert_eq!(ds.outliers.len(), 19);
    assert_eq!(ds.informative.len(), 981);
    for kind in [OutlierKind::O1, OutlierKind::O2, OutlierKind::O3, OutlierKind::O4] {
        let c = ds.outlier_kinds.iter().filter(|k| **k == kind).count();
        assert_eq!(c, if kind == OutlierKind::O4 { 4 } else { 5 });
    }
    for (&i, kind) in ds.outliers.iter().zip(&ds.outlier_kinds) {
        let row = ds.x.row(i);
        match kind {
            OutlierKind::O1 => {
                assert!(row.iter().all(|v| (-16.0..=-4.0).contains(v)));
                assert!((940.0..=1060.0).contains(&ds.y[i]));
            }
            OutlierKind::O2 => {
                assert!(row.iter().all(|v| (4.0..=16.0).contains(v)));
                assert!((-560.0..=-440.0).contains(&ds.y[i]));
            }
            OutlierKind::O3 => {
                assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
                assert!(ds.y[i] == 0.0 || ds.y[i] == 1.0);
            }
            OutlierKind::O4 => {}
        }
    }
}

#[test]
fn split_partitions_informative_rows() {
    let mut cfg = config(1000, 5, DesignDistribution::D1);
    cfg.n_outliers = 10;
    let ds = generate(&cfg, &mut replication_rng(1, 0)).unwrap();
    let split = |seed| train_test_split(&ds, 0.7, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let (train, test) = split(5);
    assert_eq!(test.rows.len(), 990 - 693);
    assert_eq!(train.rows.len(), 693 + 10);
    let mut all: Vec<usize> = train.rows.iter().chain(&test.rows).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..1000).collect::<Vec<_>>());
    assert!(ds.outliers.iter().all(|o| train.rows.contains(o)));
    for (k, &i) in test.rows.iter().enumerate() {
        assert_eq!(test.y[k], ds.y[i]);
        assert_eq!(test.x.get(k, 0), ds.x.get(i, 0));
    }
    assert_eq!(split(5), split(5));
    assert_ne!(split(5).1.rows, split(6).1.rows);
    assert!(train_test_split(&ds, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn generation_is_reproducible() {
    let mut cfg = config(300, 6, DesignDistribution::D3);
    cfg.alpha = 0.5;
    cfg.n_outliers = 5;
    let a = generate(&cfg, &mut replication_rng(42, 3)).unwrap();
    let b = generate(&cfg, &mut replication_rng(42, 3)).unwrap();
    let c = generate(&cfg, &mut replication_rng(42, 4)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.y, c.y);
}

#[test]
fn invalid_configs_rejected() {
    let mut rng = replication_rng(0, 0);
    assert!(generate(&config(5, 5, DesignDistribution::D1), &mut rng).is_err());
    let mut cfg = config(100, 3, DesignDistribution::D1);
    cfg.beta_true = Some(vec![1.0; 2]);
    assert!(generate(&cfg, &mut rng).is_err());
    let mut cfg = config(100, 3, DesignDistribution::D1);
    cfg.n_outliers = 100;
    assert!(generate(&cfg, &mut rng).is_err());
}
