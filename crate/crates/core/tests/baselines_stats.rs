use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use core_elements::baselines::{blev, iboss, leverage_probabilities, slev, unif, BaselineError, RowSample};
use core_elements::estimators::{leverage_scores, ols_full};
use core_elements::matrix::DesignMatrix;

fn gaussian_design(seed: u64, n: usize, p: usize) -> DesignMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    DesignMatrix::new(n, p, data).unwrap()
}

/// Pearson goodness-of-fit p-value of `rows` against `probs`.
fn gof_p_value(rows: &[usize], probs: &[f64]) -> f64 {
    let mut counts = vec![0usize; probs.len()];
    for &i in rows {
        counts[i] += 1;
    }
    let total = rows.len() as f64;
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = total * p;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let df = (probs.len() - 1) as f64;
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}

const DRAWS: usize = 100_000;

#[test]
fn unif_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = unif(25, DRAWS, &mut rng).unwrap();
    assert_eq!(s.rows.len(), DRAWS);
    let pv = gof_p_value(&s.rows, &[1.0 / 25.0; 25]);
    assert!(pv > 1e-3, "p-value {pv}");
}

#[test]
fn blev_frequencies_follow_leverage() {
    let x = gaussian_design(2, 30, 3);
    let h = leverage_scores(&x).unwrap();
    let probs: Vec<f64> = h.iter().map(|v| v / 3.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = blev(&x, DRAWS, &mut rng).unwrap();
    let stored = s.probabilities.as_ref().unwrap();
    for (a, b) in stored.iter().zip(&probs) {
        assert!((a - b).abs() < 1e-12);
    }
    let pv = gof_p_value(&s.rows, &probs);
    assert!(pv > 1e-3, "p-value {pv}");
}

#[test]
fn slev_frequencies_and_formula() {
    let x = gaussian_design(4, 30, 3);
    let h = leverage_scores(&x).unwrap();
    let hand: Vec<f64> = h.iter().map(|v| 0.9 * v / 3.0 + 0.1 / 30.0).collect();
    let probs = leverage_probabilities(&x, 0.9).unwrap();
    for (a, b) in probs.iter().zip(&hand) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = slev(&x, DRAWS, 0.9, &mut rng).unwrap();
    let pv = gof_p_value(&s.rows, &hand);
    assert!(pv > 1e-3, "p-value {pv}");
}

#[test]
fn invalid_shrinkage_rejected() {
    let x = gaussian_design(6, 10, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for l in [0.0, -0.5, 1.5, f64::NAN] {
        assert!(matches!(slev(&x, 5, l, &mut rng), Err(BaselineError::InvalidShrinkage(_))));
    }
    assert!(matches!(unif(10, 0, &mut rng), Err(BaselineError::EmptySample)));
}

#[test]
fn seeded_samplers_are_deterministic() {
    let x = gaussian_design(7, 50, 4);
    let draw = |seed: u64| -> Vec<RowSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        vec![
            unif(50, 20, &mut rng).unwrap(),
            blev(&x, 20, &mut rng).unwrap(),
            slev(&x, 20, 0.9, &mut rng).unwrap(),
        ]
    };
    assert_eq!(draw(11), draw(11));
    assert_ne!(draw(11), draw(12));
    assert_eq!(iboss(&x, 16).unwrap(), iboss(&x, 16).unwrap());
}

#[test]
fn iboss_distinct_rows_and_extremes() {
    for (n, p, r) in [(100, 4, 40), (100, 4, 37), (20, 3, 20), (50, 5, 7), (30, 2, 1)] {
        let x = gaussian_design(n as u64 + r as u64, n, p);
        let s = iboss(&x, r).unwrap();
        assert_eq!(s.rows.len(), r);
        let mut sorted = s.rows.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), r);
        assert!(s.probabilities.is_none());
    }
    let x = gaussian_design(9, 10, 2);
    assert!(matches!(iboss(&x, 11), Err(BaselineError::InsufficientRows { r: 11, n: 10 })));

    // First column picks its max and min before the second column is visited.
    let x = DesignMatrix::from_rows(&[[0.0, 9.0], [5.0, 0.0], [-5.0, 1.0], [1.0, -9.0], [2.0, 3.0]]).unwrap();
    let s = iboss(&x, 4).unwrap();
    let mut rows = s.rows.clone();
    rows.sort_unstable();
    assert_eq!(rows, vec![0, 1, 2, 3]);
}

#[test]
fn full_inclusion_weights_recover_ols() {
    // Drawing every row once under uniform probabilities is plain OLS.
    let x = gaussian_design(10, 40, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
    let s = RowSample {
        rows: (0..40).collect(),
        probabilities: Some(vec![1.0 / 40.0; 40]),
        method: core_elements::baselines::SamplerKind::Unif,
    };
    let fit = s.fit(&x, &y).unwrap().beta;
    let ols = ols_full(&x, &y).unwrap().beta;
    for (a, b) in fit.iter().zip(&ols) {
        assert!((a - b).abs() < 1e-10);
    }
}
