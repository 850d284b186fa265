use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stockformer::eval::{
    directional_accuracy, evaluate, high_confidence_analysis, ic, rank_ic, select_output,
    DailyPrediction, OutputChoice, CONFIDENCE_THRESHOLD,
};

fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for i in 0..x.len() {
        sx += x[i];
        sy += y[i];
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        cov += (x[i] - mx) * (y[i] - my);
        vx += (x[i] - mx).powi(2);
        vy += (y[i] - my).powi(2);
    }
    cov / (vx * vy).sqrt()
}

/// Average rank by counting: 1 + #smaller + (#equal − 1) / 2.
fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let less = x.iter().filter(|w| *w < v).count() as f64;
            let equal = x.iter().filter(|w| *w == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

fn tied_sample(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| f64::from(rng.random_range(-4i32..=4)) * 0.5)
        .collect()
}

#[test]
fn correlations_match_brute_force_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0;
    while checked < 100 {
        let n = rng.random_range(3..=20);
        let x = tied_sample(&mut rng, n);
        let y: Vec<f64> = if rng.random::<bool>() {
            tied_sample(&mut rng, n)
        } else {
            (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
        };
        let (Some(p), Some(s)) = (ic(&x, &y), rank_ic(&x, &y)) else {
            continue;
        };
        assert!((p - brute_pearson(&x, &y)).abs() <= 1e-12);
        assert!((s - brute_pearson(&brute_ranks(&x), &brute_ranks(&y))).abs() <= 1e-12);
        checked += 1;
    }
}

#[test]
#[allow(clippy::approx_constant)]
fn published_confidence_pairs_follow_the_threshold() {
    let rows = [
        (0.6886, OutputChoice::Classification),
        (0.6797, OutputChoice::Classification),
        (0.2558, OutputChoice::Classification),
        (0.1139, OutputChoice::Regression),
        (0.0388, OutputChoice::Regression),
        (0.2422, OutputChoice::Classification),
        (0.6407, OutputChoice::Classification),
        (0.3771, OutputChoice::Classification),
        (0.3183, OutputChoice::Classification),
        (0.7132, OutputChoice::Classification),
        (0.0292, OutputChoice::Regression),
        (0.2599, OutputChoice::Classification),
        (0.1180, OutputChoice::Regression),
        (0.1297, OutputChoice::Regression),
    ];
    for (p, want) in rows {
        assert_eq!(
            select_output(p, CONFIDENCE_THRESHOLD),
            want,
            "proportion {p}"
        );
    }
}

#[test]
fn worked_examples() {
    assert_eq!(
        directional_accuracy(&[1.0, 1.0, 1.0, 0.0], &[1.0, 0.0, 1.0, 0.0]).unwrap(),
        75.0
    );
    let r = high_confidence_analysis(&[0.7, 0.5, 0.3, 0.55], CONFIDENCE_THRESHOLD);
    assert_eq!(r.high_confidence_proportion, 0.5);
    assert_eq!(r.selected_output, OutputChoice::Classification);
    assert!(directional_accuracy(&[], &[]).is_err());
}

#[test]
fn report_averages_daily_correlations() {
    let day = |scores: Vec<f64>, actual: Vec<f64>| DailyPrediction {
        pred_labels: scores
            .iter()
            .map(|s| f64::from(u8::from(*s > 0.0)))
            .collect(),
        actual_labels: actual
            .iter()
            .map(|a| f64::from(u8::from(*a > 0.0)))
            .collect(),
        scores,
        actual_returns: actual,
    };
    let days = [
        day(vec![0.1, 0.2, 0.3], vec![-0.01, 0.0, 0.01]),
        day(vec![0.1, 0.2, 0.3], vec![0.01, 0.0, -0.01]),
        day(vec![-0.1, 0.2, 0.3], vec![-0.01, 0.02, 0.01]),
    ];
    let report = evaluate(&days).unwrap();
    let third = brute_pearson(&[-0.1, 0.2, 0.3], &[-0.01, 0.02, 0.01]);
    assert!((report.ic_mean - third / 3.0).abs() < 1e-12);
    assert_eq!(report.n_days, 3);
    assert!((report.directional_accuracy - 100.0 * 5.0 / 9.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn correlations_are_transform_invariant(
        pairs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3..20),
        a in 0.1f64..5.0,
        b in -3.0f64..3.0,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let affine: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let monotone: Vec<f64> = x.iter().map(|v| (3.0 * v).exp() + v.powi(3)).collect();
        if let Some(base) = ic(&x, &y) {
            prop_assert!((ic(&affine, &y).unwrap() - base).abs() < 1e-9);
        }
        if let Some(base) = rank_ic(&x, &y) {
            prop_assert!((rank_ic(&monotone, &y).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn predictions_agree_with_themselves(labels in prop::collection::vec(0u8..=1, 1..50)) {
        let l: Vec<f64> = labels.into_iter().map(f64::from).collect();
        prop_assert_eq!(directional_accuracy(&l, &l).unwrap(), 100.0);
    }
}
