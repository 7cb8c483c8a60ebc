use proptest::prelude::*;

use voltsense::metrics::{
    control_report, cwc, picp, pinaw, rmse, CwcParams, IntervalSeries, MetricsError,
};

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

#[test]
fn rmse_examples() {
    assert_eq!(rmse(&[0.3, -0.2, 0.1], &[0.3, -0.2, 0.1]).unwrap(), 0.0);
    assert!(close(rmse(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0));
    assert_eq!(rmse(&[0.0, 0.0], &[1.0, 0.0]), Err(MetricsError::ZeroNorm));
    assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn picp_examples() {
    let truth = vec![1.0; 10];
    let all_in = IntervalSeries::new(truth.clone(), vec![1.05; 10], vec![0.1; 10]).unwrap();
    assert_eq!(picp(&all_in), 1.0);
    let none_in = IntervalSeries::new(truth.clone(), vec![2.0; 10], vec![0.1; 10]).unwrap();
    assert_eq!(picp(&none_in), 0.0);
    let est: Vec<f64> = (0..10).map(|k| if k % 2 == 0 { 1.0 } else { 1.5 }).collect();
    let alternating = IntervalSeries::new(truth, est, vec![0.1; 10]).unwrap();
    assert!(close(picp(&alternating), 0.5));
}

#[test]
fn pinaw_examples() {
    let zero = IntervalSeries::new(vec![1.0, 2.0], vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
    assert_eq!(pinaw(&zero).unwrap(), 0.0);
    let half = IntervalSeries::new(vec![0.5, 2.0, 1.0], vec![0.0; 3], vec![1.0; 3]).unwrap();
    assert!(close(pinaw(&half).unwrap(), 1.0));
    let pair = IntervalSeries::with_k_max(vec![0.2, 0.4], vec![0.2, 0.4], vec![0.1, 0.3], 1.0).unwrap();
    assert!(close(pinaw(&pair).unwrap(), 0.4));
    let flat = IntervalSeries::new(vec![0.0, 0.0], vec![0.0, 0.0], vec![0.1, 0.1]).unwrap();
    assert_eq!(pinaw(&flat), Err(MetricsError::ZeroNorm));
}

#[test]
fn cwc_examples() {
    let p = CwcParams::default();
    assert!(close(cwc(1.0, 0.3, &p), 0.3));
    assert!(close(cwc(0.99, 0.3, &p), 0.3));
    let penalized = cwc(0.9, 0.2, &p);
    assert!(close(penalized, 0.2 * (1.0 + 4.5f64.exp())));
    assert!((penalized - 18.2).abs() < 0.05);
    let literal = CwcParams { literal: true, ..p };
    assert!(close(cwc(0.9, 0.2, &literal), 0.2));
}

#[test]
fn invalid_series_are_rejected() {
    assert_eq!(IntervalSeries::new(vec![], vec![], vec![]), Err(MetricsError::Empty));
    assert_eq!(
        IntervalSeries::new(vec![1.0, 1.0], vec![1.0, 1.0], vec![0.1, -0.1]),
        Err(MetricsError::NegativeWidth(1))
    );
    assert!(IntervalSeries::new(vec![1.0], vec![1.0, 1.0], vec![0.1]).is_err());
}

#[test]
fn control_report_recounts() {
    let voltages = vec![vec![1.00, 1.01], vec![1.04, 1.02], vec![0.98, 1.05], vec![0.94, 1.0]];
    let mpp = vec![vec![0.5]; 4];
    let p = vec![vec![0.5], vec![0.4], vec![0.3], vec![0.5]];
    let q = vec![vec![0.0], vec![-0.1], vec![-0.2], vec![0.0]];
    let r = control_report(&[3, 4], &voltages, &mpp, &p, &q, 1.0, (0.95, 1.03), 100e3);
    assert_eq!(r.steps, 4);
    assert_eq!(r.violation_steps, 3);
    assert_eq!(r.nodes[0].over_steps, 1);
    assert_eq!(r.nodes[0].under_steps, 1);
    assert_eq!(r.nodes[1].over_steps, 1);
    assert!(close(r.max_voltage, 1.05));
    assert!(close(r.min_voltage, 0.94));
    let to_kwh = 100e3 / 3.6e6;
    assert!(close(r.curtailed_kwh, 0.3 * to_kwh));
    assert!(close(r.reactive_kvarh, 0.3 * to_kwh));
    assert!(close(r.available_kwh, 2.0 * to_kwh));
}

fn series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(0.01f64..1.0, n),
            prop::collection::vec(-0.2f64..0.2, n),
            prop::collection::vec(0.0f64..0.2, n),
        )
    })
}

proptest! {
    #[test]
    fn metrics_are_scale_invariant((truth, noise, width) in series(), scale in 1e-3f64..1e3) {
        let est: Vec<f64> = truth.iter().zip(&noise).map(|(t, e)| t + e).collect();
        let a = IntervalSeries::new(truth.clone(), est.clone(), width.clone()).unwrap();
        let sc = |v: &[f64]| v.iter().map(|x| x * scale).collect::<Vec<_>>();
        let b = IntervalSeries::new(sc(&truth), sc(&est), sc(&width)).unwrap();
        prop_assert!((pinaw(&a).unwrap() - pinaw(&b).unwrap()).abs() < 1e-9);
        prop_assert!((rmse(&a.truth, &a.estimate).unwrap() - rmse(&b.truth, &b.estimate).unwrap()).abs() < 1e-9);
        // coverage may flip only for points sitting on the interval edge
        let edge = (0..a.len()).filter(|&k| ((a.truth[k] - a.estimate[k]).abs() - a.half_width[k]).abs() < 1e-12).count();
        prop_assert!((picp(&a) - picp(&b)).abs() <= edge as f64 / a.len() as f64);
    }

    #[test]
    fn cwc_penalizes_only_under_coverage(c in 0.0f64..1.0, w in 1e-6f64..2.0) {
        let p = CwcParams::default();
        let v = cwc(c, w, &p);
        if c >= p.alpha {
            prop_assert_eq!(v, w);
        } else {
            prop_assert!(v > w);
        }
    }

    #[test]
    fn picp_is_a_fraction((truth, noise, width) in series()) {
        let est: Vec<f64> = truth.iter().zip(&noise).map(|(t, e)| t + e).collect();
        let s = IntervalSeries::new(truth, est, width).unwrap();
        let c = picp(&s);
        prop_assert!((0.0..=1.0).contains(&c));
        let count = c * s.len() as f64;
        prop_assert!((count - count.round()).abs() < 1e-9);
    }
}
