//! Statistical behaviour of the channel estimator.

use cvqkd_core::link::DetectorParams;
use cvqkd_core::postproc::{estimate_channel_eps, SiftedBlock};
use cvqkd_core::rng::rng;
use rand::Rng;
use rand_distr::StandardNormal;

const VA: f64 = 2.0;
const T: f64 = 0.06;
const XI: f64 = 0.04;

fn detector() -> DetectorParams {
    DetectorParams::new(0.5, 0.1).unwrap()
}

fn block(n: usize, seed: u64) -> SiftedBlock {
    let d = detector();
    let mut r = rng(seed);
    let gain = (d.efficiency * T).sqrt();
    let noise = (1.0 + d.electronic_noise_snu + d.efficiency * T * XI).sqrt();
    let alice: Vec<f64> = (0..n).map(|_| VA.sqrt() * r.sample::<f64, _>(StandardNormal)).collect();
    let bob = alice.iter().map(|a| gain * a + noise * r.sample::<f64, _>(StandardNormal)).collect();
    SiftedBlock::new(alice, bob).unwrap()
}

#[test]
fn mean_squared_error_scales_as_one_over_n() {
    let d = detector();
    let gain = (d.efficiency * T).sqrt();
    let sizes = [1_000usize, 10_000, 100_000];
    let mse: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let reps = 2_000_000 / n;
            (0..reps)
                .map(|k| {
                    let est = estimate_channel_eps(&block(n, (n * 10_000 + k) as u64), &d, VA, 1e-2).unwrap();
                    (est.t_hat - gain).powi(2)
                })
                .sum::<f64>()
                / reps as f64
        })
        .collect();
    let slope = (mse[2].ln() - mse[0].ln()) / ((sizes[2] as f64).ln() - (sizes[0] as f64).ln());
    assert!((slope + 1.0).abs() < 0.15, "slope {slope}, mse {mse:?}");
}

#[test]
fn worst_case_bounds_cover_truth() {
    let d = detector();
    let gain = (d.efficiency * T).sqrt();
    let sigma2 = 1.0 + d.electronic_noise_snu + d.efficiency * T * XI;
    let trials = 1000;
    let eps = 1e-2;
    let (mut t_ok, mut s_ok) = (0, 0);
    for k in 0..trials {
        let est = estimate_channel_eps(&block(5_000, 900_000 + k), &d, VA, eps).unwrap();
        t_ok += (est.t_low <= gain) as usize;
        s_ok += (est.sigma2_high >= sigma2) as usize;
        assert!(est.xi_high >= est.xi_hat);
    }
    // Each bound is two-sided at 1 − eps, so one-sided misses are ~eps/2.
    let floor = trials as f64 * (1.0 - eps) - 3.0 * (trials as f64 * eps).sqrt();
    assert!(t_ok as f64 >= floor, "t_low covered {t_ok}/{trials}");
    assert!(s_ok as f64 >= floor, "sigma2_high covered {s_ok}/{trials}");
}
