//! χ(B:E) against a direct covariance-matrix computation: entangling cloner,
//! detector inefficiency as a beamsplitter fed by half of an EPR pair, homodyne
//! conditioning by Schur complement, symplectic spectra from the eigenvalues
//! of Ωγ.

use cvqkd_core::keyrate::{g_entropy, holevo_bound, symplectic_eigenvalues};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn omega(modes: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(2 * modes, 2 * modes);
    for k in 0..modes {
        w[(2 * k, 2 * k + 1)] = 1.0;
        w[(2 * k + 1, 2 * k)] = -1.0;
    }
    w
}

fn put_block(m: &mut DMatrix<f64>, i: usize, j: usize, diag: (f64, f64)) {
    m[(2 * i, 2 * j)] = diag.0;
    m[(2 * i + 1, 2 * j + 1)] = diag.1;
    m[(2 * j, 2 * i)] = diag.0;
    m[(2 * j + 1, 2 * i + 1)] = diag.1;
}

fn symplectic_spectrum(gamma: &DMatrix<f64>) -> Vec<f64> {
    let modes = gamma.nrows() / 2;
    let mut ev: Vec<f64> = (omega(modes) * gamma)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .collect();
    ev.sort_by(f64::total_cmp);
    ev.into_iter().step_by(2).collect()
}

fn entropy(nus: &[f64]) -> f64 {
    nus.iter().map(|&nu| g_entropy(((nu - 1.0) / 2.0).max(0.0))).sum()
}

/// Returns (χ, spectrum of AB1, conditional spectrum of AFG).
fn oracle(va: f64, t: f64, xi: f64, eta: f64, v_el: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let v = va + 1.0;
    let c = (t * (v * v - 1.0)).sqrt();
    let b = t * (v - 1.0) + 1.0 + t * xi;
    let w = 1.0 + v_el / (1.0 - eta);
    let cw = (w * w - 1.0).sqrt();

    // modes: 0 A, 1 B, 2 F, 3 G
    let mut g0 = DMatrix::zeros(8, 8);
    put_block(&mut g0, 0, 0, (v, v));
    put_block(&mut g0, 0, 1, (c, -c));
    put_block(&mut g0, 1, 1, (b, b));
    put_block(&mut g0, 2, 2, (w, w));
    put_block(&mut g0, 3, 3, (w, w));
    put_block(&mut g0, 2, 3, (cw, -cw));

    let ab1 = g0.view((0, 0), (4, 4)).into_owned();
    let s_e = entropy(&symplectic_spectrum(&ab1));

    let mut s = DMatrix::identity(8, 8);
    let (r, q) = (eta.sqrt(), (1.0 - eta).sqrt());
    for k in 0..2 {
        s[(2 + k, 2 + k)] = r;
        s[(2 + k, 4 + k)] = q;
        s[(4 + k, 2 + k)] = -q;
        s[(4 + k, 4 + k)] = r;
    }
    let g = &s * g0 * s.transpose();

    let keep = [0, 1, 4, 5, 6, 7];
    let xb = 2;
    let mut cond = DMatrix::zeros(6, 6);
    for (i, &a) in keep.iter().enumerate() {
        for (j, &bb) in keep.iter().enumerate() {
            cond[(i, j)] = g[(a, bb)] - g[(a, xb)] * g[(xb, bb)] / g[(xb, xb)];
        }
    }
    let spec_cond = symplectic_spectrum(&cond);
    let s_e_cond = entropy(&spec_cond);
    (s_e - s_e_cond, symplectic_spectrum(&ab1), spec_cond)
}

#[test]
fn matches_oracle_at_link_parameters() {
    for &(va, loss, xi, eta, v_el) in &[
        (1.134, 12.48, 0.04, 0.5, 0.1),
        (4.0, 11.62, 0.04, 0.5, 0.1),
        (10.0, 3.0, 0.01, 0.6, 0.1),
        (0.5, 25.0, 0.0, 0.8, 0.02),
    ] {
        let t = 10f64.powf(-loss / 10.0);
        let (want, _, _) = oracle(va, t, xi, eta, v_el);
        let got = holevo_bound(va, t, xi, eta, v_el).unwrap();
        assert!((got - want).abs() < 1e-9, "va {va} loss {loss}: {got} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn holevo_agrees_with_covariance_oracle(
        va in 0.05f64..30.0,
        t in 0.001f64..0.99,
        xi in 0.0f64..0.2,
        eta in 0.2f64..0.95,
        v_el in 0.0f64..0.3,
    ) {
        let (want, ab, cond) = oracle(va, t, xi, eta, v_el);
        let got = holevo_bound(va, t, xi, eta, v_el).unwrap();
        prop_assert!((got - want.max(0.0)).abs() < 1e-8 * (1.0 + want.abs()), "{got} vs {want}");

        let ev = symplectic_eigenvalues(va, t, xi, eta, v_el).unwrap();
        let mut closed_ab = [ev[0], ev[1]];
        closed_ab.sort_by(f64::total_cmp);
        for (a, b) in closed_ab.iter().zip(&ab) {
            prop_assert!((a - b).abs() < 1e-7 * b, "{a} vs {b}");
        }
        // The conditional state has one pure mode left over (ν = 1).
        let mut closed_cond = [ev[2], ev[3]];
        closed_cond.sort_by(f64::total_cmp);
        let nontrivial: Vec<f64> = cond.iter().copied().filter(|&nu| nu > 1.0 + 1e-7).collect();
        let padded: Vec<f64> = closed_cond.iter().copied().filter(|&nu| nu > 1.0 + 1e-7).collect();
        prop_assert_eq!(nontrivial.len(), padded.len());
        for (a, b) in padded.iter().zip(&nontrivial) {
            prop_assert!((a - b).abs() < 1e-6 * b, "{a} vs {b}");
        }
    }
}
