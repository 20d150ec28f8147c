use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

use wideband_anm::certificate::KernelParams;
use wideband_anm::evaluation::{aggregate, matched_errors, run_monte_carlo, ExperimentConfig, TrialOutcome};
use wideband_anm::extract::{estimate, DualPolynomial, EstimateStatus, EstimatorConfig};
use wideband_anm::model::{
    map_r, map_r_adjoint, map_r_reduced, map_r_reduced_adjoint, steering_vector, synthesize, ArraySpec, CMat,
    DataMatrix, FrequencySet, Scenario, Source,
};

fn freq_set() -> impl Strategy<Value = FrequencySet> {
    prop::collection::btree_set(1u32..6, 1..4).prop_map(|s| FrequencySet::new(s.into_iter().collect()).unwrap())
}

fn cmat(rows: usize, cols: usize, vals: &[(f64, f64)]) -> CMat {
    Mat::from_fn(rows, cols, |i, j| {
        let (re, im) = vals[(i * cols + j) % vals.len()];
        C64::new(re + 0.01 * i as f64, im - 0.02 * j as f64)
    })
}

fn inner(a: &CMat, b: &CMat) -> C64 {
    let mut s = C64::default();
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)].conj() * b[(i, j)];
        }
    }
    s
}

fn vals() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 8..32)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn r_map_is_adjoint(freqs in freq_set(), n_m in 2usize..7, a in vals(), b in vals()) {
        let n = freqs.aperture(n_m);
        let full = cmat(n, freqs.n_freq(), &a);
        let q = cmat(n_m, freqs.n_freq(), &b);
        let lhs = inner(&map_r(&full, &freqs, n_m).unwrap(), &q);
        let rhs = inner(&full, &map_r_adjoint(&q, &freqs).unwrap());
        prop_assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn reduced_map_agrees_with_full(freqs in freq_set(), n_m in 2usize..7, a in vals()) {
        let n = freqs.aperture(n_m);
        let full = cmat(n, freqs.n_freq(), &a);
        let support = freqs.support_set(n_m);
        let reduced = Mat::from_fn(support.len(), freqs.n_freq(), |r, f| full[(support[r], f)]);
        let via_full = map_r(&full, &freqs, n_m).unwrap();
        let via_reduced = map_r_reduced(&reduced, &freqs, n_m).unwrap();
        prop_assert_eq!(via_full, via_reduced);
        let q = cmat(n_m, freqs.n_freq(), &a);
        let lhs = inner(&map_r_reduced(&reduced, &freqs, n_m).unwrap(), &q);
        let rhs = inner(&reduced, &map_r_reduced_adjoint(&q, &freqs).unwrap());
        prop_assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn steering_vectors_are_unit_modulus(mult in 1u32..8, w in -0.5f64..0.5, n_m in 1usize..20) {
        let a = steering_vector(mult, w, n_m);
        prop_assert_eq!(a[0], C64::new(1.0, 0.0));
        for z in &a {
            prop_assert!((z.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficient_route_matches_norm(freqs in freq_set(), n_m in 2usize..6, q in vals(), w in -0.5f64..0.5) {
        let qm = cmat(n_m, freqs.n_freq(), &q);
        let d = DualPolynomial::from_coupling(&qm, &freqs).unwrap();
        let c = d.coefficients();
        let n = d.len();
        for k in 0..n {
            prop_assert_eq!(c[n - 1 - k], c[n - 1 + k].conj());
        }
        let z = C64::from_polar(1.0, -2.0 * PI * w);
        let r: C64 = c.iter().enumerate().map(|(j, cj)| cj * z.powi(j as i32 - (n as i32 - 1))).sum();
        let direct = 1.0 - d.norm(w).powi(2);
        prop_assert!((r.re - direct).abs() < 1e-10 * (1.0 + direct.abs()), "{} vs {}", r.re, direct);
        prop_assert!(r.im.abs() < 1e-10 * (1.0 + direct.abs()));
    }

    #[test]
    fn dilated_kernel_is_bounded(order in 1u32..6, n_m in 5usize..40, w in -0.5f64..0.5) {
        let k = KernelParams::for_sensors(order, n_m).unwrap();
        let v = k.value(w);
        prop_assert!(v >= -1e-15 && v <= 1.0 / order as f64 + 1e-12, "K_{order}({w}) = {v}");
    }

    #[test]
    fn errors_are_clamped(truth in prop::collection::vec(0.0f64..180.0, 1..5), shift in -40.0f64..40.0, thr in 0.5f64..20.0) {
        let est: Vec<f64> = truth.iter().map(|t| t + shift).collect();
        for e in matched_errors(&truth, Some(&est), thr) {
            prop_assert!(e <= thr && e >= 0.0);
        }
    }

    #[test]
    fn matching_ignores_source_order(mut truth in prop::collection::vec(0.0f64..180.0, 2..5), noise in prop::collection::vec(-3.0f64..3.0, 5)) {
        let est: Vec<f64> = truth.iter().zip(&noise).map(|(t, n)| t + n).collect();
        let outcome = |errors: Vec<f64>| TrialOutcome { truth_deg: vec![], estimate_deg: None, errors_deg: errors, failed: false, wall_ms: 0.0 };
        let a = aggregate(&[outcome(matched_errors(&truth, Some(&est), 10.0))]);
        truth.reverse();
        let b = aggregate(&[outcome(matched_errors(&truth, Some(&est), 10.0))]);
        prop_assert_eq!(a, b);
        prop_assert!(a.0 >= a.1 * (1.0 - 1e-12));
    }
}

fn small_scenario(theta: f64, snr: Option<f64>, seed: u64) -> Scenario {
    let array = ArraySpec::half_wavelength(5, 340.0, 100.0).unwrap();
    let freqs = FrequencySet::consecutive(2).unwrap();
    let amp = vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
    Scenario::new(array, freqs, vec![Source::new(theta, amp, 1.0, &array).unwrap()], snr, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn estimate_is_scale_equivariant(theta in 40.0f64..140.0, scale in 0.2f64..5.0) {
        let sc = small_scenario(theta, None, 1);
        let y = synthesize(&sc).noisy;
        let scaled = DataMatrix::new(Mat::from_fn(y.n_sensors(), y.n_freq(), |i, j| y.y[(i, j)] * scale));
        let cfg = EstimatorConfig::new(sc.array, sc.freqs.clone(), 1);
        let a = estimate(&y, &cfg).unwrap();
        let b = estimate(&scaled, &cfg).unwrap();
        prop_assert_eq!(a.status, EstimateStatus::Ok);
        prop_assert_eq!(b.status, EstimateStatus::Ok);
        prop_assert!((a.doas_deg[0] - theta).abs() < 1e-3);
        prop_assert!((a.doas_deg[0] - b.doas_deg[0]).abs() < 1e-4);
        prop_assert!((b.solver.objective - scale * a.solver.objective).abs() < 1e-5 * scale);
    }

    #[test]
    fn synthesis_is_deterministic(theta in 10.0f64..170.0, seed in any::<u64>(), snr in -5.0f64..30.0) {
        let sc = small_scenario(theta, Some(snr), seed);
        let a = synthesize(&sc);
        let b = synthesize(&sc);
        prop_assert_eq!(&a.noisy, &b.noisy);
        let noise = Mat::from_fn(5, 2, |i, j| a.noisy.y[(i, j)] - a.clean.y[(i, j)]);
        let ratio = DataMatrix::new(noise).frobenius() / a.clean.frobenius();
        prop_assert!((20.0 * ratio.log10() + snr).abs() < 1e-9);
    }
}

fn cbf_experiment(theta: &[f64]) -> ExperimentConfig {
    let text = format!(
        r#"{{"name":"p","array":{{"n_sensors":8,"spacing_m":1.7,"speed_mps":340,"f0_hz":100}},
            "freqs":{{"multipliers":[1,2,3]}},"sources":{{"rule":"fixed","theta_deg":{theta:?}}},
            "amplitudes":"flat","n_trials":6,"seed":11,"method":{{"kind":"cbf","grid_step_deg":0.5}},
            "experiment":{{"kind":"sweep","axis":{{"snr_db":[0,10]}}}}}}"#
    );
    ExperimentConfig::from_json(&text).unwrap()
}

fn strip_time(t: &wideband_anm::evaluation::MonteCarloTable) -> Vec<(String, f64, f64, usize)> {
    t.rows.iter().map(|r| (r.point.clone(), r.rmse_deg, r.mae_deg, r.failures)).collect()
}

#[test]
fn monte_carlo_tables_are_reproducible() {
    let cfg = cbf_experiment(&[50.0, 100.0]);
    let a = run_monte_carlo(&cfg).unwrap();
    let b = run_monte_carlo(&cfg).unwrap();
    assert_eq!(strip_time(&a), strip_time(&b));
    for r in &a.rows {
        assert!(r.rmse_deg >= r.mae_deg * (1.0 - 1e-12) && r.mae_deg >= 0.0);
    }
}

#[test]
fn source_order_does_not_change_tables() {
    let a = run_monte_carlo(&cbf_experiment(&[50.0, 100.0])).unwrap();
    let b = run_monte_carlo(&cbf_experiment(&[100.0, 50.0])).unwrap();
    assert_eq!(strip_time(&a), strip_time(&b));
}
