//! Synthesis/analysis round trip at the measured operating point:
//! recovered efficiency and SNR must sit within statistical errors of the
//! generating truth, and the storage time must come back exact.

use memlab_core::counting::*;
use memlab_core::models::Calibration;
use memlab_core::sim::SignalEnvelope;

const ETA_E2E: f64 = 0.13;
const NOISE_PER_ATTEMPT: f64 = 7.4e-3;

#[test]
fn hundred_seed_round_trip() {
    let cal = Calibration::paper(); // |alpha|^2 = 1, 1/(11 us), 60 s, APD 0.33
    let timing = SequenceTiming::default(); // read delay 140 ns
    let region = timing.retrieval_region();
    let alpha2 = calibrate_alpha2(&cal).unwrap().value;
    assert!((alpha2 - 1.0).abs() < 1e-12);

    // Retrieved signal carrying eta_e2e photons/attempt into the detector
    // path, a transmitted-leakage peak at t = 0, flat noise floor.
    let signal = SignalEnvelope::gaussian(120.0, 160.0, 801, 140.0, 5.0, ETA_E2E * alpha2);
    let leak = SignalEnvelope::gaussian(-25.0, 25.0, 801, 0.0, 5.0, 0.3 * alpha2);

    let attempts = cal.attempts();
    let exp_signal =
        expected_bin_rates(Some(&signal), Some(&leak), NOISE_PER_ATTEMPT, &cal, &timing, 1.0)
            .unwrap();
    let exp_noise =
        expected_bin_rates(None, None, NOISE_PER_ATTEMPT, &cal, &timing, 1.0).unwrap();

    let mut eta_ok = 0;
    let mut snr_ok = 0;
    let mut t_exact = 0;
    for seed in 0..100u64 {
        let hs = synthesize_histogram(
            Some(&signal),
            Some(&leak),
            NOISE_PER_ATTEMPT,
            &cal,
            &timing,
            1.0,
            seed,
        )
        .unwrap();
        let hn =
            synthesize_histogram(None, None, NOISE_PER_ATTEMPT, &cal, &timing, 1.0, 1000 + seed)
                .unwrap();

        if extract_storage_time(&hs, region).unwrap() == 140.0 {
            t_exact += 1;
        }

        let w = default_window(&hs, region, DEFAULT_T_MAX_NS).unwrap();
        let n_s = hs.counts_in(w.t_min_ns, w.t_max_ns) as f64;
        let n_n = hn.counts_in(w.t_min_ns, w.t_max_ns) as f64;

        // Expected values and Poisson errors for the realized window.
        let lam_s = exp_signal.sum_in(w.t_min_ns, w.t_max_ns);
        let lam_n = exp_noise.sum_in(w.t_min_ns, w.t_max_ns);
        let denom = alpha2 * cal.apd_efficiency * attempts;
        let eta_true = (lam_s - lam_n) / denom;
        let eta_se = (lam_s + lam_n).sqrt() / denom;
        let snr_true = (lam_s - lam_n) / lam_n;
        let snr_se = (lam_s / (lam_n * lam_n) + lam_s * lam_s / lam_n.powi(3)).sqrt();

        let eta = eta_e2e_from_counts(n_s, n_n, alpha2, &cal).unwrap();
        if (eta - eta_true).abs() <= 3.0 * eta_se {
            eta_ok += 1;
        }
        let snr = snr_from_counts(n_s, n_n).unwrap();
        if (snr - snr_true).abs() <= 3.0 * snr_se {
            snr_ok += 1;
        }
        // sanity: the recovered numbers sit at the operating point
        assert!((eta - ETA_E2E).abs() < 0.01, "seed {seed}: eta {eta}");
        assert!((snr - snr_true).abs() / snr_true < 0.2, "seed {seed}: snr {snr}");
    }
    assert!(eta_ok >= 95, "eta within 3 SE in only {eta_ok}/100 seeds");
    assert!(snr_ok >= 95, "snr within 3 SE in only {snr_ok}/100 seeds");
    assert_eq!(t_exact, 100, "storage time exact in {t_exact}/100 seeds");
}
