//! Photon-counting histograms: synthesis from envelopes and noise rates,
//! and analysis of measured or synthetic histograms into the memory's
//! figures of merit (end-to-end efficiency, SNR, mu_1, storage time, and
//! the detection-window trade-off).

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::Calibration;
use crate::sim::SignalEnvelope;

#[derive(Debug, Error)]
pub enum CountingError {
    #[error("{name} must be {req} (got {value})")]
    Domain {
        name: &'static str,
        req: &'static str,
        value: f64,
    },
    #[error("histograms do not share binning/acquisition metadata: {0}")]
    BinningMismatch(String),
    #[error("analysis failed: {0}")]
    Analysis(String),
}

/// Binned photon arrival-time counts for one acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalHistogram {
    /// Bin width, ns.
    pub bin_width_ns: f64,
    /// Left edge of the first bin, ns.
    pub t0_ns: f64,
    pub counts: Vec<u64>,
    /// Repetition rate of the storage experiment, Hz.
    pub rep_rate: f64,
    /// Integration time, s.
    pub integration_time: f64,
}

/// Default histogram bin width, ns.
pub const DEFAULT_BIN_NS: f64 = 1.0;
/// Default upper edge of the detection window, ns.
pub const DEFAULT_T_MAX_NS: f64 = 155.0;

impl ArrivalHistogram {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    /// Center time of bin `i`.
    pub fn bin_center(&self, i: usize) -> f64 {
        self.t0_ns + (i as f64 + 0.5) * self.bin_width_ns
    }

    pub fn t_end(&self) -> f64 {
        self.t0_ns + self.counts.len() as f64 * self.bin_width_ns
    }

    /// Attempts represented by this acquisition.
    pub fn attempts(&self) -> f64 {
        self.rep_rate * self.integration_time
    }

    /// Total counts in bins whose centers fall in [t_min, t_max).
    pub fn counts_in(&self, t_min: f64, t_max: f64) -> u64 {
        self.counts
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let c = self.bin_center(*i);
                c >= t_min && c < t_max
            })
            .map(|(_, &c)| c)
            .sum()
    }

    fn same_binning(&self, other: &ArrivalHistogram) -> Result<(), CountingError> {
        if self.bin_width_ns != other.bin_width_ns
            || self.t0_ns != other.t0_ns
            || self.counts.len() != other.counts.len()
            || self.rep_rate != other.rep_rate
            || self.integration_time != other.integration_time
        {
            return Err(CountingError::BinningMismatch(format!(
                "(bin {} vs {}, t0 {} vs {}, n {} vs {}, rep {} vs {}, t_int {} vs {})",
                self.bin_width_ns,
                other.bin_width_ns,
                self.t0_ns,
                other.t0_ns,
                self.counts.len(),
                other.counts.len(),
                self.rep_rate,
                other.rep_rate,
                self.integration_time,
                other.integration_time,
            )));
        }
        Ok(())
    }

    /// Index of the maximum count in bins with centers in [from, to);
    /// earliest bin wins ties.
    fn argmax_in(&self, from: f64, to: f64) -> Option<usize> {
        let mut best: Option<(usize, u64)> = None;
        for (i, &c) in self.counts.iter().enumerate() {
            let t = self.bin_center(i);
            if t < from || t >= to {
                continue;
            }
            match best {
                Some((_, b)) if c <= b => {}
                _ => best = Some((i, c)),
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Half-open time region [from, to) in histogram time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeRegion {
    pub from_ns: f64,
    pub to_ns: f64,
}

/// Integration window [t_min, t_max) for efficiency/SNR sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionWindow {
    pub t_min_ns: f64,
    pub t_max_ns: f64,
}

/// Timing of one storage/retrieval cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceTiming {
    /// State-preparation pump duration, us.
    pub pump_duration_us: f64,
    /// Arrival of the write control pulse, ns (histogram time).
    pub write_time_ns: f64,
    /// Delay of the signal pulse behind the write control pulse, ns.
    pub signal_delay_ns: f64,
    /// Read control pulse delay after the signal, ns.
    pub read_delay_ns: f64,
    /// Full cycle period, us.
    pub rep_period_us: f64,
}

impl Default for SequenceTiming {
    fn default() -> Self {
        SequenceTiming {
            pump_duration_us: 10.0,
            write_time_ns: -10.0,
            signal_delay_ns: 10.0,
            read_delay_ns: 140.0,
            rep_period_us: 11.0,
        }
    }
}

/// Margin before the read delay that opens the retrieval region, ns.
pub const RETRIEVAL_REGION_LEAD_NS: f64 = 20.0;
/// Histogram padding before t = 0 and after the read delay, ns.
const SPAN_PRE_NS: f64 = 64.0;
const SPAN_POST_NS: f64 = 160.0;

impl SequenceTiming {
    pub fn validate(&self) -> Result<(), CountingError> {
        if self.signal_delay_ns < 0.0 {
            return Err(CountingError::Domain {
                name: "signal_delay_ns",
                req: ">= 0",
                value: self.signal_delay_ns,
            });
        }
        if self.read_delay_ns <= self.signal_delay_ns {
            return Err(CountingError::Domain {
                name: "read_delay_ns",
                req: "> signal_delay_ns",
                value: self.read_delay_ns,
            });
        }
        if self.rep_period_us * 1e3 <= self.read_delay_ns + SPAN_POST_NS {
            return Err(CountingError::Domain {
                name: "rep_period_us",
                req: "longer than the pulse sequence",
                value: self.rep_period_us,
            });
        }
        if self.pump_duration_us < 0.0 {
            return Err(CountingError::Domain {
                name: "pump_duration_us",
                req: ">= 0",
                value: self.pump_duration_us,
            });
        }
        Ok(())
    }

    /// Default retrieval region: everything from read_delay - 20 ns on.
    pub fn retrieval_region(&self) -> TimeRegion {
        TimeRegion {
            from_ns: self.read_delay_ns - RETRIEVAL_REGION_LEAD_NS,
            to_ns: f64::INFINITY,
        }
    }
}

/// Mean input photon number from the monitor arm:
/// |alpha|^2 = N_mon sigma / (f_rep eta_APD), with its propagated relative
/// uncertainty (splitting ratio, APD efficiency, Poisson monitor counts).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Alpha2 {
    pub value: f64,
    pub rel_uncertainty: f64,
}

pub fn calibrate_alpha2(cal: &Calibration) -> Result<Alpha2, CountingError> {
    if cal.rep_rate <= 0.0 {
        return Err(CountingError::Domain {
            name: "rep_rate",
            req: "> 0",
            value: cal.rep_rate,
        });
    }
    if cal.apd_efficiency <= 0.0 {
        return Err(CountingError::Domain {
            name: "apd_efficiency",
            req: "> 0",
            value: cal.apd_efficiency,
        });
    }
    if cal.monitor_rate < 0.0 {
        return Err(CountingError::Domain {
            name: "monitor_rate",
            req: ">= 0",
            value: cal.monitor_rate,
        });
    }
    if cal.integration_time <= 0.0 {
        return Err(CountingError::Domain {
            name: "integration_time",
            req: "> 0",
            value: cal.integration_time,
        });
    }
    let value = cal.monitor_rate * cal.split_ratio_sigma / (cal.rep_rate * cal.apd_efficiency);
    let monitor_counts = cal.monitor_rate * cal.integration_time;
    let monitor_rel = if monitor_counts > 0.0 {
        1.0 / monitor_counts.sqrt()
    } else {
        0.0
    };
    let rel = (cal.split_ratio_rel_err.powi(2) + cal.apd_rel_err.powi(2) + monitor_rel.powi(2))
        .sqrt();
    Ok(Alpha2 {
        value,
        rel_uncertainty: rel,
    })
}

/// Forward model of an acquisition: place the retrieved-signal and leakage
/// envelopes (photon flux per attempt at the detector input, i.e. after all
/// filtering), apply the APD efficiency, add a flat noise floor of
/// `noise_per_attempt` detected counts per attempt spread across the span,
/// scale by the number of attempts and draw each bin from Poisson.
///
/// Envelope time grids are in histogram time; the caller shifts the
/// retrieved envelope to its read delay. The span is
/// [-64 ns, read_delay + 160 ns] rounded to whole bins.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_histogram(
    signal: Option<&SignalEnvelope>,
    leak: Option<&SignalEnvelope>,
    noise_per_attempt: f64,
    cal: &Calibration,
    timing: &SequenceTiming,
    bin_width_ns: f64,
    seed: u64,
) -> Result<ArrivalHistogram, CountingError> {
    if noise_per_attempt < 0.0 {
        return Err(CountingError::Domain {
            name: "noise_per_attempt",
            req: ">= 0",
            value: noise_per_attempt,
        });
    }
    if bin_width_ns <= 0.0 {
        return Err(CountingError::Domain {
            name: "bin_width_ns",
            req: "> 0",
            value: bin_width_ns,
        });
    }
    timing.validate()?;
    // Half-bin offset puts bin centers on multiples of the bin width, so a
    // peak at an integer time is recovered at exactly that time.
    let t0 = -(SPAN_PRE_NS / bin_width_ns).ceil() * bin_width_ns - 0.5 * bin_width_ns;
    let t_end = timing.read_delay_ns + SPAN_POST_NS;
    let n_bins = ((t_end - t0) / bin_width_ns).ceil() as usize;
    let attempts = cal.rep_rate * cal.integration_time;

    let mut lambda = vec![0.0f64; n_bins];
    let noise_per_bin = noise_per_attempt / n_bins as f64;
    for (i, l) in lambda.iter_mut().enumerate() {
        let lo = t0 + i as f64 * bin_width_ns;
        let hi = lo + bin_width_ns;
        let mut flux = 0.0;
        if let Some(env) = signal {
            flux += integrate_intensity(env, lo, hi);
        }
        if let Some(env) = leak {
            flux += integrate_intensity(env, lo, hi);
        }
        *l = (flux * cal.apd_efficiency + noise_per_bin) * attempts;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = lambda
        .iter()
        .map(|&l| {
            if l <= 0.0 {
                0
            } else {
                Poisson::new(l).expect("positive rate").sample(&mut rng) as u64
            }
        })
        .collect();
    Ok(ArrivalHistogram {
        bin_width_ns,
        t0_ns: t0,
        counts,
        rep_rate: cal.rep_rate,
        integration_time: cal.integration_time,
    })
}

/// Expected (noise-free) per-bin rates for the same forward model; used by
/// tests to compare recovered metrics against the generating truth.
pub fn expected_bin_rates(
    signal: Option<&SignalEnvelope>,
    leak: Option<&SignalEnvelope>,
    noise_per_attempt: f64,
    cal: &Calibration,
    timing: &SequenceTiming,
    bin_width_ns: f64,
) -> Result<ArrivalHistogramExpectation, CountingError> {
    let h = synthesize_histogram(signal, leak, 0.0, cal, timing, bin_width_ns, 0)?;
    let n_bins = h.n_bins();
    let attempts = cal.rep_rate * cal.integration_time;
    let noise_per_bin = noise_per_attempt / n_bins as f64 * attempts;
    let mut lambda = vec![0.0f64; n_bins];
    for (i, l) in lambda.iter_mut().enumerate() {
        let lo = h.t0_ns + i as f64 * bin_width_ns;
        let hi = lo + bin_width_ns;
        let mut flux = 0.0;
        if let Some(env) = signal {
            flux += integrate_intensity(env, lo, hi);
        }
        if let Some(env) = leak {
            flux += integrate_intensity(env, lo, hi);
        }
        *l = flux * cal.apd_efficiency * attempts + noise_per_bin;
    }
    Ok(ArrivalHistogramExpectation {
        bin_width_ns,
        t0_ns: h.t0_ns,
        lambda,
    })
}

/// Per-bin expected counts of a synthetic acquisition.
#[derive(Debug, Clone)]
pub struct ArrivalHistogramExpectation {
    pub bin_width_ns: f64,
    pub t0_ns: f64,
    pub lambda: Vec<f64>,
}

impl ArrivalHistogramExpectation {
    pub fn sum_in(&self, t_min: f64, t_max: f64) -> f64 {
        self.lambda
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let c = self.t0_ns + (*i as f64 + 0.5) * self.bin_width_ns;
                c >= t_min && c < t_max
            })
            .map(|(_, &l)| l)
            .sum()
    }
}

/// Integral of |amplitude|^2 over [lo, hi] by trapezoid on the envelope's
/// own grid, with linear interpolation at the window edges.
fn integrate_intensity(env: &SignalEnvelope, lo: f64, hi: f64) -> f64 {
    let t = &env.time_ns;
    if t.len() < 2 || hi <= t[0] || lo >= *t.last().unwrap() {
        return 0.0;
    }
    let dt = t[1] - t[0];
    let intens = |a: &Complex64| a.norm_sqr();
    let sample = |x: f64| -> f64 {
        let pos = (x - t[0]) / dt;
        if pos <= 0.0 {
            return intens(&env.amplitude[0]);
        }
        let max = (t.len() - 1) as f64;
        if pos >= max {
            return intens(env.amplitude.last().unwrap());
        }
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        // interpolate intensity, not amplitude, to keep sums non-negative
        intens(&env.amplitude[i]) * (1.0 - frac) + intens(&env.amplitude[i + 1]) * frac
    };
    let a = lo.max(t[0]);
    let b = hi.min(*t.last().unwrap());
    if b <= a {
        return 0.0;
    }
    // fixed subdivision fine relative to both bin and envelope grid
    let n = ((b - a) / dt * 4.0).ceil().max(4.0) as usize;
    let h = (b - a) / n as f64;
    let mut acc = 0.5 * (sample(a) + sample(b));
    for i in 1..n {
        acc += sample(a + i as f64 * h);
    }
    acc * h
}

/// Storage time: the gap between the tallest bin of the input (leakage)
/// region and the tallest bin of the retrieval region, earliest bin on ties.
pub fn extract_storage_time(
    h: &ArrivalHistogram,
    retrieval_region: TimeRegion,
) -> Result<f64, CountingError> {
    let input_max = h
        .argmax_in(f64::NEG_INFINITY, retrieval_region.from_ns)
        .ok_or_else(|| CountingError::Analysis("empty input region".to_string()))?;
    let retrieval_max = h
        .argmax_in(retrieval_region.from_ns, retrieval_region.to_ns)
        .ok_or_else(|| CountingError::Analysis("empty retrieval region".to_string()))?;
    Ok(h.bin_center(retrieval_max) - h.bin_center(input_max))
}

/// Default detection window: lower edge at the count minimum between the
/// leakage peak and the retrieval peak (earliest on ties), upper edge at
/// the caller's t_max.
pub fn default_window(
    h: &ArrivalHistogram,
    retrieval_region: TimeRegion,
    t_max: f64,
) -> Result<DetectionWindow, CountingError> {
    let leak_peak = h
        .argmax_in(f64::NEG_INFINITY, retrieval_region.from_ns)
        .ok_or_else(|| CountingError::Analysis("no leakage peak".to_string()))?;
    let retrieval_peak = h
        .argmax_in(retrieval_region.from_ns, retrieval_region.to_ns)
        .ok_or_else(|| CountingError::Analysis("no retrieval peak".to_string()))?;
    if retrieval_peak <= leak_peak + 1 {
        return Err(CountingError::Analysis(
            "no bins between leakage and retrieval peaks".to_string(),
        ));
    }
    let mut best = leak_peak + 1;
    for i in leak_peak + 1..retrieval_peak {
        if h.counts[i] < h.counts[best] {
            best = i;
        }
    }
    let t_min = h.bin_center(best);
    if t_max <= t_min {
        return Err(CountingError::Analysis(format!(
            "t_max = {t_max} not after window lower edge {t_min}"
        )));
    }
    Ok(DetectionWindow {
        t_min_ns: t_min,
        t_max_ns: t_max,
    })
}

/// End-to-end efficiency from windowed counts:
/// (N_signal - N_noise) / (|alpha|^2 eta_APD f_rep t_int).
/// May come out negative when noise exceeds signal; reported as-is.
pub fn eta_e2e_from_counts(
    n_signal: f64,
    n_noise: f64,
    alpha2: f64,
    cal: &Calibration,
) -> Result<f64, CountingError> {
    let denom = alpha2 * cal.apd_efficiency * cal.rep_rate * cal.integration_time;
    if denom <= 0.0 {
        return Err(CountingError::Domain {
            name: "alpha2 * eta_APD * attempts",
            req: "> 0",
            value: denom,
        });
    }
    Ok((n_signal - n_noise) / denom)
}

/// SNR from windowed counts: (N_signal - N_noise) / N_noise.
pub fn snr_from_counts(n_signal: f64, n_noise: f64) -> Result<f64, CountingError> {
    if n_noise <= 0.0 {
        return Err(CountingError::Domain {
            name: "n_noise",
            req: "> 0 (SNR undefined without noise counts)",
            value: n_noise,
        });
    }
    Ok((n_signal - n_noise) / n_noise)
}

/// 1-sigma uncertainty of a windowed SNR normalized to the calibrated
/// photon number: Poisson errors of the two count sums plus the |alpha|^2
/// calibration error, in quadrature.
pub fn snr_uncertainty(
    n_signal: f64,
    n_noise: f64,
    alpha2_rel_err: f64,
) -> Result<f64, CountingError> {
    if n_noise <= 0.0 {
        return Err(CountingError::Domain {
            name: "n_noise",
            req: "> 0",
            value: n_noise,
        });
    }
    if alpha2_rel_err < 0.0 {
        return Err(CountingError::Domain {
            name: "alpha2_rel_err",
            req: ">= 0",
            value: alpha2_rel_err,
        });
    }
    let snr = (n_signal - n_noise) / n_noise;
    let poisson_var = n_signal / (n_noise * n_noise)
        + n_signal * n_signal / (n_noise * n_noise * n_noise);
    Ok((poisson_var + (snr * alpha2_rel_err).powi(2)).sqrt())
}

/// Per-bin noise subtraction. Negative bins are kept so downstream sums
/// stay unbiased.
pub fn noise_correct(
    h_signal: &ArrivalHistogram,
    h_noise: &ArrivalHistogram,
) -> Result<Vec<f64>, CountingError> {
    h_signal.same_binning(h_noise)?;
    Ok(h_signal
        .counts
        .iter()
        .zip(h_noise.counts.iter())
        .map(|(&s, &n)| s as f64 - n as f64)
        .collect())
}

/// One row of the detection-window trade-off sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowTradeoffRow {
    pub t_max_ns: f64,
    pub eta_e2e: f64,
    /// `None` when there are no noise counts in the window.
    pub snr: Option<f64>,
}

/// Efficiency and SNR as a function of the window upper edge; the lower
/// edge is fixed once from the signal histogram's count minimum.
pub fn window_tradeoff(
    h_signal: &ArrivalHistogram,
    h_noise: &ArrivalHistogram,
    alpha2: f64,
    cal: &Calibration,
    retrieval_region: TimeRegion,
    t_max_list: &[f64],
) -> Result<Vec<WindowTradeoffRow>, CountingError> {
    h_signal.same_binning(h_noise)?;
    let mut rows = Vec::with_capacity(t_max_list.len());
    for &t_max in t_max_list {
        let w = default_window(h_signal, retrieval_region, t_max)?;
        let n_s = h_signal.counts_in(w.t_min_ns, w.t_max_ns) as f64;
        let n_n = h_noise.counts_in(w.t_min_ns, w.t_max_ns) as f64;
        let eta = eta_e2e_from_counts(n_s, n_n, alpha2, cal)?;
        let snr = if n_n > 0.0 {
            Some(snr_from_counts(n_s, n_n)?)
        } else {
            None
        };
        rows.push(WindowTradeoffRow {
            t_max_ns: t_max,
            eta_e2e: eta,
            snr,
        });
    }
    Ok(rows)
}

/// Internal memory efficiency from the end-to-end value:
/// eta_mem = eta_e2e / filter_transmission.
pub fn eta_mem_from_e2e(eta_e2e: f64, filter_transmission: f64) -> Result<f64, CountingError> {
    if !(filter_transmission > 0.0 && filter_transmission <= 1.0) {
        return Err(CountingError::Domain {
            name: "filter_transmission",
            req: "in (0, 1]",
            value: filter_transmission,
        });
    }
    Ok(eta_e2e / filter_transmission)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Calibration;

    fn cal() -> Calibration {
        Calibration::paper()
    }

    fn hist_from(counts: Vec<u64>) -> ArrivalHistogram {
        ArrivalHistogram {
            bin_width_ns: 1.0,
            t0_ns: -64.5, // bin i has center -64 + i
            counts,
            rep_rate: 1.0 / 11e-6,
            integration_time: 60.0,
        }
    }

    /// Histogram with Gaussian peaks at given (center, fwhm, height).
    fn peaks(n_bins: usize, peaks: &[(f64, f64, f64)]) -> ArrivalHistogram {
        let mut h = hist_from(vec![0; n_bins]);
        for i in 0..n_bins {
            let t = h.bin_center(i);
            let mut v = 0.0;
            for &(c, fw, amp) in peaks {
                v += amp * (-4.0 * std::f64::consts::LN_2 * (t - c).powi(2) / (fw * fw)).exp();
            }
            h.counts[i] = v.round() as u64;
        }
        h
    }

    #[test]
    fn alpha2_operating_point() {
        // N_mon = 3333 counts/s, sigma = 9, f_rep = 1/(11 us), eta = 0.33
        let c = Calibration {
            monitor_rate: 3333.0,
            split_ratio_rel_err: 0.0,
            apd_rel_err: 0.0,
            ..cal()
        };
        let a = calibrate_alpha2(&c).unwrap();
        assert!((a.value - 0.9999).abs() < 1e-4, "alpha2 = {}", a.value);
        // linear in the monitor rate
        let c2 = Calibration {
            monitor_rate: 6666.0,
            ..c
        };
        let a2 = calibrate_alpha2(&c2).unwrap();
        assert!((a2.value - 2.0 * a.value).abs() < 1e-12);
        // zero monitor: zero photons
        let c0 = Calibration {
            monitor_rate: 0.0,
            ..c
        };
        assert_eq!(calibrate_alpha2(&c0).unwrap().value, 0.0);
        // bad calibration
        let bad = Calibration {
            rep_rate: 0.0,
            ..c
        };
        assert!(calibrate_alpha2(&bad).is_err());
    }

    #[test]
    fn alpha2_uncertainty_quadrature() {
        let c = Calibration {
            monitor_rate: 3333.0,
            split_ratio_rel_err: 0.03,
            apd_rel_err: 0.15,
            ..cal()
        };
        let a = calibrate_alpha2(&c).unwrap();
        let poisson = 1.0 / (3333.0f64 * 60.0).sqrt();
        let expect = (0.03f64.powi(2) + 0.15f64.powi(2) + poisson * poisson).sqrt();
        assert!((a.rel_uncertainty - expect).abs() < 1e-12);
    }

    #[test]
    fn synthesize_zero_rates_gives_zero_histogram() {
        let timing = SequenceTiming::default();
        let h = synthesize_histogram(None, None, 0.0, &cal(), &timing, 1.0, 42).unwrap();
        assert!(h.counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn synthesize_deterministic_per_seed() {
        let timing = SequenceTiming::default();
        let env = SignalEnvelope::gaussian(120.0, 160.0, 401, 140.0, 5.0, 0.13);
        let a = synthesize_histogram(Some(&env), None, 0.01, &cal(), &timing, 1.0, 7).unwrap();
        let b = synthesize_histogram(Some(&env), None, 0.01, &cal(), &timing, 1.0, 7).unwrap();
        let c = synthesize_histogram(Some(&env), None, 0.01, &cal(), &timing, 1.0, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn flat_noise_total_concentrates() {
        // total counts ~ r * f_rep * t_int within 4/sqrt(N) per seed
        let timing = SequenceTiming::default();
        let r = 0.02;
        let expected = r * cal().attempts();
        for seed in 0..100 {
            let h = synthesize_histogram(None, None, r, &cal(), &timing, 1.0, seed).unwrap();
            let total: u64 = h.counts.iter().sum();
            let rel = (total as f64 - expected).abs() / expected;
            assert!(
                rel < 4.0 / expected.sqrt(),
                "seed {seed}: total {total} vs {expected}"
            );
        }
    }

    #[test]
    fn expected_retrieval_window_counts_at_operating_point() {
        // eta_e2e = 0.13 photons/attempt reaching the detector, eta_APD 0.33:
        // ~2.3e5 counts in the retrieval window over 5.45e6 attempts.
        let timing = SequenceTiming::default();
        let env = SignalEnvelope::gaussian(110.0, 170.0, 601, 140.0, 5.0, 0.13);
        let exp = expected_bin_rates(Some(&env), None, 0.0, &cal(), &timing, 1.0).unwrap();
        let counts = exp.sum_in(110.0, 170.0);
        let want = 0.13 * 0.33 * cal().attempts();
        assert!(
            (counts / want - 1.0).abs() < 1e-3,
            "expected {counts} vs {want}"
        );
    }

    #[test]
    fn poisson_variance_over_seeds() {
        // variance/mean of a bin with lambda >= 10 stays near 1
        let timing = SequenceTiming::default();
        let r = 0.05; // per attempt over the span -> lambda ~ 750/bin
        let mut values = Vec::new();
        for seed in 0..200 {
            let h = synthesize_histogram(None, None, r, &cal(), &timing, 1.0, seed).unwrap();
            values.push(h.counts[10] as f64);
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / (values.len() - 1) as f64;
        let ratio = var / mean;
        assert!(
            (0.9..=1.1).contains(&ratio),
            "variance/mean = {ratio}, mean = {mean}"
        );
    }

    #[test]
    fn storage_time_from_two_peaks() {
        let region = TimeRegion {
            from_ns: 120.0,
            to_ns: f64::INFINITY,
        };
        // leak at 0, retrieval at +140
        let h = peaks(364, &[(0.0, 8.0, 1000.0), (140.0, 8.0, 400.0)]);
        let t = extract_storage_time(&h, region).unwrap();
        assert_eq!(t, 140.0);
    }

    #[test]
    fn storage_time_single_bin_delta() {
        let mut h = hist_from(vec![0; 364]);
        h.counts[64] = 500; // center 0
        h.counts[144] = 200; // center +80
        let region = TimeRegion {
            from_ns: 60.0,
            to_ns: f64::INFINITY,
        };
        assert_eq!(extract_storage_time(&h, region).unwrap(), 80.0);
    }

    #[test]
    fn storage_time_tie_takes_earliest() {
        let mut h = hist_from(vec![0; 364]);
        h.counts[64] = 500; // center 0
        h.counts[204] = 200; // center 140
        h.counts[224] = 200; // center 160 (equal maximum, later)
        let region = TimeRegion {
            from_ns: 120.0,
            to_ns: f64::INFINITY,
        };
        assert_eq!(extract_storage_time(&h, region).unwrap(), 140.0);
    }

    #[test]
    fn default_window_finds_valley() {
        let region = TimeRegion {
            from_ns: 120.0,
            to_ns: f64::INFINITY,
        };
        // leak peak at 0, retrieval peak at 140, V-shaped counts between
        // them with the clean valley bottom at exactly 110 ns
        let mut h = hist_from(vec![0; 364]);
        for i in 0..h.counts.len() {
            let t = h.bin_center(i);
            h.counts[i] = if t < 0.0 {
                5
            } else if t <= 110.0 {
                (1000.0 - 8.0 * t) as u64 // 1000 down to 120
            } else if t < 140.0 {
                (120.0 + 9.0 * (t - 110.0)) as u64 // back up to the peak
            } else if t == 140.0 {
                800
            } else {
                10
            };
        }
        let w = default_window(&h, region, 155.0).unwrap();
        assert_eq!(w.t_min_ns, 110.0);
        assert_eq!(w.t_max_ns, 155.0);
    }

    #[test]
    fn default_window_monotone_rise_takes_boundary() {
        let mut h = hist_from(vec![0; 300]);
        // leak peak at bin 64, then strictly rising counts into the retrieval peak
        h.counts[64] = 1000;
        for i in 65..250 {
            h.counts[i] = (i - 64) as u64;
        }
        h.counts[250] = 2000;
        let region = TimeRegion {
            from_ns: h.bin_center(240),
            to_ns: f64::INFINITY,
        };
        let w = default_window(&h, region, h.bin_center(299)).unwrap();
        assert_eq!(w.t_min_ns, h.bin_center(65));
    }

    #[test]
    fn eta_e2e_inversion_at_paper_point() {
        let v = eta_e2e_from_counts(2.34e5 + 100.0, 100.0, 1.0, &cal()).unwrap();
        let denom = 0.33 * cal().attempts();
        assert!((v - 2.34e5 / denom).abs() < 1e-12);
        assert!((v - 0.13).abs() < 5e-4, "eta = {v}");
        // equal counts: zero
        assert_eq!(eta_e2e_from_counts(5.0, 5.0, 1.0, &cal()).unwrap(), 0.0);
        // linear in the difference
        let v2 = eta_e2e_from_counts(2.0 * 2.34e5 + 100.0, 100.0, 1.0, &cal()).unwrap();
        assert!((v2 - 2.0 * v).abs() < 1e-12);
        // negative allowed (flagged by the caller)
        assert!(eta_e2e_from_counts(3.0, 5.0, 1.0, &cal()).unwrap() < 0.0);
        assert!(eta_e2e_from_counts(1.0, 0.0, 0.0, &cal()).is_err());
    }

    #[test]
    fn eta_e2e_invariant_under_joint_scaling() {
        // doubling t_int and all counts leaves eta unchanged
        let v1 = eta_e2e_from_counts(1e5, 2e4, 1.0, &cal()).unwrap();
        let cal2 = Calibration {
            integration_time: 120.0,
            ..cal()
        };
        let v2 = eta_e2e_from_counts(2e5, 4e4, 1.0, &cal2).unwrap();
        assert!((v1 - v2).abs() < 1e-15);
    }

    #[test]
    fn snr_values() {
        assert_eq!(snr_from_counts(15.0 * 1e4, 1e4).unwrap(), 14.0);
        assert_eq!(snr_from_counts(5.0, 5.0).unwrap(), 0.0);
        assert_eq!(snr_from_counts(2e4, 1e4).unwrap(), 1.0);
        assert!(snr_from_counts(1.0, 0.0).is_err());
        assert!(snr_from_counts(0.0, 5.0).unwrap() >= -1.0);
    }

    #[test]
    fn snr_uncertainty_terms() {
        // pure Poisson part at zero calibration error
        let s = snr_uncertainty(2e4, 1e4, 0.0).unwrap();
        let expect = (2e4 / 1e8 + 4e8 / 1e12f64).sqrt();
        assert!((s - expect).abs() < 1e-12);
        // calibration part dominates at large counts
        let s = snr_uncertainty(15e8, 1e8, 0.1).unwrap();
        assert!((s - 1.4).abs() < 0.01, "snr err {s}");
        assert!(snr_uncertainty(1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn timing_validation() {
        let t = SequenceTiming::default();
        assert!(t.validate().is_ok());
        let bad = SequenceTiming {
            read_delay_ns: 5.0,
            signal_delay_ns: 10.0,
            ..t
        };
        assert!(bad.validate().is_err());
        let bad = SequenceTiming {
            rep_period_us: 0.2,
            ..t
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn noise_correction_rules() {
        let hs = hist_from(vec![10, 7, 3]);
        let hn = hist_from(vec![3, 7, 9]);
        let d = noise_correct(&hs, &hn).unwrap();
        assert_eq!(d, vec![7.0, 0.0, -6.0]);
        let zero = hist_from(vec![0, 0, 0]);
        assert_eq!(
            noise_correct(&hs, &zero).unwrap(),
            vec![10.0, 7.0, 3.0]
        );
        assert_eq!(noise_correct(&hs, &hs).unwrap(), vec![0.0; 3]);
        let mismatched = ArrivalHistogram {
            bin_width_ns: 2.0,
            ..hist_from(vec![1, 2, 3])
        };
        assert!(noise_correct(&hs, &mismatched).is_err());
    }

    #[test]
    fn tradeoff_saturates_eta_drops_snr() {
        let region = TimeRegion {
            from_ns: 120.0,
            to_ns: f64::INFINITY,
        };
        let timing = SequenceTiming::default();
        let env = SignalEnvelope::gaussian(120.0, 160.0, 801, 140.0, 5.0, 0.13);
        let leak = SignalEnvelope::gaussian(-30.0, 30.0, 601, 0.0, 5.0, 0.3);
        let r = 0.01;
        let hs =
            synthesize_histogram(Some(&env), Some(&leak), r, &cal(), &timing, 1.0, 5).unwrap();
        let hn = synthesize_histogram(None, None, r, &cal(), &timing, 1.0, 6).unwrap();
        let t_maxes = [155.0, 200.0, 260.0];
        let rows =
            window_tradeoff(&hs, &hn, 1.0, &cal(), region, &t_maxes).unwrap();
        // eta non-decreasing with t_max
        assert!(rows[1].eta_e2e >= rows[0].eta_e2e - 1e-4);
        assert!(rows[2].eta_e2e >= rows[1].eta_e2e - 1e-4);
        // SNR strictly dropping once past the retrieval peak
        assert!(rows[2].snr.unwrap() < rows[0].snr.unwrap());
        // consistency with a standalone computation at t_max = 155
        let w = default_window(&hs, region, 155.0).unwrap();
        let eta = eta_e2e_from_counts(
            hs.counts_in(w.t_min_ns, w.t_max_ns) as f64,
            hn.counts_in(w.t_min_ns, w.t_max_ns) as f64,
            1.0,
            &cal(),
        )
        .unwrap();
        assert_eq!(rows[0].eta_e2e, eta);
    }

    #[test]
    fn tradeoff_zero_noise_flags_snr() {
        let region = TimeRegion {
            from_ns: 120.0,
            to_ns: f64::INFINITY,
        };
        let timing = SequenceTiming::default();
        let env = SignalEnvelope::gaussian(120.0, 160.0, 801, 140.0, 5.0, 0.13);
        let leak = SignalEnvelope::gaussian(-30.0, 30.0, 601, 0.0, 5.0, 0.3);
        let hs =
            synthesize_histogram(Some(&env), Some(&leak), 0.0, &cal(), &timing, 1.0, 5).unwrap();
        let hn = synthesize_histogram(None, None, 0.0, &cal(), &timing, 1.0, 6).unwrap();
        let rows = window_tradeoff(&hs, &hn, 1.0, &cal(), region, &[155.0]).unwrap();
        assert!(rows[0].snr.is_none());
        assert!(rows[0].eta_e2e > 0.0);
    }

    #[test]
    fn eta_mem_values() {
        assert!((eta_mem_from_e2e(0.13, 0.4).unwrap() - 0.325).abs() < 1e-15);
        assert_eq!(eta_mem_from_e2e(0.2, 1.0).unwrap(), 0.2);
        assert!((eta_mem_from_e2e(0.2, 0.5).unwrap() - 0.4).abs() < 1e-15);
        assert!(eta_mem_from_e2e(0.1, 0.0).is_err());
        assert!(eta_mem_from_e2e(0.1, 1.5).is_err());
    }
}
