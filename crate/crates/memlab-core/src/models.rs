//! Closed-form empirical models and figures of merit.
//!
//! These are the fitted curves of the memory characterization: efficiency
//! versus signal pulse width, control pulse energy and detuning, the
//! readout-noise budget versus energy and detuning, and the derived metrics
//! (SNR, mu_1, transform limit, Rabi frequency, etalon transmission). They
//! are deliberately phenomenological; none of them claims microscopic
//! validity.

use serde::Serialize;
use thiserror::Error;

use crate::voigt::voigt_unit_peak;

const LN2: f64 = std::f64::consts::LN_2;
const PI: f64 = std::f64::consts::PI;

/// Reduced Planck constant, J*s.
const HBAR: f64 = 1.054_571_817e-34;
/// Vacuum permittivity, F/m.
const EPS0: f64 = 8.854_187_812_8e-12;
/// Speed of light, m/s.
const C_LIGHT: f64 = 2.997_924_58e8;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("{name} must be positive (got {value})")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must be non-negative (got {value})")]
    Negative { name: &'static str, value: f64 },
    #[error("{name} = {value} outside {bounds}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        bounds: &'static str,
    },
    #[error("SNR undefined: model noise is zero at this point")]
    ZeroNoise,
}

/// Fitted parameters of the three empirical efficiency models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfficiencyParams {
    /// Saturation efficiency of the pulse-width model.
    pub eta0_width: f64,
    /// Memory acceptance bandwidth (FWHM, MHz).
    pub mem_bandwidth_fwhm: f64,
    /// Saturation efficiency of the control-energy model.
    pub eta0_energy: f64,
    /// Energy scale of the exponential turn-on (pJ).
    pub energy_scale_a: f64,
    /// Saturation efficiency of the detuning model.
    pub eta0_detuning: f64,
    /// FWHM of the Lorentzian absorbance (MHz).
    pub lorentz_fwhm: f64,
    /// Center of the Lorentzian absorbance (MHz).
    pub lorentz_center: f64,
    /// Peak absorbance at line center.
    pub lorentz_peak_absorbance: f64,
}

impl EfficiencyParams {
    /// Fit values reported for the measured memory, with free defaults for
    /// the detuning absorbance (no fitted numbers are quoted for it).
    pub fn paper() -> Self {
        EfficiencyParams {
            eta0_width: 0.128,
            mem_bandwidth_fwhm: 220.0,
            eta0_energy: 0.107,
            energy_scale_a: 156.0,
            eta0_detuning: 0.13,
            lorentz_fwhm: 920.0,
            lorentz_center: 0.0,
            lorentz_peak_absorbance: 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("eta0_width", self.eta0_width),
            ("eta0_energy", self.eta0_energy),
            ("eta0_detuning", self.eta0_detuning),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ModelError::OutOfRange {
                    name,
                    value: v,
                    bounds: "[0, 1]",
                });
            }
        }
        for (name, v) in [
            ("mem_bandwidth_fwhm", self.mem_bandwidth_fwhm),
            ("energy_scale_a", self.energy_scale_a),
            ("lorentz_fwhm", self.lorentz_fwhm),
        ] {
            if v <= 0.0 {
                return Err(ModelError::NonPositive { name, value: v });
            }
        }
        if self.lorentz_peak_absorbance < 0.0 {
            return Err(ModelError::Negative {
                name: "lorentz_peak_absorbance",
                value: self.lorentz_peak_absorbance,
            });
        }
        Ok(())
    }
}

/// Fitted parameters of the noise models: the energy polynomial plus
/// saturating fluorescence, and the detuning decomposition with its fixed
/// Voigt widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseParams {
    /// FWM quadratic coefficient (counts/attempt/pJ^2).
    pub fwm_quad_b: f64,
    /// SRS linear coefficient (counts/attempt/pJ).
    pub srs_lin_c: f64,
    /// Fluorescence amplitude (counts/attempt).
    pub fl_amp_d: f64,
    /// Fluorescence saturation energy (pJ).
    pub fl_sat_e: f64,
    /// Constant SRS level of the detuning model (counts/attempt).
    pub n_srs: f64,
    /// Fluorescence peak of the detuning model (counts/attempt).
    pub n_fl: f64,
    /// FWM level of the detuning model (counts/attempt).
    pub n_fwm: f64,
    /// Doppler (Gaussian) FWHM of the fluorescence profile (MHz).
    pub voigt_gauss_fwhm: f64,
    /// Power/pressure (Lorentzian) FWHM of the fluorescence profile (MHz).
    pub voigt_lorentz_fwhm: f64,
}

impl NoiseParams {
    /// Reported fit values: energy coefficients at 334 MHz red detuning,
    /// detuning components at maximal control energy.
    pub fn paper() -> Self {
        NoiseParams {
            fwm_quad_b: 0.0,
            srs_lin_c: 4e-5,
            fl_amp_d: 7e-3,
            fl_sat_e: 16.0,
            n_srs: 14e-3,
            n_fl: 7e-3,
            n_fwm: 0.0,
            voigt_gauss_fwhm: 380.0,
            voigt_lorentz_fwhm: 920.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("fwm_quad_b", self.fwm_quad_b),
            ("srs_lin_c", self.srs_lin_c),
            ("fl_amp_d", self.fl_amp_d),
            ("fl_sat_e", self.fl_sat_e),
            ("n_srs", self.n_srs),
            ("n_fl", self.n_fl),
            ("n_fwm", self.n_fwm),
        ] {
            if v < 0.0 {
                return Err(ModelError::Negative { name, value: v });
            }
        }
        for (name, v) in [
            ("voigt_gauss_fwhm", self.voigt_gauss_fwhm),
            ("voigt_lorentz_fwhm", self.voigt_lorentz_fwhm),
        ] {
            if v <= 0.0 {
                return Err(ModelError::NonPositive { name, value: v });
            }
        }
        Ok(())
    }
}

/// Detection-chain calibration converting raw counts to photon numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    /// Signal/monitor power splitting ratio sigma.
    pub split_ratio_sigma: f64,
    /// Single-photon detector efficiency, in (0, 1].
    pub apd_efficiency: f64,
    /// Experiment repetition rate (Hz).
    pub rep_rate: f64,
    /// Integration time (s).
    pub integration_time: f64,
    /// Monitor APD count rate (counts/s).
    pub monitor_rate: f64,
    /// Transmission of the filtering chain for the signal, in (0, 1].
    pub filter_signal_transmission: f64,
    /// Relative 1-sigma uncertainty of the splitting ratio (0 if unknown).
    pub split_ratio_rel_err: f64,
    /// Relative 1-sigma uncertainty of the APD efficiency (0 if unknown).
    pub apd_rel_err: f64,
}

impl Calibration {
    /// Operating point of the measurement: 11 us cycle, 60 s integration,
    /// 10% monitor tap, APD at 0.33(5), signal filter transmission 1/2.5.
    pub fn paper() -> Self {
        Calibration {
            split_ratio_sigma: 9.0,
            apd_efficiency: 0.33,
            rep_rate: 1.0 / 11e-6,
            integration_time: 60.0,
            monitor_rate: 1.0 / 11e-6 * 0.33 / 9.0, // puts |alpha|^2 at exactly 1
            filter_signal_transmission: 0.4,
            split_ratio_rel_err: 0.0,
            apd_rel_err: 0.05 / 0.33,
        }
    }

    /// Number of storage/retrieval attempts in one integration run.
    pub fn attempts(&self) -> f64 {
        self.rep_rate * self.integration_time
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("split_ratio_sigma", self.split_ratio_sigma),
            ("rep_rate", self.rep_rate),
            ("integration_time", self.integration_time),
        ] {
            if v <= 0.0 {
                return Err(ModelError::NonPositive { name, value: v });
            }
        }
        if self.monitor_rate < 0.0 {
            return Err(ModelError::Negative {
                name: "monitor_rate",
                value: self.monitor_rate,
            });
        }
        for (name, v) in [
            ("apd_efficiency", self.apd_efficiency),
            ("filter_signal_transmission", self.filter_signal_transmission),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ModelError::OutOfRange {
                    name,
                    value: v,
                    bounds: "(0, 1]",
                });
            }
        }
        for (name, v) in [
            ("split_ratio_rel_err", self.split_ratio_rel_err),
            ("apd_rel_err", self.apd_rel_err),
        ] {
            if v < 0.0 {
                return Err(ModelError::Negative { name, value: v });
            }
        }
        Ok(())
    }
}

/// Analysis summary for one storage/retrieval measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    /// Mean input photon number.
    pub alpha2: f64,
    /// End-to-end efficiency (includes filtering, excludes the APD).
    pub eta_e2e: f64,
    /// Internal memory efficiency (filter transmission divided out).
    pub eta_mem: f64,
    /// Signal-to-noise ratio; `None` when no noise counts were recorded.
    pub snr: Option<f64>,
    /// Mean input photon number giving SNR = 1; `None` when SNR is undefined.
    pub mu1: Option<f64>,
    /// Storage time (ns).
    pub storage_time_ns: f64,
    /// Detection window (t_min, t_max) in ns.
    pub window_ns: (f64, f64),
}

/// Axis selector for the combined SNR model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ModelAxis {
    PulseWidth,
    Energy,
    Detuning,
}

/// Memory efficiency vs signal pulse width (ns):
/// eta0 / sqrt(1 + (4 ln2 / (dt * bandwidth))^2).
pub fn eta_vs_pulse_width(dt_ns: f64, p: &EfficiencyParams) -> Result<f64, ModelError> {
    if dt_ns <= 0.0 {
        return Err(ModelError::NonPositive {
            name: "dt_ns",
            value: dt_ns,
        });
    }
    // ns * MHz = 1e-3 dimensionless
    let tbp = dt_ns * p.mem_bandwidth_fwhm * 1e-3;
    Ok(p.eta0_width / (1.0 + (4.0 * LN2 / tbp).powi(2)).sqrt())
}

/// Memory efficiency vs control pulse energy (pJ): eta0 * exp(-a / E).
pub fn eta_vs_control_energy(e_c_pj: f64, p: &EfficiencyParams) -> Result<f64, ModelError> {
    if e_c_pj <= 0.0 {
        return Err(ModelError::NonPositive {
            name: "e_c_pj",
            value: e_c_pj,
        });
    }
    Ok(p.eta0_energy * (-p.energy_scale_a / e_c_pj).exp())
}

/// Memory efficiency vs laser detuning (MHz): eta0 * exp(-alpha(delta)),
/// with alpha a Lorentzian absorbance peaking at line center.
pub fn eta_vs_detuning(delta_mhz: f64, p: &EfficiencyParams) -> f64 {
    let hwhm = p.lorentz_fwhm / 2.0;
    let x = delta_mhz - p.lorentz_center;
    let absorbance = p.lorentz_peak_absorbance * hwhm * hwhm / (x * x + hwhm * hwhm);
    p.eta0_detuning * (-absorbance).exp()
}

/// Readout noise vs control pulse energy (pJ), counts per retrieval attempt:
/// b E^2 (FWM) + c E (SRS) + d E / (e + E) (fluorescence).
pub fn noise_vs_energy(e_c_pj: f64, p: &NoiseParams) -> Result<f64, ModelError> {
    if e_c_pj < 0.0 {
        return Err(ModelError::Negative {
            name: "e_c_pj",
            value: e_c_pj,
        });
    }
    let fl = if e_c_pj == 0.0 {
        0.0
    } else {
        p.fl_amp_d * e_c_pj / (p.fl_sat_e + e_c_pj)
    };
    Ok(p.fwm_quad_b * e_c_pj * e_c_pj + p.srs_lin_c * e_c_pj + fl)
}

/// Total readout noise vs detuning (MHz), counts per retrieval attempt:
/// constant SRS + Voigt fluorescence + constant FWM.
pub fn noise_vs_detuning(delta_mhz: f64, p: &NoiseParams) -> f64 {
    p.n_srs + p.n_fl * voigt_unit_peak(delta_mhz, p.voigt_gauss_fwhm, p.voigt_lorentz_fwhm)
        + p.n_fwm
}

/// Noise model matched to a sweep axis. The pulse-width axis has no noise
/// dependence of its own; there the per-attempt noise is the component sum
/// of the detuning decomposition at the operating point.
pub fn noise_for_axis(axis: ModelAxis, x: f64, p: &NoiseParams) -> Result<f64, ModelError> {
    match axis {
        ModelAxis::Energy => noise_vs_energy(x, p),
        ModelAxis::Detuning => Ok(noise_vs_detuning(x, p)),
        ModelAxis::PulseWidth => Ok(p.n_srs + p.n_fl + p.n_fwm),
    }
}

/// Efficiency model matched to a sweep axis.
pub fn eta_for_axis(axis: ModelAxis, x: f64, p: &EfficiencyParams) -> Result<f64, ModelError> {
    match axis {
        ModelAxis::PulseWidth => eta_vs_pulse_width(x, p),
        ModelAxis::Energy => eta_vs_control_energy(x, p),
        ModelAxis::Detuning => Ok(eta_vs_detuning(x, p)),
    }
}

/// Modeled SNR along one sweep axis: detected signal counts per attempt
/// (alpha2 * eta(x) * eta_APD) over modeled noise counts per attempt.
pub fn snr_model(
    axis: ModelAxis,
    x: f64,
    alpha2: f64,
    cal: &Calibration,
    ep: &EfficiencyParams,
    np: &NoiseParams,
) -> Result<f64, ModelError> {
    if alpha2 < 0.0 {
        return Err(ModelError::Negative {
            name: "alpha2",
            value: alpha2,
        });
    }
    let noise = noise_for_axis(axis, x, np)?;
    if noise <= 0.0 {
        return Err(ModelError::ZeroNoise);
    }
    let eta = eta_for_axis(axis, x, ep)?;
    Ok(alpha2 * eta * cal.apd_efficiency / noise)
}

/// mu_1: mean input photon number that would give SNR = 1, assuming the
/// output SNR is linear in the input photon number.
pub fn mu_one(alpha2: f64, snr: f64) -> Result<f64, ModelError> {
    if snr <= 0.0 {
        return Err(ModelError::NonPositive {
            name: "snr",
            value: snr,
        });
    }
    if alpha2 <= 0.0 {
        return Err(ModelError::NonPositive {
            name: "alpha2",
            value: alpha2,
        });
    }
    Ok(alpha2 / snr)
}

/// Transform-limited bandwidth (ordinary frequency FWHM, MHz) of a Gaussian
/// pulse of intensity FWHM `dt_ns`: dt * df = 2 ln2 / pi.
pub fn transform_limit_bandwidth(dt_ns: f64) -> Result<f64, ModelError> {
    if dt_ns <= 0.0 {
        return Err(ModelError::NonPositive {
            name: "dt_ns",
            value: dt_ns,
        });
    }
    Ok(2.0 * LN2 / (PI * dt_ns) * 1e3)
}

/// Peak Rabi frequency (rad/s) of a Gaussian beam: peak intensity
/// I0 = 2P / (pi w^2) with w the 1/e^2 radius, w = FWHM / sqrt(2 ln2),
/// then Omega = d E_peak / hbar.
pub fn peak_rabi_frequency(
    power_mw: f64,
    beam_fwhm_um: f64,
    dipole_cm: f64,
) -> Result<f64, ModelError> {
    for (name, v) in [
        ("power_mw", power_mw),
        ("beam_fwhm_um", beam_fwhm_um),
        ("dipole_cm", dipole_cm),
    ] {
        if v <= 0.0 {
            return Err(ModelError::NonPositive { name, value: v });
        }
    }
    let w = beam_fwhm_um * 1e-6 / (2.0 * LN2).sqrt();
    let intensity = 2.0 * power_mw * 1e-3 / (PI * w * w);
    let e_peak = (2.0 * intensity / (C_LIGHT * EPS0)).sqrt();
    Ok(dipole_cm * e_peak / HBAR)
}

/// Airy transmission of a lossless Fabry-Perot etalon at `detune_ghz` from
/// resonance, with free spectral range `fsr_ghz` and the given finesse.
pub fn etalon_transmission(detune_ghz: f64, fsr_ghz: f64, finesse: f64) -> Result<f64, ModelError> {
    for (name, v) in [("fsr_ghz", fsr_ghz), ("finesse", finesse)] {
        if v <= 0.0 {
            return Err(ModelError::NonPositive { name, value: v });
        }
    }
    let coeff = (2.0 * finesse / PI).powi(2);
    let s = (PI * detune_ghz / fsr_ghz).sin();
    Ok(1.0 / (1.0 + coeff * s * s))
}
