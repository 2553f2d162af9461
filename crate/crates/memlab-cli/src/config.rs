//! Run configuration: JSON with fixed units per key.
//!
//! Every numeric key carries its unit in the name (ns, pJ, MHz, Hz, s, us);
//! nothing is auto-converted. Unknown keys are errors. An empty object is a
//! complete configuration: every field defaults to the measured operating
//! point of the memory.

use serde::{Deserialize, Serialize};

use memlab_core::counting::SequenceTiming;
use memlab_core::models::{Calibration, EfficiencyParams, NoiseParams};
use memlab_core::sim::{ControlPulse, MediumParams};

const TWO_PI: f64 = std::f64::consts::TAU;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub efficiency: EfficiencyBlock,
    pub noise: NoiseBlock,
    pub calibration: CalibrationBlock,
    pub medium: MediumBlock,
    pub control: ControlBlock,
    pub signal: SignalBlock,
    pub timing: TimingBlock,
    pub sweep: SweepBlock,
    pub seed: u64,
    /// Mean input photon number used where no monitor calibration applies.
    pub alpha2: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            efficiency: EfficiencyBlock::default(),
            noise: NoiseBlock::default(),
            calibration: CalibrationBlock::default(),
            medium: MediumBlock::default(),
            control: ControlBlock::default(),
            signal: SignalBlock::default(),
            timing: TimingBlock::default(),
            sweep: SweepBlock::default(),
            seed: 0,
            alpha2: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EfficiencyBlock {
    pub eta0_width: f64,
    pub mem_bandwidth_fwhm_mhz: f64,
    pub eta0_energy: f64,
    pub energy_scale_a_pj: f64,
    pub eta0_detuning: f64,
    pub lorentz_fwhm_mhz: f64,
    pub lorentz_center_mhz: f64,
    pub lorentz_peak_absorbance: f64,
}

impl Default for EfficiencyBlock {
    fn default() -> Self {
        let p = EfficiencyParams::paper();
        EfficiencyBlock {
            eta0_width: p.eta0_width,
            mem_bandwidth_fwhm_mhz: p.mem_bandwidth_fwhm,
            eta0_energy: p.eta0_energy,
            energy_scale_a_pj: p.energy_scale_a,
            eta0_detuning: p.eta0_detuning,
            lorentz_fwhm_mhz: p.lorentz_fwhm,
            lorentz_center_mhz: p.lorentz_center,
            lorentz_peak_absorbance: p.lorentz_peak_absorbance,
        }
    }
}

impl EfficiencyBlock {
    pub fn to_params(&self) -> EfficiencyParams {
        EfficiencyParams {
            eta0_width: self.eta0_width,
            mem_bandwidth_fwhm: self.mem_bandwidth_fwhm_mhz,
            eta0_energy: self.eta0_energy,
            energy_scale_a: self.energy_scale_a_pj,
            eta0_detuning: self.eta0_detuning,
            lorentz_fwhm: self.lorentz_fwhm_mhz,
            lorentz_center: self.lorentz_center_mhz,
            lorentz_peak_absorbance: self.lorentz_peak_absorbance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseBlock {
    pub fwm_quad_b_per_pj2: f64,
    pub srs_lin_c_per_pj: f64,
    pub fl_amp_d: f64,
    pub fl_sat_e_pj: f64,
    pub n_srs: f64,
    pub n_fl: f64,
    pub n_fwm: f64,
    pub voigt_gauss_fwhm_mhz: f64,
    pub voigt_lorentz_fwhm_mhz: f64,
}

impl Default for NoiseBlock {
    fn default() -> Self {
        let p = NoiseParams::paper();
        NoiseBlock {
            fwm_quad_b_per_pj2: p.fwm_quad_b,
            srs_lin_c_per_pj: p.srs_lin_c,
            fl_amp_d: p.fl_amp_d,
            fl_sat_e_pj: p.fl_sat_e,
            n_srs: p.n_srs,
            n_fl: p.n_fl,
            n_fwm: p.n_fwm,
            voigt_gauss_fwhm_mhz: p.voigt_gauss_fwhm,
            voigt_lorentz_fwhm_mhz: p.voigt_lorentz_fwhm,
        }
    }
}

impl NoiseBlock {
    pub fn to_params(&self) -> NoiseParams {
        NoiseParams {
            fwm_quad_b: self.fwm_quad_b_per_pj2,
            srs_lin_c: self.srs_lin_c_per_pj,
            fl_amp_d: self.fl_amp_d,
            fl_sat_e: self.fl_sat_e_pj,
            n_srs: self.n_srs,
            n_fl: self.n_fl,
            n_fwm: self.n_fwm,
            voigt_gauss_fwhm: self.voigt_gauss_fwhm_mhz,
            voigt_lorentz_fwhm: self.voigt_lorentz_fwhm_mhz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationBlock {
    pub split_ratio_sigma: f64,
    pub apd_efficiency: f64,
    pub rep_rate_hz: f64,
    pub integration_time_s: f64,
    pub monitor_rate_cps: f64,
    pub filter_signal_transmission: f64,
    pub split_ratio_rel_err: f64,
    pub apd_rel_err: f64,
}

impl Default for CalibrationBlock {
    fn default() -> Self {
        let c = Calibration::paper();
        CalibrationBlock {
            split_ratio_sigma: c.split_ratio_sigma,
            apd_efficiency: c.apd_efficiency,
            rep_rate_hz: c.rep_rate,
            integration_time_s: c.integration_time,
            monitor_rate_cps: c.monitor_rate,
            filter_signal_transmission: c.filter_signal_transmission,
            split_ratio_rel_err: c.split_ratio_rel_err,
            apd_rel_err: c.apd_rel_err,
        }
    }
}

impl CalibrationBlock {
    pub fn to_params(&self) -> Calibration {
        Calibration {
            split_ratio_sigma: self.split_ratio_sigma,
            apd_efficiency: self.apd_efficiency,
            rep_rate: self.rep_rate_hz,
            integration_time: self.integration_time_s,
            monitor_rate: self.monitor_rate_cps,
            filter_signal_transmission: self.filter_signal_transmission,
            split_ratio_rel_err: self.split_ratio_rel_err,
            apd_rel_err: self.apd_rel_err,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MediumBlock {
    pub optical_depth: f64,
    /// Polarization decay as a half-width, MHz (natural + pressure).
    pub gamma_p_half_width_mhz: f64,
    pub ground_decoherence_khz: f64,
    pub one_photon_detuning_mhz: f64,
    pub two_photon_detuning_mhz: f64,
    pub cell_length_cm: f64,
    pub pumping_efficiency: f64,
}

impl Default for MediumBlock {
    fn default() -> Self {
        MediumBlock {
            optical_depth: 60.0,
            gamma_p_half_width_mhz: 2.3 + 0.5 * 15.8 * 5.0, // 5 Torr N2
            ground_decoherence_khz: 0.0,
            one_photon_detuning_mhz: -2300.0, // red detuning
            two_photon_detuning_mhz: 0.0,
            cell_length_cm: 7.5,
            pumping_efficiency: 0.8,
        }
    }
}

impl MediumBlock {
    pub fn to_params(&self) -> MediumParams {
        MediumParams {
            optical_depth: self.optical_depth * self.pumping_efficiency,
            excited_decay_gamma: TWO_PI * self.gamma_p_half_width_mhz * 1e6,
            ground_decoherence: TWO_PI * self.ground_decoherence_khz * 1e3,
            one_photon_detuning: TWO_PI * self.one_photon_detuning_mhz * 1e6,
            two_photon_detuning: TWO_PI * self.two_photon_detuning_mhz * 1e6,
            cell_length: self.cell_length_cm * 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlBlock {
    pub peak_rabi_mhz: f64,
    pub fwhm_ns: f64,
    pub write_center_ns: f64,
    pub read_center_ns: f64,
}

impl Default for ControlBlock {
    fn default() -> Self {
        ControlBlock {
            peak_rabi_mhz: 540.0,
            fwhm_ns: 25.0,
            write_center_ns: 90.0,
            read_center_ns: 100.0,
        }
    }
}

impl ControlBlock {
    pub fn write_pulse(&self) -> ControlPulse {
        ControlPulse {
            peak_rabi: TWO_PI * self.peak_rabi_mhz * 1e6,
            fwhm_ns: self.fwhm_ns,
            center_ns: self.write_center_ns,
        }
    }

    pub fn read_pulse(&self) -> ControlPulse {
        ControlPulse {
            peak_rabi: TWO_PI * self.peak_rabi_mhz * 1e6,
            fwhm_ns: self.fwhm_ns,
            center_ns: self.read_center_ns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalBlock {
    pub fwhm_ns: f64,
    pub center_ns: f64,
    pub window_ns: f64,
    pub mean_photons: f64,
}

impl Default for SignalBlock {
    fn default() -> Self {
        SignalBlock {
            fwhm_ns: 25.0,
            center_ns: 100.0,
            window_ns: 220.0,
            mean_photons: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingBlock {
    pub pump_duration_us: f64,
    pub write_time_ns: f64,
    pub signal_delay_ns: f64,
    pub read_delay_ns: f64,
    pub rep_period_us: f64,
    pub bin_width_ns: f64,
    pub t_max_ns: f64,
}

impl Default for TimingBlock {
    fn default() -> Self {
        let t = SequenceTiming::default();
        TimingBlock {
            pump_duration_us: t.pump_duration_us,
            write_time_ns: t.write_time_ns,
            signal_delay_ns: t.signal_delay_ns,
            read_delay_ns: t.read_delay_ns,
            rep_period_us: t.rep_period_us,
            bin_width_ns: 1.0,
            t_max_ns: 155.0,
        }
    }
}

impl TimingBlock {
    pub fn to_params(&self) -> SequenceTiming {
        SequenceTiming {
            pump_duration_us: self.pump_duration_us,
            write_time_ns: self.write_time_ns,
            signal_delay_ns: self.signal_delay_ns,
            read_delay_ns: self.read_delay_ns,
            rep_period_us: self.rep_period_us,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PulseWidthNs,
    ControlEnergyPj,
    DetuningMhz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepBlock {
    pub axis: SweepAxis,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
}

impl Default for SweepBlock {
    fn default() -> Self {
        SweepBlock {
            axis: SweepAxis::ControlEnergyPj,
            from: 280.0,
            to: 560.0,
            steps: 8,
        }
    }
}

impl SweepBlock {
    /// Grid points, inclusive of both ends, ordered by axis value.
    pub fn grid(&self) -> Vec<f64> {
        if self.steps <= 1 {
            return vec![self.from];
        }
        let step = (self.to - self.from) / (self.steps - 1) as f64;
        let mut pts: Vec<f64> = (0..self.steps)
            .map(|i| self.from + i as f64 * step)
            .collect();
        pts.sort_by(f64::total_cmp);
        pts
    }
}

/// Parse, default and range-check a configuration file. Reports every
/// violated bound with the offending key and value.
pub fn validate_config(text: &str) -> Result<RunConfig, String> {
    let trimmed = text.trim();
    let body = if trimmed.is_empty() { "{}" } else { trimmed };
    let mut de = serde_json::Deserializer::from_str(body);
    let cfg: RunConfig = match serde_path_aware(&mut de) {
        Ok(c) => c,
        Err(e) => return Err(e),
    };
    let mut problems = Vec::new();
    let mut check = |ok: bool, key: &str, msg: String| {
        if !ok {
            problems.push(format!("{key}: {msg}"));
        }
    };

    let e = &cfg.efficiency;
    for (key, v) in [
        ("efficiency.eta0_width", e.eta0_width),
        ("efficiency.eta0_energy", e.eta0_energy),
        ("efficiency.eta0_detuning", e.eta0_detuning),
    ] {
        check((0.0..=1.0).contains(&v), key, format!("{v} outside [0, 1]"));
    }
    for (key, v) in [
        ("efficiency.mem_bandwidth_fwhm_mhz", e.mem_bandwidth_fwhm_mhz),
        ("efficiency.energy_scale_a_pj", e.energy_scale_a_pj),
        ("efficiency.lorentz_fwhm_mhz", e.lorentz_fwhm_mhz),
        ("noise.voigt_gauss_fwhm_mhz", cfg.noise.voigt_gauss_fwhm_mhz),
        ("noise.voigt_lorentz_fwhm_mhz", cfg.noise.voigt_lorentz_fwhm_mhz),
        ("calibration.split_ratio_sigma", cfg.calibration.split_ratio_sigma),
        ("calibration.rep_rate_hz", cfg.calibration.rep_rate_hz),
        ("calibration.integration_time_s", cfg.calibration.integration_time_s),
        ("medium.cell_length_cm", cfg.medium.cell_length_cm),
        ("control.fwhm_ns", cfg.control.fwhm_ns),
        ("signal.fwhm_ns", cfg.signal.fwhm_ns),
        ("signal.window_ns", cfg.signal.window_ns),
        ("timing.bin_width_ns", cfg.timing.bin_width_ns),
        ("timing.rep_period_us", cfg.timing.rep_period_us),
    ] {
        check(v > 0.0, key, format!("{v} must be > 0"));
    }
    for (key, v) in [
        ("noise.fwm_quad_b_per_pj2", cfg.noise.fwm_quad_b_per_pj2),
        ("noise.srs_lin_c_per_pj", cfg.noise.srs_lin_c_per_pj),
        ("noise.fl_amp_d", cfg.noise.fl_amp_d),
        ("noise.fl_sat_e_pj", cfg.noise.fl_sat_e_pj),
        ("noise.n_srs", cfg.noise.n_srs),
        ("noise.n_fl", cfg.noise.n_fl),
        ("noise.n_fwm", cfg.noise.n_fwm),
        ("efficiency.lorentz_peak_absorbance", e.lorentz_peak_absorbance),
        ("medium.optical_depth", cfg.medium.optical_depth),
        ("medium.gamma_p_half_width_mhz", cfg.medium.gamma_p_half_width_mhz),
        ("medium.ground_decoherence_khz", cfg.medium.ground_decoherence_khz),
        ("control.peak_rabi_mhz", cfg.control.peak_rabi_mhz),
        ("signal.mean_photons", cfg.signal.mean_photons),
        ("calibration.monitor_rate_cps", cfg.calibration.monitor_rate_cps),
        ("alpha2", cfg.alpha2),
        ("timing.signal_delay_ns", cfg.timing.signal_delay_ns),
        ("timing.pump_duration_us", cfg.timing.pump_duration_us),
    ] {
        check(v >= 0.0, key, format!("{v} must be >= 0"));
    }
    for (key, v) in [
        ("calibration.apd_efficiency", cfg.calibration.apd_efficiency),
        (
            "calibration.filter_signal_transmission",
            cfg.calibration.filter_signal_transmission,
        ),
        ("medium.pumping_efficiency", cfg.medium.pumping_efficiency),
    ] {
        check(
            v > 0.0 && v <= 1.0,
            key,
            format!("{v} outside (0, 1]"),
        );
    }
    check(
        cfg.timing.read_delay_ns > cfg.timing.signal_delay_ns,
        "timing.read_delay_ns",
        format!(
            "{} must exceed timing.signal_delay_ns = {}",
            cfg.timing.read_delay_ns, cfg.timing.signal_delay_ns
        ),
    );
    check(
        cfg.sweep.steps >= 1,
        "sweep.steps",
        "must be >= 1".to_string(),
    );
    check(
        cfg.sweep.from.is_finite() && cfg.sweep.to.is_finite(),
        "sweep.from/to",
        "must be finite".to_string(),
    );

    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(problems.join("; "))
    }
}

fn serde_path_aware<'de, D>(de: D) -> Result<RunConfig, String>
where
    D: serde::Deserializer<'de>,
    D::Error: std::fmt::Display,
{
    RunConfig::deserialize(de).map_err(|e| e.to_string())
}
