//! Desk-scale physics of a warm-vapor EIT quantum memory.
//!
//! The crate covers four layers of the storage/retrieval experiment:
//!
//! * [`models`]: closed-form empirical models for memory efficiency and
//!   readout noise, plus derived figures of merit (SNR, mu_1, transform
//!   limit, Rabi frequency, etalon filtering),
//! * [`sim`]: a first-principles 1-D Maxwell-Bloch simulator of the
//!   three-level Lambda system: EIT storage, retrieval and probe spectra,
//! * [`counting`]: photon-counting histograms: Poisson synthesis from
//!   envelopes and noise rates, and analysis back into efficiencies, SNR
//!   and storage time,
//! * [`fitting`]: bounded Levenberg-Marquardt and the two-stage
//!   decomposition of readout noise into SRS, fluorescence and FWM.
//!
//! [`voigt`] supplies the line-shape kernel and [`io`] the file formats
//! used by the command-line tools.

pub mod counting;
pub mod fitting;
pub mod io;
pub mod models;
pub mod sim;
pub mod voigt;

pub use counting::{
    calibrate_alpha2, default_window, eta_e2e_from_counts, eta_mem_from_e2e,
    extract_storage_time, noise_correct, snr_from_counts, synthesize_histogram,
    window_tradeoff, Alpha2, ArrivalHistogram, DetectionWindow, SequenceTiming, TimeRegion,
};
pub use fitting::{
    decompose_vs_detuning, fit_noise_energy, fit_total_noise, least_squares_fit,
    param_uncertainties, Dataset, DetuningComponents, FitFlag, FitModel, FitResult,
};
pub use models::{
    eta_vs_control_energy, eta_vs_detuning, eta_vs_pulse_width, etalon_transmission, mu_one,
    noise_vs_detuning, noise_vs_energy, peak_rabi_frequency, snr_model,
    transform_limit_bandwidth, Calibration, EfficiencyParams, MetricsReport, ModelAxis,
    NoiseParams,
};
pub use sim::{
    efficiency_vs_bandwidth_curve, internal_efficiency, simulate_retrieval, simulate_storage,
    weak_probe_transmission_spectrum, ControlPulse, MediumParams, SignalEnvelope, SimGrid,
    SpinWaveState, StorageOutcome,
};
pub use voigt::{voigt_fwhm, voigt_unit_peak};
