//! 1-D three-level Maxwell-Bloch simulator of EIT storage and retrieval.
//!
//! The signal field E(z, t), optical polarization P(z, t) and ground-state
//! coherence (spin wave) S(z, t) evolve in the co-moving frame over a cell
//! of normalized length z in [0, 1]:
//!
//! ```text
//!   dE/dz = i k P                         k = sqrt(d * gamma_p / 2)
//!   dP/dt = -(gamma_p + i D1) P + i k E + i (Omega/2) S
//!   dS/dt = -(gamma_s + i D2) S + i (Omega*/2) P
//! ```
//!
//! with d the resonant intensity optical depth (transmission e^-d at zero
//! control), gamma_p the total polarization decay, gamma_s the ground-state
//! decoherence and D1/D2 the one-/two-photon detunings. The symmetric
//! coupling k in both the E and P equations makes the photon number budget
//!
//! ```text
//!   input = leaked + stored + scattered + residual polarization
//! ```
//!
//! exact in the continuum; the integrator tracks each term so tests can
//! close the budget numerically.
//!
//! Numerics: method of lines, trapezoidal integration of E over z at each
//! stage, explicit RK4 for (P, S). Retardation over the cell is neglected.

use num_complex::Complex64;
use thiserror::Error;

const LN2: f64 = std::f64::consts::LN_2;

/// Stability margin: dt must not exceed this fraction of the fastest rate.
const DT_SAFETY: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{name} must be {req} (got {value})")]
    InvalidParam {
        name: &'static str,
        req: &'static str,
        value: f64,
    },
    #[error(
        "time grid under-resolved: dt = {dt_ns} ns exceeds {max_ns} ns \
         (0.05 / fastest rate {rate_rad_ns} rad/ns); refine nt"
    )]
    UnderResolved {
        dt_ns: f64,
        max_ns: f64,
        rate_rad_ns: f64,
    },
    #[error("signal envelope needs >= 2 samples on a uniform time grid")]
    BadEnvelope,
    #[error("input envelope carries no photons")]
    ZeroInput,
}

/// Atomic/optical parameters of the storage medium.
///
/// Rates and detunings are angular frequencies in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MediumParams {
    /// Resonant intensity optical depth: T = e^-d at Omega = 0, D1 = 0.
    pub optical_depth: f64,
    /// Total polarization decay rate (natural half-width + pressure
    /// broadening), rad/s.
    pub excited_decay_gamma: f64,
    /// Ground-state decoherence rate, rad/s.
    pub ground_decoherence: f64,
    /// One-photon detuning of signal and control, rad/s.
    pub one_photon_detuning: f64,
    /// Two-photon detuning, rad/s.
    pub two_photon_detuning: f64,
    /// Physical cell length, m (bookkeeping for the spin-wave grid).
    pub cell_length: f64,
}

/// Natural half-width of the storage transition, MHz.
pub const NATURAL_HALF_WIDTH_MHZ: f64 = 2.3;
/// Default pressure-broadening coefficient for N2 buffer gas, MHz (FWHM)
/// per Torr. Configurable; this default reproduces ~79 MHz FWHM at 5 Torr.
pub const PRESSURE_BROADENING_MHZ_PER_TORR: f64 = 15.8;

impl MediumParams {
    /// Cell at its measured operating point: 7.5 cm cell, 5 Torr N2,
    /// 2300 MHz red one-photon detuning. Optical depth and pumping are free
    /// inputs; `optical_depth` here is the effective (pumping-scaled) depth.
    pub fn paper_cell(optical_depth: f64) -> Self {
        MediumParams {
            optical_depth,
            excited_decay_gamma: gamma_p_from_pressure(5.0, PRESSURE_BROADENING_MHZ_PER_TORR),
            ground_decoherence: 0.0,
            one_photon_detuning: -2.0 * std::f64::consts::PI * 2300e6,
            two_photon_detuning: 0.0,
            cell_length: 0.075,
        }
    }

    /// Effective optical depth after imperfect state preparation.
    pub fn with_pumping_efficiency(mut self, pumping: f64) -> Self {
        self.optical_depth *= pumping;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.optical_depth < 0.0 {
            return Err(SimError::InvalidParam {
                name: "optical_depth",
                req: ">= 0",
                value: self.optical_depth,
            });
        }
        if self.excited_decay_gamma < 0.0 {
            return Err(SimError::InvalidParam {
                name: "excited_decay_gamma",
                req: ">= 0",
                value: self.excited_decay_gamma,
            });
        }
        if self.ground_decoherence < 0.0 {
            return Err(SimError::InvalidParam {
                name: "ground_decoherence",
                req: ">= 0",
                value: self.ground_decoherence,
            });
        }
        if self.cell_length <= 0.0 {
            return Err(SimError::InvalidParam {
                name: "cell_length",
                req: "> 0",
                value: self.cell_length,
            });
        }
        Ok(())
    }
}

/// Polarization decay rate (rad/s) from buffer-gas pressure.
pub fn gamma_p_from_pressure(pressure_torr: f64, broadening_mhz_per_torr: f64) -> f64 {
    let half_width_mhz = NATURAL_HALF_WIDTH_MHZ + 0.5 * broadening_mhz_per_torr * pressure_torr;
    2.0 * std::f64::consts::PI * half_width_mhz * 1e6
}

/// Gaussian control pulse. `fwhm_ns` is the FWHM of the *power* envelope
/// Omega^2(t), matching how pulse widths are quoted for the signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlPulse {
    /// Peak Rabi frequency, rad/s.
    pub peak_rabi: f64,
    /// FWHM of Omega^2(t), ns.
    pub fwhm_ns: f64,
    /// Pulse center, ns.
    pub center_ns: f64,
}

/// Control energy (pJ) per unit of the Rabi-squared integral (rad^2/ns),
/// fixed once from the measured pair (12.9 mW peak power <-> the quoted
/// peak Rabi frequency of 2 pi x 540 MHz): kappa = P_peak / Omega_peak^2.
pub const CONTROL_ENERGY_PJ_PER_RAD2_NS: f64 =
    12.9 / (2.0 * std::f64::consts::PI * 0.54 * 2.0 * std::f64::consts::PI * 0.54);

impl ControlPulse {
    pub fn off() -> Self {
        ControlPulse {
            peak_rabi: 0.0,
            fwhm_ns: 1.0,
            center_ns: 0.0,
        }
    }

    /// Rabi frequency at time t (ns), in rad/ns.
    pub fn rabi_at(&self, t_ns: f64) -> f64 {
        let u = (t_ns - self.center_ns) / self.fwhm_ns;
        self.peak_rabi * 1e-9 * (-2.0 * LN2 * u * u).exp()
    }

    /// Pulse energy in pJ under the fixed energy calibration.
    pub fn energy_pj(&self) -> f64 {
        let omega_pk = self.peak_rabi * 1e-9; // rad/ns
        let integral = omega_pk * omega_pk
            * self.fwhm_ns
            * (std::f64::consts::PI / (4.0 * LN2)).sqrt();
        CONTROL_ENERGY_PJ_PER_RAD2_NS * integral
    }

    /// Peak Rabi frequency (rad/s) that gives the requested pulse energy at
    /// this pulse's width.
    pub fn peak_rabi_for_energy(energy_pj: f64, fwhm_ns: f64) -> f64 {
        let integral_per_omega2 = fwhm_ns * (std::f64::consts::PI / (4.0 * LN2)).sqrt();
        (energy_pj / (CONTROL_ENERGY_PJ_PER_RAD2_NS * integral_per_omega2)).sqrt() * 1e9
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.peak_rabi < 0.0 {
            return Err(SimError::InvalidParam {
                name: "peak_rabi",
                req: ">= 0",
                value: self.peak_rabi,
            });
        }
        if self.fwhm_ns <= 0.0 {
            return Err(SimError::InvalidParam {
                name: "fwhm_ns",
                req: "> 0",
                value: self.fwhm_ns,
            });
        }
        Ok(())
    }
}

/// Complex signal envelope on a uniform time grid; |amplitude|^2 is a photon
/// flux in photons/ns, so the time integral is a photon number.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalEnvelope {
    pub time_ns: Vec<f64>,
    pub amplitude: Vec<Complex64>,
}

impl SignalEnvelope {
    /// Gaussian pulse of intensity FWHM `fwhm_ns` centered at `center_ns`,
    /// numerically normalized to `photons` on the given grid.
    pub fn gaussian(
        t_start: f64,
        t_end: f64,
        n: usize,
        center_ns: f64,
        fwhm_ns: f64,
        photons: f64,
    ) -> Self {
        assert!(n >= 2 && t_end > t_start && fwhm_ns > 0.0 && photons >= 0.0);
        let dt = (t_end - t_start) / (n - 1) as f64;
        let time_ns: Vec<f64> = (0..n).map(|i| t_start + i as f64 * dt).collect();
        let mut amplitude: Vec<Complex64> = time_ns
            .iter()
            .map(|&t| {
                let u = (t - center_ns) / fwhm_ns;
                Complex64::new((-2.0 * LN2 * u * u).exp(), 0.0)
            })
            .collect();
        let raw = photon_number(&time_ns, &amplitude);
        if raw > 0.0 && photons > 0.0 {
            let scale = (photons / raw).sqrt();
            for a in &mut amplitude {
                *a *= scale;
            }
        } else {
            amplitude.iter_mut().for_each(|a| *a = Complex64::new(0.0, 0.0));
        }
        SignalEnvelope { time_ns, amplitude }
    }

    /// Same envelope with a carrier at detuning `delta` (rad/ns) folded in.
    pub fn with_detuning(mut self, delta_rad_ns: f64) -> Self {
        for (t, a) in self.time_ns.iter().zip(self.amplitude.iter_mut()) {
            *a *= Complex64::from_polar(1.0, -delta_rad_ns * t);
        }
        self
    }

    /// Envelope shifted in time by `dt_ns`.
    pub fn shifted(&self, dt_ns: f64) -> Self {
        SignalEnvelope {
            time_ns: self.time_ns.iter().map(|t| t + dt_ns).collect(),
            amplitude: self.amplitude.clone(),
        }
    }

    pub fn photon_number(&self) -> f64 {
        photon_number(&self.time_ns, &self.amplitude)
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.time_ns.len() < 2 || self.time_ns.len() != self.amplitude.len() {
            return Err(SimError::BadEnvelope);
        }
        let dt = self.time_ns[1] - self.time_ns[0];
        if dt <= 0.0 {
            return Err(SimError::BadEnvelope);
        }
        for w in self.time_ns.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0) {
                return Err(SimError::BadEnvelope);
            }
        }
        Ok(())
    }

    /// Linear interpolation; zero outside the grid.
    fn sample(&self, t: f64) -> Complex64 {
        let t0 = self.time_ns[0];
        let dt = self.time_ns[1] - self.time_ns[0];
        let pos = (t - t0) / dt;
        if pos < 0.0 || pos > (self.time_ns.len() - 1) as f64 {
            return Complex64::new(0.0, 0.0);
        }
        let i = (pos.floor() as usize).min(self.time_ns.len() - 2);
        let frac = pos - i as f64;
        self.amplitude[i] * (1.0 - frac) + self.amplitude[i + 1] * frac
    }
}

fn photon_number(time: &[f64], amp: &[Complex64]) -> f64 {
    trapezoid(time, amp.iter().map(|a| a.norm_sqr()).collect::<Vec<_>>().as_slice())
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 1..x.len() {
        acc += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
    }
    acc
}

/// Stored ground-state coherence over the cell; |amplitude|^2 integrates to
/// the stored photon number over z in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinWaveState {
    pub z_m: Vec<f64>,
    pub amplitude: Vec<Complex64>,
}

impl SpinWaveState {
    pub fn photon_number(&self) -> f64 {
        trapezoid(
            &self.z_m,
            self.amplitude
                .iter()
                .map(|a| a.norm_sqr())
                .collect::<Vec<_>>()
                .as_slice(),
        )
    }
}

/// Spatial/temporal resolution of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimGrid {
    pub nz: usize,
    pub nt: usize,
}

impl SimGrid {
    pub const DEFAULT_NZ: usize = 256;

    /// Grid satisfying the stability precondition for a window of
    /// `span_ns` with margin to spare.
    pub fn auto(m: &MediumParams, peak_rabi: f64, span_ns: f64) -> Self {
        let rate = fastest_rate_rad_ns(m, peak_rabi).max(1e-3);
        let dt = 0.8 * DT_SAFETY / rate;
        let nt = (span_ns / dt).ceil() as usize + 1;
        SimGrid {
            nz: Self::DEFAULT_NZ,
            nt: nt.max(64),
        }
    }

    pub fn refined(&self) -> Self {
        SimGrid {
            nz: self.nz * 2,
            nt: self.nt * 2,
        }
    }
}

fn fastest_rate_rad_ns(m: &MediumParams, peak_rabi: f64) -> f64 {
    let rates = [
        peak_rabi.abs(),
        m.one_photon_detuning.abs(),
        m.two_photon_detuning.abs(),
        m.excited_decay_gamma,
        m.ground_decoherence,
    ];
    rates.iter().cloned().fold(0.0, f64::max) * 1e-9
}

/// Outcome of a write stage.
#[derive(Debug, Clone)]
pub struct StorageOutcome {
    /// Field transmitted through the cell during the write window.
    pub leak: SignalEnvelope,
    /// Spin wave left in the cell at the end of the window.
    pub spin: SpinWaveState,
    /// Photons lost to polarization/spin decay, as a fraction of the input.
    pub scattered_fraction: f64,
    /// Photon number still held in the optical polarization at the end of
    /// the window (budget bookkeeping; ~0 for well-chosen windows).
    pub residual_polarization: f64,
}

struct Propagator {
    nz: usize,
    kappa: f64, // per sqrt(ns), per unit normalized z
    gamma_p: f64,
    gamma_s: f64,
    d1: f64,
    d2: f64,
    p: Vec<Complex64>,
    s: Vec<Complex64>,
    scratch: PropagatorScratch,
}

struct PropagatorScratch {
    e: Vec<Complex64>,
    k1p: Vec<Complex64>,
    k1s: Vec<Complex64>,
    k2p: Vec<Complex64>,
    k2s: Vec<Complex64>,
    k3p: Vec<Complex64>,
    k3s: Vec<Complex64>,
    k4p: Vec<Complex64>,
    k4s: Vec<Complex64>,
    tp: Vec<Complex64>,
    ts: Vec<Complex64>,
}

/// Transmitted field over the cell from the current polarization:
/// trapezoidal cumulative integral of dE/dz = i k P with E(0) = ein.
fn integrate_field(e: &mut [Complex64], p: &[Complex64], ein: Complex64, kappa: f64, dz: f64) {
    e[0] = ein;
    let half = 0.5 * kappa * dz;
    for j in 0..p.len() - 1 {
        let incr = (p[j] + p[j + 1]) * Complex64::new(0.0, half);
        e[j + 1] = e[j] + incr;
    }
}

#[allow(clippy::too_many_arguments)]
fn stage_derivs(
    p: &[Complex64],
    s: &[Complex64],
    ein: Complex64,
    omega: f64,
    kappa: f64,
    cp: Complex64,
    cs: Complex64,
    e: &mut [Complex64],
    dp: &mut [Complex64],
    ds: &mut [Complex64],
) {
    let dz = 1.0 / (p.len() - 1) as f64;
    integrate_field(e, p, ein, kappa, dz);
    let ik = Complex64::new(0.0, kappa);
    let iom = Complex64::new(0.0, 0.5 * omega);
    for j in 0..p.len() {
        dp[j] = -cp * p[j] + ik * e[j] + iom * s[j];
        ds[j] = -cs * s[j] + iom * p[j];
    }
}

fn weighted_norm(v: &[Complex64], dz: f64) -> f64 {
    let n = v.len() - 1;
    let mut acc = 0.0;
    for (j, x) in v.iter().enumerate() {
        let w = if j == 0 || j == n { 0.5 } else { 1.0 };
        acc += w * x.norm_sqr();
    }
    acc * dz
}

impl Propagator {
    fn new(m: &MediumParams, nz: usize) -> Self {
        let gamma_p = m.excited_decay_gamma * 1e-9;
        let zero = vec![Complex64::new(0.0, 0.0); nz + 1];
        Propagator {
            nz,
            kappa: (m.optical_depth * gamma_p / 2.0).sqrt(),
            gamma_p,
            gamma_s: m.ground_decoherence * 1e-9,
            d1: m.one_photon_detuning * 1e-9,
            d2: m.two_photon_detuning * 1e-9,
            p: zero.clone(),
            s: zero.clone(),
            scratch: PropagatorScratch {
                e: zero.clone(),
                k1p: zero.clone(),
                k1s: zero.clone(),
                k2p: zero.clone(),
                k2s: zero.clone(),
                k3p: zero.clone(),
                k3s: zero.clone(),
                k4p: zero.clone(),
                k4s: zero.clone(),
                tp: zero.clone(),
                ts: zero,
            },
        }
    }

    fn dz(&self) -> f64 {
        1.0 / self.nz as f64
    }

    fn cp(&self) -> Complex64 {
        Complex64::new(self.gamma_p, self.d1)
    }

    fn cs(&self) -> Complex64 {
        Complex64::new(self.gamma_s, self.d2)
    }

    fn dissipation_rate(&self) -> f64 {
        2.0 * self.gamma_p * weighted_norm(&self.p, self.dz())
            + 2.0 * self.gamma_s * weighted_norm(&self.s, self.dz())
    }

    fn polarization_norm(&self) -> f64 {
        weighted_norm(&self.p, self.dz())
    }

    /// One RK4 step. `ein` and `omega` sampled at t, t + dt/2, t + dt.
    /// Returns the transmitted field at the end of the step.
    fn step(&mut self, ein: [Complex64; 3], omega: [f64; 3], dt: f64) -> Complex64 {
        let n = self.nz + 1;
        let (kappa, cp, cs) = (self.kappa, self.cp(), self.cs());
        let sc = &mut self.scratch;
        stage_derivs(
            &self.p, &self.s, ein[0], omega[0], kappa, cp, cs,
            &mut sc.e, &mut sc.k1p, &mut sc.k1s,
        );
        for j in 0..n {
            sc.tp[j] = self.p[j] + sc.k1p[j] * (0.5 * dt);
            sc.ts[j] = self.s[j] + sc.k1s[j] * (0.5 * dt);
        }
        stage_derivs(
            &sc.tp, &sc.ts, ein[1], omega[1], kappa, cp, cs,
            &mut sc.e, &mut sc.k2p, &mut sc.k2s,
        );
        for j in 0..n {
            sc.tp[j] = self.p[j] + sc.k2p[j] * (0.5 * dt);
            sc.ts[j] = self.s[j] + sc.k2s[j] * (0.5 * dt);
        }
        stage_derivs(
            &sc.tp, &sc.ts, ein[1], omega[1], kappa, cp, cs,
            &mut sc.e, &mut sc.k3p, &mut sc.k3s,
        );
        for j in 0..n {
            sc.tp[j] = self.p[j] + sc.k3p[j] * dt;
            sc.ts[j] = self.s[j] + sc.k3s[j] * dt;
        }
        stage_derivs(
            &sc.tp, &sc.ts, ein[2], omega[2], kappa, cp, cs,
            &mut sc.e, &mut sc.k4p, &mut sc.k4s,
        );
        let sixth = dt / 6.0;
        for j in 0..n {
            self.p[j] += (sc.k1p[j] + (sc.k2p[j] + sc.k3p[j]) * 2.0 + sc.k4p[j]) * sixth;
            self.s[j] += (sc.k1s[j] + (sc.k2s[j] + sc.k3s[j]) * 2.0 + sc.k4s[j]) * sixth;
        }
        integrate_field(&mut sc.e, &self.p, ein[2], kappa, 1.0 / self.nz as f64);
        sc.e[self.nz]
    }
}

fn check_grid(m: &MediumParams, peak_rabi: f64, span_ns: f64, grid: SimGrid) -> Result<f64, SimError> {
    if grid.nz < 8 {
        return Err(SimError::InvalidParam {
            name: "nz",
            req: ">= 8",
            value: grid.nz as f64,
        });
    }
    if grid.nt < 8 {
        return Err(SimError::InvalidParam {
            name: "nt",
            req: ">= 8",
            value: grid.nt as f64,
        });
    }
    let dt = span_ns / (grid.nt - 1) as f64;
    let rate = fastest_rate_rad_ns(m, peak_rabi);
    if rate > 0.0 {
        let max_dt = DT_SAFETY / rate;
        if dt > max_dt {
            return Err(SimError::UnderResolved {
                dt_ns: dt,
                max_ns: max_dt,
                rate_rad_ns: rate,
            });
        }
    }
    Ok(dt)
}

/// Write stage: map an incoming signal envelope onto a spin wave.
///
/// The simulation window is the envelope's time grid, resampled to
/// `grid.nt` uniform steps. The control write pulse must lie inside it.
pub fn simulate_storage(
    sig: &SignalEnvelope,
    ctrl: &ControlPulse,
    m: &MediumParams,
    grid: SimGrid,
) -> Result<StorageOutcome, SimError> {
    m.validate()?;
    ctrl.validate()?;
    sig.validate()?;
    let t0 = sig.time_ns[0];
    let t1 = *sig.time_ns.last().unwrap();
    let dt = check_grid(m, ctrl.peak_rabi, t1 - t0, grid)?;

    let mut prop = Propagator::new(m, grid.nz);
    let nt = grid.nt;
    let mut leak_t = Vec::with_capacity(nt);
    let mut leak_a = Vec::with_capacity(nt);
    let mut scattered = 0.0;

    {
        let kappa = prop.kappa;
        let sc = &mut prop.scratch;
        integrate_field(&mut sc.e, &prop.p, sig.sample(t0), kappa, 1.0 / grid.nz as f64);
        leak_t.push(t0);
        leak_a.push(sc.e[grid.nz]);
    }
    for it in 0..nt - 1 {
        let t = t0 + it as f64 * dt;
        let ein = [
            sig.sample(t),
            sig.sample(t + 0.5 * dt),
            sig.sample(t + dt),
        ];
        let omega = [
            ctrl.rabi_at(t),
            ctrl.rabi_at(t + 0.5 * dt),
            ctrl.rabi_at(t + dt),
        ];
        let before = prop.dissipation_rate();
        let out = prop.step(ein, omega, dt);
        scattered += 0.5 * dt * (before + prop.dissipation_rate());
        leak_t.push(t0 + (it + 1) as f64 * dt);
        leak_a.push(out);
    }

    let pol_norm = prop.polarization_norm();
    let n_in = sig.photon_number();
    let dz = prop.dz();
    let spin = SpinWaveState {
        z_m: (0..=grid.nz)
            .map(|j| j as f64 * dz * m.cell_length)
            .collect(),
        // amplitude per sqrt(m): |S|^2 dz~ = |S_m|^2 dz_m requires 1/sqrt(L)
        amplitude: prop
            .s
            .iter()
            .map(|s| s / m.cell_length.sqrt())
            .collect(),
    };
    Ok(StorageOutcome {
        leak: SignalEnvelope {
            time_ns: leak_t,
            amplitude: leak_a,
        },
        spin,
        scattered_fraction: if n_in > 0.0 { scattered / n_in } else { 0.0 },
        residual_polarization: pol_norm,
    })
}

/// Read stage: release a stored spin wave with a control pulse after an
/// additional wait. The wait applies the ground-state coherence decay
/// exp(-(gamma_s + i D2) * wait) analytically before the field dynamics.
///
/// The read window is [0, center + 8 fwhm] of the control pulse, resampled
/// to `grid.nt` steps; t = 0 is the start of the read stage.
pub fn simulate_retrieval(
    spin: &SpinWaveState,
    ctrl: &ControlPulse,
    m: &MediumParams,
    grid: SimGrid,
    wait_ns: f64,
) -> Result<SignalEnvelope, SimError> {
    m.validate()?;
    ctrl.validate()?;
    if wait_ns < 0.0 {
        return Err(SimError::InvalidParam {
            name: "wait_ns",
            req: ">= 0",
            value: wait_ns,
        });
    }
    if spin.z_m.len() < 2 || spin.z_m.len() != spin.amplitude.len() {
        return Err(SimError::BadEnvelope);
    }
    let span = ctrl.center_ns + 8.0 * ctrl.fwhm_ns;
    let dt = check_grid(m, ctrl.peak_rabi, span, grid)?;

    let mut prop = Propagator::new(m, grid.nz);
    // Resample the stored wave onto the propagation grid and apply the
    // wait-time decay.
    let decay = (Complex64::new(
        -(m.ground_decoherence * 1e-9),
        -(m.two_photon_detuning * 1e-9),
    ) * wait_ns)
        .exp();
    let l = *spin.z_m.last().unwrap();
    let src_dz = spin.z_m[1] - spin.z_m[0];
    for j in 0..=grid.nz {
        let z = j as f64 / grid.nz as f64 * l;
        let pos = (z / src_dz).min((spin.z_m.len() - 2) as f64);
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        let a = spin.amplitude[i] * (1.0 - frac) + spin.amplitude[i + 1] * frac;
        prop.s[j] = a * l.sqrt() * decay; // back to per-sqrt(z~) units
    }

    let zero = Complex64::new(0.0, 0.0);
    let nt = grid.nt;
    let mut out_t = Vec::with_capacity(nt);
    let mut out_a = Vec::with_capacity(nt);
    out_t.push(0.0);
    out_a.push(zero);
    for it in 0..nt - 1 {
        let t = it as f64 * dt;
        let omega = [
            ctrl.rabi_at(t),
            ctrl.rabi_at(t + 0.5 * dt),
            ctrl.rabi_at(t + dt),
        ];
        let out = prop.step([zero, zero, zero], omega, dt);
        out_t.push((it + 1) as f64 * dt);
        out_a.push(out);
    }
    Ok(SignalEnvelope {
        time_ns: out_t,
        amplitude: out_a,
    })
}

/// Ratio of output to input photon number.
pub fn internal_efficiency(
    input: &SignalEnvelope,
    output: &SignalEnvelope,
) -> Result<f64, SimError> {
    let n_in = input.photon_number();
    if n_in <= 0.0 {
        return Err(SimError::ZeroInput);
    }
    Ok(output.photon_number() / n_in)
}

/// Analytic weak-probe intensity transmission of the Lambda medium at probe
/// detuning `delta` (rad/s) from the signal carrier.
pub fn weak_probe_transmission_analytic(m: &MediumParams, ctrl_rabi: f64, delta: f64) -> f64 {
    let gp = m.excited_decay_gamma * 1e-9;
    let gs = m.ground_decoherence * 1e-9;
    let d1 = (m.one_photon_detuning - delta) * 1e-9;
    let d2 = (m.two_photon_detuning - delta) * 1e-9;
    let om = ctrl_rabi * 1e-9;
    let denom = Complex64::new(gp, d1)
        + Complex64::new(om * om / 4.0, 0.0) / Complex64::new(gs, d2);
    let amp = (-(Complex64::new(m.optical_depth * gp / 2.0, 0.0)) / denom).exp();
    amp.norm_sqr()
}

/// Weak-probe transmission spectrum from time-domain runs: one spectrally
/// narrow probe pulse per requested detuning (rad/s), CW control.
///
/// Deliberately independent of `weak_probe_transmission_analytic`, which
/// serves as its oracle in the tests.
pub fn weak_probe_transmission_spectrum(
    m: &MediumParams,
    ctrl_rabi: f64,
    probe_detunings: &[f64],
) -> Result<Vec<f64>, SimError> {
    m.validate()?;
    if ctrl_rabi < 0.0 {
        return Err(SimError::InvalidParam {
            name: "ctrl_rabi",
            req: ">= 0",
            value: ctrl_rabi,
        });
    }
    // Probe duration: narrow against every spectral feature of the medium.
    let gp = (m.excited_decay_gamma * 1e-9).max(1e-6);
    let om = ctrl_rabi * 1e-9;
    let mut feature = gp;
    if om > 0.0 {
        let d = m.optical_depth.max(1.0);
        let eit_half = om * om / 4.0 / (gp * d.sqrt());
        feature = feature.min(eit_half.max(1e-6));
    }
    let fwhm = (15.0 * 4.0 * LN2 / feature).min(5e4);
    // Group delay through the EIT window sets the tail margin.
    let delay = if om > 0.0 {
        2.0 * m.optical_depth * gp / (om * om)
    } else {
        0.0
    };
    let span = 4.0 * fwhm + 2.0 * delay;
    let center = 1.5 * fwhm;

    let mut result = Vec::with_capacity(probe_detunings.len());
    for &delta in probe_detunings {
        let m_probe = MediumParams {
            // Probe detuning folds into both detunings of the co-moving frame.
            one_photon_detuning: m.one_photon_detuning - delta,
            two_photon_detuning: m.two_photon_detuning - delta,
            ..*m
        };
        let grid = SimGrid::auto(&m_probe, ctrl_rabi, span);
        let probe = SignalEnvelope::gaussian(0.0, span, grid.nt, center, fwhm, 1.0);
        let ctrl = ControlPulse {
            peak_rabi: ctrl_rabi,
            fwhm_ns: 1e9, // effectively CW over the window
            center_ns: 0.5 * span,
        };
        let out = simulate_storage(&probe, &ctrl, &m_probe, grid)?;
        result.push(out.leak.photon_number() / probe.photon_number());
    }
    Ok(result)
}

/// One (signal width, internal efficiency) point per requested width:
/// full storage + retrieval, with the control matched to each width.
///
/// `ctrl` is the template at the reference width dt_ref = ctrl.fwhm_ns;
/// for other widths the control co-scales as a dark-state polariton match:
/// duration and timing stretch with dt, peak Rabi scales as 1/sqrt(dt) so
/// the group delay tracks the pulse and the EIT window tracks its spectrum.
/// Retrieval uses an identical (scaled) control pulse. In this matched
/// family the efficiency rises from zero at small widths (non-adiabatic
/// writing) to the optical-depth-limited plateau.
pub fn efficiency_vs_bandwidth_curve(
    m: &MediumParams,
    ctrl: &ControlPulse,
    dt_list: &[f64],
) -> Result<Vec<(f64, f64)>, SimError> {
    ctrl.validate()?;
    let mut out = Vec::with_capacity(dt_list.len());
    for &dt in dt_list {
        if dt <= 0.0 {
            return Err(SimError::InvalidParam {
                name: "dt",
                req: "> 0",
                value: dt,
            });
        }
        let scale = dt / ctrl.fwhm_ns;
        let write = ControlPulse {
            peak_rabi: ctrl.peak_rabi / scale.sqrt(),
            fwhm_ns: ctrl.fwhm_ns * scale,
            center_ns: ctrl.center_ns * scale,
        };
        let span = write.center_ns + 3.0 * (write.fwhm_ns + dt);
        let grid = SimGrid::auto(m, write.peak_rabi, span);
        let sig = SignalEnvelope::gaussian(0.0, span, grid.nt, write.center_ns, dt, 1.0);
        let stored = simulate_storage(&sig, &write, m, grid)?;
        let read = ControlPulse {
            center_ns: 2.0 * write.fwhm_ns,
            ..write
        };
        let read_grid = SimGrid::auto(m, read.peak_rabi, read.center_ns + 8.0 * read.fwhm_ns);
        let retrieved = simulate_retrieval(&stored.spin, &read, m, read_grid, 0.0)?;
        out.push((dt, internal_efficiency(&sig, &retrieved)?));
    }
    Ok(out)
}
