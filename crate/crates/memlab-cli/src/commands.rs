//! Implementations behind the CLI subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use memlab_core::counting::{
    calibrate_alpha2, default_window, eta_e2e_from_counts, eta_mem_from_e2e,
    extract_storage_time, snr_from_counts, synthesize_histogram, window_tradeoff,
};
use memlab_core::fitting::{fit_noise_energy, fit_total_noise};
use memlab_core::io;
use memlab_core::models::{
    eta_for_axis, mu_one, noise_for_axis, snr_model, MetricsReport, ModelAxis, NoiseParams,
};
use memlab_core::sim::{
    internal_efficiency, simulate_retrieval, simulate_storage, SignalEnvelope, SimGrid,
};
use memlab_core::voigt::voigt_unit_peak;

use crate::config::{RunConfig, SweepAxis};
use crate::svg;
use crate::CliError;

pub fn axis_to_model(axis: SweepAxis) -> ModelAxis {
    match axis {
        SweepAxis::PulseWidthNs => ModelAxis::PulseWidth,
        SweepAxis::ControlEnergyPj => ModelAxis::Energy,
        SweepAxis::DetuningMhz => ModelAxis::Detuning,
    }
}

/// Effective mean photon number: the monitor calibration when a monitor
/// rate is configured, the explicit `alpha2` value otherwise.
pub fn effective_alpha2(cfg: &RunConfig) -> Result<f64, CliError> {
    let cal = cfg.calibration.to_params();
    if cal.monitor_rate > 0.0 {
        Ok(calibrate_alpha2(&cal)
            .map_err(|e| CliError::new("calibration", e.to_string()))?
            .value)
    } else {
        Ok(cfg.alpha2)
    }
}

pub fn models_eval(cfg: &RunConfig, axis: SweepAxis, x: f64) -> Result<String, CliError> {
    let ep = cfg.efficiency.to_params();
    let np = cfg.noise.to_params();
    let cal = cfg.calibration.to_params();
    let alpha2 = effective_alpha2(cfg)?;
    let maxis = axis_to_model(axis);
    let eta = eta_for_axis(maxis, x, &ep).map_err(|e| CliError::new("model", e.to_string()))?;
    let noise =
        noise_for_axis(maxis, x, &np).map_err(|e| CliError::new("model", e.to_string()))?;
    let snr = snr_model(maxis, x, alpha2, &cal, &ep, &np).ok();
    let mu1 = snr.and_then(|s| mu_one(alpha2, s).ok());
    let out = json!({
        "axis": axis,
        "x": x,
        "alpha2": alpha2,
        "eta_e2e": eta,
        "noise_per_attempt": noise,
        "snr": snr,
        "mu1": mu1,
    });
    Ok(serde_json::to_string_pretty(&out).expect("serializable"))
}

pub struct SimRunOutput {
    pub summary: String,
}

pub fn sim_run(cfg: &RunConfig, out_dir: &Path) -> Result<SimRunOutput, CliError> {
    let m = cfg.medium.to_params();
    let write = cfg.control.write_pulse();
    let read = cfg.control.read_pulse();
    let span = cfg.signal.window_ns;
    let grid = SimGrid::auto(&m, write.peak_rabi, span);
    let sig = SignalEnvelope::gaussian(
        0.0,
        span,
        grid.nt,
        cfg.signal.center_ns,
        cfg.signal.fwhm_ns,
        cfg.signal.mean_photons,
    );
    let stored = simulate_storage(&sig, &write, &m, grid)
        .map_err(|e| CliError::new("sim", e.to_string()))?;
    let read_span = read.center_ns + 8.0 * read.fwhm_ns;
    let read_grid = SimGrid::auto(&m, read.peak_rabi, read_span);
    let wait = (cfg.timing.read_delay_ns - cfg.timing.signal_delay_ns).max(0.0);
    let retrieved = simulate_retrieval(&stored.spin, &read, &m, read_grid, wait)
        .map_err(|e| CliError::new("sim", e.to_string()))?;
    let eta_mem =
        internal_efficiency(&sig, &retrieved).map_err(|e| CliError::new("sim", e.to_string()))?;

    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::new("io", format!("{}: {e}", out_dir.display())))?;
    let write_env = |name: &str, env: &SignalEnvelope| -> Result<PathBuf, CliError> {
        let path = out_dir.join(name);
        io::write_envelope(&path, env).map_err(|e| CliError::new("io", e.to_string()))?;
        Ok(path)
    };
    write_env("input.csv", &sig)?;
    write_env("leak.csv", &stored.leak)?;
    write_env("retrieved.csv", &retrieved)?;

    let summary = json!({
        "eta_mem": eta_mem,
        "eta_write": stored.spin.photon_number() / sig.photon_number(),
        "leak_fraction": stored.leak.photon_number() / sig.photon_number(),
        "scattered_fraction": stored.scattered_fraction,
        "wait_ns": wait,
        "grid": {"nz": grid.nz, "nt": grid.nt},
        "files": ["input.csv", "leak.csv", "retrieved.csv"],
    });
    let text = serde_json::to_string_pretty(&summary).expect("serializable");
    fs::write(out_dir.join("sim.json"), format!("{text}\n"))
        .map_err(|e| CliError::new("io", e.to_string()))?;
    Ok(SimRunOutput { summary: text })
}

/// Assemble histogram-time envelopes from simulator output files and
/// synthesize signal and noise-only histograms.
#[allow(clippy::too_many_arguments)]
pub fn counts_synth(
    cfg: &RunConfig,
    signal_env: Option<&Path>,
    leak_env: Option<&Path>,
    noise_per_attempt: Option<f64>,
    seed: u64,
    out: &Path,
    noise_out: Option<&Path>,
) -> Result<String, CliError> {
    let cal = cfg.calibration.to_params();
    let timing = cfg.timing.to_params();
    let filter = cal.filter_signal_transmission;
    let noise = noise_per_attempt.unwrap_or_else(|| {
        // total atomic noise at the configured operating detuning
        noise_vs_detuning_cfg(&cfg.noise.to_params(), cfg.medium.one_photon_detuning_mhz)
    });

    // Envelopes from the simulator are at the cell output in simulation
    // time; scale by the filter transmission and move into histogram time
    // (leak peak at t = 0, retrieval at the read delay).
    let load_shift_scale = |path: &Path, shift: f64| -> Result<SignalEnvelope, CliError> {
        let mut env =
            io::read_envelope(path).map_err(|e| CliError::new("io", e.to_string()))?;
        for a in &mut env.amplitude {
            *a *= filter.sqrt();
        }
        Ok(env.shifted(shift))
    };
    let signal = signal_env
        .map(|p| {
            load_shift_scale(
                p,
                cfg.timing.read_delay_ns - cfg.control.read_center_ns,
            )
        })
        .transpose()?;
    let leak = leak_env
        .map(|p| load_shift_scale(p, -cfg.signal.center_ns))
        .transpose()?;

    let h = synthesize_histogram(
        signal.as_ref(),
        leak.as_ref(),
        noise,
        &cal,
        &timing,
        cfg.timing.bin_width_ns,
        seed,
    )
    .map_err(|e| CliError::new("counts", e.to_string()))?;
    io::write_histogram(out, &h).map_err(|e| CliError::new("io", e.to_string()))?;
    let mut files = vec![out.display().to_string()];
    if let Some(noise_path) = noise_out {
        let hn = synthesize_histogram(
            None,
            None,
            noise,
            &cal,
            &timing,
            cfg.timing.bin_width_ns,
            seed.wrapping_add(1),
        )
        .map_err(|e| CliError::new("counts", e.to_string()))?;
        io::write_histogram(noise_path, &hn).map_err(|e| CliError::new("io", e.to_string()))?;
        files.push(noise_path.display().to_string());
    }
    let summary = json!({
        "noise_per_attempt": noise,
        "seed": seed,
        "bins": h.n_bins(),
        "total_counts": h.counts.iter().sum::<u64>(),
        "files": files,
    });
    Ok(serde_json::to_string_pretty(&summary).expect("serializable"))
}

fn noise_vs_detuning_cfg(np: &NoiseParams, delta_mhz: f64) -> f64 {
    np.n_srs + np.n_fl * voigt_unit_peak(delta_mhz, np.voigt_gauss_fwhm, np.voigt_lorentz_fwhm)
        + np.n_fwm
}

pub struct AnalyzeOutput {
    pub json: String,
}

pub fn analyze(
    cfg: &RunConfig,
    signal_path: &Path,
    noise_path: Option<&Path>,
    tradeoff_out: Option<&Path>,
) -> Result<AnalyzeOutput, CliError> {
    let cal = cfg.calibration.to_params();
    let hs = io::read_histogram(signal_path).map_err(|e| CliError::new("io", e.to_string()))?;
    let hn = noise_path
        .map(|p| io::read_histogram(p).map_err(|e| CliError::new("io", e.to_string())))
        .transpose()?;
    let timing = cfg.timing.to_params();
    let region = timing.retrieval_region();
    let alpha2 = effective_alpha2(cfg)?;

    let window = default_window(&hs, region, cfg.timing.t_max_ns)
        .map_err(|e| CliError::new("analysis", e.to_string()))?;
    let storage_time = extract_storage_time(&hs, region)
        .map_err(|e| CliError::new("analysis", e.to_string()))?;
    let n_s = hs.counts_in(window.t_min_ns, window.t_max_ns) as f64;
    let n_n = hn
        .as_ref()
        .map(|h| h.counts_in(window.t_min_ns, window.t_max_ns) as f64)
        .unwrap_or(0.0);
    let eta_e2e = eta_e2e_from_counts(n_s, n_n, alpha2, &cal)
        .map_err(|e| CliError::new("analysis", e.to_string()))?;
    let eta_mem = eta_mem_from_e2e(eta_e2e, cal.filter_signal_transmission)
        .map_err(|e| CliError::new("analysis", e.to_string()))?;
    let snr = if n_n > 0.0 {
        Some(
            snr_from_counts(n_s, n_n)
                .map_err(|e| CliError::new("analysis", e.to_string()))?,
        )
    } else {
        None
    };
    let mu1 = snr.and_then(|s| mu_one(alpha2, s).ok());
    let report = MetricsReport {
        alpha2,
        eta_e2e,
        eta_mem,
        snr,
        mu1,
        storage_time_ns: storage_time,
        window_ns: (window.t_min_ns, window.t_max_ns),
    };

    if let Some(path) = tradeoff_out {
        let hn = hn.as_ref().ok_or_else(|| {
            CliError::new("analysis", "window trade-off needs a noise histogram".to_string())
        })?;
        let start = region.from_ns + 5.0;
        let end = hs.t_end();
        let mut t_maxes = Vec::new();
        let mut t = start;
        while t < end {
            t_maxes.push(t);
            t += 5.0;
        }
        let rows = window_tradeoff(&hs, hn, alpha2, &cal, region, &t_maxes)
            .map_err(|e| CliError::new("analysis", e.to_string()))?;
        let mut csv = String::from("t_max_ns,eta_e2e,snr\n");
        for r in &rows {
            let snr_cell = r.snr.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(csv, "{},{},{}", r.t_max_ns, r.eta_e2e, snr_cell);
        }
        fs::write(path, csv).map_err(|e| CliError::new("io", e.to_string()))?;
    }

    let json = serde_json::to_string_pretty(&report).expect("serializable");
    Ok(AnalyzeOutput { json })
}

pub fn fit_noise_energy_cmd(data_path: &Path, out: Option<&Path>) -> Result<String, CliError> {
    let data = io::read_dataset(data_path).map_err(|e| CliError::new("io", e.to_string()))?;
    let fit = fit_noise_energy(&data).map_err(|e| CliError::new("fit", e.to_string()))?;
    let text = io::fit_result_json(&fit);
    if let Some(path) = out {
        fs::write(path, format!("{text}\n")).map_err(|e| CliError::new("io", e.to_string()))?;
    }
    Ok(text)
}

pub fn fit_noise_detuning_cmd(
    cfg: &RunConfig,
    data_path: &Path,
    n_fwm: f64,
    out: Option<&Path>,
) -> Result<String, CliError> {
    let data = io::read_dataset(data_path).map_err(|e| CliError::new("io", e.to_string()))?;
    let fit = fit_total_noise(
        &data,
        cfg.noise.voigt_gauss_fwhm_mhz,
        cfg.noise.voigt_lorentz_fwhm_mhz,
        n_fwm,
    )
    .map_err(|e| CliError::new("fit", e.to_string()))?;
    let text = io::fit_result_json(&fit);
    if let Some(path) = out {
        fs::write(path, format!("{text}\n")).map_err(|e| CliError::new("io", e.to_string()))?;
    }
    Ok(text)
}

/// One row of the sweep table.
struct SweepRow {
    x: f64,
    eta: Option<f64>,
    noise: Option<f64>,
    snr: Option<f64>,
    fwm: Option<f64>,
    srs: Option<f64>,
    fl: Option<f64>,
    status: String,
}

pub fn run_sweep(cfg: &RunConfig, jobs: Option<usize>) -> Result<String, CliError> {
    use rayon::prelude::*;

    let ep = cfg.efficiency.to_params();
    let np = cfg.noise.to_params();
    let cal = cfg.calibration.to_params();
    ep.validate()
        .map_err(|e| CliError::new("config", e.to_string()))?;
    np.validate()
        .map_err(|e| CliError::new("config", e.to_string()))?;
    cal.validate()
        .map_err(|e| CliError::new("config", e.to_string()))?;
    let alpha2 = effective_alpha2(cfg)?;
    let axis = cfg.sweep.axis;
    let maxis = axis_to_model(axis);
    let grid = cfg.sweep.grid();

    let eval_point = |x: f64| -> SweepRow {
        let eta = eta_for_axis(maxis, x, &ep);
        let noise = noise_for_axis(maxis, x, &np);
        let snr = snr_model(maxis, x, alpha2, &cal, &ep, &np);
        let (fwm, srs, fl) = match maxis {
            ModelAxis::Energy => (
                np.fwm_quad_b * x * x,
                np.srs_lin_c * x,
                np.fl_amp_d * x / (np.fl_sat_e + x),
            ),
            ModelAxis::Detuning => (
                np.n_fwm,
                np.n_srs,
                np.n_fl * voigt_unit_peak(x, np.voigt_gauss_fwhm, np.voigt_lorentz_fwhm),
            ),
            ModelAxis::PulseWidth => (np.n_fwm, np.n_srs, np.n_fl),
        };
        match (eta, noise) {
            (Ok(eta), Ok(noise)) => SweepRow {
                x,
                eta: Some(eta),
                noise: Some(noise),
                snr: snr.ok(),
                fwm: Some(fwm),
                srs: Some(srs),
                fl: Some(fl),
                status: "ok".to_string(),
            },
            (eta, noise) => {
                let msg = eta
                    .err()
                    .map(|e| e.to_string())
                    .or_else(|| noise.err().map(|e| e.to_string()))
                    .unwrap_or_default();
                SweepRow {
                    x,
                    eta: None,
                    noise: None,
                    snr: None,
                    fwm: None,
                    srs: None,
                    fl: None,
                    status: format!("error: {msg}"),
                }
            }
        }
    };

    let rows: Vec<SweepRow> = match jobs {
        Some(n) if n > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::new("sweep", e.to_string()))?;
            pool.install(|| grid.par_iter().map(|&x| eval_point(x)).collect())
        }
        _ => grid.par_iter().map(|&x| eval_point(x)).collect(),
    };

    let axis_name = match axis {
        SweepAxis::PulseWidthNs => "pulse_width_ns",
        SweepAxis::ControlEnergyPj => "control_energy_pj",
        SweepAxis::DetuningMhz => "detuning_mhz",
    };
    let mut csv = String::from("axis,x,eta_e2e,noise_per_attempt,snr,fwm,srs,fluorescence,status\n");
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            axis_name,
            r.x,
            cell(r.eta),
            cell(r.noise),
            cell(r.snr),
            cell(r.fwm),
            cell(r.srs),
            cell(r.fl),
            r.status
        );
    }
    Ok(csv)
}

/// (x, eta) points of a sweep CSV, for plotting.
pub fn sweep_eta_series(csv: &str) -> Vec<(f64, f64)> {
    csv.lines()
        .skip(1)
        .filter_map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 3 {
                return None;
            }
            match (f[1].parse::<f64>(), f[2].parse::<f64>()) {
                (Ok(x), Ok(y)) => Some((x, y)),
                _ => None,
            }
        })
        .collect()
}

pub fn report(
    metrics_path: Option<&Path>,
    fit_paths: &[PathBuf],
    svg_out: Option<&Path>,
    series_path: Option<&Path>,
) -> Result<String, CliError> {
    let metrics: serde_json::Value = match metrics_path {
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| CliError::new("io", format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::new("io", format!("{}: {e}", p.display())))?
        }
        None => serde_json::Value::Null,
    };
    let fits: serde_json::Value = if fit_paths.is_empty() {
        serde_json::Value::Null
    } else {
        let mut items = Vec::new();
        for p in fit_paths {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::new("io", format!("{}: {e}", p.display())))?;
            let v: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::new("io", format!("{}: {e}", p.display())))?;
            items.push(json!({"file": p.display().to_string(), "fit": v}));
        }
        serde_json::Value::Array(items)
    };
    if let Some(svg_path) = svg_out {
        let series = series_path.ok_or_else(|| {
            CliError::new("report", "--svg requires --series <sweep.csv>".to_string())
        })?;
        let text = fs::read_to_string(series)
            .map_err(|e| CliError::new("io", format!("{}: {e}", series.display())))?;
        let pts = sweep_eta_series(&text);
        let svg = svg::polyline_plot(&pts, "efficiency sweep", "x", "eta_e2e");
        fs::write(svg_path, svg).map_err(|e| CliError::new("io", e.to_string()))?;
    }
    let out = json!({
        "schema": "memlab-report/1",
        "metrics": metrics,
        "fits": fits,
    });
    Ok(serde_json::to_string_pretty(&out).expect("serializable"))
}
