//! File formats shared across the toolkit.
//!
//! * histogram: CSV `time_ns,counts` (bin centers, integer counts) plus a
//!   JSON sidecar `{bin_ns, rep_rate_hz, t_int_s}`,
//! * envelope: CSV `time_ns,re,im`,
//! * dataset: CSV `x,y,sigma_y`,
//! * fit result: JSON with the full covariance matrix.
//!
//! Histogram serialization is bit-exact by construction: counts are written
//! as integers, times as decimal ns with at most three fractional digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counting::ArrivalHistogram;
use crate::fitting::{Dataset, FitResult};
use crate::sim::SignalEnvelope;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), IoError> {
    fs::write(path, contents).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

/// Time as decimal ns with <= 3 fractional digits, trailing zeros trimmed.
fn format_time_ns(t: f64) -> String {
    let mut s = format!("{:.3}", t);
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

#[derive(Debug, Serialize, Deserialize)]
struct HistogramSidecar {
    bin_ns: f64,
    rep_rate_hz: f64,
    t_int_s: f64,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta.json");
    std::path::PathBuf::from(os)
}

/// Write `<path>` (CSV) and `<path>.meta.json` (acquisition metadata).
pub fn write_histogram(path: &Path, h: &ArrivalHistogram) -> Result<(), IoError> {
    let mut out = String::with_capacity(16 * h.counts.len() + 16);
    out.push_str("time_ns,counts\n");
    for (i, &c) in h.counts.iter().enumerate() {
        let _ = writeln!(out, "{},{}", format_time_ns(h.bin_center(i)), c);
    }
    write(path, &out)?;
    let sidecar = HistogramSidecar {
        bin_ns: h.bin_width_ns,
        rep_rate_hz: h.rep_rate,
        t_int_s: h.integration_time,
    };
    write(
        &sidecar_path(path),
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&sidecar).expect("sidecar serializes")
        ),
    )
}

pub fn read_histogram(path: &Path) -> Result<ArrivalHistogram, IoError> {
    let meta_path = sidecar_path(path);
    let meta: HistogramSidecar =
        serde_json::from_str(&read(&meta_path)?).map_err(|e| IoError::Parse {
            path: meta_path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
    if meta.bin_ns <= 0.0 || meta.rep_rate_hz <= 0.0 || meta.t_int_s <= 0.0 {
        return Err(IoError::Format {
            path: meta_path.display().to_string(),
            msg: "bin_ns, rep_rate_hz and t_int_s must be positive".to_string(),
        });
    }
    let body = read(path)?;
    let mut counts = Vec::new();
    let mut first_center = None;
    let mut prev_time = f64::NEG_INFINITY;
    for (lineno, line) in body.lines().enumerate() {
        if lineno == 0 {
            if line.trim() != "time_ns,counts" {
                return Err(IoError::Parse {
                    path: path.display().to_string(),
                    line: 1,
                    msg: format!("expected header 'time_ns,counts', got '{line}'"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parse = |field: &str, what: &str| -> Result<f64, IoError> {
            field.trim().parse::<f64>().map_err(|_| IoError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("bad {what}: '{field}'"),
            })
        };
        let (ts, cs) = line.split_once(',').ok_or_else(|| IoError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: "expected two comma-separated fields".to_string(),
        })?;
        let t = parse(ts, "time")?;
        if t <= prev_time {
            return Err(IoError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: "time column must increase monotonically".to_string(),
            });
        }
        prev_time = t;
        let c = cs.trim().parse::<u64>().map_err(|_| IoError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: format!("bad counts: '{cs}' (must be a non-negative integer)"),
        })?;
        first_center.get_or_insert(t);
        counts.push(c);
    }
    let first = first_center.ok_or_else(|| IoError::Format {
        path: path.display().to_string(),
        msg: "histogram has no data rows".to_string(),
    })?;
    Ok(ArrivalHistogram {
        bin_width_ns: meta.bin_ns,
        t0_ns: first - 0.5 * meta.bin_ns,
        counts,
        rep_rate: meta.rep_rate_hz,
        integration_time: meta.t_int_s,
    })
}

/// Envelope CSV `time_ns,re,im`, amplitudes in photons^1/2 / ns^1/2.
pub fn write_envelope(path: &Path, env: &SignalEnvelope) -> Result<(), IoError> {
    let mut out = String::with_capacity(32 * env.time_ns.len() + 16);
    out.push_str("time_ns,re,im\n");
    for (t, a) in env.time_ns.iter().zip(env.amplitude.iter()) {
        let _ = writeln!(out, "{},{},{}", t, a.re, a.im);
    }
    write(path, &out)
}

pub fn read_envelope(path: &Path) -> Result<SignalEnvelope, IoError> {
    let body = read(path)?;
    let mut time_ns = Vec::new();
    let mut amplitude = Vec::new();
    for (lineno, line) in body.lines().enumerate() {
        if lineno == 0 {
            if line.trim() != "time_ns,re,im" {
                return Err(IoError::Parse {
                    path: path.display().to_string(),
                    line: 1,
                    msg: format!("expected header 'time_ns,re,im', got '{line}'"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(IoError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let mut vals = [0.0f64; 3];
        for (v, f) in vals.iter_mut().zip(fields.iter()) {
            *v = f.trim().parse().map_err(|_| IoError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("bad number: '{f}'"),
            })?;
        }
        time_ns.push(vals[0]);
        amplitude.push(Complex64::new(vals[1], vals[2]));
    }
    if time_ns.len() < 2 {
        return Err(IoError::Format {
            path: path.display().to_string(),
            msg: "envelope needs at least two samples".to_string(),
        });
    }
    Ok(SignalEnvelope { time_ns, amplitude })
}

/// Dataset CSV `x,y,sigma_y`.
pub fn read_dataset(path: &Path) -> Result<Dataset, IoError> {
    let body = read(path)?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut s = Vec::new();
    for (lineno, line) in body.lines().enumerate() {
        if lineno == 0 {
            if line.trim() != "x,y,sigma_y" {
                return Err(IoError::Parse {
                    path: path.display().to_string(),
                    line: 1,
                    msg: format!("expected header 'x,y,sigma_y', got '{line}'"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(IoError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let mut vals = [0.0f64; 3];
        for (v, f) in vals.iter_mut().zip(fields.iter()) {
            *v = f.trim().parse().map_err(|_| IoError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("bad number: '{f}'"),
            })?;
        }
        x.push(vals[0]);
        y.push(vals[1]);
        s.push(vals[2]);
    }
    Dataset::new(x, y, s).map_err(|e| IoError::Format {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn write_dataset(path: &Path, d: &Dataset) -> Result<(), IoError> {
    let mut out = String::new();
    out.push_str("x,y,sigma_y\n");
    for i in 0..d.len() {
        let _ = writeln!(out, "{},{},{}", d.x[i], d.y[i], d.sigma_y[i]);
    }
    write(path, &out)
}

/// Fit result as JSON with the full covariance. Non-finite covariance
/// entries (degenerate directions) serialize as null.
pub fn fit_result_json(r: &FitResult) -> String {
    let num = |v: f64| -> serde_json::Value {
        serde_json::Number::from_f64(v)
            .map(serde_json::Value::Number)
            .unwrap_or(serde_json::Value::Null)
    };
    let cov: Vec<serde_json::Value> = r
        .covariance
        .iter()
        .map(|row| serde_json::Value::Array(row.iter().map(|&v| num(v)).collect()))
        .collect();
    let value = serde_json::json!({
        "params": r.params.iter().map(|&v| num(v)).collect::<Vec<_>>(),
        "covariance": cov,
        "chi2_reduced": num(r.chi2_reduced),
        "converged": r.converged,
        "n_iterations": r.n_iterations,
        "flags": r.flags,
        "diagnostic": r.diagnostic,
    });
    serde_json::to_string_pretty(&value).expect("fit result serializes")
}

pub fn write_fit_result(path: &Path, r: &FitResult) -> Result<(), IoError> {
    write(path, &format!("{}\n", fit_result_json(r)))
}
