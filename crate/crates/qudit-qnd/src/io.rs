//! CSV and JSON serialization of matrices, spectra, traces and
//! simulation results.
//!
//! All numeric CSV output uses Rust's shortest-roundtrip float notation
//! with a decimal point and no thousands separators, so re-running a
//! command rewrites files byte-identically.

use std::io::{Read, Write};

use serde_json::{json, Value};

use crate::error::{QndError, Result};
use crate::linalg::RMat;
use crate::nmr::{ChargeState, NmrSpectrumSet, QuadrupoleFit};
use crate::protocol::{ProtocolKind, SimResult, SweepPoint};
use crate::trace::JumpTrace;

/// Matrix CSV layout: one header row with the m labels of the columns
/// (initial states), then the row-major data.
pub fn write_matrix_csv<W: Write>(writer: W, labels: &[f64], data: &RMat) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(labels.iter().map(|m| m.to_string()))?;
    for r in 0..data.nrows() {
        w.write_record((0..data.ncols()).map(|c| data[(r, c)].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(reader: R) -> Result<(Vec<f64>, RMat)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let values: Vec<f64> = record
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| QndError::MalformedInput {
                    line: line + 1,
                    message: format!("not a number: {s:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if line == 0 {
            labels = values;
        } else {
            rows.push(values);
        }
    }
    let n = labels.len();
    if n == 0 || rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(QndError::MalformedInput {
            line: rows.len() + 1,
            message: format!("expected {n} x {n} matrix after the label header"),
        });
    }
    let data = RMat::from_fn(n, n, |r, c| rows[r][c]);
    Ok((labels, data))
}

/// JSON document for a transition or generator matrix.
pub fn matrix_json(
    labels: &[f64],
    data: &RMat,
    convention: &str,
    kappa: Option<f64>,
    provenance: Value,
) -> Value {
    let rows: Vec<Vec<f64>> = (0..data.nrows())
        .map(|r| (0..data.ncols()).map(|c| data[(r, c)]).collect())
        .collect();
    let mut doc = json!({
        "labels": labels,
        "convention": convention,
        "data": rows,
        "provenance": provenance,
    });
    if let Some(k) = kappa {
        doc["kappa"] = json!(k);
    }
    doc
}

/// Spectra CSV layout: theta_deg, transition_index, freq_khz, sigma_khz.
pub fn write_spectra_csv<W: Write>(writer: W, set: &NmrSpectrumSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["theta_deg", "transition_index", "freq_khz", "sigma_khz"])?;
    for (i, theta) in set.angles_rad.iter().enumerate() {
        let deg = theta.to_degrees();
        for (k, (f, s)) in set.freqs_khz[i].iter().zip(&set.sigmas_khz[i]).enumerate() {
            w.write_record([deg.to_string(), k.to_string(), f.to_string(), s.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_spectra_csv<R: Read>(reader: R, charge_state: ChargeState) -> Result<NmrSpectrumSet> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut angles: Vec<f64> = Vec::new();
    let mut freqs: Vec<Vec<(usize, f64, f64)>> = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let field = |idx: usize| -> Result<f64> {
            record
                .get(idx)
                .ok_or_else(|| QndError::MalformedInput {
                    line: line + 2,
                    message: "missing column".into(),
                })?
                .parse::<f64>()
                .map_err(|_| QndError::MalformedInput {
                    line: line + 2,
                    message: format!("not a number: {:?}", record.get(idx).unwrap_or("")),
                })
        };
        let theta = field(0)?.to_radians();
        let index = field(1)? as usize;
        let freq = field(2)?;
        let sigma = field(3)?;

        match angles.iter().position(|&a| a == theta) {
            Some(pos) => freqs[pos].push((index, freq, sigma)),
            None => {
                angles.push(theta);
                freqs.push(vec![(index, freq, sigma)]);
            }
        }
    }

    let mut freqs_khz = Vec::with_capacity(angles.len());
    let mut sigmas_khz = Vec::with_capacity(angles.len());
    for mut rows in freqs {
        rows.sort_by_key(|&(k, _, _)| k);
        for (pos, &(k, _, _)) in rows.iter().enumerate() {
            if k != pos {
                return Err(QndError::MalformedInput {
                    line: 0,
                    message: format!("transition indices are not contiguous (saw {k})"),
                });
            }
        }
        freqs_khz.push(rows.iter().map(|&(_, f, _)| f).collect());
        sigmas_khz.push(rows.iter().map(|&(_, _, s)| s).collect());
    }

    let set = NmrSpectrumSet {
        angles_rad: angles,
        freqs_khz,
        sigmas_khz,
        charge_state,
    };
    set.validate()?;
    Ok(set)
}

/// Model-curve CSV: theta_deg, transition_index, model_freq_khz.
pub fn write_model_curve_csv<W: Write>(
    writer: W,
    angles_rad: &[f64],
    model_freqs_khz: &[Vec<f64>],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["theta_deg", "transition_index", "model_freq_khz"])?;
    for (theta, row) in angles_rad.iter().zip(model_freqs_khz) {
        let deg = theta.to_degrees();
        for (k, f) in row.iter().enumerate() {
            w.write_record([deg.to_string(), k.to_string(), f.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Trace CSV layout: block, true_state, assigned_state.
pub fn write_trace_csv<W: Write>(writer: W, trace: &JumpTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["block", "true_state", "assigned_state"])?;
    for (i, (t, a)) in trace.true_states.iter().zip(&trace.assigned).enumerate() {
        w.write_record([i.to_string(), t.to_string(), a.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One CSV row per simulated protocol configuration.
pub fn write_sim_results_csv<W: Write>(
    writer: W,
    rows: &[(ProtocolKind, usize, SimResult)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "protocol",
        "n_shots",
        "n_trials",
        "seed",
        "fidelity",
        "fidelity_stderr",
        "mean_qnd_cycles",
        "rejection_rate",
        "mean_sub1_cycles",
        "forced_assignments",
    ])?;
    for (kind, n_shots, r) in rows {
        w.write_record([
            kind.to_string(),
            n_shots.to_string(),
            r.n_trials.to_string(),
            r.seed.to_string(),
            r.fidelity_avg.to_string(),
            r.fidelity_stderr.to_string(),
            r.mean_qnd_cycles.to_string(),
            r.rejection_rate.map_or(String::new(), |v| v.to_string()),
            r.mean_sub1_cycles.map_or(String::new(), |v| v.to_string()),
            r.forced_assignments.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One CSV row per ancilla-sweep grid point.
pub fn write_sweep_csv<W: Write>(writer: W, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "protocol",
        "ancilla_fidelity",
        "n_shots",
        "fidelity",
        "fidelity_stderr",
        "mean_qnd_cycles",
        "rejection_rate",
        "optimal",
    ])?;
    for p in points {
        w.write_record([
            p.protocol.to_string(),
            p.ancilla_fidelity.to_string(),
            p.n_shots.to_string(),
            p.fidelity.to_string(),
            p.fidelity_stderr.to_string(),
            p.mean_qnd_cycles.to_string(),
            p.rejection_rate.map_or(String::new(), |v| v.to_string()),
            (p.optimal as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Full fit document: all nine tensor elements, the five free parameters
/// with standard errors, covariance and residual RMS.
pub fn quadrupole_fit_json(fit: &QuadrupoleFit, provenance: Value) -> Value {
    let m = fit.tensor.matrix();
    let tensor_rows: Vec<Vec<f64>> = (0..3)
        .map(|r| (0..3).map(|c| m[(r, c)]).collect())
        .collect();
    let mut doc = json!({
        "tensor_khz": tensor_rows,
        "free_params_khz": {
            "qxx": fit.tensor.qxx_khz,
            "qyy": fit.tensor.qyy_khz,
            "qyz": fit.tensor.qyz_khz,
            "qxz": fit.tensor.qxz_khz,
            "qxy": fit.tensor.qxy_khz,
        },
        "std_errors_khz": fit.std_errors_khz,
        "covariance": fit.covariance,
        "residual_rms_khz": fit.residual_rms_khz,
        "iterations": fit.iterations,
        "provenance": provenance,
    });
    if let Some((larmor, err)) = fit.larmor_khz {
        doc["larmor_khz"] = json!(larmor);
        doc["larmor_stderr_khz"] = json!(err);
    }
    doc
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<W: Write>(mut writer: W, value: &Value) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    Ok(())
}
