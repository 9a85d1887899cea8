//! NMR transition frequencies versus field angle, quadrupole splittings,
//! and the five-parameter tensor fit to angular spectroscopy data.
//!
//! Transition k connects the levels labeled m = I - k and m = I - k - 1.
//! Labels are assigned at theta = 0 by dominant Iz component and then
//! carried through angle sweeps by adiabatic overlap tracking, so the
//! frequency ordering stays meaningful through level crossings (near 45
//! degrees the splittings collapse and the plain energy ordering would
//! silently scramble).

use nalgebra::{Complex, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{QndError, Result};
use crate::fit::levenberg_marquardt;
use crate::linalg::{eigh, CMat};
use crate::params::{PhysicalParams, QuadrupoleTensor};
use crate::spin::SpinQuantum;
use crate::system::{coupled_hamiltonian_matrix, system_hamiltonian_matrix};

/// Maximum tracking step between diagonalizations during angle sweeps.
const TRACK_STEP_RAD: f64 = 2.0 * std::f64::consts::PI / 180.0;
const TRACK_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChargeState {
    /// Electron removed; bare nuclear Hamiltonian.
    Ionized,
    /// Electron loaded spin-down; frequencies within the down manifold.
    Neutral,
}

impl std::fmt::Display for ChargeState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChargeState::Ionized => write!(f, "ionized"),
            ChargeState::Neutral => write!(f, "neutral"),
        }
    }
}

/// Angular NMR dataset: D-1 transition frequencies per angle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NmrSpectrumSet {
    pub angles_rad: Vec<f64>,
    /// Per angle, D-1 frequencies ordered by transition index.
    pub freqs_khz: Vec<Vec<f64>>,
    pub sigmas_khz: Vec<Vec<f64>>,
    pub charge_state: ChargeState,
}

impl NmrSpectrumSet {
    pub fn validate(&self) -> Result<()> {
        if self.angles_rad.is_empty() {
            return Err(QndError::InvalidConfig("spectrum set has no angles".into()));
        }
        if self.freqs_khz.len() != self.angles_rad.len()
            || self.sigmas_khz.len() != self.angles_rad.len()
        {
            return Err(QndError::InvalidConfig(
                "angles, frequencies and sigmas have different lengths".into(),
            ));
        }
        let n_trans = self.freqs_khz[0].len();
        if n_trans < 1 {
            return Err(QndError::InvalidConfig("no transitions per angle".into()));
        }
        for (row, (f, s)) in self.freqs_khz.iter().zip(&self.sigmas_khz).enumerate() {
            if f.len() != n_trans || s.len() != n_trans {
                return Err(QndError::InvalidConfig(format!(
                    "angle {row} does not carry exactly {n_trans} transitions"
                )));
            }
            if s.iter().any(|&v| v <= 0.0) {
                return Err(QndError::InvalidConfig(format!(
                    "non-positive sigma at angle {row}"
                )));
            }
        }
        Ok(())
    }

    /// Hilbert-space dimension implied by the transition count.
    pub fn dimension(&self) -> usize {
        self.freqs_khz.first().map_or(0, |f| f.len() + 1)
    }
}

/// Hamiltonian family being tracked over theta.
struct LevelModel<'a> {
    p: &'a PhysicalParams,
    q: &'a QuadrupoleTensor,
    sq: SpinQuantum,
    charge: ChargeState,
}

impl LevelModel<'_> {
    fn hamiltonian(&self, theta: f64) -> CMat {
        let p = self.p.with_theta(theta);
        match self.charge {
            ChargeState::Ionized => system_hamiltonian_matrix(&p, self.q, self.sq),
            ChargeState::Neutral => coupled_hamiltonian_matrix(&p, self.q, self.sq),
        }
    }

    /// Basis index of the nominal state with m-label index `k`.
    fn nominal_index(&self, k: usize) -> usize {
        match self.charge {
            ChargeState::Ionized => k,
            // electron spin-down component of |m_k>
            ChargeState::Neutral => 2 * k + 1,
        }
    }
}

/// Tracked level energies, ordered by m label (index 0 <-> m = +I).
struct TrackedLevels {
    vectors: Vec<DVector<Complex<f64>>>,
    energies: Vec<f64>,
    theta: f64,
}

fn seed_levels(model: &LevelModel) -> Result<TrackedLevels> {
    let d = model.sq.dimension();
    let (vals, vecs) = eigh(&model.hamiltonian(0.0))?;
    let n = vecs.nrows();

    let mut vectors = Vec::with_capacity(d);
    let mut energies = Vec::with_capacity(d);
    for k in 0..d {
        let target = model.nominal_index(k);
        let (col, overlap) = (0..n)
            .map(|c| (c, vecs[(target, c)].norm_sqr()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty spectrum");
        if overlap <= 0.5 {
            return Err(QndError::Classification {
                index: k,
                energy_khz: vals[col],
                overlap,
            });
        }
        vectors.push(DVector::from_column_slice(vecs.column(col).as_slice()));
        energies.push(vals[col]);
    }
    Ok(TrackedLevels {
        vectors,
        energies,
        theta: 0.0,
    })
}

type TrackedVectors = (Vec<DVector<Complex<f64>>>, Vec<f64>);

/// Match each previously tracked vector to its continuation among the new
/// eigenvectors; ambiguous matches (overlap margin below `TRACK_MARGIN`
/// or two levels claiming the same column) are a hard error.
fn match_levels(
    old_vectors: &[DVector<Complex<f64>>],
    vals: &DVector<f64>,
    vecs: &CMat,
    theta: f64,
) -> Result<TrackedVectors> {
    let n = vecs.nrows();
    let mut used = vec![false; n];
    let mut new_vectors = Vec::with_capacity(old_vectors.len());
    let mut new_energies = Vec::with_capacity(old_vectors.len());
    for old in old_vectors {
        let mut best = (usize::MAX, -1.0);
        let mut second = -1.0;
        for c in 0..n {
            let mut amp = Complex::new(0.0, 0.0);
            for r in 0..n {
                amp += old[r].conj() * vecs[(r, c)];
            }
            let w = amp.norm_sqr();
            if w > best.1 {
                second = best.1;
                best = (c, w);
            } else if w > second {
                second = w;
            }
        }
        let margin = best.1 - second.max(0.0);
        if margin < TRACK_MARGIN || used[best.0] {
            return Err(QndError::LevelTracking {
                theta_rad: theta,
                margin,
            });
        }
        used[best.0] = true;
        new_vectors.push(DVector::from_column_slice(vecs.column(best.0).as_slice()));
        new_energies.push(vals[best.0]);
    }
    Ok((new_vectors, new_energies))
}

fn advance_levels(model: &LevelModel, levels: &mut TrackedLevels, theta: f64) -> Result<()> {
    let (vals, vecs) = eigh(&model.hamiltonian(theta))?;
    let (new_vectors, new_energies) = match_levels(&levels.vectors, &vals, &vecs, theta)?;
    levels.vectors = new_vectors;
    levels.energies = new_energies;
    levels.theta = theta;
    Ok(())
}

/// Tracked level energies at each requested angle, walking out from
/// theta = 0 with refinement steps no larger than `TRACK_STEP_RAD`.
fn energies_at_angles(model: &LevelModel, angles: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut order: Vec<usize> = (0..angles.len()).collect();
    order.sort_by(|&a, &b| angles[a].total_cmp(&angles[b]));

    let mut out = vec![Vec::new(); angles.len()];
    // walk negatives downward from zero, positives upward, both seeded at 0
    for &descending in &[true, false] {
        let targets: Vec<usize> = if descending {
            order
                .iter()
                .rev()
                .copied()
                .filter(|&i| angles[i] < 0.0)
                .collect()
        } else {
            order
                .iter()
                .copied()
                .filter(|&i| angles[i] >= 0.0)
                .collect()
        };
        if targets.is_empty() {
            continue;
        }
        let mut levels = seed_levels(model)?;
        for &idx in &targets {
            let target = angles[idx];
            loop {
                let remaining = target - levels.theta;
                if remaining.abs() <= TRACK_STEP_RAD {
                    if remaining != 0.0 {
                        advance_levels(model, &mut levels, target)?;
                    }
                    break;
                }
                let next = levels.theta + TRACK_STEP_RAD.copysign(remaining);
                advance_levels(model, &mut levels, next)?;
            }
            out[idx] = levels.energies.clone();
        }
    }
    Ok(out)
}

/// D-1 transition frequencies at each angle, ordered by transition index
/// (m = I - k down to m = I - k - 1).
pub fn nmr_frequencies_at_angles(
    p: &PhysicalParams,
    q: &QuadrupoleTensor,
    sq: SpinQuantum,
    charge: ChargeState,
    angles_rad: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let model = LevelModel { p, q, sq, charge };
    let energies = energies_at_angles(&model, angles_rad)?;
    Ok(energies
        .into_iter()
        .map(|e| e.windows(2).map(|w| (w[1] - w[0]).abs()).collect())
        .collect())
}

/// Transition frequencies at the angle carried by `p.theta_rad`.
pub fn nmr_frequencies(
    p: &PhysicalParams,
    q: &QuadrupoleTensor,
    sq: SpinQuantum,
    charge: ChargeState,
) -> Result<Vec<f64>> {
    Ok(nmr_frequencies_at_angles(p, q, sq, charge, &[p.theta_rad])?
        .pop()
        .expect("one angle requested"))
}

/// First- and second-order quadrupole splittings: the means of the first
/// and second differences of the ordered frequency list.
pub fn splittings(freqs: &[f64]) -> Result<(f64, f64)> {
    if freqs.len() < 3 {
        return Err(QndError::InvalidConfig(format!(
            "splittings need at least 3 frequencies, got {}",
            freqs.len()
        )));
    }
    let first: Vec<f64> = freqs.windows(2).map(|w| w[1] - w[0]).collect();
    let second: Vec<f64> = first.windows(2).map(|w| w[1] - w[0]).collect();
    let f_q1 = first.iter().sum::<f64>() / first.len() as f64;
    let f_q2 = second.iter().sum::<f64>() / second.len() as f64;
    Ok((f_q1, f_q2))
}

/// Forward-model spectra with i.i.d. Gaussian noise; deterministic per
/// seed. A zero noise level stores a 1e-6 kHz sigma so the set stays
/// usable as fit input.
pub fn synth_spectra(
    p: &PhysicalParams,
    q: &QuadrupoleTensor,
    sq: SpinQuantum,
    charge: ChargeState,
    angles_rad: &[f64],
    noise_sigma_khz: f64,
    seed: u64,
) -> Result<NmrSpectrumSet> {
    if noise_sigma_khz < 0.0 {
        return Err(QndError::InvalidConfig(format!(
            "noise sigma must be non-negative, got {noise_sigma_khz}"
        )));
    }
    let clean = nmr_frequencies_at_angles(p, q, sq, charge, angles_rad)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = noise_sigma_khz.max(1e-6);
    let normal = Normal::new(0.0, sigma).expect("valid sigma");

    let freqs_khz = clean
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|f| {
                    if noise_sigma_khz > 0.0 {
                        f + normal.sample(&mut rng)
                    } else {
                        f
                    }
                })
                .collect::<Vec<f64>>()
        })
        .collect::<Vec<_>>();
    let sigmas_khz = freqs_khz.iter().map(|row| vec![sigma; row.len()]).collect();

    Ok(NmrSpectrumSet {
        angles_rad: angles_rad.to_vec(),
        freqs_khz,
        sigmas_khz,
        charge_state: charge,
    })
}

/// Result of the five-parameter tensor fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadrupoleFit {
    pub tensor: QuadrupoleTensor,
    /// Standard errors of (qxx, qyy, qyz, qxz, qxy) and, when fitted, the
    /// Larmor frequency.
    pub std_errors_khz: Vec<f64>,
    /// Unweighted RMS of the frequency residuals.
    pub residual_rms_khz: f64,
    /// Gauss-approximation covariance of the fitted parameters.
    pub covariance: Vec<Vec<f64>>,
    /// Fitted gamma_n B0 and its standard error, when requested.
    pub larmor_khz: Option<(f64, f64)>,
    pub iterations: usize,
}

/// Weighted nonlinear least squares for the five free tensor components;
/// `fit_larmor` adds gamma_n B0 as a sixth nuisance parameter.
///
/// zx-plane rotation data cannot distinguish the joint sign of
/// (qyz, qxy): complex conjugation flips both while leaving every
/// spectrum unchanged. The fit reports the branch with qyz >= 0 (and
/// qxy >= 0 when qyz vanishes).
pub fn fit_quadrupole(
    data: &NmrSpectrumSet,
    p0: &PhysicalParams,
    init: &QuadrupoleTensor,
    fit_larmor: bool,
) -> Result<QuadrupoleFit> {
    data.validate()?;
    let sq = SpinQuantum::new(data.dimension())?;
    let charge = data.charge_state;
    let n_angles = data.angles_rad.len();
    let n_trans = data.freqs_khz[0].len();

    let residual = |x: &[f64]| -> Result<DVector<f64>> {
        let q = QuadrupoleTensor::from_free_params(&[x[0], x[1], x[2], x[3], x[4]]);
        let p = if fit_larmor {
            let mut p = *p0;
            p.gamma_n_khz_per_t = x[5] / p0.b0_tesla;
            p
        } else {
            *p0
        };
        let model = nmr_frequencies_at_angles(&p, &q, sq, charge, &data.angles_rad)?;
        let mut r = DVector::zeros(n_angles * n_trans);
        for (i, row) in model.iter().enumerate() {
            for k in 0..n_trans {
                r[i * n_trans + k] = (row[k] - data.freqs_khz[i][k]) / data.sigmas_khz[i][k];
            }
        }
        Ok(r)
    };

    let mut initial = init.free_params().to_vec();
    if fit_larmor {
        initial.push(p0.gamma_n_khz_per_t * p0.b0_tesla);
    }
    let mut outcome = levenberg_marquardt(residual, &initial, 200)?;

    // gauge fix onto the qyz >= 0 branch; covariance entries coupling one
    // flipped parameter to an unflipped one change sign with it
    let qyz = outcome.params[2];
    let qxy = outcome.params[4];
    if qyz < 0.0 || (qyz == 0.0 && qxy < 0.0) {
        for &k in &[2usize, 4] {
            outcome.params[k] = -outcome.params[k];
            for j in 0..outcome.params.len() {
                outcome.covariance[(k, j)] = -outcome.covariance[(k, j)];
                outcome.covariance[(j, k)] = -outcome.covariance[(j, k)];
            }
        }
    }

    let tensor = QuadrupoleTensor::from_free_params(&[
        outcome.params[0],
        outcome.params[1],
        outcome.params[2],
        outcome.params[3],
        outcome.params[4],
    ]);

    // unweighted residual RMS at the optimum
    let p_final = if fit_larmor {
        let mut p = *p0;
        p.gamma_n_khz_per_t = outcome.params[5] / p0.b0_tesla;
        p
    } else {
        *p0
    };
    let model = nmr_frequencies_at_angles(&p_final, &tensor, sq, charge, &data.angles_rad)?;
    let mut ss = 0.0;
    for (row, obs) in model.iter().zip(&data.freqs_khz) {
        for (m, o) in row.iter().zip(obs) {
            let d = m - o;
            ss += d * d;
        }
    }
    let residual_rms_khz = (ss / (n_angles * n_trans) as f64).sqrt();

    let n_par = outcome.params.len();
    let covariance = (0..n_par)
        .map(|r| (0..n_par).map(|c| outcome.covariance[(r, c)]).collect())
        .collect();

    Ok(QuadrupoleFit {
        tensor,
        std_errors_khz: outcome.std_errors.clone(),
        residual_rms_khz,
        covariance,
        larmor_khz: fit_larmor.then(|| (outcome.params[5], outcome.std_errors[5])),
        iterations: outcome.iterations,
    })
}

/// Evenly spaced angle grid in radians, inclusive of both ends.
pub fn angle_grid(start_rad: f64, end_rad: f64, count: usize) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(QndError::InvalidConfig(
            "angle grid needs at least 2 points".into(),
        ));
    }
    let step = (end_rad - start_rad) / (count - 1) as f64;
    Ok((0..count).map(|k| start_rad + step * k as f64).collect())
}
