//! Nuclear spin-flip transition matrices for the coupling and decoupling
//! steps of the QND cycle, their compounding over tunneling events, and
//! the inverse problem of extracting a per-shot generator from a
//! compounded observation.
//!
//! Convention: all transition matrices are column-stochastic and stored
//! as entry (final, initial), so compounding events is a plain left
//! multiplication by the later event's matrix.

use crate::error::{QndError, Result};
use crate::linalg::{expm, logm, max_abs_r, RMat};
use crate::params::{PhysicalParams, QuadrupoleTensor};
use crate::spin::SpinQuantum;
use crate::system::{build_extended_hamiltonian, ExtendedSystem, Manifold};

/// Tunneling events per QND readout cycle under demon-style electron
/// initialization; measured value for the Sb-123 device.
pub const DEFAULT_KAPPA: f64 = 4.47;

/// Column-stochastic flip-probability matrix with its m-value labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    matrix: RMat,
    labels: Vec<f64>,
}

impl TransitionMatrix {
    /// Validates entries in [0, 1] and unit column sums (1e-8 slack);
    /// values within 1e-10 of the boundaries are snapped onto them.
    pub fn new(mut matrix: RMat, labels: Vec<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(QndError::DimensionMismatch(n, matrix.ncols()));
        }
        if labels.len() != n {
            return Err(QndError::DimensionMismatch(n, labels.len()));
        }
        for col in 0..n {
            for row in 0..n {
                let v = matrix[(row, col)];
                if !(-1e-10..=1.0 + 1e-10).contains(&v) {
                    return Err(QndError::NotProbability { row, col, value: v });
                }
                matrix[(row, col)] = v.clamp(0.0, 1.0);
            }
            let sum: f64 = matrix.column(col).sum();
            if (sum - 1.0).abs() > 1e-8 {
                return Err(QndError::NotStochastic { column: col, sum });
            }
        }
        Ok(Self { matrix, labels })
    }

    pub fn identity(sq: SpinQuantum) -> Self {
        let d = sq.dimension();
        Self {
            matrix: RMat::identity(d, d),
            labels: sq.m_values(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &RMat {
        &self.matrix
    }

    /// m value of each basis index, descending from +I.
    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// P(final = row | initial = column).
    pub fn prob(&self, final_state: usize, initial_state: usize) -> f64 {
        self.matrix[(final_state, initial_state)]
    }

    /// Total off-diagonal probability mass.
    pub fn off_diagonal_mass(&self) -> f64 {
        self.matrix.sum() - self.matrix.trace()
    }

    /// Summed probability of |delta m| = `band` transitions out of the
    /// given initial-state indices.
    pub fn band_mass(&self, band: usize, initial: &[usize]) -> f64 {
        let n = self.dimension();
        initial
            .iter()
            .flat_map(|&col| (0..n).map(move |row| (row, col)))
            .filter(|(row, col)| row.abs_diff(*col) == band)
            .map(|(row, col)| self.matrix[(row, col)])
            .sum()
    }

    pub fn max_deviation_from_identity(&self) -> f64 {
        let eye = RMat::identity(self.dimension(), self.dimension());
        max_abs_r(&(&self.matrix - eye))
    }
}

/// Continuous-time generator: non-negative off-diagonals, non-positive
/// diagonal, columns summing to zero.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    matrix: RMat,
    labels: Vec<f64>,
    adjusted_mass_per_column: Vec<f64>,
    regularization_warning: bool,
}

impl GeneratorMatrix {
    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &RMat {
        &self.matrix
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Negative off-diagonal mass removed from each column during
    /// regularization.
    pub fn adjusted_mass_per_column(&self) -> &[f64] {
        &self.adjusted_mass_per_column
    }

    /// Set when regularization removed more than 1e-3 from some column.
    pub fn regularization_warning(&self) -> bool {
        self.regularization_warning
    }

    /// Forward compounding T = exp(n G).
    pub fn compound(&self, n_events: f64) -> Result<TransitionMatrix> {
        let t = expm(&(&self.matrix * n_events));
        TransitionMatrix::new(t, self.labels.clone())
    }
}

fn manifold_transition(es: &ExtendedSystem, initial: Manifold) -> Result<TransitionMatrix> {
    let d = es.dimension();
    let empty_nuclear: Vec<_> = (0..d)
        .map(|n| es.state(Manifold::Empty, n).sector(Manifold::Empty))
        .collect();

    let mut t = RMat::zeros(d, d);
    for m in 0..d {
        let state = es.state(initial, m);
        let down_part = state.sector(Manifold::Down);
        let up_part = state.sector(Manifold::Up);
        for n in 0..d {
            let w = &empty_nuclear[n];
            t[(n, m)] = w.dotc(&down_part).norm_sqr() + w.dotc(&up_part).norm_sqr();
        }
    }

    TransitionMatrix::new(t, es.quantum().m_values())
}

/// Flip probabilities when a spin-down electron is loaded onto the
/// ionized donor (tunnel-in).
pub fn transition_couple(es: &ExtendedSystem) -> Result<TransitionMatrix> {
    manifold_transition(es, Manifold::Down)
}

/// Flip probabilities when the electron, flipped to spin-up, tunnels out
/// and the donor ionizes (tunnel-out).
pub fn transition_decouple(es: &ExtendedSystem) -> Result<TransitionMatrix> {
    manifold_transition(es, Manifold::Up)
}

/// One tunnel-in/tunnel-out event pair: coupling first, then decoupling.
pub fn compound_in_out(tc: &TransitionMatrix, td: &TransitionMatrix) -> Result<TransitionMatrix> {
    if tc.dimension() != td.dimension() {
        return Err(QndError::DimensionMismatch(tc.dimension(), td.dimension()));
    }
    if tc.labels != td.labels {
        return Err(QndError::InvalidConfig(
            "transition matrices carry different state labels".into(),
        ));
    }
    TransitionMatrix::new(td.matrix() * tc.matrix(), tc.labels.clone())
}

/// Real (possibly fractional) matrix power through the generator route:
/// t^kappa = exp(kappa log t). Entries driven slightly negative by
/// round-off are clipped and the columns renormalized; more than 1e-6 of
/// clipped mass in a column is reported as non-embeddability.
pub fn fractional_power(t: &TransitionMatrix, kappa: f64) -> Result<TransitionMatrix> {
    if kappa < 0.0 || !kappa.is_finite() {
        return Err(QndError::InvalidConfig(format!(
            "kappa must be a non-negative real, got {kappa}"
        )));
    }
    if kappa == 0.0 {
        let d = t.dimension();
        return TransitionMatrix::new(RMat::identity(d, d), t.labels.clone());
    }

    let generator = logm(t.matrix())?;
    let mut powered = expm(&(generator * kappa));

    let n = powered.nrows();
    for col in 0..n {
        let mut clipped = 0.0;
        for row in 0..n {
            let v = powered[(row, col)];
            if v < 0.0 {
                clipped += -v;
                powered[(row, col)] = 0.0;
            }
        }
        if clipped > 1e-6 {
            return Err(QndError::NonEmbeddable(format!(
                "fractional power clipped {clipped:.3e} of probability mass in column {col}"
            )));
        }
        let sum: f64 = powered.column(col).sum();
        if sum <= 0.0 {
            return Err(QndError::NotStochastic { column: col, sum });
        }
        for row in 0..n {
            powered[(row, col)] /= sum;
        }
    }

    TransitionMatrix::new(powered, t.labels.clone())
}

/// Recover the per-shot generator G from an observation compounded over
/// `n_tunnel` tunneling events: G = log(t_obs) / n_tunnel, then repaired
/// to a valid generator by zeroing negative off-diagonals and moving the
/// removed mass onto the same column's diagonal.
pub fn extract_generator(t_obs: &TransitionMatrix, n_tunnel: f64) -> Result<GeneratorMatrix> {
    if n_tunnel <= 0.0 || !n_tunnel.is_finite() {
        return Err(QndError::InvalidConfig(format!(
            "n_tunnel must be positive, got {n_tunnel}"
        )));
    }
    let n = t_obs.dimension();
    for k in 0..n {
        if t_obs.matrix()[(k, k)] <= 0.0 {
            return Err(QndError::NonEmbeddable(format!(
                "observed matrix has non-positive diagonal entry at {k}; \
                 the principal logarithm branch is not trustworthy"
            )));
        }
    }

    let log_t = logm(t_obs.matrix())?;
    let raw = &log_t / n_tunnel;

    // round trip before any repair
    let forward = expm(&log_t);
    let resid = max_abs_r(&(&forward - t_obs.matrix()));
    if resid >= 1e-8 {
        return Err(QndError::NonEmbeddable(format!(
            "generator round trip residual {resid:.3e} exceeds 1e-8"
        )));
    }

    let mut repaired = raw.clone();
    let mut adjusted = vec![0.0; n];
    for col in 0..n {
        for row in 0..n {
            if row != col && repaired[(row, col)] < 0.0 {
                adjusted[col] += -repaired[(row, col)];
                repaired[(col, col)] += repaired[(row, col)];
                repaired[(row, col)] = 0.0;
            }
        }
    }
    for col in 0..n {
        let sum: f64 = repaired.column(col).sum();
        if sum.abs() > 1e-9 {
            return Err(QndError::NonEmbeddable(format!(
                "repaired generator column {col} sums to {sum:.3e}"
            )));
        }
        if repaired[(col, col)] > 1e-12 {
            return Err(QndError::NonEmbeddable(format!(
                "repaired generator has positive diagonal {:.3e} in column {col}",
                repaired[(col, col)]
            )));
        }
    }

    let warning = adjusted.iter().any(|&m| m > 1e-3);
    Ok(GeneratorMatrix {
        matrix: repaired,
        labels: t_obs.labels.clone(),
        adjusted_mass_per_column: adjusted,
        regularization_warning: warning,
    })
}

/// Per-QND-cycle transition matrix: (T_decouple T_couple)^kappa for the
/// given physical parameters.
pub fn t_qnd(
    p: &PhysicalParams,
    q: &QuadrupoleTensor,
    sq: SpinQuantum,
    kappa: f64,
) -> Result<TransitionMatrix> {
    let es = build_extended_hamiltonian(p, q, sq)?;
    let tc = transition_couple(&es)?;
    let td = transition_decouple(&es)?;
    let in_out = compound_in_out(&tc, &td)?;
    fractional_power(&in_out, kappa)
}
