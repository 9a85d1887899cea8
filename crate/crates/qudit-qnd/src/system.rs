//! Nuclear and extended-basis Hamiltonians, their eigendecompositions, and
//! the classification of eigenstates into the three ancilla manifolds.
//!
//! The extended basis is {|m>} (x) {|up>, |down>, |empty>} with combined
//! index 3*im + e, where im counts m downward from +I and e is 0 for the
//! electron up state, 1 for down and 2 for the ionized (empty) state.
//! The up/down block and the empty block never couple, so the two blocks
//! are diagonalized separately; this keeps the empty-manifold eigenvalues
//! bit-identical to those of the bare nuclear Hamiltonian.

use nalgebra::{Complex, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{QndError, Result};
use crate::linalg::{assign_max_overlap, eigh, max_abs_c, CMat, RMat};
use crate::params::{PhysicalParams, QuadrupoleTensor};
use crate::spin::{make_spin_operators, SpinQuantum};

/// A Hermitian matrix in kHz together with its eigendecomposition
/// (eigenvalues ascending, phase-fixed orthonormal eigenvectors).
#[derive(Debug, Clone)]
pub struct HermitianSystem {
    matrix: CMat,
    eigenvalues: DVector<f64>,
    eigenvectors: CMat,
}

impl HermitianSystem {
    pub fn new(matrix: CMat) -> Result<Self> {
        let scale = max_abs_c(&matrix).max(f64::MIN_POSITIVE);
        let herm_resid = max_abs_c(&(&matrix - matrix.adjoint()));
        if herm_resid >= 1e-9 * scale {
            return Err(QndError::NotHermitian {
                residual: herm_resid,
                tol: 1e-9 * scale,
            });
        }
        let (eigenvalues, eigenvectors) = eigh(&matrix)?;
        let lambda = CMat::from_diagonal(&eigenvalues.map(|x| Complex::new(x, 0.0)));
        let recon = &eigenvectors * lambda * eigenvectors.adjoint();
        let recon_resid = max_abs_c(&(&matrix - recon));
        if recon_resid >= 1e-8 * scale {
            return Err(QndError::EigenResidual {
                residual: recon_resid,
                tol: 1e-8 * scale,
            });
        }
        Ok(Self {
            matrix,
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &CMat {
        &self.eigenvectors
    }
}

/// Bare nuclear Hamiltonian matrix (D x D, kHz):
/// -gamma_n B0 (cos(theta) Iz + sin(theta) Ix) + sum_ab q_ab Ia Ib.
pub(crate) fn system_hamiltonian_matrix(
    p: &PhysicalParams,
    q: &QuadrupoleTensor,
    sq: SpinQuantum,
) -> CMat {
    let ops = make_spin_operators(sq);
    let zeeman = -p.gamma_n_khz_per_t * p.b0_tesla;
    let mut h = &ops.iz * Complex::new(zeeman * p.theta_rad.cos(), 0.0)
        + &ops.ix * Complex::new(zeeman * p.theta_rad.sin(), 0.0);
    let qm = q.matrix();
    let triple = [&ops.ix, &ops.iy, &ops.iz];
    for a in 0..3 {
        for b in 0..3 {
            if qm[(a, b)] != 0.0 {
                h += triple[a] * triple[b] * Complex::new(qm[(a, b)], 0.0);
            }
        }
    }
    h
}

/// Coupled-donor Hamiltonian (2D x 2D, kHz) in the |m> (x) {up, down}
/// basis: H_S (x) 1 + gamma_e B0 Sz + A I.S.
pub(crate) fn coupled_hamiltonian_matrix(
    p: &PhysicalParams,
    q: &QuadrupoleTensor,
    sq: SpinQuantum,
) -> CMat {
    let d = sq.dimension();
    let ops = make_spin_operators(sq);
    let h_sys = system_hamiltonian_matrix(p, q, sq);

    let zero = Complex::new(0.0, 0.0);
    let sz = Matrix2::new(Complex::new(0.5, 0.0), zero, zero, Complex::new(-0.5, 0.0));
    let sx = Matrix2::new(zero, Complex::new(0.5, 0.0), Complex::new(0.5, 0.0), zero);
    let sy = Matrix2::new(zero, Complex::new(0.0, -0.5), Complex::new(0.0, 0.5), zero);
    let eye2 = Matrix2::identity();
    let eye_d = CMat::identity(d, d);

    h_sys.kronecker(&eye2)
        + eye_d.kronecker(&sz) * Complex::new(p.gamma_e_khz_per_t * p.b0_tesla, 0.0)
        + (ops.ix.kronecker(&sx) + ops.iy.kronecker(&sy) + ops.iz.kronecker(&sz))
            * Complex::new(p.a_khz, 0.0)
}

pub fn build_system_hamiltonian(
    p: &PhysicalParams,
    q: &QuadrupoleTensor,
    sq: SpinQuantum,
) -> Result<HermitianSystem> {
    HermitianSystem::new(system_hamiltonian_matrix(p, q, sq))
}

/// Ancilla manifold label; the discriminant doubles as the electron
/// sector index in the extended basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Manifold {
    Up = 0,
    Down = 1,
    Empty = 2,
}

impl Manifold {
    pub const ALL: [Manifold; 3] = [Manifold::Up, Manifold::Down, Manifold::Empty];

    pub fn sector(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Manifold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Manifold::Up => write!(f, "up"),
            Manifold::Down => write!(f, "down"),
            Manifold::Empty => write!(f, "empty"),
        }
    }
}

/// One classified eigenstate of the extended Hamiltonian.
#[derive(Debug, Clone)]
pub struct LabeledEigenstate {
    pub manifold: Manifold,
    /// Dominant nuclear projection (half-integer).
    pub m: f64,
    pub energy_khz: f64,
    /// Full vector in the 3D-dimensional extended basis.
    pub vector: DVector<Complex<f64>>,
}

impl LabeledEigenstate {
    /// Nuclear D-vector of this eigenstate within one electron sector.
    pub fn sector(&self, sector: Manifold) -> DVector<Complex<f64>> {
        let d = self.vector.len() / 3;
        DVector::from_iterator(d, (0..d).map(|im| self.vector[3 * im + sector.sector()]))
    }
}

/// The 3D-dimensional Hamiltonian, its projectors onto the coupled and
/// ionized subspaces, and the manifold-classified eigenstates.
#[derive(Debug, Clone)]
pub struct ExtendedSystem {
    hamiltonian: CMat,
    projector_updown: RMat,
    projector_empty: RMat,
    /// Grouped Up, Down, Empty; m descending within each group.
    eigenstates: Vec<LabeledEigenstate>,
    quantum: SpinQuantum,
}

impl ExtendedSystem {
    pub fn dimension(&self) -> usize {
        self.quantum.dimension()
    }

    pub fn quantum(&self) -> SpinQuantum {
        self.quantum
    }

    pub fn hamiltonian(&self) -> &CMat {
        &self.hamiltonian
    }

    /// (2D) x (3D) isometry extracting the coupled (up/down) subspace.
    pub fn projector_updown(&self) -> &RMat {
        &self.projector_updown
    }

    /// D x (3D) isometry extracting the ionized subspace.
    pub fn projector_empty(&self) -> &RMat {
        &self.projector_empty
    }

    pub fn eigenstates(&self) -> &[LabeledEigenstate] {
        &self.eigenstates
    }

    /// All eigenstates of one manifold, m descending (index 0 <-> m = +I).
    pub fn manifold(&self, manifold: Manifold) -> &[LabeledEigenstate] {
        let d = self.dimension();
        let start = manifold.sector() * d;
        &self.eigenstates[start..start + d]
    }

    /// Eigenstate with the given manifold and m index (0 <-> m = +I).
    pub fn state(&self, manifold: Manifold, m_index: usize) -> &LabeledEigenstate {
        &self.manifold(manifold)[m_index]
    }
}

/// Classify each eigenvector of one diagonalized block by maximum squared
/// overlap with the block's nominal basis states. Returns, per basis
/// index, the position of the eigenvector assigned to it.
fn classify_block(values: &DVector<f64>, vectors: &CMat) -> Result<Vec<usize>> {
    let n = values.len();
    let weights = RMat::from_fn(n, n, |vec_idx, basis_idx| {
        vectors[(basis_idx, vec_idx)].norm_sqr()
    });
    let assignment = assign_max_overlap(&weights);
    let mut by_basis = vec![usize::MAX; n];
    for (vec_idx, &basis_idx) in assignment.iter().enumerate() {
        let overlap = weights[(vec_idx, basis_idx)];
        if overlap <= 0.5 {
            return Err(QndError::Classification {
                index: vec_idx,
                energy_khz: values[vec_idx],
                overlap,
            });
        }
        by_basis[basis_idx] = vec_idx;
    }
    Ok(by_basis)
}

/// Build and classify the extended-basis Hamiltonian. Assumes the
/// neutral-donor quadrupole tensor equals the ionized one.
pub fn build_extended_hamiltonian(
    p: &PhysicalParams,
    q: &QuadrupoleTensor,
    sq: SpinQuantum,
) -> Result<ExtendedSystem> {
    let d = sq.dimension();
    let m_values = sq.m_values();

    let h_sys = system_hamiltonian_matrix(p, q, sq);
    let h_coupled = coupled_hamiltonian_matrix(p, q, sq);

    // assemble the full 3D x 3D matrix; cross-block entries stay exactly zero
    let mut h_ext = CMat::zeros(3 * d, 3 * d);
    for im in 0..d {
        for jm in 0..d {
            for e in 0..2 {
                for f in 0..2 {
                    h_ext[(3 * im + e, 3 * jm + f)] = h_coupled[(2 * im + e, 2 * jm + f)];
                }
            }
            h_ext[(3 * im + 2, 3 * jm + 2)] = h_sys[(im, jm)];
        }
    }

    let mut projector_updown = RMat::zeros(2 * d, 3 * d);
    let mut projector_empty = RMat::zeros(d, 3 * d);
    for im in 0..d {
        projector_updown[(2 * im, 3 * im)] = 1.0;
        projector_updown[(2 * im + 1, 3 * im + 1)] = 1.0;
        projector_empty[(im, 3 * im + 2)] = 1.0;
    }

    let (vals_c, vecs_c) = eigh(&h_coupled)?;
    let (vals_e, vecs_e) = eigh(&h_sys)?;
    let coupled_by_basis = classify_block(&vals_c, &vecs_c)?;
    let empty_by_basis = classify_block(&vals_e, &vecs_e)?;

    let embed_coupled = |col: usize| {
        let mut v = DVector::<Complex<f64>>::zeros(3 * d);
        for im in 0..d {
            v[3 * im] = vecs_c[(2 * im, col)];
            v[3 * im + 1] = vecs_c[(2 * im + 1, col)];
        }
        v
    };

    let mut eigenstates = Vec::with_capacity(3 * d);
    for manifold in [Manifold::Up, Manifold::Down] {
        for im in 0..d {
            let col = coupled_by_basis[2 * im + manifold.sector()];
            eigenstates.push(LabeledEigenstate {
                manifold,
                m: m_values[im],
                energy_khz: vals_c[col],
                vector: embed_coupled(col),
            });
        }
    }
    for im in 0..d {
        let col = empty_by_basis[im];
        let mut v = DVector::<Complex<f64>>::zeros(3 * d);
        for jm in 0..d {
            v[3 * jm + 2] = vecs_e[(jm, col)];
        }
        eigenstates.push(LabeledEigenstate {
            manifold: Manifold::Empty,
            m: m_values[im],
            energy_khz: vals_e[col],
            vector: v,
        });
    }

    Ok(ExtendedSystem {
        hamiltonian: h_ext,
        projector_updown,
        projector_empty,
        eigenstates,
        quantum: sq,
    })
}

/// Squared-overlap matrices of each manifold's eigenstates against their
/// nominal basis states; rows are eigenstates (m descending), columns the
/// nuclear basis index.
#[derive(Debug, Clone)]
pub struct OverlapMatrices {
    pub down: RMat,
    pub up: RMat,
    pub empty: RMat,
}

pub fn overlap_matrices(es: &ExtendedSystem) -> OverlapMatrices {
    let d = es.dimension();
    let build = |manifold: Manifold| {
        RMat::from_fn(d, d, |i, j| {
            es.state(manifold, i).vector[3 * j + manifold.sector()].norm_sqr()
        })
    };
    OverlapMatrices {
        down: build(Manifold::Down),
        up: build(Manifold::Up),
        empty: build(Manifold::Empty),
    }
}

/// Largest squared amplitude found outside the dominant electron sector
/// over the coupled manifolds (the flip-flop admixture).
pub fn max_flip_flop_admixture(es: &ExtendedSystem) -> f64 {
    let mut worst: f64 = 0.0;
    for manifold in [Manifold::Up, Manifold::Down] {
        let other = match manifold {
            Manifold::Up => Manifold::Down,
            _ => Manifold::Up,
        };
        for state in es.manifold(manifold) {
            let w: f64 = state.sector(other).iter().map(|z| z.norm_sqr()).sum();
            worst = worst.max(w);
        }
    }
    worst
}
