//! Angular-momentum operators for a spin-I nucleus with D = 2I + 1 levels.
//!
//! Basis convention everywhere in this crate: index 0 corresponds to
//! m = +I and the projection decreases by one per index, so `Iz` is
//! diagonal with entries I, I-1, ..., -I.

use nalgebra::{Complex, DMatrix};

use crate::error::{QndError, Result};

/// Spin quantum numbers of a D-level nucleus, D = 2I + 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpinQuantum {
    dimension: usize,
}

impl SpinQuantum {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension < 2 {
            return Err(QndError::InvalidDimension(dimension));
        }
        Ok(Self { dimension })
    }

    /// Spin-7/2, D = 8 (e.g. an Sb-123 nucleus).
    pub fn spin_7_2() -> Self {
        Self { dimension: 8 }
    }

    /// Spin-9/2, D = 10 (e.g. a Ge-73 nucleus).
    pub fn spin_9_2() -> Self {
        Self { dimension: 10 }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// The spin I = (D - 1)/2, exact in f64 for any practical D.
    pub fn spin(&self) -> f64 {
        (self.dimension as f64 - 1.0) / 2.0
    }

    /// Projections m = I, I-1, ..., -I in basis order.
    pub fn m_values(&self) -> Vec<f64> {
        let i = self.spin();
        (0..self.dimension).map(|k| i - k as f64).collect()
    }
}

/// The matrix triple (Ix, Iy, Iz) in units of hbar.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub ix: DMatrix<Complex<f64>>,
    pub iy: DMatrix<Complex<f64>>,
    pub iz: DMatrix<Complex<f64>>,
    quantum: SpinQuantum,
}

impl SpinOperators {
    pub fn quantum(&self) -> SpinQuantum {
        self.quantum
    }

    pub fn dimension(&self) -> usize {
        self.quantum.dimension()
    }
}

/// Build (Ix, Iy, Iz) from the standard ladder matrix elements
/// <m±1|I±|m> = sqrt(I(I+1) - m(m±1)).
pub fn make_spin_operators(sq: SpinQuantum) -> SpinOperators {
    let d = sq.dimension();
    let i = sq.spin();
    let m = sq.m_values();

    let mut iz = DMatrix::<Complex<f64>>::zeros(d, d);
    for k in 0..d {
        iz[(k, k)] = Complex::new(m[k], 0.0);
    }

    // raising operator: |m_k> -> |m_k + 1>, i.e. row k-1, column k
    let mut ip = DMatrix::<Complex<f64>>::zeros(d, d);
    for k in 1..d {
        let mk = m[k];
        ip[(k - 1, k)] = Complex::new((i * (i + 1.0) - mk * (mk + 1.0)).sqrt(), 0.0);
    }
    let im = ip.adjoint();

    let half = Complex::new(0.5, 0.0);
    let half_over_i = Complex::new(0.0, -0.5);
    let ix = (&ip + &im) * half;
    let iy = (&ip - &im) * half_over_i;

    SpinOperators {
        ix,
        iy,
        iz,
        quantum: sq,
    }
}
