//! Physical parameters and the quadrupole coupling tensor.
//!
//! All energies are frequencies in kHz (h = 1). Magnetic fields are in
//! tesla and gyromagnetic ratios in kHz/T.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

/// Field, gyromagnetic ratios and hyperfine coupling for one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub b0_tesla: f64,
    pub gamma_n_khz_per_t: f64,
    pub gamma_e_khz_per_t: f64,
    pub a_khz: f64,
    /// Rotation of B0 in the zx-plane, radians. Applied to the nuclear
    /// Zeeman term only; electron resonance frequencies are not modeled
    /// angle-dependently.
    pub theta_rad: f64,
}

impl PhysicalParams {
    /// Sb-123 donor defaults: B0 = 1.395 T, gamma_n = 5.55 MHz/T,
    /// gamma_e = 28.02 GHz/T, A = 97.5 MHz.
    pub fn sb123() -> Self {
        Self {
            b0_tesla: 1.395,
            gamma_n_khz_per_t: 5.55e3,
            gamma_e_khz_per_t: 2.802e7,
            a_khz: 9.75e4,
            theta_rad: 0.0,
        }
    }

    /// Ge-73 quantum-dot defaults at a configurable field: A = 350 kHz,
    /// gamma_n = -1489.9 kHz/T (negative nuclear moment).
    pub fn ge73(b0_tesla: f64) -> Self {
        Self {
            b0_tesla,
            gamma_n_khz_per_t: -1489.9,
            gamma_e_khz_per_t: 2.802e7,
            a_khz: 350.0,
            theta_rad: 0.0,
        }
    }

    /// Nuclear Larmor frequency magnitude |gamma_n| B0 in kHz.
    pub fn larmor_khz(&self) -> f64 {
        (self.gamma_n_khz_per_t * self.b0_tesla).abs()
    }

    pub fn with_theta(mut self, theta_rad: f64) -> Self {
        self.theta_rad = theta_rad;
        self
    }

    pub fn with_b0(mut self, b0_tesla: f64) -> Self {
        self.b0_tesla = b0_tesla;
        self
    }
}

/// Traceless symmetric 3x3 quadrupole tensor in kHz, stored as its five
/// free components; qzz = -(qxx + qyy) by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrupoleTensor {
    pub qxx_khz: f64,
    pub qyy_khz: f64,
    pub qyz_khz: f64,
    pub qxz_khz: f64,
    pub qxy_khz: f64,
}

impl QuadrupoleTensor {
    pub fn new(qxx_khz: f64, qyy_khz: f64, qyz_khz: f64, qxz_khz: f64, qxy_khz: f64) -> Self {
        Self {
            qxx_khz,
            qyy_khz,
            qyz_khz,
            qxz_khz,
            qxy_khz,
        }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0, 0.0)
    }

    /// Measured Sb-123 ionized-donor tensor.
    pub fn sb123() -> Self {
        Self::new(-10.57, 3.06, 5.16, 2.60, -30.48)
    }

    /// Placeholder tensor for the Ge-73 device, which has no published
    /// tensor; magnitude chosen a few kHz with the same anisotropy
    /// pattern as the measured Sb-123 one.
    pub fn ge73_placeholder() -> Self {
        Self::new(-3.0, 1.2, 1.5, 0.8, -8.0)
    }

    pub fn qzz_khz(&self) -> f64 {
        -(self.qxx_khz + self.qyy_khz)
    }

    /// The five free parameters in the order (qxx, qyy, qyz, qxz, qxy).
    pub fn free_params(&self) -> [f64; 5] {
        [
            self.qxx_khz,
            self.qyy_khz,
            self.qyz_khz,
            self.qxz_khz,
            self.qxy_khz,
        ]
    }

    pub fn from_free_params(p: &[f64; 5]) -> Self {
        Self::new(p[0], p[1], p[2], p[3], p[4])
    }

    /// Full 3x3 matrix; symmetric and exactly traceless.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.qxx_khz,
            self.qxy_khz,
            self.qxz_khz,
            self.qxy_khz,
            self.qyy_khz,
            self.qyz_khz,
            self.qxz_khz,
            self.qyz_khz,
            self.qzz_khz(),
        )
    }
}
