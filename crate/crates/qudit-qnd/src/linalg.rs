//! Dense linear-algebra kernels: Hermitian eigendecomposition with a fixed
//! phase convention, the principal matrix logarithm, and maximum-overlap
//! assignment.
//!
//! Everything here operates on small matrices (at most a few tens of rows),
//! so plain dense algorithms are used throughout.

use nalgebra::{Complex, DMatrix, DVector};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix as WeightMatrix;

use crate::error::{QndError, Result};

pub(crate) type CMat = DMatrix<Complex<f64>>;
pub(crate) type RMat = DMatrix<f64>;

pub(crate) fn max_abs_c(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub(crate) fn max_abs_r(m: &RMat) -> f64 {
    m.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn one_norm(m: &RMat) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum())
        .fold(0.0, f64::max)
}

/// Rotate each column so its largest-magnitude component is real and
/// positive. Makes eigenvectors reproducible bit-for-bit across runs.
pub(crate) fn fix_phases(vectors: &mut CMat) {
    for mut col in vectors.column_iter_mut() {
        let mut best = 0usize;
        let mut best_norm = 0.0;
        for (k, z) in col.iter().enumerate() {
            let n = z.norm_sqr();
            if n > best_norm {
                best_norm = n;
                best = k;
            }
        }
        let pivot = col[best];
        let norm = pivot.norm();
        if norm > 0.0 {
            let phase = pivot.conj() / Complex::new(norm, 0.0);
            for z in col.iter_mut() {
                *z *= phase;
            }
        }
    }
}

/// Eigendecomposition of a Hermitian matrix: eigenvalues ascending,
/// orthonormal phase-fixed eigenvectors as columns.
pub(crate) fn eigh(h: &CMat) -> Result<(DVector<f64>, CMat)> {
    let eig = h
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or(QndError::EigenConvergence)?;

    let n = h.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    fix_phases(&mut vectors);
    Ok((values, vectors))
}

/// Principal matrix square root by the product form of the
/// Denman-Beavers iteration. Requires no eigenvalues on the closed
/// negative real axis.
fn sqrtm(a: &RMat) -> Result<RMat> {
    let n = a.nrows();
    let eye = RMat::identity(n, n);
    let mut m = a.clone();
    let mut y = a.clone();
    for _ in 0..100 {
        let m_inv = m.clone().try_inverse().ok_or_else(|| {
            QndError::NonEmbeddable("singular iterate in matrix square root".into())
        })?;
        y = &y * (&eye + &m_inv) * 0.5;
        m = (&eye + (&m + &m_inv) * 0.5) * 0.5;
        if one_norm(&(&m - &eye)) < 1e-14 * n as f64 {
            break;
        }
    }
    let resid = one_norm(&(&y * &y - a)) / one_norm(a).max(1.0);
    if resid > 1e-10 {
        return Err(QndError::NonEmbeddable(format!(
            "matrix square root did not converge (residual {resid:.3e})"
        )));
    }
    Ok(y)
}

// Gauss-Legendre nodes/weights on [0, 1]; the 8-node rule is the [8/8]
// Pade approximant of log(I + X), accurate to machine precision for
// ||X||_1 <= 0.3.
const GL8: [(f64, f64); 8] = [
    (0.019855071751231856, 0.05061426814518813),
    (0.10166676129318664, 0.11119051722668724),
    (0.2372337950418355, 0.15685332293894363),
    (0.40828267875217505, 0.18134189168918102),
    (0.591_717_321_247_825, 0.18134189168918102),
    (0.7627662049581645, 0.15685332293894363),
    (0.8983332387068134, 0.11119051722668724),
    (0.9801449282487682, 0.05061426814518813),
];

/// Principal matrix logarithm via inverse scaling and squaring.
///
/// Fails with a non-embeddability diagnostic when the principal branch
/// does not exist (an eigenvalue on the closed negative real axis).
pub(crate) fn logm(a: &RMat) -> Result<RMat> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());

    for lambda in a.clone().complex_eigenvalues().iter() {
        let scale = lambda.norm().max(1.0);
        if lambda.im.abs() <= 1e-12 * scale && lambda.re <= 1e-14 * scale {
            return Err(QndError::NonEmbeddable(format!(
                "eigenvalue {:.6e}{:+.3e}i lies on the closed negative real axis",
                lambda.re, lambda.im
            )));
        }
    }

    let eye = RMat::identity(n, n);
    let mut t = a.clone();
    let mut squarings = 0u32;
    while one_norm(&(&t - &eye)) > 0.3 {
        if squarings >= 60 {
            return Err(QndError::NonEmbeddable(
                "inverse scaling did not reach the convergence region".into(),
            ));
        }
        t = sqrtm(&t)?;
        squarings += 1;
    }

    let x = &t - &eye;
    let mut log_t = RMat::zeros(n, n);
    for (node, weight) in GL8 {
        let lhs = &eye + &x * node;
        let solved = lhs.lu().solve(&x).ok_or_else(|| {
            QndError::NonEmbeddable("singular system in logarithm quadrature".into())
        })?;
        log_t += solved * weight;
    }
    Ok(log_t * 2f64.powi(squarings as i32))
}

/// Matrix exponential of a real square matrix.
pub(crate) fn expm(a: &RMat) -> RMat {
    a.exp()
}

/// Assign each item (row) a distinct target (column) maximizing overlap:
/// a greedy pass first, falling back to an optimal assignment when the
/// greedy result is ambiguous or weak. `weights` entries must be in [0, 1].
pub(crate) fn assign_max_overlap(weights: &RMat) -> Vec<usize> {
    let n = weights.nrows();
    debug_assert_eq!(n, weights.ncols());

    let mut assignment = vec![usize::MAX; n];
    let mut taken = vec![false; n];
    let mut greedy_ok = true;
    for row in 0..n {
        let mut best = 0usize;
        let mut best_w = -1.0;
        for col in 0..n {
            if weights[(row, col)] > best_w {
                best_w = weights[(row, col)];
                best = col;
            }
        }
        if best_w <= 0.5 || taken[best] {
            greedy_ok = false;
            break;
        }
        taken[best] = true;
        assignment[row] = best;
    }
    if greedy_ok {
        return assignment;
    }

    // near-degenerate case: global optimum over all assignments
    hungarian_max(weights)
}

/// Optimal (maximum total weight) assignment via Kuhn-Munkres on
/// fixed-point weights.
pub(crate) fn hungarian_max(weights: &RMat) -> Vec<usize> {
    let n = weights.nrows();
    const SCALE: f64 = 1e12;
    let rows: Vec<Vec<i64>> = (0..n)
        .map(|r| (0..n).map(|c| (weights[(r, c)] * SCALE) as i64).collect())
        .collect();
    let w = WeightMatrix::from_rows(rows).expect("rectangular weight matrix");
    let (_, assignment) = kuhn_munkres(&w);
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> CMat {
        let mut h = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let re = rng.random::<f64>() - 0.5;
                let im = if i == j {
                    0.0
                } else {
                    rng.random::<f64>() - 0.5
                };
                h[(i, j)] = Complex::new(re, im);
                h[(j, i)] = Complex::new(re, -im);
            }
        }
        h
    }

    #[test]
    fn eigh_reconstructs_random_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2, 5, 16, 24] {
            let h = random_hermitian(n, &mut rng);
            let (vals, vecs) = eigh(&h).unwrap();
            let lam = CMat::from_diagonal(&vals.map(|x| Complex::new(x, 0.0)));
            let resid = max_abs_c(&(&vecs * lam * vecs.adjoint() - &h));
            assert!(
                resid < 1e-12 * max_abs_c(&h).max(1.0),
                "n={n} resid={resid:e}"
            );
            for k in 1..n {
                assert!(vals[k] >= vals[k - 1]);
            }
        }
    }

    #[test]
    fn eigh_phase_convention_is_real_positive_pivot() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = random_hermitian(9, &mut rng);
        let (_, vecs) = eigh(&h).unwrap();
        for col in vecs.column_iter() {
            let pivot = col
                .iter()
                .max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr()))
                .unwrap();
            assert!(pivot.im.abs() < 1e-12);
            assert!(pivot.re > 0.0);
        }
    }

    #[test]
    fn logm_inverts_expm_for_small_generators() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for n in [2, 8, 10] {
            let mut g = RMat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        g[(i, j)] = rng.random::<f64>() * 0.05;
                    }
                }
            }
            for j in 0..n {
                let col_sum: f64 = g.column(j).sum();
                g[(j, j)] -= col_sum;
            }
            let t = expm(&g);
            let back = logm(&t).unwrap();
            assert!(max_abs_r(&(&back - &g)) < 1e-12);
        }
    }

    #[test]
    fn logm_of_identity_is_zero() {
        let eye = RMat::identity(6, 6);
        let l = logm(&eye).unwrap();
        assert_eq!(max_abs_r(&l), 0.0);
    }

    #[test]
    fn logm_rejects_negative_real_eigenvalue() {
        // eigenvalues +1 and -1
        let swap = RMat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(logm(&swap), Err(QndError::NonEmbeddable(_))));
    }

    #[test]
    fn logm_needs_several_square_roots_for_large_input() {
        // exp of a generator with norm well above the quadrature region
        let g = RMat::from_row_slice(2, 2, &[-2.0, 1.5, 2.0, -1.5]);
        let t = expm(&g);
        let back = logm(&t).unwrap();
        assert!(max_abs_r(&(&back - &g)) < 1e-12);
    }

    #[test]
    fn hungarian_matches_exhaustive_on_random_instances() {
        fn brute_force(w: &RMat) -> f64 {
            let n = w.nrows();
            let mut cols: Vec<usize> = (0..n).collect();
            let mut best = f64::NEG_INFINITY;
            permute(&mut cols, 0, w, &mut best);
            best
        }
        fn permute(cols: &mut Vec<usize>, k: usize, w: &RMat, best: &mut f64) {
            let n = cols.len();
            if k == n {
                let total: f64 = (0..n).map(|r| w[(r, cols[r])]).sum();
                if total > *best {
                    *best = total;
                }
                return;
            }
            for i in k..n {
                cols.swap(k, i);
                permute(cols, k + 1, w, best);
                cols.swap(k, i);
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let n = rng.random_range(2..=7);
            let w = RMat::from_fn(n, n, |_, _| rng.random::<f64>());
            let assignment = hungarian_max(&w);
            let total: f64 = (0..n).map(|r| w[(r, assignment[r])]).sum();
            let mut seen = vec![false; n];
            for &c in &assignment {
                assert!(!seen[c]);
                seen[c] = true;
            }
            assert!((total - brute_force(&w)).abs() < 1e-9);
        }
    }

    #[test]
    fn greedy_assignment_falls_back_when_ambiguous() {
        // two rows both prefer column 0; optimal assignment resolves it
        let w = RMat::from_row_slice(2, 2, &[0.9, 0.6, 0.95, 0.1]);
        let a = assign_max_overlap(&w);
        assert_eq!(a, vec![1, 0]);
    }
}
