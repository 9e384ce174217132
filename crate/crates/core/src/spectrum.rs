//! Extreme eigenvalues of symmetric operators by Lanczos with full
//! reorthogonalization.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanczosOptions {
    pub max_iter: usize,
    pub rtol: f64,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions {
            max_iter: 300,
            rtol: 1e-10,
            seed: 0x5eed,
        }
    }
}

/// Which end of the spectrum must converge before Lanczos stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Min,
    Max,
    Both,
}

/// Ritz approximations of the smallest and largest eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremes {
    pub min: f64,
    pub max: f64,
    pub iterations: usize,
}

/// Runs Lanczos until the requested extreme Ritz values satisfy the residual
/// bound `|β_k s_k| ≤ rtol·max|θ|`.
pub fn lanczos(op: impl Fn(&[f64]) -> Vec<f64>, n: usize, opts: LanczosOptions) -> Extremes {
    lanczos_for(op, n, Target::Both, opts)
}

pub fn lanczos_for(
    op: impl Fn(&[f64]) -> Vec<f64>,
    n: usize,
    target: Target,
    opts: LanczosOptions,
) -> Extremes {
    if n == 0 {
        return Extremes { min: f64::NAN, max: f64::NAN, iterations: 0 };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let limit = opts.max_iter.min(n);
    let mut result = Extremes { min: f64::NAN, max: f64::NAN, iterations: 0 };
    for k in 0..limit {
        let mut w = op(&v);
        let a = dot(&v, &w);
        axpy(-a, &v, &mut w);
        if let (Some(prev), Some(&b)) = (basis.last(), betas.last()) {
            axpy(-b, prev, &mut w);
        }
        basis.push(v.clone());
        alphas.push(a);
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                axpy(-c, q, &mut w);
            }
        }
        let b = norm(&w);

        let m = alphas.len();
        // the tridiagonal eigensolve is cubic; only check periodically
        if m < limit && m > 8 && m % 4 != 0 && b > 0.0 {
            betas.push(b);
            v = w.iter().map(|x| x / b).collect();
            continue;
        }
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alphas[i];
            if i + 1 < m {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let (imin, imax) = eig.eigenvalues.iter().enumerate().fold((0, 0), |(lo, hi), (i, &e)| {
            (
                if e < eig.eigenvalues[lo] { i } else { lo },
                if e > eig.eigenvalues[hi] { i } else { hi },
            )
        });
        let scale = eig.eigenvalues.iter().fold(0.0f64, |s, e| s.max(e.abs()));
        let resid = |i: usize| (b * eig.eigenvectors[(m - 1, i)]).abs();
        result = Extremes {
            min: eig.eigenvalues[imin],
            max: eig.eigenvalues[imax],
            iterations: k + 1,
        };
        let tol = opts.rtol * scale.max(f64::MIN_POSITIVE);
        let done = match target {
            Target::Min => resid(imin) <= tol,
            Target::Max => resid(imax) <= tol,
            Target::Both => resid(imin) <= tol && resid(imax) <= tol,
        };
        if done || b <= tol {
            break;
        }
        betas.push(b);
        v = w.iter().map(|x| x / b).collect();
    }
    result
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(a: &CsrMatrix, opts: LanczosOptions) -> f64 {
    lanczos_for(|x| a.matvec(x), a.dim(), Target::Max, opts).max
}

/// Smallest eigenvalue of a symmetric matrix, computed as the reciprocal of
/// the largest eigenvalue of `(A + τI)⁻¹` for the smallest tried shift `τ ≥ 0`
/// that makes `A + τI` positive definite.
pub fn min_eigenvalue(a: &CsrMatrix, opts: LanczosOptions) -> Result<f64> {
    let n = a.dim();
    if let Ok(f) = a.cholesky() {
        let mu = lanczos_for(|x| f.solve(x), n, Target::Max, opts).max;
        return Ok(1.0 / mu);
    }
    let top = max_eigenvalue(a, opts).abs().max(a.max_abs());
    let mut tau = 1e-6 * top;
    for _ in 0..60 {
        if let Ok(f) = a.shifted(tau).cholesky() {
            let mu = lanczos_for(|x| f.solve(x), n, Target::Max, opts).max;
            return Ok(1.0 / mu - tau);
        }
        tau *= 4.0;
    }
    Err(Error::IndefiniteInnerProblem(
        "no positive shift made the matrix positive definite".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::TripletBuilder;

    fn dense_to_csr(m: &DMatrix<f64>) -> CsrMatrix {
        let mut b = TripletBuilder::new(m.nrows());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    b.add(i, j, m[(i, j)]);
                }
            }
        }
        b.build()
    }

    fn random_sym(n: usize, shift: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        (&a + a.transpose()) * 0.5 + DMatrix::identity(n, n) * shift
    }

    #[test]
    fn matches_dense_eigensolver() {
        for (shift, seed) in [(20.0, 1), (0.0, 2), (-3.0, 3)] {
            let m = random_sym(40, shift, seed);
            let e = m.clone().symmetric_eigenvalues();
            let a = dense_to_csr(&m);
            let opts = LanczosOptions::default();
            let ex = lanczos(|x| a.matvec(x), 40, opts);
            assert!((ex.min - e.min()).abs() < 1e-8);
            assert!((ex.max - e.max()).abs() < 1e-8);
            let lo = min_eigenvalue(&a, opts).unwrap();
            assert!((lo - e.min()).abs() < 1e-8 * (1.0 + e.min().abs()), "{lo} {}", e.min());
        }
    }
}
