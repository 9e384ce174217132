//! Sparse assembly and banded direct factorizations.
//!
//! Every operator in this crate is assembled over interior grid unknowns with
//! row-major numbering, so bandwidths stay proportional to one grid row.
//! Banded Cholesky (SPD systems) and banded LU with partial pivoting
//! (indefinite Newton systems) are exact direct solvers at that size.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    rowptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Accumulates `(row, col, value)` contributions; duplicates are summed.
#[derive(Debug, Default, Clone)]
pub struct TripletBuilder {
    n: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        *self.entries.entry((row, col)).or_insert(0.0) += value;
    }

    pub fn build(self) -> CsrMatrix {
        let n = self.n;
        let mut rowptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(self.entries.len());
        let mut vals = Vec::with_capacity(self.entries.len());
        for (&(r, c), &v) in &self.entries {
            rowptr[r + 1] += 1;
            cols.push(c);
            vals.push(v);
        }
        for i in 0..n {
            rowptr[i + 1] += rowptr[i];
        }
        CsrMatrix {
            n,
            rowptr,
            cols,
            vals,
        }
    }
}

impl CsrMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.rowptr[i]..self.rowptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// Half bandwidth: `max |i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(c, _)| i.abs_diff(c)))
            .max()
            .unwrap_or(0)
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A - Aᵀ|` over all entries.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// `self + shift * I`.
    pub fn shifted(&self, shift: f64) -> CsrMatrix {
        let mut b = TripletBuilder::new(self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                b.add(i, j, v);
            }
            b.add(i, i, shift);
        }
        b.build()
    }

    pub fn scaled(&self, s: f64) -> CsrMatrix {
        CsrMatrix {
            vals: self.vals.iter().map(|v| s * v).collect(),
            ..self.clone()
        }
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &CsrMatrix, b: f64) -> CsrMatrix {
        assert_eq!(self.n, other.n);
        let mut t = TripletBuilder::new(self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                t.add(i, j, a * v);
            }
            for (j, v) in other.row(i) {
                t.add(i, j, b * v);
            }
        }
        t.build()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    pub fn cholesky(&self) -> Result<BandCholesky> {
        BandCholesky::factor(self)
    }

    pub fn lu(&self) -> Result<BandLu> {
        BandLu::factor(self)
    }
}

/// Lower-banded Cholesky factor `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    p: usize,
    // row i holds L[i][i-p..=i] at offsets 0..=p
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let p = a.bandwidth();
        let w = p + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    l[i * w + (j + p - i)] += v;
                }
            }
        }
        for j in 0..n {
            let jlo = j.saturating_sub(p);
            let mut d = l[j * w + p];
            for k in jlo..j {
                let ljk = l[j * w + (k + p - j)];
                d -= ljk * ljk;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let d = d.sqrt();
            l[j * w + p] = d;
            for i in (j + 1)..n.min(j + p + 1) {
                let ilo = i.saturating_sub(p).max(jlo);
                let mut s = l[i * w + (j + p - i)];
                for k in ilo..j {
                    s -= l[i * w + (k + p - i)] * l[j * w + (k + p - j)];
                }
                l[i * w + (j + p - i)] = s / d;
            }
        }
        Ok(Self { n, p, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `L x`
    pub fn mul_l(&self, x: &[f64]) -> Vec<f64> {
        let (p, w) = (self.p, self.p + 1);
        (0..self.n)
            .map(|i| (i.saturating_sub(p)..=i).map(|k| self.l[i * w + (k + p - i)] * x[k]).sum())
            .collect()
    }

    /// `Lᵀ x`
    pub fn mul_lt(&self, x: &[f64]) -> Vec<f64> {
        let (n, p, w) = (self.n, self.p, self.p + 1);
        let mut y = vec![0.0; n];
        for i in 0..n {
            for k in i.saturating_sub(p)..=i {
                y[k] += self.l[i * w + (k + p - i)] * x[i];
            }
        }
        y
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, p, w) = (self.n, self.p, self.p + 1);
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(p)..i {
                s -= self.l[i * w + (k + p - i)] * y[k];
            }
            y[i] = s / self.l[i * w + p];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n.min(i + p + 1) {
                s -= self.l[k * w + (i + p - k)] * y[k];
            }
            y[i] = s / self.l[i * w + p];
        }
        y
    }
}

/// Banded LU with partial (row) pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    // row i holds columns i-kl ..= i+kl+ku at offsets 0..width
    a: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    pub fn factor(m: &CsrMatrix) -> Result<Self> {
        let n = m.dim();
        let kl = m.bandwidth();
        let ku = kl;
        let width = 2 * kl + ku + 1;
        let mut a = vec![0.0; n * width];
        let off = |i: usize, j: usize| i * width + (j + kl - i);
        for i in 0..n {
            for (j, v) in m.row(i) {
                a[off(i, j)] += v;
            }
        }
        let scale = m.max_abs().max(f64::MIN_POSITIVE);
        let mut pivots = vec![0; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut piv = k;
            let mut best = a[off(k, k)].abs();
            for r in (k + 1)..=last_row {
                let v = a[off(r, k)].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best <= 1e-300 * scale {
                return Err(Error::SingularMatrix { pivot: k });
            }
            pivots[k] = piv;
            if piv != k {
                for c in k..=last_col {
                    a.swap(off(k, c), off(piv, c));
                }
            }
            let d = a[off(k, k)];
            for r in (k + 1)..=last_row {
                let lr = a[off(r, k)] / d;
                a[off(r, k)] = lr;
                if lr != 0.0 {
                    for c in (k + 1)..=last_col {
                        a[off(r, c)] -= lr * a[off(k, c)];
                    }
                }
            }
        }
        Ok(Self {
            n,
            kl,
            ku,
            a,
            pivots,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let width = 2 * kl + ku + 1;
        let off = |i: usize, j: usize| i * width + (j + kl - i);
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.pivots[k]);
            let xk = x[k];
            if xk != 0.0 {
                for r in (k + 1)..=(k + kl).min(n.saturating_sub(1)) {
                    x[r] -= self.a[off(r, k)] * xk;
                }
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for c in (i + 1)..=(i + kl + ku).min(n - 1) {
                s -= self.a[off(i, c)] * x[c];
            }
            x[i] = s / self.a[off(i, i)];
        }
        x
    }
}

/// A factorization that is either Cholesky (SPD) or pivoted LU.
#[derive(Debug, Clone)]
pub enum Factor {
    Cholesky(BandCholesky),
    Lu(BandLu),
}

impl Factor {
    /// Cholesky when the matrix is SPD, pivoted LU otherwise.
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        match a.cholesky() {
            Ok(c) => Ok(Factor::Cholesky(c)),
            Err(_) => a.lu().map(Factor::Lu),
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        match self {
            Factor::Cholesky(c) => c.solve(b),
            Factor::Lu(l) => l.solve(b),
        }
    }

    pub fn is_cholesky(&self) -> bool {
        matches!(self, Factor::Cholesky(_))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Preconditioner-free conjugate gradients for a symmetric positive definite
/// operator. Returns the iterate and the final residual norm.
pub fn conjugate_gradient(
    op: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Vec<f64>,
    rtol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let mut x = x0;
    let ax = op(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = rtol * norm(b).max(f64::MIN_POSITIVE);
    for _ in 0..max_iter {
        if rr.sqrt() <= target {
            break;
        }
        let ap = op(&p);
        let alpha = rr / dot(&p, &ap);
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    (x, rr.sqrt())
}
