//! Constitutive tensors and symmetric 2×2 tensor fields.
//!
//! Fourth-order tensors with minor and major symmetry are stored as 3×3
//! matrices in Mandel coordinates `(t11, t22, √2·t12)`. In that basis the
//! full-index contraction `N_ab = H_abcd γ_cd` is an ordinary matrix-vector
//! product and the inverse tensor is the matrix inverse.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Symmetric fourth-order tensor in Mandel form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tensor4(pub Matrix3<f64>);

impl Tensor4 {
    pub fn identity() -> Self {
        Tensor4(Matrix3::identity())
    }

    /// Builds the Mandel matrix from a four-index function with the usual
    /// symmetries.
    pub fn from_components(h: impl Fn(usize, usize, usize, usize) -> f64) -> Self {
        let pairs = [(0, 0), (1, 1), (0, 1)];
        let scale = [1.0, 1.0, SQRT2];
        let m = Matrix3::from_fn(|r, c| {
            let (a, b) = pairs[r];
            let (l, m) = pairs[c];
            scale[r] * scale[c] * h(a, b, l, m)
        });
        Tensor4(m)
    }

    /// Four-index component `H_abcd`, indices in `0..2`.
    pub fn component(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        let slot = |i: usize, j: usize| -> (usize, f64) {
            if i == j {
                (i, 1.0)
            } else {
                (2, 1.0 / SQRT2)
            }
        };
        let (r, sr) = slot(a, b);
        let (c, sc) = slot(c, d);
        self.0[(r, c)] * sr * sc
    }

    pub fn try_inverse(&self) -> Option<Self> {
        self.0.try_inverse().map(Tensor4)
    }

    /// `H : t` for a single symmetric tensor.
    pub fn contract(&self, t: Sym2) -> Sym2 {
        Sym2::from_mandel(self.0 * t.mandel())
    }

    /// `s : H : t`
    pub fn quad(&self, s: Sym2, t: Sym2) -> f64 {
        s.mandel().dot(&(self.0 * t.mandel()))
    }

    pub fn is_symmetric(&self) -> bool {
        (self.0 - self.0.transpose()).abs().max() <= 1e-14 * self.0.abs().max()
    }
}

/// A single symmetric 2×2 tensor `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sym2 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 {
        xx: 1.0,
        yy: 1.0,
        xy: 0.0,
    };

    pub fn new(xx: f64, yy: f64, xy: f64) -> Self {
        Sym2 { xx, yy, xy }
    }

    pub fn mandel(self) -> Vector3<f64> {
        Vector3::new(self.xx, self.yy, SQRT2 * self.xy)
    }

    pub fn from_mandel(v: Vector3<f64>) -> Self {
        Sym2::new(v[0], v[1], v[2] / SQRT2)
    }

    /// `a ⊗ b` symmetrized.
    pub fn outer(a: [f64; 2], b: [f64; 2]) -> Self {
        Sym2::new(a[0] * b[0], a[1] * b[1], 0.5 * (a[0] * b[1] + a[1] * b[0]))
    }

    pub fn scale(self, s: f64) -> Self {
        Sym2::new(s * self.xx, s * self.yy, s * self.xy)
    }

    pub fn add(self, o: Sym2) -> Self {
        Sym2::new(self.xx + o.xx, self.yy + o.yy, self.xy + o.xy)
    }

    pub fn sub(self, o: Sym2) -> Self {
        self.add(o.scale(-1.0))
    }

    pub fn shift(self, s: f64) -> Self {
        Sym2::new(self.xx + s, self.yy + s, self.xy)
    }

    pub fn trace(self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// Full contraction `s : t`.
    pub fn ddot(self, o: Sym2) -> f64 {
        self.xx * o.xx + self.yy * o.yy + 2.0 * self.xy * o.xy
    }

    pub fn apply(self, v: [f64; 2]) -> [f64; 2] {
        [
            self.xx * v[0] + self.xy * v[1],
            self.xy * v[0] + self.yy * v[1],
        ]
    }

    pub fn inverse(self) -> Option<Self> {
        let d = self.det();
        (d != 0.0).then(|| Sym2::new(self.yy / d, self.xx / d, -self.xy / d))
    }

    /// Eigenvalues `(min, max)` from trace and determinant.
    pub fn eigenvalues(self) -> (f64, f64) {
        let mean = 0.5 * (self.xx + self.yy);
        let half = 0.5 * (self.xx - self.yy);
        let r = half.hypot(self.xy);
        (mean - r, mean + r)
    }

    pub fn min_eig(self) -> f64 {
        self.eigenvalues().0
    }

    pub fn max_eig(self) -> f64 {
        self.eigenvalues().1
    }
}

/// Structure-of-arrays field of symmetric 2×2 tensors. Where the values live
/// (nodes, cells, triangles) is fixed by the producer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SymTensor2Field {
    pub xx: Vec<f64>,
    pub yy: Vec<f64>,
    pub xy: Vec<f64>,
}

impl SymTensor2Field {
    pub fn zeros(n: usize) -> Self {
        SymTensor2Field {
            xx: vec![0.0; n],
            yy: vec![0.0; n],
            xy: vec![0.0; n],
        }
    }

    pub fn uniform(n: usize, t: Sym2) -> Self {
        SymTensor2Field {
            xx: vec![t.xx; n],
            yy: vec![t.yy; n],
            xy: vec![t.xy; n],
        }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize) -> Sym2) -> Self {
        (0..n).map(f).collect()
    }

    pub fn len(&self) -> usize {
        self.xx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xx.is_empty()
    }

    pub fn get(&self, k: usize) -> Sym2 {
        Sym2::new(self.xx[k], self.yy[k], self.xy[k])
    }

    pub fn set(&mut self, k: usize, t: Sym2) {
        self.xx[k] = t.xx;
        self.yy[k] = t.yy;
        self.xy[k] = t.xy;
    }

    pub fn iter(&self) -> impl Iterator<Item = Sym2> + '_ {
        (0..self.len()).map(|k| self.get(k))
    }

    pub fn map(&self, f: impl Fn(Sym2) -> Sym2) -> Self {
        self.iter().map(f).collect()
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(Sym2, Sym2) -> Sym2) -> Self {
        assert_eq!(self.len(), other.len());
        self.iter().zip(other.iter()).map(|(a, b)| f(a, b)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.xx
            .iter()
            .chain(&self.yy)
            .chain(&self.xy)
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl FromIterator<Sym2> for SymTensor2Field {
    fn from_iter<I: IntoIterator<Item = Sym2>>(iter: I) -> Self {
        let mut f = SymTensor2Field::default();
        for t in iter {
            f.xx.push(t.xx);
            f.yy.push(t.yy);
            f.xy.push(t.xy);
        }
        f
    }
}

/// Membrane and bending stiffness of a homogeneous plate.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialTensor {
    pub membrane: Tensor4,
    pub bending: Tensor4,
    pub membrane_inv: Tensor4,
    pub bending_inv: Tensor4,
    pub thickness: f64,
    pub youngs: f64,
    pub poisson: f64,
}

impl MaterialTensor {
    /// Plane-stress isotropic plate.
    pub fn isotropic(youngs: f64, poisson: f64, thickness: f64) -> Result<Self> {
        if !(youngs > 0.0) || !youngs.is_finite() {
            return Err(Error::InvalidMaterial(format!(
                "youngs modulus must be positive, got {youngs}"
            )));
        }
        if !(thickness > 0.0) || !thickness.is_finite() {
            return Err(Error::InvalidMaterial(format!(
                "thickness must be positive, got {thickness}"
            )));
        }
        if !(0.0..0.5).contains(&poisson) {
            return Err(Error::InvalidMaterial(format!(
                "poisson ratio must satisfy 0 <= nu < 0.5, got {poisson}"
            )));
        }
        let c = youngs * thickness / (1.0 - poisson * poisson);
        #[rustfmt::skip]
        let membrane = Matrix3::new(
            c,           c * poisson, 0.0,
            c * poisson, c,           0.0,
            0.0,         0.0,         c * (1.0 - poisson),
        );
        let factor = thickness * thickness / 12.0;
        Self::from_membrane(Tensor4(membrane), Tensor4(membrane.map(|v| factor * v)), thickness)
            .map(|m| MaterialTensor {
                youngs,
                poisson,
                ..m
            })
    }

    /// General material from explicit membrane and bending tensors.
    pub fn from_membrane(membrane: Tensor4, bending: Tensor4, thickness: f64) -> Result<Self> {
        for (name, t) in [("membrane", &membrane), ("bending", &bending)] {
            if !t.is_symmetric() {
                return Err(Error::InvalidMaterial(format!("{name} tensor is not symmetric")));
            }
            if t.0.cholesky().is_none() {
                return Err(Error::InvalidMaterial(format!(
                    "{name} tensor is not positive definite"
                )));
            }
        }
        let membrane_inv = membrane.try_inverse().expect("SPD tensor is invertible");
        let bending_inv = bending.try_inverse().expect("SPD tensor is invertible");
        Ok(MaterialTensor {
            membrane,
            bending,
            membrane_inv,
            bending_inv,
            thickness,
            youngs: f64::NAN,
            poisson: f64::NAN,
        })
    }

    /// Flexural rigidity `E t³ / (12 (1 − ν²))` of the isotropic closure.
    pub fn flexural_rigidity(&self) -> f64 {
        self.youngs * self.thickness.powi(3) / (12.0 * (1.0 - self.poisson * self.poisson))
    }
}

/// Pointwise `H : field`.
pub fn apply(tensor: &Tensor4, field: &SymTensor2Field) -> SymTensor2Field {
    field.map(|t| tensor.contract(t))
}

/// Outcome of a pointwise positive-definiteness test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosDefReport {
    pub posdef: bool,
    pub worst_index: usize,
    pub min_eigenvalue: f64,
}

/// True iff every tensor's smallest eigenvalue exceeds `margin`.
pub fn is_posdef_field(field: &SymTensor2Field, margin: f64) -> PosDefReport {
    let (worst_index, min_eigenvalue) = field
        .iter()
        .map(Sym2::min_eig)
        .enumerate()
        .fold((0, f64::INFINITY), |best, (k, e)| if e < best.1 { (k, e) } else { best });
    PosDefReport {
        posdef: min_eigenvalue > margin,
        worst_index,
        min_eigenvalue,
    }
}
