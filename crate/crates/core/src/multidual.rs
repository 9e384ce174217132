//! Multi-duality with a shift parameter `K > 0`.
//!
//! With `X = −N + KI` per triangle,
//!
//! ```text
//! J₁(u, Q, N) = ½⟨Bw, w⟩ − ⟨P, w⟩ + ½⟨X⁻¹Q, Q⟩ − ⟨∇w, Q⟩ + (K/2)⟨∇w, ∇w⟩
//!               − ½⟨H̄N, N⟩ − ⟨div N + P_α, u_α⟩.
//! ```
//!
//! The sets of this module are named `bstar4` (equilibrium) and `cstar4`
//! (`X > (K/2)I`) to keep them apart from the sets of [`crate::dual1`].

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::Rng;

use crate::dual1::{complementary_membrane, equilibrium_residual};
use crate::error::{Error, Result};
use crate::grid::VecField;
use crate::linalg::{norm_inf, CsrMatrix, TripletBuilder};
use crate::material::{is_posdef_field, Sym2, SymTensor2Field};
use crate::primal::{bending_energy, energy, hessian_operator, membrane_stress, Loads, Plate, PrimalState};
use crate::spectrum::{lanczos_for, max_eigenvalue, min_eigenvalue, LanczosOptions, Target};

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiDualConfig {
    pub k_shift: f64,
    /// Sampling radii relative to the max-norm of the reference field
    /// (`u₀` for `r`, `Q₀` for `r₁` and `r₂`).
    pub r: f64,
    pub r1: f64,
    pub r2: f64,
    pub n_samples: usize,
    pub eig_tol: f64,
    /// Tolerance of the equilibrium test, relative to `1 + ‖f‖` over all loads.
    pub ctol: f64,
}

impl MultiDualConfig {
    pub fn new(k_shift: f64) -> Result<Self> {
        let cfg = MultiDualConfig { k_shift, ..Default::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.k_shift, self.r, self.r1, self.r2, self.eig_tol, self.ctol];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) && self.n_samples > 0 {
            Ok(())
        } else {
            Err(Error::Config(format!("multidual parameters must be positive: {self:?}")))
        }
    }
}

impl Default for MultiDualConfig {
    fn default() -> Self {
        MultiDualConfig { k_shift: 1.0, r: 1e-3, r1: 1e-3, r2: 1e-3, n_samples: 200, eig_tol: 1e-10, ctol: 1e-8 }
    }
}

fn to_mat(t: Sym2) -> Matrix2<f64> {
    Matrix2::new(t.xx, t.xy, t.xy, t.yy)
}

fn from_mat(m: &Matrix2<f64>) -> Sym2 {
    Sym2::new(m[(0, 0)], m[(1, 1)], 0.5 * (m[(0, 1)] + m[(1, 0)]))
}

fn vec2(v: [f64; 2]) -> Vector2<f64> {
    Vector2::new(v[0], v[1])
}

/// `X = −N + KI` per triangle.
pub fn shifted(n: &SymTensor2Field, k: f64) -> SymTensor2Field {
    n.map(|t| t.scale(-1.0).shift(k))
}

fn require_posdef(x: &SymTensor2Field) -> Result<()> {
    let r = is_posdef_field(x, 0.0);
    if r.posdef {
        Ok(())
    } else {
        Err(Error::NotPosDef { index: r.worst_index, eigenvalue: r.min_eigenvalue })
    }
}

/// `Q₀ = (−N₀ + KI)∇w₀` with `N₀ = Hγ(u₀)`.
pub fn transfer_k(plate: &Plate, s: &PrimalState, k: f64) -> (SymTensor2Field, VecField) {
    let n = membrane_stress(plate, s);
    let gw = plate.grid.gradient_interior(&s.w);
    let q = gw.map(|t, v| n.get(t).scale(-1.0).shift(k).apply(v));
    (n, q)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct J1Terms {
    pub bending: f64,
    pub load: f64,
    pub q_quadratic: f64,
    pub coupling: f64,
    pub shift: f64,
    pub complementary: f64,
    pub equilibrium: f64,
}

impl J1Terms {
    pub fn total(&self) -> f64 {
        self.bending + self.load + self.q_quadratic + self.coupling + self.shift + self.complementary + self.equilibrium
    }
}

pub fn j1_terms(plate: &Plate, s: &PrimalState, q: &VecField, n: &SymTensor2Field, k: f64, loads: &Loads) -> Result<J1Terms> {
    let g = &plate.grid;
    let x = shifted(n, k);
    require_posdef(&x)?;
    let gw = g.gradient_interior(&s.w);
    let xq = q.map(|t, v| x.get(t).inverse().expect("positive definite").apply(v));
    let (d1, d2) = g.divergence_tensor(n);
    let r1: Vec<f64> = d1.iter().zip(&loads.p1).map(|(a, b)| a + b).collect();
    let r2: Vec<f64> = d2.iter().zip(&loads.p2).map(|(a, b)| a + b).collect();
    Ok(J1Terms {
        bending: bending_energy(plate, &s.w),
        load: -g.inner(&loads.p, &s.w),
        q_quadratic: 0.5 * g.tri_inner(&xq, q),
        coupling: -g.tri_inner(&gw, q),
        shift: 0.5 * k * g.tri_inner(&gw, &gw),
        complementary: -complementary_membrane(plate, n),
        equilibrium: -(g.inner(&r1, &s.u1) + g.inner(&r2, &s.u2)),
    })
}

pub fn j1(plate: &Plate, s: &PrimalState, q: &VecField, n: &SymTensor2Field, k: f64, loads: &Loads) -> Result<f64> {
    Ok(j1_terms(plate, s, q, n, k, loads)?.total())
}

/// Value and maximizer of one of the quadratic suprema over clamped `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conjugate {
    pub value: f64,
    pub w: Vec<f64>,
}

/// `F_K*(Q) = sup_w {⟨∇w, Q⟩ − ½⟨Bw, w⟩ − (K/2)⟨∇w, ∇w⟩}`, or with
/// `+⟨w, P⟩` inside the supremum when `loads` is given.
pub fn fk_star(plate: &Plate, q: &VecField, k: f64, loads: Option<&Loads>) -> Result<Conjugate> {
    let g = &plate.grid;
    let s = plate.bih.matrix().combine(g.omega(), &g.gradient_form(|_| Sym2::IDENTITY), k);
    let dq = g.divergence(q);
    let rhs: Vec<f64> = match loads {
        Some(l) => dq.iter().zip(&l.p).map(|(d, p)| g.omega() * (p - d)).collect(),
        None => dq.iter().map(|d| -g.omega() * d).collect(),
    };
    let w = s.cholesky()?.solve(&rhs);
    let value = 0.5 * crate::linalg::dot(&w, &rhs);
    Ok(Conjugate { value, w })
}

/// `H_K*(Q, N) = sup_w {⟨∇w, Q⟩ − ½⟨(−N + KI)∇w, ∇w⟩}`.
pub fn hk_star(plate: &Plate, q: &VecField, n: &SymTensor2Field, k: f64) -> Result<Conjugate> {
    let g = &plate.grid;
    let x = shifted(n, k);
    require_posdef(&x)?;
    let s = g.gradient_form(|t| x.get(t));
    let rhs: Vec<f64> = g.divergence(q).iter().map(|d| -g.omega() * d).collect();
    let w = s.cholesky()?.solve(&rhs);
    let value = 0.5 * crate::linalg::dot(&w, &rhs);
    Ok(Conjugate { value, w })
}

/// `½⟨X⁻¹Q, Q⟩`.
pub fn q_quadratic(plate: &Plate, q: &VecField, n: &SymTensor2Field, k: f64) -> Result<f64> {
    let x = shifted(n, k);
    require_posdef(&x)?;
    let xq = q.map(|t, v| x.get(t).inverse().expect("positive definite").apply(v));
    Ok(0.5 * plate.grid.tri_inner(&xq, q))
}

/// `Ĵ₁*(Q, N) = −F_K*(Q) + ½⟨X⁻¹Q, Q⟩`.
pub fn jhat1(plate: &Plate, q: &VecField, n: &SymTensor2Field, k: f64) -> Result<f64> {
    Ok(q_quadratic(plate, q, n, k)? - fk_star(plate, q, k, None)?.value)
}

/// `Ĵ₂*(Q, N) = −F_K*(Q) + H_K*(Q, N)`.
pub fn jhat2(plate: &Plate, q: &VecField, n: &SymTensor2Field, k: f64) -> Result<f64> {
    Ok(hk_star(plate, q, n, k)?.value - fk_star(plate, q, k, None)?.value)
}

/// `Ĵ*(Q, N) = −F̂_K*(Q) + H_K*(Q, N) − ½⟨H̄N, N⟩`.
pub fn jhat_star(plate: &Plate, q: &VecField, n: &SymTensor2Field, k: f64, loads: &Loads) -> Result<f64> {
    Ok(hk_star(plate, q, n, k)?.value - fk_star(plate, q, k, Some(loads))?.value - complementary_membrane(plate, n))
}

/// `Ĵ(u, N) = ½⟨Bw, w⟩ + ½⟨N∇w, ∇w⟩ − ½⟨H̄N, N⟩ − ⟨div N + P_α, u_α⟩ − ⟨P, w⟩`.
pub fn jhat_u(plate: &Plate, s: &PrimalState, n: &SymTensor2Field, loads: &Loads) -> f64 {
    let g = &plate.grid;
    let gw = g.gradient_interior(&s.w);
    let ngw = gw.map(|t, v| n.get(t).apply(v));
    let (d1, d2) = g.divergence_tensor(n);
    let eq: f64 = g.inner(&d1, &s.u1) + g.inner(&d2, &s.u2) + g.inner(&loads.p1, &s.u1) + g.inner(&loads.p2, &s.u2);
    bending_energy(plate, &s.w) + 0.5 * g.tri_inner(&ngw, &gw) - complementary_membrane(plate, n) - eq
        - g.inner(&loads.p, &s.w)
}

/// Symmetric operator `Q ↦ X⁻¹Q − G S⁻¹ a Gᵀ Q` whose quadratic form is
/// `Ĵ₁*(Q, N) / a`, with `S = ωA + K Σ a GᵀG`.
pub fn jhat1_form<'a>(plate: &'a Plate, n: &SymTensor2Field, k: f64) -> Result<impl Fn(&[f64]) -> Vec<f64> + 'a> {
    let g = &plate.grid;
    let x = shifted(n, k);
    require_posdef(&x)?;
    let xinv: Vec<Sym2> = x.iter().map(|t| t.inverse().expect("positive definite")).collect();
    let s = plate.bih.matrix().combine(g.omega(), &g.gradient_form(|_| Sym2::IDENTITY), k);
    let f = s.cholesky()?;
    let om = g.omega();
    Ok(move |v: &[f64]| {
        let q = VecField::from_flat(v);
        let y: Vec<f64> = g.divergence(&q).iter().map(|d| om * d).collect();
        let corr = g.gradient_interior(&f.solve(&y));
        q.map(|t, v| xinv[t].apply(v)).add(&corr).to_flat()
    })
}

/// Smallest eigenvalue of the `Ĵ₁*` form. `D⁺` holds iff it is positive.
pub fn dplus_min_eig(plate: &Plate, n: &SymTensor2Field, k: f64, opts: LanczosOptions) -> Result<f64> {
    let op = jhat1_form(plate, n, k)?;
    Ok(lanczos_for(op, 2 * plate.grid.n_tri(), Target::Min, opts).min)
}

/// Largest eigenvalue of the `Ĵ₂*` form on the quotient by divergence-free
/// `Q`, written in `y = a GᵀQ` as `y ↦ S_H⁻¹y − S_F⁻¹y`. `D⁻` holds iff it is
/// negative.
pub fn dminus_max_eig(plate: &Plate, n: &SymTensor2Field, k: f64, opts: LanczosOptions) -> Result<f64> {
    let g = &plate.grid;
    let x = shifted(n, k);
    require_posdef(&x)?;
    let sh = g.gradient_form(|t| x.get(t)).cholesky()?;
    let sf = plate.bih.matrix().combine(g.omega(), &g.gradient_form(|_| Sym2::IDENTITY), k).cholesky()?;
    let op = |y: &[f64]| {
        let a = sh.solve(y);
        let b = sf.solve(y);
        a.iter().zip(&b).map(|(a, b)| a - b).collect()
    };
    Ok(lanczos_for(op, g.n_interior(), Target::Max, opts).max)
}

/// Pointwise supremum over `N` of `½Q·X⁻¹Q − ½H̄N:N + N:e` subject to
/// `λ_max(N) < K/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSup {
    pub n: Sym2,
    pub value: f64,
    /// `|½v⊗v − H̄N + e|` at the returned `N`, relative to the size of its terms.
    pub residual: f64,
    pub fallback: bool,
}

struct Local<'a> {
    q: Vector2<f64>,
    e: Vector3<f64>,
    k: f64,
    hbar: &'a Matrix3<f64>,
}

impl Local<'_> {
    fn admissible(&self, n: &Vector3<f64>) -> bool {
        Sym2::from_mandel(*n).max_eig() < 0.5 * self.k
    }

    fn xinv(&self, n: &Vector3<f64>) -> Matrix2<f64> {
        let x = Matrix2::identity() * self.k - to_mat(Sym2::from_mandel(*n));
        x.try_inverse().expect("admissible stress keeps X invertible")
    }

    fn value(&self, n: &Vector3<f64>) -> f64 {
        let xi = self.xinv(n);
        0.5 * self.q.dot(&(xi * self.q)) - 0.5 * n.dot(&(self.hbar * n)) + n.dot(&self.e)
    }

    /// Gradient, its scale, and `M_v` (the Hessian of the `Q` term).
    fn derivatives(&self, n: &Vector3<f64>) -> (Vector3<f64>, f64, Matrix3<f64>) {
        let xi = self.xinv(n);
        let v = xi * self.q;
        let vv = Sym2::outer([v[0], v[1]], [v[0], v[1]]).scale(0.5).mandel();
        let hn = self.hbar * n;
        let grad = vv - hn + self.e;
        let scale = vv.norm() + hn.norm() + self.e.norm();
        let mv = m_v(&xi, &v);
        (grad, scale, mv)
    }
}

/// `dN ↦ sym(X⁻¹ dN v ⊗ v)` as a Mandel matrix.
fn m_v(xi: &Matrix2<f64>, v: &Vector2<f64>) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for c in 0..3 {
        let ek = to_mat(Sym2::from_mandel(Vector3::ith(c, 1.0)));
        let a = xi * (ek * v);
        m.set_column(c, &Sym2::outer([a[0], a[1]], [v[0], v[1]]).mandel());
    }
    m
}

pub fn point_sup(q: [f64; 2], e: Sym2, k: f64, hbar: &Matrix3<f64>, h: &Matrix3<f64>) -> PointSup {
    let loc = Local { q: vec2(q), e: e.mandel(), k, hbar };
    let qk = loc.q / k;
    let mut n = h * (loc.e + Sym2::outer([qk[0], qk[1]], [qk[0], qk[1]]).scale(0.5).mandel());
    let mut fallback = false;
    if !loc.admissible(&n) {
        n = project(n, k);
        fallback = true;
    }
    let mut f = loc.value(&n);
    let mut rel = f64::INFINITY;
    for _ in 0..60 {
        let (grad, scale, mv) = loc.derivatives(&n);
        rel = grad.norm() / scale.max(f64::MIN_POSITIVE);
        if rel <= 1e-14 {
            break;
        }
        // ascent direction: Newton when the Hessian is negative definite,
        // otherwise the fixed-point step N ← H(e + ½v⊗v)
        let neg = hbar - mv;
        let dir = match neg.cholesky() {
            Some(c) => c.solve(&grad),
            None => h * grad,
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let cand = n + dir * t;
            if loc.admissible(&cand) {
                let fc = loc.value(&cand);
                if fc >= f - 1e-15 * f.abs() {
                    n = cand;
                    f = fc;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            // the unconstrained maximizer lies outside λ_max(N) < K/2
            if !loc.admissible(&(n + dir)) {
                fallback = true;
            }
            break;
        }
    }
    PointSup { n: Sym2::from_mandel(n), value: f, residual: rel, fallback }
}

/// Clips the eigenvalues of `N` below `K/2`.
fn project(n: Vector3<f64>, k: f64) -> Vector3<f64> {
    let m = to_mat(Sym2::from_mandel(n));
    let eig = m.symmetric_eigen();
    let cap = 0.5 * k * (1.0 - 1e-9);
    let d = Matrix2::from_diagonal(&eig.eigenvalues.map(|l| l.min(cap)));
    from_mat(&(eig.eigenvectors * d * eig.eigenvectors.transpose())).mandel()
}

/// `J₂(u, Q) = sup_N J₁(u, Q, N)`, with the maximizing stress.
#[derive(Debug, Clone, PartialEq)]
pub struct J2 {
    pub value: f64,
    pub n: SymTensor2Field,
    pub fallbacks: usize,
    pub max_residual: f64,
}

fn pointwise_sup(plate: &Plate, s: &PrimalState, q: &VecField, k: f64) -> (Vec<PointSup>, SymTensor2Field) {
    let e = plate.grid.sym_gradient(&s.u1, &s.u2);
    let hbar = plate.mat.membrane_inv.0;
    let h = plate.mat.membrane.0;
    let sups: Vec<PointSup> = (0..q.len()).map(|t| point_sup(q.get(t), e.get(t), k, &hbar, &h)).collect();
    let n = sups.iter().map(|p| p.n).collect();
    (sups, n)
}

pub fn j2(plate: &Plate, s: &PrimalState, q: &VecField, k: f64, loads: &Loads) -> Result<J2> {
    let (sups, n) = pointwise_sup(plate, s, q, k);
    let value = j1(plate, s, q, &n, k, loads)?;
    Ok(J2 {
        value,
        n,
        fallbacks: sups.iter().filter(|p| p.fallback).count(),
        max_residual: sups.iter().map(|p| p.residual).fold(0.0, f64::max),
    })
}

/// Per-unit-area `Q`-Hessian of `J₂` on triangle `t`, evaluated at the
/// pointwise maximizer `n`.
pub fn q_hessian(q: [f64; 2], n: Sym2, k: f64, hbar: &Matrix3<f64>) -> Matrix2<f64> {
    let xi = (Matrix2::identity() * k - to_mat(n)).try_inverse().expect("X invertible");
    let v = xi * vec2(q);
    let inner = (hbar - m_v(&xi, &v)).try_inverse().expect("strictly concave maximizer");
    let mut hess = xi;
    for c in 0..2 {
        let dq = Vector2::ith(c, 1.0);
        let a = xi * dq;
        let dn = to_mat(Sym2::from_mandel(inner * Sym2::outer([a[0], a[1]], [v[0], v[1]]).mandel()));
        let col = xi * (dn * v);
        hess[(0, c)] += col[0];
        hess[(1, c)] += col[1];
    }
    hess
}

/// One point of the `K`-sweep of the `Q`-Hessian expansion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KPoint {
    pub k: f64,
    /// `max_t ‖Hess_t − X_t⁻¹‖_F`.
    pub remainder: f64,
    /// Smallest eigenvalue of the `Q`-Hessian over all triangles.
    pub hess_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSweep {
    pub points: Vec<KPoint>,
    /// Least-squares slope of `log remainder` against `log K`; NaN when the
    /// expansion is exact.
    pub slope: f64,
    /// Every remainder vanishes to rounding relative to `‖X⁻¹‖ ≈ 1/K`, as
    /// happens at zero slope.
    pub exact: bool,
    /// Smallest swept `K` with a positive Hessian, when the slope is in band
    /// or the expansion is exact.
    pub passing_k: Option<f64>,
}

impl KSweep {
    pub fn slope_in_band(&self) -> bool {
        (-2.3..=-1.7).contains(&self.slope)
    }
}

pub fn k_point(plate: &Plate, s: &PrimalState, k: f64) -> KPoint {
    let (n0, q0) = transfer_k(plate, s, k);
    let hbar = plate.mat.membrane_inv.0;
    let mut rem = 0.0f64;
    let mut hmin = f64::INFINITY;
    for t in 0..q0.len() {
        let h = q_hessian(q0.get(t), n0.get(t), k, &hbar);
        let xi = (Matrix2::identity() * k - to_mat(n0.get(t))).try_inverse().expect("X invertible");
        rem = rem.max((h - xi).norm());
        hmin = hmin.min(h.symmetric_eigenvalues().min());
    }
    KPoint { k, remainder: rem, hess_min: hmin }
}

/// Doubling sweep `K₀·2^i`, `i < count`.
pub fn k_sweep(plate: &Plate, s: &PrimalState, k0: f64, count: usize) -> KSweep {
    let points: Vec<KPoint> = (0..count).map(|i| k_point(plate, s, k0 * 2f64.powi(i as i32))).collect();
    let exact = points.iter().all(|p| p.remainder * p.k <= 1e-12);
    let slope = if exact {
        f64::NAN
    } else {
        fit_slope(&points.iter().map(|p| (p.k.ln(), p.remainder.ln())).collect::<Vec<_>>())
    };
    let ok = exact || (-2.3..=-1.7).contains(&slope);
    let passing_k = ok.then(|| points.iter().find(|p| p.hess_min > 0.0).map(|p| p.k)).flatten();
    KSweep { points, slope, exact, passing_k }
}

fn fit_slope(xy: &[(f64, f64)]) -> f64 {
    let n = xy.len() as f64;
    let (mx, my) = xy.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (sxy, sxx) = xy.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    sxy / sxx
}

/// A starting `K` large against the stress and the membrane stiffness times
/// the squared slope, so the sweep starts in the asymptotic regime. At rest
/// it falls back to `10⁻⁶‖H‖`.
pub fn default_k0(plate: &Plate, s: &PrimalState) -> f64 {
    let n = membrane_stress(plate, s);
    let gw = plate.grid.gradient_interior(&s.w);
    let hnorm = plate.mat.membrane.0.norm();
    let stiff = hnorm * gw.max_abs().powi(2);
    16.0 * n.max_abs().max(stiff).max(1e-6 * hnorm)
}

/// `J̃*(Q) = inf_u J₂(u, Q)`, with the minimizing state.
#[derive(Debug, Clone, PartialEq)]
pub struct JtildeK {
    pub value: f64,
    pub state: PrimalState,
    pub newton_iter: usize,
    pub fallbacks: usize,
}

/// `J₂(·, Q)` is convex and separates: the deflection part is minimized by
/// one linear solve, the in-plane part by Newton on `u`.
pub fn jtilde_k(plate: &Plate, q: &VecField, k: f64, loads: &Loads, u_start: Option<(&[f64], &[f64])>) -> Result<JtildeK> {
    let g = &plate.grid;
    let m = plate.n();
    let w = fk_star(plate, q, k, Some(loads))?.w;
    let (mut u1, mut u2) = match u_start {
        Some((a, b)) => (a.to_vec(), b.to_vec()),
        None => (vec![0.0; m], vec![0.0; m]),
    };
    let hbar = plate.mat.membrane_inv.0;
    let h = plate.mat.membrane.0;
    let a = g.tri_area();
    let om = g.omega();
    let membrane_part = |u1: &[f64], u2: &[f64]| -> (f64, Vec<PointSup>) {
        let e = g.sym_gradient(u1, u2);
        let sups: Vec<PointSup> = (0..q.len()).map(|t| point_sup(q.get(t), e.get(t), k, &hbar, &h)).collect();
        let v = a * sups.iter().map(|p| p.value).sum::<f64>() - g.inner(&loads.p1, u1) - g.inner(&loads.p2, u2);
        (v, sups)
    };
    let (mut f, mut sups) = membrane_part(&u1, &u2);
    let mut gnorm0 = f64::NAN;
    let mut iters = 0;
    for it in 0..50 {
        iters = it;
        let mut grad = vec![0.0; 2 * m];
        let mut hb = TripletBuilder::new(2 * m);
        for t in 0..q.len() {
            let cols = strain_columns(plate, t);
            let nm = sups[t].n.mandel();
            let xi = (Matrix2::identity() * k - to_mat(sups[t].n)).try_inverse().expect("X invertible");
            let v = xi * vec2(q.get(t));
            let c = (hbar - m_v(&xi, &v)).try_inverse().unwrap_or(h);
            for (r, br) in &cols {
                grad[*r] += a * br.dot(&nm);
                let cb = c * br;
                for (col, bc) in &cols {
                    hb.add(*r, *col, a * bc.dot(&cb));
                }
            }
        }
        for p in 0..m {
            grad[2 * p] -= om * loads.p1[p];
            grad[2 * p + 1] -= om * loads.p2[p];
        }
        let gn = norm_inf(&grad);
        if it == 0 {
            gnorm0 = gn;
        }
        let floor = 1e-12 * (gnorm0 + om * (norm_inf(&loads.p1) + norm_inf(&loads.p2))) + f64::MIN_POSITIVE;
        if gn <= floor {
            break;
        }
        let hm: CsrMatrix = hb.build();
        let neg: Vec<f64> = grad.iter().map(|x| -x).collect();
        let d = hm.cholesky()?.solve(&neg);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let c1: Vec<f64> = (0..m).map(|p| u1[p] + t * d[2 * p]).collect();
            let c2: Vec<f64> = (0..m).map(|p| u2[p] + t * d[2 * p + 1]).collect();
            let (fc, sc) = membrane_part(&c1, &c2);
            if fc <= f + 1e-14 * f.abs() {
                u1 = c1;
                u2 = c2;
                f = fc;
                sups = sc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let state = PrimalState { u1, u2, w };
    let n: SymTensor2Field = sups.iter().map(|p| p.n).collect();
    Ok(JtildeK {
        value: j1(plate, &state, q, &n, k, loads)?,
        state,
        newton_iter: iters,
        fallbacks: sups.iter().filter(|p| p.fallback).count(),
    })
}

/// Mandel columns of `sym∇u` on triangle `t`, keyed by the interleaved dof
/// index (`2p` for `u₁`, `2p + 1` for `u₂`).
fn strain_columns(plate: &Plate, t: usize) -> Vec<(usize, Vector3<f64>)> {
    let g = &plate.grid;
    g.tri(t)
        .iter()
        .filter_map(|v| {
            let (i, j) = g.ij(v.node);
            g.interior_index(i, j).map(|p| (p, v.dx, v.dy))
        })
        .flat_map(|(p, dx, dy)| {
            [(2 * p, Vector3::new(dx, 0.0, SQRT_HALF * dy)), (2 * p + 1, Vector3::new(0.0, dy, SQRT_HALF * dx))]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseTag {
    /// `δ²J(u₀) > 0` and `N₀ ∈ E*`.
    Min,
    /// `N₀ ∈ A*₊` without positive second variation.
    SaddleQualified,
    /// `δ²J(u₀)` has a negative eigenvalue and `N₀ ∈ A*₋`.
    Max,
    Unclassified,
}

impl CaseTag {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseTag::Min => "min",
            CaseTag::SaddleQualified => "saddle-qualified",
            CaseTag::Max => "max",
            CaseTag::Unclassified => "unclassified",
        }
    }
}

impl std::fmt::Display for CaseTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub case_tag: CaseTag,
    pub k: f64,
    pub hess_min: f64,
    pub hess_max: f64,
    pub bstar4: bool,
    pub cstar4: bool,
    pub dplus: bool,
    pub dminus: bool,
    pub estar: bool,
    pub dplus_min_eig: f64,
    pub dminus_max_eig: f64,
    pub energy: f64,
    /// `J₁(u₀, Q₀, N₀) − J(u₀)`.
    pub j1_residual: f64,
    /// `Ĵ*(Q₀, N₀) − J(u₀)`; an identity at every critical point.
    pub jhat_star_residual: f64,
    /// Residual of the equality chain of the assigned case (NaN when
    /// unclassified).
    pub chain_residual: f64,
    /// Relative residual of `∂J₁/∂N = 0` at the pointwise maximizer for `Q₀`.
    pub closure_residual: f64,
    /// `max |N_sup − N₀|` relative to `max |N₀|`.
    pub sup_mismatch: f64,
    pub fallbacks: usize,
    /// `δ²J` has a negative eigenvalue but `N₀ ∉ A*₋`, or the reverse.
    pub case3_disagreement: bool,
}

pub fn classify(plate: &Plate, s: &PrimalState, cfg: &MultiDualConfig, loads: &Loads, opts: LanczosOptions) -> Result<CaseReport> {
    cfg.validate()?;
    let g = &plate.grid;
    let k = cfg.k_shift;
    let hess = hessian_operator(plate, s);
    let hess_max = max_eigenvalue(&hess, opts);
    let hess_min = min_eigenvalue(&hess, opts)?;
    let (n0, q0) = transfer_k(plate, s, k);
    let j = energy(plate, s, loads);

    let fnorm = loads.norm(g);
    let bstar4 = equilibrium_residual(plate, &n0, loads) <= cfg.ctol * (1.0 + fnorm);
    let cstar4 = n0.iter().all(|t| t.max_eig() < 0.5 * k);
    let estar = bstar4 && cstar4;
    let dplus_min_eig = dplus_min_eig(plate, &n0, k, opts).unwrap_or(f64::NAN);
    let dminus_max_eig = dminus_max_eig(plate, &n0, k, opts).unwrap_or(f64::NAN);
    let dplus = dplus_min_eig > 0.0;
    let dminus = dminus_max_eig < 0.0;

    let positive = hess_min > cfg.eig_tol * hess_max.abs();
    let negative = hess_min < -cfg.eig_tol * hess_max.abs();
    let case_tag = if positive && estar {
        CaseTag::Min
    } else if estar && dplus {
        CaseTag::SaddleQualified
    } else if negative && estar && dminus {
        CaseTag::Max
    } else {
        CaseTag::Unclassified
    };

    let j1_residual = j1(plate, s, &q0, &n0, k, loads)? - j;
    let jhat_star_residual = jhat_star(plate, &q0, &n0, k, loads)? - j;
    let (sups, nsup) = pointwise_sup(plate, s, &q0, k);
    let closure_residual = sups.iter().map(|p| p.residual).fold(0.0, f64::max);
    let nscale = n0.max_abs().max(f64::MIN_POSITIVE);
    let sup_mismatch = nsup.zip_map(&n0, |a, b| a.sub(b)).max_abs() / nscale;
    let fallbacks = sups.iter().filter(|p| p.fallback).count();
    let chain_residual = match case_tag {
        CaseTag::Min | CaseTag::SaddleQualified => jtilde_k(plate, &q0, k, loads, None)?.value - j,
        CaseTag::Max => jhat_star_residual,
        CaseTag::Unclassified => f64::NAN,
    };

    Ok(CaseReport {
        case_tag,
        k,
        hess_min,
        hess_max,
        bstar4,
        cstar4,
        dplus,
        dminus,
        estar,
        dplus_min_eig,
        dminus_max_eig,
        energy: j,
        j1_residual,
        jhat_star_residual,
        chain_residual,
        closure_residual,
        sup_mismatch,
        fallbacks,
        case3_disagreement: negative != (estar && dminus),
    })
}

fn random_like(v: &[f64], radius: f64, rng: &mut impl Rng) -> Vec<f64> {
    v.iter().map(|_| radius * rng.gen_range(-1.0..1.0)).collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

/// `min_i J(u_i) − J(u₀)` and `max_i J(u_i) − J(u₀)` over samples in a
/// max-norm ball of relative radius `r` around `u₀`. Field magnitudes are
/// floored at the thickness `t` for `w` and `t²/lx` for `u`, so the ball is
/// not empty at rest.
pub fn sample_energy(plate: &Plate, s: &PrimalState, loads: &Loads, r: f64, n: usize, rng: &mut impl Rng) -> (f64, f64) {
    let j0 = energy(plate, s, loads);
    let t = plate.mat.thickness;
    let ru = r * max_abs(&s.u1).max(max_abs(&s.u2)).max(t * t / plate.grid.lx);
    let rw = r * max_abs(&s.w).max(t);
    (0..n)
        .map(|_| {
            let d = PrimalState { u1: random_like(&s.u1, ru, rng), u2: random_like(&s.u2, ru, rng), w: random_like(&s.w, rw, rng) };
            energy(plate, &s.axpy(1.0, &d), loads) - j0
        })
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// `min_i J̃*(Q_i) − J̃*(Q₀)` over samples in a ball of relative radius `r2`.
pub fn sample_jtilde_k(
    plate: &Plate,
    s: &PrimalState,
    k: f64,
    loads: &Loads,
    r2: f64,
    n: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let (_, q0) = transfer_k(plate, s, k);
    let start = Some((s.u1.as_slice(), s.u2.as_slice()));
    let base = jtilde_k(plate, &q0, k, loads, start)?.value;
    let rq = r2 * q0.max_abs();
    let mut lo = f64::INFINITY;
    for _ in 0..n {
        let q = q0.add(&VecField::from_flat(&random_like(&q0.to_flat(), rq, rng)));
        lo = lo.min(jtilde_k(plate, &q, k, loads, start)?.value - base);
    }
    Ok(lo)
}

/// Sampled `sup_{u ∈ B_r(u₀)} Ĵ(u, N₀)` and `sup_{Q ∈ B_{r₁}(Q₀)} Ĵ*(Q, N₀)`.
pub fn sample_case3(plate: &Plate, s: &PrimalState, cfg: &MultiDualConfig, loads: &Loads, rng: &mut impl Rng) -> Result<(f64, f64)> {
    let (n0, q0) = transfer_k(plate, s, cfg.k_shift);
    let ru = cfg.r * max_abs(&s.u1).max(max_abs(&s.u2));
    let rw = cfg.r * max_abs(&s.w);
    let rq = cfg.r1 * q0.max_abs();
    let mut sup_u = jhat_u(plate, s, &n0, loads);
    let mut sup_q = jhat_star(plate, &q0, &n0, cfg.k_shift, loads)?;
    for _ in 0..cfg.n_samples {
        let d = PrimalState { u1: random_like(&s.u1, ru, rng), u2: random_like(&s.u2, ru, rng), w: random_like(&s.w, rw, rng) };
        sup_u = sup_u.max(jhat_u(plate, &s.axpy(1.0, &d), &n0, loads));
        let q = q0.add(&VecField::from_flat(&random_like(&q0.to_flat(), rq, rng)));
        sup_q = sup_q.max(jhat_star(plate, &q, &n0, cfg.k_shift, loads)?);
    }
    Ok((sup_u, sup_q))
}

/// Smallest centered second difference of `J₂(u, Q)` along random segments
/// through `(u₀, Q₀)` in the joint variables.
pub fn j2_segment_convexity(
    plate: &Plate,
    s: &PrimalState,
    k: f64,
    loads: &Loads,
    n_segments: usize,
    radius: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    let (_, q0) = transfer_k(plate, s, k);
    let j0 = j2(plate, s, &q0, k, loads)?.value;
    let ru = max_abs(&s.u1).max(max_abs(&s.u2));
    let rw = max_abs(&s.w);
    let rq = q0.max_abs();
    let mut lo = f64::INFINITY;
    for _ in 0..n_segments {
        let d = PrimalState { u1: random_like(&s.u1, ru, rng), u2: random_like(&s.u2, ru, rng), w: random_like(&s.w, rw, rng) };
        let dq = VecField::from_flat(&random_like(&q0.to_flat(), rq, rng));
        let at = |t: f64| j2(plate, &s.axpy(t, &d), &q0.add(&dq.scale(t)), k, loads).map(|v| v.value);
        lo = lo.min((at(radius)? - 2.0 * j0 + at(-radius)?) / (radius * radius));
    }
    Ok(lo)
}
