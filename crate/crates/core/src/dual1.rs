//! First duality principle: the dual functional `J*(z*, Q, N)`, its partial
//! infimum `J̃*(Q, N)`, the transfer map from a primal critical point, and the
//! feasibility sets `B*`, `C*`, `A* = B* ∩ C*`.
//!
//! With `K = −N + εI` and `D = div`, the functional reads
//!
//! ```text
//! J*(z*, Q, N) = ½⟨K̄z*, z*⟩ − ½⟨B⁻¹r, r⟩ − ½⟨(N+K)⁻¹Q, Q⟩ − ½⟨H̄N, N⟩,
//! r = div z* + div Q − P,
//! ```
//!
//! where `B` is the bending operator.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::VecField;
use crate::linalg::{CsrMatrix, TripletBuilder};
use crate::material::{is_posdef_field, Sym2, SymTensor2Field};
use crate::primal::{energy, membrane_stress, Loads, Plate, PrimalState};
use crate::spectrum::{lanczos_for, LanczosOptions, Target};

#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub zstar: VecField,
    pub q: VecField,
    pub n: SymTensor2Field,
    pub epsilon: f64,
}

/// `K = −N + εI` per triangle.
pub fn shift_tensor(n: &SymTensor2Field, epsilon: f64) -> SymTensor2Field {
    n.map(|t| t.scale(-1.0).shift(epsilon))
}

fn posdef_or_err(k: &SymTensor2Field) -> Result<()> {
    let r = is_posdef_field(k, 0.0);
    if r.posdef {
        Ok(())
    } else {
        Err(Error::NotPosDef { index: r.worst_index, eigenvalue: r.min_eigenvalue })
    }
}

/// `½ Σ a_t K̄ z*·z*`.
pub fn fstar(plate: &Plate, zstar: &VecField, n: &SymTensor2Field, epsilon: f64) -> Result<f64> {
    let k = shift_tensor(n, epsilon);
    posdef_or_err(&k)?;
    let a = plate.grid.tri_area();
    Ok(0.5
        * a
        * zstar
            .iter()
            .zip(k.iter())
            .map(|(z, kt)| {
                let y = kt.inverse().expect("positive definite").apply(z);
                y[0] * z[0] + y[1] * z[1]
            })
            .sum::<f64>())
}

/// `div z* + div Q − P` on interior nodes.
pub fn bending_rhs(plate: &Plate, zstar: &VecField, q: &VecField, p: &[f64]) -> Vec<f64> {
    let g = &plate.grid;
    let dz = g.divergence(zstar);
    let dq = g.divergence(q);
    dz.iter().zip(&dq).zip(p).map(|((a, b), c)| a + b - c).collect()
}

/// `½ ⟨B⁻¹ r, r⟩`.
pub fn g2star(plate: &Plate, zstar: &VecField, q: &VecField, loads: &Loads) -> Result<f64> {
    let r = bending_rhs(plate, zstar, q, &loads.p);
    let w = plate.bih.solve(&r)?;
    Ok(0.5 * plate.grid.inner(&w, &r))
}

/// `½ Σ a_t (N+K)⁻¹Q·Q + ½ Σ a_t H̄N:N`.
///
/// The first term is evaluated through the general pointwise inverse and
/// checked against its closed form `(1/2ε)|Q|²`.
pub fn g1star_tilde(plate: &Plate, q: &VecField, n: &SymTensor2Field, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::NotPosDef { index: 0, eigenvalue: epsilon });
    }
    let a = plate.grid.tri_area();
    let k = shift_tensor(n, epsilon);
    let mut general = 0.0;
    for (t, v) in q.iter().enumerate() {
        let nk = n.get(t).add(k.get(t));
        let inv = nk.inverse().ok_or(Error::NotPosDef { index: t, eigenvalue: nk.min_eig() })?;
        let y = inv.apply(v);
        general += y[0] * v[0] + y[1] * v[1];
    }
    let closed: f64 = q.iter().map(|v| v[0] * v[0] + v[1] * v[1]).sum::<f64>() / epsilon;
    assert!(
        (general - closed).abs() <= 1e-12 * closed.abs().max(f64::MIN_POSITIVE) + 1e-300,
        "(N+K)⁻¹ disagrees with ε⁻¹I: {general} vs {closed}"
    );
    Ok(0.5 * a * general + complementary_membrane(plate, n))
}

/// `½ Σ a_t H̄N:N`.
pub fn complementary_membrane(plate: &Plate, n: &SymTensor2Field) -> f64 {
    let hinv = &plate.mat.membrane_inv;
    0.5 * plate.grid.tri_area() * n.iter().map(|t| hinv.quad(t, t)).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JstarTerms {
    pub fstar: f64,
    pub g2star: f64,
    pub g1star: f64,
}

impl JstarTerms {
    pub fn total(&self) -> f64 {
        self.fstar - self.g2star - self.g1star
    }
}

pub fn jstar_terms(plate: &Plate, d: &DualState, loads: &Loads) -> Result<JstarTerms> {
    Ok(JstarTerms {
        fstar: fstar(plate, &d.zstar, &d.n, d.epsilon)?,
        g2star: g2star(plate, &d.zstar, &d.q, loads)?,
        g1star: g1star_tilde(plate, &d.q, &d.n, d.epsilon)?,
    })
}

/// `J*(z*, Q, N) = F*(z*) − G₂*(z*, Q) − G̃₁*(−Q, N)`.
pub fn jstar(plate: &Plate, d: &DualState, loads: &Loads) -> Result<f64> {
    jstar_terms(plate, d, loads).map(|t| t.total())
}

/// Weak-form reduced operator `B_m − Σ a_t Gᵀ K G` of the inner minimization;
/// positive definite exactly when the quadratic form of `Ĵ*` is.
pub fn reduced_inner_matrix(plate: &Plate, n: &SymTensor2Field, epsilon: f64) -> CsrMatrix {
    let g = &plate.grid;
    let k = shift_tensor(n, epsilon);
    let gk = g.gradient_form(|t| k.get(t));
    plate.bih.matrix().combine(g.omega(), &gk, -1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jtilde {
    pub value: f64,
    pub zstar: VecField,
    /// Auxiliary deflection with `z* = K∇w`.
    pub w: Vec<f64>,
}

/// `J̃*(Q, N) = inf_{z*} J*(z*, Q, N)`.
///
/// Stationarity `K̄z* + ∇B⁻¹(div z* + div Q − P) = 0` is solved through the
/// substitution `z* = K∇w`, which leaves `(B + div K∇) w = P − div Q`.
pub fn jtilde(plate: &Plate, q: &VecField, n: &SymTensor2Field, epsilon: f64, loads: &Loads) -> Result<Jtilde> {
    let g = &plate.grid;
    let k = shift_tensor(n, epsilon);
    posdef_or_err(&k)?;
    let s = reduced_inner_matrix(plate, n, epsilon);
    let chol = s.cholesky().map_err(|e| Error::IndefiniteInnerProblem(e.to_string()))?;
    let dq = g.divergence(q);
    let rhs: Vec<f64> = loads.p.iter().zip(&dq).map(|(p, d)| g.omega() * (p - d)).collect();
    let w = chol.solve(&rhs);
    let gw = g.gradient_interior(&w);
    let zstar = gw.map(|t, v| k.get(t).apply(v));
    let d = DualState { zstar: zstar.clone(), q: q.clone(), n: n.clone(), epsilon };
    Ok(Jtilde { value: jstar(plate, &d, loads)?, zstar, w })
}

/// `N = Hγ(u)`, `z* = K∇w`, `Q = −ε∇w`.
pub fn transfer(plate: &Plate, s: &PrimalState, epsilon: f64) -> DualState {
    let n = membrane_stress(plate, s);
    let gw = plate.grid.gradient_interior(&s.w);
    let zstar = gw.map(|t, v| n.get(t).scale(-1.0).shift(epsilon).apply(v));
    DualState { zstar, q: gw.scale(-epsilon), n, epsilon }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MembershipReport {
    pub in_bstar: bool,
    pub in_cstar: bool,
    pub in_astar: bool,
    pub k_min_eig: f64,
    pub jhat_min: f64,
    pub equilibrium_residual: f64,
}

/// `‖div N + P_α‖` in the discrete `L²` norm.
pub fn equilibrium_residual(plate: &Plate, n: &SymTensor2Field, loads: &Loads) -> f64 {
    let g = &plate.grid;
    let (d1, d2) = g.divergence_tensor(n);
    let r1: Vec<f64> = d1.iter().zip(&loads.p1).map(|(a, b)| a + b).collect();
    let r2: Vec<f64> = d2.iter().zip(&loads.p2).map(|(a, b)| a + b).collect();
    (g.inner(&r1, &r1) + g.inner(&r2, &r2)).sqrt()
}

/// Smallest eigenvalue of the operator `z* ↦ K̄z* + ∇B⁻¹ div z*` (the
/// quadratic form `2Ĵ*(N, z*)` relative to `Σ a_t |z*|²`).
///
/// When the form is positive definite its inverse is available in closed form,
/// `K + a K G S⁻¹ Gᵀ K` with `S` the reduced inner matrix, and the
/// eigenvalue is found as the reciprocal of the inverse's largest one.
pub fn jhat_min_eigenvalue(plate: &Plate, n: &SymTensor2Field, epsilon: f64, opts: LanczosOptions) -> f64 {
    let g = &plate.grid;
    let t = g.n_tri();
    let k = shift_tensor(n, epsilon);
    let a = g.tri_area();
    let kmul = |v: &VecField| v.map(|i, x| k.get(i).apply(x));
    let s = reduced_inner_matrix(plate, n, epsilon);
    if is_posdef_field(&k, 0.0).posdef {
        if let Ok(chol) = s.cholesky() {
            let inv = |x: &[f64]| {
                let z = VecField::from_flat(x);
                let kz = kmul(&z);
                // Gᵀ in the Euclidean sense equals −(ω/a)·div
                let gt: Vec<f64> = g.divergence(&kz).iter().map(|v| -v * g.omega() / a).collect();
                let y = chol.solve(&gt);
                let kgy = kmul(&g.gradient_interior(&y));
                kz.add(&kgy.scale(a)).to_flat()
            };
            let mu = lanczos_for(inv, 2 * t, Target::Max, opts).max;
            return 1.0 / mu;
        }
    }
    let forward = |x: &[f64]| {
        let z = VecField::from_flat(x);
        let kbar = z.map(|i, v| k.get(i).inverse().map_or([f64::NAN; 2], |ki| ki.apply(v)));
        let b = plate.bih.solve(&g.divergence(&z)).unwrap_or_else(|_| vec![f64::NAN; g.n_interior()]);
        kbar.add(&g.gradient_interior(&b)).to_flat()
    };
    lanczos_for(forward, 2 * t, Target::Min, opts).min
}

pub fn membership(
    plate: &Plate,
    n: &SymTensor2Field,
    loads: &Loads,
    epsilon: f64,
    ctol: f64,
    opts: LanczosOptions,
) -> MembershipReport {
    let g = &plate.grid;
    let k = shift_tensor(n, epsilon);
    let kr = is_posdef_field(&k, 0.0);
    let schur_spd = reduced_inner_matrix(plate, n, epsilon).cholesky().is_ok();
    let jhat_min = jhat_min_eigenvalue(plate, n, epsilon, opts);
    let in_bstar = kr.posdef && schur_spd && jhat_min > 0.0;
    let eq = equilibrium_residual(plate, n, loads);
    let fnorm = loads.norm(g);
    let in_cstar = eq <= ctol * (1.0 + fnorm);
    MembershipReport {
        in_bstar,
        in_cstar,
        in_astar: in_bstar && in_cstar,
        k_min_eig: kr.min_eigenvalue,
        jhat_min,
        equilibrium_residual: eq,
    }
}

/// Admissible range `(ε_lo, ε_hi)` of the shift for a given stress field:
/// `K ≻ 0` needs `ε > max_t λ_max(N)`, and the reduced inner matrix
/// `B_m + Σ a_t GᵀNG − ε Σ a_t GᵀG` stays positive definite while
/// `ε < λ_min` of the pencil `(B_m + Σ a_t GᵀNG, Σ a_t GᵀG)`.
pub fn epsilon_range(plate: &Plate, n: &SymTensor2Field, opts: LanczosOptions) -> (f64, f64) {
    let g = &plate.grid;
    let lo = n.iter().map(Sym2::max_eig).fold(0.0, f64::max);
    let lm = g.gradient_form(|_| Sym2::IDENTITY);
    let m = plate.bih.matrix().combine(g.omega(), &g.gradient_form(|t| n.get(t)), 1.0);
    let hi = match (m.cholesky(), lm.cholesky()) {
        (Ok(mf), Ok(lf)) => {
            // eigenvalues of M⁻¹ L_m via the symmetric form Lᵀ M⁻¹ L
            let mu = lanczos_for(|x| lf.mul_lt(&mf.solve(&lf.mul_l(x))), g.n_interior(), Target::Max, opts).max;
            1.0 / mu
        }
        _ => f64::NEG_INFINITY,
    };
    (lo, hi)
}

/// Default shift: a tenth of the way into the admissible interval.
pub fn auto_epsilon(plate: &Plate, n: &SymTensor2Field, opts: LanczosOptions) -> f64 {
    let (lo, hi) = epsilon_range(plate, n, opts);
    if hi > lo {
        lo + 0.1 * (hi - lo)
    } else {
        // no admissible shift: keep K positive definite and let membership report
        lo * 1.1 + f64::EPSILON * plate.mat.youngs.abs().max(1.0)
    }
}

/// Removes the part of a per-triangle tensor field that is not divergence-free:
/// returns `δN − sym∇v` with `v` solving `div sym∇v = div δN`, `v = 0` on the
/// boundary.
pub fn divergence_free_part(plate: &Plate, dn: &SymTensor2Field) -> Result<SymTensor2Field> {
    let g = &plate.grid;
    let m = plate.n();
    let scale = g.tri_area() / g.omega();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut b = TripletBuilder::new(2 * m);
    for t in 0..g.n_tri() {
        let cols: Vec<(usize, [f64; 3])> = g
            .tri(t)
            .iter()
            .filter_map(|v| {
                let (i, j) = g.ij(v.node);
                g.interior_index(i, j).map(|p| (p, v.dx, v.dy))
            })
            .flat_map(|(p, dx, dy)| [(2 * p, [dx, 0.0, s * dy]), (2 * p + 1, [0.0, dy, s * dx])])
            .collect();
        for (r, a) in &cols {
            for (c, bb) in &cols {
                b.add(*r, *c, scale * (a[0] * bb[0] + a[1] * bb[1] + a[2] * bb[2]));
            }
        }
    }
    let (d1, d2) = g.divergence_tensor(dn);
    let rhs: Vec<f64> = (0..m).flat_map(|p| [-d1[p], -d2[p]]).collect();
    let v = b.build().cholesky()?.solve(&rhs);
    let v1: Vec<f64> = v.iter().step_by(2).copied().collect();
    let v2: Vec<f64> = v.iter().skip(1).step_by(2).copied().collect();
    let e = g.sym_gradient(&v1, &v2);
    Ok(dn.zip_map(&e, |a, b| a.sub(b)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakDuality {
    pub comparisons: usize,
    pub violations: usize,
    /// Largest `J̃*(Q, N) − J(u)` over all comparisons; negative when every
    /// comparison holds strictly.
    pub max_excess: f64,
    /// Candidate pairs drawn to obtain the requested number inside `A*`.
    pub pairs_drawn: usize,
}

/// Compares `J̃*(Q, N)` with `J(u)` for `n_pairs` dual pairs in `A*` around the
/// transferred certificate of `s0` and `n_states` primal states around `s0`.
///
/// Stress perturbations are divergence-free, so they keep the equilibrium
/// constraint; pairs that leave `B*` are redrawn at half the amplitude.
/// Primal perturbations cycle through relative radii `1, 10⁻¹, …, 10⁻⁴` of
/// the reference field magnitudes. A comparison counts as violated when
/// `J̃* > J(u) + tol`.
#[allow(clippy::too_many_arguments)]
pub fn weak_duality_sample(
    plate: &Plate,
    s0: &PrimalState,
    loads: &Loads,
    epsilon: f64,
    n_states: usize,
    n_pairs: usize,
    tol: f64,
    ctol: f64,
    opts: LanczosOptions,
    rng: &mut impl Rng,
) -> Result<WeakDuality> {
    let g = &plate.grid;
    let m = plate.n();
    let d0 = transfer(plate, s0, epsilon);
    let nmax = d0.n.max_abs().max(f64::MIN_POSITIVE);
    let qmax = d0.q.max_abs().max(f64::MIN_POSITIVE);
    let mut amp = 0.1;
    let mut drawn = 0;
    let mut duals = Vec::with_capacity(n_pairs);
    while duals.len() < n_pairs {
        if drawn >= 50 * n_pairs.max(1) {
            return Err(Error::Infeasible(format!(
                "only {} of {n_pairs} sampled dual pairs fall in A*",
                duals.len()
            )));
        }
        drawn += 1;
        let raw: SymTensor2Field = (0..g.n_tri())
            .map(|_| Sym2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let free = divergence_free_part(plate, &raw)?;
        let s = amp * nmax / free.max_abs().max(f64::MIN_POSITIVE);
        let n = d0.n.zip_map(&free, |a, b| a.add(b.scale(s)));
        let dq: VecField = (0..g.n_tri()).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let q = d0.q.add(&dq.scale(amp * qmax));
        if membership(plate, &n, loads, epsilon, ctol, opts).in_astar {
            let value = jtilde(plate, &q, &n, epsilon, loads)?.value;
            duals.push(value);
        } else {
            amp *= 0.5;
        }
    }
    let amax = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let (wmax, umax) = (amax(&s0.w).max(plate.mat.thickness * 1e-3), amax(&s0.u1).max(amax(&s0.u2)));
    let umax = umax.max(wmax * wmax / g.lx);
    let mut out = WeakDuality { comparisons: 0, violations: 0, max_excess: f64::NEG_INFINITY, pairs_drawn: drawn };
    for k in 0..n_states {
        let r = 10f64.powi(-((k % 5) as i32));
        let mut v = |s: f64| (0..m).map(|_| s * rng.gen_range(-1.0..1.0)).collect::<Vec<_>>();
        let du = PrimalState { u1: v(r * umax), u2: v(r * umax), w: v(r * wmax) };
        let j = energy(plate, &s0.axpy(1.0, &du), loads);
        for &jt in &duals {
            out.comparisons += 1;
            out.max_excess = out.max_excess.max(jt - j);
            if jt > j + tol {
                out.violations += 1;
            }
        }
    }
    Ok(out)
}
