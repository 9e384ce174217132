//! Primal energy of the clamped von Kármán plate, its first and second
//! variation, Newton continuation, and manufactured loads.
//!
//! Displacements and loads are stored on interior nodes only; clamped boundary
//! values are zero. Residuals are in strong form, i.e. the energy gradient
//! divided by the interior quadrature weight `ω`.

use crate::error::{Error, Result};
use crate::grid::{Grid, LinearOperator, VecField};
use crate::linalg::{norm, CsrMatrix, Factor, TripletBuilder};
use crate::material::{apply, MaterialTensor, Sym2, SymTensor2Field};

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Grid, material and the assembled operators shared by every functional.
#[derive(Debug, Clone)]
pub struct Plate {
    pub grid: Grid,
    pub mat: MaterialTensor,
    /// Bending operator `h_{αβλμ} w_{,αβλμ}` (strong form).
    pub bih: LinearOperator,
    /// `−∇²` with homogeneous Dirichlet data.
    pub neg_lap: LinearOperator,
}

impl Plate {
    pub fn new(grid: Grid, mat: MaterialTensor) -> Result<Self> {
        let bih = grid.assemble_biharmonic(&mat)?;
        let neg_lap = grid.neg_laplacian();
        Ok(Plate { grid, mat, bih, neg_lap })
    }

    pub fn n(&self) -> usize {
        self.grid.n_interior()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalState {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub w: Vec<f64>,
}

impl PrimalState {
    pub fn zeros(n: usize) -> Self {
        PrimalState { u1: vec![0.0; n], u2: vec![0.0; n], w: vec![0.0; n] }
    }

    /// Interleaved `(u1, u2, w)` per interior node.
    pub fn to_flat(&self) -> Vec<f64> {
        (0..self.w.len()).flat_map(|p| [self.u1[p], self.u2[p], self.w[p]]).collect()
    }

    pub fn from_flat(v: &[f64]) -> Self {
        let pick = |c: usize| v.iter().skip(c).step_by(3).copied().collect();
        PrimalState { u1: pick(0), u2: pick(1), w: pick(2) }
    }

    /// `self + t·d`
    pub fn axpy(&self, t: f64, d: &PrimalState) -> PrimalState {
        let f = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + t * y).collect();
        PrimalState { u1: f(&self.u1, &d.u1), u2: f(&self.u2, &d.u2), w: f(&self.w, &d.w) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loads {
    pub p: Vec<f64>,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
}

impl Loads {
    pub fn zeros(n: usize) -> Self {
        Loads { p: vec![0.0; n], p1: vec![0.0; n], p2: vec![0.0; n] }
    }

    pub fn scaled(&self, s: f64) -> Loads {
        let f = |v: &[f64]| v.iter().map(|x| s * x).collect();
        Loads { p: f(&self.p), p1: f(&self.p1), p2: f(&self.p2) }
    }

    /// Discrete `L²` norm `(ω Σ |f|²)^{1/2}`.
    pub fn norm(&self, grid: &Grid) -> f64 {
        let s: f64 = [&self.p, &self.p1, &self.p2]
            .iter()
            .map(|v| grid.inner(v, v))
            .sum();
        s.sqrt()
    }
}

/// Strong-form energy gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
    pub rw: Vec<f64>,
}

impl Residual {
    pub fn as_state(&self) -> PrimalState {
        PrimalState { u1: self.r1.clone(), u2: self.r2.clone(), w: self.rw.clone() }
    }

    pub fn norm(&self, grid: &Grid) -> f64 {
        (grid.inner(&self.r1, &self.r1) + grid.inner(&self.r2, &self.r2) + grid.inner(&self.rw, &self.rw))
            .sqrt()
    }

    pub fn membrane_norm(&self, grid: &Grid) -> f64 {
        (grid.inner(&self.r1, &self.r1) + grid.inner(&self.r2, &self.r2)).sqrt()
    }
}

/// `γ = ½(∇u + ∇uᵀ) + ½ ∇w ⊗ ∇w` per triangle.
pub fn membrane_strain(plate: &Plate, s: &PrimalState) -> SymTensor2Field {
    let g = &plate.grid;
    let e = g.sym_gradient(&s.u1, &s.u2);
    let gw = g.gradient_interior(&s.w);
    e.iter()
        .zip(gw.iter())
        .map(|(e, d)| e.add(Sym2::outer(d, d).scale(0.5)))
        .collect()
}

/// `N = H γ` per triangle.
pub fn membrane_stress(plate: &Plate, s: &PrimalState) -> SymTensor2Field {
    apply(&plate.mat.membrane, &membrane_strain(plate, s))
}

/// Stored bending energy `½ ω wᵀ A w`.
pub fn bending_energy(plate: &Plate, w: &[f64]) -> f64 {
    0.5 * plate.grid.inner(w, &plate.bih.apply(w))
}

/// Stored membrane energy `½ Σ a_t Hγ:γ`.
pub fn membrane_energy(plate: &Plate, s: &PrimalState) -> f64 {
    let h = &plate.mat.membrane;
    0.5 * plate.grid.tri_area() * membrane_strain(plate, s).iter().map(|g| h.quad(g, g)).sum::<f64>()
}

pub fn external_work(plate: &Plate, s: &PrimalState, f: &Loads) -> f64 {
    let g = &plate.grid;
    g.inner(&s.w, &f.p) + g.inner(&s.u1, &f.p1) + g.inner(&s.u2, &f.p2)
}

/// Potential energy `J(u) = G(Λu) − F₁(u)`.
pub fn energy(plate: &Plate, s: &PrimalState, f: &Loads) -> f64 {
    membrane_energy(plate, s) + bending_energy(plate, &s.w) - external_work(plate, s, f)
}

/// `N ∇w` per triangle.
pub fn stress_times_gradient(n: &SymTensor2Field, gw: &VecField) -> VecField {
    gw.map(|t, d| n.get(t).apply(d))
}

pub fn residual(plate: &Plate, s: &PrimalState, f: &Loads) -> Residual {
    let g = &plate.grid;
    let n = membrane_stress(plate, s);
    let (d1, d2) = g.divergence_tensor(&n);
    let ngw = stress_times_gradient(&n, &g.gradient_interior(&s.w));
    let dn = g.divergence(&ngw);
    let aw = plate.bih.apply(&s.w);
    Residual {
        r1: d1.iter().zip(&f.p1).map(|(d, p)| -d - p).collect(),
        r2: d2.iter().zip(&f.p2).map(|(d, p)| -d - p).collect(),
        rw: aw.iter().zip(&dn).zip(&f.p).map(|((a, d), p)| a - d - p).collect(),
    }
}

/// Loads for which `target` is an exact discrete critical point.
pub fn manufacture_loads(plate: &Plate, target: &PrimalState) -> Loads {
    let zero = Loads::zeros(plate.n());
    let r = residual(plate, target, &zero);
    Loads { p: r.rw, p1: r.r1, p2: r.r2 }
}

/// Second variation `δ²J` in strong form over interleaved `(u1, u2, w)` dofs.
pub fn hessian_operator(plate: &Plate, s: &PrimalState) -> CsrMatrix {
    let g = &plate.grid;
    let m = plate.n();
    let h = plate.mat.membrane.0;
    let n = membrane_stress(plate, s);
    let gw = g.gradient_interior(&s.w);
    let scale = g.tri_area() / g.omega();
    let mut b = TripletBuilder::new(3 * m);
    for t in 0..g.n_tri() {
        let [gx, gy] = gw.get(t);
        let nt = n.get(t);
        let verts: Vec<(usize, f64, f64)> = g
            .tri(t)
            .iter()
            .filter_map(|v| {
                let (i, j) = g.ij(v.node);
                g.interior_index(i, j).map(|p| (p, v.dx, v.dy))
            })
            .collect();
        // columns of the strain-displacement matrix in Mandel form
        let cols: Vec<(usize, nalgebra::Vector3<f64>)> = verts
            .iter()
            .flat_map(|&(p, dx, dy)| {
                [
                    (3 * p, nalgebra::Vector3::new(dx, 0.0, SQRT_HALF * dy)),
                    (3 * p + 1, nalgebra::Vector3::new(0.0, dy, SQRT_HALF * dx)),
                    (3 * p + 2, nalgebra::Vector3::new(gx * dx, gy * dy, SQRT_HALF * (gx * dy + gy * dx))),
                ]
            })
            .collect();
        for (r, br) in &cols {
            let hb = h * br;
            for (c, bc) in &cols {
                b.add(*r, *c, scale * hb.dot(bc));
            }
        }
        for &(p, dxp, dyp) in &verts {
            let np = nt.apply([dxp, dyp]);
            for &(q, dxq, dyq) in &verts {
                b.add(3 * p + 2, 3 * q + 2, scale * (np[0] * dxq + np[1] * dyq));
            }
        }
    }
    let a = plate.bih.matrix();
    for p in 0..m {
        for (q, v) in a.row(p) {
            b.add(3 * p + 2, 3 * q + 2, v);
        }
    }
    b.build()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub continuation_steps: usize,
    /// Initial step length of the damped update.
    pub damping: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-10, max_iter: 50, continuation_steps: 10, damping: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub load_fraction: f64,
    pub newton_iter: usize,
    pub residual_norm: f64,
    pub energy: f64,
}

#[derive(Debug, Clone)]
pub struct NewtonResult {
    pub state: PrimalState,
    pub trace: Vec<TraceRow>,
}

/// Damped Newton with load continuation. The line search halves the step
/// until the residual norm decreases, so every accepted step reduces it.
pub fn solve_newton(plate: &Plate, loads: &Loads, opts: NewtonOptions) -> Result<NewtonResult> {
    solve_newton_from(plate, loads, PrimalState::zeros(plate.n()), opts)
}

pub fn solve_newton_from(
    plate: &Plate,
    loads: &Loads,
    start: PrimalState,
    opts: NewtonOptions,
) -> Result<NewtonResult> {
    let g = &plate.grid;
    let steps = opts.continuation_steps.max(1);
    let target = opts.tol * (1.0 + loads.norm(g));
    let mut state = start;
    let mut trace = Vec::new();
    for step in 1..=steps {
        let lambda = step as f64 / steps as f64;
        let f = loads.scaled(lambda);
        let mut r = residual(plate, &state, &f);
        let mut rn = r.norm(g);
        let mut iter = 0;
        trace.push(TraceRow {
            step,
            load_fraction: lambda,
            newton_iter: 0,
            residual_norm: rn,
            energy: energy(plate, &state, &f),
        });
        // intermediate steps only need to be close enough to warm-start
        let step_target = if step == steps { target } else { target.max(1e-6 * (1.0 + f.norm(g))) };
        while rn > step_target {
            if iter == opts.max_iter {
                return Err(Error::NonConvergence { step, residual_norm: rn });
            }
            iter += 1;
            let hess = hessian_operator(plate, &state);
            let rhs: Vec<f64> = r.as_state().to_flat().iter().map(|v| -v).collect();
            let d = PrimalState::from_flat(&Factor::new(&hess)?.solve(&rhs));
            let mut t = opts.damping;
            let accepted = loop {
                let trial = state.axpy(t, &d);
                let rt = residual(plate, &trial, &f);
                let rtn = rt.norm(g);
                if rtn < rn {
                    break Some((trial, rt, rtn));
                }
                t *= 0.5;
                if t < 1e-12 {
                    break None;
                }
            };
            let Some((trial, rt, rtn)) = accepted else {
                if rn <= 1e3 * step_target {
                    // stagnated at rounding level
                    break;
                }
                return Err(Error::NonConvergence { step, residual_norm: rn });
            };
            state = trial;
            r = rt;
            rn = rtn;
            trace.push(TraceRow {
                step,
                load_fraction: lambda,
                newton_iter: iter,
                residual_norm: rn,
                energy: energy(plate, &state, &f),
            });
        }
        if step == steps && rn > target {
            return Err(Error::NonConvergence { step, residual_norm: rn });
        }
    }
    Ok(NewtonResult { state, trace })
}

/// Clamped bump `a·(sin(πx/lx)·sin(πy/ly))²` on interior nodes.
pub fn bump(grid: &Grid, a: f64) -> Vec<f64> {
    use std::f64::consts::PI;
    let (lx, ly) = (grid.lx, grid.ly);
    grid.interior_fn(|x, y| {
        let s = (PI * x / lx).sin() * (PI * y / ly).sin();
        a * s * s
    })
}

/// Manufactured target with in-plane compression: `u_α = −c (x_α − L_α/2) b(x)`
/// where `b = φ(x/lx)·φ(y/ly)`, `φ(s) = 1 − (2s − 1)^8`, is a plateau that
/// confines the tensile part (forced by `u = 0` on the boundary) to a
/// boundary layer. A deflection bump of amplitude `a` is superposed.
pub fn compressive_target(grid: &Grid, c: f64, a: f64) -> PrimalState {
    let (lx, ly) = (grid.lx, grid.ly);
    let phi = |s: f64| 1.0 - (2.0 * s - 1.0).powi(8);
    let plateau = |x: f64, y: f64| phi(x / lx) * phi(y / ly);
    PrimalState {
        u1: grid.interior_fn(|x, y| -c * (x - 0.5 * lx) * plateau(x, y)),
        u2: grid.interior_fn(|x, y| -c * (y - 0.5 * ly) * plateau(x, y)),
        w: bump(grid, a),
    }
}

/// Convenience: the residual norm of `s` under `f`.
pub fn residual_norm(plate: &Plate, s: &PrimalState, f: &Loads) -> f64 {
    residual(plate, s, f).norm(&plate.grid)
}

/// Euclidean norm of a state's stacked dofs.
pub fn state_norm(s: &PrimalState) -> f64 {
    norm(&s.to_flat())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plate() -> Plate {
        Plate::new(Grid::square(9).unwrap(), MaterialTensor::isotropic(1.0, 0.3, 0.1).unwrap()).unwrap()
    }

    #[test]
    fn zero_state_has_zero_energy_and_load_residual() {
        let p = plate();
        let n = p.n();
        let f = Loads { p: vec![1.0; n], p1: vec![2.0; n], p2: vec![-1.0; n] };
        let s = PrimalState::zeros(n);
        assert_eq!(energy(&p, &s, &f), 0.0);
        let r = residual(&p, &s, &f);
        assert!(r.rw.iter().all(|v| *v == -1.0));
        assert!(r.r1.iter().all(|v| *v == -2.0));
        assert!(r.r2.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn strain_of_pure_deflection_gradient() {
        let p = plate();
        let g = &p.grid;
        // w linear on the interior: gradient (a, b) on triangles away from the boundary
        let (a, b) = (0.3, -0.7);
        let w = g.interior_fn(|x, y| a * x + b * y);
        let s = PrimalState { u1: vec![0.0; p.n()], u2: vec![0.0; p.n()], w };
        let gam = membrane_strain(&p, &s);
        let gw = g.gradient_interior(&s.w);
        for t in 0..g.n_tri() {
            if (gw.x[t] - a).abs() < 1e-12 && (gw.y[t] - b).abs() < 1e-12 {
                let e = gam.get(t);
                assert!((e.xx - a * a / 2.0).abs() < 1e-14);
                assert!((e.yy - b * b / 2.0).abs() < 1e-14);
                assert!((e.xy - a * b / 2.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn newton_zero_load_is_immediate() {
        let p = plate();
        let res = solve_newton(&p, &Loads::zeros(p.n()), NewtonOptions::default()).unwrap();
        assert!(res.state.to_flat().iter().all(|v| *v == 0.0));
        assert!(res.trace.iter().all(|r| r.newton_iter == 0));
    }
}
