//! Primal-dual functional in the deflection and the membrane stress:
//!
//! ```text
//! J₃(w, N) = −½⟨Bw, w⟩ − ½⟨(N − εI)∇w, ∇w⟩ − (1/2ε)⟨(−Δ)⁻¹r, r⟩ − ½⟨H̄N, N⟩,
//! r = Bw − div((N − εI)∇w) − P,
//! ```
//!
//! with `Δ` the Dirichlet Laplacian on interior nodes.

use rand::Rng;

use crate::dual1::{complementary_membrane, divergence_free_part};
use crate::error::Result;
use crate::material::{apply, Sym2, SymTensor2Field};
use crate::primal::{bending_energy, membrane_strain, stress_times_gradient, Loads, Plate, PrimalState};

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualPoint {
    pub w: Vec<f64>,
    pub n: SymTensor2Field,
    pub epsilon: f64,
}

impl PrimalDualPoint {
    pub fn new(w: Vec<f64>, n: SymTensor2Field, epsilon: f64) -> Self {
        assert!(epsilon > 0.0, "epsilon must be positive");
        PrimalDualPoint { w, n, epsilon }
    }
}

/// The four terms of `J₃` in the order they are written above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct J3Terms {
    pub bending: f64,
    pub stress_work: f64,
    pub residual: f64,
    pub complementary: f64,
}

impl J3Terms {
    pub fn total(&self) -> f64 {
        self.bending + self.stress_work + self.residual + self.complementary
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.bending, self.stress_work, self.residual, self.complementary]
    }
}

/// `r = Bw − div((N − εI)∇w) − P`.
pub fn j3_residual(plate: &Plate, p: &PrimalDualPoint, loads: &Loads) -> Vec<f64> {
    let g = &plate.grid;
    let ne = p.n.map(|t| t.shift(-p.epsilon));
    let flux = stress_times_gradient(&ne, &g.gradient_interior(&p.w));
    let d = g.divergence(&flux);
    plate.bih.apply(&p.w).iter().zip(&d).zip(&loads.p).map(|((b, d), f)| b - d - f).collect()
}

pub fn j3_terms(plate: &Plate, p: &PrimalDualPoint, loads: &Loads) -> Result<J3Terms> {
    let g = &plate.grid;
    let gw = g.gradient_interior(&p.w);
    let ne = p.n.map(|t| t.shift(-p.epsilon));
    let r = j3_residual(plate, p, loads);
    let y = plate.neg_lap.solve(&r)?;
    Ok(J3Terms {
        bending: -bending_energy(plate, &p.w),
        stress_work: -0.5 * g.tri_inner(&stress_times_gradient(&ne, &gw), &gw),
        residual: -0.5 / p.epsilon * g.inner(&y, &r),
        complementary: -complementary_membrane(plate, &p.n),
    })
}

pub fn j3(plate: &Plate, p: &PrimalDualPoint, loads: &Loads) -> Result<f64> {
    Ok(j3_terms(plate, p, loads)?.total())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stationarity {
    /// Root mean square of `δ_w J₃` along unit (ω-norm) clamped directions.
    pub w_block: f64,
    /// `(Σ a_t |H̄N − γ(u, w)|²)^{1/2}`.
    pub n_block: f64,
}

/// Stationarity of `J₃(w, N) + ⟨sym∇u, N⟩ − ⟨u, P_α⟩` at a point.
///
/// `J₃` is quadratic in `w`, so central differences are exact up to rounding
/// for any step. The step is chosen per direction to balance the rounding of
/// the value, `~ |terms| / h`, against that of the curvature, `~ h·|c₂|`,
/// with `c₂` a first second-difference estimate.
pub fn j3_stationarity(
    plate: &Plate,
    p: &PrimalDualPoint,
    u: (&[f64], &[f64]),
    loads: &Loads,
    n_dirs: usize,
    rng: &mut impl Rng,
) -> Result<Stationarity> {
    let g = &plate.grid;
    let m = plate.n();
    let h = p.w.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-6);
    let t0 = j3_terms(plate, p, loads)?;
    let j0 = t0.total();
    let big = t0.as_array().iter().fold(f64::MIN_POSITIVE, |a, b| a.max(b.abs()));
    let mut sq = 0.0;
    for _ in 0..n_dirs {
        let mut d: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dn = g.inner(&d, &d).sqrt();
        d.iter_mut().for_each(|x| *x /= dn);
        let at = |s: f64| {
            let w: Vec<f64> = p.w.iter().zip(&d).map(|(a, b)| a + s * b).collect();
            j3_terms(plate, &PrimalDualPoint { w, ..p.clone() }, loads)
        };
        let (tp, tm) = (at(h)?, at(-h)?);
        let c2 = (tp.total() - 2.0 * j0 + tm.total()).abs() / (h * h);
        let hs = if c2 > 0.0 { (big / c2).sqrt().min(h) } else { h };
        let dj = (at(hs)?.total() - at(-hs)?.total()) / (2.0 * hs);
        sq += dj * dj;
    }
    let state = PrimalState { u1: u.0.to_vec(), u2: u.1.to_vec(), w: p.w.clone() };
    let gamma = membrane_strain(plate, &state);
    let hn = apply(&plate.mat.membrane_inv, &p.n);
    let n_block = (g.tri_area() * hn.iter().zip(gamma.iter()).map(|(a, b)| {
        let e = a.sub(b);
        e.ddot(e)
    }).sum::<f64>())
    .sqrt();
    Ok(Stationarity { w_block: (sq / n_dirs.max(1) as f64).sqrt(), n_block })
}

/// Which variables a concavity probe perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    W,
    N,
    Joint,
}

/// Largest centered second difference
/// `(J₃(x + ρd) − 2J₃(x) + J₃(x − ρd)) / ρ²` over `n_dirs` random directions.
///
/// Directions are scaled by the max-norms of `w` and `N`, so `radius` is
/// relative. Stress directions are made divergence-free, which keeps the
/// equilibrium constraint.
pub fn j3_local_concavity(
    plate: &Plate,
    p: &PrimalDualPoint,
    loads: &Loads,
    probe: Probe,
    n_dirs: usize,
    radius: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    second_differences(plate, p, loads, probe, n_dirs, &[radius], rng)
        .map(|v| v.into_iter().map(|d| d[0]).fold(f64::NEG_INFINITY, f64::max))
}

/// Second differences of `J₃` along `n_dirs` random directions, each evaluated
/// at every radius in `radii`.
pub fn second_differences(
    plate: &Plate,
    p: &PrimalDualPoint,
    loads: &Loads,
    probe: Probe,
    n_dirs: usize,
    radii: &[f64],
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    let g = &plate.grid;
    let m = plate.n();
    let wscale = p.w.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-12);
    let nscale = p.n.max_abs().max(1e-12);
    let j0 = j3(plate, p, loads)?;
    let mut out = Vec::with_capacity(n_dirs);
    for _ in 0..n_dirs {
        let dw: Vec<f64> = match probe {
            Probe::N => vec![0.0; m],
            _ => (0..m).map(|_| wscale * rng.gen_range(-1.0..1.0)).collect(),
        };
        let dn = match probe {
            Probe::W => SymTensor2Field::zeros(g.n_tri()),
            _ => {
                let raw: SymTensor2Field = (0..g.n_tri())
                    .map(|_| {
                        Sym2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                    })
                    .collect();
                let free = divergence_free_part(plate, &raw)?;
                let s = nscale / free.max_abs().max(f64::MIN_POSITIVE);
                free.map(|t| t.scale(s))
            }
        };
        let at = |s: f64| {
            let w = p.w.iter().zip(&dw).map(|(a, b)| a + s * b).collect();
            let n = p.n.zip_map(&dn, |a, b| a.add(b.scale(s)));
            j3(plate, &PrimalDualPoint { w, n, epsilon: p.epsilon }, loads)
        };
        let row = radii
            .iter()
            .map(|&r| Ok((at(r)? - 2.0 * j0 + at(-r)?) / (r * r)))
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::material::MaterialTensor;

    #[test]
    fn zero_point_is_zero() {
        let plate = Plate::new(Grid::square(7).unwrap(), MaterialTensor::isotropic(1.0, 0.3, 0.1).unwrap()).unwrap();
        let p = PrimalDualPoint::new(vec![0.0; plate.n()], SymTensor2Field::zeros(plate.grid.n_tri()), 1.0);
        let t = j3_terms(&plate, &p, &Loads::zeros(plate.n())).unwrap();
        assert_eq!(t.total(), 0.0);
        assert_eq!(t.as_array().iter().sum::<f64>(), t.total());
    }
}
