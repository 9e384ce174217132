//! Finite-difference checks of `residual` against `energy` and of
//! `hessian_operator` against `residual`.

use rand::Rng;

use crate::primal::{energy, hessian_operator, residual, Loads, Plate, PrimalState};

/// Step of the centered differences, relative to the direction scale.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub states: usize,
    /// Largest `|⟨R, d⟩ − FD| / max(|⟨R, d⟩|, |FD|, |⟨Hd, d⟩|)` over the states.
    /// The curvature term keeps the ratio meaningful where the gradient
    /// vanishes, as at the unloaded zero state.
    pub residual_err: f64,
    /// Largest `‖Hd − FD‖_∞ / ‖Hd‖_∞` over the states.
    pub hessian_err: f64,
}

impl GradCheck {
    pub fn max_err(&self) -> f64 {
        self.residual_err.max(self.hessian_err)
    }
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    let s = a.abs().max(b.abs()).max(floor.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// Random clamped state with deflections of order `ws` and in-plane
/// displacements of order `us`.
pub fn random_state(n: usize, ws: f64, us: f64, rng: &mut impl Rng) -> PrimalState {
    let mut v = |s: f64| (0..n).map(|_| s * rng.gen_range(-1.0..1.0)).collect::<Vec<_>>();
    PrimalState { u1: v(us), u2: v(us), w: v(ws) }
}

/// Checks the zero state followed by `n_random` random states.
///
/// Deflections are drawn at the scale of the thickness and in-plane
/// displacements at `t²/lx`, where both energy parts are comparable.
/// `corrupt` scales the analytic bending residual by `1 + corrupt`; it exists
/// to check that the harness fails when it should.
pub fn gradient_check(plate: &Plate, loads: &Loads, n_random: usize, corrupt: f64, rng: &mut impl Rng) -> GradCheck {
    let g = &plate.grid;
    let n = plate.n();
    let ws = plate.mat.thickness;
    let us = ws * ws / g.lx;
    let analytic = |s: &PrimalState| {
        let mut r = residual(plate, s, loads).as_state();
        r.w.iter_mut().for_each(|x| *x *= 1.0 + corrupt);
        r
    };
    let mut out = GradCheck { states: 0, residual_err: 0.0, hessian_err: 0.0 };
    let states = std::iter::once(PrimalState::zeros(n))
        .chain((0..n_random).map(|_| random_state(n, ws, us, rng)))
        .collect::<Vec<_>>();
    for s in &states {
        let d = random_state(n, ws, us, rng);
        let t = FD_STEP;
        let exact = g.inner(&analytic(s).to_flat(), &d.to_flat());
        let fd = (energy(plate, &s.axpy(t, &d), loads) - energy(plate, &s.axpy(-t, &d), loads)) / (2.0 * t);
        let hd = hessian_operator(plate, s).matvec(&d.to_flat());
        out.residual_err = out.residual_err.max(rel(exact, fd, g.inner(&hd, &d.to_flat())));

        let rp = analytic(&s.axpy(t, &d)).to_flat();
        let rm = analytic(&s.axpy(-t, &d)).to_flat();
        let scale = hd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = hd
            .iter()
            .zip(rp.iter().zip(&rm))
            .map(|(a, (p, m))| (a - (p - m) / (2.0 * t)).abs())
            .fold(0.0, f64::max);
        out.hessian_err = out.hessian_err.max(if scale == 0.0 { err } else { err / scale });
        out.states += 1;
    }
    out
}
