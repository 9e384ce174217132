use nalgebra::{DVector, Matrix2};
use plate_duality::grid::VecField;
use plate_duality::material::{MaterialTensor, Sym2, SymTensor2Field};
use plate_duality::multidual::*;
use plate_duality::primal::*;
use plate_duality::spectrum::LanczosOptions;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::*;

#[test]
fn fk_star_matches_dense_supremum() {
    let p = steel(9);
    let g = &p.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    assert!(fk_star_oracle(&p, 10, &mut rng) <= 1e-9);
    let zero = VecField::zeros(g.n_tri());
    let mut loads = Loads::zeros(p.n());
    loads.p = vec![1.0; p.n()];
    assert_eq!(fk_star(&p, &zero, 1.0, None).unwrap().value, 0.0);
    assert!(fk_star(&p, &zero, 1.0, Some(&loads)).unwrap().value > 0.0);
}

#[test]
fn hk_star_matches_dense_supremum_and_projection() {
    let p = steel(9);
    let g = &p.grid;
    let t = g.n_tri();
    let gd = dense_gradient(&p);
    let a = g.tri_area();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    assert!(hk_star_oracle(&p, 10, &mut rng) <= 1e-9);
    // N = 0: (1/2K)·a|ΠQ|² with Π the orthogonal projection onto gradients
    let k = 7.0;
    let q = VecField::from_flat(&rvec(2 * t, 1.0, &mut rng));
    let qv = DVector::from_vec(q.to_flat());
    let coef = (gd.transpose() * &gd).lu().solve(&(gd.transpose() * &qv)).unwrap();
    let proj = &gd * coef;
    let expected = a * proj.norm_squared() / (2.0 * k);
    let got = hk_star(&p, &q, &SymTensor2Field::zeros(t), k).unwrap().value;
    assert!(rel(got, expected) <= 1e-9);
    assert_eq!(hk_star(&p, &VecField::zeros(t), &SymTensor2Field::zeros(t), k).unwrap().value, 0.0);
}

#[test]
fn hk_star_grows_toward_admissibility_boundary() {
    let p = steel(9);
    let t = p.grid.n_tri();
    let k = 1e3;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let q = VecField::from_flat(&rvec(2 * t, 1.0, &mut rng));
    let values: Vec<f64> = [0.5, 0.9, 0.99, 0.999, 0.9999]
        .iter()
        .map(|c| hk_star(&p, &q, &SymTensor2Field::uniform(t, Sym2::IDENTITY.scale(c * k)), k).unwrap().value)
        .collect();
    assert!(values.windows(2).all(|w| w[1] > w[0]), "{values:?}");
    assert!(values[4] > 100.0 * values[0]);
}

#[test]
fn restricted_supremum_is_smaller() {
    let p = steel(9);
    let t = p.grid.n_tri();
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let n = SymTensor2Field::uniform(t, Sym2::new(-2e3, -1e3, 3e2));
    for _ in 0..10 {
        let q = VecField::from_flat(&rvec(2 * t, 1.0, &mut rng));
        let (a, b) = (jhat2(&p, &q, &n, 1e4).unwrap(), jhat1(&p, &q, &n, 1e4).unwrap());
        assert!(a <= b + 1e-12 * b.abs(), "{a} {b}");
        assert!(hk_star(&p, &q, &n, 1e4).unwrap().value <= q_quadratic(&p, &q, &n, 1e4).unwrap() * (1.0 + 1e-12));
    }
}

struct Scenario {
    plate: Plate,
    state: PrimalState,
    loads: Loads,
}

fn small_load(n: usize) -> Scenario {
    let plate = steel(n);
    let mut loads = Loads::zeros(plate.n());
    loads.p = vec![1e3; plate.n()];
    let state = solve_newton(&plate, &loads, NewtonOptions { continuation_steps: 1, ..Default::default() }).unwrap().state;
    Scenario { plate, state, loads }
}

fn compressive(n: usize) -> Scenario {
    let plate = steel(n);
    let loads = manufacture_loads(&plate, &compressive_target(&plate.grid, 1e-7, 1e-4));
    let state = solve_newton(&plate, &loads, NewtonOptions { continuation_steps: 2, ..Default::default() }).unwrap().state;
    Scenario { plate, state, loads }
}

#[test]
fn j1_collapses_to_energy_at_transfer() {
    for sc in [small_load(13), compressive(13)] {
        let (p, s, l) = (&sc.plate, &sc.state, &sc.loads);
        let j = energy(p, s, l);
        let k = default_k0(p, s);
        let (n0, q0) = transfer_k(p, s, k);
        assert!((j1(p, s, &q0, &n0, k, l).unwrap() - j).abs() <= 1e-9 * (1.0 + j.abs()));
        // ∂J₁/∂Q = X⁻¹Q₀ − ∇w₀ vanishes pointwise
        let gw = p.grid.gradient_interior(&s.w);
        let x = shifted(&n0, k);
        let d = q0.map(|t, v| x.get(t).inverse().unwrap().apply(v)).sub(&gw);
        assert!(d.max_abs() <= 1e-12 * gw.max_abs());
        assert!((jhat_u(p, s, &n0, l) - j).abs() <= 1e-10 * (1.0 + j.abs()));
        assert!((jhat_star(p, &q0, &n0, k, l).unwrap() - j).abs() <= 1e-8 * (1.0 + j.abs()));
    }
}

#[test]
fn jhat_u_supremum_over_stress_is_energy() {
    let p = steel(9);
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let m = p.n();
    let mut loads = Loads::zeros(m);
    loads.p = rvec(m, 1e3, &mut rng);
    loads.p1 = rvec(m, 1e3, &mut rng);
    for _ in 0..5 {
        let s = PrimalState { u1: rvec(m, 1e-6, &mut rng), u2: rvec(m, 1e-6, &mut rng), w: rvec(m, 1e-3, &mut rng) };
        let n = membrane_stress(&p, &s);
        let j = energy(&p, &s, &loads);
        assert!((jhat_u(&p, &s, &n, &loads) - j).abs() <= 1e-10 * (1.0 + j.abs()));
        let dn = SymTensor2Field::uniform(n.len(), Sym2::new(1e2, -3e1, 2e1));
        assert!(jhat_u(&p, &s, &n.zip_map(&dn, |a, b| a.add(b)), &loads) < jhat_u(&p, &s, &n, &loads));
    }
}

#[test]
fn pointwise_supremum_closure_and_hessian() {
    let mat = MaterialTensor::isotropic(2.1e11, 0.3, 0.01).unwrap();
    let (hbar, h) = (mat.membrane_inv.0, mat.membrane.0);
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for _ in 0..10 {
        let k = 10f64.powf(rng.gen_range(4.0..6.0));
        let q = [rng.gen_range(-1.0..1.0) * 1e-4 * k, rng.gen_range(-1.0..1.0) * 1e-4 * k];
        let e = Sym2::new(rng.gen_range(-1e-7..1e-7), rng.gen_range(-1e-7..1e-7), rng.gen_range(-1e-7..1e-7));
        let sup = point_sup(q, e, k, &hbar, &h);
        assert!(sup.residual <= 1e-9 && !sup.fallback, "{sup:?}");
        // Hessian in Q against second differences of the supremum value
        let hq = q_hessian(q, sup.n, k, &hbar);
        let step = 1e-3 * q[0].abs().max(q[1].abs());
        let f = |dq: [f64; 2]| point_sup([q[0] + dq[0], q[1] + dq[1]], e, k, &hbar, &h).value;
        let mut fd = Matrix2::zeros();
        for i in 0..2 {
            for j in 0..2 {
                let mut a = [0.0; 2];
                let mut b = [0.0; 2];
                a[i] += step;
                b[j] += step;
                let pp = f([a[0] + b[0], a[1] + b[1]]);
                let pm = f([a[0] - b[0], a[1] - b[1]]);
                let mp = f([-a[0] + b[0], -a[1] + b[1]]);
                let mm = f([-a[0] - b[0], -a[1] - b[1]]);
                fd[(i, j)] = (pp - pm - mp + mm) / (4.0 * step * step);
            }
        }
        assert!((fd - hq).norm() <= 1e-5 * hq.norm(), "{fd} {hq}");
    }
}

#[test]
fn hessian_remainder_decays_like_inverse_square() {
    let sc = small_load(17);
    let sweep = k_sweep(&sc.plate, &sc.state, default_k0(&sc.plate, &sc.state), 6);
    assert!((-2.3..=-1.7).contains(&sweep.slope), "{sweep:?}");
    assert!(sweep.passing_k.is_some());
    assert!(sweep.points.iter().all(|p| p.hess_min > 0.0));
}

#[test]
fn recovered_deflection_is_independent_of_k() {
    let sc = small_load(13);
    let wmax = sc.state.w.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let k0 = default_k0(&sc.plate, &sc.state);
    for i in 0..5 {
        let k = k0 * 2f64.powi(i);
        let (_, q0) = transfer_k(&sc.plate, &sc.state, k);
        let w = fk_star(&sc.plate, &q0, k, Some(&sc.loads)).unwrap().w;
        let err = w.iter().zip(&sc.state.w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-9 * wmax);
    }
}

#[test]
fn small_load_is_case_one_with_zero_gap() {
    let sc = small_load(17);
    let (p, s, l) = (&sc.plate, &sc.state, &sc.loads);
    let cfg = MultiDualConfig::new(default_k0(p, s)).unwrap();
    let r = classify(p, s, &cfg, l, LanczosOptions::default()).unwrap();
    assert_eq!(r.case_tag, CaseTag::Min, "{r:?}");
    assert!(r.hess_min > 0.0 && r.estar && r.fallbacks == 0);
    let scale = 1.0 + r.energy.abs();
    assert!(r.chain_residual.abs() <= 1e-8 * scale);
    assert!(r.j1_residual.abs() <= 1e-9 * scale);
    assert!(r.closure_residual <= 1e-9);
    assert!(r.sup_mismatch <= 1e-9);
    assert!(!r.dminus && !r.case3_disagreement);
}

#[test]
fn case_one_sampled_extremality() {
    let sc = small_load(9);
    let (p, s, l) = (&sc.plate, &sc.state, &sc.loads);
    let k = default_k0(p, s);
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let (lo, _) = sample_energy(p, s, l, 1e-3, 200, &mut rng);
    assert!(lo >= 0.0);
    let j = energy(p, s, l).abs();
    let dual = sample_jtilde_k(p, s, k, l, 1e-3, 20, &mut rng).unwrap();
    assert!(dual >= -1e-12 * j, "{dual}");
}

#[test]
fn j2_is_convex_along_segments_when_dplus_holds() {
    let sc = small_load(9);
    let (p, s, l) = (&sc.plate, &sc.state, &sc.loads);
    let k = default_k0(p, s);
    let (n0, _) = transfer_k(p, s, k);
    assert!(dplus_min_eig(p, &n0, k, LanczosOptions::default()).unwrap() > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let lo = j2_segment_convexity(p, s, k, l, 100, 1e-2, &mut rng).unwrap();
    assert!(lo >= -1e-8 * (1.0 + energy(p, s, l).abs()), "{lo}");
}

#[test]
fn stationarity_of_the_case_three_functional() {
    let sc = compressive(9);
    let (p, s, l) = (&sc.plate, &sc.state, &sc.loads);
    let g = &p.grid;
    let k = default_k0(p, s);
    let (n0, q0) = transfer_k(p, s, k);
    let phi = |q: &VecField, n: &SymTensor2Field, u1: &[f64], u2: &[f64]| {
        let (d1, d2) = g.divergence_tensor(n);
        let r1: Vec<f64> = d1.iter().zip(&l.p1).map(|(a, b)| a + b).collect();
        let r2: Vec<f64> = d2.iter().zip(&l.p2).map(|(a, b)| a + b).collect();
        jhat_star(p, q, n, k, l).unwrap() - g.inner(&r1, u1) - g.inner(&r2, u2)
    };
    let base_scale = energy(p, s, l).abs() + 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..5 {
        let dq = VecField::from_flat(&rvec(2 * g.n_tri(), q0.max_abs(), &mut rng));
        let dn: SymTensor2Field = (0..g.n_tri())
            .map(|_| Sym2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect::<SymTensor2Field>()
            .map(|t| t.scale(n0.max_abs()));
        let umax = s.u1.iter().chain(&s.u2).fold(0.0f64, |a, b| a.max(b.abs()));
        let (du1, du2) = (rvec(p.n(), umax, &mut rng), rvec(p.n(), umax, &mut rng));
        let h = 1e-4;
        let at = |t: f64| {
            let u1: Vec<f64> = s.u1.iter().zip(&du1).map(|(a, b)| a + t * b).collect();
            let u2: Vec<f64> = s.u2.iter().zip(&du2).map(|(a, b)| a + t * b).collect();
            phi(&q0.add(&dq.scale(t)), &n0.zip_map(&dn, |a, b| a.add(b.scale(t))), &u1, &u2)
        };
        let d = (at(h) - at(-h)) / (2.0 * h);
        assert!(d.abs() <= 1e-6 * base_scale, "{d}");
    }
}

#[test]
fn compressive_point_is_case_one_and_case_three_is_out_of_reach() {
    let sc = compressive(13);
    let (p, s, l) = (&sc.plate, &sc.state, &sc.loads);
    let cfg = MultiDualConfig::new(default_k0(p, s)).unwrap();
    let r = classify(p, s, &cfg, l, LanczosOptions::default()).unwrap();
    assert_eq!(r.case_tag, CaseTag::Min);
    assert!(r.dminus_max_eig > 0.0);
    assert!(r.jhat_star_residual.abs() <= 1e-8 * (1.0 + r.energy.abs()));
}
