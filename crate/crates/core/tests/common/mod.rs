//! Dense oracles and helpers shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2};
use plate_duality::dual1::{fstar, g1star_tilde, g2star};
use plate_duality::grid::{Grid, VecField};
use plate_duality::material::{MaterialTensor, Sym2, SymTensor2Field};
use plate_duality::multidual::{fk_star, hk_star, shifted};
use plate_duality::primal::{compressive_target, manufacture_loads, solve_newton, Loads, NewtonOptions, Plate, PrimalState};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn steel(n: usize) -> Plate {
    Plate::new(Grid::square(n).unwrap(), MaterialTensor::isotropic(2.1e11, 0.3, 0.01).unwrap()).unwrap()
}

/// The manufactured compressive scenario solved by Newton.
pub fn compressive(p: &Plate) -> (PrimalState, Loads) {
    let target = compressive_target(&p.grid, 1e-7, 1e-4);
    let f = manufacture_loads(p, &target);
    let s = solve_newton(p, &f, NewtonOptions { continuation_steps: 2, ..Default::default() }).unwrap().state;
    (s, f)
}

pub fn rvec(n: usize, s: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| s * rng.gen_range(-1.0..1.0)).collect()
}

pub fn rfield(n: usize, s: f64, rng: &mut ChaCha8Rng) -> VecField {
    VecField::from_flat(&rvec(2 * n, s, rng))
}

pub fn rtensor(n: usize, s: f64, rng: &mut ChaCha8Rng) -> SymTensor2Field {
    (0..n).map(|_| Sym2::new(s * rng.gen_range(-1.0..1.0), s * rng.gen_range(-1.0..1.0), s * rng.gen_range(-1.0..1.0))).collect()
}

pub fn mat2(t: Sym2) -> Matrix2<f64> {
    Matrix2::new(t.xx, t.xy, t.xy, t.yy)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

/// Dense gradient matrix `G` (2T × m), column by column.
pub fn dense_gradient(p: &Plate) -> DMatrix<f64> {
    let g = &p.grid;
    let m = p.n();
    let mut d = DMatrix::zeros(2 * g.n_tri(), m);
    for j in 0..m {
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        for (i, v) in g.gradient_interior(&e).to_flat().into_iter().enumerate() {
            d[(i, j)] = v;
        }
    }
    d
}

/// Block-diagonal `diag(K_t)` acting on flat `(x…, y…)` triangle vectors.
pub fn dense_tensor(k: &SymTensor2Field) -> DMatrix<f64> {
    let t = k.len();
    let mut d = DMatrix::zeros(2 * t, 2 * t);
    for i in 0..t {
        let s = k.get(i);
        d[(i, i)] = s.xx;
        d[(i + t, i + t)] = s.yy;
        d[(i, i + t)] = s.xy;
        d[(i + t, i)] = s.xy;
    }
    d
}

/// Maximizes `a(Gw)·Q + ω w·P − ½ wᵀ M w` densely and evaluates the bracket.
pub fn dense_sup(gd: &DMatrix<f64>, m: &DMatrix<f64>, q: &VecField, p: Option<&[f64]>, a: f64, om: f64) -> f64 {
    let qv = DVector::from_vec(q.to_flat());
    let mut lin = gd.transpose() * &qv * a;
    if let Some(p) = p {
        lin += DVector::from_column_slice(p) * om;
    }
    let w = m.clone().lu().solve(&lin).unwrap();
    let mut b = (gd * &w).dot(&qv) * a - 0.5 * w.dot(&(m * &w));
    if let Some(p) = p {
        b += om * w.dot(&DVector::from_column_slice(p));
    }
    b
}

/// `F*` against the triangle-wise maximizer of `⟨v, z⟩ − ½⟨Kv, v⟩`; largest
/// relative error over `n` random inputs.
pub fn fstar_oracle(p: &Plate, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let t = p.grid.n_tri();
    let mut worst = 0.0f64;
    for _ in 0..n {
        let nn = rtensor(t, 1e3, rng);
        let eps = 5e3;
        let z = rfield(t, 1.0, rng);
        let mut sup = 0.0;
        for i in 0..t {
            let k = mat2(nn.get(i)) * -1.0 + Matrix2::identity() * eps;
            let zi = Vector2::new(z.x[i], z.y[i]);
            let v = k.lu().solve(&zi).unwrap();
            assert!((zi - k * v).norm() <= 1e-10 * zi.norm().max(1e-300), "not stationary");
            sup += p.grid.tri_area() * (v.dot(&zi) - 0.5 * v.dot(&(k * v)));
        }
        worst = worst.max(rel(fstar(p, &z, &nn, eps).unwrap(), sup));
    }
    worst
}

/// `G₂*` against a dense solve of its stationarity system.
pub fn g2star_oracle(p: &Plate, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let g = &p.grid;
    let (m, t) = (p.n(), g.n_tri());
    let gd = dense_gradient(p);
    let a = p.bih.matrix().to_dense() * g.omega();
    let mut worst = 0.0f64;
    for _ in 0..n {
        let z = rfield(t, 1.0, rng);
        let q = rfield(t, 1.0, rng);
        let mut loads = Loads::zeros(m);
        loads.p = rvec(m, 1e2, rng);
        let zq = z.add(&q);
        let oracle = dense_sup(&gd, &a, &zq, Some(&loads.p), g.tri_area(), g.omega());
        worst = worst.max(rel(g2star(p, &z, &q, &loads).unwrap(), oracle));
    }
    worst
}

/// `G̃₁*` against the supremum over the split variables `(v₁, v₂)`, solved
/// triangle by triangle.
pub fn g1star_oracle(p: &Plate, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let g = &p.grid;
    let t = g.n_tri();
    let hm = Matrix3::from_fn(|r, c| p.mat.membrane.0[(r, c)]);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let nn = rtensor(t, 1e4, rng);
        let q = rfield(t, 1.0, rng);
        let eps = 3e4;
        let mut sup = 0.0;
        for i in 0..t {
            let ni = nn.get(i);
            let kk = mat2(ni) * -1.0 + Matrix2::identity() * eps;
            let nk = mat2(ni) + kk;
            let qi = Vector2::new(q.x[i], q.y[i]);
            let v2 = nk.lu().solve(&(-qi)).unwrap();
            let gam = Sym2::from_mandel(hm.lu().solve(&ni.mandel()).unwrap());
            let half = Sym2::outer([v2[0], v2[1]], [v2[0], v2[1]]).scale(0.5);
            let v1 = gam.sub(half);
            let strain = v1.add(half);
            let g1 = 0.5 * strain.mandel().dot(&(hm * strain.mandel()));
            sup += g.tri_area() * (-v2.dot(&qi) + v1.ddot(ni) - g1 - 0.5 * v2.dot(&(kk * v2)));
        }
        worst = worst.max(rel(g1star_tilde(p, &q, &nn, eps).unwrap(), sup));
    }
    worst
}

/// `F_K*`, with and without the transverse load, against dense solves.
pub fn fk_star_oracle(p: &Plate, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let g = &p.grid;
    let gd = dense_gradient(p);
    let (a, om) = (g.tri_area(), g.omega());
    let mut worst = 0.0f64;
    for _ in 0..n {
        let k = 10f64.powf(rng.gen_range(2.0..6.0));
        let q = rfield(g.n_tri(), 1.0, rng);
        let mut loads = Loads::zeros(p.n());
        loads.p = rvec(p.n(), 1e2, rng);
        let mm = p.bih.matrix().to_dense() * om + gd.transpose() * &gd * (a * k);
        let plain = dense_sup(&gd, &mm, &q, None, a, om);
        let hat = dense_sup(&gd, &mm, &q, Some(&loads.p), a, om);
        worst = worst
            .max(rel(fk_star(p, &q, k, None).unwrap().value, plain))
            .max(rel(fk_star(p, &q, k, Some(&loads)).unwrap().value, hat));
    }
    worst
}

/// `H_K*` against a dense solve with `X = −N + KI` assembled blockwise.
pub fn hk_star_oracle(p: &Plate, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let g = &p.grid;
    let t = g.n_tri();
    let gd = dense_gradient(p);
    let (a, om) = (g.tri_area(), g.omega());
    let mut worst = 0.0f64;
    for _ in 0..n {
        let k = 1e4;
        let nn: SymTensor2Field = (0..t)
            .map(|_| Sym2::new(rng.gen_range(-3e3..3e3), rng.gen_range(-3e3..3e3), rng.gen_range(-1e3..1e3)))
            .collect();
        let q = rfield(t, 1.0, rng);
        let x = dense_tensor(&shifted(&nn, k));
        let mm = gd.transpose() * x * &gd * a;
        let oracle = dense_sup(&gd, &mm, &q, None, a, om);
        worst = worst.max(rel(hk_star(p, &q, &nn, k).unwrap().value, oracle));
    }
    worst
}
