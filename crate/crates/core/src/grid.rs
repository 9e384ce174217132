//! Rectangular grid, clamped-boundary difference operators and their inverses.
//!
//! Nodes are `(i, j)` with `0 <= i < nx`, `0 <= j < ny`; the outer ring is the
//! boundary. Interior unknowns are numbered row-major. First derivatives live
//! on the two triangles of every cell (split along the anti-diagonal), where
//! each component is a centered difference at an edge midpoint. Divergence is
//! defined as the negative weighted adjoint of that gradient, so discrete
//! integration by parts holds to rounding and `div ∘ grad` is the 5-point
//! Dirichlet Laplacian.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::linalg::{BandCholesky, CsrMatrix, TripletBuilder};
use crate::material::{MaterialTensor, Sym2, SymTensor2Field};

/// Per-triangle vector field.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VecField {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl VecField {
    pub fn zeros(n: usize) -> Self {
        VecField {
            x: vec![0.0; n],
            y: vec![0.0; n],
        }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize) -> [f64; 2]) -> Self {
        (0..n).map(f).collect()
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn get(&self, t: usize) -> [f64; 2] {
        [self.x[t], self.y[t]]
    }

    pub fn set(&mut self, t: usize, v: [f64; 2]) {
        self.x[t] = v[0];
        self.y[t] = v[1];
    }

    pub fn iter(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.x.iter().zip(&self.y).map(|(&a, &b)| [a, b])
    }

    pub fn map(&self, f: impl Fn(usize, [f64; 2]) -> [f64; 2]) -> Self {
        self.iter().enumerate().map(|(t, v)| f(t, v)).collect()
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|_, v| [s * v[0], s * v[1]])
    }

    pub fn add(&self, o: &VecField) -> Self {
        self.map(|t, v| [v[0] + o.x[t], v[1] + o.y[t]])
    }

    pub fn sub(&self, o: &VecField) -> Self {
        self.map(|t, v| [v[0] - o.x[t], v[1] - o.y[t]])
    }

    pub fn max_abs(&self) -> f64 {
        self.x.iter().chain(&self.y).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Stacked `[x..., y...]` coordinates.
    pub fn to_flat(&self) -> Vec<f64> {
        self.x.iter().chain(&self.y).copied().collect()
    }

    pub fn from_flat(v: &[f64]) -> Self {
        let n = v.len() / 2;
        VecField {
            x: v[..n].to_vec(),
            y: v[n..].to_vec(),
        }
    }
}

impl FromIterator<[f64; 2]> for VecField {
    fn from_iter<I: IntoIterator<Item = [f64; 2]>>(iter: I) -> Self {
        let mut f = VecField::default();
        for [a, b] in iter {
            f.x.push(a);
            f.y.push(b);
        }
        f
    }
}

/// Second derivatives: `xx`, `yy` at nodes, `xy` at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Curvature {
    pub xx: Vec<f64>,
    pub yy: Vec<f64>,
    pub xy: Vec<f64>,
}

/// One vertex of a triangle with the derivative of the triangle's gradient
/// with respect to that nodal value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriVertex {
    pub node: usize,
    pub dx: f64,
    pub dy: f64,
}

/// Sparse symmetric matrix with a lazily computed Cholesky factor.
#[derive(Debug)]
pub struct LinearOperator {
    matrix: CsrMatrix,
    factor: OnceLock<std::result::Result<BandCholesky, (usize, f64)>>,
}

impl Clone for LinearOperator {
    fn clone(&self) -> Self {
        LinearOperator::new(self.matrix.clone())
    }
}

impl LinearOperator {
    pub fn new(matrix: CsrMatrix) -> Self {
        LinearOperator {
            matrix,
            factor: OnceLock::new(),
        }
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.matvec(x)
    }

    pub fn factor(&self) -> Result<&BandCholesky> {
        self.factor
            .get_or_init(|| {
                self.matrix.cholesky().map_err(|e| match e {
                    Error::NotPositiveDefinite { pivot, value } => (pivot, value),
                    _ => (0, f64::NAN),
                })
            })
            .as_ref()
            .map_err(|&(pivot, value)| Error::NotPositiveDefinite { pivot, value })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.dim(),
                got: rhs.len(),
            });
        }
        Ok(self.factor()?.solve(rhs))
    }
}

#[derive(Debug, Clone)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub hx: f64,
    pub hy: f64,
    tris: Vec<[TriVertex; 3]>,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 5 || ny < 5 {
            return Err(Error::InvalidGrid(format!(
                "need at least 5 nodes per axis, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0) {
            return Err(Error::InvalidGrid(format!("side lengths must be positive, got {lx}x{ly}")));
        }
        let hx = lx / (nx - 1) as f64;
        let hy = ly / (ny - 1) as f64;
        let mut tris = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        let node = |i: usize, j: usize| j * nx + i;
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                tris.push([
                    TriVertex { node: node(i, j), dx: -1.0 / hx, dy: -1.0 / hy },
                    TriVertex { node: node(i + 1, j), dx: 1.0 / hx, dy: 0.0 },
                    TriVertex { node: node(i, j + 1), dx: 0.0, dy: 1.0 / hy },
                ]);
                tris.push([
                    TriVertex { node: node(i + 1, j + 1), dx: 1.0 / hx, dy: 1.0 / hy },
                    TriVertex { node: node(i, j + 1), dx: -1.0 / hx, dy: 0.0 },
                    TriVertex { node: node(i + 1, j), dx: 0.0, dy: -1.0 / hy },
                ]);
            }
        }
        Ok(Grid { nx, ny, lx, ly, hx, hy, tris })
    }

    /// Unit square with `n × n` nodes.
    pub fn square(n: usize) -> Result<Self> {
        Grid::new(n, n, 1.0, 1.0)
    }

    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_interior(&self) -> usize {
        (self.nx - 2) * (self.ny - 2)
    }

    pub fn n_tri(&self) -> usize {
        self.tris.len()
    }

    pub fn n_cells(&self) -> usize {
        (self.nx - 1) * (self.ny - 1)
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    pub fn coords(&self, k: usize) -> (f64, f64) {
        let (i, j) = self.ij(k);
        (i as f64 * self.hx, j as f64 * self.hy)
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        let (i, j) = self.ij(k);
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    pub fn interior_index(&self, i: usize, j: usize) -> Option<usize> {
        (i > 0 && j > 0 && i < self.nx - 1 && j < self.ny - 1)
            .then(|| (j - 1) * (self.nx - 2) + (i - 1))
    }

    fn interior_of_node(&self, k: usize) -> Option<usize> {
        let (i, j) = self.ij(k);
        self.interior_index(i, j)
    }

    pub fn interior_node(&self, p: usize) -> usize {
        let w = self.nx - 2;
        self.node(p % w + 1, p / w + 1)
    }

    /// Quadrature weight of an interior node, `hx·hy`.
    pub fn omega(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn tri_area(&self) -> f64 {
        0.5 * self.hx * self.hy
    }

    /// Trapezoid weight of any node.
    pub fn node_weight(&self, k: usize) -> f64 {
        let (i, j) = self.ij(k);
        let fx = if i == 0 || i == self.nx - 1 { 0.5 } else { 1.0 };
        let fy = if j == 0 || j == self.ny - 1 { 0.5 } else { 1.0 };
        fx * fy * self.omega()
    }

    pub fn tri(&self, t: usize) -> &[TriVertex; 3] {
        &self.tris[t]
    }

    pub fn tri_centroid(&self, t: usize) -> (f64, f64) {
        let (sx, sy) = self.tris[t].iter().fold((0.0, 0.0), |(sx, sy), v| {
            let (x, y) = self.coords(v.node);
            (sx + x, sy + y)
        });
        (sx / 3.0, sy / 3.0)
    }

    /// Points where the two gradient components of triangle `t` are
    /// second-order accurate (edge midpoints).
    pub fn tri_gradient_points(&self, t: usize) -> [(f64, f64); 2] {
        let v = &self.tris[t];
        let (x0, y0) = self.coords(v[0].node);
        let (x1, y1) = self.coords(v[1].node);
        let (x2, y2) = self.coords(v[2].node);
        [(0.5 * (x0 + x1), 0.5 * (y0 + y1)), (0.5 * (x0 + x2), 0.5 * (y0 + y2))]
    }

    pub fn node_fn(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.n_nodes())
            .map(|k| {
                let (x, y) = self.coords(k);
                f(x, y)
            })
            .collect()
    }

    pub fn interior_fn(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.n_interior())
            .map(|p| {
                let (x, y) = self.coords(self.interior_node(p));
                f(x, y)
            })
            .collect()
    }

    /// Interior unknowns to a full node array with zero boundary.
    pub fn embed(&self, interior: &[f64]) -> Vec<f64> {
        assert_eq!(interior.len(), self.n_interior());
        let mut full = vec![0.0; self.n_nodes()];
        for (p, v) in interior.iter().enumerate() {
            full[self.interior_node(p)] = *v;
        }
        full
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        assert_eq!(full.len(), self.n_nodes());
        (0..self.n_interior()).map(|p| full[self.interior_node(p)]).collect()
    }

    /// `⟨a, b⟩ = ω Σ a·b` over interior unknowns.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.omega() * crate::linalg::dot(a, b)
    }

    /// `Σ_t a_t p_t·q_t`.
    pub fn tri_inner(&self, p: &VecField, q: &VecField) -> f64 {
        self.tri_area() * p.iter().zip(q.iter()).map(|(a, b)| a[0] * b[0] + a[1] * b[1]).sum::<f64>()
    }

    /// Gradient of a full node array, one vector per triangle.
    pub fn gradient(&self, w: &[f64]) -> VecField {
        assert_eq!(w.len(), self.n_nodes());
        self.tris
            .iter()
            .map(|tri| {
                tri.iter()
                    .fold([0.0, 0.0], |g, v| [g[0] + v.dx * w[v.node], g[1] + v.dy * w[v.node]])
            })
            .collect()
    }

    /// Gradient of interior unknowns with zero boundary values.
    pub fn gradient_interior(&self, w: &[f64]) -> VecField {
        self.gradient(&self.embed(w))
    }

    /// `div q` at interior nodes, the negative `ω`-weighted adjoint of
    /// [`Grid::gradient_interior`].
    pub fn divergence(&self, q: &VecField) -> Vec<f64> {
        assert_eq!(q.len(), self.n_tri());
        let mut out = vec![0.0; self.n_interior()];
        let s = -self.tri_area() / self.omega();
        for (t, tri) in self.tris.iter().enumerate() {
            for v in tri {
                if let Some(p) = self.interior_of_node(v.node) {
                    out[p] += s * (q.x[t] * v.dx + q.y[t] * v.dy);
                }
            }
        }
        out
    }

    /// Row-wise divergence of a per-triangle tensor field, `(N_{1β,β}, N_{2β,β})`.
    pub fn divergence_tensor(&self, n: &SymTensor2Field) -> (Vec<f64>, Vec<f64>) {
        let r1 = VecField { x: n.xx.clone(), y: n.xy.clone() };
        let r2 = VecField { x: n.xy.clone(), y: n.yy.clone() };
        (self.divergence(&r1), self.divergence(&r2))
    }

    /// `½(∇u + ∇uᵀ)` per triangle for interior unknowns `u1`, `u2`.
    pub fn sym_gradient(&self, u1: &[f64], u2: &[f64]) -> SymTensor2Field {
        let g1 = self.gradient_interior(u1);
        let g2 = self.gradient_interior(u2);
        (0..self.n_tri())
            .map(|t| Sym2::new(g1.x[t], g2.y[t], 0.5 * (g1.y[t] + g2.x[t])))
            .collect()
    }

    /// Second differences of a full node array. Boundary nodes use a mirror
    /// ghost across the boundary, which encodes `∂w/∂n = 0`.
    pub fn curvature(&self, w: &[f64]) -> Curvature {
        assert_eq!(w.len(), self.n_nodes());
        let mut xx = vec![0.0; self.n_nodes()];
        let mut yy = vec![0.0; self.n_nodes()];
        for k in 0..self.n_nodes() {
            for (c, node) in self.xx_stencil(k) {
                xx[k] += c * w[node];
            }
            for (c, node) in self.yy_stencil(k) {
                yy[k] += c * w[node];
            }
        }
        let xy = (0..self.n_cells())
            .map(|c| self.xy_stencil(c).iter().map(|&(s, node)| s * w[node]).sum())
            .collect();
        Curvature { xx, yy, xy }
    }

    fn second_diff(n: usize, i: usize, h: f64) -> [(f64, isize); 3] {
        let h2 = h * h;
        if i == 0 {
            [(-2.0 / h2, 0), (2.0 / h2, 1), (0.0, 0)]
        } else if i == n - 1 {
            [(-2.0 / h2, 0), (2.0 / h2, -1), (0.0, 0)]
        } else {
            [(1.0 / h2, -1), (-2.0 / h2, 0), (1.0 / h2, 1)]
        }
    }

    fn xx_stencil(&self, k: usize) -> impl Iterator<Item = (f64, usize)> + '_ {
        let (i, j) = self.ij(k);
        Self::second_diff(self.nx, i, self.hx)
            .into_iter()
            .filter(|&(c, _)| c != 0.0)
            .map(move |(c, d)| (c, self.node(i.wrapping_add_signed(d), j)))
    }

    fn yy_stencil(&self, k: usize) -> impl Iterator<Item = (f64, usize)> + '_ {
        let (i, j) = self.ij(k);
        Self::second_diff(self.ny, j, self.hy)
            .into_iter()
            .filter(|&(c, _)| c != 0.0)
            .map(move |(c, d)| (c, self.node(i, j.wrapping_add_signed(d))))
    }

    fn xy_stencil(&self, cell: usize) -> [(f64, usize); 4] {
        let (i, j) = (cell % (self.nx - 1), cell / (self.nx - 1));
        let s = 1.0 / (self.hx * self.hy);
        [
            (s, self.node(i + 1, j + 1)),
            (-s, self.node(i + 1, j)),
            (-s, self.node(i, j + 1)),
            (s, self.node(i, j)),
        ]
    }

    /// `Σ_t a_t Gᵀ K_t G` over interior unknowns (weak form, not divided by ω).
    pub fn gradient_form(&self, k: impl Fn(usize) -> Sym2) -> CsrMatrix {
        let a = self.tri_area();
        let mut b = TripletBuilder::new(self.n_interior());
        for (t, tri) in self.tris.iter().enumerate() {
            let kt = k(t);
            for u in tri {
                let Some(p) = self.interior_of_node(u.node) else { continue };
                let ku = kt.apply([u.dx, u.dy]);
                for v in tri {
                    if let Some(q) = self.interior_of_node(v.node) {
                        b.add(p, q, a * (ku[0] * v.dx + ku[1] * v.dy));
                    }
                }
            }
        }
        b.build()
    }

    /// 5-point Dirichlet Laplacian on interior unknowns, assembled as `div ∘ grad`.
    pub fn laplacian_matrix(&self) -> CsrMatrix {
        self.gradient_form(|_| Sym2::IDENTITY).scaled(-1.0 / self.omega())
    }

    pub fn laplacian(&self) -> LinearOperator {
        LinearOperator::new(self.laplacian_matrix())
    }

    /// Negative Laplacian `−∇²`, symmetric positive definite.
    pub fn neg_laplacian(&self) -> LinearOperator {
        LinearOperator::new(self.laplacian_matrix().scaled(-1.0))
    }

    /// Bending operator `w ↦ h_{αβλμ} w_{,αβλμ}` in strong form, assembled as
    /// `(1/ω)·Dᵀ W h D` with `D` the curvature map.
    pub fn assemble_biharmonic(&self, mat: &MaterialTensor) -> Result<LinearOperator> {
        let m = mat.bending.0;
        if m[(0, 2)] != 0.0 || m[(1, 2)] != 0.0 {
            return Err(Error::UnsupportedCoupling(
                "bending tensor couples normal and shear curvature".into(),
            ));
        }
        let n = self.n_interior();
        let inv_omega = 1.0 / self.omega();
        let mut b = TripletBuilder::new(n);
        let interior = |s: Vec<(f64, usize)>| -> Vec<(f64, usize)> {
            s.into_iter()
                .filter_map(|(c, node)| self.interior_of_node(node).map(|p| (c, p)))
                .collect()
        };
        for k in 0..self.n_nodes() {
            let wk = self.node_weight(k) * inv_omega;
            let sx = interior(self.xx_stencil(k).collect());
            let sy = interior(self.yy_stencil(k).collect());
            let parts = [(&sx, 0), (&sy, 1)];
            for (sa, a) in parts {
                for (sb, bi) in parts {
                    let mab = m[(a, bi)];
                    if mab == 0.0 {
                        continue;
                    }
                    for &(ca, p) in sa.iter() {
                        for &(cb, q) in sb.iter() {
                            b.add(p, q, wk * mab * ca * cb);
                        }
                    }
                }
            }
        }
        let wc = self.hx * self.hy * inv_omega * m[(2, 2)] * 2.0;
        for c in 0..self.n_cells() {
            let s = interior(self.xy_stencil(c).to_vec());
            for &(ca, p) in &s {
                for &(cb, q) in &s {
                    b.add(p, q, wc * ca * cb);
                }
            }
        }
        let op = LinearOperator::new(b.build());
        op.factor()
            .map_err(|e| Error::InvalidGrid(format!("biharmonic assembly is singular: {e}")))?;
        Ok(op)
    }

    /// Field dump: one row per node with `i, j, x1, x2` and the named columns.
    pub fn write_node_csv(&self, path: &Path, columns: &[(&str, &[f64])]) -> Result<()> {
        let mut s = String::from("i,j,x1,x2");
        for (name, col) in columns {
            assert_eq!(col.len(), self.n_nodes());
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        for k in 0..self.n_nodes() {
            let (i, j) = self.ij(k);
            let (x, y) = self.coords(k);
            write!(s, "{i},{j},{x:.17e},{y:.17e}").unwrap();
            for (_, col) in columns {
                write!(s, ",{:.17e}", col[k]).unwrap();
            }
            s.push('\n');
        }
        std::fs::write(path, s)?;
        Ok(())
    }

    /// Per-triangle dump: `t, x1, x2` (centroid) and the named columns.
    pub fn write_tri_csv(&self, path: &Path, columns: &[(&str, &[f64])]) -> Result<()> {
        let mut s = String::from("t,x1,x2");
        for (name, col) in columns {
            assert_eq!(col.len(), self.n_tri());
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        for t in 0..self.n_tri() {
            let (x, y) = self.tri_centroid(t);
            write!(s, "{t},{x:.17e},{y:.17e}").unwrap();
            for (_, col) in columns {
                write!(s, ",{:.17e}", col[t]).unwrap();
            }
            s.push('\n');
        }
        std::fs::write(path, s)?;
        Ok(())
    }
}

/// Solves `op · w = rhs` on interior unknowns.
pub fn solve_biharmonic(op: &LinearOperator, rhs: &[f64]) -> Result<Vec<f64>> {
    op.solve(rhs)
}

/// Solves `∇² w = rhs` with `w = 0` on the boundary.
pub fn solve_laplacian(neg_lap: &LinearOperator, rhs: &[f64]) -> Result<Vec<f64>> {
    let neg: Vec<f64> = rhs.iter().map(|v| -v).collect();
    neg_lap.solve(&neg)
}
