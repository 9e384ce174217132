//! Scenario pipeline: solve, transfer, membership, duality checks, reports.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EpsilonPolicy, LoadSpec, ScenarioConfig, Target};
use crate::dual1::{auto_epsilon, epsilon_range, fstar, jstar, jtilde, membership, transfer, weak_duality_sample};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::gradcheck::{gradient_check, GradCheck};
use crate::grid::{Grid, VecField};
use crate::material::{MaterialTensor, SymTensor2Field};
use crate::multidual::{
    classify, default_k0, k_point, k_sweep, sample_case3, sample_energy, sample_jtilde_k, transfer_k, CaseTag,
    MultiDualConfig,
};
use crate::primal::{
    bump, compressive_target, energy, manufacture_loads, membrane_strain, membrane_stress, solve_newton, Loads,
    NewtonOptions, Plate, PrimalState, TraceRow,
};
use crate::primal_dual::{j3_local_concavity, j3_stationarity, j3_terms, PrimalDualPoint, Probe};
use crate::spectrum::LanczosOptions;

/// Whether every enabled check passed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    fn from_checks(checks: &[Check]) -> Self {
        if checks.iter().all(|c| c.pass) {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
    pub note: String,
}

impl Check {
    fn le(name: &'static str, value: f64, limit: f64) -> Self {
        Check { name, value, limit, pass: value <= limit, note: String::new() }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    fn fail(name: &'static str, note: impl Into<String>) -> Self {
        Check { name, value: f64::NAN, limit: f64::NAN, pass: false, note: note.into() }
    }
}

/// One row of `report.csv`. The column set is fixed; empty cells mean the
/// quantity was not computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub seed: u64,
    pub nx: usize,
    pub ny: usize,
    pub load_scale: f64,
    pub load_norm: f64,
    pub newton_steps: usize,
    pub residual_norm: f64,
    pub energy: f64,
    pub epsilon: f64,
    pub epsilon_lo: f64,
    pub epsilon_hi: f64,
    pub in_bstar: bool,
    pub in_cstar: bool,
    pub in_astar: bool,
    pub k_min_eig: f64,
    pub jhat_min: f64,
    pub equilibrium_residual: f64,
    pub fstar: Option<f64>,
    pub jtilde: Option<f64>,
    pub jstar: Option<f64>,
    pub gap: Option<f64>,
    pub gap_jstar: Option<f64>,
    pub j3: Option<f64>,
    pub j3_gap: Option<f64>,
    pub stationarity_w: Option<f64>,
    pub stationarity_n: Option<f64>,
    pub concavity_max: Option<f64>,
    pub weak_comparisons: Option<usize>,
    pub weak_violations: Option<usize>,
    pub weak_max_excess: Option<f64>,
    pub case: Option<String>,
    pub k: Option<f64>,
    pub hess_min: Option<f64>,
    pub hess_max: Option<f64>,
    pub bstar4: Option<bool>,
    pub cstar4: Option<bool>,
    pub dplus: Option<bool>,
    pub dminus: Option<bool>,
    pub dplus_min_eig: Option<f64>,
    pub dminus_max_eig: Option<f64>,
    pub j1_residual: Option<f64>,
    pub jhat_star_residual: Option<f64>,
    pub chain_residual: Option<f64>,
    pub closure_residual: Option<f64>,
    pub fallbacks: Option<usize>,
    pub case3_disagreement: Option<bool>,
    pub k_remainder: Option<f64>,
    pub k_slope: Option<f64>,
    pub k_exact: Option<bool>,
    pub k_passing: Option<f64>,
    pub extremality_lo: Option<f64>,
    pub extremality_hi: Option<f64>,
    pub checks_failed: usize,
    pub pass: bool,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub row: ReportRow,
    pub checks: Vec<Check>,
    pub trace: Vec<TraceRow>,
    pub plate: Plate,
    pub loads: Loads,
    pub state: PrimalState,
    pub n0: SymTensor2Field,
    pub zstar: VecField,
    pub q: VecField,
    pub q_k: Option<VecField>,
    pub cfg: ScenarioConfig,
}

impl RunOutput {
    pub fn outcome(&self) -> Outcome {
        Outcome::from_checks(&self.checks)
    }
}

pub fn build_plate(cfg: &ScenarioConfig) -> Result<Plate> {
    let g = cfg.grid;
    let m = cfg.material;
    let grid = Grid::new(g.nx, g.ny, g.lx, g.ly).map_err(|e| Error::Config(e.to_string()))?;
    let mat = MaterialTensor::isotropic(m.youngs, m.poisson, m.thickness).map_err(|e| Error::Config(e.to_string()))?;
    Plate::new(grid, mat)
}

#[derive(Deserialize)]
struct LoadRecord {
    i: usize,
    j: usize,
    p: f64,
    p1: f64,
    p2: f64,
}

fn read_load_csv(grid: &Grid, path: &Path) -> Result<Loads> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let n = grid.n_interior();
    let mut loads = Loads::zeros(n);
    let mut seen = vec![false; n];
    for rec in rd.deserialize() {
        let r: LoadRecord = rec.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let q = grid
            .interior_index(r.i, r.j)
            .ok_or_else(|| Error::Config(format!("{}: ({}, {}) is not an interior node", path.display(), r.i, r.j)))?;
        if std::mem::replace(&mut seen[q], true) {
            return Err(Error::Config(format!("{}: node ({}, {}) listed twice", path.display(), r.i, r.j)));
        }
        loads.p[q] = r.p;
        loads.p1[q] = r.p1;
        loads.p2[q] = r.p2;
    }
    if let Some(q) = seen.iter().position(|s| !s) {
        let (i, j) = grid.ij(grid.interior_node(q));
        return Err(Error::Config(format!("{}: node ({i}, {j}) missing", path.display())));
    }
    Ok(loads)
}

/// Loads of the scenario, already multiplied by `load_scale`.
pub fn build_loads(cfg: &ScenarioConfig, plate: &Plate) -> Result<Loads> {
    let g = &plate.grid;
    let loads = match &cfg.loads {
        LoadSpec::Zero {} => Loads::zeros(plate.n()),
        LoadSpec::Expression { p, p1, p2 } => {
            let field = |e: &Option<String>| -> Result<Vec<f64>> {
                match e {
                    None => Ok(vec![0.0; plate.n()]),
                    Some(s) => {
                        let ex: Expr = s.parse().map_err(|err| Error::Config(format!("load expression \"{s}\": {err}")))?;
                        Ok(g.interior_fn(|x, y| ex.eval(x, y)))
                    }
                }
            };
            Loads { p: field(p)?, p1: field(p1)?, p2: field(p2)? }
        }
        LoadSpec::Csv { path } => read_load_csv(g, path)?,
        LoadSpec::Manufactured { target, c, amplitude } => {
            let t = match target {
                Target::Compressive => compressive_target(g, *c, *amplitude),
                Target::Bump => PrimalState { w: bump(g, *amplitude), ..PrimalState::zeros(plate.n()) },
            };
            manufacture_loads(plate, &t)
        }
    };
    let all = loads.p.iter().chain(&loads.p1).chain(&loads.p2);
    if let Some(v) = all.clone().find(|v| !v.is_finite()) {
        return Err(Error::Config(format!("load evaluates to {v}")));
    }
    Ok(loads.scaled(cfg.load_scale))
}

fn l2_tri(g: &Grid, f: &SymTensor2Field) -> f64 {
    (g.tri_area() * f.iter().map(|t| t.ddot(t)).sum::<f64>()).sqrt()
}

/// Runs the full pipeline; writes nothing.
pub fn run_pipeline(cfg: &ScenarioConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let plate = build_plate(cfg)?;
    let g = &plate.grid;
    let loads = build_loads(cfg, &plate)?;
    let tol = cfg.tolerances;
    let newton = solve_newton(
        &plate,
        &loads,
        NewtonOptions {
            tol: tol.newton_tol,
            max_iter: cfg.solver.max_iter,
            continuation_steps: cfg.solver.continuation_steps,
            damping: 1.0,
        },
    )?;
    let s = newton.state;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let opts = LanczosOptions { seed: cfg.seed ^ LanczosOptions::default().seed, ..Default::default() };
    let j = energy(&plate, &s, &loads);
    let scale = 1.0 + j.abs();
    let mut checks = Vec::new();

    // first duality principle
    let n0 = membrane_stress(&plate, &s);
    let (eps_lo, eps_hi) = epsilon_range(&plate, &n0, opts);
    let eps = match cfg.epsilon {
        EpsilonPolicy::Auto => auto_epsilon(&plate, &n0, opts),
        EpsilonPolicy::Fixed(e) => e,
    };
    let mem = membership(&plate, &n0, &loads, eps, tol.ctol, opts);
    let d = transfer(&plate, &s, eps);
    let fs = fstar(&plate, &d.zstar, &d.n, eps).ok();
    let jt = jtilde(&plate, &d.q, &d.n, eps, &loads).ok().map(|r| r.value);
    let js = jstar(&plate, &d, &loads).ok();
    let gap = jt.map(|v| (v - j).abs());
    let gap_js = js.map(|v| (v - j).abs());
    if cfg.checks.gap {
        let limit = tol.gap_tol * scale;
        checks.push(match (mem.in_astar, gap, gap_js) {
            (true, Some(a), Some(b)) => Check::le("zero_gap", a.max(b), limit),
            (false, ..) => Check::fail("zero_gap", format!(
                "N0 not in A* (B*: {}, C*: {}); the zero-gap statement does not apply",
                mem.in_bstar, mem.in_cstar
            )),
            _ => Check::fail("zero_gap", "dual functional undefined at the transferred point"),
        });
    }

    let mut weak = None;
    if cfg.checks.weak_duality {
        let sp = cfg.sampling;
        let r = weak_duality_sample(
            &plate, &s, &loads, eps, sp.weak_states, sp.weak_pairs, tol.weak_tol * scale, tol.ctol, opts, &mut rng,
        );
        checks.push(match &r {
            Ok(w) => Check::le("weak_duality", w.violations as f64, 0.0)
                .with_note(format!("{} comparisons, max excess {:e}", w.comparisons, w.max_excess)),
            Err(e) => Check::fail("weak_duality", e.to_string()),
        });
        weak = r.ok();
    }

    // primal-dual functional
    let mut pd = (None, None, None, None, None);
    if cfg.checks.primal_dual {
        let point = PrimalDualPoint::new(s.w.clone(), n0.clone(), eps);
        let terms = j3_terms(&plate, &point, &loads)?;
        let j3v = terms.total();
        let st = j3_stationarity(&plate, &point, (&s.u1, &s.u2), &loads, 10, &mut rng)?;
        let wnorm = g.inner(&s.w, &s.w).sqrt();
        let big = terms.as_array().iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let rel_w = if wnorm > 0.0 && big > 0.0 { st.w_block * wnorm / big } else { st.w_block };
        let gnorm = l2_tri(g, &membrane_strain(&plate, &s));
        let rel_n = if gnorm > 0.0 { st.n_block / gnorm } else { st.n_block };
        let conc = j3_local_concavity(&plate, &point, &loads, Probe::Joint, cfg.sampling.n_dirs, 1e-2, &mut rng)?;
        checks.push(Check::le("j3_equality", (j3v - j).abs(), tol.gap_tol * scale));
        checks.push(Check::le("j3_stationarity", rel_w.max(rel_n), tol.stationarity_tol));
        checks.push(Check::le("j3_concavity", conc, tol.concavity_tol * scale));
        pd = (Some(j3v), Some((j3v - j).abs()), Some(rel_w), Some(rel_n), Some(conc));
    }

    // multi-duality
    let mut md_row = None;
    let mut q_k = None;
    let mut ksw = None;
    let mut kp = None;
    let mut ext = (None, None);
    if cfg.checks.multidual {
        let md = cfg.multidual;
        let k = md.k.unwrap_or_else(|| default_k0(&plate, &s));
        let mcfg = MultiDualConfig {
            k_shift: k,
            r: md.r,
            r1: md.r1,
            r2: md.r2,
            n_samples: cfg.sampling.n_samples,
            eig_tol: tol.eig_tol,
            ctol: tol.ctol,
        };
        let rep = classify(&plate, &s, &mcfg, &loads, opts)?;
        let sweep = k_sweep(&plate, &s, k, md.k_sweep_len);
        let limit = tol.gap_tol * scale;
        checks.push(if rep.case_tag == CaseTag::Unclassified {
            Check::fail("multidual_case", format!(
                "unclassified: hess_min {:e}, E* {}, D+ {}, D- {}",
                rep.hess_min, rep.estar, rep.dplus, rep.dminus
            ))
        } else {
            Check::le("multidual_case", 0.0, 0.0).with_note(rep.case_tag.as_str())
        });
        if rep.case_tag != CaseTag::Unclassified {
            checks.push(Check::le("multidual_chain", rep.chain_residual.abs(), limit));
        }
        checks.push(Check::le("jhat_star_identity", rep.jhat_star_residual.abs(), limit));
        checks.push(Check {
            name: "k_expansion",
            value: sweep.slope,
            limit: -1.7,
            pass: sweep.exact || sweep.slope_in_band(),
            note: if sweep.exact { "remainder vanishes identically".into() } else { "slope band [-2.3, -1.7]".into() },
        });
        if cfg.checks.extremality {
            let stol = tol.sample_tol * scale;
            match rep.case_tag {
                CaseTag::Min => {
                    let (lo, hi) = sample_energy(&plate, &s, &loads, md.r, mcfg.n_samples, &mut rng);
                    checks.push(Check::le("extremality", -lo, stol).with_note("J(u) - J(u0) >= 0 on B_r(u0)"));
                    ext = (Some(lo), Some(hi));
                }
                CaseTag::SaddleQualified => {
                    let lo = sample_jtilde_k(&plate, &s, k, &loads, md.r2, mcfg.n_samples, &mut rng)?;
                    checks.push(Check::le("extremality", -lo, stol).with_note("dual infimum attained at Q0"));
                    ext = (Some(lo), None);
                }
                CaseTag::Max => {
                    let (su, sq) = sample_case3(&plate, &s, &mcfg, &loads, &mut rng)?;
                    checks.push(Check::le("extremality", (su - sq).abs(), 1e-6 * scale).with_note("sampled suprema agree"));
                    ext = (Some(su), Some(sq));
                }
                CaseTag::Unclassified => {}
            }
        }
        q_k = Some(transfer_k(&plate, &s, k).1);
        kp = Some(k_point(&plate, &s, k));
        ksw = Some(sweep);
        md_row = Some(rep);
    }

    let failed = checks.iter().filter(|c| !c.pass).count();
    let last = newton.trace.last();
    let row = ReportRow {
        name: cfg.name.clone(),
        seed: cfg.seed,
        nx: cfg.grid.nx,
        ny: cfg.grid.ny,
        load_scale: cfg.load_scale,
        load_norm: loads.norm(g),
        newton_steps: newton.trace.len(),
        residual_norm: last.map_or(0.0, |t| t.residual_norm),
        energy: j,
        epsilon: eps,
        epsilon_lo: eps_lo,
        epsilon_hi: eps_hi,
        in_bstar: mem.in_bstar,
        in_cstar: mem.in_cstar,
        in_astar: mem.in_astar,
        k_min_eig: mem.k_min_eig,
        jhat_min: mem.jhat_min,
        equilibrium_residual: mem.equilibrium_residual,
        fstar: fs,
        jtilde: jt,
        jstar: js,
        gap,
        gap_jstar: gap_js,
        j3: pd.0,
        j3_gap: pd.1,
        stationarity_w: pd.2,
        stationarity_n: pd.3,
        concavity_max: pd.4,
        weak_comparisons: weak.map(|w| w.comparisons),
        weak_violations: weak.map(|w| w.violations),
        weak_max_excess: weak.map(|w| w.max_excess),
        case: md_row.as_ref().map(|r| r.case_tag.as_str().to_string()),
        k: md_row.as_ref().map(|r| r.k),
        hess_min: md_row.as_ref().map(|r| r.hess_min),
        hess_max: md_row.as_ref().map(|r| r.hess_max),
        bstar4: md_row.as_ref().map(|r| r.bstar4),
        cstar4: md_row.as_ref().map(|r| r.cstar4),
        dplus: md_row.as_ref().map(|r| r.dplus),
        dminus: md_row.as_ref().map(|r| r.dminus),
        dplus_min_eig: md_row.as_ref().map(|r| r.dplus_min_eig),
        dminus_max_eig: md_row.as_ref().map(|r| r.dminus_max_eig),
        j1_residual: md_row.as_ref().map(|r| r.j1_residual),
        jhat_star_residual: md_row.as_ref().map(|r| r.jhat_star_residual),
        chain_residual: md_row.as_ref().map(|r| r.chain_residual),
        closure_residual: md_row.as_ref().map(|r| r.closure_residual),
        fallbacks: md_row.as_ref().map(|r| r.fallbacks),
        case3_disagreement: md_row.as_ref().map(|r| r.case3_disagreement),
        k_remainder: kp.map(|p| p.remainder),
        k_slope: ksw.as_ref().map(|s| s.slope),
        k_exact: ksw.as_ref().map(|s| s.exact),
        k_passing: ksw.as_ref().and_then(|s| s.passing_k),
        extremality_lo: ext.0,
        extremality_hi: ext.1,
        checks_failed: failed,
        pass: failed == 0,
    };
    Ok(RunOutput {
        row,
        checks,
        trace: newton.trace,
        plate,
        loads,
        state: s,
        n0,
        zstar: d.zstar,
        q: d.q,
        q_k,
        cfg: cfg.clone(),
    })
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
    rd.deserialize().map(|r| r.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut s = String::from("step,load_fraction,newton_iter,residual_norm,energy\n");
    for t in trace {
        writeln!(s, "{},{:e},{},{:e},{:e}", t.step, t.load_fraction, t.newton_iter, t.residual_norm, t.energy).unwrap();
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Human-readable summary of a run.
pub fn summary(out: &RunOutput) -> String {
    let c = &out.cfg;
    let r = &out.row;
    let t = c.tolerances;
    let mut s = String::new();
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6e}"));
    writeln!(s, "scenario {} (seed {})", c.name, c.seed).unwrap();
    writeln!(s, "grid {}x{} on {} x {}", c.grid.nx, c.grid.ny, c.grid.lx, c.grid.ly).unwrap();
    writeln!(
        s,
        "material E = {:e}, nu = {}, t = {:e}; load scale {}",
        c.material.youngs, c.material.poisson, c.material.thickness, c.load_scale
    )
    .unwrap();
    writeln!(
        s,
        "tolerances newton {:e}, gap {:e}, ctol {:e}, eig {:e}, weak {:e}, stationarity {:e}, concavity {:e}, sample {:e}",
        t.newton_tol, t.gap_tol, t.ctol, t.eig_tol, t.weak_tol, t.stationarity_tol, t.concavity_tol, t.sample_tol
    )
    .unwrap();
    writeln!(s).unwrap();
    writeln!(s, "J(u0)        {:.12e}", r.energy).unwrap();
    writeln!(s, "epsilon      {:.6e} in ({:.6e}, {:.6e})", r.epsilon, r.epsilon_lo, r.epsilon_hi).unwrap();
    writeln!(s, "membership   B* {}  C* {}  A* {}", r.in_bstar, r.in_cstar, r.in_astar).unwrap();
    writeln!(s, "J~*(Q0,N0)   {}   gap {}", opt(r.jtilde), opt(r.gap)).unwrap();
    writeln!(s, "J3(w0,N0)    {}   gap {}", opt(r.j3), opt(r.j3_gap)).unwrap();
    if let Some(case) = &r.case {
        writeln!(
            s,
            "case         {case} at K = {}; d2J spectrum [{}, {}]",
            opt(r.k),
            opt(r.hess_min),
            opt(r.hess_max)
        )
        .unwrap();
        writeln!(s, "chain        {}   K-sweep slope {}", opt(r.chain_residual), opt(r.k_slope)).unwrap();
    }
    writeln!(s).unwrap();
    for ch in &out.checks {
        let mark = if ch.pass { "PASS" } else { "FAIL" };
        write!(s, "{mark} {:<20} {:.3e} <= {:.3e}", ch.name, ch.value, ch.limit).unwrap();
        if !ch.note.is_empty() {
            write!(s, "  ({})", ch.note).unwrap();
        }
        s.push('\n');
    }
    let failed = out.checks.iter().filter(|c| !c.pass).count();
    writeln!(s, "\n{} of {} checks passed", out.checks.len() - failed, out.checks.len()).unwrap();
    s
}

/// Writes `report.csv`, `trace.csv`, `summary.txt` and `fields/` into `dir`.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<()> {
    let fields = dir.join("fields");
    std::fs::create_dir_all(&fields)?;
    write_report(&dir.join("report.csv"), std::slice::from_ref(&out.row))?;
    write_trace(&dir.join("trace.csv"), &out.trace)?;
    std::fs::write(dir.join("summary.txt"), summary(out))?;

    let g = &out.plate.grid;
    let e = |v: &[f64]| g.embed(v);
    let (u1, u2, w) = (e(&out.state.u1), e(&out.state.u2), e(&out.state.w));
    let (p, p1, p2) = (e(&out.loads.p), e(&out.loads.p1), e(&out.loads.p2));
    g.write_node_csv(
        &fields.join("nodes.csv"),
        &[("u1", &u1), ("u2", &u2), ("w", &w), ("p", &p), ("p1", &p1), ("p2", &p2)],
    )?;
    let comp = |f: fn(&crate::material::Sym2) -> f64| out.n0.iter().map(|t| f(&t)).collect::<Vec<_>>();
    let (nxx, nyy, nxy) = (comp(|t| t.xx), comp(|t| t.yy), comp(|t| t.xy));
    let zero = VecField::zeros(g.n_tri());
    let qk = out.q_k.as_ref().unwrap_or(&zero);
    g.write_tri_csv(
        &fields.join("triangles.csv"),
        &[
            ("n_xx", &nxx),
            ("n_yy", &nyy),
            ("n_xy", &nxy),
            ("zstar_x", &out.zstar.x),
            ("zstar_y", &out.zstar.y),
            ("q_x", &out.q.x),
            ("q_y", &out.q.y),
            ("qk_x", &qk.x),
            ("qk_y", &qk.y),
        ],
    )?;
    Ok(())
}

/// Runs a scenario and writes its outputs to `cfg.output_dir()`.
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let out = run_pipeline(cfg)?;
    write_outputs(&cfg.output_dir(), &out)?;
    Ok(out)
}

/// Gradient and Hessian checks on the scenario's plate and loads. `corrupt`
/// perturbs the analytic residual.
pub fn gradcheck(cfg: &ScenarioConfig, corrupt: bool) -> Result<(GradCheck, Outcome)> {
    cfg.validate()?;
    let plate = build_plate(cfg)?;
    let loads = build_loads(cfg, &plate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = if corrupt { 1e-3 } else { 0.0 };
    let r = gradient_check(&plate, &loads, cfg.sampling.gradcheck_states, c, &mut rng);
    let ok = r.max_err() <= cfg.tolerances.gradcheck_tol;
    Ok((r, if ok { Outcome::Pass } else { Outcome::Fail }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Epsilon,
    K,
    LoadScale,
    Grid,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Epsilon => "epsilon",
            SweepParam::K => "k",
            SweepParam::LoadScale => "load_scale",
            SweepParam::Grid => "grid",
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "epsilon" | "eps" => Ok(SweepParam::Epsilon),
            "k" => Ok(SweepParam::K),
            "load_scale" | "load-scale" => Ok(SweepParam::LoadScale),
            "grid" => Ok(SweepParam::Grid),
            _ => Err(Error::Config(format!("unknown sweep parameter \"{s}\" (epsilon, k, load_scale, grid)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub param: SweepParam,
    pub runs: Vec<RunOutput>,
    /// Checks across the runs, e.g. flatness of the gap in `ε`.
    pub checks: Vec<Check>,
}

impl SweepOutput {
    pub fn outcome(&self) -> Outcome {
        let runs_ok = self.runs.iter().all(|r| r.outcome() == Outcome::Pass);
        if runs_ok && Outcome::from_checks(&self.checks) == Outcome::Pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        self.runs.iter().map(|r| r.row.clone()).collect()
    }
}

/// Scenario variants for each value of the sweep list.
pub fn sweep_configs(cfg: &ScenarioConfig, param: SweepParam) -> Result<Vec<ScenarioConfig>> {
    let l = &cfg.sweep;
    let n = match param {
        SweepParam::Epsilon => l.epsilon.len(),
        SweepParam::K => l.k.len(),
        SweepParam::LoadScale => l.load_scale.len(),
        SweepParam::Grid => l.grid.len(),
    };
    if n == 0 {
        return Err(Error::Config(format!("sweep.{} is empty", param.as_str())));
    }
    (0..n)
        .map(|i| {
            let mut c = cfg.clone();
            match param {
                SweepParam::Epsilon => c.epsilon = EpsilonPolicy::Fixed(l.epsilon[i]),
                SweepParam::K => c.multidual.k = Some(l.k[i]),
                SweepParam::LoadScale => c.load_scale = l.load_scale[i],
                SweepParam::Grid => {
                    c.grid.nx = l.grid[i];
                    c.grid.ny = l.grid[i];
                }
            }
            c.validate()?;
            Ok(c)
        })
        .collect()
}

fn fit_loglog(xy: &[(f64, f64)]) -> f64 {
    let n = xy.len() as f64;
    let pts: Vec<(f64, f64)> = xy.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    sxy / sxx
}

fn sweep_checks(param: SweepParam, runs: &[RunOutput], gap_tol: f64) -> Vec<Check> {
    let rows: Vec<&ReportRow> = runs.iter().map(|r| &r.row).collect();
    let scale = rows.iter().map(|r| 1.0 + r.energy.abs()).fold(0.0, f64::max);
    let span = |v: &[f64]| {
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
        hi - lo
    };
    match param {
        SweepParam::Epsilon => {
            let gaps: Vec<f64> = rows.iter().map(|r| r.jtilde.map_or(f64::NAN, |v| v - r.energy)).collect();
            let fs: Vec<f64> = rows.iter().map(|r| r.fstar.unwrap_or(f64::NAN)).collect();
            let fmax = fs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            let moved = span(&fs) / fmax.max(f64::MIN_POSITIVE);
            vec![
                Check::le("gap_flat_in_epsilon", span(&gaps), gap_tol * scale),
                Check { name: "fstar_moves", value: moved, limit: 1e-2, pass: moved > 1e-2, note: "relative F* spread > 1%".into() },
            ]
        }
        SweepParam::K => {
            let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r.k?, r.k_remainder?))).collect();
            if pts.iter().all(|(k, rem)| rem * k <= 1e-12) {
                vec![Check::le("k_slope", 0.0, 0.0).with_note("remainder vanishes identically")]
            } else if pts.len() < 2 {
                vec![Check::fail("k_slope", "need at least two K values")]
            } else {
                let slope = fit_loglog(&pts);
                vec![Check {
                    name: "k_slope",
                    value: slope,
                    limit: -1.7,
                    pass: (-2.3..=-1.7).contains(&slope),
                    note: "slope band [-2.3, -1.7]".into(),
                }]
            }
        }
        SweepParam::LoadScale => Vec::new(),
        SweepParam::Grid => {
            let gaps: Vec<f64> = rows.iter().map(|r| r.gap.unwrap_or(f64::NAN)).collect();
            let worst = gaps.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
            vec![Check::le("gap_nonincreasing_in_grid", worst, gap_tol * scale).with_note(format!("gaps {}", gaps.iter().map(|g| format!("{g:.3e}")).collect::<Vec<_>>().join(" ")))]
        }
    }
}

/// Runs every value of a sweep list. Each run writes into
/// `<out>/<param>/<index>/`; the rows are merged into
/// `<out>/sweep_<param>.csv`.
pub fn sweep(cfg: &ScenarioConfig, param: SweepParam) -> Result<SweepOutput> {
    let base = cfg.output_dir();
    let cfgs = sweep_configs(cfg, param)?;
    let mut runs = Vec::with_capacity(cfgs.len());
    for (i, c) in cfgs.iter().enumerate() {
        let out = run_pipeline(c)?;
        write_outputs(&base.join(param.as_str()).join(format!("{i:03}")), &out)?;
        runs.push(out);
    }
    let checks = sweep_checks(param, &runs, cfg.tolerances.gap_tol);
    let res = SweepOutput { param, runs, checks };
    std::fs::create_dir_all(&base)?;
    write_report(&base.join(format!("sweep_{}.csv", param.as_str())), &res.rows())?;
    let mut s = String::new();
    for ch in &res.checks {
        let mark = if ch.pass { "PASS" } else { "FAIL" };
        writeln!(s, "{mark} {:<26} {:.3e} vs {:.3e}  {}", ch.name, ch.value, ch.limit, ch.note).unwrap();
    }
    for r in &res.runs {
        writeln!(s, "{} run {}: {} checks failed", if r.row.pass { "PASS" } else { "FAIL" }, r.row.name, r.row.checks_failed)
            .unwrap();
    }
    std::fs::write(base.join(format!("sweep_{}.txt", param.as_str())), s)?;
    Ok(res)
}
