//! Independent optimizer for the welfare problems.
//!
//! The strictly convex quadratic basic problem is solved by bisection on the
//! uniform price. Everything else runs a constant-step primal-dual iteration
//! on the augmented Lagrangian from several random starts, followed by an
//! active-set Newton polish on the KKT system; the starts must agree.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Constraints, KktPoint, WelfareProblem};
use crate::error::{Error, Result};
use crate::linalg;
use crate::par;

#[derive(Debug, Clone)]
pub struct OracleOptions {
    pub seeds: usize,
    pub base_seed: u64,
    pub max_iterations: usize,
    /// Required KKT residual (max-norm).
    pub tolerance: f64,
    /// Required agreement of `(P_g, P_d)` across starts.
    pub agreement: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            seeds: 4,
            base_seed: 0x5eed,
            max_iterations: 400_000,
            tolerance: 1e-8,
            agreement: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSolution {
    pub point: KktPoint,
    pub welfare: f64,
    /// Max-norm KKT residual of [`Self::point`] for the constrained problem.
    pub kkt_residual: f64,
    /// Optimality residual of the problem actually solved (equals
    /// `kkt_residual` except for barrier problems).
    pub solver_residual: f64,
    pub method: &'static str,
    pub iterations: usize,
    pub seed_spread: f64,
}

/// Optimum of `problem`'s constrained (not barrier) formulation.
pub fn oracle_optimum(problem: &WelfareProblem, options: &OracleOptions) -> Result<OracleSolution> {
    if problem.is_quadratic_basic() {
        return Ok(bisection(problem));
    }
    let nlp = WelfareNlp::new(problem, None);
    let starts: Vec<u64> = (0..options.seeds.max(1) as u64)
        .map(|s| options.base_seed + s)
        .collect();
    let runs = par::map(&starts, |&seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = problem
            .slater_point()
            .map(|p| p.to_vec())
            .unwrap_or_else(|| vec![0.0; nlp.dim()]);
        let y0: Vec<f64> = base.iter().map(|b| b + rng.random_range(-1.0..1.0)).collect();
        let l0: Vec<f64> = (0..problem.node_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu0 = vec![0.0; nlp.ineq_len()];
        let run = primal_dual(&nlp, y0, l0, mu0, options.max_iterations, options.tolerance * 0.1);
        let polished = polish(&nlp, &run.y, &run.lambda, &run.mu);
        match polished {
            Some((y, lambda, mu, res)) if res <= run.residual => SolveRun {
                y,
                lambda,
                mu,
                residual: res,
                iterations: run.iterations,
            },
            _ => run,
        }
    });
    let spread = seed_spread(&runs, 2 * problem.node_count());
    let best = runs
        .iter()
        .min_by(|a, b| a.residual.total_cmp(&b.residual))
        .expect("at least one start");
    if best.residual > options.tolerance {
        return Err(Error::NonConvergence {
            iterations: best.iterations,
            best_residual: best.residual,
        });
    }
    if spread > options.agreement {
        return Err(Error::OracleDisagreement { spread });
    }
    let mut sol = nlp.solution(&best.y, &best.lambda, &best.mu, "primal-dual+newton", best.iterations);
    sol.seed_spread = spread;
    sol.solver_residual = best.residual;
    Ok(sol)
}

/// Optimum of the barrier problem `min −S − ν Σ log(−g_i)` subject to the
/// balance, found by damped Newton from the stored strictly feasible point.
/// The returned multipliers are the central-path values `μ_i = −ν/g_i`.
pub fn barrier_optimum(problem: &WelfareProblem, nu: f64) -> Result<OracleSolution> {
    let start = problem
        .slater_point()
        .ok_or_else(|| Error::invalid("market", "barrier problem requires nodal constraints"))?
        .to_vec();
    let nlp = WelfareNlp::new(problem, Some(nu));
    let (y, lambda, residual, iterations) = newton_equality(&nlp, start)?;
    let mut sol = nlp.solution(&y, &lambda, &[], "barrier-newton", iterations);
    sol.solver_residual = residual;
    Ok(sol)
}

/// A strictly feasible `(P_g, P_d, v)` for the nodal constraints.
pub(super) fn slater_point(problem: &WelfareProblem) -> Result<Vec<f64>> {
    let inner = WelfareNlp::new(problem, None);
    let phase = PhaseOne {
        inner: &inner,
        eps: 1e-3,
    };
    let d = inner.dim();
    let y0 = vec![0.0; d];
    let g0 = inner.ineq(&y0);
    let s0 = g0.iter().copied().fold(0.0, f64::max) + 1.0;
    let mut x0 = y0;
    x0.push(s0);
    let run = primal_dual(
        &phase,
        x0,
        vec![0.0; problem.node_count()],
        vec![0.0; phase.ineq_len()],
        200_000,
        1e-10,
    );
    let (x, residual) = match polish(&phase, &run.y, &run.lambda, &run.mu) {
        Some((x, _, _, res)) if res <= run.residual => (x, res),
        _ => (run.y, run.residual),
    };
    let y = x[..d].to_vec();
    let max_g = inner.ineq(&y).iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let balance = linalg::max_abs((inner.a.clone() * DVector::from_row_slice(&y)).as_slice());
    if max_g < 0.0 && balance < 1e-9 {
        Ok(y)
    } else {
        Err(Error::Infeasible(format!(
            "no strictly feasible balanced point (best max g = {max_g:e}, phase-one residual {residual:e})"
        )))
    }
}

fn bisection(problem: &WelfareProblem) -> OracleSolution {
    let n = problem.node_count();
    let coeff = |f: &super::NodeFunction| f.as_quadratic().expect("quadratic");
    let supply = |lambda: f64, i: usize| {
        let (a, c, _) = coeff(&problem.costs()[i]);
        (lambda - c) / a
    };
    let demand = |lambda: f64, i: usize| {
        let (a, c, _) = coeff(&problem.utilities()[i]);
        (lambda - c) / a
    };
    let excess = |lambda: f64| (0..n).map(|i| supply(lambda, i) - demand(lambda, i)).sum::<f64>();
    let (mut lo, mut hi) = (-1.0, 1.0);
    while excess(lo) > 0.0 {
        lo *= 2.0;
    }
    while excess(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut iterations = 0;
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let lambda = if excess(lo).abs() <= excess(hi).abs() { lo } else { hi };
    let pg: Vec<f64> = (0..n).map(|i| supply(lambda, i)).collect();
    let pd: Vec<f64> = (0..n).map(|i| demand(lambda, i)).collect();
    let v = min_norm_flows(problem, &pg, &pd);
    let point = KktPoint {
        pg,
        pd,
        v,
        lambda: vec![lambda; n],
        ..Default::default()
    };
    let kkt = problem.kkt_residual(&point).expect("consistent dimensions").max_norm();
    OracleSolution {
        welfare: problem.social_welfare(&point.pg, &point.pd),
        point,
        kkt_residual: kkt,
        solver_residual: kkt,
        method: "price-bisection",
        iterations,
        seed_spread: 0.0,
    }
}

/// Minimum-norm `v` with `D_c v = P_g − P_d`.
fn min_norm_flows(problem: &WelfareProblem, pg: &[f64], pd: &[f64]) -> Vec<f64> {
    let mc = problem.comm_edge_count();
    if mc == 0 {
        return Vec::new();
    }
    let rhs: Vec<f64> = pg.iter().zip(pd).map(|(g, d)| g - d).collect();
    linalg::least_squares(&problem.comm().incidence_matrix(), &DVector::from_vec(rhs))
        .map(|v| v.as_slice().to_vec())
        .unwrap_or_else(|| vec![0.0; mc])
}

fn seed_spread(runs: &[SolveRun], prefix: usize) -> f64 {
    let first = &runs[0].y[..prefix];
    runs.iter()
        .flat_map(|r| r.y[..prefix].iter().zip(first).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

/// Smooth convex program `min f(y)` s.t. `A y = 0`, `G(y) ≤ 0`.
trait Nlp: Sync {
    fn dim(&self) -> usize;
    fn eq(&self) -> DMatrix<f64>;
    fn gradient(&self, y: &[f64]) -> DVector<f64>;
    fn ineq_len(&self) -> usize;
    fn ineq(&self, y: &[f64]) -> Vec<f64>;
    fn ineq_jacobian(&self, y: &[f64]) -> DMatrix<f64>;
    fn in_domain(&self, _y: &[f64]) -> bool {
        true
    }
}

/// Decision vector `y = (P_g, P_d, v)`.
struct WelfareNlp<'a> {
    problem: &'a WelfareProblem,
    a: DMatrix<f64>,
    barrier: Option<f64>,
    n: usize,
    mc: usize,
}

impl<'a> WelfareNlp<'a> {
    fn new(problem: &'a WelfareProblem, barrier: Option<f64>) -> Self {
        let n = problem.node_count();
        let mc = problem.comm_edge_count();
        let mut a = DMatrix::zeros(n, 2 * n + mc);
        for i in 0..n {
            a[(i, i)] = -1.0;
            a[(i, n + i)] = 1.0;
        }
        a.view_mut((0, 2 * n), (n, mc))
            .copy_from(&problem.comm().incidence_matrix());
        Self {
            problem,
            a,
            barrier,
            n,
            mc,
        }
    }

    fn split<'y>(&self, y: &'y [f64]) -> (&'y [f64], &'y [f64], &'y [f64]) {
        (&y[..self.n], &y[self.n..2 * self.n], &y[2 * self.n..])
    }

    fn solution(
        &self,
        y: &[f64],
        lambda: &[f64],
        mu: &[f64],
        method: &'static str,
        iterations: usize,
    ) -> OracleSolution {
        let p = self.problem;
        let (pg, pd, v) = self.split(y);
        let free_flows = p.transmission_costs().is_none() && p.line_limits().is_none();
        let v = if free_flows {
            min_norm_flows(p, pg, pd)
        } else {
            v.to_vec()
        };
        let mut point = KktPoint {
            pg: pg.to_vec(),
            pd: pd.to_vec(),
            v,
            lambda: lambda.to_vec(),
            ..Default::default()
        };
        match (p.constraints(), self.barrier) {
            (Constraints::Nodal(_), Some(nu)) => {
                point.mu = p.eval_constraints(pg, pd).iter().map(|g| -nu / g).collect();
            }
            (Constraints::Nodal(_), None) => point.mu = mu.iter().map(|m| m.max(0.0)).collect(),
            (Constraints::LineLimits(_), _) => {
                point.mu_plus = mu[..self.mc].iter().map(|m| m.max(0.0)).collect();
                point.mu_minus = mu[self.mc..].iter().map(|m| m.max(0.0)).collect();
            }
            (Constraints::None, _) => {}
        }
        let kkt = p.kkt_residual(&point).map(|r| r.max_norm()).unwrap_or(f64::INFINITY);
        OracleSolution {
            welfare: p.social_welfare(&point.pg, &point.pd),
            point,
            kkt_residual: kkt,
            solver_residual: kkt,
            method,
            iterations,
            seed_spread: 0.0,
        }
    }
}

impl Nlp for WelfareNlp<'_> {
    fn dim(&self) -> usize {
        2 * self.n + self.mc
    }

    fn eq(&self) -> DMatrix<f64> {
        self.a.clone()
    }

    fn gradient(&self, y: &[f64]) -> DVector<f64> {
        let p = self.problem;
        let (pg, pd, v) = self.split(y);
        let mut grad = DVector::zeros(self.dim());
        for i in 0..self.n {
            grad[i] = p.costs()[i].derivative(pg[i]);
            grad[self.n + i] = -p.utilities()[i].derivative(pd[i]);
        }
        if let Some(ct) = p.transmission_costs() {
            for k in 0..self.mc {
                grad[2 * self.n + k] = ct[k].derivative(v[k]);
            }
        }
        if p.rho() > 0.0 {
            let r = &self.a * DVector::from_row_slice(y);
            grad += self.a.transpose() * r * p.rho();
        }
        if let (Some(nu), Some(g)) = (self.barrier, p.nodal_constraints()) {
            let gv = p.eval_constraints(pg, pd);
            let w: Vec<f64> = gv.iter().map(|x| -nu / x).collect();
            let (mut og, mut od) = (vec![0.0; self.n], vec![0.0; self.n]);
            g.jacobian_t_mul(pg, pd, &w, &mut og, &mut od);
            for i in 0..self.n {
                grad[i] += og[i];
                grad[self.n + i] += od[i];
            }
        }
        grad
    }

    fn ineq_len(&self) -> usize {
        if self.barrier.is_some() {
            return 0;
        }
        match self.problem.constraints() {
            Constraints::None => 0,
            Constraints::Nodal(g) => g.len(),
            Constraints::LineLimits(k) => 2 * k.len(),
        }
    }

    fn ineq(&self, y: &[f64]) -> Vec<f64> {
        if self.barrier.is_some() {
            return Vec::new();
        }
        let (pg, pd, v) = self.split(y);
        match self.problem.constraints() {
            Constraints::None => Vec::new(),
            Constraints::Nodal(_) => self.problem.eval_constraints(pg, pd),
            Constraints::LineLimits(kappa) => v
                .iter()
                .zip(kappa)
                .map(|(v, k)| v - k)
                .chain(v.iter().zip(kappa).map(|(v, k)| -v - k))
                .collect(),
        }
    }

    fn ineq_jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        let l = self.ineq_len();
        let mut j = DMatrix::zeros(l, self.dim());
        if l == 0 {
            return j;
        }
        let (pg, pd, _) = self.split(y);
        match self.problem.constraints() {
            Constraints::None => {}
            Constraints::Nodal(g) => {
                j.view_mut((0, 0), (l, 2 * self.n)).copy_from(&g.jacobian(pg, pd));
            }
            Constraints::LineLimits(_) => {
                for k in 0..self.mc {
                    j[(k, 2 * self.n + k)] = 1.0;
                    j[(self.mc + k, 2 * self.n + k)] = -1.0;
                }
            }
        }
        j
    }

    fn in_domain(&self, y: &[f64]) -> bool {
        match self.barrier {
            Some(_) => {
                let (pg, pd, _) = self.split(y);
                self.problem.eval_constraints(pg, pd).iter().all(|g| *g < 0.0)
            }
            None => true,
        }
    }
}

/// `min s + ½ε‖y‖²` s.t. `A y = 0`, `g(y) ≤ s`, `s ≥ −1`, over `(y, s)`.
struct PhaseOne<'a> {
    inner: &'a WelfareNlp<'a>,
    eps: f64,
}

impl Nlp for PhaseOne<'_> {
    fn dim(&self) -> usize {
        self.inner.dim() + 1
    }

    fn eq(&self) -> DMatrix<f64> {
        let a = &self.inner.a;
        let mut out = DMatrix::zeros(a.nrows(), a.ncols() + 1);
        out.view_mut((0, 0), a.shape()).copy_from(a);
        out
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let d = self.inner.dim();
        let mut g = DVector::zeros(d + 1);
        for i in 0..d {
            g[i] = self.eps * x[i];
        }
        g[d] = 1.0;
        g
    }

    fn ineq_len(&self) -> usize {
        self.inner.ineq_len() + 1
    }

    fn ineq(&self, x: &[f64]) -> Vec<f64> {
        let d = self.inner.dim();
        let s = x[d];
        let mut g: Vec<f64> = self.inner.ineq(&x[..d]).into_iter().map(|v| v - s).collect();
        g.push(-1.0 - s);
        g
    }

    fn ineq_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.inner.dim();
        let l = self.inner.ineq_len();
        let mut j = DMatrix::zeros(l + 1, d + 1);
        j.view_mut((0, 0), (l, d)).copy_from(&self.inner.ineq_jacobian(&x[..d]));
        for r in 0..=l {
            j[(r, d)] = -1.0;
        }
        j
    }
}

struct SolveRun {
    y: Vec<f64>,
    lambda: Vec<f64>,
    mu: Vec<f64>,
    residual: f64,
    iterations: usize,
}

fn nlp_residual<N: Nlp>(nlp: &N, a: &DMatrix<f64>, y: &[f64], lambda: &[f64], mu: &[f64]) -> f64 {
    let yv = DVector::from_row_slice(y);
    let lv = DVector::from_row_slice(lambda);
    let g = nlp.ineq(y);
    let mut stat = nlp.gradient(y) + a.transpose() * lv;
    if !g.is_empty() {
        stat += nlp.ineq_jacobian(y).transpose() * DVector::from_row_slice(mu);
    }
    let mut r = linalg::max_abs(stat.as_slice());
    r = r.max(linalg::max_abs((a * yv).as_slice()));
    for (gi, mi) in g.iter().zip(mu) {
        r = r.max(gi.max(0.0)).max((mi * gi).abs()).max((-mi).max(0.0));
    }
    r
}

fn primal_dual<N: Nlp>(
    nlp: &N,
    y0: Vec<f64>,
    lambda0: Vec<f64>,
    mu0: Vec<f64>,
    max_iterations: usize,
    tolerance: f64,
) -> SolveRun {
    let a = nlp.eq();
    let at = a.transpose();
    let r = 1.0;
    let mut y = DVector::from_vec(y0);
    let mut lambda = DVector::from_vec(lambda0);
    let mut mu = DVector::from_vec(mu0);

    let hess = fd_jacobian(&|x: &[f64]| nlp.gradient(x), y.as_slice());
    let jac = nlp.ineq_jacobian(y.as_slice());
    let lip = hess.norm() + r * (a.norm_squared() + jac.norm_squared()) + 1.0;
    let alpha = (1.0 / lip).min(r);

    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iterations {
        let g = DVector::from_vec(nlp.ineq(y.as_slice()));
        let mut grad = nlp.gradient(y.as_slice()) + &at * (&lambda + &a * &y * r);
        if !g.is_empty() {
            let shifted = (&mu + &g * r).map(|v| v.max(0.0));
            grad += nlp.ineq_jacobian(y.as_slice()).transpose() * shifted;
        }
        y -= grad * alpha;
        lambda += &a * &y * alpha;
        if !g.is_empty() {
            let g = DVector::from_vec(nlp.ineq(y.as_slice()));
            let target = (&mu + &g * r).map(|v| v.max(0.0));
            mu += (target - &mu) * (alpha / r);
        }
        iterations += 1;
        if iterations % 64 == 0 {
            residual = nlp_residual(nlp, &a, y.as_slice(), lambda.as_slice(), mu.as_slice());
            if residual <= tolerance || !residual.is_finite() {
                break;
            }
        }
    }
    if iterations % 64 != 0 {
        residual = nlp_residual(nlp, &a, y.as_slice(), lambda.as_slice(), mu.as_slice());
    }
    SolveRun {
        y: y.as_slice().to_vec(),
        lambda: lambda.as_slice().to_vec(),
        mu: mu.as_slice().to_vec(),
        residual,
        iterations,
    }
}

/// Central-difference Jacobian of `f` at `x`.
fn fd_jacobian(f: &dyn Fn(&[f64]) -> DVector<f64>, x: &[f64]) -> DMatrix<f64> {
    let f0 = f(x);
    let mut j = DMatrix::zeros(f0.len(), x.len());
    let mut xp = x.to_vec();
    for c in 0..x.len() {
        let h = 1e-6 * x[c].abs().max(1.0);
        xp[c] = x[c] + h;
        let fp = f(&xp);
        xp[c] = x[c] - h;
        let fm = f(&xp);
        xp[c] = x[c];
        j.set_column(c, &((fp - fm) / (2.0 * h)));
    }
    j
}

type Polished = (Vec<f64>, Vec<f64>, Vec<f64>, f64);

/// Newton on the KKT system with a fixed active set, adjusting the set until
/// multipliers and inactive constraints have the right signs.
fn polish<N: Nlp>(nlp: &N, y: &[f64], lambda: &[f64], mu: &[f64]) -> Option<Polished> {
    let a = nlp.eq();
    let d = nlp.dim();
    let ne = a.nrows();
    let g0 = nlp.ineq(y);
    let mut active: Vec<usize> = (0..g0.len()).filter(|&i| mu[i] > 1e-6 || g0[i] > -1e-6).collect();
    let mut y = y.to_vec();
    let mut lambda = lambda.to_vec();
    let mut mu_full = mu.to_vec();

    for _round in 0..10 {
        let na = active.len();
        let residual = |x: &[f64]| -> DVector<f64> {
            let (yy, rest) = x.split_at(d);
            let (ll, mm) = rest.split_at(ne);
            let mut f = DVector::zeros(d + ne + na);
            let mut stat = nlp.gradient(yy) + a.transpose() * DVector::from_row_slice(ll);
            if na > 0 {
                let jac = nlp.ineq_jacobian(yy);
                for (k, &i) in active.iter().enumerate() {
                    stat += jac.row(i).transpose() * mm[k];
                }
            }
            f.rows_mut(0, d).copy_from(&stat);
            f.rows_mut(d, ne).copy_from(&(&a * DVector::from_row_slice(yy)));
            if na > 0 {
                let g = nlp.ineq(yy);
                for (k, &i) in active.iter().enumerate() {
                    f[d + ne + k] = g[i];
                }
            }
            f
        };
        let mut x: Vec<f64> = y
            .iter()
            .chain(&lambda)
            .copied()
            .chain(active.iter().map(|&i| mu_full[i]))
            .collect();
        let mut fx = residual(&x);
        for _ in 0..60 {
            let norm = linalg::max_abs(fx.as_slice());
            if norm < 1e-14 {
                break;
            }
            let jac = fd_jacobian(&residual, &x);
            let step = linalg::least_squares(&jac, &(-&fx))?;
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let ft = residual(&trial);
            if !(linalg::max_abs(ft.as_slice()) < norm) {
                break;
            }
            x = trial;
            fx = ft;
        }
        y = x[..d].to_vec();
        lambda = x[d..d + ne].to_vec();
        for (k, &i) in active.iter().enumerate() {
            mu_full[i] = x[d + ne + k];
        }
        for (i, m) in mu_full.iter_mut().enumerate() {
            if !active.contains(&i) {
                *m = 0.0;
            }
        }
        let g = nlp.ineq(&y);
        let negative: Vec<usize> = active.iter().copied().filter(|&i| mu_full[i] < -1e-12).collect();
        let violated: Vec<usize> = (0..g.len()).filter(|i| !active.contains(i) && g[*i] > 1e-12).collect();
        if negative.is_empty() && violated.is_empty() {
            for m in mu_full.iter_mut() {
                *m = m.max(0.0);
            }
            let res = nlp_residual(nlp, &a, &y, &lambda, &mu_full);
            return Some((y, lambda, mu_full, res));
        }
        active.retain(|i| !negative.contains(i));
        active.extend(violated);
        active.sort_unstable();
    }
    None
}

/// Damped Newton on `∇f + Aᵀλ = 0`, `A y = 0` keeping `y` in the domain.
fn newton_equality<N: Nlp>(nlp: &N, y0: Vec<f64>) -> Result<(Vec<f64>, Vec<f64>, f64, usize)> {
    let a = nlp.eq();
    let d = nlp.dim();
    let ne = a.nrows();
    let residual = |x: &[f64]| -> DVector<f64> {
        let (y, l) = x.split_at(d);
        let mut f = DVector::zeros(d + ne);
        f.rows_mut(0, d)
            .copy_from(&(nlp.gradient(y) + a.transpose() * DVector::from_row_slice(l)));
        f.rows_mut(d, ne).copy_from(&(&a * DVector::from_row_slice(y)));
        f
    };
    let mut x: Vec<f64> = y0.into_iter().chain(std::iter::repeat_n(0.0, ne)).collect();
    if !nlp.in_domain(&x[..d]) {
        return Err(Error::Infeasible("barrier start is not strictly feasible".into()));
    }
    let mut fx = residual(&x);
    let mut iterations = 0;
    while iterations < 200 {
        let norm = fx.norm();
        if linalg::max_abs(fx.as_slice()) < 1e-13 {
            break;
        }
        let jac = fd_jacobian(&residual, &x);
        let step = linalg::least_squares(&jac, &(-&fx)).ok_or(Error::SingularJacobian)?;
        let mut t = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            if nlp.in_domain(&trial[..d]) {
                let ft = residual(&trial);
                if ft.norm() <= (1.0 - 1e-4 * t) * norm {
                    break Some((trial, ft));
                }
            }
            t *= 0.5;
            if t < 1e-12 {
                break None;
            }
        };
        iterations += 1;
        match accepted {
            Some((trial, ft)) => {
                x = trial;
                fx = ft;
            }
            None => break,
        }
    }
    let res = linalg::max_abs(fx.as_slice());
    if res > 1e-8 {
        return Err(Error::NewtonDiverged { residual: res });
    }
    Ok((x[..d].to_vec(), x[d..].to_vec(), res, iterations))
}
