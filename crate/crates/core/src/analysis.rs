//! Energy and convergence diagnostics on closed-loop states and trajectories.
//!
//! Storage is `H = H_p + ½ Σ τ z²` over the controller coordinates
//! `z = (P_g, P_d, v, λ, μ, μ₊, μ₋)`. The transformed variants are mapped
//! back to the λ-coordinates of the basic loop first, so both share one
//! storage function.

use serde::Serialize;

use crate::controllers::Variant;
use crate::error::Result;
use crate::linalg;
use crate::par;
use crate::simulator::{ClosedLoop, ClosedLoopState, Equilibrium, RunStatus, Trajectory};
use crate::welfare::OracleSolution;

/// Controller coordinates in λ-form with their storage time constants.
struct Storage {
    z: Vec<f64>,
    tau: Vec<f64>,
}

fn storage(cl: &ClosedLoop, x: &ClosedLoopState) -> Storage {
    storage_of(cl, &x.physical.p, &x.controller.price, x)
}

/// `p` and `price` passed separately so the same linear map serves
/// states and their derivatives.
fn storage_of(cl: &ClosedLoop, p: &[f64], price: &[f64], x: &ClosedLoopState) -> Storage {
    let ctrl = cl.controller();
    let params = ctrl.params();
    let c = &x.controller;
    let lambda = if cl.variant().uses_theta() {
        ctrl.basic_from_theta(p, price)
    } else {
        price.to_vec()
    };
    let z = [&c.pg[..], &c.pd, &c.v, &lambda, &c.mu, &c.mu_plus, &c.mu_minus].concat();
    let tau = [
        &params.tau_g[..],
        &params.tau_d,
        &params.tau_v,
        &ctrl.price_storage_taus(),
        &params.tau_mu[..c.mu.len()],
        &params.tau_plus,
        &params.tau_minus,
    ]
    .concat();
    Storage { z, tau }
}

/// `H = H_p(x_p) + ½ Σ τ z²`.
pub fn total_hamiltonian(cl: &ClosedLoop, x: &ClosedLoopState) -> f64 {
    let s = storage(cl, x);
    let hc: f64 = s.z.iter().zip(&s.tau).map(|(z, t)| 0.5 * t * z * z).sum();
    cl.physical().hamiltonian(&x.physical) + hc
}

/// `H̄(x) = H(x) − (x − x̄)ᵀ∇H(x̄) − H(x̄)`, with `x = τz` in the controller block.
pub fn shifted_hamiltonian(cl: &ClosedLoop, x: &ClosedLoopState, xbar: &ClosedLoopState) -> f64 {
    let phys = cl.physical();
    let grad = phys.hamiltonian_gradient(&xbar.physical);
    let (a, b) = (&x.physical, &xbar.physical);
    let linear = linalg::dot(&grad.eta, &diff(&a.eta, &b.eta))
        + linalg::dot(&grad.p, &diff(&a.p, &b.p))
        + linalg::dot(&grad.e_q, &diff(&a.e_q, &b.e_q));
    let hp = phys.hamiltonian(a) - phys.hamiltonian(b) - linear;
    let (s, sb) = (storage(cl, x), storage(cl, xbar));
    let hc: f64 = (0..s.z.len())
        .map(|i| 0.5 * s.tau[i] * (s.z[i] - sb.z[i]).powi(2))
        .sum();
    hp + hc
}

/// `dH̄/dt = ∇H̄(x)ᵀẋ` along the closed-loop vector field.
pub fn shifted_hamiltonian_rate(cl: &ClosedLoop, x: &ClosedLoopState, xbar: &ClosedLoopState) -> Result<f64> {
    let phys = cl.physical();
    let dx = cl.rhs(x)?;
    let g = phys.hamiltonian_gradient(&x.physical);
    let gb = phys.hamiltonian_gradient(&xbar.physical);
    let f = &dx.physical;
    let physical = linalg::dot(&diff(&g.eta, &gb.eta), &f.eta)
        + linalg::dot(&diff(&g.p, &gb.p), &f.p)
        + linalg::dot(&diff(&g.e_q, &gb.e_q), &f.e_q);
    let (s, sb) = (storage(cl, x), storage(cl, xbar));
    // The λ map is linear, so the derivative goes through the same map.
    let ds = storage_of(cl, &dx.physical.p, &dx.controller.price, &dx);
    let controller: f64 = (0..s.z.len()).map(|i| s.tau[i] * (s.z[i] - sb.z[i]) * ds.z[i]).sum();
    Ok(physical + controller)
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| a - b).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct DissipationSeries {
    pub times: Vec<f64>,
    pub shifted: Vec<f64>,
    /// `∇H̄ᵀẋ` at every sample.
    pub analytic: Vec<f64>,
    /// `(H̄_{k+1} − H̄_k)/Δt`, one entry per interval.
    pub finite_difference: Vec<f64>,
    /// Intervals where `H̄` rose by more than `tolerance·(1 + |H̄_k|)`.
    pub violations: usize,
    pub tolerance: f64,
    pub max_relative_increase: f64,
}

pub const DESCENT_TOLERANCE: f64 = 1e-8;

/// Shifted-Hamiltonian series along a trajectory around `xbar`.
pub fn dissipation_series(cl: &ClosedLoop, traj: &Trajectory, xbar: &ClosedLoopState) -> Result<DissipationSeries> {
    let per_sample: Vec<Result<(f64, f64)>> = par::map_range(traj.len(), |i| {
        let x = traj.state(i);
        Ok((
            shifted_hamiltonian(cl, &x, xbar),
            shifted_hamiltonian_rate(cl, &x, xbar)?,
        ))
    });
    let mut shifted = Vec::with_capacity(traj.len());
    let mut analytic = Vec::with_capacity(traj.len());
    for r in per_sample {
        let (h, rate) = r?;
        shifted.push(h);
        analytic.push(rate);
    }
    let mut finite_difference = Vec::new();
    let mut violations = 0;
    let mut max_relative_increase = f64::NEG_INFINITY;
    for k in 1..shifted.len() {
        let dh = shifted[k] - shifted[k - 1];
        finite_difference.push(dh / (traj.times[k] - traj.times[k - 1]));
        let rel = dh / (1.0 + shifted[k - 1].abs());
        max_relative_increase = max_relative_increase.max(rel);
        if rel > DESCENT_TOLERANCE {
            violations += 1;
        }
    }
    Ok(DissipationSeries {
        times: traj.times.clone(),
        shifted,
        analytic,
        finite_difference,
        violations,
        tolerance: DESCENT_TOLERANCE,
        max_relative_increase,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvergenceStatus {
    Converged,
    NotConverged,
}

/// Thresholds a run must meet to count as converged.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConvergenceThresholds {
    pub omega: f64,
    pub optimality: f64,
    pub ratio: f64,
}

impl Default for ConvergenceThresholds {
    fn default() -> Self {
        Self {
            omega: 1e-6,
            optimality: 1e-5,
            ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub status: ConvergenceStatus,
    pub run_status: RunStatus,
    pub final_time: f64,
    pub max_omega: f64,
    /// Max-norm KKT residual of the constrained welfare problem at the final state.
    pub kkt_residual: f64,
    /// KKT residual without the complementarity rows; the barrier loop's
    /// optimality measure.
    pub stationarity_residual: f64,
    pub complementarity: f64,
    /// `|D_cᵀλ(T)|∞`.
    pub consensus_error: f64,
    pub pg_error: f64,
    pub pd_error: f64,
    /// First time after which `|ω|∞ < 1e−6` for the rest of the run.
    pub settle_time: Option<f64>,
    /// `|x(T) − x(T/2)| / |x(T/2) − x(T/4)|`; zero when both are at rounding level.
    pub convergence_ratio: f64,
    pub min_multiplier: f64,
    pub max_constraint_violation: f64,
}

const SETTLE_OMEGA: f64 = 1e-6;
const RATIO_FLOOR: f64 = 1e-12;

/// Summary of a finished run against the optimizer point `oracle`.
pub fn convergence_report(
    cl: &ClosedLoop,
    traj: &Trajectory,
    oracle: &OracleSolution,
    thresholds: &ConvergenceThresholds,
) -> Result<ConvergenceReport> {
    let lay = traj.layout;
    let last = traj.final_state();
    let omega = cl.physical().omega(&last.physical.p);
    let ctrl = cl.controller();
    let problem = ctrl.problem();
    let point = ctrl.kkt_point(&last.controller, &omega);
    let residual = problem.kkt_residual(&point)?;
    let stationarity_residual = residual
        .parts
        .iter()
        .filter(|p| !p.name.starts_with("complementarity"))
        .map(|p| linalg::max_abs(&p.values))
        .fold(0.0, f64::max);
    let consensus_error = linalg::max_abs(&problem.comm().incidence_t_apply(&point.lambda));
    let err = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let max_omega_at = |y: &[f64]| linalg::max_abs(&cl.physical().omega(&y[lay.p()]));
    let mut settle_time = None;
    for i in (0..traj.len()).rev() {
        if max_omega_at(&traj.states[i]) >= SETTLE_OMEGA {
            settle_time = traj.times.get(i + 1).copied();
            break;
        }
        if i == 0 {
            settle_time = Some(traj.times[0]);
        }
    }

    let t0 = traj.times[0];
    let span = traj.final_time() - t0;
    let at = |frac: f64| &traj.states[traj.index_at(t0 + frac * span)];
    let distance = |a: &[f64], b: &[f64]| diff(a, b).iter().map(|d| d * d).sum::<f64>().sqrt();
    let (x1, x2, x4) = (at(0.25), at(0.5), traj.states.last().expect("trajectory has samples"));
    let num = distance(x4, x2);
    let den = distance(x2, x1);
    let convergence_ratio = if den <= RATIO_FLOOR {
        if num <= RATIO_FLOOR {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    };

    let min_multiplier = traj
        .states
        .iter()
        .flat_map(|y| y[lay.multipliers()].iter().copied())
        .fold(0.0f64, f64::min);
    let constraint_values = cl.multiplier_constraints(&traj.states[traj.len() - 1]);
    let barrier_g = if cl.variant() == Variant::Barrier {
        problem.eval_constraints(&last.controller.pg, &last.controller.pd)
    } else {
        Vec::new()
    };
    let max_constraint_violation = constraint_values
        .iter()
        .chain(&barrier_g)
        .fold(0.0f64, |acc, g| acc.max(*g));

    let max_omega = linalg::max_abs(&omega);
    let optimality = if cl.variant() == Variant::Barrier {
        stationarity_residual
    } else {
        residual.max_norm()
    };
    let status =
        if max_omega <= thresholds.omega && optimality <= thresholds.optimality && convergence_ratio < thresholds.ratio
        {
            ConvergenceStatus::Converged
        } else {
            ConvergenceStatus::NotConverged
        };
    Ok(ConvergenceReport {
        status,
        run_status: traj.status,
        final_time: traj.final_time(),
        max_omega,
        kkt_residual: residual.max_norm(),
        stationarity_residual,
        complementarity: residual.complementarity_total.abs(),
        consensus_error,
        pg_error: err(&last.controller.pg, &oracle.point.pg),
        pd_error: err(&last.controller.pd, &oracle.point.pd),
        settle_time,
        convergence_ratio,
        min_multiplier,
        max_constraint_violation,
    })
}

/// Per-sample diagnostics, aligned with the trajectory samples.
#[derive(Debug, Clone, Serialize)]
pub struct SampleDiagnostics {
    pub t: f64,
    pub hamiltonian: f64,
    pub shifted: f64,
    /// Finite-difference `dH̄/dt` over the interval ending at this sample (0 for the first).
    pub shifted_rate: f64,
    pub kkt_residual: f64,
    pub consensus_error: f64,
    pub max_omega: f64,
    pub max_constraint_violation: f64,
    pub min_multiplier: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub variant: Variant,
    pub warnings: Vec<String>,
    pub equilibrium_residual: f64,
    pub secure: bool,
    pub hessian_min_eigenvalue: f64,
    pub descent_violations: usize,
    pub max_relative_increase: f64,
    pub summary: ConvergenceReport,
    #[serde(skip)]
    pub samples: Vec<SampleDiagnostics>,
}

/// Full diagnostics of a run around the equilibrium `eq`.
pub fn diagnostics(cl: &ClosedLoop, traj: &Trajectory, eq: &Equilibrium) -> Result<DiagnosticsReport> {
    let dissipation = dissipation_series(cl, traj, &eq.state)?;
    let summary = convergence_report(cl, traj, &eq.oracle, &ConvergenceThresholds::default())?;
    let lay = traj.layout;
    let problem = cl.controller().problem();
    let rows: Vec<Result<SampleDiagnostics>> = par::map_range(traj.len(), |i| {
        let x = traj.state(i);
        let omega = cl.physical().omega(&x.physical.p);
        let point = cl.controller().kkt_point(&x.controller, &omega);
        let kkt = problem.kkt_residual(&point)?.max_norm();
        let violation = cl
            .multiplier_constraints(&traj.states[i])
            .into_iter()
            .fold(0.0f64, f64::max);
        let mult = &traj.states[i][lay.multipliers()];
        Ok(SampleDiagnostics {
            t: traj.times[i],
            hamiltonian: total_hamiltonian(cl, &x),
            shifted: dissipation.shifted[i],
            shifted_rate: if i == 0 {
                0.0
            } else {
                dissipation.finite_difference[i - 1]
            },
            kkt_residual: kkt,
            consensus_error: linalg::max_abs(&problem.comm().incidence_t_apply(&point.lambda)),
            max_omega: linalg::max_abs(&omega),
            max_constraint_violation: violation,
            min_multiplier: mult.iter().copied().fold(0.0f64, f64::min),
        })
    });
    let samples = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(DiagnosticsReport {
        variant: cl.variant(),
        warnings: cl.warnings().to_vec(),
        equilibrium_residual: eq.residual,
        secure: eq.secure,
        hessian_min_eigenvalue: eq.hessian_min_eigenvalue,
        descent_violations: dissipation.violations,
        max_relative_increase: dissipation.max_relative_increase,
        summary,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::{Controller, ControllerParams};
    use crate::physical::{PhysicalModel, PhysicalParams};
    use crate::simulator::{EquilibriumOptions, IntegratorConfig};
    use crate::topology::Graph;
    use crate::welfare::{NodeFunction, WelfareProblem};

    fn loop_with(variant: Variant, tau_g: f64) -> ClosedLoop {
        let g = Graph::new(3, vec![(0, 1), (1, 2), (0, 2)]).unwrap();
        let params = PhysicalParams {
            inertia: vec![4.0, 5.0, 6.0],
            damping: vec![1.5, 1.2, 1.8],
            x_d: vec![1.0; 3],
            x_d_prime: vec![0.3; 3],
            t_d_prime: vec![5.0; 3],
            e_f: vec![1.0; 3],
            susceptance: vec![1.5, 2.0, 1.8],
        };
        let physical = PhysicalModel::new(g.clone(), params.clone()).unwrap();
        let problem = WelfareProblem::new(
            g,
            vec![
                NodeFunction::cost(1.0, 0.1, 0.0),
                NodeFunction::cost(2.0, 0.2, 0.0),
                NodeFunction::cost(1.5, 0.05, 0.0),
            ],
            vec![
                NodeFunction::utility(1.0, 1.0, 0.0),
                NodeFunction::utility(1.5, 0.8, 0.0),
                NodeFunction::utility(2.0, 1.2, 0.0),
            ],
        )
        .unwrap();
        let mut tau = ControllerParams::unit(3, 3, 0, 0);
        tau.tau_g = vec![tau_g; 3];
        tau.tau_lambda = vec![0.5, 2.0, 1.5];
        tau.tau_theta = vec![3.0, 1.0, 2.0];
        let controller = Controller::new(variant, tau, problem, &params).unwrap();
        ClosedLoop::new(physical, controller).unwrap()
    }

    #[test]
    fn controller_storage_hand_value() {
        let cl = loop_with(Variant::Basic, 2.0);
        let mut x = cl.default_initial_state().unwrap();
        let h0 = total_hamiltonian(&cl, &x);
        assert_eq!(h0, cl.physical().hamiltonian(&x.physical));
        x.controller.pg[0] = 3.0;
        assert!((total_hamiltonian(&cl, &x) - h0 - 9.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_is_exact_quadratic_in_controller_block() {
        let cl = loop_with(Variant::Basic, 2.0);
        let xbar = cl.find_equilibrium(None, &EquilibriumOptions::default()).unwrap().state;
        assert!(shifted_hamiltonian(&cl, &xbar, &xbar).abs() < 1e-15);
        let mut x = xbar.clone();
        x.controller.pd[1] += 0.3;
        x.controller.price[2] -= 0.2;
        let expected = 0.5 * 1.0 * 0.09 + 0.5 * 1.5 * 0.04;
        assert!((shifted_hamiltonian(&cl, &x, &xbar) - expected).abs() < 1e-14);
    }

    #[test]
    fn rate_with_only_frequency_offset_is_damping() {
        let cl = loop_with(Variant::Basic, 2.0);
        let xbar = cl.find_equilibrium(None, &EquilibriumOptions::default()).unwrap().state;
        let mut x = xbar.clone();
        x.physical.p = vec![0.2, -0.1, 0.3];
        let omega = cl.physical().omega(&x.physical.p);
        let expected: f64 = -(0..3)
            .map(|i| cl.physical().params().damping[i] * omega[i] * omega[i])
            .sum::<f64>();
        let rate = shifted_hamiltonian_rate(&cl, &x, &xbar).unwrap();
        assert!((rate - expected).abs() < 1e-12, "{rate} vs {expected}");
    }

    #[test]
    fn shifted_matches_second_order_taylor() {
        let cl = loop_with(Variant::Basic, 2.0);
        let xbar = cl.find_equilibrium(None, &EquilibriumOptions::default()).unwrap().state;
        let hess = cl.physical().hessian(&xbar.physical);
        let dir: Vec<f64> = (0..hess.nrows())
            .map(|i| ((i * 7 + 3) % 5) as f64 / 5.0 - 0.4)
            .collect();
        let mut errs = Vec::new();
        for eps in [1e-2, 5e-3] {
            let mut x = xbar.clone();
            let (m, n) = (x.physical.eta.len(), x.physical.p.len());
            for k in 0..m {
                x.physical.eta[k] += eps * dir[k];
            }
            for i in 0..n {
                x.physical.p[i] += eps * dir[m + i];
                x.physical.e_q[i] += eps * dir[m + n + i];
            }
            let d = nalgebra::DVector::from_vec(dir.iter().map(|v| v * eps).collect());
            let quad = 0.5 * (d.transpose() * &hess * &d)[(0, 0)];
            errs.push((shifted_hamiltonian(&cl, &x, &xbar) - quad).abs());
        }
        assert!(errs[0] / errs[1] > 6.0, "{errs:?}");
    }

    #[test]
    fn analytic_and_fd_rates_agree_to_second_order() {
        let cl = loop_with(Variant::Basic, 2.0);
        let xbar = cl.find_equilibrium(None, &EquilibriumOptions::default()).unwrap().state;
        let mut x0 = xbar.clone();
        x0.controller.pg[0] += 0.05;
        x0.physical.p[1] += 0.05;
        let gap = |dt: f64| {
            let cfg = IntegratorConfig {
                dt,
                t_end: 2.0,
                stop_when_steady: false,
                ..Default::default()
            };
            let tr = cl.simulate(&x0, &cfg).unwrap();
            let s = dissipation_series(&cl, &tr, &xbar).unwrap();
            (0..s.finite_difference.len())
                .map(|k| (s.finite_difference[k] - 0.5 * (s.analytic[k] + s.analytic[k + 1])).abs())
                .fold(0.0, f64::max)
        };
        let (a, b) = (gap(0.02), gap(0.01));
        assert!(a / b > 3.0, "{a} {b}");
    }

    #[test]
    fn transformed_storage_equals_basic() {
        let basic = loop_with(Variant::Basic, 2.0);
        let trans = loop_with(Variant::Transformed, 2.0);
        let mut xb = basic.default_initial_state().unwrap();
        xb.physical.p = vec![0.1, 0.2, -0.1];
        xb.controller.price = vec![0.3, 0.4, 0.5];
        let mut xt = xb.clone();
        xt.controller.price = trans
            .controller()
            .theta_from_basic(&xb.physical.p, &xb.controller.price);
        let (hb, ht) = (total_hamiltonian(&basic, &xb), total_hamiltonian(&trans, &xt));
        assert!((hb - ht).abs() < 1e-13);
        let eb = basic
            .find_equilibrium(None, &EquilibriumOptions::default())
            .unwrap()
            .state;
        let et = trans
            .find_equilibrium(None, &EquilibriumOptions::default())
            .unwrap()
            .state;
        let rb = shifted_hamiltonian_rate(&basic, &xb, &eb).unwrap();
        let rt = shifted_hamiltonian_rate(&trans, &xt, &et).unwrap();
        assert!((rb - rt).abs() < 1e-9, "{rb} {rt}");
    }

    #[test]
    fn report_on_settled_run() {
        let cl = loop_with(Variant::Basic, 1.0);
        let eq = cl.find_equilibrium(None, &EquilibriumOptions::default()).unwrap();
        let mut x0 = eq.state.clone();
        for (i, v) in x0.controller.pg.iter_mut().enumerate() {
            *v *= 1.0 + 0.03 * (i as f64 - 1.0);
        }
        x0.physical.p[0] = 0.02;
        let tr = cl.simulate(&x0, &IntegratorConfig::default()).unwrap();
        let report = diagnostics(&cl, &tr, &eq).unwrap();
        assert_eq!(
            report.summary.status,
            ConvergenceStatus::Converged,
            "{:?}",
            report.summary
        );
        assert_eq!(report.descent_violations, 0);
        let omega = cl.physical().omega(&tr.final_state().physical.p);
        let lambda = cl.controller().lambda_equivalent(&tr.final_state().controller, &omega);
        let g = cl.controller().problem().comm();
        let mut expected: f64 = 0.0;
        for &(a, b) in g.edges() {
            expected = expected.max((lambda[a] - lambda[b]).abs());
        }
        assert!((report.summary.consensus_error - expected).abs() < 1e-15);
        assert_eq!(report.samples.len(), tr.len());
    }
}
