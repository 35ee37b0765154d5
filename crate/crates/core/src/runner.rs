//! End-to-end runs on a [`Scenario`]: simulate, verify and compare variants.

use serde::Serialize;

use crate::analysis::{self, ConvergenceStatus, DiagnosticsReport};
use crate::controllers::Variant;
use crate::error::{Error, Result};
use crate::io::Scenario;
use crate::linalg;
use crate::simulator::{ClosedLoop, ClosedLoopState, Equilibrium, EquilibriumOptions, IntegratorConfig, Trajectory};

/// Command-line style overrides applied on top of a scenario.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub variant: Option<Variant>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub seed: Option<u64>,
}

impl RunOptions {
    pub fn apply(&self, scenario: &Scenario) -> Scenario {
        let mut s = scenario.clone();
        if let Some(v) = self.variant {
            s.controller.variant = v;
        }
        if let Some(dt) = self.dt {
            s.integrator.dt = dt;
        }
        if let Some(t) = self.t_end {
            s.integrator.t_end = t;
        }
        s
    }
}

/// Everything produced by one simulation.
#[derive(Debug, Clone)]
pub struct Run {
    pub closed_loop: ClosedLoop,
    pub initial: ClosedLoopState,
    pub equilibrium: Equilibrium,
    pub trajectory: Trajectory,
    pub diagnostics: DiagnosticsReport,
    pub integrator: IntegratorConfig,
}

/// Builds the loop, locates the equilibrium sharing the initial state's
/// conserved quantities, integrates and computes diagnostics.
pub fn run(scenario: &Scenario, options: &RunOptions) -> Result<Run> {
    let s = options.apply(scenario);
    s.integrator.validate()?;
    let closed_loop = s.build_closed_loop()?;
    let initial = s.initial_state(&closed_loop, options.seed)?;
    let equilibrium = closed_loop.find_equilibrium(Some(&initial), &EquilibriumOptions::default())?;
    let trajectory = closed_loop.simulate(&initial, &s.integrator)?;
    let diagnostics = analysis::diagnostics(&closed_loop, &trajectory, &equilibrium)?;
    Ok(Run {
        closed_loop,
        initial,
        equilibrium,
        trajectory,
        diagnostics,
        integrator: s.integrator,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
}

impl PropertyResult {
    fn at_most(name: &'static str, value: f64, threshold: f64) -> Self {
        Self {
            name,
            passed: value <= threshold,
            value,
            threshold,
        }
    }

    fn below(name: &'static str, value: f64, threshold: f64) -> Self {
        Self {
            name,
            passed: value < threshold,
            value,
            threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub scenario: String,
    pub variant: Variant,
    pub warnings: Vec<String>,
    pub properties: Vec<PropertyResult>,
    pub passed: bool,
}

/// Runs the scenario and checks the closed-loop properties that apply to its variant.
pub fn verify(scenario: &Scenario, options: &RunOptions) -> Result<VerifyReport> {
    let r = run(scenario, options)?;
    let cl = &r.closed_loop;
    let eq = &r.equilibrium;
    let sum = &r.diagnostics.summary;
    let variant = cl.variant();
    let mut props = vec![
        PropertyResult::at_most("equilibrium_residual", eq.residual, 1e-10),
        PropertyResult::below(
            "security_box",
            linalg::max_abs(&eq.state.physical.eta),
            std::f64::consts::FRAC_PI_2,
        ),
        PropertyResult {
            name: "hessian_positive_definite",
            passed: eq.hessian_min_eigenvalue > 0.0,
            value: eq.hessian_min_eigenvalue,
            threshold: 0.0,
        },
        PropertyResult {
            name: "converged",
            passed: sum.status == ConvergenceStatus::Converged,
            value: if sum.status == ConvergenceStatus::Converged {
                1.0
            } else {
                0.0
            },
            threshold: 1.0,
        },
        PropertyResult::at_most("frequency_regulation", sum.max_omega, 1e-8),
        PropertyResult::at_most(
            "optimality",
            if variant == Variant::Barrier {
                sum.stationarity_residual
            } else {
                sum.kkt_residual
            },
            1e-5,
        ),
        PropertyResult::at_most("oracle_distance", sum.pg_error.max(sum.pd_error), 1e-4),
        PropertyResult::at_most("descent_violations", r.diagnostics.descent_violations as f64, 0.0),
        PropertyResult::below("point_convergence_ratio", sum.convergence_ratio, 0.5),
        PropertyResult::at_most(
            "settles_at_equilibrium",
            max_diff(
                r.trajectory.states.last().expect("non-empty trajectory"),
                &eq.state.to_vec(),
            ),
            1e-6,
        ),
    ];
    let lay = cl.layout();
    if lay.l + lay.lines > 0 {
        props.push(PropertyResult {
            name: "multiplier_feasibility",
            passed: sum.min_multiplier >= 0.0,
            value: sum.min_multiplier,
            threshold: 0.0,
        });
        props.push(PropertyResult::at_most("complementarity", sum.complementarity, 1e-6));
    }
    if variant == Variant::Congestion && cl.physical().graph().is_acyclic() {
        let last = r.trajectory.final_state();
        let flows = cl.physical().line_flows(&last.physical.eta, &last.physical.e_q);
        props.push(PropertyResult::at_most(
            "flow_identity",
            max_diff(&last.controller.v, &flows),
            1e-6,
        ));
    }
    if variant == Variant::Barrier {
        let worst = r
            .trajectory
            .states
            .iter()
            .map(|y| {
                cl.controller()
                    .problem()
                    .eval_constraints(&y[lay.pg()], &y[lay.pd()])
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        props.push(PropertyResult::below("strict_feasibility", worst, 0.0));
    }
    let passed = props.iter().all(|p| p.passed);
    Ok(VerifyReport {
        scenario: scenario.name.clone(),
        variant,
        warnings: cl.warnings().to_vec(),
        properties: props,
        passed,
    })
}

/// Per-block maximum deviation between two runs of the same scenario.
#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub variant_a: Variant,
    pub variant_b: Variant,
    pub t_end: f64,
    pub samples: usize,
    pub blocks: Vec<(String, f64)>,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Simulates `a` and `b` from consistent initial states (θ derived from
/// `(p, λ)` when needed) and compares `η, p, E'_q, P_g, P_d, v` and the
/// λ-equivalent price along the whole run.
pub fn compare(
    scenario: &Scenario,
    a: Variant,
    b: Variant,
    options: &RunOptions,
    tolerance: f64,
) -> Result<CompareReport> {
    let base = options.apply(scenario);
    let mut config = base.integrator.clone();
    config.stop_when_steady = false;
    let sa = base.with_variant(a);
    let sb = base.with_variant(b);
    let cla = sa.build_closed_loop()?;
    let clb = sb.build_closed_loop()?;
    if cla.layout() != clb.layout() {
        return Err(Error::invalid(
            "controller.variant",
            format!("{a} and {b} have different state layouts for this scenario"),
        ));
    }
    let xa = sa.initial_state(&cla, options.seed)?;
    let xb = convert_state(&cla, &clb, &xa);
    let ta = cla.simulate(&xa, &config)?;
    let tb = clb.simulate(&xb, &config)?;
    let lay = *cla.layout();
    let names = ["eta", "p", "e_q", "pg", "pd", "v", "lambda"];
    let mut worst = [0.0f64; 7];
    for (ya, yb) in ta.states.iter().zip(&tb.states) {
        let ranges = [lay.eta(), lay.p(), lay.e_q(), lay.pg(), lay.pd(), lay.v()];
        for (k, r) in ranges.into_iter().enumerate() {
            worst[k] = worst[k].max(max_diff(&ya[r.clone()], &yb[r]));
        }
        let la = price_equivalent(&cla, ya);
        let lb = price_equivalent(&clb, yb);
        worst[6] = worst[6].max(max_diff(&la, &lb));
    }
    let max_deviation = worst.iter().copied().fold(0.0, f64::max);
    Ok(CompareReport {
        variant_a: a,
        variant_b: b,
        t_end: ta.final_time(),
        samples: ta.len().min(tb.len()),
        blocks: names.iter().map(|n| n.to_string()).zip(worst).collect(),
        max_deviation,
        tolerance,
        passed: max_deviation <= tolerance,
    })
}

/// State of `to` matching `x` of `from`: identical except for the price,
/// which is carried over through its λ-equivalent.
pub fn convert_state(from: &ClosedLoop, to: &ClosedLoop, x: &ClosedLoopState) -> ClosedLoopState {
    let omega = from.physical().omega(&x.physical.p);
    let lambda = from.controller().lambda_equivalent(&x.controller, &omega);
    let mut out = x.clone();
    out.controller.price = if to.variant().uses_theta() {
        to.controller().theta_from_basic(&x.physical.p, &lambda)
    } else {
        lambda
    };
    out
}

fn price_equivalent(cl: &ClosedLoop, y: &[f64]) -> Vec<f64> {
    let x = ClosedLoopState::from_slice(cl.layout(), y, 0.0);
    let omega = cl.physical().omega(&x.physical.p);
    cl.controller().lambda_equivalent(&x.controller, &omega)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}
