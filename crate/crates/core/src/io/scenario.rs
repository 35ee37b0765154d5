//! TOML scenario files.
//!
//! Node numbers in `edges` are 1-based. All quantities are per-unit;
//! `base_mva` is descriptive only.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controllers::{Controller, ControllerParams, Variant};
use crate::error::{Error, Result, ValidationError};
use crate::physical::{PhysicalModel, PhysicalParams};
use crate::simulator::{ClosedLoop, ClosedLoopState, EquilibriumOptions, IntegratorConfig};
use crate::topology::Graph;
use crate::welfare::{NodalBounds, NodeFunction, WelfareProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    /// Power base the per-unit values refer to. Not used in any computation.
    #[serde(default = "default_base_mva")]
    pub base_mva: f64,
    pub topology: TopologySpec,
    pub physical: PhysicalParams,
    pub market: MarketSpec,
    pub controller: ControllerSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub integrator: IntegratorConfig,
}

fn default_base_mva() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub nodes: usize,
    /// Physical lines as `[from, to]`, 1-based.
    pub edges: Vec<[usize; 2]>,
    /// Defaults to the physical edges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub communication_edges: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_labels: Option<Vec<String>>,
}

/// `½ q x² + c x + b` for costs, `−½ q x² + c x + b` for utilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    #[serde(default)]
    pub q: f64,
    #[serde(default)]
    pub c: f64,
    #[serde(default)]
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pg_min: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pg_max: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pd_min: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pd_max: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub cost: Vec<QuadraticSpec>,
    pub utility: Vec<QuadraticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transmission_cost: Option<Vec<QuadraticSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_limits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
}

/// Controller variant and time constants; omitted vectors default to ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_g: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_d: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_plus: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_minus: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Start {
    /// Physical zero-flow branch, controller at zero.
    #[default]
    ZeroFlow,
    /// Closed-loop equilibrium built from the optimizer point.
    Equilibrium,
}

/// Starting point, optional random perturbation and per-field overrides.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub start: Start,
    /// Relative size of the uniform perturbation applied to the start point.
    #[serde(default)]
    pub perturbation: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pg: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pd: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    /// λ, or θ for the transformed variants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_plus: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_minus: Option<Vec<f64>>,
}

impl Scenario {
    /// Parses and fully validates a scenario.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if !(self.base_mva.is_finite() && self.base_mva > 0.0) {
            errors.push(ValidationError::new("base_mva", "must be finite and strictly positive"));
        }
        if !(0.0..1.0).contains(&self.initial.perturbation) {
            errors.push(ValidationError::new("initial.perturbation", "must lie in [0, 1)"));
        }
        if let Err(e) = self.integrator.validate() {
            collect(e, &mut errors)?;
        }
        if let Err(e) = self.physical_graph() {
            collect(e, &mut errors)?;
            if let Err(e) = self
                .physical
                .validate_sizes(self.topology.nodes, self.topology.edges.len())
            {
                collect(e, &mut errors)?;
            }
        } else if let Err(e) = self.build_closed_loop() {
            collect(e, &mut errors)?;
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(errors))
        }
    }

    /// Same scenario with another controller variant.
    pub fn with_variant(&self, variant: Variant) -> Self {
        let mut s = self.clone();
        s.controller.variant = variant;
        s
    }

    pub fn physical_graph(&self) -> Result<Graph> {
        let edges = zero_based(&self.topology.edges, "topology.edges")?;
        let g = Graph::new(self.topology.nodes, edges).map_err(|e| prefix(e, "topology."))?;
        g.with_labels(self.topology.node_labels.clone(), self.topology.edge_labels.clone())
            .map_err(|e| prefix(e, "topology."))
    }

    pub fn communication_graph(&self) -> Result<Graph> {
        match &self.topology.communication_edges {
            None => self.physical_graph(),
            Some(edges) => {
                let edges = zero_based(edges, "topology.communication_edges")?;
                Graph::new(self.topology.nodes, edges).map_err(|e| prefix(e, "topology.communication_"))
            }
        }
    }

    pub fn welfare_problem(&self) -> Result<WelfareProblem> {
        let m = &self.market;
        let comm = self.communication_graph()?;
        let costs = m.cost.iter().map(|f| NodeFunction::cost(f.q, f.c, f.b)).collect();
        let utilities = m.utility.iter().map(|f| NodeFunction::utility(f.q, f.c, f.b)).collect();
        let mut problem = WelfareProblem::new(comm, costs, utilities)?;
        if let Some(ct) = &m.transmission_cost {
            problem =
                problem.with_transmission_costs(ct.iter().map(|f| NodeFunction::cost(f.q, f.c, f.b)).collect())?;
        }
        if let Some(b) = &m.bounds {
            let n = self.topology.nodes;
            let fill = |v: &Option<Vec<f64>>, default: f64| v.clone().unwrap_or_else(|| vec![default; n]);
            let bounds = NodalBounds {
                pg_min: fill(&b.pg_min, f64::NEG_INFINITY),
                pg_max: fill(&b.pg_max, f64::INFINITY),
                pd_min: fill(&b.pd_min, f64::NEG_INFINITY),
                pd_max: fill(&b.pd_max, f64::INFINITY),
            };
            bounds.validate(n)?;
            problem = problem.with_bounds(&bounds)?;
        }
        if let Some(kappa) = &m.line_limits {
            problem = problem.with_line_limits(kappa.clone())?;
        }
        if let Some(rho) = m.rho {
            problem = problem.with_rho(rho)?;
        }
        if let Some(nu) = m.nu {
            problem = problem.with_barrier(nu)?;
        }
        Ok(problem)
    }

    pub fn controller_params(&self, problem: &WelfareProblem) -> ControllerParams {
        let c = &self.controller;
        let n = problem.node_count();
        let mc = problem.comm_edge_count();
        let l = problem.nodal_constraint_count();
        let lines = problem.line_limits().map_or(0, |k| k.len());
        let pick = |v: &Option<Vec<f64>>, len: usize| v.clone().unwrap_or_else(|| vec![1.0; len]);
        ControllerParams {
            tau_g: pick(&c.tau_g, n),
            tau_d: pick(&c.tau_d, n),
            tau_v: pick(&c.tau_v, mc),
            tau_lambda: pick(&c.tau_lambda, n),
            tau_theta: pick(&c.tau_theta, n),
            tau_mu: pick(&c.tau_mu, l),
            tau_plus: pick(&c.tau_plus, lines),
            tau_minus: pick(&c.tau_minus, lines),
        }
    }

    pub fn build_closed_loop(&self) -> Result<ClosedLoop> {
        let graph = self.physical_graph()?;
        self.physical.validate(&graph)?;
        let physical = PhysicalModel::new(graph, self.physical.clone())?;
        let problem = self.welfare_problem()?;
        let params = self.controller_params(&problem);
        let controller = Controller::new(self.controller.variant, params, problem, &self.physical)?;
        ClosedLoop::new(physical, controller)
    }

    /// Initial state: start point, perturbation drawn with `seed` (the
    /// scenario's seed when `None`), then explicit overrides.
    pub fn initial_state(&self, cl: &ClosedLoop, seed: Option<u64>) -> Result<ClosedLoopState> {
        let init = &self.initial;
        let mut x = match init.start {
            Start::ZeroFlow => cl.default_initial_state()?,
            Start::Equilibrium => cl.find_equilibrium(None, &EquilibriumOptions::default())?.state,
        };
        if init.perturbation > 0.0 {
            x = perturb_state(cl, &x, init.perturbation, seed.unwrap_or(init.seed));
        }
        let lay = cl.layout();
        #[allow(clippy::type_complexity)]
        let overrides: [(&str, &Option<Vec<f64>>, &mut Vec<f64>); 10] = [
            ("initial.eta", &init.eta, &mut x.physical.eta),
            ("initial.p", &init.p, &mut x.physical.p),
            ("initial.e_q", &init.e_q, &mut x.physical.e_q),
            ("initial.pg", &init.pg, &mut x.controller.pg),
            ("initial.pd", &init.pd, &mut x.controller.pd),
            ("initial.v", &init.v, &mut x.controller.v),
            ("initial.price", &init.price, &mut x.controller.price),
            ("initial.mu", &init.mu, &mut x.controller.mu),
            ("initial.mu_plus", &init.mu_plus, &mut x.controller.mu_plus),
            ("initial.mu_minus", &init.mu_minus, &mut x.controller.mu_minus),
        ];
        for (path, value, target) in overrides {
            if let Some(v) = value {
                if v.len() != target.len() {
                    return Err(Error::dimension(path, target.len(), v.len()));
                }
                target.clone_from(v);
            }
        }
        let y = x.to_vec();
        if let Some(i) = y[lay.multipliers()].iter().position(|m| *m < 0.0) {
            return Err(Error::invalid(
                format!("initial.multipliers[{i}]"),
                "multipliers must be non-negative",
            ));
        }
        cl.physical().check_voltages(&x.physical.e_q).map_err(|e| match e {
            Error::Domain(msg) => Error::invalid("initial.e_q", msg),
            other => other,
        })?;
        Ok(x)
    }
}

/// Uniform relative perturbation of size `eps`: every component moves by at
/// most `eps·max(|x_i|, 0.1)`. Angles move through node angles so `η` keeps
/// its cycle components; multipliers stay non-negative.
pub fn perturb_state(cl: &ClosedLoop, x: &ClosedLoopState, eps: f64, seed: u64) -> ClosedLoopState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lay = cl.layout();
    let mut y = x.to_vec();
    for i in lay.p().start..lay.len() {
        let scale = y[i].abs().max(0.1);
        y[i] += eps * scale * rng.random_range(-1.0..=1.0);
    }
    let eta_scale = y[lay.eta()].iter().fold(0.1f64, |a, e| a.max(e.abs())) * 0.5;
    let nodes: Vec<f64> = (0..lay.n)
        .map(|_| eps * eta_scale * rng.random_range(-1.0..=1.0))
        .collect();
    let shift = cl.physical().graph().incidence_t_apply(&nodes);
    for (k, i) in lay.eta().enumerate() {
        y[i] += shift[k];
    }
    for m in &mut y[lay.multipliers()] {
        *m = m.max(0.0);
    }
    ClosedLoopState::from_slice(lay, &y, x.t)
}

fn zero_based(edges: &[[usize; 2]], path: &str) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(edges.len());
    let mut errors = Vec::new();
    for (k, &[a, b]) in edges.iter().enumerate() {
        if a == 0 || b == 0 {
            errors.push(ValidationError::new(format!("{path}[{k}]"), "node numbers are 1-based"));
        } else {
            out.push((a - 1, b - 1));
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::Invalid(errors))
    }
}

fn prefix(e: Error, p: &str) -> Error {
    match e {
        Error::Invalid(list) => Error::Invalid(
            list.into_iter()
                .map(|v| ValidationError::new(format!("{p}{}", v.path), v.rule))
                .collect(),
        ),
        other => other,
    }
}

/// Moves validation failures into `errors`; other errors are returned.
fn collect(e: Error, errors: &mut Vec<ValidationError>) -> Result<()> {
    match e {
        Error::Invalid(list) => {
            errors.extend(list);
            Ok(())
        }
        Error::Dimension { what, expected, got } => {
            errors.push(ValidationError::new(
                what,
                format!("expected {expected} values, got {got}"),
            ));
            Ok(())
        }
        other => Err(other),
    }
}
