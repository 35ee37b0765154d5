//! Social welfare problems: objectives, constraints, optimality residuals and
//! an independent optimizer.
//!
//! All variants share the decision vector `(P_g, P_d, v)` and the balance
//! `D_c v − P_g + P_d = 0` on the communication graph. They differ in the
//! extra structure attached to a [`WelfareProblem`]:
//!
//! * no constraints: the basic problem;
//! * [`Constraints::Nodal`]: convex `g(P_g, P_d) ≤ 0` with multipliers `μ`;
//! * [`Constraints::LineLimits`]: `|v| ≤ κ` with multipliers `μ₊, μ₋`,
//!   usually paired with a transmission cost `C_T(v)`;
//! * `ρ > 0`: the augmented objective with penalty `½ρ‖D_c v − P_g + P_d‖²`;
//! * `ν > 0`: a logarithmic barrier on the nodal constraints.

pub mod constraints;
pub mod functions;
mod kkt;
mod oracle;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::topology::Graph;

pub use constraints::{BoxConstraints, ConstraintFn, NodalBounds};
pub use functions::{NodeFunction, ScalarFn, Shape};
pub use kkt::{KktPoint, KktResidual, ResidualPart};
pub use oracle::{barrier_optimum, oracle_optimum, OracleOptions, OracleSolution};

#[derive(Clone, Debug)]
pub enum Constraints {
    None,
    Nodal(Arc<dyn ConstraintFn>),
    /// κ per communication edge.
    LineLimits(Vec<f64>),
}

/// Value and gradient of the barrier-augmented objective.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierEval {
    pub value: f64,
    pub grad_pg: Vec<f64>,
    pub grad_pd: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct WelfareProblem {
    comm: Graph,
    costs: Vec<NodeFunction>,
    utilities: Vec<NodeFunction>,
    transmission: Option<Vec<NodeFunction>>,
    constraints: Constraints,
    rho: f64,
    nu: Option<f64>,
    slater_point: Option<Vec<f64>>,
}

impl WelfareProblem {
    /// Basic problem on the communication graph `comm`.
    pub fn new(comm: Graph, costs: Vec<NodeFunction>, utilities: Vec<NodeFunction>) -> Result<Self> {
        let n = comm.node_count();
        if costs.len() != n {
            return Err(Error::dimension("market.cost", n, costs.len()));
        }
        if utilities.len() != n {
            return Err(Error::dimension("market.utility", n, utilities.len()));
        }
        for (i, c) in costs.iter().enumerate() {
            if !c.shape_ok(Shape::Convex) {
                return Err(Error::invalid(
                    format!("market.cost[{i}].q"),
                    "cost curvature must be nonnegative",
                ));
            }
        }
        for (i, u) in utilities.iter().enumerate() {
            if !u.shape_ok(Shape::Concave) {
                return Err(Error::invalid(
                    format!("market.utility[{i}].q"),
                    "utility curvature must be nonnegative",
                ));
            }
        }
        Ok(Self {
            comm,
            costs,
            utilities,
            transmission: None,
            constraints: Constraints::None,
            rho: 0.0,
            nu: None,
            slater_point: None,
        })
    }

    pub fn with_transmission_costs(mut self, costs: Vec<NodeFunction>) -> Result<Self> {
        let mc = self.comm.edge_count();
        if costs.len() != mc {
            return Err(Error::dimension("market.transmission_cost", mc, costs.len()));
        }
        for (k, c) in costs.iter().enumerate() {
            if !c.shape_ok(Shape::Convex) {
                return Err(Error::invalid(
                    format!("market.transmission_cost[{k}].q"),
                    "transmission cost curvature must be nonnegative",
                ));
            }
        }
        self.transmission = Some(costs);
        Ok(self)
    }

    pub fn with_bounds(self, bounds: &NodalBounds) -> Result<Self> {
        if bounds.pg_min.len() != self.node_count() {
            return Err(Error::dimension(
                "market.bounds",
                self.node_count(),
                bounds.pg_min.len(),
            ));
        }
        let g = BoxConstraints::new(bounds)?;
        self.with_nodal_constraints(Arc::new(g))
    }

    /// Attaches `g(P_g, P_d) ≤ 0`. Fails unless a strictly feasible point
    /// satisfying the balance exists.
    pub fn with_nodal_constraints(mut self, g: Arc<dyn ConstraintFn>) -> Result<Self> {
        if g.is_empty() {
            self.constraints = Constraints::None;
            return Ok(self);
        }
        self.constraints = Constraints::Nodal(g.clone());
        let point = oracle::slater_point(&self)?;
        if !g.is_affine() {
            let n = self.node_count();
            constraints::check_midpoint_convexity(g.as_ref(), &point[..2 * n], 1.0, 200, 7)?;
        }
        self.slater_point = Some(point);
        Ok(self)
    }

    pub fn with_line_limits(mut self, kappa: Vec<f64>) -> Result<Self> {
        let mc = self.comm.edge_count();
        if kappa.len() != mc {
            return Err(Error::dimension("market.line_limits", mc, kappa.len()));
        }
        if let Some(k) = kappa.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::invalid(
                format!("market.line_limits[{k}]"),
                "κ must be strictly positive",
            ));
        }
        self.constraints = Constraints::LineLimits(kappa);
        Ok(self)
    }

    pub fn with_rho(mut self, rho: f64) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::invalid("market.rho", "ρ must be finite and nonnegative"));
        }
        self.rho = rho;
        Ok(self)
    }

    pub fn with_barrier(mut self, nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::invalid(
                "market.nu",
                "barrier parameter ν must be strictly positive",
            ));
        }
        if matches!(self.constraints, Constraints::LineLimits(_)) {
            return Err(Error::invalid("market.nu", "barrier applies to nodal constraints only"));
        }
        self.nu = Some(nu);
        Ok(self)
    }

    pub fn comm(&self) -> &Graph {
        &self.comm
    }

    pub fn node_count(&self) -> usize {
        self.comm.node_count()
    }

    pub fn comm_edge_count(&self) -> usize {
        self.comm.edge_count()
    }

    pub fn costs(&self) -> &[NodeFunction] {
        &self.costs
    }

    pub fn utilities(&self) -> &[NodeFunction] {
        &self.utilities
    }

    pub fn transmission_costs(&self) -> Option<&[NodeFunction]> {
        self.transmission.as_deref()
    }

    pub fn constraints(&self) -> &Constraints {
        &self.constraints
    }

    pub fn nodal_constraints(&self) -> Option<&Arc<dyn ConstraintFn>> {
        match &self.constraints {
            Constraints::Nodal(g) => Some(g),
            _ => None,
        }
    }

    /// Number of nodal multipliers `μ`.
    pub fn nodal_constraint_count(&self) -> usize {
        self.nodal_constraints().map_or(0, |g| g.len())
    }

    pub fn line_limits(&self) -> Option<&[f64]> {
        match &self.constraints {
            Constraints::LineLimits(k) => Some(k),
            _ => None,
        }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn nu(&self) -> Option<f64> {
        self.nu
    }

    /// Strictly feasible `(P_g, P_d, v)` found when nodal constraints were attached.
    pub fn slater_point(&self) -> Option<&[f64]> {
        self.slater_point.as_deref()
    }

    /// `g(P_g, P_d)`; empty without nodal constraints.
    pub fn eval_constraints(&self, pg: &[f64], pd: &[f64]) -> Vec<f64> {
        match self.nodal_constraints() {
            Some(g) => {
                let mut out = vec![0.0; g.len()];
                g.eval(pg, pd, &mut out);
                out
            }
            None => Vec::new(),
        }
    }

    /// `D_c v − P_g + P_d`.
    pub fn balance(&self, pg: &[f64], pd: &[f64], v: &[f64]) -> Vec<f64> {
        let mut r = self.comm.incidence_apply(v);
        for i in 0..r.len() {
            r[i] += pd[i] - pg[i];
        }
        r
    }

    /// `S(P_g, P_d) = Σ U_i(P_di) − Σ C_i(P_gi)`.
    pub fn social_welfare(&self, pg: &[f64], pd: &[f64]) -> f64 {
        let u: f64 = self.utilities.iter().zip(pd).map(|(f, x)| f.value(*x)).sum();
        let c: f64 = self.costs.iter().zip(pg).map(|(f, x)| f.value(*x)).sum();
        u - c
    }

    /// Welfare minus transmission cost minus the augmentation penalty.
    pub fn modified_welfare(&self, pg: &[f64], pd: &[f64], v: &[f64]) -> f64 {
        let mut s = self.social_welfare(pg, pd);
        if let Some(ct) = &self.transmission {
            s -= ct.iter().zip(v).map(|(f, x)| f.value(*x)).sum::<f64>();
        }
        if self.rho > 0.0 {
            let r = self.balance(pg, pd, v);
            s -= 0.5 * self.rho * r.iter().map(|x| x * x).sum::<f64>();
        }
        s
    }

    /// `−S(P_g, P_d) − ν Σ log(−g_i)` and its gradient in `(P_g, P_d)`.
    pub fn barrier_objective(&self, pg: &[f64], pd: &[f64], nu: f64) -> Result<BarrierEval> {
        let value = -self.social_welfare(pg, pd);
        let mut grad_pg: Vec<f64> = self.costs.iter().zip(pg).map(|(f, x)| f.derivative(*x)).collect();
        let mut grad_pd: Vec<f64> = self.utilities.iter().zip(pd).map(|(f, x)| -f.derivative(*x)).collect();
        let Some(g) = self.nodal_constraints() else {
            return Ok(BarrierEval {
                value,
                grad_pg,
                grad_pd,
            });
        };
        let gv = self.eval_constraints(pg, pd);
        if let Some(i) = gv.iter().position(|x| !(*x < 0.0)) {
            return Err(Error::Boundary { index: i, value: gv[i] });
        }
        let mut value = value;
        if nu != 0.0 {
            value -= nu * gv.iter().map(|x| (-x).ln()).sum::<f64>();
            let weights: Vec<f64> = gv.iter().map(|x| -nu / x).collect();
            g.jacobian_t_mul(pg, pd, &weights, &mut grad_pg, &mut grad_pd);
        }
        Ok(BarrierEval {
            value,
            grad_pg,
            grad_pd,
        })
    }

    /// True when the welfare part alone determines a unique optimum by a
    /// scalar price search: unconstrained, unaugmented, strictly convex
    /// quadratics and no transmission cost.
    pub fn is_quadratic_basic(&self) -> bool {
        matches!(self.constraints, Constraints::None)
            && self.rho == 0.0
            && self.transmission.is_none()
            && self
                .costs
                .iter()
                .all(|f| matches!(f.as_quadratic(), Some((a, _, _)) if a > 0.0))
            && self
                .utilities
                .iter()
                .all(|f| matches!(f.as_quadratic(), Some((a, _, _)) if a < 0.0))
    }
}
