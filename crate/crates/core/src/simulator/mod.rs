//! Closed-loop assembly, time integration and equilibrium search.
//!
//! The physical network receives `(P_g, P_d)` from the controller; the
//! controller receives ω (and, for the transformed variants, the line
//! outflow). Multipliers are integrated with the smooth projected field and
//! clamped to `max(0, μ)` after every accepted step.

mod equilibrium;
mod integrate;

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::controllers::{Controller, ControllerState, Measurements, Variant};
use crate::error::{Error, Result};
use crate::physical::{PhysicalModel, PhysicalState};

pub use equilibrium::{Equilibrium, EquilibriumOptions};
pub use integrate::{IntegratorConfig, RunStatus, Scheme, Trajectory};

/// Sizes of the stacked state vector
/// `(η, p, E'_q, P_g, P_d, v, λ|θ, μ, μ₊, μ₋)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n: usize,
    pub m: usize,
    pub mc: usize,
    pub l: usize,
    pub lines: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.m + 5 * self.n + self.mc + self.l + 2 * self.lines
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn eta(&self) -> Range<usize> {
        0..self.m
    }

    pub fn p(&self) -> Range<usize> {
        self.m..self.m + self.n
    }

    pub fn e_q(&self) -> Range<usize> {
        let s = self.m + self.n;
        s..s + self.n
    }

    pub fn pg(&self) -> Range<usize> {
        let s = self.m + 2 * self.n;
        s..s + self.n
    }

    pub fn pd(&self) -> Range<usize> {
        let s = self.m + 3 * self.n;
        s..s + self.n
    }

    pub fn v(&self) -> Range<usize> {
        let s = self.m + 4 * self.n;
        s..s + self.mc
    }

    pub fn price(&self) -> Range<usize> {
        let s = self.m + 4 * self.n + self.mc;
        s..s + self.n
    }

    pub fn mu(&self) -> Range<usize> {
        let s = self.m + 5 * self.n + self.mc;
        s..s + self.l
    }

    pub fn mu_plus(&self) -> Range<usize> {
        let s = self.mu().end;
        s..s + self.lines
    }

    pub fn mu_minus(&self) -> Range<usize> {
        let s = self.mu_plus().end;
        s..s + self.lines
    }

    /// All multiplier entries; always the tail of the vector.
    pub fn multipliers(&self) -> Range<usize> {
        self.mu().start..self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopState {
    pub physical: PhysicalState,
    pub controller: ControllerState,
    pub t: f64,
}

impl ClosedLoopState {
    pub fn to_vec(&self) -> Vec<f64> {
        let p = &self.physical;
        let c = &self.controller;
        [
            &p.eta[..],
            &p.p,
            &p.e_q,
            &c.pg,
            &c.pd,
            &c.v,
            &c.price,
            &c.mu,
            &c.mu_plus,
            &c.mu_minus,
        ]
        .concat()
    }

    pub fn from_slice(layout: &Layout, y: &[f64], t: f64) -> Self {
        let take = |r: Range<usize>| y[r].to_vec();
        Self {
            physical: PhysicalState {
                eta: take(layout.eta()),
                p: take(layout.p()),
                e_q: take(layout.e_q()),
            },
            controller: ControllerState {
                pg: take(layout.pg()),
                pd: take(layout.pd()),
                v: take(layout.v()),
                price: take(layout.price()),
                mu: take(layout.mu()),
                mu_plus: take(layout.mu_plus()),
                mu_minus: take(layout.mu_minus()),
            },
            t,
        }
    }
}

/// Physical network and market controller coupled through frequency.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    physical: PhysicalModel,
    controller: Controller,
    layout: Layout,
    warnings: Vec<String>,
}

impl ClosedLoop {
    pub fn new(physical: PhysicalModel, controller: Controller) -> Result<Self> {
        let n = physical.node_count();
        let problem = controller.problem();
        if problem.node_count() != n {
            return Err(Error::dimension("market nodes", n, problem.node_count()));
        }
        let mut warnings = Vec::new();
        if controller.variant() == Variant::Congestion {
            if problem.comm().edges() != physical.graph().edges() {
                return Err(Error::invalid(
                    "topology.communication_edges",
                    "congestion variant requires the communication graph to equal the physical graph",
                ));
            }
            if !physical.graph().is_acyclic() {
                warnings.push(
                    "congestion variant on a cyclic network: convergence is only guaranteed on trees".to_string(),
                );
            }
        }
        let layout = Layout {
            n,
            m: physical.edge_count(),
            mc: problem.comm_edge_count(),
            l: controller.multiplier_state_count(),
            lines: problem.line_limits().map_or(0, |k| k.len()),
        };
        Ok(Self {
            physical,
            controller,
            layout,
            warnings,
        })
    }

    pub fn physical(&self) -> &PhysicalModel {
        &self.physical
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn variant(&self) -> Variant {
        self.controller.variant()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Same closed loop with physical edge `k` reversed. The communication
    /// graph is untouched, so this fails for the congestion variant.
    pub fn with_edge_flipped(&self, k: usize) -> Result<Self> {
        let physical = self.physical.with_edge_flipped(k);
        Self::new(physical, self.controller.clone())
    }

    pub fn rhs(&self, x: &ClosedLoopState) -> Result<ClosedLoopState> {
        let c = &x.controller;
        let physical = self.physical.rhs(&x.physical, &c.pg, &c.pd);
        let omega = self.physical.omega(&x.physical.p);
        let outflow = if self.variant().uses_theta() {
            self.physical.nodal_outflow(&x.physical.eta, &x.physical.e_q)
        } else {
            Vec::new()
        };
        let meas = Measurements {
            omega: &omega,
            line_outflow: &outflow,
        };
        let controller = self.controller.rhs(c, &meas)?;
        Ok(ClosedLoopState {
            physical,
            controller,
            t: 1.0,
        })
    }

    pub fn rhs_flat(&self, y: &[f64]) -> Result<Vec<f64>> {
        let x = ClosedLoopState::from_slice(&self.layout, y, 0.0);
        Ok(self.rhs(&x)?.to_vec())
    }

    /// Power delivered to the physical network through its input port,
    /// `ωᵀ(P_g − P_d)`, and to the controller through its port, `−ωᵀ(P_g − P_d)`.
    pub fn port_powers(&self, x: &ClosedLoopState) -> (f64, f64) {
        let omega = self.physical.omega(&x.physical.p);
        let c = &x.controller;
        let physical: f64 = (0..omega.len()).map(|i| omega[i] * (c.pg[i] - c.pd[i])).sum();
        let controller: f64 = (0..omega.len()).map(|i| -omega[i] * (c.pg[i] - c.pd[i])).sum();
        (physical, controller)
    }

    /// Rejects non-finite states and non-positive voltages.
    pub fn check_state(&self, y: &[f64], t: f64) -> Result<()> {
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::StepRejected {
                t,
                reason: format!("state component {i} is not finite"),
            });
        }
        if let Some(i) = y[self.layout.e_q()].iter().position(|e| *e <= 0.0) {
            return Err(Error::StepRejected {
                t,
                reason: format!("E'_q[{}] = {} is not positive", i + 1, y[self.layout.e_q()][i]),
            });
        }
        Ok(())
    }

    /// Default initial state: physical zero-flow branch, controller at zero.
    pub fn default_initial_state(&self) -> Result<ClosedLoopState> {
        Ok(ClosedLoopState {
            physical: self.physical.zero_flow_state()?,
            controller: self.controller.zero_state(),
            t: 0.0,
        })
    }

    /// Fundamental cycles of the physical graph (columns).
    pub(crate) fn physical_cycles(&self) -> DMatrix<f64> {
        self.physical.graph().cycle_basis()
    }

    /// Fundamental cycles of the communication graph (columns).
    pub(crate) fn comm_cycles(&self) -> DMatrix<f64> {
        self.controller.problem().comm().cycle_basis()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::ControllerParams;
    use crate::physical::PhysicalParams;
    use crate::topology::Graph;
    use crate::welfare::{NodeFunction, WelfareProblem};

    pub(crate) fn three_bus(variant: Variant) -> ClosedLoop {
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
        let mut problem = WelfareProblem::new(
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
        if variant == Variant::Augmented {
            problem = problem.with_rho(1.0).unwrap();
        }
        let controller = Controller::new(variant, ControllerParams::unit(3, 3, 0, 0), problem, &params).unwrap();
        ClosedLoop::new(physical, controller).unwrap()
    }

    #[test]
    fn layout_round_trip() {
        let cl = three_bus(Variant::Basic);
        let mut x = cl.default_initial_state().unwrap();
        x.controller.price = vec![0.1, 0.2, 0.3];
        let y = x.to_vec();
        assert_eq!(y.len(), cl.layout().len());
        assert_eq!(ClosedLoopState::from_slice(cl.layout(), &y, 0.0), x);
    }

    #[test]
    fn omega_perturbation_does_not_move_price_instantly() {
        let cl = three_bus(Variant::Basic);
        let x = cl.default_initial_state().unwrap();
        let mut xp = x.clone();
        xp.physical.p[1] += 1e-3;
        let a = cl.rhs(&x).unwrap();
        let b = cl.rhs(&xp).unwrap();
        assert_eq!(a.controller.price, b.controller.price);
        assert_ne!(a.controller.pg[1], b.controller.pg[1]);
    }

    #[test]
    fn port_powers_cancel() {
        let cl = three_bus(Variant::Basic);
        let mut x = cl.default_initial_state().unwrap();
        x.physical.p = vec![0.1, -0.2, 0.05];
        x.controller.pg = vec![0.3, 0.1, 0.2];
        x.controller.pd = vec![0.2, 0.4, 0.0];
        let (a, b) = cl.port_powers(&x);
        assert!(a != 0.0);
        assert_eq!(a + b, 0.0);
    }

    #[test]
    fn congestion_requires_matching_graphs() {
        let g = Graph::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let comm = Graph::new(3, vec![(0, 1), (0, 2)]).unwrap();
        let params = PhysicalParams {
            inertia: vec![4.0; 3],
            damping: vec![1.0; 3],
            x_d: vec![1.0; 3],
            x_d_prime: vec![0.3; 3],
            t_d_prime: vec![5.0; 3],
            e_f: vec![1.0; 3],
            susceptance: vec![1.5; 2],
        };
        let physical = PhysicalModel::new(g, params.clone()).unwrap();
        let problem = WelfareProblem::new(
            comm,
            vec![NodeFunction::cost(1.0, 0.0, 0.0); 3],
            vec![NodeFunction::utility(1.0, 1.0, 0.0); 3],
        )
        .unwrap()
        .with_line_limits(vec![0.1, 0.1])
        .unwrap();
        let controller = Controller::new(
            Variant::Congestion,
            ControllerParams::unit(3, 2, 0, 2),
            problem,
            &params,
        )
        .unwrap();
        let err = ClosedLoop::new(physical, controller).unwrap_err().to_string();
        assert!(err.contains("topology.communication_edges"));
    }
}
