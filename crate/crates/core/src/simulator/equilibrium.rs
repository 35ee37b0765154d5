//! Closed-loop equilibrium search.
//!
//! The optimizer point fixes `(P_g, P_d, λ, μ)`; the DC power flow gives a
//! first guess for the angles. A Gauss–Newton iteration then zeroes the
//! closed-loop vector field, with multiplier rows replaced by `g = 0`
//! (active) or `μ = 0` (inactive) and extra rows pinning the quantities the
//! flow conserves: the cycle components of `η` and of `τ_v v`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{ClosedLoop, ClosedLoopState};
use crate::controllers::Variant;
use crate::error::{Error, Result};
use crate::linalg;
use crate::physical::HessianCondition;
use crate::welfare::{barrier_optimum, oracle_optimum, OracleOptions, OracleSolution};

#[derive(Debug, Clone)]
pub struct EquilibriumOptions {
    pub max_iterations: usize,
    /// Target for the max-norm of the (modified) residual.
    pub tolerance: f64,
    /// Largest closed-loop rate `max|ẋ|` accepted at the end.
    pub acceptance: f64,
    pub oracle: OracleOptions,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        Self {
            max_iterations: 60,
            tolerance: 1e-13,
            acceptance: 1e-9,
            oracle: OracleOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Equilibrium {
    pub state: ClosedLoopState,
    /// `max|ẋ|` of the closed loop at [`Self::state`].
    pub residual: f64,
    pub iterations: usize,
    pub oracle: OracleSolution,
    /// Labels of multipliers treated as active.
    pub active: Vec<String>,
    /// All line angle differences inside `(−π/2, π/2)`.
    pub secure: bool,
    pub hessian_min_eigenvalue: f64,
    pub decentralized_condition: Option<HessianCondition>,
    pub schur_condition: Option<HessianCondition>,
}

impl ClosedLoop {
    /// Equilibrium sharing the conserved cycle components of `anchor`
    /// (or of the optimizer-based seed when `anchor` is `None`).
    pub fn find_equilibrium(
        &self,
        anchor: Option<&ClosedLoopState>,
        options: &EquilibriumOptions,
    ) -> Result<Equilibrium> {
        let problem = self.controller.problem();
        let oracle = match (self.variant(), problem.nu()) {
            (Variant::Barrier, Some(nu)) => barrier_optimum(problem, nu)?,
            _ => oracle_optimum(problem, &options.oracle)?,
        };
        let seed = self.seed_from_oracle(&oracle)?;
        let anchor_y = anchor.map_or_else(|| seed.to_vec(), ClosedLoopState::to_vec);
        if anchor_y.len() != self.layout.len() {
            return Err(Error::dimension(
                "equilibrium anchor",
                self.layout.len(),
                anchor_y.len(),
            ));
        }

        let lay = self.layout;
        let point = &oracle.point;
        let oracle_mu: Vec<f64> = if self.variant() == Variant::Barrier {
            Vec::new()
        } else {
            [&point.mu[..], &point.mu_plus, &point.mu_minus].concat()
        };
        let active: Vec<bool> = oracle_mu.iter().map(|m| *m > 1e-9).collect();
        let system = System {
            closed: self,
            active: &active,
            anchor: &anchor_y,
            cycles: self.physical_cycles(),
            comm_cycles: self.comm_cycles(),
        };

        let mut y = seed.to_vec();
        if let Some(a) = anchor {
            // Start from the anchor's cycle components.
            let (eta, v) = (lay.eta(), lay.v());
            let ay = a.to_vec();
            let shift = project_onto(&system.cycles, &ay[eta.clone()], &y[eta.clone()]);
            for (k, i) in eta.enumerate() {
                y[i] += shift[k];
            }
            let tau_v = &self.controller.params().tau_v;
            let sv: Vec<f64> = ay[v.clone()].iter().zip(tau_v).map(|(v, t)| v * t).collect();
            let sy: Vec<f64> = y[v.clone()].iter().zip(tau_v).map(|(v, t)| v * t).collect();
            let shift = project_onto(&system.comm_cycles, &sv, &sy);
            for (k, i) in v.enumerate() {
                y[i] += shift[k] / tau_v[k];
            }
        }

        let mut f = system.eval(&y)?;
        let mut norm = norm2(&f);
        let mut iterations = 0;
        while linalg::max_abs(&f) > options.tolerance && iterations < options.max_iterations {
            iterations += 1;
            let j = system.jacobian(&y, &f)?;
            let step = linalg::least_squares(&j, &-DVector::from_vec(f.clone())).ok_or(Error::SingularJacobian)?;
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-6 {
                let trial: Vec<f64> = y.iter().zip(step.iter()).map(|(y, d)| y + alpha * d).collect();
                if self.check_state(&trial, 0.0).is_ok() {
                    if let Ok(ft) = system.eval(&trial) {
                        let nt = norm2(&ft);
                        if nt < norm || nt <= options.tolerance {
                            y = trial;
                            f = ft;
                            norm = nt;
                            accepted = true;
                            break;
                        }
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }

        for (k, i) in lay.multipliers().enumerate() {
            y[i] = if active[k] { y[i].max(0.0) } else { 0.0 };
        }
        let residual = linalg::max_abs(&self.rhs_flat(&y)?);
        if !(residual <= options.acceptance) {
            return Err(Error::NewtonDiverged { residual });
        }
        let state = ClosedLoopState::from_slice(&lay, &y, 0.0);
        let eta = &state.physical.eta;
        let secure = eta.iter().all(|e| e.abs() < std::f64::consts::FRAC_PI_2);
        let hessian_min_eigenvalue = linalg::min_eigenvalue(&self.physical.hessian(&state.physical));
        let e_bar = &state.physical.e_q;
        let active_labels = self
            .multiplier_labels()
            .into_iter()
            .zip(&active)
            .filter(|(_, a)| **a)
            .map(|(l, _)| l)
            .collect();
        Ok(Equilibrium {
            decentralized_condition: self.physical.decentralized_hessian_condition(eta, e_bar).ok(),
            schur_condition: self.physical.schur_dominance_condition(eta, e_bar).ok(),
            state,
            residual,
            iterations,
            oracle,
            active: active_labels,
            secure,
            hessian_min_eigenvalue,
        })
    }

    fn seed_from_oracle(&self, oracle: &OracleSolution) -> Result<ClosedLoopState> {
        let controller = self.controller.state_from_kkt(&oracle.point);
        let injection: Vec<f64> = controller.pg.iter().zip(&controller.pd).map(|(g, d)| g - d).collect();
        let mut e_q = self.physical.zero_flow_state()?.e_q;
        let mut eta = vec![0.0; self.layout.m];
        for _ in 0..4 {
            eta = self.physical.dc_flow_angles(&injection, &e_q);
            e_q = self.physical.voltage_equilibrium(&eta)?;
        }
        Ok(ClosedLoopState {
            physical: crate::physical::PhysicalState {
                eta,
                p: vec![0.0; self.layout.n],
                e_q,
            },
            controller,
            t: 0.0,
        })
    }

    /// Constraint values paired with the multipliers, in layout order.
    pub(crate) fn multiplier_constraints(&self, y: &[f64]) -> Vec<f64> {
        let lay = &self.layout;
        let problem = self.controller.problem();
        let mut out = if lay.l > 0 {
            problem.eval_constraints(&y[lay.pg()], &y[lay.pd()])
        } else {
            Vec::new()
        };
        if let Some(kappa) = problem.line_limits() {
            let v = &y[lay.v()];
            out.extend(v.iter().zip(kappa).map(|(v, k)| v - k));
            out.extend(v.iter().zip(kappa).map(|(v, k)| -v - k));
        }
        out
    }

    pub(crate) fn multiplier_labels(&self) -> Vec<String> {
        let lay = &self.layout;
        let mut out: Vec<String> = match self.controller.problem().nodal_constraints() {
            Some(g) if lay.l > 0 => (0..lay.l).map(|i| format!("mu[{}]", g.row_label(i))).collect(),
            _ => Vec::new(),
        };
        out.extend((0..lay.lines).map(|k| format!("mu_plus[{}]", k + 1)));
        out.extend((0..lay.lines).map(|k| format!("mu_minus[{}]", k + 1)));
        out
    }
}

struct System<'a> {
    closed: &'a ClosedLoop,
    active: &'a [bool],
    anchor: &'a [f64],
    cycles: DMatrix<f64>,
    comm_cycles: DMatrix<f64>,
}

impl System<'_> {
    fn eval(&self, y: &[f64]) -> Result<Vec<f64>> {
        let lay = &self.closed.layout;
        let mut f = self.closed.rhs_flat(y)?;
        let g = self.closed.multiplier_constraints(y);
        for (k, i) in lay.multipliers().enumerate() {
            f[i] = if self.active[k] { g[k] } else { y[i] };
        }
        let d_eta: Vec<f64> = lay.eta().map(|i| y[i] - self.anchor[i]).collect();
        f.extend((self.cycles.transpose() * DVector::from_vec(d_eta)).iter());
        let tau_v = &self.closed.controller.params().tau_v;
        let d_v: Vec<f64> = lay
            .v()
            .enumerate()
            .map(|(k, i)| tau_v[k] * (y[i] - self.anchor[i]))
            .collect();
        f.extend((self.comm_cycles.transpose() * DVector::from_vec(d_v)).iter());
        Ok(f)
    }

    fn jacobian(&self, y: &[f64], f0: &[f64]) -> Result<DMatrix<f64>> {
        let multipliers = self.closed.layout.multipliers();
        let mut j = DMatrix::zeros(f0.len(), y.len());
        let mut yp = y.to_vec();
        for c in 0..y.len() {
            let h = 1e-7 * y[c].abs().max(1.0);
            if multipliers.contains(&c) {
                yp[c] = y[c] + h;
                let fp = self.eval(&yp)?;
                for r in 0..f0.len() {
                    j[(r, c)] = (fp[r] - f0[r]) / h;
                }
            } else {
                yp[c] = y[c] + h;
                let fp = self.eval(&yp)?;
                yp[c] = y[c] - h;
                let fm = self.eval(&yp)?;
                for r in 0..f0.len() {
                    j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
                }
            }
            yp[c] = y[c];
        }
        Ok(j)
    }
}

/// `B Bᵀ(target − current)` for an orthonormalized cycle basis `B`.
fn project_onto(basis: &DMatrix<f64>, target: &[f64], current: &[f64]) -> Vec<f64> {
    if basis.ncols() == 0 {
        return vec![0.0; target.len()];
    }
    let q = basis.clone().qr().q();
    let d = DVector::from_iterator(target.len(), target.iter().zip(current).map(|(a, b)| a - b));
    (&q * (q.transpose() * d)).as_slice().to_vec()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
