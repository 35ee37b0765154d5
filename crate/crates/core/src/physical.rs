//! Flux-decay (third-order) generator network.
//!
//! State is `(η, p, E'_q)`: edge angle differences, angular momenta `p = Mω`
//! and transient internal voltages. Frequencies are deviations from nominal;
//! the nominal frequency itself never enters the dynamics.
//!
//! The simulated voltage equation is `T'_d Ė'_q = −F(η)E'_q + E_f`. Around any
//! equilibrium this equals `−(T'_d)⁻¹ ∇_{E'_q} H̄`, which is what the shifted
//! Hamiltonian dissipation in [`crate::analysis`] relies on.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError};
use crate::linalg;
use crate::topology::Graph;

/// Per-node generator constants and per-edge line susceptances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    /// M_i
    pub inertia: Vec<f64>,
    /// A_i
    pub damping: Vec<f64>,
    /// X_di
    pub x_d: Vec<f64>,
    /// X'_di
    pub x_d_prime: Vec<f64>,
    /// T'_di
    pub t_d_prime: Vec<f64>,
    /// E_fi
    pub e_f: Vec<f64>,
    /// B_ij for each physical edge, in edge order.
    pub susceptance: Vec<f64>,
}

impl PhysicalParams {
    /// Checks every parameter invariant against the physical graph.
    pub fn validate(&self, graph: &Graph) -> Result<()> {
        self.validate_sizes(graph.node_count(), graph.edge_count())
    }

    /// Same checks given only the node and edge counts.
    pub fn validate_sizes(&self, n: usize, m: usize) -> Result<()> {
        let mut errors = Vec::new();
        let node_fields: [(&str, &Vec<f64>); 6] = [
            ("inertia", &self.inertia),
            ("damping", &self.damping),
            ("x_d", &self.x_d),
            ("x_d_prime", &self.x_d_prime),
            ("t_d_prime", &self.t_d_prime),
            ("e_f", &self.e_f),
        ];
        for (name, values) in node_fields {
            if values.len() != n {
                errors.push(ValidationError::new(
                    format!("physical.{name}"),
                    format!("expected {n} values, got {}", values.len()),
                ));
                continue;
            }
            for (i, v) in values.iter().enumerate() {
                if !(v.is_finite() && *v > 0.0) {
                    errors.push(ValidationError::new(
                        format!("physical.{name}[{i}]"),
                        "must be finite and strictly positive",
                    ));
                }
            }
        }
        if self.x_d.len() == n && self.x_d_prime.len() == n {
            for i in 0..n {
                if !(self.x_d[i] - self.x_d_prime[i] > 0.0) {
                    errors.push(ValidationError::new(
                        format!("physical.x_d[{i}]"),
                        "X_d must exceed X'_d",
                    ));
                }
            }
        }
        if self.susceptance.len() != m {
            errors.push(ValidationError::new(
                "physical.susceptance",
                format!("expected {m} values, got {}", self.susceptance.len()),
            ));
        } else {
            for (k, b) in self.susceptance.iter().enumerate() {
                if !(b.is_finite() && *b > 0.0) {
                    errors.push(ValidationError::new(
                        format!("physical.susceptance[{k}]"),
                        "line susceptance B_ij must be strictly positive",
                    ));
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(errors))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalState {
    pub eta: Vec<f64>,
    pub p: Vec<f64>,
    pub e_q: Vec<f64>,
}

impl PhysicalState {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            eta: vec![0.0; m],
            p: vec![0.0; n],
            e_q: vec![0.0; n],
        }
    }
}

/// Gradient of `H_p`, split by state block.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianGradient {
    pub eta: Vec<f64>,
    pub p: Vec<f64>,
    pub e_q: Vec<f64>,
}

/// Per-node sides of the decentralized Hessian inequality.
#[derive(Debug, Clone, Serialize)]
pub struct NodeMargin {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HessianCondition {
    pub nodes: Vec<NodeMargin>,
    pub holds: bool,
}

impl HessianCondition {
    pub fn min_margin(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| (n.lhs - n.rhs).min(n.rhs))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone)]
pub struct PhysicalModel {
    graph: Graph,
    params: PhysicalParams,
    self_susceptance: Vec<f64>,
    reactance_gap: Vec<f64>,
}

impl PhysicalModel {
    pub fn new(graph: Graph, params: PhysicalParams) -> Result<Self> {
        params.validate(&graph)?;
        let n = graph.node_count();
        let mut self_susceptance = vec![0.0; n];
        for (&(a, b), &bk) in graph.edges().iter().zip(&params.susceptance) {
            self_susceptance[a] += bk;
            self_susceptance[b] += bk;
        }
        let reactance_gap = params.x_d.iter().zip(&params.x_d_prime).map(|(x, xp)| x - xp).collect();
        Ok(Self {
            graph,
            params,
            self_susceptance,
            reactance_gap,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn edge_count(&self) -> usize {
        self.graph.edge_count()
    }

    /// B_ii, always the sum of incident line susceptances.
    pub fn self_susceptance(&self) -> &[f64] {
        &self.self_susceptance
    }

    /// X_d − X'_d per node.
    pub fn reactance_gap(&self) -> &[f64] {
        &self.reactance_gap
    }

    /// Same model with edge `k` reversed.
    pub fn with_edge_flipped(&self, k: usize) -> Self {
        Self {
            graph: self.graph.with_edge_flipped(k),
            ..self.clone()
        }
    }

    pub fn omega(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.params.inertia).map(|(p, m)| p / m).collect()
    }

    /// γ_k = B_ij E'_qi E'_qj.
    pub fn gamma(&self, e_q: &[f64]) -> Vec<f64> {
        self.graph
            .edges()
            .iter()
            .zip(&self.params.susceptance)
            .map(|(&(a, b), bk)| bk * e_q[a] * e_q[b])
            .collect()
    }

    pub fn f_matrix(&self, eta: &[f64]) -> DMatrix<f64> {
        let n = self.node_count();
        let mut f = DMatrix::zeros(n, n);
        for i in 0..n {
            f[(i, i)] = 1.0 / self.reactance_gap[i] + self.self_susceptance[i];
        }
        for ((&(a, b), bk), eta_k) in self.graph.edges().iter().zip(&self.params.susceptance).zip(eta) {
            let c = bk * eta_k.cos();
            f[(a, b)] -= c;
            f[(b, a)] -= c;
        }
        f
    }

    /// `out = F(η) E'_q` without forming `F`.
    fn f_mul(&self, eta: &[f64], e_q: &[f64], out: &mut [f64]) {
        for i in 0..e_q.len() {
            out[i] = (1.0 / self.reactance_gap[i] + self.self_susceptance[i]) * e_q[i];
        }
        for ((&(a, b), bk), eta_k) in self.graph.edges().iter().zip(&self.params.susceptance).zip(eta) {
            let c = bk * eta_k.cos();
            out[a] -= c * e_q[b];
            out[b] -= c * e_q[a];
        }
    }

    /// Physical line flows Γ(E'_q) sin η.
    pub fn line_flows(&self, eta: &[f64], e_q: &[f64]) -> Vec<f64> {
        self.graph
            .edges()
            .iter()
            .zip(&self.params.susceptance)
            .zip(eta)
            .map(|((&(a, b), bk), eta_k)| bk * e_q[a] * e_q[b] * eta_k.sin())
            .collect()
    }

    /// Net power leaving each node through the lines, D Γ(E'_q) sin η.
    pub fn nodal_outflow(&self, eta: &[f64], e_q: &[f64]) -> Vec<f64> {
        self.graph.incidence_apply(&self.line_flows(eta, e_q))
    }

    pub fn hamiltonian(&self, x: &PhysicalState) -> f64 {
        let p = &self.params;
        let mut h = 0.0;
        for i in 0..self.node_count() {
            h += 0.5 * x.p[i] * x.p[i] / p.inertia[i];
            let de = x.e_q[i] - p.e_f[i];
            h += 0.5 * de * de / self.reactance_gap[i];
        }
        for (k, (&(a, b), bk)) in self.graph.edges().iter().zip(&p.susceptance).enumerate() {
            let (ea, eb) = (x.e_q[a], x.e_q[b]);
            h += 0.5 * bk * (ea * ea + eb * eb - 2.0 * ea * eb * x.eta[k].cos());
        }
        h
    }

    pub fn hamiltonian_gradient(&self, x: &PhysicalState) -> HamiltonianGradient {
        let n = self.node_count();
        let gamma = self.gamma(&x.e_q);
        let eta = gamma.iter().zip(&x.eta).map(|(g, e)| g * e.sin()).collect();
        let p = self.omega(&x.p);
        let mut e_q = vec![0.0; n];
        self.f_mul(&x.eta, &x.e_q, &mut e_q);
        for i in 0..n {
            e_q[i] -= self.params.e_f[i] / self.reactance_gap[i];
        }
        HamiltonianGradient { eta, p, e_q }
    }

    /// Time derivative of `(η, p, E'_q)` for supply `pg` and demand `pd`.
    pub fn rhs(&self, x: &PhysicalState, pg: &[f64], pd: &[f64]) -> PhysicalState {
        let n = self.node_count();
        let m = self.edge_count();
        let mut out = PhysicalState::zeros(n, m);
        self.rhs_into(x, pg, pd, &mut out);
        out
    }

    pub fn rhs_into(&self, x: &PhysicalState, pg: &[f64], pd: &[f64], out: &mut PhysicalState) {
        let p = &self.params;
        let omega = self.omega(&x.p);
        self.graph.incidence_t_mul(&omega, &mut out.eta);
        let flows = self.line_flows(&x.eta, &x.e_q);
        self.graph.incidence_mul(&flows, &mut out.p);
        for i in 0..self.node_count() {
            out.p[i] = -out.p[i] - p.damping[i] * omega[i] + pg[i] - pd[i];
        }
        self.f_mul(&x.eta, &x.e_q, &mut out.e_q);
        for i in 0..self.node_count() {
            out.e_q[i] = (p.e_f[i] - out.e_q[i]) / p.t_d_prime[i];
        }
    }

    /// Exact Hessian of `H_p`, ordered `(η, p, E'_q)`.
    pub fn hessian(&self, x: &PhysicalState) -> DMatrix<f64> {
        let n = self.node_count();
        let m = self.edge_count();
        let mut h = DMatrix::zeros(m + 2 * n, m + 2 * n);
        let e0 = m + n;
        for (k, (&(a, b), bk)) in self.graph.edges().iter().zip(&self.params.susceptance).enumerate() {
            let (ea, eb) = (x.e_q[a], x.e_q[b]);
            let (s, c) = x.eta[k].sin_cos();
            h[(k, k)] = bk * ea * eb * c;
            h[(k, e0 + a)] = bk * eb * s;
            h[(e0 + a, k)] = bk * eb * s;
            h[(k, e0 + b)] = bk * ea * s;
            h[(e0 + b, k)] = bk * ea * s;
        }
        for i in 0..n {
            h[(m + i, m + i)] = 1.0 / self.params.inertia[i];
        }
        let f = self.f_matrix(&x.eta);
        h.view_mut((e0, e0), (n, n)).copy_from(&f);
        h
    }

    /// Decentralized sufficient condition for a positive definite Hessian at
    /// `(η̄, Ē'_q)`, evaluated node by node with every voltage at `Ē'_q`.
    ///
    /// For node `i` the left side is
    /// `1/(X_di−X'_di) + B_ii + Σ_k B_ij Ē_j sin²η̄_k / (Ē_i cos η̄_k)`
    /// and the right side `Σ_k B_ij cos η̄_k (1 + (Ē_i/Ē_j) tan²η̄_k)`;
    /// the node passes when `lhs > rhs > 0`.
    ///
    /// This inequality does not imply positive definiteness once angle
    /// differences or reactance ratios leave the typical operating regime;
    /// see [`Self::schur_dominance_condition`] for a check that always does.
    pub fn decentralized_hessian_condition(&self, eta_bar: &[f64], e_bar: &[f64]) -> Result<HessianCondition> {
        self.check_security(eta_bar)?;
        let nodes = (0..self.node_count())
            .map(|i| {
                let mut lhs = 1.0 / self.reactance_gap[i] + self.self_susceptance[i];
                let mut rhs = 0.0;
                for (k, _, j) in self.graph.incident_edges(i) {
                    let bk = self.params.susceptance[k];
                    let (s, c) = eta_bar[k].sin_cos();
                    lhs += bk * e_bar[j] * s * s / (e_bar[i] * c);
                    let t = s / c;
                    rhs += bk * c * (1.0 + e_bar[i] / e_bar[j] * t * t);
                }
                NodeMargin {
                    lhs,
                    rhs,
                    holds: lhs > rhs && rhs > 0.0,
                }
            })
            .collect::<Vec<_>>();
        let holds = nodes.iter().all(|n| n.holds);
        Ok(HessianCondition { nodes, holds })
    }

    /// Diagonal dominance of the Schur complement of the (positive) η-block.
    ///
    /// With `G = diag(γ_k cos η_k) > 0`, the Hessian is positive definite iff
    /// `F − Sᵀ G⁻¹ S > 0`; this checks strict row diagonal dominance of that
    /// complement, which is sufficient.
    pub fn schur_dominance_condition(&self, eta_bar: &[f64], e_bar: &[f64]) -> Result<HessianCondition> {
        self.check_security(eta_bar)?;
        let nodes = (0..self.node_count())
            .map(|i| {
                let mut lhs = 1.0 / self.reactance_gap[i] + self.self_susceptance[i];
                let mut rhs = 0.0;
                for (k, _, j) in self.graph.incident_edges(i) {
                    let bk = self.params.susceptance[k];
                    let (s, c) = eta_bar[k].sin_cos();
                    lhs -= bk * e_bar[j] * s * s / (e_bar[i] * c);
                    rhs += bk / c;
                }
                NodeMargin {
                    lhs,
                    rhs,
                    holds: lhs > rhs && rhs >= 0.0,
                }
            })
            .collect::<Vec<_>>();
        let holds = nodes.iter().all(|n| n.holds);
        Ok(HessianCondition { nodes, holds })
    }

    fn check_security(&self, eta: &[f64]) -> Result<()> {
        if eta.len() != self.edge_count() {
            return Err(Error::dimension("eta", self.edge_count(), eta.len()));
        }
        if let Some(k) = eta.iter().position(|e| e.abs() >= std::f64::consts::FRAC_PI_2) {
            return Err(Error::Domain(format!(
                "|eta[{k}]| = {} is outside the security box (-pi/2, pi/2)",
                eta[k].abs()
            )));
        }
        Ok(())
    }

    /// Solves `F(η) E'_q = E_f` for the voltages.
    pub fn voltage_equilibrium(&self, eta: &[f64]) -> Result<Vec<f64>> {
        let f = self.f_matrix(eta);
        let rhs = DVector::from_row_slice(&self.params.e_f);
        f.cholesky()
            .map(|c| c.solve(&rhs).as_slice().to_vec())
            .ok_or(Error::SingularJacobian)
    }

    /// Zero-flow equilibrium branch: η = 0, p = 0, F(0) E'_q = E_f.
    pub fn zero_flow_state(&self) -> Result<PhysicalState> {
        let eta = vec![0.0; self.edge_count()];
        let e_q = self.voltage_equilibrium(&eta)?;
        Ok(PhysicalState {
            eta,
            p: vec![0.0; self.node_count()],
            e_q,
        })
    }

    /// Angles carrying the net injections `pg − pd` in the linearized
    /// (DC) approximation, restricted to `im Dᵀ`.
    pub fn dc_flow_angles(&self, injection: &[f64], e_q: &[f64]) -> Vec<f64> {
        let n = self.node_count();
        let gamma = self.gamma(e_q);
        let mut laplacian = DMatrix::zeros(n, n);
        for (&(a, b), g) in self.graph.edges().iter().zip(&gamma) {
            laplacian[(a, a)] += g;
            laplacian[(b, b)] += g;
            laplacian[(a, b)] -= g;
            laplacian[(b, a)] -= g;
        }
        let delta =
            linalg::least_squares(&laplacian, &DVector::from_row_slice(injection)).unwrap_or_else(|| DVector::zeros(n));
        self.graph.incidence_t_apply(delta.as_slice())
    }

    /// `−R_q ∇_{E'_q}H_p − (T'_d)⁻¹(−F(η)E'_q + E_f)` with
    /// `R_q = (T'_d)⁻¹(X_d − X'_d)`: zero iff the port-Hamiltonian voltage
    /// equation agrees with the simulated one at this state.
    pub fn ph_voltage_residual(&self, x: &PhysicalState) -> Vec<f64> {
        let grad = self.hamiltonian_gradient(x);
        let explicit = self
            .rhs(x, &vec![0.0; self.node_count()], &vec![0.0; self.node_count()])
            .e_q;
        (0..self.node_count())
            .map(|i| {
                let r_q = self.reactance_gap[i] / self.params.t_d_prime[i];
                -r_q * grad.e_q[i] - explicit[i]
            })
            .collect()
    }

    /// dH_p/dt along the flow, as the inner product of gradient and vector field.
    pub fn energy_rate(&self, x: &PhysicalState, pg: &[f64], pd: &[f64]) -> f64 {
        let g = self.hamiltonian_gradient(x);
        let f = self.rhs(x, pg, pd);
        linalg::dot(&g.eta, &f.eta) + linalg::dot(&g.p, &f.p) + linalg::dot(&g.e_q, &f.e_q)
    }

    /// Norm of the component of `η` outside `im Dᵀ`.
    pub fn eta_consistency_residual(&self, eta: &[f64]) -> f64 {
        let basis = linalg::null_space(&self.graph.incidence_matrix());
        if basis.ncols() == 0 {
            return 0.0;
        }
        let eta = DVector::from_row_slice(eta);
        (&basis * (basis.transpose() * eta)).norm()
    }

    /// Fails when any voltage is non-positive or non-finite.
    pub fn check_voltages(&self, e_q: &[f64]) -> Result<()> {
        match e_q.iter().position(|e| !(e.is_finite() && *e > 0.0)) {
            None => Ok(()),
            Some(i) => Err(Error::Domain(format!("E'_q[{i}] = {} is not positive", e_q[i]))),
        }
    }
}
