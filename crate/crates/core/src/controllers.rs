//! Market controllers: primal-dual price dynamics driven by frequency.
//!
//! Every variant is a pure right-hand side. Integration and the clamping of
//! multipliers live in [`crate::simulator`].
//!
//! Sign conventions follow the Lagrangian
//! `C(P_g) − U(P_d) + C_T(v) + λᵀ(D_c v − P_g + P_d) + μᵀg + …`: supply and
//! demand descend, prices ascend. The augmented variant keeps its own
//! convention `r = D_c v + P_g − P_d`, under which its flows are the negated
//! flows of the basic variant at equilibrium.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physical::PhysicalParams;
use crate::welfare::{KktPoint, WelfareProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Basic,
    Nodal,
    Congestion,
    Transformed,
    TransformedSimplified,
    Augmented,
    Barrier,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Basic,
        Variant::Nodal,
        Variant::Congestion,
        Variant::Transformed,
        Variant::TransformedSimplified,
        Variant::Augmented,
        Variant::Barrier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Basic => "basic",
            Variant::Nodal => "nodal",
            Variant::Congestion => "congestion",
            Variant::Transformed => "transformed",
            Variant::TransformedSimplified => "transformed-simplified",
            Variant::Augmented => "augmented",
            Variant::Barrier => "barrier",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    /// Whether the price state is θ rather than λ.
    pub fn uses_theta(self) -> bool {
        matches!(self, Variant::Transformed | Variant::TransformedSimplified)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Controller time constants. Vectors that a variant does not use may be empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub tau_g: Vec<f64>,
    pub tau_d: Vec<f64>,
    pub tau_v: Vec<f64>,
    pub tau_lambda: Vec<f64>,
    pub tau_theta: Vec<f64>,
    pub tau_mu: Vec<f64>,
    pub tau_plus: Vec<f64>,
    pub tau_minus: Vec<f64>,
}

impl ControllerParams {
    /// All time constants equal to one second.
    pub fn unit(n: usize, mc: usize, l: usize, lines: usize) -> Self {
        Self {
            tau_g: vec![1.0; n],
            tau_d: vec![1.0; n],
            tau_v: vec![1.0; mc],
            tau_lambda: vec![1.0; n],
            tau_theta: vec![1.0; n],
            tau_mu: vec![1.0; l],
            tau_plus: vec![1.0; lines],
            tau_minus: vec![1.0; lines],
        }
    }

    fn validate(&self, n: usize, mc: usize, l: usize, lines: usize) -> Result<()> {
        let fields: [(&str, &Vec<f64>, usize); 8] = [
            ("tau_g", &self.tau_g, n),
            ("tau_d", &self.tau_d, n),
            ("tau_v", &self.tau_v, mc),
            ("tau_lambda", &self.tau_lambda, n),
            ("tau_theta", &self.tau_theta, n),
            ("tau_mu", &self.tau_mu, l),
            ("tau_plus", &self.tau_plus, lines),
            ("tau_minus", &self.tau_minus, lines),
        ];
        for (name, values, len) in fields {
            if values.len() != len {
                return Err(Error::dimension(format!("controller.{name}"), len, values.len()));
            }
            if let Some(i) = values.iter().position(|t| !(t.is_finite() && *t > 0.0)) {
                return Err(Error::invalid(
                    format!("controller.{name}[{i}]"),
                    "time constants must be strictly positive",
                ));
            }
        }
        Ok(())
    }
}

/// Controller state. `price` holds λ, or θ for the transformed variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub pg: Vec<f64>,
    pub pd: Vec<f64>,
    pub v: Vec<f64>,
    pub price: Vec<f64>,
    pub mu: Vec<f64>,
    pub mu_plus: Vec<f64>,
    pub mu_minus: Vec<f64>,
}

impl ControllerState {
    pub fn zeros(n: usize, mc: usize, l: usize, lines: usize) -> Self {
        Self {
            pg: vec![0.0; n],
            pd: vec![0.0; n],
            v: vec![0.0; mc],
            price: vec![0.0; n],
            mu: vec![0.0; l],
            mu_plus: vec![0.0; lines],
            mu_minus: vec![0.0; lines],
        }
    }

    /// Sets every multiplier to `max(0, μ)`.
    pub fn clamp_multipliers(&mut self) {
        for m in self.mu.iter_mut().chain(&mut self.mu_plus).chain(&mut self.mu_minus) {
            *m = m.max(0.0);
        }
    }

    pub fn min_multiplier(&self) -> f64 {
        self.mu
            .iter()
            .chain(&self.mu_plus)
            .chain(&self.mu_minus)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Physical signals available to a controller.
#[derive(Debug, Clone, Copy)]
pub struct Measurements<'a> {
    /// Frequency deviations ω.
    pub omega: &'a [f64],
    /// Net line outflow `D Γ(E'_q) sin η` per node.
    pub line_outflow: &'a [f64],
}

/// `(g)⁺_μ`: `g` while the multiplier is positive, `max(0, g)` on the boundary.
pub fn projected_multiplier_rhs(mu: f64, g: f64) -> Result<f64> {
    if mu < 0.0 {
        return Err(Error::Domain(format!("multiplier {mu} is negative")));
    }
    Ok(projection(mu, g))
}

fn projection(mu: f64, g: f64) -> f64 {
    if mu > 0.0 {
        g
    } else {
        g.max(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct Controller {
    variant: Variant,
    params: ControllerParams,
    problem: WelfareProblem,
    inertia: Vec<f64>,
    damping: Vec<f64>,
}

impl Controller {
    /// Checks that the welfare problem carries the structure `variant` needs.
    pub fn new(
        variant: Variant,
        params: ControllerParams,
        problem: WelfareProblem,
        physical: &PhysicalParams,
    ) -> Result<Self> {
        let n = problem.node_count();
        let mc = problem.comm_edge_count();
        let l = problem.nodal_constraint_count();
        let lines = problem.line_limits().map_or(0, |k| k.len());
        params.validate(n, mc, l, lines)?;
        if physical.inertia.len() != n {
            return Err(Error::dimension("physical.inertia", n, physical.inertia.len()));
        }
        match variant {
            Variant::Nodal if problem.nodal_constraints().is_none() => {
                return Err(Error::invalid("market", "nodal variant requires nodal constraints"));
            }
            Variant::Congestion if problem.line_limits().is_none() => {
                return Err(Error::invalid(
                    "market.line_limits",
                    "congestion variant requires line limits κ",
                ));
            }
            Variant::Augmented if problem.rho() <= 0.0 => {
                return Err(Error::invalid("market.rho", "augmented variant requires ρ > 0"));
            }
            Variant::Barrier if problem.nu().is_none() || problem.nodal_constraints().is_none() => {
                return Err(Error::invalid(
                    "market.nu",
                    "barrier variant requires ν > 0 and nodal constraints",
                ));
            }
            _ => {}
        }
        if variant != Variant::Nodal && variant != Variant::Barrier && l > 0 {
            return Err(Error::invalid(
                "market",
                format!("{variant} variant does not support nodal constraints"),
            ));
        }
        if variant != Variant::Congestion && problem.transmission_costs().is_some() {
            return Err(Error::invalid(
                "market.transmission_cost",
                format!("{variant} variant does not support transmission costs"),
            ));
        }
        if variant != Variant::Congestion && lines > 0 {
            return Err(Error::invalid(
                "market.line_limits",
                format!("{variant} variant does not support line limits"),
            ));
        }
        Ok(Self {
            variant,
            params,
            problem,
            inertia: physical.inertia.clone(),
            damping: physical.damping.clone(),
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn problem(&self) -> &WelfareProblem {
        &self.problem
    }

    pub fn zero_state(&self) -> ControllerState {
        ControllerState::zeros(
            self.problem.node_count(),
            self.problem.comm_edge_count(),
            self.multiplier_state_count(),
            self.problem.line_limits().map_or(0, |k| k.len()),
        )
    }

    /// Number of nodal multipliers carried as states; the barrier loop has
    /// none since its multipliers are `−ν/g`.
    pub fn multiplier_state_count(&self) -> usize {
        match self.variant {
            Variant::Barrier => 0,
            _ => self.problem.nodal_constraint_count(),
        }
    }

    /// Controller derivative for the configured variant.
    pub fn rhs(&self, c: &ControllerState, meas: &Measurements<'_>) -> Result<ControllerState> {
        match self.variant {
            Variant::Basic => Ok(self.basic_rhs(c, meas.omega)),
            Variant::Nodal => Ok(self.nodal_rhs(c, meas.omega)),
            Variant::Congestion => Ok(self.congestion_rhs(c, meas.omega)),
            Variant::Transformed => Ok(self.transformed_rhs(c, meas)),
            Variant::TransformedSimplified => Ok(self.transformed_simplified_rhs(c, meas)),
            Variant::Augmented => Ok(self.augmented_rhs(c, meas.omega)),
            Variant::Barrier => self.barrier_rhs(c, meas.omega),
        }
    }

    fn empty_like(&self, c: &ControllerState) -> ControllerState {
        ControllerState {
            pg: vec![0.0; c.pg.len()],
            pd: vec![0.0; c.pd.len()],
            v: vec![0.0; c.v.len()],
            price: vec![0.0; c.price.len()],
            mu: vec![0.0; c.mu.len()],
            mu_plus: vec![0.0; c.mu_plus.len()],
            mu_minus: vec![0.0; c.mu_minus.len()],
        }
    }

    /// `τ_g Ṗ_g = −∇C + π − ω`, `τ_d Ṗ_d = ∇U − π + ω` with price signal `π`.
    fn primal(&self, c: &ControllerState, pi: &[f64], omega: &[f64], out: &mut ControllerState) {
        let p = &self.problem;
        for i in 0..c.pg.len() {
            out.pg[i] = -p.costs()[i].derivative(c.pg[i]) + pi[i] - omega[i];
            out.pd[i] = p.utilities()[i].derivative(c.pd[i]) - pi[i] + omega[i];
        }
    }

    fn scale_primal(&self, out: &mut ControllerState) {
        for i in 0..out.pg.len() {
            out.pg[i] /= self.params.tau_g[i];
            out.pd[i] /= self.params.tau_d[i];
        }
    }

    /// `τ_λ λ̇ = D_c v − P_g + P_d`.
    fn balance_price(&self, c: &ControllerState, out: &mut ControllerState) {
        let r = self.problem.balance(&c.pg, &c.pd, &c.v);
        for i in 0..r.len() {
            out.price[i] = r[i] / self.params.tau_lambda[i];
        }
    }

    /// `τ_v v̇ = −D_cᵀπ`.
    fn consensus_flow(&self, pi: &[f64], out: &mut ControllerState) {
        let dt = self.problem.comm().incidence_t_apply(pi);
        for k in 0..dt.len() {
            out.v[k] = -dt[k] / self.params.tau_v[k];
        }
    }

    pub fn basic_rhs(&self, c: &ControllerState, omega: &[f64]) -> ControllerState {
        let mut out = self.empty_like(c);
        self.primal(c, &c.price, omega, &mut out);
        self.scale_primal(&mut out);
        self.consensus_flow(&c.price, &mut out);
        self.balance_price(c, &mut out);
        out
    }

    /// Basic dynamics plus `−(∂g/∂P)ᵀμ` and `τ_μ μ̇ = (g)⁺_μ`.
    pub fn nodal_rhs(&self, c: &ControllerState, omega: &[f64]) -> ControllerState {
        let mut out = self.empty_like(c);
        self.primal(c, &c.price, omega, &mut out);
        if let Some(g) = self.problem.nodal_constraints() {
            let mu: Vec<f64> = c.mu.iter().map(|m| m.max(0.0)).collect();
            let (mut jg, mut jd) = (vec![0.0; c.pg.len()], vec![0.0; c.pd.len()]);
            g.jacobian_t_mul(&c.pg, &c.pd, &mu, &mut jg, &mut jd);
            for i in 0..c.pg.len() {
                out.pg[i] -= jg[i];
                out.pd[i] -= jd[i];
            }
            let gv = self.problem.eval_constraints(&c.pg, &c.pd);
            for (i, gi) in gv.iter().enumerate() {
                out.mu[i] = projection(c.mu[i], *gi) / self.params.tau_mu[i];
            }
        }
        self.scale_primal(&mut out);
        self.consensus_flow(&c.price, &mut out);
        self.balance_price(c, &mut out);
        out
    }

    /// `τ_v v̇ = −∇C_T(v) − Dᵀλ − μ₊ + μ₋`, `τ± μ̇± = (±v − κ)⁺`.
    pub fn congestion_rhs(&self, c: &ControllerState, omega: &[f64]) -> ControllerState {
        let mut out = self.empty_like(c);
        self.primal(c, &c.price, omega, &mut out);
        self.scale_primal(&mut out);
        let dt = self.problem.comm().incidence_t_apply(&c.price);
        let kappa = self.problem.line_limits().unwrap_or(&[]);
        let ct = self.problem.transmission_costs();
        for k in 0..c.v.len() {
            let grad = ct.map_or(0.0, |f| f[k].derivative(c.v[k]));
            let mp = c.mu_plus[k].max(0.0);
            let mm = c.mu_minus[k].max(0.0);
            out.v[k] = (-grad - dt[k] - mp + mm) / self.params.tau_v[k];
            out.mu_plus[k] = projection(c.mu_plus[k], c.v[k] - kappa[k]) / self.params.tau_plus[k];
            out.mu_minus[k] = projection(c.mu_minus[k], -c.v[k] - kappa[k]) / self.params.tau_minus[k];
        }
        self.balance_price(c, &mut out);
        out
    }

    /// Price seen by supply and demand in the transformed loop:
    /// `τ_λ⁻¹(τ_θ θ − M ω)`.
    pub fn transformed_lambda(&self, theta: &[f64], omega: &[f64]) -> Vec<f64> {
        (0..theta.len())
            .map(|i| (self.params.tau_theta[i] * theta[i] - self.inertia[i] * omega[i]) / self.params.tau_lambda[i])
            .collect()
    }

    /// Transformed loop. The price and flow equations read only ω, the line
    /// outflow and the controller's own `v`, `θ`; the demand set-point enters
    /// nothing but its own equation.
    pub fn transformed_rhs(&self, c: &ControllerState, meas: &Measurements<'_>) -> ControllerState {
        let mut out = self.empty_like(c);
        let pi = self.transformed_lambda(&c.price, meas.omega);
        self.primal(c, &pi, meas.omega, &mut out);
        self.scale_primal(&mut out);
        self.consensus_flow(&pi, &mut out);
        let theta_dot = self.theta_rhs(&c.v, meas, &self.params.tau_theta);
        out.price = theta_dot;
        out
    }

    /// Transformed loop with `τ_λ = τ_θ = M`; the effective price is `θ − 2ω`.
    pub fn transformed_simplified_rhs(&self, c: &ControllerState, meas: &Measurements<'_>) -> ControllerState {
        let mut out = self.empty_like(c);
        let pi: Vec<f64> = c.price.iter().zip(meas.omega).map(|(t, w)| t - w).collect();
        self.primal(c, &pi, meas.omega, &mut out);
        self.scale_primal(&mut out);
        self.consensus_flow(&pi, &mut out);
        out.price = self.theta_rhs(&c.v, meas, &self.inertia);
        out
    }

    /// `τ θ̇ = D_c v − DΓ sin η − Aω`.
    fn theta_rhs(&self, v: &[f64], meas: &Measurements<'_>, tau: &[f64]) -> Vec<f64> {
        let dv = self.problem.comm().incidence_apply(v);
        (0..dv.len())
            .map(|i| (dv[i] - meas.line_outflow[i] - self.damping[i] * meas.omega[i]) / tau[i])
            .collect()
    }

    /// Augmented loop with `r = D_c v + P_g − P_d`:
    /// `τ_g Ṗ_g = −∇C + λ − ρr − ω`, `τ_d Ṗ_d = ∇U − λ + ρr + ω`,
    /// `τ_v v̇ = D_cᵀλ − ρD_cᵀr`, `τ_λ λ̇ = −r`.
    pub fn augmented_rhs(&self, c: &ControllerState, omega: &[f64]) -> ControllerState {
        let mut out = self.empty_like(c);
        let rho = self.problem.rho();
        let comm = self.problem.comm();
        let mut r = comm.incidence_apply(&c.v);
        for i in 0..r.len() {
            r[i] += c.pg[i] - c.pd[i];
        }
        self.primal(c, &c.price, omega, &mut out);
        for i in 0..r.len() {
            out.pg[i] -= rho * r[i];
            out.pd[i] += rho * r[i];
        }
        self.scale_primal(&mut out);
        let dl = comm.incidence_t_apply(&c.price);
        let dr = comm.incidence_t_apply(&r);
        for k in 0..c.v.len() {
            out.v[k] = (dl[k] - rho * dr[k]) / self.params.tau_v[k];
        }
        for i in 0..r.len() {
            out.price[i] = -r[i] / self.params.tau_lambda[i];
        }
        out
    }

    /// Primal-dual flow on the barrier objective. Fails with
    /// [`Error::Boundary`] once any constraint is no longer strictly satisfied.
    pub fn barrier_rhs(&self, c: &ControllerState, omega: &[f64]) -> Result<ControllerState> {
        let nu = self.problem.nu().unwrap_or(0.0);
        let eval = self.problem.barrier_objective(&c.pg, &c.pd, nu)?;
        let mut out = self.empty_like(c);
        for i in 0..c.pg.len() {
            out.pg[i] = (-eval.grad_pg[i] + c.price[i] - omega[i]) / self.params.tau_g[i];
            out.pd[i] = (-eval.grad_pd[i] - c.price[i] + omega[i]) / self.params.tau_d[i];
        }
        self.consensus_flow(&c.price, &mut out);
        self.balance_price(c, &mut out);
        Ok(out)
    }

    /// λ-equivalent of the controller state (identity except for θ variants).
    pub fn lambda_equivalent(&self, c: &ControllerState, omega: &[f64]) -> Vec<f64> {
        match self.variant {
            Variant::Transformed => self.transformed_lambda(&c.price, omega),
            Variant::TransformedSimplified => c.price.iter().zip(omega).map(|(t, w)| t - w).collect(),
            _ => c.price.clone(),
        }
    }

    /// Price reported to market participants: λ, or `θ − 2ω` / `λ_eq − ω`
    /// for the transformed variants.
    pub fn reported_price(&self, c: &ControllerState, omega: &[f64]) -> Vec<f64> {
        match self.variant {
            Variant::Transformed | Variant::TransformedSimplified => self
                .lambda_equivalent(c, omega)
                .iter()
                .zip(omega)
                .map(|(l, w)| l - w)
                .collect(),
            _ => c.price.clone(),
        }
    }

    /// θ corresponding to basic-loop momenta `p` and prices `λ`:
    /// `θ = τ_θ⁻¹(p + τ_λ λ)` (with `τ_λ = τ_θ = M` for the simplified form).
    pub fn theta_from_basic(&self, p: &[f64], lambda: &[f64]) -> Vec<f64> {
        let (tl, tt) = self.theta_taus();
        (0..p.len()).map(|i| (p[i] + tl[i] * lambda[i]) / tt[i]).collect()
    }

    /// Inverse of [`Self::theta_from_basic`].
    pub fn basic_from_theta(&self, p: &[f64], theta: &[f64]) -> Vec<f64> {
        let (tl, tt) = self.theta_taus();
        (0..p.len()).map(|i| (tt[i] * theta[i] - p[i]) / tl[i]).collect()
    }

    fn theta_taus(&self) -> (&[f64], &[f64]) {
        match self.variant {
            Variant::TransformedSimplified => (&self.inertia, &self.inertia),
            _ => (&self.params.tau_lambda, &self.params.tau_theta),
        }
    }

    /// Time constants of the λ-equivalent price in the quadratic storage
    /// `½ Σ τ z²`.
    pub fn price_storage_taus(&self) -> Vec<f64> {
        match self.variant {
            Variant::TransformedSimplified => self.inertia.clone(),
            _ => self.params.tau_lambda.clone(),
        }
    }

    /// Candidate optimizer point read off a controller state at `ω`.
    /// Augmented flows are negated into the basic convention.
    pub fn kkt_point(&self, c: &ControllerState, omega: &[f64]) -> KktPoint {
        let v = if self.variant == Variant::Augmented {
            c.v.iter().map(|x| -x).collect()
        } else {
            c.v.clone()
        };
        let mu = if self.variant == Variant::Barrier {
            let nu = self.problem.nu().unwrap_or(0.0);
            self.problem
                .eval_constraints(&c.pg, &c.pd)
                .iter()
                .map(|g| -nu / g)
                .collect()
        } else {
            c.mu.clone()
        };
        KktPoint {
            pg: c.pg.clone(),
            pd: c.pd.clone(),
            v,
            lambda: self.lambda_equivalent(c, omega),
            mu,
            mu_plus: c.mu_plus.clone(),
            mu_minus: c.mu_minus.clone(),
        }
    }

    /// Controller state matching an optimizer point at rest (`ω = 0, p = 0`).
    pub fn state_from_kkt(&self, x: &KktPoint) -> ControllerState {
        let n = x.pg.len();
        let zeros = vec![0.0; n];
        let price = if self.variant.uses_theta() {
            self.theta_from_basic(&zeros, &x.lambda)
        } else {
            x.lambda.clone()
        };
        let v = if self.variant == Variant::Augmented {
            x.v.iter().map(|v| -v).collect()
        } else {
            x.v.clone()
        };
        let mu = if self.variant == Variant::Barrier {
            Vec::new()
        } else {
            x.mu.clone()
        };
        ControllerState {
            pg: x.pg.clone(),
            pd: x.pd.clone(),
            v,
            price,
            mu,
            mu_plus: x.mu_plus.clone(),
            mu_minus: x.mu_minus.clone(),
        }
    }
}
