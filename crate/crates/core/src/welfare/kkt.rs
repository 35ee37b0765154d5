use serde::{Deserialize, Serialize};

use super::{Constraints, WelfareProblem};
use crate::error::{Error, Result};
use crate::linalg;

/// Candidate primal-dual point. Multiplier vectors not used by the problem
/// variant stay empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KktPoint {
    pub pg: Vec<f64>,
    pub pd: Vec<f64>,
    pub v: Vec<f64>,
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub mu: Vec<f64>,
    #[serde(default)]
    pub mu_plus: Vec<f64>,
    #[serde(default)]
    pub mu_minus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualPart {
    pub name: &'static str,
    pub values: Vec<f64>,
}

impl ResidualPart {
    pub fn max_abs(&self) -> f64 {
        linalg::max_abs(&self.values)
    }
}

/// Named optimality residuals of a [`KktPoint`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktResidual {
    pub parts: Vec<ResidualPart>,
    /// `μᵀg` (or `μ₊ᵀ(v−κ) + μ₋ᵀ(−v−κ)`), signed.
    pub complementarity_total: f64,
}

impl KktResidual {
    pub fn max_norm(&self) -> f64 {
        self.parts.iter().map(ResidualPart::max_abs).fold(0.0, f64::max)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.parts.iter().find(|p| p.name == name).map(|p| p.values.as_slice())
    }

    pub fn norms(&self) -> Vec<(&'static str, f64)> {
        self.parts.iter().map(|p| (p.name, p.max_abs())).collect()
    }
}

impl WelfareProblem {
    /// Optimality residuals of `x` for this problem.
    ///
    /// Stationarity uses the Lagrangian
    /// `C(P_g) − U(P_d) + C_T(v) + λᵀ(D_c v − P_g + P_d) + μᵀg + μ₊ᵀ(v−κ) + μ₋ᵀ(−v−κ)`.
    /// The augmentation and barrier terms are not part of it: the augmented
    /// optimum satisfies the same conditions, and a barrier optimum is judged
    /// against the constrained problem it approximates.
    pub fn kkt_residual(&self, x: &KktPoint) -> Result<KktResidual> {
        let n = self.node_count();
        let mc = self.comm_edge_count();
        let l = self.nodal_constraint_count();
        let check = |what: &str, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::dimension(what, expected, got))
            }
        };
        check("pg", n, x.pg.len())?;
        check("pd", n, x.pd.len())?;
        check("v", mc, x.v.len())?;
        check("lambda", n, x.lambda.len())?;
        check("mu", l, x.mu.len())?;
        let line = self.line_limits();
        let ml = line.map_or(0, |k| k.len());
        check("mu_plus", ml, x.mu_plus.len())?;
        check("mu_minus", ml, x.mu_minus.len())?;

        let mut st_g: Vec<f64> = (0..n)
            .map(|i| self.costs()[i].derivative(x.pg[i]) - x.lambda[i])
            .collect();
        let mut st_d: Vec<f64> = (0..n)
            .map(|i| -self.utilities()[i].derivative(x.pd[i]) + x.lambda[i])
            .collect();
        let mut parts = Vec::new();
        let mut complementarity_total = 0.0;

        if let Constraints::Nodal(g) = self.constraints() {
            g.jacobian_t_mul(&x.pg, &x.pd, &x.mu, &mut st_g, &mut st_d);
        }
        let dt_lambda = self.comm().incidence_t_apply(&x.lambda);
        parts.push(ResidualPart {
            name: "stationarity_pg",
            values: st_g,
        });
        parts.push(ResidualPart {
            name: "stationarity_pd",
            values: st_d,
        });
        match line {
            Some(kappa) => {
                let mut st_v = dt_lambda;
                for k in 0..mc {
                    st_v[k] += x.mu_plus[k] - x.mu_minus[k];
                    if let Some(ct) = self.transmission_costs() {
                        st_v[k] += ct[k].derivative(x.v[k]);
                    }
                }
                parts.push(ResidualPart {
                    name: "stationarity_v",
                    values: st_v,
                });
                let upper: Vec<f64> = (0..mc).map(|k| x.v[k] - kappa[k]).collect();
                let lower: Vec<f64> = (0..mc).map(|k| -x.v[k] - kappa[k]).collect();
                let primal = upper.iter().chain(&lower).map(|g| g.max(0.0)).collect();
                let mus: Vec<f64> = x.mu_plus.iter().chain(&x.mu_minus).copied().collect();
                let gs: Vec<f64> = upper.into_iter().chain(lower).collect();
                let comp: Vec<f64> = mus.iter().zip(&gs).map(|(m, g)| m * g).collect();
                complementarity_total = comp.iter().sum();
                parts.push(ResidualPart {
                    name: "primal_feasibility",
                    values: primal,
                });
                parts.push(ResidualPart {
                    name: "dual_feasibility",
                    values: mus.iter().map(|m| (-m).max(0.0)).collect(),
                });
                parts.push(ResidualPart {
                    name: "complementarity",
                    values: comp,
                });
            }
            None => {
                let mut st_v = dt_lambda;
                if let Some(ct) = self.transmission_costs() {
                    for k in 0..mc {
                        st_v[k] += ct[k].derivative(x.v[k]);
                    }
                }
                parts.push(ResidualPart {
                    name: "consensus",
                    values: st_v,
                });
            }
        }
        parts.push(ResidualPart {
            name: "balance",
            values: self.balance(&x.pg, &x.pd, &x.v),
        });
        if l > 0 {
            let g = self.eval_constraints(&x.pg, &x.pd);
            let comp: Vec<f64> = x.mu.iter().zip(&g).map(|(m, g)| m * g).collect();
            complementarity_total = comp.iter().sum();
            parts.push(ResidualPart {
                name: "primal_feasibility",
                values: g.iter().map(|v| v.max(0.0)).collect(),
            });
            parts.push(ResidualPart {
                name: "dual_feasibility",
                values: x.mu.iter().map(|m| (-m).max(0.0)).collect(),
            });
            parts.push(ResidualPart {
                name: "complementarity",
                values: comp,
            });
        }
        Ok(KktResidual {
            parts,
            complementarity_total,
        })
    }
}
