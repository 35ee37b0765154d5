//! Fixed-step integrators and the simulation loop.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ClosedLoop, ClosedLoopState, Layout};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Classical fourth-order Runge–Kutta.
    Rk4,
    /// Explicit update of momenta and controller, then `η` with the new ω,
    /// then `E'_q` implicitly with the new `η`.
    SemiImplicitEuler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub t_end: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Run counts as steady once `max|ẋ|` stays below this for `steady_window` seconds.
    pub steady_threshold: f64,
    pub steady_window: f64,
    pub stop_when_steady: bool,
    /// Keep every k-th step in the trajectory (the final state is always kept).
    pub record_every: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Rk4,
            dt: 5e-3,
            t_end: 200.0,
            abs_tol: 1e-8,
            rel_tol: 1e-8,
            steady_threshold: 1e-9,
            steady_window: 1.0,
            stop_when_steady: true,
            record_every: 1,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("integrator.dt", self.dt),
            ("integrator.t_end", self.t_end),
            ("integrator.abs_tol", self.abs_tol),
            ("integrator.rel_tol", self.rel_tol),
            ("integrator.steady_threshold", self.steady_threshold),
        ];
        for (path, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(path, "must be finite and strictly positive"));
            }
        }
        if !(self.steady_window.is_finite() && self.steady_window >= 0.0) {
            return Err(Error::invalid(
                "integrator.steady_window",
                "must be finite and non-negative",
            ));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("integrator.record_every", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum RunStatus {
    /// `max|ẋ|` stayed below the threshold for the whole window ending at `t`.
    Steady {
        t: f64,
    },
    ReachedEnd,
}

/// Recorded states of one run, as flat vectors in [`Layout`] order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub layout: Layout,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub status: RunStatus,
    pub steps: usize,
    pub dt: f64,
    /// `max|ẋ|` at the last recorded state.
    pub final_rate: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> ClosedLoopState {
        ClosedLoopState::from_slice(&self.layout, &self.states[i], self.times[i])
    }

    pub fn final_state(&self) -> ClosedLoopState {
        self.state(self.len() - 1)
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    /// Index of the last recorded sample with `t ≤ time`.
    pub fn index_at(&self, time: f64) -> usize {
        self.times.partition_point(|t| *t <= time + 1e-12).saturating_sub(1)
    }
}

impl ClosedLoop {
    /// One step of size `dt`, with multipliers clamped afterwards.
    pub fn step(&self, x: &ClosedLoopState, dt: f64, scheme: Scheme) -> Result<ClosedLoopState> {
        let y = x.to_vec();
        let k1 = self.rhs_flat(&y)?;
        let next = self.step_flat(&y, &k1, dt, scheme, x.t)?;
        Ok(ClosedLoopState::from_slice(&self.layout, &next, x.t + dt))
    }

    fn step_flat(&self, y: &[f64], k1: &[f64], dt: f64, scheme: Scheme, t: f64) -> Result<Vec<f64>> {
        let mut next = match scheme {
            Scheme::Rk4 => self.rk4(y, k1, dt)?,
            Scheme::SemiImplicitEuler => self.semi_implicit(y, k1, dt)?,
        };
        for m in &mut next[self.layout.multipliers()] {
            *m = m.max(0.0);
        }
        self.check_state(&next, t + dt)?;
        Ok(next)
    }

    fn rk4(&self, y: &[f64], k1: &[f64], dt: f64) -> Result<Vec<f64>> {
        let axpy = |a: f64, k: &[f64]| -> Vec<f64> { y.iter().zip(k).map(|(y, k)| y + a * k).collect() };
        let k2 = self.rhs_flat(&axpy(0.5 * dt, k1))?;
        let k3 = self.rhs_flat(&axpy(0.5 * dt, &k2))?;
        let k4 = self.rhs_flat(&axpy(dt, &k3))?;
        Ok((0..y.len())
            .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect())
    }

    fn semi_implicit(&self, y: &[f64], k1: &[f64], dt: f64) -> Result<Vec<f64>> {
        let lay = &self.layout;
        let mut next: Vec<f64> = y.iter().zip(k1).map(|(y, k)| y + dt * k).collect();
        let omega = self.physical.omega(&next[lay.p()]);
        let dw = self.physical.graph().incidence_t_apply(&omega);
        for (k, i) in lay.eta().enumerate() {
            next[i] = y[i] + dt * dw[k];
        }
        let params = self.physical.params();
        let mut a: DMatrix<f64> = self.physical.f_matrix(&next[lay.eta()]);
        let e_old = &y[lay.e_q()];
        let mut b = DVector::zeros(lay.n);
        for i in 0..lay.n {
            let s = params.t_d_prime[i] / dt;
            a[(i, i)] += s;
            b[i] = s * e_old[i] + params.e_f[i];
        }
        let e_new = a.lu().solve(&b).ok_or(Error::SingularJacobian)?;
        next[lay.e_q()].copy_from_slice(e_new.as_slice());
        Ok(next)
    }

    /// Integrates from `x0` until `t_end`, or until steady when enabled.
    pub fn simulate(&self, x0: &ClosedLoopState, config: &IntegratorConfig) -> Result<Trajectory> {
        config.validate()?;
        let mut y = x0.to_vec();
        if y.len() != self.layout.len() {
            return Err(Error::dimension("initial state", self.layout.len(), y.len()));
        }
        for m in &y[self.layout.multipliers()] {
            if *m < 0.0 {
                return Err(Error::invalid(
                    "initial.multipliers",
                    "multipliers must be non-negative",
                ));
            }
        }
        self.check_state(&y, x0.t)?;

        let steps = ((config.t_end / config.dt) - 1e-9).ceil().max(1.0) as usize;
        let window_steps = (config.steady_window / config.dt).round() as usize;
        let mut times = vec![x0.t];
        let mut states = vec![y.clone()];
        let mut quiet = 0usize;
        let mut status = RunStatus::ReachedEnd;
        let mut taken = 0usize;
        let mut k1 = self.rhs_flat(&y)?;
        for k in 0..steps {
            let t = x0.t + k as f64 * config.dt;
            y = self.step_flat(&y, &k1, config.dt, config.scheme, t)?;
            taken += 1;
            let t_next = x0.t + (k + 1) as f64 * config.dt;
            k1 = self.rhs_flat(&y)?;
            let rate = linalg::max_abs(&k1);
            quiet = if rate < config.steady_threshold { quiet + 1 } else { 0 };
            let steady = config.stop_when_steady && quiet > window_steps;
            if (k + 1) % config.record_every == 0 || k + 1 == steps || steady {
                times.push(t_next);
                states.push(y.clone());
            }
            if steady {
                status = RunStatus::Steady { t: t_next };
                break;
            }
        }
        Ok(Trajectory {
            layout: self.layout,
            times,
            states,
            status,
            steps: taken,
            dt: config.dt,
            final_rate: linalg::max_abs(&k1),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::three_bus;
    use super::*;
    use crate::controllers::Variant;

    #[test]
    fn rk4_is_fourth_order() {
        let cl = three_bus(Variant::Basic);
        let mut x0 = cl.default_initial_state().unwrap();
        x0.controller.pd = vec![0.5, 0.3, 0.4];
        x0.physical.p = vec![0.1, -0.1, 0.05];
        let run = |dt: f64| {
            let cfg = IntegratorConfig {
                dt,
                t_end: 2.0,
                stop_when_steady: false,
                ..Default::default()
            };
            cl.simulate(&x0, &cfg).unwrap().states.last().unwrap().clone()
        };
        let (a, b, c) = (run(0.04), run(0.02), run(0.01));
        let e1 = a.iter().zip(&c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let e2 = b.iter().zip(&c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let order = (e1 / e2 - 1.0).log2() + 1.0;
        assert!(order > 3.5, "observed order {order}");
    }

    #[test]
    fn semi_implicit_tracks_rk4() {
        let cl = three_bus(Variant::Basic);
        let mut x0 = cl.default_initial_state().unwrap();
        x0.controller.pd = vec![0.5, 0.3, 0.4];
        let cfg = |scheme, dt| IntegratorConfig {
            scheme,
            dt,
            t_end: 1.0,
            stop_when_steady: false,
            ..Default::default()
        };
        let a = cl.simulate(&x0, &cfg(Scheme::Rk4, 1e-3)).unwrap();
        let b = cl.simulate(&x0, &cfg(Scheme::SemiImplicitEuler, 1e-3)).unwrap();
        let diff = a
            .states
            .last()
            .unwrap()
            .iter()
            .zip(b.states.last().unwrap())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-2, "{diff}");
    }

    #[test]
    fn recording_keeps_final_state() {
        let cl = three_bus(Variant::Basic);
        let x0 = cl.default_initial_state().unwrap();
        let cfg = IntegratorConfig {
            dt: 0.01,
            t_end: 0.105,
            record_every: 4,
            stop_when_steady: false,
            ..Default::default()
        };
        let tr = cl.simulate(&x0, &cfg).unwrap();
        assert_eq!(tr.steps, 11);
        let expected = [0.0, 0.04, 0.08, 0.11];
        assert_eq!(tr.len(), expected.len());
        for (t, e) in tr.times.iter().zip(expected) {
            assert!((t - e).abs() < 1e-12);
        }
        assert_eq!(tr.index_at(0.09), 2);
    }

    #[test]
    fn nan_state_is_rejected() {
        let cl = three_bus(Variant::Basic);
        let mut x0 = cl.default_initial_state().unwrap();
        x0.controller.pg[0] = f64::NAN;
        let err = cl.simulate(&x0, &IntegratorConfig::default()).unwrap_err();
        assert!(matches!(err, Error::StepRejected { .. }));
    }

    #[test]
    fn bad_config_names_field() {
        let cfg = IntegratorConfig {
            dt: -1.0,
            ..Default::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("integrator.dt"));
    }
}
