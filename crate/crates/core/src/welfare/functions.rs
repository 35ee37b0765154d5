//! Per-node cost, utility and transmission-cost functions.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A user-supplied smooth scalar function with its derivative.
pub trait ScalarFn: Send + Sync + fmt::Debug {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
}

/// Expected curvature sign of a [`NodeFunction`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Convex,
    Concave,
}

/// A scalar function of one node's (or one edge's) power.
#[derive(Clone, Debug)]
pub enum NodeFunction {
    /// `½ a x² + c x + b`.
    Quadratic {
        a: f64,
        c: f64,
        b: f64,
    },
    Custom(Arc<dyn ScalarFn>),
}

const PROBE_POINTS: [f64; 9] = [-3.0, -2.0, -1.2, -0.5, 0.0, 0.4, 1.1, 2.0, 3.0];

impl NodeFunction {
    /// Cost `C(P) = ½qP² + cP + b`, convex for `q ≥ 0`.
    pub fn cost(q: f64, c: f64, b: f64) -> Self {
        NodeFunction::Quadratic { a: q, c, b }
    }

    /// Utility `U(P) = −½qP² + cP + b`, concave for `q ≥ 0`.
    pub fn utility(q: f64, c: f64, b: f64) -> Self {
        NodeFunction::Quadratic { a: -q, c, b }
    }

    /// Wraps a user function after checking its derivative against central
    /// differences and its curvature sign by second differences.
    pub fn custom(f: Arc<dyn ScalarFn>, shape: Shape) -> Result<Self> {
        let h = 1e-5;
        for &x in &PROBE_POINTS {
            let fd = (f.value(x + h) - f.value(x - h)) / (2.0 * h);
            let d = f.derivative(x);
            if !d.is_finite() || (fd - d).abs() > 1e-8 * d.abs().max(1.0) {
                return Err(Error::invalid(
                    "market.function",
                    format!("derivative at {x} is {d}, finite differences give {fd}"),
                ));
            }
            let h2 = 1e-3;
            let second = (f.value(x + h2) - 2.0 * f.value(x) + f.value(x - h2)) / (h2 * h2);
            let tol = 1e-6 * f.value(x).abs().max(1.0);
            let wrong = match shape {
                Shape::Convex => second < -tol,
                Shape::Concave => second > tol,
            };
            if wrong {
                return Err(Error::invalid(
                    "market.function",
                    format!("function is not {shape:?} near {x}").to_lowercase(),
                ));
            }
        }
        Ok(NodeFunction::Custom(f))
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            NodeFunction::Quadratic { a, c, b } => 0.5 * a * x * x + c * x + b,
            NodeFunction::Custom(f) => f.value(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            NodeFunction::Quadratic { a, c, .. } => a * x + c,
            NodeFunction::Custom(f) => f.derivative(x),
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match self {
            NodeFunction::Quadratic { a, .. } => *a,
            NodeFunction::Custom(f) => {
                let h = 1e-5 * x.abs().max(1.0);
                (f.derivative(x + h) - f.derivative(x - h)) / (2.0 * h)
            }
        }
    }

    /// `(a, c, b)` of a quadratic.
    pub fn as_quadratic(&self) -> Option<(f64, f64, f64)> {
        match self {
            NodeFunction::Quadratic { a, c, b } => Some((*a, *c, *b)),
            NodeFunction::Custom(_) => None,
        }
    }

    pub fn shape_ok(&self, shape: Shape) -> bool {
        match (self, shape) {
            (NodeFunction::Quadratic { a, .. }, Shape::Convex) => *a >= 0.0,
            (NodeFunction::Quadratic { a, .. }, Shape::Concave) => *a <= 0.0,
            (NodeFunction::Custom(_), _) => true,
        }
    }
}
