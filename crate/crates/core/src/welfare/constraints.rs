//! Inequality constraints `g(P_g, P_d) ≤ 0` on supply and demand.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError};

/// A convex vector constraint `g: ℝ²ⁿ → ℝˡ` on `(P_g, P_d)`.
///
/// Convexity of every component is the implementer's responsibility; it is
/// spot-checked with random midpoint tests when a problem is built.
pub trait ConstraintFn: Send + Sync + fmt::Debug {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn eval(&self, pg: &[f64], pd: &[f64], out: &mut [f64]);

    /// `l × 2n` Jacobian with columns ordered `[P_g | P_d]`.
    fn jacobian(&self, pg: &[f64], pd: &[f64]) -> DMatrix<f64>;

    /// Adds `(∂g/∂P_g)ᵀμ` to `out_g` and `(∂g/∂P_d)ᵀμ` to `out_d`.
    fn jacobian_t_mul(&self, pg: &[f64], pd: &[f64], mu: &[f64], out_g: &mut [f64], out_d: &mut [f64]) {
        let n = pg.len();
        let j = self.jacobian(pg, pd);
        for (row, m) in mu.iter().enumerate() {
            if *m == 0.0 {
                continue;
            }
            for i in 0..n {
                out_g[i] += j[(row, i)] * m;
                out_d[i] += j[(row, n + i)] * m;
            }
        }
    }

    fn row_label(&self, row: usize) -> String {
        format!("g[{}]", row + 1)
    }

    fn is_affine(&self) -> bool {
        false
    }
}

/// Box bounds on nodal supply and demand. Infinite entries mean "no bound".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodalBounds {
    pub pg_min: Vec<f64>,
    pub pg_max: Vec<f64>,
    pub pd_min: Vec<f64>,
    pub pd_max: Vec<f64>,
}

impl NodalBounds {
    pub fn unbounded(n: usize) -> Self {
        Self {
            pg_min: vec![f64::NEG_INFINITY; n],
            pg_max: vec![f64::INFINITY; n],
            pd_min: vec![f64::NEG_INFINITY; n],
            pd_max: vec![f64::INFINITY; n],
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let mut errors = Vec::new();
        for (name, v) in [
            ("pg_min", &self.pg_min),
            ("pg_max", &self.pg_max),
            ("pd_min", &self.pd_min),
            ("pd_max", &self.pd_max),
        ] {
            if v.len() != n {
                errors.push(ValidationError::new(
                    format!("market.bounds.{name}"),
                    format!("expected {n} values, got {}", v.len()),
                ));
            } else if let Some(i) = v.iter().position(|x| x.is_nan()) {
                errors.push(ValidationError::new(
                    format!("market.bounds.{name}[{i}]"),
                    "must not be NaN",
                ));
            }
        }
        if errors.is_empty() {
            for i in 0..n {
                if !(self.pg_min[i] < self.pg_max[i]) {
                    errors.push(ValidationError::new(
                        format!("market.bounds.pg_max[{i}]"),
                        "upper bound must exceed the lower bound",
                    ));
                }
                if !(self.pd_min[i] < self.pd_max[i]) {
                    errors.push(ValidationError::new(
                        format!("market.bounds.pd_max[{i}]"),
                        "upper bound must exceed the lower bound",
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Supply,
    Demand,
}

/// One finite bound, written as `±(P − limit) ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRow {
    pub node: usize,
    pub quantity: Quantity,
    pub upper: bool,
    pub limit: f64,
}

/// [`NodalBounds`] as a constraint function with one row per finite bound.
#[derive(Debug, Clone)]
pub struct BoxConstraints {
    n: usize,
    rows: Vec<BoundRow>,
}

impl BoxConstraints {
    pub fn new(bounds: &NodalBounds) -> Result<Self> {
        let n = bounds.pg_min.len();
        bounds.validate(n)?;
        let mut rows = Vec::new();
        for i in 0..n {
            let candidates = [
                (Quantity::Supply, true, bounds.pg_max[i]),
                (Quantity::Supply, false, bounds.pg_min[i]),
                (Quantity::Demand, true, bounds.pd_max[i]),
                (Quantity::Demand, false, bounds.pd_min[i]),
            ];
            for (quantity, upper, limit) in candidates {
                if limit.is_finite() {
                    rows.push(BoundRow {
                        node: i,
                        quantity,
                        upper,
                        limit,
                    });
                }
            }
        }
        Ok(Self { n, rows })
    }

    pub fn rows(&self) -> &[BoundRow] {
        &self.rows
    }

    fn sign(row: &BoundRow) -> f64 {
        if row.upper {
            1.0
        } else {
            -1.0
        }
    }
}

impl ConstraintFn for BoxConstraints {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn eval(&self, pg: &[f64], pd: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            let x = match row.quantity {
                Quantity::Supply => pg[row.node],
                Quantity::Demand => pd[row.node],
            };
            *o = Self::sign(row) * (x - row.limit);
        }
    }

    fn jacobian(&self, _pg: &[f64], _pd: &[f64]) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.rows.len(), 2 * self.n);
        for (r, row) in self.rows.iter().enumerate() {
            let col = match row.quantity {
                Quantity::Supply => row.node,
                Quantity::Demand => self.n + row.node,
            };
            j[(r, col)] = Self::sign(row);
        }
        j
    }

    fn jacobian_t_mul(&self, _pg: &[f64], _pd: &[f64], mu: &[f64], out_g: &mut [f64], out_d: &mut [f64]) {
        for (m, row) in mu.iter().zip(&self.rows) {
            let target = match row.quantity {
                Quantity::Supply => &mut out_g[row.node],
                Quantity::Demand => &mut out_d[row.node],
            };
            *target += Self::sign(row) * m;
        }
    }

    fn row_label(&self, r: usize) -> String {
        let row = &self.rows[r];
        let q = match row.quantity {
            Quantity::Supply => "pg",
            Quantity::Demand => "pd",
        };
        let side = if row.upper { "max" } else { "min" };
        format!("{q}_{side}[{}]", row.node + 1)
    }

    fn is_affine(&self) -> bool {
        true
    }
}

/// Random midpoint test of every component of `g` on a box of half-width
/// `radius` around `center = (P_g, P_d)`.
pub fn check_midpoint_convexity(
    g: &dyn ConstraintFn,
    center: &[f64],
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<()> {
    let n = center.len() / 2;
    let l = g.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw =
        |rng: &mut ChaCha8Rng| -> Vec<f64> { center.iter().map(|c| c + rng.random_range(-radius..radius)).collect() };
    let (mut ga, mut gb, mut gm) = (vec![0.0; l], vec![0.0; l], vec![0.0; l]);
    for _ in 0..samples {
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let m: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        g.eval(&a[..n], &a[n..], &mut ga);
        g.eval(&b[..n], &b[n..], &mut gb);
        g.eval(&m[..n], &m[n..], &mut gm);
        for i in 0..l {
            let chord = 0.5 * (ga[i] + gb[i]);
            if gm[i] > chord + 1e-10 * chord.abs().max(1.0) {
                return Err(Error::invalid(
                    format!("market.constraints.{}", g.row_label(i)),
                    "constraint component is not convex (midpoint test failed)",
                ));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_rows_skip_infinite_bounds() {
        let mut b = NodalBounds::unbounded(2);
        b.pg_max[0] = 0.3;
        b.pd_min[1] = 0.1;
        let g = BoxConstraints::new(&b).unwrap();
        assert_eq!(g.len(), 2);
        let mut out = vec![0.0; 2];
        g.eval(&[0.5, 0.0], &[0.0, 0.0], &mut out);
        assert_eq!(out, vec![0.5 - 0.3, 0.1 - 0.0]);
        assert_eq!(g.row_label(0), "pg_max[1]");
        assert_eq!(g.row_label(1), "pd_min[2]");
    }

    #[test]
    fn sparse_transpose_product_matches_dense() {
        let b = NodalBounds {
            pg_min: vec![-1.0, 0.0],
            pg_max: vec![1.0, 2.0],
            pd_min: vec![0.0, f64::NEG_INFINITY],
            pd_max: vec![3.0, 4.0],
        };
        let g = BoxConstraints::new(&b).unwrap();
        let mu: Vec<f64> = (0..g.len()).map(|i| i as f64 + 0.5).collect();
        let (mut og, mut od) = (vec![0.0; 2], vec![0.0; 2]);
        g.jacobian_t_mul(&[0.0; 2], &[0.0; 2], &mu, &mut og, &mut od);
        let j = g.jacobian(&[0.0; 2], &[0.0; 2]);
        let dense = j.transpose() * nalgebra::DVector::from_vec(mu);
        assert_eq!(og, dense.as_slice()[..2].to_vec());
        assert_eq!(od, dense.as_slice()[2..].to_vec());
    }

    #[test]
    fn inverted_bounds_are_rejected() {
        let mut b = NodalBounds::unbounded(1);
        b.pg_min[0] = 1.0;
        b.pg_max[0] = 0.0;
        let err = BoxConstraints::new(&b).unwrap_err().to_string();
        assert!(err.contains("market.bounds.pg_max[0]"));
    }

    #[derive(Debug)]
    struct Concave;

    impl ConstraintFn for Concave {
        fn len(&self) -> usize {
            1
        }
        fn eval(&self, pg: &[f64], _pd: &[f64], out: &mut [f64]) {
            out[0] = -pg[0] * pg[0];
        }
        fn jacobian(&self, pg: &[f64], _pd: &[f64]) -> DMatrix<f64> {
            DMatrix::from_row_slice(1, 2, &[-2.0 * pg[0], 0.0])
        }
    }

    #[test]
    fn midpoint_test_catches_concave_component() {
        assert!(check_midpoint_convexity(&Concave, &[0.0, 0.0], 1.0, 50, 1).is_err());
        let b = BoxConstraints::new(&NodalBounds {
            pg_min: vec![-1.0],
            pg_max: vec![1.0],
            pd_min: vec![-1.0],
            pd_max: vec![1.0],
        })
        .unwrap();
        assert!(check_midpoint_convexity(&b, &[0.0, 0.0], 1.0, 50, 1).is_ok());
    }
}
