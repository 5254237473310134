//! Cyclic coordinate descent, used as an independent oracle in tests.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub sweeps: usize,
}

const MAX_SWEEPS: usize = 1_000_000;
const KKT_TARGET: f64 = 1e-10;

fn col(a: &[f64], rows: usize, j: usize) -> &[f64] {
    &a[j * rows..(j + 1) * rows]
}

fn naive_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn shrink(v: f64, alpha: f64) -> f64 {
    (v.abs() - alpha).max(0.0) * v.signum()
}

/// Solves the Lasso on a dense column-major `rows x cols` matrix to a KKT
/// residual of 1e-10.
pub fn reference_solve(
    a: &[f64],
    rows: usize,
    cols: usize,
    y: &[f64],
    lambda: f64,
) -> Result<ReferenceSolution> {
    if a.len() != rows * cols || y.len() != rows {
        return Err(Error::Dimension("reference problem dimensions".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    let norms: Vec<f64> = (0..cols).map(|j| naive_dot(col(a, rows, j), col(a, rows, j))).collect();
    let mut x = vec![0.0; cols];
    let mut r = y.to_vec();
    let mut sweeps = 0;

    // one coordinate update; returns the absolute change
    let update = |j: usize, x: &mut [f64], r: &mut [f64]| -> f64 {
        if norms[j] == 0.0 {
            return 0.0;
        }
        let c = col(a, rows, j);
        let old = x[j];
        let rho = naive_dot(c, r) + norms[j] * old;
        let new = shrink(rho, lambda) / norms[j];
        if new != old {
            let d = new - old;
            for i in 0..rows {
                r[i] -= d * c[i];
            }
            x[j] = new;
        }
        (new - old).abs()
    };

    loop {
        // full sweep, then iterate on the active set until it settles
        for j in 0..cols {
            update(j, &mut x, &mut r);
        }
        sweeps += 1;
        let active: Vec<usize> = (0..cols).filter(|&j| x[j] != 0.0).collect();
        loop {
            let mut c = 0.0f64;
            for &j in &active {
                c = c.max(update(j, &mut x, &mut r));
            }
            sweeps += 1;
            if c <= 1e-15 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()))) || sweeps >= MAX_SWEEPS {
                break;
            }
        }
        // recompute the residual from scratch
        r = y.to_vec();
        for j in 0..cols {
            if x[j] != 0.0 {
                let c = col(a, rows, j);
                for i in 0..rows {
                    r[i] -= x[j] * c[i];
                }
            }
        }
        let kkt = kkt(a, rows, cols, &r, &x, lambda);
        if kkt <= KKT_TARGET {
            let rss = naive_dot(&r, &r);
            let l1: f64 = x.iter().map(|v| v.abs()).sum();
            return Ok(ReferenceSolution {
                objective: 0.5 * rss + lambda * l1,
                x,
                kkt_residual: kkt,
                sweeps,
            });
        }
        if sweeps >= MAX_SWEEPS {
            return Err(Error::NotConverged(format!(
                "coordinate descent reached KKT {kkt:e} after {sweeps} sweeps"
            )));
        }
    }
}

fn kkt(a: &[f64], rows: usize, cols: usize, r: &[f64], x: &[f64], lambda: f64) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..cols {
        let c = naive_dot(col(a, rows, j), r) / lambda;
        let v = if x[j] > 0.0 {
            (c - 1.0).abs()
        } else if x[j] < 0.0 {
            (c + 1.0).abs()
        } else {
            (c.abs() - 1.0).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}
