//! Central finite differences with Richardson extrapolation.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Fornberg weights: `c[k][j]` is the weight of `nodes[j]` in the
/// `k`-th derivative at `z`.
fn fornberg(z: f64, nodes: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; n]; max_order + 1];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Offsets and unit-step weights of the narrowest symmetric stencil for the
/// `order`-th derivative. Zero weights are dropped.
pub fn central_stencil(order: usize) -> Vec<(i32, f64)> {
    if order == 0 {
        return vec![(0, 1.0)];
    }
    let half = order.div_ceil(2) as i32;
    let offsets: Vec<i32> = (-half..=half).collect();
    let nodes: Vec<f64> = offsets.iter().map(|&o| o as f64).collect();
    let w = fornberg(0.0, &nodes, order);
    offsets
        .into_iter()
        .zip(w[order].iter().copied())
        .filter(|(_, w)| w.abs() > 1e-14)
        .collect()
}

/// Mixed partial derivative `prod_i d^{orders[i]}/dx_i^{orders[i]}` of a
/// vector-valued function at the origin, from tensor-product central stencils
/// with step `h`, refined by `levels` rounds of Richardson extrapolation
/// (steps `h, h/2, ..., h/2^levels`).
///
/// Evaluations run in parallel and are summed in a fixed order.
pub fn mixed_partial<F>(orders: &[usize], h: f64, levels: usize, eval: &F) -> Result<DVector<f64>>
where
    F: Fn(&[f64]) -> Result<DVector<f64>> + Sync,
{
    let mut table: Vec<Vec<DVector<f64>>> = Vec::with_capacity(levels + 1);
    for level in 0..=levels {
        let step = h / f64::powi(2.0, level as i32);
        let base = single_stencil(orders, step, eval)?;
        let mut row = vec![base];
        for j in 1..=level {
            let factor = f64::powi(4.0, j as i32) - 1.0;
            let prev = &table[level - 1][j - 1];
            let cur = &row[j - 1];
            let next = cur + (cur - prev) / factor;
            row.push(next);
        }
        table.push(row);
    }
    Ok(table.pop().and_then(|mut r| r.pop()).expect("non-empty table"))
}

fn single_stencil<F>(orders: &[usize], step: f64, eval: &F) -> Result<DVector<f64>>
where
    F: Fn(&[f64]) -> Result<DVector<f64>> + Sync,
{
    let stencils: Vec<Vec<(i32, f64)>> = orders.iter().map(|&k| central_stencil(k)).collect();
    let mut points: Vec<(Vec<f64>, f64)> = vec![(vec![0.0; orders.len()], 1.0)];
    for (var, stencil) in stencils.iter().enumerate() {
        let scale = step.powi(orders[var] as i32);
        points = points
            .into_iter()
            .flat_map(|(p, w)| {
                stencil.iter().map(move |&(off, sw)| {
                    let mut q = p.clone();
                    q[var] = off as f64 * step;
                    (q, w * sw / scale)
                })
            })
            .collect();
    }
    let values: Vec<DVector<f64>> = points
        .par_iter()
        .map(|(p, _)| eval(p))
        .collect::<Result<_>>()?;
    let mut acc = DVector::zeros(values[0].len());
    for ((_, w), v) in points.iter().zip(&values) {
        acc.axpy(*w, v, 1.0);
    }
    if acc.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite finite-difference estimate".into()));
    }
    Ok(acc)
}
