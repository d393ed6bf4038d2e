//! Worst-case expectation `σ_P(v) = inf { p·v : p ∈ P }` over an uncertainty set.
//!
//! Callers pass `v` over the full outcome space with terminal coordinates
//! already set to zero.

use crate::error::{Error, Result};
use crate::model::UncertaintySet;

/// Largest support the vertex-enumeration oracle accepts.
pub const ORACLE_MAX_SUPPORT: usize = 12;

const FEASIBILITY_TOL: f64 = 1e-9;

/// Infimum value and a distribution attaining it.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaResult {
    pub value: f64,
    pub minimizer: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dim(v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch { expected, actual: v.len() });
    }
    Ok(())
}

pub fn sigma_singleton(v: &[f64], p: &[f64]) -> Result<SigmaResult> {
    check_dim(v, p.len())?;
    Ok(SigmaResult { value: dot(p, v), minimizer: p.to_vec() })
}

fn check_box(lo: &[f64], hi: &[f64]) -> Result<()> {
    check_dim(hi, lo.len())?;
    if let Some(j) = lo.iter().zip(hi).position(|(l, h)| !(l <= h)) {
        return Err(Error::InfeasibleBox(format!("lo[{j}] > hi[{j}]")));
    }
    let sl: f64 = lo.iter().sum();
    let sh: f64 = hi.iter().sum();
    if sl > 1.0 + FEASIBILITY_TOL {
        return Err(Error::InfeasibleBox(format!("sum(lo) = {sl} > 1")));
    }
    if sh < 1.0 - FEASIBILITY_TOL {
        return Err(Error::InfeasibleBox(format!("sum(hi) = {sh} < 1")));
    }
    Ok(())
}

/// Exact minimum over `{p : lo <= p <= hi, Σp = 1}`.
///
/// Starts from `lo` and pours the free mass `1 - Σlo` into outcomes in
/// ascending order of `v`, each up to its upper bound. Equal values are
/// filled in index order.
pub fn sigma_interval(v: &[f64], lo: &[f64], hi: &[f64]) -> Result<SigmaResult> {
    check_dim(v, lo.len())?;
    check_box(lo, hi)?;

    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));

    let mut p = lo.to_vec();
    let mut free = (1.0 - lo.iter().sum::<f64>()).max(0.0);
    for &j in &order {
        if free <= 0.0 {
            break;
        }
        let add = (hi[j] - lo[j]).min(free);
        p[j] += add;
        free -= add;
    }
    Ok(SigmaResult { value: dot(&p, v), minimizer: p })
}

/// Minimum over an explicit vertex list; ties go to the lowest index.
pub fn sigma_vertices(v: &[f64], vertices: &[Vec<f64>]) -> Result<SigmaResult> {
    let mut best: Option<(f64, usize)> = None;
    for (i, p) in vertices.iter().enumerate() {
        check_dim(v, p.len())?;
        let val = dot(p, v);
        if best.is_none_or(|(b, _)| val < b) {
            best = Some((val, i));
        }
    }
    let (value, i) = best.ok_or(Error::EmptyVertexList)?;
    Ok(SigmaResult { value, minimizer: vertices[i].clone() })
}

/// Independent check of [`sigma_interval`] by enumerating every vertex of the
/// polytope `{lo <= p <= hi, Σp = 1}`.
///
/// A vertex has every coordinate at a bound except at most one, so it is
/// enough to pick the free coordinate and a lo/hi pattern for the others.
/// Other variants defer to their direct operation.
pub fn sigma_oracle(v: &[f64], set: &UncertaintySet) -> Result<SigmaResult> {
    let (lo, hi) = match set {
        UncertaintySet::IntervalBox { lo, hi } => (lo, hi),
        other => return other.sigma(v),
    };
    let n = lo.len();
    if n > ORACLE_MAX_SUPPORT {
        return Err(Error::SupportTooLarge { size: n, limit: ORACLE_MAX_SUPPORT });
    }
    check_dim(v, n)?;
    check_box(lo, hi)?;

    let mut best: Option<SigmaResult> = None;
    let mut p = vec![0.0; n];
    for free in 0..n {
        for mask in 0u32..(1u32 << (n - 1)) {
            let mut bit = 0;
            let mut fixed = 0.0;
            for j in (0..n).filter(|&j| j != free) {
                p[j] = if mask >> bit & 1 == 1 { hi[j] } else { lo[j] };
                fixed += p[j];
                bit += 1;
            }
            p[free] = 1.0 - fixed;
            if p[free] < lo[free] - 1e-12 || p[free] > hi[free] + 1e-12 {
                continue;
            }
            let value = dot(&p, v);
            if best.as_ref().is_none_or(|b| value < b.value) {
                best = Some(SigmaResult { value, minimizer: p.clone() });
            }
        }
    }
    best.ok_or_else(|| Error::InfeasibleBox("no vertex found".into()))
}
