//! Exact maximizer of the clipped surrogate on a tabular policy.
//!
//! Per state the objective `Σ_a μ_a·min(r_a·A_a, clip(r_a, l_a, u_a)·A_a)` with
//! `r_a = π_a/μ_a` is concave and piecewise linear in `π_a`: slope `A_a` up to
//! `u_a·μ_a` then flat when `A_a > 0`; flat up to `l_a·μ_a` then slope `A_a`
//! when `A_a < 0`. Greedy filling by marginal value is optimal.

use super::TabularPolicy;
use crate::error::{Error, Result};

/// Value of the clipped surrogate for one state.
pub fn clipped_objective_row(pi: &[f64], mu: &[f64], adv: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    (0..pi.len())
        .filter(|&a| mu[a] > 0.0)
        .map(|a| {
            let r = pi[a] / mu[a];
            mu[a] * (r * adv[a]).min(r.clamp(lower[a], upper[a].max(lower[a])) * adv[a])
        })
        .sum()
}

/// One maximizing row. Among the optimal rows, spare mass is moved toward
/// `anchor` where that costs nothing.
pub fn clipped_surrogate_argmax(mu: &[f64], adv: &[f64], lower: &[f64], upper: &[f64], anchor: &[f64]) -> Vec<f64> {
    let n = mu.len();
    let mut pi = vec![0.0; n];
    let mut mass: f64 = 1.0;

    let mut positive: Vec<usize> = (0..n).filter(|&a| mu[a] > 0.0 && adv[a] > 0.0).collect();
    positive.sort_by(|&a, &b| adv[b].total_cmp(&adv[a]));
    for a in positive {
        let take = mass.min(upper[a] * mu[a]);
        pi[a] += take;
        mass -= take;
    }

    // Zero-slope capacity: unlimited unless the advantage is negative.
    let cap = |a: usize| {
        if mu[a] > 0.0 && adv[a] < 0.0 {
            lower[a].max(0.0) * mu[a]
        } else {
            f64::INFINITY
        }
    };
    if mass > 0.0 {
        let want: Vec<f64> = (0..n).map(|a| (anchor[a] - pi[a]).max(0.0).min((cap(a) - pi[a]).max(0.0))).collect();
        let total: f64 = want.iter().sum();
        let scale = if total > mass { mass / total } else { 1.0 };
        for a in 0..n {
            pi[a] += want[a] * scale;
        }
        mass = (mass - total * scale).max(0.0);
    }
    if mass > 0.0 {
        let unlimited = (0..n)
            .filter(|&a| cap(a).is_infinite())
            .max_by(|&a, &b| adv[a].total_cmp(&adv[b]).then(b.cmp(&a)));
        if let Some(a) = unlimited {
            pi[a] += mass;
        } else {
            for a in 0..n {
                let room = (cap(a) - pi[a]).max(0.0).min(mass);
                pi[a] += room;
                mass -= room;
            }
            if mass > 0.0 {
                let least_bad = (0..n).max_by(|&a, &b| adv[a].total_cmp(&adv[b]).then(b.cmp(&a))).expect("non-empty row");
                pi[least_bad] += mass;
            }
        }
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    pi
}

/// Row-wise [`clipped_surrogate_argmax`]; `lower`/`upper` are ratio bounds `[S × A]`.
pub fn maximize_clipped_surrogate(
    mu: &TabularPolicy,
    advantage: &[f64],
    lower: &[f64],
    upper: &[f64],
    anchor: &TabularPolicy,
) -> Result<TabularPolicy> {
    let (n, m) = (mu.states(), mu.actions());
    if advantage.len() != n * m || lower.len() != n * m || upper.len() != n * m || anchor.states() != n || anchor.actions() != m {
        return Err(crate::error::shape_err("surrogate inputs must all be S x A".to_string()));
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && u >= l && *u > 0.0)) {
        return Err(Error::InvalidArgument("clip bounds must be finite with 0 < u and l <= u".into()));
    }
    let mut probs = Vec::with_capacity(n * m);
    for s in 0..n {
        let r = s * m..(s + 1) * m;
        probs.extend(clipped_surrogate_argmax(mu.row(s), &advantage[r.clone()], &lower[r.clone()], &upper[r], anchor.row(s)));
    }
    TabularPolicy::from_rows_normalized(n, m, probs)
}
