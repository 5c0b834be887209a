use serde::Serialize;

use super::{check_shapes, evaluate, expected_advantage, ExactEvaluation, TabularPolicy};
use crate::envs::TabularMdp;
use crate::error::{Error, Result};

/// Slack allowed when comparing the two sides of a bound.
pub const BOUND_TOL: f64 = 1e-9;

/// Both sides of a policy-improvement lower bound with every intermediate term.
/// Unused penalty slots are zero.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    /// `η(π) − η(π_k)`.
    pub lhs: f64,
    /// `(1/(1−γ)) E_{s∼ρ^μ, a∼μ}[(π/μ)·A]`.
    pub surrogate: f64,
    /// Term in `δ_max^{μ,π_k}`.
    pub penalty_anchor: f64,
    /// Term in `δ_max · δ`.
    pub penalty_trust: f64,
    /// `max |A|` of the advantage used in the surrogate.
    pub epsilon: f64,
    /// `E_{s∼ρ^μ} TV(μ, π)(s)`.
    pub delta: f64,
    /// The max-TV factor of the trust penalty.
    pub delta_max: f64,
    /// `max_s TV(μ, π_k)(s)`.
    pub delta_max_anchor: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

impl BoundReport {
    pub fn slack(&self) -> f64 {
        self.lhs - self.rhs
    }
}

fn check_support(pi: &TabularPolicy, mu: &TabularPolicy) -> Result<()> {
    for s in 0..pi.states() {
        for a in 0..pi.actions() {
            if mu.prob(s, a) == 0.0 && pi.prob(s, a) > 0.0 {
                return Err(Error::ZeroBehaviorProbability { state: s, action: a });
            }
        }
    }
    Ok(())
}

/// `(1/(1−γ)) E_{s∼ρ^μ, a∼μ}[(π(a|s)/μ(a|s))·adv(s, a)]`.
pub fn surrogate_value(
    gamma: f64,
    pi: &TabularPolicy,
    mu: &TabularPolicy,
    advantage: &[f64],
    mu_visitation: &[f64],
) -> Result<f64> {
    check_support(pi, mu)?;
    let m = pi.actions();
    let mut total = 0.0;
    for (s, w) in mu_visitation.iter().enumerate() {
        for a in 0..m {
            let b = mu.prob(s, a);
            if b > 0.0 {
                total += w * b * (pi.prob(s, a) / b) * advantage[s * m + a];
            }
        }
    }
    Ok(total / (1.0 - gamma))
}

fn trust_coefficient(epsilon: f64, gamma: f64) -> f64 {
    4.0 * epsilon * gamma / ((1.0 - gamma) * (1.0 - gamma))
}

/// Lower bound on `η(π) − η(π_k)` from data of `μ`, using `A^{π_k}`.
pub fn lemma21_bound(mdp: &TabularMdp, pi_k: &TabularPolicy, pi: &TabularPolicy, mu: &TabularPolicy) -> Result<BoundReport> {
    check_shapes(mdp, &[pi_k, pi, mu])?;
    let gamma = mdp.gamma();
    let ek = evaluate(mdp, pi_k)?;
    let ep = evaluate(mdp, pi)?;
    let em = evaluate(mdp, mu)?;
    let surrogate = surrogate_value(gamma, pi, mu, &ek.advantage, &em.visitation)?;
    let epsilon = ek.max_abs_advantage();
    let delta = mu.tv_expected(pi, &em.visitation);
    let delta_max = pi_k.tv_max(pi);
    let penalty_trust = trust_coefficient(epsilon, gamma) * delta_max * delta;
    let lhs = ep.eta - ek.eta;
    let rhs = surrogate - penalty_trust;
    Ok(BoundReport {
        lhs,
        surrogate,
        penalty_anchor: 0.0,
        penalty_trust,
        epsilon,
        delta,
        delta_max,
        delta_max_anchor: 0.0,
        rhs,
        satisfied: lhs >= rhs - BOUND_TOL,
    })
}

fn lemma31_from(mdp: &TabularMdp, ek: &ExactEvaluation, em: &ExactEvaluation, pi_k: &TabularPolicy, pi: &TabularPolicy, mu: &TabularPolicy) -> Result<BoundReport> {
    let gamma = mdp.gamma();
    let ep = evaluate(mdp, pi)?;
    let surrogate = surrogate_value(gamma, pi, mu, &em.advantage, &em.visitation)?;
    let epsilon = em.max_abs_advantage();
    let delta = mu.tv_expected(pi, &em.visitation);
    let delta_max = mu.tv_max(pi);
    let delta_max_anchor = mu.tv_max(pi_k);
    let penalty_anchor = 2.0 * (1.0 + gamma) * epsilon / ((1.0 - gamma) * (1.0 - gamma)) * delta_max_anchor;
    let penalty_trust = trust_coefficient(epsilon, gamma) * delta_max * delta;
    let lhs = ep.eta - ek.eta;
    let rhs = surrogate - penalty_anchor - penalty_trust;
    Ok(BoundReport {
        lhs,
        surrogate,
        penalty_anchor,
        penalty_trust,
        epsilon,
        delta,
        delta_max,
        delta_max_anchor,
        rhs,
        satisfied: lhs >= rhs - BOUND_TOL,
    })
}

/// Lower bound on `η(π) − η(π_k)` that uses `μ`'s own advantage `A^μ`.
pub fn lemma31_bound(mdp: &TabularMdp, pi_k: &TabularPolicy, pi: &TabularPolicy, mu: &TabularPolicy) -> Result<BoundReport> {
    check_shapes(mdp, &[pi_k, pi, mu])?;
    let ek = evaluate(mdp, pi_k)?;
    let em = evaluate(mdp, mu)?;
    lemma31_from(mdp, &ek, &em, pi_k, pi, mu)
}

/// `F(π) = L_{π_k}(π) − 4εγ/(1−γ)²·δ_max^{π_k,π}·δ^{π_k,π}` with `ε = max|A^{π_k}|`.
fn f_value(gamma: f64, ek: &ExactEvaluation, pi_k: &TabularPolicy, pi: &TabularPolicy) -> f64 {
    let linear = expected_advantage(pi, &ek.advantage, &ek.visitation) / (1.0 - gamma);
    let c = trust_coefficient(ek.max_abs_advantage(), gamma);
    linear - c * pi_k.tv_max(pi) * pi_k.tv_expected(pi, &ek.visitation)
}

/// Euclidean projection of `row` onto the probability simplex.
fn project_simplex(row: &mut [f64]) {
    let mut sorted = row.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    row.iter_mut().for_each(|v| *v = (*v - theta).max(0.0));
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= total);
}

const ASCENT_ITERS: usize = 500;
const ASCENT_STEPS: [f64; 5] = [0.1, 0.01, 1e-3, 1e-4, 1e-5];

/// Projected subgradient ascent on `F` from `π_k`; restarts with a smaller
/// step while the best iterate has `F ≤ 0`.
fn maximize_f(mdp: &TabularMdp, ek: &ExactEvaluation, pi_k: &TabularPolicy) -> (TabularPolicy, f64) {
    let (n, m, gamma) = (mdp.states(), mdp.actions(), mdp.gamma());
    let c = trust_coefficient(ek.max_abs_advantage(), gamma);
    let mut best = (pi_k.clone(), 0.0);
    for step in ASCENT_STEPS {
        let mut probs = pi_k.probs().to_vec();
        for _ in 0..ASCENT_ITERS {
            let current = TabularPolicy { states: n, actions: m, probs: probs.clone() };
            let value = f_value(gamma, ek, pi_k, &current);
            if value > best.1 {
                best = (current.clone(), value);
            }
            let tv: Vec<f64> = (0..n).map(|s| pi_k.tv_at(&current, s)).collect();
            let worst = (0..n).fold(0, |b, s| if tv[s] > tv[b] { s } else { b });
            let delta = pi_k.tv_expected(&current, &ek.visitation);
            let delta_max = tv[worst];
            let mut grad = vec![0.0; n * m];
            for s in 0..n {
                for a in 0..m {
                    let i = s * m + a;
                    let dtv = 0.5 * (probs[i] - pi_k.probs()[i]).signum() * f64::from(probs[i] != pi_k.probs()[i]);
                    let mut d_pen = delta_max * ek.visitation[s] * dtv;
                    if s == worst {
                        d_pen += delta * dtv;
                    }
                    grad[i] = ek.visitation[s] * ek.advantage[i] / (1.0 - gamma) - c * d_pen;
                }
            }
            for (p, g) in probs.iter_mut().zip(&grad) {
                *p += step * g;
            }
            probs.chunks_mut(m).for_each(project_simplex);
        }
        if best.1 > 0.0 {
            break;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MuStatus {
    /// `E_{s∼ρ^μ} TV(μ, π_k)(s)`.
    pub alpha: f64,
    /// Left side of the improvement condition; it holds when positive.
    pub condition: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicReport {
    pub next: TabularPolicy,
    pub f_value: f64,
    /// Whether the optimizer found `F(π_{k+1}) > 0`.
    pub optimizer_ok: bool,
    pub statuses: Vec<MuStatus>,
    pub largest_passing_alpha: Option<f64>,
}

/// Finds `π_{k+1}` by maximizing `F` and evaluates the improvement condition
/// `L_μ(π_{k+1}) − anchor penalty − trust penalty > 0` for every candidate `μ`.
pub fn monotonic_improvement_check(mdp: &TabularMdp, pi_k: &TabularPolicy, candidates: &[TabularPolicy]) -> Result<MonotonicReport> {
    check_shapes(mdp, &[pi_k])?;
    let ek = evaluate(mdp, pi_k)?;
    let (next, f_value) = maximize_f(mdp, &ek, pi_k);
    let mut statuses = Vec::with_capacity(candidates.len());
    for mu in candidates {
        check_shapes(mdp, &[mu])?;
        let em = evaluate(mdp, mu)?;
        let report = lemma31_from(mdp, &ek, &em, pi_k, &next, mu)?;
        statuses.push(MuStatus {
            alpha: mu.tv_expected(pi_k, &em.visitation),
            condition: report.rhs,
            holds: report.rhs > 0.0,
        });
    }
    let largest_passing_alpha = statuses.iter().filter(|s| s.holds).map(|s| s.alpha).reduce(f64::max);
    Ok(MonotonicReport { next, f_value, optimizer_ok: f_value > 0.0, statuses, largest_passing_alpha })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PpoImprovement {
    /// `E_{s∼ρ^{π_k}, a∼π_{k+1}}[A^{π_k}]`.
    pub hypothesis: f64,
    pub hypothesis_holds: bool,
    /// `E_{s∼ρ^{π_k}}[V^{π_{k+1}}(s)] − E_{s∼ρ^{π_k}}[V^{π_k}(s)]`.
    pub improvement: f64,
    pub improved: bool,
}

/// Whether the value function increases on average over `π_k`'s visitation.
pub fn ppo_value_improvement_check(mdp: &TabularMdp, pi_k: &TabularPolicy, pi_next: &TabularPolicy) -> Result<PpoImprovement> {
    check_shapes(mdp, &[pi_k, pi_next])?;
    let ek = evaluate(mdp, pi_k)?;
    let en = evaluate(mdp, pi_next)?;
    let hypothesis = expected_advantage(pi_next, &ek.advantage, &ek.visitation);
    let improvement: f64 = ek.visitation.iter().zip(en.v.iter().zip(&ek.v)).map(|(w, (a, b))| w * (a - b)).sum();
    Ok(PpoImprovement {
        hypothesis,
        hypothesis_holds: hypothesis >= -1e-12,
        improvement,
        improved: improvement >= -1e-10,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SideCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

/// `‖ρ^π̃ − ρ^π‖₁ ≤ (γ/(1−γ))·E_{s∼ρ^π}‖π̃ − π‖₁(s)`.
pub fn visitation_bound_check(mdp: &TabularMdp, pi: &TabularPolicy, pi_tilde: &TabularPolicy) -> Result<SideCheck> {
    let ep = evaluate(mdp, pi)?;
    let et = evaluate(mdp, pi_tilde)?;
    let lhs: f64 = et.visitation.iter().zip(&ep.visitation).map(|(a, b)| (a - b).abs()).sum();
    let gamma = mdp.gamma();
    let rhs = gamma / (1.0 - gamma) * 2.0 * pi_tilde.tv_expected(pi, &ep.visitation);
    Ok(SideCheck { lhs, rhs, satisfied: lhs <= rhs + BOUND_TOL })
}

/// `max_s |E_{a∼π̃} A^π(s, a)| ≤ max_s ‖π̃ − π‖₁(s) · max|A^π|`.
pub fn advantage_bound_check(mdp: &TabularMdp, pi: &TabularPolicy, pi_tilde: &TabularPolicy) -> Result<SideCheck> {
    let ep = evaluate(mdp, pi)?;
    let m = mdp.actions();
    let lhs = (0..mdp.states())
        .map(|s| pi_tilde.row(s).iter().zip(&ep.advantage[s * m..(s + 1) * m]).map(|(p, a)| p * a).sum::<f64>().abs())
        .fold(0.0, f64::max);
    let rhs = 2.0 * pi_tilde.tv_max(pi) * ep.max_abs_advantage();
    Ok(SideCheck { lhs, rhs, satisfied: lhs <= rhs + BOUND_TOL })
}
