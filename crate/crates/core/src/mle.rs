//! Maximum-likelihood reconstruction by RρR and diluted RρR iteration.
//!
//! The likelihood is `ℒ(ρ) = Σ m(i) log tr(E_i ρ)` and
//! `R̂(ρ) = (1/M) Σ m(i)/tr(E_i ρ) E_i`. The gap `ℒ(ρ_max) − ℒ(ρ)` is at most
//! `M · r_k` with `r_k = λ_max(R̂) − 1`, so both the stopping bound `r` and
//! the stagnation threshold `ΔL` are compared against per-sample quantities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::cr;
use crate::povm::{ic_check, MeasurementContext};
use crate::sim::Dataset;
use crate::twirl::BlockOperator;
use crate::{f64_of, re, Error, Real, Result, C};

/// Iteration controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionParams {
    /// Per-sample increase of `ℒ` below which an `ε` phase counts as stalled.
    #[serde(default = "default_delta_l")]
    pub delta_l: f64,
    /// Stop once `r_k ≤ r_stop`; `None` means `1/M`.
    #[serde(default)]
    pub r_stop: Option<f64>,
    #[serde(default = "default_eps_start")]
    pub eps_start: f64,
    #[serde(default = "default_eps_floor")]
    pub eps_floor: f64,
    #[serde(default = "default_eps_decay")]
    pub eps_decay: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Warn when the context is not informationally complete.
    #[serde(default = "default_true")]
    pub check_ic: bool,
}

fn default_delta_l() -> f64 {
    1e-12
}
fn default_eps_start() -> f64 {
    1e30
}
fn default_eps_floor() -> f64 {
    1e-30
}
fn default_eps_decay() -> f64 {
    0.5
}
fn default_max_iter() -> usize {
    1_000_000
}
fn default_true() -> bool {
    true
}

impl Default for ReconstructionParams {
    fn default() -> Self {
        ReconstructionParams {
            delta_l: default_delta_l(),
            r_stop: None,
            eps_start: default_eps_start(),
            eps_floor: default_eps_floor(),
            eps_decay: default_eps_decay(),
            max_iter: default_max_iter(),
            check_ic: true,
        }
    }
}

impl ReconstructionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_l >= 0.0) {
            return Err(Error::invalid("delta_l must be nonnegative"));
        }
        if let Some(r) = self.r_stop {
            if !(r >= 0.0) {
                return Err(Error::invalid("r_stop must be nonnegative"));
            }
        }
        if !(self.eps_floor > 0.0 && self.eps_floor < self.eps_start) {
            return Err(Error::invalid("need 0 < eps_floor < eps_start"));
        }
        if !(self.eps_decay > 0.0 && self.eps_decay < 1.0) {
            return Err(Error::invalid("eps_decay must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    StoppedOnR,
    EpsExhausted,
    MaxIter,
}

/// Result of [`reconstruct`]; `loglik_trace[k]` and `rk_trace[k]` belong to
/// the `k`-th accepted iterate, starting with the initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport<T: Real> {
    pub estimate: BlockOperator<T>,
    pub loglik_trace: Vec<f64>,
    pub rk_trace: Vec<f64>,
    pub termination: Termination,
    pub iterations: usize,
    /// `ε` in force at termination; `None` while still in the RρR phase.
    pub final_eps: Option<f64>,
    pub warnings: Vec<String>,
    /// Fidelity with a reference state, when the caller supplies one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<f64>,
}

impl<T: Real> ReconstructionReport<T> {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik_trace.last().unwrap()
    }

    pub fn final_rk(&self) -> f64 {
        *self.rk_trace.last().unwrap()
    }
}

/// Elements with nonzero counts, vectorized once.
struct Problem<T: Real> {
    /// Row `i` is the vectorized element `E_i`.
    ops: DMatrix<C<T>>,
    counts: DVector<T>,
    total: T,
    template: BlockOperator<T>,
}

impl<T: Real> Problem<T> {
    fn new(context: &MeasurementContext<T>, data: &Dataset) -> Result<Self> {
        let aligned = data.aligned(context)?;
        let template = BlockOperator::zeros(&context.partition, context.n);
        let mut rows = Vec::new();
        let mut counts = Vec::new();
        for (povm, cs) in context.povms.iter().zip(&aligned) {
            for (e, &c) in povm.elements.iter().zip(cs) {
                if c > 0.0 {
                    rows.push(e.op.vectorize());
                    counts.push(re::<T>(c));
                }
            }
        }
        if rows.is_empty() {
            return Err(Error::invalid("dataset has no counts"));
        }
        let p = template.num_params();
        let ops = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j].conj());
        let counts = DVector::from_vec(counts);
        let total = counts.sum();
        Ok(Problem { ops, counts, total, template })
    }

    fn probs(&self, rho: &BlockOperator<T>) -> DVector<T> {
        let v = DVector::from_vec(rho.vectorize());
        (&self.ops * v).map(|z| z.re)
    }

    fn loglik(&self, probs: &DVector<T>) -> T {
        let mut l = T::zero();
        for (p, m) in probs.iter().zip(self.counts.iter()) {
            if *p <= T::zero() {
                return -T::max_value().unwrap();
            }
            l += *m * p.ln();
        }
        l
    }

    fn r_operator(&self, probs: &DVector<T>) -> Result<BlockOperator<T>> {
        let mut w = DVector::<C<T>>::zeros(probs.len());
        for i in 0..probs.len() {
            if probs[i] <= T::zero() {
                return Err(Error::domain(format!(
                    "outcome with {} counts has probability {}",
                    f64_of(self.counts[i]),
                    f64_of(probs[i])
                )));
            }
            w[i] = cr(self.counts[i] / (probs[i] * self.total));
        }
        // Rows hold conj(E); Hermitian E gives Σ w_i E_i = conj(opsᵀ w).
        let v = self.ops.tr_mul(&w).map(|z| z.conj());
        Ok(unvectorize(&self.template, v.as_slice()))
    }
}

fn unvectorize<T: Real>(template: &BlockOperator<T>, v: &[C<T>]) -> BlockOperator<T> {
    let mut out = template.clone();
    let mut pos = 0;
    for b in out.blocks_mut() {
        let (r, c) = b.shape();
        for i in 0..r {
            for j in 0..c {
                b[(i, j)] = v[pos];
                pos += 1;
            }
        }
    }
    out
}

/// `Σ m(i) log tr(E_i ρ)` over outcomes with nonzero counts; `−∞` when one
/// of them has zero probability.
pub fn log_likelihood<T: Real>(state: &BlockOperator<T>, context: &MeasurementContext<T>, data: &Dataset) -> Result<f64> {
    let prob = Problem::new(context, data)?;
    let l = prob.loglik(&prob.probs(state));
    Ok(if l == -T::max_value().unwrap() { f64::NEG_INFINITY } else { f64_of(l) })
}

/// `R̂(ρ) = (1/M) Σ m(i)/tr(E_i ρ) E_i`.
pub fn r_operator<T: Real>(state: &BlockOperator<T>, context: &MeasurementContext<T>, data: &Dataset) -> Result<BlockOperator<T>> {
    let prob = Problem::new(context, data)?;
    prob.r_operator(&prob.probs(state))
}

/// `r = λ_max(R̂) − 1`.
pub fn r_bound<T: Real>(r: &BlockOperator<T>) -> T {
    r.max_eig() - T::one()
}

/// One diluted RρR step `ρ' ∝ A ρ A` with `A = (I + εR̂)/(1 + ε)`;
/// `eps = None` is the undiluted limit `A = R̂`. The result is hermitized and
/// renormalized.
pub fn diluted_step<T: Real>(state: &BlockOperator<T>, r: &BlockOperator<T>, eps: Option<f64>) -> Result<BlockOperator<T>> {
    state.check_same(r)?;
    let a = match eps {
        None => r.clone(),
        Some(e) => {
            if !(e > 0.0) {
                return Err(Error::invalid("eps must be positive"));
            }
            let e = re::<T>(e);
            let mut a = BlockOperator::identity(state.partition(), state.n()).scaled(T::one() / (T::one() + e));
            a.axpy(e / (T::one() + e), r);
            a
        }
    };
    let next = state.sandwich(&a).hermitized();
    let t = next.trace();
    if !(f64_of(t) > 1e-300) {
        return Err(Error::numerical("trace collapsed in RρR step"));
    }
    Ok(next.scaled(T::one() / t))
}

/// Full reconstruction from the maximally mixed state.
pub fn reconstruct<T: Real>(context: &MeasurementContext<T>, data: &Dataset, params: &ReconstructionParams) -> Result<ReconstructionReport<T>> {
    reconstruct_from(context, data, params, None)
}

/// Reconstruction from an optional initial state.
///
/// RρR steps run until the per-sample increase of `ℒ` drops below `ΔL` or
/// a step would lower `ℒ` (that step is discarded). Diluted steps then
/// start at `eps_start`; `ε` shrinks by `eps_decay` whenever a step stalls
/// or would lower `ℒ`. Iteration stops when `r_k ≤ r`, `ε ≤ eps_floor`, or
/// after `max_iter` steps.
pub fn reconstruct_from<T: Real>(
    context: &MeasurementContext<T>,
    data: &Dataset,
    params: &ReconstructionParams,
    init: Option<&BlockOperator<T>>,
) -> Result<ReconstructionReport<T>> {
    params.validate()?;
    let prob = Problem::new(context, data)?;
    let mut warnings = Vec::new();
    if params.check_ic {
        let ic = ic_check(&context.povms)?;
        if !ic.is_ic {
            warnings.push(format!(
                "context is not informationally complete (rank {} of {}); the estimate is not unique",
                ic.rank, ic.required
            ));
        }
    }
    let mut rho = match init {
        Some(s) => {
            s.check_same(&prob.template)?;
            s.validate_state()?;
            s.clone()
        }
        None => BlockOperator::maximally_mixed(&context.partition, context.n),
    };
    let m_total = f64_of(prob.total);
    let r_stop = params.r_stop.unwrap_or(1.0 / m_total);
    let mut probs = prob.probs(&rho);
    let mut ll = prob.loglik(&probs);
    let mut r = prob.r_operator(&probs)?;
    let mut rk = f64_of(r_bound(&r));
    let mut loglik_trace = vec![f64_of(ll)];
    let mut rk_trace = vec![rk];
    let mut eps: Option<f64> = None;
    let mut iterations = 0;
    let termination = loop {
        if rk <= r_stop {
            break Termination::StoppedOnR;
        }
        if iterations >= params.max_iter {
            break Termination::MaxIter;
        }
        iterations += 1;
        let cand = diluted_step(&rho, &r, eps)?;
        let cprobs = prob.probs(&cand);
        let cll = prob.loglik(&cprobs);
        let gain = f64_of(cll - ll) / m_total;
        if gain < 0.0 {
            eps = Some(match eps {
                None => params.eps_start,
                Some(e) => e * params.eps_decay,
            });
        } else {
            rho = cand;
            probs = cprobs;
            ll = cll;
            r = prob.r_operator(&probs)?;
            rk = f64_of(r_bound(&r));
            loglik_trace.push(f64_of(ll));
            rk_trace.push(rk);
            if gain < params.delta_l {
                eps = Some(match eps {
                    None => params.eps_start,
                    Some(e) => e * params.eps_decay,
                });
            }
        }
        if let Some(e) = eps {
            if e <= params.eps_floor && rk > r_stop {
                break Termination::EpsExhausted;
            }
        }
    };
    Ok(ReconstructionReport {
        estimate: rho,
        loglik_trace,
        rk_trace,
        termination,
        iterations,
        final_eps: eps,
        warnings,
        fidelity: None,
    })
}

/// Max-norm of `R̂ ρ R̂ − ρ`.
pub fn fixed_point_residual<T: Real>(state: &BlockOperator<T>, r: &BlockOperator<T>) -> f64 {
    let next = state.sandwich(r);
    f64_of(next.max_abs_diff(state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::fidelity;
    use crate::optics::PartitionSpec;
    use crate::povm::{CounterConfig, Count, Outcome, Povm, PovmElement};
    use crate::sim::{expected_dataset, simulate_dataset, SettingCounts};
    use num_complex::Complex64;

    fn polar(r: f64, th: f64) -> Complex64 {
        Complex64::from_polar(r, th)
    }

    fn context(n: usize) -> MeasurementContext<f64> {
        let p = PartitionSpec::balanced(true);
        let gammas: Vec<Complex64> = (0..(n + 1) * (n + 1)).map(|i| polar(0.4 + 0.25 * i as f64, 0.7 * i as f64)).collect();
        MeasurementContext::uniform(&p, n, &gammas, &CounterConfig::two(n + 3)).unwrap()
    }

    fn some_state(n: usize) -> BlockOperator<f64> {
        let p = PartitionSpec::balanced(true);
        let mut s = BlockOperator::<f64>::zeros(&p, n);
        for (bi, b) in s.blocks_mut().iter_mut().enumerate() {
            let d = b.nrows();
            let v = DVector::from_fn(d, |x, _| C::new(1.0 / (1.0 + x as f64 + bi as f64), 0.3 * x as f64));
            *b = &v * v.adjoint() + DMatrix::identity(d, d) * C::new(0.05, 0.0);
        }
        let t = s.trace();
        s.scaled(1.0 / t)
    }

    fn two_outcome_context() -> (MeasurementContext<f64>, Dataset) {
        let p = PartitionSpec::balanced(true);
        let half = BlockOperator::<f64>::identity(&p, 0).scaled(0.5);
        let g = Complex64::new(0.0, 0.0);
        let povm = Povm {
            gamma: g,
            tail_bound: 0.0,
            elements: vec![
                PovmElement { outcome: Outcome::Single(Count::N(0)), op: half.clone(), gamma: g },
                PovmElement { outcome: Outcome::Single(Count::Over), op: half, gamma: g },
            ],
        };
        let ctx = MeasurementContext { partition: p, n: 0, settings: vec![], povms: vec![povm] };
        let data = Dataset {
            settings: vec![SettingCounts {
                gamma: g,
                counts: vec![(Outcome::Single(Count::N(0)), 3.0), (Outcome::Single(Count::Over), 1.0)],
            }],
            seed: None,
        };
        (ctx, data)
    }

    #[test]
    fn loglik_examples() {
        let (ctx, data) = two_outcome_context();
        let rho = BlockOperator::maximally_mixed(&ctx.partition, 0);
        assert!((log_likelihood(&rho, &ctx, &data).unwrap() - 4.0 * 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn exact_frequencies_are_a_fixed_point() {
        let ctx = context(2);
        let truth = some_state(2);
        let data = expected_dataset(&truth, &ctx, &vec![1000.0; ctx.povms.len()]).unwrap();
        let r = r_operator(&truth, &ctx, &data).unwrap();
        assert!(r.max_abs_diff(&BlockOperator::identity(&ctx.partition, 2)) < 1e-10);
        assert!(r_bound(&r).abs() < 1e-9);
        let next = diluted_step(&truth, &r, None).unwrap();
        assert!(next.max_abs_diff(&truth) < 1e-10);
        let rep = reconstruct_from(&ctx, &data, &ReconstructionParams::default(), Some(&truth)).unwrap();
        assert_eq!(rep.termination, Termination::StoppedOnR);
        assert_eq!(rep.iterations, 0);
        assert!(fidelity(&rep.estimate, &truth).unwrap() > 1.0 - 1e-6);
    }

    #[test]
    fn reconstruction_from_mixed_reaches_truth() {
        let ctx = context(2);
        let truth = some_state(2);
        let data = expected_dataset(&truth, &ctx, &vec![1000.0; ctx.povms.len()]).unwrap();
        let params = ReconstructionParams { r_stop: Some(1e-10), ..Default::default() };
        let rep = reconstruct(&ctx, &data, &params).unwrap();
        assert!(rep.warnings.is_empty());
        assert!(fidelity(&rep.estimate, &truth).unwrap() > 1.0 - 1e-6, "{:?}", rep.termination);
    }

    #[test]
    fn iterates_stay_valid_and_likelihood_rises() {
        let ctx = context(2);
        let truth = some_state(2);
        let data = simulate_dataset(&truth, &ctx, &vec![2000; ctx.povms.len()], 5).unwrap();
        let params = ReconstructionParams { delta_l: 1e-9, r_stop: Some(0.0), max_iter: 3000, ..Default::default() };
        let rep = reconstruct(&ctx, &data, &params).unwrap();
        rep.estimate.validate_state().unwrap();
        for w in rep.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10 * w[0].abs());
        }
        for &rk in &rep.rk_trace {
            assert!(rk >= -1e-12);
        }
        let m = data.total();
        // ℒ_max − ℒ_k ≤ M r_k against the best value reached.
        let best = rep.final_loglik();
        for (l, r) in rep.loglik_trace.iter().zip(&rep.rk_trace) {
            assert!(best - l <= m * r + 1e-6);
        }
    }

    #[test]
    fn small_eps_never_decreases_likelihood() {
        let ctx = context(1);
        let truth = some_state(1);
        let data = simulate_dataset(&truth, &ctx, &vec![300; ctx.povms.len()], 9).unwrap();
        let mut rho = BlockOperator::maximally_mixed(&ctx.partition, 1);
        for _ in 0..50 {
            let l0 = log_likelihood(&rho, &ctx, &data).unwrap();
            let r = r_operator(&rho, &ctx, &data).unwrap();
            let next = diluted_step(&rho, &r, Some(1e-3)).unwrap();
            let l1 = log_likelihood(&next, &ctx, &data).unwrap();
            assert!(l1 >= l0 - 1e-10);
            rho = next;
        }
    }

    #[test]
    fn non_ic_context_warns() {
        let p = PartitionSpec::balanced(true);
        let ctx = MeasurementContext::<f64>::uniform(&p, 2, &[polar(0.7, 0.0)], &CounterConfig::two(4)).unwrap();
        let truth = BlockOperator::maximally_mixed(&p, 2);
        let data = simulate_dataset(&truth, &ctx, &[500], 1).unwrap();
        let rep = reconstruct(&ctx, &data, &ReconstructionParams::default()).unwrap();
        assert_eq!(rep.warnings.len(), 1);
    }

    #[test]
    fn zero_probability_with_counts_is_an_error() {
        let (ctx, mut data) = two_outcome_context();
        let mut bad = ctx.clone();
        bad.povms[0].elements[0].op = BlockOperator::identity(&ctx.partition, 0);
        bad.povms[0].elements[1].op = BlockOperator::zeros(&ctx.partition, 0);
        let rho = BlockOperator::maximally_mixed(&ctx.partition, 0);
        assert_eq!(log_likelihood(&rho, &bad, &data).unwrap(), f64::NEG_INFINITY);
        assert!(r_operator(&rho, &bad, &data).is_err());
        data.settings[0].counts[1].1 = 0.0;
        assert!(r_operator(&rho, &bad, &data).is_ok());
    }

    #[test]
    fn params_json() {
        let p: ReconstructionParams = serde_json::from_str(r#"{"delta_l": 1e-8}"#).unwrap();
        assert_eq!(p.eps_start, 1e30);
        assert_eq!(p.r_stop, None);
        assert!(serde_json::from_str::<ReconstructionParams>(r#"{"eps_decay": 2.0}"#).unwrap().validate().is_err());
    }
}
