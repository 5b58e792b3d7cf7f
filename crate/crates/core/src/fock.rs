//! Truncated multimode Fock spaces, dense operators on them, the canonical
//! input states and fidelity.

use std::collections::HashMap;
use std::ops::Range;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, cr, CMat};
use crate::{f64_of, re, Error, Real, Result, C};

/// Occupation tuples `(n_1, …, n_S)` with `Σ n_i ≤ cutoff`, in graded-lex
/// order: smaller totals first, lexicographic within a total.
#[derive(Clone, Debug)]
pub struct OccupationBasis {
    num_modes: usize,
    cutoff: usize,
    states: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
    offsets: Vec<usize>,
}

impl PartialEq for OccupationBasis {
    fn eq(&self, other: &Self) -> bool {
        self.num_modes == other.num_modes && self.cutoff == other.cutoff
    }
}

fn compositions(total: u32, parts: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if parts == 1 {
        prefix.push(total);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for first in 0..=total {
        prefix.push(first);
        compositions(total - first, parts - 1, prefix, out);
        prefix.pop();
    }
}

/// All occupations of `num_modes` modes with at most `cutoff` photons.
pub fn enumerate_basis(num_modes: usize, cutoff: usize) -> Result<OccupationBasis> {
    if num_modes == 0 {
        return Err(Error::invalid("a Fock basis needs at least one mode"));
    }
    let mut states = Vec::new();
    let mut offsets = vec![0];
    for t in 0..=cutoff {
        compositions(t as u32, num_modes, &mut Vec::with_capacity(num_modes), &mut states);
        offsets.push(states.len());
    }
    let index = states
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect();
    Ok(OccupationBasis {
        num_modes,
        cutoff,
        states,
        index,
        offsets,
    })
}

impl OccupationBasis {
    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Vec<u32>] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &[u32] {
        &self.states[i]
    }

    pub fn index_of(&self, occ: &[u32]) -> Option<usize> {
        self.index.get(occ).copied()
    }

    pub fn total(&self, i: usize) -> usize {
        self.states[i].iter().sum::<u32>() as usize
    }

    /// Indices of the states with exactly `total` photons.
    pub fn shell(&self, total: usize) -> Range<usize> {
        self.offsets[total]..self.offsets[total + 1]
    }
}

/// Dense matrix on a truncated Fock space.
#[derive(Clone, Debug)]
pub struct DenseOperator<T: Real> {
    pub basis: OccupationBasis,
    pub entries: CMat<T>,
}

impl<T: Real> DenseOperator<T> {
    pub fn new(basis: OccupationBasis, entries: CMat<T>) -> Result<Self> {
        if entries.nrows() != basis.len() || entries.ncols() != basis.len() {
            return Err(Error::dimension(format!(
                "operator is {}x{}, basis has {} states",
                entries.nrows(),
                entries.ncols(),
                basis.len()
            )));
        }
        Ok(DenseOperator { basis, entries })
    }

    pub fn identity(basis: &OccupationBasis) -> Self {
        DenseOperator {
            entries: linalg::identity(basis.len()),
            basis: basis.clone(),
        }
    }

    pub fn zeros(basis: &OccupationBasis) -> Self {
        DenseOperator {
            entries: CMat::zeros(basis.len(), basis.len()),
            basis: basis.clone(),
        }
    }

    /// `|ψ⟩⟨ψ|`.
    pub fn from_pure(basis: &OccupationBasis, psi: &DVector<C<T>>) -> Result<Self> {
        if psi.len() != basis.len() {
            return Err(Error::dimension("state vector length differs from basis size"));
        }
        Self::new(basis.clone(), psi * psi.adjoint())
    }

    /// Diagonal operator with entries `f(occupation)`.
    pub fn diagonal(basis: &OccupationBasis, f: impl Fn(&[u32]) -> T) -> Self {
        let mut m = CMat::zeros(basis.len(), basis.len());
        for i in 0..basis.len() {
            m[(i, i)] = cr(f(basis.state(i)));
        }
        DenseOperator {
            basis: basis.clone(),
            entries: m,
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn trace(&self) -> T {
        linalg::trace_re(&self.entries)
    }

    /// `Re tr(self · other)`.
    pub fn expectation(&self, other: &Self) -> Result<T> {
        self.check_same(other)?;
        Ok(linalg::trace_prod_re(&self.entries, &other.entries))
    }

    pub fn check_same(&self, other: &Self) -> Result<()> {
        if self.basis != other.basis {
            return Err(Error::dimension(format!(
                "operators live on ({} modes, N={}) and ({} modes, N={})",
                self.basis.num_modes(),
                self.basis.cutoff(),
                other.basis.num_modes(),
                other.basis.cutoff()
            )));
        }
        Ok(())
    }

    /// Weight outside total photon number `n`.
    pub fn weight_above(&self, n: usize) -> T {
        let mut w = T::zero();
        for i in 0..self.dim() {
            if self.basis.total(i) > n {
                w += self.entries[(i, i)].re;
            }
        }
        w
    }

    /// Copy into a basis with the same number of modes and a different
    /// cutoff; entries outside the target are dropped.
    pub fn recut(&self, target: &OccupationBasis) -> Result<Self> {
        if target.num_modes() != self.basis.num_modes() {
            return Err(Error::dimension("recut requires the same number of modes"));
        }
        let map: Vec<Option<usize>> = (0..self.dim())
            .map(|i| target.index_of(self.basis.state(i)))
            .collect();
        let mut out = CMat::zeros(target.len(), target.len());
        for i in 0..self.dim() {
            let Some(ti) = map[i] else { continue };
            for j in 0..self.dim() {
                if let Some(tj) = map[j] {
                    out[(ti, tj)] = self.entries[(i, j)];
                }
            }
        }
        Ok(DenseOperator {
            basis: target.clone(),
            entries: out,
        })
    }
}

/// Embed a vector into a larger-cutoff basis with the same number of modes.
pub fn embed_vector<T: Real>(
    from: &OccupationBasis,
    to: &OccupationBasis,
    v: &DVector<C<T>>,
) -> Result<DVector<C<T>>> {
    if from.num_modes() != to.num_modes() {
        return Err(Error::dimension("embedding requires the same number of modes"));
    }
    let mut out = DVector::zeros(to.len());
    for i in 0..from.len() {
        if let Some(j) = to.index_of(from.state(i)) {
            out[j] = v[i];
        } else if v[i].norm_sqr() > T::zero() {
            return Err(Error::dimension("target cutoff too small for embedding"));
        }
    }
    Ok(out)
}

/// Annihilation operator of `mode`, truncated to the basis.
pub fn annihilation<T: Real>(basis: &OccupationBasis, mode: usize) -> DenseOperator<T> {
    let mut m = CMat::zeros(basis.len(), basis.len());
    for j in 0..basis.len() {
        let occ = basis.state(j);
        let n = occ[mode];
        if n == 0 {
            continue;
        }
        let mut lowered = occ.to_vec();
        lowered[mode] -= 1;
        let i = basis.index_of(&lowered).expect("lowered state is in the basis");
        m[(i, j)] = cr(re::<T>(n as f64).sqrt());
    }
    DenseOperator {
        basis: basis.clone(),
        entries: m,
    }
}

/// Creation operator of `mode`, truncated to the basis.
pub fn creation<T: Real>(basis: &OccupationBasis, mode: usize) -> DenseOperator<T> {
    let a = annihilation::<T>(basis, mode);
    DenseOperator {
        basis: a.basis,
        entries: a.entries.adjoint(),
    }
}

/// Total photon-number operator.
pub fn total_number<T: Real>(basis: &OccupationBasis) -> DenseOperator<T> {
    DenseOperator::diagonal(basis, |occ| re(occ.iter().sum::<u32>() as f64))
}

/// Input-state families used throughout the tests and the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StateSpec {
    /// Single-mode coherent state `|α⟩`.
    Coherent {
        #[serde(with = "crate::serde_complex")]
        alpha: Complex64,
        #[serde(rename = "N")]
        n: usize,
    },
    /// Two-mode squeezed vacuum `(1/cosh r) Σ (−e^{iφ} tanh r)^n |n,n⟩`.
    Tmsv {
        r: f64,
        #[serde(default)]
        phi: f64,
        #[serde(rename = "N")]
        n: usize,
    },
    /// Two-mode cat `∝ |α,−α⟩ − |−α,α⟩`.
    Cat {
        #[serde(with = "crate::serde_complex")]
        alpha: Complex64,
        #[serde(rename = "N")]
        n: usize,
    },
}

impl StateSpec {
    /// Truncation photon number (total over all modes).
    pub fn n(&self) -> usize {
        match *self {
            StateSpec::Coherent { n, .. } | StateSpec::Tmsv { n, .. } | StateSpec::Cat { n, .. } => n,
        }
    }

    pub fn num_modes(&self) -> usize {
        match self {
            StateSpec::Coherent { .. } => 1,
            _ => 2,
        }
    }

    /// Same family and parameters at another truncation.
    pub fn with_n(&self, n: usize) -> Self {
        let mut s = self.clone();
        match &mut s {
            StateSpec::Coherent { n: m, .. } | StateSpec::Tmsv { n: m, .. } | StateSpec::Cat { n: m, .. } => *m = n,
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StateSpec::Tmsv { r, phi, .. } => {
                if !(r >= 0.0) || !r.is_finite() || !phi.is_finite() {
                    return Err(Error::invalid(format!("squeezing r must be finite and >= 0, got {r}")));
                }
            }
            StateSpec::Coherent { alpha, .. } | StateSpec::Cat { alpha, .. } => {
                if !alpha.re.is_finite() || !alpha.im.is_finite() {
                    return Err(Error::invalid("amplitude must be finite"));
                }
            }
        }
        Ok(())
    }
}

fn normalized<T: Real>(mut v: DVector<C<T>>) -> Result<DVector<C<T>>> {
    let norm = v.norm();
    if !(norm > T::zero()) {
        return Err(Error::domain("state has no support below the cutoff"));
    }
    v.unscale_mut(norm);
    Ok(v)
}

/// Truncated, renormalized state vector and its basis.
///
/// Coherent states live on one mode, TMSV and cat states on two; the cutoff
/// bounds the total photon number. The cat normalization is taken from the
/// truncated vector itself.
pub fn make_state<T: Real>(spec: &StateSpec) -> Result<(OccupationBasis, DVector<C<T>>)> {
    spec.validate()?;
    match *spec {
        StateSpec::Coherent { alpha, n } => {
            let basis = enumerate_basis(1, n)?;
            let a = C::new(re::<T>(alpha.re), re::<T>(alpha.im));
            let mut v = DVector::zeros(basis.len());
            for k in 0..=n {
                v[k] = linalg::cpowi(a, k).unscale(linalg::sqrt_factorial::<T>(k));
            }
            Ok((basis, normalized(v)?))
        }
        StateSpec::Tmsv { r, phi, n } => {
            let basis = enumerate_basis(2, n)?;
            let q = C::new(re::<T>(r.tanh() * phi.cos()), re::<T>(r.tanh() * phi.sin())) * cr(-T::one());
            let mut v = DVector::zeros(basis.len());
            for k in 0..=(n / 2) as u32 {
                let i = basis.index_of(&[k, k]).unwrap();
                v[i] = linalg::cpowi(q, k as usize);
            }
            Ok((basis, normalized(v)?))
        }
        StateSpec::Cat { alpha, n } => {
            if alpha.norm() == 0.0 {
                return Err(Error::domain("a cat state needs a nonzero amplitude"));
            }
            let basis = enumerate_basis(2, n)?;
            let a = C::new(re::<T>(alpha.re), re::<T>(alpha.im));
            let mut v = DVector::zeros(basis.len());
            for i in 0..basis.len() {
                let (p, q) = (basis.state(i)[0] as usize, basis.state(i)[1] as usize);
                let sign = match (p % 2, q % 2) {
                    (0, 1) => -2.0,
                    (1, 0) => 2.0,
                    _ => 0.0,
                };
                if sign == 0.0 {
                    continue;
                }
                let mag = linalg::sqrt_factorial::<T>(p) * linalg::sqrt_factorial::<T>(q);
                v[i] = linalg::cpowi(a, p + q).unscale(mag) * cr(re::<T>(sign));
            }
            Ok((basis, normalized(v)?))
        }
    }
}

/// Fidelity between the untruncated state and its truncation, from the
/// closed forms:
///
/// * coherent: `e^{−|α|²} Σ_{n≤N} |α|^{2n}/n!`
/// * TMSV: `Σ_{i≤⌊N/2⌋} tanh^{2i} r / cosh² r`
/// * cat: `Σ_{s odd, s≤N} y^s/s! / sinh y` with `y = 2|α|²`
pub fn truncation_fidelity(spec: &StateSpec) -> Result<f64> {
    spec.validate()?;
    Ok(match *spec {
        StateSpec::Coherent { alpha, n } => {
            let x = alpha.norm_sqr();
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 1..=n {
                term *= x / k as f64;
                sum += term;
            }
            (sum * (-x).exp()).min(1.0)
        }
        StateSpec::Tmsv { r, n, .. } => {
            let t2 = r.tanh().powi(2);
            let sum: f64 = (0..=n / 2).map(|i| t2.powi(i as i32)).sum();
            (sum / r.cosh().powi(2)).min(1.0)
        }
        StateSpec::Cat { alpha, n } => {
            // Numerator and sinh y both divided by y so that α → 0 is finite.
            let y = 2.0 * alpha.norm_sqr();
            let mut term = 1.0;
            let mut num = 0.0;
            for s in 1..=n {
                if s > 1 {
                    term *= y / s as f64;
                }
                if s % 2 == 1 {
                    num += term;
                }
            }
            let sinh_over_y = if y < 1e-8 { 1.0 + y * y / 6.0 } else { y.sinh() / y };
            (num / sinh_over_y).min(1.0)
        }
    })
}

/// States that admit a fidelity.
pub trait StateFidelity {
    type Scalar;
    fn fidelity_with(&self, other: &Self) -> Result<Self::Scalar>;
}

impl<T: Real> StateFidelity for DenseOperator<T> {
    type Scalar = T;
    fn fidelity_with(&self, other: &Self) -> Result<T> {
        self.check_same(other)?;
        let f = linalg::root_fidelity(&self.entries, &other.entries);
        Ok((f * f).min(T::one()))
    }
}

/// `(tr √(√ρ₁ ρ₂ √ρ₁))²`, spectra clamped at zero.
pub fn fidelity<S: StateFidelity>(a: &S, b: &S) -> Result<S::Scalar> {
    a.fidelity_with(b)
}

/// `|⟨ψ|φ⟩|²` for normalized vectors.
pub fn pure_fidelity<T: Real>(psi: &DVector<C<T>>, phi: &DVector<C<T>>) -> T {
    psi.dotc(phi).norm_sqr()
}

#[doc(hidden)]
pub fn to_f64_vec<T: Real>(v: &DVector<C<T>>) -> Vec<Complex64> {
    v.iter().map(|z| Complex64::new(f64_of(z.re), f64_of(z.im))).collect()
}
