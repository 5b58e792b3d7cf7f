//! Probe-set design through bivariate interpolation matrices, and the
//! determinability decision table.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::rng::{rng_from_seed, uniform};
use crate::{Error, Result};

/// Distinct probe amplitudes for states with at most `n` photons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    #[serde(with = "crate::serde_complex::vec")]
    pub gammas: Vec<Complex64>,
    #[serde(rename = "N")]
    pub n: usize,
}

impl ProbeSet {
    pub fn new(gammas: Vec<Complex64>, n: usize) -> Result<Self> {
        if gammas.is_empty() {
            return Err(Error::invalid("probe set is empty"));
        }
        for i in 0..gammas.len() {
            for j in 0..i {
                if (gammas[i] - gammas[j]).norm() <= 1e-9 {
                    return Err(Error::invalid(format!("probes {j} and {i} coincide")));
                }
            }
        }
        Ok(ProbeSet { gammas, n })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpolationForm {
    /// Monomials `(γ̄)^m γ^n`.
    Complex,
    /// Monomials `x^n y^m` with `γ = x + iy`.
    Real,
}

/// `|Γ| × (N+1)²` matrix; column `m(N+1) + n` holds `(γ̄)^m γ^n` (complex
/// form) or `x^n y^m` (real form) evaluated at each probe.
pub fn interpolation_matrix(probes: &ProbeSet, form: InterpolationForm) -> DMatrix<Complex64> {
    let side = probes.n + 1;
    DMatrix::from_fn(probes.gammas.len(), side * side, |i, c| {
        let (m, n) = (c / side, c % side);
        let g = probes.gammas[i];
        match form {
            InterpolationForm::Complex => g.conj().powu(m as u32) * g.powu(n as u32),
            InterpolationForm::Real => Complex64::new(g.re.powi(n as i32) * g.im.powi(m as i32), 0.0),
        }
    })
}

pub fn interpolation_rank(probes: &ProbeSet, form: InterpolationForm) -> usize {
    linalg::rank(&interpolation_matrix(probes, form), crate::povm::RANK_TOL)
}

/// Output of [`design_gamma`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub probes: ProbeSet,
    /// Attempt that succeeded, counting from 1.
    pub attempts: usize,
    pub rank: usize,
}

/// `(N+1)²` probes with magnitudes in `[0.3, 3]` and phases in `[0, π]`,
/// redrawn until the complex interpolation matrix has full rank.
pub fn design_gamma(n: usize, seed: u64, max_tries: usize) -> Result<Design> {
    let size = (n + 1) * (n + 1);
    let mut rng = rng_from_seed(seed);
    for attempt in 1..=max_tries {
        let gammas: Vec<Complex64> = (0..size)
            .map(|_| {
                let r = 0.3 + 2.7 * uniform(&mut rng);
                let th = std::f64::consts::PI * uniform(&mut rng);
                Complex64::from_polar(r, th)
            })
            .collect();
        let Ok(probes) = ProbeSet::new(gammas, n) else { continue };
        let rank = interpolation_rank(&probes, InterpolationForm::Complex);
        if rank == size {
            return Ok(Design { probes, attempts: attempt, rank });
        }
    }
    Err(Error::numerical(format!("no full-rank probe set of size {size} in {max_tries} attempts")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeFreedom {
    Full,
    FixedMagnitude,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    Counting,
    Click,
}

/// A measurement configuration for [`feasibility`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Configuration {
    #[serde(rename = "K")]
    pub k: usize,
    pub s1_multi: bool,
    pub counters: u8,
    pub probe_freedom: ProbeFreedom,
    pub detector: Detector,
    pub bs_balanced: bool,
    #[serde(rename = "N")]
    pub n: usize,
}

/// Whether the twirled state is fixed by the statistics.
///
/// `established = false` marks configurations that no result settles,
/// directly or through the monotonicity rules below; `determinable` is then
/// `false` as well.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub determinable: bool,
    pub established: bool,
    pub theorem: String,
    pub notes: String,
}

pub const THM_TRIVIAL: &str = "N = 0: only the vacuum block exists";
pub const THM_TWO_MULTI: &str = "two counters, S1 > 1: determinable iff K <= 2";
pub const THM_TWO_SINGLE: &str = "two counters, S1 = 1: determinable iff K <= 3";
pub const THM_ONE_MULTI: &str = "one counter, S1 > 1: determinable iff K = 1";
pub const THM_ONE_SINGLE: &str = "one counter, S1 = 1: determinable iff K <= 2";
pub const THM_FIXED_ONE: &str = "fixed probe magnitude, one counter, K = 1, S1 > 1: determinable iff N <= 1";
pub const THM_FIXED_TWO: &str = "fixed probe magnitude, two counters, K = 1, S1 > 1: determinable";
pub const THM_CLICK: &str = "two click detectors, K = 1, S1 > 1: determinable iff N <= 2 (unbalanced) or N <= 1 (balanced)";

/// Theorem verdict for a configuration covered directly.
fn direct(c: &Configuration) -> Option<(bool, &'static str)> {
    if c.n == 0 {
        return Some((true, THM_TRIVIAL));
    }
    match (c.detector, c.probe_freedom, c.counters, c.s1_multi) {
        (Detector::Counting, ProbeFreedom::Full, 2, true) => Some((c.k <= 2, THM_TWO_MULTI)),
        (Detector::Counting, ProbeFreedom::Full, 2, false) => Some((c.k <= 3, THM_TWO_SINGLE)),
        (Detector::Counting, ProbeFreedom::Full, 1, true) => Some((c.k == 1, THM_ONE_MULTI)),
        (Detector::Counting, ProbeFreedom::Full, 1, false) => Some((c.k <= 2, THM_ONE_SINGLE)),
        (Detector::Counting, ProbeFreedom::FixedMagnitude, 1, true) if c.k == 1 => Some((c.n <= 1, THM_FIXED_ONE)),
        (Detector::Counting, ProbeFreedom::FixedMagnitude, 2, true) if c.k == 1 => Some((true, THM_FIXED_TWO)),
        (Detector::Click, ProbeFreedom::Full, 2, true) if c.k == 1 => {
            Some((c.n <= if c.bs_balanced { 1 } else { 2 }, THM_CLICK))
        }
        _ => None,
    }
}

/// Configurations whose data is a superset (`richer`) of `c`'s, or whose
/// state family contains `c`'s (`larger`), one step away.
fn neighbours(c: &Configuration) -> (Vec<Configuration>, Vec<Configuration>) {
    let mut richer = Vec::new();
    let mut poorer = Vec::new();
    if c.counters == 1 {
        richer.push(Configuration { counters: 2, ..*c });
    } else {
        poorer.push(Configuration { counters: 1, ..*c });
    }
    match c.probe_freedom {
        ProbeFreedom::FixedMagnitude => richer.push(Configuration { probe_freedom: ProbeFreedom::Full, ..*c }),
        ProbeFreedom::Full => poorer.push(Configuration { probe_freedom: ProbeFreedom::FixedMagnitude, ..*c }),
    }
    match c.detector {
        Detector::Click => richer.push(Configuration { detector: Detector::Counting, ..*c }),
        Detector::Counting => poorer.push(Configuration { detector: Detector::Click, ..*c }),
    }
    (richer, poorer)
}

/// State families containing `c`'s: one more sector, extra modes in sector 1,
/// or a higher photon cutoff.
fn larger_families(c: &Configuration, k_cap: usize, n_cap: usize) -> Vec<Configuration> {
    let mut v = Vec::new();
    if c.k < k_cap {
        v.push(Configuration { k: c.k + 1, ..*c });
    }
    if !c.s1_multi {
        v.push(Configuration { s1_multi: true, ..*c });
    }
    if c.n < n_cap {
        v.push(Configuration { n: c.n + 1, ..*c });
    }
    v
}

fn smaller_families(c: &Configuration) -> Vec<Configuration> {
    let mut v = Vec::new();
    if c.k > 1 {
        v.push(Configuration { k: c.k - 1, ..*c });
    }
    if c.s1_multi {
        v.push(Configuration { s1_multi: false, ..*c });
    }
    if c.n > 0 {
        v.push(Configuration { n: c.n - 1, ..*c });
    }
    v
}

/// Breadth-first search for a settled configuration that implies `want` for
/// `c`.
fn derive(c: &Configuration, want: bool) -> Option<(Configuration, &'static str)> {
    use std::collections::{HashSet, VecDeque};
    let k_cap = c.k + 4;
    let n_cap = c.n + 4;
    let mut seen = HashSet::new();
    let mut queue = VecDeque::new();
    queue.push_back(*c);
    seen.insert(*c);
    while let Some(x) = queue.pop_front() {
        if x != *c {
            if let Some((v, thm)) = direct(&x) {
                if v == want {
                    return Some((x, thm));
                }
            }
        }
        // A positive transfers from poorer data and larger families; a
        // negative from richer data and smaller families.
        let (richer, poorer) = neighbours(&x);
        let next: Vec<Configuration> = if want {
            poorer.into_iter().chain(larger_families(&x, k_cap, n_cap)).collect()
        } else {
            richer.into_iter().chain(smaller_families(&x)).collect()
        };
        for y in next {
            if seen.insert(y) {
                queue.push_back(y);
            }
        }
    }
    None
}

fn describe(c: &Configuration) -> String {
    format!(
        "K={} {} {} {}, {} probes, N={}",
        c.k,
        if c.s1_multi { "S1>1" } else { "S1=1" },
        c.counters,
        match c.detector {
            Detector::Counting => "counter(s)",
            Detector::Click => "click detector(s)",
        },
        match c.probe_freedom {
            ProbeFreedom::Full => "free",
            ProbeFreedom::FixedMagnitude => "fixed-magnitude",
        },
        c.n
    )
}

/// Number of real parameters of a twirled state: `Σ dim²` over blocks.
pub fn state_parameters(k: usize, s1_multi: bool, n: usize) -> usize {
    let len = if s1_multi { k } else { k - 1 };
    crate::twirl::sector_tuples(len, n)
        .iter()
        .map(|t| {
            let d = n - t.iter().sum::<u32>() as usize + 1;
            d * d
        })
        .sum()
}

/// Decision table for determinability of the twirled state.
pub fn feasibility(c: &Configuration) -> Result<Verdict> {
    if c.k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if !(1..=2).contains(&c.counters) {
        return Err(Error::invalid("counters must be 1 or 2"));
    }
    let mut notes = Vec::new();
    let (determinable, established, theorem) = if let Some((v, thm)) = direct(c) {
        (v, true, thm.to_string())
    } else if let Some((src, thm)) = derive(c, true) {
        notes.push(format!("follows from the result for {} (less data or a larger state family)", describe(&src)));
        (true, true, thm.to_string())
    } else if let Some((src, thm)) = derive(c, false) {
        notes.push(format!("follows from the result for {} (more data or a smaller state family)", describe(&src)));
        (false, true, thm.to_string())
    } else {
        notes.push("no result covers this configuration; reported as not determinable".to_string());
        (false, false, "open: not covered".to_string())
    };
    if determinable && c.n > 0 {
        let p = state_parameters(c.k, c.s1_multi, c.n);
        if c.probe_freedom == ProbeFreedom::Full && c.detector == Detector::Counting {
            notes.push(format!(
                "(N+1)^2 = {} probe amplitudes with an invertible interpolation matrix suffice (sufficient, not necessary)",
                (c.n + 1) * (c.n + 1)
            ));
        }
        notes.push(format!(
            "the state has {p} real parameters, so {} probabilities besides normalization are needed",
            p - 1
        ));
    }
    Ok(Verdict { determinable, established, theorem, notes: notes.join("; ") })
}

/// Every configuration with `K ≤ k_max`, `N ≤ n_max`, in a fixed order.
pub fn truth_table(k_max: usize, n_max: usize) -> Vec<(Configuration, Verdict)> {
    let mut out = Vec::new();
    for k in 1..=k_max {
        for s1_multi in [false, true] {
            for counters in [1u8, 2] {
                for probe_freedom in [ProbeFreedom::Full, ProbeFreedom::FixedMagnitude] {
                    for detector in [Detector::Counting, Detector::Click] {
                        for bs_balanced in [false, true] {
                            for n in 0..=n_max {
                                let c = Configuration { k, s1_multi, counters, probe_freedom, detector, bs_balanced, n };
                                let v = feasibility(&c).expect("valid configuration");
                                out.push((c, v));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
