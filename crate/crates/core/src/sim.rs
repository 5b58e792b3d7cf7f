//! Born-rule probabilities, the dense Fock-space oracle and seeded datasets.

use std::collections::HashMap;
use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::fock::{enumerate_basis, DenseOperator};
use crate::linalg::{self, CMat};
use crate::optics::{plt_on_fock, ModeMatrix, PartitionSpec};
use crate::povm::{MeasurementContext, Outcome, Povm};
use crate::rng::{derive_seed, rng_from_seed, uniform};
use crate::twirl::BlockOperator;
use crate::{f64_of, re, Error, Real, Result, C};

/// Born probabilities of every element, in element order. Values down to
/// `−1e-12` are clamped to zero.
pub fn probabilities<T: Real>(state: &BlockOperator<T>, povm: &Povm<T>) -> Result<Vec<f64>> {
    let raw = povm.probabilities(state)?;
    let mut out = Vec::with_capacity(raw.len());
    for (p, e) in raw.into_iter().zip(&povm.elements) {
        let p = f64_of(p);
        if p < -1e-9 {
            return Err(Error::numerical(format!("negative probability {p:.3e} for outcome {}", e.outcome)));
        }
        out.push(p.max(0.0));
    }
    let s: f64 = out.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::numerical(format!("probabilities sum to {s}")));
    }
    Ok(out)
}

/// Default joint cutoff `N + ⌈|γ|² + 6|γ| + 6⌉`.
pub fn default_joint_cutoff(n: usize, gamma: Complex64) -> usize {
    let g = gamma.norm();
    n + (g * g + 6.0 * g + 6.0).ceil() as usize
}

/// Beam-splitter block of every mode for a sector assignment.
pub fn bs_blocks_for(partition: &PartitionSpec, assignment: &[usize]) -> Result<Vec<[[Complex64; 2]; 2]>> {
    assignment
        .iter()
        .map(|&s| {
            let sec = partition
                .sectors()
                .get(s)
                .ok_or_else(|| Error::invalid(format!("sector {} does not exist", s + 1)))?;
            let (e, z) = (Complex64::new(sec.eta, 0.0), Complex64::new(sec.zeta, 0.0));
            Ok([[e, z], [z, -e]])
        })
        .collect()
}

/// Output amplitudes `w_n(p, q)` of one input mode holding `n` photons,
/// `p` photons towards counter 1 and `q` towards counter 2, for
/// `p, q ≤ kmax`.
struct ModeOutputs<T: Real> {
    per_n: Vec<Vec<C<T>>>,
}

impl<T: Real> ModeOutputs<T> {
    fn new(block: &[[Complex64; 2]; 2], probe: Option<Complex64>, n: usize, cutoff: usize, kmax: usize) -> Result<Self> {
        let u = CMat::<T>::from_fn(2, 2, |i, j| C::new(re(block[i][j].re), re(block[i][j].im)));
        let u = ModeMatrix::new(u)?;
        let (m_max, coeffs) = match probe {
            Some(g) => {
                let m_max = cutoff - n;
                let c: Vec<Complex64> = (0..=m_max)
                    .map(|m| {
                        (-0.5 * g.norm_sqr()).exp() * g.powu(m as u32) / linalg::sqrt_factorial::<f64>(m)
                    })
                    .collect();
                (m_max, c)
            }
            None => (0, vec![Complex64::new(1.0, 0.0)]),
        };
        let basis = enumerate_basis(2, n + m_max)?;
        let x = plt_on_fock(&u, &basis)?;
        let mut per_n = Vec::with_capacity(n + 1);
        for a in 0..=n {
            let mut w = vec![linalg::czero::<T>(); (kmax + 1) * (kmax + 1)];
            for (m, c) in coeffs.iter().enumerate() {
                let col = basis.index_of(&[a as u32, m as u32]).unwrap();
                let c = C::new(re::<T>(c.re), re::<T>(c.im));
                for row in 0..basis.len() {
                    let z = x.entries[(row, col)];
                    if z == linalg::czero() {
                        continue;
                    }
                    let occ = basis.state(row);
                    let (p, q) = (occ[0] as usize, occ[1] as usize);
                    if p <= kmax && q <= kmax {
                        w[p * (kmax + 1) + q] += z * c;
                    }
                }
            }
            per_n.push(w);
        }
        Ok(ModeOutputs { per_n })
    }
}

/// Joint counting probabilities from the dense state, `table[k][l]` for
/// `k + l ≤ max_total`.
///
/// Mode `j` of `rho` meets probe mode `b_j` on `bs_blocks[j]`; `b₁` carries
/// a coherent state `γ` truncated so that mode 1 and its probe hold at most
/// `joint_cutoff` photons, the other probes are vacuum. Every beam splitter
/// acts on its own pair of modes, so the output state factorizes per pair
/// and the counting distribution is a convolution over pairs.
pub fn born_oracle_table<T: Real>(
    rho: &DenseOperator<T>,
    gamma: Complex64,
    bs_blocks: &[[[Complex64; 2]; 2]],
    max_total: usize,
    joint_cutoff: Option<usize>,
) -> Result<Vec<Vec<T>>> {
    let s = rho.basis.num_modes();
    let n = rho.basis.cutoff();
    if bs_blocks.len() != s {
        return Err(Error::dimension(format!("{} beam-splitter blocks for {s} modes", bs_blocks.len())));
    }
    let cutoff = joint_cutoff.unwrap_or_else(|| default_joint_cutoff(n, gamma));
    if cutoff < n {
        return Err(Error::domain("joint cutoff below the state's photon cutoff"));
    }
    let kept: f64 = (0..=cutoff - n)
        .map(|m| (-gamma.norm_sqr()).exp() * gamma.norm_sqr().powi(m as i32) / linalg::factorial::<f64>(m))
        .sum();
    if 1.0 - kept > 1e-10 {
        return Err(Error::domain(format!(
            "joint cutoff {cutoff} loses {:.3e} of the probe's norm",
            1.0 - kept
        )));
    }
    let kmax = max_total;
    let outputs: Vec<ModeOutputs<T>> = (0..s)
        .map(|j| ModeOutputs::new(&bs_blocks[j], (j == 0).then_some(gamma), n, cutoff, kmax))
        .collect::<Result<_>>()?;
    let side = kmax + 1;
    let basis = &rho.basis;
    let dim = basis.len();
    let rows: Vec<Vec<C<T>>> = (0..dim)
        .into_par_iter()
        .map(|a| {
            let occ_a = basis.state(a);
            let mut acc = vec![linalg::czero::<T>(); side * side];
            for b in 0..dim {
                let r = rho.entries[(a, b)];
                if r == linalg::czero() {
                    continue;
                }
                let occ_b = basis.state(b);
                let mut dist = vec![linalg::czero::<T>(); side * side];
                dist[0] = r;
                for (j, out) in outputs.iter().enumerate() {
                    let (wa, wb) = (&out.per_n[occ_a[j] as usize], &out.per_n[occ_b[j] as usize]);
                    let g: Vec<(usize, usize, C<T>)> = (0..side)
                        .flat_map(|p| (0..side - p).map(move |q| (p, q)))
                        .filter_map(|(p, q)| {
                            let z = wa[p * side + q] * wb[p * side + q].conj();
                            (z != linalg::czero()).then_some((p, q, z))
                        })
                        .collect();
                    let mut next = vec![linalg::czero::<T>(); side * side];
                    for k in 0..side {
                        for l in 0..side - k {
                            let d = dist[k * side + l];
                            if d == linalg::czero() {
                                continue;
                            }
                            for &(p, q, z) in &g {
                                if k + p + l + q <= kmax {
                                    next[(k + p) * side + l + q] += d * z;
                                }
                            }
                        }
                    }
                    dist = next;
                }
                for i in 0..side * side {
                    acc[i] += dist[i];
                }
            }
            acc
        })
        .collect();
    let mut table = vec![vec![T::zero(); side]; side];
    for row in rows {
        for k in 0..side {
            for l in 0..side - k {
                table[k][l] += row[k * side + l].re;
            }
        }
    }
    Ok(table)
}

/// Single joint counting probability from the dense oracle.
pub fn born_oracle<T: Real>(
    rho: &DenseOperator<T>,
    gamma: Complex64,
    bs_blocks: &[[[Complex64; 2]; 2]],
    k: usize,
    l: usize,
    joint_cutoff: Option<usize>,
) -> Result<T> {
    Ok(born_oracle_table(rho, gamma, bs_blocks, k + l, joint_cutoff)?[k][l])
}

/// Counts of one setting, keyed by outcome in POVM order.
#[derive(Clone, Debug, PartialEq)]
pub struct SettingCounts {
    pub gamma: Complex64,
    pub counts: Vec<(Outcome, f64)>,
}

impl SettingCounts {
    pub fn total(&self) -> f64 {
        self.counts.iter().map(|c| c.1).sum()
    }

    /// Counts aligned with the elements of `povm`; outcomes absent from the
    /// data count zero.
    pub fn aligned<T: Real>(&self, povm: &Povm<T>) -> Result<Vec<f64>> {
        let index: HashMap<Outcome, usize> = povm.elements.iter().enumerate().map(|(i, e)| (e.outcome, i)).collect();
        let mut out = vec![0.0; povm.len()];
        for (o, c) in &self.counts {
            let i = index
                .get(o)
                .ok_or_else(|| Error::dimension(format!("outcome {o} is not part of the POVM")))?;
            out[*i] += c;
        }
        Ok(out)
    }
}

/// Counting data of a whole context. Counts are weights, so exact expected
/// frequencies can be represented too.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub settings: Vec<SettingCounts>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn total(&self) -> f64 {
        self.settings.iter().map(|s| s.total()).sum()
    }

    pub fn setting_totals(&self) -> Vec<f64> {
        self.settings.iter().map(|s| s.total()).collect()
    }

    /// Counts aligned with each POVM of the context.
    pub fn aligned<T: Real>(&self, context: &MeasurementContext<T>) -> Result<Vec<Vec<f64>>> {
        if self.settings.len() != context.povms.len() {
            return Err(Error::dimension(format!(
                "dataset has {} settings, context has {}",
                self.settings.len(),
                context.povms.len()
            )));
        }
        for (i, (s, p)) in self.settings.iter().zip(&context.povms).enumerate() {
            if (s.gamma - p.gamma).norm() > 1e-9 {
                return Err(Error::invalid(format!("setting {i}: dataset probe {} differs from context probe {}", s.gamma, p.gamma)));
            }
        }
        self.settings.iter().zip(&context.povms).map(|(s, p)| s.aligned(p)).collect()
    }
}

/// Multinomial draws by inverse CDF over the POVM's outcome order.
fn multinomial(probs: &[f64], m: u64, seed: u64) -> Vec<u64> {
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &p in probs {
        acc += p;
        cdf.push(acc);
    }
    let total = acc;
    let mut counts = vec![0u64; probs.len()];
    let mut rng = rng_from_seed(seed);
    for _ in 0..m {
        let u = uniform(&mut rng) * total;
        let i = cdf.partition_point(|&c| c <= u).min(probs.len() - 1);
        counts[i] += 1;
    }
    counts
}

/// Seeded multinomial dataset: setting `i` draws `m[i]` outcomes with seed
/// `derive_seed(seed, i)`.
pub fn simulate_dataset<T: Real>(state: &BlockOperator<T>, context: &MeasurementContext<T>, m: &[u64], seed: u64) -> Result<Dataset> {
    if m.len() != context.povms.len() {
        return Err(Error::dimension(format!("{} sample sizes for {} settings", m.len(), context.povms.len())));
    }
    if m.contains(&0) {
        return Err(Error::invalid("every setting needs at least one sample"));
    }
    let settings = context
        .povms
        .par_iter()
        .zip(m.par_iter())
        .enumerate()
        .map(|(i, (povm, &mi))| {
            let probs = probabilities(state, povm)?;
            let counts = multinomial(&probs, mi, derive_seed(seed, i as u64));
            Ok(SettingCounts {
                gamma: povm.gamma,
                counts: povm.elements.iter().zip(counts).map(|(e, c)| (e.outcome, c as f64)).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { settings, seed: Some(seed) })
}

/// Noise-free dataset with counts `m[i] · p(i)`.
pub fn expected_dataset<T: Real>(state: &BlockOperator<T>, context: &MeasurementContext<T>, m: &[f64]) -> Result<Dataset> {
    if m.len() != context.povms.len() {
        return Err(Error::dimension(format!("{} sample sizes for {} settings", m.len(), context.povms.len())));
    }
    let settings = context
        .povms
        .iter()
        .zip(m)
        .map(|(povm, &mi)| {
            let probs = probabilities(state, povm)?;
            Ok(SettingCounts {
                gamma: povm.gamma,
                counts: povm.elements.iter().zip(probs).map(|(e, p)| (e.outcome, mi * p)).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { settings, seed: None })
}

struct CountMap<'a>(&'a [(Outcome, f64)]);

impl Serialize for CountMap<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (o, c) in self.0 {
            map.serialize_entry(&o.to_string(), &Weight(*c))?;
        }
        map.end()
    }
}

/// A count, written as an integer when it is one.
struct Weight(f64);

impl Serialize for Weight {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let c = self.0;
        if c.fract() == 0.0 && (0.0..9.0e15).contains(&c) {
            s.serialize_u64(c as u64)
        } else {
            s.serialize_f64(c)
        }
    }
}

struct CountMapVisitor;

impl<'de> Visitor<'de> for CountMapVisitor {
    type Value = Vec<(Outcome, f64)>;
    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a map from outcome labels to counts")
    }
    fn visit_map<A: MapAccess<'de>>(self, mut a: A) -> std::result::Result<Self::Value, A::Error> {
        let mut out = Vec::new();
        while let Some((k, v)) = a.next_entry::<String, f64>()? {
            let o: Outcome = k.parse().map_err(serde::de::Error::custom)?;
            if !(v >= 0.0) || !v.is_finite() {
                return Err(serde::de::Error::custom(format!("count for {k} must be a nonnegative number")));
            }
            out.push((o, v));
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct SettingCountsOut<'a> {
    #[serde(with = "crate::serde_complex")]
    gamma: Complex64,
    #[serde(rename = "M")]
    m: Weight,
    counts: CountMap<'a>,
}

impl Serialize for SettingCounts {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SettingCountsOut { gamma: self.gamma, m: Weight(self.total()), counts: CountMap(&self.counts) }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SettingCounts {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct Counts(Vec<(Outcome, f64)>);
        impl<'de> Deserialize<'de> for Counts {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                d.deserialize_map(CountMapVisitor).map(Counts)
            }
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            #[serde(with = "crate::serde_complex")]
            gamma: Complex64,
            #[serde(rename = "M", default)]
            m: Option<f64>,
            counts: Counts,
        }
        let raw = Raw::deserialize(d)?;
        let sc = SettingCounts { gamma: raw.gamma, counts: raw.counts.0 };
        if let Some(m) = raw.m {
            if (m - sc.total()).abs() > 1e-9 * m.max(1.0) {
                return Err(serde::de::Error::custom(format!("M = {m} but counts sum to {}", sc.total())));
            }
        }
        Ok(sc)
    }
}
