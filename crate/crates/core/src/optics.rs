//! Beam-splitter standardization, passive linear transformations (PLTs) on
//! truncated Fock spaces and the ordered-power identities of the total
//! number operator.

use std::collections::HashMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fock::{DenseOperator, OccupationBasis};
use crate::linalg::{self, CMat};
use crate::{re, Error, Real, Result, C};

/// Unitary acting linearly on a vector of mode operators.
#[derive(Clone, Debug)]
pub struct ModeMatrix<T: Real> {
    entries: CMat<T>,
}

impl<T: Real> ModeMatrix<T> {
    /// Checks squareness and unitarity (`‖U†U − I‖_max ≤ 1e-10`, or a few
    /// hundred ulps for narrow scalars).
    pub fn new(entries: CMat<T>) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::invalid("mode matrix must be square and nonempty"));
        }
        let n = entries.nrows();
        let dev = linalg::max_abs_diff(&(entries.adjoint() * &entries), &linalg::identity(n));
        let tol = re::<T>(1e-10).max(T::default_epsilon() * re(256.0));
        if !(dev <= tol) {
            return Err(Error::invalid(format!("mode matrix is not unitary (deviation {dev})")));
        }
        Ok(ModeMatrix { entries })
    }

    pub fn identity(n: usize) -> Self {
        ModeMatrix { entries: linalg::identity(n) }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMat<T> {
        &self.entries
    }

    /// Direct sum of 2×2 blocks acting on consecutive mode pairs.
    pub fn direct_sum(blocks: &[CMat<T>]) -> Result<Self> {
        let n: usize = blocks.iter().map(|b| b.nrows()).sum();
        let mut m = CMat::zeros(n, n);
        let mut o = 0;
        for b in blocks {
            m.view_mut((o, o), (b.nrows(), b.ncols())).copy_from(b);
            o += b.nrows();
        }
        Self::new(m)
    }
}

/// One sector of a standardized beam splitter: the real 2×2 block
/// `[[η, ζ], [ζ, −η]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub eta: f64,
    pub zeta: f64,
}

impl Sector {
    pub fn from_eta(eta: f64) -> Self {
        Sector { eta, zeta: (1.0 - eta * eta).max(0.0).sqrt() }
    }

    /// The sector's mode-pair matrix.
    pub fn block<T: Real>(&self) -> CMat<T> {
        let (e, z) = (re::<T>(self.eta), re::<T>(self.zeta));
        CMat::from_row_slice(2, 2, &[C::new(e, T::zero()), C::new(z, T::zero()), C::new(z, T::zero()), C::new(-e, T::zero())])
    }
}

#[derive(Deserialize)]
struct PartitionRaw {
    sectors: Vec<Sector>,
    #[serde(default)]
    s1_multi: bool,
}

/// Standardized beam splitter: `K` distinct sector transformations, mode 1's
/// sector first, and whether mode 1 shares its sector with other modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartitionRaw")]
pub struct PartitionSpec {
    sectors: Vec<Sector>,
    s1_multi: bool,
}

impl TryFrom<PartitionRaw> for PartitionSpec {
    type Error = Error;
    fn try_from(raw: PartitionRaw) -> Result<Self> {
        PartitionSpec::new(raw.sectors, raw.s1_multi)
    }
}

/// Grouping tolerance on `|η|`.
pub const ETA_TOL: f64 = 1e-9;

impl PartitionSpec {
    pub fn new(sectors: Vec<Sector>, s1_multi: bool) -> Result<Self> {
        if sectors.is_empty() {
            return Err(Error::invalid("a partition needs at least one sector"));
        }
        for (i, s) in sectors.iter().enumerate() {
            if !(s.eta > 0.0 && s.eta < 1.0 && s.zeta > 0.0 && s.zeta < 1.0) {
                return Err(Error::domain(format!("sector {i} is trivial or out of range: {s:?}")));
            }
            if (s.eta * s.eta + s.zeta * s.zeta - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("sector {i} has η²+ζ² ≠ 1")));
            }
            for t in &sectors[..i] {
                if (t.eta - s.eta).abs() <= ETA_TOL {
                    return Err(Error::invalid("sector η values must be pairwise distinct"));
                }
            }
        }
        Ok(PartitionSpec { sectors, s1_multi })
    }

    /// `K = 1` with `η = ζ = 1/√2`.
    pub fn balanced(s1_multi: bool) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        PartitionSpec { sectors: vec![Sector { eta: h, zeta: h }], s1_multi }
    }

    pub fn k(&self) -> usize {
        self.sectors.len()
    }

    pub fn sectors(&self) -> &[Sector] {
        &self.sectors
    }

    pub fn s1_multi(&self) -> bool {
        self.s1_multi
    }

    /// Length of the sector-photon tuples labelling twirled blocks.
    pub fn tuple_len(&self) -> usize {
        if self.s1_multi {
            self.k()
        } else {
            self.k() - 1
        }
    }

    /// Sector hosting tuple entry `j`.
    pub fn tuple_sector(&self, j: usize) -> usize {
        if self.s1_multi {
            j
        } else {
            j + 1
        }
    }

    /// All sectors have `η = ζ`.
    pub fn is_balanced(&self) -> bool {
        self.sectors.iter().all(|s| (s.eta - s.zeta).abs() <= ETA_TOL)
    }

    /// Modes of the reduced representative: mode 1, then one auxiliary mode
    /// per tuple entry. Returns the sector of each.
    pub fn reduced_modes(&self) -> Vec<usize> {
        let mut v = vec![0];
        v.extend((0..self.tuple_len()).map(|j| self.tuple_sector(j)));
        v
    }
}

/// Standardize per-mode 2×2 blocks (block `j` mixes input mode `j` with
/// probe mode `j`; block 0 holds mode 1).
///
/// Returns the partition and the sector index of every mode.
pub fn standardize_bs_with_assignment(blocks: &[[[Complex64; 2]; 2]]) -> Result<(PartitionSpec, Vec<usize>)> {
    if blocks.is_empty() {
        return Err(Error::invalid("no beam-splitter blocks"));
    }
    let mut reps: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut assignment = Vec::with_capacity(blocks.len());
    for (j, b) in blocks.iter().enumerate() {
        let m = CMat::<f64>::from_row_slice(2, 2, &[b[0][0], b[0][1], b[1][0], b[1][1]]);
        let dev = linalg::max_abs_diff(&(m.adjoint() * &m), &linalg::identity(2));
        if !(dev <= 1e-10) {
            return Err(Error::invalid(format!("block {j} is not unitary (deviation {dev:.3e})")));
        }
        let eta = b[0][0].norm();
        if eta <= ETA_TOL || eta >= 1.0 - ETA_TOL {
            return Err(Error::domain(format!("block {j} is a trivial beam splitter (|η| = {eta})")));
        }
        match reps.iter().position(|&r| (r - eta).abs() <= ETA_TOL) {
            Some(s) => {
                counts[s] += 1;
                assignment.push(s);
            }
            None => {
                reps.push(eta);
                counts.push(1);
                assignment.push(reps.len() - 1);
            }
        }
    }
    let sectors = reps.iter().map(|&e| Sector::from_eta(e)).collect();
    Ok((PartitionSpec::new(sectors, counts[0] > 1)?, assignment))
}

/// Group blocks by `|η|` into a [`PartitionSpec`].
pub fn standardize_bs(blocks: &[[[Complex64; 2]; 2]]) -> Result<PartitionSpec> {
    standardize_bs_with_assignment(blocks).map(|(p, _)| p)
}

/// Fock-space representation of a PLT.
///
/// Creation operators transform as `a_i† → Σ_j U_{ji} a_j†`, so
/// `plt(U)·plt(V) = plt(UV)`. Each photon-number shell is filled by
/// multiplying out the transformed creation operators.
pub fn plt_on_fock<T: Real>(u: &ModeMatrix<T>, basis: &OccupationBasis) -> Result<DenseOperator<T>> {
    let s = basis.num_modes();
    if u.dim() != s {
        return Err(Error::dimension(format!("mode matrix is {0}x{0}, basis has {s} modes", u.dim())));
    }
    let um = u.entries();
    let mut out = CMat::zeros(basis.len(), basis.len());
    // √(m!) for every basis state, reused for all columns.
    let sqf: Vec<T> = basis
        .states()
        .iter()
        .map(|occ| occ.iter().fold(T::one(), |a, &m| a * linalg::sqrt_factorial::<T>(m as usize)))
        .collect();
    let mut poly: HashMap<usize, C<T>> = HashMap::new();
    let mut next: HashMap<usize, C<T>> = HashMap::new();
    let mut scratch = vec![0u32; s];
    for col in 0..basis.len() {
        let occ = basis.state(col).to_vec();
        poly.clear();
        poly.insert(basis.index_of(&vec![0; s]).unwrap(), C::new(T::one(), T::zero()));
        for (i, &ni) in occ.iter().enumerate() {
            for _ in 0..ni {
                next.clear();
                for (&mono, &c) in poly.iter() {
                    for j in 0..s {
                        let w = um[(j, i)];
                        if w.re == T::zero() && w.im == T::zero() {
                            continue;
                        }
                        scratch.copy_from_slice(basis.state(mono));
                        scratch[j] += 1;
                        let idx = basis.index_of(&scratch).expect("shell stays inside the cutoff");
                        *next.entry(idx).or_insert(C::new(T::zero(), T::zero())) += c * w;
                    }
                }
                std::mem::swap(&mut poly, &mut next);
            }
        }
        let norm = sqf[col];
        for (&row, &c) in poly.iter() {
            out[(row, col)] = c * C::new(sqf[row] / norm, T::zero());
        }
    }
    DenseOperator::new(basis.clone(), out)
}

fn falling<T: Real>(x: usize, k: usize) -> T {
    (0..k).fold(T::one(), |acc, i| {
        if i > x {
            T::zero()
        } else {
            acc * re::<T>((x - i) as f64)
        }
    })
}

/// Normally ordered `k`-th power of the total number operator, which equals
/// the falling factorial `(n̂)_k`.
pub fn number_power_normal<T: Real>(k: usize, basis: &OccupationBasis) -> DenseOperator<T> {
    DenseOperator::diagonal(basis, |occ| falling(occ.iter().sum::<u32>() as usize, k))
}

/// Anti-normally ordered `k`-th power of the total number operator, which
/// equals `(n̂ + S − 1 + k)_k`.
pub fn number_power_antinormal<T: Real>(k: usize, basis: &OccupationBasis) -> DenseOperator<T> {
    let s = basis.num_modes();
    DenseOperator::diagonal(basis, |occ| falling(occ.iter().sum::<u32>() as usize + s - 1 + k, k))
}
