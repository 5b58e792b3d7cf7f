//! Twirled states: the block-diagonal operator space they live in, the
//! analytic twirl of a dense state, a Monte-Carlo Haar oracle and the closed
//! forms for TMSV and cat inputs.
//!
//! A block is labelled by a sector-photon tuple `ı⃗` (one entry per
//! auxiliary sector: sector 1 first when it holds more than mode 1, then
//! sectors 2..K) and is a matrix on mode 1 of dimension `N − Σı⃗ + 1`.

use std::collections::HashMap;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::fock::{enumerate_basis, DenseOperator, OccupationBasis, StateFidelity, StateSpec};
use crate::linalg::{self, cr, CMat};
use crate::optics::{plt_on_fock, ModeMatrix, PartitionSpec};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::{f64_of, re, Error, Real, Result, C};

/// Sector-block-diagonal operator on the twirled-state space.
#[derive(Clone, Debug)]
pub struct BlockOperator<T: Real> {
    n: usize,
    partition: PartitionSpec,
    tuples: std::sync::Arc<Vec<Vec<u32>>>,
    blocks: Vec<CMat<T>>,
}

impl<T: Real> PartialEq for BlockOperator<T> {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.partition == other.partition && self.blocks == other.blocks
    }
}

/// Tuples of length `len` with sum at most `n`, graded-lex.
pub fn sector_tuples(len: usize, n: usize) -> Vec<Vec<u32>> {
    if len == 0 {
        return vec![vec![]];
    }
    enumerate_basis(len, n).expect("len >= 1").states().to_vec()
}

impl<T: Real> BlockOperator<T> {
    pub fn zeros(partition: &PartitionSpec, n: usize) -> Self {
        let tuples = sector_tuples(partition.tuple_len(), n);
        let blocks = tuples
            .iter()
            .map(|t| {
                let d = n - t.iter().sum::<u32>() as usize + 1;
                CMat::zeros(d, d)
            })
            .collect();
        BlockOperator {
            n,
            partition: partition.clone(),
            tuples: std::sync::Arc::new(tuples),
            blocks,
        }
    }

    pub fn identity(partition: &PartitionSpec, n: usize) -> Self {
        let mut z = Self::zeros(partition, n);
        for b in z.blocks.iter_mut() {
            b.fill_with_identity();
        }
        z
    }

    /// `I / dim`.
    pub fn maximally_mixed(partition: &PartitionSpec, n: usize) -> Self {
        let mut id = Self::identity(partition, n);
        let d = re::<T>(id.total_dim() as f64);
        id.scale_mut(T::one() / d);
        id
    }

    /// Same shape, new blocks.
    pub fn with_blocks(&self, blocks: Vec<CMat<T>>) -> Result<Self> {
        if blocks.len() != self.blocks.len()
            || blocks.iter().zip(&self.blocks).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::dimension("block shapes differ"));
        }
        Ok(BlockOperator { n: self.n, partition: self.partition.clone(), tuples: self.tuples.clone(), blocks })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn partition(&self) -> &PartitionSpec {
        &self.partition
    }

    pub fn tuples(&self) -> &[Vec<u32>] {
        &self.tuples
    }

    pub fn blocks(&self) -> &[CMat<T>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [CMat<T>] {
        &mut self.blocks
    }

    pub fn block_index(&self, tuple: &[u32]) -> Option<usize> {
        self.tuples.iter().position(|t| t.as_slice() == tuple)
    }

    pub fn block(&self, tuple: &[u32]) -> Option<&CMat<T>> {
        self.block_index(tuple).map(|i| &self.blocks[i])
    }

    pub fn block_mut(&mut self, tuple: &[u32]) -> Option<&mut CMat<T>> {
        self.block_index(tuple).map(move |i| &mut self.blocks[i])
    }

    /// Hilbert-space dimension `Σ dim`.
    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.nrows()).sum()
    }

    /// Number of matrix entries `Σ dim²`, the real parameter count of a
    /// Hermitian element.
    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(|b| b.nrows() * b.nrows()).sum()
    }

    pub fn same_space(&self, other: &Self) -> bool {
        self.n == other.n && self.partition == other.partition
    }

    pub fn check_same(&self, other: &Self) -> Result<()> {
        if !self.same_space(other) {
            return Err(Error::dimension(format!(
                "block operators differ in space (N={} K={} vs N={} K={})",
                self.n,
                self.partition.k(),
                other.n,
                other.partition.k()
            )));
        }
        Ok(())
    }

    pub fn trace(&self) -> T {
        self.blocks.iter().fold(T::zero(), |a, b| a + linalg::trace_re(b))
    }

    /// `Re tr(self · other)`.
    pub fn trace_with(&self, other: &Self) -> T {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .fold(T::zero(), |a, (x, y)| a + linalg::trace_prod_re(x, y))
    }

    pub fn scale_mut(&mut self, s: T) {
        let s = cr(s);
        for b in self.blocks.iter_mut() {
            *b *= s;
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut c = self.clone();
        c.scale_mut(s);
        c
    }

    /// `self += s · other`.
    pub fn axpy(&mut self, s: T, other: &Self) {
        let s = cr(s);
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            *a += b * s;
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut c = self.clone();
        c.axpy(T::one(), other);
        c
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut c = self.clone();
        c.axpy(-T::one(), other);
        c
    }

    pub fn hermitized(&self) -> Self {
        let blocks = self.blocks.iter().map(linalg::hermitize).collect();
        BlockOperator { blocks, ..self.clone() }
    }

    pub fn max_abs(&self) -> T {
        self.blocks.iter().fold(T::zero(), |a, b| a.max(linalg::max_abs(b)))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .fold(T::zero(), |a, (x, y)| a.max(linalg::max_abs_diff(x, y)))
    }

    /// Largest deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> T {
        self.blocks
            .iter()
            .fold(T::zero(), |a, b| a.max(linalg::max_abs_diff(b, &b.adjoint())))
    }

    pub fn min_eig(&self) -> T {
        self.blocks
            .iter()
            .fold(T::max_value().unwrap(), |a, b| a.min(linalg::min_eig(&linalg::hermitize(b))))
    }

    pub fn max_eig(&self) -> T {
        self.blocks
            .iter()
            .fold(T::min_value().unwrap(), |a, b| a.max(linalg::max_eig(&linalg::hermitize(b))))
    }

    /// Blockwise `a · self · a`.
    pub fn sandwich(&self, a: &Self) -> Self {
        let blocks = self.blocks.iter().zip(&a.blocks).map(|(r, x)| x * r * x).collect();
        BlockOperator { blocks, ..self.clone() }
    }

    /// Checks the state invariants: Hermitian to 1e-10, eigenvalues at
    /// least −1e-9, unit trace to 1e-9.
    pub fn validate_state(&self) -> Result<()> {
        let h = f64_of(self.hermiticity_error());
        let m = f64_of(self.min_eig());
        let t = f64_of(self.trace());
        if h > 1e-10 || m < -1e-9 || (t - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!(
                "not a density operator (hermiticity {h:.2e}, min eigenvalue {m:.2e}, trace {t})"
            )));
        }
        Ok(())
    }

    /// Row-major entries of every block, concatenated in tuple order.
    pub fn vectorize(&self) -> Vec<C<T>> {
        let mut v = Vec::with_capacity(self.num_params());
        for b in &self.blocks {
            for i in 0..b.nrows() {
                for j in 0..b.ncols() {
                    v.push(b[(i, j)]);
                }
            }
        }
        v
    }

    /// Basis of the reduced representative: mode 1 plus one auxiliary mode
    /// per tuple entry, cutoff `N`.
    pub fn reduced_basis(&self) -> OccupationBasis {
        enumerate_basis(1 + self.partition.tuple_len(), self.n).expect("at least one mode")
    }

    /// Dense operator with each sector's photons placed in one auxiliary
    /// mode: `Σ χ_ı⃗ ⊗ |ı⃗⟩⟨ı⃗|`.
    pub fn embed_reduced(&self) -> DenseOperator<T> {
        let basis = self.reduced_basis();
        let mut m = CMat::zeros(basis.len(), basis.len());
        let mut occ = vec![0u32; basis.num_modes()];
        for (t, b) in self.tuples.iter().zip(&self.blocks) {
            occ[1..].copy_from_slice(t);
            let d = b.nrows();
            let idx: Vec<usize> = (0..d)
                .map(|x| {
                    occ[0] = x as u32;
                    basis.index_of(&occ).unwrap()
                })
                .collect();
            for x in 0..d {
                for y in 0..d {
                    m[(idx[x], idx[y])] = b[(x, y)];
                }
            }
        }
        DenseOperator { basis, entries: m }
    }

    /// Full twirled operator on `assignment.len()` modes: every block is
    /// tensored with the maximally mixed state on the matching photon-number
    /// shell of each sector's non-mode-1 modes.
    pub fn embed_twirled(&self, assignment: &[usize]) -> Result<DenseOperator<T>> {
        let groups = sector_groups(assignment, &self.partition)?;
        let basis = enumerate_basis(assignment.len(), self.n)?;
        let mut m = CMat::zeros(basis.len(), basis.len());
        // States sharing mode-1 occupation x and a sector-total tuple ı⃗.
        let mut by_key: HashMap<(u32, Vec<u32>), Vec<usize>> = HashMap::new();
        for i in 0..basis.len() {
            let occ = basis.state(i);
            let t = sector_totals(occ, &groups);
            by_key.entry((occ[0], t)).or_default().push(i);
        }
        for (t, b) in self.tuples.iter().zip(&self.blocks) {
            let d = b.nrows();
            for x in 0..d {
                let Some(rows) = by_key.get(&(x as u32, t.clone())) else { continue };
                let shell = re::<T>(rows.len() as f64);
                for y in 0..d {
                    let Some(cols) = by_key.get(&(y as u32, t.clone())) else { continue };
                    // Pair the aux occupations of x and y one to one.
                    let v = b[(x, y)].unscale(shell);
                    for (&r, &c) in rows.iter().zip(cols.iter()) {
                        m[(r, c)] = v;
                    }
                }
            }
        }
        DenseOperator::new(basis, m)
    }
}

/// Non-mode-1 modes of each tuple entry.
fn sector_groups(assignment: &[usize], partition: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    if assignment.first() != Some(&0) {
        return Err(Error::invalid("mode 1 must belong to sector 1"));
    }
    let k = partition.k();
    let mut groups = vec![Vec::new(); partition.tuple_len()];
    for (m, &s) in assignment.iter().enumerate().skip(1) {
        if s >= k {
            return Err(Error::invalid(format!("mode {} assigned to sector {} but K = {k}", m + 1, s + 1)));
        }
        let slot = if partition.s1_multi() {
            s
        } else if s == 0 {
            return Err(Error::invalid("partition says mode 1 is alone in sector 1, but another mode is assigned there"));
        } else {
            s - 1
        };
        groups[slot].push(m);
    }
    Ok(groups)
}

fn sector_totals(occ: &[u32], groups: &[Vec<usize>]) -> Vec<u32> {
    groups.iter().map(|g| g.iter().map(|&m| occ[m]).sum()).collect()
}

impl<T: Real> StateFidelity for BlockOperator<T> {
    type Scalar = T;
    fn fidelity_with(&self, other: &Self) -> Result<T> {
        self.check_same(other)?;
        let f = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .fold(T::zero(), |a, (x, y)| a + linalg::root_fidelity(x, y));
        Ok((f * f).min(T::one()))
    }
}

/// Twirl of a dense state: `χ_ı⃗(x, y) = Σ_{n⃗ → ı⃗} ⟨x, n⃗|ρ|y, n⃗⟩`, where
/// `n⃗` runs over occupations of the non-mode-1 modes whose sector totals
/// equal `ı⃗`.
pub fn twirl_analytic<T: Real>(
    rho: &DenseOperator<T>,
    assignment: &[usize],
    partition: &PartitionSpec,
    n: usize,
) -> Result<BlockOperator<T>> {
    if assignment.len() != rho.basis.num_modes() {
        return Err(Error::dimension(format!(
            "sector assignment covers {} modes, state has {}",
            assignment.len(),
            rho.basis.num_modes()
        )));
    }
    let groups = sector_groups(assignment, partition)?;
    let leak = f64_of(rho.weight_above(n));
    if leak > 1e-9 {
        return Err(Error::domain(format!("state has weight {leak:.3e} above the cutoff N = {n}")));
    }
    let mut out = BlockOperator::zeros(partition, n);
    let index: HashMap<Vec<u32>, usize> =
        out.tuples.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    let basis = &rho.basis;
    let mut by_rest: HashMap<Vec<u32>, Vec<(usize, usize)>> = HashMap::new();
    for i in 0..basis.len() {
        let occ = basis.state(i);
        by_rest.entry(occ[1..].to_vec()).or_default().push((occ[0] as usize, i));
    }
    for (rest, members) in by_rest {
        let mut full = vec![0u32];
        full.extend_from_slice(&rest);
        let t = sector_totals(&full, &groups);
        let Some(&bi) = index.get(&t) else { continue };
        let b = &mut out.blocks[bi];
        let d = b.nrows();
        for &(x, ix) in &members {
            if x >= d {
                continue;
            }
            for &(y, iy) in &members {
                if y < d {
                    b[(x, y)] += rho.entries[(ix, iy)];
                }
            }
        }
    }
    Ok(out)
}

/// Haar-random unitary: QR of a complex Gaussian matrix with the phases of
/// `R`'s diagonal moved into `Q`.
pub fn haar_unitary<T: Real>(n: usize, rng: &mut Rng) -> ModeMatrix<T> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let z = CMat::<f64>::from_fn(n, n, |_, _| {
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        C::new(a * h, b * h)
    });
    let qr = z.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { C::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= ph;
        }
    }
    let qt = CMat::<T>::from_fn(n, n, |i, j| C::new(re(q[(i, j)].re), re(q[(i, j)].im)));
    ModeMatrix::new(qt).expect("QR factor is unitary")
}

/// Random block PLT fixing mode 1: Haar unitaries on each sector's
/// non-mode-1 modes.
pub fn random_block_plt<T: Real>(assignment: &[usize], rng: &mut Rng) -> ModeMatrix<T> {
    let s = assignment.len();
    let mut w = linalg::identity::<T>(s);
    let k = assignment.iter().copied().max().unwrap_or(0) + 1;
    for sector in 0..k {
        let modes: Vec<usize> = (1..s).filter(|&m| assignment[m] == sector).collect();
        if modes.is_empty() {
            continue;
        }
        let u = haar_unitary::<T>(modes.len(), rng);
        for (a, &i) in modes.iter().enumerate() {
            for (b, &j) in modes.iter().enumerate() {
                w[(i, j)] = u.entries()[(a, b)];
            }
        }
    }
    ModeMatrix::new(w).expect("direct sum of unitaries")
}

const MC_CHUNK: usize = 256;

/// Monte-Carlo average of `X ρ X†` over random block PLTs `X` fixing mode 1.
///
/// Samples are drawn in fixed-size chunks with seeds derived from `seed`,
/// and chunk sums are combined in order, so the result depends only on the
/// seed.
pub fn twirl_oracle_mc<T: Real>(
    rho: &DenseOperator<T>,
    assignment: &[usize],
    partition: &PartitionSpec,
    samples: usize,
    seed: u64,
) -> Result<DenseOperator<T>> {
    if samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    if assignment.len() != rho.basis.num_modes() {
        return Err(Error::dimension("sector assignment length differs from mode count"));
    }
    sector_groups(assignment, partition)?;
    let chunks = samples.div_ceil(MC_CHUNK);
    let partial: Vec<CMat<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from_seed(derive_seed(seed, c as u64));
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut acc = CMat::zeros(rho.dim(), rho.dim());
            for _ in 0..count {
                let w = random_block_plt::<T>(assignment, &mut rng);
                let x = plt_on_fock(&w, &rho.basis).expect("dimensions match").entries;
                acc += &x * &rho.entries * x.adjoint();
            }
            acc
        })
        .collect();
    let mut total = CMat::zeros(rho.dim(), rho.dim());
    for p in partial {
        total += p;
    }
    total.unscale_mut(re::<T>(samples as f64));
    DenseOperator::new(rho.basis.clone(), total)
}

/// Twirled state from its closed form, truncated at total photon number `N`
/// and renormalized.
///
/// A coherent state sits in mode 1 with every other mode in vacuum, so only
/// the all-zero tuple is populated. TMSV and cat states occupy mode 1 and one
/// auxiliary mode, so the partition must have tuples of length one.
pub fn twirled_closed_form<T: Real>(spec: &StateSpec, partition: &PartitionSpec) -> Result<BlockOperator<T>> {
    spec.validate()?;
    let n = spec.n();
    let mut out = BlockOperator::<T>::zeros(partition, n);
    if let StateSpec::Coherent { alpha, .. } = *spec {
        let a = C::new(re::<T>(alpha.re), re::<T>(alpha.im));
        let v = DVector::from_fn(n + 1, |k, _| linalg::cpowi(a, k).unscale(linalg::sqrt_factorial::<T>(k)));
        out.blocks_mut()[0] = &v * v.adjoint();
        let t = out.trace();
        out.scale_mut(T::one() / t);
        return Ok(out);
    }
    if partition.tuple_len() != 1 {
        return Err(Error::invalid("two-mode closed forms need a partition with exactly one auxiliary sector"));
    }
    match *spec {
        StateSpec::Tmsv { r, .. } => {
            if !(r >= 0.0) {
                return Err(Error::invalid("squeezing must be nonnegative"));
            }
            let t2 = re::<T>(r.tanh() * r.tanh());
            for k in 0..=n / 2 {
                let b = out.block_mut(&[k as u32]).unwrap();
                b[(k, k)] = cr(linalg::powi(t2, k));
            }
        }
        StateSpec::Cat { alpha, .. } => {
            if alpha.norm() == 0.0 {
                return Err(Error::domain("a cat state needs a nonzero amplitude"));
            }
            let a = C::new(re::<T>(alpha.re), re::<T>(alpha.im));
            let x2 = re::<T>(alpha.norm_sqr());
            let coh = |amp: C<T>, d: usize| -> DVector<C<T>> {
                DVector::from_fn(d, |k, _| linalg::cpowi(amp, k).unscale(linalg::sqrt_factorial::<T>(k)))
            };
            for k in 0..=n {
                let d = n - k + 1;
                let (p, m) = (coh(a, d), coh(-a, d));
                let sign = if k % 2 == 0 { -T::one() } else { T::one() };
                let w = linalg::powi(x2, k) / linalg::factorial::<T>(k);
                let chi = (&p * p.adjoint() + &m * m.adjoint() + (&m * p.adjoint() + &p * m.adjoint()) * cr(sign)) * cr(w);
                *out.block_mut(&[k as u32]).unwrap() = chi;
            }
        }
        StateSpec::Coherent { .. } => unreachable!(),
    }
    let t = out.trace();
    if !(t > T::zero()) {
        return Err(Error::domain("closed form has no weight below the cutoff"));
    }
    out.scale_mut(T::one() / t);
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct BlockJson {
    i: Vec<u32>,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct BlockOperatorJson {
    #[serde(rename = "N")]
    n: usize,
    partition: PartitionSpec,
    tuples: Vec<BlockJson>,
}

impl<T: Real> Serialize for BlockOperator<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let tuples = self
            .tuples
            .iter()
            .zip(&self.blocks)
            .map(|(t, b)| BlockJson {
                i: t.clone(),
                re: (0..b.nrows()).map(|r| (0..b.ncols()).map(|c| f64_of(b[(r, c)].re)).collect()).collect(),
                im: (0..b.nrows()).map(|r| (0..b.ncols()).map(|c| f64_of(b[(r, c)].im)).collect()).collect(),
            })
            .collect();
        BlockOperatorJson { n: self.n, partition: self.partition.clone(), tuples }.serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for BlockOperator<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = BlockOperatorJson::deserialize(d)?;
        let mut out = BlockOperator::<T>::zeros(&j.partition, j.n);
        if j.tuples.len() != out.tuples.len() {
            return Err(D::Error::custom(format!(
                "expected {} blocks, found {}",
                out.tuples.len(),
                j.tuples.len()
            )));
        }
        for bj in j.tuples {
            let b = out
                .block_mut(&bj.i)
                .ok_or_else(|| D::Error::custom(format!("unexpected tuple {:?}", bj.i)))?;
            let dim = b.nrows();
            if bj.re.len() != dim || bj.im.len() != dim || bj.re.iter().chain(&bj.im).any(|r| r.len() != dim) {
                return Err(D::Error::custom(format!("block {:?} must be {dim}x{dim}", bj.i)));
            }
            for r in 0..dim {
                for c in 0..dim {
                    b[(r, c)] = C::new(re(bj.re[r][c]), re(bj.im[r][c]));
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{fidelity, make_state};
    use crate::optics::Sector;
    use num_complex::Complex64;

    fn trivial3() -> (PartitionSpec, Vec<usize>) {
        (PartitionSpec::balanced(true), vec![0, 0, 0])
    }

    fn random_pure(basis: &OccupationBasis, seed: u64) -> DenseOperator<f64> {
        use rand::Rng as _;
        let mut rng = rng_from_seed(seed);
        let v = DVector::from_fn(basis.len(), |_, _| C::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).normalize();
        DenseOperator::from_pure(basis, &v).unwrap()
    }

    #[test]
    fn block_shapes() {
        let p = PartitionSpec::new(vec![Sector::from_eta(0.6), Sector::from_eta(0.3)], true).unwrap();
        let b = BlockOperator::<f64>::zeros(&p, 3);
        assert_eq!(b.tuples().len(), 10);
        for (t, m) in b.tuples().iter().zip(b.blocks()) {
            assert_eq!(m.nrows(), 3 - t.iter().sum::<u32>() as usize + 1);
        }
        assert_eq!(b.num_params(), 4 * 25 * 6 / 12);
        let p1 = PartitionSpec::balanced(true);
        assert_eq!(BlockOperator::<f64>::zeros(&p1, 5).num_params(), 91);
    }

    #[test]
    fn vacuum_twirl() {
        let (p, a) = trivial3();
        let basis = enumerate_basis(3, 2).unwrap();
        let mut v = DVector::<C<f64>>::zeros(basis.len());
        v[0] = C::new(1.0, 0.0);
        let rho = DenseOperator::from_pure(&basis, &v).unwrap();
        let t = twirl_analytic(&rho, &a, &p, 2).unwrap();
        assert!((t.block(&[0]).unwrap()[(0, 0)].re - 1.0).abs() < 1e-15);
        assert!((t.trace() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn product_state_is_already_twirled() {
        let p = PartitionSpec::balanced(true);
        let basis = enumerate_basis(2, 3).unwrap();
        let (b1, psi) = make_state::<f64>(&StateSpec::Coherent { alpha: Complex64::new(0.4, 0.2), n: 2 }).unwrap();
        let mut v = DVector::zeros(basis.len());
        for x in 0..b1.len() {
            v[basis.index_of(&[x as u32, 1]).unwrap()] = psi[x];
        }
        let rho = DenseOperator::from_pure(&basis, &v).unwrap();
        let t = twirl_analytic(&rho, &[0, 0], &p, 3).unwrap();
        let chi = t.block(&[1]).unwrap();
        let want = &psi * psi.adjoint();
        assert!(linalg::max_abs_diff(chi, &want) < 1e-14);
        for tup in t.tuples() {
            if tup[0] != 1 {
                assert!(linalg::max_abs(t.block(tup).unwrap()) == 0.0);
            }
        }
    }

    #[test]
    fn leakage_is_rejected() {
        let (p, a) = trivial3();
        let basis = enumerate_basis(3, 3).unwrap();
        let rho = random_pure(&basis, 3);
        assert!(matches!(twirl_analytic(&rho, &a, &p, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn cat_twirl_matches_closed_form() {
        let p = PartitionSpec::balanced(true);
        for &(a, n) in &[(Complex64::new(0.5, 0.2), 4usize), (Complex64::new(-0.9, 0.4), 6), (Complex64::new(1.3, 0.0), 3)] {
            let spec = StateSpec::Cat { alpha: a, n };
            let (basis, v) = make_state::<f64>(&spec).unwrap();
            let rho = DenseOperator::from_pure(&basis, &v).unwrap();
            let t = twirl_analytic(&rho, &[0, 0], &p, n).unwrap();
            let cf = twirled_closed_form::<f64>(&spec, &p).unwrap();
            assert!(t.max_abs_diff(&cf) < 1e-12, "{a} {n}: {}", t.max_abs_diff(&cf));
        }
        let bad = StateSpec::Cat { alpha: Complex64::new(0.0, 0.0), n: 3 };
        assert!(twirled_closed_form::<f64>(&bad, &p).is_err());
    }

    #[test]
    fn coherent_closed_form_populates_vacuum_tuple() {
        let spec = StateSpec::Coherent { alpha: Complex64::from_polar(0.8, 0.3), n: 4 };
        let (basis, v) = make_state::<f64>(&spec).unwrap();
        let rho = DenseOperator::from_pure(&basis, &v).unwrap();
        let p = PartitionSpec::balanced(false);
        let t = twirl_analytic(&rho, &[0], &p, 4).unwrap();
        let cf = twirled_closed_form::<f64>(&spec, &p).unwrap();
        assert!(t.max_abs_diff(&cf) < 1e-12);
        let p2 = PartitionSpec::new(vec![Sector::from_eta(0.6), Sector::from_eta(0.3)], true).unwrap();
        let cf2 = twirled_closed_form::<f64>(&spec, &p2).unwrap();
        assert!(crate::linalg::max_abs_diff(&cf2.blocks()[0], &cf.blocks()[0]) < 1e-15);
        assert!((cf2.trace() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn tmsv_twirl_matches_closed_form() {
        let p = PartitionSpec::balanced(true);
        for &(r, n) in &[(0.5, 6usize), (0.0, 4), (1.1, 5)] {
            let spec = StateSpec::Tmsv { r, phi: 0.7, n };
            let (basis, v) = make_state::<f64>(&spec).unwrap();
            let rho = DenseOperator::from_pure(&basis, &v).unwrap();
            let t = twirl_analytic(&rho, &[0, 0], &p, n).unwrap();
            let cf = twirled_closed_form::<f64>(&spec, &p).unwrap();
            assert!(t.max_abs_diff(&cf) < 1e-12);
            if r == 0.0 {
                assert!((cf.block(&[0]).unwrap()[(0, 0)].re - 1.0).abs() < 1e-15);
                assert!((cf.trace() - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn twirl_is_idempotent_and_valid() {
        let p = PartitionSpec::new(vec![Sector::from_eta(0.6), Sector::from_eta(0.3)], true).unwrap();
        let assignment = vec![0, 0, 1, 0, 1];
        let basis = enumerate_basis(5, 2).unwrap();
        for seed in 0..5 {
            let rho = random_pure(&basis, seed);
            let t = twirl_analytic(&rho, &assignment, &p, 2).unwrap();
            t.validate_state().unwrap();
            let again = twirl_analytic(&t.embed_twirled(&assignment).unwrap(), &assignment, &p, 2).unwrap();
            assert!(t.max_abs_diff(&again) < 1e-10);
            let red = twirl_analytic(&t.embed_reduced(), &p.reduced_modes(), &p, 2).unwrap();
            assert!(t.max_abs_diff(&red) < 1e-10);
        }
    }

    #[test]
    fn mc_oracle_fixed_point_and_determinism() {
        let (p, a) = trivial3();
        let basis = enumerate_basis(3, 2).unwrap();
        let rho = random_pure(&basis, 11);
        let tw = twirl_analytic(&rho, &a, &p, 2).unwrap().embed_twirled(&a).unwrap();
        let mc = twirl_oracle_mc(&tw, &a, &p, 50, 5).unwrap();
        assert!(linalg::max_abs_diff(&mc.entries, &tw.entries) < 1e-12);
        let x = twirl_oracle_mc(&rho, &a, &p, 300, 9).unwrap();
        let y = twirl_oracle_mc(&rho, &a, &p, 300, 9).unwrap();
        assert_eq!(x.entries, y.entries);
    }

    #[test]
    fn block_fidelity() {
        let p = PartitionSpec::balanced(true);
        let m = BlockOperator::<f64>::maximally_mixed(&p, 2);
        assert!((fidelity(&m, &m).unwrap() - 1.0).abs() < 1e-12);
        let spec = StateSpec::Tmsv { r: 0.4, phi: 0.0, n: 2 };
        let t = twirled_closed_form::<f64>(&spec, &p).unwrap();
        let dense = fidelity(&t.embed_reduced(), &m.embed_reduced()).unwrap();
        assert!((fidelity(&t, &m).unwrap() - dense).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let p = PartitionSpec::new(vec![Sector::from_eta(0.6), Sector::from_eta(0.3)], false).unwrap();
        let basis = enumerate_basis(2, 3).unwrap();
        let rho = random_pure(&basis, 4);
        let t = twirl_analytic(&rho, &[0, 1], &p, 3).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        let back: BlockOperator<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(t.max_abs_diff(&back), 0.0);
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
    }

    #[test]
    fn f32_smoke() {
        let p = PartitionSpec::balanced(true);
        let spec = StateSpec::Tmsv { r: 0.3, phi: 0.0, n: 4 };
        let (basis, v) = make_state::<f32>(&spec).unwrap();
        let rho = DenseOperator::from_pure(&basis, &v).unwrap();
        let t = twirl_analytic(&rho, &[0, 0], &p, 4).unwrap();
        let cf = twirled_closed_form::<f32>(&spec, &p).unwrap();
        assert!(t.max_abs_diff(&cf) < 1e-5);
        assert!((fidelity(&t, &cf).unwrap() - 1.0).abs() < 1e-4);
    }
}
