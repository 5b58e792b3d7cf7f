//! POVMs on the twirled-state space.
//!
//! Counter 1 reads the outputs `η a + ζ b` of every sector beam splitter,
//! counter 2 reads `ζ a − η b`; the probe `γ` enters `b₁`. With this
//! convention a probe alone gives counter 1 a Poisson mean of `ζ²|γ|²`.
//!
//! Finite-resolution counters are modelled by overflow outcomes `>`
//! ("more than N_c photons"). Loss and detector response act as column
//! stochastic maps on a fine POVM resolved up to `conv_cut`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::linalg::{self, CMat};
use crate::optics::PartitionSpec;
use crate::twirl::BlockOperator;
use crate::{f64_of, re, Error, Real, Result, C};

/// Reading of one counter: a resolved count or overflow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Count {
    N(u32),
    Over,
}

impl Count {
    /// Position in an outcome list with `n_c` resolved counts.
    pub fn index(self, n_c: usize) -> usize {
        match self {
            Count::N(k) => k as usize,
            Count::Over => n_c + 1,
        }
    }

    pub fn from_index(i: usize, n_c: usize) -> Self {
        if i > n_c {
            Count::Over
        } else {
            Count::N(i as u32)
        }
    }
}

impl fmt::Display for Count {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Count::N(k) => write!(f, "{k}"),
            Count::Over => write!(f, ">"),
        }
    }
}

impl FromStr for Count {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == ">" {
            return Ok(Count::Over);
        }
        s.parse::<u32>()
            .map(Count::N)
            .map_err(|_| Error::invalid(format!("bad count {s:?}")))
    }
}

/// Measurement outcome label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    /// Both counters.
    Pair(Count, Count),
    /// One counter.
    Single(Count),
    /// Two click detectors, `true` meaning at least one photon.
    Click(bool, bool),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = |b: bool| if b { "I" } else { "0" };
        match self {
            Outcome::Pair(a, b) => write!(f, "({a},{b})"),
            Outcome::Single(a) => write!(f, "{a}"),
            Outcome::Click(a, b) => write!(f, "({},{})", c(*a), c(*b)),
        }
    }
}

impl FromStr for Outcome {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if let Some(inner) = t.strip_prefix('(').and_then(|r| r.strip_suffix(')')) {
            let (a, b) = inner
                .split_once(',')
                .ok_or_else(|| Error::invalid(format!("bad outcome {s:?}")))?;
            let (a, b) = (a.trim(), b.trim());
            let click = |x: &str| match x {
                "I" => Some(true),
                "0" => Some(false),
                _ => None,
            };
            if a == "I" || b == "I" {
                return match (click(a), click(b)) {
                    (Some(x), Some(y)) => Ok(Outcome::Click(x, y)),
                    _ => Err(Error::invalid(format!("bad outcome {s:?}"))),
                };
            }
            return Ok(Outcome::Pair(a.parse()?, b.parse()?));
        }
        Ok(Outcome::Single(t.parse()?))
    }
}

impl Serialize for Outcome {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Outcome {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One POVM element with its label and probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PovmElement<T: Real> {
    pub outcome: Outcome,
    pub op: BlockOperator<T>,
    #[serde(with = "crate::serde_complex")]
    pub gamma: Complex64,
}

/// Complete POVM of one measurement setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Povm<T: Real> {
    #[serde(with = "crate::serde_complex")]
    pub gamma: Complex64,
    /// Largest block max-norm left out by the adaptive series.
    pub tail_bound: f64,
    pub elements: Vec<PovmElement<T>>,
}

impl<T: Real> Povm<T> {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn outcomes(&self) -> Vec<Outcome> {
        self.elements.iter().map(|e| e.outcome).collect()
    }

    pub fn element(&self, outcome: &Outcome) -> Option<&PovmElement<T>> {
        self.elements.iter().find(|e| &e.outcome == outcome)
    }

    pub fn partition(&self) -> &PartitionSpec {
        self.elements[0].op.partition()
    }

    pub fn n(&self) -> usize {
        self.elements[0].op.n()
    }

    pub fn total(&self) -> BlockOperator<T> {
        let mut s = BlockOperator::zeros(self.partition(), self.n());
        for e in &self.elements {
            s.axpy(T::one(), &e.op);
        }
        s
    }

    /// Max-norm distance of `Σ Π` from the identity.
    pub fn completeness_error(&self) -> T {
        self.total().max_abs_diff(&BlockOperator::identity(self.partition(), self.n()))
    }

    pub fn min_eig(&self) -> T {
        self.elements.iter().fold(T::max_value().unwrap(), |a, e| a.min(e.op.min_eig()))
    }

    /// Born probabilities `tr(ρ Π)` in element order.
    pub fn probabilities(&self, rho: &BlockOperator<T>) -> Result<Vec<T>> {
        self.elements
            .iter()
            .map(|e| {
                rho.check_same(&e.op)?;
                Ok(rho.trace_with(&e.op))
            })
            .collect()
    }
}

/// Counter setup of one measurement setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterConfig {
    /// 1 or 2.
    #[serde(default = "default_counters")]
    pub counters: u8,
    /// Which counter is kept when `counters == 1`.
    #[serde(default = "default_counter_index")]
    pub counter_index: u8,
    #[serde(rename = "N_c")]
    pub n_c: usize,
    /// Click detectors instead of counters (two detectors, no resolution).
    #[serde(default)]
    pub click: bool,
    /// Detection efficiencies `(ν₁, ν₂)`.
    #[serde(default)]
    pub loss: Option<[f64; 2]>,
    /// Response matrices `T′ᵢ`: rows `0..=N_c` then `>`, columns `0..=conv_cut`.
    #[serde(default)]
    pub response: Option<[Vec<Vec<f64>>; 2]>,
    #[serde(default = "default_conv_cut")]
    pub conv_cut: usize,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
}

fn default_counters() -> u8 {
    2
}
fn default_counter_index() -> u8 {
    1
}
fn default_conv_cut() -> usize {
    DEFAULT_CONV_CUT
}
fn default_tail_tol() -> f64 {
    DEFAULT_TAIL_TOL
}

pub const DEFAULT_CONV_CUT: usize = 25;
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;
const MAX_SERIES: usize = 500;

impl CounterConfig {
    /// Two ideal counters resolving up to `n_c`.
    pub fn two(n_c: usize) -> Self {
        CounterConfig {
            counters: 2,
            counter_index: 1,
            n_c,
            click: false,
            loss: None,
            response: None,
            conv_cut: DEFAULT_CONV_CUT,
            tail_tol: DEFAULT_TAIL_TOL,
        }
    }

    /// One ideal counter (`index` 1 or 2).
    pub fn single(n_c: usize, index: u8) -> Self {
        CounterConfig { counters: 1, counter_index: index, ..Self::two(n_c) }
    }

    /// Two click detectors.
    pub fn clicks() -> Self {
        CounterConfig { click: true, ..Self::two(0) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.counters) {
            return Err(Error::invalid("counters must be 1 or 2"));
        }
        if !(1..=2).contains(&self.counter_index) {
            return Err(Error::invalid("counter_index must be 1 or 2"));
        }
        if self.click && (self.counters != 2 || self.n_c != 0) {
            return Err(Error::invalid("click detectors come as a pair with N_c = 0"));
        }
        if !(self.tail_tol > 0.0) {
            return Err(Error::invalid("tail_tol must be positive"));
        }
        if let Some(l) = self.loss {
            for nu in l {
                check_nu(nu)?;
            }
        }
        if self.needs_fine() && self.conv_cut <= self.n_c {
            return Err(Error::invalid(format!(
                "conv_cut {} must exceed N_c {}",
                self.conv_cut, self.n_c
            )));
        }
        if let Some(r) = &self.response {
            for t in r {
                check_stochastic(t, self.n_c + 2, self.conv_cut + 1)?;
            }
        }
        Ok(())
    }

    fn needs_fine(&self) -> bool {
        self.loss.is_some() || self.response.is_some()
    }
}

fn check_nu(nu: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&nu) {
        return Err(Error::invalid(format!("efficiency {nu} outside [0, 1]")));
    }
    Ok(())
}

fn check_stochastic(t: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
    if t.len() != rows || t.iter().any(|r| r.len() != cols) {
        return Err(Error::dimension(format!("response matrix must be {rows}x{cols}")));
    }
    for c in 0..cols {
        let s: f64 = t.iter().map(|r| r[c]).sum();
        if t.iter().any(|r| r[c] < -1e-12) || (s - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("response column {c} is not a probability vector (sum {s})")));
        }
    }
    Ok(())
}

/// Mode-1 factors `A_{k₁l₁}` of the two-counter elements, cached.
///
/// `A_{k₁l₁}(x, y) = v_x v̄_y` with
/// `v_x = e^{−|γ|²/2} √(x!)/√(k₁! l₁!) · [tˣ] (ηt + ζγ̄)^{k₁} (ζt − ηγ̄)^{l₁}`,
/// evaluated in log space.
struct ModeOne {
    gamma: Complex64,
    eta: f64,
    zeta: f64,
    dim: usize,
    ln_fact: Vec<f64>,
    cache: HashMap<(usize, usize), DMatrix<Complex64>>,
}

impl ModeOne {
    fn new(gamma: Complex64, eta: f64, zeta: f64, dim: usize) -> Self {
        ModeOne { gamma, eta, zeta, dim, ln_fact: vec![0.0], cache: HashMap::new() }
    }

    fn ln_fact(&mut self, n: usize) -> f64 {
        while self.ln_fact.len() <= n {
            let m = self.ln_fact.len();
            let last = self.ln_fact[m - 1];
            self.ln_fact.push(last + (m as f64).ln());
        }
        self.ln_fact[n]
    }

    /// Coefficients of `(u t + w)^n` with real `u > 0`, divided by `√(n!)`.
    fn scaled_binomial_poly(&mut self, n: usize, u: f64, w: Complex64) -> Vec<Complex64> {
        let lf = self.ln_fact(n);
        let (wn, wph) = (w.norm(), if w.norm() > 0.0 { w / w.norm() } else { Complex64::new(1.0, 0.0) });
        (0..=n)
            .map(|p| {
                let e = n - p;
                if e > 0 && wn == 0.0 {
                    return Complex64::new(0.0, 0.0);
                }
                let ln = 0.5 * lf - self.ln_fact(p) - self.ln_fact(e)
                    + p as f64 * u.ln()
                    + if e > 0 { e as f64 * wn.ln() } else { 0.0 };
                wph.powu(e as u32) * ln.exp()
            })
            .collect()
    }

    fn get(&mut self, k1: usize, l1: usize) -> &DMatrix<Complex64> {
        if !self.cache.contains_key(&(k1, l1)) {
            let gc = self.gamma.conj();
            let p1 = self.scaled_binomial_poly(k1, self.eta, gc * self.zeta);
            let p2 = self.scaled_binomial_poly(l1, self.zeta, -gc * self.eta);
            let pre = (-0.5 * self.gamma.norm_sqr()).exp();
            let mut v = DVector::<Complex64>::zeros(self.dim);
            for x in 0..self.dim.min(k1 + l1 + 1) {
                let mut acc = Complex64::new(0.0, 0.0);
                for p in x.saturating_sub(l1)..=x.min(k1) {
                    acc += p1[p] * p2[x - p];
                }
                v[x] = acc * (0.5 * self.ln_fact(x)).exp() * pre;
            }
            self.cache.insert((k1, l1), &v * v.adjoint());
        }
        &self.cache[&(k1, l1)]
    }
}

/// Builder for the analytic two-counter elements of one probe amplitude.
pub struct PiBuilder<T: Real> {
    gamma: Complex64,
    partition: PartitionSpec,
    n: usize,
    mode1: ModeOne,
    /// Per tuple entry `(η², ζ²)`.
    aux: Vec<(f64, f64)>,
    template: BlockOperator<T>,
}

impl<T: Real> PiBuilder<T> {
    pub fn new(gamma: Complex64, partition: &PartitionSpec, n: usize) -> Self {
        let s1 = partition.sectors()[0];
        let aux = (0..partition.tuple_len())
            .map(|j| {
                let s = partition.sectors()[partition.tuple_sector(j)];
                (s.eta * s.eta, s.zeta * s.zeta)
            })
            .collect();
        PiBuilder {
            gamma,
            partition: partition.clone(),
            n,
            mode1: ModeOne::new(gamma, s1.eta, s1.zeta, n + 1),
            aux,
            template: BlockOperator::zeros(partition, n),
        }
    }

    pub fn gamma(&self) -> Complex64 {
        self.gamma
    }

    /// `Π_kl`: counter 1 sees `k` photons, counter 2 sees `l`.
    pub fn pi_kl(&mut self, k: usize, l: usize) -> BlockOperator<T> {
        let mut out = self.template.clone();
        let tuples = out.tuples().to_vec();
        for (bi, t) in tuples.iter().enumerate() {
            let d = out.blocks()[bi].nrows();
            let mut acc = DMatrix::<Complex64>::zeros(d, d);
            let mut splits = Vec::new();
            enumerate_splits(t, &self.aux, 0, 0, 0, 1.0, &mut splits);
            for (ks, ls, w) in splits {
                if ks > k || ls > l || w == 0.0 {
                    continue;
                }
                let a = self.mode1.get(k - ks, l - ls);
                acc += a.view((0, 0), (d, d)) * Complex64::new(w, 0.0);
            }
            out.blocks_mut()[bi] = to_t(&acc);
        }
        out
    }

    /// `Π_k` (counter 1, `index = 1`) or `Π_{·k}` (counter 2, `index = 2`):
    /// the other counter summed out until three consecutive terms fall below
    /// `tail_tol` in block max-norm. Returns the element and the size of the
    /// last term added.
    pub fn pi_marginal(&mut self, k: usize, index: u8, tail_tol: f64) -> Result<(BlockOperator<T>, f64)> {
        let s1 = self.partition.sectors()[0];
        let mean = if index == 1 { s1.eta * s1.eta } else { s1.zeta * s1.zeta } * self.gamma.norm_sqr();
        let guard = mean.ceil() as usize + self.n;
        let mut acc = self.template.clone();
        let mut small = 0;
        for j in 0..=MAX_SERIES {
            let term = if index == 1 { self.pi_kl(k, j) } else { self.pi_kl(j, k) };
            let size = f64_of(term.max_abs());
            acc.axpy(T::one(), &term);
            small = if size < tail_tol { small + 1 } else { 0 };
            if small >= 3 && j >= guard {
                return Ok((acc, size));
            }
        }
        Err(Error::numerical(format!(
            "marginal series for count {k} did not converge within {MAX_SERIES} terms"
        )))
    }
}

/// Ways to split each tuple entry's photons between the counters:
/// `(Σk_s, Σl_s, Π C(i_s,k_s) η_s^{2k_s} ζ_s^{2l_s})`.
fn enumerate_splits(t: &[u32], aux: &[(f64, f64)], pos: usize, ks: usize, ls: usize, w: f64, out: &mut Vec<(usize, usize, f64)>) {
    if pos == t.len() {
        out.push((ks, ls, w));
        return;
    }
    let i = t[pos] as usize;
    let (e2, z2) = aux[pos];
    for k in 0..=i {
        let c = linalg::binomial::<f64>(i, k) * e2.powi(k as i32) * z2.powi((i - k) as i32);
        enumerate_splits(t, aux, pos + 1, ks + k, ls + i - k, w * c, out);
    }
}

fn to_t<T: Real>(m: &DMatrix<Complex64>) -> CMat<T> {
    m.map(|z| C::new(re::<T>(z.re), re::<T>(z.im)))
}

/// One analytic element `Π_kl`.
pub fn pi_kl<T: Real>(gamma: Complex64, k: usize, l: usize, partition: &PartitionSpec, n: usize) -> PovmElement<T> {
    let op = PiBuilder::new(gamma, partition, n).pi_kl(k, l);
    PovmElement { outcome: Outcome::Pair(Count::N(k as u32), Count::N(l as u32)), op, gamma }
}

/// Single-counter element for counter `index` (1 or 2) reading `k`.
pub fn pi_k<T: Real>(
    gamma: Complex64,
    k: usize,
    partition: &PartitionSpec,
    n: usize,
    tail_tol: f64,
    index: u8,
) -> Result<PovmElement<T>> {
    if !(tail_tol > 0.0) {
        return Err(Error::invalid("tail_tol must be positive"));
    }
    if !(1..=2).contains(&index) {
        return Err(Error::invalid("counter index must be 1 or 2"));
    }
    let (op, _) = PiBuilder::new(gamma, partition, n).pi_marginal(k, index, tail_tol)?;
    Ok(PovmElement { outcome: Outcome::Single(Count::N(k as u32)), op, gamma })
}

const OVERFLOW_NEG_TOL: f64 = 1e-6;

fn check_overflow<T: Real>(op: &BlockOperator<T>, what: &str) -> Result<()> {
    let m = f64_of(op.min_eig());
    if m < -OVERFLOW_NEG_TOL {
        return Err(Error::numerical(format!(
            "overflow element {what} has eigenvalue {m:.3e}; truncation is inconsistent"
        )));
    }
    Ok(())
}

/// Overflow elements from complements: returns `(Π_{k,>} for k ≤ N_c,
/// Π_{>,l} for l ≤ N_c, Π_{>,>})`.
///
/// `grid[k][l] = Π_kl`, `rows[k] = Π_k`, `cols[l] = Π_{·l}`.
#[allow(clippy::type_complexity)]
pub fn overflow_elements<T: Real>(
    grid: &[Vec<BlockOperator<T>>],
    rows: &[BlockOperator<T>],
    cols: &[BlockOperator<T>],
    n_c: usize,
) -> Result<(Vec<BlockOperator<T>>, Vec<BlockOperator<T>>, BlockOperator<T>)> {
    if grid.len() != n_c + 1 || rows.len() != n_c + 1 || cols.len() != n_c + 1 || grid.iter().any(|r| r.len() != n_c + 1) {
        return Err(Error::dimension("overflow inputs must cover counts 0..=N_c"));
    }
    let base = &grid[0][0];
    for op in grid.iter().flatten().chain(rows).chain(cols) {
        base.check_same(op)?;
    }
    let mut k_over = Vec::with_capacity(n_c + 1);
    let mut over_l = Vec::with_capacity(n_c + 1);
    let mut over_over = BlockOperator::identity(base.partition(), base.n());
    for k in 0..=n_c {
        let mut e = rows[k].clone();
        for l in 0..=n_c {
            e.axpy(-T::one(), &grid[k][l]);
            over_over.axpy(T::one(), &grid[k][l]);
        }
        check_overflow(&e, &format!("({k},>)"))?;
        k_over.push(e);
        over_over.axpy(-T::one(), &rows[k]);
    }
    for l in 0..=n_c {
        let mut e = cols[l].clone();
        for row in grid.iter() {
            e.axpy(-T::one(), &row[l]);
        }
        check_overflow(&e, &format!("(>,{l})"))?;
        over_l.push(e);
        over_over.axpy(-T::one(), &cols[l]);
    }
    check_overflow(&over_over, "(>,>)")?;
    Ok((k_over, over_l, over_over))
}

/// Ideal two-counter POVM with `(N_c+2)²` elements, ordered row-major with
/// `>` after `N_c`.
pub fn two_counter_povm<T: Real>(
    gamma: Complex64,
    partition: &PartitionSpec,
    n: usize,
    n_c: usize,
    tail_tol: f64,
) -> Result<Povm<T>> {
    let mut b = PiBuilder::<T>::new(gamma, partition, n);
    let grid: Vec<Vec<BlockOperator<T>>> = (0..=n_c).map(|k| (0..=n_c).map(|l| b.pi_kl(k, l)).collect()).collect();
    let mut tail: f64 = 0.0;
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    for k in 0..=n_c {
        let (r, t1) = b.pi_marginal(k, 1, tail_tol)?;
        let (c, t2) = b.pi_marginal(k, 2, tail_tol)?;
        tail = tail.max(t1).max(t2);
        rows.push(r);
        cols.push(c);
    }
    let (k_over, over_l, over_over) = overflow_elements(&grid, &rows, &cols, n_c)?;
    let mut elements = Vec::with_capacity((n_c + 2) * (n_c + 2));
    let mut grid = grid;
    for k in 0..=n_c + 1 {
        for l in 0..=n_c + 1 {
            let op = match (k <= n_c, l <= n_c) {
                (true, true) => std::mem::replace(&mut grid[k][l], BlockOperator::zeros(partition, n)),
                (true, false) => k_over[k].clone(),
                (false, true) => over_l[l].clone(),
                (false, false) => over_over.clone(),
            };
            let outcome = Outcome::Pair(Count::from_index(k, n_c), Count::from_index(l, n_c));
            elements.push(PovmElement { outcome, op, gamma });
        }
    }
    Ok(Povm { gamma, tail_bound: tail, elements })
}

/// Ideal single-counter POVM: `Π_k` for `k ≤ N_c` and `Π_> = I − Σ Π_k`.
pub fn single_counter_povm<T: Real>(
    gamma: Complex64,
    partition: &PartitionSpec,
    n: usize,
    n_c: usize,
    index: u8,
    tail_tol: f64,
) -> Result<Povm<T>> {
    if !(1..=2).contains(&index) {
        return Err(Error::invalid("counter index must be 1 or 2"));
    }
    let mut b = PiBuilder::<T>::new(gamma, partition, n);
    let mut elements = Vec::with_capacity(n_c + 2);
    let mut rest = BlockOperator::identity(partition, n);
    let mut tail: f64 = 0.0;
    for k in 0..=n_c {
        let (op, t) = b.pi_marginal(k, index, tail_tol)?;
        tail = tail.max(t);
        rest.axpy(-T::one(), &op);
        elements.push(PovmElement { outcome: Outcome::Single(Count::N(k as u32)), op, gamma });
    }
    check_overflow(&rest, ">")?;
    elements.push(PovmElement { outcome: Outcome::Single(Count::Over), op: rest, gamma });
    Ok(Povm { gamma, tail_bound: tail, elements })
}

/// Binomial thinning on counts `0..=m_max`:
/// `L_{km} = C(m,k) ν^k (1−ν)^{m−k}`. Lower triangular, column stochastic,
/// and `L(ν_b) L(ν_a) = L(ν_a ν_b)`.
pub fn loss_matrix(nu: f64, m_max: usize) -> Result<Vec<Vec<f64>>> {
    check_nu(nu)?;
    Ok((0..=m_max)
        .map(|k| {
            (0..=m_max)
                .map(|m| {
                    if k > m {
                        0.0
                    } else {
                        linalg::binomial::<f64>(m, k) * nu.powi(k as i32) * (1.0 - nu).powi((m - k) as i32)
                    }
                })
                .collect()
        })
        .collect())
}

/// Rows `0..=n_c` kept, rows above merged into a final `>` row.
pub fn coarse_grain_matrix(n_c: usize, m_max: usize) -> Vec<Vec<f64>> {
    (0..=n_c + 1)
        .map(|k| (0..=m_max).map(|m| if (k <= n_c && k == m) || (k > n_c && m > n_c) { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let inner = b.len();
    let cols = b.first().map_or(0, |r| r.len());
    a.iter()
        .map(|row| (0..cols).map(|j| (0..inner).map(|i| row[i] * b[i][j]).sum()).collect())
        .collect()
}

/// `T′ = T · L(ν)`: response of a detector with efficiency `ν` in front of
/// a detector with response `T`. Columns of `T` index photons `0..=m_max`.
pub fn response_with_loss(t: &[Vec<f64>], nu: f64) -> Result<Vec<Vec<f64>>> {
    let m_max = t.first().map_or(0, |r| r.len()).saturating_sub(1);
    check_stochastic(t, t.len(), m_max + 1)?;
    Ok(mat_mul(t, &loss_matrix(nu, m_max)?))
}

/// Counts of a POVM's outcome grid: `n_c` for pair or single POVMs.
fn resolved_counts<T: Real>(povm: &Povm<T>) -> Result<usize> {
    let mut n_c = 0;
    for e in &povm.elements {
        match e.outcome {
            Outcome::Pair(a, b) => {
                for c in [a, b] {
                    if let Count::N(k) = c {
                        n_c = n_c.max(k as usize);
                    }
                }
            }
            Outcome::Single(Count::N(k)) => n_c = n_c.max(k as usize),
            Outcome::Single(Count::Over) => {}
            Outcome::Click(..) => return Err(Error::invalid("click POVMs have no count grid")),
        }
    }
    Ok(n_c)
}

fn is_pair<T: Real>(povm: &Povm<T>) -> bool {
    matches!(povm.elements.first().map(|e| e.outcome), Some(Outcome::Pair(..)))
}

/// `Π″_{kl} = Σ_{m,n} T₁[k][m] T₂[l][n] Π_{mn}` for a two-counter POVM whose
/// overflow outcome sits at index `N_c + 1`. Output rows `0..` map to counts
/// with the last row as overflow.
pub fn mix_pair<T: Real>(povm: &Povm<T>, t1: &[Vec<f64>], t2: &[Vec<f64>]) -> Result<Povm<T>> {
    if !is_pair(povm) {
        return Err(Error::invalid("expected a two-counter POVM"));
    }
    let n_in = resolved_counts(povm)? + 2;
    for t in [t1, t2] {
        check_stochastic(t, t.len(), n_in)?;
        if t.len() < 2 {
            return Err(Error::dimension("response needs at least one count row and an overflow row"));
        }
    }
    let (r1, r2) = (t1.len(), t2.len());
    let n_out1 = r1 - 2;
    let n_out2 = r2 - 2;
    let (partition, n) = (povm.partition().clone(), povm.n());
    let mut grid: Vec<Option<&BlockOperator<T>>> = vec![None; n_in * n_in];
    for e in &povm.elements {
        if let Outcome::Pair(a, b) = e.outcome {
            grid[a.index(n_in - 2) * n_in + b.index(n_in - 2)] = Some(&e.op);
        }
    }
    let zero = BlockOperator::<T>::zeros(&partition, n);
    // Contract counter 2 first, then counter 1.
    let mut half: Vec<BlockOperator<T>> = Vec::with_capacity(n_in * r2);
    for m in 0..n_in {
        for l in 0..r2 {
            let mut acc = zero.clone();
            for nn in 0..n_in {
                let w = t2[l][nn];
                if w != 0.0 {
                    if let Some(op) = grid[m * n_in + nn] {
                        acc.axpy(re(w), op);
                    }
                }
            }
            half.push(acc);
        }
    }
    let mut elements = Vec::with_capacity(r1 * r2);
    for k in 0..r1 {
        for l in 0..r2 {
            let mut acc = zero.clone();
            for m in 0..n_in {
                let w = t1[k][m];
                if w != 0.0 {
                    acc.axpy(re(w), &half[m * r2 + l]);
                }
            }
            let outcome = Outcome::Pair(Count::from_index(k, n_out1), Count::from_index(l, n_out2));
            elements.push(PovmElement { outcome, op: acc, gamma: povm.gamma });
        }
    }
    Ok(Povm { gamma: povm.gamma, tail_bound: povm.tail_bound, elements })
}

/// Single-counter analogue of [`mix_pair`].
pub fn mix_single<T: Real>(povm: &Povm<T>, t: &[Vec<f64>]) -> Result<Povm<T>> {
    if is_pair(povm) {
        return Err(Error::invalid("expected a single-counter POVM"));
    }
    let n_in = resolved_counts(povm)? + 2;
    check_stochastic(t, t.len(), n_in)?;
    if t.len() < 2 {
        return Err(Error::dimension("response needs at least one count row and an overflow row"));
    }
    let n_out = t.len() - 2;
    let mut ops: Vec<Option<&BlockOperator<T>>> = vec![None; n_in];
    for e in &povm.elements {
        if let Outcome::Single(a) = e.outcome {
            ops[a.index(n_in - 2)] = Some(&e.op);
        }
    }
    let zero = BlockOperator::<T>::zeros(povm.partition(), povm.n());
    let elements = (0..t.len())
        .map(|k| {
            let mut acc = zero.clone();
            for (m, op) in ops.iter().enumerate() {
                if let (Some(op), true) = (op, t[k][m] != 0.0) {
                    acc.axpy(re(t[k][m]), op);
                }
            }
            PovmElement { outcome: Outcome::Single(Count::from_index(k, n_out)), op: acc, gamma: povm.gamma }
        })
        .collect();
    Ok(Povm { gamma: povm.gamma, tail_bound: povm.tail_bound, elements })
}

/// Binomial loss on each counter, treating the overflow outcome as
/// `N_c + 1` photons. Applied to a POVM resolved up to `conv_cut − 1` this
/// is the loss model with sums cut at `conv_cut`; the outcome set is kept.
pub fn apply_loss<T: Real>(povm: &Povm<T>, nu_1: f64, nu_2: f64) -> Result<Povm<T>> {
    let size = resolved_counts(povm)? + 1;
    if is_pair(povm) {
        mix_pair(povm, &loss_matrix(nu_1, size)?, &loss_matrix(nu_2, size)?)
    } else {
        check_nu(nu_2)?;
        mix_single(povm, &loss_matrix(nu_1, size)?)
    }
}

/// `Π″_{kl} = Σ T′₁[k][m] T′₂[l][n] Π_{mn}` with column-stochastic
/// responses. Single-counter POVMs use the first matrix.
pub fn apply_detector_response<T: Real>(povm: &Povm<T>, t1: &[Vec<f64>], t2: &[Vec<f64>]) -> Result<Povm<T>> {
    if is_pair(povm) {
        mix_pair(povm, t1, t2)
    } else {
        mix_single(povm, t1)
    }
}

/// Relabel an `N_c = 0` two-counter POVM as click outcomes.
fn to_clicks<T: Real>(povm: Povm<T>) -> Povm<T> {
    let elements = povm
        .elements
        .into_iter()
        .map(|mut e| {
            if let Outcome::Pair(a, b) = e.outcome {
                e.outcome = Outcome::Click(a == Count::Over, b == Count::Over);
            }
            e
        })
        .collect();
    Povm { elements, ..povm }
}

/// Click-detector POVM `{(0,0), (0,I), (I,0), (I,I)}`: the two-counter POVM
/// with `N_c = 0`, overflow read as a click.
pub fn click_povm<T: Real>(gamma: Complex64, partition: &PartitionSpec, n: usize) -> Result<Povm<T>> {
    Ok(to_clicks(two_counter_povm(gamma, partition, n, 0, DEFAULT_TAIL_TOL)?))
}

/// POVM of one setting, including loss and detector response.
pub fn build_povm<T: Real>(gamma: Complex64, config: &CounterConfig, partition: &PartitionSpec, n: usize) -> Result<Povm<T>> {
    config.validate()?;
    let n_c = config.n_c;
    let povm = if !config.needs_fine() {
        if config.counters == 2 {
            two_counter_povm(gamma, partition, n, n_c, config.tail_tol)?
        } else {
            single_counter_povm(gamma, partition, n, n_c, config.counter_index, config.tail_tol)?
        }
    } else {
        let cut = config.conv_cut;
        let response = |i: usize| -> Result<Vec<Vec<f64>>> {
            let base = match &config.response {
                Some(r) => r[i].clone(),
                None => coarse_grain_matrix(n_c, cut),
            };
            match config.loss {
                Some(l) => Ok(mat_mul(&base, &loss_matrix(l[i], cut)?)),
                None => Ok(base),
            }
        };
        if config.counters == 2 {
            let fine = two_counter_povm(gamma, partition, n, cut - 1, config.tail_tol)?;
            mix_pair(&fine, &response(0)?, &response(1)?)?
        } else {
            let i = config.counter_index;
            let fine = single_counter_povm(gamma, partition, n, cut - 1, i, config.tail_tol)?;
            mix_single(&fine, &response(i as usize - 1)?)?
        }
    };
    Ok(if config.click { to_clicks(povm) } else { povm })
}

/// One measurement setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    #[serde(with = "crate::serde_complex")]
    pub gamma: Complex64,
    pub config: CounterConfig,
}

/// Settings sharing a partition and photon cutoff, with assembled POVMs.
#[derive(Clone, Debug)]
pub struct MeasurementContext<T: Real> {
    pub partition: PartitionSpec,
    pub n: usize,
    pub settings: Vec<Setting>,
    pub povms: Vec<Povm<T>>,
}

impl<T: Real> MeasurementContext<T> {
    /// Assembles every setting's POVM in parallel.
    pub fn build(partition: &PartitionSpec, n: usize, settings: Vec<Setting>) -> Result<Self> {
        use rayon::prelude::*;
        if settings.is_empty() {
            return Err(Error::invalid("a context needs at least one setting"));
        }
        let povms = settings
            .par_iter()
            .map(|s| build_povm(s.gamma, &s.config, partition, n))
            .collect::<Result<Vec<_>>>()?;
        Ok(MeasurementContext { partition: partition.clone(), n, settings, povms })
    }

    /// Same counter configuration for every probe.
    pub fn uniform(partition: &PartitionSpec, n: usize, gammas: &[Complex64], config: &CounterConfig) -> Result<Self> {
        let settings = gammas.iter().map(|&gamma| Setting { gamma, config: config.clone() }).collect();
        Self::build(partition, n, settings)
    }

    pub fn num_elements(&self) -> usize {
        self.povms.iter().map(|p| p.len()).sum()
    }
}

/// Rank of the stacked element vectors against the state-space dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IcReport {
    pub rank: usize,
    pub required: usize,
    pub is_ic: bool,
}

pub const RANK_TOL: f64 = 1e-10;

/// Informational completeness of a set of POVMs.
///
/// Each element is vectorized block by block (rows concatenated), the
/// vectors are stacked and the rank counts singular values at or above
/// `1e-10 · σ_max`. The required rank is the number of real parameters of a
/// Hermitian block operator, `Σ dim²`.
pub fn ic_check<T: Real>(povms: &[Povm<T>]) -> Result<IcReport> {
    let first = povms
        .iter()
        .flat_map(|p| p.elements.first())
        .next()
        .ok_or_else(|| Error::invalid("no POVM elements to check"))?;
    let required = first.op.num_params();
    let mut vecs = Vec::new();
    for p in povms {
        for e in &p.elements {
            first.op.check_same(&e.op)?;
            vecs.push(e.op.vectorize());
        }
    }
    let m = CMat::<T>::from_fn(required, vecs.len(), |i, j| vecs[j][i]);
    let rank = linalg::rank(&m, re(RANK_TOL));
    Ok(IcReport { rank, required, is_ic: rank == required })
}

impl<T: Real> MeasurementContext<T> {
    pub fn ic_check(&self) -> Result<IcReport> {
        ic_check(&self.povms)
    }
}
