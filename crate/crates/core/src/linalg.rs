//! Small dense helpers shared by the modules: Hermitian spectra, PSD square
//! roots, fidelity kernels and exact-ish combinatorics.

use nalgebra::{DMatrix, DVector};
use num_traits::{One, Zero};

use crate::{re, Real, C};

pub type CMat<T> = DMatrix<C<T>>;

/// Eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
pub fn herm_eig<T: Real>(m: &CMat<T>) -> (DVector<T>, CMat<T>) {
    let eig = m.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = CMat::<T>::zeros(n, n);
    for (j, &i) in idx.iter().enumerate() {
        vecs.set_column(j, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

pub fn herm_eigenvalues<T: Real>(m: &CMat<T>) -> DVector<T> {
    herm_eig(m).0
}

pub fn min_eig<T: Real>(m: &CMat<T>) -> T {
    let v = herm_eigenvalues(m);
    v.iter().copied().fold(T::max_value().unwrap(), |a, b| a.min(b))
}

pub fn max_eig<T: Real>(m: &CMat<T>) -> T {
    let v = herm_eigenvalues(m);
    v.iter().copied().fold(T::min_value().unwrap(), |a, b| a.max(b))
}

/// `f` applied to the spectrum of a Hermitian matrix.
pub fn herm_apply<T: Real>(m: &CMat<T>, f: impl Fn(T) -> T) -> CMat<T> {
    let (vals, vecs) = herm_eig(m);
    let n = vals.len();
    let mut scaled = vecs.clone();
    for j in 0..n {
        let s = C::new(f(vals[j]), T::zero());
        for i in 0..n {
            scaled[(i, j)] *= s;
        }
    }
    scaled * vecs.adjoint()
}

/// Square root of the PSD part. Eigenvalues below `n·ε·λ_max` are treated
/// as zero so rank-deficient inputs do not pick up `√ε` noise.
pub fn psd_sqrt<T: Real>(m: &CMat<T>) -> CMat<T> {
    let vals = herm_eigenvalues(m);
    let top = vals.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
    let cut = top * T::default_epsilon() * re::<T>(4.0 * m.nrows().max(1) as f64);
    herm_apply(m, |x| if x > cut { x.sqrt() } else { T::zero() })
}

/// `tr √(√a b √a)`, computed as the nuclear norm of `√b √a`.
pub fn root_fidelity<T: Real>(a: &CMat<T>, b: &CMat<T>) -> T {
    let prod = psd_sqrt(b) * psd_sqrt(a);
    prod.singular_values().iter().fold(T::zero(), |acc, &x| acc + x)
}

pub fn hermitize<T: Real>(m: &CMat<T>) -> CMat<T> {
    (m + m.adjoint()) * C::new(re::<T>(0.5), T::zero())
}

pub fn max_abs<T: Real>(m: &CMat<T>) -> T {
    m.iter().fold(T::zero(), |acc, z| acc.max(cabs(*z)))
}

pub fn max_abs_diff<T: Real>(a: &CMat<T>, b: &CMat<T>) -> T {
    max_abs(&(a - b))
}

pub fn trace_re<T: Real>(m: &CMat<T>) -> T {
    (0..m.nrows()).fold(T::zero(), |acc, i| acc + m[(i, i)].re)
}

/// `Re tr(a b)`; for Hermitian operands this is the exact trace.
pub fn trace_prod_re<T: Real>(a: &CMat<T>, b: &CMat<T>) -> T {
    let n = a.nrows();
    let mut acc = T::zero();
    for i in 0..n {
        for j in 0..n {
            let x = a[(i, j)];
            let y = b[(j, i)];
            acc += x.re * y.re - x.im * y.im;
        }
    }
    acc
}

pub fn kron<T: Real>(a: &CMat<T>, b: &CMat<T>) -> CMat<T> {
    a.kronecker(b)
}

pub fn identity<T: Real>(n: usize) -> CMat<T> {
    CMat::<T>::identity(n, n)
}

/// `|z|`.
pub fn cabs<T: Real>(z: C<T>) -> T {
    z.norm_sqr().sqrt()
}

pub fn cr<T: Real>(x: T) -> C<T> {
    C::new(x, T::zero())
}

/// `n!` in `T`.
pub fn factorial<T: Real>(n: usize) -> T {
    (1..=n).fold(T::one(), |acc, k| acc * re::<T>(k as f64))
}

/// `√(n!)`, accumulated as a product of roots to stay finite longer.
pub fn sqrt_factorial<T: Real>(n: usize) -> T {
    (1..=n).fold(T::one(), |acc, k| acc * re::<T>(k as f64).sqrt())
}

pub fn binomial<T: Real>(n: usize, k: usize) -> T {
    if k > n {
        return T::zero();
    }
    let k = k.min(n - k);
    let mut acc = T::one();
    for i in 0..k {
        acc = acc * re::<T>((n - i) as f64) / re::<T>((i + 1) as f64);
    }
    acc
}

/// `x^n` by repeated multiplication.
pub fn powi<T: Real>(x: T, n: usize) -> T {
    let mut acc = T::one();
    for _ in 0..n {
        acc *= x;
    }
    acc
}

pub fn cpowi<T: Real>(z: C<T>, n: usize) -> C<T> {
    let mut acc = C::<T>::one();
    for _ in 0..n {
        acc *= z;
    }
    acc
}

pub fn czero<T: Real>() -> C<T> {
    C::<T>::zero()
}

/// Numerical rank: singular values at or above `rel_tol · σ_max`.
pub fn rank<T: Real>(m: &CMat<T>, rel_tol: T) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().copied().fold(T::zero(), |a, b| a.max(b));
    if smax <= T::zero() {
        return 0;
    }
    sv.iter().filter(|&&s| s >= rel_tol * smax).count()
}
