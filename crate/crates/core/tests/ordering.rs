//! Ordered powers of the total number operator against a sparse brute force
//! that applies every ladder-operator string to untruncated occupations.

use std::collections::HashMap;

use wfh::fock::enumerate_basis;
use wfh::optics::{number_power_antinormal, number_power_normal};

type Sparse = HashMap<Vec<u32>, f64>;

fn lower(v: &Sparse, mode: usize) -> Sparse {
    let mut out = Sparse::new();
    for (occ, c) in v {
        if occ[mode] > 0 {
            let mut o = occ.clone();
            o[mode] -= 1;
            *out.entry(o).or_default() += c * (occ[mode] as f64).sqrt();
        }
    }
    out
}

fn raise(v: &Sparse, mode: usize) -> Sparse {
    let mut out = Sparse::new();
    for (occ, c) in v {
        let mut o = occ.clone();
        o[mode] += 1;
        *out.entry(o).or_default() += c * ((occ[mode] + 1) as f64).sqrt();
    }
    out
}

/// `Σ_{i₁..i_k} A_{i₁}…A_{i_k} B_{i₁}…B_{i_k} |occ⟩`, operators applied right to left.
fn ordered_power(occ: &[u32], k: usize, normal: bool) -> Sparse {
    let s = occ.len();
    let mut total = Sparse::new();
    let strings = s.pow(k as u32);
    for code in 0..strings {
        let idx: Vec<usize> = (0..k).map(|j| code / s.pow(j as u32) % s).collect();
        let mut v: Sparse = [(occ.to_vec(), 1.0)].into_iter().collect();
        for &i in idx.iter().rev() {
            v = if normal { lower(&v, i) } else { raise(&v, i) };
        }
        for &i in idx.iter().rev() {
            v = if normal { raise(&v, i) } else { lower(&v, i) };
        }
        for (o, c) in v {
            *total.entry(o).or_default() += c;
        }
    }
    total
}

#[test]
fn ordered_powers_match_falling_factorials() {
    for s in 1..=3usize {
        let n_tot = 8;
        let basis = enumerate_basis(s, n_tot).unwrap();
        for k in 0..=4usize {
            let normal = number_power_normal::<f64>(k, &basis);
            let anti = number_power_antinormal::<f64>(k, &basis);
            for (i, occ) in basis.states().iter().enumerate() {
                for (ordered, closed) in [(ordered_power(occ, k, true), &normal), (ordered_power(occ, k, false), &anti)] {
                    for (o, c) in &ordered {
                        if o != occ {
                            assert!(c.abs() < 1e-10, "off-diagonal {occ:?} -> {o:?}");
                        }
                    }
                    let diag = ordered.get(occ).copied().unwrap_or(0.0);
                    let want = closed.entries[(i, i)].re;
                    assert!((diag - want).abs() <= 1e-10 * want.abs().max(1.0), "S={s} k={k} {occ:?}: {diag} vs {want}");
                }
            }
            // The closed forms are diagonal.
            for op in [&normal, &anti] {
                let off: f64 = (0..basis.len())
                    .flat_map(|i| (0..basis.len()).map(move |j| (i, j)))
                    .filter(|(i, j)| i != j)
                    .map(|(i, j)| op.entries[(i, j)].norm())
                    .fold(0.0, f64::max);
                assert_eq!(off, 0.0);
            }
        }
    }
}
