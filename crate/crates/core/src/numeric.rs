//! Small numerical building blocks shared by the kernel, tree and solver code.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Result, SedError};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

/// Principal `k`-th root, branch cut on the negative real axis.
pub fn principal_root(z: C64, k: usize) -> C64 {
    if z == ZERO {
        return ZERO;
    }
    (z.ln() / k as f64).exp()
}

/// `exp(2 pi i (branch - 1) / s)` for `branch` in `1..=s`.
pub fn root_of_unity(branch: usize, s: usize) -> C64 {
    C64::from_polar(1.0, 2.0 * PI * (branch - 1) as f64 / s as f64)
}

/// Branch index in `1..=s` of the root of unity closest to `u`.
pub fn nearest_branch(u: C64, s: usize) -> usize {
    let k = (u.arg() * s as f64 / (2.0 * PI)).round() as i64;
    (k.rem_euclid(s as i64) + 1) as usize
}

/// Horner evaluation of `sum c[k] z^k` and its derivative.
pub fn poly_eval(c: &[C64], z: C64) -> (C64, C64) {
    let mut p = ZERO;
    let mut dp = ZERO;
    for &a in c.iter().rev() {
        dp = dp * z + p;
        p = p * z + a;
    }
    (p, dp)
}

/// All roots of `sum c[k] z^k` (ascending coefficients) from the eigenvalues
/// of the companion matrix, each refined by a few Newton steps.
pub fn poly_roots(c: &[C64]) -> Vec<C64> {
    let mut deg = c.len().saturating_sub(1);
    while deg > 0 && c[deg] == ZERO {
        deg -= 1;
    }
    if deg == 0 {
        return Vec::new();
    }
    let lead = c[deg];
    let mut comp = DMatrix::<C64>::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = ONE;
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -c[i] / lead;
    }
    let eig = comp
        .clone()
        .schur()
        .eigenvalues()
        .expect("complex Schur form is triangular");
    eig.iter().map(|&z| newton_polish(&c[..=deg], z, 4)).collect()
}

fn newton_polish(c: &[C64], mut z: C64, steps: usize) -> C64 {
    let mut best = poly_eval(c, z).0.norm();
    for _ in 0..steps {
        let (p, dp) = poly_eval(c, z);
        if dp == ZERO || p == ZERO {
            break;
        }
        let cand = z - p / dp;
        let r = poly_eval(c, cand).0.norm();
        if r < best {
            best = r;
            z = cand;
        } else {
            break;
        }
    }
    z
}

/// Winding number of `f` around the origin along the circle `|z - center| = radius`,
/// i.e. the number of zeros minus poles inside, sampled at `points` nodes.
pub fn winding_number<F: Fn(C64) -> C64>(f: F, center: C64, radius: f64, points: usize) -> i64 {
    let node = |k: usize| center + C64::from_polar(radius, 2.0 * PI * k as f64 / points as f64);
    let first = f(node(0));
    let mut prev = first;
    let mut total = 0.0;
    for k in 1..=points {
        let cur = if k == points { first } else { f(node(k)) };
        total += (cur / prev).arg();
        prev = cur;
    }
    (total / (2.0 * PI)).round() as i64
}

/// Iterative row/column equilibration (Ruiz) followed by LU. Fails with
/// `SingularSystem` when the 2-norm condition number of the equilibrated
/// matrix exceeds `max_cond`.
pub fn solve_equilibrated(
    a: &DMatrix<C64>,
    b: &DVector<C64>,
    max_cond: f64,
    context: &str,
) -> Result<(DVector<C64>, f64)> {
    let n = a.nrows();
    let singular = |condition: f64| SedError::SingularSystem {
        condition,
        context: context.to_string(),
    };
    let mut m = a.clone();
    let mut row_scale = vec![1.0; n];
    let mut col_scale = vec![1.0; n];
    for _ in 0..RUIZ_SWEEPS {
        let mut worst = 0.0f64;
        for i in 0..n {
            let r = m.row(i).iter().fold(0.0f64, |acc, z| acc.max(z.norm()));
            if r == 0.0 {
                return Err(singular(f64::INFINITY));
            }
            let f = r.sqrt();
            m.row_mut(i).scale_mut(1.0 / f);
            row_scale[i] *= f;
            worst = worst.max((1.0 - r).abs());
        }
        for j in 0..n {
            let c = m.column(j).iter().fold(0.0f64, |acc, z| acc.max(z.norm()));
            if c == 0.0 {
                return Err(singular(f64::INFINITY));
            }
            let f = c.sqrt();
            m.column_mut(j).scale_mut(1.0 / f);
            col_scale[j] *= f;
            worst = worst.max((1.0 - c).abs());
        }
        if worst < 1e-3 {
            break;
        }
    }
    let rhs = DVector::from_fn(n, |i, _| b[i] / row_scale[i]);
    let sv = m.singular_values();
    let (smax, smin) = sv.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), &x| (hi.max(x), lo.min(x)));
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= max_cond) {
        return Err(singular(cond));
    }
    let mut x = m.lu().solve(&rhs).ok_or_else(|| singular(cond))?;
    for j in 0..n {
        x[j] /= col_scale[j];
    }
    Ok((x, cond))
}

const RUIZ_SWEEPS: usize = 50;

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn roots_of_known_cubic() {
        // (z - 1)(z + 2)(z - 0.5i)
        let r = [c(1.0), c(-2.0), C64::new(0.0, 0.5)];
        let mut coef = vec![ONE];
        for &x in &r {
            let mut next = vec![ZERO; coef.len() + 1];
            for (k, &a) in coef.iter().enumerate() {
                next[k + 1] += a;
                next[k] -= a * x;
            }
            coef = next;
        }
        let found = poly_roots(&coef);
        assert_eq!(found.len(), 3);
        for x in r {
            assert!(found.iter().any(|y| (y - x).norm() < 1e-12));
        }
    }

    #[test]
    fn leading_zeros_are_dropped() {
        let found = poly_roots(&[c(-4.0), ZERO, c(1.0), ZERO]);
        assert_eq!(found.len(), 2);
        assert!(found.iter().any(|y| (y - c(2.0)).norm() < 1e-12));
    }

    #[test]
    fn winding_counts_zeros() {
        let f = |z: C64| (z - 0.3) * (z + C64::new(0.0, 0.4)) * (z - 2.0);
        assert_eq!(winding_number(f, ZERO, 1.0, 2048), 2);
        assert_eq!(winding_number(f, ZERO, 3.0, 2048), 3);
        assert_eq!(winding_number(|z: C64| ONE / z, ZERO, 1.0, 256), -1);
    }

    #[test]
    fn principal_roots_and_branches() {
        let z = principal_root(c(-8.0), 3);
        assert!((z - C64::from_polar(2.0, PI / 3.0)).norm() < 1e-14);
        for s in 1..7 {
            for b in 1..=s {
                assert_eq!(nearest_branch(root_of_unity(b, s), s), b);
            }
        }
    }

    #[test]
    fn equilibrated_solve_handles_bad_scaling() {
        let a = DMatrix::from_row_slice(2, 2, &[c(1e-9), c(2e-9), c(3e6), c(1e6)]);
        let x_true = DVector::from_vec(vec![c(1.0), C64::new(0.0, -2.0)]);
        let b = &a * &x_true;
        let (x, cond) = solve_equilibrated(&a, &b, 1e12, "test").unwrap();
        assert!(cond < 10.0);
        assert!((x - x_true).norm() < 1e-12);
        let sing = DMatrix::from_row_slice(2, 2, &[c(1.0), c(2.0), c(2.0), c(4.0)]);
        assert!(solve_equilibrated(&sing, &b, 1e12, "test").is_err());
    }
}
