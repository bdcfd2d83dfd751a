//! Kernel determinants, their roots inside the prescribed disks, and the
//! associated eigenvectors for the positive (`n > 0`) and negative (`n < 0`)
//! quadrants.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SedError};
use crate::model::{ModelParams, RateMatrices};
use crate::numeric::{nearest_branch, poly_roots, principal_root, root_of_unity, winding_number, C64, ONE, ZERO};

/// Contour resolution used when certifying root counts.
pub const CONTOUR_POINTS: usize = 2048;

const NEWTON_TOL: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Positive,
    Negative,
}

/// A kernel root together with the branch it belongs to. Negative-side roots
/// always carry branch 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchedRoot {
    pub value: C64,
    pub branch: usize,
    pub side: Side,
}

/// Positive-quadrant eigenvector; entry `r` is `ratio^r`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenvectorPos {
    pub entries: DVector<C64>,
}

/// Negative-quadrant eigenvector, first entry 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenvectorNeg {
    pub entries: DVector<C64>,
}

fn ipow(z: C64, k: usize) -> C64 {
    z.powi(k as i32)
}

fn pos_numerator(alpha: C64, beta: C64, p: &ModelParams) -> C64 {
    alpha * beta * p.total_rate() - beta * beta * p.lambda() - alpha * alpha
}

pub fn det_pos(alpha: C64, beta: C64, p: &ModelParams) -> C64 {
    let s = p.s();
    ipow(pos_numerator(alpha, beta, p), s) - beta * ipow(alpha * beta * s as f64, s)
}

pub fn branch_value_pos(alpha: C64, beta: C64, branch: usize, p: &ModelParams) -> Result<C64> {
    if alpha == ZERO || beta == ZERO {
        return Err(SedError::DivideByZero("branch_value_pos"));
    }
    let s = p.s();
    Ok(pos_numerator(alpha, beta, p) / (alpha * beta * s as f64)
        - root_of_unity(branch, s) * principal_root(beta, s))
}

fn branch_label(y: C64, beta: C64, s: usize) -> usize {
    if s == 1 {
        return 1;
    }
    nearest_branch(y / principal_root(beta, s), s)
}

/// The `s` roots `beta` of the positive kernel with `|beta| < |alpha|`, one per branch,
/// sorted by branch.
pub fn betas_pos(alpha: C64, p: &ModelParams) -> Result<Vec<BranchedRoot>> {
    let (roots, _) = betas_pos_with_ratio(alpha, p)?;
    Ok(roots)
}

/// As [`betas_pos`], also returning the eigenvector ratio `u_i beta_i^{1/s}`
/// of each root, computed without cancellation.
pub fn betas_pos_with_ratio(alpha: C64, p: &ModelParams) -> Result<(Vec<BranchedRoot>, Vec<C64>)> {
    let s = p.s();
    if alpha == ZERO || !(alpha.norm() < 1.0) {
        return Err(SedError::InvalidParam(format!("betas_pos needs 0 < |alpha| < 1, got {alpha}")));
    }
    // With y the eigenvector ratio, beta = y^s; substituting y = a*eta,
    // a = alpha^{1/s}, gives a polynomial in eta with O(1) coefficients:
    //   -lambda eta^{2s} - s a eta^{s+1} + (lambda+1+s) eta^s - 1 = 0,
    // and |beta| < |alpha| becomes |eta| < 1.
    let a = principal_root(alpha, s);
    let mut coef = vec![ZERO; 2 * s + 1];
    coef[0] = -ONE;
    coef[s] += p.total_rate();
    coef[s + 1] -= a * s as f64;
    coef[2 * s] -= p.lambda();
    let etas: Vec<C64> = poly_roots(&coef).into_iter().filter(|e| e.norm() < 1.0).collect();
    if etas.len() != s {
        return Err(SedError::RootCountMismatch {
            expected: s,
            found: etas.len(),
            radius: alpha.norm(),
        });
    }
    let mut out: Vec<(BranchedRoot, C64)> = etas
        .iter()
        .map(|&eta| {
            let y = a * eta;
            let beta = alpha * ipow(eta, s);
            let root = BranchedRoot {
                value: beta,
                branch: branch_label(y, beta, s),
                side: Side::Positive,
            };
            (root, y)
        })
        .collect();
    if !is_permutation(out.iter().map(|(r, _)| r.branch), s) {
        // The principal s-th root of beta jumps across its cut; label by the
        // direction of eta instead, which varies continuously with alpha.
        for ((r, _), eta) in out.iter_mut().zip(&etas) {
            r.branch = nearest_branch(*eta, s);
        }
        if !is_permutation(out.iter().map(|(r, _)| r.branch), s) {
            let mut order: Vec<usize> = (0..s).collect();
            order.sort_by(|&i, &j| etas[i].arg().total_cmp(&etas[j].arg()));
            for (label, &i) in order.iter().enumerate() {
                out[i].0.branch = label + 1;
            }
        }
    }
    out.sort_by_key(|(r, _)| r.branch);
    // Distinctness is judged on eta: the betas themselves coalesce like
    // |alpha|^{1 + 1/s} as alpha -> 0 even though the branches stay apart.
    for i in 0..s {
        for j in 0..i {
            if (etas[i] - etas[j]).norm() <= 1e-8 {
                return Err(SedError::RootCountMismatch {
                    expected: s,
                    found: s - 1,
                    radius: alpha.norm(),
                });
            }
        }
    }
    Ok(out.into_iter().unzip())
}

fn is_permutation(labels: impl Iterator<Item = usize>, s: usize) -> bool {
    let mut seen = vec![false; s];
    for l in labels {
        if l == 0 || l > s || seen[l - 1] {
            return false;
        }
        seen[l - 1] = true;
    }
    true
}

/// Number of positive-kernel roots `beta` with `|beta| < |alpha|`, by the
/// argument principle applied to `det_pos(alpha, alpha z) / alpha^{2s}` on `|z| = 1`.
pub fn count_betas_pos(alpha: C64, p: &ModelParams) -> i64 {
    let s = p.s();
    let (b, c) = (p.total_rate(), p.lambda());
    let ss = (s as f64).powi(s as i32);
    winding_number(
        |z| ipow(b * z - c * z * z - 1.0, s) - alpha * ss * ipow(z, s + 1),
        ZERO,
        1.0,
        CONTOUR_POINTS,
    )
}

fn alpha_branch_root(beta: C64, branch: usize, p: &ModelParams) -> Result<(C64, C64)> {
    let s = p.s();
    let y = root_of_unity(branch, s) * principal_root(beta, s);
    let bb = beta * (p.total_rate() - y * s as f64);
    let prod = beta * beta * p.lambda();
    let disc = (bb * bb - prod * 4.0).sqrt();
    let big = if (bb + disc).norm() >= (bb - disc).norm() { (bb + disc) / 2.0 } else { (bb - disc) / 2.0 };
    if big == ZERO {
        return Err(SedError::DegenerateQuadratic(format!("beta = {beta}")));
    }
    Ok((prod / big, big))
}

/// The `s` roots `alpha` of the positive kernel with `|alpha| < |beta|`, one per branch.
pub fn alphas_pos(beta: C64, p: &ModelParams) -> Result<Vec<BranchedRoot>> {
    if beta == ZERO || !(beta.norm() < 1.0) {
        return Err(SedError::InvalidParam(format!("alphas_pos needs 0 < |beta| < 1, got {beta}")));
    }
    (1..=p.s())
        .map(|i| {
            let (small, big) = alpha_branch_root(beta, i, p)?;
            let inside = (small.norm() < beta.norm()) as usize + (big.norm() < beta.norm()) as usize;
            if inside != 1 {
                return Err(SedError::RootCountMismatch {
                    expected: 1,
                    found: inside,
                    radius: beta.norm(),
                });
            }
            Ok(BranchedRoot {
                value: small,
                branch: i,
                side: Side::Positive,
            })
        })
        .collect()
}

/// Number of positive-kernel roots `alpha` with `|alpha| < |beta|`.
pub fn count_alphas_pos(beta: C64, p: &ModelParams) -> i64 {
    let s = p.s();
    let (b, c) = (p.total_rate(), p.lambda());
    let ss = (s as f64).powi(s as i32);
    winding_number(
        |x| ipow(x * b - c - x * x, s) - beta * ss * ipow(x, s),
        ZERO,
        1.0,
        CONTOUR_POINTS,
    )
}

/// The other root of the branch quadratic in `alpha` (product `lambda beta^2`).
pub fn partner_alpha_pos(alpha: C64, beta: C64, p: &ModelParams) -> Result<C64> {
    if alpha == ZERO {
        return Err(SedError::DivideByZero("partner_alpha_pos"));
    }
    let other = beta * beta * p.lambda() / alpha;
    if (other - alpha).norm() <= 1e-14 * alpha.norm() {
        return Err(SedError::DegenerateQuadratic(format!("alpha = {alpha}, beta = {beta}")));
    }
    Ok(other)
}

/// Roots of `s x^2 + (beta - lambda - 1 - s) x + lambda = 0`, larger modulus first.
pub fn f_pm(beta: C64, p: &ModelParams) -> (C64, C64) {
    let s = p.s() as f64;
    let c = p.lambda();
    let w = p.total_rate() - beta;
    let disc = (w * w - 4.0 * s * c).sqrt();
    let (a, b) = ((w + disc) / (2.0 * s), (w - disc) / (2.0 * s));
    let big = if a.norm() >= b.norm() { a } else { b };
    // Recover the small root from the product to avoid cancellation.
    (big, c / (s * big))
}

/// `s^s (f+(x)^s + f-(x)^s)` written as a polynomial in `x`.
pub(crate) fn waring_sum(x: C64, p: &ModelParams) -> (C64, C64) {
    let s = p.s();
    let sc = s as f64 * p.lambda();
    let w = p.total_rate() - x;
    let mut val = ZERO;
    let mut der = ZERO;
    let mut binom_term = 1.0f64; // (sc)^i * s/(s-i) * C(s-i, i) with sign
    for i in 0..=s / 2 {
        if i > 0 {
            // C(s-i, i) / C(s-i+1, i-1) = (s-2i+2)(s-2i+1) / (i (s-i+1))
            let (si, ii) = (s as f64, i as f64);
            let ratio_c = (si - 2.0 * ii + 2.0) * (si - 2.0 * ii + 1.0) / (ii * (si - ii + 1.0));
            let ratio_f = (si - ii + 1.0) / (si - ii);
            binom_term *= -sc * ratio_c * ratio_f;
        }
        let k = s - 2 * i;
        val += binom_term * ipow(w, k);
        if k > 0 {
            der -= binom_term * k as f64 * ipow(w, k - 1);
        }
    }
    (val, der)
}

pub fn det_neg(alpha: C64, beta: C64, p: &ModelParams) -> C64 {
    let s = p.s();
    let ss = (s as f64).powi(s as i32);
    let cs = p.lambda().powi(s as i32);
    alpha * alpha * ss + beta * beta * cs - alpha * beta * waring_sum(beta, p).0
}

fn small_quadratic_root(a2: f64, a1: C64, a0: f64) -> (C64, C64) {
    // Roots of a2 z^2 - a1 z + a0, (small, large).
    let disc = (a1 * a1 - 4.0 * a2 * a0).sqrt();
    let big_den = if (a1 + disc).norm() >= (a1 - disc).norm() { a1 + disc } else { a1 - disc };
    (2.0 * a0 / big_den, big_den / (2.0 * a2))
}

/// The unique negative-kernel root `beta` with `|beta| < |alpha|`.
pub fn beta_neg(alpha: C64, p: &ModelParams) -> Result<C64> {
    if alpha == ZERO || !(alpha.norm() < 1.0) {
        return Err(SedError::InvalidParam(format!("beta_neg needs 0 < |alpha| < 1, got {alpha}")));
    }
    let s = p.s();
    let ss = (s as f64).powi(s as i32);
    let cs = p.lambda().powi(s as i32);
    // z = beta / alpha solves g(z) = c^s z^2 - z P(alpha z) + s^s = 0.
    let g = |z: C64| {
        let (pv, pd) = waring_sum(alpha * z, p);
        (cs * z * z - z * pv + ss, 2.0 * cs * z - pv - z * alpha * pd)
    };
    let mut z = small_quadratic_root(cs, waring_sum(ZERO, p).0, ss).0;
    for _ in 0..200 {
        let next = small_quadratic_root(cs, waring_sum(alpha * z, p).0, ss).0;
        let done = (next - z).norm() <= NEWTON_TOL * next.norm();
        z = next;
        if done {
            break;
        }
    }
    for _ in 0..50 {
        let (v, d) = g(z);
        if d == ZERO {
            break;
        }
        let step = v / d;
        z -= step;
        if step.norm() <= NEWTON_TOL * z.norm() {
            break;
        }
    }
    let scale = ss + cs * z.norm_sqr() + z.norm() * waring_sum(alpha * z, p).0.norm();
    if !(z.norm() < 1.0) || g(z).0.norm() > 1e-10 * scale {
        return Err(SedError::RootCountMismatch {
            expected: 1,
            found: 0,
            radius: alpha.norm(),
        });
    }
    Ok(alpha * z)
}

/// Number of negative-kernel roots `beta` with `|beta| < |alpha|`.
pub fn count_beta_neg(alpha: C64, p: &ModelParams) -> i64 {
    let s = p.s();
    let ss = (s as f64).powi(s as i32);
    let cs = p.lambda().powi(s as i32);
    winding_number(
        |z| cs * z * z - z * waring_sum(alpha * z, p).0 + ss,
        ZERO,
        1.0,
        CONTOUR_POINTS,
    )
}

/// The unique negative-kernel root `alpha` with `|alpha| < |beta|`.
pub fn alpha_neg(beta: C64, p: &ModelParams) -> Result<C64> {
    if beta == ZERO || !(beta.norm() < 1.0) {
        return Err(SedError::InvalidParam(format!("alpha_neg needs 0 < |beta| < 1, got {beta}")));
    }
    let s = p.s();
    let ss = (s as f64).powi(s as i32);
    let cs = p.lambda().powi(s as i32);
    // alpha = beta x with s^s x^2 - P(beta) x + c^s = 0.
    let (small, large) = small_quadratic_root(ss, waring_sum(beta, p).0, cs);
    if !(small.norm() < 1.0) || large.norm() < 1.0 {
        let found = (small.norm() < 1.0) as usize + (large.norm() < 1.0) as usize;
        return Err(SedError::RootCountMismatch {
            expected: 1,
            found,
            radius: beta.norm(),
        });
    }
    Ok(beta * small)
}

/// Number of negative-kernel roots `alpha` with `|alpha| < |beta|`.
pub fn count_alpha_neg(beta: C64, p: &ModelParams) -> i64 {
    let s = p.s();
    let ss = (s as f64).powi(s as i32);
    let cs = p.lambda().powi(s as i32);
    let pv = waring_sum(beta, p).0;
    winding_number(|x| ss * x * x - pv * x + cs, ZERO, 1.0, CONTOUR_POINTS)
}

fn geometric(ratio: C64, s: usize) -> DVector<C64> {
    let mut v = DVector::from_element(s, ONE);
    for r in 1..s {
        v[r] = v[r - 1] * ratio;
    }
    v
}

pub fn eigvec_pos(alpha: C64, beta: C64, p: &ModelParams) -> Result<EigenvectorPos> {
    if alpha == ZERO || beta == ZERO {
        return Err(SedError::DivideByZero("eigvec_pos"));
    }
    let ratio = pos_numerator(alpha, beta, p) / (alpha * beta * p.s() as f64);
    Ok(EigenvectorPos {
        entries: geometric(ratio, p.s()),
    })
}

/// Eigenvector of a branch-`i` root built from `u_i beta^{1/s}` directly.
pub fn eigvec_pos_branch(beta: C64, branch: usize, p: &ModelParams) -> EigenvectorPos {
    let s = p.s();
    EigenvectorPos {
        entries: geometric(root_of_unity(branch, s) * principal_root(beta, s), s),
    }
}

/// Eigenvector from an explicit ratio `u_i beta^{1/s}`.
pub fn eigvec_pos_from_ratio(ratio: C64, p: &ModelParams) -> EigenvectorPos {
    EigenvectorPos {
        entries: geometric(ratio, p.s()),
    }
}

pub fn eigvec_neg(alpha: C64, beta: C64, p: &ModelParams) -> Result<EigenvectorNeg> {
    if alpha == ZERO {
        return Err(SedError::DivideByZero("eigvec_neg"));
    }
    let s = p.s();
    let (fp, fm) = f_pm(beta, p);
    let c = p.lambda();
    let big_f = |x: C64| c / x * (beta * ipow(x, s) / alpha - 1.0);
    let (ffm, ffp) = (big_f(fm), big_f(fp));
    let den = ffm - ffp;
    if !(den.norm() > 1e-14 * ffm.norm().max(ffp.norm())) || den == ZERO {
        return Err(SedError::DegenerateEigenvector);
    }
    let (wp, wm) = (ffm / den, ffp / den);
    let mut entries = DVector::zeros(s);
    let (mut pp, mut pm) = (ONE, ONE);
    for r in 0..s {
        entries[r] = wp * pp - wm * pm;
        pp *= fp;
        pm *= fm;
    }
    entries[0] = ONE;
    Ok(EigenvectorNeg { entries })
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|x| C64::new(x, 0.0))
}

/// `alpha beta A_00 + beta^2 A_{1,-1} + alpha beta^2 A_{0,-1} + alpha^2 A_{-1,1}`:
/// the interior positive-quadrant equation applied to `alpha^m beta^n v`, times `alpha beta`.
pub fn kernel_matrix_pos(alpha: C64, beta: C64, r: &RateMatrices) -> DMatrix<C64> {
    to_complex(&r.a_00) * (alpha * beta)
        + to_complex(&r.a_1m1) * (beta * beta)
        + to_complex(&r.a_0m1) * (alpha * beta * beta)
        + to_complex(&r.a_m11) * (alpha * alpha)
}

/// Negative-quadrant counterpart of [`kernel_matrix_pos`] for `alpha^m beta^{|n|} v`.
pub fn kernel_matrix_neg(alpha: C64, beta: C64, r: &RateMatrices) -> DMatrix<C64> {
    to_complex(&r.b_00) * (alpha * beta)
        + to_complex(&r.b_11) * (beta * beta)
        + to_complex(&r.b_01) * (alpha * beta * beta)
        + to_complex(&r.b_m1m1) * (alpha * alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_rate_matrices, validate_params};

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn quad_roots(a: f64, b: f64, cc: f64) -> (f64, f64) {
        let d = (b * b - 4.0 * a * cc).sqrt();
        ((-b - d) / (2.0 * a), (-b + d) / (2.0 * a))
    }

    /// Residual relative to the size of the individual summands, which stays
    /// meaningful when the matrix itself vanishes (s = 1).
    fn rel_resid(alpha: C64, beta: C64, r: &RateMatrices, pos: bool, v: &DVector<C64>) -> f64 {
        let m = if pos { kernel_matrix_pos(alpha, beta, r) } else { kernel_matrix_neg(alpha, beta, r) };
        let (a, b) = (alpha.norm(), beta.norm());
        let scale = if pos {
            a * b * r.a_00.norm() + b * b * r.a_1m1.norm() + a * b * b * r.a_0m1.norm() + a * a * r.a_m11.norm()
        } else {
            a * b * r.b_00.norm() + b * b * r.b_11.norm() + a * b * b * r.b_01.norm() + a * a * r.b_m1m1.norm()
        };
        (m * v).norm() / (scale * v.norm())
    }

    #[test]
    fn det_pos_values() {
        for s in 1..5 {
            let p = validate_params(s, 0.37, 0.4).unwrap();
            assert!(det_pos(ONE, ONE, &p).norm() < 1e-9);
        }
        let p = validate_params(1, 0.5, 0.5).unwrap();
        // 0.25*3 - 0.25*1 - 0.25 - 0.5*(0.25*1)
        assert!((det_pos(c(0.5), c(0.5), &p) - c(0.125)).norm() < 1e-15);
    }

    #[test]
    fn det_matches_kernel_matrix_determinant() {
        for s in 1..=4 {
            let p = validate_params(s, 0.6, 0.3).unwrap();
            let r = build_rate_matrices(&p);
            let (a, b) = (C64::new(0.3, 0.1), C64::new(-0.2, 0.15));
            let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
            let dp = kernel_matrix_pos(a, b, &r).determinant();
            assert!((dp - det_pos(a, b, &p) * sign).norm() < 1e-12, "s={s}");
            let dn = kernel_matrix_neg(a, b, &r).determinant();
            // The closed form drops a factor (-alpha beta)^{s-1}.
            let factor = ipow(-a * b, s as usize - 1);
            assert!((dn - det_neg(a, b, &p) * factor).norm() < 1e-12, "s={s}");
        }
    }

    #[test]
    fn branch_factorization() {
        let p = validate_params(3, 0.45, 0.4).unwrap();
        let (a, b) = (C64::new(0.2, 0.05), C64::new(0.07, -0.02));
        let prod: C64 = (1..=3).map(|i| branch_value_pos(a, b, i, &p).unwrap()).product();
        let den = ipow(a * b * 3.0, 3);
        assert!((prod - det_pos(a, b, &p) / den).norm() < 1e-10 * prod.norm());
        let p1 = validate_params(1, 0.5, 0.5).unwrap();
        assert!(branch_value_pos(ONE, ONE, 1, &p1).unwrap().norm() < 1e-15);
        assert!(branch_value_pos(ZERO, ONE, 1, &p1).is_err());
    }

    #[test]
    fn betas_pos_s1_quadratic() {
        // s = 1: -(1 + alpha) beta^2 + 3 alpha beta - alpha^2 = 0.
        let p = validate_params(1, 0.5, 0.5).unwrap();
        let alpha = 0.25;
        let (lo, _) = quad_roots(-(1.0 + alpha), 3.0 * alpha, -alpha * alpha);
        let lo = if lo.abs() < alpha { lo } else { quad_roots(-(1.0 + alpha), 3.0 * alpha, -alpha * alpha).1 };
        let roots = betas_pos(c(alpha), &p).unwrap();
        assert_eq!(roots.len(), 1);
        assert!((roots[0].value - c(lo)).norm() < 1e-14);
        assert!((roots[0].value - c(0.1)).norm() < 1e-14);
    }

    #[test]
    fn betas_pos_s2_at_initial_alpha() {
        let p = validate_params(2, 0.5, 0.4).unwrap();
        let alpha = c(0.125);
        let roots = betas_pos(alpha, &p).unwrap();
        assert_eq!(roots.iter().map(|r| r.branch).collect::<Vec<_>>(), vec![1, 2]);
        for r in &roots {
            assert!(r.value.norm() < 0.125);
            assert!(det_pos(alpha, r.value, &p).norm() < 1e-14);
            assert!(branch_value_pos(alpha, r.value, r.branch, &p).unwrap().norm() < 1e-9);
        }
        assert_eq!(count_betas_pos(alpha, &p), 2);
    }

    #[test]
    fn betas_pos_conjugate_closed_for_real_alpha() {
        let p = validate_params(5, 0.7, 0.4).unwrap();
        let roots = betas_pos(c(0.3), &p).unwrap();
        for r in &roots {
            assert!(roots.iter().any(|t| (t.value - r.value.conj()).norm() < 1e-12));
        }
    }

    #[test]
    fn alphas_pos_s1_quadratic() {
        // s = 1, beta = 0.1: alpha^2 - alpha (0.3 - 0.01) + 0.01 = 0 from the branch quadratic.
        let p = validate_params(1, 0.5, 0.5).unwrap();
        let beta = 0.1;
        let bb = beta * (3.0 - beta);
        let (r1, r2) = quad_roots(1.0, -bb, beta * beta);
        let want = if r1.abs() < beta { r1 } else { r2 };
        let got = alphas_pos(c(beta), &p).unwrap();
        assert_eq!(got.len(), 1);
        assert!((got[0].value - c(want)).norm() < 1e-14);
        assert_eq!(count_alphas_pos(c(beta), &p), 1);
    }

    #[test]
    fn alphas_pos_branch_residuals() {
        let p = validate_params(4, 0.8, 0.4).unwrap();
        let beta = C64::new(0.05, 0.02);
        let alphas = alphas_pos(beta, &p).unwrap();
        assert_eq!(alphas.len(), 4);
        for a in &alphas {
            assert!(a.value.norm() < beta.norm());
            let bv = branch_value_pos(a.value, beta, a.branch, &p).unwrap();
            assert!(bv.norm() < 1e-10 * principal_root(beta, 4).norm());
        }
        assert_eq!(count_alphas_pos(beta, &p), 4);
    }

    #[test]
    fn partner_shares_eigenvector() {
        let p = validate_params(3, 0.6, 0.4).unwrap();
        let alpha = c(0.6f64.powi(4));
        let (roots, ratios) = betas_pos_with_ratio(alpha, &p).unwrap();
        for (r, y) in roots.iter().zip(ratios) {
            let other = partner_alpha_pos(alpha, r.value, &p).unwrap();
            assert!((other * alpha - r.value * r.value * p.lambda()).norm() < 1e-15);
            assert!(branch_value_pos(other, r.value, r.branch, &p).unwrap().norm() < 1e-9);
            let v1 = eigvec_pos(alpha, r.value, &p).unwrap().entries;
            let v2 = eigvec_pos(other, r.value, &p).unwrap().entries;
            assert!((&v1 - &v2).norm() < 1e-10);
            assert!((v1 - eigvec_pos_from_ratio(y, &p).entries).norm() < 1e-10);
        }
    }

    #[test]
    fn f_pm_values() {
        let p = validate_params(1, 0.5, 0.5).unwrap();
        let (fp, fm) = f_pm(ZERO, &p);
        assert!((fp - c((3.0 + 5f64.sqrt()) / 2.0)).norm() < 1e-14);
        assert!((fm - c((3.0 - 5f64.sqrt()) / 2.0)).norm() < 1e-14);
        for s in 1..6 {
            let p = validate_params(s, 0.42, 0.4).unwrap();
            let beta = C64::new(0.3, -0.2);
            let (fp, fm) = f_pm(beta, &p);
            let sf = s as f64;
            assert!((fp * fm - p.lambda() / sf).norm() < 1e-14);
            assert!((fp + fm - (p.total_rate() - beta) / sf).norm() < 1e-14);
            let (fp0, fm0) = f_pm(ZERO, &p);
            assert!(fp0.re > 1.0 && fm0.re > 0.0 && fm0.re < 1.0);
            assert!(fp0.im == 0.0 && fm0.im.abs() < 1e-15);
        }
    }

    #[test]
    fn waring_matches_radicals() {
        for s in 1..=8 {
            let p = validate_params(s, 0.55, 0.4).unwrap();
            let x = C64::new(0.4, 0.3);
            let (fp, fm) = f_pm(x, &p);
            let su = s as usize;
            let direct = (ipow(fp, su) + ipow(fm, su)) * (s as f64).powi(s as i32);
            let (w, d) = waring_sum(x, &p);
            assert!((w - direct).norm() < 1e-11 * direct.norm(), "s={s}");
            let h = 1e-6;
            let fd = (waring_sum(x + h, &p).0 - waring_sum(x - h, &p).0) / (2.0 * h);
            assert!((fd - d).norm() < 1e-6 * d.norm().max(1.0), "s={s}");
        }
    }

    #[test]
    fn det_neg_hand_value_and_non_homogeneity() {
        let p = validate_params(1, 0.5, 0.5).unwrap();
        assert!(det_neg(c(0.25), c(0.1), &p).norm() < 1e-15);
        let p2 = validate_params(2, 0.5, 0.5).unwrap();
        let (a, b) = (c(0.2), c(0.1));
        let ratio = det_neg(a * 2.0, b * 2.0, &p2) / det_neg(a, b, &p2);
        assert!((ratio - c(4.0)).norm() > 1e-3);
    }

    #[test]
    fn beta_neg_s1_hand_root() {
        let p = validate_params(1, 0.5, 0.5).unwrap();
        let b = beta_neg(c(0.25), &p).unwrap();
        assert!((b - c(0.1)).norm() < 1e-14);
        assert_eq!(count_beta_neg(c(0.25), &p), 1);
        let a = alpha_neg(c(0.1), &p).unwrap();
        assert!(a.norm() < 0.1);
        assert!(det_neg(a, c(0.1), &p).norm() < 1e-15);
    }

    #[test]
    fn beta_alpha_neg_residuals() {
        for s in [2, 3, 5] {
            let p = validate_params(s, 0.8, 0.4).unwrap();
            for alpha in [c(0.5), C64::new(0.01, 0.02), c(1e-9)] {
                let b = beta_neg(alpha, &p).unwrap();
                assert!(b.norm() < alpha.norm());
                let z = b / alpha;
                let scale = (s as f64).powi(s as i32);
                assert!((det_neg(alpha, b, &p) / (alpha * alpha)).norm() < 1e-10 * scale);
                assert!(z.norm() < 1.0);
                assert_eq!(count_beta_neg(alpha, &p), 1);
                let a = alpha_neg(alpha, &p).unwrap();
                assert!(a.norm() < alpha.norm());
                assert!((det_neg(a, alpha, &p) / (alpha * alpha)).norm() < 1e-10 * scale);
                assert_eq!(count_alpha_neg(alpha, &p), 1);
            }
        }
    }

    #[test]
    fn eigenvector_residuals() {
        for s in 1..=5 {
            let p = validate_params(s, 0.7, 0.4).unwrap();
            let r = build_rate_matrices(&p);
            let alpha = C64::new(0.2, 0.03);
            for root in betas_pos(alpha, &p).unwrap() {
                let v = eigvec_pos_branch(root.value, root.branch, &p).entries;
                assert_eq!(v[0], ONE);
                let res = rel_resid(alpha, root.value, &r, true, &v);
                assert!(res < 1e-10, "s={s} branch={} res={res:e}", root.branch);
            }
            let b = beta_neg(alpha, &p).unwrap();
            let w = eigvec_neg(alpha, b, &p).unwrap().entries;
            assert_eq!(w[0], ONE);
            if s == 1 {
                assert_eq!(w.len(), 1);
            }
            assert!(rel_resid(alpha, b, &r, false, &w) < 1e-10, "s={s}");
        }
    }

    #[test]
    fn rejects_out_of_disk_alpha() {
        let p = validate_params(2, 0.5, 0.4).unwrap();
        assert!(betas_pos(c(1.5), &p).is_err());
        assert!(beta_neg(ZERO, &p).is_err());
    }
}
