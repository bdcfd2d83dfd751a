//! Limits of the tree ratios as the level grows, the ratio matrices bounding
//! the term growth, and the convergence index `N`.

use nalgebra::{DMatrix, DVector};

use crate::compensation::{horizontal_step_neg, horizontal_step_pos, initial_solution, vertical_step, Bundle, Term};
use crate::error::{Result, SedError};
use crate::kernel::{f_pm, Side};
use crate::model::ModelParams;
use crate::numeric::{root_of_unity, solve_equilibrated, C64, ZERO};

/// Default cap for the index search.
pub const N_CAP: usize = 64;

const POWER_ITERATIONS: usize = 10_000;

/// Limiting ratios of roots and coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitConstants {
    pub v_minus: f64,
    pub v_plus: f64,
    pub w_minus: f64,
    pub w_plus: f64,
    pub f0_minus: f64,
    pub f0_plus: f64,
    /// Vertical over horizontal coefficient, positive side.
    pub k_pos_cv: f64,
    /// Vertical over horizontal coefficient, negative side.
    pub k_neg_cv: f64,
    /// Bound on `|c_i / c-tilde|` after a positive-side horizontal step.
    pub k_pos_ch: f64,
    /// Bound on `|c_i / c-tilde|` after a negative-side horizontal step.
    pub k_neg_ch: f64,
    /// `c_{s+1} / c-tilde` after a positive-side horizontal step.
    pub k_pos_chs1: f64,
    /// `c_{s+1} / c-tilde` after a negative-side horizontal step.
    pub k_neg_chs1: f64,
}

/// The root part of [`LimitConstants`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitRoots {
    pub v_minus: f64,
    pub v_plus: f64,
    pub w_minus: f64,
    pub w_plus: f64,
    pub f0_minus: f64,
    pub f0_plus: f64,
}

/// Roots of `c x^2 - b x + a = 0` as (small, large), both real and positive.
fn positive_quadratic(c: f64, b: f64, a: f64) -> (f64, f64) {
    let d = (b * b - 4.0 * a * c).sqrt();
    let large = (b + d) / (2.0 * c);
    (a / (c * large), large)
}

pub fn limit_roots(p: &ModelParams) -> LimitRoots {
    let s = p.s() as i32;
    let (lam, tot) = (p.lambda(), p.total_rate());
    let (v_minus, v_plus) = positive_quadratic(lam, tot, 1.0);
    let (fp, fm) = f_pm(ZERO, p);
    let (f0_plus, f0_minus) = (fp.re, fm.re);
    let ss = (p.s() as f64).powi(s);
    let sum = ss * (f0_plus.powi(s) + f0_minus.powi(s));
    let (w_minus, w_plus) = positive_quadratic(lam.powi(s), sum, ss);
    LimitRoots {
        v_minus,
        v_plus,
        w_minus,
        w_plus,
        f0_minus,
        f0_plus,
    }
}

/// `W_{r,i} = v_-^{r/s} u_i^r`.
fn w_matrix(r: &LimitRoots, s: usize) -> DMatrix<C64> {
    DMatrix::from_fn(s, s, |row, col| {
        (root_of_unity(col + 1, s) * r.v_minus.powf(1.0 / s as f64)).powi(row as i32)
    })
}

fn w_vector(r: &LimitRoots, s: usize, j: usize) -> DVector<C64> {
    DVector::from_fn(s, |row, _| (root_of_unity(j, s) * r.v_plus.powf(1.0 / s as f64)).powi(row as i32))
}

pub fn limit_coeffs(p: &ModelParams) -> Result<LimitConstants> {
    let s = p.s();
    let sf = s as f64;
    let (lam, q) = (p.lambda(), p.q());
    let r = limit_roots(p);
    let fp1 = r.f0_plus.powi(s as i32 - 1);
    let fm1 = r.f0_minus.powi(s as i32 - 1);

    let k_pos_cv = -(1.0 - r.v_minus * lam) / (1.0 - r.v_plus * lam);
    let k_neg_cv = -(sf - r.w_minus * lam * fp1) / (sf - r.w_plus * lam * fm1);
    // Multiplied through by q so that q = 0 stays finite.
    let den = r.v_minus * sf * (1.0 - q) + q * r.w_minus * fp1;
    let k_pos_chs1 = q * (r.v_minus - r.v_plus) / den;
    let k_neg_chs1 = -(r.v_minus * sf * (1.0 - q) + q * r.w_plus * fm1) / den;

    // The limiting 2s x 2s systems determine a (resp. c) through W alone:
    // rows r >= 1 of the second block give (W a)_r = -w_j(r), and row 0 of the
    // first block fixes (W a)_0.
    let w = w_matrix(&r, s);
    let mut k_pos_ch = 0.0f64;
    for j in 1..=s {
        let wj = w_vector(&r, s, j);
        let mut t = -wj.clone();
        t[0] = C64::new(-(r.v_plus + k_pos_chs1 * r.w_minus * fp1) / r.v_minus, 0.0);
        let (a, _) = solve_equilibrated(&w, &t, 1e12, "limiting horizontal system")?;
        k_pos_ch = a.iter().fold(k_pos_ch, |m, z| m.max(z.norm()));
    }
    let mut t = DVector::<C64>::zeros(s);
    t[0] = C64::new(-(r.w_plus * fm1 + k_neg_chs1 * r.w_minus * fp1) / r.v_minus, 0.0);
    let (c, _) = solve_equilibrated(&w, &t, 1e12, "limiting horizontal system")?;
    let k_neg_ch = c.iter().fold(0.0f64, |m, z| m.max(z.norm()));

    Ok(LimitConstants {
        v_minus: r.v_minus,
        v_plus: r.v_plus,
        w_minus: r.w_minus,
        w_plus: r.w_plus,
        f0_minus: r.f0_minus,
        f0_plus: r.f0_plus,
        k_pos_cv,
        k_neg_cv,
        k_pos_ch,
        k_neg_ch,
        k_pos_chs1,
        k_neg_chs1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioKind {
    /// Horizontal-coefficient series.
    R1,
    /// Vertical-coefficient series.
    R2,
    /// Horizontal-axis series, `R2(m, 0)`.
    R3,
}

/// The `(s+1) x (s+1)` matrix of limiting parent-to-child term ratios.
/// `n` is ignored for [`RatioKind::R3`].
pub fn ratio_matrix(kind: RatioKind, m: u32, n: u32, s: usize, c: &LimitConstants) -> DMatrix<f64> {
    let n = if kind == RatioKind::R3 { 0 } else { n };
    let (mi, ni, mn) = (m as i32, n as i32, (m + n) as i32);
    let vr = (c.v_minus / c.v_plus).abs();
    let wr = (c.w_minus / c.w_plus).abs();
    let (vm, wm) = (c.v_minus.abs(), c.w_minus.abs());
    let (ivp, iwp) = (1.0 / c.v_plus.abs(), 1.0 / c.w_plus.abs());
    let (pp, nn_, pn, np) = match kind {
        RatioKind::R1 => (
            c.k_pos_ch.abs() * c.k_pos_cv.abs() * vr.powi(mn),
            c.k_neg_chs1.abs() * c.k_neg_cv.abs() * wr.powi(mn),
            // parent positive, child negative
            c.k_pos_chs1.abs() * c.k_pos_cv.abs() * vr.powi(mi) * ivp.powi(ni) * wm.powi(ni),
            // parent negative, child positive
            c.k_neg_ch.abs() * c.k_neg_cv.abs() * vm.powi(ni) * wr.powi(mi) * iwp.powi(ni),
        ),
        RatioKind::R2 | RatioKind::R3 => (
            c.k_pos_ch.abs() * c.k_pos_cv.abs() * vr.powi(mn),
            c.k_neg_chs1.abs() * c.k_neg_cv.abs() * wr.powi(mn),
            c.k_pos_chs1.abs() * c.k_neg_cv.abs() * ivp.powi(ni) * wm.powi(ni) * wr.powi(mi),
            c.k_neg_ch.abs() * c.k_pos_cv.abs() * vm.powi(ni) * vr.powi(mi) * iwp.powi(ni),
        ),
    };
    DMatrix::from_fn(s + 1, s + 1, |j, k| match (j < s, k < s) {
        (true, true) => pp,
        (false, true) => np,
        (true, false) => pn,
        (false, false) => nn_,
    })
}

/// Spectral radius of a nonnegative square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != a.ncols() {
        return Err(SedError::InvalidParam("spectral radius needs a square matrix".into()));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(SedError::InvalidParam("spectral radius needs finite entries".into()));
    }
    if a.iter().all(|&x| x > 0.0) {
        if let Some(r) = perron_root(a) {
            return Ok(r);
        }
    }
    // Reducible or periodic matrices: take the eigenvalues directly.
    let eig = a.complex_eigenvalues();
    Ok(eig.iter().fold(0.0f64, |m, z| m.max(z.norm())))
}

/// Power iteration with Collatz-Wielandt bounds; `None` if the bounds do not meet.
fn perron_root(a: &DMatrix<f64>) -> Option<f64> {
    let n = a.nrows();
    let mut x = DVector::from_element(n, 1.0);
    for _ in 0..POWER_ITERATIONS {
        let y = a * &x;
        let (lo, hi) = (0..n).fold((f64::INFINITY, 0.0f64), |(lo, hi), i| {
            let r = y[i] / x[i];
            (lo.min(r), hi.max(r))
        });
        if hi - lo <= 1e-13 * hi {
            return Some(0.5 * (lo + hi));
        }
        let norm = y.max();
        if !(norm > 0.0) {
            return None;
        }
        x = y / norm;
    }
    None
}

/// Largest spectral radius over the frontier `m + |n| = k` (`|n| >= 1`) for
/// R1 and R2.
pub fn frontier_radius(k: u32, s: usize, c: &LimitConstants) -> Result<f64> {
    let mut worst = 0.0f64;
    for n in 1..=k {
        let m = k - n;
        for kind in [RatioKind::R1, RatioKind::R2] {
            worst = worst.max(spectral_radius(&ratio_matrix(kind, m, n, s, c))?);
        }
    }
    Ok(worst)
}

/// Smallest `N` such that the series converge for `m + |n| > N` and on `(N, 0)`.
pub fn compute_n(p: &ModelParams) -> Result<usize> {
    compute_n_capped(p, N_CAP)
}

pub fn compute_n_capped(p: &ModelParams, cap: usize) -> Result<usize> {
    let c = limit_coeffs(p)?;
    let s = p.s();
    for n in 0..=cap {
        let r3 = spectral_radius(&ratio_matrix(RatioKind::R3, n as u32, 0, s, &c))?;
        if r3 < 1.0 && frontier_radius(n as u32 + 1, s, &c)? < 1.0 {
            return Ok(n);
        }
    }
    Err(SedError::SearchExhausted(cap))
}

/// Ratios observed along one path of the tree, level by level.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRatios {
    pub level: usize,
    /// `beta_i / alpha` for the positive children.
    pub beta_pos_over_alpha: Vec<C64>,
    /// `beta_{s+1} / alpha`.
    pub beta_neg_over_alpha: C64,
    /// `alpha' / beta` after the vertical step of each child.
    pub alpha_pos_over_beta: Vec<C64>,
    pub alpha_neg_over_beta: C64,
    /// `c-tilde / c-hat` for each child.
    pub cv_over_ch_pos: Vec<C64>,
    pub cv_over_ch_neg: C64,
    /// `c_{s+1} / c-tilde` and `|h| / |c-tilde|` of the bundle, when it came
    /// from a vertical term.
    pub chs1_over_cv: Option<C64>,
    pub h_over_cv: Option<f64>,
    pub parent_side: Option<Side>,
}

/// Follows a single path of `levels` horizontal levels. At each level the
/// path continues through the positive child with the given branch or, with
/// `branch = None`, through the negative child.
pub fn trace_path(p: &ModelParams, levels: usize, branch: Option<usize>) -> Result<Vec<PathRatios>> {
    let mut bundle: Bundle = initial_solution(p)?;
    let mut parent: Option<Term> = None;
    let mut out = Vec::with_capacity(levels + 1);
    for level in 0..=levels {
        let alpha = bundle.terms[0].alpha;
        let verticals: Vec<Term> = bundle.terms.iter().map(|t| vertical_step(t, p)).collect::<Result<_>>()?;
        let (pos_t, neg_t): (Vec<_>, Vec<_>) = bundle.terms.iter().zip(&verticals).partition(|(t, _)| t.side == Side::Positive);
        let (neg_h, neg_v) = neg_t[0];
        out.push(PathRatios {
            level,
            beta_pos_over_alpha: pos_t.iter().map(|(t, _)| t.beta / alpha).collect(),
            beta_neg_over_alpha: neg_h.beta / alpha,
            alpha_pos_over_beta: pos_t.iter().map(|(t, v)| v.alpha / t.beta).collect(),
            alpha_neg_over_beta: neg_v.alpha / neg_h.beta,
            cv_over_ch_pos: pos_t.iter().map(|(t, v)| v.coeff / t.coeff).collect(),
            cv_over_ch_neg: neg_v.coeff / neg_h.coeff,
            chs1_over_cv: parent.as_ref().map(|v| neg_h.coeff / v.coeff),
            h_over_cv: parent.as_ref().map(|v| bundle.h.h.norm() / v.coeff.norm()),
            parent_side: parent.as_ref().map(|v| v.side),
        });
        if level == levels {
            break;
        }
        let next = match branch {
            Some(b) => verticals.iter().find(|v| v.side == Side::Positive && v.branch == b),
            None => verticals.iter().find(|v| v.side == Side::Negative),
        }
        .cloned()
        .ok_or_else(|| SedError::InvalidParam(format!("no child with branch {branch:?}")))?;
        bundle = match next.side {
            Side::Positive => horizontal_step_pos(&next, p)?,
            Side::Negative => horizontal_step_neg(&next, p)?,
        };
        parent = Some(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_params;

    #[test]
    fn limit_root_values() {
        let p = validate_params(2, 0.5, 0.4).unwrap();
        let r = limit_roots(&p);
        let d = (2.25f64 - 4.0 * 0.5 / 3.0).sqrt();
        assert!((r.v_minus - (1.5 - d)).abs() < 1e-14);
        assert!((r.v_plus - (1.5 + d)).abs() < 1e-14);
        assert!((r.v_minus - 0.2417).abs() < 1e-4 && (r.v_plus - 2.7583).abs() < 1e-4);
    }

    #[test]
    fn limit_root_identities() {
        for s in 1..=8 {
            for &rho in &[0.1, 0.5, 0.95] {
                let p = validate_params(s, rho, 0.4).unwrap();
                let r = limit_roots(&p);
                let si = s as i32;
                assert!((r.v_plus * r.v_minus * p.lambda() - 1.0).abs() < 1e-12);
                assert!((r.w_minus * r.f0_plus.powi(si) - 1.0).abs() < 1e-12);
                assert!((r.w_plus * r.f0_minus.powi(si) - 1.0).abs() < 1e-12);
                assert!(0.0 < r.v_minus && r.v_minus < 1.0 && r.v_plus > 1.0);
                assert!(0.0 < r.w_minus && r.w_minus < 1.0 && r.w_plus > 1.0);
            }
        }
    }

    /// The full 2s x 2s limiting system, solved without elimination.
    fn full_system_max(p: &ModelParams, c: &LimitConstants) -> f64 {
        let s = p.s();
        let r = limit_roots(p);
        let w = w_matrix(&r, s);
        let fp1 = r.f0_plus.powi(s as i32 - 1);
        let lcoef = p.lambda() * (1.0 - p.q());
        let mut best = 0.0f64;
        for j in 1..=s {
            let wj = w_vector(&r, s, j);
            let mut a = DMatrix::<C64>::zeros(2 * s, 2 * s);
            let mut rhs = DVector::<C64>::zeros(2 * s);
            for i in 0..s {
                for k in 0..s {
                    a[(i, k)] = w[(i, k)] * r.v_minus;
                    a[(s + i, k)] = -w[(i, k)];
                }
                if i >= 1 {
                    a[(i, s + i - 1)] = C64::new(1.0, 0.0);
                }
                rhs[i] = -wj[i] * r.v_plus;
                rhs[s + i] = wj[i];
            }
            rhs[0] -= c.k_pos_chs1 * r.w_minus * fp1;
            a[(s, s + s - 1)] = C64::new(lcoef, 0.0);
            let x = a.lu().solve(&rhs).unwrap();
            for k in 0..s {
                best = best.max(x[k].norm());
            }
        }
        best
    }

    #[test]
    fn reduced_limit_systems_match_full_systems() {
        for s in 1..=5 {
            let p = validate_params(s, 0.6, 0.4).unwrap();
            let c = limit_coeffs(&p).unwrap();
            let full = full_system_max(&p, &c);
            assert!((full - c.k_pos_ch).abs() < 1e-10 * full, "s={s}: {full} vs {}", c.k_pos_ch);
        }
    }

    #[test]
    fn s1_hand_solution() {
        // s = 1: W = [1], w_1 = [1]; a = -(v+ + K w- ) / v-.
        let p = validate_params(1, 0.5, 0.4).unwrap();
        let c = limit_coeffs(&p).unwrap();
        let want = (c.v_plus + c.k_pos_chs1 * c.w_minus) / c.v_minus;
        assert!((c.k_pos_ch - want.abs()).abs() < 1e-12);
        let cv = -(1.0 - c.v_minus * 1.0) / (1.0 - c.v_plus * 1.0);
        assert!((c.k_pos_cv - cv).abs() < 1e-14);
    }

    #[test]
    fn degenerate_q_is_finite() {
        for q in [0.0, 1.0] {
            let p = validate_params(3, 0.5, q).unwrap();
            let c = limit_coeffs(&p).unwrap();
            for x in [c.k_pos_ch, c.k_neg_ch, c.k_pos_chs1, c.k_neg_chs1] {
                assert!(x.is_finite());
            }
        }
    }

    #[test]
    fn spectral_radius_examples() {
        assert!((spectral_radius(&DMatrix::identity(3, 3)).unwrap() - 1.0).abs() < 1e-12);
        let ones = DMatrix::from_element(2, 2, 1.0);
        assert!((spectral_radius(&ones).unwrap() - 2.0).abs() < 1e-12);
        // Brute force: roots of the characteristic cubic via companion eigenvalues.
        let a = DMatrix::from_row_slice(3, 3, &[0.2, 0.7, 0.1, 0.5, 0.3, 0.9, 0.4, 0.0, 0.6]);
        let tr = a.trace();
        let minors = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)] + a[(0, 0)] * a[(2, 2)] - a[(0, 2)] * a[(2, 0)]
            + a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)];
        let det = a.determinant();
        let coef = [C64::new(-det, 0.0), C64::new(minors, 0.0), C64::new(-tr, 0.0), C64::new(1.0, 0.0)];
        let roots = crate::numeric::poly_roots(&coef);
        let want = roots.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        assert!((spectral_radius(&a).unwrap() - want).abs() < 1e-10 * want);
    }

    #[test]
    fn block_structure_reduces_to_two_by_two() {
        // A matrix constant on the four blocks has the Perron root of
        // [[s x, y], [s z, w]].
        let p = validate_params(4, 0.7, 0.4).unwrap();
        let c = limit_coeffs(&p).unwrap();
        for (m, n) in [(0, 1), (2, 1), (1, 3)] {
            let r = ratio_matrix(RatioKind::R1, m, n, 4, &c);
            let small = DMatrix::from_row_slice(2, 2, &[4.0 * r[(0, 0)], r[(0, 4)], 4.0 * r[(4, 0)], r[(4, 4)]]);
            let (a, b, cc, d) = (small[(0, 0)], small[(0, 1)], small[(1, 0)], small[(1, 1)]);
            let want = 0.5 * (a + d + ((a - d).powi(2) + 4.0 * b * cc).sqrt());
            assert!((spectral_radius(&r).unwrap() - want).abs() < 1e-10 * want);
        }
    }

    #[test]
    fn ratio_entries_match_formulas() {
        let p = validate_params(2, 0.5, 0.4).unwrap();
        let c = limit_coeffs(&p).unwrap();
        let r = ratio_matrix(RatioKind::R1, 2, 1, 2, &c);
        let want = c.k_pos_ch * c.k_pos_cv.abs() * (c.v_minus / c.v_plus).powi(3);
        assert!((r[(0, 1)] - want).abs() < 1e-15);
        let want = c.k_neg_chs1.abs() * c.k_neg_cv.abs() * (c.w_minus / c.w_plus).powi(3);
        assert!((r[(2, 2)] - want).abs() < 1e-15);
        let r3 = ratio_matrix(RatioKind::R3, 3, 7, 2, &c);
        assert_eq!(r3, ratio_matrix(RatioKind::R2, 3, 0, 2, &c));
    }

    #[test]
    fn radii_decrease_along_frontiers() {
        let p = validate_params(3, 0.8, 0.4).unwrap();
        let c = limit_coeffs(&p).unwrap();
        let mut prev = f64::INFINITY;
        for k in 1..8 {
            let r = frontier_radius(k, 3, &c).unwrap();
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn table_values() {
        for s in [2, 5] {
            for rho in [0.1, 0.3, 0.5, 0.7, 0.9] {
                let p = validate_params(s, rho, 0.4).unwrap();
                assert_eq!(compute_n(&p).unwrap(), 1, "s={s} rho={rho}");
            }
        }
    }

    #[test]
    fn path_ratios_approach_limits() {
        let p = validate_params(2, 0.5, 0.4).unwrap();
        let c = limit_coeffs(&p).unwrap();
        let path = trace_path(&p, 6, Some(1)).unwrap();
        let last = path.last().unwrap();
        assert!((last.beta_pos_over_alpha[0].re - c.v_minus).abs() < 1e-3 * c.v_minus);
        assert!((last.beta_neg_over_alpha.re - c.w_minus).abs() < 1e-3 * c.w_minus);
        assert!((last.cv_over_ch_pos[0].re - c.k_pos_cv).abs() < 1e-3 * c.k_pos_cv.abs());
        let chs1 = last.chs1_over_cv.unwrap();
        assert!((chs1.re - c.k_pos_chs1).abs() < 1e-2 * c.k_pos_chs1.abs());
    }
}
