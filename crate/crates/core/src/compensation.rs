//! The initial solution and the tree of compensation terms.
//!
//! Level `l` holds nodes `alpha_{l,i}`. A node owns a horizontal bundle: the
//! vector `h`, `s` positive-quadrant terms with indices `d(i)+1 ..= d(i)+s` and
//! one negative-quadrant term with index `i(s+1)`, where `d(i) = (i-1)(s+1)`.
//! The vertical step applied to the term with index `k` creates node
//! `alpha_{l+1,k}`.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SedError};
use crate::kernel::{
    alpha_neg, beta_neg, betas_pos_with_ratio, eigvec_neg, eigvec_pos_from_ratio, partner_alpha_pos, Side,
};
use crate::model::{build_rate_matrices, real_times, ModelParams, RateMatrices};
use crate::numeric::{solve_equilibrated, C64, ZERO};

/// Systems with a larger (equilibrated) condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Terms whose `|coeff| * |beta|` falls below this are dropped.
pub const PRUNE_THRESHOLD: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum TermKind {
    /// Created by a horizontal step (or the initial solution), coefficient `c-hat`.
    Horizontal,
    /// Created by a vertical step, coefficient `c-tilde`.
    Vertical,
}

/// One product-form term `coeff * alpha^m * beta^|n| * eigvec`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub level: usize,
    pub index: usize,
    pub kind: TermKind,
    pub side: Side,
    /// Branch of the positive kernel (1 for negative-side terms).
    pub branch: usize,
    pub alpha: C64,
    pub beta: C64,
    pub coeff: C64,
    pub eigvec: DVector<C64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizontalVector {
    pub level: usize,
    pub index: usize,
    pub h: DVector<C64>,
}

/// Horizontal vector plus the `s + 1` terms sharing one `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub h: HorizontalVector,
    /// Positive terms first (sorted by index), the negative term last.
    pub terms: Vec<Term>,
    /// Condition estimate of the linear system that produced the bundle.
    pub condition: f64,
    /// Residual of the equation left out of the initial-solution system
    /// (zero for horizontal steps, which solve all rows).
    pub eta_tilde_residual: f64,
}

impl Bundle {
    pub fn pos_terms(&self) -> impl Iterator<Item = &Term> {
        self.terms.iter().filter(|t| t.side == Side::Positive)
    }

    pub fn neg_term(&self) -> Option<&Term> {
        self.terms.iter().find(|t| t.side == Side::Negative)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub level: usize,
    pub index: usize,
    pub alpha: C64,
    /// Vertical term that introduced this `alpha`; `None` at level 0.
    pub origin: Option<Term>,
    /// Filled in by the horizontal pass at this level.
    pub bundle: Option<Bundle>,
}

/// Child index base `d(i) = (i - 1)(s + 1)`.
pub fn child_base(index: usize, s: usize) -> usize {
    (index - 1) * (s + 1)
}

/// Whether a term index refers to a negative-side term.
pub fn is_negative_index(index: usize, s: usize) -> bool {
    index % (s + 1) == 0
}

struct SystemParts {
    matrix: DMatrix<C64>,
    betas: Vec<(C64, usize, DVector<C64>)>,
    beta_n: C64,
    w: DVector<C64>,
}

/// Builds the `(2s+1) x (2s+1)` matrix of the horizontal equations for the
/// unknowns `(h, c_1, .., c_s, c_{s+1})`.
fn assemble(alpha: C64, p: &ModelParams, r: &RateMatrices) -> Result<SystemParts> {
    let s = p.s();
    let (roots, ratios) = betas_pos_with_ratio(alpha, p)?;
    let beta_n = beta_neg(alpha, p)?;
    let w = eigvec_neg(alpha, beta_n, p)?.entries;
    let betas: Vec<_> = roots
        .iter()
        .zip(ratios)
        .map(|(root, y)| (root.value, root.branch, eigvec_pos_from_ratio(y, p).entries))
        .collect();

    let n = 2 * s + 1;
    let mut a = DMatrix::<C64>::zeros(n, n);
    // Rows 0..s: (A_{0,1} + alpha I) h - alpha sum c_i v_i.
    for i in 0..s {
        for j in 0..s {
            a[(i, j)] = C64::new(r.a_01[(i, j)], 0.0);
        }
        a[(i, i)] += alpha;
    }
    for (k, (_, _, v)) in betas.iter().enumerate() {
        for i in 0..s {
            a[(i, s + k)] = -alpha * v[i];
        }
    }
    // Rows s..2s: alpha B_00 h + sum c_i beta_i (A_{1,-1} + alpha A_{0,-1}) v_i
    //             + c_{s+1} beta_{s+1} (B_{1,1} + alpha B_{0,1}) w.
    for i in 0..s {
        for j in 0..s {
            a[(s + i, j)] = alpha * r.b_00[(i, j)];
        }
    }
    for (k, (beta, _, v)) in betas.iter().enumerate() {
        let col = pos_h_column(*beta, alpha, v, r);
        for i in 0..s {
            a[(s + i, s + k)] = col[i];
        }
    }
    let col = neg_h_column(beta_n, alpha, &w, r);
    for i in 0..s {
        a[(s + i, 2 * s)] = col[i];
    }
    // Row 2s: alpha s h(0) + lambda q h(s-1) - alpha s c_{s+1}.
    let sf = s as f64;
    a[(2 * s, 0)] += alpha * sf;
    a[(2 * s, s - 1)] += C64::new(p.lambda() * p.q(), 0.0);
    a[(2 * s, 2 * s)] = -alpha * sf;
    Ok(SystemParts {
        matrix: a,
        betas,
        beta_n,
        w,
    })
}

fn pos_h_column(beta: C64, alpha: C64, v: &DVector<C64>, r: &RateMatrices) -> DVector<C64> {
    (real_times(&r.a_1m1, v) + real_times(&r.a_0m1, v) * alpha) * beta
}

fn neg_h_column(beta: C64, alpha: C64, w: &DVector<C64>, r: &RateMatrices) -> DVector<C64> {
    (real_times(&r.b_11, w) + real_times(&r.b_01, w) * alpha) * beta
}

fn make_bundle(
    level: usize,
    index: usize,
    alpha: C64,
    parts: SystemParts,
    x: &DVector<C64>,
    condition: f64,
    eta_tilde_residual: f64,
    s: usize,
) -> Bundle {
    let base = child_base(index, s);
    let mut terms: Vec<Term> = parts
        .betas
        .into_iter()
        .enumerate()
        .map(|(k, (beta, branch, v))| Term {
            level,
            index: base + k + 1,
            kind: TermKind::Horizontal,
            side: Side::Positive,
            branch,
            alpha,
            beta,
            coeff: x[s + k],
            eigvec: v,
        })
        .collect();
    terms.push(Term {
        level,
        index: base + s + 1,
        kind: TermKind::Horizontal,
        side: Side::Negative,
        branch: 1,
        alpha,
        beta: parts.beta_n,
        coeff: x[2 * s],
        eigvec: parts.w,
    });
    Bundle {
        h: HorizontalVector {
            level,
            index,
            h: x.rows(0, s).into_owned(),
        },
        terms,
        condition,
        eta_tilde_residual,
    }
}

/// Determinant of the full horizontal system at `alpha`, with columns scaled
/// to unit norm. It vanishes where a horizontal solution with zero right-hand
/// side exists.
pub fn horizontal_determinant(alpha: C64, p: &ModelParams) -> Result<C64> {
    let r = build_rate_matrices(p);
    let mut a = assemble(alpha, p, &r)?.matrix;
    for mut col in a.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col.scale_mut(1.0 / n);
        }
    }
    Ok(a.determinant())
}

/// The level-0 bundle at `alpha = rho^{1+s}` with `c_{s+1} = 1`.
pub fn initial_solution(p: &ModelParams) -> Result<Bundle> {
    let r = build_rate_matrices(p);
    initial_solution_with(p, &r)
}

fn initial_solution_with(p: &ModelParams, r: &RateMatrices) -> Result<Bundle> {
    let s = p.s();
    let alpha = C64::new(p.rho().powi(s as i32 + 1), 0.0);
    let parts = assemble(alpha, p, r).map_err(|e| e.in_step("initial solution"))?;
    let a = &parts.matrix;
    // Fix c_{s+1} = 1 and solve the first 2s rows for (h, c_1..c_s).
    let top = a.view((0, 0), (2 * s, 2 * s)).into_owned();
    let rhs = -a.view((0, 2 * s), (2 * s, 1)).column(0).into_owned();
    let (y, cond) = solve_equilibrated(&top, &rhs, MAX_CONDITION, "initial solution")?;
    let mut x = DVector::zeros(2 * s + 1);
    x.rows_mut(0, 2 * s).copy_from(&y);
    x[2 * s] = C64::new(1.0, 0.0);
    let row = a.row(2 * s);
    let scale = row.iter().zip(x.iter()).map(|(a, b)| (a * b).norm()).sum::<f64>();
    let eta = (row * &x)[0].norm() / scale;
    Ok(make_bundle(0, 1, alpha, parts, &x, cond, eta, s))
}

/// Compensates the vertical boundary for a positive-side horizontal term.
pub fn vertical_step_pos(t: &Term, p: &ModelParams) -> Result<Term> {
    let lam = p.lambda();
    let alpha1 = partner_alpha_pos(t.alpha, t.beta, p)?;
    let den = 1.0 - t.beta / alpha1 * lam;
    if den == ZERO {
        return Err(SedError::DivideByZero("vertical_step_pos"));
    }
    let coeff = -t.coeff * (1.0 - t.beta / t.alpha * lam) / den;
    Ok(Term {
        level: t.level + 1,
        index: t.index,
        kind: TermKind::Vertical,
        side: Side::Positive,
        branch: t.branch,
        alpha: alpha1,
        beta: t.beta,
        coeff,
        eigvec: t.eigvec.clone(),
    })
}

/// Compensates the vertical boundary for the negative-side horizontal term.
pub fn vertical_step_neg(t: &Term, p: &ModelParams) -> Result<Term> {
    let s = p.s();
    let (lam, sf) = (p.lambda(), s as f64);
    let alpha1 = alpha_neg(t.beta, p)?;
    let w1 = eigvec_neg(alpha1, t.beta, p)?.entries;
    let den = sf - t.beta / alpha1 * lam * w1[s - 1];
    if den == ZERO {
        return Err(SedError::DivideByZero("vertical_step_neg"));
    }
    let coeff = -t.coeff * (sf - t.beta / t.alpha * lam * t.eigvec[s - 1]) / den;
    Ok(Term {
        level: t.level + 1,
        index: t.index,
        kind: TermKind::Vertical,
        side: Side::Negative,
        branch: 1,
        alpha: alpha1,
        beta: t.beta,
        coeff,
        eigvec: w1,
    })
}

pub fn vertical_step(t: &Term, p: &ModelParams) -> Result<Term> {
    match t.side {
        Side::Positive => vertical_step_pos(t, p),
        Side::Negative => vertical_step_neg(t, p),
    }
}

fn horizontal_step_with(t: &Term, p: &ModelParams, r: &RateMatrices) -> Result<Bundle> {
    let s = p.s();
    let alpha = t.alpha;
    let parts = assemble(alpha, p, r)?;
    let mut rhs = DVector::<C64>::zeros(2 * s + 1);
    match t.side {
        Side::Positive => {
            for i in 0..s {
                rhs[i] = t.coeff * alpha * t.eigvec[i];
            }
            let col = pos_h_column(t.beta, alpha, &t.eigvec, r);
            for i in 0..s {
                rhs[s + i] = -t.coeff * col[i];
            }
        }
        Side::Negative => {
            let col = neg_h_column(t.beta, alpha, &t.eigvec, r);
            for i in 0..s {
                rhs[s + i] = -t.coeff * col[i];
            }
            rhs[2 * s] = t.coeff * alpha * s as f64;
        }
    }
    let (x, cond) = solve_equilibrated(&parts.matrix, &rhs, MAX_CONDITION, "horizontal step")?;
    Ok(make_bundle(t.level, t.index, alpha, parts, &x, cond, 0.0, s))
}

/// Compensates the horizontal boundary for a vertical term, positive side.
pub fn horizontal_step_pos(t: &Term, p: &ModelParams) -> Result<Bundle> {
    debug_assert_eq!(t.side, Side::Positive);
    horizontal_step_with(t, p, &build_rate_matrices(p))
}

/// Compensates the horizontal boundary for a vertical term, negative side.
pub fn horizontal_step_neg(t: &Term, p: &ModelParams) -> Result<Bundle> {
    debug_assert_eq!(t.side, Side::Negative);
    horizontal_step_with(t, p, &build_rate_matrices(p))
}

/// The tree of compensation terms, grown pass by pass.
#[derive(Debug, Clone)]
pub struct TermTree {
    params: ModelParams,
    rates: RateMatrices,
    levels: Vec<Vec<Node>>,
    passes: usize,
    pruned: usize,
}

impl TermTree {
    /// Tree holding only the initial solution (zero passes).
    pub fn new(p: &ModelParams) -> Result<Self> {
        let rates = build_rate_matrices(p);
        let bundle = initial_solution_with(p, &rates)?;
        let root = Node {
            level: 0,
            index: 1,
            alpha: bundle.terms[0].alpha,
            origin: None,
            bundle: Some(bundle),
        };
        Ok(TermTree {
            params: *p,
            rates,
            levels: vec![vec![root]],
            passes: 0,
            pruned: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn rates(&self) -> &RateMatrices {
        &self.rates
    }

    /// Number of completed compensation passes (`L`).
    pub fn passes(&self) -> usize {
        self.passes
    }

    /// Terms dropped because their magnitude underflowed.
    pub fn pruned(&self) -> usize {
        self.pruned
    }

    pub fn levels(&self) -> &[Vec<Node>] {
        &self.levels
    }

    pub fn root(&self) -> &Node {
        &self.levels[0][0]
    }

    pub fn term_count(&self) -> usize {
        self.levels
            .iter()
            .flatten()
            .map(|n| n.origin.is_some() as usize + n.bundle.as_ref().map_or(0, |b| b.terms.len()))
            .sum()
    }

    /// Grows the tree until `passes` compensation passes are complete.
    pub fn extend_to(&mut self, passes: usize) -> Result<()> {
        while self.passes < passes {
            self.step()?;
        }
        Ok(())
    }

    fn step(&mut self) -> Result<()> {
        let p = self.params;
        let next = self.passes + 1;
        if next % 2 == 1 {
            // Vertical pass: every horizontal term at the last level spawns a node below.
            let last = self.levels.last().unwrap();
            let parents: Vec<&Term> = last
                .iter()
                .filter_map(|n| n.bundle.as_ref())
                .flat_map(|b| b.terms.iter())
                .collect();
            let made: Vec<Result<Option<Node>>> = parents
                .par_iter()
                .map(|t| {
                    let v = vertical_step(t, &p).map_err(|e| e.at_node(t.level, t.index))?;
                    if !alive(&v) {
                        return Ok(None);
                    }
                    Ok(Some(Node {
                        level: v.level,
                        index: v.index,
                        alpha: v.alpha,
                        origin: Some(v),
                        bundle: None,
                    }))
                })
                .collect();
            let mut nodes = Vec::with_capacity(made.len());
            for m in made {
                match m? {
                    Some(n) => nodes.push(n),
                    None => self.pruned += 1,
                }
            }
            self.levels.push(nodes);
        } else {
            // Horizontal pass on the newest level.
            let rates = &self.rates;
            let last = self.levels.last_mut().unwrap();
            let bundles: Vec<Result<Bundle>> = last
                .par_iter()
                .map(|n| {
                    let t = n.origin.as_ref().expect("non-root nodes carry their vertical term");
                    horizontal_step_with(t, &p, rates).map_err(|e| e.at_node(n.level, n.index))
                })
                .collect();
            let mut pruned = 0;
            for (node, b) in last.iter_mut().zip(bundles) {
                let mut b = b?;
                let before = b.terms.len();
                b.terms.retain(alive);
                pruned += before - b.terms.len();
                node.bundle = Some(b);
            }
            self.pruned += pruned;
        }
        self.passes = next;
        Ok(())
    }

    /// Contribution of pass `pass` alone to `p(m, n)`.
    pub fn pass_contribution(&self, pass: usize, m: i64, n: i64) -> DVector<C64> {
        let s = self.params.s();
        let mut out = DVector::zeros(s);
        let level = pass / 2;
        if pass > self.passes || level >= self.levels.len() {
            return out;
        }
        let nodes = &self.levels[if pass % 2 == 0 { level } else { level + 1 }];
        let side = if n > 0 { Side::Positive } else { Side::Negative };
        let k = n.unsigned_abs() as i32;
        for node in nodes {
            let am = node.alpha.powi(m as i32);
            if pass % 2 == 0 {
                let Some(b) = &node.bundle else { continue };
                if n == 0 {
                    out += &b.h.h * am;
                    continue;
                }
                for t in b.terms.iter().filter(|t| t.side == side) {
                    out += &t.eigvec * (t.coeff * am * t.beta.powi(k));
                }
            } else if n != 0 {
                let t = node.origin.as_ref().unwrap();
                if t.side == side {
                    out += &t.eigvec * (t.coeff * am * t.beta.powi(k));
                }
            }
        }
        out
    }

    /// Partial sums `p_0, .., p_upto` at `(m, n)`.
    pub fn partial_sums(&self, m: i64, n: i64, upto: usize) -> Result<Vec<DVector<C64>>> {
        if upto > self.passes {
            return Err(SedError::DepthExceeded {
                requested: upto,
                built: self.passes,
            });
        }
        let mut acc = DVector::zeros(self.params.s());
        Ok((0..=upto)
            .map(|l| {
                acc += self.pass_contribution(l, m, n);
                acc.clone()
            })
            .collect())
    }

    /// Writes one whitespace-separated record per term and per horizontal vector.
    pub fn write_text<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# passes {} pruned {}", self.passes, self.pruned)?;
        writeln!(
            w,
            "# record level index kind side branch alpha_re alpha_im beta_re beta_im coeff_re coeff_im vector(re im)..."
        )?;
        for rec in self.records() {
            write!(
                w,
                "{} {} {} {} {} {} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}",
                rec.record,
                rec.level,
                rec.index,
                rec.kind,
                rec.side,
                rec.branch,
                rec.alpha[0],
                rec.alpha[1],
                rec.beta[0],
                rec.beta[1],
                rec.coeff[0],
                rec.coeff[1]
            )?;
            for z in &rec.vector {
                write!(w, " {:.17e} {:.17e}", z[0], z[1])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Flat list of records, vertical terms first within a level.
    pub fn records(&self) -> Vec<TermRecord> {
        let mut out = Vec::new();
        for level in &self.levels {
            for node in level {
                if let Some(t) = &node.origin {
                    out.push(TermRecord::from_term(t));
                }
                if let Some(b) = &node.bundle {
                    out.push(TermRecord {
                        record: "h",
                        level: b.h.level,
                        index: b.h.index,
                        kind: "-",
                        side: "-",
                        branch: 0,
                        alpha: [node.alpha.re, node.alpha.im],
                        beta: [0.0, 0.0],
                        coeff: [0.0, 0.0],
                        vector: b.h.h.iter().map(|z| [z.re, z.im]).collect(),
                    });
                    out.extend(b.terms.iter().map(TermRecord::from_term));
                }
            }
        }
        out
    }
}

fn alive(t: &Term) -> bool {
    let mag = t.coeff.norm() * t.beta.norm();
    mag.is_finite() && mag >= PRUNE_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermRecord {
    pub record: &'static str,
    pub level: usize,
    pub index: usize,
    pub kind: &'static str,
    pub side: &'static str,
    pub branch: usize,
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub coeff: [f64; 2],
    pub vector: Vec<[f64; 2]>,
}

impl TermRecord {
    fn from_term(t: &Term) -> Self {
        TermRecord {
            record: "term",
            level: t.level,
            index: t.index,
            kind: match t.kind {
                TermKind::Horizontal => "horizontal",
                TermKind::Vertical => "vertical",
            },
            side: match t.side {
                Side::Positive => "pos",
                Side::Negative => "neg",
            },
            branch: t.branch,
            alpha: [t.alpha.re, t.alpha.im],
            beta: [t.beta.re, t.beta.im],
            coeff: [t.coeff.re, t.coeff.im],
            vector: t.eigvec.iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

/// Grows a tree with `passes` compensation passes.
pub fn grow_tree(p: &ModelParams, passes: usize) -> Result<TermTree> {
    let mut tree = TermTree::new(p)?;
    tree.extend_to(passes)?;
    Ok(tree)
}
