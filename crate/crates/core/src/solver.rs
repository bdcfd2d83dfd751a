//! Truncated series evaluation and the triangle scheme: series values far from
//! the origin, a direct linear solve on the triangle `T_M` near it, then
//! normalization over `T_K`.

use std::collections::BTreeMap;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compensation::TermTree;
use crate::convergence::compute_n;
use crate::error::{Result, SedError};
use crate::model::{from_internal, to_internal, BalanceEquations, InternalState, ModelParams, QueueState};
use crate::numeric::C64;

/// Entries in `(-NEGATIVE_DUST, 0)` are clipped to zero after normalization.
pub const NEGATIVE_DUST: f64 = 1e-12;

/// Which partial sums the accuracy criterion compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapRule {
    /// `p_L` against `p_{L-1}`, for every `L`.
    Consecutive,
    /// `p_L` against `p_{L-2}`, for `L >= 2`: one vertical and one horizontal
    /// pass per comparison. Vertical passes add nothing on `n = 0` and can add
    /// almost nothing for `n < 0`, which fools the consecutive rule.
    #[default]
    Round,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub eps: f64,
    pub l_max: usize,
    /// Inner triangle size; `None` picks `N + 2`.
    pub m: Option<usize>,
    /// Normalization triangle size; `None` picks `max(40, M + 30)`.
    pub k: Option<usize>,
    pub gap_rule: GapRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eps: 1e-4,
            l_max: 16,
            m: None,
            k: None,
            gap_rule: GapRule::default(),
        }
    }
}

impl SolverConfig {
    /// Resolves `M` and `K` against the convergence index and checks `N < M < K`.
    pub fn resolve(&self, n_index: usize) -> Result<(usize, usize)> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(SedError::InvalidParam(format!("eps must be positive, got {}", self.eps)));
        }
        let m = self.m.unwrap_or(n_index + 2);
        if m <= n_index {
            return Err(SedError::InvalidParam(format!(
                "M = {m} must exceed the convergence index N = {n_index}"
            )));
        }
        let k = self.k.unwrap_or((m + 30).max(40));
        if k <= m {
            return Err(SedError::InvalidParam(format!("K = {k} must exceed M = {m}")));
        }
        Ok((m, k))
    }
}

/// States `(m, n)` with `m >= 0` and `m + |n| <= size`, ring by ring.
pub fn triangle(size: usize) -> Vec<(i64, i64)> {
    (0..=size as i64).flat_map(ring).collect()
}

/// States with `m + |n| = k`.
pub fn ring(k: i64) -> impl Iterator<Item = (i64, i64)> {
    (0..=k).flat_map(move |m| {
        let d = k - m;
        let second = if d > 0 { Some((m, -d)) } else { None };
        std::iter::once((m, d)).chain(second)
    })
}

/// Partial sum `p_L(m, n)` of the series, unnormalized.
pub fn eval_series(tree: &TermTree, m: i64, n: i64, l: usize) -> Result<DVector<C64>> {
    if m < 0 {
        return Err(SedError::InvalidParam(format!("series evaluated at m = {m} < 0")));
    }
    Ok(tree.partial_sums(m, n, l)?.pop().expect("at least p_0"))
}

/// Relative gap `max_r |a_r - b_r| / |b_r|`.
fn relative_gap(a: &DVector<C64>, b: &DVector<C64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = (x - y).norm();
            if d == 0.0 {
                0.0
            } else {
                d / y.norm()
            }
        })
        .fold(0.0, f64::max)
}

/// Smallest `L` meeting the accuracy criterion, with `p_L`.
pub fn adaptive_l(tree: &TermTree, m: i64, n: i64, eps: f64, l_max: usize) -> Result<(DVector<C64>, usize)> {
    adaptive_l_with(tree, m, n, eps, l_max, GapRule::Consecutive)
}

/// As [`adaptive_l`] with a choice of gap rule. Fails with `DepthExceeded`
/// when the criterion needs passes beyond the built tree but within `l_max`.
pub fn adaptive_l_with(
    tree: &TermTree,
    m: i64,
    n: i64,
    eps: f64,
    l_max: usize,
    rule: GapRule,
) -> Result<(DVector<C64>, usize)> {
    if m < 0 {
        return Err(SedError::InvalidParam(format!("series evaluated at m = {m} < 0")));
    }
    let upto = l_max.min(tree.passes());
    let sums = tree.partial_sums(m, n, upto)?;
    let back = match rule {
        GapRule::Consecutive => 1,
        GapRule::Round => 2,
    };
    let mut gap = f64::INFINITY;
    for l in back..=upto {
        gap = relative_gap(&sums[l], &sums[l - back]);
        if gap < eps {
            return Ok((sums[l].clone(), l));
        }
    }
    if upto < l_max {
        return Err(SedError::DepthExceeded {
            requested: upto + 1,
            built: tree.passes(),
        });
    }
    Err(SedError::NoConvergenceWithinLmax { m, n, l_max, gap })
}

/// Solves the balance equations of every state in `T_size` with the values
/// in `outer` held fixed. Returns the values and the largest relative residual.
pub fn boundary_solve(
    p: &ModelParams,
    outer: &BTreeMap<(i64, i64), DVector<f64>>,
    size: usize,
) -> Result<(BTreeMap<(i64, i64), DVector<f64>>, f64)> {
    let eqs = BalanceEquations::new(p);
    let s = p.s();
    let states = triangle(size);
    let slot: BTreeMap<(i64, i64), usize> = states.iter().enumerate().map(|(i, &st)| (st, i)).collect();
    let dim = s * states.len();
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let mut b = DVector::<f64>::zeros(dim);
    for (row, &(m, n)) in states.iter().enumerate() {
        for t in eqs.terms_at(m, n) {
            let nb = (m + t.dm, n + t.dn);
            if let Some(&col) = slot.get(&nb) {
                let mut blk = a.view_mut((row * s, col * s), (s, s));
                blk += &t.coef;
            } else {
                let v = outer.get(&nb).ok_or(SedError::MissingNeighbor {
                    m,
                    n,
                    nm: nb.0,
                    nn: nb.1,
                })?;
                let mut rhs = b.rows_mut(row * s, s);
                rhs -= &t.coef * v;
            }
        }
    }
    let x = a.clone().lu().solve(&b).ok_or_else(|| SedError::SingularSystem {
        condition: f64::INFINITY,
        context: "triangle system".into(),
    })?;
    let inner: BTreeMap<(i64, i64), DVector<f64>> = states
        .iter()
        .enumerate()
        .map(|(i, &st)| (st, x.rows(i * s, s).into_owned()))
        .collect();
    let lookup = |st: (i64, i64)| inner.get(&st).or_else(|| outer.get(&st)).cloned();
    let worst = states
        .iter()
        .map(|&(m, n)| relative_residual(&eqs, m, n, lookup))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok((inner, worst))
}

/// `|residual| / sum |coef| |p(neighbor)|` of the balance equation at `(m, n)`.
pub fn relative_residual<F>(eqs: &BalanceEquations, m: i64, n: i64, prob: F) -> Result<f64>
where
    F: Fn((i64, i64)) -> Option<DVector<f64>>,
{
    let mut res = DVector::zeros(eqs.params().s());
    let mut scale = 0.0;
    for t in eqs.terms_at(m, n) {
        let nb = (m + t.dm, n + t.dn);
        let v = prob(nb).ok_or(SedError::MissingNeighbor {
            m,
            n,
            nm: nb.0,
            nn: nb.1,
        })?;
        let tv = &t.coef * v;
        scale += tv.norm();
        res += tv;
    }
    Ok(if scale > 0.0 { res.norm() / scale } else { 0.0 })
}

/// Normalized values and the normalization constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub probs: BTreeMap<(i64, i64), DVector<f64>>,
    /// Factor applied to the raw values.
    pub c: f64,
    /// Entries clipped from `(-1e-12, 0)` to zero.
    pub clipped: usize,
}

pub fn normalize(vals: &BTreeMap<(i64, i64), DVector<f64>>) -> Result<Normalized> {
    let total: f64 = vals.values().map(|v| v.sum()).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(SedError::NonPositiveMass(total));
    }
    let c = 1.0 / total;
    let mut clipped = 0;
    let mut probs = BTreeMap::new();
    for (&(m, n), v) in vals {
        let mut w = v * c;
        for (r, x) in w.iter_mut().enumerate() {
            if *x < 0.0 {
                if *x < -NEGATIVE_DUST {
                    return Err(SedError::NegativeProbability { m, n, r, value: *x });
                }
                *x = 0.0;
                clipped += 1;
            }
        }
        probs.insert((m, n), w);
    }
    if clipped > 0 {
        // Clipping moved a negligible amount of mass; restore the unit sum.
        let t: f64 = probs.values().map(|v| v.sum()).sum();
        for v in probs.values_mut() {
            *v /= t;
        }
    }
    Ok(Normalized { probs, c, clipped })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub n_index: usize,
    pub m: usize,
    pub k: usize,
    /// Passes used per state outside `T_M`.
    pub l_used: BTreeMap<(i64, i64), usize>,
    pub passes_built: usize,
    pub pruned_terms: usize,
    /// Largest `|Im p| / |p|` over the series values.
    pub max_imag_ratio: f64,
    /// Largest relative residual of the triangle equations.
    pub triangle_residual: f64,
    pub clipped: usize,
    /// Geometric estimate of the mass beyond `T_K`.
    pub tail_mass: f64,
}

impl Diagnostics {
    pub fn max_l_used(&self) -> usize {
        self.l_used.values().copied().max().unwrap_or(0)
    }
}

/// Normalized stationary distribution on `T_K`.
#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub params: ModelParams,
    pub probs: BTreeMap<(i64, i64), DVector<f64>>,
    pub c: f64,
    pub tree: TermTree,
    pub diagnostics: Diagnostics,
}

impl EquilibriumSolution {
    pub fn prob(&self, st: InternalState) -> Option<f64> {
        self.probs.get(&(st.m, st.n)).map(|v| v[st.r])
    }

    pub fn prob_queue(&self, q: QueueState) -> Option<f64> {
        self.prob(to_internal(q, self.params.s()))
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.values().map(|v| v.sum()).sum()
    }

    /// Largest relative balance residual over `T_ring`, with its state.
    pub fn max_balance_residual(&self, ring: usize) -> Result<(f64, (i64, i64))> {
        let eqs = BalanceEquations::new(&self.params);
        let lookup = |st: (i64, i64)| self.probs.get(&st).cloned();
        let mut worst = (0.0, (0, 0));
        for (m, n) in triangle(ring) {
            let r = relative_residual(&eqs, m, n, lookup)?;
            if r > worst.0 || r.is_nan() {
                worst = (r, (m, n));
            }
        }
        Ok(worst)
    }

    /// One record per state and phase, ordered by `(m, n, r)`.
    pub fn records(&self) -> Vec<StateRecord> {
        let s = self.params.s();
        let mut out = Vec::with_capacity(self.probs.len() * s);
        for (&(m, n), v) in &self.probs {
            for (r, &probability) in v.iter().enumerate() {
                let q = from_internal(InternalState { m, n, r }, s);
                out.push(StateRecord {
                    m,
                    n,
                    r,
                    q1: q.q1,
                    q2: q.q2,
                    probability,
                });
            }
        }
        out
    }

    /// Probabilities keyed by queue lengths.
    pub fn queue_map(&self) -> BTreeMap<QueueState, f64> {
        self.records()
            .into_iter()
            .map(|r| (QueueState { q1: r.q1, q2: r.q2 }, r.probability))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub m: i64,
    pub n: i64,
    pub r: usize,
    pub q1: u64,
    pub q2: u64,
    pub probability: f64,
}

pub const STATE_CSV_HEADER: &str = "m,n,r,q1,q2,probability";

/// CSV with a header row, probabilities to 17 significant digits.
pub fn write_state_csv<W: Write>(records: &[StateRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "{STATE_CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{},{},{},{},{},{:.16e}", r.m, r.n, r.r, r.q1, r.q2, r.probability)?;
    }
    Ok(())
}

fn evaluate_outer(
    tree: &TermTree,
    states: &[(i64, i64)],
    cfg: &SolverConfig,
) -> Vec<((i64, i64), Result<(DVector<C64>, usize)>)> {
    states
        .par_iter()
        .map(|&(m, n)| ((m, n), adaptive_l_with(tree, m, n, cfg.eps, cfg.l_max, cfg.gap_rule)))
        .collect()
}

/// Series on `T_K \ T_M`, direct solve on `T_M`, normalization over `T_K`.
pub fn solve(p: &ModelParams, cfg: &SolverConfig) -> Result<EquilibriumSolution> {
    let n_index = compute_n(p).map_err(|e| e.in_step("convergence index"))?;
    let (m_size, k_size) = cfg.resolve(n_index)?;
    let mut tree = TermTree::new(p).map_err(|e| e.in_step("initial solution"))?;
    tree.extend_to(2.min(cfg.l_max)).map_err(|e| e.in_step("compensation"))?;

    let mut pending: Vec<(i64, i64)> = (m_size as i64 + 1..=k_size as i64).flat_map(ring).collect();
    let mut series: BTreeMap<(i64, i64), DVector<C64>> = BTreeMap::new();
    let mut l_used = BTreeMap::new();
    while !pending.is_empty() {
        let mut again = Vec::new();
        for (st, res) in evaluate_outer(&tree, &pending, cfg) {
            match res {
                Ok((v, l)) => {
                    series.insert(st, v);
                    l_used.insert(st, l);
                }
                Err(SedError::DepthExceeded { .. }) => again.push(st),
                Err(e) => return Err(e.in_step("series evaluation")),
            }
        }
        if !again.is_empty() {
            let next = (tree.passes() + 2).min(cfg.l_max);
            tree.extend_to(next).map_err(|e| e.in_step("compensation"))?;
        }
        pending = again;
    }

    let mut max_imag_ratio = 0.0f64;
    let outer: BTreeMap<(i64, i64), DVector<f64>> = series
        .iter()
        .map(|(&st, v)| {
            for z in v.iter() {
                if z.norm() > 0.0 {
                    max_imag_ratio = max_imag_ratio.max(z.im.abs() / z.norm());
                }
            }
            (st, v.map(|z| z.re))
        })
        .collect();

    let (inner, triangle_residual) = boundary_solve(p, &outer, m_size).map_err(|e| e.in_step("triangle solve"))?;
    let mut all = outer;
    all.extend(inner);
    let norm = normalize(&all).map_err(|e| e.in_step("normalization"))?;
    let tail_mass = tail_estimate(&norm.probs, k_size as i64);

    let diagnostics = Diagnostics {
        n_index,
        m: m_size,
        k: k_size,
        l_used,
        passes_built: tree.passes(),
        pruned_terms: tree.pruned(),
        max_imag_ratio,
        triangle_residual,
        clipped: norm.clipped,
        tail_mass,
    };
    Ok(EquilibriumSolution {
        params: *p,
        probs: norm.probs,
        c: norm.c,
        tree,
        diagnostics,
    })
}

fn ring_mass(probs: &BTreeMap<(i64, i64), DVector<f64>>, k: i64) -> f64 {
    ring(k).filter_map(|st| probs.get(&st)).map(|v| v.sum()).sum()
}

/// Mass beyond ring `k`, extrapolating the decay of the last two rings.
fn tail_estimate(probs: &BTreeMap<(i64, i64), DVector<f64>>, k: i64) -> f64 {
    let last = ring_mass(probs, k);
    let before = ring_mass(probs, k - 1);
    if before <= 0.0 {
        return 0.0;
    }
    let ratio = last / before;
    if ratio >= 1.0 {
        f64::INFINITY
    } else {
        last * ratio / (1.0 - ratio)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub mean_q1: f64,
    pub mean_q2: f64,
    pub mean_total: f64,
    pub p_idle: f64,
    pub tail_mass: f64,
}

pub fn metrics(sol: &EquilibriumSolution) -> Metrics {
    let mut mean_q1 = 0.0;
    let mut mean_q2 = 0.0;
    for r in sol.records() {
        mean_q1 += r.q1 as f64 * r.probability;
        mean_q2 += r.q2 as f64 * r.probability;
    }
    Metrics {
        mean_q1,
        mean_q2,
        mean_total: mean_q1 + mean_q2,
        p_idle: sol.probs.get(&(0, 0)).map_or(0.0, |v| v[0]),
        tail_mass: sol.diagnostics.tail_mass,
    }
}

/// `P(q1, q2)` on `q1 < q1max`, `q2 < q2max`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub q1max: u64,
    pub q2max: u64,
    pub s: usize,
    /// Row-major in `q1`.
    pub cells: Vec<f64>,
}

impl Heatmap {
    pub fn get(&self, q1: u64, q2: u64) -> f64 {
        self.cells[(q1 * self.q2max + q2) as usize]
    }

    pub fn total(&self) -> f64 {
        self.cells.iter().sum()
    }

    /// Mass below, inside and above the band `s (q1 + 1) >= q2 + 1`, `s q1 <= q2`.
    pub fn band_masses(&self) -> (f64, f64, f64) {
        let s = self.s as u64;
        let (mut below, mut band, mut above) = (0.0, 0.0, 0.0);
        for q1 in 0..self.q1max {
            for q2 in 0..self.q2max {
                let v = self.get(q1, q2);
                if s * (q1 + 1) < q2 + 1 {
                    below += v;
                } else if s * q1 > q2 {
                    above += v;
                } else {
                    band += v;
                }
            }
        }
        (below, band, above)
    }
}

/// The `(q1, q2)` image of `T_K` is the rectangle `q1 <= K`, `q2 < (K + 1) s`.
pub fn heatmap(sol: &EquilibriumSolution, q1max: u64, q2max: u64) -> Result<Heatmap> {
    if q1max == 0 || q2max == 0 {
        return Err(SedError::InvalidParam(format!("empty grid {q1max}x{q2max}")));
    }
    let s = sol.params.s();
    let k = sol.diagnostics.k as u64;
    if q1max > k + 1 || q2max > (k + 1) * s as u64 {
        return Err(SedError::GridExceedsTruncation {
            q1max,
            q2max,
            k: sol.diagnostics.k,
        });
    }
    let mut cells = Vec::with_capacity((q1max * q2max) as usize);
    for q1 in 0..q1max {
        for q2 in 0..q2max {
            let v = sol.prob_queue(QueueState { q1, q2 }).ok_or(SedError::GridExceedsTruncation {
                q1max,
                q2max,
                k: sol.diagnostics.k,
            })?;
            cells.push(v);
        }
    }
    Ok(Heatmap { q1max, q2max, s, cells })
}
