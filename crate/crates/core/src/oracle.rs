//! Ground truth independent of the series: a direct stationary solve of the
//! `(q1, q2)` chain on a finite box, and a discrete-event simulation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SedError};
use crate::model::{ModelParams, QueueState};

/// Boxes whose edge carries more mass than this are rejected.
pub const BOX_MASS_LIMIT: f64 = 1e-6;

/// The states `0..=q1max` by `0..=q2max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationBox {
    pub q1max: u64,
    pub q2max: u64,
}

impl TruncationBox {
    pub fn new(q1max: u64, q2max: u64) -> Self {
        TruncationBox { q1max, q2max }
    }

    pub fn contains(&self, q: QueueState) -> bool {
        q.q1 <= self.q1max && q.q2 <= self.q2max
    }

    fn check(&self, s: usize) -> Result<()> {
        let min = 4 * s as u64;
        if self.q1max < min || self.q2max < min {
            return Err(SedError::InvalidParam(format!(
                "truncation box {}x{} must be at least {min} in each direction",
                self.q1max, self.q2max
            )));
        }
        Ok(())
    }
}

/// Where an arrival goes: `Some(true)` queue 1, `Some(false)` queue 2, `None`
/// for a tie.
pub fn sed_choice(q1: u64, q2: u64, s: usize) -> Option<bool> {
    // q1 + 1 against (q2 + 1) / s, compared in integers.
    let left = s as u64 * (q1 + 1);
    let right = q2 + 1;
    match left.cmp(&right) {
        std::cmp::Ordering::Less => Some(true),
        std::cmp::Ordering::Greater => Some(false),
        std::cmp::Ordering::Equal => None,
    }
}

/// Probability that an arrival in state `(q1, q2)` joins queue 1.
pub fn join_first(q1: u64, q2: u64, p: &ModelParams) -> f64 {
    match sed_choice(q1, q2, p.s()) {
        Some(true) => 1.0,
        Some(false) => 0.0,
        None => p.q(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub probs: BTreeMap<QueueState, f64>,
    pub bounds: TruncationBox,
    /// Mass on states within one step of the box edge.
    pub boundary_mass: f64,
}

/// Stationary distribution of the chain restricted to `bounds`, arrivals that
/// would leave the box being lost.
pub fn oracle_solve(p: &ModelParams, bounds: TruncationBox) -> Result<OracleSolution> {
    bounds.check(p.s())?;
    let sol = oracle_solve_unchecked(p, bounds)?;
    if sol.boundary_mass > BOX_MASS_LIMIT {
        return Err(SedError::BoxTooSmall {
            boundary_mass: sol.boundary_mass,
            limit: BOX_MASS_LIMIT,
        });
    }
    Ok(sol)
}

/// Grows the box in steps of `step` (in `q1`, `s * step` in `q2`) until the
/// boundary mass is below `limit`.
pub fn oracle_solve_certified(p: &ModelParams, start: TruncationBox, step: u64, limit: f64) -> Result<OracleSolution> {
    let mut bounds = start;
    for _ in 0..64 {
        bounds.check(p.s())?;
        let sol = oracle_solve_unchecked(p, bounds)?;
        if sol.boundary_mass < limit {
            return Ok(sol);
        }
        bounds.q1max += step;
        bounds.q2max += step * p.s() as u64;
    }
    Err(SedError::BoxTooSmall {
        boundary_mass: f64::NAN,
        limit,
    })
}

/// Off-diagonal rates stored in a band `|i - j| <= w`.
struct Band {
    w: usize,
    data: Vec<f64>,
}

impl Band {
    fn new(n: usize, w: usize) -> Self {
        Band {
            w,
            data: vec![0.0; n * (2 * w + 1)],
        }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * (2 * self.w + 1) + j + self.w - i]
    }

    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * (2 * self.w + 1) + j + self.w - i]
    }
}

/// GTH state reduction on the banded generator. Every update adds
/// nonnegative numbers, so each probability keeps full relative accuracy.
fn oracle_solve_unchecked(p: &ModelParams, bounds: TruncationBox) -> Result<OracleSolution> {
    let lam = p.lambda();
    let s = p.s() as f64;
    let (n1, n2) = (bounds.q1max as usize + 1, bounds.q2max as usize + 1);
    // The shorter side runs fastest, which keeps the band narrow.
    let q1_fast = n1 <= n2;
    let w = n1.min(n2);
    let idx = |q1: usize, q2: usize| if q1_fast { q2 * n1 + q1 } else { q1 * n2 + q2 };
    let n = n1 * n2;
    let mut g = Band::new(n, w);
    for q1 in 0..n1 {
        for q2 in 0..n2 {
            let from = idx(q1, q2);
            let f = join_first(q1 as u64, q2 as u64, p);
            if q1 + 1 < n1 && f > 0.0 {
                *g.at_mut(from, idx(q1 + 1, q2)) += lam * f;
            }
            if q2 + 1 < n2 && f < 1.0 {
                *g.at_mut(from, idx(q1, q2 + 1)) += lam * (1.0 - f);
            }
            if q1 > 0 {
                *g.at_mut(from, idx(q1 - 1, q2)) += 1.0;
            }
            if q2 > 0 {
                *g.at_mut(from, idx(q1, q2 - 1)) += s;
            }
        }
    }
    let mut out_rate = vec![0.0; n];
    for k in (1..n).rev() {
        let lo = k.saturating_sub(w);
        let total: f64 = (lo..k).map(|j| g.at(k, j)).sum();
        if !(total > 0.0) {
            return Err(SedError::SingularGenerator);
        }
        out_rate[k] = total;
        for i in lo..k {
            let into = g.at(i, k);
            if into == 0.0 {
                continue;
            }
            let f = into / total;
            for j in lo..k {
                let back = g.at(k, j);
                if back != 0.0 && i != j {
                    *g.at_mut(i, j) += f * back;
                }
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        let lo = k.saturating_sub(w);
        pi[k] = (lo..k).map(|i| pi[i] * g.at(i, k)).sum::<f64>() / out_rate[k];
    }
    let total: f64 = pi.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(SedError::SingularGenerator);
    }
    let mut probs = BTreeMap::new();
    let mut boundary_mass = 0.0;
    for q1 in 0..n1 {
        for q2 in 0..n2 {
            let x = pi[idx(q1, q2)] / total;
            let q = QueueState {
                q1: q1 as u64,
                q2: q2 as u64,
            };
            if q.q1 + 1 >= bounds.q1max || q.q2 + 1 >= bounds.q2max {
                boundary_mass += x;
            }
            probs.insert(q, x);
        }
    }
    Ok(OracleSolution {
        probs,
        bounds,
        boundary_mass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub events: u64,
    pub seed: u64,
    pub warmup: u64,
    /// Number of batches for the batch-means error estimate.
    pub batches: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            events: 1_000_000,
            seed: 0,
            warmup: 10_000,
            batches: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEstimate {
    /// Fraction of time spent in each state after warm-up.
    pub freq: BTreeMap<QueueState, f64>,
    /// Batch-means standard error of each frequency.
    pub std_err: BTreeMap<QueueState, f64>,
    pub time: f64,
}

/// Event-driven simulation with exponential interarrival and service times.
pub fn simulate(p: &ModelParams, cfg: &SimConfig) -> Result<SimEstimate> {
    if cfg.events <= cfg.warmup {
        return Err(SedError::InvalidParam(format!(
            "events ({}) must exceed warmup ({})",
            cfg.events, cfg.warmup
        )));
    }
    if cfg.batches < 2 || cfg.batches > cfg.events - cfg.warmup {
        return Err(SedError::InvalidParam(format!("batch count {} out of range", cfg.batches)));
    }
    let s = p.s() as f64;
    let lam = p.lambda();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
    let (mut q1, mut q2) = (0u64, 0u64);

    let measured = cfg.events - cfg.warmup;
    let per_batch = measured / cfg.batches;
    let mut batches: Vec<BTreeMap<QueueState, f64>> = Vec::with_capacity(cfg.batches as usize);
    let mut batch_time = Vec::with_capacity(cfg.batches as usize);
    let mut current: BTreeMap<QueueState, f64> = BTreeMap::new();
    let mut elapsed = 0.0;

    for k in 0..cfg.events {
        let rate = lam + if q1 > 0 { 1.0 } else { 0.0 } + if q2 > 0 { s } else { 0.0 };
        let dt = Exp::new(rate).expect("positive rate").sample(&mut rng);
        if k >= cfg.warmup {
            *current.entry(QueueState { q1, q2 }).or_insert(0.0) += dt;
            elapsed += dt;
            let done = k - cfg.warmup + 1;
            if done % per_batch == 0 && (batches.len() as u64) < cfg.batches {
                batches.push(std::mem::take(&mut current));
                batch_time.push(std::mem::replace(&mut elapsed, 0.0));
            }
        }
        let u = rng.gen::<f64>() * rate;
        if u < lam {
            let first = match sed_choice(q1, q2, p.s()) {
                Some(f) => f,
                None => rng.gen::<f64>() < p.q(),
            };
            if first {
                q1 += 1;
            } else {
                q2 += 1;
            }
        } else if q1 > 0 && u < lam + 1.0 {
            q1 -= 1;
        } else {
            q2 -= 1;
        }
    }
    // Events past the last full batch are discarded.
    let total_time: f64 = batch_time.iter().sum();
    let nb = batches.len() as f64;
    let mut states: BTreeMap<QueueState, Vec<f64>> = BTreeMap::new();
    for (i, b) in batches.iter().enumerate() {
        for (&q, &t) in b {
            states.entry(q).or_insert_with(|| vec![0.0; batches.len()])[i] = t / batch_time[i];
        }
    }
    let mut freq = BTreeMap::new();
    let mut std_err = BTreeMap::new();
    for (q, xs) in states {
        let time_in: f64 = batches.iter().map(|b| b.get(&q).copied().unwrap_or(0.0)).sum();
        let mean = xs.iter().sum::<f64>() / nb;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nb - 1.0);
        freq.insert(q, time_in / total_time);
        std_err.insert(q, (var / nb).sqrt());
    }
    Ok(SimEstimate {
        freq,
        std_err,
        time: total_time,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompareReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_state: Option<QueueState>,
    /// Entries above the floor that entered the comparison.
    pub compared: usize,
    /// Window states absent from `a`.
    pub missing: usize,
}

/// Entries of `b` below this are skipped by [`compare`].
pub const COMPARE_FLOOR: f64 = 1e-12;

/// Relative error `|a - b| / b` over the window, `b` being the reference.
pub fn compare(a: &BTreeMap<QueueState, f64>, b: &BTreeMap<QueueState, f64>, window: TruncationBox) -> CompareReport {
    let mut rep = CompareReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_state: None,
        compared: 0,
        missing: 0,
    };
    for q1 in 0..=window.q1max {
        for q2 in 0..=window.q2max {
            let q = QueueState { q1, q2 };
            let Some(&y) = b.get(&q) else { continue };
            if y <= COMPARE_FLOOR {
                continue;
            }
            let Some(&x) = a.get(&q) else {
                rep.missing += 1;
                continue;
            };
            let abs = (x - y).abs();
            let rel = abs / y;
            rep.compared += 1;
            rep.max_abs_err = rep.max_abs_err.max(abs);
            if rel > rep.max_rel_err || rep.worst_state.is_none() {
                rep.max_rel_err = rel;
                rep.worst_state = Some(q);
            }
        }
    }
    rep
}
