//! Parameters, state mapping, transition-rate blocks and balance equations.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SedError};

/// Server speed ratio `s`, utilization `rho` and tie-break probability `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    s: usize,
    rho: f64,
    q: f64,
}

impl ModelParams {
    pub fn new(s: i64, rho: f64, q: f64) -> Result<Self> {
        validate_params(s, rho, q)
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Arrival rate, `rho * (1 + s)`.
    pub fn lambda(&self) -> f64 {
        self.rho * (1 + self.s) as f64
    }

    /// Total event rate `lambda + 1 + s`.
    pub fn total_rate(&self) -> f64 {
        (1 + self.s) as f64 * (self.rho + 1.0)
    }
}

pub fn validate_params(s: i64, rho: f64, q: f64) -> Result<ModelParams> {
    if s < 1 {
        return Err(SedError::InvalidParam(format!("s must be a positive integer, got {s}")));
    }
    if !rho.is_finite() || rho.is_nan() {
        return Err(SedError::InvalidParam(format!("rho must be finite, got {rho}")));
    }
    if rho >= 1.0 {
        return Err(SedError::UnstableSystem { rho });
    }
    if rho <= 0.0 {
        return Err(SedError::InvalidParam(format!("rho must be positive, got {rho}")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(SedError::InvalidParam(format!("q must lie in [0, 1], got {q}")));
    }
    Ok(ModelParams {
        s: s as usize,
        rho,
        q,
    })
}

/// Queue lengths of the slow (rate 1) and fast (rate s) server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QueueState {
    pub q1: u64,
    pub q2: u64,
}

/// Group coordinates: `j = q2 / s` full groups in queue 2, `m = min(q1, j)`,
/// `n = j - q1`, `r = q2 mod s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InternalState {
    pub m: i64,
    pub n: i64,
    pub r: usize,
}

pub fn to_internal(st: QueueState, s: usize) -> InternalState {
    let s = s as u64;
    let j = st.q2 / s;
    InternalState {
        m: st.q1.min(j) as i64,
        n: j as i64 - st.q1 as i64,
        r: (st.q2 % s) as usize,
    }
}

pub fn from_internal(st: InternalState, s: usize) -> QueueState {
    debug_assert!(st.m >= 0 && st.r < s);
    let (q1, j) = if st.n >= 0 {
        (st.m, st.m + st.n)
    } else {
        (st.m - st.n, st.m)
    };
    QueueState {
        q1: q1 as u64,
        q2: (j * s as i64) as u64 + st.r as u64,
    }
}

/// Transition-rate blocks. Rows index the destination phase `r`, columns the
/// source phase, and `A_{x,y}` multiplies `p(m - x, n - y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrices {
    pub a_1m1: DMatrix<f64>,
    pub a_01: DMatrix<f64>,
    pub a_m11: DMatrix<f64>,
    pub a_0m1: DMatrix<f64>,
    pub a_00: DMatrix<f64>,
    pub b_11: DMatrix<f64>,
    pub b_01: DMatrix<f64>,
    pub b_0m1: DMatrix<f64>,
    pub b_m1m1: DMatrix<f64>,
    pub b_00: DMatrix<f64>,
}

fn unit(s: usize, x: usize, y: usize, v: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(s, s);
    m[(x, y)] = v;
    m
}

fn subdiagonal(s: usize) -> DMatrix<f64> {
    DMatrix::from_fn(s, s, |i, j| if i == j + 1 { 1.0 } else { 0.0 })
}

pub fn build_rate_matrices(p: &ModelParams) -> RateMatrices {
    let s = p.s();
    let sf = s as f64;
    let lam = p.lambda();
    let id = DMatrix::<f64>::identity(s, s);
    let l = subdiagonal(s);
    let a_00 = -p.total_rate() * &id + sf * l.transpose();
    let b_00 = &a_00 + lam * &l;
    RateMatrices {
        a_1m1: lam * &id,
        a_01: unit(s, 0, s - 1, lam * (1.0 - p.q())),
        a_m11: id.clone(),
        a_0m1: unit(s, s - 1, 0, sf),
        a_00,
        b_11: unit(s, 0, s - 1, lam),
        b_01: id,
        b_0m1: unit(s, s - 1, s - 1, lam * p.q()),
        b_m1m1: unit(s, s - 1, 0, sf),
        b_00,
    }
}

/// The balance-equation variants, keyed by the `(m, n)` signature of a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EquationFamily {
    InnerPos,
    InnerNeg,
    HorizontalPos,
    HorizontalNeg,
    Horizontal,
    VerticalPos,
    VerticalNeg,
    OriginPos,
    OriginNeg,
    Origin,
}

impl EquationFamily {
    pub const ALL: [EquationFamily; 10] = [
        EquationFamily::InnerPos,
        EquationFamily::InnerNeg,
        EquationFamily::HorizontalPos,
        EquationFamily::HorizontalNeg,
        EquationFamily::Horizontal,
        EquationFamily::VerticalPos,
        EquationFamily::VerticalNeg,
        EquationFamily::OriginPos,
        EquationFamily::OriginNeg,
        EquationFamily::Origin,
    ];

    pub fn of(m: i64, n: i64) -> EquationFamily {
        assert!(m >= 0, "m must be nonnegative, got {m}");
        use EquationFamily::*;
        match (m, n) {
            (0, 0) => Origin,
            (0, 1) => OriginPos,
            (0, -1) => OriginNeg,
            (0, n) if n >= 2 => VerticalPos,
            (0, _) => VerticalNeg,
            (_, 0) => Horizontal,
            (_, 1) => HorizontalPos,
            (_, -1) => HorizontalNeg,
            (_, n) if n >= 2 => InnerPos,
            (_, _) => InnerNeg,
        }
    }

    pub fn label(&self) -> &'static str {
        use EquationFamily::*;
        match self {
            InnerPos => "I+",
            InnerNeg => "I-",
            HorizontalPos => "H+",
            HorizontalNeg => "H-",
            Horizontal => "H",
            VerticalPos => "V+",
            VerticalNeg => "V-",
            OriginPos => "O+",
            OriginNeg => "O-",
            Origin => "O",
        }
    }
}

/// One summand `coef * p(m + dm, n + dn)` of a balance equation.
#[derive(Debug, Clone)]
pub struct EquationTerm {
    pub dm: i64,
    pub dn: i64,
    pub coef: DMatrix<f64>,
}

/// All ten balance equations, precomputed for one parameter set.
#[derive(Debug, Clone)]
pub struct BalanceEquations {
    params: ModelParams,
    rates: RateMatrices,
    terms: Vec<Vec<EquationTerm>>,
}

impl BalanceEquations {
    pub fn new(p: &ModelParams) -> Self {
        let r = build_rate_matrices(p);
        let s = p.s();
        let id = DMatrix::<f64>::identity(s, s);
        let sm00 = unit(s, 0, 0, s as f64);
        let t = |dm: i64, dn: i64, coef: &DMatrix<f64>| EquationTerm {
            dm,
            dn,
            coef: coef.clone(),
        };
        let terms = EquationFamily::ALL
            .iter()
            .map(|fam| {
                use EquationFamily::*;
                match fam {
                    InnerPos => vec![
                        t(0, 0, &r.a_00),
                        t(-1, 1, &r.a_1m1),
                        t(0, 1, &r.a_0m1),
                        t(1, -1, &r.a_m11),
                    ],
                    InnerNeg => vec![
                        t(0, 0, &r.b_00),
                        t(-1, -1, &r.b_11),
                        t(0, -1, &r.b_01),
                        t(1, 1, &r.b_m1m1),
                    ],
                    HorizontalPos => vec![
                        t(0, 0, &r.a_00),
                        t(-1, 1, &r.a_1m1),
                        t(0, 1, &r.a_0m1),
                        t(1, -1, &r.a_m11),
                        t(0, -1, &r.a_01),
                    ],
                    HorizontalNeg => vec![
                        t(0, 0, &r.b_00),
                        t(-1, -1, &r.b_11),
                        t(0, -1, &r.b_01),
                        t(1, 1, &r.b_m1m1),
                        t(0, 1, &r.b_0m1),
                    ],
                    Horizontal => vec![
                        t(0, 0, &r.b_00),
                        t(-1, 1, &r.a_1m1),
                        t(-1, -1, &r.b_11),
                        t(0, 1, &r.a_0m1),
                        t(0, -1, &r.b_01),
                    ],
                    VerticalPos => vec![
                        t(0, 0, &(&r.a_00 + &id)),
                        t(0, 1, &r.a_0m1),
                        t(1, -1, &r.a_m11),
                    ],
                    VerticalNeg => vec![
                        t(0, 0, &(&r.b_00 + &sm00)),
                        t(0, -1, &r.b_01),
                        t(1, 1, &r.b_m1m1),
                    ],
                    OriginPos => vec![
                        t(0, 0, &(&r.a_00 + &id)),
                        t(0, 1, &r.a_0m1),
                        t(1, -1, &r.a_m11),
                        t(0, -1, &r.a_01),
                    ],
                    OriginNeg => vec![
                        t(0, 0, &(&r.b_00 + &sm00)),
                        t(0, -1, &r.b_01),
                        t(1, 1, &r.b_m1m1),
                        t(0, 1, &r.b_0m1),
                    ],
                    Origin => vec![
                        t(0, 0, &(&r.b_00 + &id + &sm00)),
                        t(0, 1, &r.a_0m1),
                        t(0, -1, &r.b_01),
                    ],
                }
            })
            .collect();
        BalanceEquations {
            params: *p,
            rates: r,
            terms,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn rates(&self) -> &RateMatrices {
        &self.rates
    }

    pub fn terms(&self, family: EquationFamily) -> &[EquationTerm] {
        let idx = EquationFamily::ALL.iter().position(|f| *f == family).unwrap();
        &self.terms[idx]
    }

    pub fn terms_at(&self, m: i64, n: i64) -> &[EquationTerm] {
        self.terms(EquationFamily::of(m, n))
    }

    /// Left-hand side of the balance equation at `(m, n)`.
    pub fn residual<F>(&self, m: i64, n: i64, mut prob: F) -> Result<DVector<f64>>
    where
        F: FnMut(i64, i64) -> Option<DVector<f64>>,
    {
        let mut out = DVector::zeros(self.params.s());
        for t in self.terms_at(m, n) {
            let (nm, nn) = (m + t.dm, n + t.dn);
            let v = prob(nm, nn).ok_or(SedError::MissingNeighbor { m, n, nm, nn })?;
            out += &t.coef * v;
        }
        Ok(out)
    }

    /// Same as [`residual`](Self::residual) for complex-valued vectors.
    pub fn residual_complex<F>(&self, m: i64, n: i64, mut prob: F) -> Result<DVector<Complex64>>
    where
        F: FnMut(i64, i64) -> Option<DVector<Complex64>>,
    {
        let mut out = DVector::zeros(self.params.s());
        for t in self.terms_at(m, n) {
            let (nm, nn) = (m + t.dm, n + t.dn);
            let v = prob(nm, nn).ok_or(SedError::MissingNeighbor { m, n, nm, nn })?;
            out += real_times(&t.coef, &v);
        }
        Ok(out)
    }
}

/// Real matrix times complex vector.
pub(crate) fn real_times(a: &DMatrix<f64>, v: &DVector<Complex64>) -> DVector<Complex64> {
    let mut out = DVector::zeros(a.nrows());
    for j in 0..a.ncols() {
        let x = v[j];
        for i in 0..a.nrows() {
            let c = a[(i, j)];
            if c != 0.0 {
                out[i] += x * c;
            }
        }
    }
    out
}

/// Convenience wrapper building the equations on each call.
pub fn balance_residual<F>(p: &ModelParams, prob: F, st: InternalState) -> Result<DVector<f64>>
where
    F: FnMut(i64, i64) -> Option<DVector<f64>>,
{
    BalanceEquations::new(p).residual(st.m, st.n, prob)
}
