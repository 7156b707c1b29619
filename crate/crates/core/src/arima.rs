//! Non-seasonal ARIMA(p, d, q) on standardized series.
//!
//! The differenced series `w` follows
//!
//! ```text
//! w_t = c + Σ φ_i w_{t-i} + Σ θ_j e_{t-j} + e_t
//! ```
//!
//! Estimation minimizes the conditional sum of squares with pre-sample
//! observations set to the sample mean of `w` and pre-sample residuals set to
//! zero. The minimizer is Levenberg-Marquardt on the exact recursive Jacobian.
//! Orders come from the grid p, q ∈ {0,1,2}, d ∈ {0,1}.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::timeseries::Resolution;

pub const MAX_ITERATIONS: usize = 500;
pub const STEP_TOLERANCE: f64 = 1e-8;
const MAX_DAMPING: f64 = 1e16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArimaError {
    #[error("series of length {len} too short for {what} (need {need})")]
    TooShort { what: String, len: usize, need: usize },
    #[error("optimizer did not converge for {0}")]
    NonConvergence(ArimaOrder),
    #[error("{order} violates {which}")]
    RootViolation { order: ArimaOrder, which: &'static str },
    #[error("{0}: residual variance is not positive")]
    DegenerateVariance(ArimaOrder),
    #[error("every grid order failed; persistence fallback required")]
    FallbackRequired,
    #[error("empty history")]
    EmptyHistory,
    #[error("malformed model record: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArimaOrder {
    pub const fn new(p: usize, d: usize, q: usize) -> Self {
        Self { p, d, q }
    }

    /// The 18 grid orders in lexicographic (p, d, q) order.
    pub fn grid() -> Vec<ArimaOrder> {
        let mut out = Vec::with_capacity(18);
        for p in 0..=2 {
            for d in 0..=1 {
                for q in 0..=2 {
                    out.push(ArimaOrder { p, d, q });
                }
            }
        }
        out
    }

    /// Number of estimated parameters including intercept and variance.
    pub fn k(&self) -> usize {
        self.p + self.q + 2
    }

    pub fn min_len(&self) -> usize {
        10 * (self.p + self.q + 1)
    }
}

impl fmt::Display for ArimaOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.p, self.d, self.q)
    }
}

impl FromStr for ArimaOrder {
    type Err = ArimaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
        let parts: Vec<usize> = inner
            .split(',')
            .map(|x| x.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| ArimaError::Malformed(s.to_string()))?;
        match parts[..] {
            [p, d, q] if p <= 2 && d <= 1 && q <= 2 => Ok(Self { p, d, q }),
            _ => Err(ArimaError::Malformed(s.to_string())),
        }
    }
}

/// Training window cap per resolution.
pub fn window_cap(resolution: Resolution) -> usize {
    match resolution {
        Resolution::TenMin => 2048,
        Resolution::Hourly => 1536,
        Resolution::Daily => 730,
    }
}

/// The most recent `min(cap, len)` points.
pub fn capped<T>(y: &[T], resolution: Resolution) -> &[T] {
    &y[y.len().saturating_sub(window_cap(resolution))..]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaModel<T> {
    pub order: ArimaOrder,
    pub intercept: T,
    pub ar: Vec<T>,
    pub ma: Vec<T>,
    pub sigma2: T,
    pub aic: T,
    /// Length of the differenced series the model was fitted on.
    pub n_obs: usize,
    pub iterations: usize,
}

impl<T: Scalar> ArimaModel<T> {
    /// Residual sum of squares at the fitted parameters.
    pub fn css(&self) -> T {
        self.sigma2 * T::from_usize_lossy(self.n_obs)
    }
}

pub fn difference<T: Scalar>(x: &[T], d: usize) -> Result<Vec<T>, ArimaError> {
    if x.len() <= d {
        return Err(ArimaError::TooShort {
            what: format!("differencing of order {}", d),
            len: x.len(),
            need: d + 1,
        });
    }
    Ok(match d {
        0 => x.to_vec(),
        _ => {
            let once: Vec<T> = x.windows(2).map(|w| w[1] - w[0]).collect();
            difference(&once, d - 1)?
        }
    })
}

/// Both quadratic stationarity-triangle conditions for `1 + a1 z + a2 z²`.
fn roots_outside_unit_circle<T: Scalar>(coef: &[T]) -> bool {
    let a1 = coef.first().copied().unwrap_or_else(T::zero);
    let a2 = coef.get(1).copied().unwrap_or_else(T::zero);
    a2.abs() < T::one() && a1.abs() < T::one() + a2
}

/// Stationarity of `1 − φ1 z − φ2 z²`.
pub fn is_stationary<T: Scalar>(ar: &[T]) -> bool {
    let a: Vec<T> = ar.iter().map(|&v| -v).collect();
    roots_outside_unit_circle(&a)
}

/// Invertibility of `1 + θ1 z + θ2 z²`.
pub fn is_invertible<T: Scalar>(ma: &[T]) -> bool {
    roots_outside_unit_circle(ma)
}

fn mean<T: Scalar>(x: &[T]) -> T {
    if x.is_empty() {
        return T::zero();
    }
    x.iter().copied().sum::<T>() / T::from_usize_lossy(x.len())
}

/// One-step CSS residuals of `w` with pre-sample observations equal to
/// `presample` and pre-sample residuals zero.
pub fn residuals<T: Scalar>(w: &[T], presample: T, c: T, ar: &[T], ma: &[T]) -> Vec<T> {
    let mut e = Vec::with_capacity(w.len());
    for t in 0..w.len() {
        let mut pred = c;
        for (i, &phi) in ar.iter().enumerate() {
            pred += phi * if t > i { w[t - i - 1] } else { presample };
        }
        for (j, &theta) in ma.iter().enumerate() {
            if t > j {
                pred += theta * e[t - j - 1];
            }
        }
        e.push(w[t] - pred);
    }
    e
}

/// Residuals and their Jacobian (row-major n × (1+p+q), columns c, φ, θ).
fn residuals_and_jacobian<T: Scalar>(w: &[T], presample: T, beta: &[T], p: usize, q: usize) -> (Vec<T>, Vec<T>) {
    let k = 1 + p + q;
    let (c, ar, ma) = (beta[0], &beta[1..1 + p], &beta[1 + p..]);
    let e = residuals(w, presample, c, ar, ma);
    let mut jac = vec![T::zero(); w.len() * k];
    for t in 0..w.len() {
        let mut row = vec![T::zero(); k];
        row[0] = -T::one();
        for i in 0..p {
            row[1 + i] = -if t > i { w[t - i - 1] } else { presample };
        }
        for j in 0..q {
            if t > j {
                row[1 + p + j] = -e[t - j - 1];
            }
        }
        for (j, &theta) in ma.iter().enumerate() {
            if t > j {
                let prev = (t - j - 1) * k;
                for col in 0..k {
                    row[col] -= theta * jac[prev + col];
                }
            }
        }
        jac[t * k..(t + 1) * k].copy_from_slice(&row);
    }
    (e, jac)
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
fn solve<T: Scalar>(mut a: Vec<T>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i * n + col]
                .abs()
                .partial_cmp(&a[j * n + col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot * n + col].abs() <= T::min_positive_value() {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                let v = a[col * n + k];
                a[row * n + k] -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row * n + k] * x[k];
        }
        x[row] = s / a[row * n + row];
    }
    Some(x)
}

fn sum_sq<T: Scalar>(e: &[T]) -> T {
    e.iter().map(|&v| v * v).sum()
}

/// CSS fit on an already differenced series, starting from φ = θ = 0 and
/// c = mean(w).
pub fn css_fit<T: Scalar>(w: &[T], order: ArimaOrder) -> Result<ArimaModel<T>, ArimaError> {
    let mut start = vec![T::zero(); 1 + order.p + order.q];
    start[0] = mean(w);
    css_fit_from(w, order, &start)
}

/// CSS fit from an explicit start `[c, φ.., θ..]`.
pub fn css_fit_from<T: Scalar>(w: &[T], order: ArimaOrder, start: &[T]) -> Result<ArimaModel<T>, ArimaError> {
    let (p, q) = (order.p, order.q);
    let k = 1 + p + q;
    assert_eq!(start.len(), k, "start vector must hold c, φ and θ");
    if w.len() < order.min_len() {
        return Err(ArimaError::TooShort {
            what: format!("ARIMA{}", order),
            len: w.len(),
            need: order.min_len(),
        });
    }
    let presample = mean(w);
    let mut beta = start.to_vec();
    let (mut e, mut jac) = residuals_and_jacobian(w, presample, &beta, p, q);
    let mut ss = sum_sq(&e);
    if !ss.is_finite() {
        return Err(ArimaError::NonConvergence(order));
    }
    let mut damping = T::lit(1e-3);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = vec![T::zero(); k * k];
        let mut jte = vec![T::zero(); k];
        for (row, &et) in jac.chunks_exact(k).zip(&e) {
            for a in 0..k {
                jte[a] += row[a] * et;
                for b in 0..k {
                    jtj[a * k + b] += row[a] * row[b];
                }
            }
        }
        let mut accepted = false;
        while damping <= T::lit(MAX_DAMPING) {
            let mut lhs = jtj.clone();
            for a in 0..k {
                lhs[a * k + a] += damping * (jtj[a * k + a] + T::one());
            }
            let rhs: Vec<T> = jte.iter().map(|&v| -v).collect();
            let Some(delta) = solve(lhs, rhs) else {
                damping *= T::lit(10.0);
                continue;
            };
            let trial: Vec<T> = beta.iter().zip(&delta).map(|(&b, &d)| b + d).collect();
            let (te, tj) = residuals_and_jacobian(w, presample, &trial, p, q);
            let tss = sum_sq(&te);
            if tss.is_finite() && tss < ss {
                let step = delta.iter().fold(T::zero(), |m, d| m.max(d.abs()));
                beta = trial;
                e = te;
                jac = tj;
                ss = tss;
                damping = (damping / T::lit(10.0)).max(T::lit(1e-12));
                accepted = true;
                if step < T::lit(STEP_TOLERANCE) {
                    converged = true;
                }
                break;
            }
            damping *= T::lit(10.0);
        }
        if !accepted {
            // no descent direction left at any damping: a stationary point
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(ArimaError::NonConvergence(order));
    }
    let model = finish(order, w.len(), beta, ss, iterations)?;
    Ok(model)
}

fn finish<T: Scalar>(
    order: ArimaOrder,
    n: usize,
    beta: Vec<T>,
    ss: T,
    iterations: usize,
) -> Result<ArimaModel<T>, ArimaError> {
    let ar = beta[1..1 + order.p].to_vec();
    let ma = beta[1 + order.p..].to_vec();
    if !is_stationary(&ar) {
        return Err(ArimaError::RootViolation {
            order,
            which: "stationarity",
        });
    }
    if !is_invertible(&ma) {
        return Err(ArimaError::RootViolation {
            order,
            which: "invertibility",
        });
    }
    let nf = T::from_usize_lossy(n);
    let sigma2 = ss / nf;
    if !(sigma2 > T::zero()) || !sigma2.is_finite() {
        return Err(ArimaError::DegenerateVariance(order));
    }
    let aic = nf * sigma2.ln() + T::lit(2.0) * T::from_usize_lossy(order.k());
    Ok(ArimaModel {
        order,
        intercept: beta[0],
        ar,
        ma,
        sigma2,
        aic,
        n_obs: n,
        iterations,
    })
}

/// Differences the level series and fits one order.
pub fn fit<T: Scalar>(y: &[T], order: ArimaOrder) -> Result<ArimaModel<T>, ArimaError> {
    css_fit(&difference(y, order.d)?, order)
}

fn better<T: Scalar>(a: &ArimaModel<T>, b: &ArimaModel<T>) -> bool {
    let key = |m: &ArimaModel<T>| (m.order.p + m.order.q, m.order.d, m.order);
    match a.aic.partial_cmp(&b.aic) {
        Some(std::cmp::Ordering::Less) => true,
        Some(std::cmp::Ordering::Greater) => false,
        _ => key(a) < key(b),
    }
}

/// Minimum-AIC model over the grid; ties go to smaller p+q, then smaller d,
/// then lexicographic order.
pub fn select_order<T: Scalar>(y: &[T]) -> Result<ArimaModel<T>, ArimaError> {
    let mut best: Option<ArimaModel<T>> = None;
    for order in ArimaOrder::grid() {
        if let Ok(m) = fit(y, order) {
            if best.as_ref().map_or(true, |b| better(&m, b)) {
                best = Some(m);
            }
        }
    }
    best.ok_or(ArimaError::FallbackRequired)
}

/// Forecast from the differenced history `w` and its residuals `e`, both
/// ending at the origin. `last_level` integrates d = 1 forecasts back.
pub fn forecast_with_residuals<T: Scalar>(model: &ArimaModel<T>, w: &[T], e: &[T], last_level: T, h: usize) -> Vec<T> {
    let fill = mean(w);
    let mut ws: Vec<T> = w.to_vec();
    let mut es: Vec<T> = e.to_vec();
    let mut out = Vec::with_capacity(h);
    let mut level = last_level;
    for _ in 0..h {
        let n = ws.len();
        let mut pred = model.intercept;
        for (i, &phi) in model.ar.iter().enumerate() {
            pred += phi * if n > i { ws[n - i - 1] } else { fill };
        }
        for (j, &theta) in model.ma.iter().enumerate() {
            if es.len() > j {
                pred += theta * es[es.len() - j - 1];
            }
        }
        ws.push(pred);
        es.push(T::zero());
        if model.order.d == 1 {
            level += pred;
            out.push(level);
        } else {
            out.push(pred);
        }
    }
    out
}

/// Forecast `h` steps past the end of the level history.
pub fn forecast<T: Scalar>(model: &ArimaModel<T>, history: &[T], h: usize) -> Result<Vec<T>, ArimaError> {
    let last = *history.last().ok_or(ArimaError::EmptyHistory)?;
    let w = difference(history, model.order.d)?;
    let e = residuals(&w, mean(&w), model.intercept, &model.ar, &model.ma);
    Ok(forecast_with_residuals(model, &w, &e, last, h))
}

pub fn persistence_fallback<T: Scalar>(history: &[T], h: usize) -> Result<Vec<T>, ArimaError> {
    let last = *history.last().ok_or(ArimaError::EmptyHistory)?;
    Ok(vec![last; h])
}

/// Per-entity outcome of order selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Fitted<T> {
    Model(ArimaModel<T>),
    Persistence,
}

impl<T: Scalar> Fitted<T> {
    /// Selection on the capped tail of `train`, falling back to persistence
    /// when every order fails.
    pub fn select(train: &[T], resolution: Resolution) -> Self {
        match select_order(capped(train, resolution)) {
            Ok(m) => Fitted::Model(m),
            Err(_) => Fitted::Persistence,
        }
    }

    pub fn d(&self) -> usize {
        match self {
            Fitted::Model(m) => m.order.d,
            Fitted::Persistence => 0,
        }
    }

    pub fn forecast(&self, history: &[T], h: usize) -> Result<Vec<T>, ArimaError> {
        match self {
            Fitted::Model(m) => forecast(m, history, h),
            Fitted::Persistence => persistence_fallback(history, h),
        }
    }

    /// One text record: `entity \t order \t c \t ar \t ma \t sigma2 \t aic \t fallback`.
    pub fn to_record(&self, entity: &str) -> String {
        let join = |v: &[T]| {
            if v.is_empty() {
                "-".to_string()
            } else {
                v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
            }
        };
        match self {
            Fitted::Model(m) => format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\tfalse",
                entity,
                m.order,
                m.intercept,
                join(&m.ar),
                join(&m.ma),
                m.sigma2,
                m.aic,
                m.n_obs
            ),
            Fitted::Persistence => format!("{}\t-\t-\t-\t-\t-\t-\t-\ttrue", entity),
        }
    }

    pub fn from_record(line: &str) -> Result<(String, Self), ArimaError> {
        let bad = || ArimaError::Malformed(line.to_string());
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 9 {
            return Err(bad());
        }
        let entity = f[0].to_string();
        if f[8] == "true" {
            return Ok((entity, Fitted::Persistence));
        }
        let num = |s: &str| s.parse::<T>().map_err(|_| bad());
        let list = |s: &str| -> Result<Vec<T>, ArimaError> {
            if s == "-" {
                Ok(Vec::new())
            } else {
                s.split(',').map(num).collect()
            }
        };
        let order: ArimaOrder = f[1].parse()?;
        let ar = list(f[3])?;
        let ma = list(f[4])?;
        if ar.len() != order.p || ma.len() != order.q {
            return Err(bad());
        }
        let model = ArimaModel {
            order,
            intercept: num(f[2])?,
            ar,
            ma,
            sigma2: num(f[5])?,
            aic: num(f[6])?,
            n_obs: f[7].parse().map_err(|_| bad())?,
            iterations: 0,
        };
        Ok((entity, Fitted::Model(model)))
    }
}
