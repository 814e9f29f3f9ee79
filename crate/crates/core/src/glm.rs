//! Weighted-binomial logistic regression on grouped Bernoulli trials.
//!
//! Every trial `x_ij` is keyed by its design value (covariate, class or
//! occasion). Trials sharing a key are pooled into one binomial cell, which
//! leaves the Bernoulli log-likelihood unchanged: no binomial coefficients
//! enter the sum, so grouped and ungrouped evaluations agree term for term.
//!
//! Factor-type designs (a probability per class) have a closed-form MLE and
//! skip the iterative solver. Linear designs use Newton / IRLS with
//! step-halving.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{RecapError, Result};
use crate::histories::{CaptureMatrix, Exact, PartialHistory, Quantifier};
use crate::partitions::Partition;
use crate::scalar::{expit, logit, Scalar};

/// Logit-scale magnitude beyond which a fit is treated as separated.
pub const SEPARATION_THRESHOLD: f64 = 30.0;
/// Probability clamp used for boundary estimates.
pub const PROB_CLAMP: f64 = 1e-12;

/// How a partial history enters the linear predictor.
#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    /// `logit p = alpha + beta * q(x)`.
    Linear(Quantifier),
    /// One probability per class of the partition.
    Factor(Partition),
    /// One probability per occasion.
    TimeFactor,
    /// A single probability.
    Constant,
}

/// Key identifying the cell a Bernoulli trial is pooled into.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CellKey {
    Covariate(Exact),
    Class(usize),
    Occasion(u32),
    All,
}

impl CellKey {
    fn describe(&self) -> String {
        match self {
            CellKey::Covariate(z) => format!("z={}/{}", z.numer(), z.denom()),
            CellKey::Class(b) => format!("class={}", b + 1),
            CellKey::Occasion(j) => format!("occasion={j}"),
            CellKey::All => "all".into(),
        }
    }
}

impl Design {
    /// Number of coefficients `d`.
    pub fn n_params(&self, t: u32) -> usize {
        match self {
            Design::Linear(_) => 2,
            Design::Factor(p) => p.n_classes(),
            Design::TimeFactor => t as usize,
            Design::Constant => 1,
        }
    }

    pub fn is_factor(&self) -> bool {
        !matches!(self, Design::Linear(_))
    }

    pub fn validate_for(&self, t: u32) -> Result<()> {
        match self {
            Design::Linear(q) => q.validate_for(t),
            Design::Factor(p) if p.t() != t => Err(RecapError::InvalidModel(format!(
                "partition built for t = {} used with t = {t}",
                p.t()
            ))),
            _ => Ok(()),
        }
    }

    /// Cell key of the trial at occasion `l + 1` conditioned on `x`
    /// (`l = x.len()`), for an experiment with `t` occasions.
    pub fn key(&self, x: &PartialHistory, t: u32) -> Result<CellKey> {
        Ok(match self {
            Design::Linear(q) => CellKey::Covariate(q.value(x, t)?),
            Design::Factor(p) => CellKey::Class(p.class_of(x)?),
            Design::TimeFactor => CellKey::Occasion(x.len() + 1),
            Design::Constant => CellKey::All,
        })
    }

    /// Design-matrix row of a cell.
    pub fn row<T: Scalar>(&self, key: &CellKey, t: u32) -> Vec<T> {
        let one_hot = |n: usize, i: usize| {
            let mut r = vec![T::zero(); n];
            r[i] = T::one();
            r
        };
        match (self, key) {
            (Design::Linear(_), CellKey::Covariate(z)) => vec![T::one(), T::from_ratio(z)],
            (Design::Factor(p), CellKey::Class(b)) => one_hot(p.n_classes(), *b),
            (Design::TimeFactor, CellKey::Occasion(j)) => one_hot(t as usize, (*j - 1) as usize),
            (Design::Constant, CellKey::All) => vec![T::one()],
            _ => panic!("cell key {key:?} does not belong to design {self:?}"),
        }
    }

    /// Linear predictor for history `x` under coefficients `coef`.
    pub fn eta<T: Scalar>(&self, coef: &[T], x: &PartialHistory, t: u32) -> Result<T> {
        let key = self.key(x, t)?;
        Ok(match (self, &key) {
            (Design::Linear(_), CellKey::Covariate(z)) => coef[0] + coef[1] * T::from_ratio(z),
            (Design::Factor(_), CellKey::Class(b)) => coef[*b],
            (Design::TimeFactor, CellKey::Occasion(j)) => coef[(*j - 1) as usize],
            (Design::Constant, CellKey::All) => coef[0],
            _ => unreachable!(),
        })
    }

    /// Every key the design can produce, for factor-type designs; used to
    /// keep one cell per parameter even when a class has no trials.
    fn all_factor_keys(&self, t: u32) -> Vec<CellKey> {
        match self {
            Design::Factor(p) => (0..p.n_classes()).map(CellKey::Class).collect(),
            Design::TimeFactor => (1..=t).map(CellKey::Occasion).collect(),
            Design::Constant => vec![CellKey::All],
            Design::Linear(_) => Vec::new(),
        }
    }
}

/// One binomial cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cell {
    #[serde(skip)]
    pub key: CellKey,
    pub successes: u64,
    pub trials: u64,
}

/// Pooled trials of `n_total` units (observed plus all-zero unobserved ones).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupedData {
    pub t: u32,
    pub n_total: u64,
    pub cells: Vec<Cell>,
}

impl GroupedData {
    pub fn total_trials(&self) -> u64 {
        self.cells.iter().map(|c| c.trials).sum()
    }

    pub fn total_successes(&self) -> u64 {
        self.cells.iter().map(|c| c.successes).sum()
    }

    /// Diagnostic CSV dump: `key,successes,trials`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["key", "successes", "trials"])?;
        for c in &self.cells {
            out.write_record([c.key.describe(), c.successes.to_string(), c.trials.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Observed-unit cells plus where the unobserved units' trials go. Building
/// this once lets a profile over `N` re-pool in `O(cells)` per point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupedBase {
    t: u32,
    m: u64,
    cells: Vec<Cell>,
    /// `(cell index, trials contributed per unobserved unit)`
    zero_slots: Vec<(usize, u64)>,
}

impl GroupedBase {
    pub fn new(data: &CaptureMatrix, design: &Design) -> Result<Self> {
        let t = data.t();
        design.validate_for(t)?;
        let mut pooled: BTreeMap<CellKey, (u64, u64)> = BTreeMap::new();
        for key in design.all_factor_keys(t) {
            pooled.insert(key, (0, 0));
        }
        for (x, outcome) in data.trials() {
            let e = pooled.entry(design.key(&x, t)?).or_insert((0, 0));
            e.0 += outcome as u64;
            e.1 += 1;
        }
        let mut zero_keys: BTreeMap<CellKey, u64> = BTreeMap::new();
        for j in 1..=t {
            let key = design.key(&PartialHistory::zeros(j - 1), t)?;
            pooled.entry(key.clone()).or_insert((0, 0));
            *zero_keys.entry(key).or_insert(0) += 1;
        }
        let cells: Vec<Cell> =
            pooled.into_iter().map(|(key, (successes, trials))| Cell { key, successes, trials }).collect();
        let zero_slots = zero_keys
            .into_iter()
            .map(|(key, per_unit)| (cells.iter().position(|c| c.key == key).unwrap(), per_unit))
            .collect();
        Ok(GroupedBase { t, m: data.m() as u64, cells, zero_slots })
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn at(&self, n_total: u64) -> Result<GroupedData> {
        if n_total < self.m {
            return Err(RecapError::PopulationTooSmall { n_total, m: self.m });
        }
        let mut cells = self.cells.clone();
        let extra = n_total - self.m;
        for &(idx, per_unit) in &self.zero_slots {
            cells[idx].trials += extra * per_unit;
        }
        Ok(GroupedData { t: self.t, n_total, cells })
    }
}

/// Pools the `n_total * t` Bernoulli trials by design key.
pub fn build_grouped(data: &CaptureMatrix, design: &Design, n_total: u64) -> Result<GroupedData> {
    GroupedBase::new(data, design)?.at(n_total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlmFit<T: Scalar> {
    /// Logit-scale coefficients; `NaN` for factor classes without trials.
    pub coefficients: Vec<T>,
    pub loglik: T,
    pub converged: bool,
    pub separation: bool,
    pub iterations: usize,
    /// Fitted probability per cell, aligned with `GroupedData::cells`.
    pub cell_probs: Vec<T>,
    /// Factor classes (0-based) that received no trials.
    pub empty_classes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct IrlsOptions<T: Scalar> {
    pub max_iter: usize,
    pub coef_tol: f64,
    pub loglik_rel_tol: f64,
    pub max_halvings: usize,
    pub start: Option<Vec<T>>,
}

impl<T: Scalar> Default for IrlsOptions<T> {
    fn default() -> Self {
        IrlsOptions { max_iter: 100, coef_tol: 1e-10, loglik_rel_tol: 1e-12, max_halvings: 20, start: None }
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// `s log p + (n - s) log(1 - p)` with `p = expit(eta)`, evaluated stably.
fn cell_loglik_eta<T: Scalar>(s: T, n: T, eta: T) -> T {
    let mut ll = T::zero();
    if s > T::zero() {
        ll = ll - s * softplus(-eta);
    }
    if n > s {
        ll = ll - (n - s) * softplus(eta);
    }
    ll
}

/// Same contribution from a probability, clamped away from 0 and 1.
pub(crate) fn cell_loglik_prob<T: Scalar>(s: T, n: T, p: T) -> T {
    let lo = T::c(PROB_CLAMP);
    let p = p.max(lo).min(T::one() - lo);
    let mut ll = T::zero();
    if s > T::zero() {
        ll = ll + s * p.ln();
    }
    if n > s {
        ll = ll + (n - s) * (T::one() - p).ln();
    }
    ll
}

/// Bernoulli-sum log-likelihood of `coefficients` on grouped data.
pub fn loglik_at<T: Scalar>(coefficients: &[T], data: &GroupedData, design: &Design) -> T {
    data.cells
        .iter()
        .filter(|c| c.trials > 0)
        .map(|c| {
            let row = design.row::<T>(&c.key, data.t);
            let eta = row.iter().zip(coefficients).fold(T::zero(), |acc, (x, b)| acc + *x * *b);
            cell_loglik_eta(T::from_count(c.successes), T::from_count(c.trials), eta)
        })
        .sum()
}

/// Log-likelihood of a fit on the data it came from, from the fitted cell
/// probabilities.
pub fn loglik<T: Scalar>(fit: &GlmFit<T>, data: &GroupedData) -> T {
    data.cells
        .iter()
        .zip(&fit.cell_probs)
        .filter(|(c, _)| c.trials > 0)
        .map(|(c, p)| cell_loglik_prob(T::from_count(c.successes), T::from_count(c.trials), *p))
        .sum()
}

/// Maximum-likelihood fit of `design` to grouped data.
pub fn irls_fit<T: Scalar>(data: &GroupedData, design: &Design) -> Result<GlmFit<T>> {
    irls_fit_with(data, design, &IrlsOptions::default())
}

pub fn irls_fit_with<T: Scalar>(data: &GroupedData, design: &Design, opts: &IrlsOptions<T>) -> Result<GlmFit<T>> {
    if design.is_factor() {
        factor_fit(data, design)
    } else {
        newton_fit(data, design, opts)
    }
}

/// Closed-form MLE for designs with one parameter per cell.
fn factor_fit<T: Scalar>(data: &GroupedData, design: &Design) -> Result<GlmFit<T>> {
    let d = design.n_params(data.t);
    if data.cells.len() != d {
        return Err(RecapError::DegenerateDesign(format!("{} cells for {d} factor levels", data.cells.len())));
    }
    let mut coefficients = Vec::with_capacity(d);
    let mut cell_probs = Vec::with_capacity(d);
    let mut empty_classes = Vec::new();
    let mut separation = false;
    let mut ll = T::zero();
    let lo = T::c(PROB_CLAMP);
    for (b, c) in data.cells.iter().enumerate() {
        if c.trials == 0 {
            empty_classes.push(b);
            coefficients.push(T::nan());
            cell_probs.push(T::nan());
            continue;
        }
        if c.successes == 0 || c.successes == c.trials {
            separation = true;
        }
        let s = T::from_count(c.successes);
        let n = T::from_count(c.trials);
        let p = s / n;
        ll = ll + cell_loglik_prob(s, n, p);
        coefficients.push(logit(p.max(lo).min(T::one() - lo)));
        cell_probs.push(p);
    }
    if empty_classes.len() == d {
        return Err(RecapError::DegenerateDesign("no trials in any cell".into()));
    }
    Ok(GlmFit { coefficients, loglik: ll, converged: true, separation, iterations: 0, cell_probs, empty_classes })
}

/// Cholesky solve of the symmetric positive-definite system `a x = b`.
fn cholesky_solve<T: Scalar>(a: &[Vec<T>], b: &[T]) -> Option<Vec<T>> {
    let n = b.len();
    let mut l = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum = sum - l[i][k] * l[j][k];
            }
            if i == j {
                if !(sum > T::zero()) {
                    return None;
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum = sum - l[i][k] * y[k];
        }
        y[i] = sum / l[i][i];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum = sum - l[k][i] * x[k];
        }
        x[i] = sum / l[i][i];
    }
    Some(x)
}

/// Newton-Raphson (IRLS) with step-halving. Non-intercept columns are scaled
/// to unit max-abs internally; reported coefficients are on the original scale.
fn newton_fit<T: Scalar>(data: &GroupedData, design: &Design, opts: &IrlsOptions<T>) -> Result<GlmFit<T>> {
    let t = data.t;
    let d = design.n_params(t);
    let active: Vec<&Cell> = data.cells.iter().filter(|c| c.trials > 0).collect();
    let mut rows: Vec<Vec<T>> = active.iter().map(|c| design.row(&c.key, t)).collect();
    let succ: Vec<T> = active.iter().map(|c| T::from_count(c.successes)).collect();
    let tri: Vec<T> = active.iter().map(|c| T::from_count(c.trials)).collect();

    let mut scale = vec![T::one(); d];
    for (k, s) in scale.iter_mut().enumerate().skip(1) {
        let m = rows.iter().fold(T::zero(), |acc, r| acc.max(r[k].abs()));
        if m > T::zero() {
            *s = m;
        }
    }
    for r in rows.iter_mut() {
        for k in 0..d {
            r[k] = r[k] / scale[k];
        }
    }

    // Collinearity: the unit-weight cross-product must be positive definite.
    let mut xtx = vec![vec![T::zero(); d]; d];
    for r in &rows {
        for i in 0..d {
            for j in 0..d {
                xtx[i][j] = xtx[i][j] + r[i] * r[j];
            }
        }
    }
    let distinct_rows = {
        let mut seen: Vec<&Vec<T>> = Vec::new();
        for r in &rows {
            if !seen.iter().any(|s| *s == r) {
                seen.push(r);
            }
        }
        seen.len()
    };
    if distinct_rows < d || cholesky_solve(&xtx, &vec![T::zero(); d]).is_none() {
        return Err(RecapError::DegenerateDesign(format!(
            "{distinct_rows} informative cells for {d} coefficients"
        )));
    }

    let eval = |beta: &[T]| -> (T, Vec<T>) {
        let mut ll = T::zero();
        let etas: Vec<T> = rows
            .iter()
            .map(|r| r.iter().zip(beta).fold(T::zero(), |acc, (x, b)| acc + *x * *b))
            .collect();
        for i in 0..rows.len() {
            ll = ll + cell_loglik_eta(succ[i], tri[i], etas[i]);
        }
        (ll, etas)
    };

    let mut beta: Vec<T> = match &opts.start {
        Some(start) if start.len() == d && start.iter().all(|b| b.is_finite()) => {
            start.iter().zip(&scale).map(|(b, s)| *b * *s).collect()
        }
        _ => {
            let s_tot: T = succ.iter().copied().sum();
            let n_tot: T = tri.iter().copied().sum();
            let half = T::c(0.5);
            let mut b = vec![T::zero(); d];
            b[0] = logit((s_tot + half) / (n_tot + T::one()));
            b
        }
    };

    let coef_tol = T::tolerance(opts.coef_tol);
    let ll_tol = T::tolerance(opts.loglik_rel_tol);
    let (mut ll, mut etas) = eval(&beta);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut grad = vec![T::zero(); d];
        let mut hess = vec![vec![T::zero(); d]; d];
        for (i, r) in rows.iter().enumerate() {
            let p = expit(etas[i]);
            let resid = succ[i] - tri[i] * p;
            let w = tri[i] * p * (T::one() - p);
            for a in 0..d {
                grad[a] = grad[a] + r[a] * resid;
                for b in 0..d {
                    hess[a][b] = hess[a][b] + w * r[a] * r[b];
                }
            }
        }
        let Some(step) = cholesky_solve(&hess, &grad) else { break };
        let mut factor = T::one();
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<T> = beta.iter().zip(&step).map(|(b, s)| *b + factor * *s).collect();
            let (cll, cetas) = eval(&cand);
            if cll.is_finite() && cll >= ll - ll_tol * ll.abs() {
                accepted = Some((cand, cll, cetas));
                break;
            }
            factor = factor * T::c(0.5);
        }
        let Some((cand, cll, cetas)) = accepted else { break };
        let max_change = cand.iter().zip(&beta).fold(T::zero(), |acc, (a, b)| acc.max((*a - *b).abs()));
        let rel_ll = (cll - ll).abs() / (ll.abs() + T::epsilon());
        beta = cand;
        ll = cll;
        etas = cetas;
        if max_change < coef_tol || rel_ll < ll_tol {
            converged = true;
            break;
        }
    }

    let threshold = T::c(SEPARATION_THRESHOLD);
    let separation = beta.iter().any(|b| !b.is_finite() || b.abs() > threshold);
    let coefficients: Vec<T> = beta.iter().zip(&scale).map(|(b, s)| *b / *s).collect();
    let cell_probs = data
        .cells
        .iter()
        .map(|c| {
            let row = design.row::<T>(&c.key, t);
            expit(row.iter().zip(&coefficients).fold(T::zero(), |acc, (x, b)| acc + *x * *b))
        })
        .collect();
    Ok(GlmFit { coefficients, loglik: ll, converged, separation, iterations, cell_probs, empty_classes: Vec::new() })
}
