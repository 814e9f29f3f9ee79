//! Unconditional likelihood over `(N, theta)`.
//!
//! For each candidate `n` the GLM is refitted with `n - M` all-zero units
//! added, giving the profile `L(n) = log C(n, M) + sup_theta loglik(n, theta)`.
//! The estimate is the integer argmax; intervals come from the profile
//! likelihood ratio.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use crate::error::{RecapError, Result};
use crate::glm::{irls_fit, Design, GlmFit, GroupedBase};
use crate::histories::{CaptureMatrix, PartialHistory};
use crate::scalar::{expit, Scalar};
use crate::selection::{cut_search, ModelSpec, SearchStrategy};

/// Number of coarse steps across `[M, N_upp]`.
pub const COARSE_STEPS: u64 = 200;
/// `chi^2_1` 0.95 quantile.
pub const CHI2_1_95: f64 = 3.841458820694124;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GridStrategy {
    /// Every integer in `[M, N_upp]`.
    Full,
    /// Stride `ceil((N_upp - M) / 200)`, then every integer within two
    /// strides of the coarse maximum and across the interval endpoints.
    #[default]
    CoarseFine,
}

impl std::str::FromStr for GridStrategy {
    type Err = RecapError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(GridStrategy::Full),
            "coarse" | "coarse-fine" | "coarsefine" => Ok(GridStrategy::CoarseFine),
            _ => Err(RecapError::InvalidModel(format!("unknown grid strategy '{s}' (full|coarse)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Upper end of the `N` grid; defaults to [`default_n_upp`].
    pub n_upp: Option<u64>,
    pub grid: GridStrategy,
    /// Confidence level of the profile interval.
    pub level: f64,
    /// Cut search strategy for `cutsearch:` models; `None` picks the default.
    pub search: Option<SearchStrategy>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { n_upp: None, grid: GridStrategy::CoarseFine, level: 0.95, search: None }
    }
}

pub fn default_n_upp(m: u64) -> u64 {
    (2 * m + 100).max(20 * m)
}

/// `log C(n, m)` via log-gamma.
pub fn ln_binomial(n: u64, m: u64) -> f64 {
    assert!(m <= n, "ln_binomial: m > n");
    if m == 0 || m == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(m as f64 + 1.0) - ln_gamma((n - m) as f64 + 1.0)
}

/// Likelihood-ratio threshold `chi^2_1(level)`.
pub fn chi2_threshold(level: f64) -> f64 {
    if (level - 0.95).abs() < 1e-12 {
        return CHI2_1_95;
    }
    ChiSquared::new(1.0).expect("one degree of freedom").inverse_cdf(level)
}

pub fn aic<T: Scalar>(max_loglik: T, params: usize) -> T {
    T::c(-2.0) * max_loglik + T::c(2.0 * params as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfilePoint<T: Scalar> {
    pub n: u64,
    /// `log C(n, M)` plus the maximized GLM log-likelihood; `-inf` if the
    /// inner fit failed.
    pub loglik: T,
    pub glm_loglik: T,
    pub converged: bool,
    pub separation: bool,
    pub error: Option<String>,
}

impl<T: Scalar> ProfilePoint<T> {
    pub fn from_fit(n: u64, m: u64, fit: Result<GlmFit<T>>) -> Self {
        match fit {
            Ok(fit) => ProfilePoint {
                n,
                loglik: T::c(ln_binomial(n, m)) + fit.loglik,
                glm_loglik: fit.loglik,
                converged: fit.converged,
                separation: fit.separation,
                error: None,
            },
            Err(e) => ProfilePoint {
                n,
                loglik: T::neg_infinity(),
                glm_loglik: T::neg_infinity(),
                converged: false,
                separation: false,
                error: Some(e.to_string()),
            },
        }
    }

    /// Point with a known value, for synthetic profiles.
    pub fn raw(n: u64, loglik: T) -> Self {
        ProfilePoint { n, loglik, glm_loglik: loglik, converged: true, separation: false, error: None }
    }
}

/// Profile evaluated on a (possibly sparse) grid of `n`, sorted by `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Profile<T: Scalar> {
    pub m: u64,
    pub n_upp: u64,
    pub points: Vec<ProfilePoint<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileMax<T: Scalar> {
    pub n_hat: u64,
    pub loglik: T,
    /// The argmax sits at `N_upp`: the profile is still increasing.
    pub failure: bool,
}

impl<T: Scalar> Profile<T> {
    /// Builds a profile from precomputed points.
    pub fn from_points(m: u64, n_upp: u64, mut points: Vec<ProfilePoint<T>>) -> Self {
        points.sort_by_key(|p| p.n);
        points.dedup_by_key(|p| p.n);
        Profile { m, n_upp, points }
    }

    pub fn value_at(&self, n: u64) -> Option<T> {
        self.points.binary_search_by_key(&n, |p| p.n).ok().map(|i| self.points[i].loglik)
    }

    /// Argmax, smallest `n` on exact ties. `None` if no point is finite.
    pub fn maximize(&self) -> Option<ProfileMax<T>> {
        let mut best: Option<&ProfilePoint<T>> = None;
        for p in &self.points {
            if p.loglik.is_finite() && best.is_none_or(|b| p.loglik > b.loglik) {
                best = Some(p);
            }
        }
        let last = self.points.last()?.n;
        best.map(|b| ProfileMax { n_hat: b.n, loglik: b.loglik, failure: b.n == last })
    }

    /// `{n : 2 (L(n_hat) - L(n)) <= chi^2_1(level)}` over the evaluated
    /// points. The upper end is open (`None`) under likelihood failure or when
    /// the set reaches `N_upp`.
    pub fn ci(&self, level: f64) -> Option<(u64, Option<u64>)> {
        let max = self.maximize()?;
        let cutoff = max.loglik - T::c(chi2_threshold(level) / 2.0);
        let inside: Vec<u64> = self.points.iter().filter(|p| p.loglik >= cutoff).map(|p| p.n).collect();
        let lo = *inside.first()?;
        let hi = *inside.last()?;
        let open = max.failure || hi >= self.n_upp;
        Some((lo.max(self.m), if open { None } else { Some(hi) }))
    }

    /// Gaps between consecutive evaluated points that the interval boundary
    /// falls into.
    fn ci_gaps(&self, level: f64) -> Vec<(u64, u64)> {
        let Some(max) = self.maximize() else { return Vec::new() };
        let cutoff = max.loglik - T::c(chi2_threshold(level) / 2.0);
        self.points
            .windows(2)
            .filter(|w| w[1].n > w[0].n + 1 && ((w[0].loglik >= cutoff) != (w[1].loglik >= cutoff)))
            .map(|w| (w[0].n, w[1].n))
            .collect()
    }
}

fn coarse_stride(m: u64, n_upp: u64) -> u64 {
    (n_upp - m).div_ceil(COARSE_STEPS).max(1)
}

/// Profile engine shared by the GLM path and the cut-search fast path:
/// evaluates `eval` on the grid, then fills in every integer around the
/// maximum and across the interval boundaries.
pub(crate) fn scan<T, F>(m: u64, n_upp: u64, grid: GridStrategy, level: f64, eval: F) -> Profile<T>
where
    T: Scalar,
    F: Fn(u64) -> ProfilePoint<T> + Sync,
{
    let eval_all = |ns: Vec<u64>| -> Vec<ProfilePoint<T>> { ns.into_par_iter().map(&eval).collect() };
    if grid == GridStrategy::Full || n_upp - m <= 2 * COARSE_STEPS {
        return Profile::from_points(m, n_upp, eval_all((m..=n_upp).collect()));
    }
    let stride = coarse_stride(m, n_upp);
    let mut ns: Vec<u64> = (m..n_upp).step_by(stride as usize).collect();
    ns.push(n_upp);
    let mut profile = Profile::from_points(m, n_upp, eval_all(ns));

    let fill = |profile: &mut Profile<T>, lo: u64, hi: u64| {
        let missing: Vec<u64> = (lo..=hi).filter(|n| profile.value_at(*n).is_none()).collect();
        if !missing.is_empty() {
            let mut points = std::mem::take(&mut profile.points);
            points.extend(eval_all(missing));
            *profile = Profile::from_points(m, n_upp, points);
        }
    };

    if let Some(max) = profile.maximize() {
        let lo = max.n_hat.saturating_sub(2 * stride).max(m);
        let hi = (max.n_hat + 2 * stride).min(n_upp);
        fill(&mut profile, lo, hi);
    }
    // A new maximum can move the cutoff, so iterate until no boundary gap remains.
    loop {
        let gaps = profile.ci_gaps(level);
        if gaps.is_empty() {
            break;
        }
        for (lo, hi) in gaps {
            fill(&mut profile, lo, hi);
        }
    }
    profile
}

/// Profile of `design` on `data` over `[M, n_upp]`.
pub fn profile<T: Scalar>(
    data: &CaptureMatrix,
    design: &Design,
    n_upp: u64,
    grid: GridStrategy,
    level: f64,
) -> Result<Profile<T>> {
    let base = GroupedBase::new(data, design)?;
    let m = base.m();
    if n_upp < m {
        return Err(RecapError::PopulationTooSmall { n_total: n_upp, m });
    }
    Ok(scan(m, n_upp, grid, level, |n| {
        let fit = base.at(n).and_then(|g| irls_fit::<T>(&g, design));
        ProfilePoint::from_fit(n, m, fit)
    }))
}

/// Capture probability of `x` under a fitted design.
pub fn capture_prob<T: Scalar>(fit: &GlmFit<T>, design: &Design, x: &PartialHistory, t: u32) -> Result<T> {
    if design.is_factor() {
        let idx = match design.key(x, t)? {
            crate::glm::CellKey::Class(b) => b,
            crate::glm::CellKey::Occasion(j) => (j - 1) as usize,
            _ => 0,
        };
        Ok(fit.cell_probs[idx])
    } else {
        Ok(expit(design.eta(&fit.coefficients, x, t)?))
    }
}

/// `P0 = prod_j (1 - p(0^{j-1}))`, the probability of never being caught.
pub fn p0<T: Scalar>(fit: &GlmFit<T>, design: &Design, t: u32) -> Result<T> {
    (1..=t).try_fold(T::one(), |acc, j| Ok(acc * (T::one() - capture_prob(fit, design, &PartialHistory::zeros(j - 1), t)?)))
}

/// Outcome of fitting one model by unconditional maximum likelihood.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult<T: Scalar> {
    pub model: String,
    pub spec: String,
    pub n_hat: u64,
    pub coefficients: Vec<T>,
    /// Per-class probabilities for partition models.
    pub class_probs: Option<Vec<T>>,
    pub p0: T,
    pub loglik: T,
    pub aic: T,
    pub ci: (u64, Option<u64>),
    pub failure: bool,
    /// `d + 1` (model coefficients plus `N`).
    pub params: usize,
    pub m: u64,
    pub n_upp: u64,
    pub converged: bool,
    pub separation: bool,
    /// 1-based classes without any trial.
    pub empty_classes: Vec<usize>,
    pub cutpoints: Option<Vec<String>>,
}

impl<T: Scalar> FitResult<T> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parameter count written as `"1+d"`.
    pub fn params_label(&self) -> String {
        format!("1+{}", self.params - 1)
    }
}

/// Profile, maximize and summarize a fixed design.
pub fn fit_design<T: Scalar>(
    data: &CaptureMatrix,
    design: &Design,
    label: &str,
    spec: &str,
    opts: &FitOptions,
) -> Result<FitResult<T>> {
    let m = data.m() as u64;
    if m == 0 {
        return Err(RecapError::InvalidData("no captured units".into()));
    }
    let t = data.t();
    let n_upp = opts.n_upp.unwrap_or_else(|| default_n_upp(m));
    let prof = profile::<T>(data, design, n_upp, opts.grid, opts.level)?;
    let max = prof.maximize().ok_or_else(|| {
        let msg = prof.points.iter().find_map(|p| p.error.clone()).unwrap_or_default();
        RecapError::DegenerateDesign(format!("no profile point could be fitted: {msg}"))
    })?;
    let ci = prof.ci(opts.level).expect("maximum exists");
    let fit = irls_fit::<T>(&GroupedBase::new(data, design)?.at(max.n_hat)?, design)?;
    let params = design.n_params(t) + 1;
    let class_probs = design.is_factor().then(|| fit.cell_probs.clone());
    Ok(FitResult {
        model: label.to_string(),
        spec: spec.to_string(),
        n_hat: max.n_hat,
        p0: p0(&fit, design, t)?,
        coefficients: fit.coefficients,
        class_probs,
        loglik: max.loglik,
        aic: aic(max.loglik, params),
        ci,
        failure: max.failure,
        params,
        m,
        n_upp,
        converged: fit.converged,
        separation: fit.separation,
        empty_classes: fit.empty_classes.iter().map(|b| b + 1).collect(),
        cutpoints: None,
    })
}

/// Fits a model given by its specification.
pub fn fit_model<T: Scalar>(data: &CaptureMatrix, model: &ModelSpec, opts: &FitOptions) -> Result<FitResult<T>> {
    model.validate_for(data.t())?;
    if let ModelSpec::CutSearch { quantifier, n_cuts } = model {
        let strategy = opts.search.unwrap_or_else(|| SearchStrategy::default_for(*n_cuts));
        return Ok(cut_search::<T>(data, *quantifier, *n_cuts, strategy, opts)?.fit);
    }
    let design = model.design(data.t())?;
    let mut fit = fit_design(data, &design, &model.label(), &model.to_string(), opts)?;
    if let ModelSpec::Cut(recipe) = model {
        fit.cutpoints = Some(recipe.cutpoints.iter().map(|c| format!("{}/{}", c.numer(), c.denom())).collect());
    }
    Ok(fit)
}
