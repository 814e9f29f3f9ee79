//! Data generation and replicated estimation studies.
//!
//! Replicate `r` draws from `ChaCha8Rng::seed_from_u64(base_seed ^ r)`, so a
//! study is reproducible bit for bit on every platform and thread count.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{RecapError, Result};
use crate::glm::Design;
use crate::histories::{CaptureMatrix, PartialHistory, MAX_OCCASIONS};
use crate::likelihood::{fit_model, FitOptions, FitResult};
use crate::scalar::{expit, Scalar};
use crate::selection::{aic_winner, ModelSpec};

/// A model with fixed logit-scale coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub model: ModelSpec,
    /// `d` coefficients on the logit scale, in design order
    /// (`[alpha, beta]` for linear models, one per class otherwise).
    pub coefficients: Vec<f64>,
    pub n_true: u64,
    pub t: u32,
    pub seed: u64,
}

impl GeneratorSpec {
    /// Linear-logistic generator `logit p = alpha + beta q(x)`.
    pub fn linear(model: ModelSpec, alpha: f64, beta: f64, n_true: u64, t: u32, seed: u64) -> Self {
        GeneratorSpec { model, coefficients: vec![alpha, beta], n_true, t, seed }
    }

    pub fn design(&self) -> Result<Design> {
        if !(1..=MAX_OCCASIONS).contains(&self.t) {
            return Err(RecapError::UnsupportedOccasions(self.t));
        }
        let design = self.model.design(self.t).map_err(|e| RecapError::InvalidGenerator(e.to_string()))?;
        let d = design.n_params(self.t);
        if self.coefficients.len() != d {
            return Err(RecapError::InvalidGenerator(format!(
                "{} needs {d} coefficients, got {}",
                self.model.label(),
                self.coefficients.len()
            )));
        }
        if let Some(c) = self.coefficients.iter().find(|c| c.is_nan()) {
            return Err(RecapError::InvalidGenerator(format!("coefficient {c} is not a number")));
        }
        Ok(design)
    }

    /// Checks that every conditional probability lies strictly inside (0, 1).
    pub fn validate(&self) -> Result<Design> {
        let design = self.design()?;
        if self.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(RecapError::InvalidGenerator("coefficients must be finite".into()));
        }
        if let Design::Linear(q) = design {
            // eta is affine in q, which ranges over [0, 1] (or [0, 2^(t-1) - 1] for f)
            let qmax = if q.is_normalized() { 1.0 } else { ((1u64 << (self.t - 1)) - 1) as f64 };
            for eta in [self.coefficients[0], self.coefficients[0] + self.coefficients[1] * qmax] {
                let p = expit(eta);
                if !(p > 0.0 && p < 1.0) {
                    return Err(RecapError::InvalidGenerator(format!(
                        "implied capture probability {p} is not inside (0, 1)"
                    )));
                }
            }
        } else {
            for &c in &self.coefficients {
                let p = expit(c);
                if !(p > 0.0 && p < 1.0) {
                    return Err(RecapError::InvalidGenerator(format!(
                        "implied capture probability {p} is not inside (0, 1)"
                    )));
                }
            }
        }
        Ok(design)
    }
}

fn capture_probability(design: &Design, coef: &[f64], x: &PartialHistory, t: u32) -> Result<f64> {
    Ok(expit(design.eta(coef, x, t)?))
}

/// Simulates `n_true` units occasion by occasion and keeps the captured ones.
pub fn generate(spec: &GeneratorSpec) -> Result<CaptureMatrix> {
    let design = spec.design()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    generate_with(&design, spec, &mut rng)
}

fn generate_with(design: &Design, spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Result<CaptureMatrix> {
    let mut rows = Vec::new();
    for _ in 0..spec.n_true {
        let mut x = PartialHistory::EMPTY;
        for _ in 0..spec.t {
            let p = capture_probability(design, &spec.coefficients, &x, spec.t)?;
            let caught = rng.random::<f64>() < p;
            x = PartialHistory::from_packed(x.packed() | ((caught as u64) << x.len()), x.len() + 1)?;
        }
        rows.push(x.packed());
    }
    CaptureMatrix::from_packed(spec.t, rows)
}

/// `N (1 - P0)` under the generating model.
pub fn expected_m(spec: &GeneratorSpec) -> Result<f64> {
    let design = spec.design()?;
    let mut p0 = 1.0;
    for j in 1..=spec.t {
        p0 *= 1.0 - capture_probability(&design, &spec.coefficients, &PartialHistory::zeros(j - 1), spec.t)?;
    }
    Ok(spec.n_true as f64 * (1.0 - p0))
}

/// One candidate's estimate in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFit<T: Scalar> {
    pub n_hat: u64,
    pub ci: (u64, Option<u64>),
    pub aic: T,
    pub failure: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replicate<T: Scalar> {
    pub seed: u64,
    pub m: u64,
    /// Per candidate; `None` when the fit raised an error.
    pub fits: Vec<Option<ReplicateFit<T>>>,
    /// Candidate index of the AIC winner.
    pub winner: Option<usize>,
}

/// Summary of one candidate model across replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub model: String,
    /// Mean estimate over replicates without likelihood failure.
    pub mean: Option<f64>,
    pub rmse: Option<f64>,
    /// Percentage of all replicates whose interval contains the truth.
    pub coverage: f64,
    pub ci_length: Option<f64>,
    pub pct_aic: f64,
    /// Likelihood failures plus fits that raised an error.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub generator: String,
    pub coefficients: Vec<f64>,
    pub n_true: u64,
    pub t: u32,
    pub k: usize,
    pub base_seed: u64,
    pub expected_m: f64,
    pub mean_m: f64,
    pub rows: Vec<TrialRow>,
}

impl TrialReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `model,mean,rmse,coverage,ci_length,pct_aic,failures`, preceded by a
    /// `#` line with the design and `E[M]`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# generator={} N={} t={} K={} seed={} E[M]={:.1} mean_M={:.2}",
            self.generator, self.n_true, self.t, self.k, self.base_seed, self.expected_m, self.mean_m
        )?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["model", "mean", "rmse", "coverage", "ci_length", "pct_aic", "failures"])?;
        let fmt = |v: Option<f64>, digits: usize| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.digits$}"));
        for r in &self.rows {
            out.write_record([
                r.model.clone(),
                fmt(r.mean, 1),
                fmt(r.rmse, 1),
                format!("{:.0}", r.coverage),
                fmt(r.ci_length, 1),
                format!("{:.0}", r.pct_aic),
                r.failures.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Fits every candidate to one simulated data set.
pub fn run_replicate<T: Scalar>(
    spec: &GeneratorSpec,
    design: &Design,
    candidates: &[ModelSpec],
    seed: u64,
    opts: &FitOptions,
) -> Result<Replicate<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = generate_with(design, spec, &mut rng)?;
    let results: Vec<Option<FitResult<T>>> =
        candidates.iter().map(|c| fit_model::<T>(&data, c, opts).ok()).collect();
    let winner = aic_winner(&results.iter().map(|r| r.as_ref()).collect::<Vec<_>>());
    let fits = results
        .into_iter()
        .map(|r| r.map(|f| ReplicateFit { n_hat: f.n_hat, ci: f.ci, aic: f.aic, failure: f.failure }))
        .collect();
    Ok(Replicate { seed, m: data.m() as u64, fits, winner })
}

/// Runs `k` replicates (in parallel, each in its own slot) and aggregates.
pub fn run_trial<T: Scalar>(
    spec: &GeneratorSpec,
    candidates: &[ModelSpec],
    k: usize,
    base_seed: u64,
    opts: &FitOptions,
) -> Result<(TrialReport, Vec<Replicate<T>>)> {
    if k == 0 {
        return Err(RecapError::InvalidGenerator("at least one replicate is needed".into()));
    }
    if candidates.is_empty() {
        return Err(RecapError::InvalidModel("no candidate models".into()));
    }
    let design = spec.validate()?;
    let reps: Vec<Replicate<T>> = (0..k as u64)
        .into_par_iter()
        .map(|r| run_replicate(spec, &design, candidates, base_seed ^ r, opts))
        .collect::<Result<_>>()?;
    let report = summarize(spec, candidates, base_seed, &reps)?;
    Ok((report, reps))
}

/// Aggregates replicates into per-candidate statistics.
pub fn summarize<T: Scalar>(
    spec: &GeneratorSpec,
    candidates: &[ModelSpec],
    base_seed: u64,
    reps: &[Replicate<T>],
) -> Result<TrialReport> {
    let k = reps.len();
    let n_true = spec.n_true as f64;
    let rows = candidates
        .iter()
        .enumerate()
        .map(|(c, model)| {
            let mut ok = Vec::new();
            let mut ci_lengths = Vec::new();
            let mut covered = 0usize;
            let mut failures = 0usize;
            let mut wins = 0usize;
            for rep in reps {
                if rep.winner == Some(c) {
                    wins += 1;
                }
                match &rep.fits[c] {
                    None => failures += 1,
                    Some(f) => {
                        let (lo, hi) = f.ci;
                        if lo <= spec.n_true && hi.is_none_or(|h| spec.n_true <= h) {
                            covered += 1;
                        }
                        if f.failure {
                            failures += 1;
                        } else {
                            ok.push(f.n_hat as f64);
                            if let Some(h) = hi {
                                ci_lengths.push((h - lo) as f64);
                            }
                        }
                    }
                }
            }
            let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            let rmse = (!ok.is_empty())
                .then(|| (ok.iter().map(|n| (n - n_true).powi(2)).sum::<f64>() / ok.len() as f64).sqrt());
            TrialRow {
                model: model.label(),
                mean: mean(&ok),
                rmse,
                coverage: 100.0 * covered as f64 / k as f64,
                ci_length: mean(&ci_lengths),
                pct_aic: 100.0 * wins as f64 / k as f64,
                failures,
            }
        })
        .collect();
    Ok(TrialReport {
        generator: spec.model.to_string(),
        coefficients: spec.coefficients.clone(),
        n_true: spec.n_true,
        t: spec.t,
        k,
        base_seed,
        expected_m: expected_m(spec)?,
        mean_m: reps.iter().map(|r| r.m as f64).sum::<f64>() / k as f64,
        rows,
    })
}
