//! Model catalogue, AIC ranking and cutpoint search.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{RecapError, Result};
use crate::glm::{cell_loglik_prob, Design};
use crate::histories::{CaptureMatrix, Exact, Quantifier};
use crate::likelihood::{aic, default_n_upp, fit_model, scan, FitOptions, FitResult, ProfilePoint};
use crate::partitions::{cut_partition, named_partition, parse_exact, CutRecipe, NamedModel};
use crate::scalar::Scalar;

/// A candidate model.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ModelSpec {
    Named(NamedModel),
    Linear(Quantifier),
    Cut(CutRecipe),
    CutSearch { quantifier: Quantifier, n_cuts: usize },
}

impl ModelSpec {
    pub fn validate_for(&self, t: u32) -> Result<()> {
        match self {
            ModelSpec::CutSearch { quantifier, n_cuts } => {
                if *n_cuts == 0 {
                    return Err(RecapError::InvalidModel("cut search needs at least one cut".into()));
                }
                if !quantifier.is_normalized() {
                    return Err(RecapError::InvalidCuts("cut search needs a quantifier with range [0, 1]".into()));
                }
                quantifier.validate_for(t)
            }
            other => other.design(t).map(|_| ()),
        }
    }

    /// Design matrix kind. Not defined for `CutSearch`, whose design depends
    /// on the data.
    pub fn design(&self, t: u32) -> Result<Design> {
        match self {
            ModelSpec::Named(NamedModel::M0) => Ok(Design::Constant),
            ModelSpec::Named(NamedModel::Mt) => {
                named_partition(NamedModel::Mt, t)?;
                Ok(Design::TimeFactor)
            }
            ModelSpec::Named(m) => Ok(Design::Factor(named_partition(*m, t)?)),
            ModelSpec::Linear(q) => {
                q.validate_for(t)?;
                Ok(Design::Linear(*q))
            }
            ModelSpec::Cut(recipe) => Ok(Design::Factor(cut_partition(recipe, t)?)),
            ModelSpec::CutSearch { .. } => {
                Err(RecapError::InvalidModel("a cut search has no fixed design before seeing the data".into()))
            }
        }
    }

    /// Parameter count including `N`.
    pub fn params(&self, t: u32) -> Result<usize> {
        match self {
            ModelSpec::CutSearch { n_cuts, .. } => Ok(n_cuts + 2),
            other => Ok(other.design(t)?.n_params(t) + 1),
        }
    }

    /// Display label, e.g. `Mz`, `Mzgn.cut(3)`, `Mc1b`.
    pub fn label(&self) -> String {
        match self {
            ModelSpec::Named(m) => m.to_string(),
            ModelSpec::Linear(q) => format!("M{}", q.label_suffix()),
            ModelSpec::Cut(r) => format!("M{}.cut({})", r.quantifier.label_suffix(), r.cutpoints.len()),
            ModelSpec::CutSearch { quantifier, n_cuts } => format!("M{}.cut({n_cuts})", quantifier.label_suffix()),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Named(m) => match m {
                NamedModel::M0 => write!(f, "m0"),
                NamedModel::Mb => write!(f, "mb"),
                NamedModel::Mt => write!(f, "mt"),
                NamedModel::Mc(k) => write!(f, "mc:{k}"),
                NamedModel::Mcb(k) => write!(f, "mcb:{k}"),
                NamedModel::ML2 => write!(f, "ml2"),
                NamedModel::Mcount => write!(f, "mcount"),
            },
            ModelSpec::Linear(q) => match q {
                Quantifier::G => write!(f, "mz"),
                Quantifier::Gn => write!(f, "mzgn"),
                Quantifier::F => write!(f, "mzf"),
                Quantifier::GTilde => write!(f, "mzgt"),
                q => write!(f, "lin:{q}"),
            },
            ModelSpec::Cut(r) => write!(f, "cut:{}", r.spec_string()),
            ModelSpec::CutSearch { quantifier, n_cuts } => write!(f, "cutsearch:{quantifier}:{n_cuts}"),
        }
    }
}

impl FromStr for ModelSpec {
    type Err = RecapError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "mz" => return Ok(ModelSpec::Linear(Quantifier::G)),
            "mzgn" => return Ok(ModelSpec::Linear(Quantifier::Gn)),
            "mzf" => return Ok(ModelSpec::Linear(Quantifier::F)),
            "mzgt" => return Ok(ModelSpec::Linear(Quantifier::GTilde)),
            _ => {}
        }
        if let Some(q) = lower.strip_prefix("lin:") {
            return Ok(ModelSpec::Linear(q.parse()?));
        }
        if let Some(rest) = lower.strip_prefix("cutsearch:") {
            let (q, n) = rest
                .rsplit_once(':')
                .ok_or_else(|| RecapError::InvalidModel(format!("expected cutsearch:<q>:<n>, got {s:?}")))?;
            let n_cuts: usize =
                n.parse().map_err(|_| RecapError::InvalidModel(format!("bad number of cuts in {s:?}")))?;
            if n_cuts == 0 {
                return Err(RecapError::InvalidModel("cut search needs at least one cut".into()));
            }
            return Ok(ModelSpec::CutSearch { quantifier: q.parse()?, n_cuts });
        }
        if let Some(rest) = lower.strip_prefix("cut:") {
            let (q, cuts) = rest
                .rsplit_once(':')
                .ok_or_else(|| RecapError::InvalidModel(format!("expected cut:<q>:<e1,e2,...>, got {s:?}")))?;
            let cuts = cuts.split(',').map(parse_exact).collect::<Result<Vec<_>>>()?;
            return Ok(ModelSpec::Cut(CutRecipe::new(q.parse()?, cuts)?));
        }
        NamedModel::from_str(&lower).map(ModelSpec::Named).map_err(|_| {
            RecapError::InvalidModel(format!(
                "unknown model {s:?} (m0, mb, mt, mc:k, mcb:k, ml2, mcount, mz, mzgn, mzf, mzgt, lin:q, cut:q:cuts, cutsearch:q:n)"
            ))
        })
    }
}

/// Parses a comma/whitespace separated model list. Commas inside `cut:`
/// cutpoint lists are kept with their model.
pub fn parse_model_list(s: &str) -> Result<Vec<ModelSpec>> {
    let mut out: Vec<String> = Vec::new();
    for tok in s.split([',', ' ', ';']).filter(|t| !t.is_empty()) {
        let is_cut_continuation = parse_exact(tok).is_ok()
            && out.last().is_some_and(|prev| prev.to_ascii_lowercase().starts_with("cut:"));
        match out.last_mut() {
            Some(prev) if is_cut_continuation => {
                prev.push(',');
                prev.push_str(tok);
            }
            _ => out.push(tok.to_string()),
        }
    }
    if out.is_empty() {
        return Err(RecapError::InvalidModel("empty model list".into()));
    }
    out.iter().map(|m| m.parse()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingRow<T: Scalar> {
    pub spec: String,
    pub label: String,
    pub fit: Option<FitResult<T>>,
    pub error: Option<String>,
}

/// Candidates sorted by AIC (then fewer parameters, then label); models that
/// could not be fitted come last in input order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingReport<T: Scalar> {
    pub rows: Vec<RankingRow<T>>,
}

fn rank_cmp<T: Scalar>(a: &FitResult<T>, b: &FitResult<T>) -> std::cmp::Ordering {
    a.aic
        .partial_cmp(&b.aic)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(a.params.cmp(&b.params))
        .then_with(|| a.model.cmp(&b.model))
}

/// Index of the AIC winner under the ranking order.
pub fn aic_winner<T: Scalar>(fits: &[Option<&FitResult<T>>]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, f) in fits.iter().enumerate() {
        if let Some(f) = f {
            if best.is_none_or(|b| rank_cmp(f, fits[b].unwrap()).is_lt()) {
                best = Some(i);
            }
        }
    }
    best
}

impl<T: Scalar> RankingReport<T> {
    pub fn best(&self) -> Option<&FitResult<T>> {
        self.rows.first().and_then(|r| r.fit.as_ref())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Columns: `model,params,n_hat,ci_lo,ci_hi,aic,failure`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["model", "params", "n_hat", "ci_lo", "ci_hi", "aic", "failure"])?;
        for row in &self.rows {
            match &row.fit {
                Some(f) => out.write_record([
                    f.model.clone(),
                    f.params_label(),
                    f.n_hat.to_string(),
                    f.ci.0.to_string(),
                    f.ci.1.map_or_else(|| "inf".to_string(), |h| h.to_string()),
                    format!("{:.2}", f.aic.to_f64_lossy()),
                    f.failure.to_string(),
                ])?,
                None => out.write_record([row.label.as_str(), "", "", "", "", "", "error"])?,
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Fits every candidate and ranks them by AIC.
pub fn rank_models<T: Scalar>(
    data: &CaptureMatrix,
    candidates: &[ModelSpec],
    opts: &FitOptions,
) -> Result<RankingReport<T>> {
    if candidates.is_empty() {
        return Err(RecapError::InvalidModel("no candidate models".into()));
    }
    let rows: Vec<RankingRow<T>> = candidates
        .par_iter()
        .map(|spec| {
            let res = fit_model::<T>(data, spec, opts);
            let (fit, error) = match res {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            RankingRow { spec: spec.to_string(), label: spec.label(), fit, error }
        })
        .collect();
    let (mut ok, failed): (Vec<_>, Vec<_>) = rows.into_iter().partition(|r| r.fit.is_some());
    ok.sort_by(|a, b| rank_cmp(a.fit.as_ref().unwrap(), b.fit.as_ref().unwrap()));
    ok.extend(failed);
    Ok(RankingReport { rows: ok })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchStrategy {
    /// Every subset of the candidate cuts.
    Full,
    /// Every subset of a decimated candidate list (every `ceil(C/25)`-th).
    Reduced,
    /// Add one cut at a time to the previous optimum.
    Greedy,
}

impl SearchStrategy {
    pub fn default_for(n_cuts: usize) -> Self {
        if n_cuts <= 2 {
            SearchStrategy::Full
        } else {
            SearchStrategy::Greedy
        }
    }
}

impl FromStr for SearchStrategy {
    type Err = RecapError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(SearchStrategy::Full),
            "reduced" => Ok(SearchStrategy::Reduced),
            "greedy" => Ok(SearchStrategy::Greedy),
            _ => Err(RecapError::InvalidModel(format!("unknown search strategy '{s}' (full|reduced|greedy)"))),
        }
    }
}

/// Reduced-strategy target size of the candidate list.
pub const REDUCED_TARGET: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutSearchResult<T: Scalar> {
    #[serde(serialize_with = "serialize_exact_list")]
    pub cutpoints: Vec<Exact>,
    pub strategy: SearchStrategy,
    /// Number of candidate cut values considered.
    pub candidates: usize,
    /// Cut vectors scored.
    pub evaluated: usize,
    pub fit: FitResult<T>,
}

fn serialize_exact_list<S: serde::Serializer>(v: &[Exact], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|e| format!("{}/{}", e.numer(), e.denom())))
}

/// Observed trial counts per distinct quantifier value, with prefix sums.
/// The first value is always 0 (the never-captured histories), which is also
/// where unobserved units' trials go.
struct ValueCounts {
    values: Vec<Exact>,
    cum_s: Vec<u64>,
    cum_n: Vec<u64>,
}

impl ValueCounts {
    fn new(data: &CaptureMatrix, q: Quantifier) -> Result<Self> {
        let mut by_value: BTreeMap<Exact, (u64, u64)> = BTreeMap::new();
        for (x, y) in data.trials() {
            let e = by_value.entry(q.value(&x, data.t())?).or_default();
            e.0 += y as u64;
            e.1 += 1;
        }
        let (mut cum_s, mut cum_n) = (vec![0], vec![0]);
        let mut values = Vec::new();
        for (v, (s, n)) in by_value {
            values.push(v);
            cum_s.push(cum_s.last().unwrap() + s);
            cum_n.push(cum_n.last().unwrap() + n);
        }
        Ok(ValueCounts { values, cum_s, cum_n })
    }

    /// `(successes, trials)` of value indices `lo..=hi`.
    fn range(&self, lo: usize, hi: usize) -> (u64, u64) {
        (self.cum_s[hi + 1] - self.cum_s[lo], self.cum_n[hi + 1] - self.cum_n[lo])
    }
}

/// Scores cut vectors (as value indices: a cut at `i` closes the class that
/// ends with value `i`) without refitting from scratch: the never-captured
/// class carries the whole `N` profile and is memoised on its counts; every
/// other class contributes a closed-form constant.
struct CutScorer<'a, T: Scalar> {
    counts: &'a ValueCounts,
    t: u32,
    m: u64,
    n_upp: u64,
    opts: &'a FitOptions,
    h1: Vec<Option<T>>,
}

impl<T: Scalar> CutScorer<'_, T> {
    fn h1_max(&mut self, i: usize) -> T {
        if let Some(v) = self.h1[i] {
            return v;
        }
        let (s, n_obs) = self.counts.range(0, i);
        let (m, t) = (self.m, self.t as u64);
        let prof = scan(m, self.n_upp, self.opts.grid, self.opts.level, |n| {
            let trials = n_obs + t * (n - m);
            let (sv, nv) = (T::from_count(s), T::from_count(trials));
            let ll = cell_loglik_prob(sv, nv, sv / nv);
            ProfilePoint::from_fit(n, m, Ok(crate::glm::GlmFit {
                coefficients: Vec::new(),
                loglik: ll,
                converged: true,
                separation: false,
                iterations: 0,
                cell_probs: Vec::new(),
                empty_classes: Vec::new(),
            }))
        });
        let v = prof.maximize().map_or(T::neg_infinity(), |mx| mx.loglik);
        self.h1[i] = Some(v);
        v
    }

    fn aic(&mut self, cuts: &[usize]) -> T {
        let last = self.counts.values.len() - 1;
        let mut ll = self.h1_max(cuts[0]);
        for (k, &c) in cuts.iter().enumerate() {
            let hi = cuts.get(k + 1).copied().unwrap_or(last);
            let (s, n) = self.counts.range(c + 1, hi);
            ll = ll + cell_loglik_prob(T::from_count(s), T::from_count(n), T::from_count(s) / T::from_count(n));
        }
        aic(ll, cuts.len() + 2)
    }
}

/// Calls `f` on every increasing `k`-subset of `pool` in lexicographic order.
fn for_each_combination(pool: &[usize], k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(pool: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        let need = k - cur.len();
        for i in start..=pool.len() - need {
            cur.push(pool[i]);
            rec(pool, k, i + 1, cur, f);
            cur.pop();
        }
    }
    if k <= pool.len() {
        rec(pool, k, 0, &mut Vec::with_capacity(k), f);
    }
}

/// Finds the `n_cuts` cutpoints on quantifier `q` minimizing AIC.
///
/// Candidate cuts are the distinct values of `q` attained by observed partial
/// histories (the largest excluded, since it would leave the top interval
/// empty); the value 0 is represented by a cut just above it. Exact AIC ties
/// go to the lexicographically smallest cut vector.
pub fn cut_search<T: Scalar>(
    data: &CaptureMatrix,
    q: Quantifier,
    n_cuts: usize,
    strategy: SearchStrategy,
    opts: &FitOptions,
) -> Result<CutSearchResult<T>> {
    let spec = ModelSpec::CutSearch { quantifier: q, n_cuts };
    spec.validate_for(data.t())?;
    let m = data.m() as u64;
    if m == 0 {
        return Err(RecapError::InvalidData("no captured units".into()));
    }
    let counts = ValueCounts::new(data, q)?;
    let n_candidates = counts.values.len() - 1;
    if n_cuts > n_candidates {
        return Err(RecapError::InvalidCuts(format!(
            "{n_cuts} cuts requested but only {} distinct values of {q} are observed",
            counts.values.len()
        )));
    }
    let mut scorer = CutScorer::<T> {
        counts: &counts,
        t: data.t(),
        m,
        n_upp: opts.n_upp.unwrap_or_else(|| default_n_upp(m)),
        opts,
        h1: vec![None; n_candidates],
    };
    let all: Vec<usize> = (0..n_candidates).collect();
    let mut evaluated = 0;
    let exhaustive = |pool: &[usize], k: usize, scorer: &mut CutScorer<T>, evaluated: &mut usize| {
        let mut best: Option<(T, Vec<usize>)> = None;
        for_each_combination(pool, k, &mut |cuts| {
            *evaluated += 1;
            let a = scorer.aic(cuts);
            if best.as_ref().is_none_or(|(b, _)| a < *b) {
                best = Some((a, cuts.to_vec()));
            }
        });
        best
    };
    let best = match strategy {
        SearchStrategy::Full => exhaustive(&all, n_cuts, &mut scorer, &mut evaluated),
        SearchStrategy::Reduced => {
            let stride = n_candidates.div_ceil(REDUCED_TARGET).max(1);
            let pool: Vec<usize> = all.iter().copied().step_by(stride).collect();
            if pool.len() < n_cuts {
                return Err(RecapError::InvalidCuts(format!(
                    "decimated candidate list has {} values, fewer than {n_cuts} cuts",
                    pool.len()
                )));
            }
            exhaustive(&pool, n_cuts, &mut scorer, &mut evaluated)
        }
        SearchStrategy::Greedy => {
            let mut current = exhaustive(&all, 1, &mut scorer, &mut evaluated);
            for _ in 1..n_cuts {
                let base = current.as_ref().expect("at least one candidate").1.clone();
                let mut best: Option<(T, Vec<usize>)> = None;
                for c in all.iter().filter(|c| !base.contains(c)) {
                    let mut cuts = base.clone();
                    cuts.push(*c);
                    cuts.sort_unstable();
                    evaluated += 1;
                    let a = scorer.aic(&cuts);
                    let better = match &best {
                        None => true,
                        Some((b, v)) => a < *b || (a == *b && cuts < *v),
                    };
                    if better {
                        best = Some((a, cuts));
                    }
                }
                current = best;
            }
            current
        }
    };
    let (_, idx) = best.ok_or_else(|| RecapError::InvalidCuts("no admissible cut vector".into()))?;

    let min_positive = counts.values[1];
    let floor_cut = Exact::new(1, 1u64 << data.t().min(63));
    let zero_cut = if floor_cut < min_positive { floor_cut } else { min_positive / Exact::from_integer(2) };
    let cutpoints: Vec<Exact> = idx.iter().map(|&i| if i == 0 { zero_cut } else { counts.values[i] }).collect();
    let recipe = CutRecipe::new(q, cutpoints.clone())?;
    let fit = fit_model::<T>(data, &ModelSpec::Cut(recipe), opts)?;
    Ok(CutSearchResult { cutpoints, strategy, candidates: n_candidates, evaluated, fit })
}
