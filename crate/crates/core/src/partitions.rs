//! Partitions of the set `H` of partial capture histories into equivalence
//! classes sharing one conditional capture probability.
//!
//! A [`Partition`] is a classifier rather than a materialised list: `H` has
//! `2^t - 1` members and `t` can reach 63. For `t <= 16` the class of every
//! history is memoised in a flat table.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{RecapError, Result};
use crate::histories::{quantify_g, Exact, PartialHistory, Quantifier, MAX_OCCASIONS};

const TABLE_MAX_T: u32 = 16;
/// Markov orders above this would mean more classes than is sensible to fit.
pub const MAX_MARKOV_ORDER: u32 = 16;

/// Standard behavioural and temporal models expressed as partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NamedModel {
    M0,
    Mb,
    Mt,
    Mc(u32),
    Mcb(u32),
    ML2,
    Mcount,
}

impl NamedModel {
    pub fn n_classes(&self, t: u32) -> usize {
        match *self {
            NamedModel::M0 => 1,
            NamedModel::Mb | NamedModel::ML2 => 2,
            NamedModel::Mt | NamedModel::Mcount => t as usize,
            NamedModel::Mc(k) => 1usize << k,
            NamedModel::Mcb(k) => (1usize << k) + 1,
        }
    }

    fn validate(&self, t: u32) -> Result<()> {
        if !(2..=MAX_OCCASIONS).contains(&t) {
            return Err(RecapError::InvalidPartition(format!("{self} needs 2 <= t <= {MAX_OCCASIONS}, got t = {t}")));
        }
        match *self {
            NamedModel::Mc(k) if k == 0 || k > t - 1 || k > MAX_MARKOV_ORDER => Err(RecapError::InvalidPartition(
                format!("Mc({k}) needs 1 <= k <= min(t - 1, {MAX_MARKOV_ORDER}) with t = {t}"),
            )),
            // The class "captured before, no capture in the last k" needs a
            // history of length k + 1.
            NamedModel::Mcb(k) if k == 0 || k + 2 > t || k > MAX_MARKOV_ORDER => Err(RecapError::InvalidPartition(
                format!("Mcb({k}) needs 1 <= k <= min(t - 2, {MAX_MARKOV_ORDER}) with t = {t}"),
            )),
            NamedModel::ML2 if t < 4 => Err(RecapError::InvalidPartition(format!("ML2 needs t >= 4, got {t}"))),
            _ => Ok(()),
        }
    }

    /// 0-based class index.
    fn classify(&self, x: &PartialHistory) -> usize {
        match *self {
            NamedModel::M0 => 0,
            NamedModel::Mb => usize::from(!x.never_captured()),
            NamedModel::Mt => x.len() as usize,
            NamedModel::Mc(k) => x.suffix_code(k) as usize,
            NamedModel::Mcb(k) => {
                if x.never_captured() {
                    0
                } else {
                    x.suffix_code(k) as usize + 1
                }
            }
            NamedModel::ML2 => {
                let recent = match x.last() {
                    Some(1) => x.len() < 3 || (x.packed() >> (x.len() - 3)).count_ones() >= 2,
                    _ => false,
                };
                usize::from(recent)
            }
            NamedModel::Mcount => x.captures() as usize,
        }
    }
}

impl fmt::Display for NamedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NamedModel::M0 => write!(f, "M0"),
            NamedModel::Mb => write!(f, "Mb"),
            NamedModel::Mt => write!(f, "Mt"),
            NamedModel::Mc(k) => write!(f, "Mc{k}"),
            NamedModel::Mcb(k) => write!(f, "Mc{k}b"),
            NamedModel::ML2 => write!(f, "ML2"),
            NamedModel::Mcount => write!(f, "Mcount"),
        }
    }
}

/// Parses an exact non-negative rational from `"5/8"`, `"0.625"` or `"6.25e-1"`.
pub fn parse_exact(s: &str) -> Result<Exact> {
    let bad = || RecapError::InvalidCuts(format!("cannot parse {s:?} as a non-negative rational"));
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: u64 = n.trim().parse().map_err(|_| bad())?;
        let d: u64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Exact::new(n, d));
    }
    let (mantissa, exp) = match s.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.starts_with('-') || (int_part.is_empty() && frac_part.is_empty()) {
        return Err(bad());
    }
    let digits = format!("{int_part}{frac_part}");
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let scale = frac_part.len() as i32 - exp;
    let mut numer: u128 = digits.parse().map_err(|_| bad())?;
    let mut denom: u128 = 1;
    if scale >= 0 {
        denom = 10u128.checked_pow(scale as u32).ok_or_else(bad)?;
    } else {
        numer = numer.checked_mul(10u128.checked_pow((-scale) as u32).ok_or_else(bad)?).ok_or_else(bad)?;
    }
    let g = num_integer::gcd(numer, denom);
    let (n, d) = (numer / g, denom / g);
    Ok(Exact::new(u64::try_from(n).map_err(|_| bad())?, u64::try_from(d).map_err(|_| bad())?))
}

fn exact_to_string(e: &Exact) -> String {
    if *e.denom() == 1 {
        e.numer().to_string()
    } else {
        format!("{}/{}", e.numer(), e.denom())
    }
}

/// Step-function recipe: intervals `[0, e_1], (e_1, e_2], ..., (e_{A-1}, 1]`
/// of a normalised quantifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CutRecipe {
    pub quantifier: Quantifier,
    pub cutpoints: Vec<Exact>,
}

impl CutRecipe {
    pub fn new(quantifier: Quantifier, cutpoints: Vec<Exact>) -> Result<Self> {
        let recipe = CutRecipe { quantifier, cutpoints };
        recipe.validate()?;
        Ok(recipe)
    }

    /// Dyadic cuts `r / 2^k`, `r = 1..2^k - 1`.
    pub fn dyadic(quantifier: Quantifier, k: u32) -> Result<Self> {
        if k == 0 || k > MAX_MARKOV_ORDER {
            return Err(RecapError::InvalidCuts(format!("dyadic order {k} out of range")));
        }
        let den = 1u64 << k;
        CutRecipe::new(quantifier, (1..den).map(|r| Exact::new(r, den)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.quantifier.is_normalized() {
            return Err(RecapError::InvalidCuts("cut recipes need a quantifier with range [0, 1]".into()));
        }
        let zero = Exact::from_integer(0);
        let one = Exact::from_integer(1);
        for c in &self.cutpoints {
            if *c <= zero || *c >= one {
                return Err(RecapError::InvalidCuts(format!("cutpoint {} is not inside (0, 1)", exact_to_string(c))));
            }
        }
        if self.cutpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(RecapError::InvalidCuts("cutpoints must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Number of intervals `A`.
    pub fn n_intervals(&self) -> usize {
        self.cutpoints.len() + 1
    }

    /// 0-based interval containing `v` (right-closed intervals).
    pub fn interval_of(&self, v: &Exact) -> usize {
        self.cutpoints.partition_point(|c| c < v)
    }

    /// Whether some history of an experiment with `t` occasions has its
    /// quantified value inside interval `a` (0-based).
    pub fn interval_attained(&self, a: usize, t: u32) -> bool {
        if a == 0 {
            // every quantifier maps the empty history to 0
            return true;
        }
        let lo = self.cutpoints[a - 1];
        let hi = self.cutpoints.get(a).copied();
        value_grid(self.quantifier, t).any(|(scale, den, mmax)| {
            let floor = |e: &Exact| -> u128 {
                (*e.numer() as u128 * den as u128) / (*e.denom() as u128 * scale as u128)
            };
            let upper = match hi {
                Some(h) => floor(&h).min(mmax as u128),
                None => mmax as u128,
            };
            upper > floor(&lo)
        })
    }

    /// Short form used in model strings, e.g. `g:1/4,1/2`.
    pub fn spec_string(&self) -> String {
        let cuts: Vec<String> = self.cutpoints.iter().map(exact_to_string).collect();
        format!("{}:{}", self.quantifier, cuts.join(","))
    }
}

/// For each history length, the attained values of `q` are
/// `{ scale * m / den : m = 0..=mmax }`.
fn value_grid(q: Quantifier, t: u32) -> impl Iterator<Item = (u64, u64, u64)> {
    (0..t).filter_map(move |l| match q {
        Quantifier::G if l == 0 => None,
        Quantifier::G => Some((1, (1u64 << l) - 1, (1u64 << l) - 1)),
        Quantifier::GAug(k) if l + k <= MAX_OCCASIONS && l > 0 => {
            Some((1u64 << k, (1u64 << (l + k)) - 1, (1u64 << l) - 1))
        }
        Quantifier::Gn if l > 0 => Some((1, l as u64, l as u64)),
        Quantifier::GTilde => Some((1, t as u64, l as u64)),
        _ => None,
    })
}

#[derive(Serialize, Deserialize)]
struct CutRecipeRepr {
    quantifier: Quantifier,
    cutpoints: Vec<serde_json::Value>,
}

impl Serialize for CutRecipe {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CutRecipeRepr {
            quantifier: self.quantifier,
            cutpoints: self.cutpoints.iter().map(|c| serde_json::Value::String(exact_to_string(c))).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CutRecipe {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let repr = CutRecipeRepr::deserialize(d)?;
        let cuts = repr
            .cutpoints
            .iter()
            .map(|v| match v {
                serde_json::Value::String(s) => parse_exact(s),
                serde_json::Value::Number(n) => parse_exact(&n.to_string()),
                other => Err(RecapError::InvalidCuts(format!("bad cutpoint {other}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        CutRecipe::new(repr.quantifier, cuts).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Rule {
    Named(NamedModel),
    Cut {
        recipe: CutRecipe,
        /// interval index -> class index, `None` for intervals no history reaches
        remap: Vec<Option<usize>>,
    },
    Explicit(HashMap<PartialHistory, usize>),
}

/// A partition `{H_1, ..., H_B}` of all partial histories for `t` occasions.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    t: u32,
    label: String,
    rule: Rule,
    n_classes: usize,
    dropped_intervals: Vec<usize>,
    table: Option<Vec<u32>>,
}

impl Partition {
    fn finish(mut self) -> Self {
        if self.t <= TABLE_MAX_T {
            let table = PartialHistory::enumerate(self.t).map(|x| self.classify_uncached(&x) as u32).collect();
            self.table = Some(table);
        }
        self
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Number of classes `B`.
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Cut intervals (0-based) that contain no history and were dropped.
    pub fn dropped_intervals(&self) -> &[usize] {
        &self.dropped_intervals
    }

    pub fn named_model(&self) -> Option<NamedModel> {
        match &self.rule {
            Rule::Named(m) => Some(*m),
            _ => None,
        }
    }

    pub fn cut_recipe(&self) -> Option<&CutRecipe> {
        match &self.rule {
            Rule::Cut { recipe, .. } => Some(recipe),
            _ => None,
        }
    }

    fn classify_uncached(&self, x: &PartialHistory) -> usize {
        match &self.rule {
            Rule::Named(m) => m.classify(x),
            Rule::Cut { recipe, remap } => {
                let v = recipe.quantifier.value(x, self.t).expect("validated quantifier");
                remap[recipe.interval_of(&v)].expect("attained value lies in a kept interval")
            }
            Rule::Explicit(map) => map[x],
        }
    }

    /// 0-based index `b` of the class containing `x`.
    pub fn class_of(&self, x: &PartialHistory) -> Result<usize> {
        if x.len() >= self.t {
            return Err(RecapError::HistoryTooLong { len: x.len() as usize, t: self.t });
        }
        Ok(match &self.table {
            Some(table) => {
                let offset = (1usize << x.len()) - 1 + x.packed() as usize;
                table[offset] as usize
            }
            None => self.classify_uncached(x),
        })
    }

    /// Explicit class lists. Only sensible for small `t`.
    pub fn classes(&self) -> Vec<Vec<PartialHistory>> {
        let mut out = vec![Vec::new(); self.n_classes];
        for x in PartialHistory::enumerate(self.t) {
            out[self.class_of(&x).unwrap()].push(x);
        }
        out
    }

    /// Index of the first history on which the two partitions assign a
    /// different class index, if any.
    pub fn first_difference(&self, other: &Partition) -> Option<PartialHistory> {
        if self.t != other.t {
            return Some(PartialHistory::EMPTY);
        }
        PartialHistory::enumerate(self.t).find(|x| self.class_of(x).unwrap() != other.class_of(x).unwrap())
    }

    /// Identical classes in identical order.
    pub fn same_as(&self, other: &Partition) -> bool {
        self.n_classes == other.n_classes && self.first_difference(other).is_none()
    }

    /// Class `b` (0-based) as a set, for `t <= 20`.
    pub fn class_members(&self, b: usize) -> Vec<PartialHistory> {
        PartialHistory::enumerate(self.t).filter(|x| self.class_of(x).unwrap() == b).collect()
    }

    pub fn to_json(&self) -> PartitionJson {
        PartitionJson {
            label: self.label.clone(),
            t: self.t,
            classes: self.classes().iter().map(|c| c.iter().map(|x| x.bitstring()).collect()).collect(),
        }
    }
}

/// Audit form of a partition: `{label, t, classes: [[bitstrings]]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionJson {
    pub label: String,
    pub t: u32,
    pub classes: Vec<Vec<String>>,
}

impl PartitionJson {
    pub fn into_partition(self) -> Result<Partition> {
        let classes = self
            .classes
            .iter()
            .map(|c| c.iter().map(|s| s.parse::<PartialHistory>()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        explicit_partition(&self.label, self.t, classes)
    }
}

pub fn named_partition(model: NamedModel, t: u32) -> Result<Partition> {
    model.validate(t)?;
    Ok(Partition {
        t,
        label: model.to_string(),
        rule: Rule::Named(model),
        n_classes: model.n_classes(t),
        dropped_intervals: Vec::new(),
        table: None,
    }
    .finish())
}

/// `x` belongs to class `a` iff `q(x)` lies in interval `I_a`; intervals no
/// history can reach are dropped and the remaining classes renumbered.
pub fn cut_partition(recipe: &CutRecipe, t: u32) -> Result<Partition> {
    recipe.validate()?;
    recipe.quantifier.validate_for(t)?;
    let mut remap = Vec::with_capacity(recipe.n_intervals());
    let mut dropped = Vec::new();
    let mut next = 0;
    for a in 0..recipe.n_intervals() {
        if recipe.interval_attained(a, t) {
            remap.push(Some(next));
            next += 1;
        } else {
            remap.push(None);
            dropped.push(a);
        }
    }
    Ok(Partition {
        t,
        label: format!("cut:{}", recipe.spec_string()),
        rule: Rule::Cut { recipe: recipe.clone(), remap },
        n_classes: next,
        dropped_intervals: dropped,
        table: None,
    }
    .finish())
}

/// Partition from explicit class lists; they must be disjoint, non-empty and
/// cover `H` exactly.
pub fn explicit_partition(label: &str, t: u32, classes: Vec<Vec<PartialHistory>>) -> Result<Partition> {
    if !(1..=TABLE_MAX_T).contains(&t) {
        return Err(RecapError::InvalidPartition(format!("explicit partitions need 1 <= t <= {TABLE_MAX_T}")));
    }
    let mut map = HashMap::new();
    for (b, class) in classes.iter().enumerate() {
        if class.is_empty() {
            return Err(RecapError::InvalidPartition(format!("class {} is empty", b + 1)));
        }
        for x in class {
            if x.len() >= t {
                return Err(RecapError::HistoryTooLong { len: x.len() as usize, t });
            }
            if map.insert(*x, b).is_some() {
                return Err(RecapError::InvalidPartition(format!("history {x} appears twice")));
            }
        }
    }
    let universe = (1usize << t) - 1;
    if map.len() != universe {
        let missing = PartialHistory::enumerate(t).find(|x| !map.contains_key(x)).unwrap();
        return Err(RecapError::InvalidPartition(format!("history {missing} is not covered")));
    }
    Ok(Partition {
        t,
        label: label.to_string(),
        n_classes: classes.len(),
        rule: Rule::Explicit(map),
        dropped_intervals: Vec::new(),
        table: None,
    }
    .finish())
}

impl FromStr for NamedModel {
    type Err = RecapError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let order = |rest: &str| -> Result<u32> {
            rest.parse().map_err(|_| RecapError::InvalidModel(format!("bad Markov order in {s:?}")))
        };
        match lower.as_str() {
            "m0" => Ok(NamedModel::M0),
            "mb" => Ok(NamedModel::Mb),
            "mt" => Ok(NamedModel::Mt),
            "ml2" => Ok(NamedModel::ML2),
            "mcount" => Ok(NamedModel::Mcount),
            _ => {
                if let Some(k) = lower.strip_prefix("mcb:") {
                    Ok(NamedModel::Mcb(order(k)?))
                } else if let Some(k) = lower.strip_prefix("mc:") {
                    Ok(NamedModel::Mc(order(k)?))
                } else {
                    Err(RecapError::InvalidModel(format!("unknown partition model {s:?}")))
                }
            }
        }
    }
}

/// Outcome of checking the interval / last-`k`-digits correspondence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorrespondenceReport {
    pub k: u32,
    pub t: u32,
    pub passed: bool,
    pub histories_checked: usize,
    pub counterexample: Option<String>,
}

/// Exhaustively verifies, for `1 <= k < t <= 16`, that
/// - every history of length `>= k` has `g(x)` in the dyadic interval indexed
///   by its last `k` digits (so histories sharing those digits share a class), and
/// - the dyadic cut partition of `g_aug(k)` is exactly the Markov partition `Mc(k)`.
pub fn markov_correspondence_check(k: u32, t: u32) -> Result<CorrespondenceReport> {
    if k == 0 || k >= t || t > TABLE_MAX_T {
        return Err(RecapError::InvalidPartition(format!(
            "correspondence check needs 1 <= k < t <= {TABLE_MAX_T}, got k = {k}, t = {t}"
        )));
    }
    let dyadic_g = CutRecipe::dyadic(Quantifier::G, k)?;
    let mut checked = 0;
    let mut counterexample = None;
    for x in PartialHistory::enumerate(t).filter(|x| x.len() >= k) {
        checked += 1;
        let interval = dyadic_g.interval_of(&quantify_g(&x));
        if interval as u64 != x.suffix_code(k) {
            counterexample = Some(format!("g{x} falls in interval {} but its last {k} digits encode {}", interval + 1, x.suffix_code(k)));
            break;
        }
    }
    if counterexample.is_none() {
        let aug = cut_partition(&CutRecipe::dyadic(Quantifier::GAug(k), k)?, t)?;
        let markov = named_partition(NamedModel::Mc(k), t)?;
        checked += (1usize << t) - 1;
        if aug.n_classes() != markov.n_classes() {
            counterexample = Some(format!("gaug cut partition has {} classes, Mc({k}) has {}", aug.n_classes(), markov.n_classes()));
        } else if let Some(x) = aug.first_difference(&markov) {
            counterexample = Some(format!(
                "history {x}: gaug cut class {} vs Mc({k}) class {}",
                aug.class_of(&x)? + 1,
                markov.class_of(&x)? + 1
            ));
        }
    }
    Ok(CorrespondenceReport { k, t, passed: counterexample.is_none(), histories_checked: checked, counterexample })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hs(list: &str) -> Vec<PartialHistory> {
        list.split_whitespace().map(|s| s.parse().unwrap()).collect()
    }

    fn sorted(mut v: Vec<PartialHistory>) -> Vec<PartialHistory> {
        v.sort();
        v
    }

    #[test]
    fn mc1_matches_explicit_bipartition() {
        let p = named_partition(NamedModel::Mc(1), 5).unwrap();
        let h1 = hs("() 0 00 10 000 100 010 110 0000 0100 0010 0110 1000 1100 1010 1110");
        let h2 = hs("1 01 11 001 101 011 111 0001 0011 0101 0111 1001 1011 1101 1111");
        assert_eq!(sorted(p.class_members(0)), sorted(h1));
        assert_eq!(sorted(p.class_members(1)), sorted(h2));
    }

    #[test]
    fn mc2_matches_explicit_partition() {
        let p = named_partition(NamedModel::Mc(2), 5).unwrap();
        let expected = [
            "() 0 00 000 100 0000 0100 1000 1100",
            "10 010 110 0010 0110 1010 1110",
            "1 01 001 101 0001 0101 1001 1101",
            "11 011 111 0011 0111 1011 1111",
        ];
        for (b, e) in expected.iter().enumerate() {
            assert_eq!(sorted(p.class_members(b)), sorted(hs(e)), "class {}", b + 1);
        }
    }

    #[test]
    fn mb_at_t3() {
        let p = named_partition(NamedModel::Mb, 3).unwrap();
        assert_eq!(sorted(p.class_members(0)), sorted(hs("() 0 00")));
        assert_eq!(p.class_members(1).len(), 4);
    }

    #[test]
    fn mt_mc1b_ml2_mcount_supplementary_partitions() {
        let mt = named_partition(NamedModel::Mt, 5).unwrap();
        assert_eq!(mt.class_of(&"01".parse().unwrap()).unwrap(), 2);
        assert_eq!(mt.class_members(4).len(), 16);

        let mc1b = named_partition(NamedModel::Mcb(1), 5).unwrap();
        assert_eq!(sorted(mc1b.class_members(0)), sorted(hs("() 0 00 000 0000")));
        assert_eq!(sorted(mc1b.class_members(1)), sorted(hs("10 100 010 110 1000 0100 1100 0010 1010 0110 1110")));
        assert_eq!(mc1b.class_members(2).len(), 15);

        let ml2 = named_partition(NamedModel::ML2, 5).unwrap();
        let h2 = hs("1 01 11 101 011 111 0101 0011 0111 1101 1011 1111");
        assert_eq!(sorted(ml2.class_members(1)), sorted(h2));
        assert_eq!(ml2.class_members(0).len(), 31 - 12);

        let mcount = named_partition(NamedModel::Mcount, 5).unwrap();
        assert_eq!(sorted(mcount.class_members(4)), hs("1111"));
        assert_eq!(mcount.class_members(3).len(), 5);
        assert_eq!(mcount.class_members(1).len(), 10);
    }

    #[test]
    fn class_of_examples() {
        let mb = named_partition(NamedModel::Mb, 5).unwrap();
        assert_eq!(mb.class_of(&"000".parse().unwrap()).unwrap(), 0);
        let mc2 = named_partition(NamedModel::Mc(2), 5).unwrap();
        assert_eq!(mc2.class_of(&"10".parse().unwrap()).unwrap(), 1);
        assert!(mc2.class_of(&"00000".parse().unwrap()).is_err());
    }

    #[test]
    fn named_partition_rejects_bad_arguments() {
        assert!(named_partition(NamedModel::Mb, 1).is_err());
        assert!(named_partition(NamedModel::Mc(0), 5).is_err());
        assert!(named_partition(NamedModel::Mc(5), 5).is_err());
        assert!(named_partition(NamedModel::Mcb(4), 5).is_err());
        assert!(named_partition(NamedModel::ML2, 3).is_err());
        assert!(named_partition(NamedModel::Mc(4), 5).is_ok());
    }

    #[test]
    fn cut_partitions_recover_markov_models() {
        let half = CutRecipe::new(Quantifier::G, vec![Exact::new(1, 2)]).unwrap();
        assert!(cut_partition(&half, 5).unwrap().same_as(&named_partition(NamedModel::Mc(1), 5).unwrap()));

        let quarters = CutRecipe::dyadic(Quantifier::G, 2).unwrap();
        let star = cut_partition(&quarters, 5).unwrap();
        assert_eq!(star.class_of(&"1".parse().unwrap()).unwrap(), 3);
        assert_eq!(sorted(star.class_members(2)), sorted(hs("01 001 101 0001 0101 1001 1101")));

        let aug = cut_partition(&CutRecipe::dyadic(Quantifier::GAug(2), 2).unwrap(), 5).unwrap();
        assert!(aug.same_as(&named_partition(NamedModel::Mc(2), 5).unwrap()));

        let l2 = CutRecipe::new(Quantifier::G, vec![parse_exact("0.625").unwrap()]).unwrap();
        assert!(cut_partition(&l2, 5).unwrap().same_as(&named_partition(NamedModel::ML2, 5).unwrap()));
    }

    #[test]
    fn low_cut_recovers_mb() {
        for t in 2..=10 {
            let recipe = CutRecipe::new(Quantifier::G, vec![Exact::new(1, 1 << t)]).unwrap();
            assert!(cut_partition(&recipe, t).unwrap().same_as(&named_partition(NamedModel::Mb, t).unwrap()));
        }
    }

    #[test]
    fn unreachable_intervals_are_dropped() {
        // With t = 3, g takes values {0, 1/3, 2/3, 1, 1/7, ...}; nothing lies in (0.9, 0.95].
        let recipe = CutRecipe::new(Quantifier::G, vec![parse_exact("0.9").unwrap(), parse_exact("0.95").unwrap()]).unwrap();
        let p = cut_partition(&recipe, 3).unwrap();
        assert_eq!(p.dropped_intervals(), &[1]);
        assert_eq!(p.n_classes(), 2);
        let all: usize = p.classes().iter().map(Vec::len).sum();
        assert_eq!(all, 7);
    }

    #[test]
    fn interval_attainment_matches_enumeration() {
        let quantifiers = [Quantifier::G, Quantifier::Gn, Quantifier::GTilde, Quantifier::GAug(1), Quantifier::GAug(3)];
        let cuts: Vec<Exact> = [(1, 40), (1, 9), (1, 5), (1, 3), (3, 7), (1, 2), (5, 8), (2, 3), (17, 20), (19, 20), (39, 40)]
            .iter()
            .map(|&(n, d)| Exact::new(n, d))
            .collect();
        for q in quantifiers {
            for t in 2..=7 {
                let recipe = CutRecipe::new(q, cuts.clone()).unwrap();
                for a in 0..recipe.n_intervals() {
                    let brute = PartialHistory::enumerate(t).any(|x| recipe.interval_of(&q.value(&x, t).unwrap()) == a);
                    assert_eq!(recipe.interval_attained(a, t), brute, "q={q} t={t} interval={a}");
                }
            }
        }
    }

    #[test]
    fn cut_recipe_validation() {
        assert!(CutRecipe::new(Quantifier::G, vec![Exact::new(0, 1)]).is_err());
        assert!(CutRecipe::new(Quantifier::G, vec![Exact::new(1, 1)]).is_err());
        assert!(CutRecipe::new(Quantifier::G, vec![Exact::new(1, 2), Exact::new(1, 3)]).is_err());
        assert!(CutRecipe::new(Quantifier::F, vec![Exact::new(1, 2)]).is_err());
        assert!(CutRecipe::new(Quantifier::G, vec![]).is_ok());
    }

    #[test]
    fn parse_exact_forms() {
        assert_eq!(parse_exact("0.625").unwrap(), Exact::new(5, 8));
        assert_eq!(parse_exact("5/8").unwrap(), Exact::new(5, 8));
        assert_eq!(parse_exact("6.25e-1").unwrap(), Exact::new(5, 8));
        assert_eq!(parse_exact(".5").unwrap(), Exact::new(1, 2));
        assert_eq!(parse_exact("0.00390625").unwrap(), Exact::new(1, 256));
        assert!(parse_exact("-0.5").is_err());
        assert!(parse_exact("abc").is_err());
        assert!(parse_exact("1/0").is_err());
    }

    #[test]
    fn json_round_trips() {
        let p = named_partition(NamedModel::Mcb(1), 4).unwrap();
        let json = serde_json::to_string(&p.to_json()).unwrap();
        let back: PartitionJson = serde_json::from_str(&json).unwrap();
        assert!(back.into_partition().unwrap().same_as(&p));

        let recipe = CutRecipe::new(Quantifier::GAug(2), vec![Exact::new(1, 4), Exact::new(5, 8)]).unwrap();
        let json = serde_json::to_string(&recipe).unwrap();
        assert_eq!(json, r#"{"quantifier":"gaug:2","cutpoints":["1/4","5/8"]}"#);
        assert_eq!(serde_json::from_str::<CutRecipe>(&json).unwrap(), recipe);
        let from_numbers: CutRecipe = serde_json::from_str(r#"{"quantifier":"g","cutpoints":[0.625]}"#).unwrap();
        assert_eq!(from_numbers.cutpoints, vec![Exact::new(5, 8)]);
    }

    #[test]
    fn explicit_partition_validation() {
        let ok = explicit_partition("x", 2, vec![hs("() 0"), hs("1")]).unwrap();
        assert!(ok.same_as(&named_partition(NamedModel::Mb, 2).unwrap()));
        assert!(explicit_partition("x", 2, vec![hs("() 0")]).is_err());
        assert!(explicit_partition("x", 2, vec![hs("() 0 1"), hs("1")]).is_err());
        assert!(explicit_partition("x", 2, vec![hs("() 0 1"), vec![]]).is_err());
    }

    #[test]
    fn correspondence_small_cases() {
        for (k, t) in [(1, 5), (2, 5), (3, 6)] {
            let report = markov_correspondence_check(k, t).unwrap();
            assert!(report.passed, "{report:?}");
        }
        assert!(markov_correspondence_check(3, 3).is_err());
        assert!(markov_correspondence_check(1, 17).is_err());
    }
}
