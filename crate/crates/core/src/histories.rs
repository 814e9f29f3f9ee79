//! Capture matrices, partial capture histories and the maps that quantify a
//! partial history into a behavioural covariate.
//!
//! A partial history `(x_1, ..., x_l)` is packed into a `u64` with `x_j` at
//! bit `j - 1`. With that layout the reversed-binary integer `f(x)` is the
//! packed word itself, and every other quantifier is an exact rational built
//! from it.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{RecapError, Result};

/// Exact non-negative rational used for covariate values.
pub type Exact = Ratio<u64>;

/// Largest supported number of capture occasions; keeps `f(x)` in a `u64`.
pub const MAX_OCCASIONS: u32 = 63;

fn low_mask(len: u32) -> u64 {
    if len >= 64 {
        u64::MAX
    } else {
        (1u64 << len) - 1
    }
}

/// A binary prefix `(x_1, ..., x_l)` of a capture history, `0 <= l <= t - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartialHistory {
    bits: u64,
    len: u32,
}

impl PartialHistory {
    pub const EMPTY: PartialHistory = PartialHistory { bits: 0, len: 0 };

    /// Builds a history from packed bits (`x_j` at bit `j - 1`).
    pub fn from_packed(bits: u64, len: u32) -> Result<Self> {
        if len > MAX_OCCASIONS {
            return Err(RecapError::HistoryTooLong { len: len as usize, t: MAX_OCCASIONS });
        }
        Ok(PartialHistory { bits: bits & low_mask(len), len })
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        if bits.len() > MAX_OCCASIONS as usize {
            return Err(RecapError::HistoryTooLong { len: bits.len(), t: MAX_OCCASIONS });
        }
        let mut packed = 0u64;
        for (j, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => packed |= 1 << j,
                other => {
                    return Err(RecapError::InvalidData(format!("capture entry {other} is not 0/1")))
                }
            }
        }
        Ok(PartialHistory { bits: packed, len: bits.len() as u32 })
    }

    /// All-zero history of the given length.
    pub fn zeros(len: u32) -> Self {
        PartialHistory { bits: 0, len }
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn packed(&self) -> u64 {
        self.bits
    }

    /// `x_j`, 1-based.
    pub fn bit(&self, j: u32) -> u8 {
        debug_assert!(j >= 1 && j <= self.len);
        ((self.bits >> (j - 1)) & 1) as u8
    }

    pub fn last(&self) -> Option<u8> {
        (self.len > 0).then(|| self.bit(self.len))
    }

    pub fn captures(&self) -> u32 {
        self.bits.count_ones()
    }

    pub fn never_captured(&self) -> bool {
        self.bits == 0
    }

    /// Bits as a `Vec` in occasion order.
    pub fn to_vec(&self) -> Vec<u8> {
        (1..=self.len).map(|j| self.bit(j)).collect()
    }

    /// The last `k` digits, zero-padded on the left when the history is
    /// shorter than `k`, encoded as `sum_p x_{l-k+p} 2^(p-1)`.
    pub fn suffix_code(&self, k: u32) -> u64 {
        if self.len >= k {
            (self.bits >> (self.len - k)) & low_mask(k)
        } else {
            // Missing leading digits are zeros, so the existing bits shift up.
            self.bits << (k - self.len)
        }
    }

    /// Prepends `k` zeros.
    pub fn zero_augmented(&self, k: u32) -> Result<Self> {
        let len = self.len + k;
        if len > MAX_OCCASIONS {
            return Err(RecapError::HistoryTooLong { len: len as usize, t: MAX_OCCASIONS });
        }
        Ok(PartialHistory { bits: self.bits << k, len })
    }

    /// Every partial history of length `0..t`, ordered by length then by
    /// packed value. There are `2^t - 1` of them.
    pub fn enumerate(t: u32) -> impl Iterator<Item = PartialHistory> {
        assert!(t <= 30, "explicit enumeration is limited to t <= 30");
        (0..t).flat_map(|len| (0..(1u64 << len)).map(move |bits| PartialHistory { bits, len }))
    }

    /// Compact bitstring, e.g. `"001"`; the empty history is `""`.
    pub fn bitstring(&self) -> String {
        self.to_vec().iter().map(|b| if *b == 1 { '1' } else { '0' }).collect()
    }
}

impl fmt::Display for PartialHistory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.bitstring())
    }
}

impl FromStr for PartialHistory {
    type Err = RecapError;

    /// Accepts `"001"`, `"(001)"`, `"(0,0,1)"` and `"()"`.
    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .filter(|c| !matches!(c, '(' | ')' | ',' | ' '))
            .map(|c| match c {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                other => Err(RecapError::InvalidData(format!("bad history digit {other:?} in {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        PartialHistory::from_bits(&bits)
    }
}

/// `f(x) = sum_j x_j 2^(j-1)`; zero for the empty history.
pub fn quantify_f(x: &PartialHistory) -> u64 {
    x.bits
}

/// `g(x) = f(x) / (2^l - 1)`, exactly.
pub fn quantify_g(x: &PartialHistory) -> Exact {
    if x.len == 0 {
        return Exact::from_integer(0);
    }
    Exact::new(x.bits, low_mask(x.len))
}

/// Fraction of past occasions with a capture; zero for the empty history.
pub fn quantify_gn(x: &PartialHistory) -> Exact {
    if x.len == 0 {
        return Exact::from_integer(0);
    }
    Exact::new(x.captures() as u64, x.len as u64)
}

/// Past captures over the whole experiment length `t`.
pub fn quantify_gtilde(x: &PartialHistory, t: u32) -> Result<Exact> {
    if t == 0 {
        return Err(RecapError::InvalidQuantifier("gtilde needs t >= 1".into()));
    }
    if x.len >= t {
        return Err(RecapError::HistoryTooLong { len: x.len as usize, t });
    }
    Ok(Exact::new(x.captures() as u64, t as u64))
}

/// `g` applied to the history with `k` zeros prepended.
pub fn quantify_gaug(x: &PartialHistory, k: u32) -> Result<Exact> {
    if k == 0 {
        return Err(RecapError::InvalidQuantifier("gaug order must be >= 1".into()));
    }
    Ok(quantify_g(&x.zero_augmented(k)?))
}

/// Which map turns a partial history into a covariate.
///
/// `GTilde` divides by the experiment length, which is supplied at evaluation
/// time together with the history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Quantifier {
    F,
    G,
    Gn,
    GTilde,
    GAug(u32),
}

impl Quantifier {
    pub fn value(&self, x: &PartialHistory, t: u32) -> Result<Exact> {
        if t > 0 && x.len >= t {
            return Err(RecapError::HistoryTooLong { len: x.len as usize, t });
        }
        match *self {
            Quantifier::F => Ok(Exact::from_integer(quantify_f(x))),
            Quantifier::G => Ok(quantify_g(x)),
            Quantifier::Gn => Ok(quantify_gn(x)),
            Quantifier::GTilde => quantify_gtilde(x, t),
            Quantifier::GAug(k) => quantify_gaug(x, k),
        }
    }

    /// Checks that the quantifier can be evaluated on every history of an
    /// experiment with `t` occasions.
    pub fn validate_for(&self, t: u32) -> Result<()> {
        if t == 0 || t > MAX_OCCASIONS {
            return Err(RecapError::UnsupportedOccasions(t));
        }
        match *self {
            Quantifier::GAug(0) => Err(RecapError::InvalidQuantifier("gaug order must be >= 1".into())),
            Quantifier::GAug(k) if t - 1 + k > MAX_OCCASIONS => Err(RecapError::InvalidQuantifier(
                format!("gaug:{k} with t = {t} exceeds {MAX_OCCASIONS} augmented digits"),
            )),
            _ => Ok(()),
        }
    }

    /// `true` when values are confined to `[0, 1]`.
    pub fn is_normalized(&self) -> bool {
        !matches!(self, Quantifier::F)
    }

    /// Suffix used in model labels (`Mz`, `Mzgn`, ...).
    pub fn label_suffix(&self) -> String {
        match self {
            Quantifier::F => "zf".into(),
            Quantifier::G => "z".into(),
            Quantifier::Gn => "zgn".into(),
            Quantifier::GTilde => "zgt".into(),
            Quantifier::GAug(k) => format!("zaug{k}"),
        }
    }
}

impl fmt::Display for Quantifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantifier::F => write!(f, "f"),
            Quantifier::G => write!(f, "g"),
            Quantifier::Gn => write!(f, "gn"),
            Quantifier::GTilde => write!(f, "gtilde"),
            Quantifier::GAug(k) => write!(f, "gaug:{k}"),
        }
    }
}

impl FromStr for Quantifier {
    type Err = RecapError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "f" => Ok(Quantifier::F),
            "g" => Ok(Quantifier::G),
            "gn" => Ok(Quantifier::Gn),
            "gtilde" | "gt" => Ok(Quantifier::GTilde),
            _ => {
                if let Some(k) = s.strip_prefix("gaug:") {
                    let k: u32 = k
                        .parse()
                        .map_err(|_| RecapError::InvalidQuantifier(format!("bad gaug order in {s:?}")))?;
                    if k == 0 {
                        return Err(RecapError::InvalidQuantifier("gaug order must be >= 1".into()));
                    }
                    Ok(Quantifier::GAug(k))
                } else {
                    Err(RecapError::InvalidQuantifier(format!("unknown quantifier {s:?}")))
                }
            }
        }
    }
}

impl TryFrom<String> for Quantifier {
    type Error = RecapError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Quantifier> for String {
    fn from(q: Quantifier) -> String {
        q.to_string()
    }
}

/// Observed `M x t` binary capture matrix. Rows are packed like
/// [`PartialHistory`]; every row has at least one capture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureMatrix {
    t: u32,
    rows: Vec<u64>,
}

impl CaptureMatrix {
    pub fn new(t: u32, rows: Vec<Vec<u8>>) -> Result<Self> {
        if t == 0 || t > MAX_OCCASIONS {
            return Err(RecapError::UnsupportedOccasions(t));
        }
        let mut packed = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != t as usize {
                return Err(RecapError::InvalidData(format!(
                    "row {} has {} entries, expected {t}",
                    i + 1,
                    row.len()
                )));
            }
            let h = PartialHistory::from_bits(row)?;
            if h.never_captured() {
                return Err(RecapError::InvalidData(format!("row {} has no capture", i + 1)));
            }
            packed.push(h.bits);
        }
        Ok(CaptureMatrix { t, rows: packed })
    }

    /// Builds from packed rows; all-zero rows are dropped (they would be
    /// unobservable units).
    pub fn from_packed(t: u32, rows: impl IntoIterator<Item = u64>) -> Result<Self> {
        if t == 0 || t > MAX_OCCASIONS {
            return Err(RecapError::UnsupportedOccasions(t));
        }
        let mask = low_mask(t);
        Ok(CaptureMatrix { t, rows: rows.into_iter().map(|r| r & mask).filter(|&r| r != 0).collect() })
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    /// Number of observed units `M`.
    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn packed_rows(&self) -> &[u64] {
        &self.rows
    }

    pub fn capture(&self, i: usize, j: u32) -> u8 {
        ((self.rows[i] >> (j - 1)) & 1) as u8
    }

    pub fn row(&self, i: usize) -> Vec<u8> {
        (1..=self.t).map(|j| self.capture(i, j)).collect()
    }

    /// Partial history conditioning occasion `j` (1-based) for unit `i`.
    pub fn history(&self, i: usize, j: u32) -> PartialHistory {
        let len = j - 1;
        PartialHistory { bits: self.rows[i] & low_mask(len), len }
    }

    pub fn total_captures(&self) -> u64 {
        self.rows.iter().map(|r| r.count_ones() as u64).sum()
    }

    /// Every Bernoulli trial of the observed units as
    /// `(conditioning history, outcome)`.
    pub fn trials(&self) -> impl Iterator<Item = (PartialHistory, u8)> + '_ {
        (0..self.rows.len())
            .flat_map(move |i| (1..=self.t).map(move |j| (self.history(i, j), self.capture(i, j))))
    }
}

/// Covariate matrix `Z`: one row per observed unit plus `n_unobserved`
/// implicit all-zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    pub t: u32,
    pub observed: Vec<Vec<Exact>>,
    pub n_unobserved: u64,
}

impl CovariateMatrix {
    pub fn n_rows(&self) -> u64 {
        self.observed.len() as u64 + self.n_unobserved
    }

    /// Row `i` (0-based) of the full `N x t` matrix.
    pub fn row(&self, i: u64) -> Vec<Exact> {
        match self.observed.get(i as usize) {
            Some(r) => r.clone(),
            None => vec![Exact::from_integer(0); self.t as usize],
        }
    }
}

/// `z_ij = q(x_i1, ..., x_i,j-1)` for observed rows, padded with
/// `n_total - M` zero rows.
pub fn covariate_matrix(data: &CaptureMatrix, q: Quantifier, n_total: u64) -> Result<CovariateMatrix> {
    let m = data.m() as u64;
    if n_total < m {
        return Err(RecapError::PopulationTooSmall { n_total, m });
    }
    q.validate_for(data.t())?;
    let observed = (0..data.m())
        .map(|i| (1..=data.t()).map(|j| q.value(&data.history(i, j), data.t())).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(CovariateMatrix { t: data.t(), observed, n_unobserved: n_total - m })
}
