//! Lorentz-scale norms of a single function on a finite measure space.
//!
//! All three functionals only look at `|f|`:
//!
//! | functional | value |
//! |---|---|
//! | [`weak_quasinorm`] | `sup_c c·μ{|f|>c}^{1/p}` |
//! | [`bracket_norm`] | `sup_E ∫_E|f| dμ / μ(E)^{1/p'}` |
//! | [`lorentz_p1_norm`] | `∫_0^∞ μ{|f|>c}^{1/p} dc` |
//!
//! The bracket norm and the `L_{p',1}` norm are in exact duality:
//! `|∫ f g dμ| ≤ [f]_{p,∞} · [g]_{p',1}`, which is how
//! [`level_set_decomposition`] is used throughout the crate.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{check_enumerable, subset_sums, FiniteMeasureSpace};

/// An integrability exponent `p ∈ (0, ∞]`.
#[derive(Clone, Copy, PartialEq, PartialOrd)]
pub struct Exponent(f64);

impl Exponent {
    pub const INFINITY: Exponent = Exponent(f64::INFINITY);

    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p <= 0.0 {
            return Err(Error::InvalidExponent(format!("p must lie in (0, inf], got {p}")));
        }
        Ok(Self(p))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    /// `1/p`, zero for `p = ∞`.
    pub fn recip(self) -> f64 {
        if self.is_infinite() {
            0.0
        } else {
            1.0 / self.0
        }
    }

    /// `1/p' = 1 - 1/p`.
    pub fn conjugate_recip(self) -> f64 {
        1.0 - self.recip()
    }

    /// The Hölder conjugate `p'`, defined for `p ≥ 1` (`1' = ∞`, `∞' = 1`).
    pub fn conjugate(self) -> Result<Exponent> {
        if self.0 < 1.0 {
            return Err(Error::InvalidExponent(format!(
                "conjugate exponent needs p >= 1, got {}",
                self.0
            )));
        }
        if self.0 == 1.0 {
            Ok(Exponent::INFINITY)
        } else if self.is_infinite() {
            Ok(Exponent(1.0))
        } else {
            Ok(Exponent(self.0 / (self.0 - 1.0)))
        }
    }

    pub(crate) fn require_at_least_one(self, what: &str) -> Result<()> {
        if self.0 < 1.0 {
            return Err(Error::InvalidExponent(format!("{what} needs p >= 1, got {}", self.0)));
        }
        Ok(())
    }
}

impl fmt::Debug for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Exponent {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        let p = match Repr::deserialize(d)? {
            Repr::Num(p) => p,
            Repr::Text(s) => match s.trim().to_ascii_lowercase().as_str() {
                "inf" | "infinity" | "∞" => f64::INFINITY,
                other => other
                    .parse::<f64>()
                    .map_err(|_| serde::de::Error::custom(format!("bad exponent `{s}`")))?,
            },
        };
        Exponent::new(p).map_err(serde::de::Error::custom)
    }
}

impl std::str::FromStr for Exponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" => Ok(Exponent::INFINITY),
            other => {
                let p: f64 = other
                    .parse()
                    .map_err(|_| Error::InvalidExponent(format!("cannot parse `{s}`")))?;
                Exponent::new(p)
            }
        }
    }
}

/// A real function on the atoms of a finite measure space.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarFunction {
    space: FiniteMeasureSpace,
    values: Vec<f64>,
}

impl ScalarFunction {
    pub fn new(space: FiniteMeasureSpace, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.len() {
            return Err(Error::DimensionMismatch {
                expected: space.len(),
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite value {v}")));
        }
        Ok(Self { space, values })
    }

    pub fn zeros(space: FiniteMeasureSpace) -> Self {
        let n = space.len();
        Self {
            space,
            values: vec![0.0; n],
        }
    }

    pub fn space(&self) -> &FiniteMeasureSpace {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    pub fn map(&self, op: impl Fn(f64) -> f64) -> Self {
        Self {
            space: self.space.clone(),
            values: self.values.iter().map(|&v| op(v)).collect(),
        }
    }

    /// `∫ f dμ`.
    pub fn integral(&self) -> f64 {
        self.values.iter().zip(self.space.weights()).map(|(v, w)| v * w).sum()
    }

    /// `∫ f g dμ`; both functions must live on the same space.
    pub fn pairing(&self, other: &ScalarFunction) -> Result<f64> {
        if self.space != other.space {
            return Err(Error::InvalidParameter("functions live on different spaces".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .zip(self.space.weights())
            .map(|((a, b), w)| a * b * w)
            .sum())
    }
}

/// How the supremum over subsets is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SubsetSearch {
    /// Sorted scan when the space has equal weights, enumeration otherwise.
    #[default]
    Auto,
    /// All `2^n` subsets, subject to the enumeration limit.
    Enumerate,
    /// Top-`k` scan; only valid for equal weights.
    Sorted,
}

/// Maximizer of `∫_E |v| dμ / denom(μ(E))` over nonempty `E`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SubsetMax {
    pub value: f64,
    pub atoms: Vec<usize>,
}

/// `sup_{E≠∅} Σ_{i∈E} |v_i| μ_i / denom(μ(E))`. `denom` must be positive on
/// `(0, ∞)`. The sorted scan is exact whenever the weights are equal, since
/// then the ratio depends on `E` only through `|E|` and the captured mass.
pub(crate) fn sup_ratio(
    space: &FiniteMeasureSpace,
    values: &[f64],
    denom: &dyn Fn(f64) -> f64,
    search: SubsetSearch,
) -> Result<SubsetMax> {
    debug_assert_eq!(space.len(), values.len());
    if space.is_empty() {
        return Ok(SubsetMax {
            value: 0.0,
            atoms: vec![],
        });
    }
    let sorted = match search {
        SubsetSearch::Auto => space.uniform_weight().is_some(),
        SubsetSearch::Enumerate => false,
        SubsetSearch::Sorted => {
            if space.uniform_weight().is_none() {
                return Err(Error::InvalidParameter(
                    "sorted subset scan requires equal atom weights".into(),
                ));
            }
            true
        }
    };
    if sorted {
        let w = space.uniform_weight().expect("checked above");
        let order = descending_order(values);
        let mut best = SubsetMax {
            value: f64::NEG_INFINITY,
            atoms: vec![],
        };
        let mut mass = 0.0;
        for (k, &i) in order.iter().enumerate() {
            mass += values[i].abs() * w;
            let ratio = mass / denom((k + 1) as f64 * w);
            if ratio > best.value {
                best.value = ratio;
                best.atoms = order[..=k].to_vec();
            }
        }
        best.atoms.sort_unstable();
        Ok(best)
    } else {
        check_enumerable(space.len())?;
        let weighted: Vec<f64> = values.iter().zip(space.weights()).map(|(v, w)| v.abs() * w).collect();
        let masses = subset_sums(&weighted);
        let measures = space.subset_measure_table();
        let mut best = (f64::NEG_INFINITY, 0usize);
        for mask in 1..masses.len() {
            let ratio = masses[mask] / denom(measures[mask]);
            if ratio > best.0 {
                best = (ratio, mask);
            }
        }
        Ok(SubsetMax {
            value: best.0,
            atoms: (0..space.len()).filter(|i| best.1 >> i & 1 == 1).collect(),
        })
    }
}

/// Indices ordered by decreasing `|v|`, ties by increasing index.
pub(crate) fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    order
}

/// Distinct positive values of `|f|` in decreasing order, each paired with
/// `μ{|f| ≥ v}`.
fn level_sets(f: &ScalarFunction) -> Vec<(f64, f64, Vec<usize>)> {
    let order = descending_order(f.values());
    let mut levels: Vec<(f64, f64, Vec<usize>)> = Vec::new();
    let mut mass = 0.0;
    let mut members = Vec::new();
    let mut k = 0;
    while k < order.len() {
        let v = f.values()[order[k]].abs();
        if v == 0.0 {
            break;
        }
        while k < order.len() && f.values()[order[k]].abs() == v {
            mass += f.space().weight(order[k]);
            members.push(order[k]);
            k += 1;
        }
        let mut sorted = members.clone();
        sorted.sort_unstable();
        levels.push((v, mass, sorted));
    }
    levels
}

/// Weak-`L_p` quasinorm `sup_c c·μ{|f|>c}^{1/p}`, evaluated at the distinct
/// values `v` of `|f|` with the closed level sets `{|f| ≥ v}`.
pub fn weak_quasinorm(f: &ScalarFunction, p: Exponent) -> f64 {
    let inv = p.recip();
    level_sets(f)
        .into_iter()
        .map(|(v, mass, _)| v * mass.powf(inv))
        .fold(0.0, f64::max)
}

/// `sup_{E≠∅} ∫_E |f| dμ / μ(E)^{1/p'}`.
///
/// `p = ∞` reduces to `max |f|` and `p = 1` to `∫|f|`, both without
/// enumeration. Equal weights use the sorted top-`k` scan; anything else
/// enumerates all subsets.
pub fn bracket_norm(f: &ScalarFunction, p: Exponent) -> Result<f64> {
    bracket_norm_with(f, p, SubsetSearch::Auto)
}

/// [`bracket_norm`] with an explicit choice of search strategy.
pub fn bracket_norm_with(f: &ScalarFunction, p: Exponent, search: SubsetSearch) -> Result<f64> {
    p.require_at_least_one("bracket norm")?;
    if search == SubsetSearch::Auto {
        if p.is_infinite() {
            return Ok(f.values().iter().fold(0.0, |m, v| m.max(v.abs())));
        }
        if p.value() == 1.0 {
            return Ok(f.abs().integral());
        }
    }
    let gamma = p.conjugate_recip();
    Ok(sup_ratio(f.space(), f.values(), &|m| m.powf(gamma), search)?.value)
}

/// Lower bound on [`bracket_norm`] that only tries the superlevel sets
/// `{|f| ≥ v}`. Exact for equal weights; for weighted atoms it can miss the
/// optimum, so verification code never relies on it.
pub fn bracket_norm_threshold_scan(f: &ScalarFunction, p: Exponent) -> Result<f64> {
    p.require_at_least_one("bracket norm")?;
    let gamma = p.conjugate_recip();
    let mut best: f64 = 0.0;
    let order = descending_order(f.values());
    let mut mass = 0.0;
    let mut measure = 0.0;
    let mut k = 0;
    while k < order.len() {
        let v = f.values()[order[k]].abs();
        while k < order.len() && f.values()[order[k]].abs() == v {
            mass += v * f.space().weight(order[k]);
            measure += f.space().weight(order[k]);
            k += 1;
        }
        best = best.max(mass / measure.powf(gamma));
    }
    Ok(best)
}

/// `[f]_{p,1} = ∫_0^∞ μ{|f|>c}^{1/p} dc`, evaluated piecewise between the
/// distinct values of `|f|`. Requires `p ≥ 1`.
pub fn lorentz_p1_norm(f: &ScalarFunction, p: Exponent) -> Result<f64> {
    Ok(level_set_decomposition(f, p)?
        .iter()
        .map(|piece| piece.coefficient)
        .sum())
}

/// One term `c_k φ_k` of a level-set decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPiece {
    pub coefficient: f64,
    /// The superlevel set `L_k = {|f| ≥ v_k}` (sorted atom indices).
    pub level: Vec<usize>,
    /// `φ_k = μ(L_k)^{-1/p} 1_{L_k}`.
    pub block: ScalarFunction,
}

/// Writes `|f| = Σ_k c_k φ_k` with nested superlevel sets `L_k`, normalized
/// blocks `φ_k = μ(L_k)^{-1/p} 1_{L_k}` and `c_k = (v_k − v_{k+1}) μ(L_k)^{1/p}`,
/// so that `Σ_k c_k = [f]_{p,1}`.
pub fn level_set_decomposition(f: &ScalarFunction, p: Exponent) -> Result<Vec<LevelPiece>> {
    p.require_at_least_one("L_{p,1} norm")?;
    let inv = p.recip();
    let levels = level_sets(f);
    let mut pieces = Vec::with_capacity(levels.len());
    for (k, (v, mass, members)) in levels.iter().enumerate() {
        let next = levels.get(k + 1).map_or(0.0, |l| l.0);
        let norm = mass.powf(inv);
        let mut block = vec![0.0; f.space().len()];
        for &i in members {
            block[i] = 1.0 / norm;
        }
        pieces.push(LevelPiece {
            coefficient: (v - next) * norm,
            level: members.clone(),
            block: ScalarFunction {
                space: f.space().clone(),
                values: block,
            },
        });
    }
    Ok(pieces)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counting(values: &[f64]) -> ScalarFunction {
        ScalarFunction::new(FiniteMeasureSpace::counting(values.len()), values.to_vec()).unwrap()
    }

    fn p(v: f64) -> Exponent {
        Exponent::new(v).unwrap()
    }

    /// Direct enumeration of every nonempty subset.
    fn brute_bracket(f: &ScalarFunction, p: Exponent) -> f64 {
        let n = f.values().len();
        let gamma = p.conjugate_recip();
        let mut best: f64 = 0.0;
        for mask in 1u32..(1 << n) {
            let (mut num, mut mu) = (0.0, 0.0);
            for i in 0..n {
                if mask >> i & 1 == 1 {
                    num += f.values()[i].abs() * f.space().weight(i);
                    mu += f.space().weight(i);
                }
            }
            best = best.max(num / mu.powf(gamma));
        }
        best
    }

    #[test]
    fn weak_quasinorm_examples() {
        // v=3: 3·1^{1/2}; v=1: 1·3^{1/2}
        assert_eq!(weak_quasinorm(&counting(&[3.0, 1.0, 1.0]), p(2.0)), 3.0);
        let space = FiniteMeasureSpace::new(vec![0.5, 2.0, 1.5]).unwrap();
        let ind = ScalarFunction::new(space, vec![1.0, 0.0, 1.0]).unwrap();
        assert!((weak_quasinorm(&ind, p(3.0)) - 2f64.powf(1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(weak_quasinorm(&counting(&[0.0, 0.0]), p(2.0)), 0.0);
        assert_eq!(weak_quasinorm(&counting(&[-4.0, 2.0]), Exponent::INFINITY), 4.0);
    }

    #[test]
    fn bracket_norm_examples() {
        let f = counting(&[3.0, 1.0, 1.0]);
        assert_eq!(brute_bracket(&f, p(2.0)), 3.0);
        assert_eq!(bracket_norm(&f, p(2.0)).unwrap(), 3.0);

        let space = FiniteMeasureSpace::new(vec![0.5, 2.0, 1.5]).unwrap();
        let c = ScalarFunction::new(space.clone(), vec![2.0; 3]).unwrap();
        let expected = 2.0 * 4f64.powf(1.0 / 3.0);
        assert!((bracket_norm(&c, p(3.0)).unwrap() - expected).abs() < 1e-12);

        let g = ScalarFunction::new(space, vec![1.0, -7.0, 3.0]).unwrap();
        assert_eq!(bracket_norm(&g, Exponent::INFINITY).unwrap(), 7.0);
        assert_eq!(
            bracket_norm_with(&g, Exponent::INFINITY, SubsetSearch::Enumerate).unwrap(),
            7.0
        );
    }

    #[test]
    fn bracket_rejects_small_p_and_sorted_on_weights() {
        assert!(bracket_norm(&counting(&[1.0]), p(0.5)).is_err());
        let space = FiniteMeasureSpace::new(vec![1.0, 2.0]).unwrap();
        let f = ScalarFunction::new(space, vec![1.0, 1.0]).unwrap();
        assert!(bracket_norm_with(&f, p(2.0), SubsetSearch::Sorted).is_err());
    }

    #[test]
    fn bracket_refuses_large_weighted_spaces() {
        let weights: Vec<f64> = (0..25).map(|i| 1.0 + i as f64).collect();
        let f = ScalarFunction::new(FiniteMeasureSpace::new(weights).unwrap(), vec![1.0; 25]).unwrap();
        assert!(matches!(bracket_norm(&f, p(2.0)), Err(Error::EnumerationLimit { .. })));
        // equal weights stay on the sorted path regardless of size
        let g = counting(&vec![1.0; 200]);
        assert!((bracket_norm(&g, p(2.0)).unwrap() - 200f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn lorentz_examples() {
        let f = counting(&[2.0, 1.0]);
        assert!((lorentz_p1_norm(&f, p(2.0)).unwrap() - (2f64.sqrt() + 1.0)).abs() < 1e-12);

        let space = FiniteMeasureSpace::new(vec![0.5, 2.0, 1.5]).unwrap();
        let ind = ScalarFunction::new(space.clone(), vec![0.0, 1.0, 1.0]).unwrap();
        assert!((lorentz_p1_norm(&ind, p(4.0)).unwrap() - 3.5f64.powf(0.25)).abs() < 1e-12);

        let single = ScalarFunction::new(FiniteMeasureSpace::new(vec![0.3]).unwrap(), vec![5.0]).unwrap();
        assert!((lorentz_p1_norm(&single, p(3.0)).unwrap() - 5.0 * 0.3f64.powf(1.0 / 3.0)).abs() < 1e-12);
        // p = 1 is the L_1 norm
        let g = ScalarFunction::new(space, vec![1.0, -2.0, 0.5]).unwrap();
        assert!((lorentz_p1_norm(&g, p(1.0)).unwrap() - g.abs().integral()).abs() < 1e-12);
    }

    #[test]
    fn level_set_decomposition_examples() {
        let f = counting(&[2.0, 1.0]);
        let pieces = level_set_decomposition(&f, p(2.0)).unwrap();
        assert_eq!(pieces.len(), 2);
        let total: f64 = pieces.iter().map(|x| x.coefficient).sum();
        assert!((total - (2f64.sqrt() + 1.0)).abs() < 1e-12);

        let space = FiniteMeasureSpace::new(vec![0.5, 2.0, 1.5]).unwrap();
        let ind = ScalarFunction::new(space, vec![1.0, 0.0, 1.0]).unwrap();
        let pieces = level_set_decomposition(&ind, p(2.0)).unwrap();
        assert_eq!(pieces.len(), 1);
        assert!((pieces[0].coefficient - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(pieces[0].level, vec![0, 2]);
    }

    #[test]
    fn reconstruction_is_atomwise_exact() {
        let space = FiniteMeasureSpace::new(vec![0.5, 2.0, 1.5, 0.1, 0.9]).unwrap();
        let f = ScalarFunction::new(space, vec![3.0, -1.0, 0.0, 3.0, 0.25]).unwrap();
        let pieces = level_set_decomposition(&f, p(1.7)).unwrap();
        for i in 0..5 {
            let sum: f64 = pieces.iter().map(|x| x.coefficient * x.block.values()[i]).sum();
            assert!((sum - f.values()[i].abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_scan_is_a_lower_bound() {
        let space = FiniteMeasureSpace::new(vec![10.0, 0.1, 1.0]).unwrap();
        let f = ScalarFunction::new(space, vec![1.0, 0.9, 0.2]).unwrap();
        let exact = bracket_norm(&f, p(2.0)).unwrap();
        let scan = bracket_norm_threshold_scan(&f, p(2.0)).unwrap();
        assert!(scan <= exact + 1e-15);
        let eq = counting(&[0.3, 4.0, 1.0, 1.0]);
        assert!((bracket_norm_threshold_scan(&eq, p(2.0)).unwrap() - bracket_norm(&eq, p(2.0)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn exponent_parsing() {
        assert!(Exponent::new(0.0).is_err());
        assert!("inf".parse::<Exponent>().unwrap().is_infinite());
        assert_eq!("2.5".parse::<Exponent>().unwrap().value(), 2.5);
        let e: Exponent = serde_json::from_str("\"inf\"").unwrap();
        assert!(e.is_infinite());
        assert_eq!(p(2.0).conjugate().unwrap().value(), 2.0);
        assert_eq!(Exponent::INFINITY.conjugate().unwrap().value(), 1.0);
        assert!(p(0.5).conjugate().is_err());
    }
}
