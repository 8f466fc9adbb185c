//! Finite weighted measure spaces and subsets of their atoms.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of atoms a single axis may have before subset
/// enumeration is refused.
pub const DEFAULT_ENUM_LIMIT: usize = 20;

/// Largest atom count a [`SubsetMask`] can address.
pub const MAX_MASK_ATOMS: usize = 64;

/// Environment variable overriding [`DEFAULT_ENUM_LIMIT`].
pub const ENUM_LIMIT_ENV: &str = "INTERP_LAB_ENUM_LIMIT";

static LIMIT_OVERRIDE: AtomicUsize = AtomicUsize::new(0);

/// Current enumeration limit: a programmatic override if set, else the
/// environment variable, else [`DEFAULT_ENUM_LIMIT`]. Never above 62.
pub fn enum_limit() -> usize {
    let forced = LIMIT_OVERRIDE.load(Ordering::Relaxed);
    let limit = if forced > 0 {
        forced
    } else {
        std::env::var(ENUM_LIMIT_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&v| v > 0)
            .unwrap_or(DEFAULT_ENUM_LIMIT)
    };
    limit.min(62)
}

/// Overrides the enumeration limit process-wide; `None` restores the default.
pub fn set_enum_limit(limit: Option<usize>) {
    LIMIT_OVERRIDE.store(limit.unwrap_or(0), Ordering::Relaxed);
}

pub(crate) fn check_enumerable(atoms: usize) -> Result<()> {
    let limit = enum_limit();
    if atoms > limit {
        return Err(Error::EnumerationLimit { atoms, limit });
    }
    Ok(())
}

/// A finite set of atoms with strictly positive masses.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpaceRepr", into = "SpaceRepr")]
pub struct FiniteMeasureSpace {
    weights: Arc<[f64]>,
    uniform: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct SpaceRepr {
    weights: Vec<f64>,
}

impl TryFrom<SpaceRepr> for FiniteMeasureSpace {
    type Error = Error;

    fn try_from(repr: SpaceRepr) -> Result<Self> {
        FiniteMeasureSpace::new(repr.weights)
    }
}

impl From<FiniteMeasureSpace> for SpaceRepr {
    fn from(space: FiniteMeasureSpace) -> Self {
        SpaceRepr {
            weights: space.weights.to_vec(),
        }
    }
}

impl fmt::Debug for FiniteMeasureSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiniteMeasureSpace")
            .field("weights", &&self.weights[..])
            .finish()
    }
}

impl FiniteMeasureSpace {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        for (i, &w) in weights.iter().enumerate() {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidSpace(format!(
                    "weight {i} is {w}; weights must be finite and strictly positive"
                )));
            }
        }
        let uniform = match weights.first() {
            Some(&w0) if weights.iter().all(|&w| w == w0) => Some(w0),
            _ => None,
        };
        Ok(Self {
            weights: weights.into(),
            uniform,
        })
    }

    /// `n` atoms of mass one.
    pub fn counting(n: usize) -> Self {
        Self::new(vec![1.0; n]).expect("unit weights are valid")
    }

    /// `n` atoms of mass `w`.
    pub fn uniform(n: usize, w: f64) -> Result<Self> {
        Self::new(vec![w; n])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// The common atom mass when every atom weighs the same.
    pub fn uniform_weight(&self) -> Option<f64> {
        self.uniform
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// μ(E).
    pub fn subset_measure(&self, mask: SubsetMask) -> Result<f64> {
        self.check_mask(mask)?;
        Ok(mask.iter().map(|i| self.weights[i]).sum())
    }

    /// Multiplies every atom mass by `s`.
    pub fn scale(&self, s: f64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "scale factor must be finite and positive, got {s}"
            )));
        }
        Self::new(self.weights.iter().map(|w| w * s).collect())
    }

    pub fn full_mask(&self) -> Result<SubsetMask> {
        SubsetMask::full(self.len())
    }

    /// All `2^n` subsets in increasing bit order, starting with the empty set.
    pub fn enumerate_subsets(&self) -> Result<SubsetIter> {
        check_enumerable(self.len())?;
        Ok(SubsetIter {
            atoms: self.len() as u32,
            next: 0,
            end: 1u64 << self.len(),
        })
    }

    pub(crate) fn check_mask(&self, mask: SubsetMask) -> Result<()> {
        if mask.atoms() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: mask.atoms(),
            });
        }
        Ok(())
    }

    /// μ(E) for every mask `0..2^n`, built by adding the lowest atom to a
    /// smaller subset so each entry is a sum of at most `n` weights.
    pub(crate) fn subset_measure_table(&self) -> Vec<f64> {
        subset_sums(&self.weights)
    }
}

/// Sums of `values` over every bitmask `0..2^n`.
pub(crate) fn subset_sums(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut table = vec![0.0; 1usize << n];
    for mask in 1..table.len() {
        let low = mask.trailing_zeros() as usize;
        table[mask] = table[mask & (mask - 1)] + values[low];
    }
    table
}

/// Free-function form of [`FiniteMeasureSpace::subset_measure`].
pub fn subset_measure(space: &FiniteMeasureSpace, mask: SubsetMask) -> Result<f64> {
    space.subset_measure(mask)
}

/// Free-function form of [`FiniteMeasureSpace::scale`].
pub fn scale_space(space: &FiniteMeasureSpace, s: f64) -> Result<FiniteMeasureSpace> {
    space.scale(s)
}

/// Free-function form of [`FiniteMeasureSpace::enumerate_subsets`].
pub fn enumerate_subsets(space: &FiniteMeasureSpace) -> Result<SubsetIter> {
    space.enumerate_subsets()
}

#[derive(Debug, Clone)]
pub struct SubsetIter {
    atoms: u32,
    next: u64,
    end: u64,
}

impl Iterator for SubsetIter {
    type Item = SubsetMask;

    fn next(&mut self) -> Option<SubsetMask> {
        if self.next >= self.end {
            return None;
        }
        let bits = self.next;
        self.next += 1;
        Some(SubsetMask {
            bits,
            atoms: self.atoms,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.end - self.next) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for SubsetIter {}

/// A subset of the atoms `0..atoms` of one space, stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubsetMask {
    bits: u64,
    atoms: u32,
}

impl SubsetMask {
    pub fn new(bits: u64, atoms: usize) -> Result<Self> {
        if atoms > MAX_MASK_ATOMS {
            return Err(Error::InvalidParameter(format!(
                "subset masks address at most {MAX_MASK_ATOMS} atoms, got {atoms}"
            )));
        }
        if atoms < 64 && bits >> atoms != 0 {
            let index = 63 - bits.leading_zeros() as usize;
            return Err(Error::IndexOutOfRange { index, atoms });
        }
        Ok(Self {
            bits,
            atoms: atoms as u32,
        })
    }

    pub fn empty(atoms: usize) -> Result<Self> {
        Self::new(0, atoms)
    }

    pub fn full(atoms: usize) -> Result<Self> {
        let bits = if atoms >= 64 { u64::MAX } else { (1u64 << atoms) - 1 };
        Self::new(bits, atoms)
    }

    pub fn from_indices(indices: &[usize], atoms: usize) -> Result<Self> {
        let mut bits = 0u64;
        for &i in indices {
            if i >= atoms || i >= MAX_MASK_ATOMS {
                return Err(Error::IndexOutOfRange { index: i, atoms });
            }
            bits |= 1 << i;
        }
        Self::new(bits, atoms)
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn atoms(&self) -> usize {
        self.atoms as usize
    }

    pub fn contains(&self, i: usize) -> bool {
        i < 64 && self.bits >> i & 1 == 1
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        let bits = self.bits;
        (0..self.atoms as usize).filter(move |&i| bits >> i & 1 == 1)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.iter().collect()
    }

    /// The indicator function of this subset.
    pub fn indicator(&self) -> Vec<f64> {
        (0..self.atoms())
            .map(|i| if self.contains(i) { 1.0 } else { 0.0 })
            .collect()
    }
}

impl fmt::Debug for SubsetMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl Serialize for SubsetMask {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

/// Ordered factors Ω_1 × ··· × Ω_n with the product measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FiniteMeasureSpace>", into = "Vec<FiniteMeasureSpace>")]
pub struct ProductSpace {
    factors: Vec<FiniteMeasureSpace>,
}

impl TryFrom<Vec<FiniteMeasureSpace>> for ProductSpace {
    type Error = Error;

    fn try_from(factors: Vec<FiniteMeasureSpace>) -> Result<Self> {
        ProductSpace::new(factors)
    }
}

impl From<ProductSpace> for Vec<FiniteMeasureSpace> {
    fn from(p: ProductSpace) -> Self {
        p.factors
    }
}

impl ProductSpace {
    pub fn new(factors: Vec<FiniteMeasureSpace>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidSpace("a product space needs at least one factor".into()));
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[FiniteMeasureSpace] {
        &self.factors
    }

    pub fn factor(&self, axis: usize) -> &FiniteMeasureSpace {
        &self.factors[axis]
    }

    pub fn arity(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|s| s.len()).collect()
    }

    pub fn num_cells(&self) -> usize {
        self.factors.iter().map(|s| s.len()).product()
    }

    /// Row-major strides (last axis fastest).
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.arity()];
        for axis in (0..self.arity().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * self.factors[axis + 1].len();
        }
        strides
    }

    /// Product mass of every cell, in row-major order.
    pub fn cell_masses(&self) -> Vec<f64> {
        let mut masses = vec![1.0];
        for factor in &self.factors {
            masses = masses
                .iter()
                .flat_map(|&m| factor.weights().iter().map(move |&w| m * w))
                .collect();
        }
        masses
    }

    /// Multi-index of a flat cell index.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.arity()];
        for axis in (0..self.arity()).rev() {
            let n = self.factors[axis].len();
            idx[axis] = flat % n;
            flat /= n;
        }
        idx
    }
}
