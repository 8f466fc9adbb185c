//! Seeded random instances.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::measure::{FiniteMeasureSpace, ProductSpace, MAX_MASK_ATOMS};
use crate::rectangle::KernelMatrix;

/// Largest number of cells a generated kernel may have.
pub const MAX_CELLS: usize = 1 << 20;

/// Law of the kernel entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum EntryLaw {
    /// Uniform on `[0, 1)`.
    Uniform01,
    /// `e^{2X} − 1` with `X` standard exponential: `P(> x) = (1+x)^{-1/2}`.
    ExpTail,
    /// Uniform on `[0, 1)` with probability `density`, else zero.
    Sparse(f64),
}

impl fmt::Display for EntryLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntryLaw::Uniform01 => f.write_str("uniform01"),
            EntryLaw::ExpTail => f.write_str("exp-tail"),
            EntryLaw::Sparse(d) => write!(f, "sparse:{d}"),
        }
    }
}

/// Parses `uniform01`, `exp-tail` or `sparse:DENSITY`.
impl FromStr for EntryLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform01" => Ok(EntryLaw::Uniform01),
            "exp-tail" => Ok(EntryLaw::ExpTail),
            _ => {
                let d: f64 = s
                    .strip_prefix("sparse:")
                    .and_then(|d| d.parse().ok())
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown distribution {s:?}")))?;
                if !(0.0..=1.0).contains(&d) {
                    return Err(Error::InvalidParameter(format!("density must lie in [0,1], got {d}")));
                }
                Ok(EntryLaw::Sparse(d))
            }
        }
    }
}

impl EntryLaw {
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            EntryLaw::Uniform01 => rng.random(),
            EntryLaw::ExpTail => {
                let x: f64 = rng.sample(Exp1);
                (2.0 * x).exp_m1()
            }
            EntryLaw::Sparse(d) => {
                if rng.random_bool(d) {
                    rng.random()
                } else {
                    0.0
                }
            }
        }
    }
}

/// How atom weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum WeightScheme {
    Counting,
    /// Normalized exponential samples scaled to the given total mass.
    Dirichlet(f64),
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightScheme::Counting => f.write_str("counting"),
            WeightScheme::Dirichlet(m) => write!(f, "dirichlet:{m}"),
        }
    }
}

/// Parses `counting`, `dirichlet` (total mass 1) or `dirichlet:MASS`.
impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let total: f64 = match s {
            "counting" => return Ok(WeightScheme::Counting),
            "dirichlet" => 1.0,
            _ => s
                .strip_prefix("dirichlet:")
                .and_then(|m| m.parse().ok())
                .ok_or_else(|| Error::InvalidParameter(format!("unknown weight scheme {s:?}")))?,
        };
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "total mass must be positive, got {total}"
            )));
        }
        Ok(WeightScheme::Dirichlet(total))
    }
}

impl WeightScheme {
    pub fn space(&self, n: usize, rng: &mut impl Rng) -> Result<FiniteMeasureSpace> {
        match *self {
            WeightScheme::Counting => Ok(FiniteMeasureSpace::counting(n)),
            WeightScheme::Dirichlet(total) => {
                let raw: Vec<f64> = (0..n)
                    .map(|_| rng.sample::<f64, _>(Exp1).max(f64::MIN_POSITIVE))
                    .collect();
                let sum: f64 = raw.iter().sum();
                FiniteMeasureSpace::new(raw.iter().map(|x| x / sum * total).collect())
            }
        }
    }
}

/// A random kernel drawn from `rng`.
pub fn random_kernel(
    rng: &mut impl Rng,
    shape: &[usize],
    law: EntryLaw,
    weights: WeightScheme,
) -> Result<KernelMatrix> {
    if shape.is_empty() || shape.iter().any(|&n| n == 0 || n > MAX_MASK_ATOMS) {
        return Err(Error::InvalidParameter(format!(
            "every axis needs between 1 and {MAX_MASK_ATOMS} atoms, got {shape:?}"
        )));
    }
    let cells = shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .unwrap_or(usize::MAX);
    if cells > MAX_CELLS {
        return Err(Error::InvalidParameter(format!(
            "{cells} cells exceed the limit {MAX_CELLS}"
        )));
    }
    let spaces = shape
        .iter()
        .map(|&n| weights.space(n, rng))
        .collect::<Result<Vec<_>>>()?;
    let entries = (0..cells).map(|_| law.sample(rng)).collect();
    KernelMatrix::new(ProductSpace::new(spaces)?, entries)
}

/// A deterministic instance for `seed`.
pub fn gen_random(seed: u64, shape: &[usize], law: EntryLaw, weights: WeightScheme) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Instance::from_kernel(&random_kernel(&mut rng, shape, law, weights)?))
}
