//! The JSON instance format.
//!
//! ```json
//! {"mu": [{"weights": [1, 1]}, {"weights": [1, 2]}],
//!  "f": [[1, 0], [0, 1]],
//!  "q": 1, "p": [2, "inf"], "theta": 0.5}
//! ```
//!
//! `mu` may be omitted for counting measures. A one-axis instance with
//! `partitions` describes a conditional-expectation problem; `gauges`
//! replaces the power gauges of the exponents.

use serde::{Deserialize, Serialize};

use crate::condexp::Partition;
use crate::error::{Error, Result};
use crate::lorentz::{Exponent, ScalarFunction};
use crate::measure::{FiniteMeasureSpace, ProductSpace};
use crate::rectangle::{GaugeFunction, KernelMatrix};

/// A rectangular nested array of numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NestedArray {
    Number(f64),
    List(Vec<NestedArray>),
}

impl NestedArray {
    /// Builds the nested form of a row-major tensor.
    pub fn from_flat(shape: &[usize], data: &[f64]) -> Self {
        match shape.split_first() {
            None => NestedArray::Number(data[0]),
            Some((&n, rest)) => {
                let stride: usize = rest.iter().product();
                NestedArray::List(
                    (0..n)
                        .map(|i| Self::from_flat(rest, &data[i * stride..(i + 1) * stride]))
                        .collect(),
                )
            }
        }
    }

    /// Shape and row-major entries; fails on ragged input.
    pub fn flatten(&self) -> Result<(Vec<usize>, Vec<f64>)> {
        let mut shape = Vec::new();
        let mut node = self;
        while let NestedArray::List(items) = node {
            shape.push(items.len());
            match items.first() {
                Some(first) => node = first,
                None => break,
            }
        }
        let mut data = Vec::new();
        self.collect(&shape, &mut data)?;
        Ok((shape, data))
    }

    fn collect(&self, shape: &[usize], out: &mut Vec<f64>) -> Result<()> {
        match (self, shape.split_first()) {
            (NestedArray::Number(v), None) => {
                out.push(*v);
                Ok(())
            }
            (NestedArray::List(items), Some((&n, rest))) if items.len() == n => {
                items.iter().try_for_each(|item| item.collect(rest, out))
            }
            _ => Err(Error::DimensionMismatch {
                expected: shape.first().copied().unwrap_or(0),
                got: match self {
                    NestedArray::List(items) => items.len(),
                    NestedArray::Number(_) => 0,
                },
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<FiniteMeasureSpace>>,
    pub f: NestedArray,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<Exponent>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partitions: Option<Vec<Partition>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gauges: Option<Vec<GaugeFunction>>,
}

impl Instance {
    pub fn from_kernel(f: &KernelMatrix) -> Self {
        Self {
            mu: Some(f.product().factors().to_vec()),
            f: NestedArray::from_flat(&f.shape(), f.entries()),
            q: None,
            p: None,
            theta: None,
            partitions: None,
            gauges: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: Self =
            serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("instance JSON: {e}")))?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("instances serialize")
    }

    /// Checks that spaces, entries, exponents, partitions and gauges agree.
    pub fn validate(&self) -> Result<()> {
        let (shape, _) = self.f.flatten()?;
        let spaces = self.spaces()?;
        let arity = spaces.len();
        if let Some(p) = &self.p {
            if p.len() != arity {
                return Err(Error::DimensionMismatch {
                    expected: arity,
                    got: p.len(),
                });
            }
        }
        if let Some(g) = &self.gauges {
            if g.len() != arity {
                return Err(Error::DimensionMismatch {
                    expected: arity,
                    got: g.len(),
                });
            }
        }
        if let Some(parts) = &self.partitions {
            let atoms: usize = shape.iter().product();
            if let Some(p) = parts.iter().find(|p| p.atoms() != atoms) {
                return Err(Error::InvalidPartition(format!(
                    "partition covers {} atoms, instance has {atoms}",
                    p.atoms()
                )));
            }
        }
        if let Some(q) = self.q {
            if !(q.is_finite() && q > 0.0) {
                return Err(Error::InvalidExponent(format!(
                    "q must be finite and positive, got {q}"
                )));
            }
        }
        Ok(())
    }

    /// The measure spaces, counting measures where `mu` is absent.
    pub fn spaces(&self) -> Result<Vec<FiniteMeasureSpace>> {
        let (shape, _) = self.f.flatten()?;
        match &self.mu {
            None => Ok(shape.iter().map(|&n| FiniteMeasureSpace::counting(n)).collect()),
            Some(mu) => {
                if mu.len() != shape.len() {
                    return Err(Error::DimensionMismatch {
                        expected: shape.len(),
                        got: mu.len(),
                    });
                }
                for (s, &n) in mu.iter().zip(&shape) {
                    if s.len() != n {
                        return Err(Error::DimensionMismatch {
                            expected: n,
                            got: s.len(),
                        });
                    }
                }
                Ok(mu.clone())
            }
        }
    }

    pub fn kernel(&self) -> Result<KernelMatrix> {
        let (_, data) = self.f.flatten()?;
        KernelMatrix::new(ProductSpace::new(self.spaces()?)?, data)
    }

    /// The flattened entries as a function on the product of all spaces.
    pub fn scalar(&self) -> Result<ScalarFunction> {
        let masses = ProductSpace::new(self.spaces()?)?.cell_masses();
        let (_, data) = self.f.flatten()?;
        ScalarFunction::new(FiniteMeasureSpace::new(masses)?, data)
    }

    pub fn q(&self) -> f64 {
        self.q.unwrap_or(1.0)
    }

    /// Exponents, defaulting to `∞` on every axis.
    pub fn exponents(&self) -> Result<Vec<Exponent>> {
        let arity = self.spaces()?.len();
        Ok(self.p.clone().unwrap_or_else(|| vec![Exponent::INFINITY; arity]))
    }

    pub fn gauges(&self) -> Result<Vec<GaugeFunction>> {
        match &self.gauges {
            Some(g) => Ok(g.clone()),
            None => self.exponents()?.into_iter().map(GaugeFunction::for_exponent).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let text = r#"{"mu":[{"weights":[1,1]},{"weights":[1,2]}],"f":[[1,0],[0,1]],"q":1,"p":[2,"inf"],"theta":0.5}"#;
        let inst = Instance::from_json(text).unwrap();
        let k = inst.kernel().unwrap();
        assert_eq!(k.shape(), vec![2, 2]);
        assert_eq!(k.space(1).weights(), &[1.0, 2.0]);
        assert!(inst.exponents().unwrap()[1].is_infinite());
        let again = Instance::from_json(&inst.to_json()).unwrap();
        assert_eq!(again, inst);
    }

    #[test]
    fn defaults_and_errors() {
        let inst = Instance::from_json(r#"{"f":[[1,2,3]]}"#).unwrap();
        assert_eq!(inst.kernel().unwrap().space(1).len(), 3);
        assert_eq!(inst.q(), 1.0);
        assert!(Instance::from_json(r#"{"f":[[1,2],[3]]}"#).is_err());
        assert!(Instance::from_json(r#"{"f":[[1,2]],"mu":[{"weights":[1]}]}"#).is_err());
        assert!(Instance::from_json(r#"{"f":[[1,2]],"p":[2]}"#).is_err());
        assert!(Instance::from_json(r#"{"f":[[1,2]],"extra":1}"#).is_err());
        assert!(Instance::from_json("{").is_err());
        let c = Instance::from_json(r#"{"f":[4,0,0,4],"partitions":[[[0,1],[2,3]],[[0,2],[1,3]]]}"#).unwrap();
        assert_eq!(c.scalar().unwrap().values(), &[4.0, 0.0, 0.0, 4.0]);
        assert!(Instance::from_json(r#"{"f":[4,0,0],"partitions":[[[0,1],[2,3]]]}"#).is_err());
    }

    #[test]
    fn three_axes() {
        let k = KernelMatrix::new(
            ProductSpace::new(vec![FiniteMeasureSpace::counting(2); 3]).unwrap(),
            (0..8).map(f64::from).collect(),
        )
        .unwrap();
        let inst = Instance::from_kernel(&k);
        assert_eq!(Instance::from_json(&inst.to_json()).unwrap().kernel().unwrap(), k);
    }
}
