//! Positive kernel operators `g ↦ ∫|f(·,y)| g(y) dμ_2(y)` and their norms
//! from Lorentz spaces into weak-type spaces.
//!
//! For a positive operator, boundedness from `L_{r,1}` is decided on
//! indicators, and `[1_E]_{r,1} = μ(E)^{1/r}`, so the operator norm into
//! `L_{s,∞}` with the bracket norm is the supremum over `E_2` of
//! `[T 1_{E_2}]_{s,∞} / μ_2(E_2)^{1/r}`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lorentz::{bracket_norm, weak_quasinorm, Exponent, ScalarFunction};
use crate::measure::check_enumerable;
use crate::rectangle::{mixed_weak_norm, rect_product_sup, KernelMatrix};

/// `T_{|f|}`, mapping functions on the second axis to functions on the first.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelOperator {
    kernel: KernelMatrix,
}

impl KernelOperator {
    pub fn new(kernel: KernelMatrix) -> Result<Self> {
        if kernel.arity() != 2 {
            return Err(Error::InvalidParameter(
                "kernel operators need a two-axis kernel".into(),
            ));
        }
        Ok(Self { kernel })
    }

    pub fn kernel(&self) -> &KernelMatrix {
        &self.kernel
    }

    pub fn apply(&self, g: &ScalarFunction) -> Result<ScalarFunction> {
        apply_kernel(self, g)
    }
}

/// `(Tg)(x) = Σ_y |f(x,y)| g(y) μ_2(y)`.
pub fn apply_kernel(op: &KernelOperator, g: &ScalarFunction) -> Result<ScalarFunction> {
    let f = &op.kernel;
    let (rows, cols) = (f.space(0), f.space(1));
    if g.space() != cols {
        return Err(Error::DimensionMismatch {
            expected: cols.len(),
            got: g.space().len(),
        });
    }
    let values = (0..rows.len())
        .map(|i| {
            f.row(i)
                .iter()
                .zip(g.values())
                .enumerate()
                .map(|(j, (k, v))| k.abs() * v * cols.weight(j))
                .sum()
        })
        .collect();
    ScalarFunction::new(rows.clone(), values)
}

/// `p` with `1/p = x`; `x = 0` gives `p = ∞`.
pub fn exponent_from_recip(x: f64) -> Result<Exponent> {
    if x == 0.0 {
        Ok(Exponent::INFINITY)
    } else {
        Exponent::new(1.0 / x)
    }
}

/// Source and target exponents `(r, s)` with `1/r = θ/p_2'` and
/// `1/s' = (1−θ)/p_1'`, under which the closed-form interpolation norm is
/// the operator norm `L_{r,1}(μ_2) → L_{s,∞}(μ_1)`.
pub fn operator_exponents(theta: f64, p1: Exponent, p2: Exponent) -> Result<(Exponent, Exponent)> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter(format!("θ must lie in (0,1), got {theta}")));
    }
    let r = exponent_from_recip(theta * p2.conjugate_recip())?;
    let s = exponent_from_recip(1.0 - (1.0 - theta) * p1.conjugate_recip())?;
    Ok((r, s))
}

fn check_exponents(r: Exponent, s: Exponent) -> Result<()> {
    r.require_at_least_one("source exponent")?;
    s.require_at_least_one("target exponent")
}

fn indicator_sup(f: &KernelMatrix, r: Exponent, target: impl Fn(&ScalarFunction) -> Result<f64>) -> Result<f64> {
    let op = KernelOperator::new(f.clone())?;
    let cols = f.space(1);
    check_enumerable(cols.len())?;
    let mut best: f64 = 0.0;
    for mask in cols.enumerate_subsets()?.filter(|m| !m.is_empty()) {
        let indicator = ScalarFunction::new(cols.clone(), mask.indicator())?;
        let image = apply_kernel(&op, &indicator)?;
        let measure = cols.subset_measure(mask)?;
        best = best.max(target(&image)? / measure.powf(r.recip()));
    }
    Ok(best)
}

/// `‖T_{|f|}: L_{r,1}(μ_2) → L_{s,∞}(μ_1)‖` with the bracket norm on the
/// target. `r = ∞` reads the source as `L_∞`; `s = 1` makes the target `L_1`.
pub fn kernel_opnorm(f: &KernelMatrix, r: Exponent, s: Exponent) -> Result<f64> {
    check_exponents(r, s)?;
    indicator_sup(f, r, |image| bracket_norm(image, s))
}

/// [`kernel_opnorm`] with the weak quasinorm `sup_v v μ{|h| ≥ v}^{1/s}` on
/// the target. It is at most the bracket version and at least `1/s'` of it.
pub fn kernel_opnorm_quasi(f: &KernelMatrix, r: Exponent, s: Exponent) -> Result<f64> {
    check_exponents(r, s)?;
    indicator_sup(f, r, |image| Ok(weak_quasinorm(image, s)))
}

/// The same norm written as `sup_{E_1,E_2} ∬_{E_1×E_2}|f| / (μ_1(E_1)^{1/s'} μ_2(E_2)^{1/r})`.
pub fn double_rectangle_norm(f: &KernelMatrix, r: Exponent, s: Exponent) -> Result<f64> {
    check_exponents(r, s)?;
    Ok(rect_product_sup(f, 1.0, &[s.conjugate_recip(), r.recip()])?.value)
}

/// The operator norm of a signed kernel in the regular-operator sense,
/// which is the norm of its absolute kernel.
pub fn regular_norm(f: &KernelMatrix, r: Exponent, s: Exponent) -> Result<f64> {
    kernel_opnorm(&f.abs(), r, s)
}

/// Both sides of the two endpoint identities
/// `‖T: L_∞(μ_2) → L_{p_1,∞}(μ_1)‖ = ‖f‖_{L_{p_1,∞}(μ_1; L_1(μ_2))}` and
/// `‖T: L_{p_2',1}(μ_2) → L_1(μ_1)‖ = ‖f‖_{L_{p_2,∞}(μ_2; L_1(μ_1))}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndpointReport {
    pub first_operator: f64,
    pub first_mixed: f64,
    pub second_operator: f64,
    pub second_mixed: f64,
    /// Second identity with the source exponent `p_1'` in place of `p_2'`.
    pub swapped_operator: f64,
    pub max_error: f64,
    pub pass: bool,
    /// Whether the swapped form also matched to tolerance.
    pub swapped_matches: bool,
}

pub fn endpoint_identities(f: &KernelMatrix, p1: Exponent, p2: Exponent) -> Result<EndpointReport> {
    for p in [p1, p2] {
        if p.value() <= 1.0 {
            return Err(Error::InvalidExponent(format!(
                "endpoint identities need p > 1, got {p}"
            )));
        }
    }
    let first_operator = kernel_opnorm(f, Exponent::INFINITY, p1)?;
    let first_mixed = mixed_weak_norm(f, 0, p1, 1.0)?;
    let one = Exponent::new(1.0)?;
    let second_operator = kernel_opnorm(f, p2.conjugate()?, one)?;
    let second_mixed = mixed_weak_norm(f, 1, p2, 1.0)?;
    let swapped_operator = kernel_opnorm(f, p1.conjugate()?, one)?;
    let err = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
    let max_error = err(first_operator, first_mixed).max(err(second_operator, second_mixed));
    Ok(EndpointReport {
        first_operator,
        first_mixed,
        second_operator,
        second_mixed,
        swapped_operator,
        max_error,
        pass: max_error <= 1e-9,
        swapped_matches: err(swapped_operator, second_mixed) <= 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::closed_form_norm;
    use crate::measure::FiniteMeasureSpace;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(p: f64) -> Exponent {
        Exponent::new(p).unwrap()
    }

    fn random_kernel(rng: &mut ChaCha8Rng) -> KernelMatrix {
        let (n1, n2) = (rng.random_range(1..5), rng.random_range(1..5));
        let a = FiniteMeasureSpace::new((0..n1).map(|_| rng.random_range(0.2..2.0)).collect()).unwrap();
        let b = FiniteMeasureSpace::new((0..n2).map(|_| rng.random_range(0.2..2.0)).collect()).unwrap();
        let rows: Vec<Vec<f64>> = (0..n1)
            .map(|_| (0..n2).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        KernelMatrix::from_rows(a, b, &rows).unwrap()
    }

    #[test]
    fn apply_examples() {
        let id = KernelOperator::new(KernelMatrix::identity(3)).unwrap();
        let g = ScalarFunction::new(FiniteMeasureSpace::counting(3), vec![1.0, -2.0, 3.0]).unwrap();
        assert_eq!(apply_kernel(&id, &g).unwrap().values(), g.values());
        let ones = KernelOperator::new(KernelMatrix::counting(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap()).unwrap();
        let g = ScalarFunction::new(FiniteMeasureSpace::counting(2), vec![1.0, 1.0]).unwrap();
        assert_eq!(apply_kernel(&ones, &g).unwrap().values(), &[2.0, 2.0]);
        let wrong = ScalarFunction::zeros(FiniteMeasureSpace::counting(3));
        assert!(apply_kernel(&ones, &wrong).is_err());
    }

    #[test]
    fn identity_norm() {
        for n in 1..6 {
            let v = kernel_opnorm(&KernelMatrix::identity(n), e(2.0), e(2.0)).unwrap();
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..40 {
            let f = random_kernel(&mut rng);
            let (r, s) = (e(rng.random_range(1.1..6.0)), e(rng.random_range(1.1..6.0)));
            let a = kernel_opnorm(&f, r, s).unwrap();
            let b = double_rectangle_norm(&f, r, s).unwrap();
            assert!((a - b).abs() < 1e-12 * a.max(1.0));
            let quasi = kernel_opnorm_quasi(&f, r, s).unwrap();
            assert!(quasi <= a * (1.0 + 1e-12));
            assert!(a <= s.conjugate().unwrap().value() * quasi * (1.0 + 1e-12));
            assert_eq!(regular_norm(&f, r, s).unwrap(), a);
        }
    }

    #[test]
    fn closed_form_is_an_operator_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ps = [1.5, 2.0, 4.0, f64::INFINITY];
        for _ in 0..40 {
            let f = random_kernel(&mut rng);
            let (p1, p2) = (e(ps[rng.random_range(0..4)]), e(ps[rng.random_range(0..4)]));
            let theta = rng.random_range(0.05..0.95);
            let (r, s) = operator_exponents(theta, p1, p2).unwrap();
            let cf = closed_form_norm(&f, 1.0, theta, p1, p2).unwrap().value;
            let op = kernel_opnorm(&f, r, s).unwrap();
            assert!((cf - op).abs() < 1e-9 * cf.max(1.0), "{cf} vs {op}");
        }
    }

    #[test]
    fn endpoints() {
        let report = endpoint_identities(&KernelMatrix::identity(2), e(2.0), e(2.0)).unwrap();
        assert!((report.first_operator - 2f64.sqrt()).abs() < 1e-12);
        assert!((report.first_mixed - 2f64.sqrt()).abs() < 1e-12);
        assert!(report.pass);
        let zero = KernelMatrix::counting(&[vec![0.0, 0.0]]).unwrap();
        let report = endpoint_identities(&zero, e(3.0), e(1.5)).unwrap();
        assert_eq!(report.max_error, 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut swapped_failures = 0;
        for _ in 0..40 {
            let f = random_kernel(&mut rng);
            let (p1, p2) = (e(rng.random_range(1.2..6.0)), e(rng.random_range(1.2..6.0)));
            let report = endpoint_identities(&f, p1, p2).unwrap();
            assert!(report.pass, "{report:?}");
            swapped_failures += usize::from(!report.swapped_matches);
        }
        assert!(swapped_failures > 0);
    }

    #[test]
    fn sign_flips_do_not_matter() {
        let f = KernelMatrix::counting(&[vec![1.0, -2.0], vec![-0.5, 3.0]]).unwrap();
        let a = regular_norm(&f, e(3.0), e(2.0)).unwrap();
        let b = regular_norm(&f.abs(), e(3.0), e(2.0)).unwrap();
        assert_eq!(a, b);
    }
}
