//! The `(X_1, X_2)_{θ,∞}` norm of the mixed weak-type couple and its
//! closed-form rectangle counterpart.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kfun::k_exact;
use crate::lorentz::Exponent;
use crate::measure::{check_enumerable, subset_sums};
use crate::rectangle::{rect_product_sup, ExponentConfig, KernelMatrix, RectMax};

/// The points `t = 2^k` for `k` in `lo..=hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TGrid {
    pub lo: i32,
    pub hi: i32,
}

impl TGrid {
    pub fn new(lo: i32, hi: i32) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidParameter(format!("empty t-grid {lo}..{hi}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn points(&self) -> Vec<f64> {
        (self.lo..=self.hi).map(|k| 2f64.powi(k)).collect()
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl Default for TGrid {
    fn default() -> Self {
        Self { lo: -20, hi: 20 }
    }
}

impl fmt::Display for TGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pow2:{}..{}", self.lo, self.hi)
    }
}

/// Parses `pow2:LO..HI`.
impl FromStr for TGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("expected a grid like pow2:-10..10, got {s:?}"));
        let range = s.trim().strip_prefix("pow2:").ok_or_else(bad)?;
        let (lo, hi) = range.split_once("..").ok_or_else(bad)?;
        let lo = lo.trim().parse().map_err(|_| bad())?;
        let hi = hi.trim().parse().map_err(|_| bad())?;
        Self::new(lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaConfig {
    theta: f64,
    pub grid: TGrid,
}

impl ThetaConfig {
    pub fn new(theta: f64, grid: TGrid) -> Result<Self> {
        check_theta(theta)?;
        Ok(Self { theta, grid })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `θ^θ (1−θ)^{1−θ}`.
    pub fn envelope_constant(&self) -> f64 {
        envelope_constant(self.theta)
    }

    /// Factor by which the continuous supremum can exceed the grid maximum
    /// inside the grid range: `2^{max(θ, 1−θ)}`.
    pub fn grid_factor(&self) -> f64 {
        2f64.powf(self.theta.max(1.0 - self.theta))
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter(format!("θ must lie in (0,1), got {theta}")));
    }
    Ok(())
}

pub fn envelope_constant(theta: f64) -> f64 {
    theta.powf(theta) * (1.0 - theta).powf(1.0 - theta)
}

/// `inf_{t>0} (1−θ) a_0 t^θ + θ a_1 t^{θ−1}`, evaluated at the minimizer
/// `t = a_1/a_0`. The value is `a_0^{1−θ} a_1^θ`.
pub fn geometric_identity_inf(a0: f64, a1: f64, theta: f64) -> Result<f64> {
    if !(a0 > 0.0 && a1 > 0.0 && a0.is_finite() && a1.is_finite()) {
        return Err(Error::InvalidParameter(format!("need a0, a1 > 0, got {a0}, {a1}")));
    }
    check_theta(theta)?;
    let t = a1 / a0;
    Ok((1.0 - theta) * a0 * t.powf(theta) + theta * a1 * t.powf(theta - 1.0))
}

/// `sup (∫_{E_1×E_2}|f|^q)^{1/q} / (μ_1(E_1)^{(1−θ)α_1} μ_2(E_2)^{θα_2})`.
pub fn closed_form_norm(f: &KernelMatrix, q: f64, theta: f64, p1: Exponent, p2: Exponent) -> Result<RectMax> {
    check_theta(theta)?;
    let alphas = ExponentConfig::new(q, vec![p1, p2])?.alphas();
    rect_product_sup(f, q, &[(1.0 - theta) * alphas[0], theta * alphas[1]])
}

/// `sup_{t>0} t^{−θ} k_t(f)`, optimizing `t` separately for every rectangle.
///
/// For a rectangle with mass `N` and gauges `a = μ_1(E_1)^{α_1}`,
/// `b = μ_2(E_2)^{α_2}` the best `t` gives `N / inf_t (a t^θ + b t^{θ−1})`.
pub fn k_envelope(f: &KernelMatrix, q: f64, theta: f64, p1: Exponent, p2: Exponent) -> Result<f64> {
    check_theta(theta)?;
    if f.arity() != 2 {
        return Err(Error::InvalidParameter("the envelope is defined for two axes".into()));
    }
    let alphas = ExponentConfig::new(q, vec![p1, p2])?.alphas();
    let (s1, s2) = (f.space(0), f.space(1));
    let (n1, n2) = (s1.len(), s2.len());
    if n1 == 0 || n2 == 0 {
        return Ok(0.0);
    }
    check_enumerable(n1)?;
    check_enumerable(n2)?;
    let masses = f.cell_masses();
    let m1 = s1.subset_measure_table();
    let m2 = s2.subset_measure_table();
    let values: Vec<f64> = f
        .entries()
        .iter()
        .zip(&masses)
        .map(|(v, m)| v.abs().powf(q) * m)
        .collect();
    let best = (1u64..1 << n1)
        .into_par_iter()
        .map(|rows| -> Result<f64> {
            let mut col_mass = vec![0.0; n2];
            for i in (0..n1).filter(|i| rows >> i & 1 == 1) {
                for (j, c) in col_mass.iter_mut().enumerate() {
                    *c += values[i * n2 + j];
                }
            }
            let sums = subset_sums(&col_mass);
            let a = m1[rows as usize].powf(alphas[0]);
            let mut best: f64 = 0.0;
            for (cols, &mass) in sums.iter().enumerate().skip(1) {
                if mass == 0.0 {
                    continue;
                }
                let b = m2[cols].powf(alphas[1]);
                let inf = geometric_identity_inf(a / (1.0 - theta), b / theta, theta)?;
                best = best.max(mass.powf(1.0 / q) / inf);
            }
            Ok(best)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(best.into_iter().fold(0.0, f64::max))
}

/// `max_t t^{−θ} K_t(f)` over a pow2 grid, with the decomposition LP at
/// every point (`q = 1`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridNorm {
    pub value: f64,
    pub argmax_t: f64,
    /// `(t, K_t)` at every grid point.
    pub k_values: Vec<(f64, f64)>,
    /// The continuous supremum over `[2^lo, 2^hi]` is at most this.
    pub upper: f64,
}

pub fn theta_norm_via_grid(f: &KernelMatrix, config: &ThetaConfig, p1: Exponent, p2: Exponent) -> Result<GridNorm> {
    let theta = config.theta();
    let k_values = config
        .grid
        .points()
        .into_par_iter()
        .map(|t| Ok((t, k_exact(f, t, p1, p2)?.value())))
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let (mut value, mut argmax_t) = (0.0, k_values[0].0);
    for &(t, k) in &k_values {
        let v = t.powf(-theta) * k;
        if v > value {
            value = v;
            argmax_t = t;
        }
    }
    Ok(GridNorm {
        value,
        argmax_t,
        k_values,
        upper: value * config.grid_factor(),
    })
}

/// Grid value, closed form and envelope side by side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterpReport {
    pub theta: f64,
    pub grid: GridNorm,
    pub closed_form: RectMax,
    /// `θ^θ(1−θ)^{1−θ}` times the closed form; equals `sup_t t^{−θ}k_t`.
    pub envelope: f64,
    /// `grid.value / closed_form`.
    pub ratio: f64,
    /// Whether `envelope / grid_factor ≤ grid.value ≤ 2·envelope`.
    pub within_bracket: bool,
}

pub fn interp_report(f: &KernelMatrix, config: &ThetaConfig, p1: Exponent, p2: Exponent) -> Result<InterpReport> {
    let theta = config.theta();
    let grid = theta_norm_via_grid(f, config, p1, p2)?;
    let closed_form = closed_form_norm(f, 1.0, theta, p1, p2)?;
    let envelope = config.envelope_constant() * closed_form.value;
    let tol = 1e-9 * (1.0 + envelope);
    let within_bracket = envelope / config.grid_factor() <= grid.value + tol && grid.value <= 2.0 * envelope + tol;
    Ok(InterpReport {
        theta,
        ratio: crate::kfun::ratio(grid.value, closed_form.value),
        grid,
        closed_form,
        envelope,
        within_bracket,
    })
}
