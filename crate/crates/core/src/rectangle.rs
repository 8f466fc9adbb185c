//! Kernels on product spaces and rectangle-supremum functionals.
//!
//! The central quantity is
//!
//! ```text
//! sup_{E_1,…,E_n} (∫_{E_1×···×E_n} |f|^q dμ)^{1/q} / Σ_j s_j^{-1} Φ_j(μ_j(E_j))
//! ```
//!
//! with `Φ_j(x) = x^{α_j}` for [`rect_sup`] and a concave gauge for
//! [`gauge_rect_sup`]. Evaluation is exact: every tuple of nonempty subsets
//! is visited, except on two axes where one axis has equal weights, where
//! the rows of that axis are chosen by a top-`k` scan for each subset of
//! the other axis.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lorentz::{descending_order, sup_ratio, Exponent, SubsetSearch};
use crate::measure::{check_enumerable, FiniteMeasureSpace, ProductSpace, SubsetMask};

/// A real tensor over a product of finite measure spaces, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    product: ProductSpace,
    entries: Vec<f64>,
}

impl KernelMatrix {
    pub fn new(product: ProductSpace, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != product.num_cells() {
            return Err(Error::DimensionMismatch {
                expected: product.num_cells(),
                got: entries.len(),
            });
        }
        if let Some(v) = entries.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite kernel entry {v}")));
        }
        Ok(Self { product, entries })
    }

    /// A two-axis kernel from its rows.
    pub fn from_rows(
        rows_space: FiniteMeasureSpace,
        cols_space: FiniteMeasureSpace,
        rows: &[Vec<f64>],
    ) -> Result<Self> {
        if rows.len() != rows_space.len() {
            return Err(Error::DimensionMismatch {
                expected: rows_space.len(),
                got: rows.len(),
            });
        }
        let mut entries = Vec::with_capacity(rows_space.len() * cols_space.len());
        for row in rows {
            if row.len() != cols_space.len() {
                return Err(Error::DimensionMismatch {
                    expected: cols_space.len(),
                    got: row.len(),
                });
            }
            entries.extend_from_slice(row);
        }
        Self::new(ProductSpace::new(vec![rows_space, cols_space])?, entries)
    }

    /// Two-axis kernel on counting measures.
    pub fn counting(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        Self::from_rows(
            FiniteMeasureSpace::counting(rows.len()),
            FiniteMeasureSpace::counting(cols),
            rows,
        )
    }

    pub fn identity(n: usize) -> Self {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::counting(&rows).expect("square identity")
    }

    pub fn zeros(product: ProductSpace) -> Self {
        let n = product.num_cells();
        Self {
            product,
            entries: vec![0.0; n],
        }
    }

    pub fn product(&self) -> &ProductSpace {
        &self.product
    }

    pub fn space(&self, axis: usize) -> &FiniteMeasureSpace {
        self.product.factor(axis)
    }

    pub fn arity(&self) -> usize {
        self.product.arity()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.product.shape()
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        let strides = self.product.strides();
        self.entries[index.iter().zip(&strides).map(|(i, s)| i * s).sum::<usize>()]
    }

    /// Row `i` of a two-axis kernel.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.space(1).len();
        &self.entries[i * cols..(i + 1) * cols]
    }

    pub fn map(&self, op: impl Fn(f64) -> f64) -> Self {
        Self {
            product: self.product.clone(),
            entries: self.entries.iter().map(|&v| op(v)).collect(),
        }
    }

    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    pub fn with_entries(&self, entries: Vec<f64>) -> Result<Self> {
        Self::new(self.product.clone(), entries)
    }

    /// Reorders axes so that new axis `k` is old axis `perm[k]`.
    pub fn permute_axes(&self, perm: &[usize]) -> Result<Self> {
        let n = self.arity();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&a| a >= n || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::InvalidParameter(format!(
                "{perm:?} is not a permutation of 0..{n}"
            )));
        }
        let factors = perm.iter().map(|&a| self.space(a).clone()).collect();
        let product = ProductSpace::new(factors)?;
        let old_strides = self.product.strides();
        let entries = (0..product.num_cells())
            .map(|flat| {
                let idx = product.unravel(flat);
                let old: usize = idx.iter().zip(perm).map(|(i, &a)| i * old_strides[a]).sum();
                self.entries[old]
            })
            .collect();
        Ok(Self { product, entries })
    }

    /// Swaps the two axes of a two-axis kernel.
    pub fn transpose(&self) -> Result<Self> {
        if self.arity() != 2 {
            return Err(Error::InvalidParameter("transpose needs exactly two axes".into()));
        }
        self.permute_axes(&[1, 0])
    }

    pub fn cell_masses(&self) -> Vec<f64> {
        self.product.cell_masses()
    }

    /// `F(i) = Σ |f|^q dμ̂` over the cells whose coordinate on `axis` is `i`,
    /// integrating out every other axis.
    pub fn fiber_masses(&self, axis: usize, q: f64) -> Vec<f64> {
        let strides = self.product.strides();
        let n = self.space(axis).len();
        let masses = self.cell_masses();
        let mut fibers = vec![0.0; n];
        for (flat, (&v, &m)) in self.entries.iter().zip(&masses).enumerate() {
            if v != 0.0 {
                let i = flat / strides[axis] % n;
                fibers[i] += v.abs().powf(q) * m / self.space(axis).weight(i);
            }
        }
        fibers
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&v| v == 0.0)
    }
}

/// `(q, p_1, …, p_n)` with `0 < q < p_j ≤ ∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentConfig {
    q: f64,
    p: Vec<Exponent>,
}

impl ExponentConfig {
    pub fn new(q: f64, p: Vec<Exponent>) -> Result<Self> {
        if !(q.is_finite() && q > 0.0) {
            return Err(Error::InvalidExponent(format!(
                "q must be finite and positive, got {q}"
            )));
        }
        if let Some(pj) = p.iter().find(|pj| pj.value() <= q) {
            return Err(Error::InvalidExponent(format!("need q < p_j, got q = {q}, p_j = {pj}")));
        }
        Ok(Self { q, p })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn p(&self) -> &[Exponent] {
        &self.p
    }

    /// `α_j = 1/q − 1/p_j`.
    pub fn alphas(&self) -> Vec<f64> {
        self.p.iter().map(|p| 1.0 / self.q - p.recip()).collect()
    }
}

/// An increasing concave gauge `Φ` with `Φ(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaugeRepr", into = "GaugeRepr")]
pub enum GaugeFunction {
    /// `Φ(x) = x^γ`, `γ ∈ (0, 1]`.
    Power(f64),
    /// Linear interpolation through `(0,0) = (x_0,y_0), (x_1,y_1), …`,
    /// continued past the last point with the last slope.
    PiecewiseLinear(Vec<(f64, f64)>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GaugeRepr {
    Power { power: f64 },
    Breakpoints { breakpoints: Vec<(f64, f64)> },
}

impl TryFrom<GaugeRepr> for GaugeFunction {
    type Error = Error;

    fn try_from(r: GaugeRepr) -> Result<Self> {
        match r {
            GaugeRepr::Power { power } => GaugeFunction::power(power),
            GaugeRepr::Breakpoints { breakpoints } => GaugeFunction::piecewise_linear(breakpoints),
        }
    }
}

impl From<GaugeFunction> for GaugeRepr {
    fn from(g: GaugeFunction) -> Self {
        match g {
            GaugeFunction::Power(power) => GaugeRepr::Power { power },
            GaugeFunction::PiecewiseLinear(breakpoints) => GaugeRepr::Breakpoints { breakpoints },
        }
    }
}

impl GaugeFunction {
    pub fn power(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidGauge(format!(
                "power gauge needs γ in (0,1], got {gamma}"
            )));
        }
        Ok(GaugeFunction::Power(gamma))
    }

    /// `x ↦ x^{1/p'}` for `p ∈ (1, ∞]`.
    pub fn for_exponent(p: Exponent) -> Result<Self> {
        if p.value() <= 1.0 {
            return Err(Error::InvalidExponent(format!("gauge exponent needs p > 1, got {p}")));
        }
        Self::power(p.conjugate_recip())
    }

    pub fn identity() -> Self {
        GaugeFunction::Power(1.0)
    }

    /// Checks `x_0 = y_0 = 0`, strictly increasing `x`, nonnegative and
    /// nonincreasing slopes, and a positive first slope.
    pub fn piecewise_linear(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGauge("need at least two breakpoints".into()));
        }
        if points[0] != (0.0, 0.0) {
            return Err(Error::InvalidGauge("first breakpoint must be (0, 0)".into()));
        }
        let mut last_slope = f64::INFINITY;
        for (k, w) in points.windows(2).enumerate() {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if !(x1.is_finite() && y1.is_finite()) || x1 <= x0 {
                return Err(Error::InvalidGauge(format!(
                    "breakpoint x values must increase (at {})",
                    k + 1
                )));
            }
            let slope = (y1 - y0) / (x1 - x0);
            if slope < 0.0 {
                return Err(Error::InvalidGauge("gauge must be nondecreasing".into()));
            }
            if slope > last_slope * (1.0 + 1e-12) {
                return Err(Error::InvalidGauge("gauge must be concave".into()));
            }
            if k == 0 && slope <= 0.0 {
                return Err(Error::InvalidGauge("first slope must be positive".into()));
            }
            last_slope = slope;
        }
        Ok(GaugeFunction::PiecewiseLinear(points))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            GaugeFunction::Power(g) => {
                if *g == 1.0 {
                    x
                } else {
                    x.powf(*g)
                }
            }
            GaugeFunction::PiecewiseLinear(pts) => {
                let k = pts.partition_point(|&(px, _)| px <= x).clamp(1, pts.len() - 1);
                let (x0, y0) = pts[k - 1];
                let (x1, y1) = pts[k];
                y0 + (y1 - y0) / (x1 - x0) * (x - x0)
            }
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, GaugeFunction::Power(g) if *g == 1.0)
    }
}

/// `sup_E (∫_{E×rest} |f|^q dμ)^{1/q} / μ_axis(E)^{1/q − 1/p}`.
///
/// For `q = 1` this is the bracket norm of the fiber `L_1` norms, i.e. the
/// `L_{p,∞}(μ_axis; L_1)` norm. For other `q` it is the `1/q`-th power of
/// the `q = 1` norm of `|f|^q` at exponent `p/q`.
pub fn mixed_weak_norm(f: &KernelMatrix, axis: usize, p: Exponent, q: f64) -> Result<f64> {
    if !(q > 0.0 && q.is_finite()) || p.value() < q {
        return Err(Error::InvalidExponent(format!(
            "mixed norm needs 0 < q <= p, got q = {q}, p = {p}"
        )));
    }
    check_axis(f, axis)?;
    let fibers = f.fiber_masses(axis, q);
    let gamma = 1.0 - q * p.recip();
    let space = f.space(axis);
    let value = if gamma == 1.0 {
        fibers.iter().fold(0.0, |m: f64, &v| m.max(v))
    } else {
        sup_ratio(space, &fibers, &|m| m.powf(gamma), SubsetSearch::Auto)?.value
    };
    Ok(value.max(0.0).powf(1.0 / q))
}

/// `sup_E ∫_{E×rest} |f| dμ / Φ(μ_axis(E))`.
pub fn mixed_gauge_norm(f: &KernelMatrix, axis: usize, gauge: &GaugeFunction) -> Result<f64> {
    check_axis(f, axis)?;
    let fibers = f.fiber_masses(axis, 1.0);
    if gauge.is_linear() {
        return Ok(fibers.iter().fold(0.0, |m: f64, &v| m.max(v)));
    }
    Ok(
        sup_ratio(f.space(axis), &fibers, &|m| gauge.eval(m), SubsetSearch::Auto)?
            .value
            .max(0.0),
    )
}

fn check_axis(f: &KernelMatrix, axis: usize) -> Result<()> {
    if axis >= f.arity() {
        return Err(Error::IndexOutOfRange {
            index: axis,
            atoms: f.arity(),
        });
    }
    Ok(())
}

/// A rectangle maximizer: the value and one subset per axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RectMax {
    pub value: f64,
    pub masks: Vec<SubsetMask>,
}

impl RectMax {
    fn beats(&self, other: &RectMax) -> bool {
        match self.value.total_cmp(&other.value) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => self.masks < other.masks,
        }
    }
}

/// How rectangle suprema are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RectSearch {
    /// The two-axis sorted fast path when an axis has equal weights.
    #[default]
    Auto,
    /// Every tuple of subsets.
    Enumerate,
    /// Force the sorted fast path (two axes, one equal-weight axis).
    SortedFastPath,
}

/// How the per-axis denominator terms combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Combine {
    Sum,
    Product,
}

type Term<'a> = Box<dyn Fn(f64) -> f64 + Sync + 'a>;

/// `sup over tuples of nonempty E_j` of `mass^{1/q} / combine_j term_j(μ_j(E_j))`,
/// where `mass = ∫_{ΠE_j} |f|^q dμ`. Tuples with an empty factor have zero
/// mass and never beat the nonempty ones.
pub(crate) fn rect_search(
    f: &KernelMatrix,
    q: f64,
    terms: &[Term<'_>],
    combine: Combine,
    search: RectSearch,
) -> Result<RectMax> {
    if !(q.is_finite() && q > 0.0) {
        return Err(Error::InvalidExponent(format!(
            "q must be finite and positive, got {q}"
        )));
    }
    let n = f.arity();
    if terms.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: terms.len(),
        });
    }
    let shape = f.shape();
    if shape.contains(&0) {
        return Ok(RectMax {
            value: 0.0,
            masks: shape.iter().map(|&k| SubsetMask::empty(k)).collect::<Result<_>>()?,
        });
    }
    let masses = f.cell_masses();
    let weighted: Vec<f64> = f
        .entries()
        .iter()
        .zip(&masses)
        .map(|(&v, &m)| if v == 0.0 { 0.0 } else { v.abs().powf(q) * m })
        .collect();

    let sorted_axis = match search {
        RectSearch::Enumerate => None,
        RectSearch::Auto | RectSearch::SortedFastPath => {
            let pick = if n == 2 {
                let uniform: Vec<bool> = (0..2).map(|a| f.space(a).uniform_weight().is_some()).collect();
                match (uniform[0], uniform[1]) {
                    (true, true) => Some(if shape[0] >= shape[1] { 0 } else { 1 }),
                    (true, false) => Some(0),
                    (false, true) => Some(1),
                    (false, false) => None,
                }
            } else {
                None
            };
            if pick.is_none() && search == RectSearch::SortedFastPath {
                return Err(Error::InvalidParameter(
                    "sorted fast path needs two axes, one with equal weights".into(),
                ));
            }
            pick
        }
    };

    let ctx = Ctx { q, combine, terms };
    match sorted_axis {
        Some(axis) => sorted_two_axis(f, &weighted, axis, &ctx),
        None => enumerate_all(f, &weighted, &ctx),
    }
}

struct Ctx<'t, 'a> {
    q: f64,
    combine: Combine,
    terms: &'t [Term<'a>],
}

impl Ctx<'_, '_> {
    fn score(&self, mass: f64, denom: f64) -> f64 {
        if mass <= 0.0 {
            return 0.0;
        }
        let num = if self.q == 1.0 { mass } else { mass.powf(1.0 / self.q) };
        num / denom
    }

    fn combine(&self, acc: f64, term: f64) -> f64 {
        match self.combine {
            Combine::Sum => acc + term,
            Combine::Product => acc * term,
        }
    }

    fn unit(&self) -> f64 {
        match self.combine {
            Combine::Sum => 0.0,
            Combine::Product => 1.0,
        }
    }
}

fn term_table(space: &FiniteMeasureSpace, term: &(dyn Fn(f64) -> f64 + Sync)) -> Vec<f64> {
    space.subset_measure_table().into_iter().map(term).collect()
}

fn sorted_two_axis(f: &KernelMatrix, weighted: &[f64], sorted: usize, ctx: &Ctx) -> Result<RectMax> {
    let other = 1 - sorted;
    let shape = f.shape();
    let (ns, no) = (shape[sorted], shape[other]);
    check_enumerable(no)?;
    if ns > crate::measure::MAX_MASK_ATOMS {
        return Err(Error::InvalidParameter("sorted axis too large for subset masks".into()));
    }
    let w = f.space(sorted).uniform_weight().expect("sorted axis has equal weights");
    let sorted_terms: Vec<f64> = (1..=ns).map(|k| (ctx.terms[sorted])(k as f64 * w)).collect();
    let other_terms = term_table(f.space(other), &*ctx.terms[other]);
    let at = |s: usize, o: usize| {
        if sorted == 0 {
            weighted[s * no + o]
        } else {
            weighted[o * ns + s]
        }
    };

    let eval = |mask: usize| -> RectMax {
        let rows: Vec<f64> = (0..ns)
            .map(|s| (0..no).filter(|o| mask >> o & 1 == 1).map(|o| at(s, o)).sum())
            .collect();
        let order = descending_order(&rows);
        let mut mass = 0.0;
        let mut best_k = 1;
        let mut best = f64::NEG_INFINITY;
        for k in 1..=ns {
            mass += rows[order[k - 1]];
            let denom = ctx.combine(ctx.combine(ctx.unit(), sorted_terms[k - 1]), other_terms[mask]);
            let v = ctx.score(mass, denom);
            if v > best {
                best = v;
                best_k = k;
            }
        }
        let sbits = order[..best_k].iter().fold(0u64, |b, &i| b | 1 << i);
        let mut masks = vec![SubsetMask::empty(0).unwrap(); 2];
        masks[sorted] = SubsetMask::new(sbits, ns).expect("in range");
        masks[other] = SubsetMask::new(mask as u64, no).expect("in range");
        RectMax { value: best, masks }
    };

    let count = 1usize << no;
    let best = if count >= 256 {
        (1..count)
            .into_par_iter()
            .map(eval)
            .reduce_with(|a, b| if b.beats(&a) { b } else { a })
    } else {
        (1..count).map(eval).reduce(|a, b| if b.beats(&a) { b } else { a })
    };
    Ok(best.expect("at least one nonempty subset"))
}

fn enumerate_all(f: &KernelMatrix, weighted: &[f64], ctx: &Ctx) -> Result<RectMax> {
    let shape = f.shape();
    for &k in &shape {
        check_enumerable(k)?;
    }
    let tables: Vec<Vec<f64>> = (0..shape.len())
        .map(|a| term_table(f.space(a), &*ctx.terms[a]))
        .collect();
    let run = Enumerator {
        shape: &shape,
        tables: &tables,
        ctx,
    };
    let first = 1usize << shape[0];
    let visit = |m0: usize| -> RectMax {
        let mut scratch = Vec::new();
        let mut masks = vec![0usize; shape.len()];
        masks[0] = m0;
        let reduced = reduce_axis(weighted, shape[0], m0);
        let denom = ctx.combine(ctx.unit(), tables[0][m0]);
        run.descend(&reduced, 1, denom, &mut masks, &mut scratch)
    };
    let best = if shape.len() > 1 && first >= 64 {
        (1..first)
            .into_par_iter()
            .map(visit)
            .reduce_with(|a, b| if b.beats(&a) { b } else { a })
    } else {
        (1..first).map(visit).reduce(|a, b| if b.beats(&a) { b } else { a })
    };
    Ok(best.expect("at least one nonempty subset"))
}

/// Sums the leading axis of a row-major tensor over the rows in `mask`.
fn reduce_axis(tensor: &[f64], lead: usize, mask: usize) -> Vec<f64> {
    let rest = tensor.len() / lead;
    let mut out = vec![0.0; rest];
    for i in (0..lead).filter(|i| mask >> i & 1 == 1) {
        for (o, &v) in out.iter_mut().zip(&tensor[i * rest..(i + 1) * rest]) {
            *o += v;
        }
    }
    out
}

struct Enumerator<'r, 't, 'a> {
    shape: &'r [usize],
    tables: &'r [Vec<f64>],
    ctx: &'r Ctx<'t, 'a>,
}

impl Enumerator<'_, '_, '_> {
    /// `tensor` is the remaining tensor over axes `axis..`, already summed
    /// over the chosen subsets of the earlier axes.
    fn descend(
        &self,
        tensor: &[f64],
        axis: usize,
        denom: f64,
        masks: &mut Vec<usize>,
        scratch: &mut Vec<f64>,
    ) -> RectMax {
        let n = self.shape.len();
        if axis == n {
            // single-axis kernel: `tensor` is the scalar mass
            return RectMax {
                value: self.ctx.score(tensor[0], denom),
                masks: self.to_masks(masks),
            };
        }
        let k = self.shape[axis];
        let count = 1usize << k;
        if axis == n - 1 {
            scratch.clear();
            scratch.resize(count, 0.0);
            let mut best = (f64::NEG_INFINITY, 0usize);
            for m in 1..count {
                let low = m.trailing_zeros() as usize;
                scratch[m] = scratch[m & (m - 1)] + tensor[low];
                let v = self
                    .ctx
                    .score(scratch[m], self.ctx.combine(denom, self.tables[axis][m]));
                if v > best.0 {
                    best = (v, m);
                }
            }
            masks[axis] = best.1;
            return RectMax {
                value: best.0,
                masks: self.to_masks(masks),
            };
        }
        let mut best: Option<RectMax> = None;
        for m in 1..count {
            let reduced = reduce_axis(tensor, k, m);
            masks[axis] = m;
            let cand = self.descend(
                &reduced,
                axis + 1,
                self.ctx.combine(denom, self.tables[axis][m]),
                masks,
                scratch,
            );
            if best.as_ref().is_none_or(|b| cand.beats(b)) {
                best = Some(cand);
            }
        }
        best.expect("nonempty axis")
    }

    fn to_masks(&self, masks: &[usize]) -> Vec<SubsetMask> {
        masks
            .iter()
            .zip(self.shape)
            .map(|(&m, &k)| SubsetMask::new(m as u64, k).expect("in range"))
            .collect()
    }
}

fn check_scales(scales: &[f64], n: usize) -> Result<()> {
    if scales.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: scales.len(),
        });
    }
    if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "scales must be finite and positive, got {s}"
        )));
    }
    Ok(())
}

/// `sup (∫_{ΠE_j}|f|^q)^{1/q} / Σ_j scales_j^{-1} μ_j(E_j)^{α_j}`.
pub fn rect_sup(f: &KernelMatrix, q: f64, alphas: &[f64], scales: &[f64]) -> Result<RectMax> {
    rect_sup_with(f, q, alphas, scales, RectSearch::Auto)
}

/// [`rect_sup`] with an explicit evaluation strategy.
pub fn rect_sup_with(f: &KernelMatrix, q: f64, alphas: &[f64], scales: &[f64], search: RectSearch) -> Result<RectMax> {
    check_scales(scales, f.arity())?;
    if alphas.len() != f.arity() {
        return Err(Error::DimensionMismatch {
            expected: f.arity(),
            got: alphas.len(),
        });
    }
    if let Some(a) = alphas.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
        return Err(Error::InvalidExponent(format!(
            "alpha must be finite and nonnegative, got {a}"
        )));
    }
    let terms: Vec<Term> = alphas
        .iter()
        .zip(scales)
        .map(|(&a, &s)| Box::new(move |m: f64| m.powf(a) / s) as Term)
        .collect();
    rect_search(f, q, &terms, Combine::Sum, search)
}

/// [`rect_sup`] with `μ_j(E_j)^{α_j}` replaced by `Φ_j(μ_j(E_j))`.
pub fn gauge_rect_sup(f: &KernelMatrix, q: f64, gauges: &[GaugeFunction], scales: &[f64]) -> Result<RectMax> {
    check_scales(scales, f.arity())?;
    if gauges.len() != f.arity() {
        return Err(Error::DimensionMismatch {
            expected: f.arity(),
            got: gauges.len(),
        });
    }
    let terms: Vec<Term> = gauges
        .iter()
        .zip(scales)
        .map(|(g, &s)| match g {
            // same arithmetic as `rect_sup` so power gauges agree bit for bit
            GaugeFunction::Power(a) => {
                let a = *a;
                Box::new(move |m: f64| m.powf(a) / s) as Term
            }
            _ => Box::new(move |m: f64| g.eval(m) / s) as Term,
        })
        .collect();
    rect_search(f, q, &terms, Combine::Sum, RectSearch::Auto)
}

/// `sup (∫_{ΠE_j}|f|^q)^{1/q} / Π_j μ_j(E_j)^{e_j}`.
pub fn rect_product_sup(f: &KernelMatrix, q: f64, exponents: &[f64]) -> Result<RectMax> {
    if exponents.len() != f.arity() {
        return Err(Error::DimensionMismatch {
            expected: f.arity(),
            got: exponents.len(),
        });
    }
    let terms: Vec<Term> = exponents
        .iter()
        .map(|&e| Box::new(move |m: f64| m.powf(e)) as Term)
        .collect();
    rect_search(f, q, &terms, Combine::Product, RectSearch::Auto)
}

/// The two-axis functional `k_t(f)`: [`rect_sup`] with the configuration's
/// `α_j` and scales `(1, t)`. It never exceeds `K_t(f)` for `q ≥ 1/2`.
pub fn k_lower_certificate(f: &KernelMatrix, config: &ExponentConfig, t: f64) -> Result<RectMax> {
    if f.arity() != 2 || config.p().len() != 2 {
        return Err(Error::InvalidParameter("k_t is defined for two axes".into()));
    }
    rect_sup(f, config.q(), &config.alphas(), &[1.0, t])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ident() -> KernelMatrix {
        KernelMatrix::identity(2)
    }

    fn mask(ix: &[usize], n: usize) -> SubsetMask {
        SubsetMask::from_indices(ix, n).unwrap()
    }

    /// Naive oracle: every tuple, masses summed cell by cell.
    fn brute(f: &KernelMatrix, q: f64, denom: &dyn Fn(&[f64]) -> f64) -> f64 {
        let shape = f.shape();
        let n = shape.len();
        let total: usize = shape.iter().sum();
        let masses = f.cell_masses();
        let mut best: f64 = 0.0;
        for bits in 0u64..(1 << total) {
            let mut off = 0;
            let mut ms = vec![];
            for &k in &shape {
                ms.push((bits >> off) & ((1 << k) - 1));
                off += k;
            }
            if ms.contains(&0) {
                continue;
            }
            let mut mass = 0.0;
            for flat in 0..f.entries().len() {
                let idx = f.product().unravel(flat);
                if (0..n).all(|a| ms[a] >> idx[a] & 1 == 1) {
                    mass += f.entries()[flat].abs().powf(q) * masses[flat];
                }
            }
            let mus: Vec<f64> = (0..n)
                .map(|a| {
                    (0..shape[a])
                        .filter(|&i| ms[a] >> i & 1 == 1)
                        .map(|i| f.space(a).weight(i))
                        .sum()
                })
                .collect();
            best = best.max(mass.powf(1.0 / q) / denom(&mus));
        }
        best
    }

    #[test]
    fn identity_examples() {
        let r = rect_sup(&ident(), 1.0, &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(r.value, 0.5);
        assert_eq!(r.masks, vec![mask(&[0], 2), mask(&[0], 2)]);
        let r = rect_sup_with(&ident(), 1.0, &[1.0, 1.0], &[1.0, 1.0], RectSearch::Enumerate).unwrap();
        assert_eq!(r.masks, vec![mask(&[0], 2), mask(&[0], 2)]);

        let r = rect_sup(&ident(), 1.0, &[0.5, 0.5], &[1.0, 1.0]).unwrap();
        assert!((r.value - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.masks, vec![mask(&[0, 1], 2), mask(&[0, 1], 2)]);

        let ones = KernelMatrix::counting(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let r = rect_sup(&ones, 1.0, &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.masks, vec![mask(&[0, 1], 2), mask(&[0, 1], 2)]);
    }

    #[test]
    fn gauge_examples() {
        let id = GaugeFunction::identity();
        let r = gauge_rect_sup(&ident(), 1.0, &[id.clone(), id], &[1.0, 1.0]).unwrap();
        assert_eq!(r.value, 0.5);

        let capped = GaugeFunction::piecewise_linear(vec![(0.0, 0.0), (1.0, 1.0), (2.0, 1.0)]).unwrap();
        let r = gauge_rect_sup(&ident(), 1.0, &[capped.clone(), capped], &[1.0, 1.0]).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.masks, vec![mask(&[0, 1], 2), mask(&[0, 1], 2)]);

        let f = KernelMatrix::counting(&[vec![0.3, 2.0, 0.0], vec![1.0, 0.7, 0.2]]).unwrap();
        let a = rect_sup(&f, 1.0, &[0.4, 0.9], &[1.0, 3.0]).unwrap();
        let g = gauge_rect_sup(
            &f,
            1.0,
            &[GaugeFunction::power(0.4).unwrap(), GaugeFunction::power(0.9).unwrap()],
            &[1.0, 3.0],
        )
        .unwrap();
        assert_eq!(a, g);
    }

    #[test]
    fn gauge_validation() {
        assert!(GaugeFunction::power(0.0).is_err());
        assert!(GaugeFunction::power(1.5).is_err());
        assert!(GaugeFunction::piecewise_linear(vec![(0.0, 0.0), (1.0, 1.0), (2.0, 3.0)]).is_err());
        assert!(GaugeFunction::piecewise_linear(vec![(0.0, 0.1), (1.0, 1.0)]).is_err());
        assert!(GaugeFunction::piecewise_linear(vec![(0.0, 0.0), (1.0, 2.0), (1.0, 3.0)]).is_err());
        assert!(GaugeFunction::piecewise_linear(vec![(0.0, 0.0), (1.0, 0.0)]).is_err());
        let g = GaugeFunction::piecewise_linear(vec![(0.0, 0.0), (1.0, 2.0), (3.0, 3.0)]).unwrap();
        assert_eq!(g.eval(0.5), 1.0);
        assert_eq!(g.eval(2.0), 2.5);
        assert_eq!(g.eval(5.0), 4.0);
        let json = serde_json::to_string(&g).unwrap();
        assert_eq!(serde_json::from_str::<GaugeFunction>(&json).unwrap(), g);
        let p: GaugeFunction = serde_json::from_str(r#"{"power":0.5}"#).unwrap();
        assert_eq!(p, GaugeFunction::Power(0.5));
    }

    #[test]
    fn k_lower_certificate_examples() {
        let cfg = ExponentConfig::new(1.0, vec![Exponent::INFINITY, Exponent::INFINITY]).unwrap();
        assert_eq!(k_lower_certificate(&ident(), &cfg, 1.0).unwrap().value, 0.5);
        let f = KernelMatrix::counting(&[vec![0.3, 2.0], vec![1.0, 0.7]]).unwrap();
        let mut prev = 0.0;
        for k in -5..=5 {
            let v = k_lower_certificate(&f, &cfg, 2f64.powi(k)).unwrap().value;
            assert!(v >= prev);
            prev = v;
        }
        let scaled = f.map(|v| -2.5 * v);
        let a = k_lower_certificate(&f, &cfg, 0.7).unwrap().value;
        let b = k_lower_certificate(&scaled, &cfg, 0.7).unwrap().value;
        assert!((b - 2.5 * a).abs() < 1e-12);
        assert!(ExponentConfig::new(2.0, vec![Exponent::new(2.0).unwrap()]).is_err());
    }

    #[test]
    fn engine_matches_naive_oracle() {
        let space_a = FiniteMeasureSpace::new(vec![0.5, 1.5, 0.25]).unwrap();
        let space_b = FiniteMeasureSpace::new(vec![2.0, 0.3, 1.0, 0.7]).unwrap();
        let f = KernelMatrix::from_rows(
            space_a.clone(),
            space_b.clone(),
            &[
                vec![0.1, -2.0, 0.0, 1.3],
                vec![0.4, 0.4, 3.1, 0.0],
                vec![2.2, 0.0, 0.9, 0.5],
            ],
        )
        .unwrap();
        for q in [0.5, 1.0, 2.0] {
            let got = rect_sup(&f, q, &[0.7, 1.2], &[1.0, 0.3]).unwrap().value;
            let want = brute(&f, q, &|m| m[0].powf(0.7) + m[1].powf(1.2) / 0.3);
            assert!((got - want).abs() < 1e-12, "q={q}: {got} vs {want}");
            let got = rect_product_sup(&f, q, &[0.3, 0.6]).unwrap().value;
            let want = brute(&f, q, &|m| m[0].powf(0.3) * m[1].powf(0.6));
            assert!((got - want).abs() < 1e-12);
        }
        let t = KernelMatrix::new(
            ProductSpace::new(vec![
                space_a,
                FiniteMeasureSpace::counting(2),
                FiniteMeasureSpace::new(vec![0.2, 0.9]).unwrap(),
            ])
            .unwrap(),
            vec![1.0, 0.0, 0.5, 2.0, 0.0, 0.0, 1.0, 1.0, 3.0, 0.1, 0.0, 0.4],
        )
        .unwrap();
        let got = rect_sup(&t, 1.0, &[1.0, 0.5, 0.8], &[1.0, 2.0, 0.5]).unwrap().value;
        let want = brute(&t, 1.0, &|m| m[0] + m[1].sqrt() / 2.0 + m[2].powf(0.8) / 0.5);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn fast_path_matches_enumeration_and_transpose() {
        let f = KernelMatrix::from_rows(
            FiniteMeasureSpace::counting(4),
            FiniteMeasureSpace::new(vec![0.5, 2.0, 1.0]).unwrap(),
            &[
                vec![0.1, 2.0, 0.0],
                vec![0.4, 0.4, 3.1],
                vec![2.2, 0.0, 0.9],
                vec![1.0, 1.0, 1.0],
            ],
        )
        .unwrap();
        let fast = rect_sup_with(&f, 1.0, &[0.5, 0.75], &[1.0, 2.0], RectSearch::SortedFastPath).unwrap();
        let full = rect_sup_with(&f, 1.0, &[0.5, 0.75], &[1.0, 2.0], RectSearch::Enumerate).unwrap();
        assert!((fast.value - full.value).abs() < 1e-12);
        let tr = rect_sup(&f.transpose().unwrap(), 1.0, &[0.75, 0.5], &[2.0, 1.0]).unwrap();
        assert!((tr.value - full.value).abs() < 1e-12);
    }

    #[test]
    fn mixed_norms() {
        // rows (1,1): sup(1/1, 2/2^{1/2})
        let v = mixed_weak_norm(&ident(), 0, Exponent::new(2.0).unwrap(), 1.0).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-15);
        let f = KernelMatrix::counting(&[vec![1.0, 2.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(mixed_weak_norm(&f, 0, Exponent::INFINITY, 1.0).unwrap(), 3.0);
        assert_eq!(mixed_weak_norm(&f, 1, Exponent::INFINITY, 1.0).unwrap(), 5.0);
        // q = 2, p = inf: largest l2 row norm, max(√5, 3)
        let v = mixed_weak_norm(&f, 0, Exponent::INFINITY, 2.0).unwrap();
        assert!((v - 3.0).abs() < 1e-15);
        let g = mixed_gauge_norm(&f, 1, &GaugeFunction::identity()).unwrap();
        assert_eq!(g, 5.0);
        assert!(mixed_weak_norm(&f, 2, Exponent::INFINITY, 1.0).is_err());
    }

    #[test]
    fn empty_axis_gives_zero() {
        let f = KernelMatrix::from_rows(FiniteMeasureSpace::counting(0), FiniteMeasureSpace::counting(3), &[]).unwrap();
        assert_eq!(rect_sup(&f, 1.0, &[1.0, 1.0], &[1.0, 1.0]).unwrap().value, 0.0);
    }

    #[test]
    fn permute_axes_roundtrip() {
        let t = KernelMatrix::new(
            ProductSpace::new(vec![
                FiniteMeasureSpace::counting(2),
                FiniteMeasureSpace::counting(3),
                FiniteMeasureSpace::counting(2),
            ])
            .unwrap(),
            (0..12).map(|v| v as f64).collect(),
        )
        .unwrap();
        let p = t.permute_axes(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), vec![2, 2, 3]);
        assert_eq!(p.get(&[1, 0, 2]), t.get(&[0, 2, 1]));
        assert!(t.permute_axes(&[0, 0, 1]).is_err());
    }
}
