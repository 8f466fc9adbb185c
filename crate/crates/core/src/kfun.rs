//! K-functionals of sums of mixed weak-type spaces, computed exactly as
//! linear programs.
//!
//! For `q = 1` every norm involved depends only on `|f_j|` and is monotone,
//! so any decomposition `f = Σ f_j` can be replaced by a same-sign one with
//! `Σ |f_j| = |f|` without increasing a single norm. The K-functional is
//! then the LP
//!
//! ```text
//! minimize   Σ_j t_j s_j
//! subject to Σ_j y_j(e) = |f(e)|,  y_j ≥ 0
//!            ∫_{E × rest} y_j dμ ≤ s_j Φ_j(μ_j(E))   for every axis j and E ⊂ Ω_j
//! ```
//!
//! whose exponentially many subset rows are generated lazily by a
//! separation oracle. The same machinery handles conditional expectations,
//! where the "axes" are partitions and the subsets are block unions.

use std::collections::HashSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lorentz::{
    bracket_norm, descending_order, lorentz_p1_norm, sup_ratio, Exponent, ScalarFunction, SubsetSearch,
};
use crate::lp::{LpModel, Relation};
use crate::measure::{check_enumerable, subset_sums, FiniteMeasureSpace, SubsetMask, MAX_MASK_ATOMS};
use crate::rectangle::{
    k_lower_certificate, mixed_weak_norm, rect_sup, ExponentConfig, GaugeFunction, KernelMatrix, RectMax,
};

/// Threshold below which a subset constraint counts as satisfied.
pub const SEPARATION_TOL: f64 = 1e-9;

const MAX_ROUNDS: usize = 10_000;

/// Maximizer of `Σ_{E} r dμ − s·Φ(μ(E))` when the maximum exceeds
/// [`SEPARATION_TOL`].
pub fn separation_worst_subset(r: &ScalarFunction, s: f64, p: Exponent) -> Result<Option<(SubsetMask, f64)>> {
    separation_worst_subset_gauge(r, s, &GaugeFunction::for_exponent(p)?)
}

/// [`separation_worst_subset`] for an arbitrary concave gauge.
pub fn separation_worst_subset_gauge(
    r: &ScalarFunction,
    s: f64,
    gauge: &GaugeFunction,
) -> Result<Option<(SubsetMask, f64)>> {
    if r.values().iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidParameter("separation needs r >= 0".into()));
    }
    let space = r.space();
    if space.len() > MAX_MASK_ATOMS {
        return Err(Error::InvalidParameter(format!(
            "separation addresses at most {MAX_MASK_ATOMS} atoms"
        )));
    }
    let densities = r.values();
    let (atoms, violation) = worst_violation(space, densities, s, gauge)?;
    if violation > SEPARATION_TOL {
        Ok(Some((SubsetMask::from_indices(&atoms, space.len())?, violation)))
    } else {
        Ok(None)
    }
}

/// `max_E Σ_{i∈E} d_i w_i − s Φ(W(E))` over nonempty `E`, exact.
fn worst_violation(
    space: &FiniteMeasureSpace,
    densities: &[f64],
    s: f64,
    gauge: &GaugeFunction,
) -> Result<(Vec<usize>, f64)> {
    let n = space.len();
    if n == 0 {
        return Ok((vec![], f64::NEG_INFINITY));
    }
    if gauge.is_linear() {
        // additive: take every atom whose own term is positive
        let gains: Vec<f64> = (0..n).map(|i| (densities[i] - s) * space.weight(i)).collect();
        let chosen: Vec<usize> = (0..n).filter(|&i| gains[i] > 0.0).collect();
        if chosen.is_empty() {
            let best = (0..n)
                .max_by(|&a, &b| gains[a].total_cmp(&gains[b]).then(b.cmp(&a)))
                .unwrap();
            return Ok((vec![best], gains[best]));
        }
        let total = chosen.iter().map(|&i| gains[i]).sum();
        return Ok((chosen, total));
    }
    if let Some(w) = space.uniform_weight() {
        let order = descending_order(densities);
        let mut mass = 0.0;
        let mut best = (f64::NEG_INFINITY, 0);
        for (k, &i) in order.iter().enumerate() {
            mass += densities[i] * w;
            let v = mass - s * gauge.eval((k + 1) as f64 * w);
            if v > best.0 {
                best = (v, k + 1);
            }
        }
        let mut atoms = order[..best.1].to_vec();
        atoms.sort_unstable();
        return Ok((atoms, best.0));
    }
    check_enumerable(n)?;
    let weighted: Vec<f64> = densities.iter().zip(space.weights()).map(|(d, w)| d * w).collect();
    let masses = subset_sums(&weighted);
    let measures = space.subset_measure_table();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for m in 1..masses.len() {
        let v = masses[m] - s * gauge.eval(measures[m]);
        if v > best.0 {
            best = (v, m);
        }
    }
    Ok(((0..n).filter(|i| best.1 >> i & 1 == 1).collect(), best.0))
}

/// One summand family of a split problem: cells are grouped into blocks
/// with masses `blocks`, and the summand is charged
/// `sup_E ∫_{cells in E} |y| dμ / Φ(W(E))` over unions `E` of blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAxis {
    pub blocks: FiniteMeasureSpace,
    pub block_of: Vec<usize>,
    pub gauge: GaugeFunction,
    pub cost: f64,
}

/// Nonnegative splitting of `magnitudes` across the axes.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitProblem {
    pub magnitudes: Vec<f64>,
    pub cell_mass: Vec<f64>,
    pub axes: Vec<SplitAxis>,
}

/// Whether subset rows are generated on demand or all written up front.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum ConstraintMode {
    #[default]
    Lazy,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSolution {
    /// Optimum of the final LP.
    pub lp_value: f64,
    /// `Σ_j cost_j · norm_j` recomputed for the returned parts.
    pub value: f64,
    pub parts: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
    pub rounds: usize,
    pub subset_rows: usize,
}

impl SplitProblem {
    /// The standard product-space problem: axis `j` has the atoms of `Ω_j`
    /// as blocks.
    pub fn product(f: &KernelMatrix, gauges: Vec<GaugeFunction>, costs: &[f64]) -> Result<Self> {
        let n = f.arity();
        if gauges.len() != n || costs.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: gauges.len().min(costs.len()),
            });
        }
        let strides = f.product().strides();
        let shape = f.shape();
        let cells = f.entries().len();
        let axes = (0..n)
            .map(|a| SplitAxis {
                blocks: f.space(a).clone(),
                block_of: (0..cells).map(|c| c / strides[a] % shape[a]).collect(),
                gauge: gauges[a].clone(),
                cost: costs[a],
            })
            .collect();
        Self::new(f.entries().iter().map(|v| v.abs()).collect(), f.cell_masses(), axes)
    }

    pub fn new(magnitudes: Vec<f64>, cell_mass: Vec<f64>, axes: Vec<SplitAxis>) -> Result<Self> {
        let cells = magnitudes.len();
        if cell_mass.len() != cells {
            return Err(Error::DimensionMismatch {
                expected: cells,
                got: cell_mass.len(),
            });
        }
        if cell_mass.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::InvalidParameter(
                "cell masses must be finite and positive".into(),
            ));
        }
        if magnitudes.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidParameter(
                "magnitudes must be finite and nonnegative".into(),
            ));
        }
        if axes.is_empty() {
            return Err(Error::InvalidParameter("need at least one axis".into()));
        }
        for axis in &axes {
            if axis.block_of.len() != cells {
                return Err(Error::DimensionMismatch {
                    expected: cells,
                    got: axis.block_of.len(),
                });
            }
            if let Some(&b) = axis.block_of.iter().find(|&&b| b >= axis.blocks.len()) {
                return Err(Error::IndexOutOfRange {
                    index: b,
                    atoms: axis.blocks.len(),
                });
            }
            if axis.blocks.len() > MAX_MASK_ATOMS {
                return Err(Error::InvalidParameter(format!(
                    "an axis has more than {MAX_MASK_ATOMS} blocks"
                )));
            }
            if !(axis.cost.is_finite() && axis.cost > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "costs must be finite and positive, got {}",
                    axis.cost
                )));
            }
        }
        Ok(Self {
            magnitudes,
            cell_mass,
            axes,
        })
    }

    /// Per-block densities `Σ_{cells in b} y dμ / W(b)`.
    fn densities(&self, axis: usize, part: &[f64]) -> Vec<f64> {
        let ax = &self.axes[axis];
        let mut r = vec![0.0; ax.blocks.len()];
        for (c, &y) in part.iter().enumerate() {
            if y != 0.0 {
                r[ax.block_of[c]] += y * self.cell_mass[c];
            }
        }
        for (b, v) in r.iter_mut().enumerate() {
            *v /= ax.blocks.weight(b);
        }
        r
    }

    /// The charge of `part` on `axis` and a maximizing block union.
    pub fn axis_norm(&self, axis: usize, part: &[f64]) -> Result<(f64, Vec<usize>)> {
        let ax = &self.axes[axis];
        let d = self.densities(axis, part);
        if ax.blocks.is_empty() {
            return Ok((0.0, vec![]));
        }
        if ax.gauge.is_linear() {
            let best = (0..d.len())
                .max_by(|&a, &b| d[a].total_cmp(&d[b]).then(b.cmp(&a)))
                .unwrap();
            return Ok((d[best].max(0.0), vec![best]));
        }
        let g = &ax.gauge;
        let m = sup_ratio(&ax.blocks, &d, &|x| g.eval(x), SubsetSearch::Auto)?;
        Ok((m.value.max(0.0), m.atoms))
    }
}

fn block_mask(atoms: &[usize]) -> u64 {
    atoms.iter().fold(0u64, |m, &i| m | 1 << i)
}

/// Solves the split LP, adding violated subset rows until every part's
/// charge is within tolerance of its epigraph variable.
pub fn solve_split(problem: &SplitProblem, mode: ConstraintMode) -> Result<SplitSolution> {
    let n_axes = problem.axes.len();
    let cells = problem.magnitudes.len();
    let support: Vec<usize> = (0..cells).filter(|&c| problem.magnitudes[c] > 0.0).collect();
    if support.is_empty() {
        return Ok(SplitSolution {
            lp_value: 0.0,
            value: 0.0,
            parts: vec![vec![0.0; cells]; n_axes],
            norms: vec![0.0; n_axes],
            rounds: 0,
            subset_rows: 0,
        });
    }
    let s_len = support.len();
    let var_y = |axis: usize, k: usize| axis * s_len + k;
    let var_s = |axis: usize| n_axes * s_len + axis;
    let mut lp = LpModel::new(n_axes * s_len + n_axes);
    for (a, ax) in problem.axes.iter().enumerate() {
        lp.set_objective(var_s(a), ax.cost);
    }
    // variables carry mass μ(e)·y(e)/scale, which keeps every cut
    // coefficient at 1 and the right-hand sides at most 1
    let scale = support
        .iter()
        .map(|&c| problem.magnitudes[c] * problem.cell_mass[c])
        .fold(0.0, f64::max);
    for (k, &c) in support.iter().enumerate() {
        let row = (0..n_axes).map(|a| (var_y(a, k), 1.0)).collect();
        lp.add_constraint(row, Relation::Eq, problem.magnitudes[c] * problem.cell_mass[c] / scale);
    }

    // support cells grouped by block, per axis
    let members: Vec<Vec<Vec<usize>>> = problem
        .axes
        .iter()
        .map(|ax| {
            let mut m = vec![Vec::new(); ax.blocks.len()];
            for (k, &c) in support.iter().enumerate() {
                m[ax.block_of[c]].push(k);
            }
            m
        })
        .collect();

    let mut present: HashSet<(usize, u64)> = HashSet::new();
    let mut subset_rows = 0;
    let mut add_cut = |lp: &mut LpModel, axis: usize, mask: u64| -> bool {
        if mask == 0 || !present.insert((axis, mask)) {
            return false;
        }
        let ax = &problem.axes[axis];
        let mut row: Vec<(usize, f64)> = Vec::new();
        let mut measure = 0.0;
        for b in (0..ax.blocks.len()).filter(|b| mask >> b & 1 == 1) {
            measure += ax.blocks.weight(b);
            for &k in &members[axis][b] {
                row.push((var_y(axis, k), 1.0));
            }
        }
        if row.is_empty() {
            return false;
        }
        row.push((var_s(axis), -ax.gauge.eval(measure)));
        lp.add_constraint(row, Relation::Le, 0.0);
        subset_rows += 1;
        true
    };

    match mode {
        ConstraintMode::Lazy => {
            for (a, ax) in problem.axes.iter().enumerate() {
                for b in 0..ax.blocks.len() {
                    add_cut(&mut lp, a, 1 << b);
                }
            }
        }
        ConstraintMode::Full => {
            for (a, ax) in problem.axes.iter().enumerate() {
                check_enumerable(ax.blocks.len())?;
                for mask in 1u64..(1u64 << ax.blocks.len()) {
                    add_cut(&mut lp, a, mask);
                }
            }
        }
    }

    let mut rounds = 0;
    loop {
        rounds += 1;
        if rounds > MAX_ROUNDS {
            return Err(Error::CuttingPlaneStalled(MAX_ROUNDS));
        }
        let sol = lp.solve()?;
        let parts = extract_parts(problem, &support, &sol.x, var_y);
        let mut added = false;
        let mut norms = Vec::with_capacity(n_axes);
        for a in 0..n_axes {
            let (norm, atoms) = problem.axis_norm(a, &parts[a])?;
            norms.push(norm);
            let s = sol.x[var_s(a)] * scale;
            if norm > s + 1e-10 * (1.0 + s) {
                added |= add_cut(&mut lp, a, block_mask(&atoms));
                let d = problem.densities(a, &parts[a]);
                let (worst, viol) = worst_violation(&problem.axes[a].blocks, &d, s, &problem.axes[a].gauge)?;
                if viol > SEPARATION_TOL {
                    added |= add_cut(&mut lp, a, block_mask(&worst));
                }
            }
        }
        if !added {
            let value = norms.iter().zip(&problem.axes).map(|(n, ax)| n * ax.cost).sum();
            return Ok(SplitSolution {
                lp_value: sol.objective * scale,
                value,
                parts,
                norms,
                rounds,
                subset_rows,
            });
        }
    }
}

/// Reads the split variables back, clamps round-off and rescales each cell
/// so the parts add up to its magnitude.
fn extract_parts(
    problem: &SplitProblem,
    support: &[usize],
    x: &[f64],
    var_y: impl Fn(usize, usize) -> usize,
) -> Vec<Vec<f64>> {
    let n_axes = problem.axes.len();
    let cells = problem.magnitudes.len();
    let mut parts = vec![vec![0.0; cells]; n_axes];
    for (k, &c) in support.iter().enumerate() {
        let raw: Vec<f64> = (0..n_axes)
            .map(|a| x[var_y(a, k)].max(0.0) / problem.cell_mass[c])
            .collect();
        let total: f64 = raw.iter().sum();
        let target = problem.magnitudes[c];
        for a in 0..n_axes {
            parts[a][c] = if total > 0.0 {
                raw[a] * target / total
            } else if a == 0 {
                target
            } else {
                0.0
            };
        }
    }
    parts
}

/// A decomposition `f = Σ_j f_j` together with its cost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionResult {
    #[serde(serialize_with = "serialize_kernels")]
    pub summands: Vec<KernelMatrix>,
    /// Norm of each summand in its own space.
    pub norms: Vec<f64>,
    /// The weights `t_j` in `Σ_j t_j ‖f_j‖`.
    pub costs: Vec<f64>,
    /// `Σ_j t_j ‖f_j‖`, achieved by `summands`.
    pub total: f64,
    /// LP optimum; `total` exceeds it by at most the separation tolerance.
    pub lp_value: f64,
    /// The rectangle functional the decomposition is measured against.
    pub certificate: RectMax,
    pub rounds: usize,
    pub subset_rows: usize,
}

fn serialize_kernels<S: serde::Serializer>(ks: &[KernelMatrix], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(ks.iter().map(|k| k.entries()))
}

impl DecompositionResult {
    pub fn value(&self) -> f64 {
        self.total
    }

    /// `total / certificate`, or 1 when both vanish.
    pub fn ratio(&self) -> f64 {
        ratio(self.total, self.certificate.value)
    }
}

pub(crate) fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

fn signed_summands(f: &KernelMatrix, parts: &[Vec<f64>]) -> Result<Vec<KernelMatrix>> {
    parts
        .iter()
        .map(|part| {
            let entries = f
                .entries()
                .iter()
                .zip(part)
                .map(|(&v, &y)| if v < 0.0 { -y } else { y })
                .collect();
            f.with_entries(entries)
        })
        .collect()
}

fn check_t(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "t must be finite and positive (use monotone limits for 0 and ∞), got {t}"
        )));
    }
    Ok(())
}

/// `inf Σ_j t_j ‖f_j‖_{Φ_j}` over `f = Σ_j f_j`, where `‖·‖_{Φ_j}` is the
/// mixed norm on axis `j` with gauge `Φ_j` and inner `L_1`.
pub fn k_gauge(
    f: &KernelMatrix,
    t: &[f64],
    gauges: &[GaugeFunction],
    mode: ConstraintMode,
) -> Result<DecompositionResult> {
    for &tj in t {
        check_t(tj)?;
    }
    let problem = SplitProblem::product(f, gauges.to_vec(), t)?;
    let sol = solve_split(&problem, mode)?;
    let certificate = crate::rectangle::gauge_rect_sup(f, 1.0, gauges, t)?;
    Ok(DecompositionResult {
        summands: signed_summands(f, &sol.parts)?,
        norms: sol.norms,
        costs: t.to_vec(),
        total: sol.value,
        lp_value: sol.lp_value,
        certificate,
        rounds: sol.rounds,
        subset_rows: sol.subset_rows,
    })
}

/// Generalized K-functional `K(t_1,…,t_n)` for `Y_j = L_{p_j,∞}(μ_j; L_1(μ̂_j))`.
pub fn k_multi(f: &KernelMatrix, t: &[f64], p: &[Exponent]) -> Result<DecompositionResult> {
    k_multi_with(f, t, p, ConstraintMode::Lazy)
}

pub fn k_multi_with(f: &KernelMatrix, t: &[f64], p: &[Exponent], mode: ConstraintMode) -> Result<DecompositionResult> {
    if p.len() != f.arity() {
        return Err(Error::DimensionMismatch {
            expected: f.arity(),
            got: p.len(),
        });
    }
    let gauges = p
        .iter()
        .map(|&pj| GaugeFunction::for_exponent(pj))
        .collect::<Result<Vec<_>>>()?;
    let mut result = k_gauge(f, t, &gauges, mode)?;
    let alphas: Vec<f64> = p.iter().map(|pj| pj.conjugate_recip()).collect();
    result.certificate = rect_sup(f, 1.0, &alphas, t)?;
    Ok(result)
}

/// `K_t(f; L_{p1,∞}(μ1; L_1(μ2)), L_{p2,∞}(μ2; L_1(μ1)))` with an optimal
/// decomposition; `certificate` holds `k_t(f)`.
pub fn k_exact(f: &KernelMatrix, t: f64, p1: Exponent, p2: Exponent) -> Result<DecompositionResult> {
    k_exact_with(f, t, p1, p2, ConstraintMode::Lazy)
}

pub fn k_exact_with(
    f: &KernelMatrix,
    t: f64,
    p1: Exponent,
    p2: Exponent,
    mode: ConstraintMode,
) -> Result<DecompositionResult> {
    if f.arity() != 2 {
        return Err(Error::InvalidParameter("k_exact needs a two-axis kernel".into()));
    }
    k_multi_with(f, &[1.0, t], &[p1, p2], mode)
}

/// Certified two-sided bounds on `K_t` for `q ≠ 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneralQBracket {
    /// `k_t(f)` scaled by [`GeneralQBracket::lower_constant`]; never above `K_t`.
    pub lower: f64,
    /// Cost of `decomposition`; never below `K_t`.
    pub upper: f64,
    pub k_t: RectMax,
    pub lower_constant: f64,
    pub decomposition: DecompositionResult,
    /// Local-search passes spent improving the rounded split.
    pub passes: usize,
}

impl GeneralQBracket {
    pub fn ratio(&self) -> f64 {
        ratio(self.upper, self.lower)
    }
}

/// Factor `c_q` with `c_q·k_t ≤ K_t`: 1 for `q ≥ 1/2`, `2^{2−1/q}` below.
pub fn general_q_lower_constant(q: f64) -> f64 {
    if q >= 0.5 {
        1.0
    } else {
        2f64.powf(2.0 - 1.0 / q)
    }
}

/// Brackets `K_t(f)` for the couple `(L_{p1,∞}(μ1; L_q(μ2)), L_{p2,∞}(μ2; L_q(μ1)))`.
///
/// The upper bound comes from an explicit disjoint-support decomposition:
/// solve the `q = 1` problem for `|f|^q` at exponents `p_j/q` and parameter
/// `t^q`, send each cell to the summand holding the larger share, then
/// improve by single-cell moves. Disjoint supports make `|f_1|^q + |f_2|^q`
/// equal `|f|^q`, so both norms are evaluated exactly.
pub fn k_bracket_general_q(f: &KernelMatrix, t: f64, q: f64, p1: Exponent, p2: Exponent) -> Result<GeneralQBracket> {
    check_t(t)?;
    if f.arity() != 2 {
        return Err(Error::InvalidParameter(
            "k_bracket_general_q needs a two-axis kernel".into(),
        ));
    }
    let config = ExponentConfig::new(q, vec![p1, p2])?;
    let k_t = k_lower_certificate(f, &config, t)?;
    let lower_constant = general_q_lower_constant(q);
    let lower = k_t.value * lower_constant;

    let cost = |assign: &[bool]| -> Result<(f64, [f64; 2])> {
        let (a, b) = split_by(f, assign)?;
        let n1 = mixed_weak_norm(&a, 0, p1, q)?;
        let n2 = mixed_weak_norm(&b, 1, p2, q)?;
        Ok((n1 + t * n2, [n1, n2]))
    };

    let cells = f.entries().len();
    let support: Vec<usize> = (0..cells).filter(|&c| f.entries()[c] != 0.0).collect();

    let inner_p = |p: Exponent| Exponent::new(p.value() / q);
    let h = f.map(|v| v.abs().powf(q));
    let inner = k_exact(&h, t.powf(q), inner_p(p1)?, inner_p(p2)?)?;
    let rounded: Vec<bool> = (0..cells)
        .map(|c| inner.summands[0].entries()[c].abs() >= inner.summands[1].entries()[c].abs())
        .collect();

    let mut best_assign = rounded;
    let mut best = cost(&best_assign)?;
    for all in [true, false] {
        let assign = vec![all; cells];
        let c = cost(&assign)?;
        if c.0 < best.0 {
            best = c;
            best_assign = assign;
        }
    }

    let mut passes = 0;
    loop {
        passes += 1;
        let mut improved = false;
        for &c in &support {
            best_assign[c] = !best_assign[c];
            let cand = cost(&best_assign)?;
            if cand.0 < best.0 * (1.0 - 1e-12) {
                best = cand;
                improved = true;
            } else {
                best_assign[c] = !best_assign[c];
            }
        }
        if !improved || passes >= 50 {
            break;
        }
    }

    let (a, b) = split_by(f, &best_assign)?;
    Ok(GeneralQBracket {
        lower,
        upper: best.0,
        k_t: k_t.clone(),
        lower_constant,
        decomposition: DecompositionResult {
            summands: vec![a, b],
            norms: best.1.to_vec(),
            costs: vec![1.0, t],
            total: best.0,
            lp_value: inner.lp_value,
            certificate: k_t,
            rounds: inner.rounds,
            subset_rows: inner.subset_rows,
        },
        passes,
    })
}

/// `(f·1_A, f·1_{A^c})` for the cell set `A = {assign}`.
fn split_by(f: &KernelMatrix, assign: &[bool]) -> Result<(KernelMatrix, KernelMatrix)> {
    let a = f
        .entries()
        .iter()
        .zip(assign)
        .map(|(&v, &s)| if s { v } else { 0.0 })
        .collect();
    let b = f
        .entries()
        .iter()
        .zip(assign)
        .map(|(&v, &s)| if s { 0.0 } else { v })
        .collect();
    Ok((f.with_entries(a)?, f.with_entries(b)?))
}

/// One interval `[c_lo, c_hi)` of the layer-cake decomposition of `α∧β`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityPiece {
    pub c_lo: f64,
    pub c_hi: f64,
    /// `E_c = {α > c}`.
    pub rows: Vec<usize>,
    /// `F_c = {β > c}`.
    pub cols: Vec<usize>,
    /// `μ1(E_c)^{1/p1'} + μ2(F_c)^{1/p2'}`.
    pub weight: f64,
    /// `∫|f| ψ_c` with `ψ_c = weight^{-1} 1_{E_c×F_c}`.
    pub integral: f64,
}

/// Every quantity in the duality argument bounding `∫|fg|` by
/// `2·max(‖g‖_{X1*}, ‖g‖_{X2*})·sup_{E1,E2} ∫_{E1×E2}|f| / (μ1(E1)^{1/p1'} + μ2(E2)^{1/p2'})`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityReport {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// `[α]_{p1',1}` on `μ1`.
    pub dual_norm_1: f64,
    /// `[β]_{p2',1}` on `μ2`.
    pub dual_norm_2: f64,
    pub pieces: Vec<DualityPiece>,
    /// `∫|fg|`.
    pub pairing: f64,
    /// `∫|f|(α∧β)`.
    pub min_integral: f64,
    /// `∫_0^∞ weight(c) ∫|f|ψ_c dc`.
    pub layered_integral: f64,
    /// `∫_0^∞ weight(c) dc`.
    pub weight_integral: f64,
    pub sup_piece: f64,
    pub chain_bound: f64,
    pub rect: f64,
    pub final_bound: f64,
    /// Largest atomwise error of the layer-cake reconstruction of `α∧β`.
    pub reconstruction_error: f64,
    /// Largest `|g| − α∧β` (must be ≤ 0).
    pub domination_excess: f64,
    pub pass: bool,
}

/// Evaluates the duality chain
/// `∫|fg| ≤ ∫|f|(α∧β) = ∫ w(c)∫|f|ψ_c dc ≤ (∫w)·sup_c∫|f|ψ_c ≤ 2·max(dual norms)·rect`.
pub fn duality_certificate(f: &KernelMatrix, g: &KernelMatrix, p1: Exponent, p2: Exponent) -> Result<DualityReport> {
    if f.arity() != 2 || f.product() != g.product() {
        return Err(Error::InvalidParameter(
            "f and g must be two-axis kernels on the same spaces".into(),
        ));
    }
    let (n1, n2) = (f.space(0).len(), f.space(1).len());
    let (g1, g2) = (p1.conjugate_recip(), p2.conjugate_recip());
    let at = |k: &KernelMatrix, i: usize, j: usize| k.entries()[i * n2 + j].abs();
    let alpha: Vec<f64> = (0..n1)
        .map(|i| (0..n2).fold(0.0, |m, j| f64::max(m, at(g, i, j))))
        .collect();
    let beta: Vec<f64> = (0..n2)
        .map(|j| (0..n1).fold(0.0, |m, i| f64::max(m, at(g, i, j))))
        .collect();
    let dual_norm_1 = lorentz_p1_norm(
        &ScalarFunction::new(f.space(0).clone(), alpha.clone())?,
        p1.conjugate()?,
    )?;
    let dual_norm_2 = lorentz_p1_norm(&ScalarFunction::new(f.space(1).clone(), beta.clone())?, p2.conjugate()?)?;
    let masses = f.cell_masses();

    let mut levels: Vec<f64> = alpha.iter().chain(&beta).copied().filter(|&v| v > 0.0).collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();

    let mut pieces = Vec::with_capacity(levels.len());
    let mut recon = vec![0.0; n1 * n2];
    for (k, &hi) in levels.iter().enumerate() {
        let lo = levels.get(k + 1).copied().unwrap_or(0.0);
        let rows: Vec<usize> = (0..n1).filter(|&i| alpha[i] >= hi).collect();
        let cols: Vec<usize> = (0..n2).filter(|&j| beta[j] >= hi).collect();
        let m1: f64 = rows.iter().map(|&i| f.space(0).weight(i)).sum();
        let m2: f64 = cols.iter().map(|&j| f.space(1).weight(j)).sum();
        let gauge = |m: f64, g: f64| if m > 0.0 { m.powf(g) } else { 0.0 };
        let weight = gauge(m1, g1) + gauge(m2, g2);
        let mut mass = 0.0;
        for &i in &rows {
            for &j in &cols {
                mass += at(f, i, j) * masses[i * n2 + j];
                // w_c · ψ_c on the rectangle
                recon[i * n2 + j] += (hi - lo) * (weight * weight.recip());
            }
        }
        pieces.push(DualityPiece {
            c_lo: lo,
            c_hi: hi,
            rows,
            cols,
            weight,
            integral: mass / weight,
        });
    }

    let mut pairing: f64 = 0.0;
    let mut min_integral: f64 = 0.0;
    let mut reconstruction_error: f64 = 0.0;
    let mut domination_excess = f64::NEG_INFINITY;
    for i in 0..n1 {
        for j in 0..n2 {
            let c = i * n2 + j;
            let wedge = alpha[i].min(beta[j]);
            pairing += at(f, i, j) * at(g, i, j) * masses[c];
            min_integral += at(f, i, j) * wedge * masses[c];
            reconstruction_error = reconstruction_error.max((recon[c] - wedge).abs());
            domination_excess = domination_excess.max(at(g, i, j) - wedge);
        }
    }
    let layered_integral: f64 = pieces.iter().map(|p| (p.c_hi - p.c_lo) * p.weight * p.integral).sum();
    let weight_integral: f64 = pieces.iter().map(|p| (p.c_hi - p.c_lo) * p.weight).sum();
    let sup_piece = pieces.iter().fold(0.0, |m: f64, p| m.max(p.integral));
    let chain_bound = weight_integral * sup_piece;
    let rect = rect_sup(f, 1.0, &[g1, g2], &[1.0, 1.0])?.value;
    let final_bound = 2.0 * dual_norm_1.max(dual_norm_2) * rect;

    let le = |a: f64, b: f64| a <= b + 1e-9 * (1.0 + a.abs().max(b.abs()));
    let pass = le(pairing, min_integral)
        && (min_integral - layered_integral).abs() <= 1e-9 * (1.0 + min_integral.abs())
        && le(layered_integral, chain_bound)
        && le(weight_integral, dual_norm_1 + dual_norm_2)
        && le(sup_piece, rect)
        && le(chain_bound, final_bound)
        && reconstruction_error <= 1e-12 * (1.0 + levels.first().copied().unwrap_or(0.0))
        && domination_excess <= 0.0;

    Ok(DualityReport {
        alpha,
        beta,
        dual_norm_1,
        dual_norm_2,
        pieces,
        pairing,
        min_integral,
        layered_integral,
        weight_integral,
        sup_piece,
        chain_bound,
        rect,
        final_bound,
        reconstruction_error,
        domination_excess: domination_excess.max(0.0),
        pass,
    })
}

/// Exact bracket norm of each summand recomputed through [`bracket_norm`] on
/// the fiber masses; independent of the LP's own norm evaluation.
pub fn recompute_norms(result: &DecompositionResult, p: &[Exponent]) -> Result<Vec<f64>> {
    result
        .summands
        .iter()
        .enumerate()
        .map(|(axis, s)| {
            let fibers = ScalarFunction::new(s.space(axis).clone(), s.fiber_masses(axis, 1.0))?;
            bracket_norm(&fibers, p[axis])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inf() -> Exponent {
        Exponent::INFINITY
    }

    fn e(p: f64) -> Exponent {
        Exponent::new(p).unwrap()
    }

    fn random_kernel(rng: &mut ChaCha8Rng, n1: usize, n2: usize, weighted: bool) -> KernelMatrix {
        let space = |rng: &mut ChaCha8Rng, n| {
            if weighted {
                FiniteMeasureSpace::new((0..n).map(|_| rng.random_range(0.2..2.0)).collect()).unwrap()
            } else {
                FiniteMeasureSpace::counting(n)
            }
        };
        let (a, b) = (space(rng, n1), space(rng, n2));
        let rows: Vec<Vec<f64>> = (0..n1)
            .map(|_| {
                (0..n2)
                    .map(|_| {
                        if rng.random_bool(0.3) {
                            0.0
                        } else {
                            rng.random_range(-1.0..1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        KernelMatrix::from_rows(a, b, &rows).unwrap()
    }

    // brute-force norm of a two-axis split part, straight from the definition
    fn part_norm(f: &KernelMatrix, axis: usize, p: Exponent) -> f64 {
        let fibers = f.fiber_masses(axis, 1.0);
        let space = f.space(axis);
        let g = p.conjugate_recip();
        let mut best: f64 = 0.0;
        for mask in 1u64..(1 << space.len()) {
            let (mut num, mut den) = (0.0, 0.0);
            for i in (0..space.len()).filter(|i| mask >> i & 1 == 1) {
                num += fibers[i] * space.weight(i);
                den += space.weight(i);
            }
            best = best.max(num / den.powf(g));
        }
        best
    }

    #[test]
    fn separation_example() {
        let r = ScalarFunction::new(FiniteMeasureSpace::counting(3), vec![3.0, 1.0, 1.0]).unwrap();
        let (mask, v) = separation_worst_subset(&r, 2.9, e(2.0)).unwrap().unwrap();
        assert_eq!(mask.indices(), vec![0]);
        assert!((v - 0.1).abs() < 1e-12);
        assert!(separation_worst_subset(&r, 3.0, e(2.0)).unwrap().is_none());
    }

    #[test]
    fn separation_matches_enumeration_for_weighted_spaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(1..7);
            let space = FiniteMeasureSpace::new((0..n).map(|_| rng.random_range(0.1..3.0)).collect()).unwrap();
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
            let s = rng.random_range(0.1..2.0);
            let p = e(rng.random_range(1.2..5.0));
            let g = p.conjugate_recip();
            let mut best = f64::NEG_INFINITY;
            for mask in 1u64..(1 << n) {
                let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
                let m: f64 = idx.iter().map(|&i| space.weight(i)).sum();
                let v: f64 = idx.iter().map(|&i| r[i] * space.weight(i)).sum::<f64>() - s * m.powf(g);
                best = best.max(v);
            }
            let got = separation_worst_subset(&ScalarFunction::new(space, r).unwrap(), s, p).unwrap();
            match got {
                Some((_, v)) => assert!((v - best).abs() < 1e-12),
                None => assert!(best <= SEPARATION_TOL),
            }
        }
    }

    #[test]
    fn identity_two_by_two() {
        let f = KernelMatrix::identity(2);
        for &t in &[0.25, 0.5, 1.0, 2.0, 4.0] {
            let r = k_exact(&f, t, inf(), inf()).unwrap();
            assert!((r.value() - t.min(1.0)).abs() < 1e-12, "t={t}: {}", r.value());
        }
        let r = k_exact(&f, 1.0, inf(), inf()).unwrap();
        assert!((r.certificate.value - 0.5).abs() < 1e-15);
        assert!((r.ratio() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_entry_three_axes() {
        let product = crate::measure::ProductSpace::new(vec![FiniteMeasureSpace::counting(2); 3]).unwrap();
        let mut entries = vec![0.0; 8];
        entries[5] = -1.7;
        let f = KernelMatrix::new(product, entries).unwrap();
        let r = k_multi(&f, &[1.0, 1.0, 1.0], &[inf(), inf(), inf()]).unwrap();
        assert!((r.value() - 1.7).abs() < 1e-12);
        let r = k_multi(&f, &[3.0, 0.5, 2.0], &[inf(), inf(), inf()]).unwrap();
        assert!((r.value() - 0.85).abs() < 1e-12);
    }

    #[test]
    fn decomposition_adds_up_and_norms_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..40 {
            let (n1, n2) = (rng.random_range(1..5), rng.random_range(1..5));
            let f = random_kernel(&mut rng, n1, n2, trial % 2 == 0);
            let (p1, p2) = (e(rng.random_range(1.1..6.0)), inf());
            let t = rng.random_range(0.1..5.0);
            let r = k_exact(&f, t, p1, p2).unwrap();
            let sum: Vec<f64> = (0..f.entries().len())
                .map(|c| r.summands[0].entries()[c] + r.summands[1].entries()[c])
                .collect();
            for (a, b) in sum.iter().zip(f.entries()) {
                assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
            }
            let n1 = part_norm(&r.summands[0], 0, p1);
            let n2 = part_norm(&r.summands[1], 1, p2);
            assert!((r.norms[0] - n1).abs() < 1e-9 * (1.0 + n1));
            assert!((r.norms[1] - n2).abs() < 1e-9 * (1.0 + n2));
            assert!((r.value() - (n1 + t * n2)).abs() < 1e-9 * (1.0 + r.value()));
            let recomputed = recompute_norms(&r, &[p1, p2]).unwrap();
            assert!((recomputed[0] - n1).abs() < 1e-9 * (1.0 + n1));
            assert!(r.lp_value <= r.value() + 1e-9);
            assert!(r.value() <= r.lp_value + 1e-8 * (1.0 + r.lp_value));
        }
    }

    #[test]
    fn lazy_and_full_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..40 {
            let (n1, n2) = (rng.random_range(1..5), rng.random_range(1..5));
            let f = random_kernel(&mut rng, n1, n2, trial % 3 == 0);
            let (p1, p2) = (e(rng.random_range(1.1..6.0)), e(rng.random_range(1.1..6.0)));
            let t = rng.random_range(0.1..5.0);
            let lazy = k_exact_with(&f, t, p1, p2, ConstraintMode::Lazy).unwrap();
            let full = k_exact_with(&f, t, p1, p2, ConstraintMode::Full).unwrap();
            assert!((lazy.value() - full.value()).abs() < 1e-7 * (1.0 + full.value()));
        }
    }

    #[test]
    fn grid_search_never_beats_the_lp() {
        // split each support cell between the two parts on a fine grid
        let f = KernelMatrix::counting(&[vec![1.0, 0.5], vec![0.0, 2.0]]).unwrap();
        let (p1, p2, t) = (e(2.0), e(3.0), 0.7);
        let support = [0usize, 1, 3];
        let steps = 40;
        let mut best = f64::INFINITY;
        for a in 0..=steps {
            for b in 0..=steps {
                for c in 0..=steps {
                    let mut e1 = vec![0.0; 4];
                    for (&cell, &k) in support.iter().zip(&[a, b, c]) {
                        e1[cell] = f.entries()[cell] * k as f64 / steps as f64;
                    }
                    let e2: Vec<f64> = f.entries().iter().zip(&e1).map(|(x, y)| x - y).collect();
                    let v = part_norm(&f.with_entries(e1).unwrap(), 0, p1)
                        + t * part_norm(&f.with_entries(e2).unwrap(), 1, p2);
                    best = best.min(v);
                }
            }
        }
        let k = k_exact(&f, t, p1, p2).unwrap().value();
        assert!(k <= best + 1e-12);
        assert!(best - k < 0.05 * k, "grid {best} vs lp {k}");
    }

    #[test]
    fn sandwich_and_calculus() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..30 {
            let (n1, n2) = (rng.random_range(1..5), rng.random_range(1..5));
            let f = random_kernel(&mut rng, n1, n2, trial % 2 == 1);
            let (p1, p2) = (e(rng.random_range(1.1..6.0)), e(rng.random_range(1.1..6.0)));
            let ts = [0.125, 0.5, 1.0, 2.0, 8.0];
            let ks: Vec<f64> = ts.iter().map(|&t| k_exact(&f, t, p1, p2).unwrap().value()).collect();
            for (i, &t) in ts.iter().enumerate() {
                let r = k_exact(&f, t, p1, p2).unwrap();
                let tol = 1e-9 * (1.0 + r.value());
                assert!(r.certificate.value <= r.value() + tol);
                assert!(r.value() <= 2.0 * r.certificate.value + tol);
                // transpose swaps the roles of the two parts
                let swapped = k_exact(&f.transpose().unwrap(), 1.0 / t, p2, p1).unwrap().value();
                assert!((ks[i] - t * swapped).abs() < 1e-7 * (1.0 + ks[i]));
                if i > 0 {
                    assert!(ks[i] >= ks[i - 1] - tol);
                    assert!(ks[i] / t <= ks[i - 1] / ts[i - 1] + tol);
                }
            }
            // concavity on the middle points
            let mid = k_exact(&f, 1.5, p1, p2).unwrap().value();
            assert!(mid >= 0.5 * (ks[2] + ks[3]) - 1e-9);
        }
    }

    #[test]
    fn general_q_single_row_is_exact() {
        // with one row, every split is charged exactly and local search finds the best
        let f = KernelMatrix::counting(&[vec![1.0, 2.0]]).unwrap();
        for &q in &[0.5, 2.0] {
            let (p1, p2) = (e(4.0), e(3.0));
            for &t in &[0.3, 1.0, 3.0] {
                let r = k_bracket_general_q(&f, t, q, p1, p2).unwrap();
                let mut best = f64::INFINITY;
                for mask in 0..4u32 {
                    let assign: Vec<bool> = (0..2).map(|c| mask >> c & 1 == 1).collect();
                    let (a, b) = split_by(&f, &assign).unwrap();
                    let v = mixed_weak_norm(&a, 0, p1, q).unwrap() + t * mixed_weak_norm(&b, 1, p2, q).unwrap();
                    best = best.min(v);
                }
                assert!((r.upper - best).abs() < 1e-12, "q={q} t={t}");
                assert!(r.lower <= r.upper + 1e-12);
            }
        }
    }

    #[test]
    fn general_q_bracket_is_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let f = random_kernel(&mut rng, 3, 3, false);
            for &q in &[0.5, 2.0] {
                let p = [e(rng.random_range(2.1..6.0)), e(rng.random_range(2.1..6.0))];
                let r = k_bracket_general_q(&f, 1.0, q, p[0], p[1]).unwrap();
                assert!(r.lower <= r.upper * (1.0 + 1e-12));
                assert!(r.ratio().is_finite() || f.is_zero());
            }
        }
        assert_eq!(general_q_lower_constant(0.25), 0.25);
    }

    #[test]
    fn duality_chain_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..50 {
            let (n1, n2) = (rng.random_range(1..5), rng.random_range(1..5));
            let f = random_kernel(&mut rng, n1, n2, trial % 2 == 0);
            let g = f
                .with_entries((0..n1 * n2).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
            let (p1, p2) = (e(rng.random_range(1.1..6.0)), e(rng.random_range(1.1..6.0)));
            let report = duality_certificate(&f, &g, p1, p2).unwrap();
            assert!(report.pass, "{report:?}");
        }
    }

    #[test]
    fn wide_dynamic_range() {
        // reference optimum from an independent interior-point/simplex solver
        let inst = crate::instance::Instance::from_json(
            r#"{"mu":[{"weights":[1.9031369759855186,1.0968630240144812]},
                {"weights":[0.9556812519445168,0.01571801057208598,0.38284524463451475,0.17596571423975307,0.4583648789678506,1.011424899641279]}],
              "f":[[4.694497205278652,15.55742391170274,2.2148211030006513,11.361554392728124,0.24136216805826322,0.26319297751121573],
                   [4.112739091532811,5.423655395746577,1904.2902110121925,9.703741444839,10.386566737806604,33.75818328739874]]}"#,
        )
        .unwrap();
        let f = inst.kernel().unwrap();
        for mode in [ConstraintMode::Lazy, ConstraintMode::Full] {
            let r = k_exact_with(&f, 0.5, inf(), e(1.5), mode).unwrap();
            assert!(
                (r.value() - 550.8516600278932).abs() < 1e-9 * 550.0,
                "{mode:?}: {}",
                r.value()
            );
        }
    }

    #[test]
    fn zero_kernel() {
        let f = KernelMatrix::counting(&[vec![0.0, 0.0]]).unwrap();
        let r = k_exact(&f, 1.0, e(2.0), e(2.0)).unwrap();
        assert_eq!(r.value(), 0.0);
        assert_eq!(r.ratio(), 1.0);
    }
}
