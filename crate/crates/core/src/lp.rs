//! Dense two-phase tableau simplex with Bland's anti-cycling rule.
//!
//! Models are small (a few hundred rows and columns), so the tableau is
//! kept dense and rebuilt from scratch on every solve.

use thiserror::Error;

/// Hard cap on simplex pivots per solve.
pub const ITERATION_CAP: usize = 1_000_000;

/// Primal feasibility tolerance.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Smallest pivot element accepted; smaller entries are treated as zero.
const PIVOT_TOL: f64 = 1e-9;
/// Pivots between rebuilds of the tableau from the original rows.
const REINVERT_EVERY: usize = 40;
/// Pivots below this are only taken on a freshly rebuilt tableau.
const SUSPECT_PIVOT: f64 = 1e-7;
const COST_TOL: f64 = 1e-11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex exceeded {0} iterations")]
    IterationLimit(usize),
    #[error("simplex lost accuracy: {0}")]
    Numerical(String),
    #[error("malformed linear program: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    /// Sparse `(variable, coefficient)` pairs.
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `minimize c·x` subject to linear rows and per-variable bounds
/// (default `[0, ∞)`).
#[derive(Debug, Clone, PartialEq)]
pub struct LpModel {
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
    bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub objective: f64,
    pub x: Vec<f64>,
    pub iterations: usize,
}

impl LpModel {
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: vec![0.0; num_vars],
            constraints: Vec::new(),
            bounds: vec![(0.0, f64::INFINITY); num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn set_objective(&mut self, var: usize, coeff: f64) {
        self.objective[var] = coeff;
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        self.bounds[var] = (lo, hi);
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint { coeffs, relation, rhs });
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::Malformed("non-finite objective coefficient".into()));
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(LpError::Malformed(format!("bad bounds [{lo}, {hi}] on variable {j}")));
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() {
                return Err(LpError::Malformed(format!("row {i} has non-finite rhs")));
            }
            for &(j, a) in &c.coeffs {
                if j >= n || !a.is_finite() {
                    return Err(LpError::Malformed(format!("row {i} has bad entry ({j}, {a})")));
                }
            }
        }
        Ok(())
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        solve_lp(self)
    }
}

/// How an original variable maps onto nonnegative tableau columns.
enum VarMap {
    /// `x = offset + sign·col`
    Shifted { col: usize, sign: f64, offset: f64 },
    /// `x = pos − neg`
    Free { pos: usize, neg: usize },
}

struct Tableau {
    rows: usize,
    width: usize,
    data: Vec<f64>,
    /// The initial tableau, `[A | b]` with slack and artificial columns.
    orig: Vec<f64>,
    basis: Vec<usize>,
    iterations: usize,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.data[r * self.width + self.width - 1]
    }

    fn pivot(&mut self, r: usize, c: usize, obj: &mut [f64]) {
        let w = self.width;
        let p = self.data[r * w + c];
        for v in &mut self.data[r * w..(r + 1) * w] {
            *v /= p;
        }
        self.data[r * w + c] = 1.0;
        let pivot_row: Vec<f64> = self.data[r * w..(r + 1) * w].to_vec();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let factor = self.data[i * w + c];
            if factor == 0.0 {
                continue;
            }
            let row = &mut self.data[i * w..(i + 1) * w];
            for (v, &pv) in row.iter_mut().zip(&pivot_row) {
                if pv != 0.0 {
                    *v -= factor * pv;
                }
            }
            row[c] = 0.0;
            if row[w - 1] < 0.0 && row[w - 1] > -1e-12 {
                row[w - 1] = 0.0;
            }
        }
        let factor = obj[c];
        if factor != 0.0 {
            for (v, &pv) in obj.iter_mut().zip(&pivot_row) {
                *v -= factor * pv;
            }
            obj[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Recomputes the tableau as `B⁻¹[A | b]` for the current basis, with
    /// partial pivoting, and `obj` as the reduced costs of `cost`. Leaves
    /// everything untouched if the basis is numerically singular.
    fn reinvert(&mut self, cost: &[f64], obj: &mut [f64]) {
        let (m, w) = (self.rows, self.width);
        let mut data = self.orig.clone();
        let mut basis = vec![usize::MAX; m];
        for &col in &self.basis {
            let Some(r) = (0..m)
                .filter(|&r| basis[r] == usize::MAX)
                .max_by(|&a, &b| data[a * w + col].abs().total_cmp(&data[b * w + col].abs()))
            else {
                return;
            };
            let p = data[r * w + col];
            if p.abs() < 1e-12 {
                return;
            }
            for v in &mut data[r * w..(r + 1) * w] {
                *v /= p;
            }
            let pivot_row: Vec<f64> = data[r * w..(r + 1) * w].to_vec();
            for i in (0..m).filter(|&i| i != r) {
                let factor = data[i * w + col];
                if factor != 0.0 {
                    for (v, &pv) in data[i * w..(i + 1) * w].iter_mut().zip(&pivot_row) {
                        *v -= factor * pv;
                    }
                    data[i * w + col] = 0.0;
                }
            }
            basis[r] = col;
        }
        for r in 0..m {
            let b = &mut data[r * w + w - 1];
            if *b < 0.0 && *b > -FEASIBILITY_TOL {
                *b = 0.0;
            }
        }
        self.data = data;
        self.basis = basis;
        obj.copy_from_slice(cost);
        for r in 0..m {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                for c in 0..w {
                    obj[c] -= cb * self.data[r * w + c];
                }
            }
        }
    }

    /// Runs Bland-rule pivots on `obj` until optimal. Columns with
    /// `allowed[c] == false` never enter. The tableau is rebuilt every
    /// few pivots and once more before optimality is accepted.
    fn optimize(&mut self, cost: &[f64], obj: &mut [f64], allowed: &[bool]) -> Result<(), LpError> {
        let ncols = self.width - 1;
        let mut since_rebuild = 0;
        loop {
            if self.iterations >= ITERATION_CAP {
                return Err(LpError::IterationLimit(ITERATION_CAP));
            }
            if since_rebuild >= REINVERT_EVERY {
                self.reinvert(cost, obj);
                since_rebuild = 0;
            }
            let Some(enter) = (0..ncols).find(|&c| allowed[c] && obj[c] < -COST_TOL) else {
                if since_rebuild == 0 {
                    return Ok(());
                }
                self.reinvert(cost, obj);
                since_rebuild = 0;
                continue;
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, enter);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(r).max(0.0) / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((br, best)) => {
                        let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                        if (!tie && ratio < best) || (tie && self.basis[r] < self.basis[br]) {
                            Some((r, ratio))
                        } else {
                            Some((br, best))
                        }
                    }
                };
            }
            let Some((r, _)) = leave else {
                if since_rebuild == 0 {
                    return Err(LpError::Unbounded);
                }
                self.reinvert(cost, obj);
                since_rebuild = 0;
                continue;
            };
            if self.at(r, enter) < SUSPECT_PIVOT && since_rebuild > 0 {
                self.reinvert(cost, obj);
                since_rebuild = 0;
                continue;
            }
            self.pivot(r, enter, obj);
            self.iterations += 1;
            since_rebuild += 1;
        }
    }
}

/// Solves `model` to optimality.
pub fn solve_lp(model: &LpModel) -> Result<LpSolution, LpError> {
    model.validate()?;

    let mut ncols = 0;
    let mut maps = Vec::with_capacity(model.num_vars());
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for &(lo, hi) in &model.bounds {
        if lo.is_finite() {
            let col = ncols;
            ncols += 1;
            if hi.is_finite() {
                bound_rows.push((col, hi - lo));
            }
            maps.push(VarMap::Shifted {
                col,
                sign: 1.0,
                offset: lo,
            });
        } else if hi.is_finite() {
            let col = ncols;
            ncols += 1;
            maps.push(VarMap::Shifted {
                col,
                sign: -1.0,
                offset: hi,
            });
        } else {
            maps.push(VarMap::Free {
                pos: ncols,
                neg: ncols + 1,
            });
            ncols += 2;
        }
    }
    let structural = ncols;

    // rows over structural columns: (dense coeffs, relation, rhs)
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    for c in &model.constraints {
        let mut dense = vec![0.0; structural];
        let mut rhs = c.rhs;
        for &(j, a) in &c.coeffs {
            match maps[j] {
                VarMap::Shifted { col, sign, offset } => {
                    dense[col] += sign * a;
                    rhs -= a * offset;
                }
                VarMap::Free { pos, neg } => {
                    dense[pos] += a;
                    dense[neg] -= a;
                }
            }
        }
        rows.push((dense, c.relation, rhs));
    }
    for &(col, ub) in &bound_rows {
        let mut dense = vec![0.0; structural];
        dense[col] = 1.0;
        rows.push((dense, Relation::Le, ub));
    }

    let m = rows.len();
    let scale = rows.iter().fold(1.0f64, |s, r| s.max(r.2.abs()));
    let slacks = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    // a row needs an artificial unless its slack enters with +1 after the
    // sign normalization below
    let needs_artificial: Vec<bool> = rows
        .iter()
        .map(|(_, rel, rhs)| match rel {
            Relation::Eq => true,
            Relation::Le => *rhs < 0.0,
            Relation::Ge => *rhs > 0.0,
        })
        .collect();
    let artificials = needs_artificial.iter().filter(|&&a| a).count();
    let total = structural + slacks + artificials;
    let width = total + 1;
    let mut tab = Tableau {
        rows: m,
        width,
        data: vec![0.0; m * width],
        orig: Vec::new(),
        basis: vec![0; m],
        iterations: 0,
    };
    let mut slack_col = structural;
    let mut art_col = structural + slacks;
    for (i, (dense, rel, rhs)) in rows.iter().enumerate() {
        let flip = if *rhs < 0.0 { -1.0 } else { 1.0 };
        let row = &mut tab.data[i * width..(i + 1) * width];
        for (v, &a) in row.iter_mut().zip(dense) {
            *v = flip * a;
        }
        row[width - 1] = flip * rhs;
        match rel {
            Relation::Le | Relation::Ge => {
                let sign = if *rel == Relation::Le { 1.0 } else { -1.0 };
                row[slack_col] = flip * sign;
                if !needs_artificial[i] {
                    tab.basis[i] = slack_col;
                }
                slack_col += 1;
            }
            Relation::Eq => {}
        }
        if needs_artificial[i] {
            row[art_col] = 1.0;
            tab.basis[i] = art_col;
            art_col += 1;
        }
    }
    tab.orig = tab.data.clone();
    let is_artificial = |c: usize| c >= structural + slacks;

    // phase 1: minimize the sum of artificials
    if artificials > 0 {
        let mut phase1_cost = vec![0.0; width];
        phase1_cost[structural + slacks..total].fill(1.0);
        let mut obj = phase1_cost.clone();
        for r in 0..m {
            if is_artificial(tab.basis[r]) {
                for c in 0..width {
                    obj[c] -= tab.at(r, c);
                }
            }
        }
        let allowed = vec![true; total];
        tab.optimize(&phase1_cost, &mut obj, &allowed)?;
        if -obj[width - 1] > FEASIBILITY_TOL * scale {
            return Err(LpError::Infeasible);
        }
        // drive remaining (zero-level) artificials out of the basis; a row
        // with nothing to pivot on is redundant and keeps its artificial
        for r in 0..tab.rows {
            if is_artificial(tab.basis[r]) {
                let enter = (0..structural + slacks)
                    .filter(|&c| tab.at(r, c).abs() > 1e-9)
                    .max_by(|&a, &b| tab.at(r, a).abs().total_cmp(&tab.at(r, b).abs()));
                match enter {
                    Some(c) => tab.pivot(r, c, &mut obj),
                    None => {
                        for c in 0..structural + slacks {
                            tab.data[r * width + c] = 0.0;
                        }
                    }
                }
            }
        }
    }

    // phase 2
    let mut cost = vec![0.0; width];
    let mut constant = 0.0;
    for (j, map) in maps.iter().enumerate() {
        let c = model.objective[j];
        match *map {
            VarMap::Shifted { col, sign, offset } => {
                cost[col] += sign * c;
                constant += c * offset;
            }
            VarMap::Free { pos, neg } => {
                cost[pos] += c;
                cost[neg] -= c;
            }
        }
    }
    let mut obj = cost.clone();
    for r in 0..tab.rows {
        let cb = cost[tab.basis[r]];
        if cb != 0.0 {
            for c in 0..width {
                obj[c] -= cb * tab.at(r, c);
            }
        }
    }
    let allowed: Vec<bool> = (0..total).map(|c| !is_artificial(c)).collect();
    tab.optimize(&cost, &mut obj, &allowed)?;

    let mut cols = vec![0.0; total];
    for r in 0..tab.rows {
        cols[tab.basis[r]] = tab.rhs(r).max(0.0);
    }
    let x: Vec<f64> = maps
        .iter()
        .map(|map| match *map {
            VarMap::Shifted { col, sign, offset } => offset + sign * cols[col],
            VarMap::Free { pos, neg } => cols[pos] - cols[neg],
        })
        .collect();
    let objective = model.objective.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
    let worst = model.constraints.iter().map(|c| {
        let lhs: f64 = c.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
        match c.relation {
            Relation::Le => lhs - c.rhs,
            Relation::Ge => c.rhs - lhs,
            Relation::Eq => (lhs - c.rhs).abs(),
        }
    });
    let worst = worst.fold(0.0f64, f64::max);
    if worst > 1e-7 * scale || (objective - (constant - obj[width - 1])).abs() > 1e-7 * (1.0 + objective.abs()) {
        return Err(LpError::Numerical(format!("final basis violates a row by {worst:e}")));
    }
    Ok(LpSolution {
        objective,
        x,
        iterations: tab.iterations,
    })
}
