//! Sums of spaces defined by conditional expectations on a finite
//! probability space.
//!
//! A sub-σ-algebra of a finite space is a partition of the atoms, and its
//! measurable sets are unions of blocks. `C_P` is the space of `x` with
//! `‖E_P |x|‖_∞ < ∞`, normed by that quantity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kfun::{solve_split, ConstraintMode, SplitAxis, SplitProblem};
use crate::lorentz::{Exponent, ScalarFunction};
use crate::measure::{check_enumerable, FiniteMeasureSpace, MAX_MASK_ATOMS};
use crate::rectangle::GaugeFunction;

/// A partition of `{0, …, n−1}` into nonempty blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<usize>>", into = "Vec<Vec<usize>>")]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
    block_of: Vec<usize>,
}

impl TryFrom<Vec<Vec<usize>>> for Partition {
    type Error = Error;

    fn try_from(blocks: Vec<Vec<usize>>) -> Result<Self> {
        let atoms = blocks.iter().map(Vec::len).sum();
        Self::new(blocks, atoms)
    }
}

impl From<Partition> for Vec<Vec<usize>> {
    fn from(p: Partition) -> Self {
        p.blocks
    }
}

impl Partition {
    pub fn new(blocks: Vec<Vec<usize>>, atoms: usize) -> Result<Self> {
        let mut block_of = vec![usize::MAX; atoms];
        for (b, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(Error::InvalidPartition(format!("block {b} is empty")));
            }
            for &i in block {
                if i >= atoms {
                    return Err(Error::InvalidPartition(format!(
                        "atom {i} out of range for {atoms} atoms"
                    )));
                }
                if block_of[i] != usize::MAX {
                    return Err(Error::InvalidPartition(format!("atom {i} appears in two blocks")));
                }
                block_of[i] = b;
            }
        }
        if let Some(i) = block_of.iter().position(|&b| b == usize::MAX) {
            return Err(Error::InvalidPartition(format!("atom {i} is in no block")));
        }
        Ok(Self { blocks, block_of })
    }

    pub fn singletons(atoms: usize) -> Self {
        Self::new((0..atoms).map(|i| vec![i]).collect(), atoms).expect("singletons partition")
    }

    pub fn trivial(atoms: usize) -> Self {
        Self::new(vec![(0..atoms).collect()], atoms).expect("one-block partition")
    }

    /// The blocks `{i} × Ω_2` (`axis = 0`) or `Ω_1 × {j}` (`axis = 1`) of a
    /// row-major `n1 × n2` grid.
    pub fn product_axis(n1: usize, n2: usize, axis: usize) -> Result<Self> {
        let blocks = match axis {
            0 => (0..n1).map(|i| (0..n2).map(|j| i * n2 + j).collect()).collect(),
            1 => (0..n2).map(|j| (0..n1).map(|i| i * n2 + j).collect()).collect(),
            _ => return Err(Error::InvalidParameter(format!("axis {axis} of a two-axis grid"))),
        };
        Self::new(blocks, n1 * n2)
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn atoms(&self) -> usize {
        self.block_of.len()
    }

    pub fn block_of(&self, atom: usize) -> usize {
        self.block_of[atom]
    }

    fn block_masses(&self, space: &FiniteMeasureSpace) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|b| b.iter().map(|&i| space.weight(i)).sum())
            .collect()
    }
}

/// A probability space with several partitions of it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CondExpConfig {
    space: FiniteMeasureSpace,
    partitions: Vec<Partition>,
}

impl CondExpConfig {
    /// Rescales `weights` to total mass 1.
    pub fn new(weights: Vec<f64>, partitions: Vec<Partition>) -> Result<Self> {
        let raw = FiniteMeasureSpace::new(weights)?;
        let total = raw.total_mass();
        let space = FiniteMeasureSpace::new(raw.weights().iter().map(|w| w / total).collect())?;
        Self::from_probability(space, partitions)
    }

    pub fn from_probability(space: FiniteMeasureSpace, partitions: Vec<Partition>) -> Result<Self> {
        if (space.total_mass() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSpace(format!(
                "total mass must be 1, got {}",
                space.total_mass()
            )));
        }
        if space.len() > MAX_MASK_ATOMS {
            return Err(Error::InvalidSpace(format!("at most {MAX_MASK_ATOMS} atoms")));
        }
        for p in &partitions {
            if p.atoms() != space.len() {
                return Err(Error::InvalidPartition(format!(
                    "partition covers {} atoms, space has {}",
                    p.atoms(),
                    space.len()
                )));
            }
        }
        Ok(Self { space, partitions })
    }

    pub fn space(&self) -> &FiniteMeasureSpace {
        &self.space
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }
}

fn check_on(x: &ScalarFunction, p: &Partition) -> Result<()> {
    if x.space().len() != p.atoms() {
        return Err(Error::DimensionMismatch {
            expected: p.atoms(),
            got: x.space().len(),
        });
    }
    Ok(())
}

/// Block averages of `x`.
pub fn cond_expectation(x: &ScalarFunction, p: &Partition) -> Result<ScalarFunction> {
    check_on(x, p)?;
    let space = x.space();
    let averages: Vec<f64> = p
        .blocks
        .iter()
        .map(|b| {
            let mass: f64 = b.iter().map(|&i| space.weight(i)).sum();
            b.iter().map(|&i| x.values()[i] * space.weight(i)).sum::<f64>() / mass
        })
        .collect();
    ScalarFunction::new(space.clone(), (0..p.atoms()).map(|i| averages[p.block_of[i]]).collect())
}

/// `‖E_P |x|‖_∞`.
pub fn c_norm(x: &ScalarFunction, p: &Partition) -> Result<f64> {
    let e = cond_expectation(&x.abs(), p)?;
    Ok(e.values().iter().fold(0.0, |m: f64, v| m.max(*v)))
}

/// Norm of `g ↦ x g` from `L_1` of the block σ-algebra to `L_1`, as the
/// largest image norm of a normalized block indicator.
pub fn multiplication_opnorm(x: &ScalarFunction, p: &Partition) -> Result<f64> {
    check_on(x, p)?;
    let space = x.space();
    let masses = p.block_masses(space);
    let mut best: f64 = 0.0;
    for (b, block) in p.blocks.iter().enumerate() {
        let mut g = vec![0.0; p.atoms()];
        for &i in block {
            g[i] = 1.0 / masses[b];
        }
        let image = ScalarFunction::new(space.clone(), x.values().iter().zip(&g).map(|(a, b)| a * b).collect())?;
        best = best.max(image.abs().integral());
    }
    Ok(best)
}

/// Maximizer of the block-union condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionMax {
    pub value: f64,
    /// For each partition, the atoms of the chosen block union.
    pub sets: Vec<Vec<usize>>,
}

/// `sup ∫_{E_1∩…∩E_n}|x| dμ / Σ_j μ(E_j)` over tuples of block unions.
pub fn condexp_condition_sup(x: &ScalarFunction, partitions: &[Partition]) -> Result<ConditionMax> {
    condexp_condition_sup_with(x, partitions, &vec![Exponent::INFINITY; partitions.len()])
}

/// Same, with `μ(E_j)^{1/p_j'}` in the denominator.
pub fn condexp_condition_sup_with(
    x: &ScalarFunction,
    partitions: &[Partition],
    p: &[Exponent],
) -> Result<ConditionMax> {
    if partitions.is_empty() || p.len() != partitions.len() {
        return Err(Error::DimensionMismatch {
            expected: partitions.len().max(1),
            got: p.len(),
        });
    }
    for part in partitions {
        check_on(x, part)?;
    }
    check_enumerable(partitions.iter().map(Partition::num_blocks).sum())?;
    let space = x.space();
    let gammas: Vec<f64> = p.iter().map(|pj| pj.conjugate_recip()).collect();
    // atom mask and measure of every block union, per partition
    let unions: Vec<Vec<(u64, f64)>> = partitions
        .iter()
        .zip(&gammas)
        .map(|(part, &g)| {
            let masks: Vec<u64> = part
                .blocks
                .iter()
                .map(|b| b.iter().fold(0u64, |m, &i| m | 1 << i))
                .collect();
            let masses = part.block_masses(space);
            (1u64..1 << part.num_blocks())
                .map(|sel| {
                    let (mut atoms, mut measure) = (0u64, 0.0);
                    for b in (0..part.num_blocks()).filter(|b| sel >> b & 1 == 1) {
                        atoms |= masks[b];
                        measure += masses[b];
                    }
                    (atoms, measure.powf(g))
                })
                .collect()
        })
        .collect();
    let weighted: Vec<f64> = x
        .values()
        .iter()
        .zip(space.weights())
        .map(|(v, w)| v.abs() * w)
        .collect();
    let mut best = (0.0, vec![0usize; partitions.len()]);
    let mut chosen = vec![0usize; partitions.len()];
    search(&unions, &weighted, 0, u64::MAX, 0.0, &mut chosen, &mut best);

    let sets = best
        .1
        .iter()
        .zip(&unions)
        .map(|(&k, u)| (0..space.len()).filter(|i| u[k].0 >> i & 1 == 1).collect())
        .collect();
    Ok(ConditionMax { value: best.0, sets })
}

fn search(
    unions: &[Vec<(u64, f64)>],
    weighted: &[f64],
    depth: usize,
    meet: u64,
    denom: f64,
    chosen: &mut Vec<usize>,
    best: &mut (f64, Vec<usize>),
) {
    if depth == unions.len() {
        let mass: f64 = (0..weighted.len())
            .filter(|i| meet >> i & 1 == 1)
            .map(|i| weighted[i])
            .sum();
        let v = mass / denom;
        if v > best.0 {
            *best = (v, chosen.clone());
        }
        return;
    }
    for (k, &(atoms, g)) in unions[depth].iter().enumerate() {
        let next = meet & atoms;
        if next == 0 {
            continue;
        }
        chosen[depth] = k;
        search(unions, weighted, depth + 1, next, denom + g, chosen, best);
    }
}

/// Optimal splitting `x = Σ_j x_j` minimizing `Σ_j ‖x_j‖_{C_j}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CondExpDecomposition {
    pub value: f64,
    pub lp_value: f64,
    pub summands: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
    pub condition: ConditionMax,
}

impl CondExpDecomposition {
    pub fn ratio(&self) -> f64 {
        crate::kfun::ratio(self.value, self.condition.value)
    }
}

pub fn condexp_decompose(x: &ScalarFunction, partitions: &[Partition]) -> Result<CondExpDecomposition> {
    condexp_decompose_with(x, partitions, &vec![Exponent::INFINITY; partitions.len()])
}

/// Splitting against the weak-type variants
/// `sup_E ∫_E |x_j| dμ / μ(E)^{1/p_j'}` over block unions `E`; `p_j = ∞`
/// recovers `C_j`.
pub fn condexp_decompose_with(
    x: &ScalarFunction,
    partitions: &[Partition],
    p: &[Exponent],
) -> Result<CondExpDecomposition> {
    if partitions.len() < 2 {
        return Err(Error::InvalidParameter("need at least two partitions".into()));
    }
    let condition = condexp_condition_sup_with(x, partitions, p)?;
    let space = x.space();
    let axes = partitions
        .iter()
        .zip(p)
        .map(|(part, &pj)| {
            Ok(SplitAxis {
                blocks: FiniteMeasureSpace::new(part.block_masses(space))?,
                block_of: part.block_of.clone(),
                gauge: GaugeFunction::for_exponent(pj)?,
                cost: 1.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let problem = SplitProblem::new(
        x.values().iter().map(|v| v.abs()).collect(),
        space.weights().to_vec(),
        axes,
    )?;
    let sol = solve_split(&problem, ConstraintMode::Lazy)?;
    let summands = sol
        .parts
        .iter()
        .map(|part| {
            part.iter()
                .zip(x.values())
                .map(|(&y, &v)| if v < 0.0 { -y } else { y })
                .collect()
        })
        .collect();
    Ok(CondExpDecomposition {
        value: sol.value,
        lp_value: sol.lp_value,
        summands,
        norms: sol.norms,
        condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kfun::k_exact;
    use crate::rectangle::KernelMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(values: Vec<f64>) -> ScalarFunction {
        let n = values.len();
        ScalarFunction::new(FiniteMeasureSpace::uniform(n, 1.0 / n as f64).unwrap(), values).unwrap()
    }

    fn pair() -> Vec<Partition> {
        vec![
            Partition::new(vec![vec![0, 1], vec![2, 3]], 4).unwrap(),
            Partition::new(vec![vec![0, 2], vec![1, 3]], 4).unwrap(),
        ]
    }

    fn random_partition(rng: &mut ChaCha8Rng, n: usize) -> Partition {
        let k = rng.random_range(1..=n.min(4));
        let mut blocks = vec![Vec::new(); k];
        for i in 0..n {
            // first k atoms seed the blocks so none is empty
            let b = if i < k { i } else { rng.random_range(0..k) };
            blocks[b].push(i);
        }
        Partition::new(blocks, n).unwrap()
    }

    #[test]
    fn partition_validation() {
        assert!(Partition::new(vec![vec![0], vec![0, 1]], 2).is_err());
        assert!(Partition::new(vec![vec![0]], 2).is_err());
        assert!(Partition::new(vec![vec![0, 1], vec![]], 2).is_err());
        assert!(Partition::new(vec![vec![2]], 2).is_err());
        let p: Partition = serde_json::from_str("[[0,1],[2]]").unwrap();
        assert_eq!(p.num_blocks(), 2);
        assert!(serde_json::from_str::<Partition>("[[0,1],[1]]").is_err());
        assert_eq!(serde_json::to_string(&p).unwrap(), "[[0,1],[2]]");
    }

    #[test]
    fn config_normalizes() {
        let c = CondExpConfig::new(vec![2.0, 6.0], vec![Partition::trivial(2)]).unwrap();
        assert_eq!(c.space().weights(), &[0.25, 0.75]);
        assert!(CondExpConfig::from_probability(FiniteMeasureSpace::counting(2), vec![]).is_err());
        assert!(CondExpConfig::new(vec![1.0, 1.0], vec![Partition::trivial(3)]).is_err());
    }

    #[test]
    fn expectation_examples() {
        let x = uniform(vec![4.0, 0.0, 0.0, 4.0]);
        let p = &pair()[0];
        assert_eq!(cond_expectation(&x, p).unwrap().values(), &[2.0, 2.0, 2.0, 2.0]);
        assert_eq!(
            cond_expectation(&x, &Partition::singletons(4)).unwrap().values(),
            x.values()
        );
        assert_eq!(
            cond_expectation(&x, &Partition::trivial(4)).unwrap().values(),
            &[2.0; 4]
        );
        assert_eq!(c_norm(&x, p).unwrap(), 2.0);
        assert_eq!(c_norm(&uniform(vec![-3.0; 4]), p).unwrap(), 3.0);
        assert_eq!(c_norm(&x.map(|v| -2.5 * v), p).unwrap(), 5.0);
        assert_eq!(multiplication_opnorm(&x, p).unwrap(), 2.0);
    }

    #[test]
    fn condition_examples() {
        let x = uniform(vec![4.0, 0.0, 0.0, 4.0]);
        let c = condexp_condition_sup(&x, &pair()).unwrap();
        assert!((c.value - 1.0).abs() < 1e-15);
        assert_eq!(
            condexp_condition_sup(&uniform(vec![0.0; 4]), &pair()).unwrap().value,
            0.0
        );
        let trivial = vec![Partition::trivial(4), Partition::trivial(4)];
        let v = condexp_condition_sup(&uniform(vec![1.0, 2.0, 3.0, 2.0]), &trivial)
            .unwrap()
            .value;
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn decompose_example_against_grid() {
        let x = uniform(vec![4.0, 0.0, 0.0, 4.0]);
        let d = condexp_decompose(&x, &pair()).unwrap();
        assert!(d.value >= 1.0 - 1e-12 && d.value <= 2.0 + 1e-12);
        // five-point grid of shares per support atom
        let mut best = f64::INFINITY;
        for a in 0..=4 {
            for b in 0..=4 {
                let x1 = uniform(vec![a as f64, 0.0, 0.0, b as f64]);
                let x2 = uniform(vec![4.0 - a as f64, 0.0, 0.0, 4.0 - b as f64]);
                best = best.min(c_norm(&x1, &pair()[0]).unwrap() + c_norm(&x2, &pair()[1]).unwrap());
            }
        }
        assert!(d.value <= best + 1e-12);
        assert!((d.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn measurable_input_costs_at_most_its_norm() {
        let x = uniform(vec![1.0, 1.0, 3.0, 3.0]);
        let d = condexp_decompose(&x, &pair()).unwrap();
        assert!(d.value <= c_norm(&x, &pair()[0]).unwrap() + 1e-12);
        let zero = condexp_decompose(&uniform(vec![0.0; 4]), &pair()).unwrap();
        assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn sandwich_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..60 {
            let n = rng.random_range(2..9);
            let k = if trial % 2 == 0 { 2 } else { 3 };
            let parts: Vec<Partition> = (0..k).map(|_| random_partition(&mut rng, n)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let config = CondExpConfig::new(w, parts).unwrap();
            let x = ScalarFunction::new(
                config.space().clone(),
                (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let d = condexp_decompose(&x, config.partitions()).unwrap();
            let c = d.condition.value;
            assert!(c <= d.value + 1e-9);
            assert!(d.value <= k as f64 * c + 1e-9);
            for (s, part) in d.summands.iter().zip(config.partitions()) {
                let sf = ScalarFunction::new(config.space().clone(), s.clone()).unwrap();
                let _ = c_norm(&sf, part).unwrap();
            }
            for i in 0..n {
                let total: f64 = d.summands.iter().map(|s| s[i]).sum();
                assert!((total - x.values()[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn product_case_matches_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let (n1, n2) = (rng.random_range(1..4), rng.random_range(1..4));
            let w1: Vec<f64> = (0..n1).map(|_| rng.random_range(0.1..1.0)).collect();
            let w2: Vec<f64> = (0..n2).map(|_| rng.random_range(0.1..1.0)).collect();
            let (s1, s2) = (w1.iter().sum::<f64>(), w2.iter().sum::<f64>());
            let mu1 = FiniteMeasureSpace::new(w1.iter().map(|w| w / s1).collect()).unwrap();
            let mu2 = FiniteMeasureSpace::new(w2.iter().map(|w| w / s2).collect()).unwrap();
            let rows: Vec<Vec<f64>> = (0..n1)
                .map(|_| (0..n2).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let f = KernelMatrix::from_rows(mu1, mu2, &rows).unwrap();
            let space = FiniteMeasureSpace::new(f.cell_masses()).unwrap();
            let x = ScalarFunction::new(space, f.entries().to_vec()).unwrap();
            let parts = vec![
                Partition::product_axis(n1, n2, 0).unwrap(),
                Partition::product_axis(n1, n2, 1).unwrap(),
            ];
            let d = condexp_decompose(&x, &parts).unwrap();
            let inf = Exponent::INFINITY;
            let k = k_exact(&f, 1.0, inf, inf).unwrap();
            assert!((d.value - k.value()).abs() < 1e-9);
            assert!((d.condition.value - k.certificate.value).abs() < 1e-9);
        }
    }
}
