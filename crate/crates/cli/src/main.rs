use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use interp_lab::condexp::{c_norm, condexp_condition_sup_with, condexp_decompose_with, CondExpConfig, Partition};
use interp_lab::gen::{gen_random, EntryLaw, WeightScheme};
use interp_lab::instance::Instance;
use interp_lab::interp::{interp_report, TGrid, ThetaConfig};
use interp_lab::kernelop::{kernel_opnorm, kernel_opnorm_quasi, operator_exponents};
use interp_lab::kfun::{k_bracket_general_q, k_gauge, ConstraintMode};
use interp_lab::lorentz::{bracket_norm, lorentz_p1_norm, weak_quasinorm, Exponent, ScalarFunction};
use interp_lab::rectangle::{gauge_rect_sup, mixed_weak_norm, rect_sup, KernelMatrix};
use interp_lab::verify::verify_suite;

mod report;

use report::{instance_hash, sweep_csv, Envelope, SweepRow};

const SWEEP_COLUMNS: &str = "\
CSV output starts with two comment lines, `# instance_hash=<sha256>` and
`# config=<json>`, then the header `t,k_t,K_t,ratio` and one row per t:

  t        the weight of the second axis
  k_t      the rectangle lower bound
  K_t      the K-functional (for q != 1, the upper end of the certified bracket)
  ratio    K_t / k_t

Numbers are written in scientific notation with 17 significant digits.";

#[derive(Debug, Parser)]
#[command(
    name = "interp-lab",
    version,
    about = "K-functionals, rectangle norms and their verification on finite measure spaces"
)]
struct Cli {
    /// Worker threads for trials and sweep points (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Functional {
    /// Rectangle supremum with the instance exponents and `--scales`.
    Rect,
    /// Weak-type quasinorm of the flattened function.
    Weak,
    /// Bracket norm of the flattened function.
    Bracket,
    /// Lorentz `L_{p,1}` norm of the flattened function.
    Lorentz,
    /// Weak mixed norm along `--axis`.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate a norm or the rectangle functional of an instance.
    Norm {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "rect")]
        functional: Functional,
        /// Exponent for the scalar functionals (default: the first instance exponent).
        #[arg(long)]
        p: Option<Exponent>,
        /// Axis for the mixed norm.
        #[arg(long, default_value_t = 0)]
        axis: usize,
        /// Comma-separated denominator scales, one per axis (default: all 1).
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
    },
    /// K_t and k_t at a single t.
    #[command(after_help = SWEEP_COLUMNS)]
    Kfunc {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long, value_enum, default_value = "csv")]
        out: Format,
    },
    /// K_t and k_t over a grid of t = 2^k.
    #[command(after_help = SWEEP_COLUMNS)]
    Ksweep {
        #[arg(long = "in")]
        input: PathBuf,
        /// Grid `pow2:LO..HI`.
        #[arg(long, default_value = "pow2:-10..10")]
        t_grid: TGrid,
        #[arg(long, value_enum, default_value = "csv")]
        out: Format,
    },
    /// Optimal decomposition f = f_1 + ... + f_n as JSON.
    Decompose {
        #[arg(long = "in")]
        input: PathBuf,
        /// Comma-separated weights, one per axis (default: all 1).
        #[arg(long, value_delimiter = ',')]
        t: Option<Vec<f64>>,
        /// Materialize every subset row instead of generating them lazily.
        #[arg(long)]
        full: bool,
    },
    /// Closed-form interpolation norm against its grid bracket.
    InterpNorm {
        #[arg(long = "in")]
        input: PathBuf,
        /// Interpolation parameter (default: the instance theta).
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long, default_value = "pow2:-20..20")]
        t_grid: TGrid,
    },
    /// Norm of the kernel operator from L_r into L_{s,inf}.
    Opnorm {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, required_unless_present = "theta")]
        r: Option<Exponent>,
        #[arg(long, required_unless_present = "theta")]
        s: Option<Exponent>,
        /// Derive r and s from theta and the instance exponents.
        #[arg(long, conflicts_with_all = ["r", "s"])]
        theta: Option<f64>,
    },
    /// Conditional-expectation norms and decomposition.
    Condexp {
        #[arg(long = "in")]
        input: PathBuf,
        /// JSON file with an array of partitions (default: the instance partitions).
        #[arg(long)]
        partitions: Option<PathBuf>,
        /// Comma-separated exponents, one per partition (default: all inf).
        #[arg(long, value_delimiter = ',')]
        p: Option<Vec<Exponent>>,
    },
    /// Print a seeded random instance.
    Gen {
        #[arg(long)]
        seed: u64,
        /// Axis sizes such as `4x5` or `3,3,3`.
        #[arg(long)]
        shape: Shape,
        /// `uniform01`, `exp-tail` or `sparse:DENSITY`.
        #[arg(long, default_value = "uniform01")]
        dist: EntryLaw,
        /// `counting`, `dirichlet` or `dirichlet:MASS`.
        #[arg(long, default_value = "counting")]
        weights: WeightScheme,
    },
    /// Run a seeded verification suite; exits 1 if it fails.
    Verify {
        /// varopoulos, lemma2, theorem8, cor9, rem19, multivar, condexp, gauge or duality.
        suite: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Omit the per-trial records.
        #[arg(long)]
        brief: bool,
    },
}

#[derive(Debug, Error)]
enum CliError {
    /// Bad input: malformed JSON, inconsistent instances, bad parameters.
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Failure(String),
    #[error("verification suite `{0}` failed")]
    Verification(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Failure(_) | CliError::Verification(_) => 1,
        }
    }
}

impl From<interp_lab::Error> for CliError {
    fn from(e: interp_lab::Error) -> Self {
        use interp_lab::Error as E;
        match e {
            E::Lp(_) | E::CuttingPlaneStalled(_) | E::EnumerationLimit { .. } => CliError::Failure(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

/// Axis sizes, parsed from `4x5` or `3,3,3`.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Shape(Vec<usize>);

impl std::str::FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(['x', ','])
            .map(|n| n.trim().parse::<usize>().map_err(|_| format!("bad shape {s:?}")))
            .collect::<Result<_, _>>()
            .map(Shape)
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<Instance, CliError> {
    Ok(Instance::from_json(&read(path)?)?)
}

fn two_axes(f: &KernelMatrix) -> Result<(), CliError> {
    if f.arity() != 2 {
        return Err(CliError::Input(format!(
            "this command needs a two-axis kernel, got {} axes",
            f.arity()
        )));
    }
    Ok(())
}

fn sweep_row(inst: &Instance, f: &KernelMatrix, t: f64) -> Result<(SweepRow, Value), CliError> {
    let q = inst.q();
    if q == 1.0 {
        let r = k_gauge(f, &[1.0, t], &inst.gauges()?, ConstraintMode::Lazy)?;
        let row = SweepRow {
            t,
            k_t: r.certificate.value,
            big_k_t: r.value(),
            ratio: r.ratio(),
        };
        Ok((row, serde_json::to_value(&r).expect("serializable")))
    } else {
        let p = inst.exponents()?;
        let b = k_bracket_general_q(f, t, q, p[0], p[1])?;
        let row = SweepRow {
            t,
            k_t: b.lower,
            big_k_t: b.upper,
            ratio: b.ratio(),
        };
        Ok((row, serde_json::to_value(&b).expect("serializable")))
    }
}

fn sweep(command: &str, inst: &Instance, points: &[f64], out: Format, config: Value) -> Result<String, CliError> {
    let f = inst.kernel()?;
    two_axes(&f)?;
    let rows = points
        .par_iter()
        .map(|&t| sweep_row(inst, &f, t))
        .collect::<Result<Vec<_>, _>>()?;
    let hash = instance_hash(inst);
    Ok(match out {
        Format::Csv => {
            let rows: Vec<SweepRow> = rows.into_iter().map(|(row, _)| row).collect();
            sweep_csv(&hash, &config, &rows)
        }
        Format::Json => {
            let result: Vec<Value> = rows
                .into_iter()
                .map(|(row, detail)| json!({"row": row, "detail": detail}))
                .collect();
            Envelope {
                command,
                instance_hash: Some(hash),
                config,
                result,
            }
            .to_json()
        }
    })
}

fn norm(
    inst: &Instance,
    functional: Functional,
    p: Option<Exponent>,
    axis: usize,
    scales: Option<Vec<f64>>,
) -> Result<Value, CliError> {
    let f = inst.kernel()?;
    let scalar_exponent = || -> Result<Exponent, CliError> {
        match p {
            Some(p) => Ok(p),
            None => Ok(inst.exponents()?[0]),
        }
    };
    let value = match functional {
        Functional::Rect => {
            let scales = scales.unwrap_or_else(|| vec![1.0; f.arity()]);
            let best = if inst.gauges.is_some() {
                gauge_rect_sup(&f, inst.q(), &inst.gauges()?, &scales)?
            } else {
                let alphas: Vec<f64> = inst.exponents()?.iter().map(|p| p.conjugate_recip()).collect();
                rect_sup(&f, inst.q(), &alphas, &scales)?
            };
            return Ok(serde_json::to_value(best).expect("serializable"));
        }
        Functional::Weak => weak_quasinorm(&inst.scalar()?, scalar_exponent()?),
        Functional::Bracket => bracket_norm(&inst.scalar()?, scalar_exponent()?)?,
        Functional::Lorentz => lorentz_p1_norm(&inst.scalar()?, scalar_exponent()?)?,
        Functional::Mixed => {
            if axis >= f.arity() {
                return Err(CliError::Input(format!(
                    "axis {axis} out of range for {} axes",
                    f.arity()
                )));
            }
            let p = p.unwrap_or(inst.exponents()?[axis]);
            mixed_weak_norm(&f, axis, p, inst.q())?
        }
    };
    Ok(json!({ "value": value }))
}

fn condexp(inst: &Instance, partitions: Option<Vec<Partition>>, p: Option<Vec<Exponent>>) -> Result<Value, CliError> {
    let partitions = partitions
        .or_else(|| inst.partitions.clone())
        .ok_or_else(|| CliError::Input("no partitions given".into()))?;
    let p = p.unwrap_or_else(|| vec![Exponent::INFINITY; partitions.len()]);
    if p.len() != partitions.len() {
        return Err(CliError::Input(format!(
            "{} exponents for {} partitions",
            p.len(),
            partitions.len()
        )));
    }
    let scalar = inst.scalar()?;
    let config = CondExpConfig::new(scalar.space().weights().to_vec(), partitions)?;
    let x = ScalarFunction::new(config.space().clone(), scalar.into_values())?;
    let norms = config
        .partitions()
        .iter()
        .map(|part| c_norm(&x, part))
        .collect::<Result<Vec<_>, _>>()?;
    let condition = condexp_condition_sup_with(&x, config.partitions(), &p)?;
    let decomposition = if config.partitions().len() >= 2 {
        Some(condexp_decompose_with(&x, config.partitions(), &p)?)
    } else {
        None
    };
    Ok(json!({
        "probability": config.space(),
        "c_norms": norms,
        "condition": condition,
        "decomposition": decomposition,
    }))
}

fn run(cli: Cli) -> Result<String, CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Failure(e.to_string()))?;
    }
    match cli.command {
        Command::Norm {
            input,
            functional,
            p,
            axis,
            scales,
        } => {
            let inst = load(&input)?;
            let config = json!({
                "functional": format!("{functional:?}").to_lowercase(),
                "p": p,
                "axis": axis,
                "scales": scales,
            });
            let result = norm(&inst, functional, p, axis, scales)?;
            Ok(envelope("norm", &inst, config, result))
        }
        Command::Kfunc { input, t, out } => {
            let inst = load(&input)?;
            let config = json!({ "t": t, "q": inst.q(), "p": inst.exponents()? });
            sweep("kfunc", &inst, &[t], out, config)
        }
        Command::Ksweep { input, t_grid, out } => {
            let inst = load(&input)?;
            let config = json!({ "t_grid": t_grid.to_string(), "q": inst.q(), "p": inst.exponents()? });
            sweep("ksweep", &inst, &t_grid.points(), out, config)
        }
        Command::Decompose { input, t, full } => {
            let inst = load(&input)?;
            let f = inst.kernel()?;
            let t = t.unwrap_or_else(|| vec![1.0; f.arity()]);
            let mode = if full {
                ConstraintMode::Full
            } else {
                ConstraintMode::Lazy
            };
            let result = k_gauge(&f, &t, &inst.gauges()?, mode)?;
            let config = json!({ "t": t, "mode": format!("{mode:?}").to_lowercase(), "gauges": inst.gauges()? });
            Ok(envelope("decompose", &inst, config, result))
        }
        Command::InterpNorm { input, theta, t_grid } => {
            let inst = load(&input)?;
            let f = inst.kernel()?;
            two_axes(&f)?;
            let theta = theta
                .or(inst.theta)
                .ok_or_else(|| CliError::Input("no theta given".into()))?;
            let p = inst.exponents()?;
            let result = interp_report(&f, &ThetaConfig::new(theta, t_grid)?, p[0], p[1])?;
            let config = json!({ "theta": theta, "t_grid": t_grid.to_string(), "p": p });
            Ok(envelope("interp-norm", &inst, config, result))
        }
        Command::Opnorm { input, r, s, theta } => {
            let inst = load(&input)?;
            let f = inst.kernel()?;
            two_axes(&f)?;
            let (r, s) = match (r, s, theta) {
                (Some(r), Some(s), _) => (r, s),
                (_, _, Some(theta)) => {
                    let p = inst.exponents()?;
                    operator_exponents(theta, p[0], p[1])?
                }
                _ => return Err(CliError::Input("give --r and --s, or --theta".into())),
            };
            let result = json!({
                "norm": kernel_opnorm(&f, r, s)?,
                "quasinorm": kernel_opnorm_quasi(&f, r, s)?,
            });
            let config = json!({ "r": r, "s": s, "theta": theta });
            Ok(envelope("opnorm", &inst, config, result))
        }
        Command::Condexp { input, partitions, p } => {
            let inst = load(&input)?;
            let parts = match &partitions {
                Some(path) => Some(read_partitions(path, &inst)?),
                None => None,
            };
            let result = condexp(&inst, parts, p.clone())?;
            let config = json!({ "partitions": partitions.map(|p| p.display().to_string()), "p": p });
            Ok(envelope("condexp", &inst, config, result))
        }
        Command::Gen {
            seed,
            shape,
            dist,
            weights,
        } => {
            let inst = gen_random(seed, &shape.0, dist, weights)?;
            Ok(inst.to_json() + "\n")
        }
        Command::Verify {
            suite,
            trials,
            seed,
            brief,
        } => {
            let mut report = verify_suite(&suite, trials, seed).map_err(|e| match e {
                interp_lab::Error::UnknownSuite(_) => CliError::Input(e.to_string()),
                e => CliError::from(e),
            })?;
            let pass = report.pass;
            if brief {
                report.records.clear();
            }
            let config = json!({ "suite": suite, "trials": trials, "seed": seed });
            let text = Envelope {
                command: "verify",
                instance_hash: None,
                config,
                result: report,
            }
            .to_json();
            if pass {
                Ok(text)
            } else {
                print!("{text}");
                Err(CliError::Verification(suite))
            }
        }
    }
}

fn read_partitions(path: &Path, inst: &Instance) -> Result<Vec<Partition>, CliError> {
    let text = read(path)?;
    let parts: Vec<Partition> =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let atoms = inst.scalar()?.space().len();
    if let Some(p) = parts.iter().find(|p| p.atoms() != atoms) {
        return Err(CliError::Input(format!(
            "partition covers {} atoms, instance has {atoms}",
            p.atoms()
        )));
    }
    Ok(parts)
}

fn envelope(command: &str, inst: &Instance, config: Value, result: impl serde::Serialize) -> String {
    Envelope {
        command,
        instance_hash: Some(instance_hash(inst)),
        config,
        result,
    }
    .to_json()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("interp-lab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
