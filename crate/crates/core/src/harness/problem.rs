use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use evalexpr::{build_operator_tree, ContextWithMutableVariables, HashMapContext, Node, Value};
use sha2::{Digest, Sha256};

use crate::analysis::GaussonParams;
use crate::error::{Error, Result};
use crate::grid::{Grid1D, GridFunction};
use crate::schemes::InitialData;

/// Initial data `(φ, γ)` for a run.
#[derive(Clone, Debug, PartialEq)]
pub enum Problem {
    /// Gausson with `c = 2, k = 1`; exact for the unregularized equation at `λ = 1`.
    Example1Gausson,
    /// `φ = cos πx`, `γ = sin πx`.
    Example2CosSin,
    Custom(CustomProblem),
}

#[derive(Clone, Debug, PartialEq)]
pub enum CustomProblem {
    /// Expressions in `x` (and the constant `pi`).
    Expressions { phi: String, gamma: String },
    /// Files of whitespace-separated nodal values, `N` or `N + 1` of them.
    Sampled { phi: PathBuf, gamma: PathBuf },
}

impl Problem {
    pub fn name(&self) -> &'static str {
        match self {
            Problem::Example1Gausson => "example1-gausson",
            Problem::Example2CosSin => "example2-cos-sin",
            Problem::Custom(_) => "custom",
        }
    }

    pub fn default_domain(&self) -> Option<(f64, f64)> {
        match self {
            Problem::Example1Gausson => Some((-16.0, 16.0)),
            Problem::Example2CosSin => Some((-1.0, 1.0)),
            Problem::Custom(_) => None,
        }
    }

    /// The closed-form solution of the unregularized equation, when there is one.
    pub fn exact(&self, lambda: f64) -> Option<GaussonParams> {
        match self {
            Problem::Example1Gausson if lambda == 1.0 => Some(GaussonParams::standard()),
            _ => None,
        }
    }

    pub fn initial_data(&self, g: &Grid1D) -> Result<InitialData> {
        match self {
            Problem::Example1Gausson => Ok(GaussonParams::standard().initial_data(g)),
            Problem::Example2CosSin => Ok(InitialData {
                phi: g.sample(|x| (PI * x).cos()),
                gamma: g.sample(|x| (PI * x).sin()),
            }),
            Problem::Custom(CustomProblem::Expressions { phi, gamma }) => Ok(InitialData {
                phi: sample_expression(phi, g)?,
                gamma: sample_expression(gamma, g)?,
            }),
            Problem::Custom(CustomProblem::Sampled { phi, gamma }) => Ok(InitialData {
                phi: read_samples(phi, g)?,
                gamma: read_samples(gamma, g)?,
            }),
        }
    }

    /// Identifier used in reference-cache keys; custom data is identified by
    /// a digest of its definition or file contents.
    pub fn cache_id(&self) -> Result<String> {
        let digest = |parts: &[&[u8]]| {
            let mut h = Sha256::new();
            for p in parts {
                h.update((p.len() as u64).to_le_bytes());
                h.update(p);
            }
            h.finalize()
                .iter()
                .take(16)
                .map(|b| format!("{b:02x}"))
                .collect::<String>()
        };
        Ok(match self {
            Problem::Custom(CustomProblem::Expressions { phi, gamma }) => {
                format!("custom-expr-{}", digest(&[phi.as_bytes(), gamma.as_bytes()]))
            }
            Problem::Custom(CustomProblem::Sampled { phi, gamma }) => {
                let a = std::fs::read(phi)?;
                let b = std::fs::read(gamma)?;
                format!("custom-file-{}", digest(&[&a, &b]))
            }
            other => other.name().to_string(),
        })
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Problem {
    type Err = Error;

    /// Only the built-in problems; custom data needs its expressions or files.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "example1-gausson" => Ok(Problem::Example1Gausson),
            "example2-cos-sin" => Ok(Problem::Example2CosSin),
            other => Err(Error::Config(format!(
                "unknown problem '{other}' (expected example1-gausson, example2-cos-sin or custom)"
            ))),
        }
    }
}

/// Parses an expression in `x`, reporting syntax errors up front.
pub fn parse_expression(expr: &str) -> Result<Node> {
    build_operator_tree(expr).map_err(|e| Error::Config(format!("bad expression '{expr}': {e}")))
}

fn sample_expression(expr: &str, g: &Grid1D) -> Result<GridFunction> {
    let tree = parse_expression(expr)?;
    let mut ctx = HashMapContext::new();
    let set = |ctx: &mut HashMapContext, k: &str, v: f64| {
        ctx.set_value(k.into(), Value::Float(v))
            .map_err(|e| Error::Config(e.to_string()))
    };
    set(&mut ctx, "pi", PI)?;
    let mut values = Vec::with_capacity(g.cells());
    for j in 0..g.cells() {
        set(&mut ctx, "x", g.node(j))?;
        let v = tree
            .eval_number_with_context(&ctx)
            .map_err(|e| Error::Config(format!("cannot evaluate '{expr}' at x={}: {e}", g.node(j))))?;
        if !v.is_finite() {
            return Err(Error::domain(format!("'{expr}' is not finite at x={}", g.node(j))));
        }
        values.push(v);
    }
    Ok(GridFunction::from_cells(values))
}

fn read_samples(path: &Path, g: &Grid1D) -> Result<GridFunction> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            let v: f64 = tok.parse().map_err(|_| {
                Error::Config(format!("{}:{}: not a number: '{tok}'", path.display(), i + 1))
            })?;
            values.push(v);
        }
    }
    let n = g.cells();
    if values.len() == n {
        Ok(GridFunction::from_cells(values))
    } else if values.len() == n + 1 {
        GridFunction::from_values(values)
    } else {
        Err(Error::DimensionMismatch {
            expected: n,
            got: values.len(),
        })
    }
}
