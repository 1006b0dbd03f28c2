use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use nalgebra::Vector3;
use planefold::field::{presets, FieldExpr};
use planefold::tracing::Foliation;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Analyze,
    Trace,
    Cycle,
    Hyperbolize,
    Sweep,
}

/// Principal foliations of plane fields: pointwise curvature, line tracing,
/// principal cycles, return maps and hyperbolizing perturbations.
#[derive(Debug, Parser)]
#[command(name = "planefold", version)]
pub struct Args {
    /// Field: a file path, an inline "(fx, fy, fz)" / "fx; fy; fz" / JSON
    /// {"fx","fy","fz"}, or builtin:NAME (cycle-family, tori, radial,
    /// constant, twisted, swirl).
    #[arg(short = 'f', long)]
    pub field: String,

    #[arg(long, value_enum)]
    pub cmd: Command,

    /// Point "x,y,z"; repeatable.
    #[arg(long = "seed", value_parser = parse_vec3, allow_hyphen_values = true)]
    pub seeds: Vec<Vector3<f64>>,

    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub foliation: u8,

    /// Integration step; defaults to 1e-3 of the local curvature scale.
    #[arg(long)]
    pub step: Option<f64>,

    /// Closure tolerance of the cycle refinement.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,

    #[arg(long, default_value = "planefold-out")]
    pub out: PathBuf,

    /// Parameters "name=value,..."; for sweep a value may be a range
    /// "start:stop:count".
    #[arg(long, default_value = "")]
    pub params: String,

    /// Direction "x,y,z" the leaf should follow at the seed.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    pub orient: Option<Vector3<f64>>,

    /// Arc length traced per seed by the trace command.
    #[arg(long, default_value_t = 20.0)]
    pub arc: f64,

    /// Largest perturbation size tried by hyperbolize.
    #[arg(long, default_value_t = 0.05)]
    pub budget: f64,
}

pub fn parse_vec3(s: &str) -> Result<Vector3<f64>, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got {s:?}"));
    }
    let mut v = [0.0f64; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| format!("not a number: {p:?}"))?;
        if !slot.is_finite() {
            return Err(format!("not finite: {p:?}"));
        }
    }
    Ok(Vector3::from(v))
}

/// A problem with the command line or its inputs (exit code 2).
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

/// Values of one parameter: a single number or an inclusive linear range.
pub type ParamGrid = BTreeMap<String, Vec<f64>>;

pub fn parse_params(text: &str) -> anyhow::Result<ParamGrid> {
    let mut out = ParamGrid::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, value) = item
            .split_once('=')
            .ok_or_else(|| input(format!("parameter {item:?} is not name=value")))?;
        let num = |s: &str| -> anyhow::Result<f64> {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| input(format!("parameter {name}: not a number: {s:?}")))
        };
        let values = match value.split(':').collect::<Vec<_>>().as_slice() {
            [v] => vec![num(v)?],
            [a, b, n] => {
                let (a, b) = (num(a)?, num(b)?);
                let n: usize = n
                    .trim()
                    .parse()
                    .ok()
                    .filter(|n| *n >= 1)
                    .ok_or_else(|| input(format!("parameter {name}: bad count {n:?}")))?;
                if n == 1 {
                    vec![a]
                } else {
                    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
                }
            }
            _ => return Err(input(format!("parameter {name}: expected value or start:stop:count"))),
        };
        out.insert(name.trim().to_string(), values);
    }
    Ok(out)
}

/// Every combination of the grid values.
pub fn expand(grid: &ParamGrid) -> Vec<BTreeMap<String, f64>> {
    let mut combos = vec![BTreeMap::new()];
    for (name, values) in grid {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.insert(name.clone(), *v);
                    c
                })
            })
            .collect();
    }
    combos
}

/// Field text after reading a file argument.
pub fn field_source(arg: &str) -> anyhow::Result<String> {
    if arg.starts_with("builtin:") {
        return Ok(arg.to_string());
    }
    let path = std::path::Path::new(arg);
    if path.is_file() {
        return std::fs::read_to_string(path).map_err(|e| input(format!("cannot read {arg}: {e}")));
    }
    Ok(arg.to_string())
}

pub fn resolve_field(source: &str, params: &BTreeMap<String, f64>) -> anyhow::Result<FieldExpr> {
    let get = |k: &str, d: f64| params.get(k).copied().unwrap_or(d);
    if let Some(name) = source.strip_prefix("builtin:") {
        let known: &[&str] = match name.trim() {
            "cycle-family" => &["lambda", "a", "eps"],
            "tori" => &["R"],
            "twisted" => &["beta"],
            "radial" | "constant" | "swirl" => &[],
            other => return Err(input(format!("unknown builtin field {other:?}"))),
        };
        if let Some(k) = params.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(input(format!("builtin:{name} has no parameter {k:?}")));
        }
        return Ok(match name.trim() {
            "cycle-family" => presets::cycle_family(get("lambda", 0.1), get("a", 0.2), get("eps", 0.5)),
            "tori" => presets::nested_tori(get("R", 2.0)),
            "twisted" => presets::twisted_circle(get("beta", 0.4)),
            "radial" => presets::radial(),
            "constant" => presets::constant(),
            _ => presets::swirl(),
        });
    }
    let map: HashMap<String, f64> = params.iter().map(|(k, v)| (k.clone(), *v)).collect();
    Ok(FieldExpr::parse_with(source, &map)?)
}

/// Options after validation, echoed into every report.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub field: String,
    pub command: Command,
    pub seeds: Vec<[f64; 3]>,
    pub foliation: Foliation,
    pub step: Option<f64>,
    pub tol: f64,
    pub out: PathBuf,
    pub params: ParamGrid,
    pub orient: Option<[f64; 3]>,
    pub arc: f64,
    pub budget: f64,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn from_args(args: &Args, threads: Option<usize>) -> anyhow::Result<Self> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(input(format!("--{name} must be positive, got {x}")))
            }
        };
        positive("tol", args.tol)?;
        positive("arc", args.arc)?;
        positive("budget", args.budget)?;
        if let Some(h) = args.step {
            positive("step", h)?;
        }
        if let Some(o) = args.orient {
            if o.norm() == 0.0 {
                return Err(input("--orient must be a nonzero vector"));
            }
        }
        let params = parse_params(&args.params)?;
        if args.cmd != Command::Sweep {
            if let Some((k, _)) = params.iter().find(|(_, v)| v.len() > 1) {
                return Err(input(format!("parameter {k} has several values; ranges are for sweep")));
            }
        }
        let foliation = Foliation::try_from(args.foliation).map_err(|e| input(e.to_string()))?;
        Ok(Self {
            field: field_source(&args.field)?,
            command: args.cmd,
            seeds: args.seeds.iter().map(|s| [s.x, s.y, s.z]).collect(),
            foliation,
            step: args.step,
            tol: args.tol,
            out: args.out.clone(),
            params,
            orient: args.orient.map(|o| [o.x, o.y, o.z]),
            arc: args.arc,
            budget: args.budget,
            threads,
        })
    }

    /// Single-valued parameters.
    pub fn fixed_params(&self) -> BTreeMap<String, f64> {
        self.params.iter().map(|(k, v)| (k.clone(), v[0])).collect()
    }

    pub fn seed_points(&self) -> Vec<Vector3<f64>> {
        self.seeds.iter().map(|s| Vector3::from(*s)).collect()
    }

    pub fn require_seed(&self) -> anyhow::Result<Vec<Vector3<f64>>> {
        if self.seeds.is_empty() {
            return Err(input(format!("--cmd {:?} needs at least one --seed", self.command).to_lowercase()));
        }
        Ok(self.seed_points())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_and_ranges() {
        let g = parse_params("lambda=0.1:0.3:3, a=0.2,eps=0.5").unwrap();
        assert_eq!(g["lambda"].len(), 3);
        assert!((g["lambda"][1] - 0.2).abs() < 1e-15);
        assert_eq!(g["a"], vec![0.2]);
        assert_eq!(expand(&g).len(), 3);
        assert!(parse_params("lambda").is_err());
        assert!(parse_params("lambda=x").is_err());
        assert!(parse_params("lambda=0:1:0").is_err());
        assert_eq!(expand(&ParamGrid::new()).len(), 1);
    }

    #[test]
    fn vectors() {
        assert_eq!(parse_vec3("1, -2,3.5").unwrap(), Vector3::new(1.0, -2.0, 3.5));
        assert!(parse_vec3("1,2").is_err());
        assert!(parse_vec3("1,2,nan").is_err());
    }

    #[test]
    fn builtins_and_inline_fields() {
        let p: BTreeMap<String, f64> = [("lambda".to_string(), 0.3)].into();
        assert!(resolve_field("builtin:cycle-family", &p).is_ok());
        assert!(resolve_field("builtin:tori", &p).is_err());
        assert!(resolve_field("builtin:nope", &BTreeMap::new()).is_err());
        let q: BTreeMap<String, f64> = [("c".to_string(), 2.0)].into();
        let f = resolve_field("(c*x, y, 1)", &q).unwrap();
        assert_eq!(f.components[0].eval([1.5, 0.0, 0.0]), 3.0);
        assert!(resolve_field("(c*x, y, 1)", &BTreeMap::new()).is_err());
    }
}
