use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use nalgebra::Vector3;
use planefold::chart::{build_chart, cycle_checks, ChartMap, CycleChecks, TubularChart};
use planefold::control::{
    bracket_sequence, control_coeffs, hyperbolize, span_rank, span_rank_to, HyperbolizeOptions, PerturbationSpec,
};
use planefold::error::Error;
use planefold::field::Field;
use planefold::pointwise::{geodesic_torsion, integrability_scalar, principal_data};
use planefold::returnmap::{
    fd_return_map, integrable_closed_form, poincare_derivative, variational_system, ReturnMapReport,
    VariationalSystem,
};
use planefold::tracing::{curvature_scale, find_cycle, trace_line_from, CycleCandidate, CycleOptions, TraceOptions};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{expand, resolve_field, RunConfig};

fn v3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let path = dir.join(name);
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

/// Report envelope shared by all commands.
pub fn envelope(config: &RunConfig, result: Value) -> Value {
    json!({ "schema": 1, "command": config.command, "config": config, "result": result })
}

fn field_of(config: &RunConfig) -> Result<Field> {
    Ok(Field::new(resolve_field(&config.field, &config.fixed_params())?))
}

pub fn analyze(config: &RunConfig) -> Result<Value> {
    let field = field_of(config)?;
    let points = config
        .require_seed()?
        .iter()
        .map(|p| {
            let jet = field.unit_jet(p, 1)?;
            let pd = principal_data(&jet)?;
            let tau = |e: &Vector3<f64>| if pd.flat { Ok(0.0) } else { geodesic_torsion(&jet, e) };
            Ok(json!({
                "point": v3(p),
                "normal": v3(&pd.normal),
                "k1": pd.k1,
                "k2": pd.k2,
                "e1": v3(&pd.e1),
                "e2": v3(&pd.e2),
                "geodesic_torsion": [tau(&pd.e1)?, tau(&pd.e2)?],
                "integrability": integrability_scalar(&jet)?,
                "umbilic": pd.umbilic || pd.flat,
                "flat": pd.flat,
                "gap": pd.gap,
            }))
        })
        .collect::<planefold::error::Result<Vec<_>>>()?;
    Ok(json!({ "points": points }))
}

pub fn trace(config: &RunConfig) -> Result<Value> {
    let field = field_of(config)?;
    let seeds = config.require_seed()?;
    fs::create_dir_all(&config.out)?;
    let hint = config.orient.map(Vector3::from);
    let lines = seeds
        .par_iter()
        .map(|p| {
            let step = match config.step {
                Some(h) => h,
                None => 1e-3 * curvature_scale(&field, p)?,
            };
            let opts = TraceOptions {
                step,
                arc_budget: config.arc,
                ..TraceOptions::default()
            };
            trace_line_from(&field, p, hint.as_ref(), config.foliation, &opts)
        })
        .collect::<planefold::error::Result<Vec<_>>>()?;
    let mut summary = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let name = format!("trace_{i}.csv");
        let path = config.out.join(&name);
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        line.write_csv(BufWriter::new(file))?;
        summary.push(json!({
            "seed": config.seeds[i],
            "csv": name,
            "points": line.len(),
            "length": line.length(),
            "end": v3(line.points.last().expect("polyline has its start point")),
            "stop": line.stop,
        }));
    }
    Ok(json!({ "lines": summary }))
}

#[derive(Serialize)]
struct CycleSummary {
    foliation: planefold::tracing::Foliation,
    length: f64,
    closure_residual: f64,
    start: [f64; 3],
    step: f64,
    iterations: usize,
    multiplicity: u8,
}

#[derive(Serialize)]
struct DarbouxSample {
    s: f64,
    k1: f64,
    k2: f64,
    k3: f64,
}

#[derive(Serialize)]
struct Controllability {
    max_abs_k3: f64,
    at_s: f64,
    rank_depth0: usize,
    rank_depth1: usize,
    controllable: bool,
}

struct Analysis {
    cycle: CycleCandidate,
    chart: TubularChart,
    system: VariationalSystem,
    report: ReturnMapReport,
    checks: CycleChecks,
}

fn cycle_options(config: &RunConfig) -> CycleOptions {
    let mut opts = CycleOptions {
        tol: config.tol,
        ..CycleOptions::default()
    };
    opts.step = config.step;
    opts.orientation = config.orient.map(Vector3::from);
    opts
}

fn analyze_cycle(field: &Field, seed: &Vector3<f64>, config: &RunConfig) -> planefold::error::Result<Analysis> {
    let cycle = find_cycle(field, seed, config.foliation, &cycle_options(config))?;
    let chart = build_chart(field, &cycle)?;
    let system = variational_system(field, &chart)?;
    let report = poincare_derivative(&system)?;
    let checks = cycle_checks(field, &chart)?;
    Ok(Analysis {
        cycle,
        chart,
        system,
        report,
        checks,
    })
}

fn controllability(a: &Analysis) -> planefold::error::Result<Option<Controllability>> {
    let (max_abs_k3, at_s) = a.chart.max_abs_k3();
    if max_abs_k3 <= 1e-4 {
        return Ok(None);
    }
    let seq = bracket_sequence(&a.system, 1)?;
    let k = (0..seq.s.len())
        .min_by(|&i, &j| (seq.s[i] - at_s).abs().total_cmp(&(seq.s[j] - at_s).abs()))
        .unwrap_or(0);
    let full = span_rank(&seq, k);
    Ok(Some(Controllability {
        max_abs_k3,
        at_s,
        rank_depth0: span_rank_to(&seq, k, 0).rank,
        rank_depth1: full.rank,
        controllable: full.controllable,
    }))
}

fn cycle_json(field: &Field, a: &Analysis) -> Result<Value> {
    let stride = (a.chart.len() / 64).max(1);
    let darboux: Vec<DarbouxSample> = a
        .chart
        .samples()
        .iter()
        .step_by(stride)
        .map(|f| DarbouxSample {
            s: f.s,
            k1: f.k[0],
            k2: f.k[1],
            k3: f.k[2],
        })
        .collect();
    let h = (0.05 * a.chart.radius()).min(0.01);
    let fd = fd_return_map(field, &a.cycle, &a.chart, h)?;
    let integrable = match integrable_closed_form(field, &a.chart) {
        Ok(r) => Some(json!({ "monodromy": r.report.monodromy, "integrability_residual": r.integrability_residual })),
        Err(Error::NonIntegrable(_)) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(json!({
        "cycle": CycleSummary {
            foliation: a.cycle.foliation,
            length: a.cycle.length,
            closure_residual: a.cycle.closure_residual,
            start: v3(&a.cycle.start),
            step: a.cycle.step,
            iterations: a.cycle.iterations,
            multiplicity: a.chart.multiplicity(),
        },
        "darboux": darboux,
        "return_map": a.report,
        "fd_oracle": { "h": h, "monodromy": fd, "residual": (fd - a.report.monodromy).abs().max() },
        "principal_checks": a.checks,
        "controllability": controllability(a)?,
        "integrable_closed_form": integrable,
    }))
}

pub fn cycle(config: &RunConfig) -> Result<Value> {
    let field = field_of(config)?;
    let seeds = config.require_seed()?;
    fs::create_dir_all(&config.out)?;
    let mut cycles = Vec::new();
    for (i, seed) in seeds.iter().enumerate() {
        let a = analyze_cycle(&field, seed, config)?;
        let path = config.out.join(format!("cycle_{i}.csv"));
        a.cycle
            .polyline
            .write_csv(BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?))?;
        let chart_path = config.out.join(format!("chart_{i}.json"));
        a.chart.write_json(BufWriter::new(fs::File::create(&chart_path)?))?;
        let mut entry = cycle_json(&field, &a)?;
        entry["seed"] = json!(config.seeds[i]);
        entry["csv"] = json!(format!("cycle_{i}.csv"));
        cycles.push(entry);
    }
    Ok(json!({ "cycles": cycles }))
}

/// Outcome of hyperbolize; `Err` carries the partial report for exit code 4.
pub fn hyperbolize_cmd(config: &RunConfig) -> Result<std::result::Result<Value, (Value, Error)>> {
    let field = field_of(config)?;
    let seed = config.require_seed()?[0];
    let a = analyze_cycle(&field, &seed, config)?;
    let coeffs = control_coeffs(&field, &a.chart)?;
    let opts = HyperbolizeOptions {
        budget: config.budget,
        ..HyperbolizeOptions::default()
    };
    let base = json!({
        "cycle_length": a.cycle.length,
        "baseline": a.report,
        "controllability": controllability(&a)?,
    });
    match hyperbolize(&a.system, &coeffs, &opts) {
        Ok(h) => {
            let mut out = base;
            out["status"] = json!("certified");
            out["spec"] = serde_json::to_value(&h.spec)?;
            out["certified"] = serde_json::to_value(&h.report)?;
            out["margin"] = json!(h.margin);
            Ok(Ok(out))
        }
        Err(e @ Error::SearchExhausted { best_margin, best_epsilon }) => {
            let mut out = base;
            out["status"] = json!("search_exhausted");
            out["best_margin"] = json!(best_margin);
            out["best_epsilon"] = json!(best_epsilon);
            out["spec"] = serde_json::to_value(PerturbationSpec::default())?;
            Ok(Err((out, e)))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn sweep(config: &RunConfig) -> Result<Value> {
    let seed = config.require_seed()?[0];
    let combos = expand(&config.params);
    // Field errors in any combination are input errors: check before fanning out.
    let fields = combos
        .iter()
        .map(|p| resolve_field(&config.field, p).map(Field::new))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Value> = combos
        .par_iter()
        .zip(fields.par_iter())
        .map(|(params, field): (&BTreeMap<String, f64>, &Field)| match analyze_cycle(field, &seed, config) {
            Ok(a) => json!({
                "params": params,
                "status": "ok",
                "period": a.report.period,
                "eigenvalues": a.report.eigenvalues.map(|z| [z.re, z.im]),
                "moduli": a.report.moduli(),
                "classification": a.report.classification,
                "det_check_residual": a.report.det_check_residual,
            }),
            Err(e) => json!({ "params": params, "status": "error", "error": e.to_string() }),
        })
        .collect();
    Ok(json!({ "rows": rows }))
}

pub fn write_report(config: &RunConfig, report: &Value) -> Result<()> {
    fs::create_dir_all(&config.out).with_context(|| format!("creating {}", config.out.display()))?;
    let name = format!("{}.json", serde_json::to_value(config.command)?.as_str().unwrap_or("report"));
    write_json(&config.out, &name, report)
}
