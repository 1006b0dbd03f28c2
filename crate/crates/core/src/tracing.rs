//! Integration of the principal line fields and refinement of closed leaves.

use std::io::Write;

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, FieldJet};
use crate::pointwise::{principal_data, PrincipalData};

/// Which principal line field to follow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Foliation {
    First,
    Second,
}

impl Foliation {
    pub fn index(self) -> u8 {
        match self {
            Foliation::First => 1,
            Foliation::Second => 2,
        }
    }

    pub fn pick(self, pd: &PrincipalData) -> Vector3<f64> {
        match self {
            Foliation::First => pd.e1,
            Foliation::Second => pd.e2,
        }
    }
}

impl TryFrom<u8> for Foliation {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Foliation::First),
            2 => Ok(Foliation::Second),
            _ => Err(Error::InvalidArgument(format!("foliation must be 1 or 2, got {v}"))),
        }
    }
}

impl From<Foliation> for u8 {
    fn from(f: Foliation) -> u8 {
        f.index()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopReason {
    ArcBudget,
    Singularity { point: [f64; 3], norm: f64 },
    Umbilic { point: [f64; 3], gap: f64 },
    DomainEscape { point: [f64; 3], detail: String },
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::ArcBudget => write!(f, "arc budget exhausted"),
            StopReason::Singularity { point, norm } => {
                write!(f, "field singularity at {point:?} (|eta| = {norm:e})")
            }
            StopReason::Umbilic { point, gap } => {
                write!(f, "partially umbilic point at {point:?} (gap {gap:e})")
            }
            StopReason::DomainEscape { point, detail } => {
                write!(f, "left the domain at {point:?}: {detail}")
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceOptions {
    pub step: f64,
    pub arc_budget: f64,
    /// Stop when `k₂ − k₁ < umbilic_factor·(1 + |k₁| + |k₂|)`.
    pub umbilic_factor: f64,
    /// Stop when `|p|` exceeds this.
    pub domain_radius: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            arc_budget: 10.0,
            umbilic_factor: 1e-5,
            domain_radius: 1e6,
        }
    }
}

/// Length scale used to pick default steps: `1/max|kᵢ|` at `p`, clamped.
pub fn curvature_scale(field: &Field, p: &Vector3<f64>) -> Result<f64> {
    let pd = principal_data(&field.jet(p, 1)?)?;
    let k = pd.k1.abs().max(pd.k2.abs());
    Ok((1.0 / k.max(1e-3)).clamp(1e-3, 1e3))
}

#[derive(Clone, Debug, Serialize)]
pub struct Polyline {
    pub foliation: Foliation,
    pub points: Vec<Vector3<f64>>,
    pub arc: Vec<f64>,
    pub directions: Vec<Vector3<f64>>,
    pub stop: StopReason,
}

impl Polyline {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.arc.last().copied().unwrap_or(0.0)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["s", "x", "y", "z"])?;
        for (p, s) in self.points.iter().zip(&self.arc) {
            w.serialize((s, p.x, p.y, p.z))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn stop_from_error(e: Error, p: &Vector3<f64>) -> StopReason {
    match e {
        Error::Singularity { point, norm } => StopReason::Singularity { point, norm },
        Error::Umbilic { point, gap } => StopReason::Umbilic { point, gap },
        other => StopReason::DomainEscape {
            point: [p.x, p.y, p.z],
            detail: other.to_string(),
        },
    }
}

fn umbilic_stop(pd: &PrincipalData, factor: f64) -> bool {
    !pd.flat && pd.gap < factor * (1.0 + pd.k1.abs() + pd.k2.abs())
}

/// Principal direction at a jet, continued from `previous`.
///
/// Returns `±e_foliation` with the sign making `⟨result, previous⟩ ≥ 0`, or
/// the deterministic sign of [`principal_data`] when there is no previous
/// direction. Where the plane operator vanishes every direction is principal
/// and the previous one, projected to the plane, is kept.
pub fn step_direction(
    jet: &FieldJet,
    previous: Option<&Vector3<f64>>,
    foliation: Foliation,
) -> Result<Vector3<f64>> {
    direction_with(jet, previous, foliation, 1e-5)
}

fn direction_with(
    jet: &FieldJet,
    previous: Option<&Vector3<f64>>,
    foliation: Foliation,
    factor: f64,
) -> Result<Vector3<f64>> {
    let pd = principal_data(jet)?;
    if umbilic_stop(&pd, factor) {
        return Err(Error::Umbilic {
            point: jet.point.into(),
            gap: pd.gap,
        });
    }
    if pd.flat {
        if let Some(prev) = previous {
            let d = prev - pd.normal * prev.dot(&pd.normal);
            if d.norm() > 1e-12 {
                return Ok(d.normalize());
            }
        }
    }
    let e = foliation.pick(&pd);
    Ok(match previous {
        Some(prev) if e.dot(prev) < 0.0 => -e,
        _ => e,
    })
}

struct Tracer<'a> {
    field: &'a Field,
    foliation: Foliation,
    opts: &'a TraceOptions,
}

type Step<T> = std::result::Result<T, StopReason>;

impl Tracer<'_> {
    fn direction(&self, p: &Vector3<f64>, prev: Option<&Vector3<f64>>) -> Step<Vector3<f64>> {
        if !(p.norm() <= self.opts.domain_radius) {
            return Err(StopReason::DomainEscape {
                point: [p.x, p.y, p.z],
                detail: format!("|p| > {}", self.opts.domain_radius),
            });
        }
        self.field
            .jet(p, 1)
            .and_then(|jet| direction_with(&jet, prev, self.foliation, self.opts.umbilic_factor))
            .map_err(|e| stop_from_error(e, p))
    }

    fn rk4(&self, p: &Vector3<f64>, d0: &Vector3<f64>, h: f64) -> Step<Vector3<f64>> {
        let k2 = self.direction(&(p + d0 * (0.5 * h)), Some(d0))?;
        let k3 = self.direction(&(p + k2 * (0.5 * h)), Some(d0))?;
        let k4 = self.direction(&(p + k3 * h), Some(d0))?;
        Ok(p + (d0 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
    }
}

/// Trace a principal line with fixed-step RK4, parametrized by arc length.
///
/// Errors only if the start point itself cannot be traced from; any later
/// obstruction ends the polyline with the matching [`StopReason`].
pub fn trace_line(
    field: &Field,
    start: &Vector3<f64>,
    foliation: Foliation,
    opts: &TraceOptions,
) -> Result<Polyline> {
    trace_line_from(field, start, None, foliation, opts)
}

/// As [`trace_line`], with the initial orientation aligned to `hint`.
pub fn trace_line_from(
    field: &Field,
    start: &Vector3<f64>,
    hint: Option<&Vector3<f64>>,
    foliation: Foliation,
    opts: &TraceOptions,
) -> Result<Polyline> {
    check_options(opts)?;
    let tracer = Tracer {
        field,
        foliation,
        opts,
    };
    let d0 = tracer.direction(start, hint).map_err(Error::TraceStopped)?;
    let mut line = Polyline {
        foliation,
        points: vec![*start],
        arc: vec![0.0],
        directions: vec![d0],
        stop: StopReason::ArcBudget,
    };
    let (mut p, mut d, mut s) = (*start, d0, 0.0);
    while s < opts.arc_budget {
        let h = opts.step.min(opts.arc_budget - s);
        if h <= opts.step * 1e-9 {
            break;
        }
        let next = tracer
            .rk4(&p, &d, h)
            .and_then(|q| Ok((q, tracer.direction(&q, Some(&d))?)));
        match next {
            Ok((q, dq)) => {
                p = q;
                d = dq;
                s += h;
                line.points.push(p);
                line.arc.push(s);
                line.directions.push(d);
            }
            Err(reason) => {
                line.stop = reason;
                break;
            }
        }
    }
    Ok(line)
}

fn check_options(opts: &TraceOptions) -> Result<()> {
    if !(opts.step > 0.0 && opts.step.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {}", opts.step)));
    }
    if !(opts.arc_budget >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "arc budget must be non-negative, got {}",
            opts.arc_budget
        )));
    }
    Ok(())
}

/// Transversal plane through `anchor` with unit normal `normal`, coordinatized
/// by the orthonormal in-plane axes `axes` (the other principal direction and
/// the field direction).
#[derive(Clone, Debug, Serialize)]
pub struct Section {
    pub anchor: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub axes: [Vector3<f64>; 2],
    pub radius: f64,
}

impl Section {
    /// Section at `p` for the given foliation: normal `X₁ = e_fol`, axes
    /// `X₂ = N × X₁` and `N = η̂`.
    pub fn at(field: &Field, p: &Vector3<f64>, foliation: Foliation, radius: f64) -> Result<Self> {
        Self::oriented(field, p, foliation, radius, None)
    }

    /// As [`Section::at`], with the normal aligned to `hint` when given.
    pub fn oriented(
        field: &Field,
        p: &Vector3<f64>,
        foliation: Foliation,
        radius: f64,
        hint: Option<&Vector3<f64>>,
    ) -> Result<Self> {
        let jet = field.jet(p, 1)?;
        let x1 = step_direction(&jet, hint, foliation)?;
        let n = jet.value.normalize();
        Ok(Self {
            anchor: *p,
            normal: x1,
            axes: [n.cross(&x1), n],
            radius,
        })
    }

    pub fn point(&self, q: &Vector2<f64>) -> Vector3<f64> {
        self.anchor + self.axes[0] * q.x + self.axes[1] * q.y
    }

    pub fn coords(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let d = p - self.anchor;
        Vector2::new(d.dot(&self.axes[0]), d.dot(&self.axes[1]))
    }

    pub fn height(&self, p: &Vector3<f64>) -> f64 {
        (p - self.anchor).dot(&self.normal)
    }
}

/// Result of following a leaf from the section back to it.
#[derive(Clone, Debug)]
pub struct SectionReturn {
    pub point: Vector3<f64>,
    pub coords: Vector2<f64>,
    pub direction: Vector3<f64>,
    pub arc: f64,
    pub crossings: usize,
    pub polyline: Option<Polyline>,
}

/// Follow the leaf through `section.point(q)` until it next crosses the
/// section in the direction of its normal within `section.radius` of the
/// anchor. The crossing is located exactly along the RK4 step.
pub fn return_to_section(
    field: &Field,
    section: &Section,
    q: &Vector2<f64>,
    foliation: Foliation,
    opts: &TraceOptions,
    max_turns: usize,
    record: bool,
) -> Result<SectionReturn> {
    check_options(opts)?;
    let tracer = Tracer {
        field,
        foliation,
        opts,
    };
    let start = section.point(q);
    let d0 = tracer
        .direction(&start, Some(&section.normal))
        .map_err(Error::TraceStopped)?;
    if d0.dot(&section.normal) <= 0.0 {
        return Err(Error::InvalidArgument(
            "leaf is tangent to the section at the start point".into(),
        ));
    }
    let mut line = record.then(|| Polyline {
        foliation,
        points: vec![start],
        arc: vec![0.0],
        directions: vec![d0],
        stop: StopReason::ArcBudget,
    });
    let (mut p, mut d, mut s) = (start, d0, 0.0);
    let mut g = 0.0;
    let mut armed = false;
    let mut crossings = 0;
    let h = opts.step;
    while s < opts.arc_budget {
        let q1 = tracer.rk4(&p, &d, h).map_err(Error::TraceStopped)?;
        let g1 = section.height(&q1);
        if armed && g < 0.0 && g1 >= 0.0 {
            let tau = crossing_step(&tracer, section, &p, &d, g, h, g1)?;
            let x = if tau == h {
                q1
            } else {
                tracer.rk4(&p, &d, tau).map_err(Error::TraceStopped)?
            };
            if (x - section.anchor).norm() < section.radius {
                let dx = tracer.direction(&x, Some(&d)).map_err(Error::TraceStopped)?;
                if let Some(l) = line.as_mut() {
                    l.points.push(x);
                    l.arc.push(s + tau);
                    l.directions.push(dx);
                }
                return Ok(SectionReturn {
                    point: x,
                    coords: section.coords(&x),
                    direction: dx,
                    arc: s + tau,
                    crossings: crossings + 1,
                    polyline: line,
                });
            }
            crossings += 1;
            if crossings >= max_turns {
                return Err(Error::NoReturn {
                    turns: crossings,
                    arc: s,
                });
            }
        }
        if g1 < 0.0 {
            armed = true;
        }
        let d1 = tracer.direction(&q1, Some(&d)).map_err(Error::TraceStopped)?;
        p = q1;
        d = d1;
        g = g1;
        s += h;
        if let Some(l) = line.as_mut() {
            l.points.push(p);
            l.arc.push(s);
            l.directions.push(d);
        }
    }
    Err(Error::NoReturn {
        turns: crossings,
        arc: s,
    })
}

/// Illinois iteration for the partial step length with zero section height.
fn crossing_step(
    tracer: &Tracer<'_>,
    section: &Section,
    p: &Vector3<f64>,
    d: &Vector3<f64>,
    g0: f64,
    h: f64,
    g1: f64,
) -> Result<f64> {
    if g1 == 0.0 {
        return Ok(h);
    }
    let (mut a, mut fa, mut b, mut fb) = (0.0, g0, h, g1);
    let mut side = 0;
    for _ in 0..100 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = section.height(&tracer.rk4(p, d, c).map_err(Error::TraceStopped)?);
        if fc == 0.0 || (b - a).abs() < 1e-15 * h {
            return Ok(c);
        }
        if fc < 0.0 {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
        if fc.abs() < 1e-16 {
            return Ok(c);
        }
    }
    Ok(0.5 * (a + b))
}

#[derive(Clone, Debug, Serialize)]
pub struct CycleOptions {
    /// RK4 step; `None` picks `1e-3` times the curvature scale at the seed.
    pub step: Option<f64>,
    pub max_turns: usize,
    /// Longest arc followed per return; `None` means `200π` times the scale.
    pub max_arc: Option<f64>,
    /// `None` means a quarter of the curvature scale.
    pub section_radius: Option<f64>,
    /// Target return displacement.
    pub tol: f64,
    pub max_iter: usize,
    pub fd_step: f64,
    pub umbilic_factor: f64,
    /// Traversal orientation: the cycle runs along `+hint` at the seed.
    /// Reversing it inverts the return map.
    pub orientation: Option<Vector3<f64>>,
}

impl Default for CycleOptions {
    fn default() -> Self {
        Self {
            step: None,
            max_turns: 8,
            max_arc: None,
            section_radius: None,
            tol: 1e-10,
            max_iter: 30,
            fd_step: 1e-6,
            umbilic_factor: 1e-5,
            orientation: None,
        }
    }
}

impl CycleOptions {
    pub fn with_step(mut self, step: f64) -> Self {
        self.step = Some(step);
        self
    }

    pub fn oriented(mut self, hint: Vector3<f64>) -> Self {
        self.orientation = Some(hint);
        self
    }
}

/// A refined closed leaf.
#[derive(Clone, Debug, Serialize)]
pub struct CycleCandidate {
    pub foliation: Foliation,
    pub polyline: Polyline,
    /// Arc length of one period.
    pub length: f64,
    pub closure_residual: f64,
    pub section: Section,
    /// Point of the cycle on the section.
    pub start: Vector3<f64>,
    pub step: f64,
    pub iterations: usize,
}

pub(crate) struct ReturnProblem<'a> {
    pub field: &'a Field,
    pub section: Section,
    pub foliation: Foliation,
    pub trace: TraceOptions,
    pub max_turns: usize,
}

impl ReturnProblem<'_> {
    pub fn map(&self, q: &Vector2<f64>) -> Result<Vector2<f64>> {
        return_to_section(
            self.field,
            &self.section,
            q,
            self.foliation,
            &self.trace,
            self.max_turns,
            false,
        )
        .map(|r| r.coords)
    }

    pub fn jacobian(&self, q: &Vector2<f64>, delta: f64) -> Result<Matrix2<f64>> {
        let mut jac = Matrix2::zeros();
        for j in 0..2 {
            let mut e = Vector2::zeros();
            e[j] = delta;
            let col = (self.map(&(q + e))? - self.map(&(q - e))?) / (2.0 * delta);
            jac.set_column(j, &col);
        }
        Ok(jac)
    }
}

fn pinv_solve(a: &Matrix2<f64>, b: &Vector2<f64>) -> Option<Vector2<f64>> {
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let cut = (1e-8 * smax).max(1e-12);
    if smax <= cut {
        return None;
    }
    svd.solve(b, cut).ok()
}

/// Locate a closed leaf near `seed` by Newton iteration on the first-return
/// map of the section through `seed`.
///
/// Without an orientation hint, a seed whose forward trace fails to return
/// is retried in the opposite direction, so repelling cycles are found too.
pub fn find_cycle(
    field: &Field,
    seed: &Vector3<f64>,
    foliation: Foliation,
    opts: &CycleOptions,
) -> Result<CycleCandidate> {
    match refine_cycle(field, seed, foliation, opts) {
        Err(e @ (Error::NoReturn { .. } | Error::TraceStopped(_) | Error::RefinementDiverged(_)))
            if opts.orientation.is_none() =>
        {
            let d = step_direction(&field.jet(seed, 1)?, None, foliation)?;
            let flipped = CycleOptions {
                orientation: Some(-d),
                ..opts.clone()
            };
            refine_cycle(field, seed, foliation, &flipped).map_err(|_| e)
        }
        other => other,
    }
}

fn refine_cycle(
    field: &Field,
    seed: &Vector3<f64>,
    foliation: Foliation,
    opts: &CycleOptions,
) -> Result<CycleCandidate> {
    let scale = curvature_scale(field, seed)?;
    let step = opts.step.unwrap_or(1e-3 * scale);
    let radius = opts.section_radius.unwrap_or(0.25 * scale);
    let section = Section::oriented(field, seed, foliation, radius, opts.orientation.as_ref())?;
    let problem = ReturnProblem {
        field,
        section,
        foliation,
        trace: TraceOptions {
            step,
            arc_budget: opts.max_arc.unwrap_or(200.0 * std::f64::consts::PI * scale),
            umbilic_factor: opts.umbilic_factor,
            ..TraceOptions::default()
        },
        max_turns: opts.max_turns,
    };
    let residual = |q: &Vector2<f64>| -> Result<Vector2<f64>> { Ok(problem.map(q)? - q) };

    let mut q = Vector2::zeros();
    let mut f = residual(&q)?;
    let mut iterations = 0;
    while f.norm() >= opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::RefinementDiverged(format!(
                "return displacement {:e} after {} iterations",
                f.norm(),
                iterations
            )));
        }
        iterations += 1;
        let a = problem.jacobian(&q, opts.fd_step)? - Matrix2::identity();
        let mut accepted = false;
        if let Some(delta) = pinv_solve(&a, &(-f)) {
            let mut t = 1.0;
            for _ in 0..6 {
                let qn = q + delta * t;
                if let Ok(fnew) = residual(&qn) {
                    if fnew.norm() < f.norm() {
                        q = qn;
                        f = fnew;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
        }
        if !accepted {
            let qn = q + f * 0.5;
            f = residual(&qn).map_err(|e| {
                Error::RefinementDiverged(format!("damped step left the section: {e}"))
            })?;
            q = qn;
        }
    }

    let ret = return_to_section(
        field,
        &problem.section,
        &q,
        foliation,
        &problem.trace,
        opts.max_turns,
        true,
    )?;
    let start = problem.section.point(&q);
    let closure_residual = (ret.point - start).norm();
    let mut polyline = ret.polyline.expect("recorded");
    polyline.stop = StopReason::ArcBudget;
    Ok(CycleCandidate {
        foliation,
        length: ret.arc,
        closure_residual,
        section: problem.section,
        start,
        step,
        iterations,
        polyline,
    })
}
