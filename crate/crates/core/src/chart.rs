//! Tubular charts along principal cycles.
//!
//! A chart is a map `α(s, v, w)` with `α(s, 0, 0)` tracing the cycle. The
//! implicit principal-line system is pulled back through `α` by evaluating
//! the mixed-product form on the columns of `Dα`; derivatives in the chart
//! variables come from nested dual numbers, so every coefficient and its
//! partials are exact up to rounding.

use std::io::Write;

use nalgebra::Vector3;
use serde::Serialize;
use rayon::prelude::*;

use crate::dual::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::geom::{self, V3};
use crate::pointwise::principal_frame;
use crate::spline::PeriodicSpline;
use crate::tracing::{trace_line_from, CycleCandidate, Foliation, TraceOptions};

pub const DEFAULT_SAMPLES: usize = 2048;

/// Orthonormal frame along the cycle with its Darboux coefficients:
/// `X₁' = k₁X₂ + k₂N`, `X₂' = −k₁X₁ + k₃N`, `N' = −k₂X₁ − k₃X₂`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CycleFrame {
    pub s: f64,
    pub gamma: Vector3<f64>,
    pub x1: Vector3<f64>,
    pub x2: Vector3<f64>,
    pub n: Vector3<f64>,
    pub k: [f64; 3],
    /// `s`-derivatives of `k`.
    pub dk: [f64; 3],
}

impl CycleFrame {
    fn derivatives(&self) -> [[Vector3<f64>; 3]; 2] {
        let [k1, k2, k3] = self.k;
        let [d1, d2, d3] = self.dk;
        let (x1, x2, n) = (self.x1, self.x2, self.n);
        let x1p = x2 * k1 + n * k2;
        let x2p = -x1 * k1 + n * k3;
        let np = -x1 * k2 - x2 * k3;
        let x1pp = x2 * d1 + x2p * k1 + n * d2 + np * k2;
        let x2pp = -x1 * d1 - x1p * k1 + n * d3 + np * k3;
        let npp = -x1 * d2 - x1p * k2 - x2 * d3 - x2p * k3;
        [[x1p, x2p, np], [x1pp, x2pp, npp]]
    }
}

/// A coordinate map around a closed curve, generic over the scalar type so
/// that it can be differentiated.
pub trait ChartMap: Sync {
    fn period(&self) -> f64;
    fn map<S: Scalar>(&self, s: S, v: S, w: S) -> V3<S>;
    /// Frame used to read off Taylor coefficients of the generating fields.
    fn frame(&self, s: f64) -> CycleFrame;
    fn foliation(&self) -> Foliation;
    /// Radius in `(v, w)` within which the map is trusted to be injective.
    fn radius(&self) -> f64 {
        f64::INFINITY
    }
}

/// The tubular chart `α(s, v, w) = γ(s) + v X₂(s) + w N(s)` of a cycle.
#[derive(Clone, Debug)]
pub struct TubularChart {
    foliation: Foliation,
    period: f64,
    multiplicity: u8,
    radius: f64,
    samples: Vec<CycleFrame>,
    gamma: [PeriodicSpline; 3],
    axes: [[PeriodicSpline; 3]; 3],
    curv: [PeriodicSpline; 3],
}

/// Multiplicity of a continued frame after one turn: 2 when the continued
/// second axis comes back reversed.
pub fn frame_multiplicity(start: &Vector3<f64>, end: &Vector3<f64>) -> u8 {
    if start.dot(end) < 0.0 {
        2
    } else {
        1
    }
}

pub fn build_chart(field: &Field, cycle: &CycleCandidate) -> Result<TubularChart> {
    build_chart_with(field, cycle, DEFAULT_SAMPLES)
}

pub fn build_chart_with(field: &Field, cycle: &CycleCandidate, n: usize) -> Result<TubularChart> {
    let one = sample_cycle(field, cycle, n, 1)?;
    let mult = frame_multiplicity(&one.continued_first, &one.continued_last);
    let sampled = if mult == 1 {
        one
    } else {
        sample_cycle(field, cycle, n, 2)?
    };
    TubularChart::from_samples(cycle.foliation, sampled.frames, cycle.length * mult as f64, mult)
}

struct Sampled {
    frames: Vec<CycleFrame>,
    continued_first: Vector3<f64>,
    continued_last: Vector3<f64>,
}

fn sample_cycle(field: &Field, cycle: &CycleCandidate, n: usize, turns: u8) -> Result<Sampled> {
    if n < 16 {
        return Err(Error::InvalidArgument(format!("at least 16 chart samples needed, got {n}")));
    }
    let period = cycle.length * turns as f64;
    let per = ((period / n as f64) / cycle.step).ceil().max(1.0) as usize;
    let opts = TraceOptions {
        step: period / (n * per) as f64,
        arc_budget: period,
        ..TraceOptions::default()
    };
    let line = trace_line_from(
        field,
        &cycle.start,
        Some(&cycle.section.normal),
        cycle.foliation,
        &opts,
    )?;
    if line.len() < n * per + 1 {
        return Err(Error::TraceStopped(line.stop));
    }
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let j = i * per;
        frames.push(frame_at_point(
            field,
            cycle.foliation,
            line.arc[j],
            &line.points[j],
            &line.directions[j],
        )?);
    }
    let other = |p: &Vector3<f64>, prev: Option<&Vector3<f64>>| -> Result<Vector3<f64>> {
        let jet = field.jet(p, 1)?;
        let pd = crate::pointwise::principal_data(&jet)?;
        let e = match cycle.foliation {
            Foliation::First => pd.e2,
            Foliation::Second => pd.e1,
        };
        Ok(match prev {
            Some(q) if e.dot(q) < 0.0 => -e,
            _ => e,
        })
    };
    let first = other(&line.points[0], None)?;
    let mut cont = first;
    for p in line.points.iter().skip(1) {
        cont = other(p, Some(&cont))?;
    }
    Ok(Sampled {
        frames,
        continued_first: first,
        continued_last: cont,
    })
}

/// Darboux frame at a point of a principal line moving along `x1`.
fn frame_at_point(
    field: &Field,
    foliation: Foliation,
    s: f64,
    p: &Vector3<f64>,
    x1: &Vector3<f64>,
) -> Result<CycleFrame> {
    let (n, jac) = field.unit_value_jacobian::<f64>([p.x, p.y, p.z])?;
    let n = Vector3::from(n);
    let j = nalgebra::Matrix3::from_fn(|r, c| jac[r][c]);
    let x2 = n.cross(x1);
    let k2 = -x1.dot(&(j * x1));
    let k3 = -x2.dot(&(j * x1));
    let moving: V3<Dual<f64>> = std::array::from_fn(|i| Dual::new(p[i], x1[i]));
    let (nd, jd) = field.unit_value_jacobian(moving)?;
    let f = principal_frame(&nd, &jd);
    let e = match foliation {
        Foliation::First => f.e1,
        Foliation::Second => f.e2,
    };
    let sigma = if geom::re(&e).dot(x1) < 0.0 { -1.0 } else { 1.0 };
    let de = Vector3::new(e[0].eps, e[1].eps, e[2].eps) * sigma;
    Ok(CycleFrame {
        s,
        gamma: *p,
        x1: *x1,
        x2,
        n,
        k: [de.dot(&x2), k2, k3],
        dk: [0.0; 3],
    })
}

fn spline_of(period: f64, frames: &[CycleFrame], f: impl Fn(&CycleFrame) -> f64) -> Result<PeriodicSpline> {
    PeriodicSpline::new(period, frames.iter().map(f).collect())
}

impl TubularChart {
    /// Chart from frames sampled uniformly in arc length over one period.
    /// The `dk` fields are filled in from the curvature splines.
    pub fn from_samples(
        foliation: Foliation,
        mut samples: Vec<CycleFrame>,
        period: f64,
        multiplicity: u8,
    ) -> Result<Self> {
        let vec_splines = |pick: fn(&CycleFrame) -> Vector3<f64>| -> Result<[PeriodicSpline; 3]> {
            Ok([
                spline_of(period, &samples, |f| pick(f).x)?,
                spline_of(period, &samples, |f| pick(f).y)?,
                spline_of(period, &samples, |f| pick(f).z)?,
            ])
        };
        let gamma = vec_splines(|f| f.gamma)?;
        let axes = [vec_splines(|f| f.x1)?, vec_splines(|f| f.x2)?, vec_splines(|f| f.n)?];
        let curv = [
            spline_of(period, &samples, |f| f.k[0])?,
            spline_of(period, &samples, |f| f.k[1])?,
            spline_of(period, &samples, |f| f.k[2])?,
        ];
        for f in samples.iter_mut() {
            f.dk = std::array::from_fn(|i| curv[i].derivative(f.s));
        }
        let kmax = samples
            .iter()
            .flat_map(|f| f.k.iter())
            .fold(1.0f64, |m, k| m.max(k.abs()));
        Ok(Self {
            foliation,
            period,
            multiplicity,
            radius: 0.2 / kmax,
            samples,
            gamma,
            axes,
            curv,
        })
    }

    pub fn multiplicity(&self) -> u8 {
        self.multiplicity
    }

    pub fn samples(&self) -> &[CycleFrame] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_s(&self, i: usize) -> f64 {
        self.period * i as f64 / self.samples.len() as f64
    }

    pub fn max_abs_k3(&self) -> (f64, f64) {
        self.samples
            .iter()
            .map(|f| (f.k[2].abs(), f.s))
            .fold((0.0, 0.0), |a, b| if b.0 > a.0 { b } else { a })
    }

    /// Frame at arbitrary `s`: exact at sample points, interpolated and
    /// re-orthonormalized in between.
    pub fn frame_at(&self, s: f64) -> CycleFrame {
        let n = self.samples.len();
        let u = s.rem_euclid(self.period) * n as f64 / self.period;
        let i = u.round();
        if (u - i).abs() < 1e-9 {
            let mut f = self.samples[i as usize % n];
            f.s = s;
            return f;
        }
        let ev = |sp: &[PeriodicSpline; 3]| Vector3::new(sp[0].eval(s), sp[1].eval(s), sp[2].eval(s));
        let x1 = ev(&self.axes[0]).normalize();
        let nn = ev(&self.axes[2]);
        let nn = (nn - x1 * nn.dot(&x1)).normalize();
        CycleFrame {
            s,
            gamma: ev(&self.gamma),
            x1,
            x2: nn.cross(&x1),
            n: nn,
            k: std::array::from_fn(|i| self.curv[i].eval(s)),
            dk: std::array::from_fn(|i| self.curv[i].derivative(s)),
        }
    }

    /// Largest deviation of the spline-differentiated frame from the
    /// Darboux equations over the samples.
    pub fn darboux_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for f in &self.samples {
            let d = |sp: &[PeriodicSpline; 3]| {
                Vector3::new(sp[0].derivative(f.s), sp[1].derivative(f.s), sp[2].derivative(f.s))
            };
            let [x1p, x2p, np] = f.derivatives()[0];
            worst = worst
                .max((d(&self.axes[0]) - x1p).norm())
                .max((d(&self.axes[1]) - x2p).norm())
                .max((d(&self.axes[2]) - np).norm());
        }
        worst
    }

    /// Largest deviation from an orthonormal right-handed frame.
    pub fn frame_residual(&self) -> f64 {
        self.samples
            .iter()
            .map(|f| {
                let m = nalgebra::Matrix3::from_columns(&[f.x1, f.x2, f.n]);
                let gram = (m.transpose() * m - nalgebra::Matrix3::identity()).abs().max();
                gram.max((m.determinant() - 1.0).abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn export(&self) -> ChartExport<'_> {
        ChartExport {
            schema: 1,
            foliation: self.foliation,
            period: self.period,
            multiplicity: self.multiplicity,
            radius: self.radius,
            samples: &self.samples,
        }
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.export())?;
        Ok(())
    }
}

#[derive(Serialize)]
pub struct ChartExport<'a> {
    pub schema: u32,
    pub foliation: Foliation,
    pub period: f64,
    pub multiplicity: u8,
    pub radius: f64,
    pub samples: &'a [CycleFrame],
}

impl ChartMap for TubularChart {
    fn period(&self) -> f64 {
        self.period
    }

    fn map<S: Scalar>(&self, s: S, v: S, w: S) -> V3<S> {
        let f = self.frame_at(s.re());
        let d = s - S::from_f64(s.re());
        let half = d * d * S::from_f64(0.5);
        let [[x1p, x2p, np], [_, x2pp, npp]] = f.derivatives();
        let c = |u: &Vector3<f64>| geom::lift::<S>(u);
        let curve = |p0: &Vector3<f64>, p1: &Vector3<f64>, p2: &Vector3<f64>| {
            geom::add(&geom::add(&c(p0), &geom::scale(d, &c(p1))), &geom::scale(half, &c(p2)))
        };
        let g = curve(&f.gamma, &f.x1, &x1p);
        let a2 = curve(&f.x2, &x2p, &x2pp);
        let an = curve(&f.n, &np, &npp);
        geom::add(&geom::add(&g, &geom::scale(v, &a2)), &geom::scale(w, &an))
    }

    fn frame(&self, s: f64) -> CycleFrame {
        self.frame_at(s)
    }

    fn foliation(&self) -> Foliation {
        self.foliation
    }

    fn radius(&self) -> f64 {
        self.radius
    }
}

fn check_domain<C: ChartMap>(chart: &C, v: f64, w: f64) -> Result<()> {
    let radius = chart.radius();
    if v.abs() >= radius || w.abs() >= radius {
        return Err(Error::OutsideChart { v, w, radius });
    }
    Ok(())
}

/// Columns of `Dα` and the point `α(s, v, w)`.
fn chart_jacobian<S: Scalar, C: ChartMap>(chart: &C, s: S, v: S, w: S) -> (V3<S>, [V3<S>; 3]) {
    let z = S::zero();
    let seed = |x: S, on: bool| Dual::new(x, if on { S::one() } else { z });
    let mut t = [[z; 3]; 3];
    let mut p = [z; 3];
    for (a, col) in t.iter_mut().enumerate() {
        let out = chart.map(seed(s, a == 0), seed(v, a == 1), seed(w, a == 2));
        for i in 0..3 {
            col[i] = out[i].eps;
            p[i] = out[i].re;
        }
    }
    (p, t)
}

/// Coefficients of the pulled-back system
/// `L₁ds² + L₂ds dv + L₃ds dw + L₄dv² + L₅dv dw + L₆dw² = 0`,
/// `M₁ds + M₂dv + M₃dw = 0`.
#[derive(Clone, Copy, Debug)]
pub struct PulledBack<S> {
    pub l: [S; 6],
    pub m: [S; 3],
}

/// Pull back the mixed-product form of the unit field through the chart.
pub fn pull_back<S: Scalar, C: ChartMap>(field: &Field, chart: &C, s: S, v: S, w: S) -> Result<PulledBack<S>> {
    let (p, t) = chart_jacobian(chart, s, v, w);
    let (n, jac) = field.unit_value_jacobian(p)?;
    let sym: [V3<S>; 3] = std::array::from_fn(|i| std::array::from_fn(|j| jac[i][j] + jac[j][i]));
    let beta = |x: &V3<S>, y: &V3<S>| geom::triple(&geom::matvec(&sym, x), y, &n);
    let both = |x: &V3<S>, y: &V3<S>| beta(x, y) + beta(y, x);
    let [ts, tv, tw] = &t;
    Ok(PulledBack {
        l: [
            beta(ts, ts),
            both(ts, tv),
            both(ts, tw),
            beta(tv, tv),
            both(tv, tw),
            beta(tw, tw),
        ],
        m: [geom::dot(&n, ts), geom::dot(&n, tv), geom::dot(&n, tw)],
    })
}

/// Plane-equation coefficients only.
pub fn plane_coeffs<S: Scalar, C: ChartMap>(field: &Field, chart: &C, s: S, v: S, w: S) -> Result<V3<S>> {
    let (p, t) = chart_jacobian(chart, s, v, w);
    let n = field.unit_value(p)?;
    Ok([geom::dot(&n, &t[0]), geom::dot(&n, &t[1]), geom::dot(&n, &t[2])])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChartCoeffs {
    pub l: [f64; 6],
    pub m: [f64; 3],
    pub l1_v: f64,
    pub l1_w: f64,
    pub m1_v: f64,
    pub m1_w: f64,
}

pub fn chart_coeffs<C: ChartMap>(field: &Field, chart: &C, s: f64, v: f64, w: f64) -> Result<ChartCoeffs> {
    check_domain(chart, v, w)?;
    let c = Dual::constant;
    let dv = pull_back(field, chart, c(s), Dual::variable(v), c(w))?;
    let dw = pull_back(field, chart, c(s), c(v), Dual::variable(w))?;
    Ok(ChartCoeffs {
        l: dv.l.map(|x| x.re),
        m: dv.m.map(|x| x.re),
        l1_v: dv.l[0].eps,
        l1_w: dw.l[0].eps,
        m1_v: dv.m[0].eps,
        m1_w: dw.m[0].eps,
    })
}

/// `f` in `ω ∧ dω = f ds∧dv∧dw` for `ω = M₁ds + M₂dv + M₃dw`.
pub fn integrability_function<C: ChartMap>(field: &Field, chart: &C, s: f64, v: f64, w: f64) -> Result<f64> {
    check_domain(chart, v, w)?;
    let c = Dual::constant;
    let ds = plane_coeffs(field, chart, Dual::variable(s), c(v), c(w))?;
    let dv = plane_coeffs(field, chart, c(s), Dual::variable(v), c(w))?;
    let dw = plane_coeffs(field, chart, c(s), c(v), Dual::variable(w))?;
    let m = ds.map(|x| x.re);
    let d = |a: &[Dual<f64>; 3], i: usize| a[i].eps;
    Ok(m[0] * (d(&dv, 2) - d(&dw, 1)) + m[1] * (d(&dw, 0) - d(&ds, 2)) + m[2] * (d(&ds, 1) - d(&dv, 0)))
}

/// Worst values over the samples of the quantities that certify a principal
/// cycle: `L₁`, `L₄` on the cycle, `B₁ + k₃`, and the gap `|F₁ − k₂|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CycleChecks {
    pub max_l1: f64,
    pub max_l4: f64,
    pub max_b1_plus_k3: f64,
    pub min_gap: f64,
}

pub fn cycle_checks(field: &Field, chart: &TubularChart) -> Result<CycleChecks> {
    let rows = (0..chart.len())
        .into_par_iter()
        .map(|i| {
            let s = chart.sample_s(i);
            let cc = chart_coeffs(field, chart, s, 0.0, 0.0)?;
            let fc = frame_coeffs(field, chart, s, 1)?;
            Ok([cc.l[0].abs(), cc.l[3].abs(), (fc.b[0] + fc.k[2]).abs(), (fc.f[0] - fc.k[1]).abs()])
        })
        .collect::<Result<Vec<_>>>()?;
    let max = |i: usize| rows.iter().map(|r| r[i]).fold(0.0, f64::max);
    Ok(CycleChecks {
        max_l1: max(0),
        max_l4: max(1),
        max_b1_plus_k3: max(2),
        min_gap: rows.iter().map(|r| r[3]).fold(f64::INFINITY, f64::min),
    })
}

/// Taylor coefficients of the principal generating fields in the chart:
/// `𝐗₁ = X₁ + (A₁v + A₂w + …)X₂ + (B₁v + B₂w + …)N` and
/// `𝐗₂ = (C₁v + C₂w + …)X₁ + (1 + E₁v + E₂w + …)X₂ + (F₁v + F₂w + …)N`,
/// with `𝐗₁` the followed principal direction scaled to unit `X₁`-component
/// and `𝐗₂` the other unit principal direction.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FrameCoeffs {
    pub s: f64,
    pub k: [f64; 3],
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub c: [f64; 2],
    pub e: [f64; 2],
    pub f: [f64; 2],
    pub second: Option<SecondOrder>,
}

/// Second-order coefficients, indexed `[·₁₀, ·₁₁, ·₀₁]` (`vv`, `vw`, `ww`),
/// and the derived combinations of the unit-normal expansion.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SecondOrder {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub c: [f64; 3],
    pub e: [f64; 3],
    pub f: [f64; 3],
    pub b01: f64,
    pub f10: f64,
    pub f11: f64,
    pub f01: f64,
}

fn generating_fields<S: Scalar, C: ChartMap>(
    field: &Field,
    chart: &C,
    frame: &CycleFrame,
    v: S,
    w: S,
) -> Result<[V3<S>; 2]> {
    let p = chart.map(S::from_f64(frame.s), v, w);
    let (n, jac) = field.unit_value_jacobian(p)?;
    let pf = principal_frame(&n, &jac);
    let (e, o) = match chart.foliation() {
        Foliation::First => (pf.e1, pf.e2),
        Foliation::Second => (pf.e2, pf.e1),
    };
    let x1 = geom::lift::<S>(&frame.x1);
    let x2 = geom::lift::<S>(&frame.x2);
    let g1 = geom::scale(S::one() / geom::dot(&e, &x1), &e);
    let g2 = if geom::dot(&o, &x2).re() < 0.0 { geom::scale(-S::one(), &o) } else { o };
    Ok([g1, g2])
}

pub fn frame_coeffs<C: ChartMap>(field: &Field, chart: &C, s: f64, order: u8) -> Result<FrameCoeffs> {
    if !(1..=2).contains(&order) {
        return Err(Error::InvalidArgument(format!("frame coefficient order must be 1 or 2, got {order}")));
    }
    let fr = chart.frame(s);
    let proj = |g: &[Vector3<f64>; 2]| -> [[f64; 3]; 2] {
        g.map(|x| [x.dot(&fr.x1), x.dot(&fr.x2), x.dot(&fr.n)])
    };
    let mut out = FrameCoeffs {
        s,
        k: fr.k,
        ..Default::default()
    };
    let mut first = [[[0.0; 3]; 2]; 2];
    for (a, slot) in first.iter_mut().enumerate() {
        let (v, w) = if a == 0 {
            (Dual::variable(0.0), Dual::constant(0.0))
        } else {
            (Dual::constant(0.0), Dual::variable(0.0))
        };
        let g = generating_fields(field, chart, &fr, v, w)?;
        *slot = proj(&g.map(|x| Vector3::new(x[0].eps, x[1].eps, x[2].eps)));
    }
    for a in 0..2 {
        out.a[a] = first[a][0][1];
        out.b[a] = first[a][0][2];
        out.c[a] = first[a][1][0];
        out.e[a] = first[a][1][1];
        out.f[a] = first[a][1][2];
    }
    if order == 2 {
        let mut sec = [[[0.0; 3]; 2]; 3];
        for (idx, (i, j)) in [(0, 0), (0, 1), (1, 1)].into_iter().enumerate() {
            let seed = |k: usize| -> Dual<Dual<f64>> {
                let inner = if k == i { 1.0 } else { 0.0 };
                let outer = if k == j { 1.0 } else { 0.0 };
                Dual::new(Dual::new(0.0, inner), Dual::new(outer, 0.0))
            };
            let g = generating_fields(field, chart, &fr, seed(0), seed(1))?;
            sec[idx] = proj(&g.map(|x| Vector3::new(x[0].eps.eps, x[1].eps.eps, x[2].eps.eps)));
        }
        let pick = |fi: usize, ci: usize| [sec[0][fi][ci], sec[1][fi][ci], sec[2][fi][ci]];
        let so_a = pick(0, 1);
        let so_b = pick(0, 2);
        let so_c = pick(1, 0);
        let so_e = pick(1, 1);
        let so_f = pick(1, 2);
        let ([a1, a2], [b1, b2], [c1, c2], [e1, e2], [f1, f2]) = (out.a, out.b, out.c, out.e, out.f);
        out.second = Some(SecondOrder {
            b01: 0.5 * (2.0 * a2 * f2 - so_b[2]),
            f01: 0.5 * (2.0 * f2 * e2 + 2.0 * b2 * c2 - so_f[2]),
            f11: f1 * e2 + f2 * e1 + b1 * c2 + b2 * c1 - so_f[1],
            f10: 0.5 * (2.0 * f1 * e1 + 2.0 * b1 * c1 - so_f[0]),
            a: so_a,
            b: so_b,
            c: so_c,
            e: so_e,
            f: so_f,
        });
        let _ = a1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::presets;
    use crate::tracing::{find_cycle, CycleOptions};
    use approx::assert_relative_eq;
    use std::f64::consts::TAU;

    /// `α = ((1 − v) cos s, (1 − v) sin s, w)` around the unit circle.
    struct Polar;

    impl ChartMap for Polar {
        fn period(&self) -> f64 {
            TAU
        }

        fn map<S: Scalar>(&self, s: S, v: S, w: S) -> V3<S> {
            let r = S::one() - v;
            [r * s.cos(), r * s.sin(), w]
        }

        fn frame(&self, s: f64) -> CycleFrame {
            let (c, sn) = (s.cos(), s.sin());
            CycleFrame {
                s,
                gamma: Vector3::new(c, sn, 0.0),
                x1: Vector3::new(-sn, c, 0.0),
                x2: Vector3::new(0.0, 0.0, 1.0),
                n: Vector3::new(c, sn, 0.0),
                k: [0.0; 3],
                dk: [0.0; 3],
            }
        }

        fn foliation(&self) -> Foliation {
            Foliation::First
        }
    }

    #[test]
    fn polar_chart_matches_closed_forms() {
        for (lambda, a, eps) in [(0.1, 0.2, 0.5), (0.3, 0.1, 0.5), (0.2, 0.0, 0.5)] {
            let f = Field::new(presets::cycle_family(lambda, a, eps));
            for s in [0.0, 1.1, 4.0] {
                let cc = chart_coeffs(&f, &Polar, s, 0.0, 0.0).unwrap();
                assert!(cc.l[0].abs() < 1e-12 && cc.l[3].abs() < 1e-12);
                assert!(cc.l[1].abs() < 1e-12);
                assert_relative_eq!(cc.l[2], 2.0 * (a * eps + 1.0), epsilon = 1e-12);
                assert_relative_eq!(cc.l[4], -2.0 * lambda, epsilon = 1e-12);
                assert_relative_eq!(cc.l1_w, 2.0 * a * eps * (a - lambda), epsilon = 1e-12);
                assert_relative_eq!(cc.m1_v, -2.0 * lambda, epsilon = 1e-12);
            }
        }
    }

    fn circle_chart(lambda: f64, a: f64) -> (Field, TubularChart) {
        let f = Field::new(presets::cycle_family(lambda, a, 0.5));
        let cyc = find_cycle(&f, &Vector3::new(1.0, 0.0, 0.0), Foliation::First, &CycleOptions::default())
            .unwrap();
        let chart = build_chart(&f, &cyc).unwrap();
        (f, chart)
    }

    #[test]
    fn unit_circle_chart() {
        let (lambda, a) = (0.1, 0.2);
        let (f, chart) = circle_chart(lambda, a);
        assert_eq!(chart.multiplicity(), 1);
        assert_relative_eq!(chart.period(), TAU, epsilon = 1e-9);
        assert!(chart.frame_residual() < 1e-9);
        assert!(chart.darboux_residual() < 1e-6, "{}", chart.darboux_residual());
        for fr in chart.samples().iter().step_by(97) {
            // Geodesic curvature 0 and normal curvature −1 along the circle.
            assert!(fr.k[0].abs() < 1e-8);
            assert_relative_eq!(fr.k[1], -1.0, epsilon = 1e-8);
            assert!(fr.k[2].abs() < 1e-8);
            let pd = crate::pointwise::principal_data(&f.jet(&fr.gamma, 1).unwrap()).unwrap();
            assert_relative_eq!(pd.k1, -1.0, epsilon = 1e-8);
            assert_relative_eq!(pd.k2, a * 0.5, epsilon = 1e-8);
        }
        for i in [0, 300, 1500] {
            let s = chart.sample_s(i);
            let cc = chart_coeffs(&f, &chart, s, 0.0, 0.0).unwrap();
            assert!(cc.l[0].abs() < 1e-8 && cc.l[3].abs() < 1e-8, "{cc:?}");
            let fc = frame_coeffs(&f, &chart, s, 1).unwrap();
            assert_relative_eq!(cc.l[1], 2.0 * (fc.f[0] - fc.k[1]), epsilon = 1e-7);
            assert_relative_eq!(cc.l[2], fc.f[1], epsilon = 1e-7);
            assert!(cc.m[1].abs() < 1e-12);
            assert_relative_eq!(cc.m[2], 1.0, epsilon = 1e-12);
            assert_relative_eq!(cc.m1_v, 2.0 * fc.k[2], epsilon = 1e-7);
            assert_relative_eq!(cc.m1_w, -fc.b[1], epsilon = 1e-7);
            assert!((fc.b[0] + fc.k[2]).abs() < 1e-6);
        }
        assert!(chart_coeffs(&f, &chart, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn twisted_circle_integrability_on_cycle() {
        let f = Field::new(presets::twisted_circle(0.4));
        let cyc = find_cycle(&f, &Vector3::new(1.0, 0.0, 0.0), Foliation::First, &CycleOptions::default())
            .unwrap();
        let chart = build_chart(&f, &cyc).unwrap();
        assert!(chart.darboux_residual() < 1e-6, "{}", chart.darboux_residual());
        let (k3max, _) = chart.max_abs_k3();
        assert!(k3max > 0.3);
        for i in (0..chart.len()).step_by(129) {
            let fr = &chart.samples()[i];
            let fi = integrability_function(&f, &chart, fr.s, 0.0, 0.0).unwrap();
            assert!((fi + 2.0 * fr.k[2]).abs() < 1e-6, "{fi} vs {}", fr.k[2]);
            let cc = chart_coeffs(&f, &chart, fr.s, 0.0, 0.0).unwrap();
            assert!(cc.l[0].abs() < 1e-7 && cc.l[3].abs() < 1e-7);
            let fc = frame_coeffs(&f, &chart, fr.s, 1).unwrap();
            assert!((fc.b[0] + fc.k[2]).abs() < 1e-6);
            assert!((fc.f[0] - fc.k[1]).abs() > 1e-4);
        }
    }

    #[test]
    fn tori_are_integrable_in_the_chart() {
        let f = Field::new(presets::nested_tori(2.0));
        let cyc = find_cycle(&f, &Vector3::new(2.5, 0.0, 0.0), Foliation::First, &CycleOptions::default())
            .unwrap();
        let chart = build_chart(&f, &cyc).unwrap();
        let r = chart.radius() * 0.5;
        for i in (0..chart.len()).step_by(211) {
            assert!(chart.samples()[i].k[2].abs() < 1e-8);
            for (v, w) in [(0.0, 0.0), (r, 0.0), (0.0, -r), (r, r)] {
                let fi = integrability_function(&f, &chart, chart.sample_s(i), v, w).unwrap();
                assert!(fi.abs() < 1e-7, "{fi}");
            }
        }
    }

    #[test]
    fn pullback_vanishes_along_the_cycle() {
        let (f, chart) = circle_chart(0.3, 0.2);
        for i in (0..chart.len()).step_by(173) {
            let s = chart.sample_s(i);
            let pb = pull_back(&f, &chart, s, 0.0, 0.0).unwrap();
            assert!(pb.l[0].abs() < 1e-8 && pb.m[0].abs() < 1e-8);
        }
    }

    #[test]
    fn constant_field_coefficients_vanish() {
        let f = Field::new(presets::constant());
        let cc = chart_coeffs(&f, &Polar, 0.3, 0.1, 0.2).unwrap();
        assert_eq!(cc.l, [0.0; 6]);
    }

    #[test]
    fn multiplicity_flag() {
        let a = Vector3::new(0.0, 1.0, 0.0);
        assert_eq!(frame_multiplicity(&a, &a), 1);
        assert_eq!(frame_multiplicity(&a, &-a), 2);
    }

    #[test]
    fn export_has_samples() {
        let (_, chart) = circle_chart(0.1, 0.2);
        let mut buf = Vec::new();
        chart.write_json(&mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["schema"], 1);
        assert_eq!(v["samples"].as_array().unwrap().len(), DEFAULT_SAMPLES);
        assert!(v["samples"][0]["k"].is_array());
    }
}
