//! Linearized first-return maps of principal cycles.

use nalgebra::{Matrix2, Vector2, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::chart::{chart_coeffs, frame_coeffs, ChartMap, TubularChart};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::pointwise::integrability_scalar;
use crate::spline::PeriodicSpline;
use crate::tracing::{return_to_section, CycleCandidate, Section, TraceOptions};

/// Tolerance on `| |μ| − 1 |` for calling an eigenvalue hyperbolic.
pub const UNIT_TOL: f64 = 1e-6;
/// Below this distance from the unit circle an eigenvalue is unambiguously
/// on it; between this and [`UNIT_TOL`] both labels are reported.
pub const MARGINAL_TOL: f64 = 1e-9;

/// `v' = M(s) v` for the chart offsets `(v, w)` of nearby leaves.
#[derive(Clone, Debug)]
pub struct VariationalSystem {
    period: f64,
    multiplicity: u8,
    s: Vec<f64>,
    m: Vec<Matrix2<f64>>,
    det_a: Vec<f64>,
    splines: [[PeriodicSpline; 2]; 2],
}

fn spline_entries(period: f64, m: &[Matrix2<f64>]) -> Result<[[PeriodicSpline; 2]; 2]> {
    let sp = |i: usize, j: usize| PeriodicSpline::new(period, m.iter().map(|x| x[(i, j)]).collect());
    Ok([[sp(0, 0)?, sp(0, 1)?], [sp(1, 0)?, sp(1, 1)?]])
}

/// Sample `M = A⁻¹B` with `A = [[L₂, L₃], [M₂, M₃]]` and
/// `B = −[[∂L₁/∂v, ∂L₁/∂w], [∂M₁/∂v, ∂M₁/∂w]]` at the chart samples.
pub fn variational_system(field: &Field, chart: &TubularChart) -> Result<VariationalSystem> {
    let s: Vec<f64> = (0..chart.len()).map(|i| chart.sample_s(i)).collect();
    let rows: Vec<(Matrix2<f64>, f64)> = s
        .par_iter()
        .map(|&si| {
            let c = chart_coeffs(field, chart, si, 0.0, 0.0)?;
            let a = Matrix2::new(c.l[1], c.l[2], c.m[1], c.m[2]);
            let b = -Matrix2::new(c.l1_v, c.l1_w, c.m1_v, c.m1_w);
            let det = a.determinant();
            if det.abs() < 1e-9 * (1.0 + a.abs().max()) {
                return Err(Error::DegenerateVariational { s: si, det });
            }
            Ok((a.try_inverse().expect("nonzero determinant") * b, det))
        })
        .collect::<Result<_>>()?;
    let (m, det_a): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    VariationalSystem::from_samples(chart.period(), chart.multiplicity(), m, det_a)
}

impl VariationalSystem {
    /// System from `M` sampled uniformly on `[0, period)`.
    pub fn from_samples(period: f64, multiplicity: u8, m: Vec<Matrix2<f64>>, det_a: Vec<f64>) -> Result<Self> {
        let n = m.len();
        let splines = spline_entries(period, &m)?;
        Ok(Self {
            period,
            multiplicity,
            s: (0..n).map(|i| period * i as f64 / n as f64).collect(),
            m,
            det_a,
            splines,
        })
    }

    /// Constant system, mainly for tests and examples.
    pub fn constant(period: f64, m: Matrix2<f64>) -> Self {
        Self::from_samples(period, 1, vec![m; 16], vec![1.0; 16]).expect("valid samples")
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn multiplicity(&self) -> u8 {
        self.multiplicity
    }

    pub fn sample_points(&self) -> &[f64] {
        &self.s
    }

    pub fn samples(&self) -> &[Matrix2<f64>] {
        &self.m
    }

    pub fn det_a(&self) -> &[f64] {
        &self.det_a
    }

    pub fn eval(&self, s: f64) -> Matrix2<f64> {
        Matrix2::from_fn(|i, j| self.splines[i][j].eval(s))
    }

    pub fn derivative(&self, s: f64) -> Matrix2<f64> {
        Matrix2::from_fn(|i, j| self.splines[i][j].derivative(s))
    }

    pub fn trace_integral(&self) -> f64 {
        self.splines[0][0].integral() + self.splines[1][1].integral()
    }

    /// Same system with `M` replaced by `M + ΔM` sample by sample.
    pub fn perturbed(&self, delta: impl Fn(usize, f64) -> Matrix2<f64>) -> Result<Self> {
        let m: Vec<_> = self.m.iter().enumerate().map(|(i, x)| x + delta(i, self.s[i])).collect();
        Self::from_samples(self.period, self.multiplicity, m, self.det_a.clone())
    }

    /// `U(period)` from `U' = MU`, `U(0) = I` with `steps` RK4 steps.
    pub fn monodromy(&self, steps: usize) -> Matrix2<f64> {
        self.fundamental(steps, |_, _| {})
    }

    /// Integrate and report `U` at each step end through `visit`.
    pub fn fundamental(&self, steps: usize, mut visit: impl FnMut(f64, &Matrix2<f64>)) -> Matrix2<f64> {
        let h = self.period / steps as f64;
        let mut u = Matrix2::identity();
        for k in 0..steps {
            let s = h * k as f64;
            let mid = self.eval(s + 0.5 * h);
            let k1 = self.eval(s) * u;
            let k2 = mid * (u + k1 * (0.5 * h));
            let k3 = mid * (u + k2 * (0.5 * h));
            let k4 = self.eval(s + h) * (u + k3 * h);
            u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            visit(s + h, &u);
        }
        u
    }

    /// Monodromy with steps doubled from 4096 until successive results
    /// differ by less than `1e-9`.
    pub fn converged_monodromy(&self) -> Result<(Matrix2<f64>, usize)> {
        let mut steps = 4096;
        let mut u = self.monodromy(steps);
        while steps < 1 << 20 {
            steps *= 2;
            let next = self.monodromy(steps);
            let change = (next - u).abs().max();
            u = next;
            if change < 1e-9 {
                return Ok((u, steps));
            }
        }
        if u.iter().all(|x| x.is_finite()) {
            Ok((u, steps))
        } else {
            Err(Error::Integration("monodromy did not converge".into()))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    HyperbolicSaddle,
    HyperbolicNode,
    SemiHyperbolic,
    Nonhyperbolic,
}

impl Classification {
    pub fn label(self) -> &'static str {
        match self {
            Classification::HyperbolicSaddle => "hyperbolic-saddle",
            Classification::HyperbolicNode => "hyperbolic-node",
            Classification::SemiHyperbolic => "semi-hyperbolic",
            Classification::Nonhyperbolic => "nonhyperbolic",
        }
    }

    pub fn is_hyperbolic(self) -> bool {
        matches!(self, Classification::HyperbolicSaddle | Classification::HyperbolicNode)
    }
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

fn classify_with(moduli: [f64; 2], tol: f64) -> Classification {
    let off = moduli.map(|m| (m - 1.0).abs() > tol);
    match off {
        [true, true] => {
            if (moduli[0] - 1.0) * (moduli[1] - 1.0) < 0.0 {
                Classification::HyperbolicSaddle
            } else {
                Classification::HyperbolicNode
            }
        }
        [false, false] => Classification::Nonhyperbolic,
        _ => Classification::SemiHyperbolic,
    }
}

/// Label from eigenvalue moduli, plus the alternative label when some
/// modulus lies in the marginal band `(1e-9, 1e-6]` around 1.
pub fn classify(moduli: [f64; 2]) -> (Classification, Option<Classification>) {
    let main = classify_with(moduli, UNIT_TOL);
    let marginal = moduli.iter().any(|m| {
        let d = (m - 1.0).abs();
        d > MARGINAL_TOL && d <= UNIT_TOL
    });
    let alt = classify_with(moduli, MARGINAL_TOL);
    (main, (marginal && alt != main).then_some(alt))
}

pub fn eigenvalues(u: &Matrix2<f64>) -> [Complex64; 2] {
    let tr = u.trace();
    let det = u.determinant();
    let disc = Complex64::new(tr * tr / 4.0 - det, 0.0).sqrt();
    let half = Complex64::new(tr / 2.0, 0.0);
    let (a, b) = (half + disc, half - disc);
    if a.norm() <= b.norm() {
        [a, b]
    } else {
        [b, a]
    }
}

fn ser_eigen<S: Serializer>(e: &[Complex64; 2], s: S) -> std::result::Result<S::Ok, S::Error> {
    e.map(|z| [z.re, z.im]).serialize(s)
}

fn ser_matrix<S: Serializer>(m: &Matrix2<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]].serialize(s)
}

#[derive(Clone, Debug, Serialize)]
pub struct ReturnMapReport {
    #[serde(serialize_with = "ser_eigen")]
    pub eigenvalues: [Complex64; 2],
    pub classification: Classification,
    /// Second label when an eigenvalue is in the marginal band.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alternative: Option<Classification>,
    pub period: f64,
    pub multiplicity: u8,
    /// Relative deviation of `det U` from `exp ∫ tr M`.
    pub det_check_residual: f64,
    #[serde(serialize_with = "ser_matrix")]
    pub monodromy: Matrix2<f64>,
    pub steps: usize,
}

impl ReturnMapReport {
    pub fn from_monodromy(u: Matrix2<f64>, period: f64, multiplicity: u8, trace_integral: f64, steps: usize) -> Self {
        let eigenvalues = eigenvalues(&u);
        let (classification, alternative) = classify(eigenvalues.map(|z| z.norm()));
        let liouville = trace_integral.exp();
        Self {
            eigenvalues,
            classification,
            alternative,
            period,
            multiplicity,
            det_check_residual: ((u.determinant() - liouville) / liouville).abs(),
            monodromy: u,
            steps,
        }
    }

    pub fn moduli(&self) -> [f64; 2] {
        self.eigenvalues.map(|z| z.norm())
    }
}

/// Integrate the variational system over its period and classify.
pub fn poincare_derivative(sys: &VariationalSystem) -> Result<ReturnMapReport> {
    let (u, steps) = sys.converged_monodromy()?;
    Ok(ReturnMapReport::from_monodromy(
        u,
        sys.period(),
        sys.multiplicity(),
        sys.trace_integral(),
        steps,
    ))
}

/// The section `{s = 0}` of the chart, coordinatized like the chart.
pub fn chart_section(chart: &TubularChart, radius: f64) -> Section {
    let f = chart.frame_at(0.0);
    Section {
        anchor: f.gamma,
        normal: f.x1,
        axes: [f.x2, f.n],
        radius,
    }
}

/// Central finite differences of the traced return map at the cycle, in
/// chart coordinates, with offsets `±h` on each axis.
pub fn fd_return_map(field: &Field, cycle: &CycleCandidate, chart: &TubularChart, h: f64) -> Result<Matrix2<f64>> {
    if !(h > 0.0) || h >= chart.radius() {
        return Err(Error::OutsideChart {
            v: h,
            w: h,
            radius: chart.radius(),
        });
    }
    let section = chart_section(chart, cycle.section.radius.max(4.0 * h));
    let opts = TraceOptions {
        step: cycle.step,
        arc_budget: 4.0 * chart.period(),
        ..TraceOptions::default()
    };
    let turns = chart.multiplicity() as usize;
    let offsets = [
        Vector2::new(h, 0.0),
        Vector2::new(-h, 0.0),
        Vector2::new(0.0, h),
        Vector2::new(0.0, -h),
    ];
    let images: Vec<Vector2<f64>> = offsets
        .par_iter()
        .map(|q| {
            let mut q = *q;
            for _ in 0..turns {
                q = return_to_section(field, &section, &q, cycle.foliation, &opts, 4, false)?.coords;
            }
            Ok(q)
        })
        .collect::<Result<_>>()?;
    let c0 = (images[0] - images[1]) / (2.0 * h);
    let c1 = (images[2] - images[3]) / (2.0 * h);
    Ok(Matrix2::from_columns(&[c0, c1]))
}

/// Monodromy in the integrable case assembled from frame coefficients:
/// `v' = a v + b w`, `w' = d w` with `a = −F₁′/(F₁ − k₂)`,
/// `b = −(B₂(F₂ + k₁) + F₂′)/(F₁ − k₂)`, `d = B₂`.
#[derive(Clone, Debug, Serialize)]
pub struct IntegrableReport {
    pub report: ReturnMapReport,
    /// Largest `|⟨curl η, η⟩|/|η|²` met on the cycle and on a ring around it.
    pub integrability_residual: f64,
    /// `∂v/∂v₀` at the chart samples.
    pub dv_dv0: Vec<f64>,
}

pub fn integrable_closed_form(field: &Field, chart: &TubularChart) -> Result<IntegrableReport> {
    let r = 0.25 * chart.radius();
    let ring = [(0.0, 0.0), (r, 0.0), (-r, 0.0), (0.0, r), (0.0, -r)];
    let residual = (0..chart.len())
        .into_par_iter()
        .map(|i| {
            let s = chart.sample_s(i);
            ring.iter()
                .filter(|(v, w)| i % 16 == 0 || (*v, *w) == (0.0, 0.0))
                .map(|&(v, w)| {
                    let p = chart.map(s, v, w);
                    let jet = field.jet(&Vector3::new(p[0], p[1], p[2]), 1)?;
                    integrability_scalar(&jet).map(f64::abs)
                })
                .try_fold(0.0, |acc, x| x.map(|x| f64::max(acc, x)))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    if residual > 1e-6 {
        return Err(Error::NonIntegrable(residual));
    }
    let period = chart.period();
    let coeffs = (0..chart.len())
        .into_par_iter()
        .map(|i| frame_coeffs(field, chart, chart.sample_s(i), 1))
        .collect::<Result<Vec<_>>>()?;
    let sp = |g: &dyn Fn(&crate::chart::FrameCoeffs) -> f64| {
        PeriodicSpline::new(period, coeffs.iter().map(g).collect())
    };
    let f1 = sp(&|c| c.f[0])?;
    let f2 = sp(&|c| c.f[1])?;
    let gap = sp(&|c| c.f[0] - c.k[1])?;
    let b2 = sp(&|c| c.b[1])?;
    let f2k1 = sp(&|c| c.f[1] + c.k[0])?;
    let a = |s: f64| -f1.derivative(s) / gap.eval(s);
    let b = |s: f64| -(b2.eval(s) * f2k1.eval(s) + f2.derivative(s)) / gap.eval(s);
    let d = |s: f64| b2.eval(s);

    // State (∫a, ∫d, ∫ e^{−A} b e^{D}).
    let rhs = |s: f64, y: [f64; 3]| [a(s), d(s), (-y[0]).exp() * b(s) * y[1].exp()];
    let n = chart.len();
    let per = 4;
    let h = period / (n * per) as f64;
    let mut y = [0.0; 3];
    let mut dv_dv0 = vec![1.0];
    for k in 0..n * per {
        let s = h * k as f64;
        let k1 = rhs(s, y);
        let k2 = rhs(s + 0.5 * h, std::array::from_fn(|i| y[i] + 0.5 * h * k1[i]));
        let k3 = rhs(s + 0.5 * h, std::array::from_fn(|i| y[i] + 0.5 * h * k2[i]));
        let k4 = rhs(s + h, std::array::from_fn(|i| y[i] + h * k3[i]));
        for i in 0..3 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if (k + 1) % per == 0 && dv_dv0.len() < n {
            dv_dv0.push(y[0].exp());
        }
    }
    let (ea, ed) = (y[0].exp(), y[1].exp());
    let u = Matrix2::new(ea, ea * y[2], 0.0, ed);
    let report = ReturnMapReport::from_monodromy(u, period, chart.multiplicity(), y[0] + y[1], n * per);
    Ok(IntegrableReport {
        report,
        integrability_residual: residual,
        dv_dv0,
    })
}
