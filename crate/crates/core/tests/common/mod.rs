#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::Vector3;
use planefold::chart::{build_chart, TubularChart};
use planefold::field::{presets, Field};
use planefold::returnmap::{variational_system, VariationalSystem};
use planefold::tracing::{find_cycle, CycleCandidate, CycleOptions, Foliation};

pub const EPS: f64 = 0.5;

pub struct Pipeline {
    pub field: Field,
    pub cycle: CycleCandidate,
    pub chart: TubularChart,
    pub system: VariationalSystem,
}

pub fn pipeline(field: Field, seed: Vector3<f64>, hint: Vector3<f64>) -> Pipeline {
    let cycle = find_cycle(&field, &seed, Foliation::First, &CycleOptions::default().oriented(hint)).unwrap();
    let chart = build_chart(&field, &cycle).unwrap();
    let system = variational_system(&field, &chart).unwrap();
    Pipeline {
        field,
        cycle,
        chart,
        system,
    }
}

/// The unit-circle cycle of the planar family, traversed counterclockwise.
pub fn family(lambda: f64, a: f64) -> Pipeline {
    pipeline(
        Field::new(presets::cycle_family(lambda, a, EPS)),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(0.0, 1.0, 0.0),
    )
}

/// Closed-form multipliers of the planar family: `(w, v)` channels.
pub fn family_multipliers(lambda: f64, a: f64) -> [f64; 2] {
    [
        (-4.0 * PI * lambda).exp(),
        (2.0 * PI * a * EPS * (lambda - a) / (a * EPS + 1.0)).exp(),
    ]
}

pub const TORUS_MAJOR: f64 = 2.0;
pub const TORUS_MINOR: f64 = 0.5;

/// Meridian of the torus of minor radius 0.5 through `(2.5, 0, 0)`.
pub fn torus_meridian() -> Pipeline {
    pipeline(
        Field::new(presets::nested_tori(TORUS_MAJOR)),
        Vector3::new(TORUS_MAJOR + TORUS_MINOR, 0.0, 0.0),
        Vector3::new(0.0, 0.0, 1.0),
    )
}

/// Meridian angle of a point on the torus.
pub fn meridian_angle(p: &Vector3<f64>) -> f64 {
    p.z.atan2(p.xy().norm() - TORUS_MAJOR)
}

pub fn twisted(beta: f64) -> Pipeline {
    pipeline(
        Field::new(presets::twisted_circle(beta)),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(0.0, 1.0, 0.0),
    )
}

/// First row of `M` from second-order frame coefficients, valid where
/// `k₃ ≡ 0`, at every `stride`-th chart sample: `(s, M₁₁, M₁₂)`.
pub fn coefficient_first_row(p: &Pipeline, stride: usize) -> Vec<(usize, f64, f64)> {
    use planefold::chart::{frame_coeffs, ChartMap};
    use planefold::spline::PeriodicSpline;
    let chart = &p.chart;
    let fcs: Vec<_> = (0..chart.len())
        .map(|i| frame_coeffs(&p.field, chart, chart.sample_s(i), 2).unwrap())
        .collect();
    let f1 = PeriodicSpline::new(chart.period(), fcs.iter().map(|c| c.f[0]).collect()).unwrap();
    let f2 = PeriodicSpline::new(chart.period(), fcs.iter().map(|c| c.f[1]).collect()).unwrap();
    (0..chart.len())
        .step_by(stride)
        .map(|i| {
            let c = &fcs[i];
            let so = c.second.as_ref().unwrap();
            let s = chart.sample_s(i);
            let [k1, k2, k3] = c.k;
            let [a1, a2] = c.a;
            let [_, b2] = c.b;
            let [f1v, f2v] = c.f;
            let den = 2.0 * (k2 - f1v);
            let m11 = (-(f2v + k1) * k3 + (b2 - 2.0 * a1) * f1v + so.b[0] + f1.derivative(s)) / den;
            let m12 = k3 + (k1 * b2 - a2 * f1v + (2.0 * b2 - a1) * f2v + so.b[1] + f2.derivative(s)) / den;
            (i, m11, m12)
        })
        .collect()
}
