//! Bilinear control of the variational system: bracket sequences, the rank
//! test for controllability, the perturbed system and a hyperbolization
//! search.
//!
//! The brackets follow `B⁰ᵢ = Eᵢ`, `Bʲᵢ = d/ds Bʲ⁻¹ᵢ − [Bʲ⁻¹ᵢ, M]` with
//! `[X, Y] = XY − YX`, so `B¹₁ = ME₁ − E₁M` has lower-left entry `M₂₁ = −2k₃`.

use nalgebra::{DMatrix, Matrix2};
use rayon::prelude::*;
use serde::Serialize;

use crate::chart::{frame_coeffs, FrameCoeffs, TubularChart};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::returnmap::{eigenvalues, ReturnMapReport, VariationalSystem, UNIT_TOL};
use crate::spline::PeriodicSpline;

/// Control directions `E₁ = e₁₁`, `E₂ = e₁₂`, `E₃ = e₂₂`.
pub fn control_matrices() -> [Matrix2<f64>; 3] {
    [
        Matrix2::new(1.0, 0.0, 0.0, 0.0),
        Matrix2::new(0.0, 1.0, 0.0, 0.0),
        Matrix2::new(0.0, 0.0, 0.0, 1.0),
    ]
}

fn bracket(x: &Matrix2<f64>, y: &Matrix2<f64>) -> Matrix2<f64> {
    x * y - y * x
}

#[derive(Clone, Debug)]
pub struct BracketSequence {
    pub depth: usize,
    pub s: Vec<f64>,
    /// `b[j][i][k]`: depth `j`, channel `i`, sample `k`.
    pub b: Vec<[Vec<Matrix2<f64>>; 3]>,
}

pub fn bracket_sequence(sys: &VariationalSystem, depth: usize) -> Result<BracketSequence> {
    let s = sys.sample_points().to_vec();
    let n = s.len();
    let period = sys.period();
    let m = sys.samples();
    let mut b: Vec<[Vec<Matrix2<f64>>; 3]> = vec![control_matrices().map(|e| vec![e; n])];
    for _ in 0..depth {
        let prev = b.last().expect("depth 0 present");
        let mut next: [Vec<Matrix2<f64>>; 3] = Default::default();
        for (i, chan) in prev.iter().enumerate() {
            let deriv = derivative_samples(period, &s, chan)?;
            next[i] = (0..n).map(|k| deriv[k] - bracket(&chan[k], &m[k])).collect();
        }
        b.push(next);
    }
    Ok(BracketSequence { depth, s, b })
}

fn derivative_samples(period: f64, s: &[f64], x: &[Matrix2<f64>]) -> Result<Vec<Matrix2<f64>>> {
    let mut out = vec![Matrix2::zeros(); x.len()];
    for r in 0..2 {
        for c in 0..2 {
            let vals: Vec<f64> = x.iter().map(|m| m[(r, c)]).collect();
            if vals.iter().all(|v| *v == vals[0]) {
                continue;
            }
            let sp = PeriodicSpline::new(period, vals)?;
            for (k, sk) in s.iter().enumerate() {
                out[k][(r, c)] = sp.derivative(*sk);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpanRank {
    pub rank: usize,
    pub controllable: bool,
    pub singular_values: [f64; 4],
}

/// Rank of `span{Bʲᵢ(s̄)}` in the 4-dimensional space of 2×2 matrices.
pub fn span_rank(seq: &BracketSequence, sample: usize) -> SpanRank {
    span_rank_to(seq, sample, seq.depth)
}

pub fn span_rank_to(seq: &BracketSequence, sample: usize, depth: usize) -> SpanRank {
    let cols: Vec<Matrix2<f64>> = seq.b[..=depth.min(seq.depth)]
        .iter()
        .flat_map(|level| level.iter().map(|chan| chan[sample]))
        .collect();
    let mat = DMatrix::from_fn(4, cols.len(), |r, c| cols[c][(r / 2, r % 2)]);
    let sv = mat.svd(false, false).singular_values;
    let smax = sv.max();
    let rank = sv.iter().filter(|x| **x > 1e-8 * smax && smax > 0.0).count();
    let mut singular_values = [0.0; 4];
    for (k, v) in sv.iter().take(4).enumerate() {
        singular_values[k] = *v;
    }
    SpanRank {
        rank,
        controllable: rank == 4,
        singular_values,
    }
}

/// A periodic function `c₀ + Σ aₖ cos(2πks/L) + bₖ sin(2πks/L)` stored as
/// `[c₀, a₁, b₁, a₂, b₂, …]`.
pub fn fourier_eval(coeffs: &[f64], s: f64, period: f64) -> f64 {
    let mut v = coeffs.first().copied().unwrap_or(0.0);
    let t = std::f64::consts::TAU * s / period;
    for (k, pair) in coeffs[coeffs.len().min(1)..].chunks(2).enumerate() {
        let w = (k + 1) as f64 * t;
        v += pair[0] * w.cos();
        if let Some(b) = pair.get(1) {
            v += b * w.sin();
        }
    }
    v
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PerturbationSpec {
    pub epsilon: f64,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    pub phi3: Vec<f64>,
    /// Eigenvalues `[re, im]` of the perturbed monodromy, once certified.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certified_eigenvalues: Option<[[f64; 2]; 2]>,
}

impl PerturbationSpec {
    pub fn new(epsilon: f64, phi: [Vec<f64>; 3]) -> Self {
        let [phi1, phi2, phi3] = phi;
        Self {
            epsilon,
            phi1,
            phi2,
            phi3,
            certified_eigenvalues: None,
        }
    }

    pub fn phi(&self, s: f64, period: f64) -> [f64; 3] {
        [
            fourier_eval(&self.phi1, s, period),
            fourier_eval(&self.phi2, s, period),
            fourier_eval(&self.phi3, s, period),
        ]
    }
}

/// The quantities of the frame expansion the perturbation formula needs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ControlCoeffs {
    pub k1: f64,
    pub k2: f64,
    pub f1: f64,
    pub f2: f64,
}

impl From<&FrameCoeffs> for ControlCoeffs {
    fn from(c: &FrameCoeffs) -> Self {
        Self {
            k1: c.k[0],
            k2: c.k[1],
            f1: c.f[0],
            f2: c.f[1],
        }
    }
}

/// Frame quantities at the sample points of a system built from `chart`.
pub fn control_coeffs(field: &Field, chart: &TubularChart) -> Result<Vec<ControlCoeffs>> {
    (0..chart.len())
        .into_par_iter()
        .map(|i| frame_coeffs(field, chart, chart.sample_s(i), 1).map(|c| ControlCoeffs::from(&c)))
        .collect()
}

/// Change of `M` caused by moving the first generating field by
/// `ε(φ₁w + φ₂v² + φ₃vw)N`:
/// `ε[[(φ₁F₁ + 2φ₂)/(2(k₂ − F₁)), ((2F₂ + k₁)φ₁ + φ₃)/(2(k₂ − F₁))], [0, φ₁]]`.
pub fn perturbation_delta(c: &ControlCoeffs, phi: [f64; 3], epsilon: f64) -> Matrix2<f64> {
    let den = 2.0 * (c.k2 - c.f1);
    let [p1, p2, p3] = phi;
    Matrix2::new(
        (p1 * c.f1 + 2.0 * p2) / den,
        ((2.0 * c.f2 + c.k1) * p1 + p3) / den,
        0.0,
        p1,
    ) * epsilon
}

pub fn perturbed_system(
    sys: &VariationalSystem,
    spec: &PerturbationSpec,
    coeffs: &[ControlCoeffs],
) -> Result<VariationalSystem> {
    if coeffs.len() != sys.samples().len() {
        return Err(Error::InvalidArgument(format!(
            "{} frame samples for a system with {} samples",
            coeffs.len(),
            sys.samples().len()
        )));
    }
    if spec.epsilon == 0.0 {
        return Ok(sys.clone());
    }
    let period = sys.period();
    sys.perturbed(|i, s| perturbation_delta(&coeffs[i], spec.phi(s, period), spec.epsilon))
}

#[derive(Clone, Debug, Serialize)]
pub struct HyperbolizeOptions {
    pub budget: f64,
    /// Number of halvings of the budget tried, smallest first.
    pub levels: usize,
    pub max_rounds: usize,
    /// Fourier modes per control (0 = constants only).
    pub modes: usize,
    pub steps: usize,
}

impl Default for HyperbolizeOptions {
    fn default() -> Self {
        Self {
            budget: 0.05,
            levels: 6,
            max_rounds: 12,
            modes: 1,
            steps: 4096,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Hyperbolization {
    pub spec: PerturbationSpec,
    pub report: ReturnMapReport,
    /// `min | |μᵢ| − 1 |` after certification.
    pub margin: f64,
}

fn margin_of(u: &Matrix2<f64>) -> f64 {
    eigenvalues(u)
        .iter()
        .map(|z| (z.norm() - 1.0).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Search for a small perturbation making the cycle hyperbolic.
///
/// For each `ε` on the grid `budget/2^levels, …, budget/2, budget`,
/// coordinate descent over the Fourier coefficients of `φ₁, φ₂, φ₃` in unit
/// steps maximizes the distance of the eigenvalue moduli from 1 until it
/// exceeds `10·1e-6`. A candidate is accepted only after re-integrating the
/// perturbed system with twice the steps.
pub fn hyperbolize(
    sys: &VariationalSystem,
    coeffs: &[ControlCoeffs],
    opts: &HyperbolizeOptions,
) -> Result<Hyperbolization> {
    let width = 1 + 2 * opts.modes;
    let zero = PerturbationSpec::new(0.0, [vec![0.0; width], vec![0.0; width], vec![0.0; width]]);
    let base = sys.monodromy(opts.steps);
    if margin_of(&base) > 10.0 * UNIT_TOL {
        return certify(sys, coeffs, zero, opts)
            .and_then(|h| h.ok_or_else(|| exhausted(margin_of(&base), 0.0)));
    }
    let target = 10.0 * UNIT_TOL;
    let mut best = (margin_of(&base), 0.0);
    for level in (0..=opts.levels).rev() {
        let epsilon = opts.budget / f64::powi(2.0, level as i32);
        let mut coef = vec![0.0; 3 * width];
        let spec_of = |c: &[f64]| {
            PerturbationSpec::new(
                epsilon,
                [c[..width].to_vec(), c[width..2 * width].to_vec(), c[2 * width..].to_vec()],
            )
        };
        let eval = |c: &[f64]| -> f64 {
            perturbed_system(sys, &spec_of(c), coeffs)
                .map(|p| margin_of(&p.monodromy(opts.steps)))
                .unwrap_or(0.0)
        };
        let mut current = eval(&coef);
        for _ in 0..opts.max_rounds {
            if current > target {
                break;
            }
            let trials: Vec<(f64, Vec<f64>)> = (0..coef.len() * 2)
                .into_par_iter()
                .map(|t| {
                    let mut c = coef.clone();
                    c[t / 2] += if t % 2 == 0 { 1.0 } else { -1.0 };
                    (eval(&c), c)
                })
                .collect();
            let (m, c) = trials
                .into_iter()
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .expect("non-empty");
            if m <= current {
                break;
            }
            current = m;
            coef = c;
        }
        if current > best.0 {
            best = (current, epsilon);
        }
        if current > target {
            if let Some(h) = certify(sys, coeffs, spec_of(&coef), opts)? {
                return Ok(h);
            }
        }
    }
    Err(exhausted(best.0, best.1))
}

fn exhausted(best_margin: f64, best_epsilon: f64) -> Error {
    Error::SearchExhausted {
        best_margin,
        best_epsilon,
    }
}

fn certify(
    sys: &VariationalSystem,
    coeffs: &[ControlCoeffs],
    mut spec: PerturbationSpec,
    opts: &HyperbolizeOptions,
) -> Result<Option<Hyperbolization>> {
    let pert = perturbed_system(sys, &spec, coeffs)?;
    let steps = 2 * opts.steps;
    let u = pert.monodromy(steps);
    let report = ReturnMapReport::from_monodromy(u, pert.period(), pert.multiplicity(), pert.trace_integral(), steps);
    let margin = margin_of(&u);
    if !(margin > UNIT_TOL && report.classification.is_hyperbolic()) {
        return Ok(None);
    }
    spec.certified_eigenvalues = Some(report.eigenvalues.map(|z| [z.re, z.im]));
    Ok(Some(Hyperbolization { spec, report, margin }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::TAU;

    fn sys_with(m: impl Fn(f64) -> Matrix2<f64>, n: usize) -> VariationalSystem {
        let s: Vec<f64> = (0..n).map(|i| TAU * i as f64 / n as f64).collect();
        VariationalSystem::from_samples(TAU, 1, s.iter().map(|x| m(*x)).collect(), vec![1.0; n]).unwrap()
    }

    fn flat_coeffs(n: usize) -> Vec<ControlCoeffs> {
        vec![
            ControlCoeffs {
                k1: 0.0,
                k2: -1.0,
                f1: 0.0,
                f2: 0.0
            };
            n
        ]
    }

    #[test]
    fn depth_zero_is_the_control_basis() {
        let sys = sys_with(|s| Matrix2::new(0.1, s.sin(), -2.0 * s.cos(), 0.3), 256);
        let seq = bracket_sequence(&sys, 0).unwrap();
        for (i, e) in control_matrices().iter().enumerate() {
            assert!(seq.b[0][i].iter().all(|m| m == e));
        }
        assert_eq!(span_rank(&seq, 10).rank, 3);
        assert!(!span_rank(&seq, 10).controllable);
    }

    #[test]
    fn first_bracket_sign() {
        let (m11, m12, m21, m22) = (0.3, -0.7, 1.9, 0.4);
        let sys = VariationalSystem::constant(TAU, Matrix2::new(m11, m12, m21, m22));
        let seq = bracket_sequence(&sys, 1).unwrap();
        let b11 = seq.b[1][0][3];
        assert_relative_eq!(b11, Matrix2::new(0.0, -m12, m21, 0.0), epsilon = 1e-12);
        assert_eq!(span_rank(&seq, 3).rank, 4);
    }

    #[test]
    fn diagonal_constant_system_commutes_with_diagonal_controls() {
        let sys = VariationalSystem::constant(TAU, Matrix2::new(0.2, 0.0, 0.0, -0.5));
        let seq = bracket_sequence(&sys, 2).unwrap();
        assert!(seq.b[1][0][0].abs().max() < 1e-12);
        assert!(seq.b[1][2][0].abs().max() < 1e-12);
        assert_eq!(span_rank(&seq, 0).rank, 3);
    }

    #[test]
    fn derivative_term_enters_deeper_brackets() {
        // B²₁ = d/ds(ME₁ − E₁M) − [ME₁ − E₁M, M].
        let m = |s: f64| Matrix2::new(0.0, 0.5, -2.0 * s.sin(), 0.1);
        let dm = |s: f64| Matrix2::new(0.0, 0.0, -2.0 * s.cos(), 0.0);
        let sys = sys_with(m, 4096);
        let seq = bracket_sequence(&sys, 2).unwrap();
        let e1 = control_matrices()[0];
        for k in [100, 1000, 3000] {
            let s = seq.s[k];
            let b1 = m(s) * e1 - e1 * m(s);
            let expect = (dm(s) * e1 - e1 * dm(s)) - bracket(&b1, &m(s));
            assert_relative_eq!(seq.b[2][0][k], expect, epsilon = 1e-8);
        }
    }

    #[test]
    fn rank_is_monotone_in_depth() {
        let sys = sys_with(|s| Matrix2::new(0.1 * s.cos(), 0.3, -0.4 * s.sin(), 0.2), 1024);
        let seq = bracket_sequence(&sys, 3).unwrap();
        for k in [0, 77, 500] {
            let ranks: Vec<usize> = (0..=3).map(|d| span_rank_to(&seq, k, d).rank).collect();
            assert!(ranks.windows(2).all(|w| w[0] <= w[1]), "{ranks:?}");
        }
    }

    #[test]
    fn fourier_lists() {
        assert_eq!(fourier_eval(&[], 1.0, TAU), 0.0);
        assert_eq!(fourier_eval(&[2.0], 1.0, TAU), 2.0);
        assert_relative_eq!(fourier_eval(&[1.0, 0.5, -0.25], 0.7, TAU), 1.0 + 0.5 * 0.7f64.cos() - 0.25 * 0.7f64.sin());
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let sys = sys_with(|s| Matrix2::new(0.1, s.sin(), 0.0, 0.3), 64);
        let spec = PerturbationSpec::new(0.0, [vec![1.0], vec![1.0], vec![1.0]]);
        let p = perturbed_system(&sys, &spec, &flat_coeffs(64)).unwrap();
        assert_eq!(p.samples(), sys.samples());
    }

    #[test]
    fn constant_phi1_scales_normal_multiplier() {
        let m = Matrix2::new(-0.2, 0.3, 0.0, 0.0);
        let sys = VariationalSystem::constant(TAU, m);
        let (eps, c) = (0.01, 1.0);
        let spec = PerturbationSpec::new(eps, [vec![c], vec![0.0], vec![0.0]]);
        let p = perturbed_system(&sys, &spec, &flat_coeffs(16)).unwrap();
        let u0 = sys.monodromy(4096);
        let u1 = p.monodromy(4096);
        assert_relative_eq!(u1[(1, 1)], u0[(1, 1)] * (eps * c * TAU).exp(), max_relative = 1e-10);
        assert_relative_eq!(u1[(1, 1)], 1.0648, epsilon = 1e-4);
    }

    #[test]
    fn eigenvalues_move_continuously_in_epsilon() {
        let sys = VariationalSystem::constant(TAU, Matrix2::new(-0.1, 0.2, 0.0, 0.05));
        let spec = |e| PerturbationSpec::new(e, [vec![0.3, 0.1, 0.0], vec![-0.5], vec![0.2]]);
        let base = eigenvalues(&sys.monodromy(4096));
        let coeffs = flat_coeffs(16);
        let mut ratios = vec![];
        for e in [1e-2, 1e-3, 1e-4] {
            let p = perturbed_system(&sys, &spec(e), &coeffs).unwrap();
            let ev = eigenvalues(&p.monodromy(4096));
            let d = (0..2).map(|i| (ev[i] - base[i]).norm()).fold(0.0, f64::max);
            ratios.push(d / e);
        }
        let c = ratios[0];
        assert!(ratios.iter().all(|r| *r <= 2.0 * c + 1e-9), "{ratios:?}");
    }

    #[test]
    fn already_hyperbolic_returns_zero_epsilon() {
        let sys = VariationalSystem::constant(TAU, Matrix2::new(-0.2, 0.0, 0.0, 0.1));
        let h = hyperbolize(&sys, &flat_coeffs(16), &Default::default()).unwrap();
        assert_eq!(h.spec.epsilon, 0.0);
        assert!(h.spec.certified_eigenvalues.is_some());
    }

    #[test]
    fn semi_hyperbolic_constant_system_is_fixed() {
        let sys = VariationalSystem::constant(TAU, Matrix2::new(0.0, 0.0, 0.0, -0.4));
        let h = hyperbolize(&sys, &flat_coeffs(16), &Default::default()).unwrap();
        assert!(h.spec.epsilon > 0.0 && h.spec.epsilon <= 0.05);
        assert!(h.margin > 1e-6);
        let json = serde_json::to_value(&h.spec).unwrap();
        for key in ["epsilon", "phi1", "phi2", "phi3", "certified_eigenvalues"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn nonhyperbolic_with_no_authority_is_exhausted() {
        // Rotation by a full turn: both multipliers on the unit circle, and
        // a budget too small to matter.
        let sys = VariationalSystem::constant(TAU, Matrix2::new(0.0, -1.0, 1.0, 0.0));
        let opts = HyperbolizeOptions {
            budget: 1e-9,
            levels: 1,
            max_rounds: 2,
            ..Default::default()
        };
        let err = hyperbolize(&sys, &flat_coeffs(16), &opts).unwrap_err();
        assert!(matches!(err, Error::SearchExhausted { .. }));
    }
}
