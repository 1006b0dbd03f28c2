//! Vector fields in 3-space given by expressions, and their derivative jets.

use std::collections::{HashMap, HashSet};
use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::Deserialize;

use crate::dual::{Dual, Dual2, Dual3, Scalar};
use crate::error::{Error, Result};
use crate::expr::{Expr, Func, Node};

/// Below this norm a field value is treated as a singularity.
pub const SINGULAR_NORM: f64 = 1e-9;

/// Three component expressions `(fx, fy, fz)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldExpr {
    pub components: [Expr; 3],
}

#[derive(Deserialize)]
struct JsonField {
    fx: String,
    fy: String,
    fz: String,
}

impl FieldExpr {
    pub fn new(fx: Expr, fy: Expr, fz: Expr) -> Self {
        Self {
            components: [fx, fy, fz],
        }
    }

    pub fn constant(c: [f64; 3]) -> Self {
        Self::new(
            Expr::constant(c[0]),
            Expr::constant(c[1]),
            Expr::constant(c[2]),
        )
    }

    pub fn dot(&self, o: &FieldExpr) -> Expr {
        let [a, b, c] = &self.components;
        let [d, e, f] = &o.components;
        &(&(a * d) + &(b * e)) + &(c * f)
    }

    pub fn cross(&self, o: &FieldExpr) -> FieldExpr {
        let [a1, a2, a3] = &self.components;
        let [b1, b2, b3] = &o.components;
        FieldExpr::new(
            &(a2 * b3) - &(a3 * b2),
            &(a3 * b1) - &(a1 * b3),
            &(a1 * b2) - &(a2 * b1),
        )
    }

    pub fn scale(&self, f: &Expr) -> FieldExpr {
        let [a, b, c] = &self.components;
        FieldExpr::new(f * a, f * b, f * c)
    }

    pub fn add(&self, o: &FieldExpr) -> FieldExpr {
        let [a, b, c] = &self.components;
        let [d, e, g] = &o.components;
        FieldExpr::new(a + d, b + e, c + g)
    }

    /// `f/|f|` as an expression tree. Evaluation fails where `|f| = 0`.
    pub fn normalize(&self) -> FieldExpr {
        let norm = self.dot(self).sqrt();
        let [a, b, c] = &self.components;
        FieldExpr::new(a / &norm, b / &norm, c / &norm)
    }

    /// Parse a field definition: `(fx, fy, fz)`, `fx; fy; fz`, or a JSON
    /// object `{"fx": .., "fy": .., "fz": ..}`.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with(text, &HashMap::new())
    }

    pub fn parse_with(text: &str, params: &HashMap<String, f64>) -> Result<Self> {
        let trimmed = text.trim_start();
        let lead = text.len() - trimmed.len();
        let trimmed = trimmed.trim_end();
        if trimmed.starts_with('{') {
            let j: JsonField = serde_json::from_str(trimmed)?;
            return Ok(Self::new(
                Expr::parse_with(&j.fx, params)?,
                Expr::parse_with(&j.fy, params)?,
                Expr::parse_with(&j.fz, params)?,
            ));
        }
        let parts: Vec<(usize, &str)> = if trimmed.contains(';') {
            split_top(trimmed, ';')
                .into_iter()
                .filter(|(_, s)| !s.trim().is_empty())
                .collect()
        } else if trimmed.starts_with('(') && trimmed.ends_with(')') && trimmed.len() >= 2 {
            split_top(&trimmed[1..trimmed.len() - 1], ',')
                .into_iter()
                .map(|(o, s)| (o + 1, s))
                .collect()
        } else {
            return Err(Error::Syntax {
                offset: lead,
                message: "expected `(fx, fy, fz)`, `fx; fy; fz` or a JSON object".into(),
            });
        };
        if parts.len() != 3 {
            return Err(Error::Syntax {
                offset: lead,
                message: format!("expected 3 components, found {}", parts.len()),
            });
        }
        let shift = |e: Error, base: usize| match e {
            Error::Syntax { offset, message } => Error::Syntax {
                offset: offset + base,
                message,
            },
            Error::UnknownIdentifier { name, offset } => Error::UnknownIdentifier {
                name,
                offset: offset + base,
            },
            Error::Arity {
                name,
                expected,
                found,
                offset,
            } => Error::Arity {
                name,
                expected,
                found,
                offset: offset + base,
            },
            other => other,
        };
        let mut comps = Vec::with_capacity(3);
        for (off, s) in parts {
            comps.push(Expr::parse_with(s, params).map_err(|e| shift(e, lead + off))?);
        }
        let [a, b, c]: [Expr; 3] = comps.try_into().expect("three components");
        Ok(Self::new(a, b, c))
    }
}

/// Split on `sep` at parenthesis depth zero, keeping byte offsets.
fn split_top(s: &str, sep: char) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            c if c == sep && depth == 0 => {
                out.push((start, &s[start..i]));
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    out.push((start, &s[start..]));
    out
}

impl fmt::Display for FieldExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c] = &self.components;
        write!(f, "({a}, {b}, {c})")
    }
}

/// Convenience wrapper matching the field-definition formats of [`FieldExpr::parse`].
pub fn parse_field(text: &str) -> Result<FieldExpr> {
    FieldExpr::parse(text)
}

pub fn normalize_field(f: &FieldExpr) -> FieldExpr {
    f.normalize()
}

#[derive(Clone, Debug)]
enum Op {
    Const(f64),
    Var(u8),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    PowI(u32, i32),
    PowF(u32, f64),
    Pow(u32, u32),
    Call(Func, u32),
    Atan2(u32, u32),
}

/// Linearized expression DAG. Shared subtrees are evaluated once.
#[derive(Clone, Debug)]
pub struct Tape {
    ops: Vec<Op>,
    outputs: Vec<u32>,
}

fn const_exponent(e: &Expr) -> Option<f64> {
    match e.node() {
        Node::Const(c) => Some(*c),
        Node::Neg(inner) => match inner.node() {
            Node::Const(c) => Some(-*c),
            _ => None,
        },
        _ => None,
    }
}

impl Tape {
    pub fn compile(exprs: &[Expr]) -> Self {
        let mut tape = Tape {
            ops: Vec::new(),
            outputs: Vec::new(),
        };
        let mut seen = HashMap::new();
        for e in exprs {
            let slot = tape.emit(e, &mut seen);
            tape.outputs.push(slot);
        }
        tape
    }

    fn emit(&mut self, e: &Expr, seen: &mut HashMap<*const Node, u32>) -> u32 {
        if let Some(&slot) = seen.get(&e.ptr()) {
            return slot;
        }
        let op = match e.node() {
            Node::Const(c) => Op::Const(*c),
            Node::Var(i) => Op::Var(*i),
            Node::Add(a, b) => Op::Add(self.emit(a, seen), self.emit(b, seen)),
            Node::Sub(a, b) => Op::Sub(self.emit(a, seen), self.emit(b, seen)),
            Node::Mul(a, b) => Op::Mul(self.emit(a, seen), self.emit(b, seen)),
            Node::Div(a, b) => Op::Div(self.emit(a, seen), self.emit(b, seen)),
            Node::Neg(a) => Op::Neg(self.emit(a, seen)),
            Node::Pow(a, b) => {
                let base = self.emit(a, seen);
                match const_exponent(b) {
                    Some(c) if c.fract() == 0.0 && c.abs() <= 64.0 => Op::PowI(base, c as i32),
                    Some(c) => Op::PowF(base, c),
                    None => Op::Pow(base, self.emit(b, seen)),
                }
            }
            Node::Call(f, a) => Op::Call(*f, self.emit(a, seen)),
            Node::Atan2(a, b) => Op::Atan2(self.emit(a, seen), self.emit(b, seen)),
        };
        self.ops.push(op);
        let slot = (self.ops.len() - 1) as u32;
        seen.insert(e.ptr(), slot);
        slot
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Evaluate all outputs. Domain violations are detected on primal values.
    pub fn eval<S: Scalar>(&self, x: [S; 3], out: &mut [S]) -> Result<()> {
        let mut r: Vec<S> = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let v = match *op {
                Op::Const(c) => S::from_f64(c),
                Op::Var(i) => x[i as usize],
                Op::Add(a, b) => r[a as usize] + r[b as usize],
                Op::Sub(a, b) => r[a as usize] - r[b as usize],
                Op::Mul(a, b) => r[a as usize] * r[b as usize],
                Op::Div(a, b) => {
                    let d = r[b as usize];
                    if d.re() == 0.0 {
                        return Err(domain("division by zero", &x));
                    }
                    r[a as usize] / d
                }
                Op::Neg(a) => -r[a as usize],
                Op::PowI(a, n) => {
                    let base = r[a as usize];
                    if n < 0 && base.re() == 0.0 {
                        return Err(domain("zero raised to a negative power", &x));
                    }
                    base.powi(n)
                }
                Op::PowF(a, c) => {
                    let base = r[a as usize];
                    if base.re() < 0.0 {
                        return Err(domain("negative base with fractional exponent", &x));
                    }
                    base.powf(c)
                }
                Op::Pow(a, b) => {
                    let base = r[a as usize];
                    if base.re() <= 0.0 {
                        return Err(domain("non-positive base with variable exponent", &x));
                    }
                    base.pow(r[b as usize])
                }
                Op::Call(f, a) => {
                    let v = r[a as usize];
                    match f {
                        Func::Sin => v.sin(),
                        Func::Cos => v.cos(),
                        Func::Tan => v.tan(),
                        Func::Exp => v.exp(),
                        Func::Log => {
                            if v.re() <= 0.0 {
                                return Err(domain("log of a non-positive number", &x));
                            }
                            v.ln()
                        }
                        Func::Sqrt => {
                            if v.re() < 0.0 {
                                return Err(domain("sqrt of a negative number", &x));
                            }
                            v.sqrt()
                        }
                        Func::Abs => v.abs(),
                    }
                }
                Op::Atan2(a, b) => r[a as usize].atan2(r[b as usize]),
            };
            r.push(v);
        }
        for (o, &slot) in out.iter_mut().zip(&self.outputs) {
            let v = r[slot as usize];
            if !v.is_finite() {
                return Err(domain("non-finite value", &x));
            }
            *o = v;
        }
        Ok(())
    }
}

fn domain<S: Scalar>(what: &str, x: &[S; 3]) -> Error {
    Error::Domain(format!(
        "{what} at ({}, {}, {})",
        x[0].re(),
        x[1].re(),
        x[2].re()
    ))
}

/// Value and exact derivatives of a field at a point.
///
/// `hessian[i][(j, k)]` is `∂²η_i/∂x_j∂x_k`; `third[i][j][k][l]` is the
/// corresponding third derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldJet {
    pub point: Vector3<f64>,
    pub value: Vector3<f64>,
    /// `jacobian[(i, j)] = ∂η_i/∂x_j`.
    pub jacobian: Matrix3<f64>,
    pub hessian: Option<[Matrix3<f64>; 3]>,
    pub third: Option<Box<[[[[f64; 3]; 3]; 3]; 3]>>,
}

impl FieldJet {
    pub fn order(&self) -> u8 {
        if self.third.is_some() {
            3
        } else if self.hessian.is_some() {
            2
        } else {
            1
        }
    }

    pub fn curl(&self) -> Vector3<f64> {
        let j = &self.jacobian;
        Vector3::new(
            j[(2, 1)] - j[(1, 2)],
            j[(0, 2)] - j[(2, 0)],
            j[(1, 0)] - j[(0, 1)],
        )
    }

    /// Derivative of the Jacobian along `u`: `Σ_k ∂²η_i/∂x_j∂x_k u_k`.
    pub fn jacobian_along(&self, u: &Vector3<f64>) -> Option<Matrix3<f64>> {
        let h = self.hessian.as_ref()?;
        Some(Matrix3::from_fn(|i, j| {
            (0..3).map(|k| h[i][(j, k)] * u[k]).sum()
        }))
    }
}

/// A field ready for evaluation: the raw expression and its normalization,
/// both compiled.
#[derive(Clone, Debug)]
pub struct Field {
    expr: FieldExpr,
    raw: Tape,
    unit: Tape,
}

impl Field {
    pub fn new(expr: FieldExpr) -> Self {
        let raw = Tape::compile(&expr.components);
        let unit = Tape::compile(&expr.normalize().components);
        Self { expr, raw, unit }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(Self::new(FieldExpr::parse(text)?))
    }

    pub fn expr(&self) -> &FieldExpr {
        &self.expr
    }

    pub fn value(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        let mut out = [0.0; 3];
        self.raw.eval([p.x, p.y, p.z], &mut out)?;
        Ok(Vector3::from(out))
    }

    fn check_regular(&self, p: &Vector3<f64>) -> Result<()> {
        let v = self.value(p)?;
        let norm = v.norm();
        if norm < SINGULAR_NORM {
            return Err(Error::Singularity {
                point: [p.x, p.y, p.z],
                norm,
            });
        }
        Ok(())
    }

    /// Jet of the field as given.
    pub fn jet(&self, p: &Vector3<f64>, order: u8) -> Result<FieldJet> {
        self.check_regular(p)?;
        eval_tape_jet(&self.raw, p, order)
    }

    /// Jet of `η/|η|`.
    pub fn unit_jet(&self, p: &Vector3<f64>, order: u8) -> Result<FieldJet> {
        self.check_regular(p)?;
        eval_tape_jet(&self.unit, p, order)
    }

    /// Unit field value and Jacobian at a point whose coordinates carry
    /// derivatives of their own (used to differentiate frame quantities).
    pub fn unit_value_jacobian<S: Scalar>(&self, p: [S; 3]) -> Result<([S; 3], [[S; 3]; 3])> {
        self.check_regular(&Vector3::new(p[0].re(), p[1].re(), p[2].re()))?;
        let mut value = [S::zero(); 3];
        let mut jac = [[S::zero(); 3]; 3];
        let mut out = [Dual::constant(S::zero()); 3];
        for j in 0..3 {
            let mut x = p.map(Dual::constant);
            x[j].eps = S::one();
            self.unit.eval(x, &mut out)?;
            for i in 0..3 {
                jac[i][j] = out[i].eps;
                value[i] = out[i].re;
            }
        }
        Ok((value, jac))
    }

    /// Unit field value at a generic-scalar point.
    pub fn unit_value<S: Scalar>(&self, p: [S; 3]) -> Result<[S; 3]> {
        self.check_regular(&Vector3::new(p[0].re(), p[1].re(), p[2].re()))?;
        let mut out = [S::zero(); 3];
        self.unit.eval(p, &mut out)?;
        Ok(out)
    }
}

/// Evaluate the jet of a field up to `order` (1, 2 or 3).
pub fn eval_jet(field: &Field, p: &Vector3<f64>, order: u8) -> Result<FieldJet> {
    field.jet(p, order)
}

fn eval_tape_jet(tape: &Tape, p: &Vector3<f64>, order: u8) -> Result<FieldJet> {
    if !(1..=3).contains(&order) {
        return Err(Error::InvalidArgument(format!(
            "jet order must be 1, 2 or 3, got {order}"
        )));
    }
    let mut value = Vector3::zeros();
    let mut jacobian = Matrix3::zeros();
    let mut hessian = None;
    let mut third = None;

    if order == 1 {
        let mut out = [Dual::constant(0.0); 3];
        for j in 0..3 {
            let mut x = [Dual::constant(p.x), Dual::constant(p.y), Dual::constant(p.z)];
            x[j].eps = 1.0;
            tape.eval(x, &mut out)?;
            for i in 0..3 {
                value[i] = out[i].re;
                jacobian[(i, j)] = out[i].eps;
            }
        }
    } else {
        let mut h = [Matrix3::zeros(); 3];
        let mut out = [Dual2::from_f64(0.0); 3];
        for j in 0..3 {
            for k in j..3 {
                let x: [Dual2; 3] = std::array::from_fn(|m| {
                    Dual::new(
                        Dual::new(p[m], if m == k { 1.0 } else { 0.0 }),
                        Dual::new(if m == j { 1.0 } else { 0.0 }, 0.0),
                    )
                });
                tape.eval(x, &mut out)?;
                for i in 0..3 {
                    value[i] = out[i].re.re;
                    jacobian[(i, k)] = out[i].re.eps;
                    jacobian[(i, j)] = out[i].eps.re;
                    h[i][(j, k)] = out[i].eps.eps;
                    h[i][(k, j)] = out[i].eps.eps;
                }
            }
        }
        hessian = Some(h);
    }

    if order == 3 {
        let mut t = Box::new([[[[0.0; 3]; 3]; 3]; 3]);
        let mut out = [Dual3::from_f64(0.0); 3];
        let mut filled = HashSet::new();
        for j in 0..3 {
            for k in j..3 {
                for l in k..3 {
                    let seed = |m: usize, d: usize| if m == d { 1.0 } else { 0.0 };
                    let x: [Dual3; 3] = std::array::from_fn(|m| {
                        Dual::new(
                            Dual::new(Dual::new(p[m], seed(m, l)), Dual::new(seed(m, k), 0.0)),
                            Dual::new(Dual::new(seed(m, j), 0.0), Dual::constant(0.0)),
                        )
                    });
                    tape.eval(x, &mut out)?;
                    for (i, o) in out.iter().enumerate() {
                        for (a, b, c) in [
                            (j, k, l),
                            (j, l, k),
                            (k, j, l),
                            (k, l, j),
                            (l, j, k),
                            (l, k, j),
                        ] {
                            t[i][a][b][c] = o.eps.eps.eps;
                        }
                    }
                    filled.insert((j, k, l));
                }
            }
        }
        debug_assert_eq!(filled.len(), 10);
        third = Some(t);
    }

    Ok(FieldJet {
        point: *p,
        value,
        jacobian,
        hessian,
        third,
    })
}

/// Built-in test fields.
pub mod presets {
    use super::*;

    fn c(v: f64) -> Expr {
        Expr::constant(v)
    }

    /// The planar-cycle family: `X₁ = (−y + λx(1−r²), x + λy(1−r²), −a z)`,
    /// `W = (x + εy, −εx + y, 0)`, `X₂ = W × X₁`, `η = X₁ × X₂ / |X₁ × X₂|`.
    /// The unit circle in the plane `z = 0` is a principal cycle.
    pub fn cycle_family(lambda: f64, a: f64, eps: f64) -> FieldExpr {
        let (x, y, z) = (Expr::x(), Expr::y(), Expr::z());
        let one_minus_r2 = &(&c(1.0) - &(&x * &x)) - &(&y * &y);
        let lam = c(lambda);
        let x1 = FieldExpr::new(
            &(-&y) + &(&(&lam * &x) * &one_minus_r2),
            &x + &(&(&lam * &y) * &one_minus_r2),
            &(-&c(a)) * &z,
        );
        let w = FieldExpr::new(&x + &(&c(eps) * &y), &y - &(&c(eps) * &x), c(0.0));
        let x2 = w.cross(&x1);
        x1.cross(&x2).normalize()
    }

    /// [`cycle_family`] with the first generating field moved to
    /// `X₁ + δ(φ₁w + φ₂v² + φ₃vw)N`, where `v = z`, `w = r − 1`, `N` is the
    /// outward radial unit vector and `φᵢ` are Fourier lists in the polar
    /// angle.
    pub fn cycle_family_perturbed(
        lambda: f64,
        a: f64,
        eps: f64,
        delta: f64,
        phi: [&[f64]; 3],
    ) -> FieldExpr {
        let (x, y, z) = (Expr::x(), Expr::y(), Expr::z());
        let r2 = &(&x * &x) + &(&y * &y);
        let r = r2.sqrt();
        let one_minus_r2 = &c(1.0) - &r2;
        let t = y.atan2(&x);
        let fourier = |coeffs: &[f64]| -> Expr {
            let mut e = c(coeffs.first().copied().unwrap_or(0.0));
            for (k, pair) in coeffs.iter().skip(1).collect::<Vec<_>>().chunks(2).enumerate() {
                let kt = &c((k + 1) as f64) * &t;
                e = &e + &(&c(*pair[0]) * &kt.cos());
                if let Some(b) = pair.get(1) {
                    e = &e + &(&c(**b) * &kt.sin());
                }
            }
            e
        };
        let w = &r - &c(1.0);
        let bump = &(&(&fourier(phi[0]) * &w) + &(&fourier(phi[1]) * &(&z * &z)))
            + &(&fourier(phi[2]) * &(&z * &w));
        let g = &(&c(delta) * &bump) / &r;
        let lam = c(lambda);
        let x1 = FieldExpr::new(
            &(&(-&y) + &(&(&lam * &x) * &one_minus_r2)) + &(&g * &x),
            &(&x + &(&(&lam * &y) * &one_minus_r2)) + &(&g * &y),
            &(-&c(a)) * &z,
        );
        let wf = FieldExpr::new(&x + &(&c(eps) * &y), &y - &(&c(eps) * &x), c(0.0));
        let x2 = wf.cross(&x1);
        x1.cross(&x2).normalize()
    }

    /// Normalized gradient of `(√(x²+y²) − R)² + z²`; the level sets are
    /// nested tori around the circle of radius `R`.
    pub fn nested_tori(major: f64) -> FieldExpr {
        let (x, y, z) = (Expr::x(), Expr::y(), Expr::z());
        let rho = (&(&x * &x) + &(&y * &y)).sqrt();
        let k = &(&rho - &c(major)) / &rho;
        FieldExpr::new(&k * &x, &k * &y, z).normalize()
    }

    pub fn radial() -> FieldExpr {
        FieldExpr::new(Expr::x(), Expr::y(), Expr::z()).normalize()
    }

    pub fn constant() -> FieldExpr {
        FieldExpr::constant([0.0, 0.0, 1.0])
    }

    /// `(−y, x, 1)`, not normalized; `⟨curl η, η⟩ = 2` everywhere.
    pub fn swirl() -> FieldExpr {
        FieldExpr::new(-Expr::y(), Expr::x(), c(1.0))
    }

    /// A unit field for which the unit circle is a principal cycle with
    /// `k₃(t) = −β cos t`, so the plane field is not integrable along it.
    ///
    /// With polar angle `t`, `ψ = β sin t`, radial `R`, tangential `T` and
    /// vertical `Z` unit vectors, `η = cos ψ R + sin ψ Z − ψ'(t) ξ T` where
    /// `ξ = −(r − 1) sin ψ + z cos ψ`.
    pub fn twisted_circle(beta: f64) -> FieldExpr {
        let (x, y, z) = (Expr::x(), Expr::y(), Expr::z());
        let r = (&(&x * &x) + &(&y * &y)).sqrt();
        let t = y.atan2(&x);
        let psi = &c(beta) * &t.sin();
        let dpsi = &c(beta) * &t.cos();
        let (cp, sp) = (psi.cos(), psi.sin());
        let xi = &(&(-&(&r - &c(1.0))) * &sp) + &(&z * &cp);
        let rx = &x / &r;
        let ry = &y / &r;
        let g = &dpsi * &xi;
        FieldExpr::new(
            &(&cp * &rx) + &(&g * &ry),
            &(&cp * &ry) - &(&g * &rx),
            sp,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn parse_formats() {
        let a = FieldExpr::parse("(-y, x, 1)").unwrap();
        let b = FieldExpr::parse("-y; x; 1").unwrap();
        let c = FieldExpr::parse(r#"{"fx": "-y", "fy": "x", "fz": "1"}"#).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        let nested = FieldExpr::parse("(atan2(y, x), sin(x), 2)").unwrap();
        assert_eq!(nested.components[2], Expr::constant(2.0));
        assert!(FieldExpr::parse("(x, y)").is_err());
    }

    #[test]
    fn parse_error_offsets_are_absolute() {
        match FieldExpr::parse("(x, y, z + )") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 11),
            other => panic!("{other:?}"),
        }
        match FieldExpr::parse("x; y; q") {
            Err(Error::UnknownIdentifier { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn display_roundtrip() {
        let f = presets::cycle_family(0.1, 0.2, 0.5);
        let back = FieldExpr::parse(&f.to_string()).unwrap();
        let p = [0.3, -0.7, 0.2];
        for i in 0..3 {
            assert_relative_eq!(
                back.components[i].eval(p),
                f.components[i].eval(p),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn constant_field_jet_vanishes() {
        let f = Field::new(presets::constant());
        let j = f.jet(&v(0.3, 1.0, -2.0), 3).unwrap();
        assert_eq!(j.jacobian, Matrix3::zeros());
        assert!(j.hessian.unwrap().iter().all(|h| *h == Matrix3::zeros()));
        assert_eq!(j.order(), 3);
    }

    #[test]
    fn radial_jacobian_closed_form() {
        let f = Field::new(presets::radial());
        let j = f.jet(&v(2.0, 0.0, 0.0), 1).unwrap();
        let n = v(1.0, 0.0, 0.0);
        let expect = (Matrix3::identity() - n * n.transpose()) / 2.0;
        assert!((j.jacobian - expect).norm() < 1e-15);
    }

    #[test]
    fn swirl_curl() {
        let f = Field::new(presets::swirl());
        for p in [v(0.0, 0.0, 0.0), v(1.0, -2.0, 3.0)] {
            let j = f.jet(&p, 1).unwrap();
            assert_eq!(j.curl(), v(0.0, 0.0, 2.0));
        }
    }

    #[test]
    fn unit_field_identities() {
        let f = Field::new(presets::cycle_family(0.1, 0.2, 0.5));
        let j = f.unit_jet(&v(0.8, 0.4, 0.1), 2).unwrap();
        assert_relative_eq!(j.value.norm(), 1.0, epsilon = 1e-12);
        assert!((j.value.transpose() * j.jacobian).norm() < 1e-12);
    }

    #[test]
    fn normalize_examples() {
        let f = Field::new(FieldExpr::constant([0.0, 0.0, 2.0]).normalize());
        assert_eq!(f.value(&v(5.0, 1.0, 1.0)).unwrap(), v(0.0, 0.0, 1.0));
        let g = Field::new(presets::swirl().normalize());
        assert_eq!(g.value(&v(0.0, 0.0, 0.0)).unwrap(), v(0.0, 0.0, 1.0));
        let h = Field::new(presets::cycle_family(0.2, 0.1, 0.5));
        for t in [0.0, 1.0, 2.5, 4.0] {
            let val = h.value(&v(f64::cos(t), f64::sin(t), 0.0)).unwrap();
            assert_relative_eq!(val.norm(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn singularity_and_domain_errors() {
        let f = Field::new(presets::radial());
        assert!(matches!(f.jet(&v(0.0, 0.0, 0.0), 1), Err(Error::Domain(_))));
        let g = Field::parse("(x, y, 0)").unwrap();
        assert!(matches!(
            g.jet(&v(0.0, 0.0, 1.0), 1),
            Err(Error::Singularity { .. })
        ));
        let h = Field::parse("(log(x), 1, 1)").unwrap();
        assert!(matches!(h.jet(&v(-1.0, 0.0, 0.0), 1), Err(Error::Domain(_))));
        assert!(matches!(h.jet(&v(1.0, 0.0, 0.0), 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn third_order_matches_differenced_hessian() {
        let f = Field::new(presets::cycle_family(0.1, 0.2, 0.5));
        let p = v(0.9, 0.3, 0.2);
        let j = f.unit_jet(&p, 3).unwrap();
        let t = j.third.as_ref().unwrap();
        let h = 1e-5;
        for l in 0..3 {
            let mut e = Vector3::zeros();
            e[l] = h;
            let hp = f.unit_jet(&(p + e), 2).unwrap().hessian.unwrap();
            let hm = f.unit_jet(&(p - e), 2).unwrap().hessian.unwrap();
            for i in 0..3 {
                for a in 0..3 {
                    for b in 0..3 {
                        let fd = (hp[i][(a, b)] - hm[i][(a, b)]) / (2.0 * h);
                        assert!((fd - t[i][a][b][l]).abs() < 1e-5 * (1.0 + fd.abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn hessian_mixed_partials_agree_across_seed_orders() {
        let f = Field::new(presets::twisted_circle(0.3));
        let p = v(1.1, 0.4, -0.2);
        let j = f.jet(&p, 2).unwrap();
        let h = j.hessian.unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let x: [Dual2; 3] = std::array::from_fn(|m| {
                    Dual::new(
                        Dual::new(p[m], if m == a { 1.0 } else { 0.0 }),
                        Dual::new(if m == b { 1.0 } else { 0.0 }, 0.0),
                    )
                });
                let mut out = [Dual2::from_f64(0.0); 3];
                f.raw.eval(x, &mut out).unwrap();
                for i in 0..3 {
                    let d = out[i].eps.eps;
                    assert!((d - h[i][(a, b)]).abs() <= 1e-12 * (1.0 + d.abs()));
                }
            }
        }
    }

    #[test]
    fn eval_is_deterministic() {
        let f = Field::new(presets::nested_tori(2.0));
        let p = v(2.3, 0.4, 0.1);
        assert_eq!(f.unit_jet(&p, 3).unwrap(), f.unit_jet(&p, 3).unwrap());
    }

    #[test]
    fn shared_subtrees_compile_once() {
        let f = presets::cycle_family(0.1, 0.2, 0.5);
        let tape = Tape::compile(&f.components);
        assert!(tape.len() < 200, "tape has {} ops", tape.len());
    }
}
