//! Pointwise extrinsic geometry of the plane field `η⊥`.
//!
//! Sign conventions: the normal curvature is `k_η(dr) = −⟨Dη dr, dr⟩/|dr|²`
//! and the principal curvatures `k₁ ≤ k₂` are its critical values on the
//! plane. The symmetric operator `P` restricted to the plane therefore has
//! eigenvalues `−k₁ ≥ −k₂`.

use nalgebra::{Matrix2, Matrix3, Vector3};
use serde::Serialize;

use crate::dual::Scalar;
use crate::error::{Error, Result};
use crate::field::{FieldJet, SINGULAR_NORM};
use crate::geom::{self, V3};

/// Principal directions are undefined when the plane operator is this small.
pub const FLAT_NORM: f64 = 1e-12;

pub fn default_umbilic_tol(k1: f64, k2: f64) -> f64 {
    1e-7 * (1.0 + k1.abs() + k2.abs())
}

fn checked_norm(jet: &FieldJet) -> Result<f64> {
    let n = jet.value.norm();
    if n < SINGULAR_NORM {
        return Err(Error::Singularity {
            point: jet.point.into(),
            norm: n,
        });
    }
    Ok(n)
}

fn checked_dir(dr: &Vector3<f64>) -> Result<f64> {
    let d2 = dr.norm_squared();
    if d2 == 0.0 || !d2.is_finite() {
        return Err(Error::ZeroDirection);
    }
    Ok(d2)
}

/// `−⟨Dη dr, dr⟩/⟨dr, dr⟩`. The jet should be of a unit field.
pub fn normal_curvature(jet: &FieldJet, dr: &Vector3<f64>) -> Result<f64> {
    let d2 = checked_dir(dr)?;
    Ok(-(jet.jacobian * dr).dot(dr) / d2)
}

/// `(Dη dr, dr, η)/⟨dr, dr⟩`. The jet should be of a unit field.
pub fn geodesic_torsion(jet: &FieldJet, dr: &Vector3<f64>) -> Result<f64> {
    let d2 = checked_dir(dr)?;
    Ok((jet.jacobian * dr).cross(dr).dot(&jet.value) / d2)
}

/// `⟨curl η, η⟩/|η|²`; zero exactly where the plane field is integrable.
pub fn integrability_scalar(jet: &FieldJet) -> Result<f64> {
    let n = checked_norm(jet)?;
    Ok(jet.curl().dot(&jet.value) / (n * n))
}

/// `((Dη + Dηᵀ) dr, dr, η)`, whose zeros on the plane are the principal
/// directions.
pub fn mixed_product_form(jet: &FieldJet, dr: &Vector3<f64>) -> f64 {
    let j = &jet.jacobian;
    ((j + j.transpose()) * dr).cross(dr).dot(&jet.value)
}

/// `2(Dη dr, dr, η) + ⟨curl η, η⟩⟨dr, dr⟩`, the rotational form of the
/// principal-direction equation.
pub fn curl_form(jet: &FieldJet, dr: &Vector3<f64>) -> f64 {
    2.0 * (jet.jacobian * dr).cross(dr).dot(&jet.value)
        + jet.curl().dot(&jet.value) * dr.norm_squared()
}

/// Orthonormal basis of `η⊥`: `b₁ = η̂ × a / |η̂ × a|` where `a` is the
/// coordinate axis least aligned with `η` (lowest index on ties), `b₂ = η̂ × b₁`.
pub fn plane_basis<S: Scalar>(unit: &V3<S>) -> [V3<S>; 2] {
    let mut axis = 0;
    for i in 1..3 {
        if unit[i].re().abs() < unit[axis].re().abs() {
            axis = i;
        }
    }
    let mut a = [S::zero(); 3];
    a[axis] = S::one();
    let b1 = geom::normalize(&geom::cross(unit, &a));
    let b2 = geom::cross(unit, &b1);
    [b1, b2]
}

/// Principal frame at a point, generic so that it can be differentiated.
#[derive(Clone, Copy, Debug)]
pub struct PrincipalFrame<S> {
    pub normal: V3<S>,
    pub basis: [V3<S>; 2],
    /// Entries `p, q, r` of the plane operator `[[p, q], [q, r]]` in `basis`
    /// (scaled by `1/|η|`).
    pub restricted: [S; 3],
    pub e1: V3<S>,
    pub e2: V3<S>,
    pub k1: S,
    pub k2: S,
}

/// Diagonalize the plane operator from the value and Jacobian of a field.
///
/// `e₁ = cos θ b₁ + sin θ b₂` with `θ ∈ (−π/2, π/2]`, which makes the first
/// nonzero basis coordinate of `e₁` positive; `e₂ = η̂ × e₁`.
pub fn principal_frame<S: Scalar>(eta: &V3<S>, jac: &[V3<S>; 3]) -> PrincipalFrame<S> {
    let norm = geom::norm(eta);
    let unit = geom::scale(S::one() / norm, eta);
    let basis = plane_basis(&unit);
    let sym = |x: &V3<S>, y: &V3<S>| {
        (geom::dot(&geom::matvec(jac, x), y) + geom::dot(&geom::matvec(jac, y), x)).scale(0.5)
            / norm
    };
    let p = sym(&basis[0], &basis[0]);
    let q = sym(&basis[0], &basis[1]);
    let r = sym(&basis[1], &basis[1]);
    let theta = (q + q).atan2(p - r).scale(0.5);
    let (c, s) = (theta.cos(), theta.sin());
    let e1 = geom::add(&geom::scale(c, &basis[0]), &geom::scale(s, &basis[1]));
    let e2 = geom::cross(&unit, &e1);
    let half = (p - r).scale(0.5);
    let rad = (half * half + q * q).sqrt();
    let mid = (p + r).scale(0.5);
    PrincipalFrame {
        normal: unit,
        basis,
        restricted: [p, q, r],
        e1,
        e2,
        k1: -(mid + rad),
        k2: -(mid - rad),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProjectedOperator {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    /// `S = (Dη + Dηᵀ)/2`.
    pub symmetric: Matrix3<f64>,
    pub basis: [Vector3<f64>; 2],
    /// Restriction of `P(v) = S v − ⟨S v, η̂⟩η̂` to the plane, in `basis`,
    /// not rescaled.
    pub restricted: Matrix2<f64>,
}

impl ProjectedOperator {
    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let sv = self.symmetric * v;
        sv - self.normal * sv.dot(&self.normal)
    }
}

pub fn projected_operator(jet: &FieldJet) -> Result<ProjectedOperator> {
    let n = checked_norm(jet)?;
    let normal = jet.value / n;
    let symmetric = (jet.jacobian + jet.jacobian.transpose()) * 0.5;
    let [b1, b2] = plane_basis(&[normal.x, normal.y, normal.z]);
    let basis = [Vector3::from(b1), Vector3::from(b2)];
    let restricted = Matrix2::from_fn(|i, j| basis[i].dot(&(symmetric * basis[j])));
    Ok(ProjectedOperator {
        point: jet.point,
        normal,
        symmetric,
        basis,
        restricted,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrincipalData {
    pub k1: f64,
    pub k2: f64,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub gap: f64,
    pub umbilic: bool,
    /// The plane operator vanishes: every direction is principal with zero
    /// curvature.
    pub flat: bool,
}

/// Principal curvatures and directions with the default umbilic tolerance.
pub fn principal_data(jet: &FieldJet) -> Result<PrincipalData> {
    principal_data_tol(jet, None)
}

pub fn principal_data_tol(jet: &FieldJet, tol: Option<f64>) -> Result<PrincipalData> {
    checked_norm(jet)?;
    let eta = [jet.value.x, jet.value.y, jet.value.z];
    let jac = geom::rows::<f64>(&jet.jacobian);
    let f = principal_frame(&eta, &jac);
    let gap = f.k2 - f.k1;
    let tol = tol.unwrap_or_else(|| default_umbilic_tol(f.k1, f.k2));
    let [p, q, r] = f.restricted;
    Ok(PrincipalData {
        k1: f.k1,
        k2: f.k2,
        e1: Vector3::from(f.e1),
        e2: Vector3::from(f.e2),
        normal: Vector3::from(f.normal),
        gap,
        umbilic: gap < tol,
        flat: (p * p + 2.0 * q * q + r * r).sqrt() <= FLAT_NORM,
    })
}

pub fn is_partially_umbilic(jet: &FieldJet, tol: f64) -> Result<bool> {
    Ok(principal_data_tol(jet, Some(tol))?.gap < tol)
}

/// Coefficients of the implicit principal-line equations in global
/// coordinates `(s, v, w) = (x, y, z)`:
/// `L₁ds² + L₂ds dv + L₃ds dw + L₄dv² + L₅dv dw + L₆dw² = 0` together with
/// `η₁ds + η₂dv + η₃dw = 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImplicitCoeffs {
    pub l: [f64; 6],
    pub plane: [f64; 3],
    /// `(L, M, N)` of `L dw² + M dw dv + N dv² = 0`, present when `|η₁| > 1e-8`.
    pub reduced: Option<[f64; 3]>,
}

impl ImplicitCoeffs {
    pub fn quadratic(&self, dr: &Vector3<f64>) -> f64 {
        let [l1, l2, l3, l4, l5, l6] = self.l;
        let (ds, dv, dw) = (dr.x, dr.y, dr.z);
        l1 * ds * ds + l2 * ds * dv + l3 * ds * dw + l4 * dv * dv + l5 * dv * dw + l6 * dw * dw
    }

    pub fn reduced(&self) -> Result<[f64; 3]> {
        self.reduced.ok_or(Error::ReducedFormUnavailable {
            eta1: self.plane[0],
        })
    }
}

pub fn implicit_coeffs(jet: &FieldJet) -> Result<ImplicitCoeffs> {
    checked_norm(jet)?;
    let [e1, e2, e3] = [jet.value.x, jet.value.y, jet.value.z];
    let j = &jet.jacobian;
    // d(i, c): derivative of component i (1-based) along s, v or w.
    let d = |i: usize, c: char| j[(i - 1, "svw".find(c).unwrap())];
    let l = [
        e1 * (d(3, 'v') - d(2, 'w')) + e2 * (d(3, 's') + d(1, 'w'))
            - e3 * (d(2, 's') + d(1, 'v')),
        -2.0 * e1 * d(3, 's') + 2.0 * e2 * d(3, 'v') - 2.0 * e3 * (d(2, 'v') - d(1, 's')),
        2.0 * e1 * d(2, 's') + 2.0 * e2 * (d(3, 'w') - d(1, 's')) - 2.0 * e3 * d(2, 'w'),
        -e1 * (d(3, 'v') + d(2, 'w')) - e2 * (d(3, 's') - d(1, 'w'))
            + e3 * (d(2, 's') + d(1, 'v')),
        2.0 * e1 * (d(2, 'v') - d(3, 'w')) - 2.0 * e2 * d(1, 'v') + 2.0 * e3 * d(1, 'w'),
        e1 * (d(3, 'v') + d(2, 'w')) - e2 * (d(3, 's') + d(1, 'w'))
            + e3 * (d(2, 's') - d(1, 'v')),
    ];
    let reduced = (e1.abs() > 1e-8).then(|| {
        let (s1, s2, s3) = (e1 * e1, e2 * e2, e3 * e3);
        let ll = e1 * (s1 + s3) * (d(3, 'v') + d(2, 'w'))
            - e3 * (s1 + s3) * (d(1, 'v') + d(2, 's'))
            + e2 * (s3 - s1) * (d(1, 'w') + d(3, 's'))
            + 2.0 * e1 * e2 * e3 * (d(1, 's') - d(3, 'w'));
        let mm = -2.0 * e2 * (s1 + s3) * (d(1, 'v') + d(2, 's'))
            + 2.0 * e3 * (s1 + s2) * (d(3, 's') + d(1, 'w'))
            + 2.0 * e1 * (s2 - s3) * d(1, 's')
            + 2.0 * e1 * (s1 + s3) * d(2, 'v')
            - 2.0 * e1 * (s1 + s2) * d(3, 'w');
        let nn = -e1 * (s1 + s2) * (d(2, 'w') + d(3, 'v'))
            + e3 * (s1 - s2) * (d(1, 'v') + d(2, 's'))
            + e2 * (s1 + s2) * (d(1, 'w') + d(3, 's'))
            + 2.0 * e1 * e2 * e3 * (d(2, 'v') - d(1, 's'));
        [ll, mm, nn]
    });
    Ok(ImplicitCoeffs {
        l,
        plane: [e1, e2, e3],
        reduced,
    })
}
