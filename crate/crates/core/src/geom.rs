//! Small vector helpers over generic scalars.

use nalgebra::Vector3;

use crate::dual::Scalar;

pub type V3<S> = [S; 3];

#[inline]
pub fn dot<S: Scalar>(a: &V3<S>, b: &V3<S>) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<S: Scalar>(a: &V3<S>, b: &V3<S>) -> V3<S> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn add<S: Scalar>(a: &V3<S>, b: &V3<S>) -> V3<S> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<S: Scalar>(a: &V3<S>, b: &V3<S>) -> V3<S> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<S: Scalar>(c: S, a: &V3<S>) -> V3<S> {
    [c * a[0], c * a[1], c * a[2]]
}

#[inline]
pub fn norm<S: Scalar>(a: &V3<S>) -> S {
    dot(a, a).sqrt()
}

#[inline]
pub fn normalize<S: Scalar>(a: &V3<S>) -> V3<S> {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// `M x` for a row-major 3×3 matrix.
#[inline]
pub fn matvec<S: Scalar>(m: &[V3<S>; 3], x: &V3<S>) -> V3<S> {
    [dot(&m[0], x), dot(&m[1], x), dot(&m[2], x)]
}

/// `Mᵀ x` for a row-major 3×3 matrix.
#[inline]
pub fn matvec_t<S: Scalar>(m: &[V3<S>; 3], x: &V3<S>) -> V3<S> {
    [
        m[0][0] * x[0] + m[1][0] * x[1] + m[2][0] * x[2],
        m[0][1] * x[0] + m[1][1] * x[1] + m[2][1] * x[2],
        m[0][2] * x[0] + m[1][2] * x[1] + m[2][2] * x[2],
    ]
}

/// Mixed product `(a, b, c) = ⟨a × b, c⟩`.
#[inline]
pub fn triple<S: Scalar>(a: &V3<S>, b: &V3<S>, c: &V3<S>) -> S {
    dot(&cross(a, b), c)
}

pub fn lift<S: Scalar>(v: &Vector3<f64>) -> V3<S> {
    [S::from_f64(v.x), S::from_f64(v.y), S::from_f64(v.z)]
}

pub fn re<S: Scalar>(v: &V3<S>) -> Vector3<f64> {
    Vector3::new(v[0].re(), v[1].re(), v[2].re())
}

pub fn rows<S: Scalar>(m: &nalgebra::Matrix3<f64>) -> [V3<S>; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| S::from_f64(m[(i, j)])))
}
