//! Element-local formulas written once over a generic scalar.
//!
//! Every per-element quantity (strain, frame, measure, density, layer
//! transport) is evaluated through these functions, with `f64` for values
//! and `DualSVec64<36>` for exact local derivatives.

use nalgebra::{Const, U1};
use num_dual::{DualNum, DualSVec64};

pub(crate) trait Real: DualNum<Primitive = f64> + Copy {}
impl<T: DualNum<Primitive = f64> + Copy> Real for T {}

pub(crate) type V<T> = [T; 3];
/// Row-major 3×3 matrix, `m[a][b]`.
pub(crate) type M<T> = [[T; 3]; 3];

#[inline]
pub(crate) fn zero<T: Real>() -> T {
    T::from(0.0)
}

#[inline]
pub(crate) fn sub<T: Real>(a: &V<T>, b: &V<T>) -> V<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn add<T: Real>(a: &V<T>, b: &V<T>) -> V<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub(crate) fn scale<T: Real>(a: &V<T>, s: T) -> V<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub(crate) fn dot<T: Real>(a: &V<T>, b: &V<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross<T: Real>(a: &V<T>, b: &V<T>) -> V<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn norm<T: Real>(a: &V<T>) -> T {
    dot(a, a).sqrt()
}

pub(crate) fn mat_vec<T: Real>(m: &M<T>, v: &V<T>) -> V<T> {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

pub(crate) fn transpose<T: Real>(m: &M<T>) -> M<T> {
    let mut t = *m;
    for a in 0..3 {
        for b in 0..3 {
            t[a][b] = m[b][a];
        }
    }
    t
}

pub(crate) fn mat_mul<T: Real>(a: &M<T>, b: &M<T>) -> M<T> {
    let mut out = [[zero::<T>(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut s = zero::<T>();
            for k in 0..3 {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub(crate) fn det3<T: Real>(m: &M<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub(crate) fn inv3<T: Real>(m: &M<T>) -> M<T> {
    let d = det3(m);
    let inv_d = d.recip();
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    [
        [cof(1, 2, 1, 2) * inv_d, -cof(0, 2, 1, 2) * inv_d, cof(0, 1, 1, 2) * inv_d],
        [-cof(1, 2, 0, 2) * inv_d, cof(0, 2, 0, 2) * inv_d, -cof(0, 1, 0, 2) * inv_d],
        [cof(1, 2, 0, 1) * inv_d, -cof(0, 2, 0, 1) * inv_d, cof(0, 1, 0, 1) * inv_d],
    ]
}

/// Matrix with the given vectors as columns.
pub(crate) fn from_columns<T: Real>(c0: &V<T>, c1: &V<T>, c2: &V<T>) -> M<T> {
    [[c0[0], c1[0], c2[0]], [c0[1], c1[1], c2[1]], [c0[2], c1[2], c2[2]]]
}

pub(crate) fn sym<T: Real>(m: &M<T>) -> M<T> {
    let mut s = *m;
    for a in 0..3 {
        for b in 0..3 {
            s[a][b] = (m[a][b] + m[b][a]) * 0.5;
        }
    }
    s
}

pub(crate) fn trace<T: Real>(m: &M<T>) -> T {
    m[0][0] + m[1][1] + m[2][2]
}

/// `trace(a b)` for symmetric inputs, i.e. the Frobenius pairing.
pub(crate) fn frob<T: Real>(a: &M<T>, b: &M<T>) -> T {
    let mut s = zero::<T>();
    for i in 0..3 {
        for j in 0..3 {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

pub(crate) fn mat_sub<T: Real>(a: &M<T>, b: &M<T>) -> M<T> {
    let mut out = *a;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][j] - b[i][j];
        }
    }
    out
}

const SQRT2: f64 = std::f64::consts::SQRT_2;

pub(crate) fn voigt<T: Real>(m: &M<T>) -> [T; 6] {
    [
        m[0][0],
        m[1][1],
        m[2][2],
        m[1][2] * SQRT2,
        m[0][2] * SQRT2,
        m[0][1] * SQRT2,
    ]
}

pub(crate) fn from_voigt<T: Real>(v: &[T; 6]) -> M<T> {
    let (a, b, cc) = (v[3] * (1.0 / SQRT2), v[4] * (1.0 / SQRT2), v[5] * (1.0 / SQRT2));
    [[v[0], cc, b], [cc, v[1], a], [b, a, v[2]]]
}

// ---------------------------------------------------------------------------
// Curves

/// Edge length, unit tangent, and arc-length derivative `∂_s v` of the P1 field.
pub(crate) fn edge_strain<T: Real>(x: &[V<T>; 2], u: &[V<T>; 2]) -> (T, V<T>, V<T>) {
    let e = sub(&x[1], &x[0]);
    let len = norm(&e);
    let inv = len.recip();
    (len, scale(&e, inv), scale(&sub(&u[1], &u[0]), inv))
}

/// `μ_tan (τᵀw)² + μ_tsv |w - (τᵀw) τ|²`, frame-free form of the curve density.
pub(crate) fn curve_density<T: Real>(mu_tan: f64, mu_tsv: f64, tau: &V<T>, w: &V<T>) -> T {
    let t = dot(tau, w);
    let normal_sq = dot(w, w) - t * t;
    t * t * mu_tan + normal_sq * mu_tsv
}

// ---------------------------------------------------------------------------
// Triangles

/// Frame projections of the tangential P1 Jacobian on one triangle.
#[derive(Clone, Copy, Debug)]
pub(crate) struct TriComponents<T> {
    pub a11: T,
    pub a22: T,
    pub a12: T,
    pub a21: T,
    pub a13: T,
    pub a23: T,
}

/// Frame `(τ₁, τ₂, ν)` with `τ₁` along the first edge and `ν = τ₁ × τ₂`, plus area.
pub(crate) fn triangle_frame<T: Real>(x: &[V<T>; 3]) -> ([V<T>; 3], T) {
    let e1 = sub(&x[1], &x[0]);
    let e2 = sub(&x[2], &x[0]);
    let n = cross(&e1, &e2);
    let n_len = norm(&n);
    let nu = scale(&n, n_len.recip());
    let t1 = scale(&e1, norm(&e1).recip());
    let t2 = cross(&nu, &t1);
    ([t1, t2, nu], n_len * 0.5)
}

pub(crate) fn triangle_strain<T: Real>(x: &[V<T>; 3], u: &[V<T>; 3]) -> (TriComponents<T>, T) {
    let ([t1, t2, nu], area) = triangle_frame(x);
    let e1 = sub(&x[1], &x[0]);
    let e2 = sub(&x[2], &x[0]);
    let d1 = sub(&u[1], &u[0]);
    let d2 = sub(&u[2], &u[0]);
    // Local edge coordinates; P = [p1 p2] maps tangent coordinates to edges.
    let (p11, p12) = (dot(&e1, &t1), dot(&e1, &t2));
    let (p21, p22) = (dot(&e2, &t1), dot(&e2, &t2));
    let det = p11 * p22 - p21 * p12;
    let inv = det.recip();
    // [dv τ₁, dv τ₂] = [d1 d2] P⁻¹
    let m1 = add(&scale(&d1, p22 * inv), &scale(&d2, -p12 * inv));
    let m2 = add(&scale(&d1, -p21 * inv), &scale(&d2, p11 * inv));
    (
        TriComponents {
            a11: dot(&t1, &m1),
            a22: dot(&t2, &m2),
            a12: dot(&t1, &m2),
            a21: dot(&t2, &m1),
            a13: dot(&nu, &m1),
            a23: dot(&nu, &m2),
        },
        area,
    )
}

pub(crate) fn surface_density<T: Real>(lambda_tan: f64, mu_tan: f64, mu_tsv: f64, mu_rot: f64, a: &TriComponents<T>) -> T {
    let tr = a.a11 + a.a22;
    let s = a.a12 + a.a21;
    let r = a.a12 - a.a21;
    let tr_sq = a.a11 * a.a11 + a.a22 * a.a22 + s * s * 0.5;
    tr * tr * lambda_tan + tr_sq * mu_tan + (a.a13 * a.a13 + a.a23 * a.a23) * mu_tsv + r * r * (0.5 * mu_rot)
}

// ---------------------------------------------------------------------------
// Tetrahedra

pub(crate) fn edge_matrix<T: Real>(x: &[V<T>; 4]) -> M<T> {
    from_columns(&sub(&x[1], &x[0]), &sub(&x[2], &x[0]), &sub(&x[3], &x[0]))
}

pub(crate) fn tet_signed_volume<T: Real>(x: &[V<T>; 4]) -> T {
    det3(&edge_matrix(x)) * (1.0 / 6.0)
}

/// Constant Jacobian of the P1 interpolant and the (unsigned) volume.
pub(crate) fn tet_dv<T: Real>(x: &[V<T>; 4], u: &[V<T>; 4]) -> (M<T>, T) {
    let e = edge_matrix(x);
    let du = from_columns(&sub(&u[1], &u[0]), &sub(&u[2], &u[0]), &sub(&u[3], &u[0]));
    let dv = mat_mul(&du, &inv3(&e));
    (dv, (det3(&e) * (1.0 / 6.0)).abs())
}

pub(crate) fn isotropic_density<T: Real>(lambda: f64, mu: f64, eps: &M<T>) -> T {
    let tr = trace(eps);
    tr * tr * (0.5 * lambda) + frob(eps, eps) * mu
}

/// Layered elasticity tensor with layer normal `n` and transverse field `s`.
pub(crate) fn laminar_density<T: Real>(p: &[f64; 4], eps: &M<T>, s: &V<T>, n: &V<T>) -> T {
    let [lambda_tan, mu_tan, mu_tsv, mu_ang] = *p;
    let en = mat_vec(eps, n);
    let es = mat_vec(eps, s);
    let nen = dot(n, &en);
    let ses = dot(s, &es);
    let nes = dot(n, &es);
    let tr = trace(eps);
    let tan = tr - nen;
    let tan_sq = frob(eps, eps) - dot(&en, &en) * 2.0 + nen * nen;
    tan * tan * lambda_tan + tan_sq * mu_tan + ses * ses * mu_tsv + (dot(&es, &es) - nes * nes) * (2.0 * mu_ang)
}

pub(crate) fn voigt_density<T: Real>(q: &[[f64; 6]; 6], eps: &M<T>) -> T {
    let s = voigt(eps);
    let mut out = zero::<T>();
    for i in 0..6 {
        let mut row = zero::<T>();
        for j in 0..6 {
            row += s[j] * q[i][j];
        }
        out += s[i] * row;
    }
    out
}

/// Transport of a layered structure by the affine map taking `x0` to `x1`:
/// `S ↦ A S` and `N ↦ A⁻ᵀ N / |A⁻ᵀ N|`.
pub(crate) fn transport_layer<T: Real>(x0: &[V<T>; 4], x1: &[V<T>; 4], s: &V<T>, n: &V<T>) -> (V<T>, V<T>) {
    let a = mat_mul(&edge_matrix(x1), &inv3(&edge_matrix(x0)));
    let s1 = mat_vec(&a, s);
    let n1 = mat_vec(&transpose(&inv3(&a)), n);
    let len = norm(&n1);
    (s1, scale(&n1, len.recip()))
}

// ---------------------------------------------------------------------------
// Dual-number plumbing

pub(crate) const LOCAL_DIM: usize = 36;
pub(crate) type D = DualSVec64<LOCAL_DIM>;

/// Seed every input as an independent direction.
pub(crate) fn seed(values: &[f64; LOCAL_DIM]) -> [D; LOCAL_DIM] {
    std::array::from_fn(|i| D::from_re(values[i]).derivative(i))
}

pub(crate) fn split(value: D) -> (f64, [f64; LOCAL_DIM]) {
    let eps = value.eps.unwrap_generic(Const::<LOCAL_DIM>, U1);
    (value.re, std::array::from_fn(|i| eps[i]))
}
