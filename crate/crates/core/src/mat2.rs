//! Nodewise 2x2 matrix algebra. `m[i][j]` is row `i`, column `j`.

pub type Mat2 = [[f64; 2]; 2];

pub const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];
pub const ZERO: Mat2 = [[0.0, 0.0], [0.0, 0.0]];

#[inline]
pub fn det(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Cofactor matrix: `Cof [[a, b], [c, d]] = [[d, -c], [-b, a]]`.
#[inline]
pub fn cof(m: &Mat2) -> Mat2 {
    [[m[1][1], -m[1][0]], [-m[0][1], m[0][0]]]
}

#[inline]
pub fn transpose(m: &Mat2) -> Mat2 {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

#[inline]
pub fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut r = ZERO;
    for i in 0..2 {
        for j in 0..2 {
            r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    r
}

#[inline]
pub fn add(a: &Mat2, b: &Mat2) -> Mat2 {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

#[inline]
pub fn sub(a: &Mat2, b: &Mat2) -> Mat2 {
    [[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]]
}

#[inline]
pub fn scale(a: &Mat2, s: f64) -> Mat2 {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}

#[inline]
pub fn mul_vec(a: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

/// Frobenius contraction `a : b`.
#[inline]
pub fn ddot(a: &Mat2, b: &Mat2) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

#[inline]
pub fn frob2(a: &Mat2) -> f64 {
    ddot(a, a)
}

/// Smallest eigenvalue of the symmetric part.
pub fn sym_min_eig(a: &Mat2) -> f64 {
    let p = a[0][0];
    let r = a[1][1];
    let q = 0.5 * (a[0][1] + a[1][0]);
    let mean = 0.5 * (p + r);
    let rad = (0.25 * (p - r) * (p - r) + q * q).sqrt();
    mean - rad
}

pub fn max_abs_diff(a: &Mat2, b: &Mat2) -> f64 {
    let d = sub(a, b);
    d.iter().flatten().fold(0.0_f64, |m, x| m.max(x.abs()))
}
