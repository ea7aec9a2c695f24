//! Small fixed-size 2x2 matrix helpers for the bivariate emission family.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use libm::lgamma as ln_gamma;

pub type Mat2 = [[f64; 2]; 2];

pub const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

pub fn det(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

pub fn trace(m: &Mat2) -> f64 {
    m[0][0] + m[1][1]
}

pub fn inv(m: &Mat2) -> Mat2 {
    let d = det(m);
    [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
}

pub fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

pub fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

pub fn add(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

pub fn sub(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] - b[0][0], a[0][1] - b[0][1]],
        [a[1][0] - b[1][0], a[1][1] - b[1][1]],
    ]
}

pub fn scale(a: &Mat2, s: f64) -> Mat2 {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}

pub fn outer(u: &[f64; 2], v: &[f64; 2]) -> Mat2 {
    [[u[0] * v[0], u[0] * v[1]], [u[1] * v[0], u[1] * v[1]]]
}

pub fn mat_vec(a: &Mat2, v: &[f64; 2]) -> [f64; 2] {
    [
        a[0][0] * v[0] + a[0][1] * v[1],
        a[1][0] * v[0] + a[1][1] * v[1],
    ]
}

/// Sandwich product `a b a^T`.
pub fn congruence(a: &Mat2, b: &Mat2) -> Mat2 {
    mul(&mul(a, b), &transpose(a))
}

/// Lower Cholesky factor, `None` unless symmetric positive-definite.
pub fn cholesky(m: &Mat2) -> Option<Mat2> {
    if !m.iter().flatten().all(|x| x.is_finite()) || (m[0][1] - m[1][0]).abs() > 1e-12 * (m[0][0].abs() + m[1][1].abs()) {
        return None;
    }
    if m[0][0] <= 0.0 {
        return None;
    }
    let l00 = m[0][0].sqrt();
    let l10 = m[1][0] / l00;
    let r = m[1][1] - l10 * l10;
    if r <= 0.0 {
        return None;
    }
    Some([[l00, 0.0], [l10, r.sqrt()]])
}

pub fn is_spd(m: &Mat2) -> bool {
    cholesky(m).is_some()
}

/// Symmetric eigendecomposition: eigenvalues descending, first eigenvector
/// at angle in [0, pi), second eigenvector rotated by +pi/2.
#[derive(Debug, Clone, Copy)]
pub struct SymEigen2 {
    pub values: [f64; 2],
    pub vectors: [[f64; 2]; 2],
    pub angle: f64,
}

pub fn sym_eigen(m: &Mat2) -> SymEigen2 {
    let a = m[0][0];
    let b = 0.5 * (m[0][1] + m[1][0]);
    let c = m[1][1];
    let half = 0.5 * (a + c);
    let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let mut phi = 0.5 * (2.0 * b).atan2(a - c);
    if phi < 0.0 {
        phi += std::f64::consts::PI;
    }
    let (s, co) = phi.sin_cos();
    SymEigen2 {
        values: [half + r, half - r],
        vectors: [[co, s], [-s, co]],
        angle: phi,
    }
}

pub fn rotation(omega: f64) -> Mat2 {
    let (s, c) = omega.sin_cos();
    [[c, -s], [s, c]]
}

/// Principal square root of a symmetric positive-definite matrix.
pub fn sqrtm(m: &Mat2) -> Mat2 {
    let s = det(m).sqrt();
    let t = (trace(m) + 2.0 * s).sqrt();
    [
        [(m[0][0] + s) / t, m[0][1] / t],
        [m[1][0] / t, (m[1][1] + s) / t],
    ]
}

pub fn symmetrize(m: &Mat2) -> Mat2 {
    let o = 0.5 * (m[0][1] + m[1][0]);
    [[m[0][0], o], [o, m[1][1]]]
}

fn ln_multigamma2(a: f64) -> f64 {
    0.5 * std::f64::consts::PI.ln() + ln_gamma(a) + ln_gamma(a - 0.5)
}

/// Wishart log-density of `x` with `df` degrees of freedom and scale `s`.
pub fn ln_wishart_pdf(x: &Mat2, df: f64, s: &Mat2) -> f64 {
    if !is_spd(x) {
        return f64::NEG_INFINITY;
    }
    let p = 2.0;
    let tr = trace(&mul(&inv(s), x));
    0.5 * (df - p - 1.0) * det(x).ln() - 0.5 * tr - 0.5 * df * p * 2f64.ln() - 0.5 * df * det(s).ln()
        - ln_multigamma2(0.5 * df)
}

/// Bartlett-decomposition Wishart draw.
pub fn sample_wishart<R: Rng + ?Sized>(df: f64, s: &Mat2, rng: &mut R) -> Mat2 {
    let l = cholesky(s).expect("Wishart scale must be positive-definite");
    let c1: f64 = ChiSquared::new(df).unwrap().sample(rng);
    let c2: f64 = ChiSquared::new(df - 1.0).unwrap().sample(rng);
    let n: f64 = StandardNormal.sample(rng);
    let a = [[c1.sqrt(), 0.0], [n, c2.sqrt()]];
    let la = mul(&l, &a);
    symmetrize(&mul(&la, &transpose(&la)))
}
