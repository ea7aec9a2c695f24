//! Split/combine maps of emission blocks.
//!
//! `w1` is the share of the parent's initial weight taken by the first child
//! (w2 = 1 - w1). Children are ordered: `c1` is the one with the smaller
//! repulsive coordinate (or, for the bivariate family, the one on the negative
//! side of the parent's leading eigenvector).

use super::EmissionParams;
use crate::linalg::{self, Mat2};
use crate::special::{ln_beta_pdf, ln_normal_pdf};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

const EPS_M_SD: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum EmissionAux {
    UnivariateNormal {
        u: f64,
        beta: f64,
    },
    BivariateNormal {
        u1: f64,
        b: f64,
        beta1: f64,
        beta2: f64,
        omega: f64,
    },
    StepAngle {
        t_mu: f64,
        t_sigma: f64,
        t_k: f64,
        u_z: f64,
        eps_m: f64,
    },
}

#[derive(Debug, Clone)]
pub struct SplitDraw {
    pub child1: EmissionParams,
    pub child2: EmissionParams,
    pub aux: EmissionAux,
    pub log_jacobian: f64,
}

fn beta_draw<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    loop {
        let v: f64 = Beta::new(a, b).unwrap().sample(rng);
        if v > 0.0 && v < 1.0 {
            return v;
        }
    }
}

fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.random();
        if v > 0.0 {
            return v;
        }
    }
}

pub fn draw_split_aux<R: Rng + ?Sized>(parent: &EmissionParams, rng: &mut R) -> EmissionAux {
    match *parent {
        EmissionParams::UnivariateNormal { .. } => EmissionAux::UnivariateNormal {
            u: beta_draw(2.0, 2.0, rng),
            beta: beta_draw(1.0, 1.0, rng),
        },
        EmissionParams::BivariateNormal { .. } => EmissionAux::BivariateNormal {
            u1: beta_draw(2.0, 2.0, rng),
            b: beta_draw(2.0, 2.0, rng),
            beta1: beta_draw(1.0, 1.0, rng),
            beta2: beta_draw(1.0, 1.0, rng),
            omega: FRAC_PI_2 * (1.0 - open_unit(rng)),
        },
        EmissionParams::StepAngle { z, mu, sigma, k, .. } => EmissionAux::StepAngle {
            t_mu: 0.5 * mu * open_unit(rng),
            t_sigma: 0.5 * sigma * open_unit(rng),
            t_k: 0.5 * k * open_unit(rng),
            u_z: z.min(1.0 - z) * open_unit(rng),
            eps_m: EPS_M_SD * rng.sample::<f64, _>(StandardNormal),
        },
    }
}

fn ln_unif(x: f64, hi: f64) -> f64 {
    if x > 0.0 && x < hi {
        -hi.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Log proposal density of the auxiliary draws given the parent.
pub fn ln_split_aux_density(parent: &EmissionParams, aux: &EmissionAux) -> f64 {
    match (parent, aux) {
        (EmissionParams::UnivariateNormal { .. }, EmissionAux::UnivariateNormal { u, beta }) => {
            ln_beta_pdf(*u, 2.0, 2.0) + ln_beta_pdf(*beta, 1.0, 1.0)
        }
        (
            EmissionParams::BivariateNormal { .. },
            EmissionAux::BivariateNormal {
                u1,
                b,
                beta1,
                beta2,
                omega,
            },
        ) => {
            ln_beta_pdf(*u1, 2.0, 2.0)
                + ln_beta_pdf(*b, 2.0, 2.0)
                + ln_beta_pdf(*beta1, 1.0, 1.0)
                + ln_beta_pdf(*beta2, 1.0, 1.0)
                + if *omega >= 0.0 && *omega < FRAC_PI_2 {
                    -(FRAC_PI_2.ln())
                } else {
                    f64::NEG_INFINITY
                }
        }
        (
            EmissionParams::StepAngle { z, mu, sigma, k, .. },
            EmissionAux::StepAngle {
                t_mu,
                t_sigma,
                t_k,
                u_z,
                eps_m,
            },
        ) => {
            ln_unif(*t_mu, 0.5 * mu)
                + ln_unif(*t_sigma, 0.5 * sigma)
                + ln_unif(*t_k, 0.5 * k)
                + ln_unif(*u_z, z.min(1.0 - z))
                + ln_normal_pdf(*eps_m, 0.0, EPS_M_SD)
        }
        _ => f64::NEG_INFINITY,
    }
}

struct BivariateGeometry {
    v: [f64; 2],
    u: [f64; 2],
    r: [f64; 2],
}

fn bivariate_geometry(sigma: &Mat2, u1: f64, b: f64) -> BivariateGeometry {
    let e = linalg::sym_eigen(sigma);
    let u2 = (1.0 - u1 * u1).sqrt() * (2.0 * b - 1.0);
    let s1 = e.values[0].sqrt() * u1;
    let s2 = e.values[1].sqrt() * u2;
    let v = [
        s1 * e.vectors[0][0] + s2 * e.vectors[1][0],
        s1 * e.vectors[0][1] + s2 * e.vectors[1][1],
    ];
    BivariateGeometry {
        v,
        u: [u1, u2],
        r: e.values,
    }
}

/// Log of the emission block of the split Jacobian.
pub fn split_log_jacobian(parent: &EmissionParams, w1: f64, aux: &EmissionAux) -> f64 {
    let w2 = 1.0 - w1;
    match (parent, aux) {
        (EmissionParams::StepAngle { .. }, EmissionAux::StepAngle { .. }) => 5.0 * 2f64.ln(),
        (EmissionParams::UnivariateNormal { sigma, .. }, EmissionAux::UnivariateNormal { u, beta }) => {
            let r = sigma * sigma;
            let mm = r * (1.0 - u * u);
            let s1 = (beta * mm / w1).sqrt();
            let s2 = ((1.0 - beta) * mm / w2).sqrt();
            let j_var = sigma.ln() + mm.ln() - 1.5 * (w1 * w2).ln();
            j_var + sigma.ln() - (2.0 * s1 * s2).ln()
        }
        (
            EmissionParams::BivariateNormal { sigma, .. },
            EmissionAux::BivariateNormal {
                u1, b, beta1, beta2, ..
            },
        ) => {
            let g = bivariate_geometry(sigma, *u1, *b);
            let un2 = g.u[0] * g.u[0] + g.u[1] * g.u[1];
            2f64.ln() + 2.0 * (g.r[0] * g.r[1]).ln() + 0.5 * (1.0 - u1 * u1).ln() + 1.5 * (1.0 - un2).ln()
                + (beta1 - beta2).abs().ln()
                - 4.0 * (w1 * w2).ln()
        }
        _ => f64::NAN,
    }
}

/// Deterministic split given auxiliaries; `None` if the children are not
/// valid parameter blocks.
pub fn split_with_aux(parent: &EmissionParams, w1: f64, aux: &EmissionAux) -> Option<(EmissionParams, EmissionParams, f64)> {
    let w2 = 1.0 - w1;
    let (c1, c2) = match (parent, aux) {
        (
            EmissionParams::StepAngle { z, mu, sigma, m, k },
            EmissionAux::StepAngle {
                t_mu,
                t_sigma,
                t_k,
                u_z,
                eps_m,
            },
        ) => (
            EmissionParams::StepAngle {
                z: z - u_z,
                mu: mu - t_mu,
                sigma: sigma - t_sigma,
                m: m + eps_m,
                k: k - t_k,
            },
            EmissionParams::StepAngle {
                z: z + u_z,
                mu: mu + t_mu,
                sigma: sigma + t_sigma,
                m: m - eps_m,
                k: k + t_k,
            },
        ),
        (EmissionParams::UnivariateNormal { mu, sigma }, EmissionAux::UnivariateNormal { u, beta }) => {
            let r = sigma * sigma;
            let mm = r * (1.0 - u * u);
            (
                EmissionParams::UnivariateNormal {
                    mu: mu - u * sigma * (w2 / w1).sqrt(),
                    sigma: (beta * mm / w1).sqrt(),
                },
                EmissionParams::UnivariateNormal {
                    mu: mu + u * sigma * (w1 / w2).sqrt(),
                    sigma: ((1.0 - beta) * mm / w2).sqrt(),
                },
            )
        }
        (
            EmissionParams::BivariateNormal { mu, sigma },
            EmissionAux::BivariateNormal {
                u1,
                b,
                beta1,
                beta2,
                omega,
            },
        ) => {
            let g = bivariate_geometry(sigma, *u1, *b);
            let f1 = (w2 / w1).sqrt();
            let f2 = (w1 / w2).sqrt();
            let mm = linalg::sub(sigma, &linalg::outer(&g.v, &g.v));
            if !linalg::is_spd(&mm) {
                return None;
            }
            let kk = linalg::sqrtm(&mm);
            let rot = linalg::rotation(*omega);
            let bm = linalg::congruence(&rot, &[[*beta1, 0.0], [0.0, *beta2]]);
            let s1 = linalg::symmetrize(&linalg::congruence(&kk, &bm));
            let s2 = linalg::symmetrize(&linalg::sub(&mm, &s1));
            (
                EmissionParams::BivariateNormal {
                    mu: [mu[0] - f1 * g.v[0], mu[1] - f1 * g.v[1]],
                    sigma: linalg::scale(&s1, 1.0 / w1),
                },
                EmissionParams::BivariateNormal {
                    mu: [mu[0] + f2 * g.v[0], mu[1] + f2 * g.v[1]],
                    sigma: linalg::scale(&s2, 1.0 / w2),
                },
            )
        }
        _ => return None,
    };
    if !(c1.is_valid() && c2.is_valid()) {
        return None;
    }
    Some((c1, c2, split_log_jacobian(parent, w1, aux)))
}

/// Draws auxiliaries and splits; `None` when the children fall outside the
/// parameter space (the move then auto-rejects).
pub fn split_params<R: Rng + ?Sized>(parent: &EmissionParams, w1: f64, rng: &mut R) -> Option<SplitDraw> {
    let aux = draw_split_aux(parent, rng);
    let (child1, child2, log_jacobian) = split_with_aux(parent, w1, &aux)?;
    Some(SplitDraw {
        child1,
        child2,
        aux,
        log_jacobian,
    })
}

/// Inverse of `split_with_aux`: recovers the parent and the auxiliaries.
/// `None` if (c1, c2) in this order is not in the image of the split.
pub fn combine_params(c1: &EmissionParams, c2: &EmissionParams, w1: f64) -> Option<(EmissionParams, EmissionAux)> {
    let w2 = 1.0 - w1;
    let (parent, aux) = match (c1, c2) {
        (
            EmissionParams::StepAngle {
                z: z1,
                mu: mu1,
                sigma: s1,
                m: m1,
                k: k1,
            },
            EmissionParams::StepAngle {
                z: z2,
                mu: mu2,
                sigma: s2,
                m: m2,
                k: k2,
            },
        ) => {
            let p = EmissionParams::StepAngle {
                z: 0.5 * (z1 + z2),
                mu: 0.5 * (mu1 + mu2),
                sigma: 0.5 * (s1 + s2),
                m: 0.5 * (m1 + m2),
                k: 0.5 * (k1 + k2),
            };
            let a = EmissionAux::StepAngle {
                t_mu: 0.5 * (mu2 - mu1),
                t_sigma: 0.5 * (s2 - s1),
                t_k: 0.5 * (k2 - k1),
                u_z: 0.5 * (z2 - z1),
                eps_m: 0.5 * (m1 - m2),
            };
            (p, a)
        }
        (
            EmissionParams::UnivariateNormal { mu: mu1, sigma: s1 },
            EmissionParams::UnivariateNormal { mu: mu2, sigma: s2 },
        ) => {
            let mu = w1 * mu1 + w2 * mu2;
            let r = w1 * (s1 * s1 + mu1 * mu1) + w2 * (s2 * s2 + mu2 * mu2) - mu * mu;
            if r <= 0.0 {
                return None;
            }
            let sigma = r.sqrt();
            let u = (mu2 - mu1) * (w1 * w2).sqrt() / sigma;
            let beta = w1 * s1 * s1 / (r * (1.0 - u * u));
            (
                EmissionParams::UnivariateNormal { mu, sigma },
                EmissionAux::UnivariateNormal { u, beta },
            )
        }
        (
            EmissionParams::BivariateNormal { mu: mu1, sigma: sg1 },
            EmissionParams::BivariateNormal { mu: mu2, sigma: sg2 },
        ) => {
            let mu = [w1 * mu1[0] + w2 * mu2[0], w1 * mu1[1] + w2 * mu2[1]];
            let second = linalg::add(
                &linalg::scale(&linalg::add(sg1, &linalg::outer(mu1, mu1)), w1),
                &linalg::scale(&linalg::add(sg2, &linalg::outer(mu2, mu2)), w2),
            );
            let sigma = linalg::symmetrize(&linalg::sub(&second, &linalg::outer(&mu, &mu)));
            if !linalg::is_spd(&sigma) {
                return None;
            }
            let sw = (w1 * w2).sqrt();
            let v = [(mu2[0] - mu1[0]) * sw, (mu2[1] - mu1[1]) * sw];
            let e = linalg::sym_eigen(&sigma);
            let u1 = (e.vectors[0][0] * v[0] + e.vectors[0][1] * v[1]) / e.values[0].sqrt();
            let u2 = (e.vectors[1][0] * v[0] + e.vectors[1][1] * v[1]) / e.values[1].sqrt();
            if !(u1 > 0.0 && u1 < 1.0) {
                return None;
            }
            let b = 0.5 * (u2 / (1.0 - u1 * u1).sqrt() + 1.0);
            let mm = linalg::sub(&sigma, &linalg::outer(&v, &v));
            if !linalg::is_spd(&mm) {
                return None;
            }
            let kinv = linalg::inv(&linalg::sqrtm(&mm));
            let bm = linalg::symmetrize(&linalg::congruence(&kinv, &linalg::scale(sg1, w1)));
            let be = linalg::sym_eigen(&bm);
            let (omega, beta1, beta2) = if be.angle < FRAC_PI_2 {
                (be.angle, be.values[0], be.values[1])
            } else {
                (be.angle - FRAC_PI_2, be.values[1], be.values[0])
            };
            (
                EmissionParams::BivariateNormal { mu, sigma },
                EmissionAux::BivariateNormal {
                    u1,
                    b,
                    beta1,
                    beta2,
                    omega,
                },
            )
        }
        _ => return None,
    };
    if !parent.is_valid() || ln_split_aux_density(&parent, &aux) == f64::NEG_INFINITY {
        return None;
    }
    Some((parent, aux))
}

/// Coordinates entering the pair-similarity measure of the combine move.
pub fn similarity_coords(params: &EmissionParams) -> Vec<f64> {
    match *params {
        EmissionParams::StepAngle { mu, sigma, m, k, .. } => vec![mu, sigma, m, k],
        EmissionParams::UnivariateNormal { mu, sigma } => vec![mu, sigma],
        EmissionParams::BivariateNormal { mu, .. } => mu.to_vec(),
    }
}


impl EmissionAux {
    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            EmissionAux::UnivariateNormal { u, beta } => vec![u, beta],
            EmissionAux::BivariateNormal {
                u1,
                b,
                beta1,
                beta2,
                omega,
            } => vec![u1, b, beta1, beta2, omega],
            EmissionAux::StepAngle {
                t_mu,
                t_sigma,
                t_k,
                u_z,
                eps_m,
            } => vec![t_mu, t_sigma, t_k, u_z, eps_m],
        }
    }

    pub fn from_vec(family: super::Family, v: &[f64]) -> EmissionAux {
        match family {
            super::Family::UnivariateNormal => EmissionAux::UnivariateNormal { u: v[0], beta: v[1] },
            super::Family::BivariateNormal => EmissionAux::BivariateNormal {
                u1: v[0],
                b: v[1],
                beta1: v[2],
                beta2: v[3],
                omega: v[4],
            },
            super::Family::StepAngle => EmissionAux::StepAngle {
                t_mu: v[0],
                t_sigma: v[1],
                t_k: v[2],
                u_z: v[3],
                eps_m: v[4],
            },
        }
    }
}
