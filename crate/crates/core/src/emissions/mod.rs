//! Emission families: densities, priors, random-walk proposals and
//! split/combine parameter maps.

mod split;

pub use split::{
    combine_params, draw_split_aux, ln_split_aux_density, similarity_coords, split_log_jacobian, split_params,
    split_with_aux, EmissionAux, SplitDraw,
};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat2};
use crate::panel::PanelKind;
use crate::special::{
    expit, ln_beta_pdf, ln_bessel_i0, ln_uniform_pdf, logit, wrap_angle, LN_2PI,
};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use libm::lgamma as ln_gamma;
use std::f64::consts::{PI, TAU};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    UnivariateNormal,
    BivariateNormal,
    StepAngle,
}

impl Family {
    pub fn panel_kind(self) -> PanelKind {
        match self {
            Family::UnivariateNormal => PanelKind::Scalar,
            Family::BivariateNormal => PanelKind::Vector2,
            Family::StepAngle => PanelKind::StepAngle,
        }
    }

    pub fn for_panel(kind: PanelKind) -> Family {
        match kind {
            PanelKind::Scalar => Family::UnivariateNormal,
            PanelKind::Vector2 => Family::BivariateNormal,
            PanelKind::StepAngle => Family::StepAngle,
        }
    }

    /// Dimension of the repulsive coordinate.
    pub fn repulsion_dim(self) -> usize {
        match self {
            Family::BivariateNormal => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum EmissionParams {
    UnivariateNormal {
        mu: f64,
        sigma: f64,
    },
    BivariateNormal {
        mu: [f64; 2],
        sigma: Mat2,
    },
    StepAngle {
        z: f64,
        mu: f64,
        sigma: f64,
        m: f64,
        k: f64,
    },
}

impl EmissionParams {
    pub fn family(&self) -> Family {
        match self {
            EmissionParams::UnivariateNormal { .. } => Family::UnivariateNormal,
            EmissionParams::BivariateNormal { .. } => Family::BivariateNormal,
            EmissionParams::StepAngle { .. } => Family::StepAngle,
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            EmissionParams::UnivariateNormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma > 0.0,
            EmissionParams::BivariateNormal { mu, sigma } => mu.iter().all(|v| v.is_finite()) && linalg::is_spd(&sigma),
            EmissionParams::StepAngle { z, mu, sigma, m, k } => {
                z > 0.0
                    && z < 1.0
                    && mu > 0.0
                    && mu.is_finite()
                    && sigma > 0.0
                    && sigma.is_finite()
                    && m > -PI
                    && m <= PI
                    && k > 0.0
                    && k.is_finite()
            }
        }
    }

    /// The coordinate(s) subject to the repulsive prior.
    pub fn repulsion_point(&self) -> Vec<f64> {
        match self {
            EmissionParams::UnivariateNormal { mu, .. } | EmissionParams::StepAngle { mu, .. } => vec![*mu],
            EmissionParams::BivariateNormal { mu, .. } => mu.to_vec(),
        }
    }

    /// Flat parameter vector (covariances as s11, s12, s22).
    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            EmissionParams::UnivariateNormal { mu, sigma } => vec![mu, sigma],
            EmissionParams::BivariateNormal { mu, sigma } => vec![mu[0], mu[1], sigma[0][0], sigma[0][1], sigma[1][1]],
            EmissionParams::StepAngle { z, mu, sigma, m, k } => vec![z, mu, sigma, m, k],
        }
    }

    pub fn from_vec(family: Family, v: &[f64]) -> EmissionParams {
        match family {
            Family::UnivariateNormal => EmissionParams::UnivariateNormal { mu: v[0], sigma: v[1] },
            Family::BivariateNormal => EmissionParams::BivariateNormal {
                mu: [v[0], v[1]],
                sigma: [[v[2], v[3]], [v[3], v[4]]],
            },
            Family::StepAngle => EmissionParams::StepAngle {
                z: v[0],
                mu: v[1],
                sigma: v[2],
                m: v[3],
                k: v[4],
            },
        }
    }

    pub fn prepare(&self) -> Prepared {
        match *self {
            EmissionParams::UnivariateNormal { mu, sigma } => Prepared::Normal {
                mu,
                inv_sigma: 1.0 / sigma,
                c: -0.5 * LN_2PI - sigma.ln(),
            },
            EmissionParams::BivariateNormal { mu, sigma } => Prepared::Bivariate {
                mu,
                inv: linalg::inv(&sigma),
                c: -LN_2PI - 0.5 * linalg::det(&sigma).ln(),
            },
            EmissionParams::StepAngle { z, mu, sigma, m, k } => {
                let shape = mu * mu / (sigma * sigma);
                let rate = mu / (sigma * sigma);
                Prepared::StepAngle {
                    ln_z: z.ln(),
                    ln_1mz: (-z).ln_1p(),
                    shape,
                    rate,
                    cg: shape * rate.ln() - ln_gamma(shape),
                    m,
                    k,
                    cv: -TAU.ln() - ln_bessel_i0(k),
                }
            }
        }
    }

    /// Draws one observation.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match *self {
            EmissionParams::UnivariateNormal { mu, sigma } => {
                vec![mu + sigma * rng.sample::<f64, _>(StandardNormal)]
            }
            EmissionParams::BivariateNormal { mu, sigma } => {
                let l = linalg::cholesky(&sigma).expect("covariance must be positive-definite");
                let e = [rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)];
                let v = linalg::mat_vec(&l, &e);
                vec![mu[0] + v[0], mu[1] + v[1]]
            }
            EmissionParams::StepAngle { z, mu, sigma, m, k } => {
                let step = if rng.random::<f64>() < z {
                    0.0
                } else {
                    let shape = mu * mu / (sigma * sigma);
                    let scale = sigma * sigma / mu;
                    Gamma::new(shape, scale).unwrap().sample(rng)
                };
                vec![step, sample_von_mises(m, k, rng)]
            }
        }
    }
}

/// Per-state constants hoisted out of the log-density.
#[derive(Debug, Clone, Copy)]
pub enum Prepared {
    Normal {
        mu: f64,
        inv_sigma: f64,
        c: f64,
    },
    Bivariate {
        mu: [f64; 2],
        inv: Mat2,
        c: f64,
    },
    StepAngle {
        ln_z: f64,
        ln_1mz: f64,
        shape: f64,
        rate: f64,
        cg: f64,
        m: f64,
        k: f64,
        cv: f64,
    },
}

impl Prepared {
    #[inline]
    pub fn ln_pdf(&self, obs: &[f64]) -> f64 {
        match *self {
            Prepared::Normal { mu, inv_sigma, c } => {
                let z = (obs[0] - mu) * inv_sigma;
                c - 0.5 * z * z
            }
            Prepared::Bivariate { mu, inv, c } => {
                let d0 = obs[0] - mu[0];
                let d1 = obs[1] - mu[1];
                c - 0.5 * (inv[0][0] * d0 * d0 + 2.0 * inv[0][1] * d0 * d1 + inv[1][1] * d1 * d1)
            }
            Prepared::StepAngle {
                ln_z,
                ln_1mz,
                shape,
                rate,
                cg,
                m,
                k,
                cv,
            } => {
                let l = obs[0];
                let angle = k * (obs[1] - m).cos() + cv;
                if l == 0.0 {
                    ln_z + angle
                } else {
                    ln_1mz + cg + (shape - 1.0) * l.ln() - rate * l + angle
                }
            }
        }
    }
}

/// Checked log-density of one observation.
pub fn log_emission_density(params: &EmissionParams, obs: &[f64]) -> Result<f64> {
    let dim = params.family().panel_kind().dim();
    if obs.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: obs.len(),
        });
    }
    if obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite observation".into()));
    }
    Ok(params.prepare().ln_pdf(obs))
}

/// Best-Fisher rejection sampler, result in (-pi, pi].
pub fn sample_von_mises<R: Rng + ?Sized>(m: f64, k: f64, rng: &mut R) -> f64 {
    if k < 1e-8 {
        return wrap_angle(rng.random::<f64>() * TAU - PI);
    }
    let tau = 1.0 + (1.0 + 4.0 * k * k).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * k);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = k * (r - f);
        let u2: f64 = rng.random();
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let u3: f64 = rng.random();
            let theta = if u3 > 0.5 { f.acos() } else { -f.acos() };
            return wrap_angle(m + theta);
        }
    }
}

/// Priors on the non-repulsive emission parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum EmissionHyperPrior {
    UnivariateNormal {
        sigma_lo: f64,
        sigma_hi: f64,
    },
    BivariateNormal {
        df: f64,
        scale: Mat2,
    },
    StepAngle {
        z_a: f64,
        z_b: f64,
        sigma_lo: f64,
        sigma_hi: f64,
        k_lo: f64,
        k_hi: f64,
    },
}

impl EmissionHyperPrior {
    pub fn family(&self) -> Family {
        match self {
            EmissionHyperPrior::UnivariateNormal { .. } => Family::UnivariateNormal,
            EmissionHyperPrior::BivariateNormal { .. } => Family::BivariateNormal,
            EmissionHyperPrior::StepAngle { .. } => Family::StepAngle,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EmissionHyperPrior::UnivariateNormal { sigma_lo, sigma_hi } => {
                if !(sigma_lo >= 0.0 && sigma_lo < sigma_hi) {
                    return Err(Error::config("hyper.sigma", "need 0 <= lo < hi"));
                }
            }
            EmissionHyperPrior::BivariateNormal { df, scale } => {
                if df <= 1.0 {
                    return Err(Error::config("hyper.df", "Wishart df must exceed 1"));
                }
                if !linalg::is_spd(&scale) {
                    return Err(Error::config("hyper.scale", "Wishart scale must be positive-definite"));
                }
            }
            EmissionHyperPrior::StepAngle {
                z_a,
                z_b,
                sigma_lo,
                sigma_hi,
                k_lo,
                k_hi,
            } => {
                if !(z_a > 0.0 && z_b > 0.0) {
                    return Err(Error::config("hyper.z", "beta parameters must be positive"));
                }
                if !(sigma_lo >= 0.0 && sigma_lo < sigma_hi) {
                    return Err(Error::config("hyper.sigma", "need 0 <= lo < hi"));
                }
                if !(k_lo >= 0.0 && k_lo < k_hi) {
                    return Err(Error::config("hyper.k", "need 0 <= lo < hi"));
                }
            }
        }
        Ok(())
    }

    /// Log prior density of everything except the repulsive coordinate.
    pub fn ln_density(&self, params: &EmissionParams) -> f64 {
        if !params.is_valid() {
            return f64::NEG_INFINITY;
        }
        match (self, params) {
            (EmissionHyperPrior::UnivariateNormal { sigma_lo, sigma_hi }, EmissionParams::UnivariateNormal { sigma, .. }) => {
                ln_uniform_pdf(*sigma, *sigma_lo, *sigma_hi)
            }
            (EmissionHyperPrior::BivariateNormal { df, scale }, EmissionParams::BivariateNormal { sigma, .. }) => {
                linalg::ln_wishart_pdf(sigma, *df, scale)
            }
            (
                EmissionHyperPrior::StepAngle {
                    z_a,
                    z_b,
                    sigma_lo,
                    sigma_hi,
                    k_lo,
                    k_hi,
                },
                EmissionParams::StepAngle { z, sigma, k, .. },
            ) => {
                ln_beta_pdf(*z, *z_a, *z_b)
                    + ln_uniform_pdf(*sigma, *sigma_lo, *sigma_hi)
                    + ln_uniform_pdf(*k, *k_lo, *k_hi)
                    - TAU.ln()
            }
            _ => f64::NEG_INFINITY,
        }
    }
}

/// Draws an emission block from the prior with the repulsive coordinate fixed.
pub fn sample_prior<R: Rng + ?Sized>(hyper: &EmissionHyperPrior, point: &[f64], rng: &mut R) -> EmissionParams {
    match *hyper {
        EmissionHyperPrior::UnivariateNormal { sigma_lo, sigma_hi } => EmissionParams::UnivariateNormal {
            mu: point[0],
            sigma: uniform_open(sigma_lo, sigma_hi, rng),
        },
        EmissionHyperPrior::BivariateNormal { df, scale } => EmissionParams::BivariateNormal {
            mu: [point[0], point[1]],
            sigma: linalg::sample_wishart(df, &scale, rng),
        },
        EmissionHyperPrior::StepAngle {
            z_a,
            z_b,
            sigma_lo,
            sigma_hi,
            k_lo,
            k_hi,
        } => {
            let mut z: f64 = Beta::new(z_a, z_b).unwrap().sample(rng);
            // keep strictly inside (0, 1) despite rounding
            z = z.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
            EmissionParams::StepAngle {
                z,
                mu: point[0],
                sigma: uniform_open(sigma_lo, sigma_hi, rng),
                m: PI - TAU * rng.random::<f64>(),
                k: uniform_open(k_lo, k_hi, rng),
            }
        }
    }
}

fn uniform_open<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    loop {
        let v = lo + (hi - lo) * rng.random::<f64>();
        if v > lo {
            return v;
        }
    }
}

/// Random-walk scales for the fixed-dimension moves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalScales {
    pub mu: f64,
    pub sigma: f64,
    pub k: f64,
    pub m: f64,
    pub z: f64,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
    pub wishart_df: f64,
    pub xi: f64,
}

impl Default for ProposalScales {
    fn default() -> Self {
        Self::simulation()
    }
}

impl ProposalScales {
    pub fn gps() -> Self {
        ProposalScales {
            mu: 0.01,
            sigma: 0.03,
            k: 0.08,
            m: 0.08,
            z: 0.5,
            lambda: 0.07,
            big_lambda: 0.05,
            wishart_df: 1200.0,
            xi: 0.3,
        }
    }

    pub fn acoustic() -> Self {
        ProposalScales {
            mu: 0.3,
            big_lambda: 1.0,
            lambda: 1.5,
            wishart_df: 1200.0,
            ..Self::gps()
        }
    }

    pub fn simulation() -> Self {
        ProposalScales {
            mu: 0.15,
            sigma: 0.08,
            k: 0.1,
            m: 0.1,
            z: 0.5,
            lambda: 0.5,
            big_lambda: 0.5,
            wishart_df: 200.0,
            xi: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("mu", self.mu),
            ("sigma", self.sigma),
            ("k", self.k),
            ("m", self.m),
            ("z", self.z),
            ("lambda", self.lambda),
            ("Lambda", self.big_lambda),
            ("wishart_df", self.wishart_df),
            ("xi", self.xi),
        ];
        for (name, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(&format!("proposals.{name}"), "scale must be positive"));
            }
        }
        if self.wishart_df <= 1.0 {
            return Err(Error::config("proposals.wishart_df", "must exceed 1"));
        }
        Ok(())
    }
}

/// Joint random-walk proposal for a whole emission block; returns the
/// proposal and log q(old|new) - log q(new|old).
pub fn propose_update<R: Rng + ?Sized>(params: &EmissionParams, scales: &ProposalScales, rng: &mut R) -> (EmissionParams, f64) {
    let mut n = || rng.sample::<f64, _>(StandardNormal);
    match *params {
        EmissionParams::UnivariateNormal { mu, sigma } => {
            let e1 = n();
            let e2 = n();
            let s = sigma * (scales.sigma * e2).exp();
            (
                EmissionParams::UnivariateNormal {
                    mu: mu + scales.mu * e1,
                    sigma: s,
                },
                (s / sigma).ln(),
            )
        }
        EmissionParams::StepAngle { z, mu, sigma, m, k } => {
            let (e_mu, e_s, e_k, e_m, e_z) = (n(), n(), n(), n(), n());
            let mu_n = mu * (scales.mu * e_mu).exp();
            let s_n = sigma * (scales.sigma * e_s).exp();
            let k_n = k * (scales.k * e_k).exp();
            let m_n = wrap_angle(m + scales.m * e_m);
            let z_n = expit(logit(z) + scales.z * e_z);
            let log_h = (mu_n / mu).ln()
                + (s_n / sigma).ln()
                + (k_n / k).ln()
                + (z_n * (1.0 - z_n)).ln()
                - (z * (1.0 - z)).ln();
            (
                EmissionParams::StepAngle {
                    z: z_n,
                    mu: mu_n,
                    sigma: s_n,
                    m: m_n,
                    k: k_n,
                },
                log_h,
            )
        }
        EmissionParams::BivariateNormal { mu, sigma } => {
            let mu_n = [mu[0] + scales.mu * n(), mu[1] + scales.mu * n()];
            let df = scales.wishart_df;
            let s_n = linalg::sample_wishart(df, &linalg::scale(&sigma, 1.0 / df), rng);
            let log_h = if linalg::is_spd(&s_n) {
                linalg::ln_wishart_pdf(&sigma, df, &linalg::scale(&s_n, 1.0 / df))
                    - linalg::ln_wishart_pdf(&s_n, df, &linalg::scale(&sigma, 1.0 / df))
            } else {
                f64::NEG_INFINITY
            };
            (EmissionParams::BivariateNormal { mu: mu_n, sigma: s_n }, log_h)
        }
    }
}
