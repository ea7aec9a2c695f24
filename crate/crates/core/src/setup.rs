//! Data-driven prior construction: region, emission hyperpriors, xi bounds,
//! penalty and threshold.

use serde::{Deserialize, Serialize};

use crate::emissions::{EmissionHyperPrior, Family};
use crate::error::{Error, Result};
use crate::linalg::Mat2;
use crate::panel::{data_quantile, ObservationPanel};
use crate::rjmcmc::ModelPrior;
use crate::special::sample_sd;
use crate::strauss::{n_star_for_fraction, select_penalty, select_threshold, KdeSettings, Region, XiPrior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Independent,
    Repulsive,
}

impl PriorKind {
    pub fn name(self) -> &'static str {
        match self {
            PriorKind::Independent => "independent",
            PriorKind::Repulsive => "repulsive",
        }
    }
}

/// User-facing prior settings; unset fields are derived from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub n_max: usize,
    pub kind: PriorKind,
    /// Overrides the penalty derived from `n_star_fraction`.
    pub log_a: Option<f64>,
    pub n_star_fraction: f64,
    pub d: Option<f64>,
    pub region: Option<Region>,
    /// xi ~ Uniform(lo/|R|, hi/|R|); defaults to (1, n_max).
    pub xi_counts: Option<[f64; 2]>,
    pub hyper: Option<EmissionHyperPrior>,
    pub kde: KdeSettings,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            n_max: 20,
            kind: PriorKind::Repulsive,
            log_a: None,
            n_star_fraction: 0.025,
            d: None,
            region: None,
            xi_counts: None,
            hyper: None,
            kde: KdeSettings::default(),
        }
    }
}

/// How each derived quantity was obtained; goes into run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorNotes {
    pub d_source: String,
    pub region_source: String,
    pub n_star: Option<f64>,
}

fn minmax(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

/// Per coordinate [min obs, max obs]; steps use [0, max L].
pub fn default_region(panel: &ObservationPanel, family: Family) -> Result<Region> {
    if panel.is_empty() {
        return Err(Error::InvalidInput("cannot derive a region from an empty panel".into()));
    }
    match family {
        Family::UnivariateNormal => {
            let (lo, hi) = minmax(&panel.pooled(0));
            Region::new(vec![lo], vec![hi])
        }
        Family::StepAngle => {
            let (_, hi) = minmax(&panel.pooled(0));
            Region::new(vec![0.0], vec![hi])
        }
        Family::BivariateNormal => {
            let (a, b) = minmax(&panel.pooled(0));
            let (c, d) = minmax(&panel.pooled(1));
            Region::new(vec![a, c], vec![b, d])
        }
    }
}

fn covariance(panel: &ObservationPanel) -> Mat2 {
    let x = panel.pooled(0);
    let y = panel.pooled(1);
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut c = [[0.0; 2]; 2];
    for (a, b) in x.iter().zip(&y) {
        let (u, v) = (a - mx, b - my);
        c[0][0] += u * u;
        c[0][1] += u * v;
        c[1][1] += v * v;
    }
    let s = 1.0 / (n - 1.0);
    c[1][0] = c[0][1];
    [[c[0][0] * s, c[0][1] * s], [c[1][0] * s, c[1][1] * s]]
}

pub fn default_hyper(panel: &ObservationPanel, family: Family) -> Result<EmissionHyperPrior> {
    if panel.n_observations() < 2 {
        return Err(Error::InvalidInput("need at least two observations for data-driven hyperpriors".into()));
    }
    Ok(match family {
        Family::UnivariateNormal => EmissionHyperPrior::UnivariateNormal {
            sigma_lo: 0.0,
            sigma_hi: 2.0 * data_quantile(panel, 0, 0.9)?,
        },
        Family::StepAngle => EmissionHyperPrior::StepAngle {
            z_a: 1.0,
            z_b: 100.0,
            sigma_lo: 0.5 * data_quantile(panel, 0, 0.1)?,
            sigma_hi: 2.0 * data_quantile(panel, 0, 0.9)?,
            k_lo: 0.5,
            k_hi: 2.0,
        },
        Family::BivariateNormal => {
            let c = covariance(panel);
            EmissionHyperPrior::BivariateNormal {
                df: 20.0,
                scale: [[c[0][0] / 10.0, c[0][1] / 10.0], [c[1][0] / 10.0, c[1][1] / 10.0]],
            }
        }
    })
}

/// Points in the repulsion space, one per observation.
pub fn repulsion_data(panel: &ObservationPanel, family: Family) -> Vec<Vec<f64>> {
    match family {
        Family::StepAngle => panel.iter_obs().map(|o| vec![o[0]]).collect(),
        _ => panel.iter_obs().cloned().collect(),
    }
}

/// Threshold from the distance KDE; when the KDE has no interior minimum
/// (heavily overlapping data) half the pooled standard deviation is used.
pub fn default_threshold(panel: &ObservationPanel, family: Family, kde: &KdeSettings) -> Result<(f64, String)> {
    match select_threshold(&repulsion_data(panel, family), kde) {
        Ok(r) => Ok((r.d, "distance_kde".into())),
        Err(Error::NoLocalMinimum) => {
            let dim = family.repulsion_dim();
            let var = (0..dim).map(|c| sample_sd(&panel.pooled(c)).powi(2)).sum::<f64>() / dim as f64;
            Ok((0.5 * var.sqrt(), "half_sd_fallback".into()))
        }
        Err(e) => Err(e),
    }
}

impl PriorSpec {
    pub fn resolve(&self, panel: &ObservationPanel, family: Family) -> Result<(ModelPrior, PriorNotes)> {
        if !(self.n_star_fraction >= 0.0 && self.n_star_fraction < 1.0) {
            return Err(Error::config("prior.n_star_fraction", "must lie in [0, 1)"));
        }
        let (region, region_source) = match &self.region {
            Some(r) => (r.clone(), "config".to_string()),
            None => (default_region(panel, family)?, "data_range".to_string()),
        };
        let hyper = match &self.hyper {
            Some(h) => h.clone(),
            None => default_hyper(panel, family)?,
        };
        let (d, d_source) = match self.d {
            Some(d) => (d, "config".to_string()),
            None => default_threshold(panel, family, &self.kde)?,
        };
        let (log_a, n_star) = match (self.kind, self.log_a) {
            (PriorKind::Independent, _) => (0.0, None),
            (PriorKind::Repulsive, Some(a)) => (a, None),
            (PriorKind::Repulsive, None) => {
                let n = n_star_for_fraction(panel.n_units(), self.n_star_fraction);
                (select_penalty(n), Some(n))
            }
        };
        let [lo, hi] = self.xi_counts.unwrap_or([1.0, self.n_max as f64]);
        let prior = ModelPrior {
            n_max: self.n_max,
            hyper,
            log_a,
            d,
            xi_prior: XiPrior::per_volume(&region, lo, hi)?,
            region,
        };
        prior.validate()?;
        Ok((
            prior,
            PriorNotes {
                d_source,
                region_source,
                n_star,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{PanelKind, ReplicateMode};

    fn scalar_panel(vals: &[f64]) -> ObservationPanel {
        ObservationPanel::new(PanelKind::Scalar, vals.iter().map(|&v| vec![vec![v]]).collect()).unwrap()
    }

    #[test]
    fn region_and_hyper_from_data() {
        let p = scalar_panel(&[-3.0, 1.0, 2.0, 7.0]);
        let r = default_region(&p, Family::UnivariateNormal).unwrap();
        assert_eq!((r.lo.clone(), r.hi.clone()), (vec![-3.0], vec![7.0]));
        match default_hyper(&p, Family::UnivariateNormal).unwrap() {
            EmissionHyperPrior::UnivariateNormal { sigma_lo, sigma_hi } => {
                assert_eq!(sigma_lo, 0.0);
                assert!((sigma_hi - 2.0 * data_quantile(&p, 0, 0.9).unwrap()).abs() < 1e-12);
            }
            _ => panic!(),
        }
        let steps = ObservationPanel::new(PanelKind::StepAngle, (1..=10).map(|i| vec![vec![i as f64, 0.1]]).collect()).unwrap();
        let r = default_region(&steps, Family::StepAngle).unwrap();
        assert_eq!((r.lo[0], r.hi[0]), (0.0, 10.0));
    }

    #[test]
    fn penalty_follows_units() {
        let vals: Vec<Vec<Vec<f64>>> = (0..5).map(|t| (0..50).map(|r| vec![(t * 50 + r) as f64 * 0.01]).collect()).collect();
        let p = ObservationPanel::new(PanelKind::Scalar, vals).unwrap().with_mode(ReplicateMode::Independent).unwrap();
        let spec = PriorSpec {
            d: Some(1.0),
            ..PriorSpec::default()
        };
        let (prior, notes) = spec.resolve(&p, Family::UnivariateNormal).unwrap();
        assert_eq!(notes.n_star, Some(6.0));
        assert_eq!(prior.log_a, -6.0);
        let ind = PriorSpec {
            kind: PriorKind::Independent,
            ..spec
        };
        let (p2, _) = ind.resolve(&p, Family::UnivariateNormal).unwrap();
        assert_eq!(p2.log_a, 0.0);
        assert_eq!(ModelPrior { log_a: -6.0, ..p2 }, prior);
    }

    #[test]
    fn smooth_data_uses_fallback_threshold() {
        let vals: Vec<f64> = (0..400).map(|i| (i as f64 + 0.5) / 400.0).collect();
        let p = scalar_panel(&vals);
        let (d, src) = default_threshold(&p, Family::UnivariateNormal, &KdeSettings::default()).unwrap();
        assert_eq!(src, "half_sd_fallback");
        assert!((d - 0.5 * sample_sd(&vals)).abs() < 1e-12);
    }
}
