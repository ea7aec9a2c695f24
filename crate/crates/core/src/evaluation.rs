//! Simulation-study harness: overlap calibration, KL divergence to the true
//! mixture, misclassification error from similarity matrices, and the
//! replicated study runner.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emissions::{EmissionParams, Family, ProposalScales};
use crate::error::{Error, Result};
use crate::hmm::{marginal_state_probs, simulate, AllocationDraw, HmmState};
use crate::numfmt::g17;
use crate::panel::{ObservationPanel, ReplicateMode};
use crate::postprocess::modal_n;
use crate::rjmcmc::{run_chain, ChainSample, RunConfig};
use crate::setup::{PriorKind, PriorSpec};
use crate::special::{ln_normal_pdf, normal_cdf, quantile, LN_2PI};
use crate::strauss::BirthDeathSettings;

fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z - 0.5 * LN_2PI).exp() / sigma
}

/// Probability mass of N(mu, sigma) on [a, b].
fn normal_mass(a: f64, b: f64, mu: f64, sigma: f64) -> f64 {
    // upper tail form keeps precision on the right side
    let za = (a - mu) / sigma;
    let zb = (b - mu) / sigma;
    if za > 0.0 {
        normal_cdf(-za) - normal_cdf(-zb)
    } else {
        normal_cdf(zb) - normal_cdf(za)
    }
}

/// Points where the two normal densities cross, sorted.
fn crossings(mu1: f64, s1: f64, mu2: f64, s2: f64) -> Vec<f64> {
    let a = 0.5 / (s2 * s2) - 0.5 / (s1 * s1);
    let b = mu1 / (s1 * s1) - mu2 / (s2 * s2);
    let c = 0.5 * mu2 * mu2 / (s2 * s2) - 0.5 * mu1 * mu1 / (s1 * s1) + (s2 / s1).ln();
    let scale = a.abs().max(b.abs()).max(1e-300);
    if a.abs() <= 1e-14 * scale {
        if b == 0.0 {
            return Vec::new();
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut r = if q == 0.0 { vec![0.0] } else { vec![q / a, c / q] };
    r.sort_by(f64::total_cmp);
    r.dedup();
    r
}

/// Integral of min(N(mu1, sigma1), N(mu2, sigma2)); computed exactly from
/// normal masses between the density crossings.
pub fn consecutive_overlap(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> f64 {
    if mu1 == mu2 && sigma1 == sigma2 {
        return 1.0;
    }
    let mut cuts = vec![f64::NEG_INFINITY];
    cuts.extend(crossings(mu1, sigma1, mu2, sigma2));
    cuts.push(f64::INFINITY);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let probe = match (a.is_finite(), b.is_finite()) {
            (true, true) => 0.5 * (a + b),
            (false, true) => b - 1.0,
            (true, false) => a + 1.0,
            (false, false) => 0.5 * (mu1 + mu2),
        };
        total += if ln_normal_pdf(probe, mu1, sigma1) <= ln_normal_pdf(probe, mu2, sigma2) {
            normal_mass(a, b, mu1, sigma1)
        } else {
            normal_mass(a, b, mu2, sigma2)
        };
    }
    total.clamp(0.0, 1.0)
}

/// Common sigma at which two normals `spacing` apart overlap by `target`.
pub fn sigma_for_overlap(target: f64, spacing: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidInput("overlap target must lie in (0, 1)".into()));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidInput("spacing must be positive".into()));
    }
    let f = |s: f64| consecutive_overlap(0.0, s, spacing, s) - target;
    let (mut lo, mut hi) = (1e-3f64, 1e3f64);
    if f(lo) > 0.0 || f(hi) < 0.0 {
        return Err(Error::InvalidInput("overlap target not reachable for sigma in (1e-3, 1e3)".into()));
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-13 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Unweighted average of the pairwise overlaps over all unordered pairs.
pub fn overall_overlap(means: &[f64], sigmas: &[f64]) -> Result<f64> {
    if means.len() != sigmas.len() || means.len() < 2 {
        return Err(Error::InvalidInput("need at least two components with matching sigmas".into()));
    }
    let mut s = 0.0;
    let mut c = 0usize;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            s += consecutive_overlap(means[i], sigmas[i], means[j], sigmas[j]);
            c += 1;
        }
    }
    Ok(s / c as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalMixture {
    pub means: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NormalMixture {
    pub fn pdf(&self, x: f64) -> f64 {
        self.means
            .iter()
            .zip(&self.sigmas)
            .zip(&self.weights)
            .map(|((m, s), w)| w * normal_pdf(x, *m, *s))
            .sum()
    }
}

pub const KL_FLOOR: f64 = 1e-300;
pub const KL_GRID_POINTS: usize = 4096;

/// Uniform grid spanning 8 sigma beyond the extreme means.
pub fn kl_grid(truth: &NormalMixture, points: usize) -> Vec<f64> {
    let smax = truth.sigmas.iter().cloned().fold(0.0, f64::max);
    let lo = truth.means.iter().cloned().fold(f64::INFINITY, f64::min) - 8.0 * smax;
    let hi = truth.means.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 8.0 * smax;
    let m = points.max(KL_GRID_POINTS);
    (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect()
}

fn trapezoid(grid: &[f64], y: &[f64]) -> f64 {
    grid.windows(2).zip(y.windows(2)).map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1])).sum()
}

/// KL(p || q) by the trapezoid rule on tabulated densities; q is floored at
/// `KL_FLOOR` and terms with p = 0 vanish.
pub fn kl_divergence_tabulated(grid: &[f64], p: &[f64], q: &[f64]) -> f64 {
    let y: Vec<f64> = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| if a > 0.0 { a * (a / b.max(KL_FLOOR)).ln() } else { 0.0 })
        .collect();
    trapezoid(grid, &y)
}

pub fn kl_divergence_curve(p: impl Fn(f64) -> f64, q: impl Fn(f64) -> f64, grid: &[f64]) -> f64 {
    let pv: Vec<f64> = grid.iter().map(|&x| p(x)).collect();
    let qv: Vec<f64> = grid.iter().map(|&x| q(x)).collect();
    kl_divergence_tabulated(grid, &pv, &qv)
}

fn normal_components(s: &ChainSample) -> Result<Vec<(f64, f64)>> {
    s.emissions
        .iter()
        .map(|e| match *e {
            EmissionParams::UnivariateNormal { mu, sigma } => Ok((mu, sigma)),
            _ => Err(Error::InvalidInput("study metrics need univariate normal emissions".into())),
        })
        .collect()
}

/// (1/T) sum_t (1/L) sum_l KL(p0 || p_{l,t}); fitted weights at t are the
/// sample's marginal state probabilities.
pub fn study_kl(samples: &[ChainSample], truth: &NormalMixture, t_len: usize, grid: &[f64]) -> Result<f64> {
    if samples.is_empty() || t_len == 0 {
        return Err(Error::InvalidInput("need samples and at least one time point".into()));
    }
    let p0: Vec<f64> = grid.iter().map(|&x| truth.pdf(x)).collect();
    let mut per_t = vec![0.0; t_len];
    let mut q = vec![0.0; grid.len()];
    for s in samples {
        let comps = normal_components(s)?;
        let dens: Vec<Vec<f64>> = comps.iter().map(|&(m, sd)| grid.iter().map(|&x| normal_pdf(x, m, sd)).collect()).collect();
        let st = s.state();
        for (t, acc) in per_t.iter_mut().enumerate() {
            let w = marginal_state_probs(&st, t + 1);
            q.iter_mut().for_each(|v| *v = 0.0);
            for (wj, dj) in w.iter().zip(&dens) {
                for (qv, dv) in q.iter_mut().zip(dj) {
                    *qv += wj * dv;
                }
            }
            *acc += kl_divergence_tabulated(grid, &p0, &q);
        }
    }
    let l = samples.len() as f64;
    Ok(per_t.iter().map(|v| v / l).sum::<f64>() / t_len as f64)
}

/// Number of unordered pairs whose co-assignment differs between labelings.
pub fn pair_disagreements(truth: &[usize], fit: &[usize]) -> usize {
    let pairs = |c: usize| c * c.saturating_sub(1) / 2;
    let mut a: BTreeMap<usize, usize> = BTreeMap::new();
    let mut b: BTreeMap<usize, usize> = BTreeMap::new();
    let mut ab: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&x, &y) in truth.iter().zip(fit) {
        *a.entry(x).or_default() += 1;
        *b.entry(y).or_default() += 1;
        *ab.entry((x, y)).or_default() += 1;
    }
    let sa: usize = a.values().map(|&c| pairs(c)).sum();
    let sb: usize = b.values().map(|&c| pairs(c)).sum();
    let sab: usize = ab.values().map(|&c| pairs(c)).sum();
    sa + sb - 2 * sab
}

/// Averaged similarity-matrix disagreement rate. Each replicate at time t is
/// allocated independently with probabilities proportional to
/// w_j(t) f(x | theta_j).
pub fn misclassification<R: Rng + ?Sized>(
    truth: &AllocationDraw,
    samples: &[ChainSample],
    panel: &ObservationPanel,
    rng: &mut R,
) -> Result<f64> {
    let t_len = panel.len_t();
    if samples.is_empty() || t_len == 0 || truth.states.len() != t_len {
        return Err(Error::InvalidInput("allocation truth must cover every time point".into()));
    }
    for t in 0..t_len {
        let n = panel.observations(t).len();
        if n < 2 {
            return Err(Error::InvalidInput(format!("time index {t} has fewer than two replicates")));
        }
        if truth.states[t].len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: truth.states[t].len(),
            });
        }
    }
    let mut total = vec![0.0; t_len];
    let mut fit = Vec::new();
    let mut w = Vec::new();
    for s in samples {
        let comps = normal_components(s)?;
        let st = s.state();
        for (t, acc) in total.iter_mut().enumerate() {
            let weights = marginal_state_probs(&st, t + 1);
            let obs = panel.observations(t);
            fit.clear();
            for o in obs {
                let lw: Vec<f64> = comps
                    .iter()
                    .zip(&weights)
                    .map(|(&(m, sd), wj)| wj.ln() - 0.5 * ((o[0] - m) / sd).powi(2) - sd.ln())
                    .collect();
                let mx = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                w.clear();
                w.extend(lw.iter().map(|v| (v - mx).exp()));
                let tot: f64 = w.iter().sum();
                let mut u = rng.random::<f64>() * tot;
                let mut k = w.len() - 1;
                for (j, v) in w.iter().enumerate() {
                    u -= v;
                    if u < 0.0 {
                        k = j;
                        break;
                    }
                }
                fit.push(k);
            }
            let n = obs.len();
            let pairs = (n * (n - 1) / 2) as f64;
            *acc += pair_disagreements(&truth.states[t], &fit) as f64 / pairs;
        }
    }
    let l = samples.len() as f64;
    Ok(total.iter().map(|v| v / l).sum::<f64>() / t_len as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OverlapLabel {
    #[serde(rename = "3%")]
    P3,
    #[serde(rename = "9%")]
    P9,
    #[serde(rename = "33%")]
    P33,
    #[serde(rename = "55%")]
    P55,
}

impl OverlapLabel {
    pub const ALL: [OverlapLabel; 4] = [OverlapLabel::P3, OverlapLabel::P9, OverlapLabel::P33, OverlapLabel::P55];

    pub fn as_str(self) -> &'static str {
        match self {
            OverlapLabel::P3 => "3%",
            OverlapLabel::P9 => "9%",
            OverlapLabel::P33 => "33%",
            OverlapLabel::P55 => "55%",
        }
    }

    pub fn target(self) -> f64 {
        match self {
            OverlapLabel::P3 => 0.03,
            OverlapLabel::P9 => 0.09,
            OverlapLabel::P33 => 0.33,
            OverlapLabel::P55 => 0.55,
        }
    }

    /// Published state standard deviation for this overlap level.
    pub fn sigma(self) -> f64 {
        match self {
            OverlapLabel::P3 => 1.1408,
            OverlapLabel::P9 => 1.4726,
            OverlapLabel::P33 => 2.5709,
            OverlapLabel::P55 => 4.2319,
        }
    }

    pub fn parse(s: &str) -> Option<OverlapLabel> {
        OverlapLabel::ALL.into_iter().find(|l| l.as_str() == s.trim())
    }
}

pub const STUDY_MEANS: [f64; 5] = [-10.0, -5.0, 0.0, 5.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyScenario {
    pub overlap_label: OverlapLabel,
    pub means: Vec<f64>,
    pub sigma: f64,
    pub n: usize,
    #[serde(rename = "T")]
    pub t_len: usize,
    pub replications: usize,
}

impl StudyScenario {
    pub fn preset(label: OverlapLabel, n: usize, t_len: usize, replications: usize) -> Self {
        StudyScenario {
            overlap_label: label,
            means: STUDY_MEANS.to_vec(),
            sigma: label.sigma(),
            n,
            t_len,
            replications,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("scenario.sigma", "must be positive"));
        }
        if self.means.is_empty() || self.means.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("scenario.means", "must be non-empty and strictly increasing"));
        }
        if self.n < 2 {
            return Err(Error::config("scenario.n", "need at least two replicates per time point"));
        }
        if self.t_len == 0 || self.replications == 0 {
            return Err(Error::config("scenario", "T and replications must be positive"));
        }
        Ok(())
    }

    /// Uniform initial and transition probabilities.
    pub fn truth(&self) -> HmmState {
        let k = self.means.len();
        HmmState::new(
            vec![1.0; k],
            vec![1.0; k * k],
            self.means
                .iter()
                .map(|&mu| EmissionParams::UnivariateNormal { mu, sigma: self.sigma })
                .collect(),
        )
    }

    pub fn true_mixture(&self) -> NormalMixture {
        let k = self.means.len();
        NormalMixture {
            means: self.means.clone(),
            sigmas: vec![self.sigma; k],
            weights: vec![1.0 / k as f64; k],
        }
    }

    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(ObservationPanel, AllocationDraw)> {
        simulate(&self.truth(), self.t_len, self.n, ReplicateMode::Independent, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub initial_n: usize,
    pub priors: Vec<PriorKind>,
    pub prior: PriorSpec,
    pub scales: ProposalScales,
    pub birth_death: BirthDeathSettings,
    pub kl_grid_points: usize,
    /// 0 uses every available core.
    pub threads: usize,
    pub scenarios: Vec<StudyScenario>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            seed: 1,
            iterations: 10_000,
            burn_in: 5_000,
            thin: 5,
            initial_n: 1,
            priors: vec![PriorKind::Independent, PriorKind::Repulsive],
            prior: PriorSpec::default(),
            scales: ProposalScales::simulation(),
            birth_death: BirthDeathSettings::default(),
            kl_grid_points: KL_GRID_POINTS,
            threads: 0,
            scenarios: Vec::new(),
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::config("scenarios", "at least one scenario is required"));
        }
        if self.priors.is_empty() {
            return Err(Error::config("priors", "at least one prior is required"));
        }
        for s in &self.scenarios {
            s.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub scenario: usize,
    pub overlap_label: String,
    pub n: usize,
    #[serde(rename = "T")]
    pub t_len: usize,
    pub prior: PriorKind,
    pub replication: usize,
    pub modal_n: usize,
    pub kl: f64,
    pub misclassification: f64,
    pub d: f64,
    pub log_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub overlap_label: String,
    pub n: usize,
    #[serde(rename = "T")]
    pub t_len: usize,
    pub prior: PriorKind,
    pub modal_n: usize,
    pub kl_mean: f64,
    pub kl_lo: f64,
    pub kl_hi: f64,
    pub misc_mean: f64,
    pub misc_lo: f64,
    pub misc_hi: f64,
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub rows: Vec<StudyRow>,
    pub raw: Vec<ReplicationResult>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one (scenario, replication, purpose) triple.
pub fn derive_seed(base: u64, scenario: usize, replication: usize, purpose: u64) -> u64 {
    let mut h = splitmix(base);
    for v in [scenario as u64, replication as u64, purpose] {
        h = splitmix(h ^ v);
    }
    h
}

const DATA_STREAM: u64 = 0;
const CHAIN_STREAM: u64 = 1;
const ALLOC_STREAM: u64 = 2;

/// Chain configuration for one simulated panel.
pub fn study_run_config(cfg: &StudyConfig, panel: &ObservationPanel, kind: PriorKind, seed: u64) -> Result<RunConfig> {
    let spec = PriorSpec {
        kind,
        ..cfg.prior.clone()
    };
    let (prior, _) = spec.resolve(panel, Family::UnivariateNormal)?;
    Ok(RunConfig {
        iterations: cfg.iterations,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        seed,
        initial_n: cfg.initial_n,
        scales: cfg.scales.clone(),
        birth_death: cfg.birth_death,
        prior,
    })
}

/// One replication under one prior. Data and chain seeds do not depend on
/// the prior, so the two prior arms see the same panel.
pub fn run_replication(cfg: &StudyConfig, scenario: usize, replication: usize, kind: PriorKind) -> Result<ReplicationResult> {
    let sc = &cfg.scenarios[scenario];
    let mut data_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, scenario, replication, DATA_STREAM));
    let (panel, truth) = sc.simulate(&mut data_rng)?;
    let rc = study_run_config(cfg, &panel, kind, derive_seed(cfg.seed, scenario, replication, CHAIN_STREAM))?;
    let chain = run_chain(&panel, &rc)?;
    let grid = kl_grid(&sc.true_mixture(), cfg.kl_grid_points);
    let kl = study_kl(&chain.samples, &sc.true_mixture(), sc.t_len, &grid)?;
    let mut alloc_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, scenario, replication, ALLOC_STREAM));
    let misc = misclassification(&truth, &chain.samples, &panel, &mut alloc_rng)?;
    Ok(ReplicationResult {
        scenario,
        overlap_label: sc.overlap_label.as_str().to_string(),
        n: sc.n,
        t_len: sc.t_len,
        prior: kind,
        replication,
        modal_n: modal_n(&chain.samples).unwrap_or(0),
        kl,
        misclassification: misc,
        d: rc.prior.d,
        log_a: rc.prior.log_a,
    })
}

fn interval(v: &[f64]) -> (f64, f64, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (mean, quantile(v, 0.025).min(mean), quantile(v, 0.975).max(mean))
}

/// Most frequent per-replication modal N; ties go to the smaller N.
fn mode_of(ns: &[usize]) -> usize {
    let mut c: BTreeMap<usize, usize> = BTreeMap::new();
    for &n in ns {
        *c.entry(n).or_default() += 1;
    }
    c.iter().fold((0, 0), |(bn, bc), (&n, &k)| if k > bc { (n, k) } else { (bn, bc) }).0
}

pub fn summarize(cfg: &StudyConfig, raw: &[ReplicationResult]) -> Vec<StudyRow> {
    let mut rows = Vec::new();
    for (si, sc) in cfg.scenarios.iter().enumerate() {
        for &kind in &cfg.priors {
            let sel: Vec<&ReplicationResult> = raw.iter().filter(|r| r.scenario == si && r.prior == kind).collect();
            if sel.is_empty() {
                continue;
            }
            let kl: Vec<f64> = sel.iter().map(|r| r.kl).collect();
            let mc: Vec<f64> = sel.iter().map(|r| r.misclassification).collect();
            let ns: Vec<usize> = sel.iter().map(|r| r.modal_n).collect();
            let (km, kl_lo, kl_hi) = interval(&kl);
            let (mm, mlo, mhi) = interval(&mc);
            rows.push(StudyRow {
                overlap_label: sc.overlap_label.as_str().to_string(),
                n: sc.n,
                t_len: sc.t_len,
                prior: kind,
                modal_n: mode_of(&ns),
                kl_mean: km,
                kl_lo,
                kl_hi,
                misc_mean: mm,
                misc_lo: mlo,
                misc_hi: mhi,
            });
        }
    }
    rows
}

/// Runs every scenario x prior x replication job in parallel; results come
/// back in job order regardless of scheduling.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyOutput> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for (si, sc) in cfg.scenarios.iter().enumerate() {
        for r in 0..sc.replications {
            for &k in &cfg.priors {
                jobs.push((si, r, k));
            }
        }
    }
    let work = || jobs.par_iter().map(|&(si, r, k)| run_replication(cfg, si, r, k)).collect::<Result<Vec<_>>>();
    let raw = if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::InvalidInput(e.to_string()))?
            .install(work)?
    } else {
        work()?
    };
    Ok(StudyOutput {
        rows: summarize(cfg, &raw),
        raw,
    })
}

pub fn study_results_csv(rows: &[StudyRow]) -> String {
    let mut s = String::from("overlap_label,n,T,prior,modal_N,kl_mean,kl_lo,kl_hi,misc_mean,misc_lo,misc_hi\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.overlap_label,
            r.n,
            r.t_len,
            r.prior.name(),
            r.modal_n,
            g17(r.kl_mean),
            g17(r.kl_lo),
            g17(r.kl_hi),
            g17(r.misc_mean),
            g17(r.misc_lo),
            g17(r.misc_hi)
        ));
    }
    s
}

pub fn replications_csv(raw: &[ReplicationResult]) -> String {
    let mut s = String::from("scenario,overlap_label,n,T,prior,replication,modal_N,kl,misclassification,d,log_a\n");
    for r in raw {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.scenario,
            r.overlap_label,
            r.n,
            r.t_len,
            r.prior.name(),
            r.replication,
            r.modal_n,
            g17(r.kl),
            g17(r.misclassification),
            g17(r.d),
            g17(r.log_a)
        ));
    }
    s
}

pub fn write_study(out: &StudyOutput, dir: &Path) -> Result<()> {
    let a = dir.join("study_results.csv");
    std::fs::write(&a, study_results_csv(&out.rows)).map_err(|e| Error::io(&a, e))?;
    let b = dir.join("study_replications.csv");
    std::fs::write(&b, replications_csv(&out.raw)).map_err(|e| Error::io(&b, e))
}
