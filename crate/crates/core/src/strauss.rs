//! Strauss interaction process: density, threshold and penalty selection,
//! birth-death simulation and the exchange update of the intensity.
//!
//! Penalties are kept as `log_a` throughout. With `log_a = -627` the factor
//! itself underflows, so only `count * log_a` ever enters a ratio.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{penalty_term, quantile_sorted, sample_sd};

/// Axis-aligned box holding the repulsive coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let r = Region { lo, hi };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() > 2 || self.lo.len() != self.hi.len() {
            return Err(Error::config("region", "needs one or two coordinates with matching lo/hi"));
        }
        for (l, h) in self.lo.iter().zip(&self.hi) {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::config("region", format!("bounds [{l}, {h}] are not an interval")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn ln_volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l).ln()).sum()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim() && p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(x, (l, h))| *x >= *l && *x <= *h)
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l + (h - l) * rng.random::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StraussConfig {
    pub xi: f64,
    /// Log of the pair penalty; 0 is the independent process.
    pub log_a: f64,
    pub d: f64,
    pub region: Region,
}

impl StraussConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return Err(Error::config("xi", "must be positive"));
        }
        if !(self.log_a <= 0.0) {
            return Err(Error::config("log_a", "penalty a must lie in (0, 1]"));
        }
        if !(self.d >= 0.0 && self.d.is_finite()) {
            return Err(Error::config("d", "must be non-negative"));
        }
        self.region.validate()
    }
}

/// Uniform prior on the intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiPrior {
    pub lo: f64,
    pub hi: f64,
}

impl XiPrior {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::config("xi_prior", format!("need 0 < lo < hi, got [{lo}, {hi}]")));
        }
        Ok(XiPrior { lo, hi })
    }

    /// Bounds given as expected point counts, `[lo / |R|, hi / |R|]`.
    pub fn per_volume(region: &Region, lo_count: f64, hi_count: f64) -> Result<Self> {
        let v = region.volume();
        XiPrior::new(lo_count / v, hi_count / v)
    }

    pub fn contains(&self, xi: f64) -> bool {
        xi >= self.lo && xi <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Number of points of `pts` strictly closer than `d` to `x`.
pub fn neighbors_within(pts: &[Vec<f64>], x: &[f64], d: f64) -> usize {
    let d2 = d * d;
    pts.iter().filter(|p| dist2(p, x) < d2).count()
}

/// Number of unordered pairs strictly closer than `d`.
pub fn pair_count(pts: &[Vec<f64>], d: f64) -> usize {
    let d2 = d * d;
    let mut s = 0;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            if dist2(&pts[i], &pts[j]) < d2 {
                s += 1;
            }
        }
    }
    s
}

/// `N log xi + s log a`, or `-inf` if a point leaves the region.
pub fn log_unnormalized_density(cfg: &StraussConfig, pts: &[Vec<f64>]) -> f64 {
    if !pts.iter().all(|p| cfg.region.contains(p)) {
        return f64::NEG_INFINITY;
    }
    pts.len() as f64 * cfg.xi.ln() + penalty_term(pair_count(pts, cfg.d), cfg.log_a)
}

/// Density of the locations given their number: `s log a - N log|R|`.
/// This is what the state-space moves use; xi only enters through the
/// exchange update.
pub fn log_conditional_density(log_a: f64, d: f64, region: &Region, pts: &[Vec<f64>]) -> f64 {
    if !pts.iter().all(|p| region.contains(p)) {
        return f64::NEG_INFINITY;
    }
    penalty_term(pair_count(pts, d), log_a) - pts.len() as f64 * region.ln_volume()
}

/// `log a = -n_star`.
pub fn select_penalty(n_star: f64) -> f64 {
    -n_star
}

/// Minimum acceptable state size as a fraction of the allocation units.
pub fn n_star_for_fraction(n_units: usize, fraction: f64) -> f64 {
    (fraction * n_units as f64).floor()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdeSettings {
    pub grid: usize,
    /// Points beyond this are thinned by a fixed stride before pairing.
    pub max_points: usize,
    /// Above this many distances the KDE is evaluated on linearly binned counts.
    pub exact_limit: usize,
    pub bins: usize,
}

impl Default for KdeSettings {
    fn default() -> Self {
        KdeSettings {
            grid: 1024,
            max_points: 5000,
            exact_limit: 50_000,
            bins: 16_384,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ThresholdResult {
    pub d: f64,
    pub bandwidth: f64,
    pub minima: Vec<f64>,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

/// Gaussian KDE of all pairwise distances; `d` is its smallest interior
/// local minimum on the grid.
pub fn select_threshold(points: &[Vec<f64>], settings: &KdeSettings) -> Result<ThresholdResult> {
    if points.len() < 3 {
        return Err(Error::InvalidInput("threshold selection needs at least 3 observations".into()));
    }
    if settings.grid < 3 {
        return Err(Error::config("grid", "needs at least 3 points"));
    }
    let stride = points.len().div_ceil(settings.max_points.max(3));
    let pts: Vec<&Vec<f64>> = points.iter().step_by(stride).collect();
    let mut dists = Vec::with_capacity(pts.len() * (pts.len() - 1) / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            dists.push(dist2(pts[i], pts[j]).sqrt());
        }
    }
    let m = dists.len();
    let sd = sample_sd(&dists);
    dists.sort_unstable_by(|a, b| a.total_cmp(b));
    let iqr = quantile_sorted(&dists, 0.75) - quantile_sorted(&dists, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (m as f64).powf(-0.2);
    let max = dists[m - 1];
    if !(h > 0.0 && max > 0.0) {
        return Err(Error::InvalidInput("all observations identical; the distance density is degenerate".into()));
    }
    let g = settings.grid;
    let grid: Vec<f64> = (0..g).map(|i| max * i as f64 / (g - 1) as f64).collect();
    // (location, weight) pairs feeding the kernel sum
    let mass: Vec<(f64, f64)> = if m <= settings.exact_limit {
        dists.iter().map(|&x| (x, 1.0)).collect()
    } else {
        let nb = settings.bins.max(2);
        let w = max / (nb - 1) as f64;
        let mut c = vec![0.0; nb];
        for &x in &dists {
            let pos = x / w;
            let k = (pos.floor() as usize).min(nb - 2);
            let f = pos - k as f64;
            c[k] += 1.0 - f;
            c[k + 1] += f;
        }
        c.into_iter()
            .enumerate()
            .filter(|(_, v)| *v > 0.0)
            .map(|(k, v)| (k as f64 * w, v))
            .collect()
    };
    let norm = 1.0 / (m as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let cut = 9.0 * h;
    let density: Vec<f64> = grid
        .iter()
        .map(|&r| {
            // mass is sorted by location, so restrict to the kernel window
            let a = mass.partition_point(|(x, _)| *x < r - cut);
            let b = mass.partition_point(|(x, _)| *x <= r + cut);
            mass[a..b]
                .iter()
                .map(|(x, w)| {
                    let z = (r - x) / h;
                    w * (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    let minima: Vec<f64> = (1..g - 1)
        .filter(|&i| density[i] - density[i - 1] < 0.0 && density[i + 1] - density[i] > 0.0)
        .map(|i| grid[i])
        .collect();
    let d = *minima.first().ok_or(Error::NoLocalMinimum)?;
    Ok(ThresholdResult {
        d,
        bandwidth: h,
        minima,
        grid,
        density,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BirthDeathSettings {
    pub iterations: usize,
    pub q_birth: f64,
    /// At this cardinality a birth is proposed with probability one and
    /// deaths are impossible.
    pub min_cardinality: usize,
}

impl Default for BirthDeathSettings {
    fn default() -> Self {
        BirthDeathSettings {
            iterations: 2000,
            q_birth: 0.5,
            min_cardinality: 0,
        }
    }
}

impl BirthDeathSettings {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("birth_death.iterations", "must be at least 1"));
        }
        if !(self.q_birth > 0.0 && self.q_birth < 1.0) {
            return Err(Error::config("birth_death.q_birth", "must lie in (0, 1)"));
        }
        Ok(())
    }

    fn ln_q_birth(&self, n: usize) -> f64 {
        if n <= self.min_cardinality {
            0.0
        } else {
            self.q_birth.ln()
        }
    }

    fn ln_q_death(&self, n: usize) -> f64 {
        if n <= self.min_cardinality {
            f64::NEG_INFINITY
        } else {
            (1.0 - self.q_birth).ln()
        }
    }
}

/// Birth-death MH chain targeting the Strauss density, started at `start`.
pub fn birth_death_sample<R: Rng + ?Sized>(
    cfg: &StraussConfig,
    start: &[Vec<f64>],
    settings: &BirthDeathSettings,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let mut pts = start.to_vec();
    let ln_xi = cfg.xi.ln();
    let ln_vol = cfg.region.ln_volume();
    for _ in 0..settings.iterations {
        let n = pts.len();
        let birth = n <= settings.min_cardinality || rng.random::<f64>() < settings.q_birth;
        if birth {
            let x = cfg.region.sample_uniform(rng);
            let s = neighbors_within(&pts, &x, cfg.d);
            let log_a = ln_xi + penalty_term(s, cfg.log_a) + ln_vol + settings.ln_q_death(n + 1)
                - ((n + 1) as f64).ln()
                - settings.ln_q_birth(n);
            if log_a >= 0.0 || rng.random::<f64>().ln() < log_a {
                pts.push(x);
            }
        } else {
            let i = rng.random_range(0..n);
            let victim = pts.swap_remove(i);
            let s = neighbors_within(&pts, &victim, cfg.d);
            let log_a = -ln_xi - penalty_term(s, cfg.log_a) - ln_vol + settings.ln_q_birth(n - 1)
                - settings.ln_q_death(n)
                + (n as f64).ln();
            if !(log_a >= 0.0 || rng.random::<f64>().ln() < log_a) {
                // undo; order inside the list carries no meaning
                pts.push(victim);
            }
        }
    }
    pts
}

#[derive(Debug, Clone, Copy)]
pub struct ExchangeOutcome {
    pub xi: f64,
    pub accepted: bool,
    pub log_ratio: f64,
}

/// Exchange update of xi given the current locations. The auxiliary
/// configuration is drawn from an RNG substream seeded off `rng`, so the
/// outer stream advances by the same amount whatever the inner chain does.
#[allow(clippy::too_many_arguments)]
pub fn exchange_update_xi<R: Rng + ?Sized>(
    xi: f64,
    pts: &[Vec<f64>],
    log_a: f64,
    d: f64,
    region: &Region,
    prior: &XiPrior,
    tau: f64,
    bd: &BirthDeathSettings,
    rng: &mut R,
) -> ExchangeOutcome {
    let step: f64 = rng.sample(StandardNormal);
    let sub_seed: u64 = rng.random();
    let u: f64 = rng.random();
    let prop = xi * (tau * step).exp();
    if !prior.contains(prop) {
        return ExchangeOutcome {
            xi,
            accepted: false,
            log_ratio: f64::NEG_INFINITY,
        };
    }
    let cfg = StraussConfig {
        xi: prop,
        log_a,
        d,
        region: region.clone(),
    };
    let mut inner = ChaCha8Rng::seed_from_u64(sub_seed);
    let aux = birth_death_sample(&cfg, pts, bd, &mut inner);
    // lognormal Hastings term, then g(pts|xi*) g(aux|xi) / g(pts|xi) g(aux|xi*);
    // the pair-count factors cancel between the two ratios
    let dl = prop.ln() - xi.ln();
    let log_ratio = dl + (pts.len() as f64 - aux.len() as f64) * dl;
    if log_ratio >= 0.0 || u.ln() < log_ratio {
        ExchangeOutcome {
            xi: prop,
            accepted: true,
            log_ratio,
        }
    } else {
        ExchangeOutcome {
            xi,
            accepted: false,
            log_ratio,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn line(lo: f64, hi: f64) -> Region {
        Region::new(vec![lo], vec![hi]).unwrap()
    }

    fn cfg(xi: f64, log_a: f64, d: f64) -> StraussConfig {
        StraussConfig {
            xi,
            log_a,
            d,
            region: line(0.0, 10.0),
        }
    }

    #[test]
    fn density_examples() {
        let c = cfg(0.7, 0.5f64.ln(), 1.0);
        let two = vec![vec![1.0], vec![5.0]];
        assert!((log_unnormalized_density(&c, &two) - 2.0 * 0.7f64.ln()).abs() < 1e-15);
        let three = vec![vec![1.0], vec![1.3], vec![1.6]];
        let want = 3.0 * 0.7f64.ln() + 3.0 * 0.5f64.ln();
        assert!((log_unnormalized_density(&c, &three) - want).abs() < 1e-14);
        assert_eq!(log_unnormalized_density(&c, &[vec![11.0]]), f64::NEG_INFINITY);
        let shuffled = vec![vec![1.6], vec![1.0], vec![1.3]];
        assert_eq!(log_unnormalized_density(&c, &three), log_unnormalized_density(&c, &shuffled));
    }

    #[test]
    fn independent_reduction() {
        let c = cfg(2.0, 0.0, 3.0);
        let pts = vec![vec![1.0], vec![1.1], vec![1.2], vec![9.0]];
        assert!((log_unnormalized_density(&c, &pts) - 4.0 * 2f64.ln()).abs() < 1e-15);
        assert!((log_conditional_density(0.0, 3.0, &c.region, &pts) + 4.0 * 10f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn huge_penalty_stays_in_log_space() {
        let c = cfg(1.0, select_penalty(627.0), 1.0);
        assert_eq!(log_unnormalized_density(&c, &[vec![1.0], vec![1.5]]), -627.0);
        assert_eq!(log_unnormalized_density(&c, &[vec![1.0], vec![3.5]]), 0.0);
        let hard = cfg(1.0, f64::NEG_INFINITY, 1.0);
        assert_eq!(log_unnormalized_density(&hard, &[vec![1.0], vec![3.5]]), 0.0);
    }

    #[test]
    fn two_dimensional_pairs_use_euclidean_distance() {
        let pts = vec![vec![0.0, 0.0], vec![0.6, 0.6], vec![3.0, 4.0]];
        assert_eq!(pair_count(&pts, 1.0), 1);
        assert_eq!(pair_count(&pts, 5.0), 2); // strict inequality
        assert_eq!(pair_count(&pts, 5.01), 3);
        assert_eq!(pair_count(&pts, 0.0), 0);
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(select_penalty(627.0), -627.0);
        assert_eq!(select_penalty(54.0), -54.0);
        assert!(select_penalty(1e-9).exp() > 0.999);
        assert!(select_penalty(10.0) < select_penalty(3.0));
        assert_eq!(n_star_for_fraction(2000, 0.025), 50.0);
        assert_eq!(n_star_for_fraction(250, 0.025), 6.0);
    }

    #[test]
    fn xi_prior_bounds() {
        let r = line(0.0, 4.0);
        let p = XiPrior::per_volume(&r, 1.0, 80.0).unwrap();
        assert_eq!(p.lo, 0.25);
        assert_eq!(p.hi, 20.0);
        assert!(XiPrior::new(2.0, 1.0).is_err());
        assert!(Region::new(vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn threshold_degenerate_and_unimodal() {
        let same = vec![vec![2.0]; 10];
        assert!(matches!(select_threshold(&same, &KdeSettings::default()), Err(Error::InvalidInput(_))));
        let even: Vec<Vec<f64>> = (0..400).map(|i| vec![i as f64 / 400.0]).collect();
        assert!(matches!(select_threshold(&even, &KdeSettings::default()), Err(Error::NoLocalMinimum)));
        assert!(select_threshold(&same[..2], &KdeSettings::default()).is_err());
    }

    fn mixture(means: &[f64], n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let z = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| vec![means[r.random_range(0..means.len())] + z.sample(&mut r)])
            .collect()
    }

    #[test]
    fn threshold_two_clusters() {
        let pts = mixture(&[0.0, 4.0], 600, 5);
        let res = select_threshold(&pts, &KdeSettings::default()).unwrap();
        assert!((res.d - 2.83).abs() < 0.3, "{}", res.d);
        assert_eq!(res.grid.len(), 1024);
        // binned evaluation agrees with the exact sum
        let binned = select_threshold(
            &pts,
            &KdeSettings {
                exact_limit: 0,
                ..KdeSettings::default()
            },
        )
        .unwrap();
        let peak = res.density.iter().cloned().fold(0.0, f64::max);
        for (a, b) in res.density.iter().zip(&binned.density) {
            assert!((a - b).abs() < 1e-4 * peak);
        }
    }

    #[test]
    fn threshold_thins_large_inputs() {
        let pts = mixture(&[0.0, 4.0], 12_000, 6);
        let settings = KdeSettings {
            max_points: 1500,
            ..KdeSettings::default()
        };
        let res = select_threshold(&pts, &settings).unwrap();
        assert!((res.d - 2.83).abs() < 0.3, "{}", res.d);
    }

    #[test]
    fn birth_death_mean_cardinality() {
        // xi |R| = 3, a = 1
        let c = cfg(0.3, 0.0, 1.0);
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let runs = 4000;
        let s = BirthDeathSettings {
            iterations: 200,
            ..Default::default()
        };
        let total: usize = (0..runs).map(|_| birth_death_sample(&c, &[], &s, &mut r).len()).sum();
        let mean = total as f64 / runs as f64;
        assert!((mean - 3.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn hard_core_limit() {
        let c = cfg(0.5, -1e6, 4.0);
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let mut pts = Vec::new();
        let s = BirthDeathSettings {
            iterations: 50,
            ..Default::default()
        };
        let mut bad = 0;
        let mut seen_pairs = 0;
        for _ in 0..4000 {
            pts = birth_death_sample(&c, &pts, &s, &mut r);
            if pts.len() >= 2 {
                seen_pairs += 1;
            }
            if pair_count(&pts, 4.0) > 0 {
                bad += 1;
            }
        }
        assert_eq!(bad, 0);
        assert!(seen_pairs > 100);
    }

    #[test]
    fn birth_death_respects_minimum() {
        let c = cfg(0.01, 0.0, 1.0);
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let s = BirthDeathSettings {
            iterations: 500,
            q_birth: 0.5,
            min_cardinality: 1,
        };
        for _ in 0..50 {
            assert!(!birth_death_sample(&c, &[vec![1.0]], &s, &mut r).is_empty());
        }
    }

    #[test]
    fn exchange_edge_cases() {
        let region = line(0.0, 10.0);
        let prior = XiPrior::new(0.1, 8.0).unwrap();
        let pts = vec![vec![1.0], vec![4.0]];
        let bd = BirthDeathSettings::default();
        let mut r = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let o = exchange_update_xi(0.3, &pts, 0.0, 1.0, &region, &prior, 0.0, &bd, &mut r);
            assert!(o.accepted);
            assert_eq!(o.xi, 0.3);
            assert_eq!(o.log_ratio, 0.0);
        }
        // at the lower bound half of all proposals fall outside the support
        let mut rejected_out = 0;
        for _ in 0..200 {
            let o = exchange_update_xi(0.1, &pts, 0.0, 1.0, &region, &prior, 0.5, &bd, &mut r);
            if o.log_ratio == f64::NEG_INFINITY {
                rejected_out += 1;
                assert!(!o.accepted);
                assert_eq!(o.xi, 0.1);
            }
        }
        assert!(rejected_out > 70 && rejected_out < 130, "{rejected_out}");
    }

    #[test]
    fn exchange_outer_stream_is_fixed_width() {
        let region = line(0.0, 10.0);
        let prior = XiPrior::new(0.1, 8.0).unwrap();
        let pts = vec![vec![1.0]];
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        let short = BirthDeathSettings {
            iterations: 1,
            ..Default::default()
        };
        exchange_update_xi(1.0, &pts, 0.0, 1.0, &region, &prior, 0.3, &short, &mut a);
        exchange_update_xi(1.0, &pts, 0.0, 1.0, &region, &prior, 0.3, &BirthDeathSettings::default(), &mut b);
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }
}
