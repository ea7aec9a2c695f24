//! Label switching, posterior over N, averaged densities and allocation
//! probabilities.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::emissions::{EmissionParams, Family};
use crate::error::{Error, Result};
use crate::hmm::{marginal_state_probs, sample_allocations, HmmState};
use crate::numfmt::g17;
use crate::panel::ObservationPanel;
use crate::rjmcmc::ChainSample;
use crate::special::{ln_gamma_pdf, ln_normal_pdf, ln_von_mises_pdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelabelMethod {
    Order,
    Map,
}

#[derive(Debug, Clone)]
pub struct RelabeledChain {
    pub samples: Vec<ChainSample>,
    pub method: RelabelMethod,
    /// Permutation applied to each sample: new label k holds old label perm[k].
    pub permutations: Vec<Vec<usize>>,
}

/// Applies `perm` (new k = old perm[k]) to a recorded sample.
pub fn permute_sample(s: &ChainSample, perm: &[usize]) -> ChainSample {
    let st = s.state().permuted(perm);
    let n = st.n();
    ChainSample {
        lambda: st.initial_weights.clone(),
        big_lambda: st.transition_weights.chunks(n).map(|r| r.to_vec()).collect(),
        emissions: st.emissions,
        ..s.clone()
    }
}

/// Sorts the states of every sample by their first repulsive coordinate.
pub fn relabel_by_order(samples: &[ChainSample]) -> Result<RelabeledChain> {
    let mut out = Vec::with_capacity(samples.len());
    let mut perms = Vec::with_capacity(samples.len());
    for s in samples {
        if s.emissions.first().map(|e| e.family() == Family::BivariateNormal).unwrap_or(false) {
            return Err(Error::InvalidInput(
                "ordering needs a scalar repulsive coordinate; use the MAP relabeling".into(),
            ));
        }
        let key: Vec<f64> = s.emissions.iter().map(|e| e.repulsion_point()[0]).collect();
        let mut perm: Vec<usize> = (0..s.n).collect();
        perm.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(a.cmp(&b)));
        out.push(permute_sample(s, &perm));
        perms.push(perm);
    }
    Ok(RelabeledChain {
        samples: out,
        method: RelabelMethod::Order,
        permutations: perms,
    })
}

pub fn posterior_n_distribution(samples: &[ChainSample]) -> Vec<(usize, f64)> {
    let max = samples.iter().map(|s| s.n).max().unwrap_or(0);
    let mut c = vec![0usize; max + 1];
    for s in samples {
        c[s.n] += 1;
    }
    let tot = samples.len() as f64;
    (1..=max).map(|n| (n, c[n] as f64 / tot)).collect()
}

/// Most frequent N; ties go to the smaller N.
pub fn modal_n(samples: &[ChainSample]) -> Option<usize> {
    let d = posterior_n_distribution(samples);
    d.iter()
        .fold(None, |best: Option<(usize, f64)>, &(n, p)| match best {
            Some((_, bp)) if bp >= p => best,
            _ if p > 0.0 => Some((n, p)),
            _ => best,
        })
        .map(|(n, _)| n)
}

fn cost_matrix(s: &ChainSample, reference: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let pts: Vec<Vec<f64>> = s.emissions.iter().map(|e| e.repulsion_point()).collect();
    reference
        .iter()
        .map(|r| {
            pts.iter()
                .map(|p| p.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .collect()
        })
        .collect()
}

/// Exhaustive search over all permutations (Heap's algorithm); the first
/// minimum in enumeration order wins.
pub fn best_permutation_exhaustive(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let total = |p: &[usize]| p.iter().enumerate().map(|(k, &j)| cost[k][j]).sum::<f64>();
    let mut best = perm.clone();
    let mut best_cost = total(&perm);
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let v = total(&perm);
            if v < best_cost {
                best_cost = v;
                best = perm.clone();
            }
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// Greedy matching: repeatedly take the cheapest remaining (reference,
/// sample) pair.
pub fn best_permutation_greedy(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for (k, row) in cost.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            pairs.push((v, k, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut perm = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for (_, k, j) in pairs {
        if perm[k] == usize::MAX && !used[j] {
            perm[k] = j;
            used[j] = true;
        }
    }
    perm
}

pub const EXHAUSTIVE_LIMIT: usize = 9;

/// MAP relabeling over the samples at the modal N.
pub fn relabel_by_map(samples: &[ChainSample]) -> Result<RelabeledChain> {
    let modal = modal_n(samples).ok_or_else(|| Error::InvalidInput("empty chain".into()))?;
    let kept: Vec<&ChainSample> = samples.iter().filter(|s| s.n == modal).collect();
    let map = kept
        .iter()
        .copied()
        .fold(None::<&ChainSample>, |b, s| match b {
            Some(x) if x.log_posterior() >= s.log_posterior() => Some(x),
            _ => Some(s),
        })
        .expect("modal N has samples");
    let reference: Vec<Vec<f64>> = map.emissions.iter().map(|e| e.repulsion_point()).collect();
    let mut out = Vec::with_capacity(kept.len());
    let mut perms = Vec::with_capacity(kept.len());
    for s in kept {
        let cost = cost_matrix(s, &reference);
        let perm = if modal <= EXHAUSTIVE_LIMIT {
            best_permutation_exhaustive(&cost)
        } else {
            best_permutation_greedy(&cost)
        };
        out.push(permute_sample(s, &perm));
        perms.push(perm);
    }
    Ok(RelabeledChain {
        samples: out,
        method: RelabelMethod::Map,
        permutations: perms,
    })
}

/// Marginal density of observation coordinate `c` (continuous part only
/// for the zero-inflated step length).
pub fn marginal_density(params: &EmissionParams, c: usize, x: f64) -> f64 {
    match *params {
        EmissionParams::UnivariateNormal { mu, sigma } => ln_normal_pdf(x, mu, sigma).exp(),
        EmissionParams::BivariateNormal { mu, sigma } => ln_normal_pdf(x, mu[c], sigma[c][c].sqrt()).exp(),
        EmissionParams::StepAngle { z, mu, sigma, m, k } => {
            if c == 0 {
                if x <= 0.0 {
                    return 0.0;
                }
                let shape = mu * mu / (sigma * sigma);
                let rate = mu / (sigma * sigma);
                (1.0 - z) * ln_gamma_pdf(x, shape, rate).exp()
            } else {
                ln_von_mises_pdf(x, m, k).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityWeights {
    /// pi P^(t-1) of each sample
    Marginal,
    Uniform,
}

#[derive(Debug, Clone)]
pub struct DensityCurves {
    pub grid: Vec<f64>,
    /// per_state[j][g]
    pub per_state: Vec<Vec<f64>>,
    pub mixture: Vec<f64>,
}

/// Average over samples of w_j(t) f_c(x | theta_j); all samples must share N.
pub fn averaged_density(samples: &[ChainSample], t: usize, coordinate: usize, grid: &[f64], weights: DensityWeights) -> Result<DensityCurves> {
    let n = samples.first().map(|s| s.n).ok_or_else(|| Error::InvalidInput("no samples".into()))?;
    if samples.iter().any(|s| s.n != n) {
        return Err(Error::InvalidInput("density averaging needs samples with a common N".into()));
    }
    let mut per_state = vec![vec![0.0; grid.len()]; n];
    for s in samples {
        let st = s.state();
        let w = match weights {
            DensityWeights::Marginal => marginal_state_probs(&st, t),
            DensityWeights::Uniform => vec![1.0 / n as f64; n],
        };
        for (j, e) in st.emissions.iter().enumerate() {
            for (g, &x) in grid.iter().enumerate() {
                per_state[j][g] += w[j] * marginal_density(e, coordinate, x);
            }
        }
    }
    let l = samples.len() as f64;
    for row in per_state.iter_mut() {
        row.iter_mut().for_each(|v| *v /= l);
    }
    let mixture = (0..grid.len()).map(|g| per_state.iter().map(|r| r[g]).sum()).collect();
    Ok(DensityCurves {
        grid: grid.to_vec(),
        per_state,
        mixture,
    })
}

/// Per-time state frequencies over `draws` allocation draws per sample;
/// rows are time points, replicates at a time point are pooled.
pub fn allocation_probabilities<R: Rng + ?Sized>(
    samples: &[ChainSample],
    panel: &ObservationPanel,
    draws: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let n = samples.first().map(|s| s.n).ok_or_else(|| Error::InvalidInput("no samples".into()))?;
    if samples.iter().any(|s| s.n != n) {
        return Err(Error::InvalidInput("allocation summaries need samples with a common N".into()));
    }
    let mut counts = vec![vec![0.0; n]; panel.len_t()];
    for s in samples {
        let st: HmmState = s.state();
        for _ in 0..draws {
            let a = sample_allocations(&st, panel, rng)?;
            for (t, row) in a.states.iter().enumerate() {
                for &k in row {
                    counts[t][k] += 1.0;
                }
            }
        }
    }
    for row in counts.iter_mut() {
        let tot: f64 = row.iter().sum();
        if tot > 0.0 {
            row.iter_mut().for_each(|v| *v /= tot);
        }
    }
    Ok(counts)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn n_posterior_csv(dist: &[(usize, f64)]) -> String {
    let mut s = String::from("N,probability\n");
    for (n, p) in dist {
        s.push_str(&format!("{n},{}\n", g17(*p)));
    }
    s
}

pub fn density_csv(c: &DensityCurves) -> String {
    let mut s = String::from("x");
    for j in 0..c.per_state.len() {
        s.push_str(&format!(",state_{}", j + 1));
    }
    s.push_str(",mixture\n");
    for (g, x) in c.grid.iter().enumerate() {
        s.push_str(&g17(*x));
        for row in &c.per_state {
            s.push(',');
            s.push_str(&g17(row[g]));
        }
        s.push(',');
        s.push_str(&g17(c.mixture[g]));
        s.push('\n');
    }
    s
}

pub fn allocation_csv(times: &[i64], probs: &[Vec<f64>]) -> String {
    let n = probs.first().map(|r| r.len()).unwrap_or(0);
    let mut s = String::from("t");
    for j in 0..n {
        s.push_str(&format!(",p_state{}", j + 1));
    }
    s.push('\n');
    for (t, row) in times.iter().zip(probs) {
        s.push_str(&t.to_string());
        for v in row {
            s.push(',');
            s.push_str(&g17(*v));
        }
        s.push('\n');
    }
    s
}

pub fn write_n_posterior(dist: &[(usize, f64)], path: &Path) -> Result<()> {
    write_text(path, &n_posterior_csv(dist))
}

pub fn write_density(c: &DensityCurves, path: &Path) -> Result<()> {
    write_text(path, &density_csv(c))
}

pub fn write_allocation(times: &[i64], probs: &[Vec<f64>], path: &Path) -> Result<()> {
    write_text(path, &allocation_csv(times, probs))
}

/// Default plotting grid for coordinate `c` of a panel.
pub fn default_grid(panel: &ObservationPanel, family: Family, c: usize, points: usize) -> Vec<f64> {
    let vals = panel.pooled(c);
    let (lo, hi) = if family == Family::StepAngle && c == 1 {
        (-std::f64::consts::PI, std::f64::consts::PI)
    } else if vals.is_empty() {
        (0.0, 1.0)
    } else {
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pad = 0.1 * (hi - lo).max(1e-9);
        let lo = if family == Family::StepAngle { 0.0 } else { lo - pad };
        (lo, hi + pad)
    };
    let m = points.max(2);
    (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect()
}
