//! Reversible-jump sampler: fixed-dimension sweeps, split/combine and
//! birth/death moves, and the exchange update of the Strauss intensity.

pub mod moves;
pub mod output;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::emissions::{propose_update, sample_prior, EmissionHyperPrior, EmissionParams, Family, ProposalScales};
use crate::error::{Error, Result};
use crate::hmm::{EmissionTable, HmmState, Layout};
use crate::panel::ObservationPanel;
use crate::special::{penalty_term, quantile, sample_sd};
use crate::strauss::{self, BirthDeathSettings, Region, XiPrior};
use moves::{combine_roles, combine_state, draw_state_split_aux, ln_state_split_aux_density, split_state};
pub use output::{read_chain, write_chain, ChainSample};

/// Everything the posterior depends on besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPrior {
    pub n_max: usize,
    pub hyper: EmissionHyperPrior,
    /// Log pair penalty; 0 gives the independent prior.
    pub log_a: f64,
    pub d: f64,
    pub region: Region,
    pub xi_prior: XiPrior,
}

impl ModelPrior {
    pub fn validate(&self) -> Result<()> {
        if self.n_max < 2 {
            return Err(Error::config("n_max", "must be at least 2"));
        }
        self.hyper.validate()?;
        if !(self.log_a <= 0.0) {
            return Err(Error::config("log_a", "penalty a must lie in (0, 1]"));
        }
        if !(self.d >= 0.0 && self.d.is_finite()) {
            return Err(Error::config("d", "must be non-negative"));
        }
        self.region.validate()?;
        if self.region.dim() != self.hyper.family().repulsion_dim() {
            return Err(Error::config("region", "dimension does not match the repulsive coordinate"));
        }
        XiPrior::new(self.xi_prior.lo, self.xi_prior.hi).map(|_| ())
    }

    pub fn is_independent(&self) -> bool {
        self.log_a == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub initial_n: usize,
    pub scales: ProposalScales,
    pub birth_death: BirthDeathSettings,
    pub prior: ModelPrior,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be positive"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::config("burn_in", "must be smaller than iterations"));
        }
        if self.thin == 0 {
            return Err(Error::config("thin", "must be at least 1"));
        }
        self.prior.validate()?;
        if self.initial_n == 0 || self.initial_n > self.prior.n_max {
            return Err(Error::config("initial_n", "must lie in 1..=n_max"));
        }
        self.scales.validate()?;
        self.birth_death.validate()
    }
}

/// Prior probability of proposing the up move (split or birth) at N.
fn ln_p_up(n: usize) -> f64 {
    if n == 1 {
        0.0
    } else {
        0.5f64.ln()
    }
}

/// Prior probability of proposing the down move (combine or death) at N.
fn ln_p_down(n: usize) -> f64 {
    if n <= 1 {
        f64::NEG_INFINITY
    } else {
        0.5f64.ln()
    }
}

fn ln_exp1(x: f64) -> f64 {
    if x > 0.0 {
        -x
    } else {
        f64::NEG_INFINITY
    }
}

fn points(state: &HmmState) -> Vec<Vec<f64>> {
    state.emissions.iter().map(|e| e.repulsion_point()).collect()
}

/// Unnormalized log prior: Gamma(1,1) weights, emission hyperpriors,
/// Strauss density of the locations given N, uniform N and uniform xi.
pub fn log_prior(state: &HmmState, xi: f64, prior: &ModelPrior) -> f64 {
    let n = state.n();
    if n == 0 || n > prior.n_max || !prior.xi_prior.contains(xi) {
        return f64::NEG_INFINITY;
    }
    let w: f64 = state
        .initial_weights
        .iter()
        .chain(&state.transition_weights)
        .map(|&x| ln_exp1(x))
        .sum();
    let h: f64 = state.emissions.iter().map(|e| prior.hyper.ln_density(e)).sum();
    let s = strauss::log_conditional_density(prior.log_a, prior.d, &prior.region, &points(state));
    w + h + s - (prior.n_max as f64).ln() - (prior.xi_prior.hi - prior.xi_prior.lo).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Split,
    Combine,
    Birth,
    Death,
    /// Up move at N = n_max; counted as rejected.
    Skip,
}

#[derive(Debug, Clone, Copy)]
pub struct MoveRecord {
    pub kind: MoveKind,
    pub accepted: bool,
    /// Log acceptance ratio; `None` for skips and out-of-support proposals.
    pub log_ratio: Option<f64>,
    /// Part of the log ratio contributed by the Strauss pair penalty.
    pub strauss_term: f64,
}

impl MoveRecord {
    fn skipped(kind: MoveKind) -> Self {
        MoveRecord {
            kind,
            accepted: false,
            log_ratio: None,
            strauss_term: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Rate {
    pub tried: u64,
    pub accepted: u64,
}

impl Rate {
    fn add(&mut self, ok: bool) {
        self.tried += 1;
        self.accepted += ok as u64;
    }

    pub fn fraction(&self) -> f64 {
        if self.tried == 0 {
            0.0
        } else {
            self.accepted as f64 / self.tried as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MoveStats {
    pub lambda: Rate,
    pub big_lambda: Rate,
    pub emission: Rate,
    pub split: Rate,
    pub combine: Rate,
    pub birth: Rate,
    pub death: Rate,
    pub xi: Rate,
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    log_ratio >= 0.0 || u.ln() < log_ratio
}

/// Initial state: repulsive coordinates at evenly spaced data quantiles,
/// spreads shrunk with N, flat weights. An empty panel starts from
/// prior draws.
pub fn initial_state<R: Rng + ?Sized>(panel: &ObservationPanel, cfg: &RunConfig, rng: &mut R) -> Result<HmmState> {
    let n = cfg.initial_n;
    let prior = &cfg.prior;
    let fam = prior.hyper.family();
    if fam.panel_kind() != panel.kind() {
        return Err(Error::config("prior", "emission family does not match the panel"));
    }
    let emissions: Vec<EmissionParams> = if panel.is_empty() {
        (0..n)
            .map(|_| sample_prior(&prior.hyper, &prior.region.sample_uniform(rng), rng))
            .collect()
    } else {
        let coords = fam.repulsion_dim();
        let data: Vec<Vec<f64>> = (0..panel.dim()).map(|c| panel.pooled(c)).collect();
        (0..n)
            .map(|j| {
                let q = (j as f64 + 0.5) / n as f64;
                let pt: Vec<f64> = (0..coords)
                    .map(|c| {
                        let v = if fam == Family::StepAngle {
                            // quantiles of the positive steps; zeros are the atom
                            let pos: Vec<f64> = data[0].iter().cloned().filter(|x| *x > 0.0).collect();
                            if pos.is_empty() {
                                prior.region.lo[0]
                            } else {
                                quantile(&pos, q)
                            }
                        } else {
                            quantile(&data[c], q)
                        };
                        v.clamp(prior.region.lo[c], prior.region.hi[c])
                    })
                    .collect();
                seeded_emission(&prior.hyper, &pt, &data, n)
            })
            .collect()
    };
    let state = HmmState::new(vec![1.0; n], vec![1.0; n * n], emissions);
    state.validate()?;
    Ok(state)
}

fn spread(data: &[f64], n: usize) -> f64 {
    let s = if data.len() > 1 { sample_sd(data) } else { 1.0 };
    let s = if s.is_finite() && s > 0.0 { s } else { 1.0 };
    s / n as f64
}

fn seeded_emission(hyper: &EmissionHyperPrior, pt: &[f64], data: &[Vec<f64>], n: usize) -> EmissionParams {
    match *hyper {
        EmissionHyperPrior::UnivariateNormal { sigma_lo, sigma_hi } => EmissionParams::UnivariateNormal {
            mu: pt[0],
            sigma: clamp_open(spread(&data[0], n), sigma_lo, sigma_hi),
        },
        EmissionHyperPrior::BivariateNormal { .. } => {
            let a = spread(&data[0], n);
            let b = spread(&data[1], n);
            EmissionParams::BivariateNormal {
                mu: [pt[0], pt[1]],
                sigma: [[a * a, 0.0], [0.0, b * b]],
            }
        }
        EmissionHyperPrior::StepAngle {
            z_a,
            z_b,
            sigma_lo,
            sigma_hi,
            k_lo,
            k_hi,
        } => EmissionParams::StepAngle {
            z: z_a / (z_a + z_b),
            mu: pt[0].max(f64::MIN_POSITIVE),
            sigma: clamp_open(spread(&data[0], n), sigma_lo, sigma_hi),
            m: 0.0,
            k: clamp_open(1.0, k_lo, k_hi),
        },
    }
}

fn clamp_open(x: f64, lo: f64, hi: f64) -> f64 {
    if x > lo && x < hi {
        x
    } else {
        lo + 0.5 * (hi - lo)
    }
}

/// Mutable chain state with the emission table cached.
pub struct Sampler<'a> {
    cfg: &'a RunConfig,
    layout: Layout,
    state: HmmState,
    table: EmissionTable,
    pi: Vec<f64>,
    p: Vec<f64>,
    log_lik: f64,
    log_prior: f64,
    xi: f64,
    pub stats: MoveStats,
}

impl<'a> Sampler<'a> {
    pub fn new(panel: &ObservationPanel, cfg: &'a RunConfig, state: HmmState, xi: f64) -> Result<Self> {
        if state.family().panel_kind() != panel.kind() {
            return Err(Error::InvalidInput("state family does not match the panel".into()));
        }
        state.validate()?;
        let layout = Layout::new(panel);
        let table = layout.table(&state.emissions);
        let pi = state.initial_probs();
        let p = state.transition_matrix();
        let log_lik = layout.forward(&table, &pi, &p);
        let log_prior = log_prior(&state, xi, &cfg.prior);
        if !log_prior.is_finite() {
            return Err(Error::InvalidInput("initial state has zero prior density".into()));
        }
        Ok(Sampler {
            cfg,
            layout,
            state,
            table,
            pi,
            p,
            log_lik,
            log_prior,
            xi,
            stats: MoveStats::default(),
        })
    }

    pub fn state(&self) -> &HmmState {
        &self.state
    }
    pub fn xi(&self) -> f64 {
        self.xi
    }
    pub fn log_lik(&self) -> f64 {
        self.log_lik
    }
    pub fn log_prior(&self) -> f64 {
        self.log_prior
    }

    fn forward_with(&self, iw: &[f64], tw: &[f64]) -> f64 {
        let n = iw.len();
        let s: f64 = iw.iter().sum();
        let pi: Vec<f64> = iw.iter().map(|w| w / s).collect();
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            let rs: f64 = tw[i * n..(i + 1) * n].iter().sum();
            for j in 0..n {
                p[i * n + j] = tw[i * n + j] / rs;
            }
        }
        self.layout.forward(&self.table, &pi, &p)
    }

    fn refresh_probs(&mut self) {
        self.pi = self.state.initial_probs();
        self.p = self.state.transition_matrix();
    }

    /// One MH update per block: each lambda_i, each Lambda_ij (row-major),
    /// then each emission block.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.state.n();
        let sc = &self.cfg.scales;
        for i in 0..n {
            let old = self.state.initial_weights[i];
            let z: f64 = rng.sample(StandardNormal);
            let new = old * (sc.lambda * z).exp();
            let mut iw = self.state.initial_weights.clone();
            iw[i] = new;
            let ll = self.forward_with(&iw, &self.state.transition_weights);
            let dlp = ln_exp1(new) - ln_exp1(old);
            let ok = new > 0.0 && accept(ll - self.log_lik + dlp + (new / old).ln(), rng);
            if ok {
                self.state.initial_weights = iw;
                self.log_lik = ll;
                self.log_prior += dlp;
            }
            self.stats.lambda.add(ok);
        }
        self.refresh_probs();
        for idx in 0..n * n {
            let old = self.state.transition_weights[idx];
            let z: f64 = rng.sample(StandardNormal);
            let new = old * (sc.big_lambda * z).exp();
            let mut tw = self.state.transition_weights.clone();
            tw[idx] = new;
            let ll = self.forward_with(&self.state.initial_weights, &tw);
            let dlp = ln_exp1(new) - ln_exp1(old);
            let ok = new > 0.0 && accept(ll - self.log_lik + dlp + (new / old).ln(), rng);
            if ok {
                self.state.transition_weights = tw;
                self.log_lik = ll;
                self.log_prior += dlp;
            }
            self.stats.big_lambda.add(ok);
        }
        self.refresh_probs();
        for j in 0..n {
            self.update_emission(j, rng);
        }
    }

    fn strauss_delta(&self, j: usize, new_pt: &[f64]) -> f64 {
        let prior = &self.cfg.prior;
        if !prior.region.contains(new_pt) {
            return f64::NEG_INFINITY;
        }
        let others: Vec<Vec<f64>> = self
            .state
            .emissions
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != j)
            .map(|(_, e)| e.repulsion_point())
            .collect();
        let old_pt = self.state.emissions[j].repulsion_point();
        let s_new = strauss::neighbors_within(&others, new_pt, prior.d);
        let s_old = strauss::neighbors_within(&others, &old_pt, prior.d);
        penalty_term(s_new, prior.log_a) - penalty_term(s_old, prior.log_a)
    }

    fn update_emission<R: Rng + ?Sized>(&mut self, j: usize, rng: &mut R) {
        let old = &self.state.emissions[j];
        let (prop, hastings) = propose_update(old, &self.cfg.scales, rng);
        let u: f64 = rng.random();
        if !prop.is_valid() {
            self.stats.emission.add(false);
            return;
        }
        let hyper = &self.cfg.prior.hyper;
        let dlp = hyper.ln_density(&prop) - hyper.ln_density(old) + self.strauss_delta(j, &prop.repulsion_point());
        if !dlp.is_finite() {
            self.stats.emission.add(false);
            return;
        }
        let col = self.layout.column(&prop);
        let saved = std::mem::replace(&mut self.table.cols[j], col);
        let ll = self.layout.forward(&self.table, &self.pi, &self.p);
        let lr = ll - self.log_lik + dlp + hastings;
        let ok = lr >= 0.0 || u.ln() < lr;
        if ok {
            self.state.emissions[j] = prop;
            self.log_lik = ll;
            self.log_prior += dlp;
        } else {
            self.table.cols[j] = saved;
        }
        self.stats.emission.add(ok);
    }

    fn table_for(&self, state: &HmmState, reuse: &[Option<usize>]) -> EmissionTable {
        EmissionTable {
            cols: state
                .emissions
                .iter()
                .zip(reuse)
                .map(|(e, r)| match r {
                    Some(k) => self.table.cols[*k].clone(),
                    None => self.layout.column(e),
                })
                .collect(),
        }
    }

    fn install(&mut self, state: HmmState, table: EmissionTable, ll: f64, lp: f64) {
        self.state = state;
        self.table = table;
        self.log_lik = ll;
        self.log_prior = lp;
        self.refresh_probs();
    }

    fn strauss_penalty(&self, state: &HmmState) -> f64 {
        let prior = &self.cfg.prior;
        penalty_term(strauss::pair_count(&points(state), prior.d), prior.log_a)
    }

    /// Split (or combine at the matched pair); returns the log ratio of the
    /// split direction with its Strauss part, or `None` when the reverse
    /// move cannot reach the pair.
    fn split_ratio(&self, small: &HmmState, big: &HmmState, j_star: usize, aux: &moves::SplitAux, log_j: f64, ll_small: f64, ll_big: f64) -> (f64, f64) {
        let prior = &self.cfg.prior;
        let n = small.n();
        let dlp = log_prior(big, self.xi, prior) - log_prior(small, self.xi, prior);
        let strauss_term = self.strauss_penalty(big) - self.strauss_penalty(small);
        let lr = ll_big - ll_small + dlp + ln_p_down(n + 1) - ln_p_up(n) + (n as f64).ln() + ((n + 1) as f64).ln() + log_j
            - ln_state_split_aux_density(small, j_star, aux);
        (lr, strauss_term)
    }

    pub fn split_combine<R: Rng + ?Sized>(&mut self, rng: &mut R) -> MoveRecord {
        let n = self.state.n();
        let up = n == 1 || rng.random::<f64>() < 0.5;
        if up {
            if n + 1 > self.cfg.prior.n_max {
                self.stats.split.add(false);
                return MoveRecord::skipped(MoveKind::Skip);
            }
            let j_star = rng.random_range(0..n);
            let pos = rng.random_range(0..=n);
            let aux = draw_state_split_aux(&self.state, j_star, rng);
            let u: f64 = rng.random();
            let rec = |lr: Option<f64>, st: f64, ok: bool| MoveRecord {
                kind: MoveKind::Split,
                accepted: ok,
                log_ratio: lr,
                strauss_term: st,
            };
            let Some((big, log_j)) = split_state(&self.state, j_star, pos, &aux) else {
                self.stats.split.add(false);
                return rec(None, 0.0, false);
            };
            let c1 = if j_star < pos { j_star } else { j_star + 1 };
            if combine_roles(&big) != Some((c1, pos)) {
                self.stats.split.add(false);
                return rec(None, 0.0, false);
            }
            let lp_big = log_prior(&big, self.xi, &self.cfg.prior);
            if !lp_big.is_finite() {
                self.stats.split.add(false);
                return rec(None, 0.0, false);
            }
            let reuse: Vec<Option<usize>> = (0..=n)
                .map(|k| {
                    if k == c1 || k == pos {
                        None
                    } else {
                        // old label of slot k
                        let without_c2 = if k < pos { k } else { k - 1 };
                        Some(without_c2)
                    }
                })
                .collect();
            let table = self.table_for(&big, &reuse);
            let ll_big = self.layout.forward(&table, &big.initial_probs(), &big.transition_matrix());
            let (lr, st) = self.split_ratio(&self.state, &big, j_star, &aux, log_j, self.log_lik, ll_big);
            let ok = lr >= 0.0 || u.ln() < lr;
            if ok {
                self.install(big, table, ll_big, lp_big);
            }
            self.stats.split.add(ok);
            rec(Some(lr), st, ok)
        } else {
            let u: f64 = rng.random();
            let rec = |lr: Option<f64>, st: f64, ok: bool| MoveRecord {
                kind: MoveKind::Combine,
                accepted: ok,
                log_ratio: lr,
                strauss_term: st,
            };
            let Some((a, b)) = combine_roles(&self.state) else {
                self.stats.combine.add(false);
                return rec(None, 0.0, false);
            };
            let Some(res) = combine_state(&self.state, a, b) else {
                self.stats.combine.add(false);
                return rec(None, 0.0, false);
            };
            let small = res.merged;
            let lp_small = log_prior(&small, self.xi, &self.cfg.prior);
            // recomputed from the merged block so both directions share one formula
            let Some((_, log_j)) = split_state(&small, res.j_star, res.pos, &res.aux) else {
                self.stats.combine.add(false);
                return rec(None, 0.0, false);
            };
            let aux_ok = ln_state_split_aux_density(&small, res.j_star, &res.aux).is_finite();
            if !lp_small.is_finite() || !aux_ok {
                self.stats.combine.add(false);
                return rec(None, 0.0, false);
            }
            let reduced: Vec<usize> = (0..n).filter(|&k| k != b).collect();
            let reuse: Vec<Option<usize>> = reduced.iter().enumerate().map(|(r, &k)| if r == res.j_star { None } else { Some(k) }).collect();
            let table = self.table_for(&small, &reuse);
            let ll_small = self.layout.forward(&table, &small.initial_probs(), &small.transition_matrix());
            let (lr_split, st) = self.split_ratio(&small, &self.state, res.j_star, &res.aux, log_j, ll_small, self.log_lik);
            let lr = -lr_split;
            let ok = lr >= 0.0 || u.ln() < lr;
            if ok {
                self.install(small, table, ll_small, lp_small);
            }
            self.stats.combine.add(ok);
            rec(Some(lr), -st, ok)
        }
    }

    /// Log proposal density of a born block (weights, emission, location).
    fn ln_birth_density(&self, state: &HmmState, k: usize) -> f64 {
        let n = state.n();
        let mut q = ln_exp1(state.initial_weights[k]);
        for j in 0..n {
            q += ln_exp1(state.lambda(k, j));
            if j != k {
                q += ln_exp1(state.lambda(j, k));
            }
        }
        q + self.cfg.prior.hyper.ln_density(&state.emissions[k]) - self.cfg.prior.region.ln_volume()
    }

    fn birth_ratio(&self, small: &HmmState, big: &HmmState, k: usize, ll_small: f64, ll_big: f64) -> (f64, f64) {
        let prior = &self.cfg.prior;
        let n = small.n();
        let dlp = log_prior(big, self.xi, prior) - log_prior(small, self.xi, prior);
        let st = self.strauss_penalty(big) - self.strauss_penalty(small);
        let lr = ll_big - ll_small + dlp - self.ln_birth_density(big, k) + ln_p_down(n + 1) - ln_p_up(n);
        (lr, st)
    }

    pub fn birth_death<R: Rng + ?Sized>(&mut self, rng: &mut R) -> MoveRecord {
        let n = self.state.n();
        let up = n == 1 || rng.random::<f64>() < 0.5;
        if up {
            if n + 1 > self.cfg.prior.n_max {
                self.stats.birth.add(false);
                return MoveRecord::skipped(MoveKind::Skip);
            }
            let k = rng.random_range(0..=n);
            let lam: f64 = Exp1.sample(rng);
            let row: Vec<f64> = (0..=n).map(|_| Exp1.sample(rng)).collect();
            let col: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
            let pt = self.cfg.prior.region.sample_uniform(rng);
            let em = sample_prior(&self.cfg.prior.hyper, &pt, rng);
            let u: f64 = rng.random();
            let big = insert_state(&self.state, k, lam, &row, &col, em);
            let lp_big = log_prior(&big, self.xi, &self.cfg.prior);
            if !lp_big.is_finite() || !(lam > 0.0) || row.iter().chain(&col).any(|v| !(*v > 0.0)) {
                self.stats.birth.add(false);
                return MoveRecord {
                    kind: MoveKind::Birth,
                    accepted: false,
                    log_ratio: None,
                    strauss_term: 0.0,
                };
            }
            let reuse: Vec<Option<usize>> = (0..=n).map(|s| if s == k { None } else if s < k { Some(s) } else { Some(s - 1) }).collect();
            let table = self.table_for(&big, &reuse);
            let ll_big = self.layout.forward(&table, &big.initial_probs(), &big.transition_matrix());
            let (lr, st) = self.birth_ratio(&self.state, &big, k, self.log_lik, ll_big);
            let ok = lr >= 0.0 || u.ln() < lr;
            if ok {
                self.install(big, table, ll_big, lp_big);
            }
            self.stats.birth.add(ok);
            MoveRecord {
                kind: MoveKind::Birth,
                accepted: ok,
                log_ratio: Some(lr),
                strauss_term: st,
            }
        } else {
            let k = rng.random_range(0..n);
            let u: f64 = rng.random();
            let small = remove_state(&self.state, k);
            let lp_small = log_prior(&small, self.xi, &self.cfg.prior);
            let reuse: Vec<Option<usize>> = (0..n).filter(|&s| s != k).map(Some).collect();
            let table = self.table_for(&small, &reuse);
            let ll_small = self.layout.forward(&table, &small.initial_probs(), &small.transition_matrix());
            let (lr_birth, st) = self.birth_ratio(&small, &self.state, k, ll_small, self.log_lik);
            let lr = -lr_birth;
            let ok = lp_small.is_finite() && (lr >= 0.0 || u.ln() < lr);
            if ok {
                self.install(small, table, ll_small, lp_small);
            }
            self.stats.death.add(ok);
            MoveRecord {
                kind: MoveKind::Death,
                accepted: ok,
                log_ratio: Some(lr),
                strauss_term: -st,
            }
        }
    }

    pub fn update_xi<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        let prior = &self.cfg.prior;
        let out = strauss::exchange_update_xi(
            self.xi,
            &points(&self.state),
            prior.log_a,
            prior.d,
            &prior.region,
            &prior.xi_prior,
            self.cfg.scales.xi,
            &self.cfg.birth_death,
            rng,
        );
        // the xi prior is flat on its support, so the log prior is unchanged
        self.xi = out.xi;
        self.stats.xi.add(out.accepted);
        out.accepted
    }

    /// Sweep, one variable-dimension move chosen by a fair coin, xi update.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> MoveRecord {
        self.sweep(rng);
        let rec = if rng.random::<f64>() < 0.5 {
            self.split_combine(rng)
        } else {
            self.birth_death(rng)
        };
        self.update_xi(rng);
        rec
    }

    pub fn sample(&self, iter: usize, rec: &MoveRecord) -> ChainSample {
        ChainSample::from_state(iter, &self.state, self.xi, self.log_lik, self.log_prior, rec)
    }
}

fn insert_state(state: &HmmState, k: usize, lam: f64, row: &[f64], col: &[f64], em: EmissionParams) -> HmmState {
    let n = state.n();
    let m = n + 1;
    let old = |s: usize| if s < k { s } else { s - 1 };
    let mut iw = state.initial_weights.clone();
    iw.insert(k, lam);
    let mut ems = state.emissions.clone();
    ems.insert(k, em);
    let mut tw = Vec::with_capacity(m * m);
    for a in 0..m {
        for b in 0..m {
            tw.push(if a == k {
                row[b]
            } else if b == k {
                col[old(a)]
            } else {
                state.lambda(old(a), old(b))
            });
        }
    }
    HmmState::new(iw, tw, ems)
}

fn remove_state(state: &HmmState, k: usize) -> HmmState {
    let keep: Vec<usize> = (0..state.n()).filter(|&s| s != k).collect();
    let mut tw = Vec::with_capacity(keep.len() * keep.len());
    for &a in &keep {
        for &b in &keep {
            tw.push(state.lambda(a, b));
        }
    }
    HmmState::new(
        keep.iter().map(|&s| state.initial_weights[s]).collect(),
        tw,
        keep.iter().map(|&s| state.emissions[s].clone()).collect(),
    )
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub samples: Vec<ChainSample>,
    pub stats: MoveStats,
}

/// Starting xi: one expected point per state, clamped into the prior.
pub fn initial_xi(n: usize, prior: &ModelPrior) -> f64 {
    (n as f64 / prior.region.volume()).clamp(prior.xi_prior.lo, prior.xi_prior.hi)
}

pub fn run_chain(panel: &ObservationPanel, cfg: &RunConfig) -> Result<Chain> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    run_chain_with(panel, cfg, &mut rng)
}

pub fn run_chain_with<R: Rng + ?Sized>(panel: &ObservationPanel, cfg: &RunConfig, rng: &mut R) -> Result<Chain> {
    cfg.validate()?;
    let state = initial_state(panel, cfg, rng)?;
    let xi = initial_xi(state.n(), &cfg.prior);
    let mut s = Sampler::new(panel, cfg, state, xi)?;
    let mut samples = Vec::with_capacity((cfg.iterations - cfg.burn_in) / cfg.thin + 1);
    for it in 1..=cfg.iterations {
        let rec = s.step(rng);
        if it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
            debug_assert!(s.state().validate().is_ok());
            samples.push(s.sample(it, &rec));
        }
    }
    Ok(Chain {
        samples,
        stats: s.stats.clone(),
    })
}
