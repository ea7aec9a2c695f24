//! HMM state, forward-recursion likelihood, enumeration oracle, simulation
//! and sequential allocation sampling.

use crate::emissions::{EmissionParams, Family};
use crate::error::{Error, Result};
use crate::panel::{ObservationPanel, ReplicateMode};
use crate::special::log_sum_exp;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct HmmState {
    /// Gamma weights of the initial distribution (lambda).
    pub initial_weights: Vec<f64>,
    /// Row-major N x N gamma weights of the transition matrix (Lambda).
    pub transition_weights: Vec<f64>,
    pub emissions: Vec<EmissionParams>,
}

impl HmmState {
    pub fn new(initial_weights: Vec<f64>, transition_weights: Vec<f64>, emissions: Vec<EmissionParams>) -> Self {
        HmmState {
            initial_weights,
            transition_weights,
            emissions,
        }
    }

    pub fn n(&self) -> usize {
        self.emissions.len()
    }

    pub fn family(&self) -> Family {
        self.emissions[0].family()
    }

    pub fn lambda(&self, i: usize, j: usize) -> f64 {
        self.transition_weights[i * self.n() + j]
    }

    pub fn initial_probs(&self) -> Vec<f64> {
        let s: f64 = self.initial_weights.iter().sum();
        self.initial_weights.iter().map(|w| w / s).collect()
    }

    /// Row-major transition probabilities.
    pub fn transition_matrix(&self) -> Vec<f64> {
        let n = self.n();
        let mut p = self.transition_weights.clone();
        for row in p.chunks_mut(n) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::InvalidInput("state with N = 0".into()));
        }
        if self.initial_weights.len() != n || self.transition_weights.len() != n * n {
            return Err(Error::InvalidInput("weight dimensions do not match N".into()));
        }
        let positive = |v: &f64| *v > 0.0 && v.is_finite();
        if !self.initial_weights.iter().all(positive) || !self.transition_weights.iter().all(positive) {
            return Err(Error::InvalidInput("weights must be positive".into()));
        }
        let fam = self.family();
        if self.emissions.iter().any(|e| e.family() != fam || !e.is_valid()) {
            return Err(Error::InvalidInput("invalid emission parameters".into()));
        }
        Ok(())
    }

    /// Relabels states: new state `k` is old state `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> HmmState {
        let n = self.n();
        let mut tw = Vec::with_capacity(n * n);
        for &a in perm {
            for &b in perm {
                tw.push(self.lambda(a, b));
            }
        }
        HmmState {
            initial_weights: perm.iter().map(|&a| self.initial_weights[a]).collect(),
            transition_weights: tw,
            emissions: perm.iter().map(|&a| self.emissions[a].clone()).collect(),
        }
    }
}

/// Observations flattened into likelihood units and state sequences.
///
/// A unit is the set of observations sharing one latent state; a sequence is
/// a Markov chain over units.
#[derive(Debug, Clone)]
pub struct Layout {
    dim: usize,
    obs: Vec<f64>,
    unit_ranges: Vec<(usize, usize)>,
    sequences: Vec<Vec<usize>>,
}

impl Layout {
    pub fn new(panel: &ObservationPanel) -> Layout {
        let dim = panel.dim();
        let mut obs = Vec::with_capacity(panel.n_observations() * dim);
        let mut unit_ranges = Vec::new();
        let mut sequences = Vec::new();
        match panel.mode() {
            ReplicateMode::Shared => {
                let mut seq = Vec::with_capacity(panel.len_t());
                for t in 0..panel.len_t() {
                    let start = obs.len() / dim;
                    for o in panel.observations(t) {
                        obs.extend_from_slice(o);
                    }
                    seq.push(unit_ranges.len());
                    unit_ranges.push((start, obs.len() / dim));
                }
                if !seq.is_empty() {
                    sequences.push(seq);
                }
            }
            ReplicateMode::Independent => {
                let n = panel.observations(0).len();
                let tt = panel.len_t();
                for r in 0..n {
                    let mut seq = Vec::with_capacity(tt);
                    for t in 0..tt {
                        let start = obs.len() / dim;
                        obs.extend_from_slice(&panel.observations(t)[r]);
                        seq.push(unit_ranges.len());
                        unit_ranges.push((start, start + 1));
                    }
                    sequences.push(seq);
                }
            }
        }
        Layout {
            dim,
            obs,
            unit_ranges,
            sequences,
        }
    }

    pub fn n_units(&self) -> usize {
        self.unit_ranges.len()
    }

    pub fn sequences(&self) -> &[Vec<usize>] {
        &self.sequences
    }

    pub fn unit_observations(&self, u: usize) -> impl Iterator<Item = &[f64]> {
        let (a, b) = self.unit_ranges[u];
        self.obs[a * self.dim..b * self.dim].chunks(self.dim)
    }

    /// Per-unit log emission density of one state.
    pub fn column(&self, params: &EmissionParams) -> Vec<f64> {
        let prep = params.prepare();
        self.unit_ranges
            .iter()
            .map(|&(a, b)| {
                self.obs[a * self.dim..b * self.dim]
                    .chunks(self.dim)
                    .map(|o| prep.ln_pdf(o))
                    .sum()
            })
            .collect()
    }

    pub fn table(&self, emissions: &[EmissionParams]) -> EmissionTable {
        EmissionTable {
            cols: emissions.iter().map(|e| self.column(e)).collect(),
        }
    }

    /// Scaled forward recursion summed over sequences.
    pub fn forward(&self, table: &EmissionTable, pi: &[f64], p: &[f64]) -> f64 {
        let n = pi.len();
        let cols = &table.cols;
        let mut alpha = vec![0.0; n];
        let mut next = vec![0.0; n];
        let mut total = 0.0;
        for seq in &self.sequences {
            for (step, &u) in seq.iter().enumerate() {
                let m = cols.iter().map(|c| c[u]).fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY || m.is_nan() {
                    return f64::NEG_INFINITY;
                }
                if step == 0 {
                    for j in 0..n {
                        next[j] = pi[j] * (cols[j][u] - m).exp();
                    }
                } else {
                    for j in 0..n {
                        let mut s = 0.0;
                        for i in 0..n {
                            s += alpha[i] * p[i * n + j];
                        }
                        next[j] = s * (cols[j][u] - m).exp();
                    }
                }
                let c: f64 = next.iter().sum();
                if c <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                total += m + c.ln();
                for j in 0..n {
                    alpha[j] = next[j] / c;
                }
            }
        }
        total
    }

    pub fn log_likelihood(&self, state: &HmmState) -> f64 {
        let table = self.table(&state.emissions);
        self.forward(&table, &state.initial_probs(), &state.transition_matrix())
    }
}

/// Cached log emission densities, one column per state.
#[derive(Debug, Clone)]
pub struct EmissionTable {
    pub cols: Vec<Vec<f64>>,
}

fn check_compat(state: &HmmState, panel: &ObservationPanel) -> Result<()> {
    state.validate()?;
    if state.family().panel_kind() != panel.kind() {
        return Err(Error::InvalidInput(format!(
            "{:?} emissions do not match a {:?} panel",
            state.family(),
            panel.kind()
        )));
    }
    Ok(())
}

pub fn log_likelihood(state: &HmmState, panel: &ObservationPanel) -> Result<f64> {
    check_compat(state, panel)?;
    Ok(Layout::new(panel).log_likelihood(state))
}

/// Exact enumeration over all state sequences.
pub fn brute_force_log_likelihood(state: &HmmState, panel: &ObservationPanel) -> Result<f64> {
    check_compat(state, panel)?;
    let layout = Layout::new(panel);
    let n = state.n();
    let table = layout.table(&state.emissions);
    let ln_pi: Vec<f64> = state.initial_probs().iter().map(|v| v.ln()).collect();
    let ln_p: Vec<f64> = state.transition_matrix().iter().map(|v| v.ln()).collect();
    let mut total = 0.0;
    for seq in layout.sequences() {
        let count = (n as f64).powi(seq.len() as i32);
        if count > 1e6 {
            return Err(Error::TooLarge(count));
        }
        let mut terms = Vec::with_capacity(count as usize);
        let mut path = vec![0usize; seq.len()];
        loop {
            let mut lp = ln_pi[path[0]] + table.cols[path[0]][seq[0]];
            for s in 1..seq.len() {
                lp += ln_p[path[s - 1] * n + path[s]] + table.cols[path[s]][seq[s]];
            }
            terms.push(lp);
            // odometer increment
            let mut d = 0;
            loop {
                if d == path.len() {
                    break;
                }
                path[d] += 1;
                if path[d] < n {
                    break;
                }
                path[d] = 0;
                d += 1;
            }
            if d == path.len() {
                break;
            }
        }
        total += log_sum_exp(&terms);
    }
    Ok(total)
}

/// Latent states, `states[t][r]` (0-based state index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationDraw {
    pub states: Vec<Vec<usize>>,
}

fn draw_categorical<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> Option<usize> {
    let s: f64 = w.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return None;
    }
    let mut u = rng.random::<f64>() * s;
    for (i, v) in w.iter().enumerate() {
        u -= v;
        if u < 0.0 {
            return Some(i);
        }
    }
    w.iter().rposition(|v| *v > 0.0)
}

/// Simulates T time points with n replicates each.
pub fn simulate<R: Rng + ?Sized>(
    state: &HmmState,
    t_len: usize,
    n: usize,
    mode: ReplicateMode,
    rng: &mut R,
) -> Result<(ObservationPanel, AllocationDraw)> {
    state.validate()?;
    if t_len == 0 || n == 0 {
        return Err(Error::InvalidInput("T and n must be positive".into()));
    }
    let pi = state.initial_probs();
    let p = state.transition_matrix();
    let k = state.n();
    let chains = match mode {
        ReplicateMode::Shared => 1,
        ReplicateMode::Independent => n,
    };
    let mut paths = vec![vec![0usize; chains]; t_len];
    for c in 0..chains {
        let mut s = draw_categorical(&pi, rng).unwrap();
        paths[0][c] = s;
        for row in paths.iter_mut().skip(1) {
            s = draw_categorical(&p[s * k..(s + 1) * k], rng).unwrap();
            row[c] = s;
        }
    }
    let mut obs = Vec::with_capacity(t_len);
    let mut states = Vec::with_capacity(t_len);
    for path in &paths {
        let mut at_t = Vec::with_capacity(n);
        let mut st = Vec::with_capacity(n);
        for r in 0..n {
            let s = if chains == 1 { path[0] } else { path[r] };
            at_t.push(state.emissions[s].sample(rng));
            st.push(s);
        }
        obs.push(at_t);
        states.push(st);
    }
    let panel = ObservationPanel::new(state.family().panel_kind(), obs)?.with_mode(mode)?;
    Ok((panel, AllocationDraw { states }))
}

/// Sequential allocation draw: S_1 from pi_j f(O_1; theta_j), then S_t from
/// P[S_{t-1}, j] f(O_t; theta_j).
pub fn sample_allocations<R: Rng + ?Sized>(state: &HmmState, panel: &ObservationPanel, rng: &mut R) -> Result<AllocationDraw> {
    check_compat(state, panel)?;
    let layout = Layout::new(panel);
    let table = layout.table(&state.emissions);
    sample_allocations_cached(state, &layout, &table, panel, rng)
}

pub(crate) fn sample_allocations_cached<R: Rng + ?Sized>(
    state: &HmmState,
    layout: &Layout,
    table: &EmissionTable,
    panel: &ObservationPanel,
    rng: &mut R,
) -> Result<AllocationDraw> {
    let n = state.n();
    let pi = state.initial_probs();
    let p = state.transition_matrix();
    let mut states: Vec<Vec<usize>> = (0..panel.len_t()).map(|t| vec![0; panel.observations(t).len()]).collect();
    let mut w = vec![0.0; n];
    for (r, seq) in layout.sequences().iter().enumerate() {
        let mut prev = 0;
        for (t, &u) in seq.iter().enumerate() {
            let m = table.cols.iter().map(|c| c[u]).fold(f64::NEG_INFINITY, f64::max);
            for j in 0..n {
                let prior = if t == 0 { pi[j] } else { p[prev * n + j] };
                w[j] = if m.is_finite() { prior * (table.cols[j][u] - m).exp() } else { 0.0 };
            }
            let s = draw_categorical(&w, rng).ok_or(Error::ZeroWeights(t + 1))?;
            match panel.mode() {
                ReplicateMode::Shared => states[t].iter_mut().for_each(|v| *v = s),
                ReplicateMode::Independent => states[t][r] = s,
            }
            prev = s;
        }
    }
    Ok(AllocationDraw { states })
}

/// pi P^(t-1) for a 1-based time index.
pub fn marginal_state_probs(state: &HmmState, t: usize) -> Vec<f64> {
    let n = state.n();
    let p = state.transition_matrix();
    let mut v = state.initial_probs();
    for _ in 1..t.max(1) {
        let mut next = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                next[j] += v[i] * p[i * n + j];
            }
        }
        let s: f64 = next.iter().sum();
        v = next.into_iter().map(|x| x / s).collect();
    }
    v
}
