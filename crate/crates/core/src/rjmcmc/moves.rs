//! Deterministic split/combine maps on whole HMM states.
//!
//! Labels are kept: a split of state `j*` puts child 1 in slot `j*` and
//! inserts child 2 at position `pos` of the grown list. The combine move
//! picks its pair deterministically, so the split is only reversible when
//! that rule would select exactly the two children.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};

use crate::emissions::{combine_params, draw_split_aux, ln_split_aux_density, similarity_coords, split_with_aux};
use crate::emissions::EmissionAux;
use crate::hmm::HmmState;
use crate::special::{ln_beta_pdf, ln_gamma_pdf};

/// Row multipliers are Gamma(shape 1, rate 3).
const THETA_SHAPE: f64 = 1.0;
const THETA_RATE: f64 = 3.0;

/// Auxiliaries of the initial-weight and transition-weight blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightAux {
    pub rho: f64,
    /// One per remaining state, in label order with `j*` skipped.
    pub rho_cols: Vec<f64>,
    pub theta_rows: Vec<f64>,
    pub rho_star: f64,
    pub theta1: f64,
    pub theta2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAux {
    pub weights: WeightAux,
    pub emission: EmissionAux,
}

impl SplitAux {
    pub fn to_vec(&self) -> Vec<f64> {
        let w = &self.weights;
        let mut v = vec![w.rho];
        v.extend(&w.rho_cols);
        v.extend(&w.theta_rows);
        v.extend([w.rho_star, w.theta1, w.theta2]);
        v.extend(self.emission.to_vec());
        v
    }
}

fn beta22<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let d = Beta::new(2.0, 2.0).unwrap();
    loop {
        let v: f64 = d.sample(rng);
        if v > 0.0 && v < 1.0 {
            return v;
        }
    }
}

fn theta<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let d = Gamma::new(THETA_SHAPE, 1.0 / THETA_RATE).unwrap();
    loop {
        let v: f64 = d.sample(rng);
        if v > 0.0 {
            return v;
        }
    }
}

pub fn draw_state_split_aux<R: Rng + ?Sized>(state: &HmmState, j_star: usize, rng: &mut R) -> SplitAux {
    let n = state.n();
    let rho = beta22(rng);
    let rho_cols = (0..n - 1).map(|_| beta22(rng)).collect();
    let theta_rows = (0..n - 1).map(|_| theta(rng)).collect();
    let weights = WeightAux {
        rho,
        rho_cols,
        theta_rows,
        rho_star: beta22(rng),
        theta1: theta(rng),
        theta2: theta(rng),
    };
    SplitAux {
        weights,
        emission: draw_split_aux(&state.emissions[j_star], rng),
    }
}

pub fn ln_state_split_aux_density(state: &HmmState, j_star: usize, aux: &SplitAux) -> f64 {
    let w = &aux.weights;
    let lt = |x: f64| ln_gamma_pdf(x, THETA_SHAPE, THETA_RATE);
    let lb = |x: f64| ln_beta_pdf(x, 2.0, 2.0);
    lb(w.rho)
        + w.rho_cols.iter().map(|&x| lb(x)).sum::<f64>()
        + w.theta_rows.iter().map(|&x| lt(x)).sum::<f64>()
        + lb(w.rho_star)
        + lt(w.theta1)
        + lt(w.theta2)
        + ln_split_aux_density(&state.emissions[j_star], &aux.emission)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Old(usize),
    C1,
    C2,
}

fn slots(n: usize, j_star: usize, pos: usize) -> Vec<Slot> {
    let mut s: Vec<Slot> = (0..n).map(|k| if k == j_star { Slot::C1 } else { Slot::Old(k) }).collect();
    s.insert(pos, Slot::C2);
    s
}

/// Rank of old label `k` among the labels other than `j*`.
fn rank(k: usize, j_star: usize) -> usize {
    if k < j_star {
        k
    } else {
        k - 1
    }
}

/// Splits state `j_star`; returns the grown state and the log-Jacobian of
/// the full map. `None` if the emission children are invalid.
pub fn split_state(state: &HmmState, j_star: usize, pos: usize, aux: &SplitAux) -> Option<(HmmState, f64)> {
    let n = state.n();
    let w = &aux.weights;
    if w.rho_cols.len() != n - 1 || w.theta_rows.len() != n - 1 || pos > n || j_star >= n {
        return None;
    }
    let lam = state.initial_weights[j_star];
    let (c1, c2, log_j_em) = split_with_aux(&state.emissions[j_star], w.rho, &aux.emission)?;
    let big = state.lambda(j_star, j_star);
    let sl = slots(n, j_star, pos);
    let m = n + 1;
    let mut iw = Vec::with_capacity(m);
    let mut ems = Vec::with_capacity(m);
    for s in &sl {
        match *s {
            Slot::Old(k) => {
                iw.push(state.initial_weights[k]);
                ems.push(state.emissions[k].clone());
            }
            Slot::C1 => {
                iw.push(w.rho * lam);
                ems.push(c1.clone());
            }
            Slot::C2 => {
                iw.push((1.0 - w.rho) * lam);
                ems.push(c2.clone());
            }
        }
    }
    let mut tw = Vec::with_capacity(m * m);
    for a in &sl {
        for b in &sl {
            let v = match (*a, *b) {
                (Slot::Old(i), Slot::Old(j)) => state.lambda(i, j),
                (Slot::Old(i), Slot::C1) => w.rho_cols[rank(i, j_star)] * state.lambda(i, j_star),
                (Slot::Old(i), Slot::C2) => (1.0 - w.rho_cols[rank(i, j_star)]) * state.lambda(i, j_star),
                (Slot::C1, Slot::Old(j)) => state.lambda(j_star, j) * w.theta_rows[rank(j, j_star)],
                (Slot::C2, Slot::Old(j)) => state.lambda(j_star, j) / w.theta_rows[rank(j, j_star)],
                (Slot::C1, Slot::C1) => big * w.rho_star * w.theta1,
                (Slot::C1, Slot::C2) => big * (1.0 - w.rho_star) * w.theta2,
                (Slot::C2, Slot::C1) => big * w.rho_star / w.theta1,
                (Slot::C2, Slot::C2) => big * (1.0 - w.rho_star) / w.theta2,
            };
            tw.push(v);
        }
    }
    let mut log_j = lam.ln() + log_j_em;
    for k in (0..n).filter(|&k| k != j_star) {
        let r = rank(k, j_star);
        log_j += state.lambda(k, j_star).ln();
        log_j += (2.0 * state.lambda(j_star, k) / w.theta_rows[r]).ln();
    }
    log_j += (4.0 * w.rho_star * (1.0 - w.rho_star)).ln() + 3.0 * big.ln() - (w.theta1 * w.theta2).ln();
    Some((HmmState::new(iw, tw, ems), log_j))
}

#[derive(Debug, Clone)]
pub struct CombineResult {
    pub merged: HmmState,
    pub j_star: usize,
    pub pos: usize,
    pub aux: SplitAux,
}

/// Merges `a` (child 1) and `b` (child 2); exact inverse of `split_state`.
pub fn combine_state(state: &HmmState, a: usize, b: usize) -> Option<CombineResult> {
    let m = state.n();
    if a == b || a >= m || b >= m || m < 2 {
        return None;
    }
    let pos = b;
    let j_star = if a < b { a } else { a - 1 };
    // labels of the merged state: reduced index -> index in `state`
    let reduced: Vec<usize> = (0..m).filter(|&k| k != b).collect();
    let n = m - 1;
    let la = state.initial_weights[a];
    let lb = state.initial_weights[b];
    let lam = la + lb;
    let rho = la / lam;
    let (parent, emission) = combine_params(&state.emissions[a], &state.emissions[b], rho)?;
    let mut iw = Vec::with_capacity(n);
    let mut ems = Vec::with_capacity(n);
    for (r, &k) in reduced.iter().enumerate() {
        if r == j_star {
            iw.push(lam);
            ems.push(parent.clone());
        } else {
            iw.push(state.initial_weights[k]);
            ems.push(state.emissions[k].clone());
        }
    }
    let (l11, l12, l21, l22) = (state.lambda(a, a), state.lambda(a, b), state.lambda(b, a), state.lambda(b, b));
    let g1 = (l11 * l21).sqrt();
    let g2 = (l12 * l22).sqrt();
    let big = g1 + g2;
    let mut tw = Vec::with_capacity(n * n);
    let mut rho_cols = Vec::with_capacity(n - 1);
    let mut theta_rows = Vec::with_capacity(n - 1);
    for (ri, &i) in reduced.iter().enumerate() {
        for (rj, &j) in reduced.iter().enumerate() {
            let v = match (ri == j_star, rj == j_star) {
                (false, false) => state.lambda(i, j),
                (false, true) => state.lambda(i, a) + state.lambda(i, b),
                (true, false) => (state.lambda(a, j) * state.lambda(b, j)).sqrt(),
                (true, true) => big,
            };
            tw.push(v);
        }
    }
    for (r, &k) in reduced.iter().enumerate() {
        if r == j_star {
            continue;
        }
        rho_cols.push(state.lambda(k, a) / (state.lambda(k, a) + state.lambda(k, b)));
        theta_rows.push((state.lambda(a, k) / state.lambda(b, k)).sqrt());
    }
    let weights = WeightAux {
        rho,
        rho_cols,
        theta_rows,
        rho_star: g1 / big,
        theta1: (l11 / l21).sqrt(),
        theta2: (l12 / l22).sqrt(),
    };
    Some(CombineResult {
        merged: HmmState::new(iw, tw, ems),
        j_star,
        pos,
        aux: SplitAux { weights, emission },
    })
}

/// The combine pair: the two states with the smallest summed similarity
/// distance `d_i` to all others (ties by label).
pub fn combine_pair(state: &HmmState) -> (usize, usize) {
    let coords: Vec<Vec<f64>> = state.emissions.iter().map(similarity_coords).collect();
    let n = coords.len();
    let d: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| coords[i].iter().zip(&coords[j]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
                .sum()
        })
        .collect();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&x, &y| d[x].total_cmp(&d[y]).then(x.cmp(&y)));
    (idx[0].min(idx[1]), idx[0].max(idx[1]))
}

/// Role assignment for the selected pair: the first of (lo, hi), (hi, lo)
/// whose emissions lie in the split image.
pub fn combine_roles(state: &HmmState) -> Option<(usize, usize)> {
    let (x, y) = combine_pair(state);
    for (a, b) in [(x, y), (y, x)] {
        let w1 = state.initial_weights[a] / (state.initial_weights[a] + state.initial_weights[b]);
        if combine_params(&state.emissions[a], &state.emissions[b], w1).is_some() {
            return Some((a, b));
        }
    }
    None
}
