//! One test per acceptance criterion. Each prints `PASS`/`FAIL` lines with the
//! measured value next to its pinned tolerance.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use shmm::emissions::{EmissionAux, EmissionHyperPrior, EmissionParams, Family, ProposalScales};
use shmm::evaluation::{
    kl_divergence_curve, misclassification, run_study, sigma_for_overlap, OverlapLabel, StudyConfig, StudyScenario,
};
use shmm::hmm::{brute_force_log_likelihood, log_likelihood, simulate, AllocationDraw, HmmState};
use shmm::panel::{ObservationPanel, PanelKind, ReplicateMode};
use shmm::postprocess::{permute_sample, relabel_by_map, relabel_by_order};
use shmm::rjmcmc::moves::{draw_state_split_aux, split_state, SplitAux, WeightAux};
use shmm::rjmcmc::{run_chain, ChainSample, ModelPrior, MoveKind, RunConfig};
use shmm::strauss::{
    birth_death_sample, exchange_update_xi, select_threshold, BirthDeathSettings, KdeSettings, Region, StraussConfig,
    XiPrior,
};

fn report(criterion: u32, label: &str, pass: bool, detail: String) -> bool {
    // straight to the handle so the line survives libtest output capture
    let mut out = std::io::stdout().lock();
    writeln!(out, "{} [{criterion}] {label}: {detail}", if pass { "PASS" } else { "FAIL" }).unwrap();
    pass
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_emission(fam: Family, r: &mut ChaCha8Rng) -> EmissionParams {
    match fam {
        Family::UnivariateNormal => EmissionParams::UnivariateNormal {
            mu: r.random_range(-10.0..10.0),
            sigma: r.random_range(0.3..3.0),
        },
        Family::StepAngle => EmissionParams::StepAngle {
            z: r.random_range(0.01..0.4),
            mu: r.random_range(10.0..400.0),
            sigma: r.random_range(5.0..200.0),
            m: r.random_range(-1.0..1.0),
            k: r.random_range(0.5..2.0),
        },
        Family::BivariateNormal => {
            let a: f64 = r.random_range(0.3..2.0);
            let c: f64 = r.random_range(0.3..2.0);
            let rho: f64 = r.random_range(-0.7..0.7);
            let off = rho * (a * c).sqrt();
            EmissionParams::BivariateNormal {
                mu: [r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)],
                sigma: [[a, off], [off, c]],
            }
        }
    }
}

fn random_state(fam: Family, n: usize, r: &mut ChaCha8Rng) -> HmmState {
    HmmState::new(
        (0..n).map(|_| r.random_range(0.2..3.0)).collect(),
        (0..n * n).map(|_| r.random_range(0.2..3.0)).collect(),
        (0..n).map(|_| random_emission(fam, r)).collect(),
    )
}

const FAMILIES: [Family; 3] = [Family::UnivariateNormal, Family::StepAngle, Family::BivariateNormal];

#[test]
fn criterion_01_likelihood_oracle() {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let fam = FAMILIES[i % 3];
        let n = r.random_range(1..=3);
        let t_len = r.random_range(1..=6);
        let reps = if fam == Family::StepAngle { 1 } else { r.random_range(1..=3) };
        let mode = if r.random::<bool>() {
            ReplicateMode::Shared
        } else {
            ReplicateMode::Independent
        };
        let truth = random_state(fam, r.random_range(1..=3), &mut r);
        let (panel, _) = simulate(&truth, t_len, reps, mode, &mut r).unwrap();
        let model = random_state(fam, n, &mut r);
        let fast = log_likelihood(&model, &panel).unwrap();
        let slow = brute_force_log_likelihood(&model, &panel).unwrap();
        worst = worst.max((fast - slow).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let a = report(1, "forward vs enumeration, 200 instances", worst <= 1e-10, format!("max |diff| {worst:.3e} (tol 1e-10)"));
    let b = report(1, "runtime", secs < 10.0, format!("{secs:.2} s (limit 10 s)"));
    assert!(a && b);
}

fn ks_one_sample(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Pearson statistic with adjacent cells pooled until each expects at least 5.
fn chi_square_p(observed: &[f64], expected: &[f64]) -> f64 {
    let (mut cells, mut o, mut e) = (Vec::new(), 0.0, 0.0);
    for (a, b) in observed.iter().zip(expected) {
        o += a;
        e += b;
        if e >= 5.0 {
            cells.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => cells.push((o, e)),
        }
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = (cells.len() - 1) as f64;
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}

fn geweke_config(d: f64, seed: u64) -> RunConfig {
    let region = Region::new(vec![0.0], vec![500.0]).unwrap();
    RunConfig {
        iterations: 200_000,
        burn_in: 1_000,
        thin: 20,
        seed,
        initial_n: 2,
        scales: ProposalScales::gps(),
        birth_death: BirthDeathSettings {
            iterations: 200,
            ..Default::default()
        },
        prior: ModelPrior {
            n_max: 6,
            hyper: EmissionHyperPrior::StepAngle {
                z_a: 1.0,
                z_b: 100.0,
                sigma_lo: 5.0,
                sigma_hi: 200.0,
                k_lo: 0.5,
                k_hi: 2.0,
            },
            log_a: 0.0,
            d,
            xi_prior: XiPrior::per_volume(&region, 1.0, 6.0).unwrap(),
            region,
        },
    }
}

#[test]
fn criterion_02_prior_recovery() {
    let start = Instant::now();
    let panel = ObservationPanel::empty(PanelKind::StepAngle);
    let mut all = true;
    for (label, d, seed) in [("independent", 0.0, 7), ("repulsive a=1", 98.0, 8)] {
        let cfg = geweke_config(d, seed);
        let chain = run_chain(&panel, &cfg).unwrap();
        let s = &chain.samples;
        let n_max = cfg.prior.n_max;
        let mut counts = vec![0.0; n_max];
        for x in s {
            counts[x.n - 1] += 1.0;
        }
        let expected = vec![s.len() as f64 / n_max as f64; n_max];
        let p = chi_square_p(&counts, &expected);
        all &= report(2, &format!("{label}: N uniform on 1..{n_max}"), p > 0.01, format!("chi-square p {p:.4} (need > 0.01), {} draws", s.len()));
        let mut lam: Vec<f64> = s.iter().map(|x| x.lambda[0]).collect();
        let ks = ks_one_sample(&mut lam, |x| 1.0 - (-x).exp());
        all &= report(2, &format!("{label}: lambda_1 ~ Gamma(1,1)"), ks < 0.05, format!("KS {ks:.4} (need < 0.05)"));
        let mut big: Vec<f64> = s.iter().map(|x| x.big_lambda[0][0]).collect();
        let ks = ks_one_sample(&mut big, |x| 1.0 - (-x).exp());
        all &= report(2, &format!("{label}: Lambda_11 ~ Gamma(1,1)"), ks < 0.05, format!("KS {ks:.4} (need < 0.05)"));
        let mut z: Vec<f64> = s
            .iter()
            .map(|x| match x.emissions[0] {
                EmissionParams::StepAngle { z, .. } => z,
                _ => unreachable!(),
            })
            .collect();
        let ks = ks_one_sample(&mut z, |v| 1.0 - (1.0 - v).powi(100));
        all &= report(2, &format!("{label}: z_1 ~ Beta(1,100)"), ks < 0.05, format!("KS {ks:.4} (need < 0.05)"));
    }
    let secs = start.elapsed().as_secs_f64();
    all &= report(2, "runtime", secs < 120.0, format!("{secs:.1} s (limit 120 s)"));
    assert!(all);
}

fn flat(s: &HmmState) -> Vec<f64> {
    let mut v = s.initial_weights.clone();
    v.extend(&s.transition_weights);
    for e in &s.emissions {
        v.extend(e.to_vec());
    }
    v
}

fn unflat(fam: Family, n: usize, v: &[f64]) -> HmmState {
    let el = 5;
    let base = n + n * n;
    HmmState::new(
        v[..n].to_vec(),
        v[n..base].to_vec(),
        (0..n).map(|k| EmissionParams::from_vec(fam, &v[base + k * el..base + (k + 1) * el])).collect(),
    )
}

fn aux_from_vec(fam: Family, n: usize, v: &[f64]) -> SplitAux {
    let m = n - 1;
    SplitAux {
        weights: WeightAux {
            rho: v[0],
            rho_cols: v[1..1 + m].to_vec(),
            theta_rows: v[1 + m..1 + 2 * m].to_vec(),
            rho_star: v[1 + 2 * m],
            theta1: v[2 + 2 * m],
            theta2: v[3 + 2 * m],
        },
        emission: EmissionAux::from_vec(fam, &v[4 + 2 * m..]),
    }
}

/// Worst relative error of exp(analytic - finite-difference) log|J| over `cases` splits.
fn jacobian_error(fam: Family, seed: u64, cases: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < cases {
        let n = r.random_range(1..4);
        let s = random_state(fam, n, &mut r);
        let j = r.random_range(0..n);
        let pos = r.random_range(0..=n);
        let aux = draw_state_split_aux(&s, j, &mut r);
        let Some((_, log_j)) = split_state(&s, j, pos, &aux) else { continue };
        if aux.to_vec().iter().any(|v| v.abs() < 1e-3 || (*v > 1.0 - 1e-3 && *v < 1.0)) {
            continue;
        }
        if let EmissionAux::BivariateNormal { beta1, beta2, omega, .. } = aux.emission {
            if (beta1 - beta2).abs() < 0.05 || omega < 0.02 || omega > std::f64::consts::FRAC_PI_2 - 0.02 {
                continue;
            }
        }
        done += 1;
        let ns = flat(&s).len();
        let x: Vec<f64> = flat(&s).into_iter().chain(aux.to_vec()).collect();
        let f = |x: &[f64]| flat(&split_state(&unflat(fam, n, &x[..ns]), j, pos, &aux_from_vec(fam, n, &x[ns..])).unwrap().0);
        let dim = x.len();
        let mut jac = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        for c in 0..dim {
            let h = 1e-6 * x[c].abs().max(1e-2);
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[c] += h;
            xm[c] -= h;
            let (fp, fm) = (f(&xp), f(&xm));
            for row in 0..dim {
                jac[(row, c)] = (fp[row] - fm[row]) / (2.0 * h);
            }
        }
        let fd = jac.determinant().abs().ln();
        worst = worst.max(((log_j - fd).exp() - 1.0).abs());
    }
    worst
}

#[test]
fn criterion_03_jacobians() {
    let gps = jacobian_error(Family::StepAngle, 31, 100);
    let ac = jacobian_error(Family::BivariateNormal, 32, 100);
    let a = report(3, "step/angle split Jacobian, 100 states", gps < 1e-4, format!("max rel err {gps:.2e} (tol 1e-4)"));
    let b = report(3, "bivariate split Jacobian, 100 states", ac < 1e-4, format!("max rel err {ac:.2e} (tol 1e-4)"));
    assert!(a && b);
}

fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

#[test]
fn criterion_04_strauss_machinery() {
    let region = Region::new(vec![0.0, 0.0], vec![4.0, 2.5]).unwrap();
    let mean = 6.0;
    let cfg = StraussConfig {
        xi: mean / region.volume(),
        log_a: 0.0,
        d: 0.7,
        region: region.clone(),
    };
    let settings = BirthDeathSettings {
        iterations: 400,
        ..Default::default()
    };
    let start = Instant::now();
    let mut r = rng(41);
    let kmax = 40;
    let mut counts = vec![0.0; kmax + 1];
    let runs = 2000;
    for _ in 0..runs {
        let k = birth_death_sample(&cfg, &[], &settings, &mut r).len().min(kmax);
        counts[k] += 1.0;
    }
    let expected: Vec<f64> = (0..=kmax)
        .map(|k| runs as f64 * (k as f64 * mean.ln() - mean - ln_factorial(k)).exp())
        .collect();
    let p = chi_square_p(&counts, &expected);
    let secs = start.elapsed().as_secs_f64();
    let a = report(4, "birth-death cardinality ~ Poisson(xi|R|), 2000 runs", p > 0.01, format!("chi-square p {p:.4} (need > 0.01)"));
    let a2 = report(4, "birth-death runtime", secs < 60.0, format!("{secs:.2} s (limit 60 s)"));

    // exchange vs direct MH on xi | pts with a = 1
    let start = Instant::now();
    let pts: Vec<Vec<f64>> = (0..5).map(|_| region.sample_uniform(&mut r)).collect();
    let prior = XiPrior::per_volume(&region, 0.5, 20.0).unwrap();
    let bd = BirthDeathSettings::default();
    let tau = 0.5;
    let (iters, thin) = (60_000, 10);
    let mut xi = prior.midpoint();
    let mut ex = Vec::new();
    for it in 0..iters {
        xi = exchange_update_xi(xi, &pts, 0.0, cfg.d, &region, &prior, tau, &bd, &mut r).xi;
        if it % thin == 0 {
            ex.push(xi);
        }
    }
    let vol = region.volume();
    let n = pts.len() as f64;
    let log_target = |x: f64| n * x.ln() - x * vol;
    let mut xi = prior.midpoint();
    let mut direct = Vec::new();
    for it in 0..iters {
        let step: f64 = StandardNormal.sample(&mut r);
        let prop = xi * (tau * step).exp();
        if prior.contains(prop) {
            let lr = log_target(prop) - log_target(xi) + prop.ln() - xi.ln();
            if lr >= 0.0 || r.random::<f64>().ln() < lr {
                xi = prop;
            }
        }
        if it % thin == 0 {
            direct.push(xi);
        }
    }
    let d = ks_two_sample(&mut ex, &mut direct);
    let secs = start.elapsed().as_secs_f64();
    let b = report(4, "exchange vs direct MH on xi", d < 0.05, format!("two-sample KS {d:.4} (need < 0.05), {} draws each", ex.len()));
    let b2 = report(4, "exchange runtime", secs < 60.0, format!("{secs:.2} s (limit 60 s)"));
    assert!(a && a2 && b && b2);
}

fn sample_mixture(means: &[f64], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let m = means[r.random_range(0..means.len())];
            let z: f64 = StandardNormal.sample(&mut r);
            vec![m + z]
        })
        .collect()
}

#[test]
fn criterion_05_threshold_selection() {
    let two = select_threshold(&sample_mixture(&[0.0, 4.0], 2000, 51), &KdeSettings::default()).unwrap();
    let a = report(5, "two-component threshold", (two.d - 2.83).abs() <= 0.15, format!("d {:.4} (target 2.83 +- 0.15)", two.d));
    let three = select_threshold(&sample_mixture(&[-5.0, 0.0, 5.0], 2000, 52), &KdeSettings::default()).unwrap();
    let smallest = three.minima.iter().cloned().fold(f64::INFINITY, f64::min);
    let has_larger = three.minima.iter().any(|m| *m > 6.0);
    let b = report(
        5,
        "three-component threshold, smaller minimum chosen",
        (three.d - 2.73).abs() <= 0.15 && three.d == smallest && has_larger,
        format!("d {:.4} (target 2.73 +- 0.15), minima {:?}", three.d, three.minima),
    );
    assert!(a && b);
}

#[test]
fn criterion_06_overlap_calibration() {
    let mut all = true;
    for (label, target) in [
        (OverlapLabel::P3, 1.1408),
        (OverlapLabel::P9, 1.4726),
        (OverlapLabel::P33, 2.5709),
        (OverlapLabel::P55, 4.2319),
    ] {
        let s = sigma_for_overlap(label.target(), 5.0).unwrap();
        let rel = (s - target).abs() / target;
        all &= report(6, &format!("sigma for {} overlap", label.as_str()), rel <= 0.005, format!("sigma {s:.4} vs {target} (rel {:.2}%, tol 0.5%)", 100.0 * rel));
    }
    assert!(all);
}

const PAPER_KL: [(OverlapLabel, f64); 4] = [
    (OverlapLabel::P3, 0.1986),
    (OverlapLabel::P9, 0.1167),
    (OverlapLabel::P33, 0.0559),
    (OverlapLabel::P55, 0.0291),
];

#[test]
fn criterion_07_desk_study() {
    let start = Instant::now();
    let mut scenarios: Vec<StudyScenario> = PAPER_KL.iter().map(|(l, _)| StudyScenario::preset(*l, 50, 5, 10)).collect();
    scenarios.push(StudyScenario::preset(OverlapLabel::P3, 100, 10, 10));
    let cfg = StudyConfig {
        seed: 2024,
        scenarios,
        ..Default::default()
    };
    let out = run_study(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let row = |label: OverlapLabel, n: usize, prior: &str| {
        out.rows
            .iter()
            .find(|r| r.overlap_label == label.as_str() && r.n == n && r.prior.name() == prior)
            .unwrap()
    };
    let mut all = true;
    for prior in ["independent", "repulsive"] {
        let m = row(OverlapLabel::P55, 50, prior).modal_n;
        all &= report(7, &format!("55% n=50 T=5 {prior} modal N"), (1..=2).contains(&m), format!("{m} (need 1 or 2)"));
    }
    let m = row(OverlapLabel::P3, 100, "repulsive").modal_n;
    all &= report(7, "3% n=100 T=10 repulsive modal N", (4..=5).contains(&m), format!("{m} (need 4 or 5)"));
    let mi = row(OverlapLabel::P3, 100, "independent").modal_n;
    writeln!(std::io::stdout().lock(), "INFO [7] 3% n=100 T=10 independent modal N: {mi}").unwrap();
    for (label, paper) in PAPER_KL {
        let kl = row(label, 50, "repulsive").kl_mean;
        let ok = kl >= 0.3 * paper && kl <= 3.0 * paper;
        all &= report(7, &format!("{} n=50 T=5 repulsive mean KL", label.as_str()), ok, format!("{kl:.4} vs reference {paper} (band [0.3x, 3x])"));
    }
    all &= report(7, "runtime", secs < 3600.0, format!("{secs:.0} s (limit 3600 s)"));
    assert!(all);
}

fn toy_chain() -> (ObservationPanel, Vec<ChainSample>) {
    let mut r = rng(81);
    let truth = HmmState::new(
        vec![1.0; 3],
        vec![1.0; 9],
        [-5.0, 0.0, 5.0].iter().map(|&mu| EmissionParams::UnivariateNormal { mu, sigma: 1.0 }).collect(),
    );
    let (panel, _) = simulate(&truth, 8, 6, ReplicateMode::Shared, &mut r).unwrap();
    let rec = shmm::rjmcmc::MoveRecord {
        kind: MoveKind::Split,
        accepted: false,
        log_ratio: None,
        strauss_term: 0.0,
    };
    let samples = (0..1000)
        .map(|i| {
            let mut s = truth.clone();
            for w in s.initial_weights.iter_mut().chain(s.transition_weights.iter_mut()) {
                *w *= r.random_range(0.5..1.5);
            }
            for e in s.emissions.iter_mut() {
                if let EmissionParams::UnivariateNormal { mu, sigma } = e {
                    *mu += 0.3 * r.sample::<f64, _>(StandardNormal);
                    *sigma *= r.random_range(0.8..1.2);
                }
            }
            let ll = log_likelihood(&s, &panel).unwrap();
            ChainSample::from_state(i + 1, &s, 0.1, ll, if i == 0 { 0.0 } else { -1e6 }, &rec)
        })
        .collect();
    (panel, samples)
}

#[test]
fn criterion_08_relabeling() {
    let (panel, base) = toy_chain();
    let mut r = rng(82);
    let perms = [[0, 1, 2], [1, 2, 0], [2, 0, 1], [0, 2, 1], [2, 1, 0], [1, 0, 2]];
    // sample 0 is the MAP and keeps its labels
    let scrambled: Vec<ChainSample> = base
        .iter()
        .enumerate()
        .map(|(i, s)| if i == 0 { s.clone() } else { permute_sample(s, &perms[r.random_range(0..6)]) })
        .collect();
    let ll_err = |out: &[ChainSample]| {
        out.iter()
            .map(|s| {
                let ll = log_likelihood(&s.state(), &panel).unwrap();
                (ll - s.log_lik).abs() / s.log_lik.abs().max(1.0)
            })
            .fold(0.0, f64::max)
    };
    let ord = relabel_by_order(&scrambled).unwrap();
    let map = relabel_by_map(&scrambled).unwrap();
    let e1 = ll_err(&ord.samples);
    let e2 = ll_err(&map.samples);
    let mut all = report(8, "order relabeling keeps log-likelihood", e1 <= 1e-12 && ord.samples.len() == 1000, format!("max rel diff {e1:.2e} (tol 1e-12)"));
    all &= report(8, "MAP relabeling keeps log-likelihood", e2 <= 1e-12 && map.samples.len() == 1000, format!("max rel diff {e2:.2e} (tol 1e-12)"));
    let sorted = ord
        .samples
        .iter()
        .filter(|s| s.emissions.windows(2).all(|w| w[0].repulsion_point()[0] <= w[1].repulsion_point()[0]))
        .count();
    all &= report(8, "order output sorted", sorted == 1000, format!("{sorted}/1000 samples sorted (need all)"));
    let recovered = map.samples.iter().zip(&base).filter(|(a, b)| a.emissions == b.emissions && a.lambda == b.lambda && a.big_lambda == b.big_lambda).count();
    all &= report(8, "MAP recovers the label permutation", recovered == 1000, format!("{recovered}/1000 exact (need all)"));
    assert!(all);
}

#[test]
fn criterion_09_metric_oracles() {
    let grid: Vec<f64> = (0..=20_000).map(|i| -20.0 + 40.0 * i as f64 / 20_000.0).collect();
    let pdf = |m: f64, s: f64| move |x: f64| (-(x - m) * (x - m) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
    let k1 = kl_divergence_curve(pdf(0.0, 1.0), pdf(1.0, 1.0), &grid);
    let k2 = kl_divergence_curve(pdf(0.0, 1.0), pdf(0.0, 2.0), &grid);
    let target2 = 2f64.ln() - 0.375;
    let mut all = report(9, "KL N(0,1)||N(1,1)", (k1 - 0.5).abs() < 1e-4, format!("{k1:.6} vs 0.5 (tol 1e-4)"));
    all &= report(9, "KL N(0,1)||N(0,4)", (k2 - target2).abs() < 1e-4, format!("{k2:.6} vs {target2:.6} (tol 1e-4)"));

    // uniform two-group truth against a fit whose two states are identical
    let (t_len, n) = (10, 20);
    let mut r = rng(91);
    let reps: Vec<Vec<Vec<f64>>> = (0..t_len).map(|_| (0..n).map(|_| vec![r.random_range(-1.0..1.0)]).collect()).collect();
    let panel = ObservationPanel::new(PanelKind::Scalar, reps).unwrap();
    let fit = HmmState::new(vec![1.0; 2], vec![1.0; 4], vec![EmissionParams::UnivariateNormal { mu: 0.0, sigma: 1.0 }; 2]);
    let rec = shmm::rjmcmc::MoveRecord {
        kind: MoveKind::Birth,
        accepted: false,
        log_ratio: None,
        strauss_term: 0.0,
    };
    let samples = vec![ChainSample::from_state(1, &fit, 0.1, 0.0, 0.0, &rec)];
    let m = 400;
    let vals: Vec<f64> = (0..m)
        .map(|_| {
            let truth = AllocationDraw {
                states: (0..t_len).map(|_| (0..n).map(|_| r.random_range(0..2)).collect()).collect(),
            };
            misclassification(&truth, &samples, &panel, &mut r).unwrap()
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / m as f64;
    let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64).sqrt();
    let se = sd / (m as f64).sqrt();
    all &= report(9, "uniform two-group misclassification", (mean - 0.5).abs() <= 3.0 * se, format!("{mean:.4} vs 0.5 (3 SE = {:.4})", 3.0 * se));
    assert!(all);
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run_twice(label: &str, dir: &Path, args: &[&str], out: &Path, files: &[&str]) -> bool {
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let o = Command::new(env!("CARGO_BIN_EXE_shmm")).args(args).env_remove("SHMM_SEED").current_dir(dir).output().unwrap();
        if !o.status.success() {
            return report(10, label, false, format!("exit failure: {}", String::from_utf8_lossy(&o.stderr)));
        }
        snapshots.push((o.stdout, files.iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect::<Vec<_>>()));
    }
    let same = snapshots[0] == snapshots[1];
    report(10, label, same, format!("{} files byte-identical: {same}", files.len()))
}

#[test]
fn criterion_10_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("fit.toml"),
        format!(
            "seed = 11\n[data]\npanel = \"{}\"\n[output]\ndir = \"fit\"\n[run]\niterations = 300\nburn_in = 100\nthin = 5\n",
            fixture("scalar.csv").display()
        ),
    )
    .unwrap();
    std::fs::write(dir.join("sim.toml"), "seed = 12\n[scenario]\noverlap = \"9%\"\nn = 30\nT = 5\n[output]\ndir = \"sim\"\n").unwrap();
    std::fs::write(
        dir.join("study.toml"),
        "seed = 13\niterations = 300\nburn_in = 100\nthin = 10\n[grid]\noverlaps = [\"33%\"]\nn = [12]\nT = [3]\nreplications = 2\n[output]\ndir = \"study\"\n",
    )
    .unwrap();
    let started = Instant::now();
    let mut all = run_twice(
        "fit",
        dir,
        &["fit", "--config", "fit.toml"],
        &dir.join("fit"),
        &["chain.jsonl", "n_posterior.csv", "density_t1.csv", "allocation.csv"],
    );
    all &= run_twice("simulate", dir, &["simulate", "--config", "sim.toml"], &dir.join("sim"), &["panel.csv", "truth_allocation.csv", "truth.json"]);
    all &= run_twice("study", dir, &["study", "--config", "study.toml"], &dir.join("study"), &["study_results.csv", "study_replications.csv"]);
    let panel = fixture("scalar.csv");
    all &= run_twice(
        "threshold",
        dir,
        &["threshold", "--panel", panel.to_str().unwrap(), "--out", "thr"],
        &dir.join("thr"),
        &["distance_kde.csv"],
    );
    for method in ["order", "map"] {
        let out = format!("pp_{method}");
        all &= run_twice(
            &format!("postprocess {method}"),
            dir,
            &["postprocess", "--chain", "fit/chain.jsonl", "--method", method, "--panel", panel.to_str().unwrap(), "--out", &out],
            &dir.join(&out),
            &["relabeled_chain.jsonl", "n_posterior.csv", "density_t1.csv", "allocation.csv"],
        );
    }
    assert!(started.elapsed() < Duration::from_secs(600));
    assert!(all);
}
