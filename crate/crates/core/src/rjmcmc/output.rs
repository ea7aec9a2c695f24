//! JSON-lines chain files, one sample per line, floats with 17 significant
//! digits.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MoveKind, MoveRecord};
use crate::emissions::EmissionParams;
use crate::error::{Error, Result};
use crate::hmm::HmmState;
use crate::numfmt::g17;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSample {
    pub iter: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub lambda: Vec<f64>,
    #[serde(rename = "Lambda")]
    pub big_lambda: Vec<Vec<f64>>,
    pub emissions: Vec<EmissionParams>,
    pub xi: f64,
    pub log_lik: f64,
    pub log_prior: f64,
    #[serde(rename = "move")]
    pub move_kind: MoveKind,
    pub accepted: bool,
    pub log_ratio: Option<f64>,
    pub strauss_term: f64,
}

impl ChainSample {
    pub fn from_state(iter: usize, state: &HmmState, xi: f64, log_lik: f64, log_prior: f64, rec: &MoveRecord) -> Self {
        let n = state.n();
        ChainSample {
            iter,
            n,
            lambda: state.initial_weights.clone(),
            big_lambda: state.transition_weights.chunks(n).map(|r| r.to_vec()).collect(),
            emissions: state.emissions.clone(),
            xi,
            log_lik,
            log_prior,
            move_kind: rec.kind,
            accepted: rec.accepted,
            log_ratio: rec.log_ratio.filter(|v| v.is_finite()),
            strauss_term: rec.strauss_term,
        }
    }

    pub fn state(&self) -> HmmState {
        HmmState::new(
            self.lambda.clone(),
            self.big_lambda.iter().flatten().cloned().collect(),
            self.emissions.clone(),
        )
    }

    pub fn log_posterior(&self) -> f64 {
        self.log_lik + self.log_prior
    }

    pub fn to_json_line(&self) -> String {
        let mut s = String::with_capacity(256);
        let list = |v: &[f64]| format!("[{}]", v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(","));
        write!(s, "{{\"iter\":{},\"N\":{},\"lambda\":{}", self.iter, self.n, list(&self.lambda)).unwrap();
        let rows: Vec<String> = self.big_lambda.iter().map(|r| list(r)).collect();
        write!(s, ",\"Lambda\":[{}]", rows.join(",")).unwrap();
        let ems: Vec<String> = self.emissions.iter().map(emission_json).collect();
        write!(s, ",\"emissions\":[{}]", ems.join(",")).unwrap();
        write!(
            s,
            ",\"xi\":{},\"log_lik\":{},\"log_prior\":{},\"move\":\"{}\",\"accepted\":{},\"log_ratio\":{},\"strauss_term\":{}}}",
            num(self.xi),
            num(self.log_lik),
            num(self.log_prior),
            move_name(self.move_kind),
            self.accepted,
            self.log_ratio.map(num).unwrap_or_else(|| "null".into()),
            num(self.strauss_term)
        )
        .unwrap();
        s
    }
}

/// JSON has no infinities; they only arise in `log_ratio`, which is
/// filtered beforehand.
fn num(x: f64) -> String {
    if x.is_finite() {
        g17(x)
    } else {
        "null".into()
    }
}

fn move_name(k: MoveKind) -> &'static str {
    match k {
        MoveKind::Split => "split",
        MoveKind::Combine => "combine",
        MoveKind::Birth => "birth",
        MoveKind::Death => "death",
        MoveKind::Skip => "skip",
    }
}

fn emission_json(e: &EmissionParams) -> String {
    match *e {
        EmissionParams::UnivariateNormal { mu, sigma } => {
            format!("{{\"family\":\"univariate_normal\",\"mu\":{},\"sigma\":{}}}", num(mu), num(sigma))
        }
        EmissionParams::BivariateNormal { mu, sigma } => format!(
            "{{\"family\":\"bivariate_normal\",\"mu\":[{},{}],\"sigma\":[[{},{}],[{},{}]]}}",
            num(mu[0]),
            num(mu[1]),
            num(sigma[0][0]),
            num(sigma[0][1]),
            num(sigma[1][0]),
            num(sigma[1][1])
        ),
        EmissionParams::StepAngle { z, mu, sigma, m, k } => format!(
            "{{\"family\":\"step_angle\",\"z\":{},\"mu\":{},\"sigma\":{},\"m\":{},\"k\":{}}}",
            num(z),
            num(mu),
            num(sigma),
            num(m),
            num(k)
        ),
    }
}

pub fn chain_to_string(samples: &[ChainSample]) -> String {
    let mut s = String::new();
    for x in samples {
        s.push_str(&x.to_json_line());
        s.push('\n');
    }
    s
}

pub fn write_chain(samples: &[ChainSample], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(chain_to_string(samples).as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_chain(path: &Path) -> Result<Vec<ChainSample>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: ChainSample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            row: i + 1,
            msg: e.to_string(),
        })?;
        out.push(s);
    }
    Ok(out)
}
