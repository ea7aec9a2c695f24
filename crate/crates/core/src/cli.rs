//! Config files, run metadata and the subcommand drivers behind the `shmm`
//! binary.
//!
//! Relative paths inside a config file are resolved against the directory
//! holding that file. Every command stages its outputs in a hidden
//! directory and moves them into place only once all of them are written.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::emissions::{EmissionParams, Family, ProposalScales};
use crate::error::{Error, Result};
use crate::evaluation::{run_study, replications_csv, study_results_csv, OverlapLabel, StudyConfig, StudyScenario, KL_GRID_POINTS};
use crate::hmm::HmmState;
use crate::panel::{load_panel_with, panel_to_csv, ObservationPanel, PanelKind, ReplicateMode};
use crate::pca::{load_features, pca_fit_project};
use crate::postprocess::{
    allocation_csv, allocation_probabilities, averaged_density, default_grid, density_csv, modal_n, n_posterior_csv,
    posterior_n_distribution, relabel_by_map, relabel_by_order, DensityWeights, RelabelMethod, RelabeledChain,
};
use crate::rjmcmc::output::chain_to_string;
use crate::rjmcmc::{read_chain, run_chain, ChainSample, ModelPrior, RunConfig};
use crate::setup::{repulsion_data, PriorKind, PriorNotes, PriorSpec};
use crate::strauss::{select_threshold, BirthDeathSettings, KdeSettings};
use crate::numfmt::g17;

pub const SEED_ENV: &str = "SHMM_SEED";

/// Seed from `SHMM_SEED` when set, else the configured one.
pub fn effective_seed(configured: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::config(SEED_ENV, format!("`{s}` is not an unsigned integer"))),
        Err(_) => Ok(configured),
    }
}

/// Absolute, so configs stored in metadata stay valid from any directory.
fn resolve(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::path::absolute(&joined).unwrap_or(joined)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a TOML config, or the `config` member of a metadata JSON file
/// written by an earlier run.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    if path.extension().map(|e| e == "json").unwrap_or(false) {
        let v: serde_json::Value = serde_json::from_str(&text)?;
        let c = v.get("config").cloned().ok_or_else(|| Error::config("config", "metadata file has no `config` member"))?;
        return Ok(serde_json::from_value(c)?);
    }
    toml::from_str(&text).map_err(|e| Error::config("config", e.to_string()))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub panel: Option<PathBuf>,
    /// `t,f1,..,fK` features projected on two principal components.
    pub features: Option<PathBuf>,
    pub kind: Option<PanelKind>,
    pub replicate_mode: ReplicateMode,
    pub wrap_angles: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            panel: None,
            features: None,
            kind: None,
            replicate_mode: ReplicateMode::Shared,
            wrap_angles: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub initial_n: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            iterations: 10_000,
            burn_in: 5_000,
            thin: 10,
            initial_n: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessSection {
    pub method: RelabelMethod,
    pub density_points: usize,
    /// 1-based time indices for which density files are written.
    pub density_times: Vec<usize>,
    pub density_weights: DensityWeights,
    pub allocation_draws: usize,
}

impl Default for PostprocessSection {
    fn default() -> Self {
        PostprocessSection {
            method: RelabelMethod::Order,
            density_points: 256,
            density_times: vec![1],
            density_weights: DensityWeights::Marginal,
            allocation_draws: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSection,
    pub output: OutputSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub prior: PriorSpec,
    /// Defaults depend on the emission family.
    #[serde(default)]
    pub scales: Option<ProposalScales>,
    #[serde(default)]
    pub birth_death: BirthDeathSettings,
    #[serde(default)]
    pub postprocess: PostprocessSection,
}

impl FitConfig {
    /// Makes every path absolute relative to `base`.
    pub fn rebase(mut self, base: &Path) -> Self {
        self.data.panel = self.data.panel.map(|p| resolve(base, &p));
        self.data.features = self.data.features.map(|p| resolve(base, &p));
        self.output.dir = resolve(base, &self.output.dir);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub overlap: String,
    pub n: usize,
    #[serde(rename = "T")]
    pub t_len: usize,
    /// Overrides the overlap's standard deviation.
    #[serde(default)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub seed: u64,
    pub scenario: ScenarioSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub overlaps: Vec<String>,
    pub n: Vec<usize>,
    #[serde(rename = "T")]
    pub t_len: Vec<usize>,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyFileConfig {
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub initial_n: usize,
    pub priors: Vec<PriorKind>,
    pub threads: usize,
    pub kl_grid_points: usize,
    pub prior: PriorSpec,
    pub scales: ProposalScales,
    pub birth_death: BirthDeathSettings,
    pub grid: Option<GridSection>,
    pub scenarios: Vec<StudyScenario>,
    pub output: OutputSection,
}

impl Default for StudyFileConfig {
    fn default() -> Self {
        let s = StudyConfig::default();
        StudyFileConfig {
            seed: s.seed,
            iterations: s.iterations,
            burn_in: s.burn_in,
            thin: s.thin,
            initial_n: s.initial_n,
            priors: s.priors,
            threads: s.threads,
            kl_grid_points: KL_GRID_POINTS,
            prior: s.prior,
            scales: s.scales,
            birth_death: s.birth_death,
            grid: None,
            scenarios: Vec::new(),
            output: OutputSection { dir: PathBuf::from("study") },
        }
    }
}

fn parse_label(s: &str, field: &str) -> Result<OverlapLabel> {
    OverlapLabel::parse(s).ok_or_else(|| Error::config(field, format!("unknown overlap `{s}`; expected 3%, 9%, 33% or 55%")))
}

impl StudyFileConfig {
    pub fn to_study(&self, seed: u64) -> Result<StudyConfig> {
        let mut scenarios = self.scenarios.clone();
        if let Some(g) = &self.grid {
            for o in &g.overlaps {
                let label = parse_label(o, "grid.overlaps")?;
                for &n in &g.n {
                    for &t in &g.t_len {
                        scenarios.push(StudyScenario::preset(label, n, t, g.replications));
                    }
                }
            }
        }
        let cfg = StudyConfig {
            seed,
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            initial_n: self.initial_n,
            priors: self.priors.clone(),
            prior: self.prior.clone(),
            scales: self.scales.clone(),
            birth_death: self.birth_death,
            kl_grid_points: self.kl_grid_points,
            threads: self.threads,
            scenarios,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Collects output files in a hidden staging directory; `commit` moves them
/// into the target directory. Dropping without commit removes the stage.
pub struct StagedOutput {
    dir: PathBuf,
    stage: PathBuf,
    files: Vec<String>,
    committed: bool,
}

impl StagedOutput {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stage = dir.join(format!(".staging-{}", std::process::id()));
        if stage.exists() {
            std::fs::remove_dir_all(&stage).map_err(|e| Error::io(&stage, e))?;
        }
        std::fs::create_dir(&stage).map_err(|e| Error::io(&stage, e))?;
        Ok(StagedOutput {
            dir: dir.to_path_buf(),
            stage,
            files: Vec::new(),
            committed: false,
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.stage.join(name);
        std::fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn commit(mut self) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for f in &self.files {
            let to = self.dir.join(f);
            std::fs::rename(self.stage.join(f), &to).map_err(|e| Error::io(&to, e))?;
            out.push(to);
        }
        std::fs::remove_dir_all(&self.stage).map_err(|e| Error::io(&self.stage, e))?;
        self.committed = true;
        Ok(out)
    }
}

impl Drop for StagedOutput {
    fn drop(&mut self) {
        if !self.committed {
            let _ = std::fs::remove_dir_all(&self.stage);
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata<C: Serialize> {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: C,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, serde_json::Value>,
    pub outputs: Vec<String>,
}

pub fn config_hash<C: Serialize>(cfg: &C) -> Result<String> {
    let json = serde_json::to_string(cfg)?;
    Ok(hex::encode(Sha256::digest(json.as_bytes())))
}

fn metadata_json<C: Serialize>(command: &str, seed: u64, cfg: &C, details: BTreeMap<String, serde_json::Value>, outputs: &[String]) -> Result<String> {
    let mut outputs = outputs.to_vec();
    outputs.push("metadata.json".into());
    let m = Metadata {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config_hash: config_hash(cfg)?,
        config: cfg,
        details,
        outputs,
    };
    let mut s = serde_json::to_string_pretty(&m)?;
    s.push('\n');
    Ok(s)
}

/// Kind from the CSV header when not given.
pub fn detect_kind(path: &Path) -> Result<PanelKind> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{other:?}")),
    })?;
    let h = r.headers()?.clone();
    let cols: Vec<&str> = h.iter().collect();
    PanelKind::infer(&cols).ok_or_else(|| Error::MissingColumn("value, x1/x2 or step/angle".into()))
}

pub fn load_data(data: &DataSection) -> Result<ObservationPanel> {
    let panel = match (&data.panel, &data.features) {
        (Some(p), None) => {
            let kind = match data.kind {
                Some(k) => k,
                None => detect_kind(p)?,
            };
            load_panel_with(p, kind, data.wrap_angles)?
        }
        (None, Some(f)) => pca_fit_project(&load_features(f)?)?.1,
        _ => return Err(Error::config("data", "exactly one of `panel` and `features` must be set")),
    };
    panel.with_mode(data.replicate_mode)
}

pub fn default_scales(family: Family) -> ProposalScales {
    match family {
        Family::StepAngle => ProposalScales::gps(),
        Family::BivariateNormal => ProposalScales::acoustic(),
        Family::UnivariateNormal => ProposalScales::simulation(),
    }
}

/// Relabels, keeping the samples at the modal N.
pub fn relabel(samples: &[ChainSample], method: RelabelMethod) -> Result<RelabeledChain> {
    match method {
        RelabelMethod::Map => relabel_by_map(samples),
        RelabelMethod::Order => {
            let m = modal_n(samples).ok_or_else(|| Error::InvalidInput("empty chain".into()))?;
            let kept: Vec<ChainSample> = samples.iter().filter(|s| s.n == m).cloned().collect();
            relabel_by_order(&kept)
        }
    }
}

/// Grid covering the sampled components when no data panel is at hand.
pub fn grid_from_samples(samples: &[ChainSample], c: usize, points: usize) -> Vec<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut angle = false;
    for e in samples.iter().flat_map(|s| &s.emissions) {
        let (a, b) = match *e {
            EmissionParams::UnivariateNormal { mu, sigma } => (mu - 4.0 * sigma, mu + 4.0 * sigma),
            EmissionParams::BivariateNormal { mu, sigma } => {
                let s = sigma[c][c].sqrt();
                (mu[c] - 4.0 * s, mu[c] + 4.0 * s)
            }
            EmissionParams::StepAngle { mu, sigma, .. } => {
                angle = c == 1;
                (0.0, mu + 4.0 * sigma)
            }
        };
        lo = lo.min(a);
        hi = hi.max(b);
    }
    if angle {
        lo = -std::f64::consts::PI;
        hi = std::f64::consts::PI;
    }
    if !(lo < hi) {
        hi = lo + 1.0;
    }
    let m = points.max(2);
    (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect()
}

fn density_name(t: usize, c: usize) -> String {
    if c == 0 {
        format!("density_t{t}.csv")
    } else {
        format!("density_t{t}_coord{}.csv", c + 1)
    }
}

/// Writes n_posterior, density and (with a panel) allocation summaries.
fn write_summaries(
    out: &mut StagedOutput,
    samples: &[ChainSample],
    relabeled: &RelabeledChain,
    panel: Option<&ObservationPanel>,
    post: &PostprocessSection,
    seed: u64,
) -> Result<()> {
    out.write("n_posterior.csv", &n_posterior_csv(&posterior_n_distribution(samples)))?;
    let kept = &relabeled.samples;
    let family = kept
        .first()
        .and_then(|s| s.emissions.first())
        .map(|e| e.family())
        .ok_or_else(|| Error::InvalidInput("no samples to summarize".into()))?;
    let dim = family.panel_kind().dim();
    for &t in &post.density_times {
        if t == 0 {
            return Err(Error::config("postprocess.density_times", "time indices are 1-based"));
        }
        for c in 0..dim {
            let grid = match panel {
                Some(p) => default_grid(p, family, c, post.density_points),
                None => grid_from_samples(kept, c, post.density_points),
            };
            let d = averaged_density(kept, t, c, &grid, post.density_weights)?;
            out.write(&density_name(t, c), &density_csv(&d))?;
        }
    }
    if let Some(p) = panel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x616c_6c6f_6361_7465);
        let probs = allocation_probabilities(kept, p, post.allocation_draws.max(1), &mut rng)?;
        out.write("allocation.csv", &allocation_csv(p.times(), &probs))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct FitDetails<'a> {
    model_prior: &'a ModelPrior,
    prior_notes: &'a PriorNotes,
}

pub fn cmd_fit(config_path: &Path) -> Result<Vec<PathBuf>> {
    let cfg: FitConfig = load_config(config_path)?;
    let cfg = cfg.rebase(&base_dir(config_path));
    let seed = effective_seed(cfg.seed)?;
    let panel = load_data(&cfg.data)?;
    let family = Family::for_panel(panel.kind());
    let (prior, notes) = cfg.prior.resolve(&panel, family)?;
    let rc = RunConfig {
        iterations: cfg.run.iterations,
        burn_in: cfg.run.burn_in,
        thin: cfg.run.thin,
        seed,
        initial_n: cfg.run.initial_n,
        scales: cfg.scales.clone().unwrap_or_else(|| default_scales(family)),
        birth_death: cfg.birth_death,
        prior,
    };
    let chain = run_chain(&panel, &rc)?;
    let relabeled = relabel(&chain.samples, cfg.postprocess.method)?;
    let mut out = StagedOutput::new(&cfg.output.dir)?;
    out.write("chain.jsonl", &chain_to_string(&chain.samples))?;
    write_summaries(&mut out, &chain.samples, &relabeled, Some(&panel), &cfg.postprocess, seed)?;
    let mut details = BTreeMap::new();
    details.insert(
        "prior".to_string(),
        serde_json::to_value(FitDetails {
            model_prior: &rc.prior,
            prior_notes: &notes,
        })?,
    );
    details.insert("move_stats".to_string(), serde_json::to_value(&chain.stats)?);
    let stored = FitConfig { seed, ..cfg.clone() };
    let meta = metadata_json("fit", seed, &stored, details, out.files())?;
    out.write("metadata.json", &meta)?;
    out.commit()
}

#[derive(Debug, Clone, Serialize)]
struct TruthFile {
    overlap_label: String,
    sigma: f64,
    n: usize,
    #[serde(rename = "T")]
    t_len: usize,
    initial_probs: Vec<f64>,
    transition_matrix: Vec<Vec<f64>>,
    emissions: Vec<EmissionParams>,
}

fn truth_allocation_csv(panel: &ObservationPanel, states: &[Vec<usize>]) -> String {
    let mut s = String::from("t,replicate,state\n");
    for (t, row) in states.iter().enumerate() {
        for (r, st) in row.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", panel.times()[t], panel.replicate_ids(t)[r], st + 1));
        }
    }
    s
}

pub fn cmd_simulate(config_path: &Path) -> Result<Vec<PathBuf>> {
    let cfg: SimulateConfig = load_config(config_path)?;
    let cfg = SimulateConfig {
        output: OutputSection {
            dir: resolve(&base_dir(config_path), &cfg.output.dir),
        },
        ..cfg
    };
    let seed = effective_seed(cfg.seed)?;
    let label = parse_label(&cfg.scenario.overlap, "scenario.overlap")?;
    let mut sc = StudyScenario::preset(label, cfg.scenario.n, cfg.scenario.t_len, 1);
    if let Some(s) = cfg.scenario.sigma {
        sc.sigma = s;
    }
    sc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (panel, alloc) = sc.simulate(&mut rng)?;
    let truth: HmmState = sc.truth();
    let k = truth.n();
    let tf = TruthFile {
        overlap_label: label.as_str().into(),
        sigma: sc.sigma,
        n: sc.n,
        t_len: sc.t_len,
        initial_probs: truth.initial_probs(),
        transition_matrix: truth.transition_matrix().chunks(k).map(|r| r.to_vec()).collect(),
        emissions: truth.emissions.clone(),
    };
    let mut out = StagedOutput::new(&cfg.output.dir)?;
    out.write("panel.csv", &panel_to_csv(&panel))?;
    out.write("truth_allocation.csv", &truth_allocation_csv(&panel, &alloc.states))?;
    let mut tj = serde_json::to_string_pretty(&tf)?;
    tj.push('\n');
    out.write("truth.json", &tj)?;
    let stored = SimulateConfig { seed, ..cfg };
    let meta = metadata_json("simulate", seed, &stored, BTreeMap::new(), out.files())?;
    out.write("metadata.json", &meta)?;
    out.commit()
}

pub fn cmd_study(config_path: &Path) -> Result<Vec<PathBuf>> {
    let cfg: StudyFileConfig = load_config(config_path)?;
    let cfg = StudyFileConfig {
        output: OutputSection {
            dir: resolve(&base_dir(config_path), &cfg.output.dir),
        },
        ..cfg
    };
    let seed = effective_seed(cfg.seed)?;
    let study = cfg.to_study(seed)?;
    let res = run_study(&study)?;
    let mut out = StagedOutput::new(&cfg.output.dir)?;
    out.write("study_results.csv", &study_results_csv(&res.rows))?;
    out.write("study_replications.csv", &replications_csv(&res.raw))?;
    let stored = StudyFileConfig { seed, ..cfg.clone() };
    let meta = metadata_json("study", seed, &stored, BTreeMap::new(), out.files())?;
    out.write("metadata.json", &meta)?;
    out.commit()
}

#[derive(Debug, Clone, Serialize)]
struct ThresholdArgs<'a> {
    panel: &'a Path,
    coordinate: Option<usize>,
    kind: PanelKind,
}

/// Returns the selected threshold and the written files.
pub fn cmd_threshold(panel_path: &Path, coordinate: Option<usize>, kind: Option<PanelKind>, out_dir: &Path) -> Result<(f64, Vec<PathBuf>)> {
    let kind = match kind {
        Some(k) => k,
        None => detect_kind(panel_path)?,
    };
    let panel = load_panel_with(panel_path, kind, false)?;
    let points: Vec<Vec<f64>> = match coordinate {
        Some(c) => {
            if c == 0 || c > kind.dim() {
                return Err(Error::config("coordinate", format!("must lie in 1..={}", kind.dim())));
            }
            panel.pooled(c - 1).into_iter().map(|v| vec![v]).collect()
        }
        None => repulsion_data(&panel, Family::for_panel(kind)),
    };
    let r = select_threshold(&points, &KdeSettings::default())?;
    let mut s = String::from("r,density\n");
    for (x, d) in r.grid.iter().zip(&r.density) {
        s.push_str(&format!("{},{}\n", g17(*x), g17(*d)));
    }
    let mut out = StagedOutput::new(out_dir)?;
    out.write("distance_kde.csv", &s)?;
    let args = ThresholdArgs {
        panel: panel_path,
        coordinate,
        kind,
    };
    let mut details = BTreeMap::new();
    details.insert("d".into(), serde_json::json!(r.d));
    details.insert("bandwidth".into(), serde_json::json!(r.bandwidth));
    details.insert("minima".into(), serde_json::json!(r.minima));
    let meta = metadata_json("threshold", 0, &args, details, out.files())?;
    out.write("metadata.json", &meta)?;
    Ok((r.d, out.commit()?))
}

#[derive(Debug, Clone, Serialize)]
struct PostprocessArgs<'a> {
    chain: &'a Path,
    method: RelabelMethod,
    panel: Option<&'a Path>,
}

pub fn cmd_postprocess(chain_path: &Path, method: RelabelMethod, panel_path: Option<&Path>, kind: Option<PanelKind>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let samples = read_chain(chain_path)?;
    let panel = match panel_path {
        Some(p) => {
            let k = match kind {
                Some(k) => k,
                None => detect_kind(p)?,
            };
            Some(load_panel_with(p, k, false)?)
        }
        None => None,
    };
    let relabeled = relabel(&samples, method)?;
    let mut out = StagedOutput::new(out_dir)?;
    out.write("relabeled_chain.jsonl", &chain_to_string(&relabeled.samples))?;
    write_summaries(&mut out, &samples, &relabeled, panel.as_ref(), &PostprocessSection { method, ..PostprocessSection::default() }, 0)?;
    let args = PostprocessArgs {
        chain: chain_path,
        method,
        panel: panel_path,
    };
    let meta = metadata_json("postprocess", 0, &args, BTreeMap::new(), out.files())?;
    out.write("metadata.json", &meta)?;
    out.commit()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_config_round_trips_through_toml() {
        let text = r#"
            seed = 7
            [data]
            panel = "panel.csv"
            kind = "scalar"
            replicate_mode = "independent"
            [output]
            dir = "out"
            [run]
            iterations = 200
            burn_in = 100
            [prior]
            n_max = 12
            d = 2.5
            xi_counts = [1.0, 12.0]
            [postprocess]
            method = "map"
            density_times = [1, 3]
        "#;
        let cfg: FitConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.run.thin, 10);
        assert_eq!(cfg.prior.d, Some(2.5));
        assert_eq!(cfg.postprocess.method, RelabelMethod::Map);
        let back: FitConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let json: FitConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(json, cfg);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = "[data]\npanel = \"p.csv\"\nbogus = 1\n[output]\ndir = \"o\"\n";
        assert!(toml::from_str::<FitConfig>(text).is_err());
    }

    #[test]
    fn study_grid_expands() {
        let text = r#"
            iterations = 100
            burn_in = 50
            [grid]
            overlaps = ["3%", "55%"]
            n = [50]
            T = [5, 10]
            replications = 2
            [output]
            dir = "s"
        "#;
        let cfg: StudyFileConfig = toml::from_str(text).unwrap();
        let s = cfg.to_study(1).unwrap();
        assert_eq!(s.scenarios.len(), 4);
        assert_eq!(s.scenarios[3].sigma, 4.2319);
        let bad = StudyFileConfig {
            grid: Some(GridSection {
                overlaps: vec!["4%".into()],
                n: vec![50],
                t_len: vec![5],
                replications: 1,
            }),
            ..cfg
        };
        assert!(matches!(bad.to_study(1), Err(Error::Config { .. })));
    }

    #[test]
    fn staged_output_is_all_or_nothing() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = StagedOutput::new(dir.path()).unwrap();
            s.write("a.csv", "x\n").unwrap();
        }
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
        let mut s = StagedOutput::new(dir.path()).unwrap();
        s.write("a.csv", "x\n").unwrap();
        s.commit().unwrap();
        let names: Vec<String> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        assert_eq!(names, vec!["a.csv".to_string()]);
    }

    #[test]
    fn config_hash_is_stable() {
        let a = config_hash(&vec![1.0, 2.0]).unwrap();
        assert_eq!(a, config_hash(&vec![1.0, 2.0]).unwrap());
        assert_ne!(a, config_hash(&vec![1.0, 2.5]).unwrap());
        assert_eq!(a.len(), 64);
    }
}
