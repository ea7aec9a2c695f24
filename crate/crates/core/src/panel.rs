//! Observation panels: ingestion, validation, persistence and pooled quantiles.

use crate::error::{Error, Result};
use crate::numfmt::g17;
use crate::special::{quantile_sorted, wrap_angle};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PanelKind {
    Scalar,
    Vector2,
    StepAngle,
}

impl PanelKind {
    pub fn dim(self) -> usize {
        match self {
            PanelKind::Scalar => 1,
            PanelKind::Vector2 | PanelKind::StepAngle => 2,
        }
    }

    fn value_columns(self) -> &'static [&'static str] {
        match self {
            PanelKind::Scalar => &["value"],
            PanelKind::Vector2 => &["x1", "x2"],
            PanelKind::StepAngle => &["step", "angle"],
        }
    }

    fn has_replicate_column(self) -> bool {
        !matches!(self, PanelKind::StepAngle)
    }

    /// Guess the kind from a CSV header.
    pub fn infer(headers: &[&str]) -> Option<PanelKind> {
        let has = |c: &str| headers.contains(&c);
        if has("step") && has("angle") {
            Some(PanelKind::StepAngle)
        } else if has("x1") && has("x2") {
            Some(PanelKind::Vector2)
        } else if has("value") {
            Some(PanelKind::Scalar)
        } else {
            None
        }
    }
}

/// How replicates observed at the same time point enter the likelihood.
///
/// `Shared`: all replicates at t are conditionally i.i.d. given one state S_t.
/// `Independent`: replicate r at every t forms its own state sequence, all
/// sequences sharing the model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReplicateMode {
    #[default]
    Shared,
    Independent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPanel {
    kind: PanelKind,
    times: Vec<i64>,
    replicate_ids: Vec<Vec<i64>>,
    replicates: Vec<Vec<Vec<f64>>>,
    mode: ReplicateMode,
}

fn check_obs(kind: PanelKind, obs: &[f64], row: usize) -> Result<()> {
    if obs.len() != kind.dim() {
        return Err(Error::DimensionMismatch {
            expected: kind.dim(),
            got: obs.len(),
        });
    }
    if obs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parse {
            row,
            msg: "non-finite value".into(),
        });
    }
    if kind == PanelKind::StepAngle {
        if obs[0] < 0.0 {
            return Err(Error::Parse {
                row,
                msg: format!("negative step length {}", obs[0]),
            });
        }
        if !(obs[1] > -PI && obs[1] <= PI) {
            return Err(Error::Parse {
                row,
                msg: format!("angle {} outside (-pi, pi]", obs[1]),
            });
        }
    }
    Ok(())
}

impl ObservationPanel {
    /// Builds a panel from per-time replicate lists, labelling times 1..=T and
    /// replicates 1..=n_t.
    pub fn new(kind: PanelKind, replicates: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let times = (1..=replicates.len() as i64).collect();
        let replicate_ids = replicates
            .iter()
            .map(|r| (1..=r.len() as i64).collect())
            .collect();
        Self::with_labels(kind, times, replicate_ids, replicates)
    }

    pub fn with_labels(
        kind: PanelKind,
        times: Vec<i64>,
        replicate_ids: Vec<Vec<i64>>,
        replicates: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if replicates.is_empty() {
            return Err(Error::InvalidInput("panel has no time points".into()));
        }
        if times.len() != replicates.len() || replicate_ids.len() != replicates.len() {
            return Err(Error::InvalidInput("label lengths do not match data".into()));
        }
        let mut row = 1;
        for (t, reps) in replicates.iter().enumerate() {
            if reps.is_empty() {
                return Err(Error::InvalidInput(format!("time {} has no observations", times[t])));
            }
            if replicate_ids[t].len() != reps.len() {
                return Err(Error::InvalidInput("replicate id count mismatch".into()));
            }
            if kind == PanelKind::StepAngle && reps.len() != 1 {
                return Err(Error::InvalidInput(
                    "step-angle panels carry one observation per time point".into(),
                ));
            }
            for obs in reps {
                row += 1;
                check_obs(kind, obs, row)?;
            }
        }
        Ok(ObservationPanel {
            kind,
            times,
            replicate_ids,
            replicates,
            mode: ReplicateMode::Shared,
        })
    }

    /// A panel with no observations; its likelihood is identically zero.
    pub fn empty(kind: PanelKind) -> Self {
        ObservationPanel {
            kind,
            times: Vec::new(),
            replicate_ids: Vec::new(),
            replicates: Vec::new(),
            mode: ReplicateMode::Shared,
        }
    }

    pub fn with_mode(mut self, mode: ReplicateMode) -> Result<Self> {
        if mode == ReplicateMode::Independent {
            if let Some(first) = self.replicates.first() {
                let n = first.len();
                if self.replicates.iter().any(|r| r.len() != n) {
                    return Err(Error::InvalidInput(
                        "independent replicate mode needs the same replicate count at every time".into(),
                    ));
                }
            }
        }
        self.mode = mode;
        Ok(self)
    }

    pub fn kind(&self) -> PanelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn mode(&self) -> ReplicateMode {
        self.mode
    }

    /// Number of time points T.
    pub fn len_t(&self) -> usize {
        self.replicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicates.is_empty()
    }

    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn replicate_ids(&self, t: usize) -> &[i64] {
        &self.replicate_ids[t]
    }

    pub fn observations(&self, t: usize) -> &[Vec<f64>] {
        &self.replicates[t]
    }

    pub fn n_observations(&self) -> usize {
        self.replicates.iter().map(|r| r.len()).sum()
    }

    pub fn iter_obs(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.replicates.iter().flatten()
    }

    /// All values of one coordinate pooled over time and replicates.
    pub fn pooled(&self, coordinate: usize) -> Vec<f64> {
        self.iter_obs().map(|o| o[coordinate]).collect()
    }

    /// Number of allocation units: time points in shared mode, time points
    /// times replicates otherwise.
    pub fn n_units(&self) -> usize {
        match self.mode {
            ReplicateMode::Shared => self.len_t(),
            ReplicateMode::Independent => self.n_observations(),
        }
    }
}

pub fn load_panel(path: &Path, kind: PanelKind) -> Result<ObservationPanel> {
    load_panel_with(path, kind, false)
}

/// Loads a panel; with `wrap_angles` out-of-range turning angles are mapped
/// into (-pi, pi] instead of rejected.
pub fn load_panel_with(path: &Path, kind: PanelKind, wrap_angles: bool) -> Result<ObservationPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_open_error(path, e))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let t_col = col("t")?;
    let rep_col = if kind.has_replicate_column() { Some(col("replicate")?) } else { None };
    let value_cols: Vec<usize> = kind.value_columns().iter().map(|c| col(c)).collect::<Result<_>>()?;

    let mut grouped: BTreeMap<i64, BTreeMap<i64, Vec<f64>>> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(i + 2);
        let int_cell = |c: usize| -> Result<i64> {
            let s = rec.get(c).unwrap_or("");
            s.parse::<i64>().map_err(|_| Error::Parse {
                row,
                msg: format!("`{s}` is not an integer"),
            })
        };
        let t = int_cell(t_col)?;
        let rep = match rep_col {
            Some(c) => int_cell(c)?,
            None => 1,
        };
        let mut obs = Vec::with_capacity(value_cols.len());
        for &c in &value_cols {
            let s = rec.get(c).unwrap_or("");
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("`{s}` in column `{}` is not numeric", &headers[c]),
            })?;
            obs.push(v);
        }
        if kind == PanelKind::StepAngle && wrap_angles {
            obs[1] = wrap_angle(obs[1]);
        }
        check_obs(kind, &obs, row)?;
        let slot = grouped.entry(t).or_default();
        if slot.insert(rep, obs).is_some() {
            return Err(Error::DuplicateKey { t, replicate: rep });
        }
    }
    let mut times = Vec::new();
    let mut ids = Vec::new();
    let mut reps = Vec::new();
    for (t, m) in grouped {
        times.push(t);
        ids.push(m.keys().copied().collect());
        reps.push(m.into_values().collect());
    }
    ObservationPanel::with_labels(kind, times, ids, reps)
}

fn csv_open_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{other:?}")),
    }
}

pub fn panel_to_csv(panel: &ObservationPanel) -> String {
    let kind = panel.kind();
    let mut out = String::from("t");
    if kind.has_replicate_column() {
        out.push_str(",replicate");
    }
    for c in kind.value_columns() {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for t in 0..panel.len_t() {
        for (obs, id) in panel.observations(t).iter().zip(panel.replicate_ids(t)) {
            out.push_str(&panel.times()[t].to_string());
            if kind.has_replicate_column() {
                out.push(',');
                out.push_str(&id.to_string());
            }
            for v in obs {
                out.push(',');
                out.push_str(&g17(*v));
            }
            out.push('\n');
        }
    }
    out
}

pub fn save_panel(panel: &ObservationPanel, path: &Path) -> Result<()> {
    std::fs::write(path, panel_to_csv(panel)).map_err(|e| Error::io(path, e))
}

/// Type-7 quantile of one coordinate pooled over the whole panel.
pub fn data_quantile(panel: &ObservationPanel, coordinate: usize, q: f64) -> Result<f64> {
    if panel.is_empty() {
        return Err(Error::InvalidInput("empty panel".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidInput(format!("quantile level {q} outside (0, 1)")));
    }
    if coordinate >= panel.dim() {
        return Err(Error::DimensionMismatch {
            expected: panel.dim(),
            got: coordinate + 1,
        });
    }
    let mut v = panel.pooled(coordinate);
    v.sort_by(|a, b| a.total_cmp(b));
    Ok(quantile_sorted(&v, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn scalar_three_rows() {
        let f = write_tmp("t,replicate,value\n1,1,0.5\n2,1,1.5\n3,1,-2\n");
        let p = load_panel(f.path(), PanelKind::Scalar).unwrap();
        assert_eq!(p.len_t(), 3);
        assert_eq!(p.dim(), 1);
        assert!((0..3).all(|t| p.observations(t).len() == 1));
        assert_eq!(p.observations(2)[0][0], -2.0);
    }

    #[test]
    fn angle_wrapping() {
        let f = write_tmp("t,step,angle\n1,10.0,3.5\n");
        let p = load_panel_with(f.path(), PanelKind::StepAngle, true).unwrap();
        let a = p.observations(0)[0][1];
        assert!((a - (3.5 - 2.0 * PI)).abs() < 1e-12);
        assert!((a + 2.7832).abs() < 1e-4);
        let err = load_panel(f.path(), PanelKind::StepAngle).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_key_rejected() {
        let f = write_tmp("t,replicate,value\n1,1,0.5\n1,1,0.7\n");
        match load_panel(f.path(), PanelKind::Scalar).unwrap_err() {
            Error::DuplicateKey { t, replicate } => assert_eq!((t, replicate), (1, 1)),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn bad_cells_name_row() {
        let f = write_tmp("t,replicate,value\n1,1,0.5\n2,1,abc\n");
        let e = load_panel(f.path(), PanelKind::Scalar).unwrap_err();
        assert!(matches!(e, Error::Parse { row: 3, .. }), "{e}");
        let f = write_tmp("t,step,angle\n1,-1.0,0.1\n");
        assert!(matches!(
            load_panel(f.path(), PanelKind::StepAngle).unwrap_err(),
            Error::Parse { row: 2, .. }
        ));
        let f = write_tmp("t,value\n1,0.5\n");
        assert!(matches!(
            load_panel(f.path(), PanelKind::Scalar).unwrap_err(),
            Error::MissingColumn(_)
        ));
    }

    #[test]
    fn rows_grouped_by_time() {
        let f = write_tmp("t,replicate,x1,x2\n2,1,1,2\n1,2,3,4\n1,1,5,6\n");
        let p = load_panel(f.path(), PanelKind::Vector2).unwrap();
        assert_eq!(p.times(), &[1, 2]);
        assert_eq!(p.observations(0), &[vec![5.0, 6.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn save_load_round_trip_bit_exact() {
        let reps = vec![
            vec![vec![0.1 + 0.2, -1.0 / 3.0], vec![1e-300, 6.02214076e23]],
            vec![vec![std::f64::consts::E, 0.0]],
        ];
        let p = ObservationPanel::new(PanelKind::Vector2, reps).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_panel(&p, f.path()).unwrap();
        let q = load_panel(f.path(), PanelKind::Vector2).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn quantiles_match_sort_and_index() {
        let vals: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64 * 0.37 - 50.0).collect();
        let p = ObservationPanel::new(PanelKind::Scalar, vals.iter().map(|v| vec![vec![*v]]).collect()).unwrap();
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut prev = f64::NEG_INFINITY;
        for q in [0.01, 0.1, 0.25, 0.5, 0.9, 0.99] {
            let h: f64 = 999.0 * q;
            let lo = h.floor() as usize;
            let oracle = sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo]);
            let got = data_quantile(&p, 0, q).unwrap();
            assert!((got - oracle).abs() < 1e-12);
            assert!(got >= prev);
            prev = got;
        }
        assert!(data_quantile(&p, 0, 1.0).is_err());
    }
}
