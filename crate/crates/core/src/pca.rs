//! Two-component principal component projection of feature matrices.

use crate::error::{Error, Result};
use crate::panel::{ObservationPanel, PanelKind};
use nalgebra::{DMatrix, SymmetricEigen};
use std::collections::BTreeMap;
use std::path::Path;

/// Feature rows tagged with the time point they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub times: Vec<i64>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// D_in rows, one column per retained component.
    pub loadings: Vec<[f64; 2]>,
    pub explained_variance_ratio: [f64; 2],
    pub center: Vec<f64>,
}

impl PcaProjection {
    pub fn project(&self, x: &[f64]) -> [f64; 2] {
        let mut s = [0.0; 2];
        for (d, (xv, c)) in x.iter().zip(&self.center).enumerate() {
            let v = xv - c;
            s[0] += v * self.loadings[d][0];
            s[1] += v * self.loadings[d][1];
        }
        s
    }
}

/// Reads a `t,f1,...,fK` CSV.
pub fn load_features(path: &Path) -> Result<FeatureMatrix> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let t_col = headers
        .iter()
        .position(|h| h == "t")
        .ok_or_else(|| Error::MissingColumn("t".into()))?;
    let mut feature_cols = Vec::new();
    for k in 1.. {
        match headers.iter().position(|h| h == format!("f{k}")) {
            Some(c) => feature_cols.push(c),
            None => break,
        }
    }
    if feature_cols.is_empty() {
        return Err(Error::MissingColumn("f1".into()));
    }
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let t = rec[t_col].parse::<i64>().map_err(|_| Error::Parse {
            row,
            msg: format!("`{}` is not an integer", &rec[t_col]),
        })?;
        let vals = feature_cols
            .iter()
            .map(|&c| {
                rec[c]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        row,
                        msg: format!("`{}` is not numeric", &rec[c]),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        times.push(t);
        rows.push(vals);
    }
    Ok(FeatureMatrix { times, rows })
}

/// Fits the top-2 principal components and returns the projected panel,
/// rows sharing a time label becoming replicates of that time point.
pub fn pca_fit_project(features: &FeatureMatrix) -> Result<(PcaProjection, ObservationPanel)> {
    let n = features.rows.len();
    let d = features.rows.first().map(|r| r.len()).unwrap_or(0);
    if d < 2 || n <= d {
        return Err(Error::InvalidInput(format!(
            "need more rows than columns and at least 2 columns (got {n} x {d})"
        )));
    }
    if features.rows.iter().any(|r| r.len() != d) || features.times.len() != n {
        return Err(Error::InvalidInput("ragged feature matrix".into()));
    }
    let mut center = vec![0.0; d];
    for r in &features.rows {
        for (c, v) in center.iter_mut().zip(r) {
            *c += v;
        }
    }
    center.iter_mut().for_each(|c| *c /= n as f64);
    let x = DMatrix::from_fn(n, d, |i, j| features.rows[i][j] - center[j]);
    for j in 0..d {
        if x.column(j).iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidInput(format!("column f{} has zero variance", j + 1)));
        }
    }
    let cov = (x.transpose() * &x) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let top = eig.eigenvalues[order[0]];
    let tol = 1e-12 * top.abs().max(f64::MIN_POSITIVE);
    if eig.eigenvalues[order[1]] <= tol {
        return Err(Error::RankDeficient);
    }
    let mut loadings = vec![[0.0; 2]; d];
    for (k, &idx) in order.iter().take(2).enumerate() {
        let col = eig.eigenvectors.column(idx);
        let big = col.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let s = if big < 0.0 { -1.0 } else { 1.0 };
        let norm = col.norm();
        for j in 0..d {
            loadings[j][k] = s * col[j] / norm;
        }
    }
    let proj = PcaProjection {
        loadings,
        explained_variance_ratio: [eig.eigenvalues[order[0]] / total, eig.eigenvalues[order[1]] / total],
        center,
    };
    let mut grouped: BTreeMap<i64, Vec<Vec<f64>>> = BTreeMap::new();
    for (t, r) in features.times.iter().zip(&features.rows) {
        grouped.entry(*t).or_default().push(proj.project(r).to_vec());
    }
    let times: Vec<i64> = grouped.keys().copied().collect();
    let reps: Vec<Vec<Vec<f64>>> = grouped.into_values().collect();
    let ids = reps.iter().map(|r| (1..=r.len() as i64).collect()).collect();
    let panel = ObservationPanel::with_labels(PanelKind::Vector2, times, ids, reps)?;
    Ok((proj, panel))
}
