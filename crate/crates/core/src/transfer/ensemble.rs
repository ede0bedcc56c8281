//! Weighted averaging of member probability rows, with optional top-k member
//! selection by validation accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transfer::features::FeatureSet;
use crate::transfer::heads::LinearHead;

const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    All,
    TopK(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Uniform,
    /// Proportional to each selected member's validation accuracy.
    Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: Vec<LinearHead>,
    /// Non-negative, summing to 1 within 1e-12.
    pub weights: Vec<f64>,
}

/// Indices of the `k` highest accuracies, best first; ties go to the lower
/// index.
pub fn select_top_k(accuracies: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > accuracies.len() {
        return Err(Error::Config(format!(
            "cannot select {k} of {} members",
            accuracies.len()
        )));
    }
    let mut idx: Vec<usize> = (0..accuracies.len()).collect();
    idx.sort_by(|&a, &b| accuracies[b].total_cmp(&accuracies[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// Scale non-negative raw weights to sum to 1.
pub fn normalize_weights(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::Config("ensemble weights must be finite and ≥ 0".into()));
    }
    let s: f64 = raw.iter().sum();
    if s <= 0.0 {
        return Err(Error::Config("ensemble weights sum to zero".into()));
    }
    Ok(raw.iter().map(|w| w / s).collect())
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| w.is_nan() || *w < 0.0) {
        return Err(Error::Config("ensemble weights must be ≥ 0".into()));
    }
    let s: f64 = weights.iter().sum();
    if (s - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::Config(format!("ensemble weights sum to {s}, not 1")));
    }
    Ok(())
}

/// `p = Σ_m w_m·p_m` for one example, evaluated as `p_1 + Σ_m w_m·(p_m − p_1)`
/// (equal because the weights sum to 1) so that identical members reproduce
/// their shared row bit for bit.
pub fn ensemble_predict(weights: &[f64], rows: &[&[f64]]) -> Result<Vec<f64>> {
    if weights.len() != rows.len() || rows.is_empty() {
        return Err(Error::Config(format!(
            "{} weights for {} members",
            weights.len(),
            rows.len()
        )));
    }
    check_weights(weights)?;
    let k = rows[0].len();
    if rows.iter().any(|r| r.len() != k) {
        return Err(Error::Shape("member rows differ in length".into()));
    }
    let anchor = rows[0];
    let mut out = anchor.to_vec();
    for (w, row) in weights.iter().zip(rows).skip(1) {
        for ((o, p), a) in out.iter_mut().zip(*row).zip(anchor) {
            *o += w * (p - a);
        }
    }
    Ok(out)
}

impl EnsembleSpec {
    pub fn new(members: Vec<LinearHead>, weights: Vec<f64>) -> Result<Self> {
        if members.is_empty() || members.len() != weights.len() {
            return Err(Error::Config(format!(
                "{} weights for {} members",
                weights.len(),
                members.len()
            )));
        }
        check_weights(&weights)?;
        if members.iter().any(|m| m.classes != members[0].classes) {
            return Err(Error::Config("ensemble members disagree on class count".into()));
        }
        Ok(Self { members, weights })
    }

    /// Pick members by `selection` using their accuracy on their own
    /// validation features, then weight them.
    pub fn build(
        heads: Vec<LinearHead>,
        validation: &[&FeatureSet],
        selection: Selection,
        weighting: Weighting,
    ) -> Result<Self> {
        Self::build_indexed(heads, validation, selection, weighting).map(|(spec, _)| spec)
    }

    /// [`EnsembleSpec::build`], also returning which input head each member
    /// came from.
    pub fn build_indexed(
        heads: Vec<LinearHead>,
        validation: &[&FeatureSet],
        selection: Selection,
        weighting: Weighting,
    ) -> Result<(Self, Vec<usize>)> {
        if heads.len() != validation.len() {
            return Err(Error::Config(format!(
                "{} validation sets for {} heads",
                validation.len(),
                heads.len()
            )));
        }
        let acc = heads
            .iter()
            .zip(validation)
            .map(|(h, v)| h.accuracy(v))
            .collect::<Result<Vec<_>>>()?;
        let chosen = match selection {
            Selection::All => (0..heads.len()).collect(),
            Selection::TopK(k) => select_top_k(&acc, k)?,
        };
        let raw: Vec<f64> = match weighting {
            Weighting::Uniform => vec![1.0; chosen.len()],
            Weighting::Accuracy => chosen.iter().map(|&i| acc[i]).collect(),
        };
        let weights = normalize_weights(&raw)?;
        let members = chosen.iter().map(|&i| heads[i].clone()).collect();
        Ok((Self::new(members, weights)?, chosen))
    }

    /// Ensemble probability rows; `features[m]` holds member `m`'s features
    /// for the same examples in the same order.
    pub fn predict_proba(&self, features: &[&FeatureSet]) -> Result<Vec<Vec<f64>>> {
        if features.len() != self.members.len() {
            return Err(Error::Config(format!(
                "{} feature sets for {} members",
                features.len(),
                self.members.len()
            )));
        }
        let n = features[0].len();
        if features.iter().any(|f| f.len() != n) {
            return Err(Error::Shape("member feature sets differ in length".into()));
        }
        let per_member = self
            .members
            .iter()
            .zip(features)
            .map(|(m, f)| m.predict_proba_all(f))
            .collect::<Result<Vec<_>>>()?;
        (0..n)
            .map(|i| {
                let rows: Vec<&[f64]> = per_member.iter().map(|p| p[i].as_slice()).collect();
                ensemble_predict(&self.weights, &rows)
            })
            .collect()
    }
}
