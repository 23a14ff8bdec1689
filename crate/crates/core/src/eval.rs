//! Predictor evaluation: correlation and error metrics, per-attribute ranking
//! agreement, AIC, and validation-trial construction.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::database::Database;
use crate::diagnostics::Warning;
use crate::fingerprint::{retrieve, similarity_matrix, MaterialId, MaterialRecord, SimilarityParams, Values};
use crate::schema::{AttributeSchema, ATTRIBUTE_COUNT};
use crate::stats::{desc_then_key, pearson, spearman};
use crate::{Error, Result};

pub const TOP_K: usize = 5;
pub const RCI_FIRST: usize = 100;
pub const TRIAL_GROUP_SIZE: usize = 4;
/// Target plus three disjoint-capable groups of four.
pub const MIN_TRIAL_MATERIALS: usize = 1 + 3 * TRIAL_GROUP_SIZE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub r_sm: f64,
    pub r_a: f64,
    pub mae: f64,
    pub per_attribute_rci: Vec<f64>,
    pub per_attribute_top5_overlap: Vec<usize>,
    pub aic: f64,
    pub sample_count: usize,
}

fn same_shape(a: &[Values], b: &[Values]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("shape mismatch: {} vs {} rows", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::invalid("no rows to compare"));
    }
    Ok(())
}

/// R_SM: Pearson correlation over the strict upper triangles.
pub fn corr_similarity_matrices(pred: &DMatrix<f64>, gt: &DMatrix<f64>) -> Result<f64> {
    if pred.shape() != gt.shape() || pred.nrows() != pred.ncols() {
        return Err(Error::invalid(format!(
            "similarity matrices must be square and equal in shape, got {:?} and {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let n = pred.nrows();
    let mut x = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    let mut y = Vec::with_capacity(x.capacity());
    for i in 0..n {
        for j in (i + 1)..n {
            x.push(pred[(i, j)]);
            y.push(gt[(i, j)]);
        }
    }
    pearson(&x, &y)
}

/// R_A: Pearson correlation over all flattened attribute values.
pub fn corr_ratings(pred: &[Values], gt: &[Values]) -> Result<f64> {
    same_shape(pred, gt)?;
    pearson(pred.as_flattened(), gt.as_flattened())
}

pub fn mae(pred: &[Values], gt: &[Values]) -> Result<f64> {
    same_shape(pred, gt)?;
    let (p, g) = (pred.as_flattened(), gt.as_flattened());
    Ok(p.iter().zip(g).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64)
}

fn top_indices(ids: &[MaterialId], scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| desc_then_key((scores[a], &ids[a]), (scores[b], &ids[b])));
    order.truncate(k);
    order
}

/// Size of the intersection of the top-`k` sets by `pred` and by `gt`.
/// Ties go to the smaller material id.
pub fn topk_overlap(ids: &[MaterialId], pred: &[f64], gt: &[f64], k: usize) -> Result<usize> {
    if ids.len() != pred.len() || ids.len() != gt.len() {
        return Err(Error::invalid("topk_overlap: ids, pred and gt differ in length"));
    }
    if k > ids.len() {
        return Err(Error::invalid(format!("topk_overlap: k={k} exceeds {} materials", ids.len())));
    }
    let a = top_indices(ids, pred, k);
    let b = top_indices(ids, gt, k);
    Ok(a.iter().filter(|i| b.contains(i)).count())
}

/// Spearman correlation between `pred` and `gt` over the `first` materials
/// ranked highest by `gt`. `first` larger than the material count is clamped
/// with a warning.
pub fn rci(ids: &[MaterialId], pred: &[f64], gt: &[f64], first: usize) -> Result<f64> {
    if ids.len() != pred.len() || ids.len() != gt.len() {
        return Err(Error::invalid("rci: ids, pred and gt differ in length"));
    }
    let mut first = first;
    if first > ids.len() {
        Warning::new(
            "rci-clamped",
            format!("rci: first={first} clamped to {} materials", ids.len()),
        );
        first = ids.len();
    }
    let subset = top_indices(ids, gt, first);
    let p: Vec<f64> = subset.iter().map(|&i| pred[i]).collect();
    let g: Vec<f64> = subset.iter().map(|&i| gt[i]).collect();
    spearman(&p, &g)
}

/// Gaussian-likelihood AIC, `2k + n ln(RSS / n)`.
///
/// A perfect fit returns negative infinity and logs a warning.
pub fn aic(residuals: &[f64], k_params: usize) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::invalid("aic: no residuals"));
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("aic: non-finite residual"));
    }
    let n = residuals.len() as f64;
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    if rss == 0.0 {
        Warning::new("aic-perfect-fit", "aic: residual sum of squares is zero");
        return Ok(f64::NEG_INFINITY);
    }
    Ok(2.0 * k_params as f64 + n * (rss / n).ln())
}

/// Pairs each predicted fingerprint with its ground truth. Rows follow the
/// order of `pred`.
pub fn align(pred: &Database, gt: &Database) -> Result<(Vec<MaterialRecord>, Vec<MaterialRecord>)> {
    let mut p = Vec::with_capacity(pred.materials.len());
    let mut g = Vec::with_capacity(pred.materials.len());
    for rec in &pred.materials {
        let truth = gt
            .get(&rec.material_id)
            .ok_or_else(|| Error::NotFound(format!("material '{}' has no ground truth", rec.material_id)))?;
        p.push(rec.clone());
        g.push(truth.clone());
    }
    Ok((p, g))
}

/// Full report for predictions against ground truth. `k_params` feeds the AIC.
pub fn evaluate(pred: &Database, gt: &Database, params: SimilarityParams, k_params: usize) -> Result<EvalReport> {
    let (p, g) = align(pred, gt)?;
    if p.len() < TOP_K {
        return Err(Error::invalid(format!(
            "evaluation needs at least {TOP_K} materials, got {}",
            p.len()
        )));
    }
    let pv: Vec<Values> = p.iter().map(|r| r.fingerprint.values).collect();
    let gv: Vec<Values> = g.iter().map(|r| r.fingerprint.values).collect();
    let ids: Vec<MaterialId> = p.iter().map(|r| r.material_id.clone()).collect();

    let mut per_attribute_rci = Vec::with_capacity(ATTRIBUTE_COUNT);
    let mut per_attribute_top5_overlap = Vec::with_capacity(ATTRIBUTE_COUNT);
    for a in 0..ATTRIBUTE_COUNT {
        let pa: Vec<f64> = pv.iter().map(|v| v[a]).collect();
        let ga: Vec<f64> = gv.iter().map(|v| v[a]).collect();
        per_attribute_rci.push(rci(&ids, &pa, &ga, RCI_FIRST)?);
        per_attribute_top5_overlap.push(topk_overlap(&ids, &pa, &ga, TOP_K)?);
    }
    let residuals: Vec<f64> = pv
        .as_flattened()
        .iter()
        .zip(gv.as_flattened())
        .map(|(a, b)| a - b)
        .collect();
    Ok(EvalReport {
        r_sm: corr_similarity_matrices(&similarity_matrix(&p, params)?, &similarity_matrix(&g, params)?)?,
        r_a: corr_ratings(&pv, &gv)?,
        mae: mae(&pv, &gv)?,
        per_attribute_rci,
        per_attribute_top5_overlap,
        aic: aic(&residuals, k_params)?,
        sample_count: p.len(),
    })
}

/// One row per attribute: id, name, top-5 overlap, RCI.
pub fn write_per_attribute_csv<W: Write>(report: &EvalReport, schema: &AttributeSchema, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::invalid(format!("writing CSV: {e}"));
    w.write_record(["attribute_id", "attribute", "top5_overlap", "rci"]).map_err(io)?;
    for (i, attr) in schema.attributes.iter().enumerate() {
        w.write_record([
            attr.id.to_string(),
            attr.name.clone(),
            report.per_attribute_top5_overlap[i].to_string(),
            report.per_attribute_rci[i].to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("writing CSV: {e}")))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialGroup {
    Ratings,
    Model,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationTrial {
    pub target: MaterialId,
    pub group_ratings: Vec<MaterialId>,
    pub group_model: Vec<MaterialId>,
    pub group_random: Vec<MaterialId>,
    pub display_order: [TrialGroup; 3],
}

/// One trial per predicted material, in `preds` order.
///
/// The ratings group holds the four materials nearest the target's human
/// fingerprint; the model group the four nearest its predicted fingerprint,
/// both searched over the human fingerprints. The random group draws four
/// distinct other materials. Groups may overlap.
pub fn build_validation_trials(
    db: &Database,
    preds: &Database,
    seed: u64,
    params: SimilarityParams,
) -> Result<Vec<ValidationTrial>> {
    if db.materials.len() < MIN_TRIAL_MATERIALS {
        return Err(Error::invalid(format!(
            "validation trials need at least {MIN_TRIAL_MATERIALS} materials, got {}",
            db.materials.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(preds.materials.len());
    for pred in &preds.materials {
        let target = db
            .get(&pred.material_id)
            .ok_or_else(|| Error::NotFound(format!("material '{}'", pred.material_id)))?;
        let ids = |scored: Vec<crate::ScoredMaterial>| scored.into_iter().map(|s| s.material_id).collect();
        let group_ratings = ids(retrieve(&db.materials, &target.fingerprint, TRIAL_GROUP_SIZE, params)?);
        let group_model = ids(retrieve(&db.materials, &pred.fingerprint, TRIAL_GROUP_SIZE, params)?);
        let others: Vec<&MaterialId> = db
            .materials
            .iter()
            .map(|r| &r.material_id)
            .filter(|id| **id != pred.material_id)
            .collect();
        let group_random = others
            .choose_multiple(&mut rng, TRIAL_GROUP_SIZE)
            .map(|id| (*id).clone())
            .collect();
        let mut display_order = [TrialGroup::Ratings, TrialGroup::Model, TrialGroup::Random];
        display_order.shuffle(&mut rng);
        trials.push(ValidationTrial {
            target: pred.material_id.clone(),
            group_ratings,
            group_model,
            group_random,
            display_order,
        });
    }
    Ok(trials)
}
