//! From raw slider responses to fingerprints.
//!
//! The pipeline is `zscore_per_participant` → `exclude_raters` →
//! `aggregate` → `rescale`. Z-scoring groups are (participant × attribute),
//! since every rating session covers one attribute. Rater exclusion runs once
//! against the consensus computed before anyone is removed.
//!
//! Also hosts the two statistics computed on the attribute-naming data:
//! Fleiss' kappa and the frequency × rank importance score.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::Warning;
use crate::fingerprint::{Fingerprint, MaterialId, Values};
use crate::schema::{attribute_index, ATTRIBUTE_COUNT};
use crate::stats::{mean, pearson_unchecked, sample_std};
use crate::{Error, Result};

/// One slider response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRating {
    pub participant_id: String,
    pub material_id: MaterialId,
    pub attribute_id: u8,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial_index: Option<u32>,
}

impl RawRating {
    pub fn new(
        participant_id: impl Into<String>,
        material_id: impl Into<MaterialId>,
        attribute_id: u8,
        value: f64,
    ) -> Self {
        RawRating {
            participant_id: participant_id.into(),
            material_id: material_id.into(),
            attribute_id,
            value,
            trial_index: None,
        }
    }

    fn validate(&self) -> Result<()> {
        attribute_index(self.attribute_id)?;
        if !self.value.is_finite() {
            return Err(Error::invalid(format!(
                "rating by '{}' on '{}' is not finite",
                self.participant_id, self.material_id
            )));
        }
        Ok(())
    }
}

/// Reads the ratings CSV (`participant_id,material_id,attribute_id,value`,
/// optional trailing `trial_index`).
pub fn read_ratings_csv(path: impl AsRef<Path>) -> Result<Vec<RawRating>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ratings_csv(file, path)
}

pub fn parse_ratings_csv<R: std::io::Read>(reader: R, path: &Path) -> Result<Vec<RawRating>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    for required in ["participant_id", "material_id", "attribute_id", "value"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::format(path, format!("missing column '{required}'")));
        }
    }
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<RawRating>().enumerate() {
        let rating = row.map_err(|e| Error::format(path, format!("record {}: {e}", line + 1)))?;
        rating.validate()?;
        out.push(rating);
    }
    Ok(out)
}

pub fn write_ratings_csv<W: std::io::Write>(writer: W, ratings: &[RawRating]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::invalid(e.to_string());
    wtr.write_record(["participant_id", "material_id", "attribute_id", "value", "trial_index"])
        .map_err(err)?;
    for r in ratings {
        wtr.serialize((&r.participant_id, r.material_id.as_str(), r.attribute_id, r.value, r.trial_index))
            .map_err(err)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))
}

type GroupKey<'a> = (&'a str, u8);

fn groups(ratings: &[RawRating]) -> BTreeMap<GroupKey<'_>, Vec<usize>> {
    let mut g: BTreeMap<GroupKey<'_>, Vec<usize>> = BTreeMap::new();
    for (i, r) in ratings.iter().enumerate() {
        g.entry((r.participant_id.as_str(), r.attribute_id)).or_default().push(i);
    }
    g
}

/// Z-scores every (participant × attribute) group with the sample standard
/// deviation. Constant groups become zeros and raise a warning.
pub fn zscore_per_participant(ratings: &[RawRating]) -> Result<(Vec<RawRating>, Vec<Warning>)> {
    for r in ratings {
        r.validate()?;
    }
    let mut out = ratings.to_vec();
    let mut warnings = Vec::new();
    for ((participant, attribute), idx) in groups(ratings) {
        let values: Vec<f64> = idx.iter().map(|&i| ratings[i].value).collect();
        let m = mean(&values);
        let sd = sample_std(&values);
        if sd == 0.0 || !sd.is_finite() {
            warnings.push(Warning::new(
                "constant-rater",
                format!("participant '{participant}' gave a single value on attribute {attribute}; mapped to zeros"),
            ));
            for &i in &idx {
                out[i].value = 0.0;
            }
            continue;
        }
        for &i in &idx {
            out[i].value = (ratings[i].value - m) / sd;
        }
    }
    Ok((out, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedRater {
    pub participant_id: String,
    pub attribute_id: u8,
    pub correlation: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub excluded: Vec<ExcludedRater>,
    /// Participant × attribute groups kept.
    pub retained_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Warning>,
}

fn per_material_means<'a>(
    ratings: &'a [RawRating],
    idx: impl Iterator<Item = usize>,
) -> BTreeMap<&'a MaterialId, f64> {
    let mut acc: BTreeMap<&MaterialId, (f64, usize)> = BTreeMap::new();
    for i in idx {
        let e = acc.entry(&ratings[i].material_id).or_insert((0.0, 0));
        e.0 += ratings[i].value;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Drops, per attribute, every participant whose per-material ratings
/// correlate negatively with the all-participant per-material mean.
pub fn exclude_raters(ratings: &[RawRating]) -> Result<(Vec<RawRating>, ExclusionReport)> {
    for r in ratings {
        r.validate()?;
    }
    let mut report = ExclusionReport::default();
    let mut dropped: BTreeSet<GroupKey<'_>> = BTreeSet::new();
    let by_group = groups(ratings);

    for attribute in 1..=ATTRIBUTE_COUNT as u8 {
        let participants: Vec<(&str, &Vec<usize>)> = by_group
            .iter()
            .filter(|((_, a), _)| *a == attribute)
            .map(|((p, _), idx)| (*p, idx))
            .collect();
        if participants.is_empty() {
            continue;
        }
        if participants.len() < 2 {
            report.warnings.push(Warning::new(
                "too-few-raters",
                format!("attribute {attribute} has fewer than two participants; exclusion skipped"),
            ));
            report.retained_count += participants.len();
            continue;
        }
        let consensus = per_material_means(
            ratings,
            participants.iter().flat_map(|(_, idx)| idx.iter().copied()),
        );
        for (participant, idx) in participants {
            let own = per_material_means(ratings, idx.iter().copied());
            let (x, y): (Vec<f64>, Vec<f64>) =
                own.iter().map(|(m, v)| (*v, consensus[m])).unzip();
            if x.len() < 2 {
                report.retained_count += 1;
                continue;
            }
            let r = pearson_unchecked(&x, &y);
            if r < 0.0 {
                report.excluded.push(ExcludedRater {
                    participant_id: participant.to_string(),
                    attribute_id: attribute,
                    correlation: r,
                });
                dropped.insert((participant, attribute));
            } else {
                report.retained_count += 1;
            }
        }
    }

    let kept = ratings
        .iter()
        .filter(|r| !dropped.contains(&(r.participant_id.as_str(), r.attribute_id)))
        .cloned()
        .collect();
    Ok((kept, report))
}

/// Per-(material, attribute) means with standard errors. `None` marks a cell
/// without ratings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanTable {
    pub material_ids: Vec<MaterialId>,
    pub means: Vec<[Option<f64>; ATTRIBUTE_COUNT]>,
    pub stderr: Vec<[Option<f64>; ATTRIBUTE_COUNT]>,
    pub counts: Vec<[usize; ATTRIBUTE_COUNT]>,
}

impl MeanTable {
    /// `(material_id, attribute_id)` pairs with no ratings.
    pub fn missing(&self) -> Vec<(MaterialId, u8)> {
        let mut out = Vec::new();
        for (id, row) in self.material_ids.iter().zip(&self.means) {
            for (a, cell) in row.iter().enumerate() {
                if cell.is_none() {
                    out.push((id.clone(), a as u8 + 1));
                }
            }
        }
        out
    }
}

pub fn aggregate(ratings: &[RawRating]) -> Result<MeanTable> {
    let mut cells: BTreeMap<&MaterialId, [Vec<f64>; ATTRIBUTE_COUNT]> = BTreeMap::new();
    for r in ratings {
        let a = attribute_index(r.attribute_id)?;
        cells.entry(&r.material_id).or_default()[a].push(r.value);
    }
    let mut table = MeanTable {
        material_ids: Vec::with_capacity(cells.len()),
        means: Vec::with_capacity(cells.len()),
        stderr: Vec::with_capacity(cells.len()),
        counts: Vec::with_capacity(cells.len()),
    };
    for (id, row) in cells {
        table.material_ids.push(id.clone());
        let mut means = [None; ATTRIBUTE_COUNT];
        let mut se = [None; ATTRIBUTE_COUNT];
        let mut counts = [0; ATTRIBUTE_COUNT];
        for (a, vals) in row.iter().enumerate() {
            counts[a] = vals.len();
            if vals.is_empty() {
                continue;
            }
            means[a] = Some(mean(vals));
            se[a] = Some(sample_std(vals) / (vals.len() as f64).sqrt());
        }
        table.means.push(means);
        table.stderr.push(se);
        table.counts.push(counts);
    }
    Ok(table)
}

/// Maps each attribute column affinely from `[min, max]` onto `[-1, 1]`.
pub fn rescale(table: &MeanTable) -> Result<(Vec<Fingerprint>, Vec<Warning>)> {
    let missing = table.missing();
    if !missing.is_empty() {
        let (id, a) = &missing[0];
        return Err(Error::invalid(format!(
            "{} empty cells (first: material '{id}', attribute {a})",
            missing.len()
        )));
    }
    let n = table.material_ids.len();
    let mut values = vec![[0.0; ATTRIBUTE_COUNT]; n];
    let mut stderr = vec![[0.0; ATTRIBUTE_COUNT]; n];
    let mut warnings = Vec::new();
    for a in 0..ATTRIBUTE_COUNT {
        let col: Vec<f64> = table.means.iter().map(|row| row[a].unwrap()).collect();
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        if !(span > 0.0) {
            warnings.push(Warning::new(
                "constant-attribute",
                format!("attribute {} is constant across materials; mapped to 0", a + 1),
            ));
            continue;
        }
        for i in 0..n {
            values[i][a] = (2.0 * (col[i] - lo) / span - 1.0).clamp(-1.0, 1.0);
            stderr[i][a] = table.stderr[i][a].unwrap_or(0.0) * 2.0 / span;
        }
    }
    let fps = table
        .material_ids
        .iter()
        .zip(values.into_iter().zip(stderr))
        .map(|(id, (v, se)): (_, (Values, Values))| {
            Fingerprint::new(id.clone(), v)?.with_stderr(se)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((fps, warnings))
}

/// Result of running the whole ratings pipeline.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub fingerprints: Vec<Fingerprint>,
    pub table: MeanTable,
    pub report: ExclusionReport,
    pub warnings: Vec<Warning>,
}

pub fn run_pipeline(ratings: &[RawRating]) -> Result<PipelineOutput> {
    let (normalized, mut warnings) = zscore_per_participant(ratings)?;
    let (kept, report) = exclude_raters(&normalized)?;
    let table = aggregate(&kept)?;
    let (fingerprints, w) = rescale(&table)?;
    warnings.extend(w);
    Ok(PipelineOutput {
        fingerprints,
        table,
        report,
        warnings,
    })
}

/// Fleiss' kappa for a subjects × categories matrix of rater counts.
pub fn fleiss_kappa(counts: &[Vec<u32>]) -> Result<f64> {
    let first = counts
        .first()
        .ok_or_else(|| Error::invalid("fleiss_kappa: no subjects"))?;
    let categories = first.len();
    let raters: u32 = first.iter().sum();
    if raters < 2 {
        return Err(Error::invalid("fleiss_kappa: need at least two raters per subject"));
    }
    for (i, row) in counts.iter().enumerate() {
        if row.len() != categories {
            return Err(Error::invalid(format!("fleiss_kappa: row {i} has {} categories, expected {categories}", row.len())));
        }
        let s: u32 = row.iter().sum();
        if s != raters {
            return Err(Error::invalid(format!(
                "fleiss_kappa: row {i} sums to {s}, expected {raters}"
            )));
        }
    }
    let n = raters as f64;
    let subjects = counts.len() as f64;
    let p_bar = counts
        .iter()
        .map(|row| {
            let sq: f64 = row.iter().map(|&c| (c as f64) * (c as f64)).sum();
            (sq - n) / (n * (n - 1.0))
        })
        .sum::<f64>()
        / subjects;
    let p_e: f64 = (0..categories)
        .map(|j| {
            let pj = counts.iter().map(|row| row[j] as f64).sum::<f64>() / (subjects * n);
            pj * pj
        })
        .sum();
    if p_e >= 1.0 {
        // every rating landed in one category
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub attribute_name: String,
    /// Naming frequency.
    pub frequency: f64,
    /// Average rank at which the attribute was named.
    pub mean_rank: f64,
    pub importance: f64,
}

/// `frequency * (max(mean_rank) - mean_rank)`, sorted by importance descending (stable).
pub fn attribute_importance(entries: &[(String, f64, f64)]) -> Result<Vec<ImportanceEntry>> {
    if let Some((name, ..)) = entries.iter().find(|(_, f, _)| !(*f >= 0.0)) {
        return Err(Error::invalid(format!("attribute '{name}' has negative frequency")));
    }
    let max_rank = entries
        .iter()
        .map(|(_, _, r)| *r)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<ImportanceEntry> = entries
        .iter()
        .map(|(name, f, r)| ImportanceEntry {
            attribute_name: name.clone(),
            frequency: *f,
            mean_rank: *r,
            importance: f * (max_rank - r),
        })
        .collect();
    out.sort_by(|a, b| b.importance.total_cmp(&a.importance));
    Ok(out)
}
