use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::Warning;
use crate::fingerprint::MaterialId;
use crate::{Error, Result};

/// Disjoint train/test partition stratified by category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ids: Vec<MaterialId>,
    pub test_ids: Vec<MaterialId>,
    pub ratio: f64,
    pub stratify_by: String,
}

/// Draws `round(ratio * count)` test materials per category (at least one
/// when the category has two or more members, never all of them).
pub fn stratified_split(
    materials: &[(MaterialId, String)],
    ratio: f64,
    seed: u64,
) -> Result<(SplitSpec, Vec<Warning>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut by_cat: BTreeMap<&str, Vec<&MaterialId>> = BTreeMap::new();
    for (id, cat) in materials {
        by_cat.entry(cat.as_str()).or_default().push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warnings = Vec::new();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (cat, mut ids) in by_cat {
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("duplicate material id in category '{cat}'")));
        }
        let count = ids.len();
        if count == 1 {
            warnings.push(Warning::new(
                "singleton-category",
                format!("category '{cat}' has one member; kept in the training set"),
            ));
            train.push(ids[0].clone());
            continue;
        }
        let n_test = ((ratio * count as f64).round() as usize).clamp(1, count - 1);
        ids.shuffle(&mut rng);
        test.extend(ids[..n_test].iter().map(|id| (*id).clone()));
        train.extend(ids[n_test..].iter().map(|id| (*id).clone()));
    }
    train.sort();
    test.sort();
    Ok((
        SplitSpec {
            train_ids: train,
            test_ids: test,
            ratio,
            stratify_by: "category".into(),
        },
        warnings,
    ))
}
