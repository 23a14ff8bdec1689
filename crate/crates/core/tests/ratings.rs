use std::collections::BTreeMap;
use std::path::Path;

use matprint_core::ratings::{
    aggregate, attribute_importance, exclude_raters, fleiss_kappa, parse_ratings_csv, rescale, run_pipeline,
    write_ratings_csv, zscore_per_participant, RawRating,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn panel(seed: u64, raters: usize, materials: usize, attributes: u8) -> Vec<RawRating> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for p in 0..raters {
        let (scale, shift) = (rng.random_range(5.0..30.0), rng.random_range(10.0..60.0));
        for a in 1..=attributes {
            for m in 0..materials {
                let truth = ((m * 31 + a as usize * 7) as f64 * 0.77).sin();
                out.push(RawRating::new(
                    format!("p{p:02}"),
                    format!("m{m:02}"),
                    a,
                    shift + scale * truth + rng.random_range(-0.5..0.5),
                ));
            }
        }
    }
    out
}

/// Fleiss' kappa written from the textbook definitions with explicit loops.
fn kappa_oracle(table: &[Vec<u32>]) -> f64 {
    let n_sub = table.len();
    let k = table[0].len();
    let n: u32 = table[0].iter().sum();
    let mut p_i = vec![0.0; n_sub];
    for i in 0..n_sub {
        let mut agree = 0.0;
        for j in 0..k {
            let c = table[i][j] as f64;
            agree += c * (c - 1.0);
        }
        p_i[i] = agree / (n as f64 * (n as f64 - 1.0));
    }
    let mut p_j = vec![0.0; k];
    for j in 0..k {
        for row in table {
            p_j[j] += row[j] as f64;
        }
        p_j[j] /= (n_sub as u32 * n) as f64;
    }
    let pbar = p_i.iter().sum::<f64>() / n_sub as f64;
    let pe: f64 = p_j.iter().map(|p| p * p).sum();
    (pbar - pe) / (1.0 - pe)
}

#[test]
fn zscore_moments_per_group() {
    let (z, warnings) = zscore_per_participant(&panel(1, 6, 20, 3)).unwrap();
    assert!(warnings.is_empty());
    let mut groups: BTreeMap<(String, u8), Vec<f64>> = BTreeMap::new();
    for r in &z {
        groups.entry((r.participant_id.clone(), r.attribute_id)).or_default().push(r.value);
    }
    for values in groups.values() {
        let n = values.len() as f64;
        let m = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
    }
}

#[test]
fn constant_rater_becomes_zero_with_warning() {
    let mut ratings = panel(2, 3, 5, 1);
    for r in ratings.iter_mut().filter(|r| r.participant_id == "p01") {
        r.value = 42.0;
    }
    let (z, warnings) = zscore_per_participant(&ratings).unwrap();
    assert_eq!(warnings.len(), 1);
    assert!(z.iter().filter(|r| r.participant_id == "p01").all(|r| r.value == 0.0));
}

#[test]
fn sign_flipped_rater_is_excluded() {
    let mut ratings = panel(3, 8, 15, 2);
    for r in ratings.iter_mut().filter(|r| r.participant_id == "p05") {
        r.value = -r.value;
    }
    let (z, _) = zscore_per_participant(&ratings).unwrap();
    let (kept, report) = exclude_raters(&z).unwrap();
    let excluded: Vec<_> = report.excluded.iter().map(|e| (e.participant_id.as_str(), e.attribute_id)).collect();
    assert_eq!(excluded, [("p05", 1), ("p05", 2)]);
    assert!(kept.iter().all(|r| r.participant_id != "p05"));
    assert_eq!(report.retained_count, 7 * 2);
}

#[test]
fn aggregate_matches_direct_means() {
    let ratings = panel(4, 5, 6, 16);
    let table = aggregate(&ratings).unwrap();
    for (mi, id) in table.material_ids.iter().enumerate() {
        for a in 1..=16u8 {
            let vals: Vec<f64> = ratings
                .iter()
                .filter(|r| &r.material_id == id && r.attribute_id == a)
                .map(|r| r.value)
                .collect();
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let se = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt();
            let cell = table.means[mi][a as usize - 1].unwrap();
            assert!((cell - m).abs() < 1e-12);
            assert!((table.stderr[mi][a as usize - 1].unwrap() - se).abs() < 1e-12);
        }
    }
}

#[test]
fn rescale_spans_unit_interval() {
    let out = run_pipeline(&panel(6, 5, 12, 16)).unwrap();
    for a in 0..16 {
        let col: Vec<f64> = out.fingerprints.iter().map(|f| f.values[a]).collect();
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((lo + 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
    }
}

#[test]
fn rescale_reports_missing_cells() {
    let ratings = panel(7, 3, 4, 1);
    let table = aggregate(&ratings).unwrap();
    assert_eq!(table.missing().len(), 4 * 15);
    assert!(rescale(&table).is_err());
}

#[test]
fn csv_round_trip() {
    let ratings = panel(9, 2, 3, 2);
    let mut buf = Vec::new();
    write_ratings_csv(&mut buf, &ratings).unwrap();
    let back = parse_ratings_csv(buf.as_slice(), Path::new("r.csv")).unwrap();
    assert_eq!(back, ratings);
    let bad = "participant_id,material_id,value\np,m,1\n";
    assert_eq!(parse_ratings_csv(bad.as_bytes(), Path::new("r.csv")).unwrap_err().exit_code(), 4);
    let bad_attr = "participant_id,material_id,attribute_id,value\np,m,17,1\n";
    assert_eq!(parse_ratings_csv(bad_attr.as_bytes(), Path::new("r.csv")).unwrap_err().exit_code(), 2);
}

#[test]
fn kappa_fixtures() {
    assert_eq!(fleiss_kappa(&[vec![5, 0], vec![0, 5], vec![5, 0]]).unwrap(), 1.0);
    assert_eq!(fleiss_kappa(&[vec![4, 0, 0], vec![4, 0, 0]]).unwrap(), 1.0);
    // textbook example: 10 subjects, 14 raters, 5 categories
    let table = vec![
        vec![0, 0, 0, 0, 14],
        vec![0, 2, 6, 4, 2],
        vec![0, 0, 3, 5, 6],
        vec![0, 3, 9, 2, 0],
        vec![2, 2, 8, 1, 1],
        vec![7, 7, 0, 0, 0],
        vec![3, 2, 6, 3, 0],
        vec![2, 5, 3, 2, 2],
        vec![6, 5, 2, 1, 0],
        vec![0, 2, 2, 3, 7],
    ];
    let k = fleiss_kappa(&table).unwrap();
    assert!((k - 0.20993).abs() < 1e-5, "{k}");
    assert!((k - kappa_oracle(&table)).abs() < 1e-12);
    // adversarial: systematic disagreement drives kappa below zero
    let split = vec![vec![1, 1], vec![1, 1], vec![1, 1]];
    assert!((fleiss_kappa(&split).unwrap() - kappa_oracle(&split)).abs() < 1e-12);
    assert!(fleiss_kappa(&split).unwrap() < 0.0);
    assert!(fleiss_kappa(&[vec![2, 1], vec![1, 1]]).is_err());
    assert!(fleiss_kappa(&[]).is_err());
}

#[test]
fn importance_ordering() {
    let entries = vec![
        ("glossy".to_string(), 0.5, 2.0),
        ("rough".to_string(), 0.9, 1.0),
        ("soft".to_string(), 0.2, 3.0),
        ("warm".to_string(), 0.9, 1.0),
    ];
    let out = attribute_importance(&entries).unwrap();
    let names: Vec<_> = out.iter().map(|e| e.attribute_name.as_str()).collect();
    assert_eq!(names, ["rough", "warm", "glossy", "soft"]);
    assert!((out[0].importance - 1.8).abs() < 1e-12);
    assert_eq!(out[3].importance, 0.0);
}

proptest! {
    #[test]
    fn kappa_matches_oracle(seed in any::<u64>(), subjects in 2usize..8, cats in 2usize..5, raters in 2u32..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table: Vec<Vec<u32>> = (0..subjects)
            .map(|_| {
                let mut row = vec![0u32; cats];
                for _ in 0..raters {
                    row[rng.random_range(0..cats)] += 1;
                }
                row
            })
            .collect();
        let totals: Vec<u32> = (0..cats).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        prop_assume!(totals.iter().filter(|t| **t > 0).count() > 1);
        let k = fleiss_kappa(&table).unwrap();
        prop_assert!((k - kappa_oracle(&table)).abs() < 1e-9);
    }

    #[test]
    fn zscore_is_affine_invariant(scale in 0.1f64..50.0, shift in -100.0f64..100.0) {
        let base = panel(10, 2, 8, 1);
        let moved: Vec<RawRating> = base.iter().map(|r| RawRating { value: scale * r.value + shift, ..r.clone() }).collect();
        let (a, _) = zscore_per_participant(&base).unwrap();
        let (b, _) = zscore_per_participant(&moved).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.value - y.value).abs() < 1e-9);
        }
    }
}
