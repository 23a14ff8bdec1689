use std::path::Path;
use std::process::{Command, Output};

use matprint_core::imaging::RgbImage;
use matprint_core::mfx::{blob_path, save_mfx, FeatureTable, FeatureVariant, MaterialFeatures};
use matprint_core::model::{checkpoint, MlpModel, MlpSpec};
use matprint_core::ratings::{write_ratings_csv, RawRating};
use matprint_core::Database;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MATERIALS: usize = 30;

fn matprint(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matprint"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_ratings(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ratings = Vec::new();
    for p in 0..6 {
        let shift = rng.random_range(0.0..50.0);
        for m in 0..MATERIALS {
            for a in 1..=16u8 {
                let truth = ((m * 13 + a as usize * 5) as f64 * 0.37).sin();
                let v = shift + 20.0 * truth + rng.random_range(-1.0..1.0);
                ratings.push(RawRating::new(format!("p{p}"), format!("m{m:02}"), a, v));
            }
        }
    }
    write_ratings_csv(std::fs::File::create(dir.join("ratings.csv")).unwrap(), &ratings).unwrap();
    let cats: String = (0..MATERIALS)
        .map(|m| format!("m{m:02},{}\n", ["wood", "metal", "fabric"][m % 3]))
        .collect();
    std::fs::write(dir.join("categories.csv"), format!("material_id,category\n{cats}")).unwrap();
}

fn write_features(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut table = FeatureTable::new("S-v1", 28);
    table.materials = (0..MATERIALS)
        .map(|m| MaterialFeatures {
            material_id: format!("m{m:02}").into(),
            variants: vec![FeatureVariant {
                tag: "canonical".into(),
                frame_indices: None,
                values: (0..28).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            }],
        })
        .collect();
    save_mfx(&table, dir.join("feats.mfx")).unwrap();
}

fn write_frames(dir: &Path, material: &str, phase: f64) {
    let d = dir.join("frames").join(material);
    std::fs::create_dir_all(&d).unwrap();
    for i in 1..=60 {
        let img = RgbImage::from_fn(48, 40, |x, y| {
            let v = 0.5 + 0.3 * ((x as f64 * 0.4 + y as f64 * 0.1 + phase + i as f64 * 0.05).sin());
            [v, v * 0.9, 0.3]
        });
        img.save_png(d.join(format!("frame_{i:03}.png"))).unwrap();
    }
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_ratings(dir);
    write_features(dir);

    ok(&matprint(
        &["ingest-ratings", "ratings.csv", "-o", "db.mfdb", "--categories", "categories.csv", "--report", "ingest.json"],
        dir,
    ));
    let db = Database::load(dir.join("db.mfdb")).unwrap();
    assert_eq!(db.materials.len(), MATERIALS);
    assert_eq!(db.materials[1].category, "metal");
    assert!(db.materials.iter().all(|r| r.typicality.is_some()));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("ingest.json")).unwrap()).unwrap();
    assert_eq!(report["materials"], MATERIALS);

    ok(&matprint(
        &["train", "--features", "feats.mfx", "--db", "db.mfdb", "--spec", "s", "--seed", "3", "-o", "m.mfm", "--max-epochs", "40", "--test-ratio", "0.2"],
        dir,
    ));
    let (model, header) = checkpoint::load(dir.join("m.mfm")).unwrap();
    assert_eq!(model.feature_spec_id, "S-v1");
    assert_eq!(header.extra["split"]["test_ids"].as_array().unwrap().len(), 6);

    ok(&matprint(&["predict", "--model", "m.mfm", "--vector", "feats.mfx", "--db", "db.mfdb", "-o", "pred.mfdb"], dir));
    let pred = Database::load(dir.join("pred.mfdb")).unwrap();
    assert_eq!(pred.materials.len(), MATERIALS);
    assert!(pred.materials.iter().all(|r| r.fingerprint.values.iter().all(|v| v.abs() <= 1.0)));

    ok(&matprint(
        &["eval", "--pred", "pred.mfdb", "--gt", "db.mfdb", "-o", "report.json", "--per-attribute", "attrs.csv", "--model", "m.mfm"],
        dir,
    ));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["sample_count"], MATERIALS);
    assert_eq!(report["per_attribute_rci"].as_array().unwrap().len(), 16);
    assert_eq!(std::fs::read_to_string(dir.join("attrs.csv")).unwrap().lines().count(), 17);

    ok(&matprint(&["embed", "--db", "db.mfdb", "-o", "coords.csv"], dir));
    let coords = std::fs::read_to_string(dir.join("coords.csv")).unwrap();
    assert_eq!(coords.lines().next().unwrap(), "material_id,dim1,dim2");
    assert_eq!(coords.lines().count(), MATERIALS + 1);

    ok(&matprint(&["trials", "--db", "db.mfdb", "--pred", "pred.mfdb", "--seed", "5", "-o", "trials.json"], dir));
    let trials: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(dir.join("trials.json")).unwrap()).unwrap();
    assert_eq!(trials.len(), MATERIALS);
    assert_eq!(trials[0]["group_random"].as_array().unwrap().len(), 4);

    let hits: Vec<serde_json::Value> = serde_json::from_str(&ok(&matprint(&["retrieve", "--db", "db.mfdb", "--query", "m04", "-k", "3"], dir))).unwrap();
    assert_eq!(hits.len(), 3);
    assert!(hits.iter().all(|h| h["material_id"] != "m04"));

    let mut free = db.materials[4].fingerprint.clone();
    free.material_id = "probe".into();
    let fp = serde_json::to_string(&free).unwrap();
    std::fs::write(dir.join("q.json"), fp).unwrap();
    let by_fp: Vec<serde_json::Value> = serde_json::from_str(&ok(&matprint(&["retrieve", "--db", "db.mfdb", "--query", "q.json", "-k", "3"], dir))).unwrap();
    assert_eq!(by_fp[0]["material_id"], "m04");
    assert_eq!(by_fp[0]["score"], 1.0);
}

#[test]
fn extract_stat_reads_frame_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_frames(dir, "brick", 0.0);
    write_frames(dir, "cloth", 1.3);
    ok(&matprint(&["extract-stat", "frames", "-o", "stat.mfx", "--azimuth-jitter"], dir));
    let table = matprint_core::mfx::load_mfx(dir.join("stat.mfx")).unwrap();
    assert_eq!(table.dims, 28);
    let ids: Vec<&str> = table.materials.iter().map(|m| m.material_id.as_str()).collect();
    assert_eq!(ids, ["brick", "cloth"]);
    let tags: Vec<&str> = table.materials[0].variants.iter().map(|v| v.tag.as_str()).collect();
    assert_eq!(tags, ["canonical", "az+1", "az-1", "az+2", "az-2"]);
    assert_eq!(table.materials[0].variants[0].frame_indices, Some([30, 56]));

    ok(&matprint(&["extract-stat", "frames/brick", "-o", "one.mfx"], dir));
    let again = matprint_core::mfx::load_mfx(dir.join("one.mfx")).unwrap();
    assert_eq!(again.materials[0].variants[0], table.materials[0].variants[0]);
    assert_eq!(std::fs::read(blob_path(&dir.join("one.mfx"))).unwrap().len(), 28 * 4);
}

#[test]
fn predict_from_images() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_frames(dir, "a", 0.0);
    let mut model = MlpModel::init(&MlpSpec::statistical(), 1);
    model.feature_spec_id = "S-v1".into();
    checkpoint::save(&model, Default::default(), dir.join("s.mfm")).unwrap();
    let args = ["predict", "--model", "s.mfm", "--images", "frames/a/frame_030.png", "frames/a/frame_056.png"];
    let first = ok(&matprint(&args, dir));
    let p: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(p["extractor_id"], "S-v1");
    assert_eq!(p["model_version"], "s.mfm");
    let values = p["fingerprint"]["values"].as_array().unwrap();
    assert_eq!(values.len(), 16);
    assert!(values.iter().all(|v| v.as_f64().unwrap().abs() <= 1.0));
    assert_eq!(ok(&matprint(&args, dir)), first);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_ratings(dir);
    write_features(dir);
    write_frames(dir, "a", 0.0);
    ok(&matprint(&["ingest-ratings", "ratings.csv", "-o", "db.mfdb"], dir));

    let code = |args: &[&str]| matprint(args, dir).status.code().unwrap();
    assert_eq!(code(&["retrieve", "--db", "absent.mfdb", "--query", "m00"]), 2);
    assert_eq!(code(&["retrieve", "--db", "db.mfdb", "--query", "nope"]), 2);
    assert_eq!(code(&["retrieve", "--db", "db.mfdb", "--query", "m00", "--alpha", "1.5"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["train", "--features", "feats.mfx", "--db", "db.mfdb", "--spec", "clip", "-o", "c.mfm"]), 2);

    let mut clip = MlpModel::init(&MlpSpec::embedding(), 1);
    clip.feature_spec_id = "vitb32-concat".into();
    checkpoint::save(&clip, Default::default(), dir.join("clip.mfm")).unwrap();
    let sidecar = matprint(&["predict", "--model", "clip.mfm", "--images", "frames/a/frame_030.png", "frames/a/frame_056.png"], dir);
    assert_eq!(sidecar.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&sidecar.stderr).contains("sidecar"));

    std::fs::write(dir.join("bad.mfm"), b"nope").unwrap();
    assert_eq!(code(&["predict", "--model", "bad.mfm", "--vector", "feats.mfx"]), 4);
    let blob = blob_path(&dir.join("feats.mfx"));
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
    let truncated = matprint(&["train", "--features", "feats.mfx", "--db", "db.mfdb", "--spec", "s", "-o", "m.mfm"], dir);
    assert_eq!(truncated.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&truncated.stderr).contains("expected"));
}
