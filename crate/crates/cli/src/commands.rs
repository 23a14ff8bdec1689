//! One function per subcommand. Each reads its inputs, calls into the core
//! crate and writes its outputs; nothing here holds state between calls.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use matprint_core::eval::{build_validation_trials, evaluate, write_per_attribute_csv, EvalReport};
use matprint_core::features::{
    canonicalize_frame, extract_stat_features, near_specular_frame_index, CaptureSource, FramePair,
    NON_SPECULAR_FRAME, STAT_SPEC_ID, VIDEO_FRAMES,
};
use matprint_core::imaging::RgbImage;
use matprint_core::mds::classical_mds;
use matprint_core::mfx::{load_mfx, save_mfx, FeatureTable, FeatureVariant, MaterialFeatures, EMBEDDING_EXTRACTOR_ID};
use matprint_core::model::{checkpoint, mlp_train_samples, stratified_split, AugmentationPolicy, MlpModel, MlpSpec, TrainConfig, TrainingSample, VariantInfo};
use matprint_core::ratings::{read_ratings_csv, run_pipeline};
use matprint_core::service::{predict_fingerprint, retrieve_hits, PredictInput, Prediction, RetrievalHit, RetrieveQuery, ServiceState};
use matprint_core::{similarity_matrix, Database, Error, Fingerprint, MaterialId, MaterialRecord, Result, SimilarityParams};
use serde::Serialize;

/// Pretty JSON to `out`, or to stdout.
pub fn write_json<T: Serialize + ?Sized>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    match out {
        Some(path) => fs::write(path, text + "\n").map_err(|e| Error::io(path, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// `material_id,category` rows.
fn read_categories(path: &Path) -> Result<BTreeMap<MaterialId, String>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = BTreeMap::new();
    for row in reader.deserialize::<(String, String)>() {
        let (id, category) = row.map_err(|e| csv_error(path, e))?;
        out.insert(MaterialId::new(id), category);
    }
    Ok(out)
}

#[derive(Serialize)]
struct IngestReport<'a> {
    materials: usize,
    exclusion: &'a matprint_core::ratings::ExclusionReport,
    warnings: &'a [matprint_core::Warning],
}

pub fn ingest_ratings(csv_path: &Path, out: &Path, categories: Option<&Path>, report: Option<&Path>) -> Result<Database> {
    let ratings = read_ratings_csv(csv_path)?;
    let pipeline = run_pipeline(&ratings)?;
    for w in &pipeline.warnings {
        log::warn!("{}: {}", w.code, w.message);
    }
    let labels = match categories {
        Some(p) => read_categories(p)?,
        None => BTreeMap::new(),
    };
    let records = pipeline
        .fingerprints
        .iter()
        .map(|fp| {
            let category = labels.get(&fp.material_id).map_or("other", String::as_str);
            MaterialRecord::new(category, fp.clone())
        })
        .collect();
    let mut db = Database::new(records);
    db.validate(&Default::default())?;
    db.compute_typicality(SimilarityParams::default())?;
    db.save(out)?;
    if let Some(path) = report {
        let r = IngestReport {
            materials: db.materials.len(),
            exclusion: &pipeline.report,
            warnings: &pipeline.warnings,
        };
        write_json(&r, Some(path))?;
    }
    log::info!(
        "{} fingerprints, {} rater groups excluded",
        db.materials.len(),
        pipeline.report.excluded.len()
    );
    Ok(db)
}

fn frame_file(dir: &Path, index: usize) -> Result<PathBuf> {
    ["png", "jpg", "jpeg"]
        .iter()
        .map(|ext| dir.join(format!("frame_{index:03}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::invalid(format!("{} has no frame_{index:03}.png or .jpg", dir.display())))
}

fn is_frame_dir(dir: &Path) -> bool {
    frame_file(dir, NON_SPECULAR_FRAME).is_ok()
}

/// Material directories under `root`: `root` itself when it holds frames,
/// otherwise each subdirectory, sorted by name.
fn material_dirs(root: &Path) -> Result<Vec<(MaterialId, PathBuf)>> {
    let name = |p: &Path| MaterialId::new(p.file_name().map_or(String::new(), |n| n.to_string_lossy().into_owned()));
    if is_frame_dir(root) {
        return Ok(vec![(name(root), root.to_path_buf())]);
    }
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() {
            dirs.push((name(&path), path));
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::invalid(format!("{} holds no frame directories", root.display())));
    }
    Ok(dirs)
}

/// Feature rows for one capture directory: the canonical pair and, with
/// azimuth jitter, pairs whose near-specular frame is shifted.
pub fn material_features(dir: &Path, id: MaterialId, offset_degrees: f64, jitter: Option<&AugmentationPolicy>) -> Result<MaterialFeatures> {
    let near = near_specular_frame_index(offset_degrees)?;
    if near == NON_SPECULAR_FRAME {
        log::warn!("{id}: near-specular frame coincides with the non-specular frame");
    }
    let non_specular = canonicalize_frame(&RgbImage::load(frame_file(dir, NON_SPECULAR_FRAME)?)?)?;
    let mut frames = vec![("canonical".to_string(), near)];
    if let Some(policy) = jitter {
        for step in 1..=policy.max_frame_offset() as usize {
            if near + step <= VIDEO_FRAMES {
                frames.push((format!("az+{step}"), near + step));
            }
            if near > step && near - step != NON_SPECULAR_FRAME {
                frames.push((format!("az-{step}"), near - step));
            }
        }
    }
    let mut variants = Vec::with_capacity(frames.len());
    for (tag, index) in frames {
        let specular = canonicalize_frame(&RgbImage::load(frame_file(dir, index)?)?)?;
        let mut pair = FramePair::new(non_specular.clone(), specular, CaptureSource::GoniometerVideo)?;
        pair.frame_indices = Some((NON_SPECULAR_FRAME, index));
        let features = extract_stat_features(&pair)?;
        variants.push(FeatureVariant {
            tag,
            frame_indices: Some([NON_SPECULAR_FRAME as u32, index as u32]),
            values: features.values.iter().map(|&v| v as f32).collect(),
        });
    }
    Ok(MaterialFeatures { material_id: id, variants })
}

pub fn extract_stat(frames_dir: &Path, out: &Path, offset_degrees: f64, azimuth_jitter: bool) -> Result<FeatureTable> {
    let policy = AugmentationPolicy::statistical();
    let mut table = FeatureTable::new(STAT_SPEC_ID, matprint_core::features::STAT_DIMS);
    for (id, dir) in material_dirs(frames_dir)? {
        log::info!("extracting {id}");
        table
            .materials
            .push(material_features(&dir, id, offset_degrees, azimuth_jitter.then_some(&policy))?);
    }
    save_mfx(&table, out)?;
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelKind {
    /// Statistical image features, 28-16-16-16.
    S,
    /// Precomputed image embeddings, 1024-512-512-16.
    Clip,
}

impl ModelKind {
    fn extractor_id(self) -> &'static str {
        match self {
            ModelKind::S => STAT_SPEC_ID,
            ModelKind::Clip => EMBEDDING_EXTRACTOR_ID,
        }
    }

    fn spec(self) -> MlpSpec {
        match self {
            ModelKind::S => MlpSpec::statistical(),
            ModelKind::Clip => MlpSpec::embedding(),
        }
    }

    fn augmentation(self) -> AugmentationPolicy {
        match self {
            ModelKind::S => AugmentationPolicy::statistical(),
            ModelKind::Clip => AugmentationPolicy::embedding(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub test_ratio: Option<f64>,
    pub max_epochs: Option<usize>,
    pub learning_rate: Option<f64>,
}

pub fn train(features: &Path, db_path: &Path, kind: ModelKind, seed: u64, out: &Path, opts: &TrainOptions) -> Result<MlpModel> {
    let table = load_mfx(features)?;
    if table.extractor_id != kind.extractor_id() {
        return Err(Error::invalid(format!(
            "{} holds '{}' features, model spec needs '{}'",
            features.display(),
            table.extractor_id,
            kind.extractor_id()
        )));
    }
    let db = Database::load(db_path)?;
    let paired: Vec<(&MaterialRecord, &MaterialFeatures)> = db
        .materials
        .iter()
        .filter_map(|r| match table.get(&r.material_id) {
            Some(f) if !f.variants.is_empty() => Some((r, f)),
            _ => {
                log::warn!("{}: no feature rows, skipped", r.material_id);
                None
            }
        })
        .collect();

    let mut extra = BTreeMap::new();
    let train_ids = match opts.test_ratio {
        Some(ratio) => {
            let cats: Vec<(MaterialId, String)> = paired
                .iter()
                .map(|(r, _)| (r.material_id.clone(), r.category.clone()))
                .collect();
            let (split, warnings) = stratified_split(&cats, ratio, seed)?;
            for w in warnings {
                log::warn!("{}: {}", w.code, w.message);
            }
            let ids = split.train_ids.clone();
            extra.insert("split".to_string(), serde_json::to_value(&split).expect("split serializes"));
            Some(ids)
        }
        None => None,
    };
    let samples: Vec<TrainingSample> = paired
        .iter()
        .filter(|(r, _)| train_ids.as_ref().is_none_or(|ids| ids.contains(&r.material_id)))
        .map(|(r, f)| TrainingSample {
            rows: f.variants.iter().map(FeatureVariant::values_f64).collect(),
            variants: f.variants.iter().map(FeatureVariant::info).collect::<Vec<VariantInfo>>(),
            target: r.fingerprint.values,
        })
        .collect();

    let mut config = TrainConfig {
        seed,
        augmentation: kind.augmentation(),
        ..TrainConfig::default()
    };
    if let Some(e) = opts.max_epochs {
        config.max_epochs = e;
    }
    if let Some(lr) = opts.learning_rate {
        config.learning_rate = lr;
    }
    let (mut model, warnings) = mlp_train_samples(&kind.spec(), &samples, &config)?;
    for w in warnings {
        log::warn!("{}: {}", w.code, w.message);
    }
    model.feature_spec_id = kind.extractor_id().to_string();
    model.schema_version = db.schema.version.clone();
    let targets = samples.iter().flat_map(|s| s.target);
    model.train_fingerprint_range = targets.fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], v| [lo.min(v), hi.max(v)]);
    checkpoint::save(&model, extra, out)?;
    if let Some(s) = &model.summary {
        log::info!(
            "trained on {} materials, best epoch {} of {}, validation loss {:.5}",
            s.train_count,
            s.best_epoch,
            s.epochs_run,
            s.best_validation_loss
        );
    }
    Ok(model)
}

fn model_version(path: &Path) -> String {
    path.file_name().map_or_else(|| "model".into(), |n| n.to_string_lossy().into_owned())
}

/// State with no materials, for running a model outside the service.
fn model_state(model_path: &Path) -> Result<ServiceState> {
    let (model, _) = checkpoint::load(model_path)?;
    ServiceState::new(Database::new(Vec::new()), SimilarityParams::default())?.with_model(model, model_version(model_path))
}

/// Predicts from a non-specular and a near-specular photograph.
pub fn predict_images(model_path: &Path, non_specular: &Path, near_specular: &Path) -> Result<Prediction> {
    let state = model_state(model_path)?;
    let extractor_id = state.extractor_ids().next().map(str::to_string);
    let pair = FramePair::new(
        canonicalize_frame(&RgbImage::load(non_specular)?)?,
        canonicalize_frame(&RgbImage::load(near_specular)?)?,
        CaptureSource::Smartphone,
    )?;
    predict_fingerprint(&state, &PredictInput::Frames { extractor_id, pair })
}

/// Predicts one fingerprint per material in a feature file from its
/// canonical row. Categories are copied from `categories_from` when given.
pub fn predict_vectors(model_path: &Path, features: &Path, categories_from: Option<&Path>) -> Result<Database> {
    let state = model_state(model_path)?;
    let table = load_mfx(features)?;
    let reference = categories_from.map(Database::load).transpose()?;
    let mut records = Vec::with_capacity(table.materials.len());
    for m in &table.materials {
        let Some(row) = m.canonical() else { continue };
        let input = PredictInput::Vector {
            extractor_id: Some(table.extractor_id.clone()),
            values: row.values_f64(),
        };
        let p = predict_fingerprint(&state, &input)?;
        let fp = Fingerprint {
            material_id: m.material_id.clone(),
            ..p.fingerprint
        };
        let category = reference
            .as_ref()
            .and_then(|db| db.get(&m.material_id))
            .map_or_else(|| "other".to_string(), |r| r.category.clone());
        records.push(MaterialRecord::new(category, fp));
    }
    let mut db = Database::new(records);
    db.schema = reference.map_or(db.schema, |r| r.schema);
    Ok(db)
}

pub fn retrieve(db_path: &Path, query: &str, k: usize, alpha: f64) -> Result<Vec<RetrievalHit>> {
    let params = SimilarityParams::new(alpha)?;
    let state = ServiceState::new(Database::load(db_path)?, params)?;
    let path = Path::new(query);
    let q = if path.extension().is_some_and(|e| e == "json") && path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fp: Fingerprint = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        RetrieveQuery::Fingerprint(fp)
    } else {
        RetrieveQuery::MaterialId(MaterialId::new(query))
    };
    retrieve_hits(&state, &q, k, None)
}

pub fn eval(pred: &Path, gt: &Path, alpha: f64, param_count: usize, per_attribute: Option<&Path>) -> Result<EvalReport> {
    let gt_db = Database::load(gt)?;
    let report = evaluate(&Database::load(pred)?, &gt_db, SimilarityParams::new(alpha)?, param_count)?;
    if let Some(path) = per_attribute {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_per_attribute_csv(&report, &gt_db.schema, file)?;
    }
    Ok(report)
}

pub fn embed(db_path: &Path, out: &Path, alpha: f64, dims: usize) -> Result<()> {
    let db = Database::load(db_path)?;
    let coords = classical_mds(&similarity_matrix(&db.materials, SimilarityParams::new(alpha)?)?, dims)?;
    let mut w = csv::Writer::from_path(out).map_err(|e| csv_error(out, e))?;
    let header: Vec<String> = std::iter::once("material_id".to_string())
        .chain((1..=dims).map(|d| format!("dim{d}")))
        .collect();
    w.write_record(&header).map_err(|e| csv_error(out, e))?;
    for (i, rec) in db.materials.iter().enumerate() {
        let row: Vec<String> = std::iter::once(rec.material_id.to_string())
            .chain((0..dims).map(|d| coords[(i, d)].to_string()))
            .collect();
        w.write_record(&row).map_err(|e| csv_error(out, e))?;
    }
    w.flush().map_err(|e| Error::io(out, e))
}

pub fn trials(db_path: &Path, pred: &Path, seed: u64, alpha: f64, out: Option<&Path>) -> Result<()> {
    let trials = build_validation_trials(
        &Database::load(db_path)?,
        &Database::load(pred)?,
        seed,
        SimilarityParams::new(alpha)?,
    )?;
    write_json(&trials, out)
}

/// Builds the query state for `serve`.
pub fn service_state(db_path: &Path, models: &[PathBuf], alpha: f64) -> Result<ServiceState> {
    let mut state = ServiceState::new(Database::load(db_path)?, SimilarityParams::new(alpha)?)?;
    for path in models {
        let (model, _) = checkpoint::load(path)?;
        state = state.with_model(model, model_version(path))?;
    }
    Ok(state)
}

/// Flushes stdout so a supervising process sees a line at once.
pub fn announce(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}
