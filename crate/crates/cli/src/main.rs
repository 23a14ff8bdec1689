use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use matprint_cli::commands::{self, TrainOptions};
use matprint_cli::ModelKind;
use matprint_core::features::DEFAULT_SPECULAR_OFFSET_DEGREES;
use matprint_core::{Error, Result};

#[derive(Parser)]
#[command(name = "matprint", version, about = "Perceptual material fingerprints: ratings, features, models, retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn raw ratings into a fingerprint database.
    IngestRatings {
        csv: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// CSV of `material_id,category`; unlisted materials get `other`.
        #[arg(long)]
        categories: Option<PathBuf>,
        /// Write the exclusion report and warnings as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Statistical features for one capture directory or a directory of them.
    ExtractStat {
        frames_dir: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SPECULAR_OFFSET_DEGREES)]
        specular_offset: f64,
        /// Add near-specular rows shifted by up to the azimuth jitter.
        #[arg(long)]
        azimuth_jitter: bool,
    },
    /// Fit a model that maps features to fingerprints.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long, value_enum)]
        spec: ModelKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
        /// Hold out this share of each category; the split is stored in the checkpoint.
        #[arg(long)]
        test_ratio: Option<f64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Predict fingerprints from two photographs or from a feature file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Non-specular then near-specular image.
        #[arg(long, num_args = 2, value_names = ["NON_SPECULAR", "NEAR_SPECULAR"], conflicts_with = "vector", required_unless_present = "vector")]
        images: Option<Vec<PathBuf>>,
        #[arg(long)]
        vector: Option<PathBuf>,
        /// Copy categories from this database into the predicted one.
        #[arg(long, requires = "vector")]
        db: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Most similar materials to a stored material or a fingerprint JSON file.
    Retrieve {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(short, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
    /// Compare predicted fingerprints with ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Per-attribute top-5 overlap and rank correlation as CSV.
        #[arg(long)]
        per_attribute: Option<PathBuf>,
        /// Free parameters for the information criterion; read from a checkpoint with --model.
        #[arg(long, conflicts_with = "model")]
        param_count: Option<usize>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
    /// Classical MDS coordinates of the similarity matrix.
    Embed {
        #[arg(long)]
        db: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        dims: usize,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
    /// Validation trial groups for every predicted material.
    Trials {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
    /// Serve the query API.
    Serve {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        model: Vec<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::IngestRatings { csv, out, categories, report } => {
            let db = commands::ingest_ratings(&csv, &out, categories.as_deref(), report.as_deref())?;
            println!("wrote {} fingerprints to {}", db.materials.len(), out.display());
        }
        Command::ExtractStat { frames_dir, out, specular_offset, azimuth_jitter } => {
            let table = commands::extract_stat(&frames_dir, &out, specular_offset, azimuth_jitter)?;
            println!("wrote {} rows for {} materials to {}", table.row_count(), table.materials.len(), out.display());
        }
        Command::Train { features, db, spec, seed, out, test_ratio, max_epochs, learning_rate } => {
            let opts = TrainOptions { test_ratio, max_epochs, learning_rate };
            commands::train(&features, &db, spec, seed, &out, &opts)?;
            println!("wrote {}", out.display());
        }
        Command::Predict { model, images, vector, db, out } => match (images, vector) {
            (Some(images), _) => {
                let p = commands::predict_images(&model, &images[0], &images[1])?;
                commands::write_json(&p, out.as_deref())?;
            }
            (None, Some(vector)) => {
                let preds = commands::predict_vectors(&model, &vector, db.as_deref())?;
                match out {
                    Some(path) => preds.save(&path)?,
                    None => commands::write_json(&preds, None)?,
                }
            }
            (None, None) => return Err(Error::invalid("give --images or --vector")),
        },
        Command::Retrieve { db, query, k, alpha } => {
            commands::write_json(&commands::retrieve(&db, &query, k, alpha)?, None)?;
        }
        Command::Eval { pred, gt, out, per_attribute, param_count, model, alpha } => {
            let k = match model {
                Some(path) => matprint_core::model::checkpoint::load(&path)?.0.param_count(),
                None => param_count.unwrap_or(0),
            };
            let report = commands::eval(&pred, &gt, alpha, k, per_attribute.as_deref())?;
            commands::write_json(&report, out.as_deref())?;
        }
        Command::Embed { db, out, dims, alpha } => commands::embed(&db, &out, alpha, dims)?,
        Command::Trials { db, pred, seed, out, alpha } => commands::trials(&db, &pred, seed, alpha, out.as_deref())?,
        Command::Serve { db, model, host, port, alpha } => {
            let state = Arc::new(commands::service_state(&db, &model, alpha)?);
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| Error::invalid(format!("bad listen address '{host}:{port}': {e}")))?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| Error::io(addr.to_string(), e))?;
                let bound = listener.local_addr().map_err(|e| Error::io(addr.to_string(), e))?;
                commands::announce(&format!("listening on http://{bound}"));
                matprint_cli::serve(state, listener).await.map_err(|e| Error::io(bound.to_string(), e))
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
