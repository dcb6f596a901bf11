//! `shsnet`: data generation, normal estimation, orientation, training and
//! evaluation from the command line.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 missing artifact, 5 algorithmic
//! failure.

mod error;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use shs_core::autodiff::grad_check_report;
use shs_core::classical::{jet_normals, mst_orient, pca_normals};
use shs_core::eval::{majority_flip, write_heatmap_csv, EvalReport};
use shs_core::geometry::{
    add_noise, apply_density, generate_shape, load_normals, load_xyz, save_normals, save_xyz, Density, KdIndex,
    PointCloud, ShapeKind, Vec3,
};
use shs_core::model::{forward, load_checkpoint, predict_many, save_checkpoint, ModelConfig, ModelParams, ParamVars};
use shs_core::training::{
    batch_loss, parse_run_config, train_with, write_history_csv, RunConfig, TrainError, TrainingBatch,
    TrainingSample, TrainingShape, LAMBDA,
};

use error::CliError;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "shsnet", version, about = "Oriented normal estimation for point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic shape with ground-truth oriented normals.
    GenData(GenData),
    /// Estimate normals with a classical method or a trained network.
    Estimate(Estimate),
    /// Orient unoriented normals by minimum-spanning-tree propagation.
    Orient(Orient),
    /// Train the network on every `.xyz` file of a directory.
    Train(Train),
    /// Compare predicted normals with ground truth.
    Eval(Eval),
    /// Check network gradients against finite differences on a tiny config.
    GradCheck(GradCheck),
}

#[derive(Debug, Args)]
struct GenData {
    #[arg(long)]
    shape: ShapeKind,
    #[arg(long, default_value_t = 5000)]
    n: usize,
    /// Gaussian noise as a fraction of the bounding-box diagonal.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value = "none")]
    density: Density,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Pca,
    Jet,
    Shs,
}

#[derive(Debug, Args)]
struct Estimate {
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Neighborhood size of the classical methods.
    #[arg(long, default_value_t = 32)]
    k: usize,
    /// Jet order.
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Required for `--method shs`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Queries per network forward pass.
    #[arg(long, default_value_t = 32)]
    batch: usize,
}

#[derive(Debug, Args)]
struct Orient {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    normals: PathBuf,
    #[arg(long, default_value_t = 10)]
    k_graph: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Train {
    /// `key = value` settings on top of the desk defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out_checkpoint: PathBuf,
    /// Loss history CSV; defaults to the checkpoint path with `.loss.csv`.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Eval {
    /// Predicted `.normals` file.
    #[arg(long)]
    pred: PathBuf,
    /// Ground truth: a 6-column `.xyz` or a `.normals` file.
    #[arg(long)]
    gt: PathBuf,
    /// Report oriented RMSE as the headline metric.
    #[arg(long)]
    oriented: bool,
    /// Negate all predictions when most point away from the ground truth.
    #[arg(long)]
    majority_flip: bool,
    /// Write the full report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-point `x,y,z,error_degrees` CSV; needs an `.xyz` ground truth.
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradCheck {
    #[arg(long, default_value_t = 11)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Query point of the single-sample batch.
    #[arg(long, default_value_t = 50)]
    query: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Estimate(a) => estimate(a),
        Command::Orient(a) => orient(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::GradCheck(a) => grad_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn read_cloud(path: &Path) -> Result<PointCloud> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(format!("{}: no such file", path.display())));
    }
    load_xyz(path).map_err(|e| CliError::io(path, e))
}

fn read_normals(path: &Path) -> Result<Vec<Vec3>> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(format!("{}: no such file", path.display())));
    }
    load_normals(path).map_err(|e| CliError::io(path, e))
}

fn gen_data(a: GenData) -> Result<()> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let cloud = generate_shape(a.shape, a.n, a.seed);
    let cloud = apply_density(&cloud, a.density, a.seed.wrapping_add(1))?;
    let cloud = add_noise(&cloud, a.noise, a.seed.wrapping_add(2))?;
    save_xyz(&a.out, &cloud).map_err(|e| CliError::io(&a.out, e))?;
    println!("wrote {} points to {}", cloud.len(), a.out.display());
    Ok(())
}

fn estimate(a: Estimate) -> Result<()> {
    let cloud = read_cloud(&a.input)?;
    let normals = match a.method {
        Method::Pca | Method::Jet => {
            if a.checkpoint.is_some() {
                return Err(CliError::Usage("--checkpoint applies to --method shs only".into()));
            }
            if a.k < 3 || a.k > cloud.len() {
                return Err(CliError::Usage(format!("--k must be in 3..={}", cloud.len())));
            }
            let kd = KdIndex::new(&cloud);
            match a.method {
                Method::Pca => pca_normals(&cloud, &kd, a.k)?,
                _ => jet_normals(&cloud, &kd, a.k, a.order)?,
            }
        }
        Method::Shs => {
            let path = a
                .checkpoint
                .ok_or_else(|| CliError::MissingArtifact("--method shs requires --checkpoint".into()))?;
            if !path.exists() {
                return Err(CliError::MissingArtifact(format!("{}: no such checkpoint", path.display())));
            }
            let params = load_checkpoint(&path)?;
            let kd = KdIndex::new(&cloud);
            let queries: Vec<usize> = (0..cloud.len()).collect();
            predict_many(&cloud, &kd, &queries, &params, a.seed, a.batch)?
                .into_iter()
                .map(|p| p.oriented)
                .collect()
        }
    };
    save_normals(&a.out, &normals).map_err(|e| CliError::io(&a.out, e))?;
    println!("wrote {} normals to {}", normals.len(), a.out.display());
    Ok(())
}

fn orient(a: Orient) -> Result<()> {
    let cloud = read_cloud(&a.input)?;
    let normals = read_normals(&a.normals)?;
    let oriented = mst_orient(&cloud, &normals, a.k_graph)?;
    save_normals(&a.out, &oriented).map_err(|e| CliError::io(&a.out, e))?;
    println!("wrote {} oriented normals to {}", oriented.len(), a.out.display());
    Ok(())
}

fn train(a: Train) -> Result<()> {
    let run = match &a.config {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::MissingArtifact(format!("{}: no such config", path.display())));
            }
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            parse_run_config(&text)?
        }
        None => RunConfig::default(),
    };
    if !a.data_dir.is_dir() {
        return Err(CliError::MissingArtifact(format!("{}: no such directory", a.data_dir.display())));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&a.data_dir)
        .map_err(|e| CliError::io(&a.data_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "xyz"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::MissingArtifact(format!("{}: no .xyz files", a.data_dir.display())));
    }
    let shapes = files.iter().map(|f| read_cloud(f)).collect::<Result<Vec<_>>>()?;
    let params = ModelParams::new(run.model.clone(), run.train.seed)?;
    eprintln!(
        "training on {} shapes, {} parameters, {} epochs",
        shapes.len(),
        params.num_scalars(),
        run.train.epochs
    );
    let outcome = train_with(&shapes, params, &run.train, |s| {
        eprintln!("epoch {:>3}  lr {:.2e}  loss {:.6}  {:.1} s", s.epoch, s.lr, s.mean_loss, s.seconds);
    })?;
    save_checkpoint(&a.out_checkpoint, &outcome.params).map_err(|e| CliError::io(&a.out_checkpoint, e))?;
    let history = a.history.unwrap_or_else(|| a.out_checkpoint.with_extension("loss.csv"));
    let file = File::create(&history).map_err(|e| CliError::io(&history, e))?;
    write_history_csv(BufWriter::new(file), &outcome.history).map_err(|e| CliError::io(&history, e))?;
    println!("wrote {} and {}", a.out_checkpoint.display(), history.display());
    Ok(())
}

fn eval(a: Eval) -> Result<()> {
    let pred = read_normals(&a.pred)?;
    let (points, gt) = if a.gt.extension().is_some_and(|x| x == "normals") {
        (None, read_normals(&a.gt)?)
    } else {
        let cloud = read_cloud(&a.gt)?;
        let gt = cloud
            .normals()
            .ok_or_else(|| CliError::Usage(format!("{} has no normals", a.gt.display())))?
            .to_vec();
        (Some(cloud.points().to_vec()), gt)
    };
    let pred = if a.majority_flip { majority_flip(&pred, &gt) } else { pred };
    let report = EvalReport::new(&pred, &gt)?;
    match &a.report {
        Some(path) => fs::write(path, report.to_text()).map_err(|e| CliError::io(path, e))?,
        None => print!("{}", report.to_text()),
    }
    if let Some(path) = &a.heatmap {
        let points = points.ok_or_else(|| CliError::Usage("--heatmap needs an .xyz ground truth".into()))?;
        let mut w = BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?);
        write_heatmap_csv(&mut w, &points, &report.per_point_errors).map_err(|e| CliError::io(path, e))?;
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    let (kind, headline) = if a.oriented {
        ("oriented", report.rmse_oriented)
    } else {
        ("unoriented", report.rmse_unoriented)
    };
    eprintln!("{kind} RMSE {headline:.4} deg, AUC {:.4} over {} points", report.auc, gt.len());
    Ok(())
}

fn grad_check(a: GradCheck) -> Result<()> {
    let config = ModelConfig::tiny();
    let params = ModelParams::new(config.clone(), a.seed)?;
    let shape = TrainingShape::new(generate_shape(ShapeKind::Torus, 300, 4), 0)?;
    if a.query >= shape.cloud.len() {
        return Err(CliError::Usage(format!("--query must be below {}", shape.cloud.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let sample = TrainingSample::new(&shape, a.query, &config, &mut rng)?;
    let batch = TrainingBatch::from_samples(&[sample])?;
    let names = params.names();
    let tensors: Vec<_> = params.iter().map(|(_, t)| t.clone()).collect();
    let report = grad_check_report::<TrainError, _>(&tensors, a.step, |g, vars| {
        let p = ParamVars::from_vars(names.iter().cloned().zip(vars.iter().copied()));
        let out = forward(g, &p, &config, &batch.input)?;
        Ok(batch_loss(g, &out, &batch, LAMBDA, false)?.total)
    })?;
    let worst = report.worst.map(|(t, _)| names[t].as_str()).unwrap_or("-");
    println!(
        "checked {} scalars: max relative error {:.3e}, max absolute error {:.3e} (worst in {worst})",
        report.checked, report.max_relative_error, report.max_absolute_error
    );
    if report.max_relative_error >= 1e-3 {
        return Err(CliError::Algorithm(format!(
            "relative error {:.3e} exceeds 1e-3",
            report.max_relative_error
        )));
    }
    Ok(())
}
