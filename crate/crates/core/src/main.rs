use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use egs_core::io::checkpoint::{check_config, load_checkpoint};
use egs_core::io::colmap::{load_colmap, load_views, write_colmap};
use egs_core::io::dataset::scene_extent;
use egs_core::io::ply::save_ply;
use egs_core::io::synth::{generate_synthetic, SyntheticSceneSpec};
use egs_core::io::{load_model, ScenePoint};
use egs_core::metrics::{bench_render, psnr, ssim, PSNR_LOG_CAP};
use egs_core::prune::{mark_dominant, prune};
use egs_core::raster::{render_forward, RenderSettings};
use egs_core::sh::MAX_SH_ORDER;
use egs_core::train::{write_metrics_csv, Mode, TrainConfig, Trainer};
use egs_core::{CameraView, Error, GaussianPrimitive};

/// Gaussian splatting trainer and tools.
#[derive(Parser)]
#[command(name = "egs", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "EGS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (COLMAP text + PNG images).
    Synth {
        /// Scene spec (TOML); defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        force: Force,
    },
    /// Train a model; writes checkpoints, model.ply and metrics.csv.
    Train(TrainArgs),
    /// Render every camera of an images.txt (or dataset directory) to PNG.
    Render {
        /// PLY model or checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// COLMAP images.txt (cameras.txt alongside) or a dataset directory.
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        force: Force,
    },
    /// PSNR/SSIM over the held-out views.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Per-view CSV (default: <model>.eval.csv).
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        view_stride: usize,
        #[command(flatten)]
        force: Force,
    },
    /// Offline dominance pruning over the training views.
    Prune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        view_stride: usize,
        #[command(flatten)]
        force: Force,
    },
    /// Gaussian count, SH-order histogram, file size and extent.
    Info {
        #[arg(long)]
        model: PathBuf,
    },
    /// Render timing and blend-operation counts per held-out view.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
}

#[derive(Args)]
struct Force {
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// TOML config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long, default_value = "output")]
    out: PathBuf,
    /// Keep every N-th view of the dataset.
    #[arg(long, default_value_t = 1)]
    view_stride: usize,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Resume even if the checkpoint was written with another config.
    #[arg(long)]
    allow_config_mismatch: bool,
    #[command(flatten)]
    force: Force,
}

enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

type CliResult = std::result::Result<(), CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Divergence { .. }) { 3 } else { 2 })
        }
    }
}

/// Refuses to touch an existing file or non-empty directory unless forced.
fn check_output(path: &Path, force: &Force) -> CliResult {
    let occupied = match fs::read_dir(path) {
        Ok(mut d) => d.next().is_some(),
        Err(_) => path.exists(),
    };
    if occupied && !force.force {
        return Err(CliError::Usage(format!("{} exists (use --force to overwrite)", path.display())));
    }
    Ok(())
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| CliError::Run(Error::Io { path: path.to_path_buf(), source: e }))
}

fn create_parent(path: &Path) -> CliResult {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| CliError::Run(Error::Io { path: path.to_path_buf(), source: e }))
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Synth { spec, out, force } => {
            check_output(&out, &force)?;
            let spec = match spec {
                Some(p) => SyntheticSceneSpec::load(&p)?,
                None => SyntheticSceneSpec::default(),
            };
            let ds = generate_synthetic(&spec)?;
            create_dir(&out)?;
            write_colmap(&ds, &out)?;
            println!("wrote {} views and {} points to {}", ds.views.len(), ds.points.len(), out.display());
            Ok(())
        }
        Command::Train(args) => train(args),
        Command::Render { model, camera, out, force } => {
            check_output(&out, &force)?;
            let gs = load_model(&model)?;
            let images_txt = if camera.is_dir() { camera.join("images.txt") } else { camera };
            let views = load_views(&images_txt)?;
            create_dir(&out)?;
            let settings = RenderSettings::default();
            for v in &views {
                let img = render_forward(&gs, v, [0.0; 3], &settings).color;
                let name = Path::new(&v.name).with_extension("png");
                let path = out.join(name.file_name().unwrap_or(name.as_os_str()));
                img.save_png(&path)?;
            }
            println!("rendered {} views to {}", views.len(), out.display());
            Ok(())
        }
        Command::Evaluate { model, data, csv, view_stride, force } => {
            let csv = csv.unwrap_or_else(|| {
                let mut p = model.clone().into_os_string();
                p.push(".eval.csv");
                PathBuf::from(p)
            });
            check_output(&csv, &force)?;
            let gs = load_model(&model)?;
            let ds = load_colmap(&data)?.with_view_stride(view_stride)?;
            let settings = RenderSettings::default();
            let mut w = csv::Writer::from_path(&csv).map_err(|e| CliError::Usage(e.to_string()))?;
            w.write_record(["view", "psnr", "ssim"]).map_err(|e| CliError::Usage(e.to_string()))?;
            let (mut sp, mut ss) = (0.0, 0.0);
            for (view, gt) in ds.eval_pairs() {
                let img = render_forward(&gs, view, [0.0; 3], &settings).color;
                let p = psnr(&img, gt)?.min(PSNR_LOG_CAP);
                let s = ssim(&img, gt)?;
                sp += p;
                ss += s;
                w.write_record([view.name.clone(), format!("{p:.4}"), format!("{s:.6}")])
                    .map_err(|e| CliError::Usage(e.to_string()))?;
            }
            w.flush().map_err(|e| CliError::Run(Error::Io { path: csv.clone(), source: e }))?;
            let n = ds.eval.len() as f64;
            println!(
                "views {} psnr {:.3} ssim {:.4} gaussians {}",
                ds.eval.len(),
                sp / n,
                ss / n,
                gs.len()
            );
            Ok(())
        }
        Command::Prune { model, data, k, out, view_stride, force } => {
            check_output(&out, &force)?;
            let mut gs = load_model(&model)?;
            let ds = load_colmap(&data)?;
            let mark = mark_dominant(&gs, &ds.train_views(), k, view_stride, &RenderSettings::default())?;
            let before = gs.len();
            prune(&mut gs, &mark)?;
            create_parent(&out)?;
            save_ply(&gs, &out)?;
            println!("kept {} of {} Gaussians (K = {k})", gs.len(), before);
            Ok(())
        }
        Command::Info { model } => {
            let gs = load_model(&model)?;
            let size = fs::metadata(&model).map(|m| m.len()).unwrap_or(0);
            print_info(&gs, size);
            Ok(())
        }
        Command::Bench { model, data, repeats } => {
            let gs = load_model(&model)?;
            let ds = load_colmap(&data)?;
            let views: Vec<CameraView> = ds.eval.iter().map(|&i| ds.views[i].clone()).collect();
            let report = bench_render(&gs, &views, repeats, &RenderSettings::default())?;
            println!("view,mean_ms,min_ms,blend_ops");
            for v in &report.views {
                println!("{},{:.3},{:.3},{}", v.view, v.mean_ms, v.min_ms, v.blend_ops);
            }
            println!(
                "gaussians {} mean_frame_ms {:.3} fps {:.1} mean_blend_ops {:.0}",
                gs.len(),
                report.mean_frame_ms(),
                1e3 / report.mean_frame_ms().max(1e-9),
                report.mean_blend_ops()
            );
            Ok(())
        }
    }
}

fn print_info(gs: &[GaussianPrimitive], file_size: u64) {
    let mut hist = [0usize; MAX_SH_ORDER as usize + 1];
    for g in gs {
        hist[g.sh_order() as usize] += 1;
    }
    let pts: Vec<ScenePoint> = gs.iter().map(|g| ScenePoint { position: g.mean, color: [0.0; 3] }).collect();
    println!("count {}", gs.len());
    for (o, n) in hist.iter().enumerate() {
        println!("sh_order_{o} {n}");
    }
    println!("file_bytes {file_size}");
    let extent = if gs.is_empty() { 0.0 } else { scene_extent(&pts) };
    println!("scene_extent {extent:.6}");
}

fn train(args: TrainArgs) -> CliResult {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.iters {
        cfg.total_iters = n;
    }
    cfg.validate()?;
    if args.resume.is_none() {
        check_output(&args.out, &args.force)?;
    }
    let ds = load_colmap(&args.data)?.with_view_stride(args.view_stride)?;
    let ckpt_dir = args.out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    write_text(&args.out.join("config.toml"), &cfg.to_toml_string())?;
    let trainer = match &args.resume {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            check_config(&ckpt, &cfg, args.allow_config_mismatch)?;
            log::info!("resuming from iteration {}", ckpt.state.iter);
            Trainer::resume(&ds, cfg, ckpt.state)?
        }
        None => Trainer::new(&ds, cfg)?,
    };
    let outcome = trainer.with_checkpoint_dir(&ckpt_dir).run()?;
    save_ply(&outcome.gaussians, &args.out.join("model.ply"))?;
    write_metrics_csv(&outcome.log, &args.out.join("metrics.csv"))?;
    if let Some(last) = outcome.log.last() {
        println!(
            "iter {} gaussians {} psnr_holdout {:.3}",
            last.iter, last.count, last.psnr_holdout
        );
    }
    Ok(())
}
