//! The training loop: per-iteration forward/loss/backward/Adam plus the
//! densify, prune and SH schedules.

pub mod config;
pub mod loss;
pub mod optim;

use std::path::{Path, PathBuf};
use std::time::Instant;

use kiddo::{KdTree, SquaredEuclidean};
use nalgebra::{Quaternion, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{Mode, Schedule, ShSelection, TrainConfig};
pub use loss::compute_loss;
pub use optim::{LearningRates, OptimizerState};

use crate::densify::{cleanup, densify, reset_opacity, select_for_densify, CleanupRule, DensifyParams, DensifyStats};
use crate::error::{Error, Result};
use crate::gaussian::{logit, GaussianPrimitive};
use crate::io::checkpoint::save_checkpoint;
use crate::io::{Dataset, ScenePoint};
use crate::metrics::{psnr, PSNR_LOG_CAP};
use crate::prune::{mark_dominant, prune};
use crate::raster::{render_backward, render_forward, RenderSettings};
use crate::sh::MAX_SH_ORDER;
use crate::sh_schedule::{accumulate_demand, select_and_increment, select_random_and_increment};

pub const INIT_OPACITY: f64 = 0.1;
const KNN: usize = 3;

/// One isotropic order-0 Gaussian per point, sized by the mean distance to
/// its three nearest neighbours (fewer if the cloud is smaller).
pub fn init_from_points(points: &[ScenePoint]) -> Result<Vec<GaussianPrimitive>> {
    if points.is_empty() {
        return Err(Error::InvalidInput("no initial points".into()));
    }
    let mut tree: KdTree<f64, 3> = KdTree::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        tree.add(&[p.position.x, p.position.y, p.position.z], i as u64);
    }
    let k = KNN.min(points.len() - 1);
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let q = [p.position.x, p.position.y, p.position.z];
            let dists: Vec<f64> = tree
                .nearest_n::<SquaredEuclidean>(&q, k + 1)
                .into_iter()
                .filter(|n| n.item != i as u64)
                .take(k)
                .map(|n| n.distance.sqrt())
                .collect();
            let scale = if dists.is_empty() {
                1.0
            } else {
                (dists.iter().sum::<f64>() / dists.len() as f64).max(1e-7)
            };
            GaussianPrimitive::new(
                p.position,
                Quaternion::identity(),
                Vector3::repeat(scale.ln()),
                logit(INIT_OPACITY),
                p.color,
            )
        })
        .collect())
}

/// Everything needed to continue training bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Completed iterations.
    pub iter: u64,
    pub gaussians: Vec<GaussianPrimitive>,
    pub optimizer: OptimizerState,
    pub stats: DensifyStats,
    pub rng: ChaCha8Rng,
    /// Remaining training-view indices of the current epoch, consumed from the back.
    pub view_queue: Vec<usize>,
}

impl TrainState {
    pub fn initial(dataset: &Dataset, config: &TrainConfig) -> Result<Self> {
        let gaussians = init_from_points(&dataset.points)?;
        let n = gaussians.len();
        Ok(TrainState {
            iter: 0,
            gaussians,
            optimizer: OptimizerState::new(n),
            stats: DensifyStats::new(n),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            view_queue: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: u64,
    pub count: usize,
    /// Mean training loss since the previous row.
    pub loss: f64,
    pub psnr_holdout: f64,
    pub wall_ms: u64,
    pub peak_rss_bytes: u64,
}

pub const METRICS_HEADER: [&str; 6] = ["iter", "count", "loss", "psnr_holdout", "wall_ms", "peak_rss_bytes"];

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(METRICS_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            r.count.to_string(),
            format!("{:.6}", r.loss),
            format!("{:.4}", r.psnr_holdout),
            r.wall_ms.to_string(),
            r.peak_rss_bytes.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Peak resident set size of this process, 0 where unavailable.
pub fn peak_rss_bytes() -> u64 {
    std::fs::read_to_string("/proc/self/status")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("VmHWM:"))
                .and_then(|l| l.split_whitespace().nth(1))
                .and_then(|v| v.parse::<u64>().ok())
        })
        .map_or(0, |kb| kb * 1024)
}

/// Schedule events fired at the end of an iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainEvent {
    Densify { selected: usize, removed: usize, count: usize },
    OpacityReset,
    Prune { before: usize, after: usize },
    ShIncrement { changed: usize },
    GlobalShOrder { order: u8 },
    Checkpoint { path: PathBuf },
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub iter: u64,
    pub loss: f64,
    pub count: usize,
    pub events: Vec<TrainEvent>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub gaussians: Vec<GaussianPrimitive>,
    pub log: Vec<MetricsRow>,
}

#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    config: TrainConfig,
    schedule: Schedule,
    settings: RenderSettings,
    state: TrainState,
    log: Vec<MetricsRow>,
    loss_sum: f64,
    loss_count: u64,
    started: Instant,
    checkpoint_dir: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: TrainConfig) -> Result<Self> {
        let state = TrainState::initial(dataset, &config)?;
        Trainer::resume(dataset, config, state)
    }

    pub fn resume(dataset: &'a Dataset, config: TrainConfig, state: TrainState) -> Result<Self> {
        let schedule = config.validate()?;
        if dataset.train.is_empty() {
            return Err(Error::InvalidInput("dataset has no training views".into()));
        }
        if state.optimizer.len() != state.gaussians.len() || state.stats.len() != state.gaussians.len() {
            return Err(Error::SizeMismatch {
                expected: state.gaussians.len(),
                actual: state.optimizer.len(),
            });
        }
        Ok(Trainer {
            dataset,
            config,
            schedule,
            settings: RenderSettings::default(),
            state,
            log: Vec::new(),
            loss_sum: 0.0,
            loss_count: 0,
            started: Instant::now(),
            checkpoint_dir: None,
        })
    }

    /// Writes checkpoints at the schedule events, every
    /// `checkpoint_interval` iterations and at the end.
    pub fn with_checkpoint_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn gaussians(&self) -> &[GaussianPrimitive] {
        &self.state.gaussians
    }

    pub fn log(&self) -> &[MetricsRow] {
        &self.log
    }

    pub fn iter(&self) -> u64 {
        self.state.iter
    }

    pub fn is_done(&self) -> bool {
        self.state.iter >= self.config.total_iters
    }

    /// Switches the SH selection rule for the remaining events.
    pub fn set_sh_selection(&mut self, sel: ShSelection) {
        self.config.sh_selection = sel;
    }

    /// Mean PSNR over the held-out views, each capped for logging.
    pub fn eval_psnr(&self) -> Result<f64> {
        mean_psnr(&self.state.gaussians, self.dataset, &self.dataset.eval, self.config.background, &self.settings)
    }

    fn next_view(&mut self) -> usize {
        if self.state.view_queue.is_empty() {
            let mut q = self.dataset.train.clone();
            q.shuffle(&mut self.state.rng);
            q.reverse();
            self.state.view_queue = q;
        }
        self.state.view_queue.pop().expect("refilled")
    }

    fn is_checkpoint_iter(&self, it: u64) -> bool {
        let cfg = &self.config;
        it == cfg.total_iters
            || (cfg.checkpoint_interval > 0 && it % cfg.checkpoint_interval == 0)
            || (cfg.mode == Mode::EfficientGs
                && (it == self.schedule.prune_iter || self.schedule.sh_events.contains(&it)))
    }

    /// Runs one iteration.
    pub fn step(&mut self) -> Result<StepReport> {
        if self.is_done() {
            return Err(Error::InvalidInput("training already reached total_iters".into()));
        }
        let it = self.state.iter + 1;
        let cfg = self.config.clone();
        let extent = self.dataset.scene_extent;
        let vi = self.next_view();
        let view = &self.dataset.views[vi];
        let gt = &self.dataset.images[vi];

        let out = render_forward(&self.state.gaussians, view, cfg.background, &self.settings);
        let (loss, d_color) = compute_loss(&out.color, gt, cfg.lambda_dssim)?;
        if !loss.is_finite() || loss > cfg.max_loss {
            return Err(Error::Divergence {
                iter: it,
                reason: format!("loss {loss}"),
            });
        }
        let grads = render_backward(&out, &d_color, &self.state.gaussians, view)?;
        drop(out);
        if it < self.schedule.densify_until {
            self.state.stats.accumulate(&grads)?;
        }
        let lr = LearningRates::at(&cfg, it, extent);
        let moved = self.state.optimizer.step(&mut self.state.gaussians, &grads.grads, &lr)?;
        drop(grads);
        self.state.iter = it;

        let mut events = Vec::new();
        if it >= cfg.densify_from && it < self.schedule.densify_until && it % cfg.densify_interval == 0 {
            events.push(self.densify_event(it, &moved)?);
        }
        if cfg.opacity_reset_interval > 0 && it % cfg.opacity_reset_interval == 0 && it < self.schedule.densify_until {
            reset_opacity(&mut self.state.gaussians, cfg.opacity_reset_value);
            self.state.optimizer.reset_opacity_moments();
            events.push(TrainEvent::OpacityReset);
        }
        match cfg.mode {
            Mode::EfficientGs => {
                if it == self.schedule.prune_iter {
                    events.push(self.prune_event()?);
                }
                if self.schedule.sh_events.contains(&it) {
                    events.push(self.sh_event()?);
                }
            }
            Mode::Vanilla => {
                if it % cfg.sh_increment_interval == 0 {
                    let order = self.state.gaussians.iter().map(|g| g.sh_order()).max().unwrap_or(0);
                    if order < MAX_SH_ORDER {
                        for g in &mut self.state.gaussians {
                            g.set_sh_order(order + 1);
                        }
                        events.push(TrainEvent::GlobalShOrder { order: order + 1 });
                    }
                }
            }
        }
        if self.state.gaussians.is_empty() {
            return Err(Error::Divergence {
                iter: it,
                reason: "no Gaussians left".into(),
            });
        }

        self.loss_sum += loss;
        self.loss_count += 1;
        let checkpoint = self.is_checkpoint_iter(it);
        if checkpoint || (cfg.log_interval > 0 && it % cfg.log_interval == 0) {
            self.push_row(it)?;
        }
        if checkpoint {
            if let Some(dir) = &self.checkpoint_dir {
                let path = dir.join(format!("ckpt_{it:06}.egs"));
                save_checkpoint(&self.state, &self.config, &path)?;
                events.push(TrainEvent::Checkpoint { path });
            }
        }
        Ok(StepReport {
            iter: it,
            loss,
            count: self.state.gaussians.len(),
            events,
        })
    }

    fn push_row(&mut self, it: u64) -> Result<()> {
        let row = MetricsRow {
            iter: it,
            count: self.state.gaussians.len(),
            loss: self.loss_sum / self.loss_count.max(1) as f64,
            psnr_holdout: self.eval_psnr()?,
            wall_ms: self.started.elapsed().as_millis() as u64,
            peak_rss_bytes: peak_rss_bytes(),
        };
        log::info!(
            "iter {} count {} loss {:.5} psnr {:.2}",
            row.iter,
            row.count,
            row.loss,
            row.psnr_holdout
        );
        self.log.push(row);
        self.loss_sum = 0.0;
        self.loss_count = 0;
        Ok(())
    }

    fn densify_event(&mut self, it: u64, moved: &[Vector3<f64>]) -> Result<TrainEvent> {
        let cfg = &self.config;
        let extent = self.dataset.scene_extent;
        let selected = select_for_densify(&self.state.stats, cfg.mode.criterion(), cfg.tau());
        let offsets: Option<Vec<Vector3<f64>>> = cfg.clone_nudge.then(|| moved.iter().map(|d| -d).collect());
        let params = DensifyParams {
            clone_scale_fraction: cfg.clone_scale_fraction,
            ..Default::default()
        };
        let grown = densify(
            &mut self.state.gaussians,
            &selected,
            extent,
            &params,
            offsets.as_deref(),
            &mut self.state.rng,
        );
        let radii = grown.apply(&self.state.stats.max_screen_radius, || 0);
        let oversize = cfg.opacity_reset_interval > 0 && it > cfg.opacity_reset_interval;
        let rule = CleanupRule {
            min_opacity: cfg.min_opacity,
            max_world_size: oversize.then(|| cfg.max_world_fraction * extent),
            max_screen_radius: oversize.then_some(cfg.max_screen_radius),
        };
        let before = self.state.gaussians.len();
        let cleaned = cleanup(&mut self.state.gaussians, &radii, &rule)?;
        self.state.optimizer.remap(&grown.then(&cleaned));
        self.state.stats = DensifyStats::new(self.state.gaussians.len());
        Ok(TrainEvent::Densify {
            selected: selected.len(),
            removed: before - self.state.gaussians.len(),
            count: self.state.gaussians.len(),
        })
    }

    fn prune_event(&mut self) -> Result<TrainEvent> {
        let views = self.dataset.train_views();
        let mark = mark_dominant(
            &self.state.gaussians,
            &views,
            self.config.k,
            self.config.prune_view_stride,
            &self.settings,
        )?;
        let before = self.state.gaussians.len();
        let remap = prune(&mut self.state.gaussians, &mark)?;
        self.state.optimizer.remap(&remap);
        self.state.stats = self.state.stats.remapped(&remap);
        Ok(TrainEvent::Prune {
            before,
            after: self.state.gaussians.len(),
        })
    }

    fn sh_event(&mut self) -> Result<TrainEvent> {
        let changed = match self.config.sh_selection {
            ShSelection::Demand => {
                let pairs = self.dataset.train_pairs();
                let stats = accumulate_demand(&self.state.gaussians, &pairs, self.config.background, &self.settings)?;
                select_and_increment(&mut self.state.gaussians, &stats, self.config.r_s)?
            }
            ShSelection::Random => {
                select_random_and_increment(&mut self.state.gaussians, self.config.r_s, &mut self.state.rng)?
            }
        };
        Ok(TrainEvent::ShIncrement { changed })
    }

    /// Runs until `iter` iterations are complete (capped at the total).
    pub fn run_to(&mut self, iter: u64) -> Result<()> {
        while self.state.iter < iter.min(self.config.total_iters) {
            self.step()?;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        self.run_to(self.config.total_iters)?;
        Ok(TrainOutcome {
            gaussians: self.state.gaussians,
            log: self.log,
        })
    }
}

/// Trains from scratch and returns the final model and metrics log.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(dataset, config.clone())?.run()
}

/// Mean PSNR of renders of `gaussians` against the ground truth of `indices`.
pub fn mean_psnr(
    gaussians: &[GaussianPrimitive],
    dataset: &Dataset,
    indices: &[usize],
    background: [f64; 3],
    settings: &RenderSettings,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::InvalidInput("no views to evaluate".into()));
    }
    let mut sum = 0.0;
    for &i in indices {
        let out = render_forward(gaussians, &dataset.views[i], background, settings);
        sum += psnr(&out.color, &dataset.images[i])?.min(PSNR_LOG_CAP);
    }
    Ok(sum / indices.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn pts(coords: &[[f64; 3]]) -> Vec<ScenePoint> {
        coords
            .iter()
            .map(|c| ScenePoint { position: Vector3::from(*c), color: [0.8, 0.3, 0.1] })
            .collect()
    }

    #[test]
    fn single_point() {
        let gs = init_from_points(&pts(&[[1.0, 2.0, 3.0]])).unwrap();
        assert_eq!(gs.len(), 1);
        assert_eq!(gs[0].mean, Vector3::new(1.0, 2.0, 3.0));
        let c = gs[0].color_from(&Vector3::new(0.0, 0.0, -5.0));
        for (a, b) in c.iter().zip([0.8, 0.3, 0.1]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(gs[0].sh_order(), 0);
        assert!((gs[0].opacity() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn two_points_unit_apart() {
        let gs = init_from_points(&pts(&[[0.0; 3], [1.0, 0.0, 0.0]])).unwrap();
        for g in gs {
            assert!(g.log_scale.iter().all(|&s| s.abs() < 1e-12));
        }
    }

    #[test]
    fn empty_points() {
        assert!(init_from_points(&[]).is_err());
    }

    #[test]
    fn knn_scales_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut coords: Vec<[f64; 3]> = (0..1000).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        // Coplanar block to exercise repeated coordinates.
        coords.extend((0..300).map(|i| [(i % 20) as f64 * 0.05, (i / 20) as f64 * 0.05, 0.5]));
        let p = pts(&coords);
        let gs = init_from_points(&p).unwrap();
        for (i, g) in gs.iter().enumerate() {
            let mut d: Vec<f64> = (0..p.len())
                .filter(|&j| j != i)
                .map(|j| (p[i].position - p[j].position).norm())
                .collect();
            d.sort_by(f64::total_cmp);
            let want = ((d[0] + d[1] + d[2]) / 3.0).ln();
            assert!((g.log_scale.x - want).abs() < 1e-6, "point {i}");
        }
    }
}
