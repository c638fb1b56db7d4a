use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::densify::DensifyCriterion;
use crate::error::{Error, Result};
use crate::sh_schedule::{scale_iteration, schedule_events, BASE_PRUNE_ITER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Selective densification, dominance pruning, sparse SH growth.
    EfficientGs,
    /// Reference control flow: averaged-gradient densification, no pruning,
    /// global SH order raised on a fixed interval.
    Vanilla,
}

impl Mode {
    pub fn criterion(self) -> DensifyCriterion {
        match self {
            Mode::EfficientGs => DensifyCriterion::Selective,
            Mode::Vanilla => DensifyCriterion::Vanilla,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "efficientgs" => Ok(Mode::EfficientGs),
            "vanilla" => Ok(Mode::Vanilla),
            _ => Err(Error::Config(format!("unknown mode `{s}` (expected efficientgs or vanilla)"))),
        }
    }
}

/// How SH order increments pick their Gaussians.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShSelection {
    Demand,
    Random,
}

/// Training schedule and hyperparameters. Iterations are 1-based; the
/// optional schedule entries default to values derived from `total_iters`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub seed: u64,
    pub total_iters: u64,

    pub densify_from: u64,
    pub densify_interval: u64,
    /// Defaults to `total_iters / 2`.
    pub densify_until: Option<u64>,
    /// 0 disables opacity resets.
    pub opacity_reset_interval: u64,
    pub opacity_reset_value: f64,
    /// Densification thresholds on the averaged position-gradient statistics,
    /// which are measured in pixel units. Tuned on the synthetic scene at
    /// 128x128; rescale for very different resolutions.
    pub tau_s: f64,
    pub tau_pos: f64,
    pub clone_scale_fraction: f64,
    /// Place clones one optimizer step behind their source.
    pub clone_nudge: bool,
    pub min_opacity: f64,
    /// Screen radius (pixels) above which a Gaussian is culled once opacity
    /// resets have started.
    pub max_screen_radius: u32,
    /// World size, as a fraction of the scene extent, with the same timing.
    pub max_world_fraction: f64,

    /// Defaults to 15500 scaled to `total_iters`.
    pub prune_iter: Option<u64>,
    pub k: usize,
    pub prune_view_stride: usize,

    /// Defaults to 16000/17000/18000 scaled to `total_iters`.
    pub sh_event_iters: Option<Vec<u64>>,
    pub r_s: f64,
    pub sh_selection: ShSelection,
    /// Vanilla mode raises every Gaussian's order this often.
    pub sh_increment_interval: u64,

    pub lambda_dssim: f64,
    pub background: [f64; 3],

    pub lr_position_init: f64,
    pub lr_position_final: f64,
    pub lr_sh_dc: f64,
    pub lr_sh_rest: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,

    /// Metrics row cadence (0: only at checkpoints and the end).
    pub log_interval: u64,
    /// Periodic checkpoint cadence on top of the schedule events.
    pub checkpoint_interval: u64,
    /// Loss values above this abort training.
    pub max_loss: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::EfficientGs,
            seed: 0,
            total_iters: 30_000,
            densify_from: 500,
            densify_interval: 100,
            densify_until: None,
            opacity_reset_interval: 3000,
            opacity_reset_value: 0.01,
            tau_s: 1.2e-5,
            tau_pos: 2e-5,
            clone_scale_fraction: 0.01,
            clone_nudge: true,
            min_opacity: 0.005,
            max_screen_radius: 20,
            max_world_fraction: 0.1,
            prune_iter: None,
            k: 1,
            prune_view_stride: 1,
            sh_event_iters: None,
            r_s: 0.2,
            sh_selection: ShSelection::Demand,
            sh_increment_interval: 1000,
            lambda_dssim: 0.2,
            background: [0.0; 3],
            lr_position_init: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_sh_dc: 2.5e-3,
            lr_sh_rest: 2.5e-4,
            lr_opacity: 0.05,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            log_interval: 500,
            checkpoint_interval: 5000,
            max_loss: 1e3,
        }
    }
}

/// The concrete event iterations of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub densify_until: u64,
    pub prune_iter: u64,
    pub sh_events: Vec<u64>,
}

impl TrainConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 over the canonical TOML form.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_toml_string().as_bytes()).into()
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            densify_until: self.densify_until.unwrap_or(self.total_iters / 2),
            prune_iter: self
                .prune_iter
                .unwrap_or_else(|| scale_iteration(BASE_PRUNE_ITER, self.total_iters)),
            sh_events: self
                .sh_event_iters
                .clone()
                .unwrap_or_else(|| schedule_events(self.total_iters).to_vec()),
        }
    }

    pub fn validate(&self) -> Result<Schedule> {
        let s = self.schedule();
        let fail = |m: String| Err(Error::Config(m));
        if self.total_iters == 0 {
            return fail("total_iters must be positive".into());
        }
        if self.densify_interval == 0 {
            return fail("densify_interval must be positive".into());
        }
        if self.mode == Mode::EfficientGs {
            if s.densify_until > s.prune_iter {
                return fail(format!("densify_until {} is after prune_iter {}", s.densify_until, s.prune_iter));
            }
            if s.prune_iter >= self.total_iters {
                return fail(format!("prune_iter {} must be below total_iters {}", s.prune_iter, self.total_iters));
            }
            if s.sh_events.is_empty() {
                return fail("sh_event_iters is empty".into());
            }
            if s.sh_events[0] <= s.prune_iter {
                return fail(format!("first SH event {} must follow prune_iter {}", s.sh_events[0], s.prune_iter));
            }
            if s.sh_events.windows(2).any(|w| w[0] >= w[1]) {
                return fail(format!("SH events {:?} must be strictly increasing", s.sh_events));
            }
            if s.sh_events.iter().any(|&e| e >= self.total_iters) {
                return fail(format!("SH events {:?} must be below total_iters", s.sh_events));
            }
        } else if self.sh_increment_interval == 0 {
            return fail("sh_increment_interval must be positive".into());
        }
        if s.densify_until > self.total_iters {
            return fail(format!("densify_until {} exceeds total_iters", s.densify_until));
        }
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if !(self.r_s > 0.0 && self.r_s <= 1.0) {
            return fail(format!("r_s must be in (0, 1], got {}", self.r_s));
        }
        if !(0.0..=1.0).contains(&self.lambda_dssim) {
            return fail(format!("lambda_dssim must be in [0, 1], got {}", self.lambda_dssim));
        }
        if !(self.opacity_reset_value > 0.0 && self.opacity_reset_value < 1.0) {
            return fail("opacity_reset_value must be in (0, 1)".into());
        }
        if self.lr_position_init <= 0.0 || self.lr_position_final <= 0.0 {
            return fail("position learning rates must be positive".into());
        }
        Ok(s)
    }

    pub fn tau(&self) -> f64 {
        match self.mode {
            Mode::EfficientGs => self.tau_s,
            Mode::Vanilla => self.tau_pos,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_schedule() {
        let s = TrainConfig::default().validate().unwrap();
        assert_eq!(s.densify_until, 15_000);
        assert_eq!(s.prune_iter, 15_500);
        assert_eq!(s.sh_events, vec![16_000, 17_000, 18_000]);
    }

    #[test]
    fn scaled_schedule() {
        let cfg = TrainConfig { total_iters: 3000, ..Default::default() };
        let s = cfg.validate().unwrap();
        assert_eq!((s.densify_until, s.prune_iter), (1500, 1550));
        assert_eq!(s.sh_events, vec![1600, 1700, 1800]);
    }

    #[test]
    fn invariants_rejected() {
        let bad = TrainConfig { sh_event_iters: Some(vec![16_000, 16_000, 18_000]), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { prune_iter: Some(14_000), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { sh_event_iters: Some(vec![15_000]), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { sh_event_iters: Some(vec![31_000]), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { r_s: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let cfg = TrainConfig::from_toml_str("mode = \"vanilla\"\ntotal_iters = 3000\ntau_s = 0.001\n").unwrap();
        assert_eq!(cfg.mode, Mode::Vanilla);
        assert_eq!(cfg.tau_s, 0.001);
        assert_eq!(cfg.k, 1);
        let back = TrainConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(cfg.hash(), TrainConfig::default().hash());
        assert!(TrainConfig::from_toml_str("bogus_key = 1").is_err());
    }
}
