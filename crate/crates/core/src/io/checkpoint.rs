//! Native resumable checkpoint (`EGS1`): model, Adam moments, densify
//! statistics, RNG position and the pending view queue, all little-endian.

use std::path::Path;

use nalgebra::{Quaternion, Vector3};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::densify::DensifyStats;
use crate::error::{Error, Result};
use crate::gaussian::GaussianPrimitive;
use crate::sh::{coeff_count, MAX_SH_ORDER};
use crate::train::optim::{OptimizerState, STRIDE};
use crate::train::{TrainConfig, TrainState};

pub const MAGIC: &[u8; 4] = b"EGS1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    /// The configuration the run was started with, as TOML.
    pub config_toml: String,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn config(&self) -> Result<TrainConfig> {
        TrainConfig::from_toml_str(&self.config_toml)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }
    fn bytes(&mut self, v: &[u8]) {
        self.u64(v.len() as u64);
        self.0.extend_from_slice(v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            return Err(Error::Checkpoint(format!("length {n} at byte {} exceeds file", self.pos - 8)));
        }
        Ok(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len(1)?;
        self.take(n)
    }
}

pub fn encode_checkpoint(state: &TrainState, config: &TrainConfig) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.0.extend_from_slice(&config.hash());
    w.bytes(config.to_toml_string().as_bytes());
    w.u64(state.iter);
    w.u64(state.gaussians.len() as u64);
    for g in &state.gaussians {
        g.mean.iter().for_each(|&v| w.f64(v));
        [g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k].iter().for_each(|&v| w.f64(v));
        g.log_scale.iter().for_each(|&v| w.f64(v));
        w.f64(g.opacity_logit);
        w.u8(g.sh_order());
        g.sh().iter().flatten().for_each(|&v| w.f64(v));
    }
    w.u64(state.optimizer.step);
    w.f64s(&state.optimizer.m);
    w.f64s(&state.optimizer.v);
    let s = &state.stats;
    w.f64s(&s.accum_e);
    w.f64s(&s.accum_s);
    s.view_count.iter().for_each(|&v| w.u32(v));
    s.max_screen_radius.iter().for_each(|&v| w.u32(v));
    w.0.extend_from_slice(&state.rng.get_seed());
    w.u64(state.rng.get_stream());
    w.0.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());
    w.u64(state.view_queue.len() as u64);
    state.view_queue.iter().for_each(|&v| w.u64(v as u64));
    w.0
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("bad magic (not an EGS1 checkpoint)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    let config_toml = std::str::from_utf8(r.bytes()?)
        .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?
        .to_owned();
    let iter = r.u64()?;
    let n = r.len(12 * 8)?;
    let mut gaussians = Vec::with_capacity(n);
    for _ in 0..n {
        let mean = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
        let rotation = Quaternion::new(r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let log_scale = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
        let opacity_logit = r.f64()?;
        let order = r.u8()?;
        if order > MAX_SH_ORDER {
            return Err(Error::Checkpoint(format!("SH order {order} at byte {}", r.pos - 1)));
        }
        let coeffs: Vec<[f64; 3]> = (0..coeff_count(order))
            .map(|_| Ok([r.f64()?, r.f64()?, r.f64()?]))
            .collect::<Result<_>>()?;
        let mut g = GaussianPrimitive::new(mean, rotation, log_scale, opacity_logit, [0.0; 3]);
        g.set_sh(order, &coeffs);
        gaussians.push(g);
    }
    let step = r.u64()?;
    let m = r.f64s()?;
    let v = r.f64s()?;
    if m.len() != n * STRIDE || v.len() != n * STRIDE {
        return Err(Error::Checkpoint("optimizer moments do not match the model".into()));
    }
    let accum_e = r.f64s()?;
    let accum_s = r.f64s()?;
    if accum_e.len() != n || accum_s.len() != n {
        return Err(Error::Checkpoint("densify statistics do not match the model".into()));
    }
    let view_count = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let max_screen_radius = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    let q = r.len(8)?;
    let view_queue = (0..q).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(Checkpoint {
        config_hash,
        config_toml,
        state: TrainState {
            iter,
            gaussians,
            optimizer: OptimizerState { step, m, v },
            stats: DensifyStats {
                accum_e,
                accum_s,
                view_count,
                max_screen_radius,
            },
            rng,
            view_queue,
        },
    })
}

/// Writes atomically (temporary file then rename), creating the parent
/// directory if needed.
pub fn save_checkpoint(state: &TrainState, config: &TrainConfig, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(state, config);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Checks a loaded checkpoint against the configuration about to be used.
/// A hash mismatch is an error unless `allow_mismatch`, in which case it is
/// only logged.
pub fn check_config(ckpt: &Checkpoint, config: &TrainConfig, allow_mismatch: bool) -> Result<()> {
    if ckpt.config_hash == config.hash() {
        return Ok(());
    }
    if allow_mismatch {
        log::warn!("checkpoint was written with a different configuration; continuing as requested");
        Ok(())
    } else {
        Err(Error::Checkpoint(
            "configuration differs from the one the checkpoint was written with".into(),
        ))
    }
}
