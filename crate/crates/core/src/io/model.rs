use std::io::Read;
use std::path::Path;

use super::checkpoint::{load_checkpoint, MAGIC};
use super::ply::load_ply;
use crate::error::{Error, Result};
use crate::gaussian::GaussianPrimitive;

/// Loads Gaussians from either a PLY file or a checkpoint, by content.
pub fn load_model(path: &Path) -> Result<Vec<GaussianPrimitive>> {
    let mut head = [0u8; 4];
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let n = f.read(&mut head).map_err(|e| Error::io(path, e))?;
    drop(f);
    if n == 4 && &head == MAGIC {
        Ok(load_checkpoint(path)?.state.gaussians)
    } else if n >= 3 && &head[..3] == b"ply" {
        load_ply(path)
    } else {
        Err(Error::InvalidInput(format!(
            "{} is neither a PLY file nor an EGS1 checkpoint",
            path.display()
        )))
    }
}
