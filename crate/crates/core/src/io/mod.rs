//! File formats of the pipeline: PFM depth maps, PLY point clouds, camera
//! text files and PNG images. Every writer replaces its target atomically.

mod camera;
mod pfm;
mod ply;
mod png;

pub use camera::{format_camera, parse_camera, read_camera, write_camera, DEPTH_PLANES};
pub use pfm::{decode_pfm, encode_pfm, read_depth_pfm, read_pfm, write_depth_pfm, write_pfm};
pub use ply::{decode_ply, encode_ply, read_ply, write_ply, PlyFormat};
pub use png::{read_gray8_png, read_image, write_gray8_png, write_image_png16};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temporary file, syncs it and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "not a file path"))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
