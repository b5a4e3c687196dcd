//! Atomic file output and content digests for on-disk artifacts.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Writes through `<path>.tmp` and renames, so readers never see a partial file.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let file = fs::File::create(&tmp).map_err(|e| Error::file(&tmp, e))?;
    let mut writer = BufWriter::new(file);
    write(&mut writer)?;
    writer.flush().map_err(|e| Error::file(&tmp, e))?;
    drop(writer);
    fs::rename(&tmp, path).map_err(|e| Error::file(path, e))
}

/// Short hex digest of raw bytes, same width as [`crate::fingerprint::fingerprint`].
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}
