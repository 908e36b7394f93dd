//! Files on disk: per-clip binaries named `<clip_id>.<ext>`, text tables, checksums.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sedpipe_core::corpus::{read_posterior, write_posterior};
use sedpipe_core::features::{read_features, write_features};
use sedpipe_core::model::{read_checkpoint, write_checkpoint, Model};
use sedpipe_core::{FeatureTensor, KvConfig, ModelConfig, PosteriorGrid};
use sha2::{Digest, Sha256};

use crate::settings::hex;

pub const FEATURE_EXT: &str = "sedf";
pub const POSTERIOR_EXT: &str = "sedp";
pub const MODEL_CONFIG: &str = "model.conf";
pub const MODEL_WEIGHTS: &str = "model.sedm";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Writes `bytes` to `path` and logs its checksum.
pub fn write_artifact(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    log::info!(
        "artifact path={} bytes={} sha256={}",
        path.display(),
        bytes.len(),
        sha256_hex(bytes)
    );
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Clip ids become file names, so they must not name a directory.
fn clip_file(dir: &Path, clip_id: &str, ext: &str) -> Result<PathBuf> {
    if clip_id.is_empty() || clip_id.contains(['/', '\\']) || clip_id == "." || clip_id == ".." {
        bail!("clip id {clip_id:?} cannot be used as a file name");
    }
    Ok(dir.join(format!("{clip_id}.{ext}")))
}

/// Files in `dir` with extension `ext`, sorted by name.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn feature_path(dir: &Path, clip_id: &str) -> Result<PathBuf> {
    clip_file(dir, clip_id, FEATURE_EXT)
}

pub fn save_features(dir: &Path, x: &FeatureTensor) -> Result<()> {
    let mut buf = Vec::new();
    write_features(x, &mut buf)?;
    write_artifact(&feature_path(dir, &x.clip_id)?, &buf)
}

pub fn load_features(path: &Path) -> Result<FeatureTensor> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_features(&mut BufReader::new(file)).with_context(|| format!("reading features {}", path.display()))
}

pub fn save_posterior(dir: &Path, grid: &PosteriorGrid) -> Result<()> {
    let mut buf = Vec::new();
    write_posterior(grid, &mut buf)?;
    write_artifact(&clip_file(dir, &grid.clip_id, POSTERIOR_EXT)?, &buf)
}

pub fn load_posterior(path: &Path) -> Result<PosteriorGrid> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_posterior(&mut BufReader::new(file)).with_context(|| format!("reading posteriors {}", path.display()))
}

/// Every posterior grid in `dir`, sorted by file name.
pub fn load_posterior_dir(dir: &Path) -> Result<Vec<PosteriorGrid>> {
    let grids = list_files(dir, POSTERIOR_EXT)?
        .iter()
        .map(|p| load_posterior(p))
        .collect::<Result<Vec<_>>>()?;
    if grids.is_empty() {
        bail!("no .{POSTERIOR_EXT} files in {}", dir.display());
    }
    Ok(grids)
}

/// Architecture as `key = value` text plus the binary checkpoint.
pub fn save_model(dir: &Path, model: &Model) -> Result<()> {
    write_artifact(&dir.join(MODEL_CONFIG), model.config.to_kv().render().as_bytes())?;
    let mut buf = BufWriter::new(Vec::new());
    write_checkpoint(model, &mut buf)?;
    write_artifact(&dir.join(MODEL_WEIGHTS), &buf.into_inner()?)
}

pub fn load_model(dir: &Path) -> Result<Model> {
    let kv = KvConfig::parse(&read_text(&dir.join(MODEL_CONFIG))?)?;
    let config = ModelConfig::from_kv(&kv, "", &ModelConfig::default())?;
    let path = dir.join(MODEL_WEIGHTS);
    let file = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    read_checkpoint(&mut BufReader::new(file), &config)
        .with_context(|| format!("reading checkpoint {}", path.display()))
}

pub fn flush_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}
