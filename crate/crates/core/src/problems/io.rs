//! On-disk dataset layout (version 1):
//!
//! ```text
//! <dir>/manifest.toml          problem, generation options, grid, split, per-instance θ
//! <dir>/grids/<id:05>.f64      reference grid, little-endian f64, flat grid order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, GenOptions, LabeledInstance, PdeInstance, ProblemKind};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.toml";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    problem: ProblemKind,
    grid_bounds: Vec<(f64, f64)>,
    grid_shape: Vec<usize>,
    seen: Vec<usize>,
    unseen: Vec<usize>,
    options: GenOptions,
    instances: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    id: usize,
    theta: Vec<f64>,
    file: String,
}

pub fn write_f64s(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f64s(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("{} is not a whole number of f64 values", path.display())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("grids"))?;
    let spec = ds.kind.spec();
    let mut entries = Vec::with_capacity(ds.instances.len());
    for li in &ds.instances {
        let file = format!("grids/{:05}.f64", li.instance.id);
        write_f64s(&dir.join(&file), &li.reference)?;
        entries.push(Entry {
            id: li.instance.id,
            theta: li.instance.theta.clone(),
            file,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        problem: ds.kind,
        grid_bounds: spec.bounds,
        grid_shape: spec.shape,
        seen: ds.seen.clone(),
        unseen: ds.unseen.clone(),
        options: ds.options.clone(),
        instances: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "dataset format version {} is not supported (expected {FORMAT_VERSION})",
            m.format_version
        )));
    }
    let spec = m.problem.spec();
    if m.grid_shape != spec.shape || m.grid_bounds != spec.bounds {
        return Err(Error::Format(format!("grid in manifest does not match problem {}", m.problem)));
    }
    let n = spec.grid().len();
    let mut instances = Vec::with_capacity(m.instances.len());
    for e in m.instances {
        let reference = read_f64s(&dir.join(&e.file))?;
        if reference.len() != n {
            return Err(Error::Format(format!("{} holds {} values, grid has {n}", e.file, reference.len())));
        }
        instances.push(LabeledInstance {
            instance: PdeInstance::new(e.id, m.problem, e.theta)?,
            reference,
        });
    }
    let ds = Dataset {
        kind: m.problem,
        options: m.options,
        instances,
        seen: m.seen,
        unseen: m.unseen,
    };
    ds.check_split()?;
    Ok(ds)
}
