//! Binary checkpoints: a JSON manifest followed by raw little-endian f32
//! arrays, one per parameter and per optimizer moment.
//!
//! Layout: magic, `u32` format version, `u64` manifest length, manifest
//! bytes, then the arrays in manifest order. Serialization is a pure
//! function of the state, so save, load and save again reproduce the same
//! bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::Adam;
use crate::tensor::Tensor;
use crate::training::{ModelState, TrainConfig};

const MAGIC: &[u8; 8] = b"DSMAPCKP";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: ModelConfig,
    pub step: u64,
    pub seed: u64,
    pub train: Option<TrainConfig>,
    pub d_opt_steps: u64,
    pub g_opt_steps: u64,
    pub arrays: Vec<ArrayEntry>,
}

fn moment_names(name: &str) -> (String, String) {
    (format!("adam.m.{name}"), format!("adam.v.{name}"))
}

fn opt_for(state: &ModelState, is_disc: bool) -> &Adam {
    if is_disc {
        &state.d_opt
    } else {
        &state.g_opt
    }
}

/// Named arrays of a state, parameters first, then first and second moments.
fn arrays(state: &ModelState) -> Vec<(String, &Tensor)> {
    let params = state.model.params();
    let mut out: Vec<(String, &Tensor)> = params.iter().map(|(_, p)| (p.name.clone(), &p.tensor)).collect();
    for (id, p) in params.iter() {
        let (m, v) = opt_for(state, p.component.is_discriminator())
            .moments(id)
            .expect("every parameter belongs to one optimizer");
        let (mn, vn) = moment_names(&p.name);
        out.push((mn, m));
        out.push((vn, v));
    }
    out
}

pub fn to_bytes(state: &ModelState, train: Option<&TrainConfig>) -> Result<Vec<u8>> {
    let arrays = arrays(state);
    let manifest = Manifest {
        model: state.model.config().clone(),
        step: state.step,
        seed: state.model.config().seed,
        train: train.cloned(),
        d_opt_steps: state.d_opt.steps(),
        g_opt_steps: state.g_opt.steps(),
        arrays: arrays
            .iter()
            .map(|(name, t)| ArrayEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let payload: usize = arrays.iter().map(|(_, t)| 4 * t.len()).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + 12 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in arrays {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

/// Parses a checkpoint, returning the state and the training config it was
/// written with (if any).
pub fn from_bytes(bytes: &[u8]) -> Result<(ModelState, Option<TrainConfig>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| Error::Checkpoint("manifest too large".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;

    let adam = manifest.train.clone().unwrap_or_default().adam();
    let mut state = ModelState::from_model(Model::new(manifest.model.clone())?, adam);
    let expected: Vec<ArrayEntry> = arrays(&state)
        .into_iter()
        .map(|(name, t)| ArrayEntry {
            name,
            shape: t.shape().to_vec(),
        })
        .collect();
    if expected != manifest.arrays {
        let diff = expected
            .iter()
            .zip(&manifest.arrays)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("expected {} {:?}, found {} {:?}", a.name, a.shape, b.name, b.shape))
            .unwrap_or_else(|| format!("expected {} arrays, found {}", expected.len(), manifest.arrays.len()));
        return Err(Error::Checkpoint(format!("array table does not match the model: {diff}")));
    }

    let mut read = |shape: &[usize]| -> Result<Vec<f32>> {
        let n: usize = shape.iter().product();
        let raw = r.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    };
    let ids: Vec<_> = state.model.params().iter().map(|(id, p)| (id, p.component.is_discriminator())).collect();
    for &(id, _) in &ids {
        let shape = state.model.params().get(id).tensor.shape().to_vec();
        let data = read(&shape)?;
        state.model.params_mut().tensor_mut(id).data_mut().copy_from_slice(&data);
    }
    for &(id, is_disc) in &ids {
        let opt = if is_disc { &mut state.d_opt } else { &mut state.g_opt };
        let (m, v) = opt.moments_mut(id).expect("every parameter belongs to one optimizer");
        let md = read(m.shape())?;
        m.data_mut().copy_from_slice(&md);
        let vd = read(v.shape())?;
        v.data_mut().copy_from_slice(&vd);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last array",
            bytes.len() - r.pos
        )));
    }
    state.step = manifest.step;
    state.d_opt.set_steps(manifest.d_opt_steps);
    state.g_opt.set_steps(manifest.g_opt_steps);
    Ok((state, manifest.train))
}

pub fn save(path: &Path, state: &ModelState, train: Option<&TrainConfig>) -> Result<()> {
    let bytes = to_bytes(state, train)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ModelState, Option<TrainConfig>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Loads only the model of a checkpoint.
pub fn load_model(path: &Path) -> Result<Model> {
    Ok(load(path)?.0.model)
}
