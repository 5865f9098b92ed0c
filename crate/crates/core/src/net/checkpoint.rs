//! Parameter checkpoints: a directory with a `manifest.txt` (architecture
//! keys, free-form `extra.*` keys, then the tensor names in a fixed order)
//! and one `LFT1` file per named tensor.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{load_tensor, save_tensor};

use super::model::{NetConfig, Network};
use super::ops::Scalar;

pub const MANIFEST_FILE: &str = "manifest.txt";

/// A checkpoint read back from disk.
#[derive(Debug, Clone)]
pub struct CheckpointData {
    pub config: NetConfig,
    pub extras: BTreeMap<String, String>,
    /// `(name, dims, values)` in manifest order.
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

/// Writes a checkpoint directory.
pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    config: &NetConfig,
    tensors: &[(String, Vec<usize>, Vec<f32>)],
    extras: &BTreeMap<String, String>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::from("format=lfck1\n");
    manifest.push_str(&config.to_text());
    for (k, v) in extras {
        writeln!(manifest, "extra.{k}={v}").unwrap();
    }
    manifest.push_str("tensors:\n");
    for (name, dims, data) in tensors {
        writeln!(manifest, "{name}").unwrap();
        save_tensor(dir.join(format!("{name}.lft")), dims, data)?;
    }
    std::fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

/// Reads a checkpoint directory back.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<CheckpointData> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Checkpoint { path: dir.into(), msg: format!("cannot read manifest: {e}") })?;
    let mut keys = BTreeMap::new();
    let mut extras = BTreeMap::new();
    let mut names = Vec::new();
    let mut in_tensors = false;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "tensors:" {
            in_tensors = true;
            continue;
        }
        if in_tensors {
            names.push(line.to_string());
        } else if let Some((k, v)) = line.split_once('=') {
            if let Some(extra_key) = k.strip_prefix("extra.") {
                extras.insert(extra_key.to_string(), v.to_string());
            } else {
                keys.insert(k.to_string(), v.to_string());
            }
        } else {
            return Err(Error::Checkpoint {
                path: dir.into(),
                msg: format!("malformed manifest line {line:?}"),
            });
        }
    }
    if keys.get("format").map(String::as_str) != Some("lfck1") {
        return Err(Error::Checkpoint { path: dir.into(), msg: "unknown checkpoint format".into() });
    }
    let config = NetConfig::parse_kv(&keys)?;
    let mut tensors = Vec::with_capacity(names.len());
    for name in names {
        let (dims, data) = load_tensor(dir.join(format!("{name}.lft")))?;
        tensors.push((name, dims, data));
    }
    Ok(CheckpointData { config, extras, tensors })
}

impl<F: Scalar> Network<F> {
    /// All parameters as named f32 tensors in id order.
    pub fn export_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let metas = self.param_metas().to_vec();
        let mut out = Vec::with_capacity(metas.len());
        self.visit_params(&mut |id, data| {
            let meta = &metas[id];
            out.push((meta.name.clone(), meta.shape.clone(), data.iter().map(|v| v.to_f32()).collect()));
        });
        out
    }

    /// Loads named tensors into the parameters; every parameter must be
    /// present with a matching shape.
    pub fn import_tensors(&mut self, tensors: &[(String, Vec<usize>, Vec<f32>)]) -> Result<()> {
        let by_name: BTreeMap<&str, (&Vec<usize>, &Vec<f32>)> =
            tensors.iter().map(|(n, d, v)| (n.as_str(), (d, v))).collect();
        let metas = self.param_metas().to_vec();
        let mut missing = Vec::new();
        let mut error: Option<String> = None;
        self.visit_params_mut(&mut |id, data| {
            let meta = &metas[id];
            match by_name.get(meta.name.as_str()) {
                None => missing.push(meta.name.clone()),
                Some((dims, values)) => {
                    if **dims != meta.shape || values.len() != data.len() {
                        error.get_or_insert(format!(
                            "tensor {} has shape {:?}, expected {:?}",
                            meta.name, dims, meta.shape
                        ));
                        return;
                    }
                    for (d, v) in data.iter_mut().zip(values.iter()) {
                        *d = F::from_f32(*v);
                    }
                }
            }
        });
        if let Some(msg) = error {
            return Err(Error::Net(msg));
        }
        if !missing.is_empty() {
            return Err(Error::Net(format!("checkpoint is missing tensors: {missing:?}")));
        }
        Ok(())
    }

    /// Saves the network (and optional extra keys) as a checkpoint directory.
    pub fn save_to(&self, dir: impl AsRef<Path>, extras: &BTreeMap<String, String>) -> Result<()> {
        save_checkpoint(dir, &self.config, &self.export_tensors(), extras)
    }

    /// Restores a network from a checkpoint directory.
    pub fn load_from(dir: impl AsRef<Path>) -> Result<(Self, BTreeMap<String, String>)> {
        let data = load_checkpoint(dir)?;
        let mut net = Network::new(data.config, 0)?;
        net.import_tensors(&data.tensors)?;
        Ok((net, data.extras))
    }
}
