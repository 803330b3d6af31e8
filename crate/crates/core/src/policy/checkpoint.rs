//! Policy checkpoints: `MOSP`, a little-endian `u32` header length, a JSON
//! header, then every network parameter as little-endian `f32`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::agent::NetPolicy;
use super::nn::{NnError, PolicyNet};
use super::obs::{ObsNormalizer, ObservationSpec};

const MAGIC: &[u8; 4] = b"MOSP";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a policy checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("observation layout hash mismatch: file {file}, expected {expected}")]
    LayoutMismatch { file: String, expected: String },
    #[error("parameter blob holds {found} values, header needs {expected}")]
    BlobSize { expected: usize, found: usize },
    #[error(transparent)]
    Network(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetHeader {
    widths: Vec<usize>,
    stochastic: bool,
    activation: String,
    params: usize,
}

impl NetHeader {
    fn of(net: &PolicyNet<f64>) -> Self {
        Self { widths: net.widths().to_vec(), stochastic: net.is_stochastic(), activation: "elu".into(), params: net.num_params() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    actor: NetHeader,
    residual: Option<NetHeader>,
    obs: ObservationSpec,
    obs_layout_hash: String,
    dof: usize,
    bodies: usize,
    normalizer: ObsNormalizer,
}

pub fn write_policy<W: Write>(policy: &NetPolicy, dof: usize, bodies: usize, mut w: W) -> Result<(), CheckpointError> {
    let header = Header {
        version: FORMAT_VERSION,
        actor: NetHeader::of(&policy.actor),
        residual: policy.residual.as_ref().map(NetHeader::of),
        obs: policy.spec.clone(),
        obs_layout_hash: policy.spec.layout_hash(dof, bodies),
        dof,
        bodies,
        normalizer: policy.normalizer.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let nets = std::iter::once(&policy.actor).chain(policy.residual.as_ref());
    for net in nets {
        for p in net.params() {
            w.write_all(&(*p as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_policy<R: Read>(mut r: R) -> Result<NetPolicy, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.version != FORMAT_VERSION {
        return Err(CheckpointError::Version(header.version));
    }
    let expected = header.obs.layout_hash(header.dof, header.bodies);
    if header.obs_layout_hash != expected {
        return Err(CheckpointError::LayoutMismatch { file: header.obs_layout_hash, expected });
    }
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;
    let values: Vec<f64> = blob.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    let need = header.actor.params + header.residual.as_ref().map_or(0, |h| h.params);
    if values.len() != need || blob.len() % 4 != 0 {
        return Err(CheckpointError::BlobSize { expected: need, found: values.len() });
    }
    let (a, rest) = values.split_at(header.actor.params);
    let actor = PolicyNet::from_parts(&header.actor.widths, header.actor.stochastic, a.to_vec())?;
    let residual = match &header.residual {
        Some(h) => Some(PolicyNet::from_parts(&h.widths, h.stochastic, rest.to_vec())?),
        None => None,
    };
    let mut policy = NetPolicy::new(actor, header.normalizer, header.obs);
    policy.residual = residual;
    Ok(policy)
}

pub fn save_policy(policy: &NetPolicy, dof: usize, bodies: usize, path: &Path) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    write_policy(policy, dof, bodies, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<NetPolicy, CheckpointError> {
    read_policy(std::fs::File::open(path)?)
}

/// Rounds every parameter through `f32`, matching what a checkpoint keeps.
pub fn quantize(policy: &NetPolicy) -> NetPolicy {
    let mut p = policy.clone();
    let q = |n: &mut PolicyNet<f64>| n.params_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
    q(&mut p.actor);
    if let Some(r) = p.residual.as_mut() {
        q(r);
    }
    p
}
