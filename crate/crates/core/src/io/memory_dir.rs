//! Memory directory: `manifest.json` plus one `(p, p, c + 4)` f64 tensor
//! per patch holding latent channels, depth and world xyz per token.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::Camera;
use crate::linalg::Vec3;
use crate::memory::{MemoryError, MemoryPatch, MosaicMemory, PatchId, RopeOrigin};

use super::{read_json, write_json, IoError, Tensor, TensorData};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchEntry {
    pub id: PatchId,
    pub size: usize,
    pub channels: usize,
    pub source_time: usize,
    pub rope_origin: RopeOrigin,
    pub downsample: usize,
    pub source_camera: Camera<f64>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryManifest {
    pub version: u32,
    pub voxel_size: Option<f64>,
    pub next_id: u64,
    pub patches: Vec<PatchEntry>,
}

pub fn write_memory(dir: &Path, memory: &MosaicMemory) -> Result<(), IoError> {
    super::create_dir(dir)?;
    let mut entries = Vec::with_capacity(memory.len());
    for p in memory.patches() {
        let file = format!("patch_{:06}.mmt", p.id.0);
        let c = p.channels;
        let mut data = Vec::with_capacity(p.token_count() * (c + 4));
        for t in 0..p.token_count() {
            data.extend(p.token_latent_values(t).iter().map(|v| *v as f64));
            data.push(p.depth[t]);
            data.extend_from_slice(&p.world_points[t].to_array());
        }
        Tensor::new(vec![p.size, p.size, c + 4], TensorData::F64(data))?.write(&dir.join(&file))?;
        entries.push(PatchEntry {
            id: p.id,
            size: p.size,
            channels: c,
            source_time: p.source_time,
            rope_origin: p.rope_origin,
            downsample: p.downsample,
            source_camera: p.source_camera,
            file,
        });
    }
    write_json(
        &dir.join("manifest.json"),
        &MemoryManifest {
            version: 1,
            voxel_size: memory.voxel_size(),
            next_id: memory.next_id(),
            patches: entries,
        },
    )
}

pub fn read_memory(dir: &Path) -> Result<MosaicMemory, IoError> {
    let manifest: MemoryManifest = read_json(&dir.join("manifest.json"))?;
    let mut patches = Vec::with_capacity(manifest.patches.len());
    for e in &manifest.patches {
        let t = Tensor::read(&dir.join(&e.file))?;
        if t.dims != [e.size, e.size, e.channels + 4] {
            return Err(IoError::Format(format!(
                "{}: dims {:?} do not match patch size {} with {} channels",
                e.file, t.dims, e.size, e.channels
            )));
        }
        let v = t.as_f64()?;
        let stride = e.channels + 4;
        let mut latent = Vec::with_capacity(e.size * e.size * e.channels);
        let mut depth = Vec::new();
        let mut world_points = Vec::new();
        for tok in v.chunks_exact(stride) {
            latent.extend(tok[..e.channels].iter().map(|x| *x as f32));
            depth.push(tok[e.channels]);
            world_points.push(Vec3::new(tok[e.channels + 1], tok[e.channels + 2], tok[e.channels + 3]));
        }
        patches.push(MemoryPatch {
            id: e.id,
            size: e.size,
            channels: e.channels,
            latent,
            depth,
            source_camera: e.source_camera,
            source_time: e.source_time,
            rope_origin: e.rope_origin,
            downsample: e.downsample,
            world_points,
        });
    }
    let invalid = |e: MemoryError| IoError::Invalid(e.to_string());
    let mut memory = match manifest.voxel_size {
        Some(v) => MosaicMemory::with_voxel_size(v).map_err(invalid)?,
        None => MosaicMemory::new(),
    };
    memory.insert(patches).map_err(invalid)?;
    memory.set_next_id(manifest.next_id);
    Ok(memory)
}
