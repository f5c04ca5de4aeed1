//! Retrieval directory: `retrieval.json` plus per-patch tensors
//! `coords` `(p, p, 5)` f64 `[j, u, v, depth, valid]`, `latent`
//! `(p, p, c)` f32 and, when warped, `warped` `(p, p, c + 1)` f32 with a
//! trailing validity channel.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::Camera;
use crate::memory::{PatchId, RetrievedPatch};
use crate::pipeline::{ConditionPatch, Conditioning};
use crate::warping::{RopeCoord, WarpStrategy, WarpedLatent};

use super::{read_json, write_json, IoError, Tensor, TensorData};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievedEntry {
    pub id: PatchId,
    pub source_time: usize,
    pub size: usize,
    pub occlusion_score: f64,
    pub strategy: WarpStrategy,
    pub coords: String,
    pub latent: String,
    pub warped: Option<String>,
    pub anchor: Option<[i64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalManifest {
    pub version: u32,
    pub query_camera: Camera<f64>,
    pub query_time: i64,
    pub downsample: usize,
    pub channels: usize,
    /// Flags the retrieval ran with, recorded for provenance.
    pub settings: serde_json::Value,
    pub patches: Vec<RetrievedEntry>,
}

pub fn write_retrieval(dir: &Path, c: &Conditioning, settings: serde_json::Value) -> Result<(), IoError> {
    super::create_dir(dir)?;
    let mut entries = Vec::new();
    for cp in &c.patches {
        let r = &cp.retrieved;
        let p = r.size;
        let id = r.id.0;
        let coords = format!("patch_{id:06}_coords.mmt");
        let latent = format!("patch_{id:06}_latent.mmt");
        let mut data = Vec::with_capacity(p * p * 5);
        for t in 0..p * p {
            let k = r.coords[t];
            data.extend_from_slice(&[k.j as f64, k.u, k.v, r.depth[t], if r.valid[t] { 1.0 } else { 0.0 }]);
        }
        Tensor::new(vec![p, p, 5], TensorData::F64(data))?.write(&dir.join(&coords))?;
        Tensor::new(vec![p, p, c.channels], TensorData::F32(cp.latent.clone()))?.write(&dir.join(&latent))?;
        let warped = match &cp.warped {
            Some(w) => {
                let file = format!("patch_{id:06}_warped.mmt");
                let mut data = Vec::with_capacity(p * p * (c.channels + 1));
                for t in 0..p * p {
                    data.extend_from_slice(&w.values[t * c.channels..(t + 1) * c.channels]);
                    data.push(if w.valid[t] { 1.0 } else { 0.0 });
                }
                Tensor::new(vec![p, p, c.channels + 1], TensorData::F32(data))?.write(&dir.join(&file))?;
                Some(file)
            }
            None => None,
        };
        entries.push(RetrievedEntry {
            id: r.id,
            source_time: r.source_time,
            size: p,
            occlusion_score: r.occlusion_score,
            strategy: cp.strategy,
            coords,
            latent,
            warped,
            anchor: cp.warped.as_ref().map(|w| [w.anchor.0, w.anchor.1]),
        });
    }
    write_json(
        &dir.join("retrieval.json"),
        &RetrievalManifest {
            version: 1,
            query_camera: c.query,
            query_time: c.query_time,
            downsample: c.downsample,
            channels: c.channels,
            settings,
            patches: entries,
        },
    )
}

fn expect_dims(t: &Tensor, dims: &[usize], file: &str) -> Result<(), IoError> {
    if t.dims != dims {
        return Err(IoError::Format(format!("{file}: dims {:?}, expected {dims:?}", t.dims)));
    }
    Ok(())
}

pub fn read_retrieval(dir: &Path) -> Result<(Conditioning, serde_json::Value), IoError> {
    let m: RetrievalManifest = read_json(&dir.join("retrieval.json"))?;
    let ch = m.channels;
    let mut patches = Vec::new();
    for e in &m.patches {
        let p = e.size;
        let ct = Tensor::read(&dir.join(&e.coords))?;
        expect_dims(&ct, &[p, p, 5], &e.coords)?;
        let lt = Tensor::read(&dir.join(&e.latent))?;
        expect_dims(&lt, &[p, p, ch], &e.latent)?;
        let (mut coords, mut depth, mut valid) = (Vec::new(), Vec::new(), Vec::new());
        for k in ct.as_f64()?.chunks_exact(5) {
            coords.push(RopeCoord {
                j: k[0] as i64,
                u: k[1],
                v: k[2],
            });
            depth.push(k[3]);
            valid.push(k[4] != 0.0);
        }
        let warped = match &e.warped {
            Some(file) => {
                let wt = Tensor::read(&dir.join(file))?;
                expect_dims(&wt, &[p, p, ch + 1], file)?;
                let mut values = Vec::with_capacity(p * p * ch);
                let mut wval = Vec::with_capacity(p * p);
                for tok in wt.as_f32()?.chunks_exact(ch + 1) {
                    values.extend_from_slice(&tok[..ch]);
                    wval.push(tok[ch] != 0.0);
                }
                let [au, av] = e.anchor.unwrap_or([0, 0]);
                Some(WarpedLatent {
                    size: p,
                    channels: ch,
                    values,
                    valid: wval,
                    anchor: (au, av),
                })
            }
            None => None,
        };
        patches.push(ConditionPatch {
            retrieved: RetrievedPatch {
                id: e.id,
                source_time: e.source_time,
                size: p,
                coords,
                valid,
                depth,
                occlusion_score: e.occlusion_score,
            },
            strategy: e.strategy,
            latent: lt.as_f32()?.to_vec(),
            warped,
        });
    }
    Ok((
        Conditioning {
            query: m.query_camera,
            query_time: m.query_time,
            downsample: m.downsample,
            channels: ch,
            patches,
        },
        m.settings,
    ))
}
