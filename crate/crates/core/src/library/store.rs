//! On-disk layout:
//!
//! ```text
//! <dir>/meta.json          format version, layer count, settings, module index
//! <dir>/modules/<id>.bin   one binary file per module
//! <dir>/solutions.json     earlier solutions in order
//! ```
//!
//! Module files are little-endian: magic `PCLM`, format version (u32),
//! layer index, input and output dims (u32 each), weights (f32, row-major
//! `output x input`), biases (f32), then an optional input model (flag byte,
//! `k`, `v` as u32, projection, mean and covariance as f64) and optional
//! probe inputs (flag byte, row count as u32, rows as f32). `meta.json`
//! stores a SHA-256 of every module file.

use std::fs;
use std::path::Path as FsPath;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Library, LibraryModule, Solution};
use crate::error::{Error, Result};
use crate::nn::ModuleParams;
use crate::pt::InputModel;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"PCLM";

#[derive(Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    num_layers: usize,
    settings: serde_json::Value,
    modules: Vec<ModuleMeta>,
}

#[derive(Serialize, Deserialize)]
struct ModuleMeta {
    module_id: String,
    layer_index: usize,
    input_dim: usize,
    output_dim: usize,
    origin_problem: String,
    origin_index: usize,
    origin_train_accuracy: f64,
    sha256: String,
}

fn write_file(path: &FsPath, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &FsPath) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_library(library: &Library, dir: &FsPath) -> Result<()> {
    let modules_dir = dir.join("modules");
    fs::create_dir_all(&modules_dir).map_err(|e| Error::io(&modules_dir, e))?;
    let mut metas = Vec::new();
    for m in library.layers.iter().flatten() {
        let bytes = encode_module(m);
        write_file(&modules_dir.join(format!("{}.bin", m.module_id)), &bytes)?;
        metas.push(ModuleMeta {
            module_id: m.module_id.clone(),
            layer_index: m.layer_index,
            input_dim: m.input_dim(),
            output_dim: m.output_dim(),
            origin_problem: m.origin_problem.clone(),
            origin_index: m.origin_index,
            origin_train_accuracy: m.origin_train_accuracy,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let meta = Meta {
        format_version: FORMAT_VERSION,
        num_layers: library.num_layers(),
        settings: library.settings.clone(),
        modules: metas,
    };
    write_file(&dir.join("meta.json"), &serde_json::to_vec_pretty(&meta)?)?;
    write_file(&dir.join("solutions.json"), &serde_json::to_vec_pretty(&library.solutions)?)?;
    Ok(())
}

pub fn load_library(dir: &FsPath) -> Result<Library> {
    let meta_path = dir.join("meta.json");
    let meta: Meta = serde_json::from_slice(&read_file(&meta_path)?).map_err(|e| Error::Corrupt {
        path: meta_path.clone(),
        reason: e.to_string(),
    })?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: meta.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let mut library = Library::new(meta.num_layers);
    library.settings = meta.settings;
    for mm in meta.modules {
        let path = dir.join("modules").join(format!("{}.bin", mm.module_id));
        let bytes = read_file(&path)?;
        if hex::encode(Sha256::digest(&bytes)) != mm.sha256 {
            return Err(Error::Corrupt {
                path,
                reason: "checksum mismatch".into(),
            });
        }
        let corrupt = |reason: &str| Error::Corrupt {
            path: path.clone(),
            reason: reason.to_string(),
        };
        let (layer_index, params, input_model, probe_inputs) = decode_module(&bytes).map_err(|r| corrupt(&r))?;
        if layer_index != mm.layer_index
            || params.input_dim != mm.input_dim
            || params.output_dim != mm.output_dim
            || layer_index == 0
            || layer_index > meta.num_layers
        {
            return Err(corrupt("module header disagrees with meta.json"));
        }
        library.layers[layer_index - 1].push(LibraryModule {
            module_id: mm.module_id,
            layer_index,
            params,
            origin_problem: mm.origin_problem,
            origin_index: mm.origin_index,
            origin_train_accuracy: mm.origin_train_accuracy,
            input_model,
            probe_inputs,
        });
    }
    let sol_path = dir.join("solutions.json");
    let solutions: Vec<Solution> = serde_json::from_slice(&read_file(&sol_path)?).map_err(|e| Error::Corrupt {
        path: sol_path.clone(),
        reason: e.to_string(),
    })?;
    for s in &solutions {
        for id in &s.module_ids {
            if library.module(id).is_none() {
                return Err(Error::Corrupt {
                    path: sol_path.clone(),
                    reason: format!("solution for {} references unknown module {id}", s.problem_id),
                });
            }
        }
    }
    library.solutions = solutions;
    Ok(library)
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn encode_module(m: &LibraryModule) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, m.layer_index);
    put_u32(&mut out, m.params.input_dim);
    put_u32(&mut out, m.params.output_dim);
    for w in m.params.weights.iter().chain(&m.params.biases) {
        out.extend_from_slice(&w.to_le_bytes());
    }
    match &m.input_model {
        Some(model) => {
            out.push(1);
            put_u32(&mut out, model.k());
            put_u32(&mut out, model.v());
            // row-major for readability of the format
            for r in 0..model.k() {
                for c in 0..model.v() {
                    out.extend_from_slice(&model.projection[(r, c)].to_le_bytes());
                }
            }
            for x in model.mean.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
            for r in 0..model.k() {
                for c in 0..model.k() {
                    out.extend_from_slice(&model.cov[(r, c)].to_le_bytes());
                }
            }
        }
        None => out.push(0),
    }
    match &m.probe_inputs {
        Some(probes) => {
            out.push(1);
            put_u32(&mut out, probes.nrows());
            for x in probes.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        None => out.push(0),
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| "unexpected end of file".to_string())?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f32>, String> {
        let raw = self.take(n.checked_mul(4).ok_or("size overflow")?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(8).ok_or("size overflow")?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

type Decoded = (usize, ModuleParams, Option<InputModel>, Option<Array2<f32>>);

fn decode_module(bytes: &[u8]) -> std::result::Result<Decoded, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(format!("module format version {version}, expected {FORMAT_VERSION}"));
    }
    let layer_index = r.u32()?;
    let input_dim = r.u32()?;
    let output_dim = r.u32()?;
    let weights = r.f32s(input_dim * output_dim)?;
    let biases = r.f32s(output_dim)?;
    let params = ModuleParams {
        input_dim,
        output_dim,
        weights,
        biases,
        frozen: true,
    };
    let input_model = match r.u8()? {
        0 => None,
        1 => {
            let k = r.u32()?;
            let v = r.u32()?;
            let projection = DMatrix::from_row_slice(k, v, &r.f64s(k * v)?);
            let mean = DVector::from_vec(r.f64s(k)?);
            let cov = DMatrix::from_row_slice(k, k, &r.f64s(k * k)?);
            Some(InputModel::from_parts(projection, mean, cov).map_err(|e| e.to_string())?)
        }
        _ => return Err("bad input-model flag".into()),
    };
    let probe_inputs = match r.u8()? {
        0 => None,
        1 => {
            let rows = r.u32()?;
            let values = r.f32s(rows * input_dim)?;
            Some(Array2::from_shape_vec((rows, input_dim), values).map_err(|e| e.to_string())?)
        }
        _ => return Err("bad probe flag".into()),
    };
    if r.pos != bytes.len() {
        return Err("trailing bytes".into());
    }
    Ok((layer_index, params, input_model, probe_inputs))
}
