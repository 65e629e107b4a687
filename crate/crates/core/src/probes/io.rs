//! Probe container:
//!
//! ```text
//! "PRBPROBE" | u32 version | u8 kind (0 lossfit, 1 linear, 2 submodel, 3 lora) |
//! kind header | u32 tensor_count | tensor table as in checkpoints
//!
//! lossfit:  u8 input (0 prompt, 1 gold answer) | f64 slope | f64 intercept
//! linear:   u32 n_layers | u32 d_model
//! submodel: u32 K | u32 d_probe | u32 d_model | u32 d_ff | K × u32 base layer
//! lora:     u32 rank | u32 n_layers | u32 d_model | u32 d_ff
//! ```

use std::path::Path;

use super::{LayerMap, LinearProbe, LossFit, LoraProbe, NllInput, Probe, ProbeKind, SubmodelProbe};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::ParamStore;

pub const PROBE_MAGIC: &[u8; 8] = b"PRBPROBE";
pub const PROBE_VERSION: u32 = 1;

pub fn write_probe(probe: &Probe) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(PROBE_MAGIC);
    w.u32(PROBE_VERSION);
    w.u8(probe.kind().tag());
    let empty = ParamStore::new();
    let params = match probe {
        Probe::LossFit(p) => {
            w.u8(p.input.tag());
            w.f64(p.slope);
            w.f64(p.intercept);
            &empty
        }
        Probe::Linear(p) => {
            w.u32(p.n_layers() as u32);
            w.u32(p.d_model() as u32);
            &p.params
        }
        Probe::Submodel(p) => {
            w.u32(p.layer_map.k() as u32);
            w.u32(p.d_probe as u32);
            w.u32(p.d_model as u32);
            w.u32(p.d_ff as u32);
            for &l in &p.layer_map.map {
                w.u32(l as u32);
            }
            &p.params
        }
        Probe::Lora(p) => {
            for v in [p.rank, p.n_layers, p.d_model, p.d_ff] {
                w.u32(v as u32);
            }
            &p.params
        }
    };
    w.tensors(params);
    w.finish()
}

fn format_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        offset,
        reason: reason.into(),
    }
}

pub fn read_probe(bytes: &[u8]) -> Result<Probe> {
    let mut r = Reader::new(bytes);
    r.magic(PROBE_MAGIC)?;
    let at = r.offset();
    let version = r.u32()?;
    if version != PROBE_VERSION {
        return Err(format_err(at, format!("unsupported version {version}")));
    }
    let at = r.offset();
    let kind = match r.u8()? {
        0 => ProbeKind::LossFit,
        1 => ProbeKind::Linear,
        2 => ProbeKind::Submodel,
        3 => ProbeKind::Lora,
        t => return Err(format_err(at, format!("unknown probe kind tag {t}"))),
    };
    let probe = match kind {
        ProbeKind::LossFit => {
            let at = r.offset();
            let input = NllInput::from_tag(r.u8()?).ok_or_else(|| format_err(at, "unknown loss-fit input tag"))?;
            let slope = r.f64()?;
            let intercept = r.f64()?;
            let at = r.offset();
            if !r.tensors()?.is_empty() {
                return Err(format_err(at, "loss-fit probe carries no tensors"));
            }
            Probe::LossFit(LossFit { input, slope, intercept })
        }
        ProbeKind::Linear => {
            let (n, d) = (r.u32()? as usize, r.u32()? as usize);
            let at = r.offset();
            let params = r.tensors()?;
            let ok = params.len() == 2
                && params.get("w").map(|t| t.shape() == [n, d]).unwrap_or(false)
                && params.get("b").map(|t| t.shape() == [n]).unwrap_or(false);
            if !ok {
                return Err(format_err(at, "linear probe tensors do not match header"));
            }
            Probe::Linear(LinearProbe { params })
        }
        ProbeKind::Submodel => {
            let k = r.u32()? as usize;
            let (d_probe, d_model, d_ff) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
            let at = r.offset();
            let mut map = Vec::with_capacity(k.min(1024));
            for _ in 0..k {
                map.push(r.u32()? as usize);
            }
            let layer_map = LayerMap { map };
            layer_map
                .validate(usize::MAX)
                .map_err(|e| format_err(at, e.to_string()))?;
            let at = r.offset();
            let params = r.tensors()?;
            let reference = SubmodelProbe::new(layer_map.clone(), d_model, d_probe, 0)
                .map_err(|e| format_err(at, e.to_string()))?;
            if reference.d_ff != d_ff {
                return Err(format_err(at, format!("submodel d_ff {d_ff} ≠ 4·d_probe")));
            }
            same_layout(&reference.params, &params).map_err(|e| format_err(at, e))?;
            Probe::Submodel(SubmodelProbe { params, ..reference })
        }
        ProbeKind::Lora => {
            let mut h = [0usize; 4];
            for v in &mut h {
                *v = r.u32()? as usize;
            }
            let [rank, n_layers, d_model, d_ff] = h;
            let at = r.offset();
            let params = r.tensors()?;
            let cfg = crate::model::ModelConfig {
                vocab_size: 4,
                d_model,
                n_layers,
                n_heads: 1,
                d_ff,
                seq_max: 8,
                seed: 0,
            };
            let reference = LoraProbe::new(&cfg, rank, 0).map_err(|e| format_err(at, e.to_string()))?;
            same_layout(&reference.params, &params).map_err(|e| format_err(at, e))?;
            Probe::Lora(LoraProbe { params, ..reference })
        }
    };
    r.expect_end()?;
    Ok(probe)
}

fn same_layout(reference: &ParamStore, found: &ParamStore) -> std::result::Result<(), String> {
    if reference.len() != found.len() {
        return Err(format!("expected {} tensors, found {}", reference.len(), found.len()));
    }
    for ((na, a), (nb, b)) in reference.iter().zip(found.iter()) {
        if na != nb || a.shape() != b.shape() {
            return Err(format!("tensor {nb:?} {:?} does not match {na:?} {:?}", b.shape(), a.shape()));
        }
    }
    Ok(())
}

pub fn save_probe(probe: &Probe, path: impl AsRef<Path>) -> Result<()> {
    crate::codec::write_file(path, &write_probe(probe))
}

pub fn load_probe(path: impl AsRef<Path>) -> Result<Probe> {
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    read_probe(&bytes)
}
