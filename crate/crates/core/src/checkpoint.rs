//! Binary container for trained models.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "VSDF"  version:u32  section_count:u32
//! per section:
//!   name_len:u16  name:utf8  dtype:u8  ndim:u8  dims:u64*ndim  payload_len:u64  payload
//! ```
//!
//! `dtype` 0 is `f32` little-endian, 1 is raw bytes (used for JSON
//! metadata). Readers skip sections they do not know, and sections with an
//! unknown dtype are carried through unchanged so a read/write cycle is
//! byte-identical.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::autodecoder::{DecoderWeights, LatentVector, SdfTrainConfig};
use crate::drag::DragModel;
use crate::error::{Error, Result};
use crate::geometry::{Point3, SampleSet, SdfSample};
use crate::nn::{Architecture, Float, Mlp, Tensors};
use crate::params::EstimatorWeights;

pub const MAGIC: &[u8; 4] = b"VSDF";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    Bytes,
    Other(u8),
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::Bytes => 1,
            DType::Other(c) => c,
        }
    }

    fn from_code(c: u8) -> Self {
        match c {
            0 => DType::F32,
            1 => DType::Bytes,
            c => DType::Other(c),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<u64>,
    pub payload: Vec<u8>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Ordered set of uniquely named sections.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    sections: Vec<Section>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|s| s.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn get(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn push(&mut self, section: Section) -> Result<()> {
        if section.name.len() > u16::MAX as usize {
            return Err(format_err("section name too long"));
        }
        if section.dims.len() > u8::MAX as usize {
            return Err(format_err("too many dimensions"));
        }
        if self.contains(&section.name) {
            return Err(format_err(format!("duplicate section {:?}", section.name)));
        }
        if section.dtype == DType::F32 {
            let n: u64 = section.dims.iter().product();
            if n * 4 != section.payload.len() as u64 {
                return Err(format_err(format!(
                    "section {:?}: shape {:?} does not match {} payload bytes",
                    section.name,
                    section.dims,
                    section.payload.len()
                )));
            }
        }
        self.sections.push(section);
        Ok(())
    }

    /// Replace or append.
    pub fn set(&mut self, section: Section) -> Result<()> {
        self.sections.retain(|s| s.name != section.name);
        self.push(section)
    }

    /// Copy every section of `other` whose name is not already present.
    pub fn merge_missing(&mut self, other: &Container) -> Result<()> {
        for s in &other.sections {
            if !self.contains(&s.name) {
                self.push(s.clone())?;
            }
        }
        Ok(())
    }

    pub fn put_f32(&mut self, name: impl Into<String>, dims: &[usize], data: &[f32]) -> Result<()> {
        let payload = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.set(Section {
            name: name.into(),
            dtype: DType::F32,
            dims: dims.iter().map(|&d| d as u64).collect(),
            payload,
        })
    }

    pub fn put_json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) -> Result<()> {
        let payload = serde_json::to_vec(value)?;
        self.set(Section {
            name: name.into(),
            dtype: DType::Bytes,
            dims: vec![payload.len() as u64],
            payload,
        })
    }

    /// Shape and values of an `f32` section.
    pub fn f32(&self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let s = self
            .get(name)
            .ok_or_else(|| format_err(format!("missing section {name:?}")))?;
        if s.dtype != DType::F32 {
            return Err(format_err(format!("section {name:?} is not f32")));
        }
        let data = s
            .payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok((s.dims.iter().map(|&d| d as usize).collect(), data))
    }

    pub fn json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let s = self
            .get(name)
            .ok_or_else(|| format_err(format!("missing section {name:?}")))?;
        if s.dtype != DType::Bytes {
            return Err(format_err(format!(
                "section {name:?} is not a byte section"
            )));
        }
        Ok(serde_json::from_slice(&s.payload)?)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.sections.len() as u32).to_le_bytes())?;
        for s in &self.sections {
            w.write_all(&(s.name.len() as u16).to_le_bytes())?;
            w.write_all(s.name.as_bytes())?;
            w.write_all(&[s.dtype.code(), s.dims.len() as u8])?;
            for d in &s.dims {
                w.write_all(&d.to_le_bytes())?;
            }
            w.write_all(&(s.payload.len() as u64).to_le_bytes())?;
            w.write_all(&s.payload)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(format_err("not a checkpoint: bad magic bytes"));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != FORMAT_VERSION {
            return Err(format_err(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let count = u32::from_le_bytes(read_array(&mut r)?);
        let mut c = Container::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(read_array(&mut r)?) as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name)?;
            let name =
                String::from_utf8(name).map_err(|_| format_err("section name is not UTF-8"))?;
            let [dtype, ndim] = read_array::<2>(&mut r)?;
            let dims = (0..ndim)
                .map(|_| read_array(&mut r).map(u64::from_le_bytes))
                .collect::<Result<Vec<_>>>()?;
            let len = u64::from_le_bytes(read_array(&mut r)?);
            let mut payload = Vec::new();
            let got = (&mut r).take(len).read_to_end(&mut payload)?;
            if got as u64 != len {
                return Err(format_err(format!("section {name:?} is truncated")));
            }
            c.push(Section {
                name,
                dtype: DType::from_code(dtype),
                dims,
                payload,
            })?;
        }
        Ok(c)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => format_err("checkpoint is truncated"),
        _ => e.into(),
    })
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    read_exact(r, &mut b)?;
    Ok(b)
}

/// Section names used by the model helpers below.
pub mod names {
    pub const DECODER: &str = "decoder";
    pub const SDF_CONFIG: &str = "sdf_config";
    pub const LATENTS: &str = "latents";
    pub const LATENT_IDS: &str = "latent_ids";
    pub const ESTIMATOR: &str = "estimator";
    pub const DRAG_MODEL: &str = "drag_model";
    pub const SAMPLE_IDS: &str = "sample_ids";
    pub const SAMPLES_PREFIX: &str = "samples.";
}

/// Store a network as `{prefix}.arch` plus `{prefix}.w{l}` and `{prefix}.b{l}`.
pub fn put_mlp<T: Float>(c: &mut Container, prefix: &str, net: &Mlp<T>) -> Result<()> {
    c.put_json(format!("{prefix}.arch"), &net.arch)?;
    for (l, (w, b)) in net
        .params
        .weights
        .iter()
        .zip(&net.params.biases)
        .enumerate()
    {
        let wv: Vec<f32> = w.iter().map(|v| v.to_f32().expect("finite")).collect();
        let bv: Vec<f32> = b.iter().map(|v| v.to_f32().expect("finite")).collect();
        c.put_f32(format!("{prefix}.w{l}"), &[w.nrows(), w.ncols()], &wv)?;
        c.put_f32(format!("{prefix}.b{l}"), &[b.len()], &bv)?;
    }
    Ok(())
}

pub fn get_mlp<T: Float>(c: &Container, prefix: &str) -> Result<Mlp<T>> {
    let arch: Architecture = c.json(&format!("{prefix}.arch"))?;
    arch.validate()?;
    let mut params = Tensors::<T> {
        weights: Vec::new(),
        biases: Vec::new(),
    };
    for l in 0..arch.layer_count() {
        let (dims, w) = c.f32(&format!("{prefix}.w{l}"))?;
        let (inp, out) = arch.layer_shape(l);
        if dims != [out, inp] {
            return Err(format_err(format!(
                "{prefix}.w{l} has shape {dims:?}, expected [{out}, {inp}]"
            )));
        }
        let (bdims, b) = c.f32(&format!("{prefix}.b{l}"))?;
        if bdims != [out] {
            return Err(format_err(format!(
                "{prefix}.b{l} has shape {bdims:?}, expected [{out}]"
            )));
        }
        let conv = |v: f32| T::from_f32(v).expect("representable");
        params.weights.push(
            Array2::from_shape_vec((out, inp), w.into_iter().map(conv).collect())
                .expect("shape checked"),
        );
        params
            .biases
            .push(Array1::from(b.into_iter().map(conv).collect::<Vec<_>>()));
    }
    Mlp::from_params(arch, params)
}

pub fn put_decoder(
    c: &mut Container,
    weights: &DecoderWeights,
    config: &SdfTrainConfig,
) -> Result<()> {
    put_mlp(c, names::DECODER, &weights.net)?;
    c.put_json(names::SDF_CONFIG, config)
}

pub fn get_decoder(c: &Container) -> Result<DecoderWeights> {
    DecoderWeights::new(get_mlp(c, names::DECODER)?)
}

/// Latent codes as one `[n, m]` matrix plus the ids in row order.
pub fn put_latents(c: &mut Container, latents: &BTreeMap<String, LatentVector>) -> Result<()> {
    let ids: Vec<&String> = latents.keys().collect();
    let m = latents.values().next().map_or(0, LatentVector::dim);
    let data: Vec<f32> = latents
        .values()
        .flat_map(|z| z.0.iter().map(|&v| v as f32))
        .collect();
    c.put_f32(names::LATENTS, &[ids.len(), m], &data)?;
    c.put_json(names::LATENT_IDS, &ids)
}

pub fn get_latents(c: &Container) -> Result<BTreeMap<String, LatentVector>> {
    let ids: Vec<String> = c.json(names::LATENT_IDS)?;
    let (dims, data) = c.f32(names::LATENTS)?;
    if dims.len() != 2 || dims[0] != ids.len() {
        return Err(format_err(format!(
            "latents shape {dims:?} does not match {} ids",
            ids.len()
        )));
    }
    let m = dims[1];
    Ok(ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            (
                id,
                LatentVector(data[i * m..(i + 1) * m].iter().map(|&v| v as f64).collect()),
            )
        })
        .collect())
}

pub fn put_estimator(c: &mut Container, est: &EstimatorWeights) -> Result<()> {
    put_mlp(c, names::ESTIMATOR, &est.net)
}

pub fn get_estimator(c: &Container) -> Result<EstimatorWeights> {
    EstimatorWeights::new(get_mlp(c, names::ESTIMATOR)?)
}

/// Sample sets as one `[n, 4]` block of `x, y, z, s` per shape, in order.
/// Values are rounded to `f32`, which is the precision training uses.
pub fn put_samples(c: &mut Container, sets: &[SampleSet]) -> Result<()> {
    let ids: Vec<&str> = sets.iter().map(|s| s.shape_id.as_str()).collect();
    c.put_json(names::SAMPLE_IDS, &ids)?;
    for set in sets {
        let data: Vec<f32> = set
            .samples
            .iter()
            .flat_map(|s| [s.point.x, s.point.y, s.point.z, s.value])
            .map(|v| v as f32)
            .collect();
        c.put_f32(
            format!("{}{}", names::SAMPLES_PREFIX, set.shape_id),
            &[set.count(), 4],
            &data,
        )?;
    }
    Ok(())
}

pub fn get_samples(c: &Container) -> Result<Vec<SampleSet>> {
    let ids: Vec<String> = c.json(names::SAMPLE_IDS)?;
    ids.into_iter()
        .map(|id| {
            let (dims, data) = c.f32(&format!("{}{id}", names::SAMPLES_PREFIX))?;
            if dims.len() != 2 || dims[1] != 4 {
                return Err(format_err(format!("samples for {id} have shape {dims:?}")));
            }
            let samples = data
                .chunks_exact(4)
                .map(|r| SdfSample {
                    point: Point3::new(r[0] as f64, r[1] as f64, r[2] as f64),
                    value: r[3] as f64,
                })
                .collect();
            Ok(SampleSet {
                shape_id: id,
                samples,
            })
        })
        .collect()
}

/// Tree thresholds must survive exactly, so the model is stored as JSON.
pub fn put_drag_model(c: &mut Container, model: &DragModel) -> Result<()> {
    c.put_json(names::DRAG_MODEL, model)
}

pub fn get_drag_model(c: &Container) -> Result<DragModel> {
    c.json(names::DRAG_MODEL)
}
