//! Neutral on-disk weight format: `index.txt` with `name<TAB>dtype<TAB>shape`
//! lines plus one little-endian `<name>.bin` per array.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const INDEX_FILE: &str = "index.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayDType {
    F32,
    F64,
}

impl ArrayDType {
    pub fn as_str(self) -> &'static str {
        match self {
            ArrayDType::F32 => "f32",
            ArrayDType::F64 => "f64",
        }
    }

    fn width(self) -> usize {
        match self {
            ArrayDType::F32 => 4,
            ArrayDType::F64 => 8,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "f32" => Some(ArrayDType::F32),
            "f64" => Some(ArrayDType::F64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dtype: ArrayDType,
    pub shape: Vec<usize>,
    /// Raw little-endian payload.
    pub data: Vec<u8>,
}

impl NamedArray {
    pub fn from_tensor(name: &str, t: &Tensor) -> Result<Self> {
        let shape = t.dims().to_vec();
        let flat = t.flatten_all()?;
        let (dtype, data) = match t.dtype() {
            DType::F64 => (
                ArrayDType::F64,
                flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
            ),
            _ => (
                ArrayDType::F32,
                flat.to_dtype(DType::F32)?
                    .to_vec1::<f32>()?
                    .iter()
                    .flat_map(|v| v.to_le_bytes())
                    .collect(),
            ),
        };
        Ok(Self {
            name: name.to_string(),
            dtype,
            shape,
            data,
        })
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let t = match self.dtype {
            ArrayDType::F32 => {
                let v: Vec<f32> = self
                    .data
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Tensor::from_vec(v, self.shape.as_slice(), &Device::Cpu)?
            }
            ArrayDType::F64 => {
                let v: Vec<f64> = self
                    .data
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Tensor::from_vec(v, self.shape.as_slice(), &Device::Cpu)?
            }
        };
        Ok(t)
    }

    pub fn elem_count(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightManifest {
    pub arrays: Vec<NamedArray>,
}

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

impl WeightManifest {
    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.arrays.iter().map(|a| a.name.as_str()).collect()
    }

    pub fn push_tensor(&mut self, name: &str, t: &Tensor) -> Result<()> {
        if self.get(name).is_some() {
            return Err(Error::config(format!("duplicate array `{name}` in manifest")));
        }
        self.arrays.push(NamedArray::from_tensor(name, t)?);
        Ok(())
    }

    /// Every parameter and buffer whose name starts with `prefix`, in registration order.
    pub fn from_store(store: &ParamStore, prefix: &str) -> Result<Self> {
        let mut m = Self::default();
        for (name, t) in store.snapshot()? {
            if name.starts_with(prefix) {
                m.push_tensor(&name, &t)?;
            }
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut index = String::new();
        for a in &self.arrays {
            if a.name.contains(['/', '\\', '\t', '\n']) {
                return Err(Error::config(format!("array name `{}` is not file-safe", a.name)));
            }
            writeln!(index, "{}\t{}\t{}", a.name, a.dtype.as_str(), shape_str(&a.shape)).unwrap();
            write_atomic(&dir.join(format!("{}.bin", a.name)), &a.data)?;
        }
        write_atomic(&dir.join(INDEX_FILE), index.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut arrays = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |detail: String| Error::Parse { line: i + 1, detail };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(parse_err(format!("expected 3 tab-separated columns, found {}", cols.len())));
            }
            let name = cols[0].to_string();
            if !seen.insert(name.clone()) {
                return Err(parse_err(format!("duplicate array `{name}`")));
            }
            let dtype = ArrayDType::parse(cols[1]).ok_or_else(|| parse_err(format!("unknown dtype `{}`", cols[1])))?;
            let shape = if cols[2].is_empty() {
                Vec::new()
            } else {
                cols[2]
                    .split(',')
                    .map(|d| d.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| parse_err(format!("bad shape `{}` for `{name}`", cols[2])))?
            };
            let bin = dir.join(format!("{name}.bin"));
            let data = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
            let expected: usize = shape.iter().product::<usize>() * dtype.width();
            if data.len() != expected {
                return Err(Error::Format {
                    field: "weight array",
                    detail: format!(
                        "`{name}` declares shape [{}] ({expected} bytes) but its file holds {} bytes",
                        shape_str(&shape),
                        data.len()
                    ),
                });
            }
            arrays.push(NamedArray {
                name,
                dtype,
                shape,
                data,
            });
        }
        Ok(Self { arrays })
    }
}

/// Ordered `external_name → internal_name` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NameMap {
    pub pairs: Vec<(String, String)>,
}

impl NameMap {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 2 {
                return Err(Error::Parse {
                    line: i + 1,
                    detail: format!("expected 2 tab-separated columns, found {}", cols.len()),
                });
            }
            if !seen.insert(cols[1].to_string()) {
                return Err(Error::Parse {
                    line: i + 1,
                    detail: format!("internal name `{}` mapped twice", cols[1]),
                });
            }
            pairs.push((cols[0].to_string(), cols[1].to_string()));
        }
        Ok(Self { pairs })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for (e, i) in &self.pairs {
            writeln!(text, "{e}\t{i}").unwrap();
        }
        write_atomic(path, text.as_bytes())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Internal names that were overwritten.
    pub loaded: Vec<String>,
    /// Manifest arrays with no mapping entry.
    pub skipped: Vec<String>,
    /// Mapped external names absent from the manifest.
    pub missing: Vec<String>,
}

impl LoadReport {
    pub fn summary(&self) -> String {
        format!(
            "loaded {} / skipped {} / missing {}",
            self.loaded.len(),
            self.skipped.len(),
            self.missing.len()
        )
    }
}

/// Copies mapped manifest arrays into the store. Every check runs before any
/// value is written, so a failed call leaves the model untouched.
pub fn load_pretrained(
    manifest: &WeightManifest,
    map: &NameMap,
    store: &ParamStore,
    allow_partial: bool,
) -> Result<LoadReport> {
    let by_name: HashMap<&str, &NamedArray> = manifest.arrays.iter().map(|a| (a.name.as_str(), a)).collect();
    let mapped: HashSet<&str> = map.pairs.iter().map(|(e, _)| e.as_str()).collect();
    let mut report = LoadReport::default();
    let mut updates = Vec::new();
    for (ext, int) in &map.pairs {
        let var = store
            .get(int)
            .ok_or_else(|| Error::config(format!("mapping target `{int}` is not a model parameter")))?;
        match by_name.get(ext.as_str()) {
            Some(a) => {
                if a.shape != var.dims() {
                    return Err(Error::Shape(format!(
                        "pretrained array `{ext}` has shape [{}] but parameter `{int}` expects [{}]",
                        shape_str(&a.shape),
                        shape_str(var.dims())
                    )));
                }
                updates.push((int.clone(), a.to_tensor()?));
                report.loaded.push(int.clone());
            }
            None => report.missing.push(ext.clone()),
        }
    }
    report.skipped = manifest
        .arrays
        .iter()
        .filter(|a| !mapped.contains(a.name.as_str()))
        .map(|a| a.name.clone())
        .collect();
    if !report.missing.is_empty() && !allow_partial {
        return Err(Error::config(format!(
            "pretrained manifest lacks {} mapped arrays (first: `{}`); pass --allow-partial to load the rest",
            report.missing.len(),
            report.missing[0]
        )));
    }
    for (int, t) in updates {
        store.set(&int, &t)?;
    }
    Ok(report)
}

/// Writes the mapped parameters of `store` under their external names.
pub fn export_mapped(store: &ParamStore, map: &NameMap) -> Result<WeightManifest> {
    let mut m = WeightManifest::default();
    for (ext, int) in &map.pairs {
        let var = store
            .get(int)
            .ok_or_else(|| Error::config(format!("mapping target `{int}` is not a model parameter")))?;
        m.push_tensor(ext, &var.as_tensor().detach().copy()?)?;
    }
    Ok(m)
}

/// Internal component → external (ASR-toolkit style) component names.
const CONFORMER_RENAMES: [(&str, &str); 20] = [
    ("subsampling.conv0", "pre_encode.conv.0"),
    ("subsampling.conv1", "pre_encode.conv.2"),
    ("subsampling.proj", "pre_encode.out"),
    ("ffn1.norm", "norm_feed_forward1"),
    ("ffn1.fc1", "feed_forward1.linear1"),
    ("ffn1.fc2", "feed_forward1.linear2"),
    ("mhsa.norm", "norm_self_att"),
    ("mhsa.q", "self_attn.linear_q"),
    ("mhsa.k", "self_attn.linear_k"),
    ("mhsa.v", "self_attn.linear_v"),
    ("mhsa.out", "self_attn.linear_out"),
    ("mhsa.pos", "self_attn.linear_pos"),
    ("conv.norm", "norm_conv"),
    ("conv.pw1", "conv.pointwise_conv1"),
    ("conv.dw", "conv.depthwise_conv"),
    ("conv.bn", "conv.batch_norm"),
    ("conv.pw2", "conv.pointwise_conv2"),
    ("ffn2.norm", "norm_feed_forward2"),
    ("ffn2.fc1", "feed_forward2.linear1"),
    ("ffn2.fc2", "feed_forward2.linear2"),
];

fn external_conformer_name(rel: &str) -> String {
    let (block, rest) = match rel.strip_prefix("blocks.") {
        Some(r) => {
            let (idx, rest) = r.split_once('.').unwrap_or((r, ""));
            (Some(idx), rest)
        }
        None => (None, rel),
    };
    // `mhsa.pos_bias_u` must not be caught by the `mhsa.pos` rule.
    let renamed = if let Some(b) = rest.strip_prefix("mhsa.pos_bias_") {
        format!("self_attn.pos_bias_{b}")
    } else {
        CONFORMER_RENAMES
            .iter()
            .find_map(|(int, ext)| {
                rest.strip_prefix(int)
                    .filter(|tail| tail.starts_with('.'))
                    .map(|tail| format!("{ext}{tail}"))
            })
            .unwrap_or_else(|| rest.to_string())
    };
    match block {
        Some(i) => format!("encoder.layers.{i}.{renamed}"),
        None => format!("encoder.{renamed}"),
    }
}

/// Mapping between an external pretrained Conformer encoder and the encoder
/// parameters of `store` registered under `encoder_prefix`.
pub fn conformer_name_map(store: &ParamStore, encoder_prefix: &str) -> NameMap {
    let prefix = format!("{encoder_prefix}.");
    NameMap {
        pairs: store
            .names()
            .into_iter()
            .filter_map(|n| {
                n.strip_prefix(&prefix)
                    .map(|rel| (external_conformer_name(rel), n.clone()))
            })
            .collect(),
    }
}
