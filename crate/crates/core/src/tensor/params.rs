use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::mat::{Mat, Scalar};
use crate::{Error, Result};

/// Handle of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Mat<T>>,
    lookup: HashMap<String, ParamId>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), lookup: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat<T>) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.values.len());
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Mat<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat<T> {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Mat<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// Replaces a parameter's value, which may change its shape.
    pub fn replace(&mut self, id: ParamId, value: Mat<T>) {
        self.values[id.0] = value;
    }

    /// Number of tensors.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat<T>)> {
        self.ids().map(move |id| (id, self.names[id.0].as_str(), &self.values[id.0]))
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), values: self.values.iter().map(Mat::cast).collect(), lookup: self.lookup.clone() }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|m| m.as_slice().iter().all(|x| x.is_finite()))
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Mat<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self { grads: store.values.iter().map(|m| Mat::zeros(m.rows(), m.cols())).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Mat<T> {
        &self.grads[id.0]
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Mat<T>) {
        self.grads[id.0].add_assign(g);
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.as_mut_slice().iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in &mut self.grads {
            g.scale_assign(s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|m| m.as_slice().iter().all(|x| x.is_finite()))
    }
}

const MAGIC: &[u8; 8] = b"HFBRTCKP";
const VERSION: u32 = 1;

/// Writes a checkpoint:
///
/// ```text
/// magic  "HFBRTCKP"                     8 bytes
/// version                               u32 LE (= 1)
/// header length, header                 u64 LE, UTF-8 JSON
/// tensor count                          u64 LE
/// per tensor: name length, name, rows, cols   u32 LE, UTF-8, u64 LE, u64 LE
/// per tensor, in table order: values    rows·cols f64 LE, row-major
/// ```
pub fn save_checkpoint(path: &Path, header: &serde_json::Value, store: &ParamStore<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + store.numel() * 8);
    write_checkpoint(&mut buf, header, store)?;
    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_checkpoint<W: Write>(w: &mut W, header: &serde_json::Value, store: &ParamStore<f64>) -> Result<()> {
    let header = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (_, name, m) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(m.rows() as u64).to_le_bytes())?;
        w.write_all(&(m.cols() as u64).to_le_bytes())?;
    }
    for (_, _, m) in store.iter() {
        for x in m.as_slice() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(serde_json::Value, ParamStore<f64>)> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice()).map_err(|e| match e {
        Error::Format { detail, .. } => Error::Format { path: path.into(), detail },
        other => other,
    })
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(serde_json::Value, ParamStore<f64>)> {
    let fmt = |detail: &str| Error::Format { path: "<checkpoint>".into(), detail: detail.into() };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| fmt("truncated magic"))?;
    if &magic != MAGIC {
        return Err(fmt("not a checkpoint (bad magic)"));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(fmt(&format!("unsupported checkpoint version {version}")));
    }
    let header_len = read_u64(r)? as usize;
    let header_bytes = read_bytes(r, header_len)?;
    let header: serde_json::Value = serde_json::from_slice(&header_bytes)?;
    let count = read_u64(r)? as usize;
    let mut table = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = read_u32(r)? as usize;
        let name = String::from_utf8(read_bytes(r, n)?).map_err(|_| fmt("parameter name is not UTF-8"))?;
        let rows = read_u64(r)? as usize;
        let cols = read_u64(r)? as usize;
        table.push((name, rows, cols));
    }
    let mut store = ParamStore::new();
    for (name, rows, cols) in table {
        let raw = read_bytes(r, rows * cols * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        store.add(name, Mat::from_vec(rows, cols, data)?)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(fmt("trailing bytes after last tensor"));
    }
    Ok((header, store))
}

fn read_bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(Error::Format { path: "<checkpoint>".into(), detail: "truncated file".into() });
    }
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_bytes(r, 4)?.try_into().expect("4 bytes")))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_bytes(r, 8)?.try_into().expect("8 bytes")))
}
