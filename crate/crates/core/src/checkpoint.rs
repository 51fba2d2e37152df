//! Binary model checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "FGLN" | version u16 | arch_id (u16 len + utf8) | width f64 | count u32
//! count × ( name (u16 len + utf8) | dims 4×u32 | f32 × numel )
//! ```
//!
//! `arch_id` carries the task as well, e.g. `FN3-seg`. Batchnorm running
//! statistics are stored as `(1, C, 1, 1)` records named
//! `<layer>.running_mean` and `<layer>.running_var`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::arch::{ArchId, ArchSpec, Model, Task};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Shape;

pub const MAGIC: [u8; 4] = *b"FGLN";
pub const VERSION: u16 = 1;

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_record(out: &mut Vec<u8>, name: &str, shape: Shape, data: impl Iterator<Item = f32>) {
    put_str(out, name);
    for d in shape.0 {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize weights and running statistics. Non-f32 models are rounded
/// to f32 on the way out.
pub fn to_bytes<T: Real>(model: &Model<T>) -> Vec<u8> {
    let spec = model.spec();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, &spec.label());
    out.extend_from_slice(&spec.width_multiplier.to_le_bytes());
    let count = model.params().len() + 2 * model.running_stats().len();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for p in model.params().iter() {
        put_record(&mut out, &p.name, p.shape(), p.value.data().iter().map(|v| v.f64() as f32));
    }
    for (name, rs) in model.running_stats() {
        let shape = Shape::new(1, rs.channels(), 1, 1);
        put_record(&mut out, &format!("{name}.running_mean"), shape, rs.mean.iter().map(|v| v.f64() as f32));
        put_record(&mut out, &format!("{name}.running_var"), shape, rs.var.iter().map(|v| v.f64() as f32));
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Load(format!("checkpoint truncated reading {what} at byte {} ({} bytes total)", self.pos, self.buf.len()))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u16(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Load(format!("{what} is not valid UTF-8")))
    }
}

/// Split a label such as `VGG5-seg` into its parts.
pub fn parse_arch_label(label: &str) -> Result<(ArchId, Task)> {
    let (arch, task) = label.rsplit_once('-').ok_or_else(|| Error::Load(format!("arch id {label:?} lacks a task suffix")))?;
    let arch = arch.parse::<ArchId>().map_err(|e| Error::Load(e.to_string()))?;
    let task = task.parse::<Task>().map_err(|e| Error::Load(e.to_string()))?;
    Ok((arch, task))
}

/// Decode a checkpoint. Either the whole model loads or an error is
/// returned; every stored tensor must match the rebuilt architecture.
pub fn from_bytes<T: Real>(buf: &[u8]) -> Result<Model<T>> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Load(format!("bad magic: expected \"{}\", found \"{}\"", MAGIC.escape_ascii(), magic.escape_ascii())));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Load(format!("unsupported checkpoint version: expected {VERSION}, found {version}")));
    }
    let label = r.str("arch id")?;
    let (arch, task) = parse_arch_label(&label)?;
    let width = f64::from_le_bytes(r.take(8, "width multiplier")?.try_into().unwrap());
    let spec = ArchSpec::new(arch, task).with_width(width);
    let mut model = Model::<T>::build(spec, 0).map_err(|e| Error::Load(format!("cannot rebuild {label}: {e}")))?;

    let count = r.u32("record count")? as usize;
    let mut records: HashMap<String, (Shape, Vec<f32>)> = HashMap::new();
    for _ in 0..count {
        let name = r.str("record name")?;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32("record dims")? as usize;
        }
        let shape = Shape(dims);
        let bytes = r.take(shape.numel() * 4, &format!("data of {name}"))?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if records.insert(name.clone(), (shape, data)).is_some() {
            return Err(Error::Load(format!("duplicate record {name}")));
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Load(format!("{} trailing bytes after last record", buf.len() - r.pos)));
    }

    let mut take = |name: &str, expect: Shape| -> Result<Vec<f32>> {
        let (shape, data) = records.remove(name).ok_or_else(|| Error::Load(format!("checkpoint for {label} lacks tensor {name}")))?;
        if shape != expect {
            return Err(Error::Load(format!("tensor {name}: expected shape {expect}, found {shape}")));
        }
        Ok(data)
    };
    for p in model.params_mut().iter_mut() {
        let data = take(&p.name, p.shape())?;
        for (dst, v) in p.value.data_mut().iter_mut().zip(data) {
            *dst = T::of(v as f64);
        }
    }
    for (name, rs) in model.running_stats_mut() {
        let shape = Shape::new(1, rs.channels(), 1, 1);
        let mean = take(&format!("{name}.running_mean"), shape)?;
        let var = take(&format!("{name}.running_var"), shape)?;
        rs.mean = mean.into_iter().map(|v| T::of(v as f64)).collect();
        rs.var = var.into_iter().map(|v| T::of(v as f64)).collect();
    }
    if let Some(extra) = records.keys().min() {
        return Err(Error::Load(format!("unexpected tensor {extra} for {label}")));
    }
    Ok(model)
}

pub fn save_checkpoint<T: Real>(model: &Model<T>, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Model<T>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf).map_err(|e| match e {
        Error::Load(m) => Error::Load(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Load and insist on a specific architecture and task.
pub fn load_checkpoint_expecting<T: Real>(path: &Path, arch: ArchId, task: Task) -> Result<Model<T>> {
    let model = load_checkpoint::<T>(path)?;
    let spec = model.spec();
    if (spec.arch, spec.task) != (arch, task) {
        return Err(Error::Load(format!("{}: arch mismatch: expected {}-{}, found {}", path.display(), arch, task, spec.label())));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_truncation_is_rejected() {
        let m = Model::<f32>::build(ArchSpec::new(ArchId::Fn3, Task::Seg).with_width(0.1), 3).unwrap();
        let bytes = to_bytes(&m);
        for cut in [0, 3, 5, 9, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(from_bytes::<f32>(&bytes[..cut]), Err(Error::Load(_))), "cut {cut}");
        }
        assert!(from_bytes::<f32>(&bytes).unwrap().same_weights(&m));
    }

    #[test]
    fn version_mismatch_names_both() {
        let m = Model::<f32>::build(ArchSpec::new(ArchId::Fn3, Task::Cls).with_width(0.1), 0).unwrap();
        let mut bytes = to_bytes(&m);
        bytes[4] = 9;
        let msg = from_bytes::<f32>(&bytes).unwrap_err().to_string();
        assert!(msg.contains("expected 1") && msg.contains("found 9"), "{msg}");
        bytes[0] = b'X';
        assert!(from_bytes::<f32>(&bytes).unwrap_err().to_string().contains("magic"));
    }
}
