//! MPNZ checkpoint container: a small binary format with a JSON metadata
//! block followed by named f32 tensors.
//!
//! Layout: magic `MPNZ`, u32 LE version, u64 LE metadata length, UTF-8 JSON,
//! then for each tensor: u32 LE name length, name bytes, u32 LE ndim,
//! `ndim` u32 LE dims, and the raw little-endian f32 payload.

use crate::diffnet::Network;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use serde::{de::DeserializeOwned, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"MPNZ";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor<Real>,
}

/// Write a container with serialized metadata and the given tensors.
pub fn write_container<M: Serialize>(
    w: &mut dyn Write,
    metadata: &M,
    tensors: &[NamedTensor],
) -> Result<()> {
    let json = serde_json::to_vec(metadata)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for nt in tensors {
        let name = nt.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let dims = nt.tensor.shape();
        w.write_all(&(dims.len() as u32).to_le_bytes())?;
        for &d in dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in nt.tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<'a> {
    r: &'a mut dyn Read,
    offset: u64,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.r.read_exact(&mut buf).map_err(|_| Error::Format {
            offset: self.offset,
            detail: format!("truncated while reading {what} ({n} bytes)"),
        })?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.bytes(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn at_eof(&mut self) -> Result<Option<u8>> {
        let mut b = [0u8; 1];
        match self.r.read(&mut b) {
            Ok(0) => Ok(None),
            Ok(_) => {
                self.offset += 1;
                Ok(Some(b[0]))
            }
            Err(e) => Err(e.into()),
        }
    }
}

/// Read a container, returning the parsed metadata and all tensors.
pub fn read_container<M: DeserializeOwned>(r: &mut dyn Read) -> Result<(M, Vec<NamedTensor>)> {
    let mut rd = Reader { r, offset: 0 };
    let magic = rd.bytes(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad magic {magic:?}, expected MPNZ"),
        });
    }
    let version = rd.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            detail: format!("unsupported container version {version}"),
        });
    }
    let json_len = rd.u64("metadata length")? as usize;
    let json_off = rd.offset;
    let json = rd.bytes(json_len, "metadata")?;
    let metadata: M = serde_json::from_slice(&json).map_err(|e| Error::Format {
        offset: json_off,
        detail: format!("metadata JSON: {e}"),
    })?;
    let mut tensors = Vec::new();
    loop {
        let first = match rd.at_eof()? {
            None => break,
            Some(b) => b,
        };
        let rest = rd.bytes(3, "name length")?;
        let name_len = u32::from_le_bytes([first, rest[0], rest[1], rest[2]]) as usize;
        let name_off = rd.offset;
        let name = String::from_utf8(rd.bytes(name_len, "tensor name")?).map_err(|_| {
            Error::Format {
                offset: name_off,
                detail: "tensor name is not UTF-8".into(),
            }
        })?;
        let ndim = rd.u32("ndim")? as usize;
        if ndim > 8 {
            return Err(Error::Format {
                offset: rd.offset - 4,
                detail: format!("implausible ndim {ndim} for tensor `{name}`"),
            });
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(rd.u32("dim")? as usize);
        }
        let len: usize = dims.iter().product();
        let payload = rd.bytes(len * 4, "tensor payload")?;
        let data: Vec<Real> = payload
            .chunks_exact(4)
            .map(|c| Real::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor {
            name,
            tensor: Tensor::new(dims, data),
        });
    }
    Ok((metadata, tensors))
}

/// Flatten a network into named tensors: `layer{i}.param{j}`, plus masks and
/// batchnorm running statistics where present.
pub fn network_tensors(net: &Network<Real>, prefix: &str) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    for (i, layer) in net.layers.iter().enumerate() {
        for (j, p) in layer.params.iter().enumerate() {
            out.push(NamedTensor {
                name: format!("{prefix}layer{i}.param{j}"),
                tensor: p.clone(),
            });
        }
        if let Some(mask) = &layer.weight_mask {
            out.push(NamedTensor {
                name: format!("{prefix}layer{i}.mask"),
                tensor: mask.clone(),
            });
        }
        for (j, r) in layer.running.iter().enumerate() {
            out.push(NamedTensor {
                name: format!("{prefix}layer{i}.running{j}"),
                tensor: r.clone(),
            });
        }
    }
    out
}

/// Load tensors back into an instantiated network with matching structure.
pub fn restore_network(
    net: &mut Network<Real>,
    tensors: &[NamedTensor],
    prefix: &str,
) -> Result<()> {
    let find = |name: &str| tensors.iter().find(|t| t.name == name);
    for (i, layer) in net.layers.iter_mut().enumerate() {
        for (j, p) in layer.params.iter_mut().enumerate() {
            let name = format!("{prefix}layer{i}.param{j}");
            let t = find(&name)
                .ok_or_else(|| Error::config(format!("checkpoint missing tensor `{name}`")))?;
            if t.tensor.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    a: format!("{:?}", t.tensor.shape()),
                    b: format!("{:?}", p.shape()),
                    detail: format!("checkpoint tensor `{name}`"),
                });
            }
            *p = t.tensor.clone();
        }
        let mask_name = format!("{prefix}layer{i}.mask");
        layer.weight_mask = find(&mask_name).map(|t| t.tensor.clone());
        for (j, r) in layer.running.iter_mut().enumerate() {
            let name = format!("{prefix}layer{i}.running{j}");
            if let Some(t) = find(&name) {
                *r = t.tensor.clone();
            }
        }
    }
    Ok(())
}

pub fn save_to_path<M: Serialize>(
    path: &Path,
    metadata: &M,
    tensors: &[NamedTensor],
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_container(&mut f, metadata, tensors)?;
    f.flush()?;
    Ok(())
}

pub fn load_from_path<M: DeserializeOwned>(path: &Path) -> Result<(M, Vec<NamedTensor>)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_container(&mut f)
}
