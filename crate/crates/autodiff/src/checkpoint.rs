//! Versioned binary checkpoint: parameters, optimizer state, global step.
//!
//! Layout (little-endian):
//!
//! ```text
//! "HSRCKPT1"
//! u64 step
//! u32 n_meta, then n_meta × (str key, str value)
//! u32 n_params, then n_params × (str name, u32 rank, rank × u64 dims, values as f64)
//! u8 has_adam; if 1: u64 adam_step, f64 beta1, f64 beta2, f64 eps,
//!                    then per parameter: first moment f64s, second moment f64s
//! ```
//! where `str` is a u32 byte length followed by UTF-8.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::adam::{AdamConfig, AdamState};
use crate::error::{AutodiffError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::Real;

pub const MAGIC: &[u8; 8] = b"HSRCKPT1";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub step: u64,
    pub metadata: BTreeMap<String, String>,
    pub params: ParamStore,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&self.step.to_le_bytes())?;
        write_u32(w, self.metadata.len())?;
        for (k, v) in &self.metadata {
            write_str(w, k)?;
            write_str(w, v)?;
        }
        write_u32(w, self.params.len())?;
        for (_, p) in self.params.iter() {
            write_str(w, &p.name)?;
            write_u32(w, p.value.shape().len())?;
            for &d in p.value.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            write_values(w, p.value.data())?;
        }
        match &self.adam {
            None => w.write_all(&[0])?,
            Some(adam) => {
                w.write_all(&[1])?;
                w.write_all(&adam.step.to_le_bytes())?;
                for x in [adam.config.beta1, adam.config.beta2, adam.config.eps] {
                    w.write_all(&(x as f64).to_le_bytes())?;
                }
                for (m, v) in adam.first_moment.iter().zip(&adam.second_moment) {
                    write_values(w, m.data())?;
                    write_values(w, v.data())?;
                }
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(AutodiffError::Checkpoint(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(&magic)
            )));
        }
        let step = read_u64(r)?;
        let mut metadata = BTreeMap::new();
        for _ in 0..read_u32(r)? {
            let k = read_str(r)?;
            let v = read_str(r)?;
            metadata.insert(k, v);
        }
        let mut params = ParamStore::new();
        let mut shapes = Vec::new();
        for _ in 0..read_u32(r)? {
            let name = read_str(r)?;
            let rank = read_u32(r)? as usize;
            if rank > 8 {
                return Err(AutodiffError::Checkpoint(format!("rank {rank} for `{name}`")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(r)? as usize);
            }
            let n: usize = shape.iter().product();
            let data = read_values(r, n)?;
            shapes.push(shape.clone());
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let adam = match flag[0] {
            0 => None,
            1 => {
                let adam_step = read_u64(r)?;
                let beta1 = read_f64(r)? as Real;
                let beta2 = read_f64(r)? as Real;
                let eps = read_f64(r)? as Real;
                let mut first_moment = Vec::with_capacity(shapes.len());
                let mut second_moment = Vec::with_capacity(shapes.len());
                for shape in &shapes {
                    let n = shape.iter().product();
                    first_moment.push(Tensor::new(shape.clone(), read_values(r, n)?)?);
                    second_moment.push(Tensor::new(shape.clone(), read_values(r, n)?)?);
                }
                Some(AdamState {
                    config: AdamConfig { beta1, beta2, eps },
                    step: adam_step,
                    first_moment,
                    second_moment,
                })
            }
            other => {
                return Err(AutodiffError::Checkpoint(format!(
                    "invalid optimizer flag {other}"
                )))
            }
        };
        Ok(Self {
            step,
            metadata,
            params,
            adam,
        })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            self.write(&mut w)?;
            w.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(fs::File::open(path)?);
        Self::read(&mut r)
    }
}

fn write_u32<W: Write>(w: &mut W, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| AutodiffError::Checkpoint("count overflow".into()))?;
    w.write_all(&n.to_le_bytes())?;
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn write_values<W: Write>(w: &mut W, values: &[Real]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for &x in values {
        buf.extend_from_slice(&(x as f64).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u32(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| AutodiffError::Checkpoint(e.to_string()))
}

fn read_values<R: Read>(r: &mut R, n: usize) -> Result<Vec<Real>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as Real)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_magic() {
        let bytes = b"NOTACKPT\0\0\0\0\0\0\0\0".to_vec();
        let err = Checkpoint::read(&mut bytes.as_slice()).unwrap_err();
        assert!(matches!(err, AutodiffError::Checkpoint(_)));
    }

    #[test]
    fn truncated_file_is_an_error() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::ones(vec![4])).unwrap();
        let ckpt = Checkpoint {
            step: 3,
            metadata: BTreeMap::new(),
            params,
            adam: None,
        };
        let mut bytes = Vec::new();
        ckpt.write(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 5);
        assert!(Checkpoint::read(&mut bytes.as_slice()).is_err());
    }
}
