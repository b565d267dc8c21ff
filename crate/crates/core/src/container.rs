//! Named-tensor container used for checkpoints and corpus caching.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ASCT"  u16 version (=1)  u32 count
//! count x { u16 name_len, name (UTF-8), u8 dtype (0=f32, 1=f64),
//!           u8 ndim, ndim x u32 dims, row-major payload }
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"ASCT";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Wraps `t`, keeping its element type.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        match T::DTYPE_CODE {
            0 => AnyTensor::F32(t.cast()),
            _ => AnyTensor::F64(t.cast()),
        }
    }

    /// Converts to the requested element type.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

impl From<Tensor<f32>> for AnyTensor {
    fn from(t: Tensor<f32>) -> Self {
        AnyTensor::F32(t)
    }
}

impl From<Tensor<f64>> for AnyTensor {
    fn from(t: Tensor<f64>) -> Self {
        AnyTensor::F64(t)
    }
}

/// Ordered list of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    entries: Vec<(String, AnyTensor)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: impl Into<AnyTensor>) {
        self.entries.push((name.into(), tensor.into()));
    }

    pub fn get(&self, name: &str) -> Option<&AnyTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn entries(&self) -> &[(String, AnyTensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.entries {
            let bytes = name.as_bytes();
            let len = u16::try_from(bytes.len())
                .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "name too long"))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(bytes)?;
            let shape = tensor.shape();
            let dtype = match tensor {
                AnyTensor::F32(_) => 0u8,
                AnyTensor::F64(_) => 1u8,
            };
            w.write_all(&[dtype, shape.len() as u8])?;
            for &d in shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            match tensor {
                AnyTensor::F32(t) => {
                    for v in t.data() {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                AnyTensor::F64(t) => {
                    for v in t.data() {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes, "tensor container")
    }

    pub fn read_from(r: &mut impl Read, context: &str) -> Result<Self> {
        let bad = |msg: String| Error::format(context, msg);
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, context)?;
        if &magic != MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let version = u16::from_le_bytes(read_array(r, context)?);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(read_array(r, context)?);
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(read_array(r, context)?) as usize;
            let mut name = vec![0u8; name_len];
            read_exact(r, &mut name, context)?;
            let name = String::from_utf8(name).map_err(|e| bad(e.to_string()))?;
            let [dtype, ndim] = read_array::<2>(r, context)?;
            let mut shape = Vec::with_capacity(ndim as usize);
            for _ in 0..ndim {
                shape.push(u32::from_le_bytes(read_array(r, context)?) as usize);
            }
            let len: usize = shape.iter().product();
            let tensor = match dtype {
                0 => {
                    let mut data = Vec::with_capacity(len);
                    for _ in 0..len {
                        data.push(f32::from_le_bytes(read_array(r, context)?));
                    }
                    AnyTensor::F32(Tensor::from_vec(&shape, data).map_err(|e| bad(e.to_string()))?)
                }
                1 => {
                    let mut data = Vec::with_capacity(len);
                    for _ in 0..len {
                        data.push(f64::from_le_bytes(read_array(r, context)?));
                    }
                    AnyTensor::F64(Tensor::from_vec(&shape, data).map_err(|e| bad(e.to_string()))?)
                }
                other => return Err(bad(format!("unknown dtype code {other} for '{name}'"))),
            };
            entries.push((name, tensor));
        }
        Ok(Container { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut bytes.as_slice(), &path.display().to_string())
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], context: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::format(context, format!("truncated: {e}")))
}

fn read_array<const N: usize>(r: &mut impl Read, context: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf, context)?;
    Ok(buf)
}
