//! Feature dump files.
//!
//! ```text
//! "F3FT"  magic
//! u16     version (1)
//! u8      dtype: 0 = f32, 1 = f64
//! u8      ndim
//! u32     dims..., then the row-major payload, all little endian
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"F3FT";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }
}

/// An n-dimensional array as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureDump {
    F32 { dims: Vec<usize>, data: Vec<f32> },
    F64 { dims: Vec<usize>, data: Vec<f64> },
}

fn check_len(dims: &[usize], len: usize) -> Result<()> {
    if dims.is_empty() || dims.len() > u8::MAX as usize {
        return Err(Error::arg(format!(
            "dump rank {} not in 1..=255",
            dims.len()
        )));
    }
    if dims.iter().any(|&d| d > u32::MAX as usize) {
        return Err(Error::arg("dump dimension exceeds u32"));
    }
    if dims.iter().product::<usize>() != len {
        return Err(Error::arg(format!(
            "dims {dims:?} do not match {len} values"
        )));
    }
    Ok(())
}

impl FeatureDump {
    pub fn f64(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_len(&dims, data.len())?;
        Ok(FeatureDump::F64 { dims, data })
    }

    pub fn f32(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_len(&dims, data.len())?;
        Ok(FeatureDump::F32 { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        match self {
            FeatureDump::F32 { dims, .. } | FeatureDump::F64 { dims, .. } => dims,
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            FeatureDump::F32 { .. } => DType::F32,
            FeatureDump::F64 { .. } => DType::F64,
        }
    }

    /// Values widened to f64.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            FeatureDump::F32 { data, .. } => data.iter().map(|&v| v as f64).collect(),
            FeatureDump::F64 { data, .. } => data.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.dims();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype().code());
        out.push(dims.len() as u8);
        for &d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match self {
            FeatureDump::F32 { data, .. } => data
                .iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            FeatureDump::F64 { data, .. } => data
                .iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(origin, msg);
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("not a feature dump"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(bad(&format!("unsupported dump version {version}")));
        }
        let dtype = DType::from_code(bytes[6]).ok_or_else(|| bad("unknown dtype code"))?;
        let ndim = bytes[7] as usize;
        let header = 8 + 4 * ndim;
        if ndim == 0 || bytes.len() < header {
            return Err(bad("truncated header"));
        }
        let dims: Vec<usize> = bytes[8..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad("dims overflow"))?;
        let payload = &bytes[header..];
        if Some(payload.len()) != count.checked_mul(dtype.size()) {
            return Err(bad(&format!(
                "payload has {} bytes, dims {dims:?} need {}",
                payload.len(),
                count.saturating_mul(dtype.size())
            )));
        }
        Ok(match dtype {
            DType::F32 => FeatureDump::F32 {
                dims,
                data: payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            },
            DType::F64 => FeatureDump::F64 {
                dims,
                data: payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            },
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_both_dtypes() {
        let origin = Path::new("mem");
        let a = FeatureDump::f64(
            vec![2, 3],
            vec![0.1, -2.5, f64::MIN_POSITIVE, 1e300, -0.0, 7.0],
        )
        .unwrap();
        assert_eq!(FeatureDump::from_bytes(&a.to_bytes(), origin).unwrap(), a);
        let b = FeatureDump::f32(vec![3], vec![0.1, -1.0, 3.5]).unwrap();
        assert_eq!(FeatureDump::from_bytes(&b.to_bytes(), origin).unwrap(), b);
        assert_eq!(b.to_bytes().len(), 8 + 4 + 12);
    }

    #[test]
    fn rejects_corrupt_input() {
        let origin = Path::new("mem");
        let a = FeatureDump::f64(vec![2], vec![1.0, 2.0]).unwrap();
        let bytes = a.to_bytes();
        assert!(FeatureDump::from_bytes(&bytes[..bytes.len() - 1], origin).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(
            FeatureDump::from_bytes(&wrong, origin),
            Err(Error::Format { .. })
        ));
        let mut dtype = bytes;
        dtype[6] = 9;
        assert!(FeatureDump::from_bytes(&dtype, origin).is_err());
        assert!(FeatureDump::f64(vec![3], vec![1.0]).is_err());
    }
}
