//! The `.tnsr` tensor exchange format.
//!
//! Little-endian layout:
//!
//! ```text
//! 0..4   magic "TNSR"
//! 4      version (1)
//! 5      dtype   (1 = f32, 2 = f64)
//! 6      ndim    (1..=4)
//! 7      reserved (0)
//! 8..    ndim × u32 extents
//! ...    row-major payload
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::tensor::{Dtype, Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"TNSR";
pub const VERSION: u8 = 1;
pub const EXTENSION: &str = "tnsr";
const FIXED_HEADER: usize = 8;

/// A tensor read from disk in its stored precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> Dtype {
        match self {
            AnyTensor::F32(_) => Dtype::F32,
            AnyTensor::F64(_) => Dtype::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to the requested precision.
    pub fn into_tensor<T: Scalar>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }

    /// Returns the tensor only if it is stored in precision `T`.
    pub fn exact<T: Scalar>(self) -> Result<Tensor<T>> {
        if self.dtype() != T::DTYPE {
            return Err(FormatError::DtypeMismatch { expected: T::DTYPE.name(), found: self.dtype().name() }.into());
        }
        Ok(self.into_tensor())
    }
}

/// Header length for a tensor of rank `ndim`.
pub fn header_len(ndim: usize) -> usize {
    FIXED_HEADER + 4 * ndim
}

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Result<Vec<u8>> {
    let ndim = t.shape().len();
    if !(1..=4).contains(&ndim) {
        return Err(FormatError::BadRank(ndim.min(255) as u8).into());
    }
    if let Some(i) = t.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("tensor element {i} (refusing to write)")));
    }
    let mut out = Vec::with_capacity(header_len(ndim) + t.len() * T::DTYPE.size());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[VERSION, T::DTYPE as u8, ndim as u8, 0]);
    for &e in t.shape() {
        let e = u32::try_from(e).map_err(|_| Error::invalid(format!("extent {e} exceeds u32")))?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    Ok(out)
}

fn decode_payload<T: Scalar>(shape: &[usize], payload: &[u8]) -> Result<Tensor<T>> {
    let size = T::DTYPE.size();
    let mut data = Vec::with_capacity(payload.len() / size);
    for (i, chunk) in payload.chunks_exact(size).enumerate() {
        let v = T::read_le(chunk);
        if v.is_nan() {
            return Err(FormatError::NaN(i).into());
        }
        if v.is_infinite() {
            return Err(FormatError::Infinite(i).into());
        }
        data.push(v);
    }
    Tensor::from_vec(shape, data)
}

pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    if bytes.len() < FIXED_HEADER {
        return Err(FormatError::Truncated { expected: FIXED_HEADER, found: bytes.len() }.into());
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic).into());
    }
    if bytes[4] != VERSION {
        return Err(FormatError::UnsupportedVersion(bytes[4]).into());
    }
    let dtype = Dtype::from_code(bytes[5]).ok_or(FormatError::UnsupportedDtype(bytes[5]))?;
    let ndim = bytes[6];
    if !(1..=4).contains(&ndim) {
        return Err(FormatError::BadRank(ndim).into());
    }
    if bytes[7] != 0 {
        return Err(FormatError::BadReserved(bytes[7]).into());
    }
    let hdr = header_len(ndim as usize);
    if bytes.len() < hdr {
        return Err(FormatError::Truncated { expected: hdr, found: bytes.len() }.into());
    }
    let shape: Vec<usize> = bytes[FIXED_HEADER..hdr]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let expected = hdr + shape.iter().product::<usize>() * dtype.size();
    if bytes.len() < expected {
        return Err(FormatError::Truncated { expected, found: bytes.len() }.into());
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes { extra: bytes.len() - expected }.into());
    }
    let payload = &bytes[hdr..];
    Ok(match dtype {
        Dtype::F32 => AnyTensor::F32(decode_payload(&shape, payload)?),
        Dtype::F64 => AnyTensor::F64(decode_payload(&shape, payload)?),
    })
}

pub fn write_tensor<T: Scalar>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(t)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn format_err(r: Result<AnyTensor>) -> FormatError {
        match r {
            Err(Error::Format(f)) => f,
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn consecutive_integers_round_trip() {
        let t = Tensor::from_vec(&[2, 3], (1..=6).map(|v| v as f32).collect()).unwrap();
        let back = decode(&encode(&t).unwrap()).unwrap().exact::<f32>().unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn header_size_of_feature_map() {
        assert_eq!(header_len(3), 20);
        let t = Tensor::<f32>::zeros(&[256, 40, 40]);
        let bytes = encode(&t).unwrap();
        assert_eq!(bytes.len(), 20 + 256 * 40 * 40 * 4);
        assert_eq!(&bytes[..8], b"TNSR\x01\x01\x03\x00");
        assert_eq!(&bytes[8..12], &256u32.to_le_bytes());
    }

    #[test]
    fn nan_payload_is_rejected() {
        let t = Tensor::<f64>::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut bytes = encode(&t).unwrap();
        let off = header_len(1) + 8;
        bytes[off..off + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert_eq!(format_err(decode(&bytes)), FormatError::NaN(1));
    }

    #[test]
    fn distinct_error_kinds() {
        let t = Tensor::<f32>::from_vec(&[2, 2], vec![0.5; 4]).unwrap();
        let good = encode(&t).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(format_err(decode(&bad)), FormatError::BadMagic(_)));

        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(format_err(decode(&bad)), FormatError::UnsupportedVersion(2));

        let mut bad = good.clone();
        bad[5] = 9;
        assert_eq!(format_err(decode(&bad)), FormatError::UnsupportedDtype(9));

        let mut bad = good.clone();
        bad[6] = 5;
        assert_eq!(format_err(decode(&bad)), FormatError::BadRank(5));

        let bad = &good[..good.len() - 1];
        assert!(matches!(format_err(decode(bad)), FormatError::Truncated { .. }));

        let mut bad = good.clone();
        bad.push(0);
        assert_eq!(format_err(decode(&bad)), FormatError::TrailingBytes { extra: 1 });

        let as_f64 = decode(&good).unwrap().exact::<f64>();
        assert!(matches!(as_f64, Err(Error::Format(FormatError::DtypeMismatch { .. }))));
    }

    #[test]
    fn refuses_to_write_non_finite() {
        let t = Tensor::<f32>::from_vec_unchecked(&[1], vec![f32::INFINITY]).unwrap();
        assert!(encode(&t).is_err());
        assert!(encode(&Tensor::<f32>::zeros(&[1, 1, 1, 1, 1])).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.tnsr");
        let t = Tensor::<f64>::from_vec(&[1, 2, 1, 2], vec![0.1, -0.2, 1e300, -0.0]).unwrap();
        write_tensor(&t, &path).unwrap();
        let back = read_tensor(&path).unwrap().exact::<f64>().unwrap();
        assert_eq!(back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
