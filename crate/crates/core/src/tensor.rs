//! Dense row-major tensor values and the `TNSR1` file format.
//!
//! A `TNSR1` file is one ASCII header line, `TNSR1 <dtype> <rank> <d0> ... <dn>\n`,
//! followed by the raw little-endian payload.

use std::fmt;

use thiserror::Error;

use crate::ir::{load_bits, store_bits, ElementType, TensorType};

#[derive(Clone, PartialEq, Eq)]
pub struct TensorData {
    pub elem: ElementType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TensorFileError {
    #[error("missing or malformed TNSR1 header")]
    BadHeader,
    #[error("unknown element type `{0}`")]
    UnknownDtype(String),
    #[error("payload is {got} bytes, expected {expected}")]
    PayloadSize { expected: usize, got: usize },
}

pub fn num_elements(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl TensorData {
    pub fn zeros(elem: ElementType, shape: &[usize]) -> Self {
        let n = num_elements(shape) * elem.byte_width();
        Self { elem, shape: shape.to_vec(), bytes: vec![0; n] }
    }

    pub fn from_f32(shape: &[usize], values: &[f32]) -> Self {
        assert_eq!(num_elements(shape), values.len());
        let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self { elem: ElementType::F32, shape: shape.to_vec(), bytes }
    }

    pub fn from_i32(shape: &[usize], values: &[i32]) -> Self {
        assert_eq!(num_elements(shape), values.len());
        let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self { elem: ElementType::I32, shape: shape.to_vec(), bytes }
    }

    pub fn from_i8(shape: &[usize], values: &[i8]) -> Self {
        assert_eq!(num_elements(shape), values.len());
        Self { elem: ElementType::I8, shape: shape.to_vec(), bytes: values.iter().map(|v| *v as u8).collect() }
    }

    /// Builds a tensor from per-element bits (see [`load_bits`]).
    pub fn from_bits(elem: ElementType, shape: &[usize], bits: &[u32]) -> Self {
        let mut t = Self::zeros(elem, shape);
        for (i, b) in bits.iter().enumerate() {
            t.set_bits(i, *b);
        }
        t
    }

    pub fn len(&self) -> usize {
        num_elements(&self.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tensor_type(&self) -> TensorType {
        TensorType::fixed(&self.shape.iter().map(|&d| d as u64).collect::<Vec<_>>(), self.elem)
    }

    pub fn bits(&self, i: usize) -> u32 {
        let w = self.elem.byte_width();
        load_bits(self.elem, &self.bytes[i * w..])
    }

    pub fn set_bits(&mut self, i: usize, bits: u32) {
        let w = self.elem.byte_width();
        store_bits(self.elem, bits, &mut self.bytes[i * w..]);
    }

    pub fn to_f32(&self) -> Vec<f32> {
        assert_eq!(self.elem, ElementType::F32);
        (0..self.len()).map(|i| f32::from_bits(self.bits(i))).collect()
    }

    pub fn to_i64(&self) -> Vec<i64> {
        (0..self.len())
            .map(|i| match self.elem {
                ElementType::F32 => f32::from_bits(self.bits(i)) as i64,
                ElementType::I32 => self.bits(i) as i32 as i64,
                ElementType::I8 => self.bits(i) as u8 as i8 as i64,
            })
            .collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut header = format!("TNSR1 {} {}", self.elem, self.shape.len());
        for d in &self.shape {
            header.push_str(&format!(" {d}"));
        }
        header.push('\n');
        let mut out = header.into_bytes();
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn decode(data: &[u8]) -> Result<Self, TensorFileError> {
        let nl = data
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(TensorFileError::BadHeader)?;
        let header = std::str::from_utf8(&data[..nl]).map_err(|_| TensorFileError::BadHeader)?;
        let mut fields = header.split(' ');
        if fields.next() != Some("TNSR1") {
            return Err(TensorFileError::BadHeader);
        }
        let dtype = fields.next().ok_or(TensorFileError::BadHeader)?;
        let elem = ElementType::from_name(dtype).ok_or_else(|| TensorFileError::UnknownDtype(dtype.into()))?;
        let rank: usize = fields
            .next()
            .and_then(|r| r.parse().ok())
            .ok_or(TensorFileError::BadHeader)?;
        let shape: Vec<usize> = fields
            .map(|d| d.parse().map_err(|_| TensorFileError::BadHeader))
            .collect::<Result<_, _>>()?;
        if shape.len() != rank {
            return Err(TensorFileError::BadHeader);
        }
        let expected = shape
            .iter()
            .try_fold(elem.byte_width(), |acc, &d| acc.checked_mul(d))
            .ok_or(TensorFileError::BadHeader)?;
        let payload = &data[nl + 1..];
        if payload.len() != expected {
            return Err(TensorFileError::PayloadSize { expected, got: payload.len() });
        }
        Ok(Self { elem, shape, bytes: payload.to_vec() })
    }
}

impl fmt::Debug for TensorData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TensorData({} {:?}", self.elem, self.shape)?;
        if self.len() <= 16 {
            match self.elem {
                ElementType::F32 => write!(f, " {:?}", self.to_f32())?,
                _ => write!(f, " {:?}", self.to_i64())?,
            }
        }
        f.write_str(")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tnsr_round_trip() {
        let t = TensorData::from_f32(&[2, 3], &[1.0, -2.0, 3.5, 0.0, -0.0, 8.0]);
        let enc = t.encode();
        assert!(enc.starts_with(b"TNSR1 f32 2 2 3\n"));
        assert_eq!(TensorData::decode(&enc).unwrap(), t);
    }

    #[test]
    fn rank_zero_header() {
        let t = TensorData::from_i8(&[], &[-3]);
        assert!(t.encode().starts_with(b"TNSR1 i8 0\n"));
        assert_eq!(TensorData::decode(&t.encode()).unwrap().to_i64(), vec![-3]);
    }

    #[test]
    fn bad_payload_length() {
        let mut enc = TensorData::from_i32(&[2], &[1, 2]).encode();
        enc.pop();
        assert!(matches!(TensorData::decode(&enc), Err(TensorFileError::PayloadSize { .. })));
        assert_eq!(TensorData::decode(b"TNSR2 f32 0\n"), Err(TensorFileError::BadHeader));
    }

    #[test]
    fn strides() {
        assert_eq!(row_major_strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(row_major_strides(&[]), Vec::<usize>::new());
    }
}
