//! The `BQT1` tensor container.
//!
//! Layout (all integers little-endian):
//!
//! | offset        | size          | field                                  |
//! |---------------|---------------|----------------------------------------|
//! | 0             | 4             | magic `b"BQT1"`                        |
//! | 4             | 1             | dtype code: 0 = f32, 1 = f64, 2 = sign |
//! | 5             | 1             | rank `r`                               |
//! | 6             | 8·r           | dimensions, `u64` each                 |
//! | 6 + 8·r       | elem · ∏dims  | row-major payload                      |
//!
//! f32/f64 payloads are IEEE-754 little-endian; sign payloads are one `i8`
//! per element and must be −1 or +1. Trailing bytes are rejected.

use alloc::vec::Vec;
use core::fmt;

use crate::numerics::DenseMatrix;

pub const MAGIC: [u8; 4] = *b"BQT1";
pub const HEADER_FIXED: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    Sign,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
            DType::Sign => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            2 => Some(DType::Sign),
            _ => None,
        }
    }

    pub fn element_size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::Sign => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    Sign(Vec<i8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::Sign(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::Sign(_) => DType::Sign,
        }
    }
}

/// A typed, shaped tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    shape: Vec<u64>,
    data: TensorData,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TensorError {
    BadMagic { offset: usize },
    BadDtype { offset: usize, code: u8 },
    Truncated { offset: usize },
    TrailingBytes { offset: usize },
    BadSign { offset: usize, value: i8 },
    ShapeMismatch { elements: usize, expected: u64 },
    Overflow { offset: usize },
    RankTooLarge { rank: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::BadMagic { offset } => write!(f, "bad magic at offset {offset}"),
            TensorError::BadDtype { offset, code } => {
                write!(f, "unsupported dtype code {code} at offset {offset}")
            }
            TensorError::Truncated { offset } => write!(f, "truncated input at offset {offset}"),
            TensorError::TrailingBytes { offset } => {
                write!(f, "unexpected trailing bytes at offset {offset}")
            }
            TensorError::BadSign { offset, value } => {
                write!(f, "sign tensor holds {value} at offset {offset}")
            }
            TensorError::ShapeMismatch { elements, expected } => {
                write!(f, "{elements} elements do not fill shape of {expected}")
            }
            TensorError::Overflow { offset } => {
                write!(f, "dimension product overflows at offset {offset}")
            }
            TensorError::RankTooLarge { rank } => write!(f, "rank {rank} exceeds 255"),
        }
    }
}

impl core::error::Error for TensorError {}

impl TensorFile {
    pub fn new(shape: Vec<u64>, data: TensorData) -> Result<Self, TensorError> {
        if shape.len() > u8::MAX as usize {
            return Err(TensorError::RankTooLarge { rank: shape.len() });
        }
        let expected = shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or(TensorError::Overflow { offset: HEADER_FIXED })?;
        if data.len() as u64 != expected {
            return Err(TensorError::ShapeMismatch {
                elements: data.len(),
                expected,
            });
        }
        if let TensorData::Sign(v) = &data {
            if let Some((i, &value)) = v.iter().enumerate().find(|(_, &s)| s != 1 && s != -1) {
                return Err(TensorError::BadSign {
                    offset: HEADER_FIXED + 8 * shape.len() + i,
                    value,
                });
            }
        }
        Ok(Self { shape, data })
    }

    pub fn from_matrix_f64(m: &DenseMatrix) -> Self {
        Self {
            shape: alloc::vec![m.rows() as u64, m.cols() as u64],
            data: TensorData::F64(m.as_slice().to_vec()),
        }
    }

    pub fn from_vector_f64(v: &[f64]) -> Self {
        Self {
            shape: alloc::vec![v.len() as u64],
            data: TensorData::F64(v.to_vec()),
        }
    }

    pub fn shape(&self) -> &[u64] {
        &self.shape
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    /// Values widened to `f64`, in row-major order.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::Sign(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    /// Interprets a rank-2 tensor as a matrix. Returns `None` for other ranks.
    pub fn to_matrix(&self) -> Option<DenseMatrix> {
        match self.shape[..] {
            [r, c] => DenseMatrix::from_vec(r as usize, c as usize, self.to_f64_vec()).ok(),
            _ => None,
        }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_FIXED + 8 * self.shape.len() + self.data.len() * self.dtype().element_size()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.push(self.dtype().code());
        out.push(self.shape.len() as u8);
        for d in &self.shape {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::Sign(v) => out.extend(v.iter().map(|&s| s as u8)),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TensorError> {
        let take = |offset: usize, len: usize| -> Result<&[u8], TensorError> {
            bytes
                .get(offset..offset + len)
                .ok_or(TensorError::Truncated {
                    offset: bytes.len().max(offset),
                })
        };
        if take(0, 4)? != MAGIC {
            return Err(TensorError::BadMagic { offset: 0 });
        }
        let code = take(4, 1)?[0];
        let dtype = DType::from_code(code).ok_or(TensorError::BadDtype { offset: 4, code })?;
        let rank = take(5, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut count = 1u64;
        for k in 0..rank {
            let off = HEADER_FIXED + 8 * k;
            let d = u64::from_le_bytes(take(off, 8)?.try_into().unwrap());
            count = count.checked_mul(d).ok_or(TensorError::Overflow { offset: off })?;
            shape.push(d);
        }
        let start = HEADER_FIXED + 8 * rank;
        let payload_len = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(dtype.element_size()))
            .ok_or(TensorError::Overflow { offset: start })?;
        let end = start
            .checked_add(payload_len)
            .ok_or(TensorError::Overflow { offset: start })?;
        if bytes.len() < end {
            return Err(TensorError::Truncated {
                offset: bytes.len(),
            });
        }
        if bytes.len() > end {
            return Err(TensorError::TrailingBytes { offset: end });
        }
        let payload = &bytes[start..end];
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::Sign => {
                let mut v = Vec::with_capacity(payload.len());
                for (i, &b) in payload.iter().enumerate() {
                    let s = b as i8;
                    if s != 1 && s != -1 {
                        return Err(TensorError::BadSign {
                            offset: start + i,
                            value: s,
                        });
                    }
                    v.push(s);
                }
                TensorData::Sign(v)
            }
        };
        Ok(Self { shape, data })
    }
}
