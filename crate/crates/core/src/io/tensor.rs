//! `MMTB` binary tensors: magic, `u16` version, `u8` dtype, `u8` ndim,
//! `u32` dims, then a row-major payload, all little-endian.

use std::path::Path;

use crate::grid::Grid;

use super::IoError;

pub const MAGIC: &[u8; 4] = b"MMTB";
pub const VERSION: u16 = 1;
const HEADER: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    U8 = 2,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            2 => Some(DType::U8),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

fn format_err(m: impl Into<String>) -> IoError {
    IoError::Format(m.into())
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self, IoError> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(format_err(format!(
                "dims {dims:?} need {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn element_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + 4 * self.dims.len() + self.data.len() * self.data.dtype().size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.data.dtype() as u8);
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, IoError> {
        if bytes.len() < HEADER {
            return Err(format_err("truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(format_err("bad magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(format_err(format!("unsupported version {version}")));
        }
        let dtype = DType::from_code(bytes[6]).ok_or_else(|| format_err(format!("unknown dtype {}", bytes[6])))?;
        let ndim = bytes[7] as usize;
        let dims_end = HEADER + 4 * ndim;
        if bytes.len() < dims_end {
            return Err(format_err("truncated dims"));
        }
        let dims: Vec<usize> = bytes[HEADER..dims_end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let n = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| format_err("dims overflow"))?;
        let payload = &bytes[dims_end..];
        let expected = n
            .checked_mul(dtype.size())
            .ok_or_else(|| format_err("dims overflow"))?;
        if payload.len() < expected {
            return Err(format_err(format!(
                "truncated payload: {} of {expected} bytes",
                payload.len()
            )));
        }
        if payload.len() > expected {
            return Err(format_err(format!(
                "{} trailing bytes after payload",
                payload.len() - expected
            )));
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(payload.to_vec()),
        };
        Ok(Self { dims, data })
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let bytes = std::fs::read(path).map_err(|e| IoError::at(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            IoError::Format(m) => IoError::Format(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        std::fs::write(path, self.encode()).map_err(|e| IoError::at(path, e))
    }

    /// `(H, W, C)`, or `(H, W)` when `C == 1` and `squeeze` is set.
    fn grid_dims(height: usize, width: usize, channels: usize, squeeze: bool) -> Vec<usize> {
        if squeeze && channels == 1 {
            vec![height, width]
        } else {
            vec![height, width, channels]
        }
    }

    pub fn from_grid_f32(g: &Grid<f32>, squeeze: bool) -> Self {
        Self {
            dims: Self::grid_dims(g.height, g.width, g.channels, squeeze),
            data: TensorData::F32(g.data.clone()),
        }
    }

    pub fn from_grid_f64(g: &Grid<f64>, squeeze: bool) -> Self {
        Self {
            dims: Self::grid_dims(g.height, g.width, g.channels, squeeze),
            data: TensorData::F64(g.data.clone()),
        }
    }

    fn hwc(&self) -> Result<(usize, usize, usize), IoError> {
        match self.dims.as_slice() {
            [h, w] => Ok((*h, *w, 1)),
            [h, w, c] => Ok((*h, *w, *c)),
            d => Err(format_err(format!("expected 2 or 3 dims, got {d:?}"))),
        }
    }

    pub fn to_grid_f32(&self) -> Result<Grid<f32>, IoError> {
        let (h, w, c) = self.hwc()?;
        match &self.data {
            TensorData::F32(v) => Ok(Grid::from_vec(h, w, c, v.clone())),
            d => Err(format_err(format!("expected f32, got {:?}", d.dtype()))),
        }
    }

    pub fn to_grid_f64(&self) -> Result<Grid<f64>, IoError> {
        let (h, w, c) = self.hwc()?;
        match &self.data {
            TensorData::F64(v) => Ok(Grid::from_vec(h, w, c, v.clone())),
            d => Err(format_err(format!("expected f64, got {:?}", d.dtype()))),
        }
    }

    pub fn as_f64(&self) -> Result<&[f64], IoError> {
        match &self.data {
            TensorData::F64(v) => Ok(v),
            d => Err(format_err(format!("expected f64, got {:?}", d.dtype()))),
        }
    }

    pub fn as_f32(&self) -> Result<&[f32], IoError> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            d => Err(format_err(format!("expected f32, got {:?}", d.dtype()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_each_dtype() {
        for data in [
            TensorData::F32(vec![1.5, -0.0, f32::INFINITY, 3.0, 4.0, 5.0]),
            TensorData::F64(vec![1.0 / 3.0, f64::NEG_INFINITY, 0.0, 1e-300, 2.0, 7.0]),
            TensorData::U8(vec![0, 1, 2, 253, 254, 255]),
        ] {
            let t = Tensor::new(vec![2, 3], data).unwrap();
            let bytes = t.encode();
            let back = Tensor::decode(&bytes).unwrap();
            assert_eq!(back.encode(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![1, 2], TensorData::U8(vec![7, 9])).unwrap();
        assert_eq!(t.encode(), b"MMTB\x01\x00\x02\x02\x01\x00\x00\x00\x02\x00\x00\x00\x07\x09");
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let t = Tensor::new(vec![4], TensorData::F64(vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        let bytes = t.encode();
        for cut in 0..bytes.len() {
            assert!(Tensor::decode(&bytes[..cut]).is_err(), "accepted {cut} bytes");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(Tensor::decode(&long).is_err());
        let mut bad = bytes;
        bad[6] = 9;
        assert!(Tensor::decode(&bad).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(Tensor::new(vec![2, 2], TensorData::U8(vec![1, 2, 3])).is_err());
    }
}
