//! Dense row-major f64 tensors of rank 1..=5.
//!
//! Layout is row-major with the last extent fastest, so a `(B, C, T, H, W)`
//! tensor stores `W` contiguously. All numeric work in the crate runs in f64
//! so that oracle comparisons and finite-difference checks have headroom.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};

pub const MAX_RANK: usize = 5;

/// Magic bytes of the flat binary tensor container.
pub const TENSOR_MAGIC: &[u8; 8] = b"CS3DTNSR";
pub const TENSOR_FORMAT_VERSION: u32 = 1;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{} values]", self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        validate_shape(shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(CoreError::InvalidTensor(format!(
                "shape {:?} implies {} elements, data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Row-major strides (last extent has stride 1).
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    /// Reinterprets the data with a new shape of equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Writes the flat binary container:
    /// magic "CS3DTNSR", version u32, rank u32, extents u64[rank], then
    /// little-endian f64 payload. Integers are little-endian as well.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&TENSOR_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.rank() as u32).to_le_bytes())?;
        for &ext in &self.shape {
            w.write_all(&(ext as u64).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Tensor> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(CoreError::InvalidTensor(format!(
                "bad tensor magic {:?}",
                magic
            )));
        }
        let version = read_u32(r)?;
        if version != TENSOR_FORMAT_VERSION {
            return Err(CoreError::InvalidTensor(format!(
                "unsupported tensor container version {version}"
            )));
        }
        let rank = read_u32(r)? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(CoreError::InvalidTensor(format!("bad rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut buf = [0u8; 8];
            read_exact(r, &mut buf)?;
            shape.push(u64::from_le_bytes(buf) as usize);
        }
        validate_shape(&shape)?;
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut buf = [0u8; 8];
            read_exact(r, &mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        Tensor::new(&shape, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
        self.write_to(&mut f).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Tensor> {
        let mut f = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
        Tensor::read_from(&mut f)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| CoreError::InvalidTensor(format!("truncated tensor container: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(CoreError::InvalidTensor(format!(
            "rank must be 1..={MAX_RANK}, got shape {shape:?}"
        )));
    }
    if shape.iter().any(|&e| e == 0) {
        return Err(CoreError::InvalidTensor(format!(
            "all extents must be >= 1, got {shape:?}"
        )));
    }
    Ok(())
}

pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

/// Broadcast shape of two equal-rank shapes where mismatched extents must
/// have a 1 on one side. Scalars are handled by the scalar ops instead.
pub fn broadcast_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(CoreError::ShapeMismatch {
            op,
            left: a.to_vec(),
            right: b.to_vec(),
        });
    }
    let mut out = Vec::with_capacity(a.len());
    for (&ea, &eb) in a.iter().zip(b) {
        if ea == eb {
            out.push(ea);
        } else if ea == 1 {
            out.push(eb);
        } else if eb == 1 {
            out.push(ea);
        } else {
            return Err(CoreError::ShapeMismatch {
                op,
                left: a.to_vec(),
                right: b.to_vec(),
            });
        }
    }
    Ok(out)
}

/// Strides for reading a tensor of `shape` as if broadcast to `out_shape`
/// (size-1 extents get stride 0).
pub fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let real = strides_of(shape);
    shape
        .iter()
        .zip(out_shape)
        .zip(real)
        .map(|((&e, &oe), s)| if e == oe { s } else { 0 })
        .collect()
}
