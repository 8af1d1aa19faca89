use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    I8,
    I32,
}

impl DType {
    /// Tag byte used by the bundle file format.
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::I8 => 1,
            DType::I32 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<DType> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::I8),
            2 => Some(DType::I32),
            _ => None,
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::I8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    I8(Vec<i8>),
    I32(Vec<i32>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::I8(v) => v.len(),
            Payload::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::I8(_) => DType::I8,
            Payload::I32(_) => DType::I32,
        }
    }
}

/// Dense row-major tensor. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    payload: Payload,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, payload: Payload) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim(format!("shape {shape:?} has a zero dimension")));
        }
        let numel: usize = shape.iter().product();
        if numel != payload.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {numel} elements, payload has {}",
                payload.len()
            )));
        }
        Ok(Tensor { shape, payload })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, Payload::F32(data))
    }

    pub fn from_i8(shape: Vec<usize>, data: Vec<i8>) -> Result<Self> {
        Self::new(shape, Payload::I8(data))
    }

    pub fn from_i32(shape: Vec<usize>, data: Vec<i32>) -> Result<Self> {
        Self::new(shape, Payload::I32(data))
    }

    /// 2-D f32 tensor from nested rows. Panics on ragged input; meant for tests and examples.
    pub fn matrix(rows: &[&[f32]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged matrix");
        let data = rows.iter().flat_map(|row| row.iter().copied()).collect();
        Self::from_f32(vec![r, c], data).expect("valid matrix")
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel = shape.iter().product();
        Self::from_f32(shape, vec![0.0; numel])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.payload.len()
    }

    pub fn dtype(&self) -> DType {
        self.payload.dtype()
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn into_payload(self) -> Payload {
        self.payload
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.payload {
            Payload::F32(v) => Ok(v),
            other => Err(Error::Input(format!("expected f32 tensor, found {:?}", other.dtype()))),
        }
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::dim(format!("expected a 2-D tensor, got shape {other:?}"))),
        }
    }

    /// Payload widened to f32 regardless of dtype.
    pub fn to_f32_vec(&self) -> Vec<f32> {
        match &self.payload {
            Payload::F32(v) => v.clone(),
            Payload::I8(v) => v.iter().map(|&x| x as f32).collect(),
            Payload::I32(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }

    /// Every element multiplied by `factor` (f32 tensors only).
    pub fn scaled(&self, factor: f32) -> Result<Tensor> {
        let data = self.as_f32()?.iter().map(|&x| x * factor).collect();
        Tensor::from_f32(self.shape.clone(), data)
    }
}

/// Row-major product of an `M×K` and a `K×N` tensor, accumulated in f32.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul inner dimensions differ: {m}x{k} times {k2}x{n}"
        )));
    }
    let out = matmul_slices(a.as_f32()?, b.as_f32()?, m, k, n);
    Tensor::from_f32(vec![m, n], out)
}

pub(crate) fn matmul_slices(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TensorStats {
    pub max_abs: f32,
    pub l2_norm: f32,
    pub mean: f32,
}

pub fn stats(v: &Tensor) -> Result<TensorStats> {
    let data = v.as_f32()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("stats of an empty tensor"));
    }
    let max_abs = data.iter().fold(0.0f32, |m, &x| m.max(x.abs()));
    let sum_sq: f64 = data.iter().map(|&x| (x as f64) * (x as f64)).sum();
    let sum: f64 = data.iter().map(|&x| x as f64).sum();
    Ok(TensorStats {
        max_abs,
        l2_norm: sum_sq.sqrt() as f32,
        mean: (sum / data.len() as f64) as f32,
    })
}
