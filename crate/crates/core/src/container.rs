//! A flat binary file of named `f64` arrays.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   "SBLDF001"
//! count      u32       number of arrays
//! per array:
//!   name_len u16
//!   name     name_len bytes of UTF-8
//!   dtype    u8        1 = f64 little-endian
//!   ndim     u8
//!   dims     ndim × u64
//!   payload  product(dims) × 8 bytes, row-major
//! ```

use std::io::{self, Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::synth::TrackingDataset;

pub const MAGIC: &[u8; 8] = b"SBLDF001";
pub const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    /// Row-major.
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> io::Result<Self> {
        let name = name.into();
        if dims.iter().product::<usize>() != data.len() {
            return Err(invalid(format!(
                "array {name}: dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        if name.len() > u16::MAX as usize || dims.len() > u8::MAX as usize {
            return Err(invalid(format!("array {name}: name or rank too large")));
        }
        Ok(NamedArray { name, dims, data })
    }

    pub fn from_matrix(name: impl Into<String>, m: &DMatrix<f64>) -> Self {
        let data = m.transpose().as_slice().to_vec();
        NamedArray {
            name: name.into(),
            dims: vec![m.nrows(), m.ncols()],
            data,
        }
    }

    /// Vectors stacked as rows.
    pub fn from_rows(name: impl Into<String>, rows: &[DVector<f64>]) -> Self {
        let width = rows.first().map_or(0, |r| r.len());
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        NamedArray {
            name: name.into(),
            dims: vec![rows.len(), width],
            data,
        }
    }

    pub fn to_matrix(&self) -> io::Result<DMatrix<f64>> {
        match self.dims[..] {
            [r, c] => Ok(DMatrix::from_row_slice(r, c, &self.data)),
            _ => Err(invalid(format!("array {} is not 2-D", self.name))),
        }
    }

    pub fn to_rows(&self) -> io::Result<Vec<DVector<f64>>> {
        match self.dims[..] {
            [_, c] if c > 0 => Ok(self
                .data
                .chunks(c)
                .map(DVector::from_column_slice)
                .collect()),
            [r, 0] => Ok(vec![DVector::zeros(0); r]),
            _ => Err(invalid(format!("array {} is not 2-D", self.name))),
        }
    }
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

pub fn write_arrays<W: Write>(mut w: W, arrays: &[NamedArray]) -> io::Result<()> {
    w.write_all(MAGIC)?;
    let count = u32::try_from(arrays.len()).map_err(|_| invalid("too many arrays".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for a in arrays {
        w.write_all(&(a.name.len() as u16).to_le_bytes())?;
        w.write_all(a.name.as_bytes())?;
        w.write_all(&[DTYPE_F64, a.dims.len() as u8])?;
        for &d in &a.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &a.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_exact<const K: usize, R: Read>(r: &mut R) -> io::Result<[u8; K]> {
    let mut buf = [0u8; K];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_arrays<R: Read>(mut r: R) -> io::Result<Vec<NamedArray>> {
    if &read_exact::<8, _>(&mut r)? != MAGIC {
        return Err(invalid("bad magic".into()));
    }
    let count = u32::from_le_bytes(read_exact(&mut r)?);
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name =
            String::from_utf8(name).map_err(|_| invalid("array name is not UTF-8".into()))?;
        let [dtype, ndim] = read_exact::<2, _>(&mut r)?;
        if dtype != DTYPE_F64 {
            return Err(invalid(format!("array {name}: unsupported dtype {dtype}")));
        }
        let mut dims = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            let d = u64::from_le_bytes(read_exact(&mut r)?);
            dims.push(usize::try_from(d).map_err(|_| invalid("dimension overflow".into()))?);
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| invalid("dimension overflow".into()))?;
        let mut data = Vec::with_capacity(len.min(1 << 24));
        for _ in 0..len {
            data.push(f64::from_le_bytes(read_exact(&mut r)?));
        }
        out.push(NamedArray { name, dims, data });
    }
    Ok(out)
}

fn find<'a>(arrays: &'a [NamedArray], name: &str) -> io::Result<&'a NamedArray> {
    arrays
        .iter()
        .find(|a| a.name == name)
        .ok_or_else(|| invalid(format!("missing array {name}")))
}

impl TrackingDataset {
    /// `x_true` (L×N), `F` (L−1 × N × N), `directions` (s), and a `meta`
    /// array holding `[innovation_prob, seed]`. The seed is stored through
    /// its bit pattern so it round-trips exactly.
    pub fn to_arrays(&self) -> Vec<NamedArray> {
        let n = self.n();
        let f_data = self
            .dynamics
            .iter()
            .flat_map(|f| f.transpose().as_slice().to_vec())
            .collect();
        vec![
            NamedArray::from_rows("x_true", &self.x_true),
            NamedArray {
                name: "F".into(),
                dims: vec![self.dynamics.len(), n, n],
                data: f_data,
            },
            NamedArray {
                name: "directions".into(),
                dims: vec![self.directions.len()],
                data: self.directions.iter().map(|&d| d as f64).collect(),
            },
            NamedArray {
                name: "meta".into(),
                dims: vec![2],
                data: vec![self.innovation_prob, f64::from_bits(self.seed)],
            },
        ]
    }

    pub fn from_arrays(arrays: &[NamedArray]) -> io::Result<Self> {
        let x_true = find(arrays, "x_true")?.to_rows()?;
        let f = find(arrays, "F")?;
        let dynamics = match f.dims[..] {
            [count, r, c] => (0..count)
                .map(|k| DMatrix::from_row_slice(r, c, &f.data[k * r * c..(k + 1) * r * c]))
                .collect(),
            _ => return Err(invalid("F must be 3-D".into())),
        };
        let directions = find(arrays, "directions")?
            .data
            .iter()
            .map(|&d| d as i8)
            .collect();
        let meta = &find(arrays, "meta")?.data;
        if meta.len() != 2 {
            return Err(invalid("meta must hold two values".into()));
        }
        Ok(TrackingDataset {
            x_true,
            dynamics,
            directions,
            innovation_prob: meta[0],
            seed: meta[1].to_bits(),
        })
    }
}
