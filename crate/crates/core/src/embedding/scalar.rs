//! Post-training per-dimension scalar quantization.

use ndarray::Array2;

use crate::error::{Error, Result};

/// A table quantized to `b` bits per entry with a per-dimension affine grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarQuantizedEmbedding {
    bits: u32,
    /// `n x d` bucket indices.
    codes: Array2<u16>,
    mins: Vec<f32>,
    maxs: Vec<f32>,
}

impl ScalarQuantizedEmbedding {
    pub fn from_parts(bits: u32, codes: Array2<u16>, mins: Vec<f32>, maxs: Vec<f32>) -> Result<Self> {
        check_bits(bits)?;
        if mins.len() != codes.ncols() || maxs.len() != codes.ncols() {
            return Err(Error::Malformed("min/max length differs from table width".into()));
        }
        let top = levels(bits);
        if codes.iter().any(|&c| u32::from(c) > top) {
            return Err(Error::Malformed(format!("bucket index exceeds {top}")));
        }
        Ok(ScalarQuantizedEmbedding {
            bits,
            codes,
            mins,
            maxs,
        })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn codes(&self) -> &Array2<u16> {
        &self.codes
    }

    pub fn mins(&self) -> &[f32] {
        &self.mins
    }

    pub fn maxs(&self) -> &[f32] {
        &self.maxs
    }

    pub fn len(&self) -> usize {
        self.codes.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.codes.ncols()
    }

    /// Width of one bucket in dimension `j`.
    pub fn step(&self, j: usize) -> f64 {
        let range = f64::from(self.maxs[j]) - f64::from(self.mins[j]);
        if range > 0.0 {
            range / f64::from(levels(self.bits))
        } else {
            0.0
        }
    }

    pub fn dequantize(&self, i: usize, j: usize) -> f64 {
        f64::from(self.mins[j]) + f64::from(self.codes[[i, j]]) * self.step(j)
    }

    pub fn lookup(&self, ids: &[usize]) -> Result<Array2<f64>> {
        let n = self.len();
        let mut out = Array2::zeros((ids.len(), self.dim()));
        for (b, &id) in ids.iter().enumerate() {
            if id >= n {
                return Err(Error::IdOutOfRange { id, size: n });
            }
            for j in 0..self.dim() {
                out[[b, j]] = self.dequantize(id, j);
            }
        }
        Ok(out)
    }
}

/// Largest bucket index for `bits` bits.
fn levels(bits: u32) -> u32 {
    (1u32 << bits) - 1
}

fn check_bits(bits: u32) -> Result<()> {
    if !(1..=16).contains(&bits) {
        return Err(Error::Config(format!("scalar quantization bits {bits} not in [1, 16]")));
    }
    Ok(())
}

/// Quantizes each column of `table` onto `2^bits` evenly spaced levels
/// between its minimum and maximum.
pub fn scalar_quantize_table(table: &Array2<f32>, bits: u32) -> Result<ScalarQuantizedEmbedding> {
    check_bits(bits)?;
    let (n, dim) = table.dim();
    let top = f64::from(levels(bits));
    let mut mins = vec![0f32; dim];
    let mut maxs = vec![0f32; dim];
    let mut codes = Array2::<u16>::zeros((n, dim));
    for j in 0..dim {
        let col = table.column(j);
        let (lo, hi) = col
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let (lo, hi) = if n == 0 { (0.0, 0.0) } else { (lo, hi) };
        mins[j] = lo;
        maxs[j] = hi;
        let range = f64::from(hi) - f64::from(lo);
        if range > 0.0 {
            for (i, &v) in col.iter().enumerate() {
                let x = (f64::from(v) - f64::from(lo)) / range * top;
                codes[[i, j]] = x.round().clamp(0.0, top) as u16;
            }
        }
    }
    Ok(ScalarQuantizedEmbedding {
        bits,
        codes,
        mins,
        maxs,
    })
}
