//! Dense row-major `f64` matrix used for every embedding table.
//!
//! Two on-disk forms are supported:
//!
//! * text: first line `"<rows> <cols>"`, then one line per row with
//!   space-separated values printed in shortest round-trip form;
//! * binary: the 4-byte magic `FRMX`, rows and cols as little-endian `u64`,
//!   then `rows * cols` little-endian `f64` values in row-major order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BINARY_MAGIC: &[u8; 4] = b"FRMX";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    /// I.i.d. uniform entries on `[-scale, scale]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn check_shape(&self, rows: usize, cols: usize, what: &str) -> Result<()> {
        if self.shape() != (rows, cols) {
            return Err(Error::shape(
                format!("{what} {rows}x{cols}"),
                format!("{}x{}", self.rows, self.cols),
            ));
        }
        Ok(())
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        other.check_shape(self.rows, self.cols, "addend")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        other.check_shape(self.rows, self.cols, "subtrahend")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_text(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.rows, self.cols)?;
        for r in 0..self.rows {
            let mut first = true;
            for v in self.row(r) {
                if !first {
                    w.write_all(b" ")?;
                }
                write!(w, "{v}")?;
                first = false;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_text(r: impl BufRead) -> Result<Matrix> {
        let mut lines = r.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line.map_err(|e| parse_err(1, e.to_string()))?,
            None => return Err(parse_err(1, "missing header")),
        };
        let mut it = header.split_whitespace().map(str::parse::<usize>);
        let (rows, cols) = match (it.next(), it.next(), it.next()) {
            (Some(Ok(m)), Some(Ok(k)), None) => (m, k),
            _ => return Err(parse_err(1, "header must be \"<rows> <cols>\"")),
        };
        let mut data = Vec::with_capacity(rows * cols);
        for (i, line) in lines {
            let line = line.map_err(|e| parse_err(i + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let before = data.len();
            for tok in line.split_whitespace() {
                let v = tok
                    .parse::<f64>()
                    .map_err(|e| parse_err(i + 1, format!("{tok:?}: {e}")))?;
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(parse_err(i + 1, format!("expected {cols} values")));
            }
        }
        Matrix::from_vec(rows, cols, data)
    }

    pub fn write_binary(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<Matrix> {
        let bad = |m: &str| parse_err(0, m);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != BINARY_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
        let rows = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
        let cols = u64::from_le_bytes(word) as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut word).map_err(|_| bad("truncated body"))?;
            data.push(f64::from_le_bytes(word));
        }
        Matrix::from_vec(rows, cols, data)
    }

    pub fn save(&self, path: &Path, format: DumpFormat) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        match format {
            DumpFormat::Text => self.write_text(&mut w),
            DumpFormat::Binary => self.write_binary(&mut w),
        }
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, format: DumpFormat) -> Result<Matrix> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        match format {
            DumpFormat::Text => Matrix::read_text(r),
            DumpFormat::Binary => Matrix::read_binary(&mut r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DumpFormat {
    Text,
    Binary,
}

impl DumpFormat {
    pub fn extension(self) -> &'static str {
        match self {
            DumpFormat::Text => "txt",
            DumpFormat::Binary => "bin",
        }
    }
}

impl std::str::FromStr for DumpFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "txt" => Ok(DumpFormat::Text),
            "binary" | "bin" => Ok(DumpFormat::Binary),
            other => Err(Error::InvalidParam(format!("unknown dump format {other:?}"))),
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}
