//! Dense vector/matrix arithmetic with a pinned accumulation order.
//!
//! Every row product in [`matvec`] starts from `+0.0` and accumulates strictly
//! left to right. Under round-to-nearest a sum that starts at `+0.0` can never
//! become `-0.0`, so adding a term `w * 0.0` (either signed zero) leaves every
//! partial sum bit-identical. Dropping the columns that multiply exact zeros
//! therefore reproduces the full product bit for bit, which is what makes
//! exact-zero pruning testable with `==` on the bit patterns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense vector of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Builds a vector, rejecting NaN and infinite entries.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "vector entry {i} is not finite ({})",
                data[i]
            )));
        }
        Ok(Vector(data))
    }

    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        self.0.get(i).copied()
    }

    /// Entries at the positions of `keep`, in order.
    pub fn select(&self, keep: &IndexSet) -> Result<Vector> {
        check_bound(keep, self.len(), "vector length")?;
        Ok(Vector(keep.iter().map(|i| self.0[i]).collect()))
    }

    /// Index of the largest entry, lowest index on ties. `None` when empty.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.0.iter().enumerate() {
            match best {
                Some((_, b)) if v <= b => {}
                _ => best = Some((i, v)),
            }
        }
        best.map(|(i, _)| i)
    }

    /// Bitwise equality; distinguishes `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Vector) -> bool {
        self.len() == other.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A dense row-major matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let expected = rows.checked_mul(cols).ok_or_else(|| {
            Error::contract(format!("matrix shape {rows}x{cols} overflows"))
        })?;
        if data.len() != expected {
            return Err(Error::contract(format!(
                "matrix {rows}x{cols} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "matrix entry ({}, {}) is not finite",
                i / cols,
                i % cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::contract(format!(
                "row {r} has {} entries, expected {cols}",
                rows[r].len()
            )));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Maximum absolute row sum (the operator norm induced by the ∞-norm).
    pub fn inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// `m · v` with left-to-right accumulation per row.
pub fn matvec(m: &Matrix, v: &Vector) -> Result<Vector> {
    if m.cols != v.len() {
        return Err(Error::contract(format!(
            "matvec dimension mismatch: matrix has {} columns, vector has length {}",
            m.cols,
            v.len()
        )));
    }
    let x = v.as_slice();
    let out = (0..m.rows)
        .map(|i| {
            let mut acc = 0.0;
            for (w, xj) in m.row(i).iter().zip(x) {
                acc += w * xj;
            }
            acc
        })
        .collect();
    Ok(Vector(out))
}

/// Entrywise `max(0, x)`. Negative zero maps to `+0.0`.
pub fn relu(v: &Vector) -> Vector {
    Vector(
        v.0.iter()
            .map(|&x| if x > 0.0 { x } else { 0.0 })
            .collect(),
    )
}

/// Keeps the rows listed in `keep`, in ascending order.
pub fn drop_rows(m: &Matrix, keep: &IndexSet) -> Result<Matrix> {
    check_bound(keep, m.rows, "matrix rows")?;
    let mut data = Vec::with_capacity(keep.len() * m.cols);
    for i in keep.iter() {
        data.extend_from_slice(m.row(i));
    }
    Ok(Matrix {
        rows: keep.len(),
        cols: m.cols,
        data,
    })
}

/// Keeps the columns listed in `keep`, in ascending order.
pub fn drop_cols(m: &Matrix, keep: &IndexSet) -> Result<Matrix> {
    check_bound(keep, m.cols, "matrix columns")?;
    let mut data = Vec::with_capacity(m.rows * keep.len());
    for i in 0..m.rows {
        let row = m.row(i);
        data.extend(keep.iter().map(|j| row[j]));
    }
    Ok(Matrix {
        rows: m.rows,
        cols: keep.len(),
        data,
    })
}

fn check_bound(set: &IndexSet, bound: usize, what: &str) -> Result<()> {
    match set.max() {
        Some(max) if max >= bound => Err(Error::contract(format!(
            "index {max} out of range for {what} {bound}"
        ))),
        _ => Ok(()),
    }
}

/// A strictly ascending set of indices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
#[serde(transparent)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    /// Sorts `indices`; duplicates are rejected.
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::contract(format!("duplicate index {}", w[0])));
        }
        Ok(IndexSet(indices))
    }

    pub fn empty() -> Self {
        IndexSet(Vec::new())
    }

    /// `0..n`.
    pub fn full(n: usize) -> Self {
        IndexSet((0..n).collect())
    }

    /// Indices in `0..n` for which `pred` holds.
    pub fn filter(n: usize, mut pred: impl FnMut(usize) -> bool) -> Self {
        IndexSet((0..n).filter(|&i| pred(i)).collect())
    }

    /// `0..n` minus `self`. Entries `>= n` are ignored.
    pub fn complement(&self, n: usize) -> Self {
        let mut out = Vec::with_capacity(n.saturating_sub(self.len()));
        let mut it = self.0.iter().peekable();
        for i in 0..n {
            if it.peek() == Some(&&i) {
                it.next();
            } else {
                out.push(i);
            }
        }
        IndexSet(out)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn max(&self) -> Option<usize> {
        self.0.last().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn is_subset(&self, other: &IndexSet) -> bool {
        self.iter().all(|i| other.contains(i))
    }
}

impl<'de> Deserialize<'de> for IndexSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        if v.windows(2).any(|w| w[0] >= w[1]) {
            return Err(serde::de::Error::custom(
                "index set must be strictly ascending",
            ));
        }
        Ok(IndexSet(v))
    }
}
