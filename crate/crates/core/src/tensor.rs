//! Dense and sparse tensor storage, mode-n unfolding arithmetic, fiber
//! extraction and on-demand Khatri-Rao rows.
//!
//! Index conventions: entry multi-indices and fiber (row) indices are
//! 1-based, matching FROSTT files. Modes are 0-based positions into the
//! factor list. Everything below the public surface works with 0-based
//! offsets; the conversion happens only in this module.
//!
//! Dense values are stored with the first index varying fastest, so the
//! flat offset of `(i_1, ..., i_N)` is `sum_k (i_k - 1) * prod_{m<k} I_m`.
//! The mode-n unfolding `X_n` is the `J_n x I_n` matrix with
//! `X(i) = X_n(j, i_n)` where `j = 1 + sum_{k != n} (i_k - 1) J_k` and
//! `J_k = prod_{m<k, m != n} I_m`.

use std::collections::{HashMap, HashSet};

use ndarray::Array2;

use crate::error::{arg, Error, Result};

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.len() < 2 {
        return arg(format!("a tensor needs at least 2 modes, got {}", shape.len()));
    }
    if shape.contains(&0) {
        return arg(format!("all dimensions must be positive, got {shape:?}"));
    }
    Ok(())
}

fn check_mode(shape: &[usize], mode: usize) -> Result<()> {
    if mode >= shape.len() {
        return arg(format!("mode {mode} is invalid for a {}-way tensor", shape.len()));
    }
    Ok(())
}

/// Number of mode-n fibers, `J_n = prod_{m != n} I_m`.
pub fn num_fibers(shape: &[usize], mode: usize) -> usize {
    shape
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != mode)
        .map(|(_, &d)| d)
        .product()
}

fn check_multi_index(shape: &[usize], idx: &[usize]) -> Result<()> {
    if idx.len() != shape.len() {
        return Err(Error::Bounds(format!(
            "index {idx:?} has {} components, tensor has {} modes",
            idx.len(),
            shape.len()
        )));
    }
    for (k, (&i, &d)) in idx.iter().zip(shape).enumerate() {
        if i == 0 || i > d {
            return Err(Error::Bounds(format!(
                "component {k} of index {idx:?} is outside [1, {d}]"
            )));
        }
    }
    Ok(())
}

fn check_fibers(shape: &[usize], mode: usize, fibers: &[usize]) -> Result<()> {
    let jn = num_fibers(shape, mode);
    if let Some(&j) = fibers.iter().find(|&&j| j == 0 || j > jn) {
        return Err(Error::Bounds(format!(
            "fiber index {j} is outside [1, {jn}] for mode {mode}"
        )));
    }
    Ok(())
}

/// 0-based reduced-index offset of a 0-based multi-index.
fn unfold_row0(shape: &[usize], mode: usize, idx0: impl Iterator<Item = usize>) -> usize {
    let mut j = 0;
    let mut radix = 1;
    for (k, i) in idx0.enumerate() {
        if k == mode {
            continue;
        }
        j += i * radix;
        radix *= shape[k];
    }
    j
}

/// Writes the 0-based coordinates of fiber `j0` into `coords` (the mode-n
/// slot is set to zero).
fn fiber_coords0(shape: &[usize], mode: usize, mut j0: usize, coords: &mut [usize]) {
    for (k, &d) in shape.iter().enumerate() {
        if k == mode {
            coords[k] = 0;
            continue;
        }
        coords[k] = j0 % d;
        j0 /= d;
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(shape.len());
    let mut s = 1;
    for &d in shape {
        out.push(s);
        s *= d;
    }
    out
}

/// Mode-n unfolding row of the multi-index `idx` (1-based in, 1-based out).
/// The mode-n component of `idx` is ignored apart from its bounds check.
pub fn mode_unfold_index(shape: &[usize], mode: usize, idx: &[usize]) -> Result<usize> {
    check_mode(shape, mode)?;
    check_multi_index(shape, idx)?;
    Ok(1 + unfold_row0(shape, mode, idx.iter().map(|&i| i - 1)))
}

/// Inverse of [`mode_unfold_index`]: the multi-index of the first entry of
/// fiber `j` (the mode-n component is 1).
pub fn fiber_start(shape: &[usize], mode: usize, j: usize) -> Result<Vec<usize>> {
    check_mode(shape, mode)?;
    check_fibers(shape, mode, &[j])?;
    let mut coords = vec![0; shape.len()];
    fiber_coords0(shape, mode, j - 1, &mut coords);
    Ok(coords.into_iter().map(|c| c + 1).collect())
}

/// A dense N-way array.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let len: usize = shape.iter().product();
        if values.len() != len {
            return arg(format!("shape {shape:?} needs {len} values, got {}", values.len()));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    /// Builds a tensor by evaluating `f` at every 1-based multi-index.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        check_shape(&shape)?;
        let len: usize = shape.iter().product();
        let mut idx = vec![1; shape.len()];
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f(&idx));
            for (k, i) in idx.iter_mut().enumerate() {
                if *i < shape[k] {
                    *i += 1;
                    break;
                }
                *i = 1;
            }
        }
        Self::new(shape, values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Flat values, first index fastest.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        check_multi_index(&self.shape, idx)?;
        let off: usize = idx.iter().zip(strides(&self.shape)).map(|(&i, s)| (i - 1) * s).sum();
        Ok(self.values[off])
    }

    fn extract_fibers(&self, mode: usize, fibers: &[usize]) -> Array2<f64> {
        let st = strides(&self.shape);
        let len = self.shape[mode];
        let mut coords = vec![0; self.shape.len()];
        let mut out = Array2::zeros((fibers.len(), len));
        for (row, &j) in fibers.iter().enumerate() {
            fiber_coords0(&self.shape, mode, j - 1, &mut coords);
            let base: usize = coords.iter().zip(&st).map(|(c, s)| c * s).sum();
            let stride = st[mode];
            for (i, v) in out.row_mut(row).iter_mut().enumerate() {
                *v = self.values[base + i * stride];
            }
        }
        out
    }
}

/// A sparse tensor in coordinate format. Absent entries are zero.
#[derive(Debug, Clone)]
pub struct CooTensor {
    shape: Vec<usize>,
    /// Flattened 0-based indices, `ndim` per entry.
    indices: Vec<usize>,
    values: Vec<f64>,
    /// Per mode: 0-based fiber row -> (0-based position along the mode, value).
    fibers: Vec<HashMap<usize, Vec<(usize, f64)>>>,
}

impl CooTensor {
    /// Builds a sparse tensor from 1-based `(index, value)` pairs. Duplicate
    /// indices are rejected.
    pub fn new(shape: Vec<usize>, entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        check_shape(&shape)?;
        let n = shape.len();
        let st: Vec<u128> = strides(&shape).into_iter().map(|s| s as u128).collect();
        let mut seen = HashSet::with_capacity(entries.len());
        let mut indices = Vec::with_capacity(entries.len() * n);
        let mut values = Vec::with_capacity(entries.len());
        for (idx, v) in entries {
            check_multi_index(&shape, &idx)?;
            let key: u128 = idx.iter().zip(&st).map(|(&i, s)| (i as u128 - 1) * s).sum();
            if !seen.insert(key) {
                return arg(format!("duplicate entry at index {idx:?}"));
            }
            indices.extend(idx.iter().map(|&i| i - 1));
            values.push(v);
        }
        let mut fibers = vec![HashMap::new(); n];
        for (e, &v) in values.iter().enumerate() {
            let idx0 = &indices[e * n..(e + 1) * n];
            for (mode, map) in fibers.iter_mut().enumerate() {
                let j0 = unfold_row0(&shape, mode, idx0.iter().copied());
                map.entry(j0).or_insert_with(Vec::new).push((idx0[mode], v));
            }
        }
        Ok(Self {
            shape,
            indices,
            values,
            fibers,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates over stored entries as (1-based index, value).
    pub fn entries(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        let n = self.shape.len();
        self.values.iter().enumerate().map(move |(e, &v)| {
            let idx = self.indices[e * n..(e + 1) * n].iter().map(|&i| i + 1).collect();
            (idx, v)
        })
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        check_multi_index(&self.shape, idx)?;
        let j0 = unfold_row0(&self.shape, 0, idx.iter().map(|&i| i - 1));
        Ok(self.fibers[0]
            .get(&j0)
            .and_then(|row| row.iter().find(|(i, _)| *i == idx[0] - 1))
            .map_or(0.0, |&(_, v)| v))
    }

    fn extract_fibers(&self, mode: usize, fibers: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((fibers.len(), self.shape[mode]));
        for (row, &j) in fibers.iter().enumerate() {
            if let Some(entries) = self.fibers[mode].get(&(j - 1)) {
                for &(i, v) in entries {
                    out[[row, i]] = v;
                }
            }
        }
        out
    }

    /// Dense copy. Intended for small tensors.
    pub fn to_dense(&self) -> DenseTensor {
        let st = strides(&self.shape);
        let n = self.shape.len();
        let mut values = vec![0.0; self.shape.iter().product()];
        for (e, &v) in self.values.iter().enumerate() {
            let off: usize = self.indices[e * n..(e + 1) * n]
                .iter()
                .zip(&st)
                .map(|(i, s)| i * s)
                .sum();
            values[off] = v;
        }
        DenseTensor {
            shape: self.shape.clone(),
            values,
        }
    }
}

/// Observed data: dense or sparse.
#[derive(Debug, Clone)]
pub enum Tensor {
    Dense(DenseTensor),
    Coo(CooTensor),
}

impl From<DenseTensor> for Tensor {
    fn from(t: DenseTensor) -> Self {
        Tensor::Dense(t)
    }
}

impl From<CooTensor> for Tensor {
    fn from(t: CooTensor) -> Self {
        Tensor::Coo(t)
    }
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            Tensor::Dense(t) => t.shape(),
            Tensor::Coo(t) => t.shape(),
        }
    }

    pub fn ndim(&self) -> usize {
        self.shape().len()
    }

    /// Total number of entries, `|I|`.
    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        match self {
            Tensor::Dense(t) => t.get(idx),
            Tensor::Coo(t) => t.get(idx),
        }
    }

    /// Calls `f` with every entry value. Sparse tensors visit only stored
    /// entries.
    pub fn for_each_stored(&self, mut f: impl FnMut(f64)) {
        match self {
            Tensor::Dense(t) => t.values().iter().for_each(|&v| f(v)),
            Tensor::Coo(t) => t.values.iter().for_each(|&v| f(v)),
        }
    }
}

/// Rows `fibers` (1-based) of the mode-n unfolding, as a `|F| x I_n` matrix.
/// Sparse fibers are densified; absent entries read as zero.
pub fn extract_fibers(tensor: &Tensor, mode: usize, fibers: &[usize]) -> Result<Array2<f64>> {
    check_mode(tensor.shape(), mode)?;
    check_fibers(tensor.shape(), mode, fibers)?;
    Ok(match tensor {
        Tensor::Dense(t) => t.extract_fibers(mode, fibers),
        Tensor::Coo(t) => t.extract_fibers(mode, fibers),
    })
}

/// The full mode-n unfolding. Intended for small tensors.
pub fn unfold(tensor: &Tensor, mode: usize) -> Result<Array2<f64>> {
    check_mode(tensor.shape(), mode)?;
    let all: Vec<usize> = (1..=num_fibers(tensor.shape(), mode)).collect();
    extract_fibers(tensor, mode, &all)
}

/// CP model: `N` factor matrices `A_n` of size `I_n x R`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    factors: Vec<Array2<f64>>,
}

impl FactorModel {
    pub fn new(factors: Vec<Array2<f64>>) -> Result<Self> {
        if factors.len() < 2 {
            return arg(format!("a CP model needs at least 2 factors, got {}", factors.len()));
        }
        let rank = factors[0].ncols();
        if rank == 0 {
            return arg("rank must be at least 1");
        }
        if let Some((n, f)) = factors.iter().enumerate().find(|(_, f)| f.ncols() != rank) {
            return arg(format!("factor {n} has {} columns, expected {rank}", f.ncols()));
        }
        if factors.iter().any(|f| f.nrows() == 0) {
            return arg("factor matrices must have at least one row");
        }
        Ok(Self { factors })
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn ndim(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn factor(&self, mode: usize) -> &Array2<f64> {
        &self.factors[mode]
    }

    pub fn factors(&self) -> &[Array2<f64>] {
        &self.factors
    }

    pub fn into_factors(self) -> Vec<Array2<f64>> {
        self.factors
    }

    /// Replaces factor `mode`, keeping its shape.
    pub fn set_factor(&mut self, mode: usize, value: Array2<f64>) -> Result<()> {
        if value.dim() != self.factors[mode].dim() {
            return arg(format!(
                "factor {mode} has shape {:?}, got {:?}",
                self.factors[mode].dim(),
                value.dim()
            ));
        }
        self.factors[mode] = value;
        Ok(())
    }

    /// `M_i = sum_r prod_n A_n(i_n, r)` at a 1-based multi-index.
    pub fn cpd_entry(&self, idx: &[usize]) -> Result<f64> {
        check_multi_index(&self.shape(), idx)?;
        Ok((0..self.rank())
            .map(|r| {
                self.factors
                    .iter()
                    .zip(idx)
                    .map(|(f, &i)| f[[i - 1, r]])
                    .product::<f64>()
            })
            .sum())
    }

    /// The full model tensor. Intended for small shapes.
    pub fn to_dense(&self) -> DenseTensor {
        let shape = self.shape();
        let all: Vec<usize> = (1..=num_fibers(&shape, 0)).collect();
        let h = self.khatri_rao(0, &all);
        let m = h.dot(&self.factors[0].t());
        // Row j of the mode-0 unfolding holds entries j*I_0 .. (j+1)*I_0.
        DenseTensor {
            values: m.iter().copied().collect(),
            shape,
        }
    }

    fn khatri_rao(&self, mode: usize, fibers: &[usize]) -> Array2<f64> {
        let shape = self.shape();
        let rank = self.rank();
        let mut coords = vec![0; shape.len()];
        let mut out = Array2::ones((fibers.len(), rank));
        for (row, &j) in fibers.iter().enumerate() {
            fiber_coords0(&shape, mode, j - 1, &mut coords);
            let mut h = out.row_mut(row);
            for (k, f) in self.factors.iter().enumerate() {
                if k == mode {
                    continue;
                }
                let a = f.row(coords[k]);
                h.zip_mut_with(&a, |x, &y| *x *= y);
            }
        }
        out
    }
}

/// Rows `fibers` (1-based) of `H_n = A_N ⊙ ... ⊙ A_{n+1} ⊙ A_{n-1} ⊙ ... ⊙ A_1`,
/// built row by row without forming the full product.
pub fn khatri_rao_rows(model: &FactorModel, mode: usize, fibers: &[usize]) -> Result<Array2<f64>> {
    let shape = model.shape();
    check_mode(&shape, mode)?;
    check_fibers(&shape, mode, fibers)?;
    Ok(model.khatri_rao(mode, fibers))
}
