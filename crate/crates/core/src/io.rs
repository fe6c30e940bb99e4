//! File formats: FROSTT-style coordinate text for tensors, one headerless
//! CSV per factor matrix, and JSON manifests.
//!
//! A tensor file holds `N` on the first line, the `N` dimensions on the
//! second, then one entry per line: `N` 1-based indices followed by the
//! value. Lines starting with `#` and blank lines are skipped. Files without
//! the two header lines (plain FROSTT) are also accepted; the shape is then
//! the largest index seen in each mode.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{CooTensor, FactorModel, Tensor};

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("line {line}: {msg}"))
}

/// Reads a coordinate tensor.
pub fn read_tns(reader: impl Read) -> Result<CooTensor> {
    let mut lines = BufReader::new(reader)
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l))
        .filter(|(_, l)| {
            l.as_ref()
                .map(|s| {
                    let t = s.trim();
                    !t.is_empty() && !t.starts_with('#')
                })
                .unwrap_or(true)
        });
    let Some((no, first)) = lines.next() else {
        return Err(Error::Parse("empty tensor file".into()));
    };
    let first = first?;
    let tokens: Vec<&str> = first.split_whitespace().collect();
    let mut shape: Option<Vec<usize>> = None;
    let mut pending = None;
    let ndim = if tokens.len() == 1 {
        let n: usize = tokens[0].parse().map_err(|e| parse_err(no, e))?;
        let (no, dims) = lines
            .next()
            .ok_or_else(|| Error::Parse("missing dimension line".into()))?;
        let dims: Vec<usize> = dims?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| parse_err(no, e)))
            .collect::<Result<_>>()?;
        if dims.len() != n {
            return Err(parse_err(no, format!("expected {n} dimensions, got {}", dims.len())));
        }
        shape = Some(dims);
        n
    } else {
        pending = Some((no, first.clone()));
        tokens.len() - 1
    };
    let mut entries = Vec::new();
    let mut parse_entry = |no: usize, line: &str| -> Result<()> {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != ndim + 1 {
            return Err(parse_err(
                no,
                format!("expected {} fields, got {}", ndim + 1, tokens.len()),
            ));
        }
        let idx = tokens[..ndim]
            .iter()
            .map(|t| t.parse::<usize>().map_err(|e| parse_err(no, e)))
            .collect::<Result<Vec<_>>>()?;
        let v: f64 = tokens[ndim].parse().map_err(|e| parse_err(no, e))?;
        entries.push((idx, v));
        Ok(())
    };
    if let Some((no, line)) = pending {
        parse_entry(no, &line)?;
    }
    for (no, line) in lines {
        parse_entry(no, &line?)?;
    }
    let shape = match shape {
        Some(s) => s,
        None => (0..ndim)
            .map(|k| entries.iter().map(|(i, _)| i[k]).max().unwrap_or(0))
            .collect(),
    };
    CooTensor::new(shape, entries)
}

pub fn read_tns_file(path: impl AsRef<Path>) -> Result<CooTensor> {
    read_tns(File::open(path)?)
}

/// Writes a tensor with the header lines. Dense tensors are written without
/// their zero entries.
pub fn write_tns(tensor: &Tensor, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let shape = tensor.shape();
    writeln!(w, "{}", shape.len())?;
    writeln!(w, "{}", join(shape.iter()))?;
    match tensor {
        Tensor::Dense(t) => {
            let mut idx = vec![1usize; shape.len()];
            for &v in t.values() {
                if v != 0.0 {
                    writeln!(w, "{} {v}", join(idx.iter()))?;
                }
                for (k, i) in idx.iter_mut().enumerate() {
                    if *i < shape[k] {
                        *i += 1;
                        break;
                    }
                    *i = 1;
                }
            }
        }
        Tensor::Coo(t) => {
            for (idx, v) in t.entries() {
                writeln!(w, "{} {v}", join(idx.iter()))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_tns_file(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    write_tns(tensor, File::create(path)?)
}

fn join<T: std::fmt::Display>(items: impl Iterator<Item = T>) -> String {
    items.map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// Reads a headerless CSV matrix.
pub fn read_matrix_csv(reader: impl Read) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| parse_err(k + 1, e)))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    k + 1,
                    format!("expected {} columns, got {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    Array2::from_shape_vec((rows.len(), cols), rows.concat()).map_err(|e| Error::Parse(e.to_string()))
}

/// Writes a headerless CSV matrix. Values use the shortest representation
/// that reads back exactly.
pub fn write_matrix_csv(a: &Array2<f64>, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for row in a.rows() {
        let line = row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// `dir/factor_{n}.csv` for 1-based `n`.
pub fn factor_path(dir: impl AsRef<Path>, mode: usize) -> PathBuf {
    dir.as_ref().join(format!("factor_{}.csv", mode + 1))
}

pub fn write_factors(model: &FactorModel, dir: impl AsRef<Path>) -> Result<()> {
    fs::create_dir_all(dir.as_ref())?;
    for (n, f) in model.factors().iter().enumerate() {
        write_matrix_csv(f, File::create(factor_path(&dir, n))?)?;
    }
    Ok(())
}

/// Reads `factor_1.csv`, `factor_2.csv`, ... until the first missing file.
pub fn read_factors(dir: impl AsRef<Path>) -> Result<FactorModel> {
    let mut factors = Vec::new();
    loop {
        let p = factor_path(&dir, factors.len());
        if !p.exists() {
            break;
        }
        factors.push(read_matrix_csv(File::open(&p)?)?);
    }
    if factors.is_empty() {
        return Err(Error::Argument(format!(
            "no factor files found in {}",
            dir.as_ref().display()
        )));
    }
    FactorModel::new(factors)
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
