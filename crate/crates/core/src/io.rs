//! Binary file formats and small text formats.
//!
//! # Feature file (`HSSF`, version 1)
//!
//! | field    | type              |
//! |----------|-------------------|
//! | magic    | `b"HSSF"`         |
//! | version  | u16 LE            |
//! | n        | u64 LE            |
//! | d        | u64 LE            |
//! | c        | u32 LE            |
//! | features | n*d f32 LE, row-major |
//! | labels   | n u32 LE          |
//!
//! # Checkpoint file (`HSCK`, version 1)
//!
//! Header: magic `b"HSCK"`, version u16 LE, d u32 LE, h u32 LE, c u32 LE,
//! dropout_rate f32 LE, ema_alpha f32 LE. Then two parameter groups
//! (trainable, then EMA shadow), each laid out as consecutive f32 LE
//! arrays: norm_scale (d), norm_shift (d), w1 (d*h row-major), b1 (h),
//! w2 (h*c row-major), b2 (c).
//!
//! All multi-byte values are little-endian; floats are IEEE-754 binary32.

use ndarray::{Array1, Array2};
use std::fs;
use std::path::Path;

use crate::data::{FeatureMatrix, LabelVector};
use crate::error::{Error, ParseError, Result};
use crate::model::{ClassifierParams, EmaState};

pub const FEATURE_MAGIC: [u8; 4] = *b"HSSF";
pub const FEATURE_VERSION: u16 = 1;
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HSCK";
pub const CHECKPOINT_VERSION: u16 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(ParseError::Truncated {
                missing: (self.pos + n - self.buf.len()) as u64,
            }
            .into());
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            let mut found = [0u8; 4];
            found.copy_from_slice(got);
            return Err(ParseError::BadMagic { expected, found }.into());
        }
        Ok(())
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32_slice(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Write a feature matrix and its labels. Values are stored at f32
/// precision.
pub fn save_features(path: &Path, features: &FeatureMatrix, labels: &LabelVector) -> Result<()> {
    if labels.len() != features.n() {
        return Err(Error::contract("label count must match feature rows"));
    }
    let mut out = Vec::with_capacity(30 + features.n() * features.d() * 4 + features.n() * 4);
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(features.n() as u64).to_le_bytes());
    out.extend_from_slice(&(features.d() as u64).to_le_bytes());
    out.extend_from_slice(&(labels.classes() as u32).to_le_bytes());
    for row in features.view().outer_iter() {
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for i in 0..labels.len() {
        out.extend_from_slice(&(labels.get(i) as u32).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parse a feature file, validating finiteness and label range.
pub fn load_features(path: &Path) -> Result<(FeatureMatrix, LabelVector)> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf);
    r.magic(FEATURE_MAGIC)?;
    let version = r.u16()?;
    if version != FEATURE_VERSION {
        return Err(ParseError::UnsupportedVersion(version).into());
    }
    let n = r.u64()? as usize;
    let d = r.u64()? as usize;
    let c = r.u32()?;
    if n == 0 {
        return Err(ParseError::BadHeader {
            field: "n",
            value: 0,
        }
        .into());
    }
    if d == 0 {
        return Err(ParseError::BadHeader {
            field: "d",
            value: 0,
        }
        .into());
    }
    if c < 2 {
        return Err(ParseError::BadHeader {
            field: "c",
            value: c as u64,
        }
        .into());
    }
    // Check the full payload size up front so a truncation error names the
    // total shortfall rather than the first short read.
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|fb| fb.checked_add(n * 4))
        .ok_or(ParseError::BadHeader {
            field: "n*d",
            value: u64::MAX,
        })?;
    let available = buf.len() - r.pos;
    if available < expected {
        return Err(ParseError::Truncated {
            missing: (expected - available) as u64,
        }
        .into());
    }
    let raw = r.f32_slice(n * d)?;
    let mut data = Array2::zeros((n, d));
    for i in 0..n {
        for j in 0..d {
            let v = raw[i * d + j];
            if !v.is_finite() {
                return Err(ParseError::NonFinite { row: i, col: j }.into());
            }
            data[[i, j]] = v as f64;
        }
    }
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let l = r.u32()?;
        if l >= c {
            return Err(ParseError::LabelOutOfRange {
                row: i,
                label: l,
                classes: c,
            }
            .into());
        }
        labels.push(l as usize);
    }
    Ok((
        FeatureMatrix::new(data)?,
        LabelVector::new(labels, c as usize)?,
    ))
}

fn push_array1(out: &mut Vec<u8>, a: &Array1<f64>) {
    for &v in a {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn push_array2(out: &mut Vec<u8>, a: &Array2<f64>) {
    for &v in a.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn push_params(out: &mut Vec<u8>, p: &ClassifierParams) {
    push_array1(out, &p.norm_scale);
    push_array1(out, &p.norm_shift);
    push_array2(out, &p.w1);
    push_array1(out, &p.b1);
    push_array2(out, &p.w2);
    push_array1(out, &p.b2);
}

fn read_params(r: &mut Reader<'_>, d: usize, h: usize, c: usize, dropout: f64) -> Result<ClassifierParams> {
    let norm_scale = Array1::from(r.f32_slice(d)?.into_iter().map(f64::from).collect::<Vec<_>>());
    let norm_shift = Array1::from(r.f32_slice(d)?.into_iter().map(f64::from).collect::<Vec<_>>());
    let w1 = Array2::from_shape_vec(
        (d, h),
        r.f32_slice(d * h)?.into_iter().map(f64::from).collect(),
    )
    .expect("shape matches read size");
    let b1 = Array1::from(r.f32_slice(h)?.into_iter().map(f64::from).collect::<Vec<_>>());
    let w2 = Array2::from_shape_vec(
        (h, c),
        r.f32_slice(h * c)?.into_iter().map(f64::from).collect(),
    )
    .expect("shape matches read size");
    let b2 = Array1::from(r.f32_slice(c)?.into_iter().map(f64::from).collect::<Vec<_>>());
    let params = ClassifierParams {
        norm_scale,
        norm_shift,
        w1,
        b1,
        w2,
        b2,
        dropout_rate: dropout,
    };
    params.validate()?;
    Ok(params)
}

/// Write a model checkpoint: trainable parameters plus the EMA shadow.
pub fn save_checkpoint(path: &Path, params: &ClassifierParams, ema: &EmaState) -> Result<()> {
    if params.dims() != ema.shadow.dims() {
        return Err(Error::contract("EMA shadow shape mismatch"));
    }
    let (d, h, c) = params.dims();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(c as u32).to_le_bytes());
    out.extend_from_slice(&(params.dropout_rate as f32).to_le_bytes());
    out.extend_from_slice(&(ema.alpha as f32).to_le_bytes());
    push_params(&mut out, params);
    push_params(&mut out, &ema.shadow);
    fs::write(path, out)?;
    Ok(())
}

/// Parse a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(ClassifierParams, EmaState)> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(ParseError::UnsupportedVersion(version).into());
    }
    let d = r.u32()? as usize;
    let h = r.u32()? as usize;
    let c = r.u32()? as usize;
    if d == 0 || h == 0 {
        return Err(ParseError::BadHeader {
            field: "d/h",
            value: 0,
        }
        .into());
    }
    if c < 2 {
        return Err(ParseError::BadHeader {
            field: "c",
            value: c as u64,
        }
        .into());
    }
    let dropout = r.f32()? as f64;
    let alpha = r.f32()? as f64;
    let params = read_params(&mut r, d, h, c, dropout)?;
    let shadow = read_params(&mut r, d, h, c, dropout)?;
    Ok((params, EmaState::new(shadow, alpha)))
}

/// Newline-delimited index file.
pub fn save_indices(path: &Path, indices: &[usize]) -> Result<()> {
    let mut out = String::new();
    for &i in indices {
        out.push_str(&i.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_indices(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("invalid index line: {l:?}")))
        })
        .collect()
}

/// Newline-delimited score file (one float per line).
pub fn save_scores(path: &Path, scores: &[f64]) -> Result<()> {
    let mut out = String::new();
    for &s in scores {
        out.push_str(&format!("{s}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_scores(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("invalid score line: {l:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use tempfile::tempdir;

    fn sample_dataset() -> (FeatureMatrix, LabelVector) {
        // Values chosen representable in f32 so round trips are exact.
        let feats = FeatureMatrix::new(array![
            [1.5, -2.25, 0.125],
            [0.0, 3.5, -1.75],
            [10.0, 0.5, 2.0]
        ])
        .unwrap();
        let labels = LabelVector::new(vec![0, 2, 1], 3).unwrap();
        (feats, labels)
    }

    #[test]
    fn feature_round_trip_is_bit_identical() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("feats.hssf");
        let (feats, labels) = sample_dataset();
        save_features(&path, &feats, &labels).unwrap();
        let (feats2, labels2) = load_features(&path).unwrap();
        assert_eq!(feats, feats2);
        assert_eq!(labels, labels2);
    }

    #[test]
    fn truncated_file_reports_missing_bytes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("feats.hssf");
        let (feats, labels) = sample_dataset();
        save_features(&path, &feats, &labels).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        fs::write(&path, &bytes).unwrap();
        match load_features(&path) {
            Err(Error::Parse(ParseError::Truncated { missing })) => assert_eq!(missing, 5),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("feats.hssf");
        fs::write(&path, b"NOPE rest of file").unwrap();
        assert!(matches!(
            load_features(&path),
            Err(Error::Parse(ParseError::BadMagic { .. }))
        ));
    }

    #[test]
    fn nan_entry_names_the_row() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("feats.hssf");
        let (feats, labels) = sample_dataset();
        save_features(&path, &feats, &labels).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        // Corrupt the first float of row 1 (header is 4+2+8+8+4 = 26 bytes,
        // row stride is 3 floats).
        let offset = 26 + 3 * 4;
        bytes[offset..offset + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        match load_features(&path) {
            Err(Error::Parse(ParseError::NonFinite { row, col })) => {
                assert_eq!((row, col), (1, 0));
            }
            other => panic!("expected NaN error, got {other:?}"),
        }
    }

    #[test]
    fn label_out_of_range_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("feats.hssf");
        let (feats, labels) = sample_dataset();
        save_features(&path, &feats, &labels).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let label_offset = bytes.len() - 4; // last label
        bytes[label_offset..].copy_from_slice(&9u32.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        match load_features(&path) {
            Err(Error::Parse(ParseError::LabelOutOfRange { row, label, classes })) => {
                assert_eq!((row, label, classes), (2, 9, 3));
            }
            other => panic!("expected label error, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.hsck");
        let params = ClassifierParams::init(5, 4, 3, 0.1, 42);
        let ema = EmaState::new(ClassifierParams::init(5, 4, 3, 0.1, 43), 0.99);
        save_checkpoint(&path, &params, &ema).unwrap();
        let (params2, ema2) = load_checkpoint(&path).unwrap();
        assert_eq!(params2.dims(), (5, 4, 3));
        assert_eq!(ema2.shadow.dims(), (5, 4, 3));
        assert!((ema2.alpha - 0.99).abs() < 1e-6);
        // f32 quantization: values agree to f32 precision.
        for (a, b) in params.w1.iter().zip(params2.w1.iter()) {
            assert_eq!(*a as f32, *b as f32);
        }
        // A second round trip is exact.
        save_checkpoint(&path, &params2, &ema2).unwrap();
        let (params3, _) = load_checkpoint(&path).unwrap();
        assert_eq!(params2, params3);
    }

    #[test]
    fn index_and_score_files_round_trip() {
        let dir = tempdir().unwrap();
        let ipath = dir.path().join("idx.txt");
        save_indices(&ipath, &[5, 0, 12]).unwrap();
        assert_eq!(load_indices(&ipath).unwrap(), vec![5, 0, 12]);
        let spath = dir.path().join("scores.txt");
        save_scores(&spath, &[0.5, 1.25, -3.0]).unwrap();
        assert_eq!(load_scores(&spath).unwrap(), vec![0.5, 1.25, -3.0]);
    }
}
