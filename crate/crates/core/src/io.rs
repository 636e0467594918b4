// SPDX-License-Identifier: Apache-2.0

//! GSBE containers for class embeddings and per-image feature records, and
//! the JSON dataset manifest that ties them together.
//!
//! Layout (integers `u32` little-endian unless noted, floats `f32` LE):
//!
//! ```text
//! "GSBE" | version=1 | kind
//! kind 1: C | d | C*d floats | C x (byte length | utf-8 name)
//! kind 2: N | d | w | h | label (i32, -1 = unknown) | N*d floats | w*h*d floats
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::spatial::GridShape;

pub const MAGIC: [u8; 4] = *b"GSBE";
pub const VERSION: u32 = 1;
pub const KIND_CLASSES: u32 = 1;
pub const KIND_SAMPLE: u32 = 2;

const HEADER_LEN: usize = 12;

/// Text embeddings for the C candidate classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddingSet {
    dim: usize,
    embeddings: Vec<f32>,
    names: Vec<String>,
}

impl ClassEmbeddingSet {
    pub fn new(dim: usize, embeddings: Vec<f32>, names: Vec<String>) -> Result<Self> {
        let set = Self {
            dim,
            embeddings,
            names,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.names.len();
        if c < 2 {
            return Err(invalid(format!("need at least 2 classes, got {c}")));
        }
        if self.dim == 0 {
            return Err(invalid("embedding dimension is zero"));
        }
        if self.embeddings.len() != c * self.dim {
            return Err(invalid(format!(
                "expected {} embedding values for {c} classes of width {}, got {}",
                c * self.dim,
                self.dim,
                self.embeddings.len()
            )));
        }
        if self.embeddings.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite embedding value"));
        }
        let mut seen = HashSet::with_capacity(c);
        for name in &self.names {
            if name.is_empty() {
                return Err(invalid("empty class name"));
            }
            if !seen.insert(name.as_str()) {
                return Err(invalid(format!("duplicate class name {name:?}")));
            }
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.names.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    /// `C x d` matrix in double precision.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_f32(self.class_count(), self.dim, &self.embeddings)
            .expect("validated on construction")
    }
}

/// Features of one test image: augmented-view embeddings (row 0 is the
/// unaugmented image) and the patch grid of the unaugmented image.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    view_count: usize,
    dim: usize,
    grid: GridShape,
    view_features: Vec<f32>,
    spatial_features: Vec<f32>,
    label: Option<usize>,
}

impl SampleRecord {
    pub fn new(
        view_count: usize,
        dim: usize,
        grid: GridShape,
        view_features: Vec<f32>,
        spatial_features: Vec<f32>,
        label: Option<usize>,
    ) -> Result<Self> {
        let rec = Self {
            view_count,
            dim,
            grid,
            view_features,
            spatial_features,
            label,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.view_count == 0 {
            return Err(invalid("sample has no views"));
        }
        if self.dim == 0 {
            return Err(invalid("feature dimension is zero"));
        }
        if self.grid.width == 0 || self.grid.height == 0 {
            return Err(invalid("spatial grid has a zero side"));
        }
        if self.view_features.len() != self.view_count * self.dim {
            return Err(invalid(format!(
                "expected {} view values, got {}",
                self.view_count * self.dim,
                self.view_features.len()
            )));
        }
        if self.spatial_features.len() != self.grid.len() * self.dim {
            return Err(invalid(format!(
                "spatial rows do not match the {}x{} grid: expected {} values, got {}",
                self.grid.width,
                self.grid.height,
                self.grid.len() * self.dim,
                self.spatial_features.len()
            )));
        }
        if let Some(label) = self.label {
            if i32::try_from(label).is_err() {
                return Err(invalid(format!("label {label} does not fit in i32")));
            }
        }
        if self
            .view_features
            .iter()
            .chain(&self.spatial_features)
            .any(|v| !v.is_finite())
        {
            return Err(invalid("non-finite feature value"));
        }
        Ok(())
    }

    pub fn view_count(&self) -> usize {
        self.view_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> GridShape {
        self.grid
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn view_features(&self) -> &[f32] {
        &self.view_features
    }

    pub fn spatial_features(&self) -> &[f32] {
        &self.spatial_features
    }

    pub fn views_matrix(&self) -> Matrix {
        Matrix::from_f32(self.view_count, self.dim, &self.view_features)
            .expect("validated on construction")
    }

    pub fn spatial_matrix(&self) -> Matrix {
        Matrix::from_f32(self.grid.len(), self.dim, &self.spatial_features)
            .expect("validated on construction")
    }
}

/// Any decoded GSBE payload.
#[derive(Debug, Clone, PartialEq)]
pub enum GsbeFile {
    Classes(ClassEmbeddingSet),
    Sample(SampleRecord),
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidRecord(msg.into())
}

fn write_header(buf: &mut Vec<u8>, kind: u32) {
    buf.extend_from_slice(&MAGIC);
    buf.write_u32::<LittleEndian>(VERSION).unwrap();
    buf.write_u32::<LittleEndian>(kind).unwrap();
}

fn write_len(buf: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| invalid(format!("{n} does not fit in u32")))?;
    buf.write_u32::<LittleEndian>(n).unwrap();
    Ok(())
}

fn write_floats(buf: &mut Vec<u8>, values: &[f32]) {
    buf.reserve(values.len() * 4);
    for &v in values {
        buf.write_f32::<LittleEndian>(v).unwrap();
    }
}

pub fn encode_class_set(set: &ClassEmbeddingSet) -> Result<Vec<u8>> {
    set.validate()?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 + set.embeddings.len() * 4);
    write_header(&mut buf, KIND_CLASSES);
    write_len(&mut buf, set.class_count())?;
    write_len(&mut buf, set.dim)?;
    write_floats(&mut buf, &set.embeddings);
    for name in &set.names {
        write_len(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
    }
    Ok(buf)
}

pub fn encode_sample(rec: &SampleRecord) -> Result<Vec<u8>> {
    rec.validate()?;
    let mut buf = Vec::with_capacity(
        HEADER_LEN + 20 + (rec.view_features.len() + rec.spatial_features.len()) * 4,
    );
    write_header(&mut buf, KIND_SAMPLE);
    write_len(&mut buf, rec.view_count)?;
    write_len(&mut buf, rec.dim)?;
    write_len(&mut buf, rec.grid.width)?;
    write_len(&mut buf, rec.grid.height)?;
    let label = rec.label.map_or(-1, |l| l as i32);
    buf.write_i32::<LittleEndian>(label).unwrap();
    write_floats(&mut buf, &rec.view_features);
    write_floats(&mut buf, &rec.spatial_features);
    Ok(buf)
}

/// Bounds-checked little-endian reader over a byte slice.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::TruncatedFile {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        self.take(4).map(LittleEndian::read_u32)
    }

    fn count(&mut self) -> Result<usize> {
        self.u32().map(|v| v as usize)
    }

    fn i32(&mut self) -> Result<i32> {
        self.take(4).map(LittleEndian::read_i32)
    }

    fn floats(&mut self, count: usize) -> Result<Vec<f32>> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| invalid("declared tensor size overflows"))?;
        let raw = self.take(bytes)?;
        let mut out = vec![0.0; count];
        LittleEndian::read_f32_into(raw, &mut out);
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        let rest = self.bytes.len() - self.pos;
        if rest != 0 {
            return Err(invalid(format!("{rest} trailing bytes after record")));
        }
        Ok(())
    }
}

fn checked_product(a: usize, b: usize) -> Result<usize> {
    a.checked_mul(b)
        .ok_or_else(|| invalid("declared tensor size overflows"))
}

/// Validates magic and version and returns the record kind.
pub fn peek_kind(bytes: &[u8]) -> Result<u32> {
    let mut r = Reader::new(bytes);
    read_header(&mut r)
}

fn read_header(r: &mut Reader<'_>) -> Result<u32> {
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    r.u32()
}

fn expect_kind(r: &mut Reader<'_>, want: u32) -> Result<()> {
    let kind = read_header(r)?;
    if kind != want {
        return Err(invalid(format!("record kind {kind}, expected {want}")));
    }
    Ok(())
}

pub fn decode_class_set(bytes: &[u8]) -> Result<ClassEmbeddingSet> {
    let mut r = Reader::new(bytes);
    expect_kind(&mut r, KIND_CLASSES)?;
    decode_class_body(&mut r)
}

fn decode_class_body(r: &mut Reader<'_>) -> Result<ClassEmbeddingSet> {
    let c = r.count()?;
    let d = r.count()?;
    let embeddings = r.floats(checked_product(c, d)?)?;
    let mut names = Vec::with_capacity(c.min(r.bytes.len() / 4));
    for i in 0..c {
        let len = r.count()?;
        let raw = r.take(len)?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| invalid(format!("class name {i} is not valid UTF-8")))?;
        names.push(name.to_owned());
    }
    r.finish()?;
    ClassEmbeddingSet::new(d, embeddings, names)
}

pub fn decode_sample(bytes: &[u8]) -> Result<SampleRecord> {
    let mut r = Reader::new(bytes);
    expect_kind(&mut r, KIND_SAMPLE)?;
    decode_sample_body(&mut r)
}

fn decode_sample_body(r: &mut Reader<'_>) -> Result<SampleRecord> {
    let n = r.count()?;
    let d = r.count()?;
    let w = r.count()?;
    let h = r.count()?;
    let label = match r.i32()? {
        -1 => None,
        l if l >= 0 => Some(l as usize),
        l => return Err(invalid(format!("label {l} is neither -1 nor a class index"))),
    };
    let views = r.floats(checked_product(n, d)?)?;
    let spatial = r.floats(checked_product(checked_product(w, h)?, d)?)?;
    r.finish()?;
    SampleRecord::new(n, d, GridShape::new(w, h), views, spatial, label)
}

pub fn decode_any(bytes: &[u8]) -> Result<GsbeFile> {
    let mut r = Reader::new(bytes);
    match read_header(&mut r)? {
        KIND_CLASSES => decode_class_body(&mut r).map(GsbeFile::Classes),
        KIND_SAMPLE => decode_sample_body(&mut r).map(GsbeFile::Sample),
        other => Err(invalid(format!("unknown record kind {other}"))),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_class_file(set: &ClassEmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_class_set(set).map_err(|e| e.in_file(path))?;
    write_bytes(path, &bytes)
}

pub fn read_class_file(path: impl AsRef<Path>) -> Result<ClassEmbeddingSet> {
    let path = path.as_ref();
    decode_class_set(&read_bytes(path)?).map_err(|e| e.in_file(path))
}

pub fn write_sample_file(rec: &SampleRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_sample(rec).map_err(|e| e.in_file(path))?;
    write_bytes(path, &bytes)
}

pub fn read_sample_file(path: impl AsRef<Path>) -> Result<SampleRecord> {
    let path = path.as_ref();
    decode_sample(&read_bytes(path)?).map_err(|e| e.in_file(path))
}

pub fn read_any_file(path: impl AsRef<Path>) -> Result<GsbeFile> {
    let path = path.as_ref();
    decode_any(&read_bytes(path)?).map_err(|e| e.in_file(path))
}

/// On-disk manifest document. Unknown keys (extraction metadata) are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestDocument {
    pub dataset_name: String,
    pub class_file: String,
    pub samples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleEntry {
    /// Path as written in the manifest.
    pub entry: String,
    /// Path resolved against the manifest's directory.
    pub path: PathBuf,
}

/// A parsed manifest whose referenced files all existed when it was read.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub class_file: PathBuf,
    pub samples: Vec<SampleEntry>,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    parse_manifest(&text, path)
}

/// Parses manifest JSON, resolving relative paths against `manifest_path`'s
/// directory.
pub fn parse_manifest(text: &str, manifest_path: &Path) -> Result<DatasetManifest> {
    let fail = |reason: String| Error::ParseFailure {
        path: manifest_path.to_path_buf(),
        reason,
    };
    let doc: ManifestDocument = serde_json::from_str(text).map_err(|e| fail(e.to_string()))?;
    if doc.samples.is_empty() {
        return Err(fail("manifest lists no samples".into()));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new(""));
    let resolve = |entry: &str| -> Result<PathBuf> {
        let p = base.join(entry);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::MissingFile(p))
        }
    };
    let class_file = resolve(&doc.class_file)?;
    let samples = doc
        .samples
        .iter()
        .map(|entry| {
            Ok(SampleEntry {
                entry: entry.clone(),
                path: resolve(entry)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetManifest {
        dataset_name: doc.dataset_name,
        class_file,
        samples,
    })
}

pub fn write_manifest(doc: &ManifestDocument, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(doc).expect("manifest serializes");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}
