//! On-disk formats: binary feature dumps, layer manifests, span annotations,
//! embedding tables.
//!
//! Dump layout (little-endian):
//!
//! ```text
//! "PRBF" | version u8 = 1 | dtype u8 (0 = f32, 1 = f64) | rank u8 = 2 | rows u64 | cols u64 | row-major payload
//! ```
//!
//! The layer id and frame period live in a JSON sidecar next to the dump
//! (`<file>.meta.json`) and in the per-utterance [`Manifest`].

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PRBF";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 1 + 1 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// One layer's `T x D` features. Held as f64 whatever the on-disk dtype.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDump {
    pub layer_id: String,
    pub frame_period_ms: u32,
    pub data: DMatrix<f64>,
}

impl FeatureDump {
    pub fn new(layer_id: impl Into<String>, frame_period_ms: u32, data: DMatrix<f64>) -> Result<Self> {
        let dump = Self {
            layer_id: layer_id.into(),
            frame_period_ms,
            data,
        };
        dump.validate()?;
        Ok(dump)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_period_ms == 0 {
            return Err(Error::Invalid(format!(
                "layer {}: frame period must be positive",
                self.layer_id
            )));
        }
        if self.data.nrows() == 0 || self.data.ncols() == 0 {
            return Err(Error::Shape(format!(
                "layer {}: empty {}x{} dump",
                self.layer_id,
                self.data.nrows(),
                self.data.ncols()
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("layer {}", self.layer_id)));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dims(&self) -> usize {
        self.data.ncols()
    }
}

/// Serialize a matrix into the dump byte layout.
pub fn encode_matrix(data: &DMatrix<f64>, dtype: Dtype) -> Result<Vec<u8>> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix to be written".into()));
    }
    let (rows, cols) = data.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + rows * cols * dtype.size());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(dtype.code());
    out.push(2);
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for r in 0..rows {
        for c in 0..cols {
            let v = data[(r, c)];
            match dtype {
                Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    Ok(out)
}

/// Parse the dump byte layout. `origin` is only used in error messages.
pub fn decode_matrix(bytes: &[u8], origin: &Path) -> Result<(DMatrix<f64>, Dtype)> {
    let fail = |reason: String| Error::format(origin, reason);
    if bytes.len() < HEADER_LEN {
        return Err(fail(format!(
            "truncated header: {} bytes, need {HEADER_LEN}",
            bytes.len()
        )));
    }
    if bytes[0..4] != MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[0..4])));
    }
    if bytes[4] != VERSION {
        return Err(fail(format!("unsupported version {}", bytes[4])));
    }
    let dtype = Dtype::from_code(bytes[5]).ok_or_else(|| fail(format!("unknown dtype code {}", bytes[5])))?;
    if bytes[6] != 2 {
        return Err(fail(format!("unsupported rank {}", bytes[6])));
    }
    let rows = u64::from_le_bytes(bytes[7..15].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[15..23].try_into().unwrap());
    if rows == 0 || cols == 0 {
        return Err(fail(format!("empty dims {rows}x{cols}")));
    }
    let payload = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(dtype.size() as u64))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| fail(format!("dims {rows}x{cols} overflow")))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() < payload {
        return Err(fail(format!(
            "truncated payload: dims {rows}x{cols} need {payload} bytes, found {}",
            body.len()
        )));
    }
    if body.len() > payload {
        return Err(fail(format!(
            "{} trailing bytes after {rows}x{cols} payload",
            body.len() - payload
        )));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let values: Vec<f64> = match dtype {
        Dtype::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(fail("non-finite value in payload".into()));
    }
    Ok((DMatrix::from_row_slice(rows, cols, &values), dtype))
}

pub fn write_matrix(path: &Path, data: &DMatrix<f64>, dtype: Dtype) -> Result<()> {
    let bytes = encode_matrix(data, dtype)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<(DMatrix<f64>, Dtype)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes, path)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DumpMeta {
    layer_id: String,
    frame_period_ms: u32,
}

/// Write the binary dump and its metadata sidecar; returns the manifest entry
/// describing it (path as given).
pub fn write_dump(dump: &FeatureDump, path: &Path, dtype: Dtype) -> Result<LayerEntry> {
    dump.validate()?;
    write_matrix(path, &dump.data, dtype)?;
    let meta = DumpMeta {
        layer_id: dump.layer_id.clone(),
        frame_period_ms: dump.frame_period_ms,
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))?;
    Ok(LayerEntry {
        layer_id: dump.layer_id.clone(),
        path: path.to_path_buf(),
        frame_period_ms: dump.frame_period_ms,
    })
}

pub fn read_dump(path: &Path) -> Result<FeatureDump> {
    let (data, _) = read_matrix(path)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: DumpMeta = serde_json::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))?;
    FeatureDump::new(meta.layer_id, meta.frame_period_ms, data)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub layer_id: String,
    pub path: PathBuf,
    pub frame_period_ms: u32,
}

/// Ordered layer dumps of one utterance. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub utterance_id: String,
    pub layers: Vec<LayerEntry>,
}

impl Manifest {
    pub fn new(utterance_id: impl Into<String>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            layers: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for l in &self.layers {
            if !seen.insert(l.layer_id.as_str()) {
                return Err(Error::Invalid(format!(
                    "manifest {}: duplicate layer id {}",
                    self.utterance_id, l.layer_id
                )));
            }
            if l.frame_period_ms == 0 {
                return Err(Error::Invalid(format!(
                    "manifest {}: layer {} has zero frame period",
                    self.utterance_id, l.layer_id
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Load and check that layer ids are unique and every path resolves.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        m.validate()?;
        let base = path.parent().unwrap_or(Path::new("."));
        for l in &mut m.layers {
            if l.path.is_relative() {
                l.path = base.join(&l.path);
            }
            if !l.path.is_file() {
                return Err(Error::format(
                    path,
                    format!("layer {}: missing dump {}", l.layer_id, l.path.display()),
                ));
            }
        }
        Ok(m)
    }

    pub fn layer_ids(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|l| l.layer_id.as_str())
    }

    pub fn read_layer(&self, entry: &LayerEntry) -> Result<FeatureDump> {
        let (data, _) = read_matrix(&entry.path)?;
        FeatureDump::new(entry.layer_id.clone(), entry.frame_period_ms, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanKind {
    Word,
    Phone,
    Utterance,
}

impl fmt::Display for SpanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpanKind::Word => "word",
            SpanKind::Phone => "phone",
            SpanKind::Utterance => "utterance",
        })
    }
}

impl FromStr for SpanKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "word" => Ok(SpanKind::Word),
            "phone" => Ok(SpanKind::Phone),
            "utterance" | "utt" => Ok(SpanKind::Utterance),
            other => Err(format!("unknown span kind {other:?}")),
        }
    }
}

/// Labeled `[start_frame, end_frame)` span at base resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanAnnotation {
    pub utterance_id: String,
    pub label: String,
    pub kind: SpanKind,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl SpanAnnotation {
    pub fn new(
        utterance_id: impl Into<String>,
        label: impl Into<String>,
        kind: SpanKind,
        start_frame: usize,
        end_frame: usize,
    ) -> Result<Self> {
        if start_frame >= end_frame {
            return Err(Error::Invalid(format!(
                "empty span [{start_frame}, {end_frame})"
            )));
        }
        Ok(Self {
            utterance_id: utterance_id.into(),
            label: label.into(),
            kind,
            start_frame,
            end_frame,
        })
    }

    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn parse_frame(tok: &str, what: &str) -> std::result::Result<usize, String> {
    let v: i64 = tok
        .trim()
        .parse()
        .map_err(|_| format!("{what} {tok:?} is not an integer"))?;
    if v < 0 {
        return Err(format!("{what} {v} is negative"));
    }
    Ok(v as usize)
}

/// Parse annotation TSV text: `utterance_id, kind, label, start_frame, end_frame`.
/// Blank lines and `#` comments are skipped; an optional header row starting
/// with `utterance_id` is accepted.
pub fn parse_annotations(text: &str, origin: &Path) -> Result<Vec<SpanAnnotation>> {
    let mut out: Vec<SpanAnnotation> = Vec::new();
    // (utterance, kind) -> indices into `out`
    let mut by_group: HashMap<(String, SpanKind), Vec<usize>> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if lineno == 1 && line.starts_with("utterance_id") {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::parse(origin, lineno, format!("expected 5 tab-separated columns, found {}", cols.len())));
        }
        let kind: SpanKind = cols[1].trim().parse().map_err(|e| Error::parse(origin, lineno, e))?;
        let start = parse_frame(cols[3], "start_frame").map_err(|e| Error::parse(origin, lineno, e))?;
        let end = parse_frame(cols[4], "end_frame").map_err(|e| Error::parse(origin, lineno, e))?;
        let span = SpanAnnotation::new(cols[0].trim(), cols[2].trim(), kind, start, end)
            .map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        let group = by_group.entry((span.utterance_id.clone(), kind)).or_default();
        for &j in group.iter() {
            let o = &out[j];
            if span.start_frame < o.end_frame && o.start_frame < span.end_frame {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!(
                        "{} span [{}, {}) overlaps [{}, {}) in {}",
                        kind, span.start_frame, span.end_frame, o.start_frame, o.end_frame, span.utterance_id
                    ),
                ));
            }
        }
        group.push(out.len());
        out.push(span);
    }
    Ok(out)
}

pub fn read_annotations(path: &Path) -> Result<Vec<SpanAnnotation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, path)
}

pub fn write_annotations(path: &Path, spans: &[SpanAnnotation]) -> Result<()> {
    let mut text = String::from("utterance_id\tkind\tlabel\tstart_frame\tend_frame\n");
    for s in spans {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            s.utterance_id, s.kind, s.label, s.start_frame, s.end_frame
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    OneHot,
    Dense,
}

/// Label -> fixed-dimension vector lookup, rows kept in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    vectors: DMatrix<f64>,
    kind: EmbeddingKind,
}

impl EmbeddingTable {
    pub fn from_rows(labels: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() != rows.len() {
            return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), rows.len())));
        }
        let dim = rows.first().map_or(0, Vec::len);
        let mut index = HashMap::with_capacity(labels.len());
        for (i, (l, r)) in labels.iter().zip(&rows).enumerate() {
            if r.len() != dim {
                return Err(Error::Shape(format!("label {l}: dimension {} != {dim}", r.len())));
            }
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate label {l}")));
            }
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let vectors = DMatrix::from_row_slice(rows.len(), dim, &flat);
        let kind = if !rows.is_empty()
            && rows.iter().all(|r| {
                r.iter().filter(|&&v| v == 1.0).count() == 1 && r.iter().all(|&v| v == 0.0 || v == 1.0)
            }) {
            EmbeddingKind::OneHot
        } else {
            EmbeddingKind::Dense
        };
        Ok(Self {
            labels,
            index,
            vectors,
            kind,
        })
    }

    /// One-hot table over the distinct labels, in sorted order.
    pub fn one_hot<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut uniq: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        uniq.sort();
        uniq.dedup();
        let n = uniq.len();
        let index = uniq.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Self {
            labels: uniq,
            index,
            vectors: DMatrix::identity(n, n),
            kind: EmbeddingKind::OneHot,
        }
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn get(&self, label: &str) -> Option<Vec<f64>> {
        self.position(label)
            .map(|i| self.vectors.row(i).iter().copied().collect())
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }
}

/// Parse embedding text: one row per label, `label v1 v2 ... vE`.
pub fn parse_embeddings(text: &str, origin: &Path) -> Result<EmbeddingTable> {
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let mut toks = line.split_whitespace();
        let Some(label) = toks.next() else { continue };
        let row = toks
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(origin, lineno, format!("non-numeric token {t:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.is_empty() {
            return Err(Error::parse(origin, lineno, format!("label {label} has no values")));
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("dimension mismatch: {} values, expected {}", row.len(), first.len()),
                ));
            }
        }
        if let Some(prev) = seen.insert(label.to_string(), lineno) {
            return Err(Error::parse(origin, lineno, format!("duplicate label {label} (first on line {prev})")));
        }
        labels.push(label.to_string());
        rows.push(row);
    }
    EmbeddingTable::from_rows(labels, rows)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, path)
}

pub fn write_embeddings(path: &Path, table: &EmbeddingTable) -> Result<()> {
    let mut text = String::new();
    for (i, l) in table.labels().iter().enumerate() {
        text.push_str(l);
        for v in table.vectors().row(i).iter() {
            text.push(' ');
            text.push_str(&v.to_string());
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn header_arithmetic() {
        let one = DMatrix::from_element(1, 1, 0.0);
        assert_eq!(encode_matrix(&one, Dtype::F32).unwrap().len(), 27);
        let m = DMatrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.]);
        let bytes = encode_matrix(&m, Dtype::F64).unwrap();
        assert_eq!(HEADER_LEN, 23);
        assert_eq!(bytes.len() - HEADER_LEN, 48);
        // row-major payload
        assert_eq!(f64::from_le_bytes(bytes[23..31].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(bytes[31..39].try_into().unwrap()), 2.0);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let m = DMatrix::from_element(10, 10, 1.5);
        let mut bytes = encode_matrix(&m, Dtype::F32).unwrap();
        let mut bad = bytes.clone();
        bad[0..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_matrix(&bad, p()), Err(Error::Format { .. })));
        bytes.truncate(HEADER_LEN + 50 * 4);
        let err = decode_matrix(&bytes, p()).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn rejects_unknown_dtype_and_overflow() {
        let m = DMatrix::from_element(2, 2, 1.0);
        let mut bytes = encode_matrix(&m, Dtype::F64).unwrap();
        bytes[5] = 7;
        assert!(decode_matrix(&bytes, p()).unwrap_err().to_string().contains("dtype"));
        let mut bytes = encode_matrix(&m, Dtype::F64).unwrap();
        bytes[7..15].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_matrix(&bytes, p()).unwrap_err().to_string().contains("overflow"));
    }

    #[test]
    fn non_finite_rejected_before_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.prbf");
        let m = DMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        assert!(matches!(write_matrix(&path, &m, Dtype::F64), Err(Error::NonFinite(_))));
        assert!(!path.exists());
    }

    #[test]
    fn dump_and_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("T3.prbf");
        let dump = FeatureDump::new("T3", 40, DMatrix::from_fn(5, 4, |r, c| (r * 4 + c) as f64 * 0.1)).unwrap();
        let entry = write_dump(&dump, &path, Dtype::F64).unwrap();
        assert_eq!(entry.frame_period_ms, 40);
        assert_eq!(read_dump(&path).unwrap(), dump);
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let dump = FeatureDump::new("T1", 20, DMatrix::from_element(3, 2, 1.0)).unwrap();
        write_dump(&dump, &dir.path().join("T1.prbf"), Dtype::F32).unwrap();
        let mut m = Manifest::new("utt1");
        m.layers.push(LayerEntry {
            layer_id: "T1".into(),
            path: "T1.prbf".into(),
            frame_period_ms: 20,
        });
        let mp = dir.path().join("manifest.json");
        m.save(&mp).unwrap();
        let loaded = Manifest::load(&mp).unwrap();
        assert_eq!(loaded.read_layer(&loaded.layers[0]).unwrap(), dump);

        m.layers.push(m.layers[0].clone());
        assert!(m.save(&mp).is_err());
        m.layers.pop();
        m.layers[0].path = "missing.prbf".into();
        m.save(&mp).unwrap();
        assert!(Manifest::load(&mp).is_err());
    }

    #[test]
    fn annotation_parsing() {
        let spans = parse_annotations("utt1\tword\tcat\t10\t15\n", p()).unwrap();
        assert_eq!(spans, vec![SpanAnnotation::new("utt1", "cat", SpanKind::Word, 10, 15).unwrap()]);

        let err = parse_annotations("utt1\tword\tcat\t15\t15\n", p()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));

        let text = "utt1\tword\ta\t0\t3\nutt1\tword\tb\t3\t5\nutt1\tphone\tx\t0\t2\n";
        let spans = parse_annotations(text, p()).unwrap();
        assert_eq!(spans.iter().map(|s| s.label.as_str()).collect::<Vec<_>>(), ["a", "b", "x"]);

        let err = parse_annotations("u\tword\ta\t0\t3\nu\tsyllable\tb\t3\t5\n", p()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_annotations("u\tword\ta\t-1\t3\n", p()).unwrap_err();
        assert!(err.to_string().contains("negative"));
        let err = parse_annotations("u\tword\ta\t0\t3\nu\tword\tb\t2\t5\n", p()).unwrap_err();
        assert!(err.to_string().contains("overlaps"));
    }

    #[test]
    fn embeddings_parse_and_infer_kind() {
        let t = parse_embeddings("cat 1 0 0\ndog 0 1 0\n", p()).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.kind(), EmbeddingKind::OneHot);
        assert_eq!(t.get("dog").unwrap(), vec![0.0, 1.0, 0.0]);
        let t = parse_embeddings("cat 0.5 0.1\n", p()).unwrap();
        assert_eq!(t.kind(), EmbeddingKind::Dense);

        assert!(parse_embeddings("cat 1 0 0\ndog 0 1 0 0\n", p()).unwrap_err().to_string().contains("dimension"));
        assert!(parse_embeddings("cat 1 0\ncat 0 1\n", p()).unwrap_err().to_string().contains("duplicate"));
        assert!(parse_embeddings("cat 1 x\n", p()).unwrap_err().to_string().contains("non-numeric"));
    }

    #[test]
    fn seven_thousand_word_table() {
        let mut text = String::new();
        for i in 0..7000 {
            text.push_str(&format!("w{i}"));
            for j in 0..16 {
                text.push_str(&format!(" {}", ((i * 31 + j * 7) % 13) as f64 / 13.0));
            }
            text.push('\n');
        }
        let t = parse_embeddings(&text, p()).unwrap();
        assert_eq!(t.len(), 7000);
        assert_eq!(t.dim(), 16);
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(rows in 1usize..12, cols in 1usize..9, seed in any::<u64>(), f32_mode in any::<bool>()) {
            let mut s = seed;
            let data = DMatrix::from_fn(rows, cols, |_, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 1e3
            });
            let (dtype, data) = if f32_mode {
                (Dtype::F32, data.map(|v| v as f32 as f64))
            } else {
                (Dtype::F64, data)
            };
            let bytes = encode_matrix(&data, dtype).unwrap();
            let (back, dt) = decode_matrix(&bytes, p()).unwrap();
            prop_assert_eq!(dt, dtype);
            prop_assert!(back.iter().zip(data.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        #[test]
        fn any_single_header_byte_corruption_detected(pos in 0usize..HEADER_LEN, flip in 1u8..=255, f32_mode in any::<bool>()) {
            let data = DMatrix::from_fn(3, 5, |r, c| (r * 5 + c) as f64);
            let dtype = if f32_mode { Dtype::F32 } else { Dtype::F64 };
            let mut bytes = encode_matrix(&data, dtype).unwrap();
            bytes[pos] ^= flip;
            prop_assert!(decode_matrix(&bytes, p()).is_err());
        }
    }
}
