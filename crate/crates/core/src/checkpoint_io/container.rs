use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CheckpointError, Dtype, Result};

const METADATA_KEY: &str = "__metadata__";
/// Upper bound on the JSON header; real containers stay far below this.
const MAX_HEADER_BYTES: u64 = 100 * 1024 * 1024;
const READ_CHUNK_BYTES: usize = 1 << 20;

/// One tensor entry of a container header. `offset` is relative to the
/// start of the data region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

impl TensorRecord {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Parsed header of a checkpoint container. Only the header is read;
/// tensor bytes are fetched on demand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContainerIndex {
    pub path: PathBuf,
    pub header_size: u64,
    pub data_len: u64,
    /// Sorted by data offset.
    pub tensors: Vec<TensorRecord>,
    pub metadata: BTreeMap<String, String>,
}

/// What to do when a decoded element is NaN or infinite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NonFinitePolicy {
    /// Fail with [`CheckpointError::NonFinite`].
    #[default]
    Strict,
    /// Skip the element and count it.
    Lenient,
}

/// Values of one tensor decoded to `f64`, in stored row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedTensor {
    pub values: Vec<f64>,
    /// Non-finite elements skipped under [`NonFinitePolicy::Lenient`].
    pub dropped: usize,
}

#[derive(Deserialize)]
struct RawEntry {
    dtype: String,
    shape: Vec<u64>,
    data_offsets: [u64; 2],
}

fn malformed(path: &Path, msg: impl Into<String>) -> CheckpointError {
    CheckpointError::MalformedHeader {
        path: path.to_path_buf(),
        reason: msg.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads and validates the header of a container file.
pub fn open_container(path: impl AsRef<Path>) -> Result<ContainerIndex> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(io_err(path))?;
    let file_len = file.metadata().map_err(io_err(path))?.len();
    if file_len < 8 {
        return Err(malformed(path, format!("file is {file_len} bytes, shorter than the length prefix")));
    }
    let mut prefix = [0u8; 8];
    file.read_exact(&mut prefix).map_err(io_err(path))?;
    let header_size = u64::from_le_bytes(prefix);
    if header_size > MAX_HEADER_BYTES || header_size > file_len - 8 {
        return Err(malformed(
            path,
            format!("header length {header_size} exceeds the {} bytes after the prefix", file_len - 8),
        ));
    }
    let mut header = vec![0u8; header_size as usize];
    file.read_exact(&mut header).map_err(io_err(path))?;
    let data_len = file_len - 8 - header_size;
    parse_header(path, &header, header_size, data_len)
}

fn parse_header(path: &Path, header: &[u8], header_size: u64, data_len: u64) -> Result<ContainerIndex> {
    let text = std::str::from_utf8(header).map_err(|e| malformed(path, format!("header is not UTF-8: {e}")))?;
    let root: serde_json::Map<String, Value> =
        serde_json::from_str(text.trim_end()).map_err(|e| malformed(path, format!("header JSON: {e}")))?;

    let mut metadata = BTreeMap::new();
    let mut tensors = Vec::with_capacity(root.len());
    for (name, value) in root {
        if name == METADATA_KEY {
            let Value::Object(map) = value else {
                return Err(malformed(path, "__metadata__ is not an object"));
            };
            for (k, v) in map {
                match v {
                    Value::String(s) => {
                        metadata.insert(k, s);
                    }
                    _ => return Err(malformed(path, format!("metadata value for {k:?} is not a string"))),
                }
            }
            continue;
        }
        let raw: RawEntry =
            serde_json::from_value(value).map_err(|e| malformed(path, format!("tensor {name:?}: {e}")))?;
        let dtype: Dtype = raw.dtype.parse().map_err(|dtype| CheckpointError::UnknownDtype {
            tensor: name.clone(),
            dtype,
        })?;
        let [begin, end] = raw.data_offsets;
        if end < begin {
            return Err(malformed(path, format!("tensor {name:?}: data_offsets [{begin}, {end}) are reversed")));
        }
        if end > data_len {
            return Err(malformed(
                path,
                format!("tensor {name:?}: range ends at {end} but the data region holds {data_len} bytes"),
            ));
        }
        let elements = raw
            .shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(dtype.width() as u64))
            .ok_or_else(|| malformed(path, format!("tensor {name:?}: shape overflows")))?;
        let length = end - begin;
        if elements != length {
            return Err(malformed(
                path,
                format!("tensor {name:?}: shape {:?} x {dtype} needs {elements} bytes, range holds {length}", raw.shape),
            ));
        }
        let shape = raw
            .shape
            .iter()
            .map(|&d| usize::try_from(d).map_err(|_| malformed(path, format!("tensor {name:?}: dimension too large"))))
            .collect::<Result<Vec<_>>>()?;
        tensors.push(TensorRecord {
            name,
            dtype,
            shape,
            offset: begin,
            length,
        });
    }

    tensors.sort_by(|a, b| (a.offset, a.offset + a.length, &a.name).cmp(&(b.offset, b.offset + b.length, &b.name)));
    // Zero-length tensors occupy no bytes and cannot overlap anything.
    let mut last: Option<&TensorRecord> = None;
    for rec in tensors.iter().filter(|r| r.length > 0) {
        if let Some(prev) = last {
            if rec.offset < prev.offset + prev.length {
                return Err(CheckpointError::OverlappingRanges {
                    first: prev.name.clone(),
                    second: rec.name.clone(),
                });
            }
        }
        last = Some(rec);
    }

    Ok(ContainerIndex {
        path: path.to_path_buf(),
        header_size,
        data_len,
        tensors,
        metadata,
    })
}

impl ContainerIndex {
    /// Absolute file position of the data region.
    pub fn data_start(&self) -> u64 {
        8 + self.header_size
    }

    pub fn record(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|r| r.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|r| r.name.as_str())
    }

    /// Decodes every element of `name` into memory.
    pub fn read_tensor_values(&self, name: &str, policy: NonFinitePolicy) -> Result<DecodedTensor> {
        let record = self.record(name).ok_or_else(|| CheckpointError::NameNotFound(name.to_string()))?;
        let mut values = Vec::with_capacity(record.element_count());
        let dropped = self.visit_record(record, policy, |v| values.push(v))?;
        Ok(DecodedTensor { values, dropped })
    }

    /// Streams decoded elements of `name` through `sink` without holding the
    /// tensor in memory. Returns the number of dropped non-finite elements.
    pub fn visit_values(&self, name: &str, policy: NonFinitePolicy, sink: impl FnMut(f64)) -> Result<usize> {
        let record = self.record(name).ok_or_else(|| CheckpointError::NameNotFound(name.to_string()))?;
        self.visit_record(record, policy, sink)
    }

    pub(crate) fn visit_record(
        &self,
        record: &TensorRecord,
        policy: NonFinitePolicy,
        mut sink: impl FnMut(f64),
    ) -> Result<usize> {
        let path = self.path.as_path();
        let mut file = File::open(path).map_err(io_err(path))?;
        file.seek(SeekFrom::Start(self.data_start() + record.offset))
            .map_err(io_err(path))?;

        let width = record.dtype.width();
        let chunk_bytes = (READ_CHUNK_BYTES / width) * width;
        let mut buf = vec![0u8; chunk_bytes.min(record.length as usize)];
        let mut remaining = record.length as usize;
        let mut index = 0usize;
        let mut dropped = 0usize;
        while remaining > 0 {
            let take = remaining.min(buf.len());
            let chunk = &mut buf[..take];
            file.read_exact(chunk).map_err(|e| match e.kind() {
                io::ErrorKind::UnexpectedEof => {
                    let file_len = std::fs::metadata(path).map(|m| m.len()).unwrap_or(0);
                    CheckpointError::TruncatedData {
                        name: record.name.clone(),
                        expected: record.length,
                        available: file_len
                            .saturating_sub(self.data_start() + record.offset)
                            .min(record.length),
                    }
                }
                _ => CheckpointError::Io {
                    path: path.to_path_buf(),
                    source: e,
                },
            })?;
            let mut emit = |v: f64| -> Result<()> {
                if v.is_finite() {
                    sink(v);
                } else {
                    match policy {
                        NonFinitePolicy::Strict => {
                            return Err(CheckpointError::NonFinite {
                                name: record.name.clone(),
                                index,
                            })
                        }
                        NonFinitePolicy::Lenient => dropped += 1,
                    }
                }
                index += 1;
                Ok(())
            };
            match record.dtype {
                Dtype::F32 => {
                    for b in chunk.chunks_exact(4) {
                        emit(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)?;
                    }
                }
                Dtype::F64 => {
                    for b in chunk.chunks_exact(8) {
                        emit(f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))?;
                    }
                }
                Dtype::F16 | Dtype::BF16 => {
                    let dtype = record.dtype;
                    for b in chunk.chunks_exact(2) {
                        emit(dtype.decode(b))?;
                    }
                }
            }
            remaining -= take;
        }
        Ok(dropped)
    }
}

/// A tensor to be written by [`write_container`], already encoded.
#[derive(Debug, Clone)]
pub struct TensorData {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl TensorData {
    /// Encodes `values` as `dtype`.
    pub fn from_values(name: impl Into<String>, dtype: Dtype, shape: Vec<usize>, values: &[f64]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * dtype.width());
        for &v in values {
            dtype.encode(v, &mut bytes);
        }
        TensorData {
            name: name.into(),
            dtype,
            shape,
            bytes,
        }
    }
}

/// Writes a container in the layout [`open_container`] reads. Tensors are
/// laid out in the given order; header keys are sorted, so output bytes
/// depend only on the arguments.
pub fn write_container(path: impl AsRef<Path>, tensors: &[TensorData], metadata: &BTreeMap<String, String>) -> Result<()> {
    let path = path.as_ref();
    let mut header = serde_json::Map::new();
    if !metadata.is_empty() {
        let meta = metadata
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        header.insert(METADATA_KEY.to_string(), Value::Object(meta));
    }
    let mut offset = 0u64;
    for t in tensors {
        let expected = t.shape.iter().product::<usize>() * t.dtype.width();
        if expected != t.bytes.len() {
            return Err(malformed(
                path,
                format!("tensor {:?}: shape {:?} needs {expected} bytes, got {}", t.name, t.shape, t.bytes.len()),
            ));
        }
        if header.contains_key(&t.name) {
            return Err(malformed(path, format!("duplicate tensor name {:?}", t.name)));
        }
        let end = offset + t.bytes.len() as u64;
        header.insert(
            t.name.clone(),
            serde_json::json!({
                "dtype": t.dtype.as_str(),
                "shape": t.shape,
                "data_offsets": [offset, end],
            }),
        );
        offset = end;
    }
    let mut header_bytes = serde_json::to_vec(&Value::Object(header)).expect("header serializes");
    while header_bytes.len() % 8 != 0 {
        header_bytes.push(b' ');
    }

    let file = File::create(path).map_err(io_err(path))?;
    let mut out = io::BufWriter::new(file);
    let write = |out: &mut io::BufWriter<File>| -> io::Result<()> {
        out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        out.write_all(&header_bytes)?;
        for t in tensors {
            out.write_all(&t.bytes)?;
        }
        out.flush()
    };
    write(&mut out).map_err(io_err(path))
}
