//! On-disk containers: a minimal named-tensor file for weights and calibration
//! activations, and the compressed-model file.
//!
//! Both formats are little-endian.
//!
//! Tensor file (`CWTF`):
//!
//! ```text
//! magic "CWTF" | version u16 | count u32
//! per entry: name_len u16 | name utf8 | dtype u8 (1 = f32, 2 = f64)
//!            | rank u8 | dims u64 × rank | data
//! ```
//!
//! Compressed model (`CERW`):
//!
//! ```text
//! magic "CERW" | version u16 | layers u32
//! per layer: name_len u16 | name utf8 | kind u8 (0 = raw, 1 = quantized)
//!   raw:       dtype u8 | rank u8 | dims u64 × rank | data
//!   quantized: rank u8 | dims u64 × rank | n u32 | m u32 | k u16 | scan u8
//!              | model u8 | scale f16 bits u16 | [static counts u16 × k]
//!              | symbol_count u64 | payload_len u32 | payload
//! ```

use std::fs;
use std::path::Path;

use crate::engine::CompressedLayer;
use crate::entropy::{ModelKind, ModelSpec};
use crate::error::{Error, Result};
use crate::grid::{Grid, QuantizedLayer, ScanOrder};
use crate::matrix::DenseMatrix;
use crate::range_coder::{self, Payload};

pub const TENSOR_MAGIC: &[u8; 4] = b"CWTF";
pub const MODEL_MAGIC: &[u8; 4] = b"CERW";
pub const TENSOR_VERSIONS: &[u16] = &[1];
pub const MODEL_VERSIONS: &[u16] = &[1];

const MAX_RANK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        if shape.len() > MAX_RANK {
            return Err(Error::shape(format!("rank {} exceeds {MAX_RANK}", shape.len())));
        }
        let expected = element_count(&shape)?;
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(shape, TensorData::F64(data))
    }

    pub fn from_matrix(m: &DenseMatrix) -> Self {
        Self {
            shape: vec![m.rows(), m.cols()],
            data: TensorData::F32(m.to_f32()),
        }
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Matrix view `shape[0] × Π shape[1..]`, the layout a dense or unfolded
    /// convolution weight multiplies inputs with.
    pub fn to_matrix(&self) -> Result<DenseMatrix> {
        let (rows, cols) = matrix_dims(&self.shape)?;
        DenseMatrix::new(rows, cols, self.data.to_f64())
    }

    fn data_bytes(&self) -> usize {
        self.len() * self.data.dtype().width()
    }
}

/// `(shape[0], Π shape[1..])` for tensors of rank ≥ 2.
pub fn matrix_dims(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(format!(
            "a matrix view needs rank >= 2, got shape {shape:?}"
        )));
    }
    Ok((shape[0], shape[1..].iter().product()))
}

fn element_count(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::shape(format!("shape {shape:?} overflows")))
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub entries: Vec<(String, Tensor)>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends or replaces an entry, keeping the original position on replace.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.entries.push((name, tensor)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(TENSOR_MAGIC);
        w.u16(TENSOR_VERSIONS[0]);
        w.u32(len_u32(self.entries.len(), "entry count")?);
        for (name, tensor) in &self.entries {
            w.name(name)?;
            w.tensor(tensor)?;
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(TENSOR_MAGIC)?;
        r.version(TENSOR_VERSIONS)?;
        let count = r.u32()?;
        let mut file = TensorFile::new();
        for _ in 0..count {
            let name = r.name()?;
            let tensor = r.tensor()?;
            file.entries.push((name, tensor));
        }
        r.finish()?;
        Ok(file)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// A quantized layer as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedRecord {
    /// Original tensor shape; `n × m` is its matrix view.
    pub shape: Vec<usize>,
    pub rows: usize,
    pub cols: usize,
    pub grid_size: usize,
    pub scan_order: ScanOrder,
    pub model: ModelSpec,
    pub scale_bits: u16,
    pub payload: Payload,
}

impl QuantizedRecord {
    pub fn from_compressed(shape: Vec<usize>, layer: &CompressedLayer) -> Result<Self> {
        let q = &layer.result.quantized;
        if matrix_dims(&shape)? != (q.rows, q.cols) {
            return Err(Error::shape(format!(
                "shape {shape:?} does not unfold to {}x{}",
                q.rows, q.cols
            )));
        }
        Ok(Self {
            shape,
            rows: q.rows,
            cols: q.cols,
            grid_size: q.grid.size(),
            scan_order: q.scan_order,
            model: layer.result.model.clone(),
            scale_bits: q.grid.scale_bits(),
            payload: layer.payload.clone(),
        })
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::from_scale_bits(self.grid_size, self.scale_bits)
    }

    /// Entropy-decodes the payload back into grid indices.
    pub fn decode(&self) -> Result<QuantizedLayer> {
        let grid = self.grid()?;
        let symbols = range_coder::decode(&self.payload, self.model.build()?, self.grid_size)?;
        QuantizedLayer::from_scan_symbols(self.rows, self.cols, &symbols, grid, self.scan_order)
    }

    pub fn params(&self) -> usize {
        self.rows * self.cols
    }

    fn header_len(&self) -> usize {
        let counts = self.model.static_counts.as_ref().map_or(0, |c| 2 * c.len());
        1 + 8 * self.shape.len() + 4 + 4 + 2 + 1 + 1 + 2 + counts + 8 + 4
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordBody {
    Raw(Tensor),
    Quantized(QuantizedRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub name: String,
    pub body: RecordBody,
}

impl LayerRecord {
    /// Bytes this record occupies in the file.
    pub fn encoded_len(&self) -> usize {
        let common = 2 + self.name.len() + 1;
        common
            + match &self.body {
                RecordBody::Raw(t) => 2 + 8 * t.rank() + t.data_bytes(),
                RecordBody::Quantized(q) => q.header_len() + q.payload.bytes.len(),
            }
    }

    /// The stored tensor, decoding and dequantizing if needed.
    pub fn reconstruct(&self) -> Result<Tensor> {
        match &self.body {
            RecordBody::Raw(t) => Ok(t.clone()),
            RecordBody::Quantized(q) => {
                let layer = q.decode().map_err(|e| match e {
                    Error::Decode { message, .. } => Error::decode(&self.name, message),
                    other => Error::decode(&self.name, other.to_string()),
                })?;
                Tensor::f32(q.shape.clone(), layer.dequantize().to_f32())
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompressedModel {
    pub layers: Vec<LayerRecord>,
}

/// Sizes behind the bits-per-weight figure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeReport {
    pub quantized_bytes: usize,
    pub quantized_params: usize,
    pub raw_bytes: usize,
    pub file_bytes: usize,
}

impl SizeReport {
    /// 8 · (quantized record bytes) / (quantized parameters).
    pub fn bits_per_weight(&self) -> f64 {
        if self.quantized_params == 0 {
            return 0.0;
        }
        8.0 * self.quantized_bytes as f64 / self.quantized_params as f64
    }
}

impl CompressedModel {
    pub fn size_report(&self) -> SizeReport {
        let mut report = SizeReport {
            quantized_bytes: 0,
            quantized_params: 0,
            raw_bytes: 0,
            file_bytes: 4 + 2 + 4,
        };
        for layer in &self.layers {
            let len = layer.encoded_len();
            report.file_bytes += len;
            match &layer.body {
                RecordBody::Quantized(q) => {
                    report.quantized_bytes += len;
                    report.quantized_params += q.params();
                }
                RecordBody::Raw(_) => report.raw_bytes += len,
            }
        }
        report
    }

    pub fn bits_per_weight(&self) -> f64 {
        self.size_report().bits_per_weight()
    }

    pub fn get(&self, name: &str) -> Option<&LayerRecord> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(MODEL_MAGIC);
        w.u16(MODEL_VERSIONS[0]);
        w.u32(len_u32(self.layers.len(), "layer count")?);
        for layer in &self.layers {
            w.name(&layer.name)?;
            match &layer.body {
                RecordBody::Raw(t) => {
                    w.u8(0);
                    w.tensor(t)?;
                }
                RecordBody::Quantized(q) => {
                    w.u8(1);
                    w.quantized(q)?;
                }
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MODEL_MAGIC)?;
        r.version(MODEL_VERSIONS)?;
        let count = r.u32()?;
        let mut layers = Vec::new();
        for _ in 0..count {
            let name = r.name()?;
            let at = r.pos;
            let body = match r.u8()? {
                0 => RecordBody::Raw(r.tensor()?),
                1 => RecordBody::Quantized(r.quantized()?),
                other => return Err(Error::parse(at, format!("unknown record kind {other}"))),
            };
            layers.push(LayerRecord { name, body });
        }
        r.finish()?;
        Ok(Self { layers })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Reshapes a `[out, in, kh, kw]` kernel into the `out × (in·kh·kw)` matrix
/// that multiplies im2col patch columns, and checks the patch matrix has one
/// row per kernel tap.
pub fn unfold_convolution(kernel: &Tensor, patches: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    if kernel.rank() != 4 {
        return Err(Error::shape(format!(
            "convolution kernel must be [out, in, kh, kw], got {:?}",
            kernel.shape
        )));
    }
    let weights = kernel.to_matrix()?;
    if patches.rows() != weights.cols() {
        return Err(Error::shape(format!(
            "patch matrix has {} rows, kernel {:?} needs in*kh*kw = {}",
            patches.rows(),
            kernel.shape,
            weights.cols()
        )));
    }
    Ok((weights, patches.clone()))
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("{what} {n} does not fit in u32")))
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    fn name(&mut self, name: &str) -> Result<()> {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidArgument(format!("name of {} bytes is too long", name.len())))?;
        self.u16(len);
        self.bytes(name.as_bytes());
        Ok(())
    }

    fn shape(&mut self, shape: &[usize]) {
        self.u8(shape.len() as u8);
        for &d in shape {
            self.u64(d as u64);
        }
    }

    fn tensor(&mut self, t: &Tensor) -> Result<()> {
        self.u8(t.data.dtype().code());
        self.shape(&t.shape);
        self.buf.reserve(t.data_bytes());
        match &t.data {
            TensorData::F32(v) => v.iter().for_each(|x| self.bytes(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| self.bytes(&x.to_le_bytes())),
        }
        Ok(())
    }

    fn quantized(&mut self, q: &QuantizedRecord) -> Result<()> {
        self.shape(&q.shape);
        self.u32(len_u32(q.rows, "row count")?);
        self.u32(len_u32(q.cols, "column count")?);
        let k = u16::try_from(q.grid_size)
            .map_err(|_| Error::InvalidArgument(format!("grid size {} exceeds u16", q.grid_size)))?;
        self.u16(k);
        self.u8(q.scan_order.code());
        self.u8(q.model.kind.code());
        self.u16(q.scale_bits);
        match (q.model.kind, &q.model.static_counts) {
            (ModelKind::StaticHistogram, Some(counts)) if counts.len() == q.grid_size => {
                counts.iter().for_each(|&c| self.u16(c));
            }
            (ModelKind::StaticHistogram, _) => {
                return Err(Error::InvalidArgument(
                    "static model record needs one count per grid level".into(),
                ))
            }
            _ => {}
        }
        self.u64(q.payload.symbol_count);
        self.u32(len_u32(q.payload.bytes.len(), "payload length")?);
        self.bytes(&q.payload.bytes);
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::parse(
                self.pos,
                format!(
                    "truncated: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            )),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
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

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let found = self.take(4)?;
        if found != magic {
            return Err(Error::parse(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(found),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        Ok(())
    }

    fn version(&mut self, supported: &[u16]) -> Result<()> {
        let found = self.u16()?;
        if !supported.contains(&found) {
            return Err(Error::Version {
                found,
                supported: supported.to_vec(),
            });
        }
        Ok(())
    }

    fn name(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let at = self.pos;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::parse(at, "name is not valid UTF-8"))
    }

    fn shape(&mut self) -> Result<Vec<usize>> {
        let at = self.pos;
        let rank = self.u8()? as usize;
        if rank > MAX_RANK {
            return Err(Error::parse(at, format!("rank {rank} exceeds {MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let at = self.pos;
            let d = self.u64()?;
            shape.push(usize::try_from(d).map_err(|_| Error::parse(at, "dimension overflows"))?);
        }
        Ok(shape)
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let at = self.pos;
        let code = self.u8()?;
        let dtype = DType::from_code(code).ok_or_else(|| Error::parse(at, format!("unknown dtype {code}")))?;
        let shape_at = self.pos;
        let shape = self.shape()?;
        let count = element_count(&shape).map_err(|e| Error::parse(shape_at, e.to_string()))?;
        let nbytes = count
            .checked_mul(dtype.width())
            .ok_or_else(|| Error::parse(shape_at, "tensor size overflows"))?;
        let raw = self.take(nbytes)?;
        let data = match dtype {
            DType::F32 => TensorData::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(Tensor { shape, data })
    }

    fn quantized(&mut self) -> Result<QuantizedRecord> {
        let at = self.pos;
        let shape = self.shape()?;
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        if matrix_dims(&shape).ok() != Some((rows, cols)) || rows == 0 || cols == 0 {
            return Err(Error::parse(
                at,
                format!("shape {shape:?} inconsistent with {rows}x{cols}"),
            ));
        }
        let k_at = self.pos;
        let grid_size = self.u16()? as usize;
        if grid_size < 2 {
            return Err(Error::parse(k_at, format!("grid size {grid_size} < 2")));
        }
        let s_at = self.pos;
        let scan_order = ScanOrder::from_code(self.u8()?)
            .ok_or_else(|| Error::parse(s_at, "unknown scan order"))?;
        let m_at = self.pos;
        let kind = ModelKind::from_code(self.u8()?)
            .ok_or_else(|| Error::parse(m_at, "unknown model kind"))?;
        let scale_at = self.pos;
        let scale_bits = self.u16()?;
        let step = half::f16::from_bits(scale_bits).to_f64();
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::parse(scale_at, format!("invalid grid step {step}")));
        }
        let static_counts = if kind == ModelKind::StaticHistogram {
            let mut counts = Vec::with_capacity(grid_size);
            for _ in 0..grid_size {
                counts.push(self.u16()?);
            }
            Some(counts)
        } else {
            None
        };
        let c_at = self.pos;
        let symbol_count = self.u64()?;
        if symbol_count != (rows * cols) as u64 {
            return Err(Error::parse(
                c_at,
                format!("symbol count {symbol_count} != {rows}*{cols}"),
            ));
        }
        let len = self.u32()? as usize;
        let bytes = self.take(len)?.to_vec();
        Ok(QuantizedRecord {
            shape,
            rows,
            cols,
            grid_size,
            scan_order,
            model: ModelSpec {
                kind,
                k: grid_size,
                static_counts,
            },
            scale_bits,
            payload: Payload {
                bytes,
                symbol_count,
            },
        })
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::parse(
                self.pos,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}
