//! Dense f32 tensors, labeled activation sets, and the little-endian
//! `PTSR` / `PLBL` file formats.
//!
//! Tensor file layout:
//!
//! ```text
//! "PTSR" | version u32 = 1 | dtype u32 = 1 (f32) | ndim u32 | ndim x u64 dims | payload
//! ```
//!
//! Label file layout:
//!
//! ```text
//! "PLBL" | version u32 = 1 | count u64 | count x u32 labels
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"PTSR";
pub const LABEL_MAGIC: [u8; 4] = *b"PLBL";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;

/// Row-major dense tensor of finite f32 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::Shape("tensor needs at least one dimension".into()));
    }
    if let Some(d) = dims.iter().position(|&d| d == 0) {
        return Err(Error::Shape(format!("dimension {d} is zero in {dims:?}")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Shape(format!("element count overflows for {dims:?}")))
}

fn check_finite(data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

impl Tensor {
    /// Builds a tensor, rejecting shape mismatches and non-finite values.
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = check_dims(&dims)?;
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Tensor { dims, data })
    }

    /// Shape-checked constructor for engine outputs; finiteness is not checked.
    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor { dims, data }
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n = check_dims(&dims)?;
        Ok(Tensor {
            dims,
            data: vec![0.0; n],
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Serializes to the `PTSR` byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(&TENSOR_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&DTYPE_F32.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(TENSOR_MAGIC)?;
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dtype = r.u32()?;
        if dtype != DTYPE_F32 {
            return Err(Error::UnsupportedDtype(dtype));
        }
        let ndim = r.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim.min(64));
        for _ in 0..ndim {
            let d = r.u64()?;
            dims.push(usize::try_from(d).map_err(|_| Error::Shape(format!("dimension {d} too large")))?);
        }
        let n = check_dims(&dims)?;
        let payload = r.take_exact(n.checked_mul(4).ok_or_else(|| Error::Shape("payload too large".into()))?)?;
        r.finish()?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        check_finite(&data)?;
        Ok(Tensor { dims, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Tensor::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take_exact(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(Error::Truncated {
                expected: (self.pos + n) as u64,
                found: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let s = self.take_exact(4)?;
        let found = [s[0], s[1], s[2], s[3]];
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let s = self.take_exact(4)?;
        Ok(u32::from_le_bytes(s.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        let s = self.take_exact(8)?;
        Ok(u64::from_le_bytes(s.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        let extra = self.bytes.len() - self.pos;
        if extra != 0 {
            return Err(Error::TrailingData(extra as u64));
        }
        Ok(())
    }
}

/// Class labels stored in a `PLBL` file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelFile {
    pub labels: Vec<u32>,
}

impl LabelFile {
    pub fn new(labels: Vec<u32>) -> Self {
        LabelFile { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `max(label) + 1`, or 0 when empty.
    pub fn inferred_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m as usize + 1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.labels.len());
        out.extend_from_slice(&LABEL_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.labels.len() as u64).to_le_bytes());
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(LABEL_MAGIC)?;
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let count = r.u64()?;
        let count = usize::try_from(count).map_err(|_| Error::Labels(format!("count {count} too large")))?;
        let payload = r.take_exact(count.checked_mul(4).ok_or_else(|| Error::Labels("count too large".into()))?)?;
        r.finish()?;
        let labels = payload
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(LabelFile { labels })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        LabelFile::from_bytes(&bytes)
    }
}

/// The feature maps of one channel over N labeled samples.
///
/// Maps are stored contiguously; map `i` is `data[i*W*H .. (i+1)*W*H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    width: usize,
    height: usize,
    data: Vec<f32>,
    labels: Vec<u32>,
    num_classes: usize,
}

impl ActivationSet {
    pub fn new(
        width: usize,
        height: usize,
        data: Vec<f32>,
        labels: Vec<u32>,
        num_classes: usize,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("map size {width}x{height} is empty")));
        }
        if num_classes < 2 {
            return Err(Error::Labels(format!("need at least 2 classes, got {num_classes}")));
        }
        if labels.len() < 2 {
            return Err(Error::Labels(format!("need at least 2 samples, got {}", labels.len())));
        }
        if data.len() != labels.len() * width * height {
            return Err(Error::Shape(format!(
                "{} samples of {width}x{height} need {} values, got {}",
                labels.len(),
                labels.len() * width * height,
                data.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::Labels(format!("label {bad} outside [0, {num_classes})")));
        }
        check_finite(&data)?;
        Ok(ActivationSet {
            width,
            height,
            data,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of activations per map (W*H).
    pub fn map_len(&self) -> usize {
        self.width * self.height
    }

    pub fn map(&self, i: usize) -> &[f32] {
        let m = self.map_len();
        &self.data[i * m..(i + 1) * m]
    }

    pub fn maps(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.map_len())
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Applies `f` to every activation, keeping labels.
    pub fn map_values(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        ActivationSet::new(
            self.width,
            self.height,
            self.data.iter().map(|&v| f(v)).collect(),
            self.labels.clone(),
            self.num_classes,
        )
    }
}

/// Splits `(N, C, W, H)` (or `(N, C)`) activations into `(N, W, H)` extents.
fn layer_geometry(t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *t.dims() {
        [n, c, w, h] => Ok((n, c, w, h)),
        [n, c] => Ok((n, c, 1, 1)),
        ref d => Err(Error::Shape(format!(
            "activation dump must be [N, C, W, H] or [N, C], got {d:?}"
        ))),
    }
}

/// Extracts channel `channel` of a row-major `[N, C, W, H]` activation dump.
pub fn slice_channel(
    activations: &Tensor,
    channel: usize,
    labels: &LabelFile,
    num_classes: usize,
) -> Result<ActivationSet> {
    let (n, c, w, h) = layer_geometry(activations)?;
    if channel >= c {
        return Err(Error::Shape(format!("channel {channel} out of range for {c} channels")));
    }
    if labels.len() != n {
        return Err(Error::Labels(format!(
            "label count {} does not match {n} samples",
            labels.len()
        )));
    }
    let m = w * h;
    let src = activations.data();
    let mut data = Vec::with_capacity(n * m);
    for i in 0..n {
        let start = (i * c + channel) * m;
        data.extend_from_slice(&src[start..start + m]);
    }
    ActivationSet::new(w, h, data, labels.labels.clone(), num_classes)
}

/// Number of channels in an activation dump.
pub fn channel_count(activations: &Tensor) -> Result<usize> {
    layer_geometry(activations).map(|(_, c, _, _)| c)
}

/// Inverse of [`slice_channel`] over all channels: re-stacks per-channel sets
/// into one `[N, C, W, H]` tensor.
pub fn stack_channels(channels: &[ActivationSet]) -> Result<Tensor> {
    let first = channels
        .first()
        .ok_or_else(|| Error::Shape("no channels to stack".into()))?;
    let (n, w, h) = (first.len(), first.width(), first.height());
    if channels
        .iter()
        .any(|s| s.len() != n || s.width() != w || s.height() != h)
    {
        return Err(Error::Shape("channels disagree on sample count or map size".into()));
    }
    let c = channels.len();
    let mut data = Vec::with_capacity(n * c * w * h);
    for i in 0..n {
        for set in channels {
            data.extend_from_slice(set.map(i));
        }
    }
    Tensor::new(vec![n, c, w, h], data)
}
