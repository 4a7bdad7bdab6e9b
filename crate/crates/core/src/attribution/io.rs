//! Binary and CSV formats for attribution batches, sample metadata, model
//! checkpoints and image datasets. All integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::data::LabeledDataset;
use super::map::AttributionMap;
use super::network::{Conv2d, Dense, Layer, ToyNetwork};
use super::tensor::{Shape, Tensor};
use crate::{Error, Result};

pub const ATR_MAGIC: &[u8; 4] = b"ATR1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPNN";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const DATASET_MAGIC: &[u8; 4] = b"SDS1";

pub(crate) struct LeReader<R> {
    inner: R,
}

impl<R: Read> LeReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self { inner }
    }

    pub(crate) fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let mut m = [0u8; 4];
        self.inner.read_exact(&mut m)?;
        if &m != expect {
            return Err(Error::Format(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(expect),
                String::from_utf8_lossy(&m)
            )));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.inner.read_exact(&mut b)?;
        Ok(b[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut buf = vec![0u8; n * 8];
        self.inner.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(()),
            _ => Err(Error::Format("trailing bytes".into())),
        }
    }
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} exceeds u32")))
}

/// Encodes maps as an `ATR1` batch: magic, `u32 n, h, w`, then `n·h·w`
/// 32-bit floats.
pub fn encode_atr1(maps: &[AttributionMap]) -> Result<Vec<u8>> {
    let (h, w) = maps.first().map(|m| m.dims()).unwrap_or((0, 0));
    if maps.iter().any(|m| m.dims() != (h, w)) {
        return Err(Error::Shape("attribution maps differ in size".into()));
    }
    let mut out = Vec::with_capacity(16 + maps.len() * h * w * 4);
    out.extend_from_slice(ATR_MAGIC);
    out.extend_from_slice(&len_u32(maps.len(), "map count")?.to_le_bytes());
    out.extend_from_slice(&len_u32(h, "height")?.to_le_bytes());
    out.extend_from_slice(&len_u32(w, "width")?.to_le_bytes());
    for m in maps {
        for v in &m.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes an `ATR1` batch into `(h, w, maps)` where each map is row-major.
pub fn decode_atr1(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let mut r = LeReader::new(bytes);
    r.magic(ATR_MAGIC)?;
    let n = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    if bytes.len() != 16 + n * h * w * 4 {
        return Err(Error::Format(format!(
            "ATR1 header announces {n} maps of {h}x{w} but payload is {} bytes",
            bytes.len() - 16
        )));
    }
    let mut maps = Vec::with_capacity(n);
    for _ in 0..n {
        maps.push((0..h * w).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?);
    }
    Ok((h, w, maps))
}

/// One row of the sample metadata CSV.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleMeta {
    pub sample_id: u64,
    pub class_id: usize,
    pub predicted_class: usize,
    pub true_label_rank: usize,
}

pub const META_HEADER: [&str; 4] = ["sample_id", "class_id", "predicted_class", "true_label_rank"];

pub fn write_meta_csv(path: &Path, rows: &[SampleMeta]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(META_HEADER)?;
    for r in rows {
        w.write_record([
            r.sample_id.to_string(),
            r.class_id.to_string(),
            r.predicted_class.to_string(),
            r.true_label_rank.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_meta_csv(path: &Path) -> Result<Vec<SampleMeta>> {
    let mut rd = csv::Reader::from_path(path)?;
    if rd.headers()?.iter().ne(META_HEADER) {
        return Err(Error::Format(format!("{} has an unexpected header", path.display())));
    }
    let parse = |s: &str| -> Result<u64> {
        s.trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad integer {s:?} in metadata")))
    };
    rd.records()
        .map(|rec| {
            let rec = rec?;
            if rec.len() != 4 {
                return Err(Error::Format("metadata row needs 4 fields".into()));
            }
            Ok(SampleMeta {
                sample_id: parse(&rec[0])?,
                class_id: parse(&rec[1])? as usize,
                predicted_class: parse(&rec[2])? as usize,
                true_label_rank: parse(&rec[3])? as usize,
            })
        })
        .collect()
}

/// Serializes a network into the `SPNN` checkpoint format:
///
/// ```text
/// "SPNN" u32 version=1
/// u32 channels, height, width, num_classes, layer_count
/// per layer: u8 tag, then
///   0 dense   u32 inputs, u32 outputs, f64 weights[out*in], f64 bias[out]
///   1 conv    u32 in_ch, u32 out_ch, u32 kernel, f64 weights, f64 bias[out_ch]
///   2 relu
///   3 maxpool u32 size
///   4 flatten
/// ```
pub fn encode_checkpoint(net: &ToyNetwork) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let s = net.input_shape();
    for v in [s.c, s.h, s.w, net.num_classes(), net.layers().len()] {
        out.extend_from_slice(&len_u32(v, "checkpoint field")?.to_le_bytes());
    }
    for layer in net.layers() {
        match layer {
            Layer::Dense(d) => {
                out.push(0);
                out.extend_from_slice(&len_u32(d.inputs, "inputs")?.to_le_bytes());
                out.extend_from_slice(&len_u32(d.outputs, "outputs")?.to_le_bytes());
                put_f64s(&mut out, &d.weights);
                put_f64s(&mut out, &d.bias);
            }
            Layer::Conv(c) => {
                out.push(1);
                for v in [c.in_channels, c.out_channels, c.kernel] {
                    out.extend_from_slice(&len_u32(v, "conv field")?.to_le_bytes());
                }
                put_f64s(&mut out, &c.weights);
                put_f64s(&mut out, &c.bias);
            }
            Layer::Relu => out.push(2),
            Layer::MaxPool { size } => {
                out.push(3);
                out.extend_from_slice(&len_u32(*size, "pool size")?.to_le_bytes());
            }
            Layer::Flatten => out.push(4),
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ToyNetwork> {
    let mut r = LeReader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let c = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        layers.push(match r.u8()? {
            0 => {
                let inputs = r.u32()? as usize;
                let outputs = r.u32()? as usize;
                Layer::Dense(Dense {
                    inputs,
                    outputs,
                    weights: r.f64s(inputs * outputs)?,
                    bias: r.f64s(outputs)?,
                })
            }
            1 => {
                let in_channels = r.u32()? as usize;
                let out_channels = r.u32()? as usize;
                let kernel = r.u32()? as usize;
                Layer::Conv(Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    weights: r.f64s(out_channels * in_channels * kernel * kernel)?,
                    bias: r.f64s(out_channels)?,
                })
            }
            2 => Layer::Relu,
            3 => Layer::MaxPool {
                size: r.u32()? as usize,
            },
            4 => Layer::Flatten,
            t => return Err(Error::Format(format!("unknown layer tag {t}"))),
        });
    }
    r.expect_eof()?;
    ToyNetwork::new(layers, Shape::new(c, h, w), num_classes)
}

/// Serializes a dataset (plus optional per-sample poison flags) as `SDS1`:
///
/// ```text
/// "SDS1" u32 n, u32 channels, u32 height, u32 width, u32 num_classes
/// per sample: u64 sample_id, u32 label, u8 poisoned, f64 pixels[c*h*w]
/// ```
pub fn encode_dataset(data: &LabeledDataset, poisoned: Option<&[bool]>) -> Result<Vec<u8>> {
    let shape = data.image_shape().unwrap_or(Shape::new(0, 0, 0));
    if let Some(p) = poisoned {
        if p.len() != data.len() {
            return Err(Error::Shape("poison flags do not match the dataset".into()));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    for v in [data.len(), shape.c, shape.h, shape.w, data.num_classes] {
        out.extend_from_slice(&len_u32(v, "dataset field")?.to_le_bytes());
    }
    for i in 0..data.len() {
        out.extend_from_slice(&data.sample_ids[i].to_le_bytes());
        out.extend_from_slice(&len_u32(data.labels[i], "label")?.to_le_bytes());
        out.push(poisoned.map(|p| p[i] as u8).unwrap_or(0));
        put_f64s(&mut out, data.images[i].data());
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<(LabeledDataset, Vec<bool>)> {
    let mut r = LeReader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    let n = r.u32()? as usize;
    let shape = Shape::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let num_classes = r.u32()? as usize;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    for _ in 0..n {
        ids.push(r.u64()?);
        labels.push(r.u32()? as usize);
        flags.push(r.u8()? != 0);
        images.push(Tensor::from_vec(shape, r.f64s(shape.len())?)?);
    }
    r.expect_eof()?;
    Ok((LabeledDataset::with_ids(images, labels, ids, num_classes)?, flags))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}
