//! Weight files: `NBVN` magic, format version, model-kind tag, opaque
//! metadata, then each network's layer list with little-endian `f32`
//! parameter blocks, and a trailing CRC-32 of everything before it.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::network::{Activation, LayerSpec, Network};
use crate::NnError;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"NBVN";
pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub kind: String,
    pub metadata: Vec<u8>,
    pub networks: Vec<Network<f32>>,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_weights(file: &WeightFile) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&WEIGHTS_FORMAT_VERSION.to_le_bytes());
    put_u32(&mut buf, file.kind.len());
    buf.extend_from_slice(file.kind.as_bytes());
    put_u32(&mut buf, file.metadata.len());
    buf.extend_from_slice(&file.metadata);
    put_u32(&mut buf, file.networks.len());
    for net in &file.networks {
        put_u32(&mut buf, net.input_dim());
        put_u32(&mut buf, net.specs().len());
        for (i, spec) in net.specs().iter().enumerate() {
            match *spec {
                LayerSpec::Dense { input, output } => {
                    buf.push(0);
                    put_u32(&mut buf, input);
                    put_u32(&mut buf, output);
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    height,
                    width,
                } => {
                    buf.push(1);
                    for v in [in_channels, out_channels, kernel, stride, height, width] {
                        put_u32(&mut buf, v);
                    }
                }
                LayerSpec::MaxPool2d {
                    channels,
                    height,
                    width,
                    window,
                } => {
                    buf.push(2);
                    for v in [channels, height, width, window] {
                        put_u32(&mut buf, v);
                    }
                }
                LayerSpec::Dropout { rate } => {
                    buf.push(3);
                    buf.extend_from_slice(&rate.to_le_bytes());
                }
                LayerSpec::Activation(a) => {
                    buf.push(4);
                    buf.push(a.tag());
                }
            }
            let p = net.layer_params(i);
            put_u32(&mut buf, p.len());
            for v in p {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| NnError::Format(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<WeightFile, NnError> {
    if bytes.len() < 12 || &bytes[..4] != WEIGHTS_MAGIC {
        return Err(NnError::Format("not a weight file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != WEIGHTS_FORMAT_VERSION {
        return Err(NnError::Version {
            expected: WEIGHTS_FORMAT_VERSION,
            found: version,
        });
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(NnError::Format("checksum mismatch".into()));
    }
    let mut c = Cursor { buf: body, pos: 8 };
    let n = c.u32()?;
    let kind = String::from_utf8(c.take(n)?.to_vec()).map_err(|_| NnError::Format("model kind is not UTF-8".into()))?;
    let n = c.u32()?;
    let metadata = c.take(n)?.to_vec();
    let n_nets = c.u32()?;
    let mut networks = Vec::with_capacity(n_nets);
    for _ in 0..n_nets {
        let input = c.u32()?;
        let n_layers = c.u32()?;
        let mut specs = Vec::with_capacity(n_layers);
        let mut blocks = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let spec = match c.u8()? {
                0 => LayerSpec::Dense {
                    input: c.u32()?,
                    output: c.u32()?,
                },
                1 => LayerSpec::Conv2d {
                    in_channels: c.u32()?,
                    out_channels: c.u32()?,
                    kernel: c.u32()?,
                    stride: c.u32()?,
                    height: c.u32()?,
                    width: c.u32()?,
                },
                2 => LayerSpec::MaxPool2d {
                    channels: c.u32()?,
                    height: c.u32()?,
                    width: c.u32()?,
                    window: c.u32()?,
                },
                3 => LayerSpec::Dropout {
                    rate: f64::from_le_bytes(c.take(8)?.try_into().unwrap()),
                },
                4 => {
                    let t = c.u8()?;
                    LayerSpec::Activation(
                        Activation::from_tag(t)
                            .ok_or_else(|| NnError::Format(format!("unknown activation tag {t}")))?,
                    )
                }
                t => return Err(NnError::Format(format!("unknown layer tag {t}"))),
            };
            let np = c.u32()?;
            if np != spec.param_count() {
                return Err(NnError::Format(format!("layer {spec:?} stores {np} parameters")));
            }
            let block: Vec<f32> = c
                .take(np * 4)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            specs.push(spec);
            blocks.push(block);
        }
        let mut net = Network::<f32>::new(input, specs)?;
        for (i, b) in blocks.into_iter().enumerate() {
            net.layer_params_mut(i).copy_from_slice(&b);
        }
        networks.push(net);
    }
    if c.pos != body.len() {
        return Err(NnError::Format("trailing bytes before checksum".into()));
    }
    Ok(WeightFile {
        kind,
        metadata,
        networks,
    })
}

pub fn write_weights<W: Write>(mut out: W, file: &WeightFile) -> Result<(), NnError> {
    out.write_all(&encode_weights(file))?;
    Ok(())
}

pub fn read_weights<R: Read>(mut input: R) -> Result<WeightFile, NnError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode_weights(&bytes)
}

pub fn save_weights(path: impl AsRef<Path>, file: &WeightFile) -> Result<(), NnError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_weights(&mut w, file)?;
    w.flush()?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightFile, NnError> {
    read_weights(File::open(path)?)
}
