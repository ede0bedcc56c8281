//! `DNET` checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DNET"  u32 version (=1)  u32 payload (0 = network, 1 = autoencoder stage)
//! u32 stage index (0 for networks)
//! u32 input rank, then rank × u32 dims
//! u32 layer count, then per layer:
//!     u8 kind tag (0 conv, 1 maxpool, 2 relu, 3 fc, 4 dropout, 5 softmax)
//!     conv:    u32 kernel, u32 filters, u32 stride, u8 padding (0 valid, 1 same)
//!     maxpool: u32 window, u32 stride
//!     fc:      u32 outputs
//!     dropout: f64 rate
//!     u32 parameter count, then per parameter:
//!         u32 rank, rank × u32 dims, product(dims) × f64
//! ```
//!
//! Parameter payloads are raw IEEE-754 bits, so a round trip is bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerKind, Op};
use crate::nn::network::Network;
use crate::rng::Prng;
use crate::tensor::Padding;

const MAGIC: &[u8; 4] = b"DNET";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    Network,
    Stage(usize),
}

/// Encoder layers of one pretrained autoencoder stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCheckpoint {
    pub stage: usize,
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

fn kind_tag(kind: LayerKind) -> u8 {
    match kind {
        LayerKind::Conv => 0,
        LayerKind::MaxPool => 1,
        LayerKind::Relu => 2,
        LayerKind::Fc => 3,
        LayerKind::Dropout => 4,
        LayerKind::Softmax => 5,
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

pub fn encode(payload: Payload, input_shape: &[usize], layers: &[Layer]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    let (tag, stage) = match payload {
        Payload::Network => (0, 0),
        Payload::Stage(s) => (1, s),
    };
    put_u32(&mut out, tag);
    put_u32(&mut out, stage);
    put_u32(&mut out, input_shape.len());
    for &d in input_shape {
        put_u32(&mut out, d);
    }
    put_u32(&mut out, layers.len());
    for layer in layers {
        out.push(kind_tag(layer.kind()));
        match &layer.op {
            Op::Conv(c) => {
                put_u32(&mut out, c.geom.kernel);
                put_u32(&mut out, c.geom.filters);
                put_u32(&mut out, c.geom.stride);
                out.push(match c.padding {
                    Padding::Valid => 0,
                    Padding::Same => 1,
                });
            }
            Op::MaxPool(p) => {
                put_u32(&mut out, p.geom.window);
                put_u32(&mut out, p.geom.stride);
            }
            Op::Fc(f) => put_u32(&mut out, f.outputs),
            Op::Dropout { rate } => out.extend_from_slice(&rate.to_le_bytes()),
            Op::Relu | Op::Softmax => {}
        }
        let params = layer.params();
        put_u32(&mut out, params.len());
        for p in params {
            put_u32(&mut out, p.value.shape().len());
            for &d in p.value.shape() {
                put_u32(&mut out, d);
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() < n {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Payload, Vec<usize>, Vec<Layer>)> {
    let mut r = Reader { bytes };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, expected DNET".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let payload = match (r.u32()?, r.u32()?) {
        (0, _) => Payload::Network,
        (1, s) => Payload::Stage(s),
        (t, _) => return Err(Error::Format(format!("unknown payload tag {t}"))),
    };
    let rank = r.u32()?;
    let input_shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let count = r.u32()?;
    let mut shape = input_shape.clone();
    let mut layers = Vec::with_capacity(count);
    // Parameters are overwritten below; init draws are irrelevant.
    let mut rng = Prng::new(0);
    for index in 0..count {
        let tag = r.u8()?;
        let mut layer = match tag {
            0 => {
                let (k, f, s) = (r.u32()?, r.u32()?, r.u32()?);
                let padding = match r.u8()? {
                    0 => Padding::Valid,
                    1 => Padding::Same,
                    p => return Err(Error::Format(format!("unknown padding tag {p}"))),
                };
                Layer::conv(&shape, f, k, s, padding, &mut rng)
            }
            1 => {
                let (w, s) = (r.u32()?, r.u32()?);
                Layer::maxpool(&shape, w, s)
            }
            2 => Ok(Layer::relu(&shape)),
            3 => {
                let o = r.u32()?;
                Layer::fc(&shape, o, &mut rng)
            }
            4 => {
                let rate = r.f64()?;
                Layer::dropout(&shape, rate)
            }
            5 => Layer::softmax(&shape),
            t => return Err(Error::Format(format!("unknown layer tag {t}"))),
        }
        .map_err(|e| Error::Format(format!("layer {index}: {e}")))?;
        let n = r.u32()?;
        let mut params = layer.params_mut();
        if n != params.len() {
            return Err(Error::Format(format!(
                "layer {index}: {n} parameters stored, {} expected",
                params.len()
            )));
        }
        for p in params.iter_mut() {
            let rank = r.u32()?;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            if dims != p.value.shape() {
                return Err(Error::Format(format!(
                    "layer {index}: parameter shape {dims:?}, expected {:?}",
                    p.value.shape()
                )));
            }
            for v in p.value.data_mut() {
                *v = r.f64()?;
            }
        }
        drop(params);
        shape = layer.out_shape.clone();
        layers.push(layer);
    }
    if !r.bytes.is_empty() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok((payload, input_shape, layers))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

impl Network {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(Payload::Network, self.input_shape(), self.layers())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
        match decode(bytes)? {
            (Payload::Network, input, layers) => Network::from_layers(input, layers),
            (Payload::Stage(s), ..) => Err(Error::Format(format!(
                "checkpoint holds autoencoder stage {s}, not a network"
            ))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Network> {
        Network::from_bytes(&read_file(path)?)
    }
}

impl StageCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(Payload::Stage(self.stage), &self.input_shape, &self.layers)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match decode(bytes)? {
            (Payload::Stage(stage), input_shape, layers) => Ok(Self {
                stage,
                input_shape,
                layers,
            }),
            (Payload::Network, ..) => Err(Error::Format("checkpoint holds a full network".into())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::NetworkBuilder;

    fn net() -> Network {
        NetworkBuilder::new(&[8, 8, 3], 4)
            .conv(4, 3, 1, Padding::Same)
            .relu()
            .maxpool(2, 2)
            .dropout(0.25)
            .fc(6)
            .relu()
            .fc(3)
            .softmax()
            .build()
            .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = net();
        let bytes = a.to_bytes();
        let b = Network::from_bytes(&bytes).unwrap();
        assert_eq!(a.layers(), b.layers());
        assert_eq!(b.to_bytes(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = net().to_bytes();
        assert_eq!(&bytes[..4], b"DNET");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 0);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = net().to_bytes();
        assert!(Network::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(Network::from_bytes(&bytes).is_err());
    }

    #[test]
    fn stage_payload_is_distinct() {
        let n = net();
        let stage = StageCheckpoint {
            stage: 2,
            input_shape: vec![8, 8, 3],
            layers: n.layers()[..2].to_vec(),
        };
        let bytes = stage.to_bytes();
        assert_eq!(StageCheckpoint::from_bytes(&bytes).unwrap(), stage);
        assert!(Network::from_bytes(&bytes).is_err());
        assert!(StageCheckpoint::from_bytes(&n.to_bytes()).is_err());
    }
}
