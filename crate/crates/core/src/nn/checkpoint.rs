//! Model checkpoint file: magic `PVWT`, version, a layer-topology block,
//! then parameter tensors as little-endian f32 in declaration order with
//! per-parameter lock flags. All integers are little-endian u32 unless
//! noted. Corrupt or truncated files surface as format errors carrying the
//! byte offset, never panics.

use std::fs;
use std::path::Path;

use crate::util::write_atomic;

use super::{Layer, LayerKind, Network, NnError, ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"PVWT";
const VERSION: u32 = 1;

const KIND_CONV: u8 = 0;
const KIND_DECONV: u8 = 1;
const KIND_MAXPOOL: u8 = 2;
const KIND_UPSAMPLE: u8 = 3;
const KIND_DENSE: u8 = 4;
const KIND_RELU: u8 = 5;
const KIND_SIGMOID: u8 = 6;
const KIND_DROPOUT: u8 = 7;

// Guards against allocating absurd buffers from corrupt headers.
const MAX_DIMS: u32 = 8;
const MAX_LAYERS: u32 = 4096;
const MAX_ELEMENTS: u64 = 1 << 31;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn shape(&mut self, shape: &[usize]) {
        self.u32(shape.len() as u32);
        for &d in shape {
            self.u32(d as u32);
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    fn err(&self, msg: impl Into<String>) -> NnError {
        NnError::Format {
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.data.len() {
            return Err(self.err(format!(
                "unexpected end of file (wanted {n} more bytes of {})",
                self.data.len()
            )));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Result<f32, NnError> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn shape(&mut self) -> Result<Vec<usize>, NnError> {
        let rank = self.u32()?;
        if rank > MAX_DIMS {
            return Err(self.err(format!("tensor rank {rank} out of range")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut volume: u64 = 1;
        for _ in 0..rank {
            let d = self.u32()?;
            volume = volume.saturating_mul(d as u64);
            if volume > MAX_ELEMENTS {
                return Err(self.err("tensor volume out of range"));
            }
            shape.push(d as usize);
        }
        Ok(shape)
    }
}

/// Serializes a network and its parameters. The write is atomic: a
/// temporary file in the target directory is renamed into place.
pub fn save_checkpoint(net: &Network, store: &ParamStore, path: &Path) -> Result<(), NnError> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.shape(net.input_shape());
    w.u32(net.layers().len() as u32);
    for layer in net.layers() {
        match &layer.kind {
            LayerKind::Conv2d { kernel, in_ch, out_ch } => {
                w.u8(KIND_CONV);
                w.u32(*kernel as u32);
                w.u32(*in_ch as u32);
                w.u32(*out_ch as u32);
            }
            LayerKind::Deconv2d { kernel, in_ch, out_ch } => {
                w.u8(KIND_DECONV);
                w.u32(*kernel as u32);
                w.u32(*in_ch as u32);
                w.u32(*out_ch as u32);
            }
            LayerKind::MaxPool2x2 => w.u8(KIND_MAXPOOL),
            LayerKind::Upsample2x2 => w.u8(KIND_UPSAMPLE),
            LayerKind::Dense { in_features, out_shape } => {
                w.u8(KIND_DENSE);
                w.u32(*in_features as u32);
                w.shape(out_shape);
            }
            LayerKind::Relu => w.u8(KIND_RELU),
            LayerKind::Sigmoid => w.u8(KIND_SIGMOID),
            LayerKind::Dropout { rate } => {
                w.u8(KIND_DROPOUT);
                w.f32(*rate);
            }
        }
    }
    let ids = net.param_ids();
    w.u32(ids.len() as u32);
    for id in ids {
        let param = store.get(id);
        w.shape(param.values.shape());
        for &v in param.values.data() {
            w.f32(v);
        }
        w.u8(param.locked as u8);
    }
    write_atomic(path, &w.buf).map_err(NnError::Io)
}

/// Loads a checkpoint back into a fresh store, revalidating the topology
/// (layer composition, parameter shapes) before accepting it.
pub fn load_checkpoint(path: &Path) -> Result<(Network, ParamStore), NnError> {
    let data = fs::read(path)?;
    let mut r = Reader::new(&data);
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(NnError::Format {
            offset: 0,
            msg: format!("bad magic {magic:?}, expected {MAGIC:?}"),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NnError::Format {
            offset: 4,
            msg: format!("unsupported version {version}, expected {VERSION}"),
        });
    }
    let input_shape = r.shape()?;
    let layer_count = r.u32()?;
    if layer_count > MAX_LAYERS {
        return Err(r.err(format!("layer count {layer_count} out of range")));
    }
    let mut kinds = Vec::with_capacity(layer_count as usize);
    for _ in 0..layer_count {
        let kind = match r.u8()? {
            KIND_CONV => LayerKind::Conv2d {
                kernel: r.u32()? as usize,
                in_ch: r.u32()? as usize,
                out_ch: r.u32()? as usize,
            },
            KIND_DECONV => LayerKind::Deconv2d {
                kernel: r.u32()? as usize,
                in_ch: r.u32()? as usize,
                out_ch: r.u32()? as usize,
            },
            KIND_MAXPOOL => LayerKind::MaxPool2x2,
            KIND_UPSAMPLE => LayerKind::Upsample2x2,
            KIND_DENSE => LayerKind::Dense {
                in_features: r.u32()? as usize,
                out_shape: r.shape()?,
            },
            KIND_RELU => LayerKind::Relu,
            KIND_SIGMOID => LayerKind::Sigmoid,
            KIND_DROPOUT => LayerKind::Dropout { rate: r.f32()? },
            other => return Err(r.err(format!("unknown layer kind tag {other}"))),
        };
        kinds.push(kind);
    }
    let param_count = r.u32()?;
    let mut store = ParamStore::new();
    let mut pool = Vec::with_capacity(param_count as usize);
    for _ in 0..param_count {
        let shape = r.shape()?;
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(r.f32()?);
        }
        let locked = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(r.err(format!("bad lock flag {other}"))),
        };
        let tensor = Tensor::from_vec(&shape, values)?;
        pool.push(store.push(tensor, locked));
    }
    if r.pos != data.len() {
        return Err(r.err("trailing bytes after checkpoint payload"));
    }

    // Reattach parameters to layers in declaration order.
    let mut next = 0usize;
    let mut layers = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let takes_params = matches!(
            kind,
            LayerKind::Conv2d { .. } | LayerKind::Deconv2d { .. } | LayerKind::Dense { .. }
        );
        if takes_params {
            if next + 2 > pool.len() {
                return Err(NnError::Format {
                    offset: data.len() as u64,
                    msg: "fewer parameter tensors than parameterized layers".into(),
                });
            }
            layers.push(Layer {
                kind,
                weights: Some(pool[next]),
                bias: Some(pool[next + 1]),
            });
            next += 2;
        } else {
            layers.push(Layer::stateless(kind));
        }
    }
    if next != pool.len() {
        return Err(NnError::Format {
            offset: data.len() as u64,
            msg: "more parameter tensors than parameterized layers".into(),
        });
    }
    let net = Network::new(layers, input_shape)?;
    validate_param_shapes(&net, &store)?;
    Ok((net, store))
}

fn expected_param_shapes(kind: &LayerKind) -> Option<(Vec<usize>, Vec<usize>)> {
    match kind {
        LayerKind::Conv2d { kernel, in_ch, out_ch }
        | LayerKind::Deconv2d { kernel, in_ch, out_ch } => Some((
            vec![*kernel, *kernel, *in_ch, *out_ch],
            vec![*out_ch],
        )),
        LayerKind::Dense { in_features, out_shape } => {
            let out: usize = out_shape.iter().product();
            Some((vec![*in_features, out], vec![out]))
        }
        _ => None,
    }
}

fn validate_param_shapes(net: &Network, store: &ParamStore) -> Result<(), NnError> {
    for (i, layer) in net.layers().iter().enumerate() {
        let Some((w_shape, b_shape)) = expected_param_shapes(&layer.kind) else {
            continue;
        };
        let w = store.get(layer.weights.unwrap()).values.shape();
        let b = store.get(layer.bias.unwrap()).values.shape();
        if w != w_shape || b != b_shape {
            return Err(NnError::Shape {
                layer: format!("layer {i} ({})", layer.kind.name()),
                msg: format!(
                    "checkpoint parameter shapes {w:?}/{b:?} do not match topology {w_shape:?}/{b_shape:?}"
                ),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamInit;
    use crate::util::rng_from;

    fn small_net() -> (Network, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = rng_from(3, &[3]);
        let w = store.alloc(&[3, 3, 1, 2], ParamInit::HeUniform { fan_in: 9 }, &mut rng);
        let b = store.alloc(&[2], ParamInit::Zero, &mut rng);
        let net = Network::new(
            vec![
                Layer {
                    kind: LayerKind::Conv2d { kernel: 3, in_ch: 1, out_ch: 2 },
                    weights: Some(w),
                    bias: Some(b),
                },
                Layer::stateless(LayerKind::Relu),
                Layer::stateless(LayerKind::Dropout { rate: 0.25 }),
            ],
            vec![4, 4, 1],
        )
        .unwrap();
        store.set_locked(net.param_ids()[0], true);
        (net, store)
    }

    #[test]
    fn round_trip_preserves_bits_and_locks() {
        let (net, store) = small_net();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pvwt");
        save_checkpoint(&net, &store, &path).unwrap();
        let first = fs::read(&path).unwrap();
        let (net2, store2) = load_checkpoint(&path).unwrap();
        assert_eq!(net.layers().len(), net2.layers().len());
        for (a, b) in net.param_ids().iter().zip(net2.param_ids()) {
            assert_eq!(store.get(*a).values, store2.get(b).values);
            assert_eq!(store.get(*a).locked, store2.get(b).locked);
        }
        save_checkpoint(&net2, &store2, &path).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
    }

    #[test]
    fn foreign_magic_is_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.pvwt");
        fs::write(&path, b"NOPE....").unwrap();
        match load_checkpoint(&path) {
            Err(NnError::Format { offset, msg }) => {
                assert_eq!(offset, 0);
                assert!(msg.contains("PVWT"), "message was {msg}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_is_a_format_error() {
        let (net, store) = small_net();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pvwt");
        save_checkpoint(&net, &store, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        for cut in [3, 9, 20, bytes.len() / 2, bytes.len() - 1] {
            fs::write(&path, &bytes[..cut]).unwrap();
            assert!(
                matches!(load_checkpoint(&path), Err(NnError::Format { .. })),
                "cut at {cut} did not fail as format error"
            );
        }
    }
}
