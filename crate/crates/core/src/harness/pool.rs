//! Binary memory-pool file.
//!
//! ```text
//! "IBMPOOL1"
//! u32 task_count, u32 layer_count
//! per layer:  u32 rows, u32 cols, u8 activation
//! backbone:   per layer rows*cols f64 weights
//! per task:   u64 task_id
//!             per layer: mask bits (row-major, LSB first, padded to a byte),
//!                        rows*cols f64 mu, rows*cols f64 log_sigma, f64 gamma
//!             u32 classes, classes*width f64 head weight, classes f64 head bias
//! u64 CRC-64/XZ of every preceding byte
//! ```
//! Integers are little-endian; floats are IEEE-754 binary64 bit patterns.

use std::collections::BTreeMap;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};

use crate::error::{IbmError, Result};
use crate::mask::{BinaryMask, MemoryPool, TaskArtifact};
use crate::network::{Head, LossScale, Network};
use crate::tensor::Matrix;
use crate::vib::{init_va_params, Activation, VaParams, VibLayer};

pub const POOL_MAGIC: &[u8; 8] = b"IBMPOOL1";
const MAGIC_PREFIX: &[u8; 7] = b"IBMPOOL";
const CHECKSUM: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

pub fn encode_pool(net: &Network, pool: &MemoryPool) -> Result<Vec<u8>> {
    let shapes = net.layer_shapes();
    let mut out = Vec::new();
    out.extend_from_slice(POOL_MAGIC);
    out.extend_from_slice(&(pool.len() as u32).to_le_bytes());
    out.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for layer in &net.layers {
        let (r, c) = layer.shape();
        out.extend_from_slice(&(r as u32).to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
        out.push(layer.activation.code());
    }
    for layer in &net.layers {
        put_f64s(&mut out, layer.weight.data());
    }
    let width = net.output_width();
    for artifact in &pool.artifacts {
        artifact.check_against(&shapes)?;
        artifact.head.weight.ensure_shape("pool head", (artifact.head.classes(), width))?;
        out.extend_from_slice(&(artifact.task_id as u64).to_le_bytes());
        for l in 0..shapes.len() {
            out.extend_from_slice(&pack_bits(artifact.masks.layers[l].data()));
            put_f64s(&mut out, artifact.va_params[l].mu.data());
            put_f64s(&mut out, artifact.va_params[l].log_sigma.data());
            put_f64s(&mut out, &[artifact.gammas[l]]);
        }
        out.extend_from_slice(&(artifact.head.classes() as u32).to_le_bytes());
        put_f64s(&mut out, artifact.head.weight.data());
        put_f64s(&mut out, &artifact.head.bias);
    }
    let sum = CHECKSUM.checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

/// Decodes a pool file into the frozen backbone and its artifacts.
///
/// The returned network carries the stored weights and every task head; its μ and
/// log σ are taken from the last artifact (they do not affect inference, which always
/// goes through an artifact's own snapshot).
pub fn decode_pool(bytes: &[u8]) -> Result<(Network, MemoryPool)> {
    if bytes.len() < POOL_MAGIC.len() {
        return Err(fmt_err(bytes.len(), "file shorter than the magic string"));
    }
    if &bytes[..8] != POOL_MAGIC {
        if &bytes[..7] == MAGIC_PREFIX {
            return Err(IbmError::PoolVersion {
                expected: String::from_utf8_lossy(POOL_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&bytes[..8]).into_owned(),
            });
        }
        return Err(fmt_err(0, "bad magic"));
    }
    if bytes.len() < POOL_MAGIC.len() + 8 {
        return Err(fmt_err(bytes.len(), "file too short for a checksum"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let computed = CHECKSUM.checksum(body);
    if stored != computed {
        return Err(IbmError::PoolChecksum { stored, computed });
    }

    let mut r = Reader { bytes: body, pos: 8 };
    let tasks = r.u32()? as usize;
    let layer_count = r.u32()? as usize;
    if layer_count == 0 {
        return Err(fmt_err(12, "pool has no layers"));
    }
    let mut shapes = Vec::with_capacity(layer_count);
    let mut activations = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let at = r.pos;
        let act = Activation::from_code(r.u8()?).ok_or_else(|| fmt_err(at, "unknown activation code"))?;
        shapes.push((rows, cols));
        activations.push(act);
    }
    let mut weights = Vec::with_capacity(layer_count);
    for &(rows, cols) in &shapes {
        weights.push(Matrix::new(rows, cols, r.f64s(rows * cols)?)?);
    }
    let width = shapes.last().expect("non-empty").0;

    let mut pool = MemoryPool::new();
    for _ in 0..tasks {
        let task_id = r.u64()? as usize;
        let mut masks = Vec::with_capacity(layer_count);
        let mut va_params = Vec::with_capacity(layer_count);
        let mut gammas = Vec::with_capacity(layer_count);
        for &(rows, cols) in &shapes {
            let n = rows * cols;
            let at = r.pos;
            let bits = unpack_bits(r.take(n.div_ceil(8))?, n).ok_or_else(|| fmt_err(at, "non-zero mask padding"))?;
            masks.push(Matrix::new(rows, cols, bits)?);
            va_params.push(VaParams {
                mu: Matrix::new(rows, cols, r.f64s(n)?)?,
                log_sigma: Matrix::new(rows, cols, r.f64s(n)?)?,
            });
            gammas.push(r.f64()?);
        }
        let classes = r.u32()? as usize;
        let head = Head {
            weight: Matrix::new(classes, width, r.f64s(classes * width)?)?,
            bias: r.f64s(classes)?,
        };
        if pool.get(task_id).is_some() {
            return Err(IbmError::DuplicateTask(task_id));
        }
        pool.artifacts.push(TaskArtifact {
            task_id,
            masks: BinaryMask { layers: masks },
            va_params,
            gammas,
            head,
        });
    }
    if r.pos != body.len() {
        return Err(fmt_err(r.pos, "trailing bytes before checksum"));
    }

    let mut layers = Vec::with_capacity(layer_count);
    for (l, (weight, act)) in weights.into_iter().zip(activations).enumerate() {
        let (mu, log_sigma, gamma) = match pool.artifacts.last() {
            Some(a) => (a.va_params[l].mu.clone(), a.va_params[l].log_sigma.clone(), a.gammas[l]),
            None => {
                let (rows, cols) = shapes[l];
                let (mu, ls) = init_va_params(rows, cols, &mut crate::tensor::SeededRng::new(0));
                (mu, ls, 0.0)
            }
        };
        layers.push(VibLayer::new(weight, mu, log_sigma, gamma, act)?);
    }
    let mut net = Network::from_layers(layers, LossScale::default())?;
    net.heads = pool
        .artifacts
        .iter()
        .map(|a| (a.task_id, a.head.clone()))
        .collect::<BTreeMap<_, _>>();
    Ok((net, pool))
}

pub fn save_pool(path: &Path, net: &Network, pool: &MemoryPool) -> Result<()> {
    let bytes = encode_pool(net, pool)?;
    std::fs::write(path, bytes).map_err(|e| IbmError::io(path, e))
}

pub fn load_pool(path: &Path) -> Result<(Network, MemoryPool)> {
    let bytes = std::fs::read(path).map_err(|e| IbmError::io(path, e))?;
    decode_pool(&bytes)
}

fn fmt_err(offset: usize, reason: &str) -> IbmError {
    IbmError::PoolFormat {
        offset,
        reason: reason.to_string(),
    }
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
}

fn pack_bits(values: &[f64]) -> Vec<u8> {
    let mut out = vec![0u8; values.len().div_ceil(8)];
    for (i, &v) in values.iter().enumerate() {
        if v != 0.0 {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize) -> Option<Vec<f64>> {
    let values: Vec<f64> = (0..n)
        .map(|i| if bytes[i / 8] & (1 << (i % 8)) != 0 { 1.0 } else { 0.0 })
        .collect();
    // padding bits past n must be zero
    let used = n % 8;
    if used != 0 && bytes[n / 8] >> used != 0 {
        return None;
    }
    Some(values)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| fmt_err(self.pos, "unexpected end of data"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| fmt_err(self.pos, "length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SeededRng;

    fn sample() -> (Network, MemoryPool) {
        let mut rng = SeededRng::new(12);
        let mut net = Network::new(5, &[7, 3], 0.5, LossScale::Layers, &mut rng).unwrap();
        let mut pool = MemoryPool::new();
        for t in 0..3 {
            net.add_head(t, 2 + t, &mut rng).unwrap();
            for l in &mut net.layers {
                l.mu = crate::tensor::gaussian_sample(&mut rng, l.outputs(), l.inputs(), 0.0, 0.2).unwrap();
            }
            pool.finalize_task(&net, t, 1.0).unwrap();
        }
        (net, pool)
    }

    #[test]
    fn round_trip_is_lossless() {
        let (net, pool) = sample();
        let bytes = encode_pool(&net, &pool).unwrap();
        let (net2, pool2) = decode_pool(&bytes).unwrap();
        assert_eq!(pool2, pool);
        for (a, b) in net.layers.iter().zip(&net2.layers) {
            assert_eq!(a.weight, b.weight);
            assert_eq!(a.activation, b.activation);
        }
        assert_eq!(net2.heads, net.heads);
        assert_eq!(encode_pool(&net2, &pool2).unwrap(), bytes);
    }

    #[test]
    fn every_single_byte_corruption_is_rejected() {
        let (net, pool) = sample();
        let bytes = encode_pool(&net, &pool).unwrap();
        for i in (0..bytes.len()).step_by(7) {
            let mut bad = bytes.clone();
            bad[i] ^= 0x40;
            assert!(decode_pool(&bad).is_err(), "byte {i}");
        }
        assert!(decode_pool(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn version_mismatch_is_distinguished() {
        let (net, pool) = sample();
        let mut bytes = encode_pool(&net, &pool).unwrap();
        bytes[7] = b'2';
        assert!(matches!(decode_pool(&bytes), Err(IbmError::PoolVersion { .. })));
        bytes[0] = b'X';
        assert!(matches!(decode_pool(&bytes), Err(IbmError::PoolFormat { offset: 0, .. })));
    }

    #[test]
    fn bit_packing() {
        let v = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let packed = pack_bits(&v);
        assert_eq!(packed, vec![0b0000_1101, 0b0000_0001]);
        assert_eq!(unpack_bits(&packed, 9).unwrap(), v.to_vec());
        assert!(unpack_bits(&[0xff, 0xff], 9).is_none());
    }
}
