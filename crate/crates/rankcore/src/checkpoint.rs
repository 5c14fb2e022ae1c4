//! Binary encoder checkpoint: magic `RCEN1`, five little-endian `u64`
//! header fields `{H, T, d, d_v, d_out}`, then every tensor as row-major
//! little-endian `f64` in declaration order (W_Q per head, W_K per head,
//! fusion logits, W_V, W_O).

use std::path::Path;

use rankcore_core::encoder::{init_params, EncoderParams, EncoderShape};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const MAGIC: &[u8; 5] = b"RCEN1";

pub fn encode(p: &EncoderParams) -> Vec<u8> {
    let shape = p.shape();
    let header = [shape.heads, p.n_features(), shape.head_dim, shape.value_dim, shape.out_dim];
    let n_values: usize = p.tensors().iter().map(|t| t.len()).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + 40 + 8 * n_values);
    out.extend_from_slice(MAGIC);
    for h in header {
        out.extend_from_slice(&(h as u64).to_le_bytes());
    }
    for t in p.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<EncoderParams> {
    let bad = |msg: String| Error::format(origin, msg);
    if bytes.len() < MAGIC.len() + 40 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("not an RCEN1 checkpoint".into()));
    }
    let mut header = [0usize; 5];
    for (i, h) in header.iter_mut().enumerate() {
        let at = MAGIC.len() + 8 * i;
        let raw = u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"));
        *h = usize::try_from(raw).map_err(|_| bad(format!("header field {i} out of range")))?;
    }
    let [heads, n_features, head_dim, value_dim, out_dim] = header;
    let shape = EncoderShape { heads, head_dim, value_dim, out_dim };
    let mut params = init_params(n_features, &shape, 0).map_err(|e| bad(format!("invalid header: {e}")))?;
    let body = &bytes[MAGIC.len() + 40..];
    let expected: usize = params.tensors().iter().map(|t| t.len()).sum();
    if body.len() != 8 * expected {
        return Err(bad(format!("expected {} tensor bytes, found {}", 8 * expected, body.len())));
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = values.next().expect("length checked above");
        }
    }
    Ok(params)
}

pub fn save(path: &Path, p: &EncoderParams) -> Result<()> {
    write_atomic(path, &encode(p))
}

pub fn load(path: &Path) -> Result<EncoderParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
