//! Binary parameter files for dense networks.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    b"AVAILNN\0"
//! version  u32 (= 1)
//! layers   u32
//! per layer: inputs u32, outputs u32, activation u8, layer_norm u8, dropout f64
//! per layer: weights (outputs × inputs, row-major), bias,
//!            then gain and shift when layer_norm is set
//! ```

use std::io::{Read, Write};
use std::path::Path;

use avail_core::nn::{Activation, Layer, LayerNorm, Mlp};

pub const MAGIC: &[u8; 8] = b"AVAILNN\0";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("not a network file (bad magic)")]
    BadMagic,
    #[error("unsupported network file version {0}")]
    Version(u32),
    #[error("unknown activation code {0}")]
    Activation(u8),
    #[error("network file is truncated")]
    Truncated,
    #[error("trailing bytes after the last layer")]
    Trailing,
    #[error("invalid network: {0}")]
    Invalid(#[from] avail_core::Error),
    #[error(transparent)]
    Io(std::io::Error),
}

impl From<std::io::Error> for FormatError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            FormatError::Truncated
        } else {
            FormatError::Io(e)
        }
    }
}

pub fn encode(net: &Mlp) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + net.param_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for l in net.layers() {
        out.extend_from_slice(&(l.inputs as u32).to_le_bytes());
        out.extend_from_slice(&(l.outputs as u32).to_le_bytes());
        out.push(l.activation.code());
        out.push(l.norm.is_some() as u8);
        out.extend_from_slice(&l.dropout.to_le_bytes());
    }
    for l in net.layers() {
        let norm = l.norm.iter().flat_map(|n| n.gain.iter().chain(&n.shift));
        for v in l.weights.iter().chain(&l.bias).chain(norm) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(mut bytes: &[u8]) -> Result<Mlp, FormatError> {
    let r = &mut bytes;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(FormatError::Version(version));
    }
    let count = read_u32(r)? as usize;
    let mut heads = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let inputs = read_u32(r)? as usize;
        let outputs = read_u32(r)? as usize;
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        let activation = Activation::from_code(flags[0]).ok_or(FormatError::Activation(flags[0]))?;
        let dropout = read_f64(r)?;
        heads.push((inputs, outputs, activation, flags[1] != 0, dropout));
    }
    let mut layers = Vec::with_capacity(heads.len());
    for (inputs, outputs, activation, normed, dropout) in heads {
        let weights = read_vec(r, inputs.checked_mul(outputs).ok_or(FormatError::Truncated)?)?;
        let bias = read_vec(r, outputs)?;
        let norm = if normed { Some(LayerNorm { gain: read_vec(r, outputs)?, shift: read_vec(r, outputs)? }) } else { None };
        layers.push(Layer { inputs, outputs, weights, bias, activation, dropout, norm });
    }
    if !r.is_empty() {
        return Err(FormatError::Trailing);
    }
    Ok(Mlp::from_layers(layers)?)
}

pub fn save(net: &Mlp, path: &Path) -> std::io::Result<()> {
    std::fs::File::create(path)?.write_all(&encode(net))
}

pub fn load(path: &Path) -> Result<Mlp, FormatError> {
    decode(&std::fs::read(path)?)
}

fn read_u32(r: &mut &[u8]) -> Result<u32, FormatError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut &[u8]) -> Result<f64, FormatError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_vec(r: &mut &[u8], n: usize) -> Result<Vec<f64>, FormatError> {
    if r.len() < n.saturating_mul(8) {
        return Err(FormatError::Truncated);
    }
    (0..n).map(|_| read_f64(r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use avail_core::nn::{stack, LayerSpec};
    use avail_core::rng::stream;

    fn net() -> Mlp {
        let specs = stack(3, &[5, 4], 2, |i, o| LayerSpec::dense(i, o, Activation::Tanh).with_layer_norm().with_dropout(0.25));
        Mlp::new(&specs, &mut stream(1, 0)).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let n = net();
        assert_eq!(decode(&encode(&n)).unwrap(), n);
    }

    #[test]
    fn header_is_fixed_layout() {
        let b = encode(&net());
        assert_eq!(&b[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 3);
        // First layer: 3 → 5, tanh, normalized, dropout 0.25.
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(b[20..24].try_into().unwrap()), 5);
        assert_eq!(b[24], Activation::Tanh.code());
        assert_eq!(b[25], 1);
        assert_eq!(f64::from_le_bytes(b[26..34].try_into().unwrap()), 0.25);
        let params = net().param_count();
        assert_eq!(b.len(), 16 + 3 * 18 + params * 8);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let b = encode(&net());
        assert!(matches!(decode(&b[..b.len() - 1]), Err(FormatError::Truncated)));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(FormatError::BadMagic)));
        let mut bad = b.clone();
        bad[8] = 9;
        assert!(matches!(decode(&bad), Err(FormatError::Version(9))));
        let mut bad = b.clone();
        bad.push(0);
        assert!(matches!(decode(&bad), Err(FormatError::Trailing)));
        let mut bad = b;
        bad[24] = 7;
        assert!(matches!(decode(&bad), Err(FormatError::Activation(7))));
    }
}
