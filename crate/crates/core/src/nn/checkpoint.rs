//! `FDLB` network checkpoints.
//!
//! Layout (little-endian): magic `FDLB`, `u32` format version, `u32` layer
//! count, then per layer `u32 in_dim`, `u32 out_dim`, `u32 activation code`,
//! `in_dim * out_dim` row-major `f64` weights and `out_dim` `f64` biases.

use super::{Activation, DenseLayer, Network};
use crate::codec::{put_f64s, put_u32, ByteReader};
use crate::{Error, Result};

pub const NETWORK_MAGIC: &[u8; 4] = b"FDLB";
pub const NETWORK_VERSION: u32 = 1;

pub fn write_network(net: &Network, out: &mut Vec<u8>) {
    out.extend_from_slice(NETWORK_MAGIC);
    put_u32(out, NETWORK_VERSION);
    put_u32(out, net.layers().len() as u32);
    for l in net.layers() {
        put_u32(out, l.in_dim() as u32);
        put_u32(out, l.out_dim() as u32);
        put_u32(out, l.activation().code());
        put_f64s(out, l.weights());
        put_f64s(out, l.biases());
    }
}

pub fn network_to_bytes(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    write_network(net, &mut out);
    out
}

pub(crate) fn read_network_from(r: &mut ByteReader<'_>) -> Result<Network> {
    r.magic(NETWORK_MAGIC)?;
    let at = r.offset();
    let version = r.u32()?;
    if version != NETWORK_VERSION {
        return Err(Error::Parse {
            offset: at,
            msg: format!("unsupported network format version {version}"),
        });
    }
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let at = r.offset();
        let code = r.u32()?;
        let act = Activation::from_code(code).ok_or_else(|| Error::Parse {
            offset: at,
            msg: format!("unknown activation code {code}"),
        })?;
        let weights = r.f64_vec(in_dim * out_dim)?;
        let biases = r.f64_vec(out_dim)?;
        layers.push(
            DenseLayer::new(in_dim, out_dim, act, weights, biases)
                .map_err(|e| r.parse_err(e.to_string()))?,
        );
    }
    Network::new(layers).map_err(|e| r.parse_err(e.to_string()))
}

pub fn read_network(bytes: &[u8]) -> Result<Network> {
    let mut r = ByteReader::new(bytes);
    let net = read_network_from(&mut r)?;
    r.finish()?;
    Ok(net)
}
