//! `CORLNETS` parameter layout: magic, version, network count, then per
//! network its layer dims, activation tags and f32 LE parameters.

use super::{Activation, Layer, Mlp};
use crate::codec::{put_f32, put_f64, put_u32, Reader};
use crate::error::{Error, Result};

pub const NETS_MAGIC: &[u8; 8] = b"CORLNETS";
pub const NETS_VERSION: u32 = 1;

pub fn encode_networks<'a>(nets: impl IntoIterator<Item = &'a Mlp<f32>>) -> Vec<u8> {
    let nets: Vec<&Mlp<f32>> = nets.into_iter().collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(NETS_MAGIC);
    put_u32(&mut buf, NETS_VERSION);
    put_u32(&mut buf, nets.len() as u32);
    for net in nets {
        put_u32(&mut buf, net.layers().len() as u32);
        for l in net.layers() {
            let (tag, scale) = l.activation().tag();
            put_u32(&mut buf, l.in_dim() as u32);
            put_u32(&mut buf, l.out_dim() as u32);
            put_u32(&mut buf, tag);
            put_f64(&mut buf, scale);
            for &w in l.weights() {
                put_f32(&mut buf, w);
            }
            for &b in l.bias() {
                put_f32(&mut buf, b);
            }
        }
    }
    buf
}

pub fn decode_networks(bytes: &[u8]) -> Result<Vec<Mlp<f32>>> {
    let short = || Error::TruncatedSection("network payload");
    let mut r = Reader::new(bytes);
    if r.take(8, || Error::BadMagic { expected: "CORLNETS" })? != NETS_MAGIC {
        return Err(Error::BadMagic { expected: "CORLNETS" });
    }
    let version = r.u32(short)?;
    if version != NETS_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: NETS_VERSION,
        });
    }
    let count = r.u32(short)? as usize;
    let mut nets = Vec::with_capacity(count);
    for _ in 0..count {
        let n_layers = r.u32(short)? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let in_dim = r.u32(short)? as usize;
            let out_dim = r.u32(short)? as usize;
            let tag = r.u32(short)?;
            let scale = r.f64(short)?;
            let act = Activation::from_tag(tag, scale)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown activation tag {tag}")))?;
            let w = r.f32s(in_dim * out_dim, short)?;
            let b = r.f32s(out_dim, short)?;
            layers.push(Layer::new(in_dim, out_dim, act, w, b)?);
        }
        nets.push(Mlp::from_layers(layers)?);
    }
    Ok(nets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn networks_round_trip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Mlp::random(&[4, 8, 2], Activation::Relu, Activation::Tanh { scale: 1.0 }, &mut rng).unwrap();
        let b = Mlp::random(&[6, 3, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let bytes = encode_networks([&a, &b]);
        assert_eq!(&bytes[..8], NETS_MAGIC);
        let back = decode_networks(&bytes).unwrap();
        assert_eq!(back, vec![a, b]);
        assert!(decode_networks(&bytes[..bytes.len() - 3]).is_err());
    }
}
