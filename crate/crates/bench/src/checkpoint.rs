//! `CORLCKPT` run snapshots taken at task boundaries.
//!
//! Layout: magic, version u32, a length-prefixed JSON header (seed, config,
//! tasks, result rows), a `CORLNETS` block with the trunk followed by every
//! head, normalizers, regularizer vectors, then each replay buffer as a
//! `CORLDATA` payload with its JSON sidecar.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use corl_core::codec::{put_f32, put_f64, put_u32, put_u64, Reader};
use corl_core::continual::{EwcAnchor, MultiHeadPolicy, RegularizerState, SequenceConfig, SequenceState, SiState};
use corl_core::data::Normalizer;
use corl_core::env::TaskSpec;
use corl_core::error::{Error, Result};
use corl_core::metrics::ResultMatrix;
use corl_core::nn::serial::{decode_networks, encode_networks};
use corl_core::selection::{decode_buffer, encode_buffer};

pub const CKPT_MAGIC: &[u8; 8] = b"CORLCKPT";
pub const CKPT_VERSION: u32 = 1;

/// A resumable run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub config: SequenceConfig,
    pub tasks: Vec<TaskSpec>,
    pub state: SequenceState,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    seed: u64,
    config: SequenceConfig,
    tasks: Vec<TaskSpec>,
    results: Vec<Vec<f64>>,
    action_dim: usize,
    action_bound: f64,
}

fn short() -> Error {
    Error::TruncatedSection("checkpoint")
}

fn put_block(buf: &mut Vec<u8>, bytes: &[u8]) {
    put_u64(buf, bytes.len() as u64);
    buf.extend_from_slice(bytes);
}

fn take_block<'a>(r: &mut Reader<'a>) -> Result<&'a [u8]> {
    let n = r.u64(short)? as usize;
    r.take(n, short)
}

fn put_f32s(buf: &mut Vec<u8>, v: &[f32]) {
    put_u64(buf, v.len() as u64);
    v.iter().for_each(|&x| put_f32(buf, x));
}

fn take_f32s(r: &mut Reader<'_>) -> Result<Vec<f32>> {
    let n = r.u64(short)? as usize;
    if n > r.remaining() / 4 {
        return Err(short());
    }
    r.f32s(n, short)
}

fn put_f64s(buf: &mut Vec<u8>, v: &[f64]) {
    put_u64(buf, v.len() as u64);
    v.iter().for_each(|&x| put_f64(buf, x));
}

fn take_f64s(r: &mut Reader<'_>) -> Result<Vec<f64>> {
    let n = r.u64(short)? as usize;
    if n > r.remaining() / 8 {
        return Err(short());
    }
    (0..n).map(|_| r.f64(short)).collect()
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let st = &ck.state;
    let p = &st.policy;
    let header = Header {
        seed: ck.seed,
        config: ck.config.clone(),
        tasks: ck.tasks.clone(),
        results: st.results.rows().to_vec(),
        action_dim: p.action_dim,
        action_bound: p.action_bound,
    };
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    put_u32(&mut buf, CKPT_VERSION);
    put_block(&mut buf, &serde_json::to_vec(&header).expect("header serializes"));
    put_block(&mut buf, &encode_networks(std::iter::once(&p.trunk).chain(&p.heads)));

    put_u32(&mut buf, p.normalizers.len() as u32);
    for n in &p.normalizers {
        put_f32s(&mut buf, &n.mean);
        put_f32s(&mut buf, &n.std);
    }

    let reg = &st.regularizer;
    put_u32(&mut buf, reg.ewc.len() as u32);
    for a in &reg.ewc {
        put_f32s(&mut buf, &a.params);
        put_f32s(&mut buf, &a.fisher);
    }
    put_f32s(&mut buf, &reg.si.omega);
    put_f32s(&mut buf, &reg.si.anchor);
    put_f64s(&mut buf, &reg.si.path);
    put_f32s(&mut buf, &reg.si.start);

    let (sd, ad) = (p.state_dim(), p.action_dim);
    put_u32(&mut buf, st.buffers.len() as u32);
    for b in &st.buffers {
        let (bin, meta) = encode_buffer(b, sd, ad);
        put_block(&mut buf, &bin);
        put_block(&mut buf, meta.as_bytes());
    }
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    if r.take(8, || Error::BadMagic { expected: "CORLCKPT" })? != CKPT_MAGIC {
        return Err(Error::BadMagic { expected: "CORLCKPT" });
    }
    let version = r.u32(short)?;
    if version != CKPT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: CKPT_VERSION,
        });
    }
    let header: Header = serde_json::from_slice(take_block(&mut r)?)?;
    let mut nets = decode_networks(take_block(&mut r)?)?.into_iter();
    let trunk = nets.next().ok_or_else(short)?;
    let heads: Vec<_> = nets.collect();

    let normalizers = (0..r.u32(short)?)
        .map(|_| {
            Ok(Normalizer {
                mean: take_f32s(&mut r)?,
                std: take_f32s(&mut r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let ewc = (0..r.u32(short)?)
        .map(|_| {
            Ok(EwcAnchor {
                params: take_f32s(&mut r)?,
                fisher: take_f32s(&mut r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let si = SiState {
        omega: take_f32s(&mut r)?,
        anchor: take_f32s(&mut r)?,
        path: take_f64s(&mut r)?,
        start: take_f32s(&mut r)?,
    };

    let buffers = (0..r.u32(short)?)
        .map(|_| {
            let bin = take_block(&mut r)?;
            let meta = std::str::from_utf8(take_block(&mut r)?)
                .map_err(|_| Error::InvalidArgument("checkpoint: buffer sidecar is not UTF-8".into()))?;
            decode_buffer(bin, meta)
        })
        .collect::<Result<Vec<_>>>()?;
    if r.remaining() != 0 {
        return Err(Error::InvalidArgument(format!(
            "checkpoint: {} trailing bytes",
            r.remaining()
        )));
    }
    if normalizers.len() != heads.len() {
        return Err(Error::InvalidArgument(
            "checkpoint: one normalizer per head expected".into(),
        ));
    }

    let policy = MultiHeadPolicy {
        trunk,
        heads,
        normalizers,
        action_dim: header.action_dim,
        action_bound: header.action_bound,
    };
    Ok(Checkpoint {
        seed: header.seed,
        config: header.config,
        state: SequenceState {
            policy,
            regularizer: RegularizerState { ewc, si },
            buffers,
            results: ResultMatrix::from_rows(header.tasks.len(), header.results)?,
        },
        tasks: header.tasks,
    })
}

/// Writes through a temporary file so an interrupted write never leaves a
/// truncated checkpoint behind.
pub fn write_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_checkpoint(ck))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
