//! Model snapshot files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CLNN"                 magic
//! u32                    format version (1)
//! [u8; 4]                role tag, e.g. "DIFF" or "CLSF"
//! u32 input_dim, u32 output_dim
//! u32 n_hidden, then n_hidden x u32 widths
//! u32 hidden activation (0 = SiLU, 1 = identity)
//! u32 time_embed_dim, u32 max_timestep
//! u32 num_classes, u32 class_embed_dim
//! u32 extra_len, then extra_len role-specific bytes
//! f32 x param_count      parameters in declaration order
//! ```

use super::{Activation, Network, NetworkSpec};
use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"CLNN";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub role: [u8; 4],
    pub network: Network,
    pub extra: Vec<u8>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn write_snapshot(role: [u8; 4], net: &Network, extra: &[u8]) -> Vec<u8> {
    let spec = net.spec();
    let mut out = Vec::with_capacity(64 + extra.len() + 4 * net.param_count());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.extend_from_slice(&role);
    put_u32(&mut out, spec.input_dim);
    put_u32(&mut out, spec.output_dim);
    put_u32(&mut out, spec.hidden.len());
    for &w in &spec.hidden {
        put_u32(&mut out, w);
    }
    out.extend_from_slice(&spec.hidden_activation.code().to_le_bytes());
    put_u32(&mut out, spec.time_embed_dim);
    put_u32(&mut out, spec.max_timestep);
    put_u32(&mut out, spec.num_classes);
    put_u32(&mut out, spec.class_embed_dim);
    put_u32(&mut out, extra.len());
    out.extend_from_slice(extra);
    for &p in net.params() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32_le(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn read_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != SNAPSHOT_MAGIC {
        return Err(Error::format(0, "bad magic, expected CLNN"));
    }
    let version = r.u32_le("version")?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::format(
            4,
            format!("unsupported snapshot version {version}"),
        ));
    }
    let role: [u8; 4] = r.take(4, "role tag")?.try_into().unwrap();
    let input_dim = r.u32_le("input_dim")? as usize;
    let output_dim = r.u32_le("output_dim")? as usize;
    let n_hidden = r.u32_le("hidden layer count")? as usize;
    if n_hidden > 1024 {
        return Err(Error::format(
            r.offset() - 4,
            "implausible hidden layer count",
        ));
    }
    let hidden = (0..n_hidden)
        .map(|_| r.u32_le("hidden width").map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let act_off = r.offset();
    let hidden_activation = Activation::from_code(r.u32_le("activation")?)
        .ok_or_else(|| Error::format(act_off, "unknown activation code"))?;
    let spec = NetworkSpec {
        input_dim,
        hidden,
        output_dim,
        hidden_activation,
        time_embed_dim: r.u32_le("time_embed_dim")? as usize,
        max_timestep: r.u32_le("max_timestep")? as usize,
        num_classes: r.u32_le("num_classes")? as usize,
        class_embed_dim: r.u32_le("class_embed_dim")? as usize,
    };
    let spec_end = r.offset();
    spec.validate()
        .map_err(|e| Error::format(spec_end, format!("invalid layer spec: {e}")))?;
    let extra_len = r.u32_le("extra length")? as usize;
    let extra = r.take(extra_len, "role metadata")?.to_vec();
    let n = spec.param_count();
    let params_off = r.offset();
    if r.remaining() != 4 * n {
        return Err(Error::format(
            params_off,
            format!(
                "expected {} parameter bytes, found {}",
                4 * n,
                r.remaining()
            ),
        ));
    }
    let raw = r.take(4 * n, "parameters")?;
    let params: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if let Some(i) = params.iter().position(|p| !p.is_finite()) {
        return Err(Error::format(
            params_off + 4 * i as u64,
            "non-finite parameter",
        ));
    }
    let network = Network::from_params(spec, params)?;
    Ok(Snapshot {
        role,
        network,
        extra,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Network {
        let spec = NetworkSpec {
            input_dim: 3,
            hidden: vec![5, 4],
            output_dim: 3,
            hidden_activation: Activation::Silu,
            time_embed_dim: 4,
            max_timestep: 40,
            num_classes: 2,
            class_embed_dim: 3,
        };
        Network::new(spec, 17).unwrap()
    }

    #[test]
    fn write_read_write_is_stable() {
        let n = net();
        let first = write_snapshot(*b"DIFF", &n, &[1, 2, 3]);
        let snap = read_snapshot(&first).unwrap();
        assert_eq!(&snap.role, b"DIFF");
        assert_eq!(snap.extra, vec![1, 2, 3]);
        assert_eq!(snap.network.spec(), n.spec());
        let second = write_snapshot(snap.role, &snap.network, &snap.extra);
        assert_eq!(first, second);
    }

    #[test]
    fn corrupt_snapshots_rejected() {
        let bytes = write_snapshot(*b"DIFF", &net(), &[]);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_snapshot(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
        let truncated = &bytes[..bytes.len() - 2];
        assert!(matches!(
            read_snapshot(truncated),
            Err(Error::Format { .. })
        ));
        let mut extended = bytes.clone();
        extended.push(0);
        assert!(read_snapshot(&extended).is_err());
        assert!(read_snapshot(&bytes[..10]).is_err());
    }
}
