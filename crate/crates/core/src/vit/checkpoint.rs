//! Single-file model checkpoints.
//!
//! Layout (all integers little-endian `u32`, all reals little-endian `f64`):
//! magic `MODSEGCK`, version, config text (`key=value` lines), tensor count,
//! then per tensor its name, rows, cols and data, then a GMM flag byte and,
//! if set, `K`, `D`, means, variances and weights.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fisher::GmmModel;
use crate::nn::{ParamSet, Tensor};

use super::{SegModel, VitConfig};

const MAGIC: &[u8; 8] = b"MODSEGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

pub(crate) fn encode(model: &SegModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg: String = model
        .config
        .to_pairs()
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    put_str(&mut out, &cfg);
    put_u32(&mut out, model.params.len());
    for (name, t) in &model.params {
        put_str(&mut out, name);
        put_u32(&mut out, t.rows);
        put_u32(&mut out, t.cols);
        put_f64s(&mut out, &t.data);
    }
    match &model.gmm {
        None => out.push(0),
        Some(g) => {
            out.push(1);
            put_u32(&mut out, g.components());
            put_u32(&mut out, g.dim());
            put_f64s(&mut out, g.means());
            put_f64s(&mut out, g.variances());
            put_f64s(&mut out, g.weights());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

pub(crate) fn decode(buf: &[u8]) -> Result<SegModel> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8).ok() != Some(&MAGIC[..]) {
        return Err(Error::Checkpoint("not a model checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads {CHECKPOINT_VERSION})"
        )));
    }
    let text = r.string()?;
    let mut config = VitConfig::default();
    let pairs: Vec<(&str, &str)> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_once('=').ok_or_else(|| Error::Checkpoint(format!("bad config line '{l}'"))))
        .collect::<Result<_>>()?;
    config
        .apply_pairs(pairs)
        .map_err(|e| Error::Checkpoint(format!("bad config: {e}")))?;
    let count = r.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = r.string()?;
        let rows = r.u32()?;
        let cols = r.u32()?;
        let data = r.f64s(rows * cols)?;
        params.insert(name, Tensor::new(rows, cols, data));
    }
    let gmm = match r.take(1)?[0] {
        0 => None,
        1 => {
            let k = r.u32()?;
            let d = r.u32()?;
            let means = r.f64s(k * d)?;
            let vars = r.f64s(k * d)?;
            let weights = r.f64s(k)?;
            Some(GmmModel::new(k, d, means, vars, weights).map_err(|e| Error::Checkpoint(format!("bad GMM: {e}")))?)
        }
        b => return Err(Error::Checkpoint(format!("bad GMM flag {b}"))),
    };
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
    }

    // the stored tensors must be exactly what this config would create
    let expected = SegModel::init(config, gmm.clone(), 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if expected.params.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, config implies {}",
            params.len(),
            expected.params.len()
        )));
    }
    for (name, t) in &expected.params {
        match params.get(name) {
            Some(p) if p.shape() == t.shape() => {}
            Some(p) => {
                return Err(Error::Checkpoint(format!(
                    "tensor '{name}' is {:?}, expected {:?}",
                    p.shape(),
                    t.shape()
                )))
            }
            None => return Err(Error::Checkpoint(format!("missing tensor '{name}'"))),
        }
    }
    if params.values().any(|t| !t.all_finite()) {
        return Err(Error::Checkpoint("non-finite parameter values".into()));
    }
    Ok(SegModel {
        config,
        params,
        gmm: expected.gmm,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &SegModel) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SegModel> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode(&buf).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fisher::GmmModel;
    use crate::vit::Variant;
    use crate::vit::tests::toy_config;

    fn fv_model() -> SegModel {
        let gmm = GmmModel::new(2, 64, vec![0.3; 128], vec![0.1; 128], vec![0.5, 0.5]).unwrap();
        SegModel::init(toy_config(Variant::FvLr), Some(gmm), 3).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = fv_model();
        let bytes = encode(&m);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn rejects_bad_input() {
        let m = fv_model();
        let bytes = encode(&m);
        let mut v2 = bytes.clone();
        v2[8] = 2;
        let err = decode(&v2).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode(b"garbage!").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
