//! Versioned binary container for network parameters and optimizer state.
//!
//! Layout (little endian):
//! `magic[8] | version u32 | stage u8 | hash_len u32 | hash | meta_len u32 |
//! meta (JSON) | count u32 | count x (name_len u32 | name | len u64 | f64 x len)`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::Adam;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DISOCCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stage: u8,
    pub config_hash: String,
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, Vec<f64>>,
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let s = self.buf.get(self.at..self.at.checked_add(n)?)?;
        self.at += n;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
    fn string(&mut self) -> Option<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).ok()
    }
}

impl Checkpoint {
    pub fn new(stage: u8, config_hash: impl Into<String>) -> Self {
        Checkpoint {
            stage,
            config_hash: config_hash.into(),
            meta: serde_json::Value::Null,
            tensors: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend((s.len() as u32).to_le_bytes());
            out.extend(s.as_bytes());
        };
        out.extend(CHECKPOINT_MAGIC);
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.stage);
        put_str(&mut out, &self.config_hash);
        put_str(&mut out, &self.meta.to_string());
        out.extend((self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend((t.len() as u64).to_le_bytes());
            for v in t {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(path, msg);
        let mut r = Reader { buf, at: 0 };
        if r.take(8) != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let stage = r.take(1).ok_or_else(|| bad("truncated header"))?[0];
        let config_hash = r.string().ok_or_else(|| bad("truncated config hash"))?;
        let meta_text = r.string().ok_or_else(|| bad("truncated metadata"))?;
        let meta = serde_json::from_str(&meta_text).map_err(|e| bad(&format!("metadata: {e}")))?;
        let count = r.u32().ok_or_else(|| bad("truncated tensor count"))?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name = r.string().ok_or_else(|| bad("truncated tensor name"))?;
            let len = r.u64().ok_or_else(|| bad("truncated tensor length"))? as usize;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| bad("tensor too large"))?).ok_or_else(|| bad("truncated tensor data"))?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.insert(name, data);
        }
        if r.at != buf.len() {
            return Err(bad("trailing bytes after tensors"));
        }
        Ok(Checkpoint {
            stage,
            config_hash,
            meta,
            tensors,
        })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&buf, path)
    }

    pub fn put_params(&mut self, prefix: &str, params: &[&[f64]]) {
        for (i, p) in params.iter().enumerate() {
            self.tensors.insert(format!("{prefix}.{i}"), p.to_vec());
        }
    }

    /// Copies stored tensors `prefix.0..` into `params`, checking lengths.
    pub fn take_params(&self, prefix: &str, params: Vec<&mut Vec<f64>>) -> Result<()> {
        for (i, p) in params.into_iter().enumerate() {
            let name = format!("{prefix}.{i}");
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor {name}")))?;
            if t.len() != p.len() {
                return Err(Error::Config(format!("tensor {name} has {} values, network expects {}", t.len(), p.len())));
            }
            p.copy_from_slice(t);
        }
        Ok(())
    }

    pub fn put_adam(&mut self, prefix: &str, opt: &Adam) {
        self.tensors.insert(
            format!("{prefix}.hyper"),
            vec![opt.lr, opt.beta1, opt.beta2, opt.eps, opt.t as f64],
        );
        for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
            self.tensors.insert(format!("{prefix}.m.{i}"), m.clone());
            self.tensors.insert(format!("{prefix}.v.{i}"), v.clone());
        }
    }

    pub fn adam(&self, prefix: &str) -> Result<Adam> {
        let h = self
            .tensors
            .get(&format!("{prefix}.hyper"))
            .ok_or_else(|| Error::Config(format!("checkpoint lacks optimizer {prefix}")))?;
        let mut opt = Adam::new(h[0], h[1], h[2]);
        opt.eps = h[3];
        opt.t = h[4] as u64;
        let mut i = 0;
        while let (Some(m), Some(v)) = (self.tensors.get(&format!("{prefix}.m.{i}")), self.tensors.get(&format!("{prefix}.v.{i}"))) {
            opt.m.push(m.clone());
            opt.v.push(v.clone());
            i += 1;
        }
        Ok(opt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new(1, "abc123");
        c.meta = serde_json::json!({"nf": 8});
        c.put_params("gen", &[&[1.0, 2.0], &[-0.5]]);
        let mut opt = Adam::gan(2e-4);
        let mut p = vec![0.0, 0.0];
        opt.step(vec![&mut p], &[vec![1.0, -1.0]]);
        c.put_adam("opt_g", &opt);
        c
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let c = sample();
        c.save(&path).unwrap();
        assert!(!path.with_extension("tmp").exists());
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, c);
        let mut a = vec![0.0; 2];
        let mut b = vec![0.0; 1];
        back.take_params("gen", vec![&mut a, &mut b]).unwrap();
        assert_eq!((a, b), (vec![1.0, 2.0], vec![-0.5]));
        let opt = back.adam("opt_g").unwrap();
        assert_eq!(opt.t, 1);
        assert_eq!(opt.m.len(), 1);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let p = Path::new("x.ck");
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], p).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&wrong, p), Err(Error::Format { .. })));
        let mut version = bytes;
        version[8] = 9;
        assert!(Checkpoint::from_bytes(&version, p).is_err());
    }

    #[test]
    fn shape_mismatch_is_a_config_error() {
        let c = sample();
        let mut a = vec![0.0; 3];
        let mut b = vec![0.0; 1];
        assert!(matches!(c.take_params("gen", vec![&mut a, &mut b]), Err(Error::Config(_))));
    }
}
