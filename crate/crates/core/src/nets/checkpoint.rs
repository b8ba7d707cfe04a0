//! Parameter checkpoints.
//!
//! Layout: the 8 magic bytes `MOODCKPT`, a little-endian `u32` header length,
//! a TOML header (format version, free-form metadata, and one entry per
//! stored tensor group with its architecture descriptor), then every entry's
//! parameters followed by its buffers as little-endian `f64`, in header
//! order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Arch, Net};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MOODCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    #[serde(default)]
    meta: BTreeMap<String, String>,
    entries: Vec<EntryHeader>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EntryHeader {
    name: String,
    arch: Option<Arch>,
    params: usize,
    buffers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    /// `None` for bare vectors (e.g. a policy's log standard deviation).
    pub arch: Option<Arch>,
    pub params: Vec<f64>,
    pub buffers: Vec<f64>,
}

impl Entry {
    pub fn from_net(name: impl Into<String>, net: &Net) -> Self {
        Self {
            name: name.into(),
            arch: Some(net.arch()),
            params: net.params().to_vec(),
            buffers: net.buffers(),
        }
    }

    pub fn vector(name: impl Into<String>, values: &[f64]) -> Self {
        Self {
            name: name.into(),
            arch: None,
            params: values.to_vec(),
            buffers: Vec::new(),
        }
    }

    /// Rebuilds the network, checking the descriptor against `expected` when given.
    pub fn to_net(&self, expected: Option<&Arch>) -> Result<Net> {
        let arch = self
            .arch
            .as_ref()
            .ok_or_else(|| Error::Checkpoint(format!("entry `{}` is not a network", self.name)))?;
        if let Some(e) = expected {
            if e != arch {
                return Err(Error::Checkpoint(format!(
                    "entry `{}` has architecture {arch:?}, expected {e:?}",
                    self.name
                )));
            }
        }
        if arch.num_params() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "entry `{}` stores {} parameters, architecture needs {}",
                self.name,
                self.params.len(),
                arch.num_params()
            )));
        }
        // deterministic placeholder init, overwritten below
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = Net::new(arch, &mut rng);
        net.params_mut().copy_from_slice(&self.params);
        net.set_buffers(&self.buffers)
            .map_err(|e| Error::Checkpoint(format!("entry `{}`: {e}", self.name)))?;
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry `{name}`")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            format_version: FORMAT_VERSION,
            meta: self.meta.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| EntryHeader {
                    name: e.name.clone(),
                    arch: e.arch.clone(),
                    params: e.params.len(),
                    buffers: e.buffers.len(),
                })
                .collect(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&(text.len() as u32).to_le_bytes())?;
        w.write_all(text.as_bytes())?;
        let mut buf = Vec::new();
        for e in &self.entries {
            for v in e.params.iter().chain(&e.buffers) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let text = std::str::from_utf8(body).map_err(|_| bad("header is not UTF-8"))?;
        let header: Header = toml::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let payload = &bytes[12 + hlen..];
        let total: usize = header.entries.iter().map(|e| e.params + e.buffers).sum();
        if payload.len() != total * 8 {
            return Err(Error::Checkpoint(format!(
                "payload holds {} bytes, header describes {}",
                payload.len(),
                total * 8
            )));
        }
        let mut vals = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let entries = header
            .entries
            .into_iter()
            .map(|h| Entry {
                params: vals.by_ref().take(h.params).collect(),
                buffers: vals.by_ref().take(h.buffers).collect(),
                name: h.name,
                arch: h.arch,
            })
            .collect();
        Ok(Self {
            meta: header.meta,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_preserves_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Net::new(
            &Arch::Simple {
                dims: vec![3, 4, 2],
            },
            &mut rng,
        );
        let b = Net::new(
            &Arch::Modern {
                input: 3,
                hidden: 4,
                blocks: 1,
                output: 1,
            },
            &mut rng,
        );
        let mut ck = Checkpoint::default();
        ck.meta.insert("algorithm".into(), "iql".into());
        ck.entries.push(Entry::from_net("a", &a));
        ck.entries.push(Entry::from_net("b", &b));
        ck.entries.push(Entry::vector("log_std", &[-0.5, 0.25]));
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.entry("a").unwrap().to_net(None).unwrap(), a);
        assert_eq!(back.entry("b").unwrap().to_net(None).unwrap(), b);
    }

    #[test]
    fn architecture_mismatch_is_a_load_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Net::new(
            &Arch::Simple {
                dims: vec![3, 4, 2],
            },
            &mut rng,
        );
        let e = Entry::from_net("a", &a);
        let other = Arch::Simple {
            dims: vec![3, 5, 2],
        };
        assert!(matches!(e.to_net(Some(&other)), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        assert!(Checkpoint::read_from(&b"nope"[..]).is_err());
        let mut bytes = Vec::new();
        let ck = Checkpoint {
            meta: Default::default(),
            entries: vec![Entry::vector("v", &[1.0, 2.0])],
        };
        ck.write_to(&mut bytes).unwrap();
        bytes.pop();
        assert!(Checkpoint::read_from(bytes.as_slice()).is_err());
    }
}
