//! Model persistence.
//!
//! Checkpoints are versioned JSON documents holding both flow specs and their
//! parameters. Floats are written with round-trip precision, so a reloaded
//! model evaluates bit-identically.
//!
//! `export` writes the flat binary format (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "CMFB"
//! version    u32      1
//! d          u32      latent dimension
//! D          u32      data dimension
//! spec_len   u64      byte length of the spec document
//! spec       bytes    UTF-8 JSON {"h": FlowSpec, "f": FlowSpec}
//! n_params   u64
//! params     f64 x n  [h | f]
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::Standardization;
use crate::error::{Error, Result};
use crate::flownet::{FlowModule, FlowSpec};
use crate::injective::InjectiveFlow;
use crate::linalg::Rng;

pub const FORMAT: &str = "cmflow-checkpoint";
pub const VERSION: u32 = 1;
pub const BINARY_MAGIC: &[u8; 4] = b"CMFB";
pub const BINARY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub spec: FlowSpec,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub latent_dim: usize,
    pub data_dim: usize,
    pub seed: u64,
    pub rng_algorithm: String,
    #[serde(default)]
    pub epoch: Option<usize>,
    /// Data standardisation the model was trained under, if any.
    #[serde(default)]
    pub standardization: Option<Standardization>,
    pub h: FlowState,
    pub f: FlowState,
}

#[derive(Serialize, Deserialize)]
struct SpecPair {
    h: FlowSpec,
    f: FlowSpec,
}

impl Checkpoint {
    pub fn new(gf: &InjectiveFlow, seed: u64, epoch: Option<usize>) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            latent_dim: gf.latent_dim(),
            data_dim: gf.data_dim(),
            seed,
            rng_algorithm: Rng::ALGORITHM.into(),
            epoch,
            standardization: None,
            h: FlowState {
                spec: gf.h().spec(),
                params: gf.h().params().to_vec(),
            },
            f: FlowState {
                spec: gf.f().spec(),
                params: gf.f().params().to_vec(),
            },
        }
    }

    pub fn model(&self) -> Result<InjectiveFlow> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {VERSION})",
                self.version
            )));
        }
        let h = FlowModule::from_spec(&self.h.spec, Some(self.h.params.clone()))?;
        let f = FlowModule::from_spec(&self.f.spec, Some(self.f.params.clone()))?;
        let gf = InjectiveFlow::new(h, f)?;
        if gf.latent_dim() != self.latent_dim || gf.data_dim() != self.data_dim {
            return Err(Error::Checkpoint(format!(
                "declared dims ({}, {}) disagree with flow specs ({}, {})",
                self.latent_dim,
                self.data_dim,
                gf.latent_dim(),
                gf.data_dim()
            )));
        }
        if let Some(st) = &self.standardization {
            if st.mean.len() != self.data_dim || st.std.len() != self.data_dim {
                return Err(Error::Checkpoint("standardization length mismatch".into()));
            }
        }
        Ok(gf)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Reads a JSON checkpoint or a binary export.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.starts_with(BINARY_MAGIC) {
            return Self::from_binary(&bytes);
        }
        let s = std::str::from_utf8(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Self::from_json(s)
    }

    pub fn to_binary(&self) -> Result<Vec<u8>> {
        let spec = serde_json::to_vec(&SpecPair {
            h: self.h.spec.clone(),
            f: self.f.spec.clone(),
        })
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let n = self.h.params.len() + self.f.params.len();
        let mut out = Vec::with_capacity(32 + spec.len() + 8 * n);
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&BINARY_VERSION.to_le_bytes())?;
        out.write_all(&(self.latent_dim as u32).to_le_bytes())?;
        out.write_all(&(self.data_dim as u32).to_le_bytes())?;
        out.write_all(&(spec.len() as u64).to_le_bytes())?;
        out.write_all(&spec)?;
        out.write_all(&(n as u64).to_le_bytes())?;
        for p in self.h.params.iter().chain(&self.f.params) {
            out.write_all(&p.to_le_bytes())?;
        }
        Ok(out)
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != BINARY_MAGIC {
            return Err(Error::Checkpoint("missing CMFB magic".into()));
        }
        let version = r.u32()?;
        if version != BINARY_VERSION {
            return Err(Error::Checkpoint(format!("unsupported binary version {version}")));
        }
        let d = r.u32()? as usize;
        let big_d = r.u32()? as usize;
        let spec_len = r.u64()? as usize;
        let pair: SpecPair = serde_json::from_slice(r.take(spec_len)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let n = r.u64()? as usize;
        let mut params = Vec::with_capacity(n.min(bytes.len() / 8));
        for _ in 0..n {
            params.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after parameters".into()));
        }
        let nh = FlowModule::from_spec(&pair.h, None)?.param_count();
        if nh > params.len() {
            return Err(Error::Checkpoint("parameter block shorter than h".into()));
        }
        let f_params = params.split_off(nh);
        let ck = Self {
            format: FORMAT.into(),
            version: VERSION,
            latent_dim: d,
            data_dim: big_d,
            seed: 0,
            rng_algorithm: Rng::ALGORITHM.into(),
            epoch: None,
            standardization: None,
            h: FlowState {
                spec: pair.h,
                params,
            },
            f: FlowState {
                spec: pair.f,
                params: f_params,
            },
        };
        ck.model()?;
        Ok(ck)
    }
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
            .ok_or_else(|| Error::Checkpoint("truncated binary export".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
