use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::adam::Adam;
use super::config::TrainConfig;
use crate::blocks::ParamStore;
use crate::data::io::{decode_store, encode_store, read_file, Reader};
use crate::error::{Error, Result};
use crate::kspace::SamplingMask;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"KCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Complete training state: resuming from it continues the run exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub g: ParamStore,
    pub d: ParamStore,
    pub adam_g: Adam,
    pub adam_d: Adam,
    pub rng: ChaCha8Rng,
    pub mask: SamplingMask,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng.get_seed());
        out.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        out.extend_from_slice(&self.adam_g.step.to_le_bytes());
        out.extend_from_slice(&self.adam_d.step.to_le_bytes());
        put_str(&mut out, &self.config.render());
        let mut mask = ParamStore::new();
        mask.insert("mask", self.mask.to_tensor());
        for store in [&self.g, &self.d, &self.adam_g.m, &self.adam_g.v, &self.adam_d.m, &self.adam_d.v, &mask] {
            encode_store(store, &mut out);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.bytes(4, "checkpoint magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: "bad magic, expected KCKP".into(),
            });
        }
        let version = r.u32("checkpoint version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                offset: 4,
                reason: format!("unsupported checkpoint version {version}"),
            });
        }
        let step = r.u64("step")?;
        let seed: [u8; 32] = r.bytes(32, "rng seed")?.try_into().expect("32 bytes");
        let stream = r.u64("rng stream")?;
        let word_pos = u128::from_le_bytes(r.bytes(16, "rng position")?.try_into().expect("16 bytes"));
        let (g_steps, d_steps) = (r.u64("adam step")?, r.u64("adam step")?);
        let at = r.offset();
        let len = r.u32("config length")? as usize;
        let text = std::str::from_utf8(r.bytes(len, "config")?).map_err(|_| Error::Format {
            offset: at,
            reason: "config text is not UTF-8".into(),
        })?;
        let config = TrainConfig::parse(text)?;
        let mut stores = Vec::with_capacity(7);
        for _ in 0..7 {
            stores.push(decode_store(&mut r)?);
        }
        if !r.is_empty() {
            return Err(Error::Format {
                offset: r.offset(),
                reason: "trailing bytes after checkpoint".into(),
            });
        }
        let mask_store = stores.pop().expect("seven stores");
        let mask = SamplingMask::from_tensor(
            mask_store.get("mask").ok_or_else(|| Error::MissingParam("mask".into()))?,
        )?;
        let mut it = stores.into_iter();
        let mut next = || it.next().expect("six stores");
        let (g, d) = (next(), next());
        let o = &config.optimizer;
        let mut adam_g = Adam::new(o.lr_g, o.beta1, o.beta2, o.eps);
        adam_g.step = g_steps;
        adam_g.m = next();
        adam_g.v = next();
        let mut adam_d = Adam::new(o.lr_d, o.beta1, o.beta2, o.eps);
        adam_d.step = d_steps;
        adam_d.m = next();
        adam_d.v = next();
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(Self {
            config,
            step,
            g,
            d,
            adam_g,
            adam_d,
            rng,
            mask,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }
}

