//! Versioned JSON checkpoints written atomically (temp file, then rename).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ParamStore};
use crate::error::{Error, Result};
use crate::optim::Optimizer;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// Word position as a decimal string; it is a 128-bit counter.
    #[serde(with = "u128_string")]
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(seed: u64, rng: &rand_chacha::ChaCha8Rng) -> Self {
        Self {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> rand_chacha::ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    pub params: ParamStore,
    pub optimizer: Option<Optimizer>,
    pub rng: Option<RngState>,
    pub epoch: usize,
    /// Experiment configuration the run was started with.
    #[serde(default)]
    pub config_echo: serde_json::Value,
}

impl Checkpoint {
    pub fn new(model: &Model, optimizer: Option<&Optimizer>, rng: Option<RngState>, epoch: usize) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            model: model.config.clone(),
            params: model.params.clone(),
            optimizer: optimizer.cloned(),
            rng,
            epoch,
            config_echo: serde_json::Value::Null,
        }
    }

    pub fn model(&self) -> Model {
        Model {
            config: self.model.clone(),
            params: self.params.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("json.tmp");
        let json = serde_json::to_vec(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_slice(&bytes).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "{}: checkpoint version {} (expected {CHECKPOINT_VERSION})",
                path.display(),
                ck.version
            )));
        }
        ck.model.validate()?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::Curvature;
    use crate::nn::{EncoderConfig, HierarchySpec, Levels, Resynthesis};
    use crate::optim::OptimConfig;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_everything() {
        let cfg = ModelConfig {
            encoder: EncoderConfig::desk(9),
            hierarchy: HierarchySpec::new(2).unwrap(),
            levels: Levels::Two,
            curvature: Curvature::new(-1.0).unwrap(),
            resynthesis: Resynthesis::Joint,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Model::new(cfg, &mut rng).unwrap();
        let opt = Optimizer::new(&model.params, OptimConfig::default()).unwrap();
        rng.next_u64();
        let ck = Checkpoint::new(&model, Some(&opt), Some(RngState::capture(3, &rng)), 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/best.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let mut resumed = back.rng.unwrap().restore();
        assert_eq!(resumed.next_u64(), rng.next_u64());
        assert!(!path.with_extension("json.tmp").exists());
    }
}
