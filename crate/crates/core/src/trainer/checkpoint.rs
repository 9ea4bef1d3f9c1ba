use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Moments, TrainerError};
use crate::growth::GrowthMaskState;
use crate::model::{init_parameters, ModelConfig, Parameters};
use crate::numerics::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"GLABCKPT";
const PREFIX_LEN: usize = 8 + 4 + 8;
const DIGEST_LEN: usize = 32;

/// Position of the data generator, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position as a decimal string (exceeds 64 bits).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, TrainerError> {
        let pos: u128 = self.word_pos.parse().map_err(|_| TrainerError::Corrupt("bad rng word position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Complete training state: the unit of growth surgery and resumption.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Parameters<f32>,
    pub moments: Moments<f32>,
    /// Optimizer steps taken over the whole run.
    pub step: u64,
    /// Tokens consumed in each stage so far; the last entry is the active stage.
    pub stage_tokens: Vec<u64>,
    pub total_tokens: u64,
    pub masks: GrowthMaskState,
    pub rng: RngState,
}

impl Checkpoint {
    /// Fresh model: parameters from `init_parameters(config, seed)`, data
    /// generator on a separate stream of the same seed.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, TrainerError> {
        let params = init_parameters::<f32>(config, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Checkpoint {
            config: config.clone(),
            moments: Moments::zeros_like(&params),
            params,
            step: 0,
            stage_tokens: vec![0],
            total_tokens: 0,
            masks: GrowthMaskState::default(),
            rng: RngState::capture(&rng),
        })
    }

    pub fn stage(&self) -> usize {
        self.stage_tokens.len() - 1
    }

    /// Opens a new stage counter.
    pub fn begin_stage(&mut self) {
        self.stage_tokens.push(0);
    }

    /// Deterministic seed for derived randomness (e.g. surgery init).
    pub fn derived_seed(&self, tag: u64) -> u64 {
        let mut h = Sha256::new();
        h.update(self.rng.seed);
        h.update(self.step.to_le_bytes());
        h.update((self.stage_tokens.len() as u64).to_le_bytes());
        h.update(tag.to_le_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TrainerError> {
        let mut entries = Vec::new();
        let mut blob: Vec<u8> = Vec::new();
        for (role, set) in [("param", &self.params), ("adam_m", &self.moments.m), ("adam_v", &self.moments.v)] {
            for (name, t) in set.iter() {
                entries.push(TensorEntry {
                    name: name.to_string(),
                    role: role.to_string(),
                    shape: t.shape().to_vec(),
                    offset: blob.len() as u64,
                });
                blob.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            step: self.step,
            stage_tokens: self.stage_tokens.clone(),
            total_tokens: self.total_tokens,
            masks: self.masks.clone(),
            rng: self.rng.clone(),
            blob_bytes: blob.len() as u64,
            tensors: entries,
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + blob.len() + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&blob);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainerError> {
        if bytes.len() < PREFIX_LEN {
            return Err(TrainerError::Truncated);
        }
        if &bytes[..8] != MAGIC {
            return Err(TrainerError::Corrupt("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(TrainerError::UnsupportedVersion { found: version, expected: FORMAT_VERSION });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = PREFIX_LEN.checked_add(header_len).ok_or(TrainerError::Truncated)?;
        if bytes.len() < header_end + DIGEST_LEN {
            return Err(TrainerError::Truncated);
        }
        let header: Result<Header, _> = serde_json::from_slice(&bytes[PREFIX_LEN..header_end]);
        if let Ok(h) = &header {
            if bytes.len() < header_end + h.blob_bytes as usize + DIGEST_LEN {
                return Err(TrainerError::Truncated);
            }
        }
        let body_end = bytes.len() - DIGEST_LEN;
        if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
            return Err(TrainerError::Checksum);
        }
        let header = header?;
        let blob = &bytes[header_end..body_end];
        if blob.len() as u64 != header.blob_bytes {
            return Err(TrainerError::Corrupt("tensor region length disagrees with header".into()));
        }
        let mut sets: [Vec<(String, Tensor<f32>)>; 3] = Default::default();
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 4 * n;
            let raw = blob.get(start..end).ok_or_else(|| TrainerError::Corrupt(format!("tensor `{}` out of bounds", e.name)))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let t = Tensor::new(e.shape, data).map_err(|err| TrainerError::Corrupt(err.to_string()))?;
            let slot = match e.role.as_str() {
                "param" => 0,
                "adam_m" => 1,
                "adam_v" => 2,
                other => return Err(TrainerError::Corrupt(format!("unknown tensor role `{other}`"))),
            };
            sets[slot].push((e.name, t));
        }
        let [p, m, v] = sets;
        let ckpt = Checkpoint {
            config: header.config,
            params: Parameters::from_named(p),
            moments: Moments { m: Parameters::from_named(m), v: Parameters::from_named(v) },
            step: header.step,
            stage_tokens: header.stage_tokens,
            total_tokens: header.total_tokens,
            masks: header.masks,
            rng: header.rng,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Structural consistency: parameters match the config and every
    /// parameter has moments of the same shape.
    pub fn validate(&self) -> Result<(), TrainerError> {
        self.config.validate()?;
        if !self.params.matches(&self.config) {
            return Err(TrainerError::ShapeMismatch("parameters do not match the config".into()));
        }
        if !self.moments.m.matches(&self.config) || !self.moments.v.matches(&self.config) {
            return Err(TrainerError::ShapeMismatch("optimizer moments do not match the parameters".into()));
        }
        if self.stage_tokens.is_empty() {
            return Err(TrainerError::Corrupt("checkpoint has no stage cursor".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the serialised checkpoint.
    pub fn checksum(&self) -> Result<String, TrainerError> {
        let bytes = self.to_bytes()?;
        Ok(bytes[bytes.len() - DIGEST_LEN..].iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    role: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    step: u64,
    stage_tokens: Vec<u64>,
    total_tokens: u64,
    masks: GrowthMaskState,
    rng: RngState,
    blob_bytes: u64,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), TrainerError> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainerError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::growth::{AxisKind, MaskEntry};

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::init(&ModelConfig::toy(32, 2, 8), 3).unwrap();
        c.step = 17;
        c.total_tokens = 17 * 128;
        c.stage_tokens = vec![1000, 1176];
        c.masks.entries.push(MaskEntry::new(AxisKind::HiddenDim, 16, 32, 333));
        c.masks.advance(100);
        for (_, t) in c.moments.v.iter_mut() {
            for (i, x) in t.data_mut().iter_mut().enumerate() {
                *x = (i as f32 * 0.37).sin().abs() * 1e-7;
            }
        }
        c
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let c = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        save_checkpoint(&c, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), c.to_bytes().unwrap());
    }

    #[test]
    fn flipped_tensor_byte_fails_checksum() {
        let mut bytes = sample().to_bytes().unwrap();
        let i = bytes.len() - DIGEST_LEN - 100;
        bytes[i] ^= 0x10;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(TrainerError::Checksum)));
    }

    #[test]
    fn other_version_is_rejected_explicitly() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        match Checkpoint::from_bytes(&bytes) {
            Err(TrainerError::UnsupportedVersion { found, expected }) => {
                assert_eq!((found, expected), (0, FORMAT_VERSION));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [10, PREFIX_LEN + 5, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(TrainerError::Truncated)), "cut {cut}");
        }
    }

    #[test]
    fn rng_state_resumes_the_stream() {
        use rand::RngCore;
        let mut a = ChaCha8Rng::seed_from_u64(5);
        a.next_u64();
        let st = RngState::capture(&a);
        let mut b = st.restore().unwrap();
        assert_eq!(a.next_u64(), b.next_u64());
    }
}
