use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainerError;
use crate::tokenizer::PAD;

/// One training sequence: `tokens` holds `len + 1` ids, the model reads the
/// first `len` and predicts the last `len`. `loss_mask[i]` weights the
/// prediction of `tokens[i + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub tokens: Vec<u32>,
    pub loss_mask: Vec<f32>,
}

impl Sample {
    /// Plain language sample supervised at every position.
    pub fn language(tokens: Vec<u32>) -> Self {
        let n = tokens.len().saturating_sub(1);
        Sample { tokens, loss_mask: vec![1.0; n] }
    }

    pub fn inputs(&self) -> &[u32] {
        &self.tokens[..self.tokens.len() - 1]
    }

    pub fn targets(&self) -> &[u32] {
        &self.tokens[1..]
    }
}

/// A fixed-size group of samples, all of the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub samples: Vec<Sample>,
}

impl Batch {
    pub fn seq_len(&self) -> usize {
        self.samples.first().map_or(0, |s| s.tokens.len() - 1)
    }

    pub fn tokens(&self) -> u64 {
        (self.samples.len() * self.seq_len()) as u64
    }

    pub fn inputs(&self) -> Vec<&[u32]> {
        self.samples.iter().map(Sample::inputs).collect()
    }

    pub fn targets(&self) -> Vec<u32> {
        self.samples.iter().flat_map(|s| s.targets().iter().copied()).collect()
    }

    pub fn weights(&self) -> Vec<f32> {
        self.samples.iter().flat_map(|s| s.loss_mask.iter().copied()).collect()
    }
}

/// Something that produces training sequences from a random stream.
///
/// Sources hold no cursor of their own; all sampling state lives in the
/// caller's generator, so a checkpointed generator resumes the data exactly.
pub trait DataSource: Send + Sync {
    fn sample(&self, rng: &mut ChaCha8Rng, len: usize) -> Result<Sample, TrainerError>;
}

/// Random windows over a flat token stream.
#[derive(Clone, Debug)]
pub struct TokenStream {
    pub name: String,
    pub tokens: Arc<Vec<u32>>,
}

impl TokenStream {
    pub fn new(name: impl Into<String>, tokens: Vec<u32>) -> Self {
        TokenStream { name: name.into(), tokens: Arc::new(tokens) }
    }

    pub fn load(name: impl Into<String>, path: &Path) -> Result<Self, TrainerError> {
        Ok(Self::new(name, read_token_file(path)?))
    }
}

impl DataSource for TokenStream {
    fn sample(&self, rng: &mut ChaCha8Rng, len: usize) -> Result<Sample, TrainerError> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(TrainerError::EmptyStream(self.name.clone()));
        }
        if n > len {
            let start = rng.random_range(0..=n - (len + 1));
            return Ok(Sample::language(self.tokens[start..start + len + 1].to_vec()));
        }
        // Short stream: pad and supervise only the real transitions.
        let mut tokens = self.tokens.to_vec();
        tokens.resize(len + 1, PAD);
        let loss_mask = (0..len).map(|i| if i + 1 < n { 1.0 } else { 0.0 }).collect();
        Ok(Sample { tokens, loss_mask })
    }
}

/// Writes ids as consecutive little-endian `u32`s.
pub fn write_token_file(path: &Path, tokens: &[u32]) -> Result<(), TrainerError> {
    let bytes: Vec<u8> = tokens.iter().flat_map(|t| t.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_token_file(path: &Path) -> Result<Vec<u32>, TrainerError> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(TrainerError::Corrupt(format!("{}: length {} is not a multiple of 4", path.display(), bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Index of token streams on disk with their mixing weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub streams: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub path: PathBuf,
    pub length: u64,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, TrainerError> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| TrainerError::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainerError> {
        let text = toml::to_string(self).map_err(|e| TrainerError::InvalidConfig(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    /// Adds or replaces the entry called `entry.name`.
    pub fn upsert(&mut self, entry: ManifestEntry) {
        match self.streams.iter_mut().find(|e| e.name == entry.name) {
            Some(e) => *e = entry,
            None => self.streams.push(entry),
        }
    }

    pub fn mix_spec(&self) -> MixSpec {
        MixSpec { weights: self.streams.iter().map(|e| (e.name.clone(), e.weight)).collect() }
    }

    /// Loads every stream, resolving relative paths against `base`.
    pub fn open(&self, base: &Path) -> Result<Vec<(String, Arc<dyn DataSource>)>, TrainerError> {
        self.streams
            .iter()
            .map(|e| {
                let p = if e.path.is_absolute() { e.path.clone() } else { base.join(&e.path) };
                let s: Arc<dyn DataSource> = Arc::new(TokenStream::load(e.name.clone(), &p)?);
                Ok((e.name.clone(), s))
            })
            .collect()
    }
}

/// Named stream weights; normalised when a [`Mixer`] is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub weights: Vec<(String, f64)>,
}

impl MixSpec {
    pub fn new<S: Into<String>>(weights: impl IntoIterator<Item = (S, f64)>) -> Self {
        MixSpec { weights: weights.into_iter().map(|(n, w)| (n.into(), w)).collect() }
    }
}

/// Draws each sample's source independently, so every batch interleaves
/// the streams in proportion to their weights.
#[derive(Clone)]
pub struct Mixer {
    names: Vec<String>,
    sources: Vec<Arc<dyn DataSource>>,
    probs: Vec<f64>,
    index: WeightedIndex<f64>,
}

impl Mixer {
    pub fn new(spec: &MixSpec, sources: Vec<(String, Arc<dyn DataSource>)>) -> Result<Self, TrainerError> {
        if spec.weights.is_empty() {
            return Err(TrainerError::InvalidConfig("mix spec names no streams".into()));
        }
        let mut names = Vec::new();
        let mut picked = Vec::new();
        let mut weights = Vec::new();
        for (name, w) in &spec.weights {
            if !(*w > 0.0 && w.is_finite()) {
                return Err(TrainerError::InvalidConfig(format!("stream `{name}` has non-positive weight {w}")));
            }
            let src = sources
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| TrainerError::UnknownStream(name.clone()))?;
            names.push(name.clone());
            picked.push(src.1.clone());
            weights.push(*w);
        }
        let total: f64 = weights.iter().sum();
        let index = WeightedIndex::new(&weights).map_err(|e| TrainerError::InvalidConfig(e.to_string()))?;
        Ok(Mixer { names, sources: picked, probs: weights.iter().map(|w| w / total).collect(), index })
    }

    /// Single-source mixer.
    pub fn single(name: &str, source: Arc<dyn DataSource>) -> Self {
        Self::new(&MixSpec::new([(name, 1.0)]), vec![(name.to_string(), source)]).expect("one positive weight")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// Draws one sample; returns the index of its source.
    pub fn draw(&self, rng: &mut ChaCha8Rng, len: usize) -> Result<(usize, Sample), TrainerError> {
        let i = self.index.sample(rng);
        Ok((i, self.sources[i].sample(rng, len)?))
    }

    pub fn batch(&self, rng: &mut ChaCha8Rng, batch_size: usize, len: usize) -> Result<Batch, TrainerError> {
        let samples = (0..batch_size).map(|_| self.draw(rng, len).map(|(_, s)| s)).collect::<Result<_, _>>()?;
        Ok(Batch { samples })
    }
}

/// Endless iterator of `(source name, sample)` pairs.
pub struct MixedStream {
    mixer: Mixer,
    rng: ChaCha8Rng,
    len: usize,
}

impl Iterator for MixedStream {
    type Item = Result<(String, Sample), TrainerError>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.mixer.draw(&mut self.rng, self.len).map(|(i, s)| (self.mixer.names[i].clone(), s)))
    }
}

pub fn mix_streams(
    spec: &MixSpec,
    sources: Vec<(String, Arc<dyn DataSource>)>,
    seed: u64,
    len: usize,
) -> Result<MixedStream, TrainerError> {
    Ok(MixedStream { mixer: Mixer::new(spec, sources)?, rng: ChaCha8Rng::seed_from_u64(seed), len })
}
