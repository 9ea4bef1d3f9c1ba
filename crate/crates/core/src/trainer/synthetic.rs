//! Synthetic token sources for desk-scale runs.

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use super::{DataSource, Sample, TrainerError};
use crate::evalgen::{self, Family};
use crate::tokenizer::{encode, LABEL_NEG, LABEL_POS, PAD};

/// `r | r | r ...` for a random lowercase string `r` of half the context.
#[derive(Clone, Debug)]
pub struct CopyTask {
    pub alphabet: u8,
}

impl Default for CopyTask {
    fn default() -> Self {
        CopyTask { alphabet: 16 }
    }
}

impl DataSource for CopyTask {
    fn sample(&self, rng: &mut ChaCha8Rng, len: usize) -> Result<Sample, TrainerError> {
        let k = (len / 2).max(1);
        let r: Vec<u32> = (0..k).map(|_| (b'a' + rng.random_range(0..self.alphabet.clamp(1, 26))) as u32).collect();
        let mut tokens = Vec::with_capacity(len + 1);
        while tokens.len() < len + 1 {
            tokens.extend_from_slice(&r);
            tokens.push(b'|' as u32);
        }
        tokens.truncate(len + 1);
        Ok(Sample::language(tokens))
    }
}

/// Byte text of solved evaluation items (`prompt gold` per line).
#[derive(Clone, Debug)]
pub struct TaskText {
    pub families: Vec<Family>,
}

impl TaskText {
    pub fn pattern_mining() -> Self {
        TaskText { families: vec![Family::HeadTail, Family::FullRepeating, Family::HeadSlicing] }
    }
}

impl DataSource for TaskText {
    fn sample(&self, rng: &mut ChaCha8Rng, len: usize) -> Result<Sample, TrainerError> {
        let mut tokens = Vec::with_capacity(len + 64);
        while tokens.len() < len + 1 {
            let family = *self.families.choose(rng).ok_or_else(|| TrainerError::EmptyStream("task text".into()))?;
            let inst = evalgen::generate(family, 1, None, rng.next_u64())
                .map_err(|e| TrainerError::InvalidConfig(e.to_string()))?
                .remove(0);
            tokens.extend(encode(&format!("{} {}\n", inst.prompt, inst.gold)));
        }
        tokens.truncate(len + 1);
        Ok(Sample::language(tokens))
    }
}

const POSITIVE: &[&str] = &["good", "great", "fine", "nice", "happy", "bright"];
const NEGATIVE: &[&str] = &["bad", "poor", "sad", "dull", "awful", "grim"];

/// Teacher samples: a short word list followed by one of two reserved
/// label tokens (majority sentiment). Only the label is supervised.
#[derive(Clone, Debug, Default)]
pub struct TeacherTask;

impl DataSource for TeacherTask {
    fn sample(&self, rng: &mut ChaCha8Rng, len: usize) -> Result<Sample, TrainerError> {
        let mut k = *[3usize, 5, 7].choose(rng).expect("non-empty");
        loop {
            let mut pos = 0;
            let words: Vec<&str> = (0..k)
                .map(|_| {
                    if rng.random_bool(0.5) {
                        pos += 1;
                        *POSITIVE.choose(rng).expect("non-empty")
                    } else {
                        *NEGATIVE.choose(rng).expect("non-empty")
                    }
                })
                .collect();
            let mut tokens = encode(&format!("{} =>", words.join(" ")));
            if tokens.len() + 1 > len + 1 && k > 1 {
                k -= 2;
                continue;
            }
            tokens.truncate(len);
            let label_at = tokens.len();
            tokens.push(if 2 * pos > k { LABEL_POS } else { LABEL_NEG });
            tokens.resize(len + 1, PAD);
            let mut loss_mask = vec![0.0; len];
            loss_mask[label_at - 1] = 1.0;
            return Ok(Sample { tokens, loss_mask });
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn copy_task_repeats_its_prefix() {
        let s = CopyTask::default().sample(&mut ChaCha8Rng::seed_from_u64(1), 32).unwrap();
        assert_eq!(s.tokens.len(), 33);
        assert_eq!(s.tokens[16], b'|' as u32);
        assert_eq!(s.tokens[..16], s.tokens[17..33]);
    }

    #[test]
    fn teacher_sample_supervises_only_the_label() {
        let s = TeacherTask.sample(&mut ChaCha8Rng::seed_from_u64(2), 32).unwrap();
        assert_eq!(s.loss_mask.iter().filter(|&&w| w == 1.0).count(), 1);
        let at = s.loss_mask.iter().position(|&w| w == 1.0).unwrap();
        assert!(s.tokens[at + 1] == LABEL_POS || s.tokens[at + 1] == LABEL_NEG);
    }

    #[test]
    fn task_text_fills_the_window() {
        let s = TaskText::pattern_mining().sample(&mut ChaCha8Rng::seed_from_u64(3), 64).unwrap();
        assert_eq!(s.tokens.len(), 65);
        assert!(s.tokens.iter().all(|&t| t < 256));
    }
}
