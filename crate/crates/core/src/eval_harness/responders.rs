//! Responders: the HTTP chat adapter plus scripted models for offline runs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::client::{ChatModel, ChatRequest, QueryError};
use super::prompt::Prompt;
use super::runner::Responder;
use crate::benchmark_build::{BenchmarkItem, BenchmarkManifest};

/// Sends the prompt and both images to a chat model.
pub struct ChatResponder<M> {
    pub model: M,
}

impl<M: ChatModel> Responder for ChatResponder<M> {
    fn name(&self) -> &str {
        self.model.name()
    }

    fn respond(&self, _item: &BenchmarkItem, prompt: &Prompt) -> Result<String, QueryError> {
        let images = prompt
            .images
            .iter()
            .map(|p| {
                std::fs::read(p).map_err(|e| QueryError::Config(format!("cannot read {}: {e}", p.display())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let reply = self.model.chat(&ChatRequest {
            system: Some(prompt.system.clone()),
            text: prompt.user.clone(),
            images,
            ..Default::default()
        })?;
        Ok(reply.text)
    }
}

/// Answers from a key: `pair_id → letter`.
pub struct KeyReader {
    name: String,
    answers: BTreeMap<String, char>,
}

impl KeyReader {
    pub fn new(name: &str, answers: BTreeMap<String, char>) -> Self {
        Self {
            name: name.to_string(),
            answers,
        }
    }

    pub fn from_manifest(name: &str, manifest: &BenchmarkManifest) -> Self {
        Self::new(
            name,
            manifest.items.iter().map(|i| (i.pair_id.clone(), i.answer_letter)).collect(),
        )
    }
}

impl Responder for KeyReader {
    fn name(&self) -> &str {
        &self.name
    }

    fn respond(&self, item: &BenchmarkItem, _: &Prompt) -> Result<String, QueryError> {
        Ok(match self.answers.get(&item.pair_id) {
            Some(c) => format!("The inconsistent object is {c}.\n{c}"),
            None => "I cannot tell.".to_string(),
        })
    }
}

pub struct AlwaysLetter {
    name: String,
    letter: char,
}

impl AlwaysLetter {
    pub fn new(letter: char) -> Self {
        Self {
            name: format!("always-{letter}"),
            letter,
        }
    }
}

impl Responder for AlwaysLetter {
    fn name(&self) -> &str {
        &self.name
    }

    fn respond(&self, _: &BenchmarkItem, _: &Prompt) -> Result<String, QueryError> {
        Ok(self.letter.to_string())
    }
}

/// Picks uniformly among the valid letters. The draw for an item depends
/// only on the seed and the pair id, so runs are reproducible in any order.
pub struct UniformGuesser {
    name: String,
    seed: u64,
}

impl UniformGuesser {
    pub fn new(seed: u64) -> Self {
        Self {
            name: format!("uniform-{seed}"),
            seed,
        }
    }

    pub fn guess(&self, pair_id: &str, valid: &[char]) -> char {
        let h = Sha256::digest(pair_id.as_bytes());
        let mix = u64::from_le_bytes(h[..8].try_into().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ mix);
        valid[rng.random_range(0..valid.len())]
    }
}

impl Responder for UniformGuesser {
    fn name(&self) -> &str {
        &self.name
    }

    fn respond(&self, item: &BenchmarkItem, prompt: &Prompt) -> Result<String, QueryError> {
        Ok(self.guess(&item.pair_id, &prompt.valid).to_string())
    }
}
