//! Dataset ingestion, tokenization, topic pools, and the interaction log.

mod jsonl;
mod squad;
mod tokenize;
mod topics;
mod tydiqa;

pub use jsonl::{append_interaction, load_interactions, JsonlLog, Loaded};
pub use squad::{load_squad2, parse_squad2, write_squad2};
pub use tokenize::{tokenize, Tokenized};
pub use topics::{load_topic_pool, sample_aspects, sample_prompt, Aspect, Topic, TopicPool, PROMPT_CHOICES};
pub use tydiqa::{load_tydiqa, parse_tydiqa};

use serde::{Deserialize, Serialize};

use crate::types::AnnotatedExample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub source: String,
    pub examples: Vec<AnnotatedExample>,
    /// Entries dropped during ingestion (bad offsets, over-long contexts, ...).
    #[serde(default)]
    pub skipped: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}
