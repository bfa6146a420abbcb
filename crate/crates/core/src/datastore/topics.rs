use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Context, DEFAULT_MAX_CONTEXT_LEN};

/// How many topics (and then aspects) a user is offered.
pub const PROMPT_CHOICES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aspect {
    pub name: String,
    pub context: Context,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub name: String,
    pub intro: String,
    pub aspects: Vec<Aspect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicPool {
    pub topics: Vec<Topic>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPool {
    topics: Vec<RawTopic>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopic {
    name: String,
    #[serde(default)]
    intro: String,
    aspects: Vec<RawAspect>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAspect {
    name: String,
    context: String,
}

impl TopicPool {
    /// Parse `{"topics": [{"name", "intro", "aspects": [{"name", "context"}]}]}`.
    pub fn from_json(raw: &str) -> Result<Self> {
        let raw: RawPool =
            serde_json::from_str(raw).map_err(|e| Error::Ingestion(format!("invalid topic pool: {e}")))?;
        let topics = raw
            .topics
            .into_iter()
            .map(|t| {
                let aspects = t
                    .aspects
                    .into_iter()
                    .map(|a| {
                        Ok(Aspect {
                            context: Context::new(&a.context)
                                .map_err(|e| Error::Ingestion(format!("{} / {}: {e}", t.name, a.name)))?,
                            name: a.name,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Topic { name: t.name, intro: t.intro, aspects })
            })
            .collect::<Result<Vec<_>>>()?;
        let pool = TopicPool { topics };
        pool.validate()?;
        Ok(pool)
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.topics {
            if t.aspects.len() < PROMPT_CHOICES {
                return Err(Error::Ingestion(format!(
                    "topic {:?} has {} aspects, at least {PROMPT_CHOICES} required",
                    t.name,
                    t.aspects.len()
                )));
            }
            if let Some(a) = t.aspects.iter().find(|a| a.context.len() > DEFAULT_MAX_CONTEXT_LEN) {
                return Err(Error::Ingestion(format!(
                    "aspect {:?} of {:?} exceeds {DEFAULT_MAX_CONTEXT_LEN} tokens",
                    a.name, t.name
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let v = serde_json::json!({
            "topics": self.topics.iter().map(|t| serde_json::json!({
                "name": t.name,
                "intro": t.intro,
                "aspects": t.aspects.iter().map(|a| serde_json::json!({
                    "name": a.name,
                    "context": a.context.raw_text,
                })).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        });
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

pub fn load_topic_pool(path: impl AsRef<Path>) -> Result<TopicPool> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::Ingestion(format!("cannot read {}: {e}", path.display())))?;
    TopicPool::from_json(&raw)
}

/// Four distinct topic indices, uniformly without replacement.
pub fn sample_prompt<R: Rng + ?Sized>(pool: &TopicPool, rng: &mut R) -> Result<Vec<usize>> {
    if pool.topics.len() < PROMPT_CHOICES {
        return Err(Error::Config(format!(
            "topic pool has {} topics, at least {PROMPT_CHOICES} required",
            pool.topics.len()
        )));
    }
    Ok(index::sample(rng, pool.topics.len(), PROMPT_CHOICES).into_vec())
}

/// Four distinct aspect indices of one topic.
pub fn sample_aspects<R: Rng + ?Sized>(topic: &Topic, rng: &mut R) -> Result<Vec<usize>> {
    if topic.aspects.len() < PROMPT_CHOICES {
        return Err(Error::Config(format!("topic {:?} has too few aspects", topic.name)));
    }
    Ok(index::sample(rng, topic.aspects.len(), PROMPT_CHOICES).into_vec())
}
