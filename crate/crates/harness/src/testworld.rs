//! Deterministic synthetic fixtures: a closed world of entities with
//! attribute facts, plus a provider that answers every pipeline stage from
//! exact set membership. Gives the whole pipeline an offline oracle.
//!
//! Rules:
//! - candidate generation returns every entity name (worlds are capped at
//!   the candidate limit);
//! - a hint applies to an entity iff the hint string is one of that
//!   entity's attributes;
//! - the answering model returns the gold entity's name iff the passage
//!   contains at least one attribute unique to the gold entity, otherwise
//!   a fixed wrong name. The answer depends only on the set of passage
//!   lines, never their order.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use convqa_core::chat::ChatRequest;
use convqa_core::convergence::{convergence_score, MAX_CANDIDATES};
use convqa_core::corpus::{Corpus, GoldAnswer, Question};
use convqa_core::qa::SYSTEM_PROMPT;

use crate::gateway::{canonical_json, GatewayError, Provider, ProviderReply};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldEntity {
    pub name: String,
    pub attributes: Vec<String>,
}

/// The closed world plus the question-to-gold-entity map the provider
/// needs to grade answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct World {
    pub entities: Vec<WorldEntity>,
    /// question text -> gold entity name
    pub gold_by_question: BTreeMap<String, String>,
}

impl World {
    pub fn entity(&self, name: &str) -> Option<&WorldEntity> {
        self.entities.iter().find(|e| e.name == name)
    }

    fn holders(&self, attribute: &str) -> usize {
        self.entities
            .iter()
            .filter(|e| e.attributes.iter().any(|a| a == attribute))
            .count()
    }

    /// True iff exactly one entity holds the attribute and it is `name`.
    pub fn unique_to(&self, attribute: &str, name: &str) -> bool {
        self.holders(attribute) == 1
            && self
                .entity(name)
                .is_some_and(|e| e.attributes.iter().any(|a| a == attribute))
    }

    /// Direct Eq.-1 evaluation of a hint against this world: the
    /// independent oracle the scoring pipeline is checked against.
    pub fn expected_hint_score(&self, gold_name: &str, hint: &str) -> f64 {
        let related = self
            .entity(gold_name)
            .is_some_and(|e| e.attributes.iter().any(|a| a == hint));
        convergence_score(self.entities.len(), self.holders(hint), related)
    }

    fn fingerprint(&self) -> String {
        let value = serde_json::to_value(self).expect("world serializes");
        let digest = Sha256::digest(canonical_json(&value).as_bytes());
        hex::encode(&digest[..6])
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("world io at `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad world file `{path}`: {reason}")]
    Bad { path: String, reason: String },
}

pub fn save_world(world: &World, path: impl AsRef<Path>) -> Result<(), WorldError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(world).expect("world serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| WorldError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_world(path: impl AsRef<Path>) -> Result<World, WorldError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| WorldError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| WorldError::Bad {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Per-question hint mix. Every question gets hints spanning the full
/// score range: unique-to-gold (score 1), shared-by-all (lowest related
/// score), mid-shared, and unrelated (score 0).
///
/// The proportions are load-bearing for worlds of >= 3 entities: the five
/// near-zero hints (unrelated plus shared-by-all) admit 16 subsets of
/// sizes 3-5 whose averages stay below (1 + 2/n)/5, the smallest value a
/// unique-containing subset of size <= 5 can take, so the bottom-10 group
/// never contains a unique attribute and the rule answerer fails it;
/// conversely more than 10 subsets hold two or more unique hints, pinning
/// the top-10 group to answerable passages.
const UNIQUE_HINTS: usize = 3;
const SHARED_ALL_HINTS: usize = 2;
const MID_SHARED_HINTS: usize = 1;
const UNRELATED_HINTS: usize = 3;

/// Hints per generated question.
pub const HINTS_PER_QUESTION: usize =
    UNIQUE_HINTS + SHARED_ALL_HINTS + MID_SHARED_HINTS + UNRELATED_HINTS;

/// Generate a reproducible world with one question per entity.
///
/// `n_attributes` is the number of unique attributes minted per entity
/// (at least the number of unique hints each question needs).
pub fn generate_world(seed: u64, n_entities: usize, n_attributes: usize) -> (World, Corpus) {
    let n_entities = n_entities.clamp(2, MAX_CANDIDATES);
    let n_attributes = n_attributes.max(UNIQUE_HINTS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut entities: Vec<WorldEntity> = (0..n_entities)
        .map(|i| WorldEntity {
            name: format!("entity-{i:02}"),
            attributes: (0..n_attributes)
                .map(|k| format!("bears the singular mark {i:02}-{k}"))
                .collect(),
        })
        .collect();

    // Attributes shared by every entity.
    let shared_all: Vec<String> = (0..SHARED_ALL_HINTS)
        .map(|j| format!("belongs to the common guild {j}"))
        .collect();
    for entity in &mut entities {
        entity.attributes.extend(shared_all.iter().cloned());
    }

    let mut gold_by_question = BTreeMap::new();
    let mut questions = Vec::new();
    for gi in 0..n_entities {
        let question_text = format!("Which entity matches dossier {seed}-{gi:02}?");
        let gold_name = entities[gi].name.clone();

        let mut hints: Vec<String> = Vec::with_capacity(HINTS_PER_QUESTION);
        // Unique: the gold entity's own marks.
        for k in 0..UNIQUE_HINTS {
            hints.push(entities[gi].attributes[k].clone());
        }
        hints.extend(shared_all.iter().cloned());
        // Mid-shared: gold plus a random subset of others.
        for j in 0..MID_SHARED_HINTS {
            let attribute = format!("wears the sigil {seed}-{gi:02}-{j}");
            let max_extra = (n_entities - 1).max(1);
            let extra = rng.random_range(1..=max_extra.min(n_entities / 2 + 1));
            let mut others: Vec<usize> = (0..n_entities).filter(|&e| e != gi).collect();
            others.shuffle(&mut rng);
            entities[gi].attributes.push(attribute.clone());
            for &e in others.iter().take(extra) {
                entities[e].attributes.push(attribute.clone());
            }
            hints.push(attribute);
        }
        // Unrelated: held by 1..=2 non-gold entities only.
        for j in 0..UNRELATED_HINTS {
            let attribute = format!("haunts the far province {seed}-{gi:02}-{j}");
            let holders = rng.random_range(1..=2usize.min(n_entities - 1));
            let mut others: Vec<usize> = (0..n_entities).filter(|&e| e != gi).collect();
            others.shuffle(&mut rng);
            for &e in others.iter().take(holders) {
                entities[e].attributes.push(attribute.clone());
            }
            hints.push(attribute);
        }
        hints.shuffle(&mut rng);

        gold_by_question.insert(question_text.clone(), gold_name.clone());
        questions.push(Question {
            id: format!("w{seed}-q{gi:02}"),
            text: question_text,
            answer: GoldAnswer {
                text: gold_name,
                aliases: vec![],
            },
            hints,
        });
    }

    (
        World {
            entities,
            gold_by_question,
        },
        Corpus {
            questions,
            source_path: format!("generated://seed-{seed}"),
        },
    )
}

/// Provider that answers generation, judgment, and QA prompts from the
/// world's facts, and embeds via the seeded hash embedder.
pub struct WorldProvider {
    world: World,
    base_url: String,
    embedding_dim: usize,
    embedding_seed: u64,
}

impl WorldProvider {
    pub fn new(world: World) -> WorldProvider {
        let base_url = format!("world://{}", world.fingerprint());
        WorldProvider {
            world,
            base_url,
            embedding_dim: 48,
            embedding_seed: 0,
        }
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    fn generation_reply(&self) -> String {
        self.world
            .entities
            .iter()
            .take(MAX_CANDIDATES)
            .enumerate()
            .map(|(i, e)| format!("{}. {}", i + 1, e.name))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn judgment_reply(&self, hint: &str, candidate: &str) -> Result<String, GatewayError> {
        let entity = self.world.entity(candidate).ok_or_else(|| {
            GatewayError::InvalidRequest(format!("unknown entity `{candidate}`"))
        })?;
        let applies = entity.attributes.iter().any(|a| a == hint);
        Ok(if applies { "Yes" } else { "No" }.to_string())
    }

    fn answer_reply(&self, passage: &str, question: &str) -> Result<String, GatewayError> {
        let gold = self.world.gold_by_question.get(question).ok_or_else(|| {
            GatewayError::InvalidRequest(format!("unknown question `{question}`"))
        })?;
        let answerable = passage
            .lines()
            .any(|line| self.world.unique_to(line.trim(), gold));
        if answerable {
            return Ok(gold.clone());
        }
        let wrong = self
            .world
            .entities
            .iter()
            .map(|e| &e.name)
            .find(|name| *name != gold)
            .ok_or_else(|| GatewayError::InvalidRequest("world has a single entity".into()))?;
        Ok(wrong.clone())
    }
}

fn line_value<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|line| line.strip_prefix(marker))
        .map(str::trim)
}

impl Provider for WorldProvider {
    fn chat(&self, req: &ChatRequest) -> Result<ProviderReply, GatewayError> {
        let rendered = req.rendered_text();
        let content = if rendered.contains(SYSTEM_PROMPT) {
            // QA prompt: the target context/question are the final blocks.
            let context_at = rendered.rfind("\n\nContext:\n").ok_or_else(|| {
                GatewayError::ScriptMiss {
                    rendered: rendered.clone(),
                }
            })?;
            let tail = &rendered[context_at + "\n\nContext:\n".len()..];
            let question_at = tail.rfind("\n\nQuestion: ").ok_or_else(|| {
                GatewayError::ScriptMiss {
                    rendered: rendered.clone(),
                }
            })?;
            let passage = &tail[..question_at];
            let question = tail[question_at + "\n\nQuestion: ".len()..].trim();
            self.answer_reply(passage, question)?
        } else if rendered.contains("List plausible candidate answers") {
            self.generation_reply()
        } else if let (Some(hint), Some(candidate)) = (
            line_value(&rendered, "Hint: "),
            line_value(&rendered, "Candidate answer: "),
        ) {
            self.judgment_reply(hint, candidate)?
        } else {
            return Err(GatewayError::ScriptMiss { rendered });
        };
        Ok(ProviderReply {
            content,
            finish_reason: convqa_core::chat::FinishReason::Stop,
        })
    }

    fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        Ok(texts
            .iter()
            .map(|t| crate::gateway::hash_embedding(self.embedding_seed, self.embedding_dim, t))
            .collect())
    }

    fn base_url(&self) -> &str {
        &self.base_url
    }
}
