use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Category, KeywordTaxonomy};
use crate::constraint::{normalize_phrase, Clause, ConstraintSpec};
use crate::lm::split_words;

/// Keywords sampled per category in auto mode.
pub const KEYWORDS_PER_CLAUSE: usize = 5;

pub const NEGATIVE_LABEL: &str = "negative";

/// Either `"auto"` or an explicit keyword list. An empty list drops the
/// category.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSelection", into = "RawSelection")]
pub enum CategorySelection {
    #[default]
    Auto,
    Keywords(Vec<String>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawSelection {
    Tag(String),
    List(Vec<String>),
}

impl TryFrom<RawSelection> for CategorySelection {
    type Error = String;

    fn try_from(raw: RawSelection) -> Result<Self, String> {
        match raw {
            RawSelection::Tag(t) if t == "auto" => Ok(Self::Auto),
            RawSelection::Tag(t) => Err(format!("expected \"auto\" or a keyword list, got {t:?}")),
            RawSelection::List(l) => Ok(Self::Keywords(l)),
        }
    }
}

impl From<CategorySelection> for RawSelection {
    fn from(s: CategorySelection) -> Self {
        match s {
            CategorySelection::Auto => RawSelection::Tag("auto".into()),
            CategorySelection::Keywords(l) => RawSelection::List(l),
        }
    }
}

/// User choices for the six keyword clauses plus negative phrases.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClauseSelection {
    #[serde(alias = "styles")]
    pub style: CategorySelection,
    #[serde(alias = "artists")]
    pub artist: CategorySelection,
    #[serde(alias = "formats")]
    pub format: CategorySelection,
    #[serde(alias = "boosters")]
    pub booster: CategorySelection,
    #[serde(alias = "vibes")]
    pub vibe: CategorySelection,
    #[serde(alias = "perspectives")]
    pub perspective: CategorySelection,
    pub negative_phrases: Vec<String>,
    /// Accept explicit keywords that are not in the taxonomy.
    pub allow_custom: bool,
    pub seed: u64,
}

impl ClauseSelection {
    pub fn auto(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn get(&self, category: Category) -> &CategorySelection {
        match category {
            Category::Style => &self.style,
            Category::Artist => &self.artist,
            Category::Format => &self.format,
            Category::Booster => &self.booster,
            Category::Vibe => &self.vibe,
            Category::Perspective => &self.perspective,
        }
    }

    pub fn get_mut(&mut self, category: Category) -> &mut CategorySelection {
        match category {
            Category::Style => &mut self.style,
            Category::Artist => &mut self.artist,
            Category::Format => &mut self.format,
            Category::Booster => &mut self.booster,
            Category::Vibe => &mut self.vibe,
            Category::Perspective => &mut self.perspective,
        }
    }

    pub fn with(mut self, category: Category, selection: CategorySelection) -> Self {
        *self.get_mut(category) = selection;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClauseError {
    #[error("{keyword:?} is not a {category} keyword (set allow_custom to use it)")]
    UnknownKeyword { category: Category, keyword: String },
    #[error("empty keyword in {0} selection")]
    EmptyKeyword(Category),
    #[error("keyword {keyword:?} is required but contains the negative phrase {negative:?}")]
    Conflict { keyword: String, negative: String },
    #[error("only {available} {category} keywords remain after excluding negative phrases")]
    TooFewKeywords { category: Category, available: usize },
}

impl ClauseError {
    /// Contradictory selections rather than malformed ones.
    pub fn is_conflict(&self) -> bool {
        matches!(self, ClauseError::Conflict { .. })
    }
}

fn contains_words(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

fn conflicting<'a>(keyword: &str, negatives: &'a [(String, Vec<String>)]) -> Option<&'a str> {
    let words = split_words(keyword);
    negatives
        .iter()
        .find(|(_, neg)| contains_words(&words, neg))
        .map(|(n, _)| n.as_str())
}

/// Builds one clause per category (min 1) plus an exclusion clause for the
/// negative phrases.
///
/// Auto categories sample [`KEYWORDS_PER_CLAUSE`] distinct keywords with a
/// ChaCha8 stream keyed by the seed and the category. Keywords that would
/// emit a negative phrase are never sampled; explicitly requesting one is a
/// [`ClauseError::Conflict`].
pub fn build_clauses(
    taxonomy: &KeywordTaxonomy,
    selection: &ClauseSelection,
) -> Result<ConstraintSpec, ClauseError> {
    let mut negatives: Vec<(String, Vec<String>)> = Vec::new();
    for phrase in &selection.negative_phrases {
        let norm = normalize_phrase(phrase);
        if !norm.is_empty() && !negatives.iter().any(|(n, _)| *n == norm) {
            let words = split_words(&norm);
            negatives.push((norm, words));
        }
    }

    let mut clauses = Vec::new();
    for category in Category::ALL {
        let keywords = match selection.get(category) {
            CategorySelection::Auto => {
                let mut pool: Vec<String> = Vec::new();
                for k in taxonomy.keywords(category) {
                    let k = normalize_phrase(k);
                    if !pool.contains(&k) && conflicting(&k, &negatives).is_none() {
                        pool.push(k);
                    }
                }
                if pool.len() < KEYWORDS_PER_CLAUSE {
                    return Err(ClauseError::TooFewKeywords {
                        category,
                        available: pool.len(),
                    });
                }
                let mut rng = ChaCha8Rng::seed_from_u64(selection.seed);
                rng.set_stream(category.index() as u64);
                let mut picked = rand::seq::index::sample(&mut rng, pool.len(), KEYWORDS_PER_CLAUSE)
                    .into_vec();
                picked.sort_unstable();
                picked.into_iter().map(|i| pool[i].clone()).collect::<Vec<_>>()
            }
            CategorySelection::Keywords(list) => {
                let mut chosen: Vec<String> = Vec::new();
                for raw in list {
                    let k = normalize_phrase(raw);
                    if k.is_empty() {
                        return Err(ClauseError::EmptyKeyword(category));
                    }
                    if !selection.allow_custom && !taxonomy.contains(category, &k) {
                        return Err(ClauseError::UnknownKeyword {
                            category,
                            keyword: raw.clone(),
                        });
                    }
                    if let Some(neg) = conflicting(&k, &negatives) {
                        return Err(ClauseError::Conflict {
                            keyword: k,
                            negative: neg.to_string(),
                        });
                    }
                    if !chosen.contains(&k) {
                        chosen.push(k);
                    }
                }
                chosen
            }
        };
        if !keywords.is_empty() {
            clauses.push(Clause::any_of(keywords).with_label(category.key()));
        }
    }
    if !negatives.is_empty() {
        clauses.push(Clause::exclude(negatives.iter().map(|(n, _)| n)).with_label(NEGATIVE_LABEL));
    }
    Ok(ConstraintSpec::new(clauses))
}
