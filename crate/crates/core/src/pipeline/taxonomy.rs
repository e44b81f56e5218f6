use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

const BUNDLED: &str = include_str!("../../data/keywords.csv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Style,
    Artist,
    Format,
    Booster,
    Vibe,
    Perspective,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Style,
        Category::Artist,
        Category::Format,
        Category::Booster,
        Category::Vibe,
        Category::Perspective,
    ];

    /// Column header in the keyword file.
    pub fn column(self) -> &'static str {
        match self {
            Category::Style => "Style",
            Category::Artist => "Artist",
            Category::Format => "Format",
            Category::Booster => "Boosters",
            Category::Vibe => "Vibes",
            Category::Perspective => "Perspective",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Category::Style => "style",
            Category::Artist => "artist",
            Category::Format => "format",
            Category::Booster => "booster",
            Category::Vibe => "vibe",
            Category::Perspective => "perspective",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Category {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_lowercase();
        Category::ALL
            .into_iter()
            .find(|c| c.key() == lower || c.column().to_lowercase() == lower)
            .ok_or_else(|| TaxonomyError::UnknownCategory(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaxonomyError {
    #[error("keyword file is empty")]
    Empty,
    #[error("keyword file is missing the {0:?} column")]
    MissingColumn(&'static str),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("keyword file: {0}")]
    Read(String),
}

/// The six keyword categories with their phrases, in file order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordTaxonomy {
    categories: Vec<(Category, Vec<String>)>,
}

impl KeywordTaxonomy {
    /// The keyword table shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled keyword file is valid")
    }

    pub fn bundled_text() -> &'static str {
        BUNDLED
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| TaxonomyError::Read(e.to_string()))?;
        Self::parse(&text)
    }

    /// Parses comma-separated text with a header row naming the six columns.
    /// Extra columns are ignored and blank cells skipped.
    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        if text.trim().is_empty() {
            return Err(TaxonomyError::Empty);
        }
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| TaxonomyError::Read(e.to_string()))?
            .clone();
        let mut columns = Vec::with_capacity(6);
        for cat in Category::ALL {
            let idx = headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(cat.column()))
                .ok_or(TaxonomyError::MissingColumn(cat.column()))?;
            columns.push((cat, idx));
        }
        let mut categories: Vec<(Category, Vec<String>)> =
            Category::ALL.iter().map(|c| (*c, Vec::new())).collect();
        for record in reader.records() {
            let record = record.map_err(|e| TaxonomyError::Read(e.to_string()))?;
            for (slot, &(_, idx)) in columns.iter().enumerate() {
                if let Some(cell) = record.get(idx).filter(|c| !c.is_empty()) {
                    categories[slot].1.push(cell.to_string());
                }
            }
        }
        Ok(Self { categories })
    }

    pub fn keywords(&self, category: Category) -> &[String] {
        &self.categories[category.index()].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (Category, &[String])> {
        self.categories.iter().map(|(c, k)| (*c, k.as_slice()))
    }

    /// Whether `phrase` is listed under `category`, compared after
    /// normalization.
    pub fn contains(&self, category: Category, phrase: &str) -> bool {
        let want = crate::constraint::normalize_phrase(phrase);
        self.keywords(category)
            .iter()
            .any(|k| crate::constraint::normalize_phrase(k) == want)
    }

    /// Every distinct normalized keyword across all categories, sorted.
    pub fn all_phrases(&self) -> Vec<String> {
        let mut all: Vec<String> = self
            .categories
            .iter()
            .flat_map(|(_, ks)| ks.iter().map(|k| crate::constraint::normalize_phrase(k)))
            .collect();
        all.sort();
        all.dedup();
        all
    }
}
