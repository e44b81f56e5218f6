//! Corpus preparation, the keyword taxonomy and clause construction.

mod clauses;
mod corpus;
mod prefix;
mod taxonomy;

pub use clauses::{
    build_clauses, CategorySelection, ClauseError, ClauseSelection, KEYWORDS_PER_CLAUSE,
    NEGATIVE_LABEL,
};
pub use corpus::{
    bundled_eval_prompts, bundled_train_prompts, bundled_training_records, bundled_vocabulary,
    process_corpus, process_prompt, write_records, CorpusRecord,
};
pub use prefix::{
    extract_prefix, overlap_filter, overlap_filter_with, Similarity, TokenJaccard,
    DEFAULT_OVERLAP_THRESHOLD,
};
pub use taxonomy::{Category, KeywordTaxonomy, TaxonomyError};
