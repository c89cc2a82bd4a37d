//! Paraphrase-pair mining: edit distance, Word Mover's Distance, embedding
//! retrieval, back translation and pair filtering.

mod embeddings;
mod levenshtein;
mod pairs;
mod retrieval;
mod translate;
mod wmd;

pub use embeddings::Embeddings;
pub use levenshtein::{align, edit_positions, levenshtein, AlignOp};
pub use pairs::{
    filter_pairs, read_labelled_tsv, read_pairs_jsonl, write_pairs_jsonl, FilterThresholds, PairSource, RejectedBy,
    RejectionReport, SentencePair,
};
pub use retrieval::{mine_retrieval, SentenceIndex};
pub use translate::{
    backtranslate, FailingTranslator, IdentityTranslator, TableTranslator, TranslateRequest, TranslateResponse,
    TranslationClient,
};
pub use wmd::{nbow, transport, wmd, word_centroid_distance, MAX_SUPPORT};
