//! Keywords-to-sentence generation as text infilling, plus the retrieval
//! and single-token masked-prediction baselines.

mod bm25;
mod example;
mod generate;
mod mlm;

pub use bm25::{bm25_search, Bm25Index, Bm25Params};
pub use example::{keyword_spans, make_example, output_segments, random_spans, reassemble, InfillExample};
pub use generate::{fill_blanks, infill_corpus, infill_generate, FilledRun, InfillConfig, keyword_example, keyword_frame, InfillOutcome, MaskScheme};
pub use mlm::{fill_instances, mlm_fill};
