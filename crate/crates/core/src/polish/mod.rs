//! Phrase polishing over a similarity graph and sentence expansion.

mod expand;
mod graph;

pub use expand::{
    expansion_sites, format_pairs, global_expand, local_expand, parse_annotations, probe, skeleton_pairs, Annotated,
    ExpandConfig, Expansion,
};
pub use graph::{build_graph, polish, polish_context, s2_score, PolishConfig, ScoredCandidate, SimilarityGraph};
