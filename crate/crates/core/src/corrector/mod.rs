//! Grammatical error correction. Same-length substitutions go through a
//! CRF over encoder emissions; insertions and deletions come from a
//! masked-prediction detector with a `[null]` token.

pub mod chain;
mod crf;
mod edit;
mod null;

pub use crf::{CrfConfig, CrfModel, LossBreakdown, LossSelect, EMIT_B, EMIT_W, TRANS_E1, TRANS_E2};
pub use edit::{apply_edits, Edit, EditKind};
pub use null::{
    gap_instance, null_correct, null_detect, null_task_instances, train_null_tasks, word_instance, NullConfig, NullDetectorModel,
    NullTask,
};

use crate::error::Result;
use crate::lm::TokenId;

/// Viterbi-decoded sentence and one substitute edit per changed position.
pub fn correct_substitutions(m: &CrfModel, sentence: &[TokenId], k: usize) -> Result<(Vec<TokenId>, Vec<Edit>)> {
    let out = m.viterbi_decode(sentence, k.min(m.vocab().len()))?;
    let logp = m.position_log_probs(sentence)?;
    let vocab = m.vocab();
    let name = |t: TokenId| vocab.token(t).unwrap_or("?").to_string();
    let edits = sentence
        .iter()
        .zip(&out)
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, (&a, &b))| Edit::substitute(i, name(a), name(b), logp.get2(i, b).exp()))
        .collect();
    Ok((out, edits))
}
