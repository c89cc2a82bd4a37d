//! Insertion and deletion detection with a masked-prediction model that
//! can also predict `[null]`, meaning "no word belongs here".

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::edit::Edit;
use crate::error::{Error, Result};
use crate::lm::{MaskedInstance, MaskedLm, TokenId, TransformerConfig, Vocab};
use crate::numerics::{rng, FitOptions, FitReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NullConfig {
    /// Minimum probability of a real word at a gap to propose an insert.
    pub tau_ins: f64,
    /// Minimum `[null]` probability at a word to propose a delete.
    pub tau_del: f64,
    /// Proposals kept by [`null_correct`], best first; 0 keeps all.
    pub max_edits: usize,
}

impl Default for NullConfig {
    fn default() -> Self {
        Self {
            tau_ins: 0.5,
            tau_del: 0.5,
            max_edits: 1,
        }
    }
}

impl NullConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau_ins", self.tau_ins), ("tau_del", self.tau_del)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NullDetectorModel {
    pub model: MaskedLm,
    pub insert_rate: f64,
    pub mask_rate: f64,
}

/// Which of the two pretraining tasks produced an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullTask {
    /// `[MASK]` inserted at a gap, target `[null]`.
    Gap,
    /// A real word replaced by `[MASK]`, target the word.
    Word,
}

/// Gap instance: `[MASK]` inserted before position `gap`.
pub fn gap_instance(vocab: &Vocab, sentence: &[TokenId], gap: usize) -> MaskedInstance {
    let sp = vocab.specials();
    let mut input = sentence.to_vec();
    input.insert(gap, sp.mask);
    MaskedInstance {
        input,
        position: gap,
        target: sp.null,
    }
}

/// Word instance: position `pos` replaced by `[MASK]`.
pub fn word_instance(vocab: &Vocab, sentence: &[TokenId], pos: usize) -> MaskedInstance {
    let mut input = sentence.to_vec();
    let target = input[pos];
    input[pos] = vocab.specials().mask;
    MaskedInstance {
        input,
        position: pos,
        target,
    }
}

/// Draws training instances. Each draw visits one sentence (cycling through
/// the corpus) and independently emits a gap instance with probability
/// `insert_rate` and a word instance with probability `mask_rate`.
pub fn null_task_instances(
    vocab: &Vocab,
    corpus: &[Vec<TokenId>],
    draws: usize,
    insert_rate: f64,
    mask_rate: f64,
    seed: u64,
) -> Result<Vec<(NullTask, MaskedInstance)>> {
    check_rates(insert_rate, mask_rate)?;
    if corpus.is_empty() || corpus.iter().any(Vec::is_empty) {
        return Err(Error::invalid("corpus must hold nonempty sentences"));
    }
    let mut r = rng::seeded(seed);
    let mut out = Vec::new();
    for d in 0..draws {
        let s = &corpus[d % corpus.len()];
        if r.random::<f64>() < insert_rate {
            let gap = r.random_range(0..=s.len());
            out.push((NullTask::Gap, gap_instance(vocab, s, gap)));
        }
        if r.random::<f64>() < mask_rate {
            let pos = r.random_range(0..s.len());
            out.push((NullTask::Word, word_instance(vocab, s, pos)));
        }
    }
    Ok(out)
}

fn check_rates(insert_rate: f64, mask_rate: f64) -> Result<()> {
    for (name, v) in [("insert_rate", insert_rate), ("mask_rate", mask_rate)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::invalid(format!("{name} = {v} is outside (0, 1)")));
        }
    }
    Ok(())
}

/// Trains the detector on `draws` task draws over `corpus`.
#[allow(clippy::too_many_arguments)]
pub fn train_null_tasks(
    vocab: Vocab,
    config: TransformerConfig,
    corpus: &[Vec<TokenId>],
    draws: usize,
    insert_rate: f64,
    mask_rate: f64,
    opts: &FitOptions,
) -> Result<(NullDetectorModel, FitReport)> {
    if corpus.is_empty() {
        return Err(Error::invalid("empty corpus"));
    }
    let inst: Vec<MaskedInstance> = null_task_instances(&vocab, corpus, draws, insert_rate, mask_rate, opts.seed)?
        .into_iter()
        .map(|(_, i)| i)
        .collect();
    let (model, report) = MaskedLm::train(vocab, config, &inst, opts)?;
    Ok((
        NullDetectorModel {
            model,
            insert_rate,
            mask_rate,
        },
        report,
    ))
}

/// Insert and delete proposals for `sentence`, gaps and words interleaved
/// in position order.
pub fn null_detect(m: &NullDetectorModel, sentence: &[TokenId], cfg: &NullConfig) -> Result<Vec<Edit>> {
    cfg.validate()?;
    if sentence.is_empty() {
        return Err(Error::invalid("empty sentence"));
    }
    let vocab = m.model.vocab();
    let null = vocab.specials().null;
    let name = |t: TokenId| vocab.token(t).unwrap_or("?").to_string();
    let mut edits = Vec::new();
    for gap in 0..=sentence.len() {
        let probe = gap_instance(vocab, sentence, gap);
        let (tok, p) = m.model.predict_at(&probe.input, gap)?;
        if tok != null && !vocab.is_special(tok) && p > cfg.tau_ins {
            edits.push(Edit::insert(gap, name(tok), p));
        }
        if gap < sentence.len() {
            let probe = word_instance(vocab, sentence, gap);
            let (tok, p) = m.model.predict_at(&probe.input, gap)?;
            if tok == null && p > cfg.tau_del {
                edits.push(Edit::delete(gap, name(sentence[gap]), p));
            }
        }
    }
    Ok(edits)
}

/// The `max_edits` highest-scoring proposals of [`null_detect`], back in
/// position order. Probes next to a real error see an unfamiliar context
/// and often fire as well, so keeping only the strongest ones matters.
/// Score ties go to the earlier proposal.
pub fn null_correct(m: &NullDetectorModel, sentence: &[TokenId], cfg: &NullConfig) -> Result<Vec<Edit>> {
    let mut edits = null_detect(m, sentence, cfg)?;
    if cfg.max_edits > 0 && edits.len() > cfg.max_edits {
        let mut order: Vec<usize> = (0..edits.len()).collect();
        order.sort_by(|&a, &b| edits[b].score.total_cmp(&edits[a].score).then(a.cmp(&b)));
        let mut keep = order[..cfg.max_edits].to_vec();
        keep.sort_unstable();
        edits = keep.into_iter().map(|i| edits[i].clone()).collect();
    }
    Ok(edits)
}
