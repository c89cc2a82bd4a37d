use crate::error::{Error, Result};
use crate::lm::{MaskedInstance, MaskedLm, TokenId, Vocab, BLANK};

/// One instance per position of every sentence, that position masked.
pub fn fill_instances(vocab: &Vocab, corpus: &[Vec<TokenId>]) -> Vec<MaskedInstance> {
    let mask = vocab.specials().mask;
    corpus
        .iter()
        .flat_map(|s| {
            (0..s.len()).map(move |i| {
                let mut input = s.clone();
                input[i] = mask;
                MaskedInstance {
                    input,
                    position: i,
                    target: s[i],
                }
            })
        })
        .collect()
}

/// Replaces every `[blank]` with the single most probable non-special
/// token, all blanks masked at once. Ties go to the lower id.
pub fn mlm_fill<S: AsRef<str>>(model: &MaskedLm, input: &[S]) -> Result<Vec<String>> {
    let vocab = model.vocab();
    let sp = vocab.specials();
    let blanks: Vec<usize> = (0..input.len()).filter(|&i| input[i].as_ref() == BLANK).collect();
    if blanks.is_empty() {
        return Err(Error::invalid("input has no [blank]"));
    }
    let mut ids = vocab.encode(input)?;
    for &i in &blanks {
        ids[i] = sp.mask;
    }
    let logits = model.logits(&ids)?;
    let mut out: Vec<String> = input.iter().map(|s| s.as_ref().to_string()).collect();
    for &i in &blanks {
        let row = logits.row(i);
        let best = (0..row.len())
            .filter(|&t| !sp.contains(t))
            .fold(None, |acc: Option<usize>, t| match acc {
                Some(b) if row[b] >= row[t] => Some(b),
                _ => Some(t),
            })
            .ok_or_else(|| Error::Degenerate("vocabulary has no ordinary tokens".into()))?;
        out[i] = vocab.token(best).unwrap().to_string();
    }
    Ok(out)
}
