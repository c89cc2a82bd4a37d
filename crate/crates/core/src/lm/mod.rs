//! Causal Transformer language model, vocabulary and training objectives.

mod format;
mod masked;
mod model;
mod objective;
mod tokenizer;
mod transformer;
mod vocab;

pub use format::{conditional_format, conditional_unformat, Frame};
pub use masked::{MaskedInstance, MaskedLm};
pub use model::{HiddenStates, LmModel, OUT_PROJ};
pub use objective::{
    cl_seq_var, loss_cl, loss_cl_batch, loss_cl_hidden, loss_mle, loss_simctg, objective_var, train, Objective, TrainConfig,
};
pub use tokenizer::Tokenizer;
pub use transformer::{EncoderLayout, TransformerConfig};
pub use vocab::{Specials, TokenId, Vocab, ANS, BLANK, CLS, MASK, NULL, PAD, SEP, SPECIAL_ROLES};
