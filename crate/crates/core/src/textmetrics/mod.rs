//! Overlap metrics, loop-inducingness harnesses, and masked-likelihood curves.

mod inducingness;
mod likelihood;
mod rouge;

pub use inducingness::{
    inducingness_repeated, inducingness_simple, looping_conditions, pick_context,
    sentence_conditions, split_sentences, write_reports_csv, ConditionClass, ConditionSet,
    InducingnessReport, CONTEXT_SENTENCES,
};
pub use likelihood::{
    mask_count, mask_schedule, masked_likelihood_curve, write_score_file, LikelihoodCurve,
    LikelihoodPoint, MaskRequest, MaskedScorer, ScoreFileScorer, ScoreRecord, UniformScorer,
    DEFAULT_MASK_FRACTION, DEFAULT_REPETITIONS,
};
pub use rouge::{lcs_len, rouge_l, rouge_l_text, words, RougeScore};
