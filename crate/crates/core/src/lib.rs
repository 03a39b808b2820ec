//! Inference-side machinery for multi-type discrete-reasoning readers.
//!
//! Given encoder representations for a `[CLS] question [SEP] passage [SEP]`
//! sequence, the crate computes every prediction-head distribution, decodes
//! the final answer (spans, signed-number arithmetic, counts or
//! percentage negation), searches weak-supervision annotations for gold
//! answers and scores predictions with DROP-style exact match and F1.
//!
//! | module | role |
//! |--------|------|
//! | [`ingest`] | DROP parsing, tokenization, number mentions, sequence assembly |
//! | [`numerics`] | softmax, GeLU, layer norm, FFN, attention pooling |
//! | [`store`] | manifest + raw `f32` tensor directories |
//! | [`heads`] | type, span, sign, count, negation, span-count and rerank heads |
//! | [`decoder`] | multi-span suppression, sign beam search, answer dispatch |
//! | [`annotator`] | annotation search, candidate labels, coverage statistics |
//! | [`metrics`] | answer normalization, bag alignment, EM/F1 |
//! | [`harness`] | mock encoder, oracle distributions, self-test |

pub mod annotator;
pub mod decoder;
pub mod error;
pub mod harness;
pub mod heads;
pub mod ingest;
pub mod metrics;
pub mod numerics;
pub mod store;

pub use annotator::{annotate_example, Annotation, AnnotationKind, Tolerance};
pub use decoder::{decode_answer, AnswerPrediction, DecodeConfig, Reranker, SignedExpression, SpanPrediction};
pub use error::{Error, Result};
pub use heads::{AnswerType, EncoderOutput, HeadOutputs, HeadWeights, Sign};
pub use ingest::{GoldAnswer, GoldKind, NumberMention, Token, TokenizedExample};
pub use metrics::{evaluate_example, EvalReport};
pub use numerics::{FfnWeights, Matrix};
