//! Hidden neural Markov chains for sequence labelling.
//!
//! * [`autodiff`]: dense tensors and a reverse-mode tape.
//! * [`prob`]: exact inference for HMM, order-2 HMM and HMM with
//!   complexified noise, including the entropic forward-backward recursions
//!   and brute-force enumeration oracles.
//! * [`nn`]: neural EFB layers (HNMC, HNMC2, HNMC-CN), RNN baselines and the
//!   architecture builder.
//! * [`train`]: mini-batch Adam training, evaluation and checkpoints.
//! * [`data`]: CoNLL columns, embedding tables and synthetic corpora.
//! * [`metrics`]: token accuracy and BIO span F1.
//! * [`verify`]: the oracle/gradient check suite behind `hnmc verify`.

// `!(x > 0.0)` is used on purpose so that NaN fails positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod prob;
pub mod nn;
pub mod data;
pub mod metrics;
pub mod train;
pub mod verify;
