//! Low-resource extractive question answering, desk scale.
//!
//! Everything numerical lives here: a dense f64 tensor engine with a
//! reverse-mode tape, a compact factorized/shared-layer encoder with span and
//! MLM heads, SQuAD-format data handling, French-aware EM/F1 scoring, ChrF and
//! BLEU metrics with answer-span retrieval for translated corpora,
//! fine-tuning and MLM training loops, population-based hyperparameter
//! search, and energy/CO2 accounting arithmetic.
//!
//! The crate is `no_std` + `alloc`; anything that needs a file system, a
//! clock, or a process (checkpoint files, the CLI, wall-clock cost tracking)
//! lives in the companion `lrqa-cli` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod align;
pub mod cost;
pub mod data;
pub mod hpo;
pub mod mathx;
pub mod metrics;
pub mod model;
pub mod seeds;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;
