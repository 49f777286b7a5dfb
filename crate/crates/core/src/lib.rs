//! Temporal-coherence self-supervised pretraining of frame encoders and
//! recurrent surgical phase segmentation over precomputed frame features.
//!
//! The crate covers the whole pipeline: pretraining tuples are sampled from
//! unlabeled sequences ([`sampler`]) and scored with contrastive, ranking or
//! second-order contrastive losses ([`losses`]); the encoder is then extended
//! into an encoder + LSTM phase model ([`nn`]) and fine-tuned with stateful,
//! truncated backpropagation ([`train`]). Models are evaluated with
//! per-video phase metrics ([`metrics`]) and nearest-neighbour retrieval
//! ([`retrieval`]). [`synth`] generates procedure-like sequences and [`io`]
//! holds the on-disk formats.

pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod retrieval;
pub mod rng;
pub mod sampler;
pub mod sequence;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use losses::{LossConfig, LossKind};
pub use sampler::{SampledTuple, SamplerConfig, TupleOrder};
pub use sequence::{FrameSequence, Split};
