//! Model core for speech separation inside the latent space of a neural audio codec.
//!
//! Everything here is `no_std` + `alloc`: the differentiable tensor tape, the
//! toy codec (strided-conv encoder, residual vector quantizer, transposed-conv
//! decoder), the transformer separator, SI-SDR style metrics, the training
//! loops over in-memory data, and the symbolic MAC profiler. File formats,
//! datasets on disk and the command line live in the `codecsep` crate.

#![no_std]
// Float guards are written as negated comparisons so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod codec;
pub mod error;
pub mod macprof;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod real;
pub mod rng;
pub mod separator;
pub mod signal;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Graph, Var};
pub use codec::{Codec, CodecConfig, CodeSequence, Embedding};
pub use error::{Error, Result};
pub use metrics::{Metric, MetricValue, Transmit};
pub use separator::{Separator, SeparatorConfig};
pub use signal::{MixtureExample, SynthSpec, Waveform};
pub use tensor::{Checkpoint, NamedTensor, ParamSet, Tensor};
