//! Physics-informed intrinsic image decomposition (`I = R∘S + N`) with a
//! source-separable three-way heteroscedastic uncertainty head, plus the
//! split-protocol machinery needed to audit frame-level vs scene-level
//! evaluation leakage.
//!
//! The crate is organized around the experiment pipeline:
//!
//! * [`types`] — image tensors, intrinsic triples, manifests, eval reports
//! * [`data`] — rendered-layer derivation and the synthetic scene generator
//! * [`splits`] — random/temporal/scene partition protocols and their audit
//! * [`nn`] — the CNN models (backbone, heads, baselines) with hand-rolled
//!   forward/backward passes on `ndarray`
//! * [`objectives`] — reconstruction, smoothness and heteroscedastic NLL
//!   losses with analytic gradients
//! * [`trainer`] — two-phase Adam training, ensembles, checkpoints
//! * [`uncertainty`] — aleatoric maps, MC-dropout and ensemble spread
//! * [`metrics`] — PSNR, correlation analyses, filtering curves
//! * [`stats`] — multi-seed aggregation and paired t-tests

pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod splits;
pub mod stats;
pub mod trainer;
pub mod types;
pub mod uncertainty;

pub use error::{Error, Result};
pub use types::{
    DatasetManifest, EvalReport, FrameRecord, ImageTensor, IntrinsicTriple, validate_triple,
};
