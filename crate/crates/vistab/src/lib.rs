//! Generalization-bound toolkit for mean-field Gaussian variational inference.
//!
//! The crate trains small Bayesian neural networks with reparameterized SGD and
//! measures two families of generalization bounds on the learned posterior:
//!
//! * **Algorithmic-stability bounds** — empirical expansion rates of the SGD
//!   update map are combined with per-step gradient sensitivity to a single
//!   replaced example, yielding bounds on how far the learned variational
//!   parameters can move when one training point changes, and from there on the
//!   generalization gap (through either a total-variation or a Wasserstein
//!   argument).
//! * **PAC-Bayes bounds** — closed-form bounds computed from the KL divergence
//!   between the learned posterior and a reference prior, including a
//!   union-over-prior-variances variant.
//!
//! Module map:
//!
//! * [`gauss`] — diagonal-Gaussian and discrete-distribution divergences.
//! * [`model`] — multilayer perceptron likelihood, variational parameters,
//!   and hand-written backpropagation.
//! * [`objectives`] — reparameterized training objectives (averaged ELBO and
//!   log-of-mean direct-loss variant) with analytic gradients.
//! * [`datasets`] — synthetic cluster data, label corruption, augmentation,
//!   and CSV I/O.
//! * [`trainer`] — seeded noise streams, SGD with momentum and schedules,
//!   pre-update hooks, and posterior loss evaluation.
//! * [`stability`] — gradient-sensitivity records, expansion-rate estimation,
//!   and the stability bound assembly.
//! * [`pac_bayes`] — the closed-form PAC-Bayes bound family.
//! * [`counterexamples`] — two analytically solvable setups separating the
//!   stability and PAC-Bayes bound behaviors.
//! * [`experiment`] — config parsing, the measurement pipeline, report and
//!   trace emission, and the command entry points behind the CLI.

pub mod counterexamples;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod gauss;
pub mod model;
pub mod numeric;
pub mod objectives;
pub mod pac_bayes;
pub mod stability;
pub mod trainer;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
