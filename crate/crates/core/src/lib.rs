//! Causal transition models for discrete factored MDPs.
//!
//! The crate estimates a shared causal transition model from a class of
//! related environments: per-environment causal structure discovery via
//! L1 independence testing, Bayesian network estimation on the mixture
//! of environments, exact finite-horizon planning on the result, and a
//! synthetic universe generator plus experiment drivers that measure
//! how structure error, model error, and planning regret shrink with
//! sample size.
//!
//! Modules build on each other bottom-up:
//!
//! * [`factored_mdp`]: factored spaces, transition models, environments.
//! * [`independence_testing`]: pairwise L1 independence tests.
//! * [`structure_learning`]: causal graphs and structure estimation.
//! * [`bn_estimation`]: conditional probability table estimation over a
//!   known graph.
//! * [`ctm_pipeline`]: the end-to-end estimator over an environment
//!   class, plus class-level diagnostics (diversity, evenness,
//!   sufficiency).
//! * [`planning`]: exact value iteration and policy evaluation.
//! * [`universe_gen`]: synthetic linear-Gaussian environment classes.
//! * [`experiment`]: seeded experiment drivers with CSV/JSON output.

pub mod bn_estimation;
pub mod ctm_pipeline;
pub mod error;
pub mod experiment;
pub mod factored_mdp;
pub mod independence_testing;
pub mod planning;
pub mod rng;
pub mod structure_learning;
pub mod universe_gen;

pub use error::{Error, Result};
