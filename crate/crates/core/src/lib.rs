//! Behavioural capture-recapture models for closed populations.
//!
//! Partial capture histories are quantified exactly ([`histories`]), grouped
//! into behavioural classes ([`partitions`]), and fitted as logistic models
//! ([`glm`]) under the unconditional likelihood profiled over the population
//! size `N` ([`likelihood`]). [`selection`] ranks models by AIC and searches
//! cutpoints; [`simulation`] runs replicated studies.
//!
//! The numeric layers are generic over [`Scalar`] (`f32`, `f64`); the
//! aliases below fix `f64`.

pub mod error;
pub mod glm;
pub mod histories;
pub mod io;
pub mod likelihood;
pub mod partitions;
pub mod scalar;
pub mod selection;
pub mod simulation;

pub use error::{RecapError, Result};
pub use glm::{build_grouped, irls_fit, loglik, Design, GroupedData};
pub use histories::{
    covariate_matrix, quantify_f, quantify_g, quantify_gaug, quantify_gn, quantify_gtilde, CaptureMatrix, Exact,
    PartialHistory, Quantifier,
};
pub use likelihood::{fit_model, p0, FitOptions, GridStrategy};
pub use partitions::{
    cut_partition, explicit_partition, markov_correspondence_check, named_partition, CutRecipe, NamedModel, Partition,
};
pub use scalar::Scalar;
pub use selection::{cut_search, parse_model_list, rank_models, ModelSpec, SearchStrategy};
pub use simulation::{expected_m, generate, run_trial, GeneratorSpec, TrialReport};

pub type GlmFit64 = glm::GlmFit<f64>;
pub type GlmFit32 = glm::GlmFit<f32>;
pub type FitResult64 = likelihood::FitResult<f64>;
pub type FitResult32 = likelihood::FitResult<f32>;
pub type Profile64 = likelihood::Profile<f64>;
pub type RankingReport64 = selection::RankingReport<f64>;
pub type CutSearchResult64 = selection::CutSearchResult<f64>;
pub type Replicate64 = simulation::Replicate<f64>;
