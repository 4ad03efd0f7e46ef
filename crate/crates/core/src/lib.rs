//! Privacy-preserving representations against attribute inference: defenses,
//! post-hoc attacks, information-theoretic certificates and trade-off checks.

pub mod data;
pub mod defenses;
pub mod harness;
pub mod infotheory;
pub mod io;
pub mod metrics;
pub mod nnet;
pub mod numkit;
pub mod scalar;
pub mod suite;

pub use scalar::Scalar;

pub type Mat64 = numkit::Mat<f64>;
pub type Mat32 = numkit::Mat<f32>;
pub type FeatureMap64 = defenses::FeatureMap<f64>;
pub type FeatureMap32 = defenses::FeatureMap<f32>;
pub type Dataset64 = data::SplitDataset<f64>;
pub type Dataset32 = data::SplitDataset<f32>;
