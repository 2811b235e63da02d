pub mod align;
pub mod error;
pub mod features;
pub mod gmm;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod scalar;
pub mod sections;
pub mod ssvc;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type FeatureSequence64 = features::FeatureSequence<f64>;
pub type FeatureSequence32 = features::FeatureSequence<f32>;
pub type SpeakerStats64 = stats::SpeakerStats<f64>;
pub type SpeakerStats32 = stats::SpeakerStats<f32>;
pub type GmmVcModel64 = gmm::GmmVcModel<f64>;
pub type GmmVcModel32 = gmm::GmmVcModel<f32>;
pub type ParamSet64 = graph::ParamSet<f64>;
pub type ParamSet32 = graph::ParamSet<f32>;
pub type SsVcModel64 = ssvc::SsVcModel<f64>;
pub type SsVcModel32 = ssvc::SsVcModel<f32>;
pub type DblstmModel64 = ssvc::DblstmModel<f64>;
pub type DblstmModel32 = ssvc::DblstmModel<f32>;
