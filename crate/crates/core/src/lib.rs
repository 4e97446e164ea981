//! Free-energy gesture agent.
//!
//! An agent picks its next gesture by sampling candidate motion sequences from
//! a posture roadmap and keeping the one with the least free energy under an
//! input-output HMM, whose observations come from a discriminator that judges
//! whether paired agent/partner motion looks like a genuine interaction.
//!
//! Numeric modules are generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`.

pub mod arena;
pub mod discriminator;
pub mod error;
pub mod iohmm;
pub mod policy;
pub mod roadmap;
pub mod scalar;
pub mod signal;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Pose = signal::PoseVector<f64>;
pub type PoseSeq = signal::PoseSequence<f64>;
pub type Window = signal::InteractionWindow<f64>;
pub type IoHmm = iohmm::IoHmmParams<f64>;
pub type Belief = iohmm::Belief<f64>;
pub type Discriminator = discriminator::ClassifierParams<f64>;
pub type Roadmap = roadmap::Roadmap<f64>;
pub type ActionSequence = roadmap::ActionSequence<f64>;
pub type ScoredCandidate = policy::ScoredCandidate<f64>;
