//! Risk-sensitive exponential-cost evaluation and regenerative
//! policy-gradient optimization for finite Markov chains and MDPs.
//!
//! * [`model`]: parametrized chains and softmax MDPs, flattened into
//!   per-parameter [`model::Snapshot`]s.
//! * [`spectral`]: Perron root, relative value function, twisted kernel and
//!   the exact gradient of `Lambda`.
//! * [`regen`]: first-passage identities and the cycle sampler.
//! * [`trunc`]: truncated cycle estimators and truncated fixed points.
//! * [`optimize`]: policy evaluation and policy-gradient recursions.
//! * [`robust`]: entropic risk, KL lower bounds and the optimal tilt.
//! * [`cli`]: config-driven experiment harness.

pub mod cli;
pub mod fixtures;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod regen;
pub mod rng;
pub mod robust;
pub mod spectral;
pub mod trunc;
