//! Stability-constrained optimal dispatch for power grids whose swing
//! dynamics are written in Lur'e form.
//!
//! The pipeline is: parse a case ([`gridcase`]), solve power flows
//! ([`powerflow`]), build the Lur'e system of the post-fault network
//! ([`lure`]), certify it with a circle-criterion quadratic Lyapunov function
//! ([`certify`]), approximate the fault-cleared state ([`fault`]), and embed
//! the resulting invariant-set condition in a nonlinear program
//! ([`optimize`]). [`simulate`] integrates the swing equations and serves as
//! the ground truth for all of the above.

pub mod ad;
pub mod certify;
pub mod error;
pub mod fault;
pub mod gridcase;
pub mod linalg;
pub mod lure;
pub mod optimize;
pub mod pipeline;
pub mod powerflow;
pub mod sdp;
pub mod simulate;

pub use error::{Error, Result};
pub use gridcase::{
    build_admittance, load_case, load_scenario, AdmittanceMatrix, BusKind, FaultType, NetworkVariant, PowerCase,
    ScenarioSpec,
};
pub use powerflow::{Injections, SteadyState};
