//! Equivalent-model toolkit for droop-controlled DC/DC converters.
//!
//! The crate rebuilds the control behaviour of a commercial droop-controlled
//! converter from a handful of measured bandwidths and coefficients:
//!
//! - [`tfcore`]: rational transfer functions, Bode sweeps, loop margins
//! - [`plant`]: converter parameters, operating point, small-signal plants
//! - [`looptune`]: PI synthesis for the current and voltage loops
//! - [`simcore`]: averaged time-domain simulation with droop, LPF and ramp limiter
//! - [`scenarios`]: the reference experiments as ready-to-run scenarios
//! - [`ident`]: step-response, droop-slope and ramp-rate characterization
//! - [`stability`]: constant-power-load stability bound and oscillation detection
//! - [`config`] and [`cli`]: scenario files and the command-line front end
//!
//! See the `examples/` directory for one runnable program per capability.

// Negated comparisons deliberately reject NaN inputs.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod ident;
pub mod looptune;
pub mod plant;
pub mod scenarios;
pub mod simcore;
pub mod stability;
pub mod tfcore;

pub use looptune::{PiGains, Polarity, TuneReport};
pub use plant::{ConverterParams, OperatingPoint};
pub use simcore::{Scenario, SimTrace};
pub use tfcore::{FrequencyPoint, LoopMargins, TransferFunction};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tf(#[from] tfcore::TfError),
    #[error(transparent)]
    Plant(#[from] plant::PlantError),
    #[error(transparent)]
    Tune(#[from] looptune::TuneError),
    #[error(transparent)]
    Sim(#[from] simcore::SimError),
    #[error(transparent)]
    Ident(#[from] ident::IdentError),
    #[error(transparent)]
    Stability(#[from] stability::StabilityError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
