//! Bayesian inference of the causal direction between two scalar variables.
//!
//! Given paired samples `(x_i, y_i)`, the library computes the evidence for
//! the hypotheses `X -> Y` and `Y -> X` under a hierarchical model:
//!
//! * the cause is binned on an equidistant grid of the unit interval, the bin
//!   counts are Poisson with log-intensities drawn from a stationary Gaussian
//!   field (covariance fixed by a power spectrum), and the field is
//!   marginalized with a Laplace approximation ([`cause`]);
//! * the effect is a Gaussian-process function of the cause plus white noise,
//!   marginalized in closed form ([`effect`]).
//!
//! The log Bayes factor is the difference of the two directional information
//! Hamiltonians ([`inference`]). The same generative model run forwards
//! produces labelled synthetic pairs ([`forward`]), and [`bench`] reproduces
//! synthetic sweeps and weighted real-data evaluations on top of both.
//!
//! ```
//! use causal_field::{forward::{ForwardConfig, sample_pair}, inference::{InferenceConfig, infer_direction}};
//!
//! let mut fwd = ForwardConfig::with_bins(64);
//! fwd.target_samples = 120;
//! fwd.seed = 7;
//! let pair = sample_pair(&fwd).unwrap();
//!
//! let cfg = InferenceConfig::with_bins(64);
//! let result = infer_direction(&pair.x, &pair.y, &cfg).unwrap();
//! assert_eq!(result.decided_direction, pair.true_direction);
//! ```

pub mod bench;
pub mod cause;
pub mod cli;
pub mod effect;
mod error;
pub mod forward;
pub mod inference;
pub mod rng;
pub mod spectra;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};

/// A causal hypothesis for an ordered pair of columns `(X, Y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// The first column causes the second.
    #[serde(rename = "X->Y")]
    XToY,
    /// The second column causes the first.
    #[serde(rename = "Y->X")]
    YToX,
}

impl Direction {
    pub fn reversed(self) -> Self {
        match self {
            Direction::XToY => Direction::YToX,
            Direction::YToX => Direction::XToY,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::XToY => "X->Y",
            Direction::YToX => "Y->X",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "X->Y" => Ok(Direction::XToY),
            "Y->X" => Ok(Direction::YToX),
            other => Err(format!("unknown direction {other:?}")),
        }
    }
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/spectra.md")]
    mod spectra {}
    #[doc = include_str!("../../../book/src/forward.md")]
    mod forward {}
    #[doc = include_str!("../../../book/src/cause.md")]
    mod cause {}
    #[doc = include_str!("../../../book/src/effect.md")]
    mod effect {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/benchmarks.md")]
    mod benchmarks {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
