//! Fiber-sampled stochastic mirror descent for canonical polyadic
//! decomposition under non-Euclidean losses.
//!
//! The model approximates an `N`-way tensor `X` by
//! `M_i = Σ_r Π_n A_n(i_n, r)` and minimizes `(1/|I|) Σ_i ℓ(X_i, M_i)`
//! subject to per-factor constraints. Each iteration samples one factor and
//! a handful of mode fibers, forms an unbiased gradient estimate from them,
//! and takes a Bregman (mirror) step whose geometry matches the loss.
//!
//! ```
//! use smartcpd::bregman::{Constraint, Generator, MirrorMap};
//! use smartcpd::solver::{default_init, smartcpd, SolverConfig};
//! use smartcpd::synthdata::{gen_factors, observe, GeneratorSpec, Observation};
//!
//! let mut spec = GeneratorSpec::new(vec![8, 8, 8], 2);
//! spec.observation = Observation::None;
//! spec.heavy_frac = 0.0;
//! let truth = gen_factors(&spec)?;
//! let x = observe(&truth, &spec)?.into();
//!
//! let mirror = MirrorMap::new(Generator::Entropy, Constraint::Nonneg)?;
//! let mut config = SolverConfig::new(2, "gen-kl".parse()?, mirror, "adagrad".parse()?);
//! config.max_epochs = 5;
//! let init = default_init(&[8, 8, 8], &config)?;
//! let result = smartcpd(&x, config, init)?;
//! assert!(result.trace.last().unwrap().cost < result.trace[0].cost);
//! # Ok::<(), smartcpd::Error>(())
//! ```

// Negated comparisons are used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bregman;
pub mod error;
pub mod gradient;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod sampler;
pub mod solver;
pub mod stepsize;
pub mod surrogate;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/mirror-maps.md")]
    mod mirror_maps {}
    #[doc = include_str!("../../../book/src/step-sizes.md")]
    mod step_sizes {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
