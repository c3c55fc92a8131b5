//! Reward-guided sampling in the latent space of one-step rectified-flow
//! generators.
//!
//! A base flow is trained on a 2D Gaussian mixture and straightened by
//! reflow until one Euler step generates data. Latent samplers then climb a
//! pulled-back reward `R ∘ F`, and the stochastic ones target the tilted
//! density `q*(x) ∝ N(x; 0, I) exp(R(F(x)) / α)`, which [`oracle`] samples
//! exactly for comparison. The book under `book/` walks through each piece.

pub mod checkpoint;
pub mod compare;
pub mod diffnet;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod optim;
pub mod oracle;
pub mod reward;
pub mod rng;
pub mod sampler;
pub mod validate;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/flows.md")]
    mod flows {}
    #[doc = include_str!("../../../book/src/rewards.md")]
    mod rewards {}
    #[doc = include_str!("../../../book/src/samplers.md")]
    mod samplers {}
    #[doc = include_str!("../../../book/src/target.md")]
    mod target {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/checkpoints.md")]
    mod checkpoints {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
