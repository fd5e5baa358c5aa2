//! Stability analysis for discounted economic MPC.

pub mod certificate;
pub mod dissipativity;
pub mod dp;
pub mod grid;
pub mod linalg;
pub mod lqr;
pub mod model;
pub mod optimize;
pub mod sim;
pub mod steady_state;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/problems.md")]
    mod problems {}
    #[doc = include_str!("../../../book/src/lqr.md")]
    mod lqr {}
    #[doc = include_str!("../../../book/src/certificates.md")]
    mod certificates {}
    #[doc = include_str!("../../../book/src/grid-dp.md")]
    mod grid_dp {}
    #[doc = include_str!("../../../book/src/steady-state.md")]
    mod steady_state {}
    #[doc = include_str!("../../../book/src/dissipativity.md")]
    mod dissipativity {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
