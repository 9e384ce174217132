//! Runs the code blocks of the guide in `book/src` as doctests, one module
//! per chapter so a failure names its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/plate.md")]
pub mod plate {}

#[doc = include_str!("../../../book/src/solving.md")]
pub mod solving {}

#[doc = include_str!("../../../book/src/duality.md")]
pub mod duality {}

#[doc = include_str!("../../../book/src/primal_dual.md")]
pub mod primal_dual {}

#[doc = include_str!("../../../book/src/multidual.md")]
pub mod multidual {}

#[doc = include_str!("../../../book/src/scenarios.md")]
pub mod scenarios {}

#[doc = include_str!("../../../book/src/acceptance.md")]
pub mod acceptance {}
