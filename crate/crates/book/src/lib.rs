//! The guide's chapters, one module each, so that `cargo test` runs every
//! Rust listing in `book/src` as a doc-test.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/environment.md")]
pub mod environment {}
#[doc = include_str!("../../../book/src/autodiff.md")]
pub mod autodiff {}
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/reproducing.md")]
pub mod reproducing {}
