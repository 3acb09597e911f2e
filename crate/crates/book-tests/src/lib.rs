//! Keeps the guide honest: every fenced Rust block in `book/src/*.md` is
//! compiled and executed here as a doc-test, so `cargo test --workspace`
//! fails whenever the book drifts from the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}

#[doc = include_str!("../../../book/src/assignment.md")]
pub mod assignment {}

#[doc = include_str!("../../../book/src/centerness.md")]
pub mod centerness {}

#[doc = include_str!("../../../book/src/losses.md")]
pub mod losses {}

#[doc = include_str!("../../../book/src/anchors.md")]
pub mod anchors {}

#[doc = include_str!("../../../book/src/postprocessing.md")]
pub mod postprocessing {}

#[doc = include_str!("../../../book/src/analysis.md")]
pub mod analysis {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
