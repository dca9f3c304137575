//! Runs every code block in the guide (book/) as a documentation test, so
//! `cargo test --doc -p linkeq-book` fails whenever a chapter drifts from
//! the library. mdbook itself cannot test blocks that use dependencies;
//! including the chapters as module docs hands the job to rustdoc. One
//! module per chapter keeps failure output attributable.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}

#[doc = include_str!("../../../book/src/signals.md")]
pub mod signals {}

#[doc = include_str!("../../../book/src/channels.md")]
pub mod channels {}

#[doc = include_str!("../../../book/src/equalizer.md")]
pub mod equalizer {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/baseline.md")]
pub mod baseline {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/workflow.md")]
pub mod workflow {}
