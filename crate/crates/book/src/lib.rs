//! The guide under `book/` is written for mdbook, which cannot run Rust
//! snippets against a local crate. Each chapter is pulled in here as the
//! docs of an empty module so `cargo test --doc` compiles and runs every
//! block. One module per chapter keeps failures traceable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}
#[doc = include_str!("../../../book/src/solver.md")]
pub mod solver {}
#[doc = include_str!("../../../book/src/robust.md")]
pub mod robust {}
#[doc = include_str!("../../../book/src/flipping.md")]
pub mod flipping {}
#[doc = include_str!("../../../book/src/prefilter.md")]
pub mod prefilter {}
#[doc = include_str!("../../../book/src/selection.md")]
pub mod selection {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
