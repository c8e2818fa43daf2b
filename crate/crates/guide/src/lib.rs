//! The guide in `book/` as doc-tests, one module per chapter, so every
//! listing in the book compiles and runs under `cargo test`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/describing.md")]
pub mod describing {}
#[doc = include_str!("../../../book/src/design.md")]
pub mod design {}
#[doc = include_str!("../../../book/src/models.md")]
pub mod models {}
#[doc = include_str!("../../../book/src/knowledge.md")]
pub mod knowledge {}
#[doc = include_str!("../../../book/src/distributed.md")]
pub mod distributed {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
