pub mod archive;
pub mod error;
pub mod fem;
pub mod mesh;
pub mod pod;
pub mod problems;
pub mod rom;
pub mod sparse;
pub mod study;
pub mod truth;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/problems.md")]
    mod problems {}
    #[doc = include_str!("../../../book/src/truth.md")]
    mod truth {}
    #[doc = include_str!("../../../book/src/pod.md")]
    mod pod {}
    #[doc = include_str!("../../../book/src/reduced.md")]
    mod reduced {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
