//! The guide in `book/` compiled as doctests, one module per chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/channel.md")]
pub mod channel {}
#[doc = include_str!("../../../book/src/networks.md")]
pub mod networks {}
#[doc = include_str!("../../../book/src/diffusion.md")]
pub mod diffusion {}
#[doc = include_str!("../../../book/src/prompt-link.md")]
pub mod prompt_link {}
#[doc = include_str!("../../../book/src/allocator.md")]
pub mod allocator {}
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
