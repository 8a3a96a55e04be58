pub mod bundle;
pub mod cam_prompt;
pub mod error;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod mcra;
pub mod neural;
pub mod pipeline;
pub mod radiomics;
pub mod region_head;
pub mod selection;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
