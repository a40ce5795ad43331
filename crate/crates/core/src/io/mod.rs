//! File formats: flat tensors and PGM/PPM images.

pub(crate) mod bytes;
mod pnm;
mod tensor_file;

pub use pnm::{decode_pnm, encode_pnm, read_pnm, write_pnm};
pub use tensor_file::{Tensor, TENSOR_FORMAT_VERSION, TENSOR_MAGIC};
