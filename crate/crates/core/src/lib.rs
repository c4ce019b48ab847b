pub mod attacks;
pub mod dataset_io;
pub mod encoder;
pub mod error;
pub mod keying;
pub mod probe;
pub mod tensor;

pub use encoder::{EncoderConfig, EncryptedSample, Scheme};
pub use error::{Error, Result};
pub use keying::MasterKey;
pub use tensor::{ImageTensor, Matrix, TokenMatrix};
