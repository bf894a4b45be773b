pub mod client;
pub mod engine;
pub mod error;
pub mod field;
pub mod layers;
pub mod mpl;
pub mod mul;
pub mod prf;
pub mod provider;
pub mod serial;
pub mod sim;
pub mod transport;

pub use error::{Error, Result};
