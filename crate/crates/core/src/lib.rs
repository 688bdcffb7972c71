pub mod adaptation;
pub mod asr;
pub mod autodiff;
pub mod beamformer;
pub mod dereverb;
pub mod diffsp;
pub mod error;
pub mod features;
pub mod harness;
pub mod linalg;
pub mod masknet;
pub mod nn;
pub mod optim;
pub mod params;
pub mod scene;
pub mod signal;
pub mod wav;

pub use error::{Error, Result};
