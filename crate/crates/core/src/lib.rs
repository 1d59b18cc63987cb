//! Fast feedforward networks: binary trees of sigmoid routing nodes over small
//! ReLU leaf networks, trained as soft mixtures and evaluated by hard descent.

pub mod bench;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod numeric;
pub mod optim;
pub mod persistence;
pub mod trainer;

pub use error::{Error, Result};
