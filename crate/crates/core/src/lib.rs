//! Expression-controllable face generation with a conditional adversarial
//! autoencoder, plus a parametric synthetic-face dataset whose expression
//! intensity is known exactly.

pub mod apps;
pub mod datagen;
pub mod error;
pub mod exprcode;
pub mod losses;
pub mod networks;
pub mod nn;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
pub use exprcode::{CodeLayout, ExpressionCode, ExpressionLabel};
pub use losses::{LossComponents, LossReport, LossWeights};
pub use networks::{ArchitectureSpec, ModelBundle, Subnet};
