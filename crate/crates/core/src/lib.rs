//! Feature-regression knowledge distillation from frozen teachers into small CNN
//! students through discardable MLP prediction heads.

pub mod tensor;
pub mod models;
pub mod rng;
pub mod data;
pub mod augment;
pub mod distill;
pub mod eval;
pub mod experiment;
