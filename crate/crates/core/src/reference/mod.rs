//! Analytic and brute-force oracles for the worked examples.

pub mod committor;
pub mod double_well;
pub mod girsanov;
pub mod ou;

pub use committor::CommittorSpec;
pub use double_well::{DoubleWellSpec, PdeGrid, PdeSolution};
pub use girsanov::{finite_dim_girsanov_check, GirsanovCheck};
pub use ou::OuSpec;
