pub mod arm;
pub mod engine;
pub mod env;
pub mod forest;
pub mod harness;
pub mod knowledge;
pub mod relational;
