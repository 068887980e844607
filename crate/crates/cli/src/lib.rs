//! Command implementations behind the `dro` binary, exposed as a library
//! so integration tests can drive them in-process.

pub mod cmd_bench;
pub mod cmd_bias;
pub mod cmd_gradcheck;
pub mod cmd_oracle;
pub mod cmd_solve;
pub mod config;
pub mod errors;
pub mod pipeline;
