//! Files, parallel evaluation and the command-line front end for [`adm_core`].

pub mod cli;
pub mod error;
pub mod format;
pub mod io;
pub mod parallel;
pub mod text;

pub use error::{Error, Result};
pub use format::{load_dataset, save_dataset};
