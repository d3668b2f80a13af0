//! Command line and file formats for optimforge.

pub mod cli;
pub mod format;
pub mod parallel;
pub mod run;
