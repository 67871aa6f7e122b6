//! File formats, reports and the command-line driver around `mjls-core`.

pub mod io;
pub mod report;
