pub mod experiment;
pub mod fixtures;
pub mod io;
