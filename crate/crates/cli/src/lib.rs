pub mod commands;
pub mod io;
pub mod synth;
