pub mod cli;
pub mod eval;
pub mod frameio;
pub mod net;
pub mod roi;
pub mod synth;
