pub mod eval;
pub mod plot;
pub mod predict;
pub mod refine;
pub mod synth;
pub mod train;
