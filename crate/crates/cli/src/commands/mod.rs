pub mod bench;
pub mod convert;
pub mod eval;
pub mod infer;
pub mod selftest;
pub mod synth;
pub mod train;
