pub mod data;
pub mod encoding;
pub mod evaluation;
pub mod llm;
pub mod models;
pub mod numerics;
pub mod synth;
pub mod training;
