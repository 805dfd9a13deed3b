//! Intent-driven drill-down exploration over tabular data.

pub mod chartspec;
pub mod clock;
pub mod insight;
pub mod intent;
pub mod llm;
pub mod rules;
pub mod tabular;
pub mod tree;
