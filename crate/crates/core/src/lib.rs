pub mod model;
pub mod diff;
pub mod analyzer;
pub mod forge;
pub mod repo;
pub mod llm;
pub mod pipeline;
pub mod vfd;
pub mod vid;
pub mod eval;
