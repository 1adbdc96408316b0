//! Story sizing pipeline: related questions, MVC task planning, dedup,
//! human validation and effort reporting over a persistent session.

pub mod dedup;
pub mod domain;
pub mod engine;
pub mod llm;
pub mod parser;
pub mod prompts;
pub mod report;
pub mod review;
pub mod store;
