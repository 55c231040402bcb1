//! Event-chain driven code generation pipeline: signal catalog and
//! retrieval, prompt assembly, LLM gateway, event-chain modelling and rule
//! validation, code generation with lint, and trace simulation.

pub mod chain;
pub mod codegen;
pub mod exec;
pub mod executor;
pub mod llm;
pub mod prompt;
pub mod retrieval;
pub mod rules;
pub mod text;
pub mod vss;

pub use exec::Execution;
