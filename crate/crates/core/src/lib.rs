pub mod codeexec;
pub mod engine;
pub mod harness;
pub mod llm;
pub mod plan;
pub mod reasoning;
pub mod session;
pub mod tools;
