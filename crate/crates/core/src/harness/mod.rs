pub mod dataset;
pub mod detect;
pub mod metrics;
pub mod persona;
pub mod run;
pub mod scripts;
