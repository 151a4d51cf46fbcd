pub mod collision;
pub mod faithfulness;
pub mod fff;
pub mod harness;
mod limit;
pub mod llm;
pub mod nlp;
pub mod pipeline;
pub mod placeholder;
pub mod query_split;

pub use limit::InFlightLimit;
