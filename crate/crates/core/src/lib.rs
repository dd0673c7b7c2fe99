//! Corpus auditing for entity association: co-occurrence indexing,
//! Association Easiness Scores, prompt probing of text-generation endpoints,
//! memorization-vs-association judging and binned accuracy reports.

pub mod aes;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod extract;
pub mod index;
pub mod probe;
pub mod report;

pub use error::{Error, Result};
