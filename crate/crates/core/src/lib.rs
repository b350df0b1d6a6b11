//! Statement tuning toolkit.
//!
//! Classification tasks are verbalized into true/false statements with
//! templates ([`templates`]), assembled into balanced multilingual statement
//! mixtures ([`builder`]) and used to fine-tune a binary statement
//! discriminator ([`model`]). Unseen tasks are then classified zero-shot by
//! scoring one statement per candidate label ([`classifier`]), evaluated per
//! language ([`eval`]) and benchmarked for throughput ([`bench`]).

pub mod bench;
pub mod builder;
pub mod classifier;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod exec;
pub mod lang;
pub mod model;
pub mod run_config;
pub mod schema;
pub mod templates;

pub use error::{Error, Result};
pub use exec::Exec;
