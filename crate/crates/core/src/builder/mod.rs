//! Statement mixture construction.

mod dataset;
mod generate;
mod spec;

pub use dataset::{
    read_dataset, reproducible_timestamp, write_dataset, DatasetHeader, Split, StatementDataset,
    StatementRecord, FORMAT_VERSION,
};
pub use generate::{
    assemble_mixture, derive_seed, generate_statements, load_registry_for, sample_rows,
    truth_label, BuildReport, CorpusSource, Group, GroupOutput, GroupReport, InMemoryCorpora,
    ManifestCorpora,
};
pub use spec::{
    LanguageSelection, MixtureEntry, MixtureSpec, TemplateLanguageMode,
    DEFAULT_PER_TRUTH_QUOTA, DEFAULT_ROWS_PER_LANGUAGE, DEFAULT_VALIDATION_FRACTION,
};
