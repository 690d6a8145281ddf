//! Dataset ingestion, the binary matrix format, split validation, and the
//! seeded synthetic benchmark.

mod dataset;
mod io;
mod synthetic;

pub use dataset::{load_dataset, validate_split, Dataset, Split, SplitReport, FEATURES_FILE, LABELS_FILE, SEMANTICS_FILE, SPLIT_FILE};
pub use io::{
    decode_matrix, encode_matrix, encode_matrix_body, load_labels, load_matrix, save_labels, save_matrix, save_matrix_csv, Reader,
    MATRIX_MAGIC, MATRIX_VERSION,
};
pub(crate) use io::{read_to_string, write_bytes};
pub use synthetic::{generate_synthetic_benchmark, SyntheticBenchmark, SyntheticBenchmarkConfig};
