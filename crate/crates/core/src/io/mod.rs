//! Ingestion, result files and synthetic corpora.

mod ingest;
mod output;
mod synth;

pub use ingest::{
    csv_line_len, is_gps, read_records, read_records_file, split_by_accuracy, write_records, Corpus, IngestConfig,
    IngestError, DEFAULT_ACCURACY_SPLIT_M, RECORD_COLUMNS,
};
pub use output::{
    bin_start_hhmm, labeled_fields, read_histogram, read_labeled, read_stays, stay_fields, write_histogram,
    write_labeled, write_outputs, write_stays, OutputError, OutputSet, HISTOGRAM_COLUMNS, HISTOGRAM_FILE,
    LABELED_FILE, LABEL_COLUMNS, METRICS_FILE, PROFILE_FILE, STAYS_FILE, STAY_COLUMNS,
};
pub use synth::{device_id, generate_sized, generate_synthetic, SynthConfig, SynthError, SynthOutput, TruthStay};
