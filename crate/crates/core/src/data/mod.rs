//! Feature schema, ingestion, synthetic data, standardization and windowing.

mod dataset;
mod scaler;
mod schema;
mod synth;
mod table;

pub use dataset::{
    Batch, Dataset, LimitedHistory, PrepareOptions, SampleSet, SplitBounds, SplitPart, TargetMode, WindowedSample,
};
pub use scaler::{deltas, ScalerStats, Stats};
pub use schema::{
    Channel, Derived, FeatureGroup, FeatureKind, FeatureSchema, FeatureSpec, Horizon, Resolution,
    MINUTE_OF_HOUR_VOCAB, QH_OF_DAY_VOCAB, SCHEMA_VERSION,
};
pub use synth::{generate_synthetic, FutureAsset, SyntheticData, SyntheticSpec};
pub use table::{format_minute, parse_minute, IngestOptions, IngestReport, RawTable, DEFAULT_MAX_FILL};
