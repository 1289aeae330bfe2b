//! Cascade records, derived graphs and sequences, labels, splits and a
//! synthetic Hawkes generator.

pub mod cascade;
pub mod label;
pub mod parse;
pub mod simulate;
pub mod split;

pub use cascade::{
    build_cascade_graph, build_cascade_sequence, build_global_graph, Cascade, CascadeGraph, CascadeSequence,
    GlobalGraph, RetweetEvent,
};
pub use label::{label_sample, segment_bounds, LabeledSample};
pub use parse::{cascade_to_jsonl, parse_cascades, write_cascades, CascadeFormat, ParsedCascades};
pub use simulate::{simulate_hawkes_cascades, SimulationConfig};
pub use split::{filter_and_split, DatasetSplit, SplitManifest, SplitName, SplitRatios};
