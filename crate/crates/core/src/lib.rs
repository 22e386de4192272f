//! Geospatial data retrieval agent.
//!
//! The agent picks a data source from a plug-and-play registry, asks a
//! language model for a fetch program constrained by that source's
//! handbook, runs the program in a subprocess sandbox and feeds failures
//! back to the model until the program succeeds or the debug budget runs
//! out. Deterministic geospatial cores (OSM multipolygon assembly, slippy
//! tile math and mosaicking, source request builders) validate the results.

pub mod agent;
pub mod geo;
pub mod http;
pub mod llm;
pub mod osm;
pub mod prompting;
pub mod registry;
pub mod runtime;
pub mod sandbox;
pub mod secrets;
