//! Interchange formats: 8-bit PNG, the SVG subset, and the run
//! configuration file.

mod config;
mod png;
mod svg;

pub use config::{load_config, parse_config, BackendConfig, BackendKind, OptimizerSettings, RunConfig};
pub use png::{read_png, write_png};
pub use svg::{parse_svg, serialize_svg};
