//! Model archives and configuration files.

mod archive;
mod config;

pub use archive::{
    fnv1a64, from_bytes, load, peek_kind, save, to_bytes, Archive, ModelKind, Persist, FORMAT_VERSION, MAGIC,
};
pub use config::{load_config, parse_config, Config, ModelPaths, ServiceConfig};
