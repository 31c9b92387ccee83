//! Built-in system files for the worked examples and test systems.
//!
//! The JSON sources live in `fixtures/` next to the crate manifest and are
//! embedded at build time.

use crate::error::{Error, Result};
use crate::system::SystemDef;

macro_rules! fixtures {
    ($($name:literal),* $(,)?) => {
        /// Fixture names, in a fixed order.
        pub const NAMES: &[&str] = &[$($name),*];

        /// JSON source of a fixture.
        pub fn source(name: &str) -> Option<&'static str> {
            match name {
                $($name => Some(include_str!(concat!("../fixtures/", $name, ".json"))),)*
                _ => None,
            }
        }
    };
}

fixtures!(
    "example1",
    "example2",
    "example2_baseline",
    "example3",
    "example4",
    "example5",
    "example6",
    "trivial_zero",
    "smooth_only",
    "matrosov_trivial",
    "matrosov_broken",
    "matrosov_adversarial",
);

pub fn load(name: &str) -> Result<SystemDef> {
    let src = source(name).ok_or_else(|| Error::invalid(format!("no fixture named `{name}`")))?;
    SystemDef::from_json(src)
}

/// Directory holding the fixture files.
pub fn dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}
