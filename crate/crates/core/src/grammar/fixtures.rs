//! Grammar files shipped with the crate.

use super::{parse_grammar, Grammar};

pub const NB201_CELL: &str = include_str!("../../fixtures/nb201_cell.cfg");
pub const NB201_HIERARCHICAL: &str = include_str!("../../fixtures/nb201_hierarchical.cfg");
pub const DARTS: &str = include_str!("../../fixtures/darts.cfg");
pub const HIER_CELL: &str = include_str!("../../fixtures/hier_cell.cfg");
pub const MOBILENET: &str = include_str!("../../fixtures/mobilenet.cfg");

/// `(name, source)` of every bundled grammar.
pub const ALL: &[(&str, &str)] = &[
    ("nb201_cell", NB201_CELL),
    ("nb201_hierarchical", NB201_HIERARCHICAL),
    ("darts", DARTS),
    ("hier_cell", HIER_CELL),
    ("mobilenet", MOBILENET),
];

/// Source text of a bundled grammar, by name with or without `.cfg`.
pub fn source(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".cfg").unwrap_or(name);
    ALL.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Parses a bundled grammar. Panics if the bundled text is broken.
pub fn load(name: &str) -> Option<Grammar> {
    source(name).map(|s| parse_grammar(s).expect("bundled grammar parses"))
}

pub fn nb201_hierarchical() -> Grammar {
    load("nb201_hierarchical").unwrap()
}

pub fn nb201_cell() -> Grammar {
    load("nb201_cell").unwrap()
}
