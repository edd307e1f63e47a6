//! Holds the end-to-end acceptance target in `tests/acceptance.rs`. Kept in
//! its own package so it runs after the unit and integration suites of the
//! other crates.
