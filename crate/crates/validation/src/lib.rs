//! Acceptance criteria for the tsdrive stack live in `tests/acceptance.rs`.
