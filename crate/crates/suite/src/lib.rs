//! Home of the workspace acceptance suite (`tests/acceptance.rs`). The
//! library itself is empty.
