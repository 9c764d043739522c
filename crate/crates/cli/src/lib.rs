//! Instance schema and report types behind the `treehedge` binary.

pub mod instance;
pub mod report;
