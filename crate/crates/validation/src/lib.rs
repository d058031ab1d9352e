//! Helpers for the end-to-end acceptance run in `tests/acceptance.rs`.

use std::path::{Path, PathBuf};

/// Workspace root, two levels above this crate.
pub fn workspace_root() -> PathBuf {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    root.canonicalize().unwrap_or(root)
}

/// Directory holding the AG News `train.csv` and `test.csv`.
///
/// `$AGNEWS_DIR` wins; otherwise `data/ag_news_csv` under the workspace root.
pub fn agnews_dir() -> Result<PathBuf, String> {
    let dir = std::env::var_os("AGNEWS_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/ag_news_csv"));
    if dir.join("train.csv").is_file() && dir.join("test.csv").is_file() {
        Ok(dir)
    } else {
        Err(format!(
            "AG News train.csv/test.csv not found in {} (set AGNEWS_DIR)",
            dir.display()
        ))
    }
}
