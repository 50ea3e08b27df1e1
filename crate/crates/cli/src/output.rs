use crate::error::{CliError, CliResult};
use serde::Serialize;
use serde_json::Value;
use std::path::{Path, PathBuf};

/// Output directory with provenance stamping. Refuses to overwrite unless forced;
/// every write is checked before any file is produced, see [`OutputDir::reserve`].
pub struct OutputDir {
    pub root: PathBuf,
    pub hash: String,
    force: bool,
}

pub const DEFAULT_ROOT: &str = "helmstab-out";

impl OutputDir {
    pub fn create(root: &Path, hash: String, force: bool) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::Io { path: root.to_path_buf(), source: e })?;
        Ok(OutputDir { root: root.to_path_buf(), hash, force })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Fails on the first existing name unless `--force` was given.
    pub fn reserve(&self, names: &[String]) -> CliResult<()> {
        if self.force {
            return Ok(());
        }
        match names.iter().map(|n| self.path(n)).find(|p| p.exists()) {
            Some(p) => Err(CliError::Exists(p)),
            None => Ok(()),
        }
    }

    fn write(&self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let p = self.path(name);
        if p.exists() && !self.force {
            return Err(CliError::Exists(p));
        }
        std::fs::write(&p, bytes).map_err(|e| CliError::Io { path: p.clone(), source: e })?;
        Ok(p)
    }

    /// Pretty JSON with a top-level `manifest_hash`; non-objects are wrapped in `{"data": …}`.
    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let v = serde_json::to_value(value).map_err(|e| CliError::Manifest(e.to_string()))?;
        let mut obj = match v {
            Value::Object(m) => m,
            other => {
                let mut m = serde_json::Map::new();
                m.insert("data".into(), other);
                m
            }
        };
        obj.insert("manifest_hash".into(), Value::String(self.hash.clone()));
        let mut text = serde_json::to_string_pretty(&Value::Object(obj)).map_err(|e| CliError::Manifest(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Text output (CSV, gnuplot) headed by a `# manifest_sha256=` comment line.
    pub fn text(&self, name: &str, body: &str) -> CliResult<PathBuf> {
        self.write(name, format!("# manifest_sha256={}\n{body}", self.hash).as_bytes())
    }

    /// Stamps a file some library routine wrote to a scratch path.
    pub fn adopt(&self, name: &str, scratch: &Path) -> CliResult<PathBuf> {
        let body = std::fs::read_to_string(scratch).map_err(|e| CliError::Io { path: scratch.to_path_buf(), source: e })?;
        let _ = std::fs::remove_file(scratch);
        self.text(name, &body)
    }

    /// Scratch location inside the output directory.
    pub fn scratch(&self, name: &str) -> PathBuf {
        self.root.join(format!(".{name}.partial"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stamps_and_refuses_to_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::create(dir.path(), "ab".repeat(32), false).unwrap();
        out.json("r.json", &serde_json::json!({"x": 1})).unwrap();
        out.json("list.json", &vec![1, 2]).unwrap();
        out.text("r.csv", "a,b\n1,2\n").unwrap();
        let v: Value = serde_json::from_str(&std::fs::read_to_string(out.path("r.json")).unwrap()).unwrap();
        assert_eq!(v["manifest_hash"], "ab".repeat(32));
        let l: Value = serde_json::from_str(&std::fs::read_to_string(out.path("list.json")).unwrap()).unwrap();
        assert_eq!(l["data"][1], 2);
        let csv = std::fs::read_to_string(out.path("r.csv")).unwrap();
        assert!(csv.starts_with(&format!("# manifest_sha256={}\na,b", "ab".repeat(32))));
        assert!(matches!(out.text("r.csv", ""), Err(CliError::Exists(_))));
        assert!(out.reserve(&["r.json".into()]).is_err());
        assert!(out.reserve(&["fresh.json".into()]).is_ok());
        let forced = OutputDir::create(dir.path(), "cd".repeat(32), true).unwrap();
        forced.text("r.csv", "z\n").unwrap();
        assert!(std::fs::read_to_string(out.path("r.csv")).unwrap().ends_with("z\n"));
    }
}
