use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use repexp::report::atomic_write;
use serde::Serialize;
use serde_json::{json, Value};

pub const INDEX_FILE: &str = "manifest.json";

/// Process exit codes.
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug)]
pub enum Failure {
    Io(String),
    Invalid(String),
}

impl Failure {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Failure::Invalid(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Io(_) => EXIT_IO,
            Failure::Invalid(_) => EXIT_INVALID,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Io(m) => write!(f, "i/o error: {m}"),
            Failure::Invalid(m) => write!(f, "invalid input: {m}"),
        }
    }
}

impl From<repexp::Error> for Failure {
    fn from(e: repexp::Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Invalid(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Invalid(e.to_string())
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Attaches the offending path to an error.
pub fn at(path: &Path) -> impl Fn(repexp::Error) -> Failure + '_ {
    move |e| match Failure::from(e) {
        Failure::Io(m) => Failure::Io(format!("{}: {m}", path.display())),
        Failure::Invalid(m) => Failure::Invalid(format!("{}: {m}", path.display())),
    }
}

/// An output directory that records every file written into it.
pub struct OutDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| Failure::Io(format!("{}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_owned(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Records a file that was written by other means.
    pub fn note(&mut self, name: impl Into<String>) {
        self.files.push(name.into());
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(name);
        atomic_write(&path, bytes).map_err(at(&path))?;
        self.note(name);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> CliResult<()> {
        let mut bytes = Vec::new();
        for it in items {
            serde_json::to_writer(&mut bytes, it)?;
            bytes.push(b'\n');
        }
        self.write(name, &bytes)
    }

    /// Writes `manifest.json` listing the command, its parameters and every
    /// output with its size.
    pub fn finish(mut self, command: &str, parameters: Value) -> CliResult<()> {
        self.files.sort();
        self.files.dedup();
        let mut outputs = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let bytes = fs::metadata(self.root.join(name))?.len();
            outputs.push(json!({ "file": name, "bytes": bytes }));
        }
        let index = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "parameters": parameters,
            "outputs": outputs,
        });
        let mut bytes = serde_json::to_vec_pretty(&index)?;
        bytes.push(b'\n');
        let path = self.path(INDEX_FILE);
        atomic_write(&path, &bytes).map_err(at(&path))
    }
}

/// Absolute form of `path` for recording in run metadata.
pub fn absolute(path: &Path) -> PathBuf {
    fs::canonicalize(path).unwrap_or_else(|_| path.to_owned())
}
