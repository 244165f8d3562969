//! The effective configuration of a run, written next to its outputs so the
//! run can be replayed.

use std::path::{Path, PathBuf};

use lkt_core::kv::{KvDocument, Section};

pub struct Echo {
    run: Section,
    extra: Vec<Section>,
}

impl Echo {
    pub fn new(command: &str, seed: u64) -> Self {
        let mut run = Section::new("run");
        run.push("command", command);
        run.push("seed", seed);
        Echo {
            run,
            extra: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.run.push(key, value);
        self
    }

    pub fn path(&mut self, key: &str, value: &Path) -> &mut Self {
        self.set(key, value.display())
    }

    pub fn opt_path(&mut self, key: &str, value: Option<&Path>) -> &mut Self {
        if let Some(p) = value {
            self.path(key, p);
        }
        self
    }

    /// Appends the sections of an already canonical document.
    pub fn append(&mut self, doc: KvDocument) -> &mut Self {
        self.extra.extend(doc.sections);
        self
    }

    pub fn to_text(&self) -> String {
        let mut sections = vec![self.run.clone()];
        sections.extend(self.extra.iter().cloned());
        KvDocument { sections }.to_text()
    }
}

/// `dir/run.conf` for directory outputs, `<file>.run.conf` otherwise.
pub fn echo_path(output: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        output.join("run.conf")
    } else {
        sibling(output, "run.conf")
    }
}

/// `<file>.<suffix>` next to `file`.
pub fn sibling(file: &Path, suffix: &str) -> PathBuf {
    let mut s = file.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}
