//! Run manifests: enough to replay a command exactly (config hash plus
//! every effective seed) and to list what it produced. No timestamps, so
//! reruns write byte-identical manifests.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::Experiment;
use crate::CliError;

pub struct Manifest {
    text: String,
}

impl Manifest {
    pub fn new(command: &str, exp: &Experiment) -> Self {
        let mut text = String::new();
        let _ = writeln!(text, "linkeq-manifest v1");
        let _ = writeln!(text, "command {command}");
        let _ = writeln!(text, "config_hash {:016x}", exp.config_hash);
        let _ = writeln!(text, "seed bits {}", exp.seeds.bits);
        let _ = writeln!(text, "seed noise {}", exp.seeds.noise);
        let _ = writeln!(text, "seed init {}", exp.seeds.init);
        let _ = writeln!(text, "seed dropout {}", exp.seeds.dropout);
        let _ = writeln!(text, "seed shuffle {}", exp.seeds.shuffle);
        let _ = writeln!(text, "seed test_bits {}", exp.seeds.test_bits);
        let _ = writeln!(text, "seed test_noise {}", exp.seeds.test_noise);
        Self { text }
    }

    pub fn record_output(&mut self, name: &str) {
        let _ = writeln!(self.text, "output {name}");
    }

    pub fn record_value(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.text, "{key} {value}");
    }

    pub fn write(self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.text)?;
        Ok(())
    }
}
