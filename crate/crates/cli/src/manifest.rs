use crate::failure::Failure;
use crate::RunArgs;
use serde::Serialize;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

#[derive(Debug, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

/// Record of one command invocation, written as `manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: String,
    pub out_dir: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub version: &'static str,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub stages: Vec<Stage>,
    pub exit_code: u8,
    pub error: Option<Failure>,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn start(command: &str, run: &RunArgs, threads: Option<usize>) -> Self {
        RunManifest {
            command: command.into(),
            config: run.config.display().to_string(),
            out_dir: run.out.display().to_string(),
            seed: run.seed,
            threads,
            version: env!("CARGO_PKG_VERSION"),
            started_unix: unix_now(),
            finished_unix: 0.0,
            stages: Vec::new(),
            exit_code: 0,
            error: None,
        }
    }

    /// Times `f` and records it as a named stage.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.stages.push(Stage {
            name: name.into(),
            seconds: t.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn finish(&mut self, failure: Option<&Failure>) {
        self.finished_unix = unix_now();
        self.exit_code = failure.map_or(0, |f| f.code);
        self.error = failure.cloned();
    }

    pub fn write(&self, dir: &Path) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join("manifest.json"), text)
            .map_err(|e| Failure::from(lti_viab::Error::from(e)))
    }
}
