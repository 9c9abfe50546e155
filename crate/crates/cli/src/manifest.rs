//! Run manifest written beside a command's main output.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{SystemTime, UNIX_EPOCH};

use hitskt::store::write_atomic;

pub struct RunManifest {
    command: String,
    config: Option<PathBuf>,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: f64,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// `git describe` of the working directory, or `unknown` outside a repository.
fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

impl RunManifest {
    pub fn start(command: &str, config: Option<PathBuf>, seed: Option<u64>, inputs: Vec<PathBuf>, outputs: Vec<PathBuf>) -> Self {
        RunManifest {
            command: command.into(),
            config,
            seed,
            inputs,
            outputs,
            started: now(),
        }
    }

    pub fn path_for(output: &Path) -> PathBuf {
        let mut p = output.as_os_str().to_owned();
        p.push(".manifest");
        PathBuf::from(p)
    }

    pub fn render(&self, ended: f64) -> String {
        let join = |ps: &[PathBuf]| ps.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(" ");
        format!(
            "command = {}\nconfig = {}\ninputs = {}\noutputs = {}\nseed = {}\ngit_describe = {}\nstart_time = {:.3}\nend_time = {:.3}\n",
            self.command,
            self.config.as_ref().map_or("none".into(), |p| p.display().to_string()),
            join(&self.inputs),
            join(&self.outputs),
            self.seed.map_or("none".into(), |s| s.to_string()),
            git_describe(),
            self.started,
            ended
        )
    }

    /// Writes `<output>.manifest` atomically.
    pub fn finish(&self, output: &Path) -> hitskt::Result<()> {
        write_atomic(&Self::path_for(output), self.render(now()).as_bytes())
    }
}
