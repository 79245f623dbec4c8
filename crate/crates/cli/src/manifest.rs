use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::args::Command;
use crate::commands::{CliResult, Failure, Outcome};

pub const TOOL: &str = "momentstein";

/// Resolved configuration of a run plus what it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// Worker threads used; outputs do not depend on it.
    pub threads: usize,
    pub config: Command,
    pub outputs: Vec<PathBuf>,
    #[serde(default)]
    pub summary: Value,
}

impl Manifest {
    pub fn new(config: Command, outcome: &Outcome) -> Self {
        Self {
            tool: TOOL.into(),
            version: momentstein::VERSION.into(),
            threads: rayon::current_num_threads(),
            config,
            outputs: outcome.outputs.clone(),
            summary: outcome.summary.clone(),
        }
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        if m.tool != TOOL {
            return Err(Failure::Input(format!("{}: not a {TOOL} manifest", path.display())));
        }
        if m.version != momentstein::VERSION {
            log::warn!("manifest written by version {}, running {}", m.version, momentstein::VERSION);
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Failure::Input(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::args::{CltArgs, Cli};
    use clap::Parser;

    #[test]
    fn config_round_trips_through_manifest() {
        let cli = Cli::parse_from([
            "momentstein",
            "clt-rates",
            "--factor",
            "f.json",
            "--dims",
            "1,2",
            "--out",
            "r.csv",
            "--plot",
            "r.svg",
        ]);
        let m = Manifest::new(cli.command.clone(), &Outcome::default());
        let text = serde_json::to_string(&m).unwrap();
        let back: Manifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.config, cli.command);
        match back.config {
            Command::CltRates(CltArgs { dims, ns, reps, .. }) => {
                assert_eq!(dims, vec![1, 2]);
                assert_eq!(ns.len(), 7);
                assert_eq!(reps, 3);
            }
            other => panic!("{other:?}"),
        }
    }
}
