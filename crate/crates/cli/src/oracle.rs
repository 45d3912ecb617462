//! Accuracy oracles selectable on the command line.

use std::cell::Cell;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;

use flexisaga::io::store_matrix;
use flexisaga::pruning::{AccuracyOracle, Candidate, EnergyOracle, OperatorGroup, ThresholdOracle};
use flexisaga::{Error, Result};

/// `threshold:MAX`, `energy:BASE,EXP` or `cmd:PROGRAM [ARGS...]`.
#[derive(Clone, Debug, PartialEq)]
pub enum OracleArg {
    Threshold(f64),
    Energy(f64, f64),
    Command(Vec<String>),
}

impl FromStr for OracleArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, rest) = s.split_once(':').ok_or_else(|| format!("expected KIND:VALUE, got {s:?}"))?;
        let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
        match kind {
            "threshold" => Ok(Self::Threshold(num(rest)?)),
            "energy" => {
                let (b, e) = rest.split_once(',').ok_or("energy expects BASE,EXP")?;
                Ok(Self::Energy(num(b)?, num(e)?))
            }
            "cmd" => {
                let argv: Vec<String> = rest.split_whitespace().map(String::from).collect();
                if argv.is_empty() {
                    return Err("cmd needs a program".into());
                }
                Ok(Self::Command(argv))
            }
            _ => Err(format!("unknown oracle kind {kind:?}; expected threshold, energy or cmd")),
        }
    }
}

impl OracleArg {
    pub fn build(&self, original: &[OperatorGroup], names: &[String], scratch: &Path) -> Box<dyn AccuracyOracle> {
        match self {
            Self::Threshold(max) => Box::new(ThresholdOracle::new(*max)),
            Self::Energy(base, exp) => Box::new(EnergyOracle::new(original, *base, *exp)),
            Self::Command(argv) => Box::new(CommandOracle {
                argv: argv.clone(),
                names: names.to_vec(),
                scratch: scratch.to_path_buf(),
                calls: Cell::new(0),
            }),
        }
    }
}

/// Writes each candidate to a fresh directory, runs the program with that
/// directory as its last argument and reads the accuracy from the last
/// non-empty line of its standard output.
struct CommandOracle {
    argv: Vec<String>,
    names: Vec<String>,
    scratch: PathBuf,
    calls: Cell<usize>,
}

impl AccuracyOracle for CommandOracle {
    fn evaluate(&self, candidate: &Candidate<'_>) -> Result<f64> {
        let call = self.calls.get();
        self.calls.set(call + 1);
        let dir = self.scratch.join(format!("candidate_{call:03}"));
        std::fs::create_dir_all(&dir)?;
        for (m, name) in candidate.weights.iter().flatten().zip(&self.names) {
            store_matrix(m, dir.join(name))?;
        }
        let sparsities: Vec<String> = candidate.sparsities.iter().map(|s| s.to_string()).collect();
        let out = Command::new(&self.argv[0])
            .args(&self.argv[1..])
            .arg(&dir)
            .env("FLEXISAGA_SPARSITY", sparsities.join(","))
            .env("FLEXISAGA_ATTEMPT", candidate.attempt.to_string())
            .output()
            .map_err(|e| Error::Oracle(format!("{}: {e}", self.argv[0])))?;
        if !out.status.success() {
            return Err(Error::Oracle(format!("{} exited with {}", self.argv[0], out.status)));
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        let line = stdout.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("");
        line.trim()
            .parse::<f64>()
            .map_err(|_| Error::Oracle(format!("expected an accuracy on stdout, got {line:?}")))
    }
}
