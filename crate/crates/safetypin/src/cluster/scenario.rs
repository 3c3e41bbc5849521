//! Line-oriented scenario files driving the simulator.
//!
//! Commands, one per line (`#` starts a comment):
//!
//! ```text
//! backup <user> <pin> <msgfile>
//! recover <user> <pin>
//! fail-hsm <id>
//! compromise <id,id,...>
//! forge-epoch
//! gc
//! epoch
//! ```
//!
//! The transcript is JSON-lines. A recovery returning nothing is ordinary
//! protocol behavior (wrong PIN, consumed attempt, adversary detected); a
//! run only counts as violated when an internal invariant breaks, e.g. a
//! recovery silently yielding the wrong plaintext.

use thiserror::Error;

use super::Simulation;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("could not load message file {0}")]
    MsgFile(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Backup { user: String, pin: String, msgfile: String },
    Recover { user: String, pin: String },
    FailHsm { id: u32 },
    Compromise { ids: Vec<u32> },
    ForgeEpoch,
    Gc,
    Epoch,
}

pub fn parse(text: &str) -> Result<Vec<Command>, ScenarioError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let cmd = parts.next().unwrap();
        let mut arg = |name: &str| {
            parts.next().map(str::to_string).ok_or(ScenarioError::Parse {
                line,
                msg: format!("{cmd} needs <{name}>"),
            })
        };
        let parsed = match cmd {
            "backup" => Command::Backup {
                user: arg("user")?,
                pin: arg("pin")?,
                msgfile: arg("msgfile")?,
            },
            "recover" => Command::Recover {
                user: arg("user")?,
                pin: arg("pin")?,
            },
            "fail-hsm" => Command::FailHsm {
                id: arg("id")?.parse().map_err(|_| ScenarioError::Parse {
                    line,
                    msg: "fail-hsm id must be an integer".into(),
                })?,
            },
            "compromise" => Command::Compromise {
                ids: arg("ids")?
                    .split(',')
                    .map(|s| {
                        s.parse().map_err(|_| ScenarioError::Parse {
                            line,
                            msg: format!("bad hsm id {s:?}"),
                        })
                    })
                    .collect::<Result<_, _>>()?,
            },
            "forge-epoch" => Command::ForgeEpoch,
            "gc" => Command::Gc,
            "epoch" => Command::Epoch,
            other => {
                return Err(ScenarioError::Parse {
                    line,
                    msg: format!("unknown command {other:?}"),
                })
            }
        };
        if parts.next().is_some() {
            return Err(ScenarioError::Parse {
                line,
                msg: format!("trailing arguments after {cmd}"),
            });
        }
        out.push(parsed);
    }
    Ok(out)
}

/// Runs a parsed scenario. `load` resolves `<msgfile>` arguments to
/// message bytes. Returns the number of invariant violations observed
/// (zero for a clean run, whatever the protocol outcomes were).
pub fn run(
    sim: &mut Simulation,
    commands: &[Command],
    load: &mut dyn FnMut(&str) -> Option<Vec<u8>>,
) -> Result<u32, ScenarioError> {
    for cmd in commands {
        match cmd {
            Command::Backup { user, pin, msgfile } => {
                let msg = load(msgfile).ok_or_else(|| ScenarioError::MsgFile(msgfile.clone()))?;
                sim.client_backup(user.as_bytes(), pin.as_bytes(), &msg);
            }
            Command::Recover { user, pin } => {
                let _ = sim.client_recover(user.as_bytes(), pin.as_bytes());
            }
            Command::FailHsm { id } => sim.fail_hsm(*id),
            Command::Compromise { ids } => {
                let _ = sim.adversary_compromise(ids);
            }
            Command::ForgeEpoch => {
                // overwrite the value of the first logged entry, if any
                let target = sim.provider.log.entries().first().map(|e| e.id.clone());
                if let Some(id) = target {
                    let _ = sim.forge_epoch(&id, b"forged-value");
                }
            }
            Command::Gc => sim.garbage_collect(),
            Command::Epoch => {
                let _ = sim.run_epoch(&[]);
            }
        }
    }
    Ok(sim.invariant_violations)
}
