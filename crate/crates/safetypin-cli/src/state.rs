//! State-directory layout: the flat config snapshot, one key file per
//! HSM, the provider state, and the top-level simulation bits.

use anyhow::{bail, Context, Result};
use safetypin::cluster::{HsmSnapshot, ProviderSnapshot, SimSnapshot, Simulation};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct TopLevel {
    seed_next: u64,
    config_epoch: u64,
    hsm_count: u32,
    mpk_fps: Vec<(u64, Vec<String>)>,
    user_salts: Vec<(String, String)>,
    backup_counter: u64,
    latest_primary: Vec<(String, String)>,
    expected: Vec<(String, String, String)>,
}

pub fn save(sim: &mut Simulation, dir: &Path, config_text: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let snap = sim.snapshot();
    std::fs::write(dir.join("config"), config_text)?;
    for hsm in &snap.hsms {
        std::fs::write(
            dir.join(format!("hsm-{:03}.json", hsm.node_id)),
            serde_json::to_string(hsm)?,
        )?;
    }
    std::fs::write(
        dir.join("provider.json"),
        serde_json::to_string(&snap.provider)?,
    )?;
    let top = TopLevel {
        seed_next: snap.seed_next,
        config_epoch: snap.config_epoch,
        hsm_count: snap.hsms.len() as u32,
        mpk_fps: snap.mpk_fps,
        user_salts: snap.user_salts,
        backup_counter: snap.backup_counter,
        latest_primary: snap.latest_primary,
        expected: snap.expected,
    };
    std::fs::write(dir.join("sim.json"), serde_json::to_string(&top)?)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<(Simulation, String)> {
    let config_text = std::fs::read_to_string(dir.join("config"))
        .with_context(|| format!("state dir {} has no config", dir.display()))?;
    let config = crate::config::parse(&config_text)?;
    let top: TopLevel = serde_json::from_str(&std::fs::read_to_string(dir.join("sim.json"))?)?;
    let provider: ProviderSnapshot =
        serde_json::from_str(&std::fs::read_to_string(dir.join("provider.json"))?)?;
    let mut hsms: Vec<HsmSnapshot> = Vec::with_capacity(top.hsm_count as usize);
    for id in 0..top.hsm_count {
        let path = dir.join(format!("hsm-{id:03}.json"));
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("missing key file {}", path.display()))?;
        hsms.push(serde_json::from_str(&text)?);
    }
    let snap = SimSnapshot {
        config: config.sim,
        seed_next: top.seed_next,
        config_epoch: top.config_epoch,
        hsms,
        provider,
        mpk_fps: top.mpk_fps,
        user_salts: top.user_salts,
        backup_counter: top.backup_counter,
        latest_primary: top.latest_primary,
        expected: top.expected,
    };
    let sim = Simulation::restore(&snap).map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok((sim, config_text))
}

pub fn ensure_fresh(dir: &Path) -> Result<()> {
    if dir.exists() {
        let nonempty = std::fs::read_dir(dir)?.next().is_some();
        if nonempty {
            bail!("state dir {} is not empty; refusing to re-init", dir.display());
        }
    }
    Ok(())
}
