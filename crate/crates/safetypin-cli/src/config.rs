//! Flat key=value configuration files.
//!
//! Every key is listed in [`KEYS`]; an unknown key is an error. Fractions
//! accept `a/b` or decimal forms. Example:
//!
//! ```text
//! n_total = 16
//! cluster_size = 4
//! threshold = 2
//! pin_space = 1000000
//! f_live = 1/64
//! f_secret = 1/16
//! security_bits = 128
//! punc_supported = 64
//! punc_fail_exp = 8
//! audit_chunks = 8
//! chunk_mode = random
//! max_guesses = 1
//! gc_bound = 64
//! restart_cap = 16
//! epoch_cadence_secs = 600
//! sig_backend = concat
//! seed = 7
//! ```

use anyhow::{anyhow, bail, Context, Result};
use safetypin::cluster::{sigs::SigBackend, SimConfig};

use safetypin::logsync::ChunkMode;

pub const KEYS: [&str; 17] = [
    "n_total",
    "cluster_size",
    "threshold",
    "pin_space",
    "f_live",
    "f_secret",
    "security_bits",
    "punc_supported",
    "punc_fail_exp",
    "audit_chunks",
    "chunk_mode",
    "max_guesses",
    "gc_bound",
    "restart_cap",
    "epoch_cadence_secs",
    "sig_backend",
    "seed",
];

#[derive(Debug, Clone)]
pub struct Config {
    pub sim: SimConfig,
    pub seed: u64,
}

fn parse_fraction(v: &str) -> Result<f64> {
    if let Some((num, den)) = v.split_once('/') {
        let num: f64 = num.trim().parse()?;
        let den: f64 = den.trim().parse()?;
        if den == 0.0 {
            bail!("zero denominator");
        }
        Ok(num / den)
    } else {
        Ok(v.trim().parse()?)
    }
}

pub fn parse(text: &str) -> Result<Config> {
    let mut sim = SimConfig::desk();
    let mut seed = 0u64;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = raw.split('#').next().unwrap_or("").trim();
        if stripped.is_empty() {
            continue;
        }
        let (key, value) = stripped
            .split_once('=')
            .ok_or_else(|| anyhow!("line {line}: expected key = value"))?;
        let key = key.trim();
        let value = value.trim();
        let ctx = || format!("line {line}: bad value for {key}");
        match key {
            "n_total" => sim.lhe.total_hsms = value.parse().with_context(ctx)?,
            "cluster_size" => sim.lhe.cluster_size = value.parse().with_context(ctx)?,
            "threshold" => sim.lhe.threshold = value.parse().with_context(ctx)?,
            "pin_space" => sim.lhe.pin_space = value.parse().with_context(ctx)?,
            "f_live" => sim.lhe.live_failure_rate = parse_fraction(value).with_context(ctx)?,
            "f_secret" => {
                sim.lhe.secret_compromise_rate = parse_fraction(value).with_context(ctx)?
            }
            "security_bits" => sim.lhe.security_bits = value.parse().with_context(ctx)?,
            "punc_supported" => sim.punc_supported = value.parse().with_context(ctx)?,
            "punc_fail_exp" => sim.punc_fail_exp = value.parse().with_context(ctx)?,
            "audit_chunks" => sim.audit_chunks = value.parse().with_context(ctx)?,
            "chunk_mode" => {
                sim.chunk_mode = match value {
                    "random" => ChunkMode::Random,
                    "deterministic" => ChunkMode::Deterministic,
                    other => bail!("line {line}: chunk_mode {other:?} (random|deterministic)"),
                }
            }
            "max_guesses" => sim.max_guesses = value.parse().with_context(ctx)?,
            "gc_bound" => sim.gc_bound = value.parse().with_context(ctx)?,
            "restart_cap" => sim.restart_cap = value.parse().with_context(ctx)?,
            "epoch_cadence_secs" => sim.epoch_cadence_secs = value.parse().with_context(ctx)?,
            "sig_backend" => {
                sim.sig_backend = match value {
                    "concat" => SigBackend::Concat,
                    "bls" => SigBackend::Bls,
                    other => bail!("line {line}: sig_backend {other:?} (concat|bls)"),
                }
            }
            "seed" => seed = value.parse().with_context(ctx)?,
            other => bail!("line {line}: unknown key {other:?}"),
        }
    }
    sim.validate().map_err(|e| anyhow!("{e}"))?;
    Ok(Config { sim, seed })
}

pub fn load(path: &std::path::Path) -> Result<Config> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text)
}

/// Renders a config back to the flat format (used by `init` to snapshot
/// the effective configuration into the state dir).
pub fn render(config: &Config) -> String {
    let sim = &config.sim;
    format!(
        "n_total = {}\ncluster_size = {}\nthreshold = {}\npin_space = {}\nf_live = {}\nf_secret = {}\nsecurity_bits = {}\npunc_supported = {}\npunc_fail_exp = {}\naudit_chunks = {}\nchunk_mode = {}\nmax_guesses = {}\ngc_bound = {}\nrestart_cap = {}\nepoch_cadence_secs = {}\nsig_backend = {}\nseed = {}\n",
        sim.lhe.total_hsms,
        sim.lhe.cluster_size,
        sim.lhe.threshold,
        sim.lhe.pin_space,
        sim.lhe.live_failure_rate,
        sim.lhe.secret_compromise_rate,
        sim.lhe.security_bits,
        sim.punc_supported,
        sim.punc_fail_exp,
        sim.audit_chunks,
        match sim.chunk_mode {
            ChunkMode::Random => "random",
            ChunkMode::Deterministic => "deterministic",
        },
        sim.max_guesses,
        sim.gc_bound,
        sim.restart_cap,
        sim.epoch_cadence_secs,
        match sim.sig_backend {
            SigBackend::Concat => "concat",
            SigBackend::Bls => "bls",
        },
        config.seed,
    )
}
