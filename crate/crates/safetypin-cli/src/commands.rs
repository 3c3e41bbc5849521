//! Command implementations.

use anyhow::{anyhow, bail, Context, Result};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::path::Path;
use std::time::Instant;

use safetypin::authlog::{self, does_extend, LogTree};
use safetypin::cluster::{scenario, Simulation};
use safetypin::lhe::{self, CoverSearch};
use safetypin::logsync;
use safetypin::punc::BloomParams;
use safetypin::sdstore::{self, MemoryBlockServer};
use safetypin::stats::{below_bound, mc_sigma, within_three_sigma, BoundCheck};

use crate::config;
use crate::state;
use crate::{EXIT_OK, EXIT_VIOLATION};

pub fn init(config_path: &Path, state_dir: &Path, seed: Option<u64>) -> Result<i32> {
    let mut cfg = config::load(config_path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    state::ensure_fresh(state_dir)?;
    let mut sim = Simulation::new(cfg.sim.clone(), cfg.seed).map_err(|e| anyhow!("{e}"))?;
    state::save(&mut sim, state_dir, &config::render(&cfg))?;
    println!(
        "initialized {} HSMs into {}",
        cfg.sim.lhe.total_hsms,
        state_dir.display()
    );
    Ok(EXIT_OK)
}

pub fn run_scenario(state_dir: &Path, scenario_path: &Path, out: Option<&Path>) -> Result<i32> {
    let (mut sim, config_text) = state::load(state_dir)?;
    let text = std::fs::read_to_string(scenario_path)
        .with_context(|| format!("reading {}", scenario_path.display()))?;
    let commands = scenario::parse(&text).map_err(|e| anyhow!("{e}"))?;
    let base = scenario_path.parent().unwrap_or(Path::new("."));
    let mut load_msg = |name: &str| -> Option<Vec<u8>> {
        let direct = Path::new(name);
        let path = if direct.is_absolute() {
            direct.to_path_buf()
        } else {
            base.join(direct)
        };
        std::fs::read(path).ok()
    };
    let violations = scenario::run(&mut sim, &commands, &mut load_msg).map_err(|e| anyhow!("{e}"))?;
    let transcript_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| state_dir.join("transcript.jsonl"));
    std::fs::write(&transcript_path, sim.transcript_jsonl() + "\n")?;
    // persist the auditable replay file and digest chain alongside
    std::fs::write(
        state_dir.join("replay.bin"),
        authlog::replay_to_bytes(sim.provider.log.entries()),
    )?;
    let chain: String = sim
        .provider
        .digest_chain
        .iter()
        .map(|(n, d)| format!("{n} {}\n", hex::encode(d)))
        .collect();
    std::fs::write(state_dir.join("digests.txt"), chain)?;
    state::save(&mut sim, state_dir, &config_text)?;
    println!(
        "scenario done: {} events, {} violations (transcript: {})",
        sim.transcript.len(),
        violations,
        transcript_path.display()
    );
    Ok(if violations == 0 { EXIT_OK } else { EXIT_VIOLATION })
}

pub fn epoch_run(state_dir: &Path) -> Result<i32> {
    let (mut sim, config_text) = state::load(state_dir)?;
    match sim.run_epoch(&[]) {
        Ok(()) => {
            let (count, digest) = sim
                .provider
                .digest_chain
                .last()
                .map(|(n, d)| (*n, hex::encode(d)))
                .unwrap_or((0, hex::encode(authlog::EMPTY_DIGEST)));
            println!("epoch {} finalized: {count} records, digest {digest}", sim.provider.epoch_no);
        }
        Err(e) => println!("epoch did not finalize: {e}"),
    }
    state::save(&mut sim, state_dir, &config_text)?;
    Ok(EXIT_OK)
}

pub fn epoch_forge(state_dir: &Path, overwrite_id: &str) -> Result<i32> {
    let (mut sim, config_text) = state::load(state_dir)?;
    let id: Vec<u8> = match hex::decode(overwrite_id) {
        Ok(bytes) if sim.provider.log.value_of(&bytes).is_some() => bytes,
        _ => overwrite_id.as_bytes().to_vec(),
    };
    if sim.provider.log.value_of(&id).is_none() {
        bail!("id {overwrite_id:?} is not in the log; nothing to overwrite");
    }
    let detectors = sim.forge_epoch(&id, b"forged-value");
    if detectors.is_empty() {
        println!("forged epoch went UNDETECTED (no honest auditor hit the chunk)");
    } else {
        println!(
            "forged epoch detected by {} HSM(s): {:?}",
            detectors.len(),
            detectors
        );
    }
    state::save(&mut sim, state_dir, &config_text)?;
    Ok(EXIT_OK)
}

pub fn epoch_stats(state_dir: &Path) -> Result<i32> {
    let (sim, _) = state::load(state_dir)?;
    println!("epochs finalized: {}", sim.provider.epoch_no);
    println!("log records: {}", sim.provider.log.entries().len());
    println!("pending inserts: {}", sim.provider.pending.len());
    println!("digest: {}", hex::encode(sim.provider.log.digest()));
    println!("config epoch: {}", sim.config_epoch);
    println!(
        "chunks per HSM per epoch: {} ({} chunks total)",
        sim.config.audit_chunks, sim.config.lhe.total_hsms
    );
    Ok(EXIT_OK)
}

pub fn verify_log(replay_path: &Path, digests_path: &Path) -> Result<i32> {
    let replay_bytes = std::fs::read(replay_path)?;
    let records = authlog::replay_from_bytes(&replay_bytes).map_err(|e| anyhow!("{e}"))?;
    let digests_text = std::fs::read_to_string(digests_path)?;
    let mut checkpoints: Vec<(usize, [u8; 32])> = Vec::new();
    for (idx, line) in digests_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (count, hex_digest) = line
            .split_once(' ')
            .ok_or_else(|| anyhow!("digest line {}: expected '<count> <hex>'", idx + 1))?;
        let digest: [u8; 32] = hex::decode(hex_digest.trim())?
            .as_slice()
            .try_into()
            .map_err(|_| anyhow!("digest line {}: not 32 bytes", idx + 1))?;
        checkpoints.push((count.trim().parse()?, digest));
    }

    let mut tree = LogTree::new();
    let mut prev_tree = LogTree::new();
    let mut next_checkpoint = 0usize;
    for (i, record) in records.iter().enumerate() {
        if tree.insert(record.id.clone(), record.val.clone()).is_err() {
            println!("VIOLATION at record {i}: duplicate id {}", hex::encode(&record.id));
            return Ok(EXIT_VIOLATION);
        }
        while next_checkpoint < checkpoints.len()
            && checkpoints[next_checkpoint].0 == i + 1
        {
            let (count, expect) = checkpoints[next_checkpoint];
            if tree.digest() != expect {
                println!(
                    "VIOLATION at checkpoint {next_checkpoint} (record {count}): digest mismatch"
                );
                return Ok(EXIT_VIOLATION);
            }
            // re-derive the extension proof between consecutive digests
            // and verify it, exactly as an HSM would
            let proof = authlog::prove_extends(&prev_tree, &tree).map_err(|e| anyhow!("{e}"))?;
            if !does_extend(&prev_tree.digest(), &tree.digest(), &proof) {
                println!("VIOLATION at checkpoint {next_checkpoint}: extension proof rejected");
                return Ok(EXIT_VIOLATION);
            }
            prev_tree = tree.clone();
            next_checkpoint += 1;
        }
    }
    if next_checkpoint != checkpoints.len() {
        println!(
            "VIOLATION: {} digest checkpoints beyond the replay file",
            checkpoints.len() - next_checkpoint
        );
        return Ok(EXIT_VIOLATION);
    }
    println!(
        "ok: {} records, {} checkpoints verified",
        records.len(),
        checkpoints.len()
    );
    Ok(EXIT_OK)
}

fn write_rows(rows: &[BoundCheck], out: Option<&Path>) -> Result<i32> {
    let mut csv = String::from("name,analytic,empirical,sigma,pass\n");
    for row in rows {
        csv.push_str(&row.csv_row());
        csv.push('\n');
    }
    match out {
        Some(path) => std::fs::write(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(if rows.iter().all(|r| r.pass) {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    })
}

pub fn verify_bounds(
    which: &str,
    config_path: &Path,
    trials: Option<u64>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<i32> {
    let cfg = config::load(config_path)?;
    let seed = seed.unwrap_or(cfg.seed);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let rows = match which {
        "correctness" => {
            let trials = trials.unwrap_or(1000);
            let params = &cfg.sim.lhe;
            let failures = lhe::correctness_experiment(params, trials, &mut rng);
            let bound = 2f64.powi(-((params.cluster_size / 2) as i32));
            vec![below_bound(
                &format!(
                    "correctness n={} t={} f_live={}",
                    params.cluster_size, params.threshold, params.live_failure_rate
                ),
                failures,
                trials,
                bound,
            )]
        }
        "audit" => {
            let trials = trials.unwrap_or(10_000);
            let n = cfg.sim.lhe.total_hsms;
            let c = cfg.sim.audit_chunks;
            let f = cfg.sim.lhe.secret_compromise_rate;
            let honest = ((1.0 - 2.0 * f) * n as f64).round() as u32;
            let mut misses = 0u64;
            for _ in 0..trials {
                let forged = 1 + (rng.next_u64() % n as u64) as u32;
                let mut hit = false;
                for _ in 0..honest {
                    if logsync::choose_chunks_random(n, c, &mut rng).contains(&forged) {
                        hit = true;
                    }
                }
                if !hit {
                    misses += 1;
                }
            }
            let analytic = (1.0 - 1.0 / n as f64).powf((honest * c) as f64);
            vec![within_three_sigma(
                &format!("audit-miss N={n} C={c} f={f}"),
                misses,
                trials,
                analytic,
            )]
        }
        "bloom" => {
            let per_point = trials.unwrap_or(2000);
            let params = BloomParams::derive(cfg.sim.punc_supported, cfg.sim.punc_fail_exp);
            let p = cfg.sim.punc_supported;
            let mut rows = Vec::new();
            for point in [p / 4, p / 2, p] {
                let mut failures = 0u64;
                let instances = 4u64;
                for inst in 0..instances {
                    let mut server = MemoryBlockServer::new();
                    let (pk, mut sk) =
                        safetypin::punc::keygen(params, inst, &mut server, &mut rng)
                            .map_err(|e| anyhow!("{e}"))?;
                    for i in 0..point {
                        safetypin::punc::puncture(
                            &mut sk,
                            format!("punc-{i}").as_bytes(),
                            &mut server,
                            &mut rng,
                        )
                        .map_err(|e| anyhow!("{e}"))?;
                    }
                    for t in 0..per_point / instances {
                        let tag = format!("probe-{t}");
                        let ct =
                            safetypin::punc::encrypt(&pk, tag.as_bytes(), b"ad", b"x", &mut rng);
                        if safetypin::punc::decrypt(&sk, &ct, b"ad", &mut server).is_none() {
                            failures += 1;
                        }
                    }
                }
                let total = (per_point / instances) * instances;
                rows.push(within_three_sigma(
                    &format!("bloom-fail punctures={point} m={}", params.slot_count),
                    failures,
                    total,
                    params.analytic_failure_rate(point),
                ));
            }
            rows
        }
        "cover" => {
            let trials = trials.unwrap_or(300);
            let (total, list_len, phi, alpha, beta) = (12u32, 4u32, 6u32, 0.5, 2.0 / 12.0);
            let exact = lhe::cover_probability(
                total,
                list_len,
                phi,
                alpha,
                beta,
                trials,
                CoverSearch::Exhaustive,
                &mut ChaCha20Rng::seed_from_u64(seed ^ 1),
            );
            let greedy = lhe::cover_probability(
                total,
                list_len,
                phi,
                alpha,
                beta,
                trials,
                CoverSearch::Greedy,
                &mut ChaCha20Rng::seed_from_u64(seed ^ 1),
            );
            let sigma = mc_sigma(exact, trials);
            vec![BoundCheck {
                name: format!("cover N={total} n={list_len} phi={phi}"),
                analytic: exact,
                empirical: greedy,
                sigma,
                pass: (exact - greedy).abs() <= (0.02f64).max(3.0 * sigma),
            }]
        }
        other => bail!("unknown bounds check {other:?}"),
    };
    write_rows(&rows, out)
}

pub fn bench(config_path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<i32> {
    let cfg = config::load(config_path)?;
    let seed = seed.unwrap_or(cfg.seed);
    let mut rows: Vec<(String, String, f64)> = Vec::new();

    // Backup/recover wall time, median of 5 after one warm run.
    let mut sim = Simulation::new(cfg.sim.clone(), seed).map_err(|e| anyhow!("{e}"))?;
    sim.client_backup(b"warm", b"000000", b"warmup");
    let _ = sim.client_recover(b"warm", b"000000");
    let mut backup_ms = Vec::new();
    let mut recover_ms = Vec::new();
    for i in 0..5 {
        let user = format!("bench-{i}");
        let t0 = Instant::now();
        sim.client_backup(user.as_bytes(), b"123456", b"bench payload");
        backup_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        let t1 = Instant::now();
        let got = sim.client_recover(user.as_bytes(), b"123456");
        recover_ms.push(t1.elapsed().as_secs_f64() * 1e3);
        anyhow::ensure!(got.is_some(), "bench recovery failed");
    }
    backup_ms.sort_by(f64::total_cmp);
    recover_ms.sort_by(f64::total_cmp);
    rows.push(("backup".into(), "median_ms".into(), backup_ms[2]));
    rows.push(("recover".into(), "median_ms".into(), recover_ms[2]));
    rows.push((
        "epoch_audit".into(),
        "chunks_per_hsm".into(),
        sim.hsms[0].last_epoch_chunks as f64,
    ));

    // Store costs: blocks touched by read/delete vs tree height.
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 99);
    let mut server = MemoryBlockServer::new();
    let data: Vec<Vec<u8>> = (0..64u8).map(|i| vec![i; 32]).collect();
    let handle = sdstore::setup(&data, &mut server, &mut rng).map_err(|e| anyhow!("{e}"))?;
    let mark = server.op_mark();
    let _ = sdstore::read(&handle, 63, &mut server);
    rows.push((
        "sdstore_read".into(),
        "blocks_touched".into(),
        server.touched_since(mark) as f64,
    ));
    let mark = server.op_mark();
    let _ = sdstore::delete(&handle, 63, &mut server, &mut rng).map_err(|e| anyhow!("{e}"))?;
    rows.push((
        "sdstore_delete".into(),
        "blocks_touched".into(),
        server.touched_since(mark) as f64,
    ));
    rows.push(("sdstore_tree".into(), "height".into(), handle.height as f64));

    let mut csv = String::from("op,metric,value\n");
    for (op, metric, value) in &rows {
        csv.push_str(&format!("{op},{metric},{value:.3}\n"));
    }
    match out {
        Some(path) => std::fs::write(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(EXIT_OK)
}
