//! One configured training run, end to end: data loading, training, and the
//! on-disk layout of its results.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{sparsity_stats, SparsityReport};
use crate::checkpoint::{self, CheckpointManifest};
use crate::config::ExperimentConfig;
use crate::data::PreparedData;
use crate::error::{Error, Result};
use crate::matrix::DumpFormat;
use crate::runtime::{initialize, run_training, RoundReport, RoundView, TrainingOutcome};

pub const CONFIG_FILE: &str = "config.toml";
pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SPLIT_FILE: &str = "split.json";
pub const GLOBAL_DUMP: &str = "C.txt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
    pub rounds: u64,
    pub final_report: RoundReport,
    pub sparsity: SparsityReport,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let path = cfg
        .dataset
        .as_deref()
        .ok_or_else(|| Error::Config("no dataset given".into()))?;
    PreparedData::load(
        path,
        cfg.rating_format()?,
        cfg.min_interactions,
        cfg.eval_negatives,
        cfg.seed,
    )
}

/// Trains with `cfg` on `data`. With `out` set, the resolved config, the
/// split manifest, the round stream, checkpoints, a text dump of the final
/// `C`, and a summary are written under it.
pub fn run(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    out: Option<&Path>,
) -> Result<(TrainingOutcome, RunSummary)> {
    let variant = cfg.variant_spec();
    let hp = cfg.hyper_params();
    let hash = cfg.config_hash();
    let (server, clients) = initialize(&variant, data.clients.clone(), cfg.dim, cfg.seed)?;
    let (m, k) = server.c.shape();

    let mut rounds_out = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            write_text(&dir.join(CONFIG_FILE), &cfg.to_toml())?;
            data.manifest().save(&dir.join(SPLIT_FILE))?;
            let path = dir.join(ROUNDS_FILE);
            let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            Some((path, BufWriter::new(f)))
        }
        None => None,
    };

    let label = variant.label();
    let mut on_round = |view: RoundView<'_>| -> Result<()> {
        if let Some((path, w)) = rounds_out.as_mut() {
            writeln!(w, "{}", view.report.to_json_line())
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(path.as_path(), e))?;
        }
        if let Some(dir) = out {
            let round = view.report.round;
            if cfg.checkpoint_every > 0 && round.is_multiple_of(cfg.checkpoint_every) {
                let manifest = CheckpointManifest {
                    round,
                    seed: cfg.seed,
                    config_hash: hash.clone(),
                    variant: label.clone(),
                    n: view.clients.len(),
                    m,
                    k,
                };
                checkpoint::save(&dir.join(CHECKPOINT_DIR), &manifest, view.server, view.clients)?;
            }
        }
        Ok(())
    };
    let outcome = run_training(
        &variant,
        server,
        clients,
        &hp,
        cfg.seed,
        &cfg.run_options(),
        &mut on_round,
    )?;

    let final_report = outcome
        .reports
        .last()
        .cloned()
        .ok_or_else(|| Error::InvalidParam("zero rounds requested".into()))?;
    let summary = RunSummary {
        variant: label,
        seed: cfg.seed,
        config_hash: hash,
        rounds: outcome.server.round,
        final_report,
        sparsity: sparsity_stats(&outcome.server.c),
    };
    if let Some(dir) = out {
        outcome.server.c.save(&dir.join(GLOBAL_DUMP), DumpFormat::Text)?;
        let path = dir.join(SUMMARY_FILE);
        write_text(&path, &serde_json::to_string_pretty(&summary)?)?;
    }
    Ok((outcome, summary))
}

/// Reads a JSON-lines round stream.
pub fn read_rounds(path: &Path) -> Result<Vec<RoundReport>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn latest_checkpoint(run_dir: &Path) -> Result<Option<PathBuf>> {
    let root = run_dir.join(CHECKPOINT_DIR);
    if !root.exists() {
        return Ok(None);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(&root)
        .map_err(|e| Error::io(&root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").exists())
        .collect();
    dirs.sort();
    Ok(dirs.pop())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RawInteraction;
    use crate::runtime::VariantKind;

    fn tiny_data() -> PreparedData {
        let mut raw = Vec::new();
        for u in 0..6 {
            for j in 0..8 {
                if (u + j) % 3 != 0 {
                    raw.push(RawInteraction {
                        user_id: format!("u{u}"),
                        item_id: format!("i{j}"),
                        rating: 1.0,
                        timestamp: Some(j as i64),
                    });
                }
            }
        }
        PreparedData::from_interactions(&raw, 3, 2, 5).unwrap()
    }

    #[test]
    fn writes_run_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            variant: VariantKind::FedRap,
            rounds: 4,
            local_epochs: 1,
            dim: 3,
            checkpoint_every: 2,
            ..ExperimentConfig::default()
        };
        let data = tiny_data();
        let (outcome, summary) = run(&cfg, &data, Some(tmp.path())).unwrap();
        let rounds = read_rounds(&tmp.path().join(ROUNDS_FILE)).unwrap();
        assert_eq!(rounds, outcome.reports);
        assert_eq!(summary.rounds, 4);
        let resolved = ExperimentConfig::load(&tmp.path().join(CONFIG_FILE)).unwrap();
        assert_eq!(resolved, cfg);
        let ck = latest_checkpoint(tmp.path()).unwrap().unwrap();
        assert!(ck.ends_with("round_0004"));
        let (manifest, server, _) = checkpoint::load(&ck, data.clients.clone()).unwrap();
        assert_eq!(manifest.config_hash, cfg.config_hash());
        assert_eq!(server.c, outcome.server.c);
        assert!(tmp.path().join(GLOBAL_DUMP).exists());
        assert!(tmp.path().join(SPLIT_FILE).exists());
    }
}
