//! Checkpoints: the server table plus every client's `(u, D)`, with a JSON
//! manifest. Layout of `<dir>/round_NNNN/`:
//!
//! * `manifest.json`
//! * `C.bin`: binary matrix dump of the global table
//! * `clients.bin`: for each client in index order, `u` as a `1 x k` matrix
//!   followed by `D` as an `m x k` matrix (a `0 x k` matrix when absent)

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::matrix::{DumpFormat, Matrix};
use crate::runtime::{ClientState, ServerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub round: u64,
    pub seed: u64,
    pub config_hash: String,
    pub variant: String,
    pub n: usize,
    pub m: usize,
    pub k: usize,
}

pub fn round_dir(root: &Path, round: u64) -> PathBuf {
    root.join(format!("round_{round:04}"))
}

pub fn save(
    root: &Path,
    manifest: &CheckpointManifest,
    server: &ServerState,
    clients: &[ClientState],
) -> Result<PathBuf> {
    let dir = round_dir(root, manifest.round);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    server.c.save(&dir.join("C.bin"), DumpFormat::Binary)?;

    let path = dir.join("clients.bin");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let k = server.c.cols();
    for cl in clients {
        let u = Matrix::from_vec(1, k, cl.u.clone())?;
        u.write_binary(&mut w).map_err(|e| Error::io(&path, e))?;
        match &cl.d {
            Some(d) => d.write_binary(&mut w),
            None => Matrix::zeros(0, k).write_binary(&mut w),
        }
        .map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let mpath = dir.join("manifest.json");
    let file = File::create(&mpath).map_err(|e| Error::io(&mpath, e))?;
    serde_json::to_writer_pretty(file, manifest)?;
    Ok(dir)
}

/// Loads a checkpoint directory and re-attaches the client datasets.
pub fn load(
    dir: &Path,
    datasets: Vec<ClientDataset>,
) -> Result<(CheckpointManifest, ServerState, Vec<ClientState>)> {
    let mpath = dir.join("manifest.json");
    let file = File::open(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: CheckpointManifest = serde_json::from_reader(BufReader::new(file))?;
    if datasets.len() != manifest.n {
        return Err(Error::MismatchedRuns(format!(
            "checkpoint has {} clients, data has {}",
            manifest.n,
            datasets.len()
        )));
    }
    let c = Matrix::load(&dir.join("C.bin"), DumpFormat::Binary)?;
    c.check_shape(manifest.m, manifest.k, "checkpoint C")?;

    let path = dir.join("clients.bin");
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut r = BufReader::new(file);
    let mut clients = Vec::with_capacity(manifest.n);
    for ds in datasets {
        let u = Matrix::read_binary(&mut r)?;
        u.check_shape(1, manifest.k, "checkpoint u")?;
        let d = Matrix::read_binary(&mut r)?;
        let d = if d.rows() == 0 {
            None
        } else {
            d.check_shape(manifest.m, manifest.k, "checkpoint D")?;
            Some(d)
        };
        clients.push(ClientState {
            client_id: ds.client_id,
            u: u.into_vec(),
            d,
            dataset: ds,
        });
    }
    let server = ServerState {
        c,
        round: manifest.round,
        last_selection: Vec::new(),
    };
    Ok((manifest, server, clients))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{initialize, VariantKind, VariantSpec};

    #[test]
    fn save_then_load() {
        let tmp = tempfile::tempdir().unwrap();
        let datasets: Vec<_> = (0..3)
            .map(|i| ClientDataset::new(i, 8, vec![0, 1], 2 + i as u32, vec![7]).unwrap())
            .collect();
        for kind in [VariantKind::FedRap, VariantKind::FedRapC] {
            let (server, clients) = initialize(&VariantSpec::new(kind), datasets.clone(), 4, 1).unwrap();
            let manifest = CheckpointManifest {
                round: 12,
                seed: 1,
                config_hash: "abc".into(),
                variant: kind.as_str().into(),
                n: 3,
                m: 8,
                k: 4,
            };
            let dir = save(tmp.path(), &manifest, &server, &clients).unwrap();
            assert!(dir.ends_with("round_0012"));
            let (m2, s2, c2) = load(&dir, datasets.clone()).unwrap();
            assert_eq!(m2, manifest);
            assert_eq!(s2.c, server.c);
            for (a, b) in clients.iter().zip(&c2) {
                assert_eq!(a.u, b.u);
                assert_eq!(a.d, b.d);
            }
        }
    }
}
