use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::{FeatureShard, ResponseShard};
use crate::protocol::FederationConfig;

use super::genotype::{EncodedMatrix, Truth};
use super::shard_file::{decode_shard, hex, sha256_hex, write_shard};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Row counts per shard by largest remainder; ties go to the lower index.
/// An empty `proportions` means equal shares.
pub fn partition_counts(rows: usize, shards: usize, proportions: &[f64]) -> Result<Vec<usize>> {
    if shards == 0 {
        return Err(Error::Config("need at least one shard".into()));
    }
    let props: Vec<f64> = if proportions.is_empty() {
        vec![1.0 / shards as f64; shards]
    } else {
        proportions.to_vec()
    };
    if props.len() != shards {
        return Err(Error::Config(format!(
            "{} proportions for {shards} shards",
            props.len()
        )));
    }
    if props.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Config("proportions must be non-negative".into()));
    }
    let total: f64 = props.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("proportions sum to {total}, not 1")));
    }
    let exact: Vec<f64> = props.iter().map(|p| p * rows as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shards).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().take(rows.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Config(format!("shard {k} would receive no rows")));
    }
    Ok(counts)
}

/// Shuffles rows with `seed` and splits them into shards. Each shard keeps
/// its rows in ascending global order; global ids are the matrix row indices.
pub fn partition(
    matrix: &EncodedMatrix,
    shards: usize,
    proportions: &[f64],
    seed: u64,
) -> Result<Vec<(FeatureShard, ResponseShard)>> {
    let counts = partition_counts(matrix.rows, shards, proportions)?;
    let mut perm: Vec<usize> = (0..matrix.rows).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = matrix.rows;
    let mut out = Vec::with_capacity(shards);
    let mut start = 0;
    for (k, &count) in counts.iter().enumerate() {
        let mut rows = perm[start..start + count].to_vec();
        rows.sort_unstable();
        start += count;
        let mut values = Vec::with_capacity(count * matrix.cols);
        for j in 0..matrix.cols {
            let col = &matrix.values[j * n..(j + 1) * n];
            values.extend(rows.iter().map(|&i| col[i]));
        }
        let a = FeatureShard::new(k as u32, count, matrix.cols, values)?
            .with_row_ids(rows.iter().map(|&i| i as u64).collect())?;
        let y = ResponseShard::new(k as u32, rows.iter().map(|&i| matrix.response[i]).collect());
        out.push((a, y));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub shard_id: u32,
    /// Relative to the manifest's directory.
    pub file: String,
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub format_version: u32,
    pub federation_id: String,
    pub feature_count: usize,
    pub total_rows: usize,
    pub seed: u64,
    pub shards: Vec<ShardEntry>,
    #[serde(default)]
    pub snp_ids: Vec<usize>,
    #[serde(default)]
    pub truth: Option<Truth>,
}

impl ShardManifest {
    pub fn shard_rows(&self) -> Vec<usize> {
        self.shards.iter().map(|s| s.rows).collect()
    }

    pub fn federation_config(&self) -> FederationConfig {
        FederationConfig::new(self.feature_count, self.shard_rows())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest version {}",
                m.format_version
            )));
        }
        if m.shards.iter().map(|s| s.rows).sum::<usize>() != m.total_rows {
            return Err(Error::Format("shard rows do not sum to total_rows".into()));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }

    pub fn shard_path(&self, dir: &Path, k: usize) -> PathBuf {
        dir.join(&self.shards[k].file)
    }

    /// Checks every shard file's digest against the manifest.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (k, entry) in self.shards.iter().enumerate() {
            let bytes = fs::read(self.shard_path(dir, k))?;
            let digest = sha256_hex(&bytes);
            if digest != entry.sha256 {
                return Err(Error::Format(format!(
                    "shard {} digest {digest} does not match manifest {}",
                    entry.shard_id, entry.sha256
                )));
            }
        }
        Ok(())
    }

    /// Reads shard `k` and checks it against its manifest entry.
    pub fn load_shard(&self, dir: &Path, k: usize) -> Result<(FeatureShard, ResponseShard)> {
        let entry = self
            .shards
            .get(k)
            .ok_or_else(|| Error::Config(format!("manifest has no shard {k}")))?;
        let bytes = fs::read(self.shard_path(dir, k))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::Format(format!("shard {k} digest mismatch")));
        }
        let (a, y) = decode_shard(&bytes)?;
        if a.rows() != entry.rows || a.cols() != self.feature_count || a.shard_id() != entry.shard_id {
            return Err(Error::Format(format!("shard {k} header disagrees with manifest")));
        }
        Ok((a, y))
    }

    pub fn load_shards(&self, dir: &Path) -> Result<Vec<(FeatureShard, ResponseShard)>> {
        (0..self.shards.len()).map(|k| self.load_shard(dir, k)).collect()
    }
}

/// Writes `shard_<k>.bin` files and `manifest.json` into `dir`.
pub fn write_federation(
    dir: &Path,
    shards: &[(FeatureShard, ResponseShard)],
    seed: u64,
    snp_ids: Vec<usize>,
    truth: Option<Truth>,
) -> Result<ShardManifest> {
    let p = shards
        .first()
        .map(|(a, _)| a.cols())
        .ok_or_else(|| Error::EmptyDataset("no shards to write".into()))?;
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(shards.len());
    let mut fed_hash = Sha256::new();
    for (k, (a, y)) in shards.iter().enumerate() {
        if a.cols() != p {
            return Err(Error::Dimension("shards disagree on feature count".into()));
        }
        let file = format!("shard_{k}.bin");
        let sha256 = write_shard(&dir.join(&file), a, y)?;
        fed_hash.update(sha256.as_bytes());
        entries.push(ShardEntry {
            shard_id: a.shard_id(),
            file,
            rows: a.rows(),
            sha256,
        });
    }
    let manifest = ShardManifest {
        format_version: MANIFEST_VERSION,
        federation_id: hex(&fed_hash.finalize()[..8]),
        feature_count: p,
        total_rows: entries.iter().map(|e| e.rows).sum(),
        seed,
        shards: entries,
        snp_ids,
        truth,
    };
    manifest.save(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Reassembles the global matrix, rows ordered by global id.
pub fn merge_shards(shards: &[(FeatureShard, ResponseShard)]) -> Result<EncodedMatrix> {
    let p = shards.first().map_or(0, |(a, _)| a.cols());
    let n: usize = shards.iter().map(|(a, _)| a.rows()).sum();
    let mut slot = vec![None; n];
    for (s, (a, _)) in shards.iter().enumerate() {
        if a.cols() != p {
            return Err(Error::Dimension("shards disagree on feature count".into()));
        }
        for (i, &id) in a.row_ids().iter().enumerate() {
            let id = id as usize;
            if id >= n || slot[id].is_some() {
                return Err(Error::Format(format!("row id {id} is out of range or repeated")));
            }
            slot[id] = Some((s, i));
        }
    }
    let slot: Vec<(usize, usize)> = slot.into_iter().map(|s| s.expect("all ids filled")).collect();
    let mut values = Vec::with_capacity(n * p);
    for j in 0..p {
        values.extend(slot.iter().map(|&(s, i)| shards[s].0.get(i, j)));
    }
    let response = slot.iter().map(|&(s, i)| shards[s].1.values()[i]).collect();
    Ok(EncodedMatrix {
        rows: n,
        cols: p,
        values,
        response,
        snp_ids: (0..p).collect(),
        truth: None,
    })
}

pub fn merge_by_manifest(manifest_path: &Path) -> Result<EncodedMatrix> {
    let manifest = ShardManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut merged = merge_shards(&manifest.load_shards(dir)?)?;
    if !manifest.snp_ids.is_empty() {
        merged.snp_ids = manifest.snp_ids;
    }
    merged.truth = manifest.truth;
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(n: usize, p: usize) -> EncodedMatrix {
        EncodedMatrix {
            rows: n,
            cols: p,
            values: (0..n * p).map(|v| v as f64 * 0.5 - 3.0).collect(),
            response: (0..n).map(|i| i as f64).collect(),
            snp_ids: (0..p).collect(),
            truth: None,
        }
    }

    #[test]
    fn paper_split_counts() {
        let props = [326.0 / 717.0, 215.0 / 717.0, 176.0 / 717.0];
        assert_eq!(partition_counts(717, 3, &props).unwrap(), vec![326, 215, 176]);
    }

    #[test]
    fn largest_remainder_sums_to_rows() {
        assert_eq!(partition_counts(10, 3, &[]).unwrap(), vec![4, 3, 3]);
        assert!(partition_counts(2, 3, &[]).is_err());
        assert!(partition_counts(10, 2, &[0.5, 0.6]).is_err());
        assert!(partition_counts(10, 2, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn single_shard_is_the_dataset() {
        let m = matrix(7, 3);
        let shards = partition(&m, 1, &[1.0], 9).unwrap();
        assert_eq!(shards[0].0.values(), &m.values[..]);
        assert_eq!(shards[0].1.values(), &m.response[..]);
    }

    #[test]
    fn merge_restores_original() {
        let m = matrix(23, 4);
        let shards = partition(&m, 3, &[], 5).unwrap();
        assert_eq!(merge_shards(&shards).unwrap(), m);
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = matrix(12, 2);
        let shards = partition(&m, 2, &[0.5, 0.5], 1).unwrap();
        let man = write_federation(dir.path(), &shards, 1, m.snp_ids.clone(), None).unwrap();
        man.verify(dir.path()).unwrap();
        assert_eq!(merge_by_manifest(&dir.path().join(MANIFEST_FILE)).unwrap(), m);
        let bad = dir.path().join("shard_1.bin");
        let mut bytes = fs::read(&bad).unwrap();
        bytes[40] ^= 0xff;
        fs::write(&bad, bytes).unwrap();
        assert!(man.verify(dir.path()).is_err());
        assert!(man.load_shards(dir.path()).is_err());
    }
}
