//! Synthetic genotypes, QC, encoding, partitioning and shard persistence.

mod csv_import;
mod genotype;
mod partition;
mod shard_file;

pub use csv_import::{read_csv, write_csv};
pub use genotype::{
    gen_synthetic, impute_and_encode, maf_filter, EncodedMatrix, GenotypeDataset, SyntheticConfig, Truth,
    MISSING,
};
pub use partition::{
    merge_by_manifest, merge_shards, partition, partition_counts, write_federation,
    ShardEntry, ShardManifest, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use shard_file::{decode_shard, encode_shard, read_shard, sha256_hex, write_shard, SHARD_FORMAT_VERSION};

impl EncodedMatrix {
    pub fn to_central(&self) -> crate::error::Result<crate::central::CentralProblem> {
        crate::central::CentralProblem::new(self.rows, self.cols, self.values.clone(), self.response.clone())
    }
}
