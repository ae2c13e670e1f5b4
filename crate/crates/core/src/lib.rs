// SPDX-License-Identifier: Apache-2.0

//! Sharded, lock-free growable arrays.
//!
//! A [`ShardVector`] stores elements in buckets of doubling size that are
//! never moved once allocated. A [`GrowableArray`] spreads elements over
//! several of them and keeps a prefix directory for global indexing.
//! Insertions reserve slots through a shared counter, either one atomic
//! operation per lane or one per group after a local scan
//! ([`ReserveStrategy`]). Reads see elements once they are published by an
//! exclusive `sync`/`commit`.
//!
//! ```
//! use shardvec_core::{GrowableArray, ReserveStrategy};
//!
//! let mut array = GrowableArray::<u32>::new(4).unwrap();
//! array.insert_split(&[1, 2, 3, 4, 5], ReserveStrategy::Scan).unwrap();
//! assert_eq!(array.len(), 5);
//! let mut all = array.flatten();
//! all.sort();
//! assert_eq!(all, vec![1, 2, 3, 4, 5]);
//! ```

pub mod baselines;
pub mod bucket_vector;
pub mod error;
pub mod insert_index;
pub mod memory_model;
pub mod sharded_array;
pub mod structure;

pub use baselines::{ChunkTableArray, DoublingArray, StaticArray, DEFAULT_CHUNK_SIZE};
pub use bucket_vector::{
    BucketAlloc, BucketLayout, Location, ShardVector, DEFAULT_FIRST_BUCKET, MAX_BUCKETS,
};
pub use error::{Error, Result};
pub use insert_index::{
    exclusive_scan, LanePlan, ReserveStrategy, ReservedRange, SizeCounter, DEFAULT_GROUP_SIZE,
};
pub use memory_model::{MemoryModelParams, MemoryReport, MemoryRow};
pub use sharded_array::{locate_in_prefix, GrowDistribution, GrowReport, GrowableArray, DEFAULT_SHARDS};
pub use structure::{build, DynamicArray, ResizeStats, StructureKind, StructureParams};
