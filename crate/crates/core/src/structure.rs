// SPDX-License-Identifier: Apache-2.0

//! A common driving surface over the sharded array and the baselines, so the
//! same operation script can run against any of them.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::baselines::{ChunkTableArray, DoublingArray, StaticArray, DEFAULT_CHUNK_SIZE};
use crate::error::{Error, Result};
use crate::insert_index::ReserveStrategy;
use crate::sharded_array::{split_contiguous, GrowDistribution, GrowableArray};

/// What an exclusive resize cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ResizeStats {
    pub elements_copied: u64,
    pub allocations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StructureKind {
    Static,
    Doubling,
    ChunkTable,
    GgArray,
}

impl StructureKind {
    pub const ALL: [StructureKind; 4] =
        [StructureKind::Static, StructureKind::Doubling, StructureKind::ChunkTable, StructureKind::GgArray];

    pub fn as_str(&self) -> &'static str {
        match self {
            StructureKind::Static => "static",
            StructureKind::Doubling => "doubling",
            StructureKind::ChunkTable => "chunktable",
            StructureKind::GgArray => "ggarray",
        }
    }
}

impl fmt::Display for StructureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StructureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StructureKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown structure `{s}`")))
    }
}

/// Construction parameters shared by every structure.
#[derive(Debug, Clone, Copy)]
pub struct StructureParams {
    /// Capacity of the static array; it never grows past this.
    pub static_capacity: usize,
    pub initial_capacity: usize,
    pub shards: usize,
    pub first_bucket: usize,
    pub chunk_size: usize,
}

impl Default for StructureParams {
    fn default() -> Self {
        Self {
            static_capacity: 1 << 20,
            initial_capacity: 1,
            shards: crate::sharded_array::DEFAULT_SHARDS,
            first_bucket: crate::bucket_vector::DEFAULT_FIRST_BUCKET,
            chunk_size: DEFAULT_CHUNK_SIZE,
        }
    }
}

/// A growable array that accepts concurrent lane insertions between
/// exclusive commits.
pub trait DynamicArray<T>: Send + Sync {
    fn kind(&self) -> StructureKind;

    /// Committed length.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn capacity(&self) -> usize;

    /// Make room for `min_capacity` elements with every inserter stopped.
    fn grow_to(&mut self, min_capacity: usize) -> Result<ResizeStats>;

    /// One lane per value; callable concurrently.
    fn insert_lanes(&self, values: &[T], strategy: ReserveStrategy) -> Result<()>;

    /// Epoch barrier: publish completed insertions.
    fn commit(&mut self);

    /// Apply `op` to every committed element.
    fn update_all(&mut self, op: &(dyn Fn(&mut T) + Sync));

    fn to_vec(&self) -> Vec<T>;

    /// Shared-counter operations issued so far.
    fn counter_ops(&self) -> u64;
}

pub fn build<T>(kind: StructureKind, params: &StructureParams) -> Result<Box<dyn DynamicArray<T>>>
where
    T: Copy + Default + Send + Sync + 'static,
{
    Ok(match kind {
        StructureKind::Static => Box::new(StaticArray::new(params.static_capacity)?),
        StructureKind::Doubling => Box::new(DoublingArray::new(params.initial_capacity.max(1))?),
        StructureKind::ChunkTable => {
            Box::new(ChunkTableArray::with_capacity(params.chunk_size, params.initial_capacity)?)
        }
        StructureKind::GgArray => {
            let array = GrowableArray::with_first_bucket(params.shards, params.first_bucket)?;
            array.grow(params.initial_capacity, GrowDistribution::Even)?;
            Box::new(array)
        }
    })
}

impl<T: Copy + Default + Send + Sync> DynamicArray<T> for StaticArray<T> {
    fn kind(&self) -> StructureKind {
        StructureKind::Static
    }

    fn len(&self) -> usize {
        StaticArray::len(self)
    }

    fn capacity(&self) -> usize {
        StaticArray::capacity(self)
    }

    fn grow_to(&mut self, min_capacity: usize) -> Result<ResizeStats> {
        if min_capacity > self.capacity() {
            return Err(Error::CapacityExhausted { requested: min_capacity, available: self.capacity() });
        }
        Ok(ResizeStats::default())
    }

    fn insert_lanes(&self, values: &[T], strategy: ReserveStrategy) -> Result<()> {
        StaticArray::insert_lanes(self, values, strategy)
    }

    fn commit(&mut self) {
        self.sync();
    }

    fn update_all(&mut self, op: &(dyn Fn(&mut T) + Sync)) {
        self.as_mut_slice().par_iter_mut().for_each(op);
    }

    fn to_vec(&self) -> Vec<T> {
        self.as_slice().to_vec()
    }

    fn counter_ops(&self) -> u64 {
        self.counter().ops()
    }
}

impl<T: Copy + Default + Send + Sync> DynamicArray<T> for DoublingArray<T> {
    fn kind(&self) -> StructureKind {
        StructureKind::Doubling
    }

    fn len(&self) -> usize {
        DoublingArray::len(self)
    }

    fn capacity(&self) -> usize {
        DoublingArray::capacity(self)
    }

    fn grow_to(&mut self, min_capacity: usize) -> Result<ResizeStats> {
        self.doubling_resize(min_capacity)
    }

    fn insert_lanes(&self, values: &[T], strategy: ReserveStrategy) -> Result<()> {
        DoublingArray::insert_lanes(self, values, strategy)
    }

    fn commit(&mut self) {
        self.sync();
    }

    fn update_all(&mut self, op: &(dyn Fn(&mut T) + Sync)) {
        self.as_mut_slice().par_iter_mut().for_each(op);
    }

    fn to_vec(&self) -> Vec<T> {
        self.as_slice().to_vec()
    }

    fn counter_ops(&self) -> u64 {
        self.counter().ops()
    }
}

impl<T: Copy + Default + Send + Sync> DynamicArray<T> for ChunkTableArray<T> {
    fn kind(&self) -> StructureKind {
        StructureKind::ChunkTable
    }

    fn len(&self) -> usize {
        ChunkTableArray::len(self)
    }

    fn capacity(&self) -> usize {
        ChunkTableArray::capacity(self)
    }

    fn grow_to(&mut self, min_capacity: usize) -> Result<ResizeStats> {
        self.chunk_resize(min_capacity)
    }

    fn insert_lanes(&self, values: &[T], strategy: ReserveStrategy) -> Result<()> {
        ChunkTableArray::insert_lanes(self, values, strategy)
    }

    fn commit(&mut self) {
        self.sync();
    }

    fn update_all(&mut self, op: &(dyn Fn(&mut T) + Sync)) {
        self.for_each_chunk(op);
    }

    fn to_vec(&self) -> Vec<T> {
        ChunkTableArray::to_vec(self)
    }

    fn counter_ops(&self) -> u64 {
        self.counter().ops()
    }
}

impl<T: Copy + Default + Send + Sync> DynamicArray<T> for GrowableArray<T> {
    fn kind(&self) -> StructureKind {
        StructureKind::GgArray
    }

    fn len(&self) -> usize {
        GrowableArray::len(self)
    }

    fn capacity(&self) -> usize {
        GrowableArray::capacity(self)
    }

    fn grow_to(&mut self, min_capacity: usize) -> Result<ResizeStats> {
        let report = self.grow(min_capacity, GrowDistribution::Even)?;
        Ok(ResizeStats { elements_copied: 0, allocations: report.buckets_allocated })
    }

    /// Values are split into one contiguous chunk per shard.
    fn insert_lanes(&self, values: &[T], strategy: ReserveStrategy) -> Result<()> {
        let chunks = split_contiguous(values, self.shard_count());
        self.shards()
            .par_iter()
            .zip(chunks.par_iter())
            .try_for_each(|(shard, chunk)| shard.push_back_lanes(chunk, strategy))
    }

    fn commit(&mut self) {
        GrowableArray::commit(self);
    }

    fn update_all(&mut self, op: &(dyn Fn(&mut T) + Sync)) {
        self.for_each_shard(op);
    }

    fn to_vec(&self) -> Vec<T> {
        self.flatten()
    }

    fn counter_ops(&self) -> u64 {
        GrowableArray::counter_ops(self)
    }
}
