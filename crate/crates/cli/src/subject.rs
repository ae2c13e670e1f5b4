// SPDX-License-Identifier: Apache-2.0

//! The structure under test, with the traversal modes each one supports.

use rayon::prelude::*;
use shardvec_core::sharded_array::split_contiguous;
use shardvec_core::{
    ChunkTableArray, DoublingArray, DynamicArray, GrowableArray, ReserveStrategy, ResizeStats, StaticArray,
    StructureKind, StructureParams,
};

use crate::{BenchResult, RwMode};

pub enum Subject {
    Static(StaticArray<u32>),
    Doubling(DoublingArray<u32>),
    ChunkTable(ChunkTableArray<u32>),
    GgArray(GrowableArray<u32>),
}

fn add_one(x: &mut u32) {
    *x = x.wrapping_add(1);
}

impl Subject {
    pub fn new(kind: StructureKind, params: &StructureParams) -> BenchResult<Self> {
        Ok(match kind {
            StructureKind::Static => Subject::Static(StaticArray::new(params.static_capacity)?),
            StructureKind::Doubling => Subject::Doubling(DoublingArray::new(params.initial_capacity.max(1))?),
            StructureKind::ChunkTable => Subject::ChunkTable(ChunkTableArray::with_capacity(
                params.chunk_size,
                params.initial_capacity,
            )?),
            StructureKind::GgArray => {
                Subject::GgArray(GrowableArray::with_first_bucket(params.shards, params.first_bucket)?)
            }
        })
    }

    pub fn as_dyn(&self) -> &dyn DynamicArray<u32> {
        match self {
            Subject::Static(a) => a,
            Subject::Doubling(a) => a,
            Subject::ChunkTable(a) => a,
            Subject::GgArray(a) => a,
        }
    }

    pub fn as_dyn_mut(&mut self) -> &mut dyn DynamicArray<u32> {
        match self {
            Subject::Static(a) => a,
            Subject::Doubling(a) => a,
            Subject::ChunkTable(a) => a,
            Subject::GgArray(a) => a,
        }
    }

    pub fn kind(&self) -> StructureKind {
        self.as_dyn().kind()
    }

    pub fn len(&self) -> usize {
        self.as_dyn().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.as_dyn().capacity()
    }

    pub fn counter_ops(&self) -> u64 {
        self.as_dyn().counter_ops()
    }

    pub fn to_vec(&self) -> Vec<u32> {
        self.as_dyn().to_vec()
    }

    pub fn grow(&mut self, min_capacity: usize) -> BenchResult<ResizeStats> {
        Ok(self.as_dyn_mut().grow_to(min_capacity)?)
    }

    /// Concurrent lane insertion followed by a commit. The sharded array
    /// gives each shard one contiguous slice; the others give one to each
    /// of `workers` inserters.
    pub fn insert(&mut self, values: &[u32], workers: usize, strategy: ReserveStrategy) -> BenchResult<()> {
        let target = self.as_dyn();
        match self {
            Subject::GgArray(_) => target.insert_lanes(values, strategy)?,
            _ => split_contiguous(values, workers)
                .par_iter()
                .try_for_each(|chunk| target.insert_lanes(chunk, strategy))?,
        }
        self.as_dyn_mut().commit();
        Ok(())
    }

    /// `passes` rounds of +1 over every element.
    pub fn rw(&mut self, mode: RwMode, grain: usize, passes: usize) {
        for _ in 0..passes {
            match (&mut *self, mode) {
                (Subject::GgArray(a), RwMode::Global) => a.update_global(grain, add_one),
                (Subject::GgArray(a), RwMode::GlobalCached) => a.update_global_cached(grain, add_one),
                (Subject::GgArray(a), RwMode::PerShard) => a.for_each_shard(add_one),
                (Subject::ChunkTable(a), RwMode::Global | RwMode::GlobalCached) => {
                    a.update_indexed(grain, add_one)
                }
                (Subject::ChunkTable(a), RwMode::PerShard) => a.for_each_chunk(add_one),
                (other, _) => other.as_dyn_mut().update_all(&add_one),
            }
        }
    }
}
