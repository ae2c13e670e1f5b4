// SPDX-License-Identifier: Apache-2.0

//! A growable array split into independent [`ShardVector`]s.
//!
//! Each shard grows on its own; a directory holding the exclusive prefix sum
//! of shard sizes maps global indices onto `(shard, local)` pairs by binary
//! search. The directory is rebuilt by [`GrowableArray::commit`], which is the
//! epoch boundary: between commits readers see the sizes of the last commit
//! even if shards have grown since.

use std::fmt;

use rayon::prelude::*;

use crate::bucket_vector::{BucketLayout, ShardVector, DEFAULT_FIRST_BUCKET};
use crate::error::{Error, Result};
use crate::insert_index::{exclusive_scan, ReserveStrategy, ReservedRange};

pub const DEFAULT_SHARDS: usize = 32;

/// How [`GrowableArray::grow`] spreads a capacity target over the shards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GrowDistribution {
    /// `target / S` per shard, the remainder spread one each over the first shards.
    #[default]
    Even,
    /// In proportion to each shard's committed size.
    Proportional,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GrowReport {
    pub buckets_allocated: usize,
    pub capacity_after: usize,
}

/// Locate `g` in an exclusive prefix table of `S + 1` entries.
///
/// Returns the unique shard `s` with `prefix[s] <= g < prefix[s + 1]`; empty
/// shards are never returned.
pub fn locate_in_prefix(prefix: &[usize], g: usize) -> Result<(usize, usize)> {
    let total = prefix.last().copied().unwrap_or(0);
    if g >= total {
        return Err(Error::OutOfBounds { index: g, len: total });
    }
    // Last entry not exceeding g; for runs of equal entries this is the final
    // one, which skips empty shards.
    let s = prefix.partition_point(|&p| p <= g) - 1;
    Ok((s, g - prefix[s]))
}

pub struct GrowableArray<T> {
    shards: Vec<ShardVector<T>>,
    prefix: Vec<usize>,
}

impl<T: Copy + Default + Send + Sync> GrowableArray<T> {
    pub fn new(shards: usize) -> Result<Self> {
        Self::with_first_bucket(shards, DEFAULT_FIRST_BUCKET)
    }

    pub fn with_first_bucket(shards: usize, first_bucket_size: usize) -> Result<Self> {
        if shards == 0 {
            return Err(Error::InvalidParameter("shard count must be at least 1".into()));
        }
        let layout = BucketLayout::new(first_bucket_size)?;
        Ok(Self {
            shards: (0..shards).map(|_| ShardVector::with_layout(layout)).collect(),
            prefix: vec![0; shards + 1],
        })
    }

    pub fn shard_count(&self) -> usize {
        self.shards.len()
    }

    pub fn first_bucket_size(&self) -> usize {
        self.shards[0].first_bucket_size()
    }

    pub fn shards(&self) -> &[ShardVector<T>] {
        &self.shards
    }

    pub fn shard(&self, s: usize) -> &ShardVector<T> {
        &self.shards[s]
    }

    /// Exclusive prefix sum of shard sizes as of the last commit, `S + 1` entries.
    pub fn prefix(&self) -> &[usize] {
        &self.prefix
    }

    /// Committed size.
    pub fn len(&self) -> usize {
        self.prefix[self.shards.len()]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.shards.iter().map(ShardVector::capacity).sum()
    }

    /// Bucket allocations over the array's lifetime.
    pub fn allocations(&self) -> usize {
        self.shards.iter().map(ShardVector::allocations).sum()
    }

    /// Shared-counter operations issued on every shard.
    pub fn counter_ops(&self) -> u64 {
        self.shards.iter().map(|s| s.counter().ops()).sum()
    }

    pub fn locate_shard(&self, g: usize) -> Result<(usize, usize)> {
        locate_in_prefix(&self.prefix, g)
    }

    pub fn get_global(&self, g: usize) -> Result<T> {
        let (s, local) = self.locate_shard(g)?;
        self.shards[s].get(local)
    }

    pub fn set_global(&mut self, g: usize, value: T) -> Result<()> {
        let (s, local) = self.locate_shard(g)?;
        self.shards[s].set(local, value)
    }

    /// Concurrent insertion into one shard. Visible after the next commit.
    pub fn push_to_shard(&self, s: usize, values: &[T], strategy: ReserveStrategy) -> Result<ReservedRange> {
        self.shard_checked(s)?.push_back_batch(values, strategy)
    }

    /// Concurrent one-lane-per-value insertion into one shard.
    pub fn push_lanes_to_shard(&self, s: usize, values: &[T], strategy: ReserveStrategy) -> Result<()> {
        self.shard_checked(s)?.push_back_lanes(values, strategy)
    }

    fn shard_checked(&self, s: usize) -> Result<&ShardVector<T>> {
        self.shards.get(s).ok_or(Error::OutOfBounds { index: s, len: self.shards.len() })
    }

    /// Insert `batches[s]` into shard `s` for every shard in parallel, then commit.
    ///
    /// If any shard fails nothing is committed; the shards that succeeded
    /// keep their elements reserved and the next commit publishes them.
    pub fn insert_parallel<B>(&mut self, batches: &[B], strategy: ReserveStrategy) -> Result<()>
    where
        B: AsRef<[T]> + Sync,
    {
        if batches.len() != self.shards.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} batches, got {}",
                self.shards.len(),
                batches.len()
            )));
        }
        let results: Vec<Result<()>> = self
            .shards
            .par_iter()
            .zip(batches.par_iter())
            .map(|(shard, batch)| shard.push_back_lanes(batch.as_ref(), strategy))
            .collect();
        let mut succeeded = Vec::new();
        let mut failed = Vec::new();
        for (s, res) in results.into_iter().enumerate() {
            match res {
                Ok(()) => succeeded.push(s),
                Err(err) => failed.push((s, Box::new(err))),
            }
        }
        if !failed.is_empty() {
            return Err(Error::PartialInsert { succeeded, failed });
        }
        self.commit();
        Ok(())
    }

    /// Split `values` into `S` contiguous chunks and insert chunk `c` into shard `c`.
    pub fn insert_split(&mut self, values: &[T], strategy: ReserveStrategy) -> Result<()> {
        let batches = split_contiguous(values, self.shards.len());
        self.insert_parallel(&batches, strategy)
    }

    /// Publish every completed insertion and rebuild the directory.
    pub fn commit(&mut self) {
        let sizes: Vec<usize> = self.shards.par_iter_mut().map(|s| s.sync()).collect();
        let mut prefix = exclusive_scan(&sizes);
        prefix.push(prefix.last().copied().unwrap_or(0) + sizes.last().copied().unwrap_or(0));
        self.prefix = prefix;
    }

    /// Reserve capacity for `target_total` elements across the shards. Never
    /// moves an element; allocates nothing when capacity already suffices.
    pub fn grow(&self, target_total: usize, distribution: GrowDistribution) -> Result<GrowReport> {
        let shards = self.shards.len();
        let total = self.len();
        let targets: Vec<usize> = match distribution {
            GrowDistribution::Even => even_split(target_total, shards),
            GrowDistribution::Proportional if total == 0 => even_split(target_total, shards),
            GrowDistribution::Proportional => self
                .shards
                .iter()
                .map(|s| ((s.len() as u128 * target_total as u128).div_ceil(total as u128)) as usize)
                .collect(),
        };
        let allocated: Vec<Result<usize>> = self
            .shards
            .par_iter()
            .zip(targets.par_iter())
            .map(|(shard, &target)| shard.reserve(target))
            .collect();
        let mut buckets_allocated = 0;
        for res in allocated {
            buckets_allocated += res?;
        }
        Ok(GrowReport { buckets_allocated, capacity_after: self.capacity() })
    }

    /// Apply `op` to every committed element, shard by shard in parallel.
    /// Within a shard elements are visited in ascending local index.
    pub fn for_each_shard<F>(&mut self, op: F)
    where
        F: Fn(&mut T) + Sync + Send,
    {
        self.shards.par_iter_mut().for_each(|shard| shard.for_each_mut(&op));
    }

    /// Like [`for_each_shard`](Self::for_each_shard) but collects failures.
    pub fn try_for_each_shard<F, E>(&mut self, op: F) -> Result<()>
    where
        F: Fn(&mut T) -> std::result::Result<(), E> + Sync + Send,
        E: fmt::Display + Send,
    {
        let failures: Vec<(usize, Option<E>)> = self
            .shards
            .par_iter_mut()
            .map(|shard| {
                let mut count = 0;
                let mut first = None;
                shard.for_each_mut(|x| {
                    if let Err(e) = op(x) {
                        count += 1;
                        first.get_or_insert(e);
                    }
                });
                (count, first)
            })
            .collect();
        let count: usize = failures.iter().map(|(c, _)| c).sum();
        match failures.into_iter().find_map(|(_, e)| e) {
            Some(first) => Err(Error::Traversal { count, first: first.to_string() }),
            None => Ok(()),
        }
    }

    /// Apply `op` through global indices, `grain` consecutive indices per
    /// task, searching the directory for every element.
    pub fn update_global<F>(&mut self, grain: usize, op: F)
    where
        F: Fn(&mut T) + Sync + Send,
    {
        let raw = RawShards(&self.shards);
        let prefix = &self.prefix;
        let grain = grain.max(1);
        let tasks = self.len().div_ceil(grain);
        (0..tasks).into_par_iter().for_each(|task| {
            let end = ((task + 1) * grain).min(prefix[prefix.len() - 1]);
            for g in task * grain..end {
                let (s, local) = locate_in_prefix(prefix, g).expect("index below committed size");
                // Safety: tasks cover disjoint global indices and `&mut self` is held.
                unsafe { op(&mut *raw.slot(s, local)) };
            }
        });
    }

    /// Like [`update_global`](Self::update_global) but each task searches the
    /// directory once and then walks forward.
    pub fn update_global_cached<F>(&mut self, grain: usize, op: F)
    where
        F: Fn(&mut T) + Sync + Send,
    {
        let raw = RawShards(&self.shards);
        let prefix = &self.prefix;
        let grain = grain.max(1);
        let tasks = self.len().div_ceil(grain);
        (0..tasks).into_par_iter().for_each(|task| {
            let start = task * grain;
            let end = (start + grain).min(prefix[prefix.len() - 1]);
            let (mut s, mut local) = locate_in_prefix(prefix, start).expect("index below committed size");
            for _ in start..end {
                while local >= prefix[s + 1] - prefix[s] {
                    s += 1;
                    local = 0;
                }
                // Safety: as in `update_global`.
                unsafe { op(&mut *raw.slot(s, local)) };
                local += 1;
            }
        });
    }

    /// Committed contents in global order.
    pub fn iter(&self) -> impl Iterator<Item = T> + '_ {
        self.shards.iter().flat_map(|s| s.iter())
    }

    /// Copy the committed contents into one contiguous vector.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = vec![T::default(); self.len()];
        let mut chunks = Vec::with_capacity(self.shards.len());
        let mut rest = out.as_mut_slice();
        for shard in &self.shards {
            let (head, tail) = rest.split_at_mut(shard.len());
            chunks.push((shard, head));
            rest = tail;
        }
        chunks.into_par_iter().for_each(|(shard, dst)| {
            let mut at = 0;
            for seg in shard.segments() {
                dst[at..at + seg.len()].copy_from_slice(seg);
                at += seg.len();
            }
        });
        out
    }

    /// Build an array whose shard `c` holds the `c`-th contiguous chunk of
    /// `ceil(n / S)` elements, preserving global order.
    pub fn from_flat(values: &[T], shards: usize, first_bucket_size: usize) -> Result<Self> {
        let mut array = Self::with_first_bucket(shards, first_bucket_size)?;
        let chunks = split_contiguous(values, shards);
        array.shards.par_iter().zip(chunks.par_iter()).try_for_each(|(shard, chunk)| {
            shard.push_back_batch(chunk, ReserveStrategy::Atomic).map(|_| ())
        })?;
        array.commit();
        Ok(array)
    }
}

impl<T: Copy + Default + Send + Sync + fmt::Debug> fmt::Debug for GrowableArray<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GrowableArray")
            .field("shards", &self.shards.len())
            .field("len", &self.len())
            .field("capacity", &self.capacity())
            .finish()
    }
}

/// `total` split over `parts` as evenly as possible; the first
/// `total % parts` entries get one extra.
pub fn even_split(total: usize, parts: usize) -> Vec<usize> {
    let (base, extra) = (total / parts, total % parts);
    (0..parts).map(|p| base + usize::from(p < extra)).collect()
}

/// `parts` contiguous chunks of `ceil(n / parts)` elements; trailing chunks
/// may be short or empty.
pub fn split_contiguous<T>(values: &[T], parts: usize) -> Vec<&[T]> {
    let chunk = values.len().div_ceil(parts.max(1));
    (0..parts)
        .map(|c| {
            let start = (c * chunk).min(values.len());
            let end = (start + chunk).min(values.len());
            &values[start..end]
        })
        .collect()
}

struct RawShards<'a, T>(&'a [ShardVector<T>]);

impl<T: Copy + Default> RawShards<'_, T> {
    /// # Safety
    ///
    /// `local` is committed in shard `s` and no one else accesses the slot.
    #[inline]
    unsafe fn slot(&self, s: usize, local: usize) -> *mut T {
        self.0[s].slot_ptr(local)
    }
}

// Safety: only used to hand out pointers to disjoint slots while the owning
// array is mutably borrowed.
unsafe impl<T: Send + Sync> Sync for RawShards<'_, T> {}
