// SPDX-License-Identifier: Apache-2.0

//! A growable vector stored as a fixed table of buckets whose sizes double.
//!
//! Bucket `b` holds `first_bucket_size << b` slots, so growing never moves an
//! element: new capacity is a new bucket, and every index keeps its address
//! for the lifetime of the vector. Insertion is concurrent through `&self`:
//! an inserter reserves indices on the shared size counter, allocates any
//! missing bucket covering them, then writes.
//!
//! # Epochs
//!
//! Freshly inserted elements are not readable until [`ShardVector::sync`] runs.
//! `sync` takes `&mut self`, so it can only happen once every concurrent
//! inserter has finished; that is the epoch barrier. Reads through `&self`
//! only ever see indices below the length published by the last `sync`, and
//! inserters only ever write at or above it.

use std::cell::UnsafeCell;
use std::fmt;
use std::marker::PhantomData;
use std::ptr;
use std::slice;
use std::sync::atomic::{AtomicPtr, AtomicU8, AtomicUsize, Ordering};

use crossbeam_utils::Backoff;

use crate::error::{Error, Result};
use crate::insert_index::{
    for_each_unit_run, LanePlan, ReserveStrategy, ReservedRange, SizeCounter, COUNTER_LIMIT,
};

/// Length of the bucket table. With a first bucket of 32 this addresses more
/// than 10^18 elements.
pub const MAX_BUCKETS: usize = 58;

pub const DEFAULT_FIRST_BUCKET: usize = 32;

/// Lanes reserved per round by [`ShardVector::push_back_lanes`]. A multiple
/// of every supported scan width up to 4096.
pub const LANES_PER_ROUND: usize = 4096;

/// Position of an element inside the bucket table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub bucket: usize,
    pub offset: usize,
}

/// Index arithmetic for a doubling bucket layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BucketLayout {
    shift: u32,
    usable: usize,
}

impl Default for BucketLayout {
    fn default() -> Self {
        Self::new(DEFAULT_FIRST_BUCKET).unwrap()
    }
}

impl BucketLayout {
    pub fn new(first_bucket_size: usize) -> Result<Self> {
        if first_bucket_size == 0 || !first_bucket_size.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "first bucket size must be a power of two, got {first_bucket_size}"
            )));
        }
        let shift = first_bucket_size.trailing_zeros();
        // Bucket sizes and the running capacity must both fit in a usize.
        let usable = MAX_BUCKETS.min((usize::BITS - shift) as usize);
        Ok(Self { shift, usable })
    }

    pub fn first_bucket_size(&self) -> usize {
        1 << self.shift
    }

    /// Buckets that can actually be allocated for this first bucket size.
    pub fn usable_buckets(&self) -> usize {
        self.usable
    }

    pub fn bucket_size(&self, bucket: usize) -> Result<usize> {
        if bucket >= self.usable {
            return Err(Error::BucketOutOfRange { bucket, max: self.usable });
        }
        Ok(self.bucket_len(bucket))
    }

    #[inline]
    fn bucket_len(&self, bucket: usize) -> usize {
        1 << (self.shift as usize + bucket)
    }

    /// `(bucket, offset)` holding `index`: `b = hibit(index / fb + 1)` and
    /// `offset = index - fb * (2^b - 1)`.
    #[inline]
    pub fn locate(&self, index: usize) -> Location {
        debug_assert!(index <= COUNTER_LIMIT);
        let q = (index >> self.shift) + 1;
        let bucket = (usize::BITS - 1 - q.leading_zeros()) as usize;
        let offset = index - (((1usize << bucket) - 1) << self.shift);
        Location { bucket, offset }
    }

    /// Total slots held by buckets `0..buckets`.
    pub fn capacity_for_buckets(&self, buckets: usize) -> usize {
        if buckets >= usize::BITS as usize {
            return usize::MAX;
        }
        ((1usize << buckets) - 1).saturating_mul(self.first_bucket_size())
    }

    /// Smallest bucket count whose capacity covers `min_capacity`.
    pub fn buckets_for_capacity(&self, min_capacity: usize) -> usize {
        if min_capacity == 0 {
            return 0;
        }
        self.locate(min_capacity - 1).bucket + 1
    }

    /// Largest index count the table can ever hold.
    pub fn max_capacity(&self) -> usize {
        self.capacity_for_buckets(self.usable)
    }
}

/// Result of a [`ShardVector::new_bucket`] call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BucketAlloc {
    Allocated,
    AlreadyAllocated,
}

const EMPTY: u8 = 0;
const CLAIMED: u8 = 1;

struct BucketSlot<T> {
    claimed: AtomicU8,
    ptr: AtomicPtr<UnsafeCell<T>>,
}

impl<T> BucketSlot<T> {
    fn new() -> Self {
        Self { claimed: AtomicU8::new(EMPTY), ptr: AtomicPtr::new(ptr::null_mut()) }
    }
}

/// The fixed-length bucket table and its once-flags.
pub struct BucketTable<T> {
    layout: BucketLayout,
    slots: [BucketSlot<T>; MAX_BUCKETS],
}

impl<T: Copy + Default> BucketTable<T> {
    fn new(layout: BucketLayout) -> Self {
        Self { layout, slots: std::array::from_fn(|_| BucketSlot::new()) }
    }

    pub fn layout(&self) -> &BucketLayout {
        &self.layout
    }

    pub fn is_allocated(&self, bucket: usize) -> bool {
        bucket < MAX_BUCKETS && !self.slots[bucket].ptr.load(Ordering::Acquire).is_null()
    }

    #[inline]
    fn bucket_ptr(&self, bucket: usize) -> *mut UnsafeCell<T> {
        self.slots[bucket].ptr.load(Ordering::Acquire)
    }

    /// Exactly one caller flips the once-flag and allocates. Everyone else
    /// waits until the bucket pointer is published, or takes over if the
    /// winner's allocation failed and the flag was released.
    fn new_bucket(&self, bucket: usize) -> Result<(BucketAlloc, usize)> {
        let len = self.layout.bucket_size(bucket)?;
        let slot = &self.slots[bucket];
        let backoff = Backoff::new();
        loop {
            if !slot.ptr.load(Ordering::Acquire).is_null() {
                return Ok((BucketAlloc::AlreadyAllocated, len));
            }
            if slot.claimed.compare_exchange(EMPTY, CLAIMED, Ordering::AcqRel, Ordering::Acquire).is_ok() {
                return match allocate_bucket::<T>(len) {
                    Ok(p) => {
                        slot.ptr.store(p, Ordering::Release);
                        Ok((BucketAlloc::Allocated, len))
                    }
                    Err(err) => {
                        slot.claimed.store(EMPTY, Ordering::Release);
                        Err(err)
                    }
                };
            }
            backoff.snooze();
        }
    }
}

impl<T> Drop for BucketTable<T> {
    fn drop(&mut self) {
        for (b, slot) in self.slots.iter_mut().enumerate() {
            let p = *slot.ptr.get_mut();
            if !p.is_null() {
                let len = self.layout.bucket_len(b);
                // Safety: allocated by `allocate_bucket` with exactly `len` slots.
                drop(unsafe { Box::from_raw(ptr::slice_from_raw_parts_mut(p, len)) });
            }
        }
    }
}

fn allocate_bucket<T: Copy + Default>(len: usize) -> Result<*mut UnsafeCell<T>> {
    let mut storage: Vec<UnsafeCell<T>> = Vec::new();
    storage.try_reserve_exact(len).map_err(|_| Error::Alloc { elements: len })?;
    storage.resize_with(len, || UnsafeCell::new(T::default()));
    Ok(Box::into_raw(storage.into_boxed_slice()) as *mut UnsafeCell<T>)
}

/// One shard: a lock-free doubling-bucket vector.
pub struct ShardVector<T> {
    table: BucketTable<T>,
    size: SizeCounter,
    capacity: AtomicUsize,
    allocations: AtomicUsize,
    committed: usize,
    _marker: PhantomData<T>,
}

// Safety: elements are moved in from whichever thread inserts them and dropped
// wherever the vector is dropped.
unsafe impl<T: Send> Send for ShardVector<T> {}
// Safety: `&self` allows writes of `T` into reserved slots from any thread and
// reads of committed slots; reserved and committed slots never overlap.
unsafe impl<T: Send + Sync> Sync for ShardVector<T> {}

impl<T: Copy + Default> Default for ShardVector<T> {
    fn default() -> Self {
        Self::with_layout(BucketLayout::default())
    }
}

impl<T: Copy + Default> ShardVector<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_first_bucket(first_bucket_size: usize) -> Result<Self> {
        Ok(Self::with_layout(BucketLayout::new(first_bucket_size)?))
    }

    pub fn with_layout(layout: BucketLayout) -> Self {
        Self {
            size: SizeCounter::with_limit(layout.max_capacity()),
            table: BucketTable::new(layout),
            capacity: AtomicUsize::new(0),
            allocations: AtomicUsize::new(0),
            committed: 0,
            _marker: PhantomData,
        }
    }

    pub fn layout(&self) -> &BucketLayout {
        self.table.layout()
    }

    pub fn table(&self) -> &BucketTable<T> {
        &self.table
    }

    pub fn first_bucket_size(&self) -> usize {
        self.layout().first_bucket_size()
    }

    pub fn bucket_size(&self, bucket: usize) -> Result<usize> {
        self.layout().bucket_size(bucket)
    }

    pub fn locate(&self, index: usize) -> Location {
        self.layout().locate(index)
    }

    /// Elements readable as of the last [`sync`](Self::sync).
    pub fn len(&self) -> usize {
        self.committed
    }

    pub fn is_empty(&self) -> bool {
        self.committed == 0
    }

    /// Reserved size, including insertions not yet synced.
    pub fn reserved_len(&self) -> usize {
        self.size.load()
    }

    pub fn capacity(&self) -> usize {
        self.capacity.load(Ordering::Acquire)
    }

    /// Bucket allocations performed over the vector's lifetime.
    pub fn allocations(&self) -> usize {
        self.allocations.load(Ordering::Relaxed)
    }

    pub fn allocated_buckets(&self) -> usize {
        (0..MAX_BUCKETS).filter(|&b| self.table.is_allocated(b)).count()
    }

    pub fn is_bucket_allocated(&self, bucket: usize) -> bool {
        self.table.is_allocated(bucket)
    }

    /// The shared size counter, for contention instrumentation.
    pub fn counter(&self) -> &SizeCounter {
        &self.size
    }

    pub fn new_bucket(&self, bucket: usize) -> Result<BucketAlloc> {
        let (outcome, len) = self.table.new_bucket(bucket)?;
        if outcome == BucketAlloc::Allocated {
            self.capacity.fetch_add(len, Ordering::AcqRel);
            self.allocations.fetch_add(1, Ordering::Relaxed);
        }
        Ok(outcome)
    }

    /// Ensure capacity for at least `min_capacity` elements, allocating the
    /// minimal prefix of buckets. Returns how many buckets this call allocated.
    pub fn reserve(&self, min_capacity: usize) -> Result<usize> {
        let layout = self.layout();
        if min_capacity > layout.max_capacity() {
            return Err(Error::CapacityExhausted {
                requested: min_capacity,
                available: layout.max_capacity(),
            });
        }
        let mut allocated = 0;
        for b in 0..layout.buckets_for_capacity(min_capacity) {
            if !self.table.is_allocated(b) && self.new_bucket(b)? == BucketAlloc::Allocated {
                allocated += 1;
            }
        }
        Ok(allocated)
    }

    /// Insert `values` at consecutive indices with a single reservation.
    pub fn push_back_batch(&self, values: &[T], strategy: ReserveStrategy) -> Result<ReservedRange> {
        let plan = LanePlan::uniform(1, values.len());
        let mut out = Vec::with_capacity(1);
        strategy.reserve_round(&plan, &self.size, &mut out)?;
        let range = out[0];
        self.write_run(range.start, values)?;
        Ok(range)
    }

    /// Insert `values` with one lane per value: each value gets its own
    /// reservation under `strategy`, in rounds of [`LANES_PER_ROUND`] lanes.
    pub fn push_back_lanes(&self, values: &[T], strategy: ReserveStrategy) -> Result<()> {
        let mut ranges = Vec::with_capacity(LANES_PER_ROUND.min(values.len()));
        for chunk in values.chunks(LANES_PER_ROUND) {
            ranges.clear();
            let plan = LanePlan::uniform(chunk.len(), 1);
            let reserved = strategy.reserve_round(&plan, &self.size, &mut ranges);
            self.write_lanes(&ranges, chunk)?;
            reserved?;
        }
        Ok(())
    }

    /// Insert one lane per slice, each lane's values at consecutive indices.
    pub fn push_back_round(
        &self,
        lanes: &[&[T]],
        strategy: ReserveStrategy,
        group_size: usize,
    ) -> Result<Vec<ReservedRange>> {
        let plan = LanePlan::new(lanes.iter().map(|l| l.len()).collect()).with_group_size(group_size)?;
        let mut ranges = Vec::with_capacity(lanes.len());
        let reserved = strategy.reserve_round(&plan, &self.size, &mut ranges);
        for (range, lane) in ranges.iter().zip(lanes) {
            self.write_run(range.start, lane)?;
        }
        reserved.map(|_| ranges)
    }

    fn write_lanes(&self, ranges: &[ReservedRange], values: &[T]) -> Result<()> {
        for_each_unit_run(ranges, |start, lanes| self.write_run(start, &values[lanes]))
    }

    fn ensure_buckets(&self, start: usize, len: usize) -> Result<()> {
        if len == 0 {
            return Ok(());
        }
        let first = self.locate(start).bucket;
        let last = self.locate(start + len - 1).bucket;
        for b in first..=last {
            if !self.table.is_allocated(b) {
                self.new_bucket(b)?;
            }
        }
        Ok(())
    }

    /// Copy `values` into the reserved indices starting at `start`.
    fn write_run(&self, start: usize, values: &[T]) -> Result<()> {
        self.ensure_buckets(start, values.len())?;
        let mut index = start;
        let mut rest = values;
        while !rest.is_empty() {
            let loc = self.locate(index);
            let n = rest.len().min(self.layout().bucket_len(loc.bucket) - loc.offset);
            let base = self.table.bucket_ptr(loc.bucket);
            // Safety: the bucket is allocated and `[index, index + n)` lies in it;
            // those indices were reserved by the caller, so nobody else touches them.
            unsafe {
                ptr::copy_nonoverlapping(rest.as_ptr(), UnsafeCell::raw_get(base.add(loc.offset)), n);
            }
            index += n;
            rest = &rest[n..];
        }
        Ok(())
    }

    /// Epoch barrier: publish every completed insertion to readers.
    ///
    /// The published length is the reserved size, clipped to the prefix of
    /// indices whose buckets exist (a failed allocation leaves a gap).
    pub fn sync(&mut self) -> usize {
        let reserved = self.size.load();
        let mut covered = 0;
        for b in 0..self.layout().usable_buckets() {
            if covered >= reserved || !self.table.is_allocated(b) {
                break;
            }
            covered += self.layout().bucket_len(b);
        }
        self.committed = reserved.min(covered);
        self.committed
    }

    fn check(&self, index: usize) -> Result<Location> {
        if index >= self.committed {
            return Err(Error::OutOfBounds { index, len: self.committed });
        }
        Ok(self.locate(index))
    }

    pub fn get(&self, index: usize) -> Result<T> {
        let loc = self.check(index)?;
        // Safety: committed indices lie in allocated buckets and are not
        // written through `&self`.
        Ok(unsafe { *UnsafeCell::raw_get(self.table.bucket_ptr(loc.bucket).add(loc.offset)) })
    }

    pub fn get_mut(&mut self, index: usize) -> Result<&mut T> {
        let loc = self.check(index)?;
        // Safety: as in `get`, and `&mut self` excludes every other access.
        Ok(unsafe { &mut *UnsafeCell::raw_get(self.table.bucket_ptr(loc.bucket).add(loc.offset)) })
    }

    pub fn set(&mut self, index: usize, value: T) -> Result<()> {
        *self.get_mut(index)? = value;
        Ok(())
    }

    /// Raw pointer to a committed slot.
    ///
    /// # Safety
    ///
    /// `index < self.len()`, and the caller must guarantee exclusive access to
    /// the slot for as long as the pointer is written through.
    #[inline]
    pub(crate) unsafe fn slot_ptr(&self, index: usize) -> *mut T {
        debug_assert!(index < self.committed);
        let loc = self.locate(index);
        UnsafeCell::raw_get(self.table.bucket_ptr(loc.bucket).add(loc.offset))
    }

    /// Committed elements as one slice per bucket, in index order.
    pub fn segments(&self) -> impl Iterator<Item = &[T]> + '_ {
        let layout = *self.layout();
        let len = self.committed;
        (0..layout.usable_buckets())
            .map(move |b| (b, layout.capacity_for_buckets(b)))
            .take_while(move |&(_, start)| start < len)
            .map(move |(b, start)| {
                let n = (len - start).min(layout.bucket_len(b));
                // Safety: committed prefix, allocated bucket, no `&self` writers.
                unsafe { slice::from_raw_parts(self.table.bucket_ptr(b) as *const T, n) }
            })
    }

    pub fn segments_mut(&mut self) -> impl Iterator<Item = &mut [T]> + '_ {
        let layout = *self.layout();
        let len = self.committed;
        let table = &self.table;
        (0..layout.usable_buckets())
            .map(move |b| (b, layout.capacity_for_buckets(b)))
            .take_while(move |&(_, start)| start < len)
            .map(move |(b, start)| {
                let n = (len - start).min(layout.bucket_len(b));
                // Safety: distinct buckets are disjoint and `&mut self` is held.
                unsafe { slice::from_raw_parts_mut(UnsafeCell::raw_get(table.bucket_ptr(b)), n) }
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = T> + '_ {
        self.segments().flat_map(|s| s.iter().copied())
    }

    /// Apply `op` to every committed element in ascending index order.
    pub fn for_each_mut(&mut self, mut op: impl FnMut(&mut T)) {
        for segment in self.segments_mut() {
            segment.iter_mut().for_each(&mut op);
        }
    }

    pub fn to_vec(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.committed);
        for segment in self.segments() {
            out.extend_from_slice(segment);
        }
        out
    }

    /// Append and publish in one step.
    pub fn extend_from_slice(&mut self, values: &[T]) -> Result<ReservedRange> {
        let range = self.push_back_batch(values, ReserveStrategy::Atomic)?;
        self.sync();
        Ok(range)
    }
}

impl<T: Copy + Default + fmt::Debug> fmt::Debug for ShardVector<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ShardVector")
            .field("len", &self.committed)
            .field("reserved", &self.size.load())
            .field("capacity", &self.capacity())
            .field("first_bucket", &self.first_bucket_size())
            .finish()
    }
}
