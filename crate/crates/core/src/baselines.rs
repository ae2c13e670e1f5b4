// SPDX-License-Identifier: Apache-2.0

//! Comparison structures.
//!
//! * [`StaticArray`]: one allocation made up front, never resized.
//! * [`DoublingArray`]: contiguous storage reallocated and copied at double
//!   the capacity by an exclusive resize.
//! * [`ChunkTableArray`]: contiguous virtual indexing over equal-size chunks;
//!   growth appends chunks and never copies an element.
//!
//! All three take concurrent insertions through `&self` against a bounded
//! size counter; resizes need `&mut self`, i.e. every inserter has stopped.

use std::cell::UnsafeCell;
use std::ptr;
use std::slice;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::insert_index::{for_each_unit_run, LanePlan, ReserveStrategy, ReservedRange, SizeCounter};
use crate::structure::ResizeStats;

pub const DEFAULT_CHUNK_SIZE: usize = 64 * 1024;

const ROUND_LANES: usize = crate::bucket_vector::LANES_PER_ROUND;

/// A fixed block of slots writable through `&self` at reserved indices.
struct Slots<T>(Box<[UnsafeCell<T>]>);

// Safety: see the `Sync` impls of the owning structures; `Slots` itself only
// hands out raw access through unsafe methods.
unsafe impl<T: Send + Sync> Sync for Slots<T> {}

impl<T: Copy + Default> Slots<T> {
    fn alloc(len: usize) -> Result<Self> {
        let mut storage: Vec<UnsafeCell<T>> = Vec::new();
        storage.try_reserve_exact(len).map_err(|_| Error::Alloc { elements: len })?;
        storage.resize_with(len, || UnsafeCell::new(T::default()));
        Ok(Self(storage.into_boxed_slice()))
    }

    fn len(&self) -> usize {
        self.0.len()
    }

    /// # Safety
    ///
    /// `[start, start + values.len())` is in bounds and owned by the caller.
    unsafe fn write(&self, start: usize, values: &[T]) {
        debug_assert!(start + values.len() <= self.0.len());
        ptr::copy_nonoverlapping(
            values.as_ptr(),
            UnsafeCell::raw_get(self.0.as_ptr().add(start)),
            values.len(),
        );
    }

    /// # Safety
    ///
    /// No concurrent writer touches `..len`.
    unsafe fn prefix(&self, len: usize) -> &[T] {
        slice::from_raw_parts(self.0.as_ptr() as *const T, len)
    }

    fn prefix_mut(&mut self, len: usize) -> &mut [T] {
        // Safety: `UnsafeCell<T>` has the layout of `T` and `&mut self` is exclusive.
        unsafe { slice::from_raw_parts_mut(self.0.as_mut_ptr() as *mut T, len) }
    }

    /// # Safety
    ///
    /// `index` is in bounds and the caller has exclusive access to it.
    #[inline]
    unsafe fn slot(&self, index: usize) -> *mut T {
        UnsafeCell::raw_get(self.0.as_ptr().add(index))
    }
}

fn push_batch<T: Copy + Default>(
    counter: &SizeCounter,
    strategy: ReserveStrategy,
    values: &[T],
    write: impl Fn(usize, &[T]),
) -> Result<ReservedRange> {
    let mut out = Vec::with_capacity(1);
    strategy.reserve_round(&LanePlan::uniform(1, values.len()), counter, &mut out)?;
    write(out[0].start, values);
    Ok(out[0])
}

fn push_lanes<T: Copy + Default>(
    counter: &SizeCounter,
    strategy: ReserveStrategy,
    values: &[T],
    write: impl Fn(usize, &[T]),
) -> Result<()> {
    let mut ranges = Vec::with_capacity(ROUND_LANES.min(values.len()));
    for chunk in values.chunks(ROUND_LANES) {
        ranges.clear();
        let reserved = strategy.reserve_round(&LanePlan::uniform(chunk.len(), 1), counter, &mut ranges);
        for_each_unit_run(&ranges, |start, lanes| {
            write(start, &chunk[lanes]);
            Ok::<(), Error>(())
        })?;
        reserved?;
    }
    Ok(())
}

fn out_of_bounds(index: usize, len: usize) -> Error {
    Error::OutOfBounds { index, len }
}

/// A pre-allocated array that fails instead of growing.
pub struct StaticArray<T> {
    slots: Slots<T>,
    size: SizeCounter,
    committed: usize,
}

// Safety: inserters write disjoint reserved slots above `committed`; readers
// through `&self` only see slots below it.
unsafe impl<T: Send + Sync> Sync for StaticArray<T> {}

impl<T: Copy + Default> StaticArray<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        Ok(Self { slots: Slots::alloc(capacity)?, size: SizeCounter::with_limit(capacity), committed: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn len(&self) -> usize {
        self.committed
    }

    pub fn is_empty(&self) -> bool {
        self.committed == 0
    }

    pub fn counter(&self) -> &SizeCounter {
        &self.size
    }

    /// Insert `values` at consecutive indices with one reservation. Fails
    /// when the array would overflow its capacity.
    pub fn static_insert_batch(&self, values: &[T], strategy: ReserveStrategy) -> Result<ReservedRange> {
        // Safety: the range was reserved under a counter bounded by capacity.
        push_batch(&self.size, strategy, values, |start, v| unsafe { self.slots.write(start, v) })
    }

    /// Insert with one lane per value. On overflow the lanes reserved before
    /// the failure are written and the error is returned.
    pub fn insert_lanes(&self, values: &[T], strategy: ReserveStrategy) -> Result<()> {
        // Safety: as above.
        push_lanes(&self.size, strategy, values, |start, v| unsafe { self.slots.write(start, v) })
    }

    pub fn sync(&mut self) -> usize {
        self.committed = self.size.load();
        self.committed
    }

    pub fn get(&self, index: usize) -> Result<T> {
        self.as_slice().get(index).copied().ok_or(out_of_bounds(index, self.committed))
    }

    pub fn set(&mut self, index: usize, value: T) -> Result<()> {
        let len = self.committed;
        *self.as_mut_slice().get_mut(index).ok_or(out_of_bounds(index, len))? = value;
        Ok(())
    }

    pub fn as_slice(&self) -> &[T] {
        // Safety: committed prefix, never written through `&self`.
        unsafe { self.slots.prefix(self.committed) }
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        let len = self.committed;
        self.slots.prefix_mut(len)
    }
}

/// Contiguous storage that doubles its capacity on an exclusive resize.
pub struct DoublingArray<T> {
    slots: Slots<T>,
    initial: usize,
    size: SizeCounter,
    committed: usize,
    copied: u64,
    resizes: usize,
}

// Safety: as for `StaticArray`.
unsafe impl<T: Send + Sync> Sync for DoublingArray<T> {}

impl<T: Copy + Default> DoublingArray<T> {
    pub fn new(initial_capacity: usize) -> Result<Self> {
        if initial_capacity == 0 {
            return Err(Error::InvalidParameter("initial capacity must be at least 1".into()));
        }
        Ok(Self {
            slots: Slots::alloc(initial_capacity)?,
            initial: initial_capacity,
            size: SizeCounter::with_limit(initial_capacity),
            committed: 0,
            copied: 0,
            resizes: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn initial_capacity(&self) -> usize {
        self.initial
    }

    pub fn len(&self) -> usize {
        self.committed
    }

    pub fn is_empty(&self) -> bool {
        self.committed == 0
    }

    /// Elements copied by every resize so far.
    pub fn elements_copied(&self) -> u64 {
        self.copied
    }

    pub fn resizes(&self) -> usize {
        self.resizes
    }

    pub fn counter(&self) -> &SizeCounter {
        &self.size
    }

    /// Reallocate at `capacity * 2^k >= min_capacity` and copy every element
    /// over. No-op if the capacity already suffices.
    pub fn doubling_resize(&mut self, min_capacity: usize) -> Result<ResizeStats> {
        self.sync();
        let mut capacity = self.capacity();
        if min_capacity <= capacity {
            return Ok(ResizeStats::default());
        }
        while capacity < min_capacity {
            capacity = capacity
                .checked_mul(2)
                .ok_or(Error::CapacityExhausted { requested: min_capacity, available: capacity })?;
        }
        let mut fresh = Slots::alloc(capacity)?;
        let len = self.committed;
        fresh.prefix_mut(len).copy_from_slice(self.slots.prefix_mut(len));
        self.slots = fresh;
        self.size.set_limit(capacity);
        self.copied += len as u64;
        self.resizes += 1;
        Ok(ResizeStats { elements_copied: len as u64, allocations: 1 })
    }

    pub fn static_insert_batch(&self, values: &[T], strategy: ReserveStrategy) -> Result<ReservedRange> {
        // Safety: the counter is bounded by the current capacity.
        push_batch(&self.size, strategy, values, |start, v| unsafe { self.slots.write(start, v) })
    }

    pub fn insert_lanes(&self, values: &[T], strategy: ReserveStrategy) -> Result<()> {
        // Safety: as above.
        push_lanes(&self.size, strategy, values, |start, v| unsafe { self.slots.write(start, v) })
    }

    /// Sequential append that resizes on demand.
    pub fn push(&mut self, value: T) -> Result<()> {
        let len = self.sync();
        if len == self.capacity() {
            self.doubling_resize(len + 1)?;
        }
        self.static_insert_batch(&[value], ReserveStrategy::Atomic)?;
        self.sync();
        Ok(())
    }

    pub fn sync(&mut self) -> usize {
        self.committed = self.size.load();
        self.committed
    }

    pub fn get(&self, index: usize) -> Result<T> {
        self.as_slice().get(index).copied().ok_or(out_of_bounds(index, self.committed))
    }

    pub fn set(&mut self, index: usize, value: T) -> Result<()> {
        let len = self.committed;
        *self.as_mut_slice().get_mut(index).ok_or(out_of_bounds(index, len))? = value;
        Ok(())
    }

    pub fn as_slice(&self) -> &[T] {
        // Safety: committed prefix, never written through `&self`.
        unsafe { self.slots.prefix(self.committed) }
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        let len = self.committed;
        self.slots.prefix_mut(len)
    }
}

/// Equal-size chunks behind one contiguous index space: `g` lives in chunk
/// `g / chunk_size` at offset `g % chunk_size`.
pub struct ChunkTableArray<T> {
    chunks: Vec<Slots<T>>,
    shift: u32,
    size: SizeCounter,
    committed: usize,
    copied: u64,
}

// Safety: as for `StaticArray`.
unsafe impl<T: Send + Sync> Sync for ChunkTableArray<T> {}

impl<T: Copy + Default> ChunkTableArray<T> {
    pub fn new(chunk_size: usize) -> Result<Self> {
        if chunk_size == 0 || !chunk_size.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "chunk size must be a power of two, got {chunk_size}"
            )));
        }
        Ok(Self {
            chunks: Vec::new(),
            shift: chunk_size.trailing_zeros(),
            size: SizeCounter::with_limit(0),
            committed: 0,
            copied: 0,
        })
    }

    pub fn with_capacity(chunk_size: usize, capacity: usize) -> Result<Self> {
        let mut array = Self::new(chunk_size)?;
        array.chunk_resize(capacity)?;
        Ok(array)
    }

    pub fn chunk_size(&self) -> usize {
        1 << self.shift
    }

    pub fn chunk_count(&self) -> usize {
        self.chunks.len()
    }

    pub fn capacity(&self) -> usize {
        self.chunks.len() << self.shift
    }

    pub fn len(&self) -> usize {
        self.committed
    }

    pub fn is_empty(&self) -> bool {
        self.committed == 0
    }

    /// Elements copied by growth; stays zero.
    pub fn elements_copied(&self) -> u64 {
        self.copied
    }

    pub fn counter(&self) -> &SizeCounter {
        &self.size
    }

    /// Append chunks until `capacity >= min_capacity`. Existing chunks are
    /// neither moved nor touched.
    pub fn chunk_resize(&mut self, min_capacity: usize) -> Result<ResizeStats> {
        self.sync();
        let needed = min_capacity.div_ceil(self.chunk_size());
        let mut allocations = 0;
        while self.chunks.len() < needed {
            self.chunks.push(Slots::alloc(self.chunk_size())?);
            allocations += 1;
        }
        self.size.set_limit(self.capacity());
        Ok(ResizeStats { elements_copied: 0, allocations })
    }

    /// # Safety
    ///
    /// `[start, start + values.len())` reserved by the caller and below capacity.
    unsafe fn write(&self, mut start: usize, mut values: &[T]) {
        let mask = self.chunk_size() - 1;
        while !values.is_empty() {
            let offset = start & mask;
            let n = values.len().min(self.chunk_size() - offset);
            self.chunks[start >> self.shift].write(offset, &values[..n]);
            start += n;
            values = &values[n..];
        }
    }

    pub fn static_insert_batch(&self, values: &[T], strategy: ReserveStrategy) -> Result<ReservedRange> {
        // Safety: the counter is bounded by the current capacity.
        push_batch(&self.size, strategy, values, |start, v| unsafe { self.write(start, v) })
    }

    pub fn insert_lanes(&self, values: &[T], strategy: ReserveStrategy) -> Result<()> {
        // Safety: as above.
        push_lanes(&self.size, strategy, values, |start, v| unsafe { self.write(start, v) })
    }

    pub fn sync(&mut self) -> usize {
        self.committed = self.size.load();
        self.committed
    }

    pub fn get(&self, index: usize) -> Result<T> {
        if index >= self.committed {
            return Err(out_of_bounds(index, self.committed));
        }
        // Safety: committed, in bounds, not written through `&self`.
        Ok(unsafe { *self.chunks[index >> self.shift].slot(index & (self.chunk_size() - 1)) })
    }

    pub fn set(&mut self, index: usize, value: T) -> Result<()> {
        if index >= self.committed {
            return Err(out_of_bounds(index, self.committed));
        }
        // Safety: committed, in bounds, and `&mut self` is exclusive.
        unsafe { *self.chunks[index >> self.shift].slot(index & (self.chunk_size() - 1)) = value };
        Ok(())
    }

    /// Committed contents chunk by chunk.
    pub fn segments(&self) -> impl Iterator<Item = &[T]> + '_ {
        let len = self.committed;
        let size = self.chunk_size();
        self.chunks.iter().enumerate().take(len.div_ceil(size)).map(move |(c, chunk)| {
            // Safety: committed prefix, never written through `&self`.
            unsafe { chunk.prefix((len - c * size).min(size)) }
        })
    }

    pub fn to_vec(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.committed);
        self.segments().for_each(|s| out.extend_from_slice(s));
        out
    }

    /// Apply `op` through the virtual index, `grain` indices per parallel task.
    pub fn update_indexed<F>(&mut self, grain: usize, op: F)
    where
        F: Fn(&mut T) + Sync + Send,
        T: Send + Sync,
    {
        let this = &*self;
        let len = this.committed;
        let grain = grain.max(1);
        let mask = this.chunk_size() - 1;
        (0..len.div_ceil(grain)).into_par_iter().for_each(|task| {
            for g in task * grain..((task + 1) * grain).min(len) {
                // Safety: tasks own disjoint index ranges; `&mut self` is held.
                unsafe { op(&mut *this.chunks[g >> this.shift].slot(g & mask)) };
            }
        });
    }

    /// Apply `op` to every element, chunk by chunk in parallel.
    pub fn for_each_chunk<F>(&mut self, op: F)
    where
        F: Fn(&mut T) + Sync + Send,
        T: Send + Sync,
    {
        let len = self.committed;
        let size = self.chunk_size();
        self.chunks
            .par_iter_mut()
            .enumerate()
            .take(len.div_ceil(size))
            .for_each(|(c, chunk)| chunk.prefix_mut((len - c * size).min(size)).iter_mut().for_each(&op));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn static_boundary() {
        let mut array = StaticArray::<u32>::new(10).unwrap();
        array.static_insert_batch(&[1; 10], ReserveStrategy::Atomic).unwrap();
        assert_eq!(
            array.static_insert_batch(&[1], ReserveStrategy::Atomic),
            Err(Error::CapacityExhausted { requested: 1, available: 0 })
        );
        assert_eq!(array.sync(), 10);
    }

    #[test]
    fn static_overflowing_lanes_write_what_fits() {
        let mut array = StaticArray::<u32>::new(40).unwrap();
        let values: Vec<u32> = (0..64).collect();
        assert!(array.insert_lanes(&values, ReserveStrategy::Scan).is_err());
        array.sync();
        // The first group of 32 fit, the second did not.
        assert_eq!(array.as_slice(), &values[..32]);
    }

    #[test]
    fn static_concurrent_inserts_conserve_values() {
        let mut array = StaticArray::<u32>::new(8 * 1000).unwrap();
        std::thread::scope(|scope| {
            for w in 0..8u32 {
                let array = &array;
                scope.spawn(move || {
                    let values: Vec<u32> = (0..1000).map(|k| w * 1000 + k).collect();
                    let strategy = ReserveStrategy::ALL[(w % 2) as usize];
                    array.insert_lanes(&values, strategy).unwrap();
                });
            }
        });
        array.sync();
        let mut stored = array.as_slice().to_vec();
        stored.sort_unstable();
        assert_eq!(stored, (0..8000).collect::<Vec<_>>());
    }

    #[test]
    fn static_strategies_issue_the_same_indices() {
        let mut sets = Vec::new();
        for strategy in ReserveStrategy::ALL {
            let mut array = StaticArray::<u32>::new(500).unwrap();
            array.static_insert_batch(&[9; 3], strategy).unwrap();
            array.insert_lanes(&(0..300).collect::<Vec<_>>(), strategy).unwrap();
            let n = array.sync();
            sets.push((0..n).collect::<BTreeSet<_>>());
            assert_eq!(array.as_slice()[3..], (0..300).collect::<Vec<_>>());
        }
        assert_eq!(sets[0], sets[1]);
    }

    #[test]
    fn doubling_preserves_contents() {
        let mut array = DoublingArray::<u32>::new(4).unwrap();
        array.static_insert_batch(&[1, 2, 3, 4], ReserveStrategy::Scan).unwrap();
        assert!(array.static_insert_batch(&[5], ReserveStrategy::Scan).is_err());
        let stats = array.doubling_resize(5).unwrap();
        assert_eq!(array.capacity(), 8);
        assert_eq!(stats.elements_copied, 4);
        array.static_insert_batch(&[5], ReserveStrategy::Scan).unwrap();
        array.sync();
        assert_eq!(array.as_slice(), &[1, 2, 3, 4, 5]);
        assert_eq!(array.doubling_resize(8).unwrap(), ResizeStats::default());
    }

    #[test]
    fn doubling_amortized_copies() {
        let mut array = DoublingArray::<u64>::new(1).unwrap();
        for n in 1..=10_000u64 {
            array.push(n).unwrap();
            let cap = array.capacity();
            assert!(cap.is_power_of_two());
            assert!(cap >= n as usize && cap < 2 * n as usize + 1);
            assert!(array.elements_copied() < 2 * n);
        }
        assert_eq!(array.as_slice().len(), 10_000);
        assert_eq!(array.get(9_999).unwrap(), 10_000);
    }

    #[test]
    fn doubling_capacity_is_initial_times_power_of_two() {
        let mut array = DoublingArray::<u8>::new(3).unwrap();
        for _ in 0..100 {
            array.push(1).unwrap();
            let ratio = array.capacity() / 3;
            assert_eq!(array.capacity() % 3, 0);
            assert!(ratio.is_power_of_two());
            assert!(array.capacity() >= array.len());
            assert!(array.capacity() == 3 || array.capacity() / 2 < array.len());
        }
    }

    #[test]
    fn chunk_growth_never_copies() {
        let mut array = ChunkTableArray::<u32>::new(4).unwrap();
        assert!(array.static_insert_batch(&[1], ReserveStrategy::Atomic).is_err());
        array.chunk_resize(6).unwrap();
        assert_eq!(array.chunk_count(), 2);
        array.static_insert_batch(&[1, 2, 3, 4, 5, 6], ReserveStrategy::Atomic).unwrap();
        array.sync();
        let before: Vec<*const u32> = array.segments().map(|s| s.as_ptr()).collect();
        let stats = array.chunk_resize(100).unwrap();
        assert_eq!(stats.elements_copied, 0);
        assert_eq!(stats.allocations, 23);
        let after: Vec<*const u32> = array.segments().map(|s| s.as_ptr()).collect();
        assert_eq!(before, after);
        assert_eq!(array.to_vec(), vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(array.elements_copied(), 0);
    }

    #[test]
    fn chunk_indexing_crosses_chunks() {
        let mut array = ChunkTableArray::<u32>::with_capacity(8, 100).unwrap();
        let values: Vec<u32> = (0..100).collect();
        array.insert_lanes(&values, ReserveStrategy::Scan).unwrap();
        array.sync();
        for (g, &v) in values.iter().enumerate() {
            assert_eq!(array.get(g).unwrap(), v);
        }
        array.set(17, 1000).unwrap();
        assert_eq!(array.get(17).unwrap(), 1000);
        assert!(array.get(100).is_err());
        array.update_indexed(7, |x| *x += 1);
        array.for_each_chunk(|x| *x += 1);
        assert_eq!(array.get(0).unwrap(), 2);
        assert_eq!(array.get(17).unwrap(), 1002);
        assert_eq!(array.get(99).unwrap(), 101);
    }

    #[test]
    fn chunk_size_must_be_power_of_two() {
        assert!(ChunkTableArray::<u32>::new(0).is_err());
        assert!(ChunkTableArray::<u32>::new(100).is_err());
        assert_eq!(ChunkTableArray::<u32>::new(DEFAULT_CHUNK_SIZE).unwrap().chunk_size(), 65_536);
    }
}
