// SPDX-License-Identifier: Apache-2.0

//! Index reservation: handing every inserter a unique, contiguous range of
//! slots past the current size of a structure.
//!
//! Two strategies are provided. [`ReserveStrategy::Atomic`] advances the shared
//! size counter once per lane. [`ReserveStrategy::Scan`] computes an exclusive
//! prefix sum of the lane counts inside each group of `group_size` lanes and
//! advances the shared counter once per group, so a round of `L` lanes costs
//! `ceil(L / group_size)` shared operations instead of `L`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use crossbeam_utils::CachePadded;

use crate::error::{Error, Result};

/// Default scan width, one warp worth of lanes.
pub const DEFAULT_GROUP_SIZE: usize = 32;

/// Counters never exceed this value, which leaves headroom for pending
/// overflowing reservations before the atomic could wrap.
pub const COUNTER_LIMIT: usize = usize::MAX >> 4;

/// A contiguous interval `[start, start + count)` of indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ReservedRange {
    pub start: usize,
    pub count: usize,
}

impl ReservedRange {
    pub const fn new(start: usize, count: usize) -> Self {
        Self { start, count }
    }

    pub const fn end(&self) -> usize {
        self.start + self.count
    }

    pub const fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn as_range(&self) -> Range<usize> {
        self.start..self.end()
    }
}

/// A shared size counter with an upper bound and an instrumentation count of
/// the read-modify-write operations performed on it.
#[derive(Debug)]
pub struct SizeCounter {
    value: CachePadded<AtomicUsize>,
    ops: CachePadded<AtomicU64>,
    limit: usize,
}

impl Default for SizeCounter {
    fn default() -> Self {
        Self::new()
    }
}

impl SizeCounter {
    pub fn new() -> Self {
        Self::with_limit(COUNTER_LIMIT)
    }

    /// A counter that refuses to advance past `limit`.
    pub fn with_limit(limit: usize) -> Self {
        Self {
            value: CachePadded::new(AtomicUsize::new(0)),
            ops: CachePadded::new(AtomicU64::new(0)),
            limit: limit.min(COUNTER_LIMIT),
        }
    }

    pub fn starting_at(value: usize) -> Self {
        let counter = Self::new();
        counter.value.store(value, Ordering::Relaxed);
        counter
    }

    pub fn load(&self) -> usize {
        self.value.load(Ordering::Acquire)
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    /// Shared-counter read-modify-write operations issued so far.
    pub fn ops(&self) -> u64 {
        self.ops.load(Ordering::Relaxed)
    }

    pub fn reset_ops(&self) {
        self.ops.store(0, Ordering::Relaxed);
    }

    pub(crate) fn record_ops(&self, n: u64) {
        if n > 0 {
            self.ops.fetch_add(n, Ordering::Relaxed);
        }
    }

    pub(crate) fn set_limit(&mut self, limit: usize) {
        self.limit = limit.min(COUNTER_LIMIT);
    }

    /// Advance by `count` and return the previous value.
    ///
    /// On overflow the addition is undone and the counter is left as it was.
    /// Any reservation that observes a pending overflowing one also fails, so a
    /// small request may be refused while a large one is being rolled back.
    pub(crate) fn advance(&self, count: usize) -> Result<usize> {
        if count > self.limit {
            return Err(Error::CapacityExhausted {
                requested: count,
                available: self.limit.saturating_sub(self.load()),
            });
        }
        let start = self.value.fetch_add(count, Ordering::AcqRel);
        match start.checked_add(count) {
            Some(end) if end <= self.limit => Ok(start),
            _ => {
                self.value.fetch_sub(count, Ordering::AcqRel);
                Err(Error::CapacityExhausted {
                    requested: count,
                    available: self.limit.saturating_sub(start),
                })
            }
        }
    }
}

/// How a round of inserters obtains its indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ReserveStrategy {
    /// One shared-counter operation per lane.
    Atomic,
    /// Group-local exclusive scan, one shared-counter operation per group.
    #[default]
    Scan,
}

impl ReserveStrategy {
    pub const ALL: [ReserveStrategy; 2] = [ReserveStrategy::Atomic, ReserveStrategy::Scan];

    pub fn as_str(&self) -> &'static str {
        match self {
            ReserveStrategy::Atomic => "atomic",
            ReserveStrategy::Scan => "scan",
        }
    }

    /// Reserve one range per lane of `plan`, appending them to `out` in lane
    /// order. On failure `out` holds the ranges reserved before the failing
    /// operation; those indices are owned by the caller.
    pub fn reserve_round(
        self,
        plan: &LanePlan,
        counter: &SizeCounter,
        out: &mut Vec<ReservedRange>,
    ) -> Result<()> {
        match self {
            ReserveStrategy::Atomic => atomic_round(plan, counter, out),
            ReserveStrategy::Scan => scan_round(plan, counter, out),
        }
    }

    /// Number of shared-counter operations a round over `plan` costs.
    pub fn ops_for(self, plan: &LanePlan) -> u64 {
        match self {
            ReserveStrategy::Atomic => plan.lanes() as u64,
            ReserveStrategy::Scan => plan.groups() as u64,
        }
    }
}

impl fmt::Display for ReserveStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReserveStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "atomic" => Ok(ReserveStrategy::Atomic),
            "scan" => Ok(ReserveStrategy::Scan),
            other => Err(Error::InvalidParameter(format!(
                "unknown reservation strategy `{other}` (expected atomic or scan)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum LaneCounts {
    Uniform { lanes: usize, count: usize },
    Explicit(Vec<usize>),
}

/// Per-lane insertion counts for one reservation round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanePlan {
    counts: LaneCounts,
    group_size: usize,
}

impl LanePlan {
    pub fn new(counts: Vec<usize>) -> Self {
        Self { counts: LaneCounts::Explicit(counts), group_size: DEFAULT_GROUP_SIZE }
    }

    /// `lanes` lanes that each insert `count` elements.
    pub fn uniform(lanes: usize, count: usize) -> Self {
        Self { counts: LaneCounts::Uniform { lanes, count }, group_size: DEFAULT_GROUP_SIZE }
    }

    pub fn with_group_size(mut self, group_size: usize) -> Result<Self> {
        if group_size == 0 || !group_size.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "group size must be a power of two, got {group_size}"
            )));
        }
        self.group_size = group_size;
        Ok(self)
    }

    pub fn lanes(&self) -> usize {
        match &self.counts {
            LaneCounts::Uniform { lanes, .. } => *lanes,
            LaneCounts::Explicit(v) => v.len(),
        }
    }

    pub fn count(&self, lane: usize) -> usize {
        match &self.counts {
            LaneCounts::Uniform { count, .. } => *count,
            LaneCounts::Explicit(v) => v[lane],
        }
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn groups(&self) -> usize {
        self.lanes().div_ceil(self.group_size)
    }

    pub fn total(&self) -> usize {
        match &self.counts {
            LaneCounts::Uniform { lanes, count } => lanes * count,
            LaneCounts::Explicit(v) => v.iter().sum(),
        }
    }
}

/// Exclusive prefix sum: `out[0] = 0`, `out[j] = out[j - 1] + counts[j - 1]`.
pub fn exclusive_scan(counts: &[usize]) -> Vec<usize> {
    let mut acc = 0usize;
    counts
        .iter()
        .map(|&c| {
            let prev = acc;
            acc += c;
            prev
        })
        .collect()
}

/// Walk unit-count lane ranges as runs of adjacent indices, calling
/// `write(first_index, lanes)` once per run.
pub(crate) fn for_each_unit_run<E>(
    ranges: &[ReservedRange],
    mut write: impl FnMut(usize, Range<usize>) -> std::result::Result<(), E>,
) -> std::result::Result<(), E> {
    let mut lane = 0;
    while lane < ranges.len() {
        let start = ranges[lane].start;
        let mut end = lane + 1;
        while end < ranges.len() && ranges[end].start == start + (end - lane) {
            end += 1;
        }
        write(start, lane..end)?;
        lane = end;
    }
    Ok(())
}

/// Advance `counter` by `count` in a single operation.
pub fn atomic_reserve(counter: &SizeCounter, count: usize) -> Result<ReservedRange> {
    counter.record_ops(1);
    let start = counter.advance(count)?;
    Ok(ReservedRange::new(start, count))
}

/// Reserve ranges for every lane of `plan` with one counter operation per
/// group of lanes.
pub fn scan_reserve(plan: &LanePlan, counter: &SizeCounter) -> Result<Vec<ReservedRange>> {
    let mut out = Vec::with_capacity(plan.lanes());
    scan_round(plan, counter, &mut out)?;
    Ok(out)
}

fn atomic_round(plan: &LanePlan, counter: &SizeCounter, out: &mut Vec<ReservedRange>) -> Result<()> {
    let lanes = plan.lanes();
    out.reserve(lanes);
    for lane in 0..lanes {
        let count = plan.count(lane);
        match counter.advance(count) {
            Ok(start) => out.push(ReservedRange::new(start, count)),
            Err(err) => {
                counter.record_ops(lane as u64 + 1);
                return Err(err);
            }
        }
    }
    counter.record_ops(lanes as u64);
    Ok(())
}

fn scan_round(plan: &LanePlan, counter: &SizeCounter, out: &mut Vec<ReservedRange>) -> Result<()> {
    let lanes = plan.lanes();
    let group_size = plan.group_size();
    out.reserve(lanes);
    let mut prescan = vec![0usize; group_size.min(lanes)];
    let mut ops = 0u64;
    let mut result = Ok(());
    for group_start in (0..lanes).step_by(group_size) {
        let group_end = (group_start + group_size).min(lanes);
        // Group-local exclusive scan.
        let mut total = 0usize;
        for (slot, lane) in prescan.iter_mut().zip(group_start..group_end) {
            *slot = total;
            total += plan.count(lane);
        }
        ops += 1;
        let base = match counter.advance(total) {
            Ok(base) => base,
            Err(err) => {
                result = Err(err);
                break;
            }
        };
        for (offset, lane) in prescan.iter().zip(group_start..group_end) {
            out.push(ReservedRange::new(base + offset, plan.count(lane)));
        }
    }
    counter.record_ops(ops);
    result
}
