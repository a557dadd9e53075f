//! Peano space-filling-curve ordering of the patch grid and contiguous splits
//! along it.

use std::fmt;
use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::fv::{neighbor, GridPos, Side};

/// Upper bound on ill-balanced partition counts.
pub const MAX_ILL_BALANCED_PARTITIONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PartitionError {
    #[error("patches per axis must be a power of three, got {0}")]
    NotPowerOfThree(usize),
    #[error("partition count {requested} outside 1..={max}")]
    CountOutOfRange { requested: usize, max: usize },
    #[error("ill-balanced splits need at least two partitions, got {0}")]
    TooFewForIllBalanced(usize),
}

/// Visit order of the `M x M` patch grid along a Peano curve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SfcOrder {
    m: usize,
    order: Vec<GridPos>,
    rank: Vec<usize>,
}

impl SfcOrder {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn positions(&self) -> &[GridPos] {
        &self.order
    }

    pub fn position(&self, sfc_index: usize) -> GridPos {
        self.order[sfc_index]
    }

    /// Curve index of the patch with row-major index `grid_index`.
    pub fn sfc_index(&self, grid_index: usize) -> usize {
        self.rank[grid_index]
    }
}

fn power_of_three_exponent(m: usize) -> Option<u32> {
    let mut k = 0;
    let mut v = 1usize;
    while v < m {
        v = v.checked_mul(3)?;
        k += 1;
    }
    (v == m).then_some(k)
}

/// Peano order on an `m x m` grid.
///
/// The grid is split into 3x3 blocks visited in column serpentine order
/// (up the first column, down the second, up the third). The sub-curve of
/// block `(bx, by)` is mirrored in x when `by` is odd and in y when `bx` is
/// odd, which makes the exit of every block face-adjacent to the entry of the
/// next one.
pub fn sfc_order(m: usize) -> Result<SfcOrder, PartitionError> {
    let k = power_of_three_exponent(m).ok_or(PartitionError::NotPowerOfThree(m))?;
    let mut order = vec![GridPos::new(0, 0)];
    let mut size = 1;
    for _ in 0..k {
        let mut next = Vec::with_capacity(order.len() * 9);
        for bx in 0..3 {
            for step in 0..3 {
                let by = if bx % 2 == 0 { step } else { 2 - step };
                for p in &order {
                    let lx = if by % 2 == 1 { size - 1 - p.ix } else { p.ix };
                    let ly = if bx % 2 == 1 { size - 1 - p.iy } else { p.iy };
                    next.push(GridPos::new(bx * size + lx, by * size + ly));
                }
            }
        }
        order = next;
        size *= 3;
    }
    let mut rank = vec![0; m * m];
    for (i, p) in order.iter().enumerate() {
        rank[p.index(m)] = i;
    }
    Ok(SfcOrder { m, order, rank })
}

/// A contiguous segment of the curve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub id: usize,
    pub range: Range<usize>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }
}

fn from_sizes(sizes: &[usize]) -> Vec<Partition> {
    let mut start = 0;
    sizes
        .iter()
        .enumerate()
        .map(|(id, &len)| {
            let p = Partition {
                id,
                range: start..start + len,
            };
            start += len;
            p
        })
        .collect()
}

/// Cuts the curve into `count` chunks whose sizes differ by at most one patch.
/// Larger chunks come first.
pub fn split_balanced(order: &SfcOrder, count: usize) -> Result<Vec<Partition>, PartitionError> {
    let total = order.len();
    if count == 0 || count > total {
        return Err(PartitionError::CountOutOfRange {
            requested: count,
            max: total,
        });
    }
    let base = total / count;
    let extra = total % count;
    let sizes: Vec<usize> = (0..count).map(|i| base + usize::from(i < extra)).collect();
    Ok(from_sizes(&sizes))
}

/// Repeatedly assigns half of the remaining curve (rounded up) to the next
/// partition, capped at `min(count, 20)` partitions where the last one takes
/// whatever is left.
pub fn split_ill_balanced(order: &SfcOrder, count: usize) -> Result<Vec<Partition>, PartitionError> {
    if count < 2 {
        return Err(PartitionError::TooFewForIllBalanced(count));
    }
    let cap = count.min(MAX_ILL_BALANCED_PARTITIONS);
    let mut remaining = order.len();
    let mut sizes = Vec::new();
    while remaining > 0 {
        let len = if sizes.len() + 1 == cap {
            remaining
        } else {
            remaining.div_ceil(2)
        };
        sizes.push(len);
        remaining -= len;
    }
    Ok(from_sizes(&sizes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellClass {
    Skeleton,
    Enclave,
}

impl fmt::Display for CellClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellClass::Skeleton => "skeleton",
            CellClass::Enclave => "enclave",
        })
    }
}

/// Owner partition of every patch, indexed by row-major grid index.
pub fn owners(order: &SfcOrder, partitions: &[Partition]) -> Vec<usize> {
    let mut owner = vec![usize::MAX; order.len()];
    for p in partitions {
        for s in p.range.clone() {
            owner[order.position(s).index(order.m())] = p.id;
        }
    }
    owner
}

/// A patch is skeleton iff one of its four periodic neighbours lies in another
/// partition. Indexed by row-major grid index.
pub fn classify(order: &SfcOrder, partitions: &[Partition]) -> Vec<CellClass> {
    let m = order.m();
    let owner = owners(order, partitions);
    (0..m * m)
        .map(|idx| {
            let pos = GridPos::from_index(idx, m);
            let boundary = Side::ALL
                .iter()
                .any(|&side| owner[neighbor(pos, side, m).index(m)] != owner[idx]);
            if boundary {
                CellClass::Skeleton
            } else {
                CellClass::Enclave
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Balance {
    Well,
    Ill,
}

impl Balance {
    pub const NAMES: [&'static str; 2] = ["well", "ill"];

    pub fn name(self) -> &'static str {
        match self {
            Balance::Well => "well",
            Balance::Ill => "ill",
        }
    }
}

impl std::str::FromStr for Balance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "well" => Ok(Balance::Well),
            "ill" => Ok(Balance::Ill),
            other => Err(format!(
                "unknown balance mode '{other}', expected one of: {}",
                Self::NAMES.join(", ")
            )),
        }
    }
}

/// Curve order, partitions and classification of one mesh.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub order: SfcOrder,
    pub partitions: Vec<Partition>,
    pub owner: Vec<usize>,
    pub classes: Vec<CellClass>,
}

impl Decomposition {
    pub fn new(m: usize, balance: Balance, count: usize) -> Result<Self, PartitionError> {
        let order = sfc_order(m)?;
        let partitions = match balance {
            Balance::Well => split_balanced(&order, count.min(order.len()).max(1))?,
            Balance::Ill => split_ill_balanced(&order, count.max(2))?,
        };
        Ok(Self::from_partitions(order, partitions))
    }

    pub fn from_partitions(order: SfcOrder, partitions: Vec<Partition>) -> Self {
        let owner = owners(&order, &partitions);
        let classes = classify(&order, &partitions);
        Self {
            order,
            partitions,
            owner,
            classes,
        }
    }

    pub fn skeleton_count(&self) -> usize {
        self.classes.iter().filter(|c| **c == CellClass::Skeleton).count()
    }

    pub fn enclave_count(&self) -> usize {
        self.classes.len() - self.skeleton_count()
    }

    /// Row-major indices of the patches of `partition`, in curve order.
    pub fn patches_of(&self, partition: usize) -> impl Iterator<Item = usize> + '_ {
        let m = self.order.m();
        self.partitions[partition]
            .range
            .clone()
            .map(move |s| self.order.position(s).index(m))
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.partitions.iter().map(Partition::len).collect()
    }

    /// Writes `ix,iy,sfc_index,partition_id,class`, one row per patch in curve order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "ix,iy,sfc_index,partition_id,class")?;
        let m = self.order.m();
        for (s, pos) in self.order.positions().iter().enumerate() {
            let idx = pos.index(m);
            writeln!(out, "{},{},{},{},{}", pos.ix, pos.iy, s, self.owner[idx], self.classes[idx])?;
        }
        Ok(())
    }
}
