//! Lane-level emulation of the integer multiply-add vector primitives.
//!
//! These are the portable reference semantics: the native paths in
//! [`super::native`] must agree with them bit for bit.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::layout::IsaProfile;
use crate::matrix::{Element, ElemKind, MatrixData};

/// Arithmetic of the `u8 x i8` pairwise multiply-add.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SatMode {
    /// Pair sums clamp to `i16`, as the hardware instruction does.
    #[default]
    HardwareSaturating,
    /// Pair sums are kept exactly in `i32` lanes.
    WideningExact,
}

impl SatMode {
    pub fn name(self) -> &'static str {
        match self {
            SatMode::HardwareSaturating => "sat",
            SatMode::WideningExact => "exact",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sat" => Some(SatMode::HardwareSaturating),
            "exact" => Some(SatMode::WideningExact),
            _ => None,
        }
    }
}

/// A vector register's worth of lanes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaneVec {
    lanes: MatrixData,
}

impl LaneVec {
    pub fn new<T: Element>(lanes: Vec<T>) -> Self {
        LaneVec { lanes: T::wrap(lanes) }
    }

    /// Lanes sized to exactly one register of `isa`.
    pub fn for_isa<T: Element>(isa: IsaProfile, lanes: Vec<T>) -> Result<Self> {
        let expected = (isa.vector_bits() / T::KIND.bits()) as usize;
        if lanes.len() != expected {
            return Err(Error::shape(format!(
                "{isa} register holds {expected} {} lanes, got {}",
                T::KIND,
                lanes.len()
            )));
        }
        Ok(Self::new(lanes))
    }

    pub fn zeros(kind: ElemKind, len: usize) -> Self {
        LaneVec {
            lanes: MatrixData::zeros(kind, len),
        }
    }

    pub fn kind(&self) -> ElemKind {
        self.lanes.kind()
    }

    pub fn len(&self) -> usize {
        self.lanes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty()
    }

    pub fn as_slice<T: Element>(&self) -> Option<&[T]> {
        T::view(&self.lanes)
    }

    fn expect<T: Element>(&self, what: &str) -> Result<&[T]> {
        self.as_slice::<T>()
            .ok_or_else(|| Error::shape(format!("{what}: expected {} lanes, got {}", T::KIND, self.kind())))
    }
}

/// Per-thread call counts of the emulated primitives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PrimitiveCounts {
    pub madd_u8i8: u64,
    pub madd_i16: u64,
    pub hadd_pairs_i32: u64,
    pub add_i32: u64,
    pub tree_reduce_i32: u64,
    pub broadcast: u64,
}

thread_local! {
    static COUNTS: Cell<PrimitiveCounts> = Cell::new(PrimitiveCounts::default());
}

fn bump(f: impl FnOnce(&mut PrimitiveCounts)) {
    COUNTS.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}

pub fn primitive_counts() -> PrimitiveCounts {
    COUNTS.with(Cell::get)
}

pub fn reset_primitive_counts() {
    COUNTS.with(|c| c.set(PrimitiveCounts::default()));
}

fn check_pairs(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("lane count mismatch: {a} vs {b}")));
    }
    if !a.is_multiple_of(2) {
        return Err(Error::shape(format!("odd lane count {a}")));
    }
    Ok(())
}

/// `u8 x i8` products of adjacent lane pairs, summed. Saturates to `i16`
/// lanes or widens to exact `i32` lanes depending on `mode`.
pub fn madd_u8i8(a: &LaneVec, b: &LaneVec, mode: SatMode) -> Result<LaneVec> {
    let a = a.expect::<u8>("madd_u8i8 lhs")?;
    let b = b.expect::<i8>("madd_u8i8 rhs")?;
    check_pairs(a.len(), b.len())?;
    bump(|c| c.madd_u8i8 += 1);
    let pairs = a.chunks_exact(2).zip(b.chunks_exact(2)).map(|(x, y)| {
        x[0] as i32 * y[0] as i32 + x[1] as i32 * y[1] as i32
    });
    Ok(match mode {
        SatMode::HardwareSaturating => LaneVec::new(
            pairs
                .map(|s| s.clamp(i16::MIN as i32, i16::MAX as i32) as i16)
                .collect::<Vec<_>>(),
        ),
        SatMode::WideningExact => LaneVec::new(pairs.collect::<Vec<_>>()),
    })
}

/// `i16 x i16` products of adjacent lane pairs summed into `i32` lanes.
/// The single overflow case (all four inputs `-32768`) wraps, as in hardware.
pub fn madd_i16(a: &LaneVec, b: &LaneVec) -> Result<LaneVec> {
    let a = a.expect::<i16>("madd_i16 lhs")?;
    let b = b.expect::<i16>("madd_i16 rhs")?;
    check_pairs(a.len(), b.len())?;
    bump(|c| c.madd_i16 += 1);
    Ok(LaneVec::new(
        a.chunks_exact(2)
            .zip(b.chunks_exact(2))
            .map(|(x, y)| (x[0] as i32 * y[0] as i32).wrapping_add(x[1] as i32 * y[1] as i32))
            .collect::<Vec<_>>(),
    ))
}

/// Sums adjacent `i32` lane pairs. Plays the role of the multiply-add against
/// a unit vector when the previous stage already produced `i32` lanes.
pub fn hadd_pairs_i32(a: &LaneVec) -> Result<LaneVec> {
    let a = a.expect::<i32>("hadd_pairs_i32")?;
    check_pairs(a.len(), a.len())?;
    bump(|c| c.hadd_pairs_i32 += 1);
    Ok(LaneVec::new(
        a.chunks_exact(2)
            .map(|x| x[0].wrapping_add(x[1]))
            .collect::<Vec<_>>(),
    ))
}

/// Lane-wise wrapping `i32` add.
pub fn add_i32(a: &LaneVec, b: &LaneVec) -> Result<LaneVec> {
    let x = a.expect::<i32>("add_i32 lhs")?;
    let y = b.expect::<i32>("add_i32 rhs")?;
    if x.len() != y.len() {
        return Err(Error::shape(format!("lane count mismatch: {} vs {}", x.len(), y.len())));
    }
    bump(|c| c.add_i32 += 1);
    Ok(LaneVec::new(
        x.iter().zip(y).map(|(p, q)| p.wrapping_add(*q)).collect::<Vec<_>>(),
    ))
}

/// Horizontal sum and the number of halving steps it took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeSum {
    pub value: i32,
    pub steps: u32,
}

/// Sums all lanes by repeatedly adding the upper half onto the lower half.
pub fn tree_reduce_i32(v: &LaneVec) -> Result<TreeSum> {
    let lanes = v.expect::<i32>("tree_reduce_i32")?;
    if !lanes.len().is_power_of_two() {
        return Err(Error::shape(format!("tree reduction needs a power-of-two lane count, got {}", lanes.len())));
    }
    bump(|c| c.tree_reduce_i32 += 1);
    let mut work = lanes.to_vec();
    let mut steps = 0;
    while work.len() > 1 {
        let half = work.len() / 2;
        let (lo, hi) = work.split_at_mut(half);
        for (x, y) in lo.iter_mut().zip(hi.iter()) {
            *x = x.wrapping_add(*y);
        }
        work.truncate(half);
        steps += 1;
    }
    Ok(TreeSum { value: work[0], steps })
}

/// Repeats `b` until it fills `total` lanes.
pub fn broadcast_block<T: Element>(b: &[T], total: usize) -> Result<LaneVec> {
    if b.is_empty() || !total.is_multiple_of(b.len()) {
        return Err(Error::shape(format!("block of {} lanes does not divide {total}", b.len())));
    }
    bump(|c| c.broadcast += 1);
    Ok(LaneVec::new(b.iter().copied().cycle().take(total).collect::<Vec<_>>()))
}
