//! Dense 3-D arrays of `f64` with the x index varying fastest, and boxes of
//! cells within them.

use std::marker::PhantomData;
use std::ops::{Index, IndexMut, Range};

/// 3-D array stored x-fastest: element `(i, j, k)` lives at
/// `i + nx·(j + ny·k)`. Indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Array3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Array3 {
    pub fn filled(dims: [usize; 3], value: f64) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { dims, data }
    }

    /// Wraps x-fastest data. Returns `None` if the length does not match.
    pub fn from_vec(dims: [usize; 3], data: Vec<f64>) -> Option<Self> {
        (data.len() == dims.iter().product::<usize>()).then_some(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Entire array as a region.
    pub fn region(&self) -> Region {
        Region::full(self.dims)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest absolute elementwise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.dims != other.dims {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0` and comparing NaNs
    /// by payload.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub(crate) fn raw(&mut self) -> RawArray3<'_> {
        RawArray3 {
            ptr: self.data.as_mut_ptr(),
            dims: self.dims,
            _life: PhantomData,
        }
    }
}

impl Index<[usize; 3]> for Array3 {
    type Output = f64;

    #[inline]
    fn index(&self, [i, j, k]: [usize; 3]) -> &f64 {
        assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        &self.data[i + self.dims[0] * (j + self.dims[1] * k)]
    }
}

impl IndexMut<[usize; 3]> for Array3 {
    #[inline]
    fn index_mut(&mut self, [i, j, k]: [usize; 3]) -> &mut f64 {
        assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        &mut self.data[i + self.dims[0] * (j + self.dims[1] * k)]
    }
}

/// Axis-aligned box of cells, 0-based and half-open on every axis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Region {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl Region {
    pub fn new(lo: [usize; 3], hi: [usize; 3]) -> Self {
        Self { lo, hi }
    }

    pub fn full(dims: [usize; 3]) -> Self {
        Self::new([0; 3], dims)
    }

    /// All cells except the outermost layer on every axis.
    pub fn interior(dims: [usize; 3]) -> Self {
        Self::new([1; 3], dims.map(|d| d.saturating_sub(1))).normalized()
    }

    fn normalized(mut self) -> Self {
        for d in 0..3 {
            self.hi[d] = self.hi[d].max(self.lo[d]);
        }
        self
    }

    pub fn range(&self, axis: usize) -> Range<usize> {
        self.lo[axis]..self.hi[axis]
    }

    pub fn extent(&self, axis: usize) -> usize {
        self.hi[axis].saturating_sub(self.lo[axis])
    }

    pub fn len(&self) -> usize {
        (0..3).map(|d| self.extent(d)).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, [i, j, k]: [usize; 3]) -> bool {
        (self.lo[0]..self.hi[0]).contains(&i)
            && (self.lo[1]..self.hi[1]).contains(&j)
            && (self.lo[2]..self.hi[2]).contains(&k)
    }

    pub fn contains_region(&self, other: &Region) -> bool {
        other.is_empty() || (0..3).all(|d| self.lo[d] <= other.lo[d] && other.hi[d] <= self.hi[d])
    }

    /// Shrinks by `w[d]` layers at both ends of every axis; an axis that would
    /// invert collapses to an empty range.
    pub fn shrink(&self, w: [usize; 3]) -> Self {
        let mut r = *self;
        for d in 0..3 {
            r.lo[d] = self.lo[d] + w[d];
            r.hi[d] = self.hi[d].saturating_sub(w[d]).max(r.lo[d]);
        }
        r
    }

    pub fn cells(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let r = *self;
        r.range(2).flat_map(move |k| {
            r.range(1)
                .flat_map(move |j| r.range(0).map(move |i| [i, j, k]))
        })
    }
}

/// Unchecked shared access to an [`Array3`] for code that writes disjoint
/// parts of one array from two threads. Every access must stay in bounds and
/// concurrent users must touch disjoint cells.
#[derive(Clone, Copy)]
pub(crate) struct RawArray3<'a> {
    ptr: *mut f64,
    dims: [usize; 3],
    _life: PhantomData<&'a mut [f64]>,
}

// SAFETY: the pointer targets a heap buffer that outlives 'a; the disjointness
// requirement on concurrent users is documented on the type.
unsafe impl Send for RawArray3<'_> {}
unsafe impl Sync for RawArray3<'_> {}

impl<'a> RawArray3<'a> {
    #[inline]
    pub(crate) fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// # Safety
    /// No other thread may be writing cell `(i, j, k)`.
    #[inline]
    pub(crate) unsafe fn read(&self, i: usize, j: usize, k: usize) -> f64 {
        self.ptr.add(self.offset(i, j, k)).read()
    }

    /// # Safety
    /// No other thread may be accessing cell `(i, j, k)`.
    #[inline]
    pub(crate) unsafe fn write(&self, i: usize, j: usize, k: usize, v: f64) {
        self.ptr.add(self.offset(i, j, k)).write(v)
    }

    /// Row `[i0, i1)` at `(j, k)`.
    ///
    /// # Safety
    /// No other thread may access these cells while the slice lives.
    #[inline]
    pub(crate) unsafe fn row_mut(&self, i0: usize, i1: usize, j: usize, k: usize) -> &'a mut [f64] {
        assert!(i0 <= i1 && i1 <= self.dims[0]);
        if i0 == i1 {
            return &mut [];
        }
        let start = self.offset(i0, j, k);
        std::slice::from_raw_parts_mut(self.ptr.add(start), i1 - i0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_x_fastest() {
        let a = Array3::from_fn([2, 3, 4], |i, j, k| (i + 10 * j + 100 * k) as f64);
        assert_eq!(a.as_slice()[1], 1.0);
        assert_eq!(a.as_slice()[2], 10.0);
        assert_eq!(a.as_slice()[6], 100.0);
        assert_eq!(a[[1, 2, 3]], 321.0);
        assert_eq!(a.offset(1, 2, 3), 1 + 2 * (2 + 3 * 3));
    }

    #[test]
    fn region_shrink_and_cells() {
        let r = Region::full([5, 4, 3]);
        assert_eq!(r.len(), 60);
        let s = r.shrink([2, 1, 1]);
        assert_eq!(s, Region::new([2, 1, 1], [3, 3, 2]));
        assert_eq!(s.cells().count(), s.len());
        assert!(r.shrink([3, 0, 0]).is_empty());
        assert_eq!(Region::interior([3, 3, 3]).len(), 1);
        assert!(Region::interior([2, 5, 5]).is_empty());
    }
}
