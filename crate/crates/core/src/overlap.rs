//! Hiding halo communication behind computation.
//!
//! A sweep over `region` is split into a boundary shell of width `b_d` on
//! each side of every axis and the inner box left over. The shell is
//! computed first; then the inner box is computed on a second thread while
//! this thread runs the halo update. The result is identical to computing
//! the whole region and then updating halos.
//!
//! Kernels write through [`FieldWriter`]s that reject writes outside the
//! region they were handed, and they cannot read the fields being updated.

use std::panic;
use std::thread;
use std::time::{Duration, Instant};

use crate::array::{RawArray3, Region};
use crate::error::{Error, Result};
use crate::grid::GlobalGrid;
use crate::halo::{exchange, update_halo, DistributedField, ExchangeField};
use crate::topology::NDIMS;

/// Boundary shell widths per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryWidths(pub [usize; NDIMS]);

impl BoundaryWidths {
    /// Clamps each width to half the region extent (rounded up), the point at
    /// which the inner box becomes empty.
    pub fn capped_to(self, region: &Region) -> Self {
        Self([0, 1, 2].map(|d| self.0[d].min(region.extent(d).div_ceil(2))))
    }
}

impl From<[usize; NDIMS]> for BoundaryWidths {
    fn from(w: [usize; NDIMS]) -> Self {
        Self(w)
    }
}

/// Write access to one field restricted to a box of cells.
pub struct FieldWriter<'a> {
    raw: RawArray3<'a>,
    region: Region,
}

impl<'a> FieldWriter<'a> {
    pub(crate) fn new(raw: RawArray3<'a>, region: Region) -> Self {
        Self { raw, region }
    }

    pub fn region(&self) -> Region {
        self.region
    }

    /// Panics if `(i, j, k)` lies outside the writer's region.
    #[inline]
    pub fn set(&mut self, [i, j, k]: [usize; 3], value: f64) {
        assert!(
            self.region.contains([i, j, k]),
            "write at {:?} outside region {:?}",
            [i, j, k],
            self.region
        );
        // SAFETY: the region is disjoint from every other concurrent access.
        unsafe { self.raw.write(i, j, k, value) }
    }

    /// The region's x-extent of row `(j, k)`.
    #[inline]
    pub fn row_mut(&mut self, j: usize, k: usize) -> &mut [f64] {
        let r = self.region;
        assert!(
            r.range(1).contains(&j) && r.range(2).contains(&k),
            "row ({j}, {k}) outside region {r:?}"
        );
        // SAFETY: as in `set`; the slice borrows `self` mutably.
        unsafe { self.raw.row_mut(r.lo[0], r.hi[0], j, k) }
    }
}

/// Splits `region` into the inner box shrunk by `widths` and six boundary
/// slabs, in order x-low, x-high, y-low, y-high, z-low, z-high. Each slab
/// excludes cells of the slabs before it, so slabs and inner box partition
/// the region.
pub fn boundary_slabs(region: &Region, widths: BoundaryWidths) -> (Region, [Region; 6]) {
    let mut inner = *region;
    for d in 0..NDIMS {
        inner.lo[d] = (region.lo[d] + widths.0[d]).min(region.hi[d]);
        inner.hi[d] = region.hi[d].saturating_sub(widths.0[d]).max(inner.lo[d]);
    }
    let mut slabs = [Region::default(); 6];
    let mut rest = *region;
    for d in 0..NDIMS {
        let mut low = rest;
        low.hi[d] = inner.lo[d];
        let mut high = rest;
        high.lo[d] = inner.hi[d];
        slabs[2 * d] = low;
        slabs[2 * d + 1] = high;
        rest.lo[d] = inner.lo[d];
        rest.hi[d] = inner.hi[d];
    }
    (inner, slabs)
}

fn writers<'a>(raws: &[RawArray3<'a>], region: Region) -> Vec<FieldWriter<'a>> {
    raws.iter().map(|&raw| FieldWriter::new(raw, region)).collect()
}

fn check_region(region: &Region, fields: &[&mut DistributedField]) -> Result<()> {
    for f in fields {
        if !Region::full(f.sizes()).contains_region(region) {
            return Err(Error::Bounds(format!(
                "region {region:?} exceeds field {:?} of size {:?}",
                f.name(),
                f.sizes()
            )));
        }
    }
    Ok(())
}

/// Runs `compute` over `region` of `fields`, one writer per field.
pub fn sweep<K>(region: Region, fields: &mut [&mut DistributedField], compute: K) -> Result<()>
where
    K: Fn(Region, &mut [FieldWriter<'_>]),
{
    check_region(&region, fields)?;
    if region.is_empty() {
        return Ok(());
    }
    let raws: Vec<RawArray3<'_>> = fields.iter_mut().map(|f| f.data_mut().raw()).collect();
    compute(region, &mut writers(&raws, region));
    Ok(())
}

/// Wall times of the two activities of an overlapped sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OverlapTiming {
    /// Boundary shell plus inner box.
    pub compute: Duration,
    pub halo: Duration,
}

/// Computes `region` with `compute` and updates the halos of `fields`,
/// overlapping the update with the inner part of the sweep.
///
/// `compute(r, writers)` must write only cells in `r` (enforced by the
/// writers) and read only data that the sweep does not modify. Every width
/// must be at least the field overlap of every field on that axis.
pub fn hide_communication<K>(
    grid: &GlobalGrid,
    widths: BoundaryWidths,
    region: Region,
    fields: &mut [&mut DistributedField],
    compute: K,
) -> Result<OverlapTiming>
where
    K: Fn(Region, &mut [FieldWriter<'_>]) + Sync,
{
    if grid.is_finalized() {
        return Err(Error::State("global grid has been finalized".into()));
    }
    for f in fields.iter() {
        f.check_grid(grid)?;
        for axis in 0..NDIMS {
            let ol = f.halo().axis(axis).overlap();
            if widths.0[axis] < ol {
                return Err(Error::Width {
                    axis,
                    width: widths.0[axis],
                    overlap: ol,
                });
            }
        }
    }
    check_region(&region, fields)?;

    let (inner, slabs) = boundary_slabs(&region, widths);
    if inner.is_empty() {
        let t0 = Instant::now();
        sweep(region, fields, &compute)?;
        let t1 = Instant::now();
        update_halo(grid, fields)?;
        return Ok(OverlapTiming {
            compute: t1 - t0,
            halo: t1.elapsed(),
        });
    }

    let views: Vec<ExchangeField<'_>> = fields.iter_mut().map(|f| f.exchange_view()).collect();
    let raws: Vec<RawArray3<'_>> = views.iter().map(|v| v.raw).collect();

    let t0 = Instant::now();
    for slab in slabs.iter().filter(|s| !s.is_empty()) {
        compute(*slab, &mut writers(&raws, *slab));
    }
    let compute_ref = &compute;
    let raws_ref = &raws;
    let (inner_result, halo_result, halo_time) = thread::scope(|s| {
        let worker = s.spawn(move || {
            compute_ref(inner, &mut writers(raws_ref, inner));
            t0.elapsed()
        });
        let h0 = Instant::now();
        // SAFETY: the inner box is shrunk by at least the field overlap on
        // every axis, so it never touches a send or receive slab, and the
        // boundary shell is complete before the exchange starts.
        let halo = unsafe { exchange(grid, &views) };
        let halo_time = h0.elapsed();
        (worker.join(), halo, halo_time)
    });
    let compute_time = inner_result.unwrap_or_else(|p| panic::resume_unwind(p));
    halo_result?;
    Ok(OverlapTiming {
        compute: compute_time,
        halo: halo_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::Array3;
    use crate::grid::GridOptions;
    use crate::transport::inproc;
    use std::sync::Mutex;

    #[test]
    fn slabs_partition_region() {
        let region = Region::new([1, 1, 1], [11, 9, 7]);
        for w in [[2, 2, 2], [3, 1, 2], [16, 2, 2], [5, 4, 3], [0, 0, 0]] {
            let (inner, slabs) = boundary_slabs(&region, BoundaryWidths(w));
            let total: usize = slabs.iter().map(Region::len).sum();
            assert_eq!(region.len() - inner.len(), total, "widths {w:?}");
            let mut hits = Array3::zeros([12, 10, 8]);
            for r in slabs.iter().chain([&inner]) {
                for c in r.cells() {
                    hits[c] += 1.0;
                }
            }
            for c in hits.region().cells() {
                assert_eq!(hits[c], if region.contains(c) { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn capping() {
        let r = Region::new([1, 1, 1], [7, 7, 6]);
        assert_eq!(BoundaryWidths([16, 2, 2]).capped_to(&r), BoundaryWidths([3, 2, 2]));
        assert!(boundary_slabs(&r, BoundaryWidths([3, 3, 3])).0.is_empty());
    }

    #[test]
    fn writer_rejects_outside_writes() {
        let c = inproc::world(1).unwrap().remove(0);
        let g = GlobalGrid::init(&c, [6, 6, 6], &GridOptions::default()).unwrap();
        let mut f = DistributedField::new(&g, "a", [6, 6, 6], 0.0).unwrap();
        let res = panic::catch_unwind(panic::AssertUnwindSafe(|| {
            sweep(Region::new([1, 1, 1], [3, 3, 3]), &mut [&mut f], |_, w| {
                w[0].set([3, 1, 1], 1.0);
            })
        }));
        assert!(res.is_err());
    }

    #[test]
    fn narrow_widths_rejected() {
        let c = inproc::world(1).unwrap().remove(0);
        let g = GlobalGrid::init(&c, [8, 8, 8], &GridOptions::default()).unwrap();
        let mut f = DistributedField::new(&g, "a", [8, 8, 8], 0.0).unwrap();
        let err = hide_communication(&g, BoundaryWidths([1, 1, 1]), Region::interior([8; 3]), &mut [&mut f], |_, _| {});
        assert!(matches!(err, Err(Error::Width { axis: 0, width: 1, overlap: 2 })));
    }

    #[test]
    fn boundary_cells_written_once() {
        let region = Region::interior([12, 10, 9]);
        let out = inproc::run(2, |c| {
            let g = GlobalGrid::init(&c, [12, 10, 9], &GridOptions::default())?;
            let mut f = DistributedField::new(&g, "a", [12, 10, 9], 0.0)?;
            let marks = Mutex::new(Array3::zeros([12, 10, 9]));
            hide_communication(&g, BoundaryWidths([3, 2, 2]), region, &mut [&mut f], |r, w| {
                let mut m = marks.lock().unwrap();
                for cell in r.cells() {
                    w[0].set(cell, 1.0);
                    m[cell] += 1.0;
                }
            })?;
            Ok(marks.into_inner().unwrap())
        })
        .unwrap();
        for m in out {
            for c in m.region().cells() {
                assert_eq!(m[c], if region.contains(c) { 1.0 } else { 0.0 });
            }
        }
    }
}
