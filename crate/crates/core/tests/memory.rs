//! Peak heap use of one `M*` application, measured with a counting
//! allocator.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use mfbd_core::eigsolve::MStarOperator;
use mfbd_core::linalg::{orthonormalize, SymmetricOperator};
use mfbd_core::subspace::SignalSubspace;
use mfbd_core::{Footprint, Shape2};
use nalgebra::DMatrix;

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let now = CURRENT.fetch_add(layout.size(), Ordering::SeqCst) + layout.size();
        PEAK.fetch_max(now, Ordering::SeqCst);
        unsafe { System.alloc(layout) }
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        CURRENT.fetch_sub(layout.size(), Ordering::SeqCst);
        unsafe { System.dealloc(ptr, layout) }
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

#[test]
fn apply_stays_within_image_plus_m_frames() {
    let x = Shape2::of(64, 64);
    let a = Shape2::of(8, 8);
    let y = x.valid(a).unwrap();
    let m = 10;
    let g = DMatrix::from_fn(y.len(), m, |r, c| ((r * 31 + c * 17) % 23) as f64 - 11.0 + (r as f64).sqrt());
    let s = SignalSubspace::new(y, orthonormalize(g), vec![1.0; m], m, 100).unwrap();
    let op = MStarOperator::new(&s, Footprint::all_ones(a), x, None).unwrap();
    let input: Vec<f64> = (0..x.len()).map(|i| (i as f64).sin()).collect();
    let mut out = vec![0.0; x.len()];

    let base = CURRENT.load(Ordering::SeqCst);
    PEAK.store(base, Ordering::SeqCst);
    op.apply_into(&input, &mut out).unwrap();
    let extra = PEAK.load(Ordering::SeqCst) - base;

    let budget = 8 * 2 * (x.len() + m * y.len());
    assert!(extra <= budget, "{extra} bytes allocated, budget {budget}");
    // far below the dense |x|² representation
    assert!(extra * 100 < 8 * x.len() * x.len());
}
