//! Grid location and multilinear blending for the value tables.
//!
//! Infeasible nodes carry `+inf`. Blending is conservative: any infinite
//! corner with nonzero weight makes the interpolant infinite, while corners
//! with exactly zero weight are ignored (a query on a grid plane must not be
//! poisoned by the far side).

/// Absolute snap tolerance for queries just outside the grid hull, in the
/// axis' own unit. Covers float drift from accumulated transitions.
pub(crate) const HULL_SNAP: f64 = 1e-9;

/// Cell index `i` and fractional weight `w` such that the query sits at
/// `axis[i] * (1 - w) + axis[i + 1] * w`. `None` when the query lies outside
/// the hull by more than [`HULL_SNAP`].
pub(crate) fn find_cell(axis: &[f64], x: f64) -> Option<(usize, f64)> {
    debug_assert!(axis.len() >= 2, "axis needs at least two nodes");
    let last = axis.len() - 1;
    if x < axis[0] - HULL_SNAP || x > axis[last] + HULL_SNAP {
        return None;
    }
    let x = x.clamp(axis[0], axis[last]);
    if x >= axis[last] {
        return Some((last - 1, 1.0));
    }
    let i = axis.partition_point(|a| *a <= x) - 1;
    Some(((i), (x - axis[i]) / (axis[i + 1] - axis[i])))
}

/// Linear blend with conservative infinity handling and zero-weight
/// shortcuts. Assumes non-negative inputs (cost values), so no NaN from
/// `inf - inf` can be produced.
#[inline]
pub(crate) fn blend(a: f64, b: f64, w: f64) -> f64 {
    if w <= 0.0 {
        a
    } else if w >= 1.0 {
        b
    } else if a.is_finite() && b.is_finite() {
        a + (b - a) * w
    } else {
        f64::INFINITY
    }
}

/// Bilinear blend of the four corner values `v[soc][v-axis]`-style:
/// `c00` low/low, `c01` low axis 1 high axis 2, etc. Weights `w1`, `w2`.
#[inline]
pub(crate) fn blend2(c00: f64, c01: f64, c10: f64, c11: f64, w1: f64, w2: f64) -> f64 {
    blend(blend(c00, c01, w2), blend(c10, c11, w2), w1)
}

/// Cell lookup for queries of the form `axis[i] + delta` on a uniform axis,
/// where `delta` is shared by every `i`. The cell index then shifts by a
/// constant and the fractional weight is constant too, which lets the hot
/// solver loops walk a whole axis without searching.
#[derive(Debug, Clone, Copy)]
pub(crate) struct UniformShift {
    offset: isize,
    weight: f64,
    len: usize,
    /// Snap tolerance in fractional-cell units.
    snap: f64,
}

impl UniformShift {
    /// `len` nodes spaced `step` apart; queries are `node_i + delta`.
    pub(crate) fn new(len: usize, step: f64, delta: f64) -> Self {
        debug_assert!(len >= 2 && step > 0.0);
        let rel = delta / step;
        let offset = rel.floor();
        UniformShift {
            offset: offset as isize,
            weight: rel - offset,
            len,
            snap: HULL_SNAP / step,
        }
    }

    /// Cell for the query `axis[i] + delta`, or `None` outside the hull.
    #[inline]
    pub(crate) fn cell(&self, i: usize) -> Option<(usize, f64)> {
        let j = i as isize + self.offset;
        if j >= 0 && (j as usize) < self.len - 1 {
            return Some((j as usize, self.weight));
        }
        // snap the two just-outside cases back onto the hull edge
        if j == self.len as isize - 1 && self.weight <= self.snap {
            return Some((self.len - 2, 1.0));
        }
        if j == -1 && self.weight >= 1.0 - self.snap {
            return Some((0, 0.0));
        }
        None
    }
}
