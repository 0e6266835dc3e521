//! Window partitioning, cyclic shift, shift masks, relative-position index.
//!
//! A feature grid `[B, H, W, C]` is cut into non-overlapping `M x M` windows
//! flattened to `[B*N, M*M, C]` with `N = (H/M) * (W/M)`. Shifted blocks roll
//! the grid so that windows straddling the roll seam are masked region-wise
//! before softmax. Grids that `M` does not divide are a hard configuration
//! error; there is no implicit padding.

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Additive mask value for cross-region pairs. Large enough to zero the
/// attention weight in f32 while staying clear of inf - inf hazards.
pub const MASK_NEG: f64 = -1e4;

/// Batch of spatial token grids, shape `[B, H, W, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid<T> {
    values: Tensor<T>,
}

impl<T: Scalar> FeatureGrid<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        if values.rank() != 4 {
            return Err(Error::dim("feature_grid", values.shape(), &[0, 0, 0, 0]));
        }
        Ok(FeatureGrid { values })
    }

    pub fn batch(&self) -> usize {
        self.values.shape()[0]
    }
    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }
    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }
    pub fn channels(&self) -> usize {
        self.values.shape()[3]
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn into_values(self) -> Tensor<T> {
        self.values
    }

    pub fn at(&self, b: usize, y: usize, x: usize, c: usize) -> T {
        let (h, w, ch) = (self.height(), self.width(), self.channels());
        debug_assert!(b < self.batch() && y < h && x < w && c < ch);
        self.values.data()[((b * h + y) * w + x) * ch + c]
    }
}

/// Windows flattened for attention: `[B*N, M*M, C]`, tokens row-major inside
/// each window, windows ordered batch-major then row-major over the window
/// grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet<T> {
    windows: Tensor<T>,
    m: usize,
    grid_h: usize,
    grid_w: usize,
}

impl<T: Scalar> WindowSet<T> {
    pub fn windows(&self) -> &Tensor<T> {
        &self.windows
    }

    pub fn window_size(&self) -> usize {
        self.m
    }

    /// Window counts per axis; `N = grid_h * grid_w`.
    pub fn grid(&self) -> (usize, usize) {
        (self.grid_h, self.grid_w)
    }

    pub fn num_windows(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn batch(&self) -> usize {
        self.windows.shape()[0] / self.num_windows()
    }

    pub fn tokens_per_window(&self) -> usize {
        self.m * self.m
    }

    pub fn channels(&self) -> usize {
        self.windows.shape()[2]
    }

    /// Replaces the window tensor, keeping the provenance mapping. The new
    /// tensor must have the same shape.
    pub fn with_windows(&self, windows: Tensor<T>) -> Result<Self> {
        if windows.shape() != self.windows.shape() {
            return Err(Error::dim(
                "window_set",
                windows.shape(),
                self.windows.shape(),
            ));
        }
        Ok(WindowSet {
            windows,
            m: self.m,
            grid_h: self.grid_h,
            grid_w: self.grid_w,
        })
    }
}

/// Cuts the grid into non-overlapping `m x m` windows.
pub fn window_partition<T: Scalar>(g: &FeatureGrid<T>, m: usize) -> Result<WindowSet<T>> {
    let (b, h, w, c) = (g.batch(), g.height(), g.width(), g.channels());
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(Error::config(format!(
            "window size {m} does not divide grid {h}x{w}"
        )));
    }
    let (grid_h, grid_w) = (h / m, w / m);
    let n = grid_h * grid_w;
    let src = g.values().data();
    let mut out = vec![T::ZERO; b * n * m * m * c];
    for bi in 0..b {
        for wy in 0..grid_h {
            for wx in 0..grid_w {
                let win = (bi * grid_h + wy) * grid_w + wx;
                for ty in 0..m {
                    let y = wy * m + ty;
                    let src_row = ((bi * h + y) * w + wx * m) * c;
                    let dst_row = (win * m * m + ty * m) * c;
                    out[dst_row..dst_row + m * c]
                        .copy_from_slice(&src[src_row..src_row + m * c]);
                }
            }
        }
    }
    Ok(WindowSet {
        windows: Tensor::new(&[b * n, m * m, c], out)?,
        m,
        grid_h,
        grid_w,
    })
}

/// Exact inverse of [`window_partition`] for a grid of extents `h x w`.
pub fn window_reverse<T: Scalar>(ws: &WindowSet<T>, h: usize, w: usize) -> Result<FeatureGrid<T>> {
    let m = ws.m;
    if ws.grid_h * m != h || ws.grid_w * m != w {
        return Err(Error::dim("window_reverse", ws.windows.shape(), &[h, w]));
    }
    let (b, c) = (ws.batch(), ws.channels());
    let (grid_h, grid_w) = (ws.grid_h, ws.grid_w);
    let src = ws.windows.data();
    let mut out = vec![T::ZERO; b * h * w * c];
    for bi in 0..b {
        for wy in 0..grid_h {
            for wx in 0..grid_w {
                let win = (bi * grid_h + wy) * grid_w + wx;
                for ty in 0..m {
                    let y = wy * m + ty;
                    let dst_row = ((bi * h + y) * w + wx * m) * c;
                    let src_row = (win * m * m + ty * m) * c;
                    out[dst_row..dst_row + m * c]
                        .copy_from_slice(&src[src_row..src_row + m * c]);
                }
            }
        }
    }
    FeatureGrid::new(Tensor::new(&[b, h, w, c], out)?)
}

/// Torus roll: `out[b, y, x, c] = g[b, (y+dy) mod H, (x+dx) mod W, c]`.
/// `cyclic_shift(., -dy, -dx)` inverts it.
pub fn cyclic_shift<T: Scalar>(g: &FeatureGrid<T>, dy: i64, dx: i64) -> FeatureGrid<T> {
    let (b, h, w, c) = (g.batch(), g.height(), g.width(), g.channels());
    let dy = dy.rem_euclid(h as i64) as usize;
    let dx = dx.rem_euclid(w as i64) as usize;
    if dy == 0 && dx == 0 {
        return g.clone();
    }
    let src = g.values().data();
    let mut out = vec![T::ZERO; src.len()];
    for bi in 0..b {
        for y in 0..h {
            let sy = (y + dy) % h;
            for x in 0..w {
                let sx = (x + dx) % w;
                let d = ((bi * h + y) * w + x) * c;
                let s = ((bi * h + sy) * w + sx) * c;
                out[d..d + c].copy_from_slice(&src[s..s + c]);
            }
        }
    }
    FeatureGrid::new(Tensor::new(&[b, h, w, c], out).expect("same extents")).expect("rank 4")
}

/// Additive pre-softmax mask for shifted windows plus the region-id grid it
/// was derived from.
#[derive(Debug, Clone)]
pub struct ShiftMask {
    /// `[N, M*M, M*M]` with entries 0 or [`MASK_NEG`].
    mask: Tensor<f64>,
    /// Region id per grid position, `[H, W]` row-major, in rolled coordinates.
    region_ids: Vec<u8>,
    h: usize,
    w: usize,
    m: usize,
}

impl ShiftMask {
    pub fn mask(&self) -> &Tensor<f64> {
        &self.mask
    }

    pub fn num_windows(&self) -> usize {
        self.mask.shape()[0]
    }

    pub fn window_size(&self) -> usize {
        self.m
    }

    pub fn region_id(&self, y: usize, x: usize) -> u8 {
        self.region_ids[y * self.w + x]
    }

    pub fn grid_extents(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    /// Mask entry for tokens `i, j` of window `win`.
    pub fn entry(&self, win: usize, i: usize, j: usize) -> f64 {
        let t = self.m * self.m;
        self.mask.data()[(win * t + i) * t + j]
    }

    /// Substitutes raw mask values; gradient-probe tests only.
    #[cfg(test)]
    pub(crate) fn set_mask_values(&mut self, values: Tensor<f64>) {
        assert_eq!(values.shape(), self.mask.shape());
        self.mask = values;
    }
}

/// Builds the shifted-window mask for a rolled `h x w` grid.
///
/// Region ids follow the standard 3x3 slicing of the rolled grid — per axis
/// `[0, -M)`, `[-M, -shift)`, `[-shift, 0)` — so the windows along the
/// bottom/right seam mix two segments per axis and everything else is a
/// single region. shift = 0 degenerates to one region and an all-zero mask.
pub fn build_shift_mask(h: usize, w: usize, m: usize, shift: usize) -> Result<ShiftMask> {
    if shift >= m {
        return Err(Error::config(format!("shift {shift} must be < window {m}")));
    }
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(Error::config(format!(
            "window size {m} does not divide grid {h}x{w}"
        )));
    }
    let seg = |pos: usize, extent: usize| -> u8 {
        if shift == 0 || pos < extent - m {
            0
        } else if pos < extent - shift {
            1
        } else {
            2
        }
    };
    let mut region_ids = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            region_ids[y * w + x] = seg(y, h) * 3 + seg(x, w);
        }
    }

    let (grid_h, grid_w) = (h / m, w / m);
    let n = grid_h * grid_w;
    let t = m * m;
    let mut mask = vec![0.0f64; n * t * t];
    for wy in 0..grid_h {
        for wx in 0..grid_w {
            let win = wy * grid_w + wx;
            // Region id per token of this window, row-major.
            let ids: Vec<u8> = (0..t)
                .map(|tok| {
                    let y = wy * m + tok / m;
                    let x = wx * m + tok % m;
                    region_ids[y * w + x]
                })
                .collect();
            for i in 0..t {
                for j in 0..t {
                    if ids[i] != ids[j] {
                        mask[(win * t + i) * t + j] = MASK_NEG;
                    }
                }
            }
        }
    }
    Ok(ShiftMask {
        mask: Tensor::new(&[n, t, t], mask)?,
        region_ids,
        h,
        w,
        m,
    })
}

/// Relative-position lookup for an `m x m` window: `index[i][j]` addresses a
/// bias table of length `(2m-1)^2` and depends only on the coordinate delta
/// between tokens i and j.
#[derive(Debug, Clone, PartialEq)]
pub struct RelPosIndex {
    index: Vec<usize>,
    m: usize,
}

impl RelPosIndex {
    pub fn window_size(&self) -> usize {
        self.m
    }

    pub fn table_len(&self) -> usize {
        let side = 2 * self.m - 1;
        side * side
    }

    pub fn tokens(&self) -> usize {
        self.m * self.m
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.index[i * self.tokens() + j]
    }
}

pub fn relative_position_index(m: usize) -> RelPosIndex {
    assert!(m >= 1, "window size must be positive");
    let t = m * m;
    let side = 2 * m - 1;
    let mut index = vec![0usize; t * t];
    for i in 0..t {
        let (yi, xi) = (i / m, i % m);
        for j in 0..t {
            let (yj, xj) = (j / m, j % m);
            let dy = yi as isize - yj as isize + (m as isize - 1);
            let dx = xi as isize - xj as isize + (m as isize - 1);
            index[i * t + j] = dy as usize * side + dx as usize;
        }
    }
    RelPosIndex { index, m }
}
