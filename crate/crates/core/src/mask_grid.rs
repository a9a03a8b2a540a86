//! Pixel masks and the fixed patch grid laid over them.
//!
//! An image of `W x H` pixels is split into `rows x cols` patches using a floor
//! partition: column `c` covers `x` in `[c*W/cols, (c+1)*W/cols)` (integer
//! division), rows likewise. Uneven divisions spread the remainder across
//! patches deterministically, and the rectangles always tile the frame.

use std::path::Path;

use image::{DynamicImage, GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default side length masks are normalized to before labeling.
pub const DEFAULT_NORMALIZE_SIZE: usize = 512;
/// Default patch grid (rows and cols).
pub const DEFAULT_GRID: usize = 24;

/// Row-major binary plane, `true` marks an anomalous pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        if bits.len() != width * height {
            return Err(Error::Dimension(format!(
                "mask of {width}x{height} needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Any nonzero sample is anomalous. Multi-channel images count a pixel as
    /// anomalous if any color channel is nonzero.
    pub fn from_image(img: &DynamicImage) -> Result<Self> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let bits = match img {
            DynamicImage::ImageLuma8(gray) => gray.pixels().map(|p| p.0[0] != 0).collect(),
            other => other
                .to_rgba8()
                .pixels()
                .map(|p| p.0[..3].iter().any(|&v| v != 0))
                .collect(),
        };
        Self::new(w, h, bits)
    }

    /// Single-channel 8-bit image with anomalous pixels at 255.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(x as usize, y as usize) { 255 } else { 0 }])
        })
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?;
        Self::from_image(&img)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_image()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// Patch grid geometry plus the anomaly-area threshold used when labeling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Minimum anomalous fraction of a patch for it to be labeled anomalous.
    /// Zero means "at least one anomalous pixel".
    pub tau: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            rows: DEFAULT_GRID,
            cols: DEFAULT_GRID,
            tau: 0.0,
        }
    }
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, tau: f64) -> Result<Self> {
        let spec = Self { rows, cols, tau };
        spec.validate()?;
        Ok(spec)
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Dimension(format!(
                "grid must have at least one row and column, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::Argument(format!(
                "tau must lie in [0, 1), got {}",
                self.tau
            )));
        }
        Ok(())
    }

    pub fn with_tau(self, tau: f64) -> Result<Self> {
        Self::new(self.rows, self.cols, tau)
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    fn check_image(&self, img_w: usize, img_h: usize) -> Result<()> {
        if img_w < self.cols || img_h < self.rows {
            return Err(Error::Dimension(format!(
                "image {img_w}x{img_h} is smaller than the {}x{} grid",
                self.rows, self.cols
            )));
        }
        Ok(())
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PatchRect {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }
}

#[inline]
fn split_point(i: usize, extent: usize, parts: usize) -> usize {
    i * extent / parts
}

/// Pixel rectangle covered by patch `(r, c)`.
pub fn patch_bounds(
    spec: &GridSpec,
    img_w: usize,
    img_h: usize,
    r: usize,
    c: usize,
) -> Result<PatchRect> {
    spec.validate()?;
    spec.check_image(img_w, img_h)?;
    if r >= spec.rows || c >= spec.cols {
        return Err(Error::Range(format!(
            "patch ({r},{c}) outside {}x{} grid",
            spec.rows, spec.cols
        )));
    }
    Ok(PatchRect {
        x0: split_point(c, img_w, spec.cols),
        y0: split_point(r, img_h, spec.rows),
        x1: split_point(c + 1, img_w, spec.cols),
        y1: split_point(r + 1, img_h, spec.rows),
    })
}

// Maps each pixel coordinate along one axis to its patch index.
fn axis_lookup(extent: usize, parts: usize) -> Vec<usize> {
    let mut out = vec![0; extent];
    for p in 0..parts {
        for slot in &mut out[split_point(p, extent, parts)..split_point(p + 1, extent, parts)] {
            *slot = p;
        }
    }
    out
}

/// Row-major patch labels, `true` marks an anomalous patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchLabelGrid {
    spec: GridSpec,
    labels: Vec<bool>,
}

impl PatchLabelGrid {
    pub fn new(spec: GridSpec, labels: Vec<bool>) -> Result<Self> {
        spec.validate()?;
        if labels.len() != spec.cells() {
            return Err(Error::Dimension(format!(
                "{}x{} grid needs {} labels, got {}",
                spec.rows,
                spec.cols,
                spec.cells(),
                labels.len()
            )));
        }
        Ok(Self { spec, labels })
    }

    pub fn zeros(spec: GridSpec) -> Result<Self> {
        Self::new(spec, vec![false; spec.cells()])
    }

    /// Grid with exactly the listed `(row, col)` patches set.
    pub fn from_cells(spec: GridSpec, cells: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut grid = Self::zeros(spec)?;
        for (r, c) in cells {
            if r >= spec.rows || c >= spec.cols {
                return Err(Error::Range(format!(
                    "patch ({r},{c}) outside {}x{} grid",
                    spec.rows, spec.cols
                )));
            }
            grid.set(r, c, true);
        }
        Ok(grid)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn rows(&self) -> usize {
        self.spec.rows
    }

    pub fn cols(&self) -> usize {
        self.spec.cols
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.labels[r * self.spec.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        self.labels[r * self.spec.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.labels[r * self.spec.cols..(r + 1) * self.spec.cols]
    }

    pub fn anomalous_count(&self) -> usize {
        self.labels.iter().filter(|&&b| b).count()
    }

    pub fn is_normal(&self) -> bool {
        !self.labels.iter().any(|&b| b)
    }

    /// Anomalous patches in row-major order.
    pub fn anomalous_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.spec.cols;
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / cols, i % cols))
    }
}

/// Labels each patch anomalous when its anomalous-pixel count reaches
/// `max(1, ceil(tau * area))`.
pub fn label_patches(mask: &BinaryMask, spec: &GridSpec) -> Result<PatchLabelGrid> {
    spec.validate()?;
    spec.check_image(mask.width, mask.height)?;
    let col_of = axis_lookup(mask.width, spec.cols);
    let row_of = axis_lookup(mask.height, spec.rows);

    let mut counts = vec![0usize; spec.cells()];
    for (y, line) in mask.bits.chunks_exact(mask.width).enumerate() {
        let base = row_of[y] * spec.cols;
        for (x, &bit) in line.iter().enumerate() {
            if bit {
                counts[base + col_of[x]] += 1;
            }
        }
    }

    let mut labels = vec![false; spec.cells()];
    for r in 0..spec.rows {
        let h = split_point(r + 1, mask.height, spec.rows) - split_point(r, mask.height, spec.rows);
        for c in 0..spec.cols {
            let w = split_point(c + 1, mask.width, spec.cols) - split_point(c, mask.width, spec.cols);
            let needed = ((spec.tau * (w * h) as f64).ceil() as usize).max(1);
            labels[r * spec.cols + c] = counts[r * spec.cols + c] >= needed;
        }
    }
    PatchLabelGrid::new(*spec, labels)
}

/// Paints every pixel of each anomalous patch.
pub fn rasterize(labels: &PatchLabelGrid, img_w: usize, img_h: usize) -> Result<BinaryMask> {
    let spec = labels.spec;
    spec.check_image(img_w, img_h)?;
    let col_of = axis_lookup(img_w, spec.cols);
    let row_of = axis_lookup(img_h, spec.rows);
    let mut bits = Vec::with_capacity(img_w * img_h);
    for &r in &row_of {
        let row = labels.row(r);
        bits.extend(col_of.iter().map(|&c| row[c]));
    }
    BinaryMask::new(img_w, img_h, bits)
}

/// Nearest-neighbor resampling: target pixel `(x, y)` samples source pixel
/// `(x*W/target_w, y*H/target_h)` with integer division.
pub fn resize_mask_nearest(mask: &BinaryMask, target_w: usize, target_h: usize) -> Result<BinaryMask> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::Argument(format!(
            "target size must be positive, got {target_w}x{target_h}"
        )));
    }
    if target_w == mask.width && target_h == mask.height {
        return Ok(mask.clone());
    }
    let src_x: Vec<usize> = (0..target_w).map(|x| x * mask.width / target_w).collect();
    let mut bits = Vec::with_capacity(target_w * target_h);
    for y in 0..target_h {
        let sy = y * mask.height / target_h;
        let line = &mask.bits[sy * mask.width..(sy + 1) * mask.width];
        bits.extend(src_x.iter().map(|&sx| line[sx]));
    }
    BinaryMask::new(target_w, target_h, bits)
}

/// Resizes to `size x size` and labels patches; the usual path from a raw
/// ground-truth mask to its patch grid.
pub fn mask_to_grid(mask: &BinaryMask, spec: &GridSpec, normalize_size: Option<usize>) -> Result<PatchLabelGrid> {
    match normalize_size {
        Some(size) => label_patches(&resize_mask_nearest(mask, size, size)?, spec),
        None => label_patches(mask, spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from_rows(rows: &[&[u8]]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        let bits = rows.iter().flat_map(|r| r.iter().map(|&v| v != 0)).collect();
        BinaryMask::new(w, h, bits).unwrap()
    }

    #[test]
    fn bounds_first_patch_of_default_grid() {
        let spec = GridSpec::default();
        let rect = patch_bounds(&spec, 512, 512, 0, 0).unwrap();
        assert_eq!(rect, PatchRect { x0: 0, y0: 0, x1: 21, y1: 21 });
        let last = patch_bounds(&spec, 512, 512, 23, 23).unwrap();
        assert_eq!((last.x1, last.y1), (512, 512));
    }

    #[test]
    fn bounds_even_split() {
        let spec = GridSpec::square(2).unwrap();
        assert_eq!(
            patch_bounds(&spec, 4, 4, 1, 1).unwrap(),
            PatchRect { x0: 2, y0: 2, x1: 4, y1: 4 }
        );
    }

    #[test]
    fn bounds_reject_bad_index_and_small_image() {
        let spec = GridSpec::square(3).unwrap();
        assert!(matches!(patch_bounds(&spec, 10, 10, 3, 0), Err(Error::Range(_))));
        assert!(matches!(patch_bounds(&spec, 2, 10, 0, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn three_by_three_tiles_ten_by_ten() {
        let spec = GridSpec::square(3).unwrap();
        let mut hits = vec![0u32; 100];
        for r in 0..3 {
            for c in 0..3 {
                let rect = patch_bounds(&spec, 10, 10, r, c).unwrap();
                for y in rect.y0..rect.y1 {
                    for x in rect.x0..rect.x1 {
                        hits[y * 10 + x] += 1;
                    }
                }
            }
        }
        assert!(hits.iter().all(|&h| h == 1));
    }

    #[test]
    fn label_all_zero() {
        let mask = BinaryMask::zeros(40, 30).unwrap();
        let grid = label_patches(&mask, &GridSpec::square(6).unwrap()).unwrap();
        assert!(grid.is_normal());
    }

    #[test]
    fn label_single_pixel() {
        let mut mask = BinaryMask::zeros(4, 4).unwrap();
        mask.set(0, 0, true);
        let grid = label_patches(&mask, &GridSpec::square(2).unwrap()).unwrap();
        assert_eq!(grid.labels(), &[true, false, false, false]);
    }

    #[test]
    fn label_with_area_threshold() {
        let mask = mask_from_rows(&[&[1, 1, 1, 1], &[1, 1, 1, 1], &[0, 0, 0, 0], &[0, 0, 0, 0]]);
        let spec = GridSpec::new(2, 2, 0.6).unwrap();
        let grid = label_patches(&mask, &spec).unwrap();
        assert_eq!(grid.labels(), &[true, true, false, false]);

        // 2 of 4 pixels misses ceil(0.6 * 4) = 3
        let half = mask_from_rows(&[&[1, 0, 0, 0], &[1, 0, 0, 0], &[0, 0, 0, 0], &[0, 0, 0, 0]]);
        assert!(label_patches(&half, &spec).unwrap().is_normal());
    }

    #[test]
    fn label_rejects_small_mask() {
        let mask = BinaryMask::zeros(5, 5).unwrap();
        assert!(matches!(
            label_patches(&mask, &GridSpec::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn rasterize_cases() {
        let spec = GridSpec::square(2).unwrap();
        let zero = PatchLabelGrid::zeros(spec).unwrap();
        assert_eq!(rasterize(&zero, 4, 4).unwrap().count_ones(), 0);

        let g = PatchLabelGrid::from_cells(spec, [(0, 0)]).unwrap();
        let m = rasterize(&g, 4, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(m.get(x, y), x < 2 && y < 2, "pixel ({x},{y})");
            }
        }
        assert!(matches!(rasterize(&g, 1, 4), Err(Error::Dimension(_))));
    }

    #[test]
    fn resize_cases() {
        let m = mask_from_rows(&[&[1, 0], &[0, 0]]);
        let up = resize_mask_nearest(&m, 4, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(up.get(x, y), x < 2 && y < 2);
            }
        }
        let ones = BinaryMask::new(3, 5, vec![true; 15]).unwrap();
        assert_eq!(resize_mask_nearest(&ones, 17, 2).unwrap().count_ones(), 34);
        assert!(resize_mask_nearest(&ones, 0, 2).is_err());
    }

    #[test]
    fn resize_identity_at_512() {
        let bits = (0..512 * 512).map(|i| (i * 7919) % 13 == 0).collect();
        let m = BinaryMask::new(512, 512, bits).unwrap();
        assert_eq!(resize_mask_nearest(&m, 512, 512).unwrap(), m);
    }

    #[test]
    fn constructor_invariants() {
        assert!(BinaryMask::new(0, 3, vec![]).is_err());
        assert!(BinaryMask::new(2, 2, vec![true; 3]).is_err());
        assert!(GridSpec::new(0, 3, 0.0).is_err());
        assert!(GridSpec::new(3, 3, 1.0).is_err());
        assert!(GridSpec::new(3, 3, -0.1).is_err());
        assert!(PatchLabelGrid::from_cells(GridSpec::square(2).unwrap(), [(2, 0)]).is_err());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let m = mask_from_rows(&[&[1, 0, 0], &[0, 1, 1]]);
        m.save_png(&path).unwrap();
        assert_eq!(BinaryMask::load_png(&path).unwrap(), m);
    }

    fn arb_grid(max: usize) -> impl Strategy<Value = PatchLabelGrid> {
        (1..=max, 1..=max).prop_flat_map(|(r, c)| {
            proptest::collection::vec(any::<bool>(), r * c)
                .prop_map(move |labels| PatchLabelGrid::new(GridSpec::new(r, c, 0.0).unwrap(), labels).unwrap())
        })
    }

    proptest! {
        #[test]
        fn tiling_holds(rows in 1usize..12, cols in 1usize..12, dw in 0usize..30, dh in 0usize..30) {
            let spec = GridSpec::new(rows, cols, 0.0).unwrap();
            let (w, h) = (cols + dw, rows + dh);
            let mut hits = vec![0u8; w * h];
            for r in 0..rows {
                for c in 0..cols {
                    let rect = patch_bounds(&spec, w, h, r, c).unwrap();
                    prop_assert!(rect.area() > 0);
                    for y in rect.y0..rect.y1 {
                        for x in rect.x0..rect.x1 {
                            hits[y * w + x] += 1;
                        }
                    }
                }
            }
            prop_assert!(hits.iter().all(|&v| v == 1));
        }

        #[test]
        fn rasterize_then_label_round_trips(g in arb_grid(16), extra_w in 0usize..40, extra_h in 0usize..40) {
            let w = g.cols() + extra_w;
            let h = g.rows() + extra_h;
            let mask = rasterize(&g, w, h).unwrap();
            prop_assert_eq!(label_patches(&mask, g.spec()).unwrap(), g);
        }

        #[test]
        fn tau_is_monotone(bits in proptest::collection::vec(any::<bool>(), 20 * 20), t1 in 0.0f64..0.99, t2 in 0.0f64..0.99) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let mask = BinaryMask::new(20, 20, bits).unwrap();
            let a = label_patches(&mask, &GridSpec::new(6, 6, lo).unwrap()).unwrap();
            let b = label_patches(&mask, &GridSpec::new(6, 6, hi).unwrap()).unwrap();
            for (x, y) in a.labels().iter().zip(b.labels()) {
                prop_assert!(*x || !*y);
            }
        }

        #[test]
        fn resize_keeps_binary_and_identity(bits in proptest::collection::vec(any::<bool>(), 7 * 9), tw in 1usize..30, th in 1usize..30) {
            let m = BinaryMask::new(7, 9, bits).unwrap();
            prop_assert_eq!(resize_mask_nearest(&m, 7, 9).unwrap(), m.clone());
            let r = resize_mask_nearest(&m, tw, th).unwrap();
            prop_assert_eq!(r.bits().len(), tw * th);
        }
    }
}
