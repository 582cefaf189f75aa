//! Pixel rasters, boolean masks and the mask algebra shared by every stage.
//!
//! Coordinates are top-left origin, y pointing down. All rasters are
//! row-major.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major RGB raster, 8 bits per channel.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ImageBuffer({}x{})", self.width, self.height)
    }
}

impl ImageBuffer {
    /// Solid-colour raster.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        check_dims(width, height)?;
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(Error::Codec(format!(
                "pixel buffer of {} bytes does not match {width}x{height}x3",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> [u8; 3]) -> Result<Self> {
        check_dims(width, height)?;
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.offset(x, y);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = self.offset(x, y);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copy of the pixels inside `bbox`.
    pub fn crop(&self, bbox: BBox) -> Result<Self> {
        bbox.check_within(self.width, self.height)?;
        Self::from_fn(bbox.width(), bbox.height(), |x, y| {
            self.get(bbox.x0 + x, bbox.y0 + y)
        })
    }

    /// Write `patch` with its top-left corner at `(x0, y0)`; the patch must fit.
    pub fn paste(&mut self, patch: &ImageBuffer, x0: u32, y0: u32) -> Result<()> {
        BBox::new(x0, y0, x0 + patch.width, y0 + patch.height)?
            .check_within(self.width, self.height)?;
        for y in 0..patch.height {
            let src = patch.offset(0, y);
            let dst = self.offset(x0, y0 + y);
            let n = patch.width as usize * 3;
            self.pixels[dst..dst + n].copy_from_slice(&patch.pixels[src..src + n]);
        }
        Ok(())
    }

    /// Per-pixel selection: `self` where `mask` is true, `other` elsewhere.
    pub fn select(&self, other: &ImageBuffer, mask: &BinaryMask) -> Result<Self> {
        ensure_same(self.dims(), other.dims())?;
        ensure_same(self.dims(), mask.dims())?;
        let mut out = other.clone();
        for (i, &bit) in mask.bits.iter().enumerate() {
            if bit {
                out.pixels[i * 3..i * 3 + 3].copy_from_slice(&self.pixels[i * 3..i * 3 + 3]);
            }
        }
        Ok(out)
    }

    /// Nearest-neighbour resize.
    pub fn resize_nearest(&self, width: u32, height: u32) -> Result<Self> {
        Self::from_fn(width, height, |x, y| {
            self.get(nearest(x, width, self.width), nearest(y, height, self.height))
        })
    }
}

/// Row-major boolean raster.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "BinaryMask({}x{}, area {})",
            self.width,
            self.height,
            self.area()
        )
    }
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        })
    }

    pub fn full(width: u32, height: u32) -> Result<Self> {
        let mut m = Self::empty(width, height)?;
        m.bits.fill(true);
        Ok(m)
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Result<Self> {
        check_dims(width, height)?;
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        if bits.len() != width as usize * height as usize {
            return Err(Error::Codec(format!(
                "mask of {} bits does not match {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Filled axis-aligned rectangle (clipped to the raster).
    pub fn rect(width: u32, height: u32, bbox: BBox) -> Result<Self> {
        Self::from_fn(width, height, |x, y| bbox.contains(x, y))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Iterator over the coordinates of true pixels, row-major.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i as u32) % w, (i as u32) / w))
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        ensure_same(self.dims(), other.dims())?;
        Ok(Self {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn union(&self, other: &BinaryMask) -> Result<Self> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersect(&self, other: &BinaryMask) -> Result<Self> {
        self.zip_with(other, |a, b| a && b)
    }

    /// Pixels of `self` not in `other`.
    pub fn difference(&self, other: &BinaryMask) -> Result<Self> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> Result<bool> {
        ensure_same(self.dims(), other.dims())?;
        Ok(self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b))
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> Result<usize> {
        ensure_same(self.dims(), other.dims())?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    /// Intersection over union; two empty masks have IoU 1.
    pub fn iou(&self, other: &BinaryMask) -> Result<f64> {
        let inter = self.intersection_area(other)?;
        let union = self.area() + other.area() - inter;
        if union == 0 {
            return Ok(1.0);
        }
        Ok(inter as f64 / union as f64)
    }

    /// Morphological dilation with a 5×5 all-ones kernel, repeated `iterations` times.
    pub fn dilate(&self, iterations: u32) -> Self {
        let mut cur = self.clone();
        for _ in 0..iterations {
            cur = cur.dilate_square(2);
        }
        cur
    }

    /// One pass of dilation by a (2r+1)×(2r+1) square, done separably.
    pub fn dilate_square(&self, r: u32) -> Self {
        let (w, h) = (self.width as i64, self.height as i64);
        let r = r as i64;
        let mut horiz = vec![false; self.bits.len()];
        for y in 0..h {
            for x in 0..w {
                let lo = (x - r).max(0);
                let hi = (x + r).min(w - 1);
                horiz[(y * w + x) as usize] = (lo..=hi).any(|xx| self.bits[(y * w + xx) as usize]);
            }
        }
        let mut bits = vec![false; self.bits.len()];
        for y in 0..h {
            for x in 0..w {
                let lo = (y - r).max(0);
                let hi = (y + r).min(h - 1);
                bits[(y * w + x) as usize] = (lo..=hi).any(|yy| horiz[(yy * w + x) as usize]);
            }
        }
        Self {
            width: self.width,
            height: self.height,
            bits,
        }
    }

    /// Tight half-open bounding box of the true pixels, `None` when empty.
    pub fn bbox(&self) -> Option<BBox> {
        let mut it = self.iter_set();
        let (x, y) = it.next()?;
        let (mut x0, mut y0, mut x1, mut y1) = (x, y, x + 1, y + 1);
        for (x, y) in it {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
        }
        Some(BBox { x0, y0, x1, y1 })
    }

    /// Sides of the raster that some true pixel lies strictly closer than
    /// `eps` pixels to. A pixel's distance to the left side is its column
    /// index, so `eps = 1` reports only pixels on the edge row/column.
    pub fn touches_boundary(&self, eps: u32) -> SideSet {
        let mut sides = SideSet::default();
        if eps == 0 {
            return sides;
        }
        for (x, y) in self.iter_set() {
            if x < eps {
                sides.insert(Side::Left);
            }
            if y < eps {
                sides.insert(Side::Top);
            }
            if self.width - 1 - x < eps {
                sides.insert(Side::Right);
            }
            if self.height - 1 - y < eps {
                sides.insert(Side::Bottom);
            }
        }
        sides
    }

    pub fn crop(&self, bbox: BBox) -> Result<Self> {
        bbox.check_within(self.width, self.height)?;
        Self::from_fn(bbox.width(), bbox.height(), |x, y| {
            self.get(bbox.x0 + x, bbox.y0 + y)
        })
    }

    /// Embed `self` into a `width`×`height` canvas with its origin at
    /// `(dx, dy)`; pixels falling outside the canvas are dropped.
    pub fn placed(&self, width: u32, height: u32, dx: i64, dy: i64) -> Result<Self> {
        let mut out = Self::empty(width, height)?;
        for (x, y) in self.iter_set() {
            let (tx, ty) = (x as i64 + dx, y as i64 + dy);
            if tx >= 0 && ty >= 0 && tx < width as i64 && ty < height as i64 {
                out.set(tx as u32, ty as u32, true);
            }
        }
        Ok(out)
    }

    pub fn resize_nearest(&self, width: u32, height: u32) -> Result<Self> {
        Self::from_fn(width, height, |x, y| {
            self.get(nearest(x, width, self.width), nearest(y, height, self.height))
        })
    }
}

/// `|a ∪ b|` as a free function, matching the other mask operations.
pub fn mask_union(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    a.union(b)
}

pub fn mask_intersect(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    a.intersect(b)
}

pub fn mask_complement(m: &BinaryMask) -> BinaryMask {
    m.complement()
}

pub fn mask_area(m: &BinaryMask) -> usize {
    m.area()
}

pub fn mask_dilate(m: &BinaryMask, iterations: u32) -> BinaryMask {
    m.dilate(iterations)
}

pub fn bbox_of_mask(m: &BinaryMask) -> Option<BBox> {
    m.bbox()
}

/// Fraction of `cluster` pixels that fall inside `reference`.
pub fn overlap_ratio(cluster: &BinaryMask, reference: &BinaryMask) -> Result<f64> {
    let area = cluster.area();
    let inter = cluster.intersection_area(reference)?;
    if area == 0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(inter as f64 / area as f64)
}

pub fn touches_boundary(m: &BinaryMask, eps: u32) -> SideSet {
    m.touches_boundary(eps)
}

/// Union of a collection of same-sized masks; `None` for an empty collection.
pub fn union_all<'a>(masks: impl IntoIterator<Item = &'a BinaryMask>) -> Result<Option<BinaryMask>> {
    let mut acc: Option<BinaryMask> = None;
    for m in masks {
        acc = Some(match acc {
            None => m.clone(),
            Some(a) => a.union(m)?,
        });
    }
    Ok(acc)
}

/// Half-open axis-aligned box `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::Config(format!(
                "degenerate box ({x0},{y0})-({x1},{y1})"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn check_within(&self, width: u32, height: u32) -> Result<()> {
        if self.x1 > width || self.y1 > height || self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(Error::Config(format!(
                "box {self:?} does not fit a {width}x{height} raster"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Top, Side::Bottom];

    fn bit(self) -> u8 {
        match self {
            Side::Left => 1,
            Side::Right => 2,
            Side::Top => 4,
            Side::Bottom => 8,
        }
    }
}

/// Set of raster sides.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct SideSet(u8);

impl SideSet {
    pub fn all() -> Self {
        Self(15)
    }

    pub fn insert(&mut self, side: Side) {
        self.0 |= side.bit();
    }

    pub fn contains(&self, side: Side) -> bool {
        self.0 & side.bit() != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = Side> + '_ {
        Side::ALL.into_iter().filter(|s| self.contains(*s))
    }
}

impl FromIterator<Side> for SideSet {
    fn from_iter<I: IntoIterator<Item = Side>>(iter: I) -> Self {
        let mut s = SideSet::default();
        for side in iter {
            s.insert(side);
        }
        s
    }
}

impl Serialize for SideSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for SideSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let sides = Vec::<Side>::deserialize(deserializer)?;
        Ok(sides.into_iter().collect())
    }
}

#[inline]
pub(crate) fn nearest(dst: u32, dst_len: u32, src_len: u32) -> u32 {
    ((dst as u64 * src_len as u64) / dst_len as u64) as u32
}

fn check_dims(width: u32, height: u32) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions(width, height));
    }
    Ok(())
}

pub(crate) fn ensure_same(expected: (u32, u32), actual: (u32, u32)) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}
