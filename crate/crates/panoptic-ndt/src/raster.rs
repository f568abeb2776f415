//! Dense row-major rasters and packed binary masks.

use crate::geometry::Pixel;

/// Row-major 2D array indexed by (u, v) = (column, row).
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: u32,
    height: u32,
    data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: u32, height: u32, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_size<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn idx(&self, u: u32, v: u32) -> usize {
        debug_assert!(u < self.width && v < self.height);
        v as usize * self.width as usize + u as usize
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> &T {
        &self.data[self.idx(u, v)]
    }

    #[inline]
    pub fn set(&mut self, u: u32, v: u32, value: T) {
        let i = self.idx(u, v);
        self.data[i] = value;
    }

    pub fn at(&self, p: Pixel) -> &T {
        self.get(p.u, p.v)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Iterate (u, v, value) in row-major order.
    pub fn iter_pixels(&self) -> impl Iterator<Item = (u32, u32, &T)> {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, t)| ((i as u32) % w, (i as u32) / w, t))
    }

    pub fn map<U: Clone>(&self, f: impl Fn(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

/// Packed bitmask over a raster, one bit per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct BitMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl BitMask {
    pub fn new(width: u32, height: u32) -> Self {
        let bits = width as usize * height as usize;
        Self {
            width,
            height,
            words: vec![0; bits.div_ceil(64)],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn same_size(&self, other: &BitMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    fn bit(&self, u: u32, v: u32) -> usize {
        debug_assert!(u < self.width && v < self.height);
        v as usize * self.width as usize + u as usize
    }

    #[inline]
    pub fn set(&mut self, u: u32, v: u32) {
        let b = self.bit(u, v);
        self.words[b / 64] |= 1u64 << (b % 64);
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> bool {
        let b = self.bit(u, v);
        self.words[b / 64] >> (b % 64) & 1 == 1
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn intersection_count(&self, other: &BitMask) -> usize {
        debug_assert!(self.same_size(other));
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn union_count(&self, other: &BitMask) -> usize {
        debug_assert!(self.same_size(other));
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum()
    }

    /// Pixel indices (row-major) of all set bits, ascending.
    pub fn set_indices(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.count());
        for (wi, &w) in self.words.iter().enumerate() {
            let mut bits = w;
            while bits != 0 {
                let tz = bits.trailing_zeros();
                out.push((wi * 64) as u32 + tz);
                bits &= bits - 1;
            }
        }
        out
    }
}
