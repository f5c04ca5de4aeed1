//! Dense row-major `(height, width, channels)` arrays used for images,
//! depth maps, latent planes, masks and flow fields.

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Wraps existing storage; panics when the length does not match.
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            height * width * channels,
            "grid storage does not match {height}x{width}x{channels}"
        );
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn offset(&self, row: usize, col: usize) -> usize {
        (row * self.width + col) * self.channels
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[T] {
        let o = self.offset(row, col);
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [T] {
        let o = self.offset(row, col);
        let c = self.channels;
        &mut self.data[o..o + c]
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, ch: usize) -> &T {
        &self.data[self.offset(row, col) + ch]
    }

}

impl<T> Grid<T> {
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.same_size(other) && self.channels == other.channels
    }

    /// Same height and width; channels may differ.
    pub fn same_size<U>(&self, other: &Grid<U>) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Single-channel boolean mask.
pub type Mask = Grid<bool>;

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Grid::filled(height, width, 1, false)
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        let w = self.width;
        self.data[row * w + col] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}
