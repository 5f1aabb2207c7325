use super::TopologyError;

/// Gray-scale image in ink convention: 1.0 is full black ink, 0.0 is white.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self, TopologyError> {
        if height == 0 || width == 0 {
            return Err(TopologyError::EmptyShape { height, width });
        }
        if pixels.len() != height * width {
            return Err(TopologyError::PixelCount {
                expected: height * width,
                actual: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(TopologyError::PixelRange { index, value });
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Builds an image by clamping every value into `[0, 1]`. NaN becomes 0.
    pub fn from_clamped(height: usize, width: usize, mut pixels: Vec<f32>) -> Result<Self, TopologyError> {
        for p in pixels.iter_mut() {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        Self::new(height, width, pixels)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    /// Sets a pixel, clamping into `[0, 1]`.
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.pixels[row * self.width + col] = value.clamp(0.0, 1.0);
    }

    /// One of the 8 symmetries of the square: bit 0 transposes, bit 1
    /// flips left-right, bit 2 flips top-bottom, applied in that order.
    /// Component structure is unchanged, so scores are too.
    pub fn dihedral(&self, k: u8) -> Self {
        let mut out = if k & 1 == 1 { self.transposed() } else { self.clone() };
        if k & 2 != 0 {
            out = out.flipped_horizontal();
        }
        if k & 4 != 0 {
            out = out.flipped_vertical();
        }
        out
    }

    pub fn transposed(&self) -> Self {
        let (h, w) = (self.height, self.width);
        let pixels = remap(w, h, |r, c| self.pixels[c * w + r]);
        Self {
            height: w,
            width: h,
            pixels,
        }
    }

    pub fn flipped_horizontal(&self) -> Self {
        let w = self.width;
        let pixels = remap(self.height, w, |r, c| self.pixels[r * w + (w - 1 - c)]);
        Self { pixels, ..*self }
    }

    pub fn flipped_vertical(&self) -> Self {
        let (h, w) = (self.height, self.width);
        let pixels = remap(h, w, |r, c| self.pixels[(h - 1 - r) * w + c]);
        Self { pixels, ..*self }
    }

    /// Quarter turn clockwise.
    pub fn rotated_90(&self) -> Self {
        self.transposed().flipped_horizontal()
    }
}

fn remap<T>(height: usize, width: usize, f: impl Fn(usize, usize) -> T) -> Vec<T> {
    let mut out = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            out.push(f(r, c));
        }
    }
    out
}

/// Thresholded image with bits in {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl BinaryImage {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self, TopologyError> {
        if height == 0 || width == 0 {
            return Err(TopologyError::EmptyShape { height, width });
        }
        if bits.len() != height * width {
            return Err(TopologyError::PixelCount {
                expected: height * width,
                actual: bits.len(),
            });
        }
        if let Some((index, &value)) = bits.iter().enumerate().find(|(_, b)| **b > 1) {
            return Err(TopologyError::PixelRange {
                index,
                value: value as f32,
            });
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    /// Parses rows of `'#'`/`'1'` (set) and `'.'`/`'0'` (clear). Handy in tests.
    pub fn from_ascii(rows: &[&str]) -> Result<Self, TopologyError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut bits = Vec::with_capacity(height * width);
        for row in rows {
            for ch in row.chars() {
                bits.push(matches!(ch, '#' | '1') as u8);
            }
        }
        Self::new(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    /// Lifts the bits to a gray image with values exactly 0.0 or 1.0.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            height: self.height,
            width: self.width,
            pixels: self.bits.iter().map(|&b| b as f32).collect(),
        }
    }
}
