use super::{BoundingBox, GeometryError};

/// Row-major binary mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    /// Number of set pixels, kept in step with `bits`.
    count: usize,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
            count: 0,
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
            count: width * height,
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, GeometryError> {
        if bits.len() != width * height {
            return Err(GeometryError::MaskLength {
                expected: width * height,
                actual: bits.len(),
            });
        }
        let count = bits.iter().filter(|&&b| b).count();
        Ok(Self {
            width,
            height,
            bits,
            count,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        let mut count = 0;
        for y in 0..height {
            for x in 0..width {
                let b = f(x, y);
                count += b as usize;
                bits.push(b);
            }
        }
        Self {
            width,
            height,
            bits,
            count,
        }
    }

    /// Mask of the integer-pixel rectangle `[x0, x1) x [y0, y1)`, clipped to the canvas.
    pub fn from_rect(
        width: usize,
        height: usize,
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
    ) -> Self {
        Self::from_fn(width, height, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
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
        let slot = &mut self.bits[y * self.width + x];
        if *slot != value {
            *slot = value;
            if value {
                self.count += 1;
            } else {
                self.count -= 1;
            }
        }
    }

    pub fn area(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Row `y` as a slice.
    pub fn row(&self, y: usize) -> &[bool] {
        &self.bits[y * self.width..(y + 1) * self.width]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Coordinates of every set pixel, row-major.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width.max(1);
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    /// Sub-mask of the rectangle at `(x0, y0)` with the given size. Pixels
    /// beyond the source are treated as unset.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |x, y| {
            let (sx, sy) = (x0 + x, y0 + y);
            sx < self.width && sy < self.height && self.get(sx, sy)
        })
    }
}

/// `|a ∩ b| / |a ∪ b|`, or 0 when both masks are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, GeometryError> {
    if !a.same_shape(b) {
        return Err(GeometryError::ShapeMismatch {
            left: (a.width, a.height),
            right: (b.width, b.height),
        });
    }
    let inter = a
        .bits
        .iter()
        .zip(&b.bits)
        .filter(|(&pa, &pb)| pa && pb)
        .count() as u64;
    let union = (a.count + b.count) as u64 - inter;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Tight box around the set pixels.
pub fn mask_to_bbox(m: &BinaryMask) -> Result<BoundingBox, GeometryError> {
    if m.is_empty() {
        return Err(GeometryError::EmptyMask);
    }
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..m.height {
        let row = m.row(y);
        let Some(first) = row.iter().position(|&b| b) else {
            continue;
        };
        let last = row.iter().rposition(|&b| b).unwrap_or(first);
        y0 = y0.min(y);
        y1 = y;
        x0 = x0.min(first);
        x1 = x1.max(last);
    }
    BoundingBox::new(
        x0 as f64,
        y0 as f64,
        (x1 - x0 + 1) as f64,
        (y1 - y0 + 1) as f64,
    )
}
