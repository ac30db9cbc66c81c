//! Uncompressed COCO run-length encoding.
//!
//! Runs walk the mask in column-major order and alternate unset/set,
//! always starting with an unset run (possibly of length zero).

use serde::{Deserialize, Serialize};

use super::{BinaryMask, GeometryError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub counts: Vec<u64>,
    /// `[height, width]`, as in COCO.
    pub size: [usize; 2],
}

impl Rle {
    pub fn height(&self) -> usize {
        self.size[0]
    }

    pub fn width(&self) -> usize {
        self.size[1]
    }

    pub fn decode(&self) -> Result<BinaryMask, GeometryError> {
        rle_decode(&self.counts, self.width(), self.height())
    }

    /// Number of set pixels, without materialising the mask.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).sum()
    }
}

pub fn rle_encode(m: &BinaryMask) -> Rle {
    let (w, h) = (m.width(), m.height());
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for x in 0..w {
        for y in 0..h {
            let bit = m.get(x, y);
            if bit != current {
                counts.push(run);
                run = 0;
                current = bit;
            }
            run += 1;
        }
    }
    counts.push(run);
    Rle {
        counts,
        size: [h, w],
    }
}

pub fn rle_decode(
    counts: &[u64],
    width: usize,
    height: usize,
) -> Result<BinaryMask, GeometryError> {
    let total: u64 = counts.iter().sum();
    let expected = (width * height) as u64;
    if total != expected {
        return Err(GeometryError::MalformedRle(format!(
            "runs sum to {total}, expected {expected} for {width}x{height}"
        )));
    }
    let mut mask = BinaryMask::empty(width, height);
    let mut idx = 0usize;
    for (i, &run) in counts.iter().enumerate() {
        let set = i % 2 == 1;
        for _ in 0..run {
            if set {
                // column-major index -> (x, y)
                mask.set(idx / height, idx % height, true);
            }
            idx += 1;
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_and_full_two_by_two() {
        assert_eq!(rle_encode(&BinaryMask::empty(2, 2)).counts, vec![4]);
        assert_eq!(rle_encode(&BinaryMask::full(2, 2)).counts, vec![0, 4]);
    }

    #[test]
    fn runs_are_column_major() {
        // 3x2 mask, only the top row set:
        // column 0: (1,0) ; column 1: (1,0) ; column 2: (1,0)
        let m = BinaryMask::from_fn(3, 2, |_, y| y == 0);
        let rle = rle_encode(&m);
        assert_eq!(rle.counts, vec![0, 1, 1, 1, 1, 1, 1]);
        assert_eq!(rle.size, [2, 3]);
        assert_eq!(rle.area(), 3);
    }

    #[test]
    fn decode_rejects_bad_run_sum() {
        assert!(matches!(
            rle_decode(&[1, 2], 2, 2),
            Err(GeometryError::MalformedRle(_))
        ));
    }

    proptest! {
        #[test]
        fn roundtrip_random_masks(w in 0usize..9, h in 0usize..9, seed in any::<u64>()) {
            let m = BinaryMask::from_fn(w, h, |x, y| {
                let v = seed.wrapping_mul(6364136223846793005).wrapping_add((x * 31 + y * 17) as u64);
                (v >> 33) % 3 == 0
            });
            let rle = rle_encode(&m);
            prop_assert_eq!(rle.decode().unwrap(), m.clone());
            prop_assert_eq!(rle.area() as usize, m.area());
        }
    }
}
