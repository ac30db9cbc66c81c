use serde::{Deserialize, Serialize};

use crate::geometry::BinaryMask;

/// Patch tokens laid out on a `rows x cols` grid over the encoded image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    /// Row-major, `rows * cols * dim` values.
    pub data: Vec<f64>,
}

impl PatchGrid {
    pub fn from_patches(rows: usize, cols: usize, patches: &[Vec<f64>]) -> Option<Self> {
        if patches.len() != rows * cols {
            return None;
        }
        let dim = patches.first().map_or(0, |p| p.len());
        if patches.iter().any(|p| p.len() != dim) {
            return None;
        }
        Some(Self {
            rows,
            cols,
            dim,
            data: patches.concat(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_consistent(&self) -> bool {
        self.data.len() == self.rows * self.cols * self.dim
    }

    pub fn patch(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.cols + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.len())
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.iter().map(|p| p.to_vec()).collect()
    }

    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        if self.dim > 0 {
            for chunk in out.data.chunks_exact_mut(self.dim) {
                normalize_in_place(chunk);
            }
        }
        out
    }

    /// Patches whose cell centre falls on a set pixel of `mask`, where the
    /// mask spans the same image the grid was computed from.
    pub fn select_by_mask(&self, mask: &BinaryMask) -> Vec<&[f64]> {
        let (w, h) = (mask.width(), mask.height());
        if w == 0 || h == 0 {
            return Vec::new();
        }
        let mut out = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                let px = (((c as f64 + 0.5) * w as f64 / self.cols as f64) as usize).min(w - 1);
                let py = (((r as f64 + 0.5) * h as f64 / self.rows as f64) as usize).min(h - 1);
                if mask.get(px, py) {
                    out.push(self.patch(r, c));
                }
            }
        }
        out
    }
}

/// Output of a feature extractor for one image (optionally masked).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Features {
    pub global: Vec<f64>,
    pub patches: PatchGrid,
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn normalize_in_place(v: &mut [f64]) {
    let n = l2_norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub fn normalized(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    normalize_in_place(&mut out);
    out
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine similarity with negative values clamped to 0.
pub fn clamped_cosine(a: &[f64], b: &[f64]) -> f64 {
    cosine(a, b).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 0.0], &[2.0, 0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(clamped_cosine(&[1.0, 0.0], &[-1.0, 0.0]), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn normalization() {
        let v = normalized(&[3.0, 4.0]);
        assert!((l2_norm(&v) - 1.0).abs() < 1e-15);
        assert_eq!(normalized(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn grid_selection_uses_cell_centres() {
        let patches: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let grid = PatchGrid::from_patches(2, 2, &patches).unwrap();
        // left half of an 8x8 mask covers cells (0,0) and (1,0)
        let mask = BinaryMask::from_fn(8, 8, |x, _| x < 4);
        let sel: Vec<f64> = grid.select_by_mask(&mask).iter().map(|p| p[0]).collect();
        assert_eq!(sel, vec![0.0, 2.0]);
        assert!(grid.select_by_mask(&BinaryMask::empty(8, 8)).is_empty());
    }

    #[test]
    fn ragged_patches_rejected() {
        assert!(PatchGrid::from_patches(1, 2, &[vec![1.0], vec![1.0, 2.0]]).is_none());
        assert!(PatchGrid::from_patches(2, 2, &[vec![1.0]]).is_none());
    }
}
