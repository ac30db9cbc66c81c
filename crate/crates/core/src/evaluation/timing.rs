use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Wall-clock seconds spent on one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    /// Enhancement and ROI detection.
    pub preprocessing_s: f64,
    /// Proposals, matching and remapping.
    pub proposal_matching_s: f64,
    pub total_s: f64,
}

impl StageTiming {
    pub fn new(preprocessing_s: f64, proposal_matching_s: f64) -> Self {
        Self {
            preprocessing_s,
            proposal_matching_s,
            total_s: preprocessing_s + proposal_matching_s,
        }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0)
    }

    pub fn is_consistent(&self) -> bool {
        (self.total_s - (self.preprocessing_s + self.proposal_matching_s)).abs() <= 1e-6
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameTiming {
    pub scene_id: u32,
    pub image_id: u32,
    pub timing: StageTiming,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub frames: Vec<FrameTiming>,
    /// Per-stage arithmetic means; absent when no frame was timed.
    pub mean: Option<StageTiming>,
}

pub fn summarize_timings(frames: Vec<FrameTiming>) -> BenchmarkReport {
    let mean = (!frames.is_empty()).then(|| {
        let n = frames.len() as f64;
        let pre = frames.iter().map(|f| f.timing.preprocessing_s).sum::<f64>() / n;
        let pm = frames
            .iter()
            .map(|f| f.timing.proposal_matching_s)
            .sum::<f64>()
            / n;
        StageTiming::new(pre, pm)
    });
    BenchmarkReport { frames, mean }
}

impl BenchmarkReport {
    /// Fixed-width table in milliseconds: one row per frame and a mean row.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16}  {:>15}  {:>21}  {:>10}",
            "frame", "Preprocessing", "Proposal + Matching", "Total"
        );
        let row = |s: &mut String, label: &str, t: &StageTiming| {
            let _ = writeln!(
                s,
                "{:<16}  {:>12.3} ms  {:>18.3} ms  {:>7.3} ms",
                label,
                t.preprocessing_s * 1e3,
                t.proposal_matching_s * 1e3,
                t.total_s * 1e3
            );
        };
        for f in &self.frames {
            row(
                &mut s,
                &format!("{:06}/{:06}", f.scene_id, f.image_id),
                &f.timing,
            );
        }
        if let Some(m) = &self.mean {
            row(&mut s, "mean", m);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_add_up() {
        let t = StageTiming::new(0.1, 0.25);
        assert!(t.is_consistent());
        assert_eq!(t.total_s, 0.1 + 0.25);
    }

    #[test]
    fn empty_report() {
        let r = summarize_timings(vec![]);
        assert!(r.mean.is_none());
        assert_eq!(r.to_table().lines().count(), 1);
    }

    #[test]
    fn means_and_table() {
        let frames = vec![
            FrameTiming {
                scene_id: 1,
                image_id: 0,
                timing: StageTiming::new(0.010, 0.050),
            },
            FrameTiming {
                scene_id: 1,
                image_id: 1,
                timing: StageTiming::new(0.020, 0.070),
            },
        ];
        let r = summarize_timings(frames);
        let m = r.mean.unwrap();
        assert!((m.preprocessing_s - 0.015).abs() < 1e-12);
        assert!((m.proposal_matching_s - 0.060).abs() < 1e-12);
        assert!(m.is_consistent());
        let table = r.to_table();
        assert!(table
            .lines()
            .next()
            .unwrap()
            .contains("Proposal + Matching"));
        assert!(table.contains("mean"));
        assert_eq!(table.lines().count(), 4);
    }
}
