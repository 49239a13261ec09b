use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::TrainError;
use crate::events::FrameStack;
use crate::model::{frames_to_tensor, tensor_to_probs, E2VModel};
use crate::tensor::Mode;
use crate::voxel::{binarize, fscore, iou, voxel_to_points, ProbGrid, VoxelGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryRow {
    pub category: String,
    pub samples: usize,
    pub iou: f64,
    pub fscore: f64,
}

/// Per-category means plus a sample-weighted `Overall` row.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub threshold: f64,
    pub distance: f64,
    pub categories: Vec<CategoryRow>,
    pub overall: CategoryRow,
}

impl Report {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "IoU threshold t = {}, F-Score distance d = {}", self.threshold, self.distance).unwrap();
        let width = self
            .categories
            .iter()
            .map(|r| r.category.len())
            .chain([8])
            .max()
            .unwrap_or(8);
        writeln!(s, "{:<width$}  {:>7}  {:>8}  {:>8}", "category", "samples", "IoU", "F-Score").unwrap();
        for r in self.categories.iter().chain([&self.overall]) {
            writeln!(s, "{:<width$}  {:>7}  {:>8.4}  {:>8.4}", r.category, r.samples, r.iou, r.fscore).unwrap();
        }
        s
    }

    /// `category,samples,iou,fscore,threshold,distance` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("category,samples,iou,fscore,threshold,distance\n");
        for r in self.categories.iter().chain([&self.overall]) {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.category, r.samples, r.iou, r.fscore, self.threshold, self.distance
            )
            .unwrap();
        }
        s
    }
}

fn metric_err(e: impl ToString) -> TrainError {
    TrainError::Config(e.to_string())
}

/// Scores precomputed probability grids against labels.
pub fn evaluate_predictions(
    predictions: &[ProbGrid],
    labels: &[(&str, &VoxelGrid)],
    t: f64,
    d: f64,
) -> Result<Report, TrainError> {
    if predictions.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if predictions.len() != labels.len() {
        return Err(TrainError::ShapeInconsistency(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut per_cat: BTreeMap<&str, (usize, f64, f64)> = BTreeMap::new();
    let (mut iou_sum, mut f_sum) = (0.0, 0.0);
    for (p, (cat, gt)) in predictions.iter().zip(labels) {
        let i = iou(p, gt, t).map_err(metric_err)?;
        let rec = binarize(p, t).map_err(metric_err)?;
        let f = fscore(&voxel_to_points(&rec), &voxel_to_points(gt), d).map_err(metric_err)?;
        let e = per_cat.entry(cat).or_default();
        e.0 += 1;
        e.1 += i;
        e.2 += f;
        iou_sum += i;
        f_sum += f;
    }
    let n = predictions.len();
    Ok(Report {
        threshold: t,
        distance: d,
        categories: per_cat
            .into_iter()
            .map(|(c, (k, i, f))| CategoryRow {
                category: c.to_string(),
                samples: k,
                iou: i / k as f64,
                fscore: f / k as f64,
            })
            .collect(),
        overall: CategoryRow {
            category: "Overall".into(),
            samples: n,
            iou: iou_sum / n as f64,
            fscore: f_sum / n as f64,
        },
    })
}

/// Runs the model in evaluation mode over `samples` (category, frames, label).
pub fn evaluate(
    model: &mut E2VModel<f32>,
    samples: &[(&str, &FrameStack, &VoxelGrid)],
    t: f64,
    d: f64,
    batch_size: usize,
) -> Result<Report, TrainError> {
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let frames: Vec<&FrameStack> = chunk.iter().map(|s| s.1).collect();
        let p = model.predict(&frames_to_tensor(&frames)?, Mode::Eval)?;
        preds.extend(tensor_to_probs(&p)?);
    }
    let labels: Vec<(&str, &VoxelGrid)> = samples.iter().map(|s| (s.0, s.2)).collect();
    evaluate_predictions(&preds, &labels, t, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(cells: &[(usize, usize, usize)]) -> VoxelGrid {
        let mut g = VoxelGrid::empty(4);
        for &(i, j, k) in cells {
            g.set(i, j, k, true);
        }
        g
    }

    #[test]
    fn perfect_predictions_score_one() {
        let a = grid(&[(0, 0, 0), (1, 2, 3)]);
        let b = grid(&[(3, 3, 3)]);
        let preds = vec![ProbGrid::from_voxels(&a), ProbGrid::from_voxels(&b)];
        let r = evaluate_predictions(&preds, &[("chair", &a), ("lamp", &b)], 0.3, 0.2).unwrap();
        assert!(r.categories.iter().chain([&r.overall]).all(|c| c.iou == 1.0 && c.fscore == 1.0));
    }

    #[test]
    fn means_match_hand_metrics() {
        let gt1 = grid(&[(0, 0, 0), (0, 0, 1)]);
        let gt2 = grid(&[(2, 2, 2)]);
        let p1 = ProbGrid::from_voxels(&grid(&[(0, 0, 0)]));
        let p2 = ProbGrid::from_voxels(&grid(&[(2, 2, 2), (3, 3, 3)]));
        let gt3 = grid(&[(1, 1, 1)]);
        let p3 = ProbGrid::from_voxels(&gt3);
        let r = evaluate_predictions(&[p1, p2, p3], &[("a", &gt1), ("a", &gt2), ("b", &gt3)], 0.3, 0.2).unwrap();
        // IoU: 1/2 and 1/2 in "a", 1 in "b"
        assert_eq!(r.categories[0].iou, 0.5);
        assert_eq!(r.categories[1].iou, 1.0);
        assert!((r.overall.iou - 2.0 / 3.0).abs() < 1e-15);
        // F with d = 0.2 on a 4^3 grid (spacing 0.25): only exact matches count
        // sample 1: P = 1, R = 1/2 -> 2/3; sample 2: P = 1/2, R = 1 -> 2/3
        assert!((r.categories[0].fscore - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.overall.samples, 3);
        assert!(r.to_table().contains("t = 0.3"));
        assert_eq!(r.to_csv().lines().count(), 4);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(evaluate_predictions(&[], &[], 0.3, 0.2), Err(TrainError::EmptyDataset)));
    }
}
