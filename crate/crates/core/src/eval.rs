//! Pixel-level AUROC and average precision against box annotations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive pixel box `(xmin, ymin, xmax, ymax)`.
pub type PixelBox = (usize, usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub image_id: String,
    pub boxes: Vec<PixelBox>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelLabels {
    pub height: usize,
    pub width: usize,
    /// Row-major, `true` for positive pixels.
    pub mask: Vec<bool>,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl PixelLabels {
    pub fn from_mask(height: usize, width: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != height * width {
            return Err(Error::Config(format!("label mask has {} entries, expected {height}x{width}", mask.len())));
        }
        let n_pos = mask.iter().filter(|&&m| m).count();
        Ok(PixelLabels { height, width, n_neg: mask.len() - n_pos, mask, n_pos })
    }

    /// The same pixels with the classes exchanged.
    pub fn swapped(&self) -> Self {
        PixelLabels {
            height: self.height,
            width: self.width,
            mask: self.mask.iter().map(|m| !m).collect(),
            n_pos: self.n_neg,
            n_neg: self.n_pos,
        }
    }
}

/// Marks every pixel inside or on the border of any box as positive.
pub fn boxes_to_labels(annotation: &BoxAnnotation, (height, width): (usize, usize)) -> Result<PixelLabels> {
    let mut mask = vec![false; height * width];
    for &(x0, y0, x1, y1) in &annotation.boxes {
        if x0 > x1 || y0 > y1 || x1 >= width || y1 >= height {
            return Err(Error::Annotation(format!(
                "box ({x0},{y0},{x1},{y1}) of image '{}' is invalid for a {height}x{width} image",
                annotation.image_id
            )));
        }
        for y in y0..=y1 {
            mask[y * width + x0..=y * width + x1].fill(true);
        }
    }
    PixelLabels::from_mask(height, width, mask)
}

fn check_len(scores: &[f64], labels: &PixelLabels) -> Result<()> {
    if scores.len() != labels.mask.len() {
        return Err(Error::Config(format!(
            "heatmap has {} pixels but labels have {}",
            scores.len(),
            labels.mask.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Config(format!("heatmap pixel {i} is NaN")));
    }
    Ok(())
}

/// Indices ordered by score ascending.
fn order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// Mann–Whitney statistic with mid-ranks for ties.
pub fn pixel_auc(scores: &[f64], labels: &PixelLabels) -> Result<f64> {
    check_len(scores, labels)?;
    if labels.n_pos == 0 || labels.n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes (positives {}, negatives {})",
            labels.n_pos, labels.n_neg
        )));
    }
    let idx = order(scores);
    // Doubled rank sum stays integral: a tie block over ranks i+1..=j has
    // mid-rank (i+1+j)/2.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let pos = idx[i..j].iter().filter(|&&k| labels.mask[k]).count() as u128;
        rank_sum2 += pos * (i as u128 + 1 + j as u128);
        i = j;
    }
    let (np, nn) = (labels.n_pos as u128, labels.n_neg as u128);
    // 2·U = 2·R⁺ − n⁺(n⁺+1)
    let u2 = rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / (2.0 * (np * nn) as f64))
}

/// Step-wise AP over descending score, one step per tie block.
pub fn average_precision(scores: &[f64], labels: &PixelLabels) -> Result<f64> {
    check_len(scores, labels)?;
    if labels.n_pos == 0 {
        return Err(Error::UndefinedMetric("AP needs at least one positive pixel".into()));
    }
    let mut idx = order(scores);
    idx.reverse();
    let total = labels.n_pos as f64;
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let block_tp = idx[i..j].iter().filter(|&&k| labels.mask[k]).count();
        tp += block_tp;
        seen += j - i;
        if block_tp > 0 {
            ap += (block_tp as f64 / total) * (tp as f64 / seen as f64);
        }
        i = j;
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub auc: f64,
    pub ap: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub images: Vec<ImageMetrics>,
    pub mean_auc: f64,
    pub mean_ap: f64,
}

/// A full-resolution heatmap to be evaluated.
#[derive(Debug, Clone)]
pub struct ScoredImage {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub scores: Vec<f64>,
}

/// Per-image metrics in id order plus unweighted means.
pub fn dataset_eval(heatmaps: &[ScoredImage], annotations: &[BoxAnnotation]) -> Result<DatasetMetrics> {
    let ann: BTreeMap<&str, &BoxAnnotation> = annotations.iter().map(|a| (a.image_id.as_str(), a)).collect();
    let ids: BTreeSet<&str> = heatmaps.iter().map(|h| h.id.as_str()).collect();
    let mut unmatched: Vec<&str> = ids.iter().filter(|id| !ann.contains_key(*id)).copied().collect();
    unmatched.extend(ann.keys().filter(|id| !ids.contains(*id)));
    if !unmatched.is_empty() {
        unmatched.sort_unstable();
        return Err(Error::Usage(format!("unmatched image ids: {}", unmatched.join(", "))));
    }
    if heatmaps.is_empty() {
        return Err(Error::Usage("no heatmaps to evaluate".into()));
    }
    if ids.len() != heatmaps.len() {
        return Err(Error::Usage("duplicate heatmap ids".into()));
    }
    let mut images = heatmaps
        .par_iter()
        .map(|h| {
            let labels = boxes_to_labels(ann[h.id.as_str()], (h.height, h.width))?;
            Ok(ImageMetrics {
                id: h.id.clone(),
                auc: pixel_auc(&h.scores, &labels)?,
                ap: average_precision(&h.scores, &labels)?,
                n_pos: labels.n_pos,
                n_neg: labels.n_neg,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    images.sort_by(|a, b| a.id.cmp(&b.id));
    let n = images.len() as f64;
    Ok(DatasetMetrics {
        mean_auc: images.iter().map(|m| m.auc).sum::<f64>() / n,
        mean_ap: images.iter().map(|m| m.ap).sum::<f64>() / n,
        images,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct BoxRow {
    image: String,
    xmin: usize,
    ymin: usize,
    xmax: usize,
    ymax: usize,
}

/// Reads `image,xmin,ymin,xmax,ymax` rows, grouping boxes by image in order
/// of first appearance.
pub fn read_boxes_csv(path: &Path) -> Result<Vec<BoxAnnotation>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    for col in ["image", "xmin", "ymin", "xmax", "ymax"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::format(path, format!("missing column '{col}'")));
        }
    }
    let mut out: Vec<BoxAnnotation> = Vec::new();
    let mut slot: BTreeMap<String, usize> = BTreeMap::new();
    for row in rdr.deserialize::<BoxRow>() {
        let r = row.map_err(|e| Error::format(path, e.to_string()))?;
        let b = (r.xmin, r.ymin, r.xmax, r.ymax);
        match slot.get(&r.image) {
            Some(&i) => out[i].boxes.push(b),
            None => {
                slot.insert(r.image.clone(), out.len());
                out.push(BoxAnnotation { image_id: r.image, boxes: vec![b] });
            }
        }
    }
    Ok(out)
}

pub fn write_boxes_csv(path: &Path, annotations: &[BoxAnnotation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut wrote_any = false;
    for a in annotations {
        for &(xmin, ymin, xmax, ymax) in &a.boxes {
            w.serialize(BoxRow { image: a.image_id.clone(), xmin, ymin, xmax, ymax })
                .map_err(|e| Error::format(path, e.to_string()))?;
            wrote_any = true;
        }
    }
    if !wrote_any {
        w.write_record(["image", "xmin", "ymin", "xmax", "ymax"]).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(bits: &[u8]) -> PixelLabels {
        PixelLabels::from_mask(1, bits.len(), bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn inclusive_boxes() {
        let a = BoxAnnotation { image_id: "a".into(), boxes: vec![(0, 0, 1, 1)] };
        let l = boxes_to_labels(&a, (4, 4)).unwrap();
        assert_eq!((l.n_pos, l.n_neg), (4, 12));
        let b = BoxAnnotation { image_id: "b".into(), boxes: vec![(0, 0, 2, 2), (1, 1, 3, 3)] };
        assert_eq!(boxes_to_labels(&b, (4, 4)).unwrap().n_pos, 9 + 9 - 4);
        let whole = BoxAnnotation { image_id: "c".into(), boxes: vec![(0, 0, 3, 3)] };
        let l = boxes_to_labels(&whole, (4, 4)).unwrap();
        assert_eq!(l.n_neg, 0);
        assert!(matches!(pixel_auc(&[0.0; 16], &l), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn out_of_bounds_box_is_named() {
        let a = BoxAnnotation { image_id: "img7".into(), boxes: vec![(2, 2, 4, 3)] };
        match boxes_to_labels(&a, (4, 4)) {
            Err(Error::Annotation(m)) => assert!(m.contains("(2,2,4,3)") && m.contains("img7")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn auc_examples() {
        let l = labels(&[0, 1, 1, 0]);
        assert_eq!(pixel_auc(&[0.1, 0.9, 0.4, 0.8], &l).unwrap(), 0.75);
        assert_eq!(pixel_auc(&[0.0, 1.0, 1.0, 0.0], &l).unwrap(), 1.0);
        assert_eq!(pixel_auc(&[3.0; 4], &l).unwrap(), 0.5);
    }

    #[test]
    fn ap_examples() {
        let l = labels(&[0, 1, 1, 0]);
        assert_eq!(average_precision(&[0.0, 1.0, 1.0, 0.0], &l).unwrap(), 1.0);
        let l = labels(&[0, 1, 0, 0, 0]);
        assert!((average_precision(&[0.2; 5], &l).unwrap() - 0.2).abs() < 1e-15);
        // ranking 0.9(+) 0.8(-) 0.4(+) 0.1(-): 0.5·1 + 0.5·(2/3)
        let l = labels(&[0, 1, 1, 0]);
        let ap = average_precision(&[0.1, 0.9, 0.4, 0.8], &l).unwrap();
        assert!((ap - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
        assert!(average_precision(&[0.1; 4], &labels(&[0, 0, 0, 0])).is_err());
    }

    #[test]
    fn dataset_means_and_pairing() {
        let a = |id: &str| BoxAnnotation { image_id: id.into(), boxes: vec![(0, 0, 0, 0)] };
        let h = |id: &str, s: Vec<f64>| ScoredImage { id: id.into(), height: 2, width: 2, scores: s };
        let one = dataset_eval(&[h("x", vec![1.0, 0.0, 0.5, 0.2])], &[a("x")]).unwrap();
        assert_eq!(one.mean_auc, one.images[0].auc);
        assert_eq!(one.mean_ap, one.images[0].ap);
        let err = dataset_eval(&[h("x", vec![0.0; 4]), h("y", vec![0.0; 4])], &[a("x"), a("z")]).unwrap_err();
        match err {
            Error::Usage(m) => assert!(m.contains("y") && m.contains("z")),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("boxes.csv");
        let anns = vec![
            BoxAnnotation { image_id: "test_0000".into(), boxes: vec![(1, 2, 3, 4), (5, 6, 7, 8)] },
            BoxAnnotation { image_id: "test_0001".into(), boxes: vec![(0, 0, 9, 9)] },
        ];
        write_boxes_csv(&p, &anns).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("image,xmin,ymin,xmax,ymax\n"));
        assert_eq!(read_boxes_csv(&p).unwrap(), anns);
    }
}
