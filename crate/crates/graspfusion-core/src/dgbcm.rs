//! Box-coordinate matching: pick one grasp for a named object category.
//!
//! Detections are indexed by label; grasp candidates whose centers fall
//! inside any box of the requested label form the match pool; the
//! highest-quality pool member wins and everything else is discarded.
//! Ties are broken by the candidate ranking order of
//! [`GraspPose::rank_cmp`], which makes the selection independent of
//! candidate and box ordering.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::grasp::GraspPose;

#[derive(Debug, Clone, PartialEq)]
pub enum DgbcmError {
    /// The requested label has no detections at all.
    LabelNotFound { label: String },
    /// The label exists but no candidate center lies inside any of its
    /// boxes; the caller can re-query or fall back.
    NoGraspInBox { label: String },
    /// A box failed validation; the index refers to the input order.
    MalformedBox { index: usize, reason: &'static str },
}

impl fmt::Display for DgbcmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DgbcmError::LabelNotFound { label } => write!(f, "label not found: {label}"),
            DgbcmError::NoGraspInBox { label } => {
                write!(
                    f,
                    "no grasp candidate center inside any box of label: {label}"
                )
            }
            DgbcmError::MalformedBox { index, reason } => {
                write!(f, "malformed detection box at index {index}: {reason}")
            }
        }
    }
}

impl core::error::Error for DgbcmError {}

/// Axis-aligned detection: category label, confidence, and the top-left /
/// bottom-right corners in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionBox {
    pub label: String,
    pub score: f64,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl DetectionBox {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.label.is_empty() {
            return Err("empty label");
        }
        if !self.score.is_finite() || !(0.0..=1.0).contains(&self.score) {
            return Err("score outside [0, 1]");
        }
        if [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .any(|v| !v.is_finite())
        {
            return Err("non-finite coordinate");
        }
        if self.x1 > self.x2 {
            return Err("x1 > x2");
        }
        if self.y1 > self.y2 {
            return Err("y1 > y2");
        }
        Ok(())
    }
}

/// Boundary-inclusive point-in-box test.
pub fn point_in_box(x: f64, y: f64, b: &DetectionBox) -> bool {
    b.x1 <= x && x <= b.x2 && b.y1 <= y && y <= b.y2
}

/// Detections grouped by label; labels compare case-sensitively and keep
/// first-seen order, boxes keep insertion order within their label.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionSet {
    groups: Vec<(String, Vec<DetectionBox>)>,
}

impl DetectionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append one validated box to its label group.
    pub fn insert(&mut self, b: DetectionBox) -> Result<(), DgbcmError> {
        b.validate().map_err(|reason| DgbcmError::MalformedBox {
            index: self.len(),
            reason,
        })?;
        match self.groups.iter_mut().find(|(label, _)| *label == b.label) {
            Some((_, boxes)) => boxes.push(b),
            None => self.groups.push((b.label.clone(), alloc::vec![b])),
        }
        Ok(())
    }

    pub fn get(&self, label: &str) -> Option<&[DetectionBox]> {
        self.groups
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, boxes)| boxes.as_slice())
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.groups.iter().map(|(l, _)| l.as_str())
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(|(_, b)| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Group raw boxes by label, preserving input order. A malformed box
/// rejects the whole input, naming the offending index.
pub fn index_detections(boxes: &[DetectionBox]) -> Result<DetectionSet, DgbcmError> {
    let mut set = DetectionSet::new();
    for (index, b) in boxes.iter().enumerate() {
        b.validate()
            .map_err(|reason| DgbcmError::MalformedBox { index, reason })?;
        set.insert(b.clone())?;
    }
    Ok(set)
}

/// Outcome of [`dgbcm_select`].
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// The winning grasp: maximum quality over the in-box pool.
    pub selected: GraspPose,
    /// The first box (in insertion order) of the target label containing
    /// the winner's center.
    pub matched_box: DetectionBox,
    /// Total candidates tested against the target's boxes.
    pub candidates_considered: usize,
    /// In-box candidates that lost to the winner.
    pub discarded: usize,
    /// Best in-box candidate per box of the target label, in insertion
    /// order; None for boxes containing no candidate center.
    pub instance_best: Vec<Option<GraspPose>>,
}

/// Select the single best grasp for `target_label`: filter candidates to
/// those whose centers lie inside any of the label's boxes, then take the
/// quality maximum (ranking ties resolved by [`GraspPose::rank_cmp`]).
pub fn dgbcm_select(
    detections: &DetectionSet,
    candidates: &[GraspPose],
    target_label: &str,
) -> Result<MatchResult, DgbcmError> {
    let boxes = detections
        .get(target_label)
        .ok_or_else(|| DgbcmError::LabelNotFound {
            label: String::from(target_label),
        })?;

    let mut pool: Vec<&GraspPose> = Vec::new();
    let mut instance_best: Vec<Option<GraspPose>> = alloc::vec![None; boxes.len()];
    for pose in candidates {
        let mut inside_any = false;
        for (bi, b) in boxes.iter().enumerate() {
            if point_in_box(pose.x, pose.y, b) {
                inside_any = true;
                let better = match &instance_best[bi] {
                    Some(cur) => GraspPose::rank_cmp(pose, cur).is_lt(),
                    None => true,
                };
                if better {
                    instance_best[bi] = Some(*pose);
                }
            }
        }
        if inside_any {
            pool.push(pose);
        }
    }

    if pool.is_empty() {
        return Err(DgbcmError::NoGraspInBox {
            label: String::from(target_label),
        });
    }
    let selected = **pool
        .iter()
        .min_by(|a, b| GraspPose::rank_cmp(a, b))
        .expect("non-empty pool");
    let matched_box = boxes
        .iter()
        .find(|b| point_in_box(selected.x, selected.y, b))
        .expect("winner came from some box")
        .clone();

    Ok(MatchResult {
        selected,
        matched_box,
        candidates_considered: candidates.len(),
        discarded: pool.len() - 1,
        instance_best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn boxed(label: &str, x1: f64, y1: f64, x2: f64, y2: f64) -> DetectionBox {
        DetectionBox {
            label: label.to_string(),
            score: 0.9,
            x1,
            y1,
            x2,
            y2,
        }
    }

    fn pose(x: f64, y: f64, q: f64) -> GraspPose {
        GraspPose::new(x, y, 0.1, 10.0, q).unwrap()
    }

    #[test]
    fn index_empty_list() {
        let set = index_detections(&[]).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn index_groups_by_label_in_order() {
        let boxes = vec![
            boxed("cup", 0.0, 0.0, 10.0, 10.0),
            boxed("apple", 20.0, 20.0, 30.0, 30.0),
            boxed("cup", 40.0, 0.0, 50.0, 10.0),
        ];
        let set = index_detections(&boxes).unwrap();
        assert_eq!(set.labels().collect::<Vec<_>>(), vec!["cup", "apple"]);
        assert_eq!(set.get("cup").unwrap().len(), 2);
        assert_eq!(set.get("apple").unwrap().len(), 1);
        assert_eq!(set.get("cup").unwrap()[1].x1, 40.0);
        // case-sensitive lookup
        assert!(set.get("Cup").is_none());
    }

    #[test]
    fn index_keeps_duplicates() {
        let b = boxed("cup", 0.0, 0.0, 10.0, 10.0);
        let set = index_detections(&[b.clone(), b.clone()]).unwrap();
        assert_eq!(set.get("cup").unwrap().len(), 2);
    }

    #[test]
    fn index_rejects_malformed_with_index() {
        let boxes = vec![
            boxed("cup", 0.0, 0.0, 10.0, 10.0),
            boxed("cup", 5.0, 0.0, 4.0, 10.0),
        ];
        let err = index_detections(&boxes).unwrap_err();
        assert_eq!(
            err,
            DgbcmError::MalformedBox {
                index: 1,
                reason: "x1 > x2"
            }
        );
    }

    #[test]
    fn point_in_box_boundaries() {
        let b = boxed("cup", 1.0, 2.0, 5.0, 6.0);
        assert!(point_in_box(3.0, 4.0, &b));
        assert!(point_in_box(1.0, 4.0, &b)); // on edge x = x1
        assert!(point_in_box(5.0, 6.0, &b)); // corner
        assert!(!point_in_box(0.0, 4.0, &b)); // one pixel outside
        assert!(!point_in_box(3.0, 7.0, &b));
    }

    #[test]
    fn select_singleton() {
        let set = index_detections(&[boxed("cup", 0.0, 0.0, 10.0, 10.0)]).unwrap();
        let cand = [pose(5.0, 5.0, 0.4)];
        let res = dgbcm_select(&set, &cand, "cup").unwrap();
        assert_eq!(res.selected, cand[0]);
        assert_eq!(res.candidates_considered, 1);
        assert_eq!(res.discarded, 0);
        assert_eq!(res.instance_best, vec![Some(cand[0])]);
    }

    #[test]
    fn select_ignores_higher_quality_outside() {
        let set = index_detections(&[boxed("cup", 0.0, 0.0, 10.0, 10.0)]).unwrap();
        let cands = [
            pose(5.0, 5.0, 0.9),
            pose(6.0, 6.0, 0.7),
            pose(50.0, 50.0, 0.95),
        ];
        let res = dgbcm_select(&set, &cands, "cup").unwrap();
        assert_eq!(res.selected.quality, 0.9);
        assert_eq!(res.discarded, 1);
        assert_eq!(res.candidates_considered, 3);
    }

    #[test]
    fn select_competes_across_instances() {
        let set = index_detections(&[
            boxed("cup", 0.0, 0.0, 10.0, 10.0),
            boxed("cup", 20.0, 0.0, 30.0, 10.0),
        ])
        .unwrap();
        let cands = [pose(5.0, 5.0, 0.6), pose(25.0, 5.0, 0.8)];
        let res = dgbcm_select(&set, &cands, "cup").unwrap();
        assert_eq!(res.selected.quality, 0.8);
        assert_eq!(res.matched_box.x1, 20.0);
        assert_eq!(res.instance_best, vec![Some(cands[0]), Some(cands[1])]);
    }

    #[test]
    fn select_reports_label_not_found() {
        let set = index_detections(&[boxed("cup", 0.0, 0.0, 10.0, 10.0)]).unwrap();
        let err = dgbcm_select(&set, &[pose(5.0, 5.0, 0.5)], "pear").unwrap_err();
        assert_eq!(
            err,
            DgbcmError::LabelNotFound {
                label: "pear".to_string()
            }
        );
    }

    #[test]
    fn select_reports_no_grasp_in_box() {
        let set = index_detections(&[boxed("cup", 0.0, 0.0, 10.0, 10.0)]).unwrap();
        let err = dgbcm_select(&set, &[pose(50.0, 50.0, 0.5)], "cup").unwrap_err();
        assert_eq!(
            err,
            DgbcmError::NoGraspInBox {
                label: "cup".to_string()
            }
        );
    }

    #[test]
    fn select_breaks_quality_ties_by_lower_y_then_x() {
        let set = index_detections(&[boxed("cup", 0.0, 0.0, 10.0, 10.0)]).unwrap();
        let cands = [
            pose(7.0, 3.0, 0.5),
            pose(2.0, 3.0, 0.5),
            pose(2.0, 8.0, 0.5),
        ];
        let res = dgbcm_select(&set, &cands, "cup").unwrap();
        assert_eq!((res.selected.x, res.selected.y), (2.0, 3.0));
    }

    #[test]
    fn selected_center_inside_matched_box() {
        let set = index_detections(&[
            boxed("cup", 0.0, 0.0, 4.0, 4.0),
            boxed("cup", 3.0, 3.0, 10.0, 10.0),
        ])
        .unwrap();
        // center inside both boxes: matched_box is the first in insertion order
        let res = dgbcm_select(&set, &[pose(3.5, 3.5, 0.9)], "cup").unwrap();
        assert!(point_in_box(
            res.selected.x,
            res.selected.y,
            &res.matched_box
        ));
        assert_eq!(res.matched_box.x1, 0.0);
    }
}
