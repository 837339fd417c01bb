//! Cornell-style positive-rectangle annotation files.
//!
//! The format is four lines per rectangle, each line a whitespace-separated
//! `x y` vertex pair. Real files contain NaN vertices; a block with any NaN
//! is skipped whole (and counted) so no half-broken rectangle survives.
//! The grasp angle of a rectangle is the direction of its first edge
//! (vertex 0 → vertex 1) wrapped into [−π/2, π/2).

use graspfusion_core::frames::wrap_half_turn;
use graspfusion_core::grasp::{GroundTruthRect, RotatedRect};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CornellError {
    #[error("line {line}: expected two coordinates, found {found} tokens")]
    TokenCount { line: usize, found: usize },
    #[error("line {line}: non-numeric token {token:?}")]
    NonNumeric { line: usize, token: String },
    #[error("line {line}: non-finite coordinate (only NaN markers are allowed)")]
    NonFinite { line: usize },
    #[error("line {line}: dangling block — line count is not a multiple of 4")]
    IncompleteBlock { line: usize },
    #[error("block starting at line {line}: vertices do not form a convex rectangle")]
    BadRectangle { line: usize },
}

/// One parsed rectangle with its raw vertices and source line span.
#[derive(Debug, Clone, PartialEq)]
pub struct CornellRect {
    /// Vertices exactly as written in the file.
    pub corners: [[f64; 2]; 4],
    /// Validated counter-clockwise rectangle (re-oriented if the file is
    /// clockwise).
    pub rect: RotatedRect,
    /// Direction of the first edge in [−π/2, π/2).
    pub angle: f64,
    /// First and last source line (1-based, inclusive).
    pub lines: (usize, usize),
}

/// A block skipped because it contained NaN vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkippedBlock {
    /// First source line of the block (1-based).
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CornellRects {
    pub rects: Vec<CornellRect>,
    pub skipped: Vec<SkippedBlock>,
}

impl CornellRects {
    pub fn ground_truths(&self) -> Vec<GroundTruthRect> {
        self.rects
            .iter()
            .map(|r| GroundTruthRect {
                rect: r.rect,
                angle: r.angle,
            })
            .collect()
    }

    /// Re-serialize the surviving rectangles in the source format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rects {
            for corner in &r.corners {
                out.push_str(&format!("{} {}\n", corner[0], corner[1]));
            }
        }
        out
    }
}

fn parse_line(line_no: usize, line: &str) -> Result<[f64; 2], CornellError> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != 2 {
        return Err(CornellError::TokenCount {
            line: line_no,
            found: tokens.len(),
        });
    }
    let mut out = [0.0; 2];
    for (slot, token) in out.iter_mut().zip(&tokens) {
        let v: f64 = token.parse().map_err(|_| CornellError::NonNumeric {
            line: line_no,
            token: (*token).to_string(),
        })?;
        if v.is_infinite() {
            return Err(CornellError::NonFinite { line: line_no });
        }
        *slot = v;
    }
    Ok(out)
}

fn signed_area(corners: &[[f64; 2]; 4]) -> f64 {
    let mut acc = 0.0;
    for i in 0..4 {
        let [x0, y0] = corners[i];
        let [x1, y1] = corners[(i + 1) % 4];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

/// Parse a whole annotation file. Blank lines are ignored; every other
/// line must be a vertex pair; vertex lines group into blocks of four.
pub fn parse_cornell_rects(text: &str) -> Result<CornellRects, CornellError> {
    let mut vertices: Vec<(usize, [f64; 2])> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        vertices.push((line_no, parse_line(line_no, raw)?));
    }
    if !vertices.len().is_multiple_of(4) {
        let dangling_start = vertices[vertices.len() - vertices.len() % 4].0;
        return Err(CornellError::IncompleteBlock {
            line: dangling_start,
        });
    }

    let mut rects = Vec::new();
    let mut skipped = Vec::new();
    for block in vertices.chunks_exact(4) {
        let first_line = block[0].0;
        let last_line = block[3].0;
        let corners = [block[0].1, block[1].1, block[2].1, block[3].1];
        if corners.iter().flatten().any(|v| v.is_nan()) {
            skipped.push(SkippedBlock { line: first_line });
            continue;
        }
        let angle =
            wrap_half_turn((corners[1][1] - corners[0][1]).atan2(corners[1][0] - corners[0][0]));
        let oriented = if signed_area(&corners) < 0.0 {
            [corners[0], corners[3], corners[2], corners[1]]
        } else {
            corners
        };
        let rect = RotatedRect::from_corners(oriented)
            .map_err(|_| CornellError::BadRectangle { line: first_line })?;
        rects.push(CornellRect {
            corners,
            rect,
            angle,
            lines: (first_line, last_line),
        });
    }
    Ok(CornellRects { rects, skipped })
}
