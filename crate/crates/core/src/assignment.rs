//! One-to-one label assignment between 2D predictions and ground truths.
//!
//! Matching costs combine a classification term, an L1 distance on
//! image-normalized `(cx, cy, w, h)` and a GIoU term. The solver is the
//! O(n²m) shortest-augmenting-path Hungarian method; among optimal
//! assignments it returns the lexicographically smallest one (rows listed
//! column by column).

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::sampling::Box2D;

/// Generalized IoU of `a` and `b` with its gradient with respect to
/// `a = (x_min, y_min, x_max, y_max)`.
///
/// At coordinates where two edges coincide the gradient picks one side.
pub fn giou_2d(a: &Box2D, b: &Box2D) -> Result<(f64, [f64; 4])> {
    a.validate()?;
    b.validate()?;
    let (aw, ah) = (a.width(), a.height());
    let area_a = aw * ah;
    let area_b = b.area();

    let ix1 = a.x_min.max(b.x_min);
    let iy1 = a.y_min.max(b.y_min);
    let ix2 = a.x_max.min(b.x_max);
    let iy2 = a.y_max.min(b.y_max);
    let iw = (ix2 - ix1).max(0.0);
    let ih = (iy2 - iy1).max(0.0);
    let inter = iw * ih;
    let union = area_a + area_b - inter;

    let cw = a.x_max.max(b.x_max) - a.x_min.min(b.x_min);
    let ch = a.y_max.max(b.y_max) - a.y_min.min(b.y_min);
    let hull = cw * ch;

    let giou = inter / union - (hull - union) / hull;

    let d_area = [-ah, -aw, ah, aw];

    let overlapping = iw > 0.0 && ih > 0.0;
    let d_iw = if overlapping {
        [
            if a.x_min > b.x_min { -1.0 } else { 0.0 },
            0.0,
            if a.x_max < b.x_max { 1.0 } else { 0.0 },
            0.0,
        ]
    } else {
        [0.0; 4]
    };
    let d_ih = if overlapping {
        [
            0.0,
            if a.y_min > b.y_min { -1.0 } else { 0.0 },
            0.0,
            if a.y_max < b.y_max { 1.0 } else { 0.0 },
        ]
    } else {
        [0.0; 4]
    };
    let d_cw = [
        if a.x_min < b.x_min { -1.0 } else { 0.0 },
        0.0,
        if a.x_max > b.x_max { 1.0 } else { 0.0 },
        0.0,
    ];
    let d_ch = [
        0.0,
        if a.y_min < b.y_min { -1.0 } else { 0.0 },
        0.0,
        if a.y_max > b.y_max { 1.0 } else { 0.0 },
    ];

    let mut grad = [0.0; 4];
    for k in 0..4 {
        let d_inter = d_iw[k] * ih + iw * d_ih[k];
        let d_union = d_area[k] - d_inter;
        let d_hull = d_cw[k] * ch + cw * d_ch[k];
        // giou = I/U - 1 + U/C
        grad[k] = (d_inter * union - inter * d_union) / (union * union)
            + (d_union * hull - union * d_hull) / (hull * hull);
    }
    Ok((giou, grad))
}

/// Cost entries, rows = predictions, columns = ground truths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            "cost data length {} does not match {rows}x{cols}",
            data.len()
        );
        ensure!(
            data.iter().all(|c| c.is_finite()),
            "cost entries must be finite"
        );
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        ensure!(rows.iter().all(|r| r.len() == cols), "ragged cost rows");
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Total of the given `(row, col)` pairs, summed in column order.
    pub fn total(&self, row_of_col: &[usize]) -> f64 {
        row_of_col
            .iter()
            .enumerate()
            .map(|(c, &r)| self.get(r, c))
            .sum()
    }
}

/// Weights of the three matching cost terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchWeights {
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self {
            cls: 2.0,
            l1: 5.0,
            giou: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction2D {
    pub bbox: Box2D,
    /// Per-class probabilities.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth2D {
    pub bbox: Box2D,
    pub label: usize,
}

/// `cost(i, j) = -w_cls·score_i[label_j] + w_l1·‖b_i - b_j‖₁ + w_giou·(1 - GIoU)`,
/// with the L1 term on `(cx, cy, w, h)` divided by the image size.
pub fn build_cost_matrix(
    preds: &[Prediction2D],
    gts: &[GroundTruth2D],
    weights: MatchWeights,
    image_px: (f64, f64),
) -> Result<CostMatrix> {
    ensure!(!gts.is_empty(), "cost matrix needs at least one ground truth");
    ensure!(
        image_px.0 > 0.0 && image_px.1 > 0.0,
        "image size must be positive"
    );
    let norm = [image_px.0, image_px.1, image_px.0, image_px.1];
    let mut data = Vec::with_capacity(preds.len() * gts.len());
    for p in preds {
        let pc = p.bbox.center_size();
        for g in gts {
            ensure!(
                g.label < p.scores.len(),
                "label {} outside the {} scored classes",
                g.label,
                p.scores.len()
            );
            let gc = g.bbox.center_size();
            let l1: f64 = (0..4).map(|k| ((pc[k] - gc[k]) / norm[k]).abs()).sum();
            let (giou, _) = giou_2d(&p.bbox, &g.bbox)?;
            data.push(-weights.cls * p.scores[g.label] + weights.l1 * l1 + weights.giou * (1.0 - giou));
        }
    }
    CostMatrix::new(preds.len(), gts.len(), data)
}

/// Matched `(row, col)` pairs, one per column, in column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
}

impl Assignment {
    pub fn row_of_col(&self) -> Vec<usize> {
        self.pairs.iter().map(|&(r, _)| r).collect()
    }
}

/// Minimum-cost assignment of every column to a distinct row.
pub fn match_hungarian(costs: &CostMatrix) -> Result<Assignment> {
    ensure!(
        costs.cols <= costs.rows,
        "more ground truths ({}) than predictions ({})",
        costs.cols,
        costs.rows
    );
    if costs.cols == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            total: 0.0,
        });
    }
    let all_rows: Vec<usize> = (0..costs.rows).collect();
    let all_cols: Vec<usize> = (0..costs.cols).collect();
    let (_, optimum) = solve(costs, &all_cols, &all_rows);
    let tol = 1e-9 * (1.0 + optimum.abs());

    // Fix columns in order, each to the smallest row that keeps the optimum.
    let mut row_of_col = Vec::with_capacity(costs.cols);
    let mut free_rows = all_rows;
    let mut fixed_cost = 0.0;
    for c in 0..costs.cols {
        let rest: Vec<usize> = (c + 1..costs.cols).collect();
        let mut chosen = None;
        for (pos, &r) in free_rows.iter().enumerate() {
            let mut remaining = free_rows.clone();
            remaining.remove(pos);
            let head = fixed_cost + costs.get(r, c);
            let (_, tail) = solve(costs, &rest, &remaining);
            if head + tail <= optimum + tol {
                chosen = Some((pos, r));
                break;
            }
        }
        let (pos, r) = chosen.expect("some row always extends an optimal partial assignment");
        free_rows.remove(pos);
        fixed_cost += costs.get(r, c);
        row_of_col.push(r);
    }
    Ok(Assignment {
        total: costs.total(&row_of_col),
        pairs: row_of_col.iter().enumerate().map(|(c, &r)| (r, c)).collect(),
    })
}

/// Hungarian solve on the sub-matrix `cols × rows` (each listed column
/// gets a distinct listed row). Returns the row per listed column and the cost.
fn solve(costs: &CostMatrix, cols: &[usize], rows: &[usize]) -> (Vec<usize>, f64) {
    let n = cols.len();
    let m = rows.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    debug_assert!(n <= m);
    let a = |i: usize, j: usize| costs.get(rows[j - 1], cols[i - 1]);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_of = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_of[p[j] - 1] = rows[j - 1];
        }
    }
    let total = row_of
        .iter()
        .zip(cols)
        .map(|(&r, &c)| costs.get(r, c))
        .sum();
    (row_of, total)
}

/// Exhaustive search over injective column→row maps; the first strict
/// minimum in lexicographic order wins. Only for small matrices.
pub fn brute_force_assignment(costs: &CostMatrix) -> Result<Assignment> {
    ensure!(
        costs.cols <= costs.rows,
        "more ground truths ({}) than predictions ({})",
        costs.cols,
        costs.rows
    );
    ensure!(costs.rows <= 10, "brute force limited to 10 rows");
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut current = Vec::with_capacity(costs.cols);
    let mut used = vec![false; costs.rows];
    enumerate(costs, &mut current, &mut used, &mut best);
    let (total, row_of_col) = best.unwrap_or((0.0, Vec::new()));
    Ok(Assignment {
        total,
        pairs: row_of_col.iter().enumerate().map(|(c, &r)| (r, c)).collect(),
    })
}

fn enumerate(
    costs: &CostMatrix,
    current: &mut Vec<usize>,
    used: &mut [bool],
    best: &mut Option<(f64, Vec<usize>)>,
) {
    if current.len() == costs.cols {
        let total = costs.total(current);
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            *best = Some((total, current.clone()));
        }
        return;
    }
    for r in 0..costs.rows {
        if used[r] {
            continue;
        }
        used[r] = true;
        current.push(r);
        enumerate(costs, current, used, best);
        current.pop();
        used[r] = false;
    }
}
