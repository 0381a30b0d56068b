//! Per-camera ground truth: projected boxes, token targets and the
//! matched-IoU quality targets.

use serde::{Deserialize, Serialize};

use super::scene::SyntheticScene;
use crate::assignment::{build_cost_matrix, match_hungarian, GroundTruth2D, MatchWeights, Prediction2D};
use crate::camera::{project_point, CameraModel, Projection};
use crate::error::{ensure, Result};
use crate::sampling::targets::{gaussian_value, token_of_pixel};
use crate::sampling::{
    center_offset_targets, gaussian_heatmap, heatmap_sigma, ltrb_targets, Box2D, HeatmapCenter, HeatmapConfig,
    TokenTargets,
};

/// Corners closer than this to the image plane make an object unusable
/// for the camera.
pub const MIN_CORNER_DEPTH_M: f64 = 0.1;

/// One object as seen by one camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedObject {
    /// Index into the scene's object list.
    pub object: usize,
    pub class_id: usize,
    /// Bounding rectangle of the projected corners, clipped to the image.
    pub bbox: Box2D,
    /// Projected 3D center when it lands on the image.
    pub center_px: Option<(f64, f64)>,
    pub center_depth_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraTruth {
    pub camera: usize,
    pub objects: Vec<ProjectedObject>,
    pub targets: TokenTargets,
    /// Oracle per-token predictions used for matching.
    #[serde(skip)]
    pub predictions: Vec<Prediction2D>,
    /// `(token, index into objects)` pairs from matching.
    pub matches: Vec<(usize, usize)>,
    /// Token holding each visible center, parallel to `objects`.
    pub center_tokens: Vec<Option<usize>>,
}

/// Projects one object; `None` when a corner is behind or too close to the
/// camera, or the box misses the image.
pub fn project_object(cam: &CameraModel, scene_index: usize, o: &super::scene::Object3D) -> Option<ProjectedObject> {
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for corner in o.corners() {
        match project_point(cam, &corner) {
            Projection::Visible { u, v, depth } if depth > MIN_CORNER_DEPTH_M => {
                lo = (lo.0.min(u), lo.1.min(v));
                hi = (hi.0.max(u), hi.1.max(v));
            }
            _ => return None,
        }
    }
    let (w, h) = (cam.width_px as f64, cam.height_px as f64);
    let bbox = Box2D::new(lo.0.max(0.0), lo.1.max(0.0), hi.0.min(w), hi.1.min(h)).ok()?;
    let (center_px, center_depth_m) = match project_point(cam, &o.center()) {
        Projection::Visible { u, v, depth } => (cam.pixel_on_image(u, v).then_some((u, v)), depth),
        Projection::BehindCamera => return None,
    };
    Some(ProjectedObject {
        object: scene_index,
        class_id: o.class_id,
        bbox,
        center_px,
        center_depth_m,
    })
}

/// Targets for every camera of the scene.
pub fn render_targets(scene: &SyntheticScene) -> Result<Vec<CameraTruth>> {
    scene
        .cameras
        .iter()
        .enumerate()
        .map(|(k, cam)| render_camera(scene, k, cam))
        .collect()
}

fn render_camera(scene: &SyntheticScene, camera: usize, cam: &CameraModel) -> Result<CameraTruth> {
    let cfg = &scene.config;
    let stride = cfg.stride;
    let s = stride as f64;
    let width = (cam.width_px / stride) as usize;
    let height = (cam.height_px / stride) as usize;
    let n = width * height;
    let diag = (cam.width_px as f64).hypot(cam.height_px as f64);
    let hm_cfg = HeatmapConfig::default();

    // Near objects first so that a shared center token goes to the nearer one.
    let mut objects: Vec<ProjectedObject> = scene
        .objects
        .iter()
        .enumerate()
        .filter_map(|(i, o)| project_object(cam, i, o))
        .collect();
    objects.sort_by(|a, b| a.center_depth_m.total_cmp(&b.center_depth_m).then(a.object.cmp(&b.object)));

    let mut t = TokenTargets::background(width, height);
    let pixel = |tok: usize| (((tok % width) as f64 + 0.5) * s, ((tok / width) as f64 + 0.5) * s);

    let center_tokens: Vec<Option<usize>> = objects
        .iter()
        .map(|o| {
            o.center_px
                .and_then(|c| token_of_pixel(c, stride, width, height))
                .map(|(col, row)| row * width + col)
        })
        .collect();

    // Side-distance ownership: smallest box containing the token center; a
    // token holding a visible center always belongs to that object.
    for tok in 0..n {
        let (u, v) = pixel(tok);
        let owner = center_tokens
            .iter()
            .position(|&c| c == Some(tok))
            .or_else(|| {
                objects
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| o.bbox.contains(u, v))
                    .min_by(|(_, a), (_, b)| a.bbox.area().total_cmp(&b.bbox.area()))
                    .map(|(j, _)| j)
            });
        if let Some(j) = owner {
            let o = &objects[j];
            t.class[tok] = Some(o.class_id);
            t.owner[tok] = Some(o.object);
            t.ltrb[tok] = ltrb_targets(&o.bbox, (u, v), diag).map(|x| x.max(0.0));
        }
    }

    let centers: Vec<HeatmapCenter> = objects
        .iter()
        .filter_map(|o| o.center_px.map(|c| HeatmapCenter { center_px: c, bbox: o.bbox }))
        .collect();
    t.heatmap = gaussian_heatmap(&centers, width, height, stride, &hm_cfg).values;

    for (o, tok) in objects.iter().zip(&center_tokens) {
        if let (Some(c), Some(tok)) = (o.center_px, tok) {
            if t.offset[*tok].is_none() {
                t.offset[*tok] = center_offset_targets(c, stride, width, height).map(|(_, d)| d);
            }
        }
    }

    // Per-object heatmaps drive the oracle predictions.
    let per_object: Vec<Vec<f64>> = objects
        .iter()
        .zip(&center_tokens)
        .map(|(o, tok)| match (o.center_px, tok) {
            (Some(c), Some(tok)) => {
                let delta = heatmap_sigma(ltrb_targets(&o.bbox, c, s), &hm_cfg);
                let (cc, cr) = ((tok % width) as f64, (tok / width) as f64);
                (0..n)
                    .map(|i| {
                        let (dc, dr) = ((i % width) as f64 - cc, (i / width) as f64 - cr);
                        gaussian_value(dc * dc + dr * dr, delta)
                    })
                    .collect()
            }
            _ => vec![0.0; n],
        })
        .collect();

    let predictions: Vec<Prediction2D> = (0..n)
        .map(|tok| oracle_prediction(tok, &t, &objects, &per_object, cfg.classes, pixel(tok), s))
        .collect::<Result<_>>()?;

    let mut matches = Vec::new();
    if !objects.is_empty() {
        ensure!(
            objects.len() <= n,
            "camera {camera} sees {} objects but has only {n} tokens",
            objects.len()
        );
        let gts: Vec<GroundTruth2D> = objects
            .iter()
            .map(|o| GroundTruth2D { bbox: o.bbox, label: o.class_id })
            .collect();
        let costs = build_cost_matrix(
            &predictions,
            &gts,
            MatchWeights::default(),
            (cam.width_px as f64, cam.height_px as f64),
        )?;
        let assignment = match_hungarian(&costs)?;
        for &(tok, j) in &assignment.pairs {
            matches.push((tok, j));
            if t.class[tok] == Some(objects[j].class_id) {
                t.iou[tok] = predictions[tok].bbox.iou(&objects[j].bbox);
            }
        }
    }
    t.validate()?;
    Ok(CameraTruth {
        camera,
        objects,
        targets: t,
        predictions,
        matches,
        center_tokens,
    })
}

/// Foreground tokens predict their owner's box with the owner's own
/// heatmap value as class score. Background tokens predict their own cell
/// with zero scores.
fn oracle_prediction(
    tok: usize,
    t: &TokenTargets,
    objects: &[ProjectedObject],
    per_object: &[Vec<f64>],
    classes: usize,
    (u, v): (f64, f64),
    s: f64,
) -> Result<Prediction2D> {
    let mut scores = vec![0.0; classes];
    let Some(owner) = t.owner[tok] else {
        let bbox = Box2D::new(u - s / 2.0, v - s / 2.0, u + s / 2.0, v + s / 2.0)?;
        return Ok(Prediction2D { bbox, scores });
    };
    let j = objects
        .iter()
        .position(|o| o.object == owner)
        .expect("owner is among the projected objects");
    scores[objects[j].class_id] = per_object[j][tok];
    Ok(Prediction2D {
        bbox: objects[j].bbox,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scene::{generate_scene, Object3D, SceneConfig, SCENE_FORMAT_VERSION};

    fn scene_with(objects: Vec<Object3D>) -> SyntheticScene {
        let cfg = SceneConfig::default();
        SyntheticScene {
            format_version: SCENE_FORMAT_VERSION,
            cameras: cfg.build_rig().unwrap(),
            objects,
            config: cfg,
        }
    }

    #[test]
    fn on_axis_object_projects_to_principal_point() {
        // Camera 0 sits at (1, 0, 1.5) looking along +x.
        let o = Object3D { center_m: [11.0, 0.0, 1.5], size_m: [1.0; 3], yaw_rad: 0.0, class_id: 1 };
        let scene = scene_with(vec![o.clone()]);
        let p = project_object(&scene.cameras[0], 0, &o).unwrap();
        let (u, v) = p.center_px.unwrap();
        assert!((u - 64.0).abs() < 1e-9 && (v - 32.0).abs() < 1e-9);
        assert!((p.center_depth_m - 10.0).abs() < 1e-12);
    }

    #[test]
    fn unit_cube_box_matches_hand_projection() {
        let o = Object3D { center_m: [6.0, 0.0, 1.5], size_m: [1.0; 3], yaw_rad: 0.0, class_id: 0 };
        let scene = scene_with(vec![o.clone()]);
        let p = project_object(&scene.cameras[0], 0, &o).unwrap();
        // Nearest face at depth 4.5 spans ±0.5 m: 64 ± 80·0.5/4.5, 32 ± 80·0.5/4.5.
        let e = 80.0 * 0.5 / 4.5;
        assert!((p.bbox.x_min - (64.0 - e)).abs() < 1e-9);
        assert!((p.bbox.x_max - (64.0 + e)).abs() < 1e-9);
        assert!((p.bbox.y_min - (32.0 - e)).abs() < 1e-9);
        assert!((p.bbox.y_max - (32.0 + e)).abs() < 1e-9);
    }

    #[test]
    fn objects_behind_are_skipped() {
        let o = Object3D { center_m: [-6.0, 0.0, 1.5], size_m: [1.0; 3], yaw_rad: 0.0, class_id: 0 };
        let scene = scene_with(vec![o.clone()]);
        assert!(project_object(&scene.cameras[0], 0, &o).is_none());
    }

    #[test]
    fn generated_scene_targets_are_consistent() {
        for seed in 0..10 {
            let scene = generate_scene(&SceneConfig { seed, ..Default::default() }).unwrap();
            let truth = render_targets(&scene).unwrap();
            let mut any_center = false;
            for ct in &truth {
                let t = &ct.targets;
                for tok in 0..t.len() {
                    if let Some(owner) = t.owner[tok] {
                        let o = ct.objects.iter().find(|o| o.object == owner).unwrap();
                        let (u, v) = (((tok % t.width) as f64 + 0.5) * 16.0, ((tok / t.width) as f64 + 0.5) * 16.0);
                        let is_center = ct.center_tokens.contains(&Some(tok));
                        assert!(is_center || o.bbox.contains(u, v));
                    }
                }
                for (o, tok) in ct.objects.iter().zip(&ct.center_tokens) {
                    if let Some(tok) = tok {
                        any_center = true;
                        let (u, v) = o.center_px.unwrap();
                        assert!(scene.cameras[ct.camera].pixel_on_image(u, v));
                        assert_eq!(t.heatmap[*tok], 1.0);
                        assert_eq!(t.iou[*tok], 1.0, "seed {seed} camera {}", ct.camera);
                        assert!(t.owner[*tok].is_some());
                    }
                }
            }
            assert!(any_center);
        }
    }
}
