//! Seeded synthetic scenes: a ring of outward-facing cameras and a set of
//! ground-standing 3D boxes.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{outward_rotation, project_point, CameraModel, ConeContent, DepthConfig, Projection, Roi3D};
use crate::error::{ensure, Error, Result};
use crate::numeric::seeded_rng;
use crate::sampling::SelectionScope;

pub const SCENE_FORMAT_VERSION: u32 = 1;

/// Attempts at drawing a scene with at least one visible object.
pub const MAX_SCENE_ATTEMPTS: usize = 100;

/// Source of the alignment networks in focal mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentKind {
    #[default]
    Seeded,
    /// `w = 1`, `b = 0`.
    Identity,
    /// Aligned features are the raw features.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub cameras: usize,
    pub image_width_px: u32,
    pub image_height_px: u32,
    pub focal_px: f64,
    pub stride: u32,
    pub rig_radius_m: f64,
    pub rig_height_m: f64,
    pub objects: usize,
    pub classes: usize,
    /// Horizontal distance of object centers from the rig center.
    pub range_m: [f64; 2],
    pub length_m: [f64; 2],
    pub width_m: [f64; 2],
    pub height_m: [f64; 2],
    pub min_separation_m: f64,
    pub roi: Roi3D,
    pub depth: DepthConfig,
    pub d_model: usize,
    pub embed_hidden: usize,
    pub align_hidden: usize,
    pub layers: usize,
    pub queries: usize,
    pub d_ff: usize,
    pub self_attention: bool,
    pub alpha: f64,
    pub rho: f64,
    pub scope: SelectionScope,
    pub alignment: AlignmentKind,
    pub cone_content: ConeContent,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            cameras: 6,
            image_width_px: 128,
            image_height_px: 64,
            focal_px: 80.0,
            stride: 16,
            rig_radius_m: 1.0,
            rig_height_m: 1.5,
            objects: 8,
            classes: 3,
            range_m: [5.0, 30.0],
            length_m: [1.0, 4.5],
            width_m: [0.8, 2.0],
            height_m: [1.0, 2.0],
            min_separation_m: 2.0,
            roi: Roi3D::default(),
            depth: DepthConfig::default(),
            d_model: 32,
            embed_hidden: 64,
            align_hidden: 32,
            layers: 3,
            queries: 64,
            d_ff: 64,
            self_attention: true,
            alpha: 0.5,
            rho: 0.25,
            scope: SelectionScope::Global,
            alignment: AlignmentKind::Seeded,
            cone_content: ConeContent::Cone,
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], positive: bool) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && (!positive || r[0] > 0.0)) {
        return Err(Error::Config(format!("{name} range {r:?} is invalid")));
    }
    Ok(())
}

impl SceneConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Input {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cameras", self.cameras),
            ("objects", self.objects),
            ("classes", self.classes),
            ("d_model", self.d_model),
            ("embed_hidden", self.embed_hidden),
            ("align_hidden", self.align_hidden),
            ("layers", self.layers),
            ("queries", self.queries),
            ("d_ff", self.d_ff),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.stride == 0 || self.image_width_px < self.stride || self.image_height_px < self.stride {
            return Err(Error::Config("image must hold at least one stride cell".into()));
        }
        if !(self.focal_px > 0.0 && self.focal_px.is_finite()) {
            return Err(Error::Config("focal length must be positive".into()));
        }
        if !(self.rig_radius_m >= 0.0 && self.rig_height_m.is_finite()) {
            return Err(Error::Config("rig geometry is invalid".into()));
        }
        check_range("range_m", self.range_m, true)?;
        check_range("length_m", self.length_m, true)?;
        check_range("width_m", self.width_m, true)?;
        check_range("height_m", self.height_m, true)?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!("rho {} outside (0, 1]", self.rho)));
        }
        self.roi.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.depth.depths().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Yaw of camera `k`: evenly spaced, camera 0 looking along +x.
    pub fn camera_yaw(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.cameras as f64
    }

    pub fn build_rig(&self) -> Result<Vec<CameraModel>> {
        (0..self.cameras)
            .map(|k| {
                let yaw = self.camera_yaw(k);
                let t = Vector3::new(
                    self.rig_radius_m * yaw.cos(),
                    self.rig_radius_m * yaw.sin(),
                    self.rig_height_m,
                );
                CameraModel::new(
                    (self.focal_px, self.focal_px),
                    (self.image_width_px as f64 / 2.0, self.image_height_px as f64 / 2.0),
                    (self.image_width_px, self.image_height_px),
                    outward_rotation(yaw),
                    t,
                )
            })
            .collect()
    }

    pub fn tokens_per_camera(&self) -> usize {
        ((self.image_width_px / self.stride) * (self.image_height_px / self.stride)) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Object3D {
    pub center_m: [f64; 3],
    /// `(length, width, height)` along the box's heading, side and up axes.
    pub size_m: [f64; 3],
    pub yaw_rad: f64,
    pub class_id: usize,
}

impl Object3D {
    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.center_m)
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let (s, c) = self.yaw_rad.sin_cos();
        let rot = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        let half = Vector3::from(self.size_m) * 0.5;
        let center = self.center();
        let mut out = [Vector3::zeros(); 8];
        for (i, corner) in out.iter_mut().enumerate() {
            let sign = Vector3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            *corner = center + rot * half.component_mul(&sign);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub format_version: u32,
    pub config: SceneConfig,
    pub cameras: Vec<CameraModel>,
    pub objects: Vec<Object3D>,
}

impl SyntheticScene {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scene: Self = serde_json::from_str(&text).map_err(|e| Error::Input {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        if scene.format_version != SCENE_FORMAT_VERSION {
            return Err(Error::Input {
                path: path.to_path_buf(),
                line: 0,
                message: format!("unsupported scene format version {}", scene.format_version),
            });
        }
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        ensure!(
            self.cameras.len() == self.config.cameras,
            "scene lists {} cameras but its config has {}",
            self.cameras.len(),
            self.config.cameras
        );
        for cam in &self.cameras {
            cam.validate()?;
        }
        for (i, o) in self.objects.iter().enumerate() {
            ensure!(o.size_m.iter().all(|&s| s > 0.0), "object {i} has a non-positive size");
            ensure!(o.class_id < self.config.classes, "object {i} class out of range");
            ensure!(self.config.roi.contains(&o.center()), "object {i} center outside the ROI");
        }
        Ok(())
    }

    /// Whether any camera sees the object's center on its image.
    pub fn center_visible(&self, o: &Object3D) -> bool {
        self.cameras.iter().any(|cam| match project_point(cam, &o.center()) {
            Projection::Visible { u, v, .. } => cam.pixel_on_image(u, v),
            Projection::BehindCamera => false,
        })
    }
}

/// Draws a scene from `cfg.seed`. Objects stand on the ground plane at
/// uniformly random azimuth and range, with a minimum center spacing.
pub fn generate_scene(cfg: &SceneConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let cameras = cfg.build_rig()?;
    let mut rng = seeded_rng(cfg.seed);
    for attempt in 0..MAX_SCENE_ATTEMPTS {
        let mut objects: Vec<Object3D> = Vec::with_capacity(cfg.objects);
        let mut tries = 0;
        while objects.len() < cfg.objects && tries < 100 * cfg.objects {
            tries += 1;
            let azimuth = rng.gen_range(-PI..PI);
            let range = rng.gen_range(cfg.range_m[0]..=cfg.range_m[1]);
            let size_m = [
                rng.gen_range(cfg.length_m[0]..=cfg.length_m[1]),
                rng.gen_range(cfg.width_m[0]..=cfg.width_m[1]),
                rng.gen_range(cfg.height_m[0]..=cfg.height_m[1]),
            ];
            let yaw_rad = PI - rng.gen_range(0.0..2.0 * PI);
            let class_id = rng.gen_range(0..cfg.classes);
            let center_m = [range * azimuth.cos(), range * azimuth.sin(), size_m[2] / 2.0];
            let candidate = Object3D {
                center_m,
                size_m,
                yaw_rad,
                class_id,
            };
            let c = candidate.center();
            if !cfg.roi.contains(&c) {
                continue;
            }
            if objects
                .iter()
                .any(|o| (o.center() - c).norm() < cfg.min_separation_m)
            {
                continue;
            }
            objects.push(candidate);
        }
        if objects.len() < cfg.objects {
            return Err(Error::Config(format!(
                "could only place {} of {} objects with separation {} m",
                objects.len(),
                cfg.objects,
                cfg.min_separation_m
            )));
        }
        let scene = SyntheticScene {
            format_version: SCENE_FORMAT_VERSION,
            config: cfg.clone(),
            cameras: cameras.clone(),
            objects,
        };
        if scene.objects.iter().any(|o| scene.center_visible(o)) {
            if attempt > 0 {
                log::debug!("scene accepted after {} attempts", attempt + 1);
            }
            return Ok(scene);
        }
    }
    Err(Error::Config(format!(
        "no object visible after {MAX_SCENE_ATTEMPTS} attempts; check rig and range settings"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rig_shape() {
        let cfg = SceneConfig::default();
        let rig = cfg.build_rig().unwrap();
        assert_eq!(rig.len(), 6);
        assert_eq!(cfg.tokens_per_camera(), 32);
        for (k, cam) in rig.iter().enumerate() {
            let fwd = cam.rotation() * Vector3::z();
            let yaw = cfg.camera_yaw(k);
            assert!((fwd - Vector3::new(yaw.cos(), yaw.sin(), 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn scenes_are_seeded_and_inside_roi() {
        let cfg = SceneConfig { seed: 7, ..Default::default() };
        let a = generate_scene(&cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), generate_scene(&cfg).unwrap().to_json().unwrap());
        assert_eq!(a.objects.len(), 8);
        assert!(a.objects.iter().all(|o| cfg.roi.contains(&o.center())));
        assert!(a.objects.iter().all(|o| (-PI..=PI).contains(&o.yaw_rad) && o.yaw_rad > -PI));
        let b = generate_scene(&SceneConfig { seed: 8, ..Default::default() }).unwrap();
        assert_ne!(a.objects, b.objects);
    }

    #[test]
    fn every_azimuth_is_covered() {
        let cfg = SceneConfig::default();
        let scene = SyntheticScene {
            format_version: SCENE_FORMAT_VERSION,
            cameras: cfg.build_rig().unwrap(),
            objects: vec![],
            config: cfg,
        };
        for i in 0..360 {
            let az = (i as f64).to_radians();
            for range in [5.0, 30.0] {
                let o = Object3D {
                    center_m: [range * az.cos(), range * az.sin(), 1.0],
                    size_m: [1.0; 3],
                    yaw_rad: 0.0,
                    class_id: 0,
                };
                assert!(scene.center_visible(&o), "azimuth {i} deg at {range} m");
            }
        }
    }

    #[test]
    fn corners_of_axis_aligned_box() {
        let o = Object3D { center_m: [1.0, 2.0, 3.0], size_m: [2.0, 4.0, 6.0], yaw_rad: 0.0, class_id: 0 };
        let c = o.corners();
        assert_eq!(c[0], Vector3::new(0.0, 0.0, 0.0));
        assert_eq!(c[7], Vector3::new(2.0, 4.0, 6.0));
        let turned = Object3D { yaw_rad: PI / 2.0, ..o.clone() };
        let t = turned.corners();
        // A quarter turn swaps the footprint's extents.
        let xs: Vec<f64> = t.iter().map(|p| p.x).collect();
        let span = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
        assert!((span - 4.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate_scene(&SceneConfig { cameras: 0, ..Default::default() }).is_err());
        assert!(generate_scene(&SceneConfig { rho: 0.0, ..Default::default() }).is_err());
        let crowded = SceneConfig { objects: 50, range_m: [5.0, 5.5], min_separation_m: 5.0, ..Default::default() };
        assert!(matches!(generate_scene(&crowded), Err(Error::Config(_))));
        let unseen = SceneConfig { rig_height_m: 500.0, roi: Roi3D::new([-61.2, -61.2, -10.0], [61.2, 61.2, 10.0]).unwrap(), ..Default::default() };
        assert!(generate_scene(&unseen).is_err());
    }

    #[test]
    fn config_json_round_trip_and_partial() {
        let cfg = SceneConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<SceneConfig>(&text).unwrap(), cfg);
        let partial: SceneConfig = serde_json::from_str(r#"{"seed": 5, "rho": 0.5}"#).unwrap();
        assert_eq!(partial.seed, 5);
        assert_eq!(partial.cameras, 6);
        assert!(serde_json::from_str::<SceneConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
