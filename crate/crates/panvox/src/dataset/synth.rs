//! Synthetic scene generation: analytic depth and perfect panoptic
//! segmentations for a room with boxes and spheres, plus a voxelized
//! ground-truth volume for closed-loop evaluation.
//!
//! Depth comes from exact ray-object intersection (quantized to 16-bit
//! millimeters), segment images from the nearest-hit surface id. Ground
//! truth marks voxels in the near-surface band (half the default
//! truncation, i.e. two voxels) along each observed ray with the true
//! class and object id, which mirrors where the reconstruction writes its
//! labels. Output is deterministic for a given spec and seed.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::geometry::{project, Intrinsics, Pose, Projection};
use crate::labels::{ClassDef, LabelMap};
use crate::projection::DepthRange;
use crate::voxel::{write_dump, DumpRecord};

use super::loader::{pose_to_text, save_u16_png};
use super::DatasetError;

/// Ground-truth label band half-width in voxels; matches the default
/// truncation rule (4 voxels) with labels in the near half of the band.
const GT_BAND_VOXELS: f64 = 2.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassSpec {
    pub id: u16,
    pub name: String,
    pub kind: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoomSpec {
    /// Interior size in meters; the room spans [0, extents] on each axis.
    pub extents: [f64; 3],
    pub wall_class: u16,
    pub floor_class: u16,
    pub ceiling_class: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeSpec {
    Box,
    Sphere,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: ShapeSpec,
    pub class: u16,
    pub center: [f64; 3],
    #[serde(default)]
    pub size: Option<[f64; 3]>,
    #[serde(default)]
    pub radius: Option<f64>,
}

/// Circular orbit at fixed height, looking at `center`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub center: [f64; 3],
    pub radius: f64,
    pub height: f64,
    pub frames: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    #[serde(default)]
    pub cx: Option<f64>,
    #[serde(default)]
    pub cy: Option<f64>,
    pub gt_voxel_size: f64,
    /// Optional Gaussian depth noise (standard deviation, millimeters).
    #[serde(default)]
    pub noise_mm: f64,
    #[serde(rename = "class")]
    pub classes: Vec<ClassSpec>,
    pub room: RoomSpec,
    #[serde(default, rename = "object")]
    pub objects: Vec<ObjectSpec>,
    pub trajectory: TrajectorySpec,
}

impl SceneSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, DatasetError> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| DatasetError::InvalidSpec {
            field: "<toml>".into(),
            reason: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn intrinsics(&self) -> Result<Intrinsics, DatasetError> {
        Intrinsics::new(
            self.fx,
            self.fy,
            self.cx.unwrap_or(self.width as f64 / 2.0),
            self.cy.unwrap_or(self.height as f64 / 2.0),
            self.width,
            self.height,
        )
        .map_err(|e| DatasetError::InvalidSpec { field: "fx/fy/cx/cy".into(), reason: e.to_string() })
    }

    pub fn label_map(&self) -> Result<LabelMap, DatasetError> {
        let mut classes = Vec::new();
        for (i, c) in self.classes.iter().enumerate() {
            let is_thing = match c.kind.as_str() {
                "thing" => true,
                "stuff" => false,
                other => {
                    return Err(DatasetError::InvalidSpec {
                        field: format!("class[{i}].kind"),
                        reason: format!("expected thing|stuff, got `{other}`"),
                    })
                }
            };
            classes.push(ClassDef { id: c.id, name: c.name.clone(), is_thing });
        }
        Ok(LabelMap::new(classes)?)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let fail = |field: &str, reason: String| {
            Err(DatasetError::InvalidSpec { field: field.into(), reason })
        };
        self.intrinsics()?;
        let labels = self.label_map()?;
        if self.gt_voxel_size <= 0.0 {
            return fail("gt_voxel_size", "must be positive".into());
        }
        if self.noise_mm < 0.0 {
            return fail("noise_mm", "must be non-negative".into());
        }
        let ext = self.room.extents;
        if ext.iter().any(|&e| e <= 0.0) {
            return fail("room.extents", format!("must be positive, got {ext:?}"));
        }
        for (field, class) in [
            ("room.wall_class", self.room.wall_class),
            ("room.floor_class", self.room.floor_class),
            ("room.ceiling_class", self.room.ceiling_class),
        ] {
            if !labels.is_valid_class(class) {
                return fail(field, format!("class {class} not in label map"));
            }
            if labels.is_thing(class) {
                return fail(field, format!("class {class} must be stuff"));
            }
        }
        for (i, obj) in self.objects.iter().enumerate() {
            let field = format!("object[{i}]");
            if !labels.is_valid_class(obj.class) {
                return fail(&field, format!("class {} not in label map", obj.class));
            }
            if !labels.is_thing(obj.class) {
                return fail(&field, format!("class {} must be a thing class", obj.class));
            }
            let half = match obj.shape {
                ShapeSpec::Box => {
                    let Some(size) = obj.size else {
                        return fail(&field, "box needs a size".into());
                    };
                    if size.iter().any(|&s| s <= 0.0) {
                        return fail(&field, format!("box size must be positive, got {size:?}"));
                    }
                    [size[0] / 2.0, size[1] / 2.0, size[2] / 2.0]
                }
                ShapeSpec::Sphere => {
                    let Some(radius) = obj.radius else {
                        return fail(&field, "sphere needs a radius".into());
                    };
                    if radius <= 0.0 {
                        return fail(&field, format!("sphere radius must be positive, got {radius}"));
                    }
                    [radius; 3]
                }
            };
            for axis in 0..3 {
                if obj.center[axis] - half[axis] < 0.0 || obj.center[axis] + half[axis] > ext[axis]
                {
                    return fail(&field, "object out of bounds".into());
                }
            }
        }
        let t = &self.trajectory;
        if t.frames == 0 {
            return fail("trajectory.frames", "need at least one frame".into());
        }
        if t.radius <= 0.0 {
            return fail("trajectory.radius", "must be positive".into());
        }
        if t.height <= 0.0 || t.height >= ext[2] {
            return fail("trajectory.height", format!("must be inside (0, {})", ext[2]));
        }
        for (axis, name) in [(0, "x"), (1, "y")] {
            if t.center[axis] - t.radius <= 0.0 || t.center[axis] + t.radius >= ext[axis] {
                return fail(
                    "trajectory.radius",
                    format!("orbit leaves the room along {name}"),
                );
            }
        }
        Ok(())
    }

    /// World-from-camera pose of orbit frame `k`.
    pub fn pose_at(&self, k: u32) -> Pose {
        let t = &self.trajectory;
        let angle = 2.0 * std::f64::consts::PI * k as f64 / t.frames as f64;
        let position = Vector3::new(
            t.center[0] + t.radius * angle.cos(),
            t.center[1] + t.radius * angle.sin(),
            t.height,
        );
        let target = Vector3::new(t.center[0], t.center[1], t.center[2]);
        look_at(position, target)
    }
}

/// World-from-camera pose at `position` looking toward `target`, camera +z
/// forward and +y down in the image.
fn look_at(position: Vector3<f64>, target: Vector3<f64>) -> Pose {
    let forward = (target - position).normalize();
    let world_up = Vector3::new(0.0, 0.0, 1.0);
    let right0 = forward.cross(&world_up);
    assert!(right0.norm() > 1e-9, "camera looking straight up/down");
    let right = right0.normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_columns(&[right, down, forward]);
    Pose { rotation, translation: position }
}

/// Which surface a ray hit first.
#[derive(Debug, Clone, Copy)]
struct Hit {
    /// Camera-z units (the ray direction has z = 1 in the camera frame).
    t: f64,
    segment_id: u16,
    class_id: u16,
}

struct SceneGeometry<'a> {
    spec: &'a SceneSpec,
}

impl SceneGeometry<'_> {
    /// Nearest surface along `origin + t * dir`, t > 0. The camera sits
    /// inside the room so a hit always exists. Object segment ids are the
    /// 1-based object index; the six room faces follow after the objects.
    fn cast(&self, origin: Vector3<f64>, dir: Vector3<f64>) -> Hit {
        let ext = self.spec.room.extents;
        let n_obj = self.spec.objects.len() as u16;

        // Room interior: exit face of the axis-aligned box [0, extents].
        let mut t_room = f64::INFINITY;
        let mut face = 0usize;
        for axis in 0..3 {
            let (t_axis, f_axis) = if dir[axis] > 1e-12 {
                ((ext[axis] - origin[axis]) / dir[axis], 2 * axis + 1)
            } else if dir[axis] < -1e-12 {
                ((0.0 - origin[axis]) / dir[axis], 2 * axis)
            } else {
                continue;
            };
            if t_axis < t_room {
                t_room = t_axis;
                face = f_axis;
            }
        }
        let room_class = match face {
            4 => self.spec.room.floor_class,
            5 => self.spec.room.ceiling_class,
            _ => self.spec.room.wall_class,
        };
        let mut hit =
            Hit { t: t_room, segment_id: n_obj + 1 + face as u16, class_id: room_class };

        for (i, obj) in self.spec.objects.iter().enumerate() {
            let center = Vector3::new(obj.center[0], obj.center[1], obj.center[2]);
            let t_obj = match obj.shape {
                ShapeSpec::Box => {
                    let size = obj.size.expect("validated");
                    let half = Vector3::new(size[0] / 2.0, size[1] / 2.0, size[2] / 2.0);
                    ray_box(origin, dir, center - half, center + half)
                }
                ShapeSpec::Sphere => ray_sphere(origin, dir, center, obj.radius.expect("validated")),
            };
            if let Some(t) = t_obj {
                if t > 1e-9 && t < hit.t {
                    hit = Hit { t, segment_id: i as u16 + 1, class_id: obj.class };
                }
            }
        }
        hit
    }
}

/// Entry parameter of a ray into an AABB, if it hits from outside.
fn ray_box(
    origin: Vector3<f64>,
    dir: Vector3<f64>,
    min: Vector3<f64>,
    max: Vector3<f64>,
) -> Option<f64> {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    for axis in 0..3 {
        if dir[axis].abs() < 1e-12 {
            if origin[axis] < min[axis] || origin[axis] > max[axis] {
                return None;
            }
            continue;
        }
        let t0 = (min[axis] - origin[axis]) / dir[axis];
        let t1 = (max[axis] - origin[axis]) / dir[axis];
        let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
        t_enter = t_enter.max(lo);
        t_exit = t_exit.min(hi);
        if t_enter > t_exit {
            return None;
        }
    }
    (t_enter > 0.0).then_some(t_enter)
}

fn ray_sphere(
    origin: Vector3<f64>,
    dir: Vector3<f64>,
    center: Vector3<f64>,
    radius: f64,
) -> Option<f64> {
    let oc = origin - center;
    let a = dir.dot(&dir);
    let b = 2.0 * oc.dot(&dir);
    let c = oc.dot(&oc) - radius * radius;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / (2.0 * a);
    (t > 0.0).then_some(t)
}

/// One rendered frame: quantized depth and the perfect segment image.
pub(crate) struct RenderedFrame {
    pub depth_mm: Vec<u16>,
    pub segment: Vec<u16>,
    /// segment id -> class id, for every id present in the image.
    pub segment_classes: BTreeMap<u16, u16>,
}

pub(crate) fn render_frame(
    spec: &SceneSpec,
    intr: &Intrinsics,
    pose: &Pose,
    noise: Option<&mut rand_chacha::ChaCha8Rng>,
) -> RenderedFrame {
    let geometry = SceneGeometry { spec };
    let n = (intr.width * intr.height) as usize;
    let mut depth_mm = vec![0u16; n];
    let mut segment = vec![0u16; n];
    let mut segment_classes = BTreeMap::new();
    let mut noise = noise;

    for y in 0..intr.height {
        for x in 0..intr.width {
            let i = (y * intr.width + x) as usize;
            let dir_cam = Vector3::new(
                (x as f64 - intr.cx) / intr.fx,
                (y as f64 - intr.cy) / intr.fy,
                1.0,
            );
            let dir_world = pose.rotation * dir_cam;
            let hit = geometry.cast(pose.translation, dir_world);
            let mut mm = hit.t * 1000.0;
            if let Some(rng) = noise.as_deref_mut() {
                mm += spec.noise_mm * gaussian(rng);
            }
            depth_mm[i] = mm.round().clamp(1.0, u16::MAX as f64) as u16;
            segment[i] = hit.segment_id;
            segment_classes.insert(hit.segment_id, hit.class_id);
        }
    }
    RenderedFrame { depth_mm, segment, segment_classes }
}

fn gaussian(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    // Box-Muller; u1 in (0, 1] avoids ln(0).
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[derive(Default)]
struct GtCell {
    class_w: BTreeMap<u16, u32>,
    object_w: BTreeMap<u16, u32>,
    sdf_sum: f64,
    n: u32,
    stamp: u32,
}

/// Accumulates ground-truth labels over the rendered frames by marking
/// voxels in the near-surface band along every observed ray.
struct GtAccumulator {
    voxel_size: f64,
    band: f64,
    cells: HashMap<[i32; 3], GtCell>,
}

impl GtAccumulator {
    fn new(voxel_size: f64) -> Self {
        Self { voxel_size, band: GT_BAND_VOXELS * voxel_size, cells: HashMap::new() }
    }

    fn integrate(
        &mut self,
        spec: &SceneSpec,
        intr: &Intrinsics,
        pose: &Pose,
        frame: &RenderedFrame,
        stamp: u32,
        range: DepthRange,
    ) {
        let cam_from_world = pose.inverse();
        let n_obj = spec.objects.len() as u16;
        for y in 0..intr.height {
            for x in 0..intr.width {
                let i = (y * intr.width + x) as usize;
                let d = frame.depth_mm[i] as f64 / 1000.0;
                if !range.contains(d) {
                    continue;
                }
                let seg = frame.segment[i];
                let class = frame.segment_classes[&seg];
                let object = if seg >= 1 && seg <= n_obj { seg } else { 0 };

                let dir_cam = Vector3::new(
                    (x as f64 - intr.cx) / intr.fx,
                    (y as f64 - intr.cy) / intr.fy,
                    1.0,
                );
                let step = 0.5 * self.voxel_size / dir_cam.norm();
                // March one voxel beyond the band and filter by center
                // distance, so band membership is decided exactly like the
                // reconstruction's label rule.
                let s_lo = (d - self.band - self.voxel_size).max(1e-3);
                let s_hi = d + self.band + self.voxel_size;
                let mut prev = [i32::MIN; 3];
                let mut s = s_lo;
                while s <= s_hi {
                    let p_world = pose.transform(dir_cam * s);
                    let coord = [
                        (p_world.x / self.voxel_size).floor() as i32,
                        (p_world.y / self.voxel_size).floor() as i32,
                        (p_world.z / self.voxel_size).floor() as i32,
                    ];
                    s += step;
                    if coord == prev {
                        continue;
                    }
                    prev = coord;
                    let center = Vector3::new(
                        (coord[0] as f64 + 0.5) * self.voxel_size,
                        (coord[1] as f64 + 0.5) * self.voxel_size,
                        (coord[2] as f64 + 0.5) * self.voxel_size,
                    );
                    let sdf = d - cam_from_world.transform(center).z;
                    if sdf.abs() > self.band {
                        continue;
                    }
                    let cell = self.cells.entry(coord).or_default();
                    if cell.stamp == stamp {
                        continue;
                    }
                    cell.stamp = stamp;
                    *cell.class_w.entry(class).or_insert(0) += 1;
                    if object != 0 {
                        *cell.object_w.entry(object).or_insert(0) += 1;
                    }
                    cell.sdf_sum += sdf;
                    cell.n += 1;
                }
            }
        }
    }

    fn finalize(&self, spec: &SceneSpec, labels: &LabelMap) -> Vec<DumpRecord> {
        let tau = 2.0 * self.band;
        let mut records = Vec::with_capacity(self.cells.len());
        for (&coord, cell) in &self.cells {
            let mut class = 0u16;
            let mut best = 0u32;
            for (&c, &w) in &cell.class_w {
                if w > best {
                    best = w;
                    class = c;
                }
            }
            let instance = if labels.is_thing(class) {
                let mut inst = 0u16;
                let mut best = 0u32;
                for (&obj, &w) in &cell.object_w {
                    if spec.objects[obj as usize - 1].class == class && w > best {
                        best = w;
                        inst = obj;
                    }
                }
                inst as u32
            } else {
                0
            };
            let tsdf = ((cell.sdf_sum / cell.n as f64) / tau).clamp(-1.0, 1.0) as f32;
            records.push(DumpRecord {
                coord,
                tsdf,
                weight: cell.n as f32,
                class_id: class,
                instance_id: instance,
            });
        }
        records.sort_unstable_by_key(|r| r.coord);
        records
    }
}

/// Summary of one generated sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthOutput {
    pub frames: u32,
    pub objects: usize,
    pub gt_voxels: usize,
}

/// Writes the sequence (poses, depth, segments, intrinsics, labels) and the
/// ground-truth volume `gt.panvox` into `out_dir`.
pub fn generate_synthetic(
    spec: &SceneSpec,
    out_dir: &Path,
    seed: u64,
) -> Result<SynthOutput, DatasetError> {
    spec.validate()?;
    let intr = spec.intrinsics()?;
    let labels = spec.label_map()?;

    let poses: Vec<Pose> = (0..spec.trajectory.frames).map(|k| spec.pose_at(k)).collect();
    check_objects_in_view(spec, &intr, &poses)?;

    let io_err = |path: &Path, e: std::io::Error| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    };
    for sub in ["depth", "segm", "pose"] {
        let dir = out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    }
    let intr_path = out_dir.join("intrinsics.txt");
    std::fs::write(
        &intr_path,
        format!("{} {} {} {} {} {}\n", intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height),
    )
    .map_err(|e| io_err(&intr_path, e))?;
    labels.save(&out_dir.join("labels.txt"))?;

    let mut rng = (spec.noise_mm > 0.0)
        .then(|| rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let mut gt = GtAccumulator::new(spec.gt_voxel_size);
    let range = DepthRange::default();

    for (k, pose) in poses.iter().enumerate() {
        let frame = render_frame(spec, &intr, pose, rng.as_mut());
        gt.integrate(spec, &intr, pose, &frame, k as u32 + 1, range);

        let name = format!("{:06}", k);
        let pose_path = out_dir.join("pose").join(format!("{name}.txt"));
        std::fs::write(&pose_path, pose_to_text(pose)).map_err(|e| io_err(&pose_path, e))?;
        save_u16_png(
            &out_dir.join("depth").join(format!("{name}.png")),
            intr.width,
            intr.height,
            frame.depth_mm,
        )?;
        save_u16_png(
            &out_dir.join("segm").join(format!("{name}.png")),
            intr.width,
            intr.height,
            frame.segment,
        )?;
        let mut cls = String::new();
        for (&seg, &class) in &frame.segment_classes {
            let _ = writeln!(cls, "{seg} {class}");
        }
        let cls_path = out_dir.join("segm").join(format!("{name}.cls"));
        std::fs::write(&cls_path, cls).map_err(|e| io_err(&cls_path, e))?;
    }

    let records = gt.finalize(spec, &labels);
    let gt_path = out_dir.join("gt.panvox");
    let file = std::fs::File::create(&gt_path).map_err(|e| io_err(&gt_path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    write_dump(&mut writer, spec.gt_voxel_size, labels.n_classes(), &records)
        .map_err(|e| io_err(&gt_path, e))?;

    Ok(SynthOutput {
        frames: spec.trajectory.frames,
        objects: spec.objects.len(),
        gt_voxels: records.len(),
    })
}

fn check_objects_in_view(
    spec: &SceneSpec,
    intr: &Intrinsics,
    poses: &[Pose],
) -> Result<(), DatasetError> {
    for (i, obj) in spec.objects.iter().enumerate() {
        let center = Vector3::new(obj.center[0], obj.center[1], obj.center[2]);
        let visible = poses
            .iter()
            .filter(|pose| {
                let p_cam = pose.inverse().transform(center);
                p_cam.z > 0.0
                    && matches!(project(p_cam, intr), Ok(Projection::InView { .. }))
            })
            .count();
        let needed = (0.8 * poses.len() as f64).ceil() as usize;
        if visible < needed {
            return Err(DatasetError::InvalidSpec {
                field: format!("object[{i}]"),
                reason: format!(
                    "in view in only {visible}/{} frames (needs {needed})",
                    poses.len()
                ),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_spec() -> SceneSpec {
        SceneSpec::from_toml_str(
            r#"
            width = 80
            height = 60
            fx = 60.0
            fy = 60.0
            gt_voxel_size = 0.05

            [[class]]
            id = 1
            name = "wall"
            kind = "stuff"

            [[class]]
            id = 2
            name = "floor"
            kind = "stuff"

            [[class]]
            id = 3
            name = "crate"
            kind = "thing"

            [room]
            extents = [6.0, 6.0, 3.0]
            wall_class = 1
            floor_class = 2
            ceiling_class = 1

            [[object]]
            shape = "box"
            class = 3
            center = [3.0, 3.0, 0.5]
            size = [1.0, 1.0, 1.0]

            [trajectory]
            center = [3.0, 3.0, 0.8]
            radius = 2.0
            height = 1.5
            frames = 4
            "#,
        )
        .unwrap()
    }

    #[test]
    fn orbit_poses_are_valid_and_look_at_center() {
        let spec = demo_spec();
        for k in 0..spec.trajectory.frames {
            let pose = spec.pose_at(k);
            pose.validate().unwrap();
            // The look-at target sits on the optical axis: x = y = 0, z > 0.
            let target = Vector3::new(3.0, 3.0, 0.8);
            let p_cam = pose.inverse().transform(target);
            assert!(p_cam.z > 0.0);
            assert!(p_cam.x.abs() < 1e-9 && p_cam.y.abs() < 1e-9, "{p_cam:?}");
        }
    }

    #[test]
    fn straight_ray_hits_wall_at_known_distance() {
        // Camera at the room center looking along +x: the wall at x = 6 is
        // 3 m away along the optical axis.
        let spec = demo_spec();
        let mut spec = spec;
        spec.objects.clear();
        let intr = spec.intrinsics().unwrap();
        let pose = look_at(Vector3::new(3.0, 3.0, 1.5), Vector3::new(6.0, 3.0, 1.5));
        let frame = render_frame(&spec, &intr, &pose, None);
        let center_px = (intr.cy as usize) * intr.width as usize + intr.cx as usize;
        assert_eq!(frame.depth_mm[center_px], 3000);
    }

    #[test]
    fn box_depth_at_image_center() {
        // Looking at the box from (0.5, 3, 0.5): its near face x = 2.5 is
        // 2 m away.
        let mut spec = demo_spec();
        spec.trajectory.center = [3.0, 3.0, 0.5];
        let intr = spec.intrinsics().unwrap();
        let pose = look_at(Vector3::new(0.5, 3.0, 0.5), Vector3::new(3.0, 3.0, 0.5));
        let frame = render_frame(&spec, &intr, &pose, None);
        let center_px = (intr.cy as usize) * intr.width as usize + intr.cx as usize;
        assert_eq!(frame.depth_mm[center_px], 2000);
        assert_eq!(frame.segment[center_px], 1);
        assert_eq!(frame.segment_classes[&1], 3);
    }

    #[test]
    fn zero_objects_yields_stuff_only() {
        let mut spec = demo_spec();
        spec.objects.clear();
        let intr = spec.intrinsics().unwrap();
        let frame = render_frame(&spec, &intr, &spec.pose_at(0), None);
        let labels = spec.label_map().unwrap();
        for (_, &class) in &frame.segment_classes {
            assert!(!labels.is_thing(class));
        }
        assert!(frame.depth_mm.iter().all(|&d| d > 0));
    }

    #[test]
    fn one_box_yields_exactly_one_thing_segment_per_frame() {
        let spec = demo_spec();
        let intr = spec.intrinsics().unwrap();
        let labels = spec.label_map().unwrap();
        for k in 0..spec.trajectory.frames {
            let frame = render_frame(&spec, &intr, &spec.pose_at(k), None);
            let things: Vec<u16> = frame
                .segment_classes
                .iter()
                .filter(|&(_, &c)| labels.is_thing(c))
                .map(|(&s, _)| s)
                .collect();
            assert_eq!(things, vec![1]);
            assert!(frame.segment.iter().any(|&s| s == 1));
        }
    }

    #[test]
    fn out_of_bounds_object_is_rejected() {
        let mut spec = demo_spec();
        spec.objects[0].center = [5.9, 3.0, 0.5];
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("out of bounds"), "{err}");
    }

    #[test]
    fn missing_shape_parameters_are_rejected() {
        let mut spec = demo_spec();
        spec.objects[0].size = None;
        assert!(spec.validate().is_err());
        let mut spec = demo_spec();
        spec.objects[0].shape = ShapeSpec::Sphere;
        assert!(spec.validate().is_err()); // sphere without radius
    }

    #[test]
    fn stuff_object_class_is_rejected() {
        let mut spec = demo_spec();
        spec.objects[0].class = 1;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn ray_box_from_outside() {
        let min = Vector3::new(-1.0, -1.0, -1.0);
        let max = Vector3::new(1.0, 1.0, 1.0);
        let t = ray_box(Vector3::new(-3.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), min, max);
        assert_eq!(t, Some(2.0));
        let miss = ray_box(Vector3::new(-3.0, 5.0, 0.0), Vector3::new(1.0, 0.0, 0.0), min, max);
        assert_eq!(miss, None);
    }

    #[test]
    fn ray_sphere_from_outside() {
        let t = ray_sphere(
            Vector3::new(0.0, 0.0, -3.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::zeros(),
            1.0,
        );
        assert_eq!(t, Some(2.0));
    }
}
