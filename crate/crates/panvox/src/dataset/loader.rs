//! Sequence directory ingestion.
//!
//! Layout:
//! ```text
//! intrinsics.txt      fx fy cx cy width height
//! labels.txt          class_id name thing|stuff
//! pose/NNNNNN.txt     4x4 row-major world-from-camera
//! depth/NNNNNN.png    16-bit grayscale, millimeters, 0 = invalid
//! segm/NNNNNN.png     16-bit grayscale, local segment id, 0 = unlabeled
//! segm/NNNNNN.cls     segment_id class_id
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use nalgebra::{Matrix3, Vector3};

use crate::geometry::{Intrinsics, Pose};
use crate::labels::LabelMap;

use super::{DatasetError, PanopticFrame};

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io { path: path.display().to_string(), source }
}

pub(crate) fn parse_intrinsics_file(path: &Path) -> Result<Intrinsics, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::BadIntrinsics {
        reason: format!("{}: {e}", path.display()),
    })?;
    let fields: Vec<f64> = text
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|e| DatasetError::BadIntrinsics { reason: format!("bad number: {e}") })?;
    if fields.len() != 6 {
        return Err(DatasetError::BadIntrinsics {
            reason: format!("expected 6 fields, got {}", fields.len()),
        });
    }
    Intrinsics::new(
        fields[0],
        fields[1],
        fields[2],
        fields[3],
        fields[4] as u32,
        fields[5] as u32,
    )
    .map_err(|e| DatasetError::BadIntrinsics { reason: e.to_string() })
}

pub(crate) fn parse_pose_text(text: &str, frame: u32) -> Result<Pose, DatasetError> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|e| DatasetError::MalformedFrame { frame, reason: format!("bad pose value: {e}") })?;
    if values.len() != 16 {
        return Err(DatasetError::MalformedFrame {
            frame,
            reason: format!("pose has {} values, expected 16", values.len()),
        });
    }
    let bottom = &values[12..16];
    if bottom != [0.0, 0.0, 0.0, 1.0] {
        return Err(DatasetError::MalformedFrame {
            frame,
            reason: format!("pose bottom row must be 0 0 0 1, got {bottom:?}"),
        });
    }
    let rotation = Matrix3::new(
        values[0], values[1], values[2],
        values[4], values[5], values[6],
        values[8], values[9], values[10],
    );
    let translation = Vector3::new(values[3], values[7], values[11]);
    Pose::new(rotation, translation)
        .map_err(|e| DatasetError::MalformedFrame { frame, reason: e.to_string() })
}

pub(crate) fn pose_to_text(pose: &Pose) -> String {
    let r = &pose.rotation;
    let t = &pose.translation;
    format!(
        "{} {} {} {}\n{} {} {} {}\n{} {} {} {}\n0 0 0 1\n",
        r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
        r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
        r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
    )
}

/// Loads a 16-bit grayscale PNG, checking dimensions.
pub(crate) fn load_u16_png(path: &Path, width: u32, height: u32) -> Result<Vec<u16>, DatasetError> {
    let img = image::open(path).map_err(|e| DatasetError::Image {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let img = match img {
        image::DynamicImage::ImageLuma16(img) => img,
        other => {
            return Err(DatasetError::Image {
                path: path.display().to_string(),
                reason: format!("expected 16-bit grayscale, got {:?}", other.color()),
            })
        }
    };
    if img.width() != width || img.height() != height {
        return Err(DatasetError::Image {
            path: path.display().to_string(),
            reason: format!(
                "size {}x{} does not match intrinsics {width}x{height}",
                img.width(),
                img.height()
            ),
        });
    }
    Ok(img.into_raw())
}

pub(crate) fn save_u16_png(path: &Path, width: u32, height: u32, data: Vec<u16>) -> Result<(), DatasetError> {
    let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(width, height, data)
        .expect("image buffer dimensions");
    img.save(path).map_err(|e| DatasetError::Image {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn parse_cls_text(text: &str, frame: u32) -> Result<BTreeMap<u16, u16>, DatasetError> {
    let mut table = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(seg), Some(class), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(DatasetError::MalformedFrame {
                frame,
                reason: format!("cls line {}: expected `segment_id class_id`", i + 1),
            });
        };
        let seg: u16 = seg.parse().map_err(|_| DatasetError::MalformedFrame {
            frame,
            reason: format!("cls line {}: bad segment id `{seg}`", i + 1),
        })?;
        let class: u16 = class.parse().map_err(|_| DatasetError::MalformedFrame {
            frame,
            reason: format!("cls line {}: bad class id `{class}`", i + 1),
        })?;
        table.insert(seg, class);
    }
    Ok(table)
}

/// Ordered access to a sequence directory. Construction reads intrinsics
/// and discovers frame indices; frames are loaded on demand so one bad
/// frame does not prevent the others from loading.
pub struct SequenceLoader {
    dir: PathBuf,
    intrinsics: Intrinsics,
    indices: Vec<u32>,
    n_classes: u16,
}

impl SequenceLoader {
    pub fn open(dir: &Path, labels: &LabelMap) -> Result<Self, DatasetError> {
        let intrinsics = parse_intrinsics_file(&dir.join("intrinsics.txt"))?;
        let mut indices = BTreeSet::new();
        for sub in ["depth", "pose", "segm"] {
            let sub_dir = dir.join(sub);
            if !sub_dir.is_dir() {
                continue;
            }
            let entries = std::fs::read_dir(&sub_dir).map_err(|e| io_err(&sub_dir, e))?;
            for entry in entries {
                let entry = entry.map_err(|e| io_err(&sub_dir, e))?;
                let name = entry.file_name();
                let name = name.to_string_lossy();
                let stem = name.split('.').next().unwrap_or("");
                if let Ok(index) = stem.parse::<u32>() {
                    indices.insert(index);
                }
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            intrinsics,
            indices: indices.into_iter().collect(),
            n_classes: labels.n_classes(),
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn load_frame(&self, index: u32) -> Result<PanopticFrame, DatasetError> {
        let name = format!("{index:06}");
        let pose_path = self.dir.join("pose").join(format!("{name}.txt"));
        let depth_path = self.dir.join("depth").join(format!("{name}.png"));
        let segm_path = self.dir.join("segm").join(format!("{name}.png"));
        let cls_path = self.dir.join("segm").join(format!("{name}.cls"));

        if !pose_path.is_file() {
            return Err(DatasetError::MissingFrameFile { frame: index, kind: "pose" });
        }
        if !depth_path.is_file() {
            return Err(DatasetError::MissingFrameFile { frame: index, kind: "depth" });
        }
        if !segm_path.is_file() {
            return Err(DatasetError::MissingFrameFile { frame: index, kind: "segment" });
        }
        if !cls_path.is_file() {
            return Err(DatasetError::MissingFrameFile { frame: index, kind: "segment class" });
        }

        let pose_text =
            std::fs::read_to_string(&pose_path).map_err(|e| io_err(&pose_path, e))?;
        let pose = parse_pose_text(&pose_text, index)?;
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        let depth_mm = load_u16_png(&depth_path, w, h)?;
        let depth = depth_mm.into_iter().map(|mm| mm as f32 / 1000.0).collect();
        let segment_image = load_u16_png(&segm_path, w, h)?;
        let cls_text = std::fs::read_to_string(&cls_path).map_err(|e| io_err(&cls_path, e))?;
        let segment_classes = parse_cls_text(&cls_text, index)?;

        for &class in segment_classes.values() {
            if class == 0 || class > self.n_classes {
                return Err(DatasetError::MalformedFrame {
                    frame: index,
                    reason: format!("class id {class} outside the label map"),
                });
            }
        }

        let frame = PanopticFrame {
            index,
            depth,
            segment_image,
            segment_classes,
            pose,
            intrinsics: self.intrinsics,
        };
        frame.validate()?;
        Ok(frame)
    }

    /// Frames in ascending index order.
    pub fn frames(&self) -> impl Iterator<Item = (u32, Result<PanopticFrame, DatasetError>)> + '_ {
        self.indices.iter().map(move |&i| (i, self.load_frame(i)))
    }

    /// Streams frames through a background loader thread so the next frame
    /// is read while the current one is being fused (queue capacity 2).
    pub fn stream_prefetched(
        self,
    ) -> mpsc::IntoIter<(u32, Result<PanopticFrame, DatasetError>)> {
        let (tx, rx) = mpsc::sync_channel(2);
        std::thread::spawn(move || {
            for &index in &self.indices {
                if tx.send((index, self.load_frame(index))).is_err() {
                    break;
                }
            }
        });
        rx.into_iter()
    }
}

/// Opens a sequence and eagerly loads every frame, in ascending index order.
pub fn load_sequence(
    dir: &Path,
    labels: &LabelMap,
) -> Result<Vec<(u32, Result<PanopticFrame, DatasetError>)>, DatasetError> {
    let loader = SequenceLoader::open(dir, labels)?;
    Ok(loader.frames().collect())
}
