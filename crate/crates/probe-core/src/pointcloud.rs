//! Scan and pose ingestion plus voxel-grid downsampling.
//!
//! Scan files are headerless little-endian `f32` quadruples
//! `(x, y, z, intensity)`; intensity is parsed and discarded. Pose files
//! are ASCII, one frame per line, 12 floats forming a row-major 3x4 rigid
//! transform.

use std::collections::HashMap;
use std::fs;
use std::hash::{BuildHasherDefault, Hasher};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};

/// A point in the sensor frame, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A scan as loaded from disk, with the count of dropped non-finite points
/// kept for diagnostics.
#[derive(Debug, Clone)]
pub struct LoadedScan {
    pub cloud: PointCloud,
    pub dropped_non_finite: usize,
}

/// One trajectory sample; `yaw` is present when the source carried a
/// rotation (pose files always do).
#[derive(Debug, Clone)]
pub struct TrajectoryFrame {
    pub frame_id: u64,
    pub position: [f64; 3],
    pub yaw: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub frames: Vec<TrajectoryFrame>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

const POINT_STRIDE: usize = 16;

/// Reads a headerless binary scan. Non-finite points are dropped and
/// counted; a byte length that is not a multiple of 16 is rejected.
pub fn load_scan_bin(path: impl AsRef<Path>) -> Result<LoadedScan> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_scan_bytes(&bytes).map_err(|reason| Error::MalformedScan {
        path: path.to_path_buf(),
        reason,
    })
}

fn parse_scan_bytes(bytes: &[u8]) -> std::result::Result<LoadedScan, String> {
    if !bytes.len().is_multiple_of(POINT_STRIDE) {
        return Err(format!(
            "byte length {} is not a multiple of {}",
            bytes.len(),
            POINT_STRIDE
        ));
    }
    let mut points = Vec::with_capacity(bytes.len() / POINT_STRIDE);
    let mut dropped = 0usize;
    for chunk in bytes.chunks_exact(POINT_STRIDE) {
        let x = LittleEndian::read_f32(&chunk[0..4]);
        let y = LittleEndian::read_f32(&chunk[4..8]);
        let z = LittleEndian::read_f32(&chunk[8..12]);
        // chunk[12..16] is intensity; nothing downstream consumes it.
        let p = Point3::new(x as f64, y as f64, z as f64);
        if p.is_finite() {
            points.push(p);
        } else {
            dropped += 1;
        }
    }
    Ok(LoadedScan {
        cloud: PointCloud::new(points),
        dropped_non_finite: dropped,
    })
}

/// Writes a cloud in the same binary layout, intensity zeroed.
///
/// Coordinates are narrowed to `f32`; reloading a written file reproduces
/// them bit-exactly.
pub fn save_scan_bin(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = vec![0u8; cloud.len() * POINT_STRIDE];
    for (p, chunk) in cloud
        .points
        .iter()
        .zip(bytes.chunks_exact_mut(POINT_STRIDE))
    {
        LittleEndian::write_f32(&mut chunk[0..4], p.x as f32);
        LittleEndian::write_f32(&mut chunk[4..8], p.y as f32);
        LittleEndian::write_f32(&mut chunk[8..12], p.z as f32);
        LittleEndian::write_f32(&mut chunk[12..16], 0.0);
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses a pose file into a trajectory. Positions come from the
/// translation column; yaw from `atan2(r21, r11)` of the rotation block.
pub fn load_poses(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut frames = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 12 {
            return Err(Error::PoseParse {
                path: path.to_path_buf(),
                line: line_no + 1,
                reason: format!("expected 12 fields, found {}", fields.len()),
            });
        }
        let mut m = [0.0f64; 12];
        for (i, f) in fields.iter().enumerate() {
            m[i] = f.parse().map_err(|_| Error::PoseParse {
                path: path.to_path_buf(),
                line: line_no + 1,
                reason: format!("field {} is not a number: {f:?}", i + 1),
            })?;
        }
        let position = [m[3], m[7], m[11]];
        if !position.iter().all(|v| v.is_finite()) {
            return Err(Error::PoseParse {
                path: path.to_path_buf(),
                line: line_no + 1,
                reason: "non-finite translation".into(),
            });
        }
        let yaw = m[4].atan2(m[0]);
        frames.push(TrajectoryFrame {
            frame_id: frames.len() as u64,
            position,
            yaw: Some(yaw),
        });
    }
    Ok(Trajectory { frames })
}

/// Voxel index on each axis is `floor(coordinate / v)`, so points exactly
/// on a boundary land in the higher-index voxel.
pub fn voxel_index(p: &Point3, voxel: f64) -> [i64; 3] {
    [
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    ]
}

// Fixed multiply-rotate hash; SipHash is needless overhead for voxel
// indices, and a seedless hasher keeps the grouping order reproducible.
#[derive(Default)]
struct VoxelHasher(u64);

impl Hasher for VoxelHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
    }

    fn write_i64(&mut self, v: i64) {
        self.0 = (self.0 ^ v as u64)
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .rotate_left(23);
    }

    fn write_usize(&mut self, v: usize) {
        self.write_i64(v as i64);
    }

    fn write_u64(&mut self, v: u64) {
        self.write_i64(v as i64);
    }
}

/// Replaces each occupied voxel of edge `voxel` by the centroid of its
/// points. Output order is the (deterministic) grouping order, not
/// sorted; everything downstream is order-invariant.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !voxel.is_finite() || voxel <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "voxel size must be positive, got {voxel}"
        )));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut cells: HashMap<[i64; 3], (f64, f64, f64, usize), BuildHasherDefault<VoxelHasher>> =
        HashMap::with_capacity_and_hasher(cloud.len(), BuildHasherDefault::default());
    for p in &cloud.points {
        let acc = cells
            .entry(voxel_index(p, voxel))
            .or_insert((0.0, 0.0, 0.0, 0));
        acc.0 += p.x;
        acc.1 += p.y;
        acc.2 += p.z;
        acc.3 += 1;
    }
    let points = cells
        .into_values()
        .map(|(sx, sy, sz, n)| {
            let n = n as f64;
            Point3::new(sx / n, sy / n, sz / n)
        })
        .collect();
    Ok(PointCloud::new(points))
}
