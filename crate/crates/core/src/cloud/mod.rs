//! Point-cloud containers, PLY I/O, spatial indexing and subsampling.
//!
//! A [`PointCloud`] stores positions column-wise with optional intensity and
//! label columns, plus per-scan metadata ([`ScanMeta`]). Coordinates are
//! scanner-centred metres: [`PointCloud::recenter`] moves the cloud so the
//! scanner sits at the origin, which the projection and normal-orientation
//! stages assume.

pub mod index;
pub mod ply;
pub mod subsample;

pub use index::{adaptive_radius, AdaptiveRadius, SpatialIndex};
pub use ply::{load_ply, save_ply, save_ply_colored, PlyEncoding};
pub use subsample::{hybrid_subsample, voxel_downsample, voxel_downsample_ids, SubsampleConfig};

use crate::error::{Error, Result};
use crate::real::Real;

/// A single scan return: position plus optional radiometry and class label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    /// Raw radiometric return strength (unitless, nonnegative), if recorded.
    pub intensity: Option<T>,
    /// Semantic class id, if annotated. `0` is void.
    pub label: Option<u8>,
}

impl<T: Real> Point3<T> {
    /// Plain geometric point with no intensity or label.
    pub fn xyz(x: T, y: T, z: T) -> Self {
        Point3 {
            x,
            y,
            z,
            intensity: None,
            label: None,
        }
    }

    /// Position as an array.
    #[inline]
    pub fn position(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }
}

/// One entry of the class schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDef {
    pub id: u8,
    pub name: String,
    /// Display colour for mask previews.
    pub color: [u8; 3],
}

impl ClassDef {
    pub fn new(id: u8, name: &str, color: [u8; 3]) -> Self {
        ClassDef {
            id,
            name: name.to_string(),
            color,
        }
    }
}

/// Per-scan metadata carried alongside the raw points.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanMeta<T> {
    /// Scanner position in the cloud's coordinate frame. All-zero after
    /// [`PointCloud::recenter`] onto the scanner.
    pub scanner_origin: [T; 3],
    /// Identifier of the source scan (usually the file stem).
    pub source_id: String,
    /// Class schema: ids dense from 0, id 0 reserved for void.
    pub classes: Vec<ClassDef>,
}

impl<T: Real> ScanMeta<T> {
    /// Metadata with the default forest class schema and the scanner at the
    /// origin.
    pub fn new(source_id: &str) -> Self {
        ScanMeta {
            scanner_origin: [T::zero(); 3],
            source_id: source_id.to_string(),
            classes: default_classes(),
        }
    }

    /// Number of classes in the schema (void included).
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Checks the schema invariant: ids dense and ascending from 0.
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidArgument("empty class schema".into()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.id as usize != i {
                return Err(Error::InvalidArgument(format!(
                    "class schema must be dense from 0: slot {i} holds id {}",
                    c.id
                )));
            }
        }
        Ok(())
    }
}

impl<T: Real> Default for ScanMeta<T> {
    fn default() -> Self {
        ScanMeta::new("")
    }
}

/// Default schema: five forest classes plus void.
pub fn default_classes() -> Vec<ClassDef> {
    vec![
        ClassDef::new(0, "void", [0, 0, 0]),
        ClassDef::new(1, "ground_water", [120, 110, 90]),
        ClassDef::new(2, "stem", [160, 82, 45]),
        ClassDef::new(3, "canopy", [34, 139, 34]),
        ClassDef::new(4, "root", [205, 133, 63]),
        ClassDef::new(5, "object", [220, 20, 60]),
    ]
}

/// Column-wise point-cloud container.
///
/// The intensity and label columns either cover every point or are absent
/// entirely; the first pushed point fixes the schema.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    positions: Vec<[T; 3]>,
    intensities: Option<Vec<T>>,
    labels: Option<Vec<u8>>,
    pub meta: ScanMeta<T>,
}

impl<T: Real> PointCloud<T> {
    /// Empty cloud with the given metadata.
    pub fn new(meta: ScanMeta<T>) -> Self {
        PointCloud {
            positions: Vec::new(),
            intensities: None,
            labels: None,
            meta,
        }
    }

    /// Empty cloud that will hold `n` points.
    pub fn with_capacity(meta: ScanMeta<T>, n: usize) -> Self {
        PointCloud {
            positions: Vec::with_capacity(n),
            intensities: None,
            labels: None,
            meta,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn has_intensity(&self) -> bool {
        self.intensities.is_some()
    }

    pub fn has_labels(&self) -> bool {
        self.labels.is_some()
    }

    /// Appends a point.
    ///
    /// # Panics
    ///
    /// If the point's optional fields disagree with the columns established
    /// by the first point (schema mismatch is a caller bug, not a data
    /// condition).
    pub fn push(&mut self, p: Point3<T>) {
        if self.positions.is_empty() {
            self.intensities = p.intensity.map(|v| vec![v]);
            self.labels = p.label.map(|v| vec![v]);
            self.positions.push([p.x, p.y, p.z]);
            return;
        }
        match (&mut self.intensities, p.intensity) {
            (Some(col), Some(v)) => col.push(v),
            (None, None) => {}
            _ => panic!("point intensity schema mismatch"),
        }
        match (&mut self.labels, p.label) {
            (Some(col), Some(v)) => col.push(v),
            (None, None) => {}
            _ => panic!("point label schema mismatch"),
        }
        self.positions.push([p.x, p.y, p.z]);
    }

    /// The `i`-th point, reassembled from the columns.
    pub fn point(&self, i: usize) -> Point3<T> {
        let [x, y, z] = self.positions[i];
        Point3 {
            x,
            y,
            z,
            intensity: self.intensities.as_ref().map(|c| c[i]),
            label: self.labels.as_ref().map(|c| c[i]),
        }
    }

    /// Iterator over reassembled points, in storage order.
    pub fn iter(&self) -> impl Iterator<Item = Point3<T>> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    #[inline]
    pub fn position(&self, i: usize) -> [T; 3] {
        self.positions[i]
    }

    pub fn positions(&self) -> &[[T; 3]] {
        &self.positions
    }

    pub fn intensities(&self) -> Option<&[T]> {
        self.intensities.as_deref()
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Mutable label column, creating an all-void column if absent.
    pub fn labels_mut(&mut self) -> &mut [u8] {
        let n = self.len();
        self.labels.get_or_insert_with(|| vec![0; n])
    }

    /// Replaces the label column. Errors if the length disagrees.
    pub fn set_labels(&mut self, labels: Vec<u8>) -> Result<()> {
        if labels.len() != self.len() {
            return Err(Error::dims("set_labels", self.len(), labels.len()));
        }
        self.labels = Some(labels);
        Ok(())
    }

    /// Copies the selected points (in the given order) into a new cloud with
    /// the same metadata and columns.
    pub fn select(&self, ids: &[usize]) -> PointCloud<T> {
        PointCloud {
            positions: ids.iter().map(|&i| self.positions[i]).collect(),
            intensities: self
                .intensities
                .as_ref()
                .map(|c| ids.iter().map(|&i| c[i]).collect()),
            labels: self
                .labels
                .as_ref()
                .map(|c| ids.iter().map(|&i| c[i]).collect()),
            meta: self.meta.clone(),
        }
    }

    /// Translates every point (and the recorded scanner origin) by
    /// `-center`, so that `center` becomes the new coordinate origin.
    pub fn recenter(&mut self, center: [T; 3]) {
        for p in &mut self.positions {
            for a in 0..3 {
                p[a] = p[a] - center[a];
            }
        }
        for a in 0..3 {
            self.meta.scanner_origin[a] = self.meta.scanner_origin[a] - center[a];
        }
    }

    /// Recenters onto the recorded scanner position, leaving
    /// `scanner_origin == [0, 0, 0]`.
    pub fn recenter_on_scanner(&mut self) {
        self.recenter(self.meta.scanner_origin);
    }

    /// Euclidean distance of point `i` from the scanner origin.
    #[inline]
    pub fn range(&self, i: usize) -> T {
        let o = self.meta.scanner_origin;
        let [x, y, z] = self.positions[i];
        let (dx, dy, dz) = (x - o[0], y - o[1], z - o[2]);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Minimum z over all points. Errors on an empty cloud.
    pub fn min_z(&self) -> Result<T> {
        self.positions
            .iter()
            .map(|p| p[2])
            .fold(None, |acc: Option<T>, z| {
                Some(acc.map_or(z, |m| m.min(z)))
            })
            .ok_or_else(|| Error::DegenerateInput("min_z of empty cloud".into()))
    }
}
