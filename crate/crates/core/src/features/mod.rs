//! Per-pixel feature maps.
//!
//! A [`FeatureCube`] bundles named `H x W` channels with the pixel validity
//! mask inherited from the projection. Submodules derive the channel
//! content: radiometric preprocessing ([`preprocess`]), eigenvalue geometry
//! descriptors ([`eigen`]), normal-vector pseudo-colours ([`normals`]),
//! channel statistics ([`corr`]) and tiling for fixed-size consumers
//! ([`tile`]).

pub mod corr;
pub mod eigen;
pub mod io;
pub mod normals;
pub mod preprocess;
pub mod tile;

pub use corr::correlation_matrix;
pub use eigen::{eigen_descriptors, EigenFeatures};
pub use io::{load_cube, save_cube};
pub use normals::normals_to_pseudo_rgb;
pub use preprocess::{preprocess_basic, PreprocessConfig};
pub use tile::{merge_tiles, tile, Tile, TileSet};

use crate::error::{Error, Result};
use crate::real::Real;
use ndarray::{Array2, Array3, ArrayView2, Axis};

/// Named channel planes over one raster, with the shared validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCube<T> {
    names: Vec<String>,
    /// Channel-major storage: `(C, H, W)`.
    data: Array3<T>,
    valid: Array2<bool>,
}

impl<T: Real> FeatureCube<T> {
    /// Builds a cube from parts, checking shapes and name uniqueness.
    pub fn new(names: Vec<String>, data: Array3<T>, valid: Array2<bool>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if names.len() != c {
            return Err(Error::dims("feature cube names", c, names.len()));
        }
        if valid.dim() != (h, w) {
            return Err(Error::dims(
                "feature cube valid mask",
                format!("{h}x{w}"),
                format!("{}x{}", valid.dim().0, valid.dim().1),
            ));
        }
        check_unique(&names)?;
        Ok(FeatureCube { names, data, valid })
    }

    /// Cube with no channels yet, ready for [`push_channel`].
    ///
    /// [`push_channel`]: FeatureCube::push_channel
    pub fn empty(valid: Array2<bool>) -> Self {
        let (h, w) = valid.dim();
        FeatureCube {
            names: Vec::new(),
            data: Array3::zeros((0, h, w)),
            valid,
        }
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn num_channels(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn data(&self) -> &Array3<T> {
        &self.data
    }

    pub fn valid(&self) -> &Array2<bool> {
        &self.valid
    }

    /// Number of valid pixels.
    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Channel plane by name.
    pub fn channel(&self, name: &str) -> Option<ArrayView2<'_, T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|c| self.data.index_axis(Axis(0), c))
    }

    /// Channel plane by position.
    pub fn channel_at(&self, c: usize) -> ArrayView2<'_, T> {
        self.data.index_axis(Axis(0), c)
    }

    /// Appends a channel; errors on shape mismatch or duplicate name.
    pub fn push_channel(&mut self, name: &str, plane: Array2<T>) -> Result<()> {
        let (h, w) = self.valid.dim();
        if plane.dim() != (h, w) {
            return Err(Error::dims(
                format!("channel {name:?}"),
                format!("{h}x{w}"),
                format!("{}x{}", plane.dim().0, plane.dim().1),
            ));
        }
        if self.names.iter().any(|n| n == name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate channel name {name:?}"
            )));
        }
        self.names.push(name.to_string());
        self.data
            .push(Axis(0), plane.view())
            .expect("plane shape already checked");
        Ok(())
    }

    /// Copies the named channels, in the given order, into a new cube.
    pub fn select(&self, wanted: &[&str]) -> Result<FeatureCube<T>> {
        let mut out = FeatureCube::empty(self.valid.clone());
        for &name in wanted {
            let plane = self.channel(name).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown channel {name:?}; cube has {:?}",
                    self.names
                ))
            })?;
            out.push_channel(name, plane.to_owned())?;
        }
        Ok(out)
    }
}

fn check_unique(names: &[String]) -> Result<()> {
    for (i, n) in names.iter().enumerate() {
        if n.is_empty() {
            return Err(Error::InvalidArgument("empty channel name".into()));
        }
        if names[..i].iter().any(|m| m == n) {
            return Err(Error::InvalidArgument(format!(
                "duplicate channel name {n:?}"
            )));
        }
    }
    Ok(())
}

/// Concatenates cubes channel-wise, in order.
///
/// All parts must share the raster shape and the exact validity mask; any
/// channel-name collision is an error.
pub fn stack<T: Real>(parts: &[&FeatureCube<T>]) -> Result<FeatureCube<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("stack of zero cubes".into()))?;
    let mut out = FeatureCube::empty(first.valid.clone());
    for part in parts {
        if part.valid != first.valid {
            return Err(Error::InvalidArgument(
                "stacked cubes disagree on the validity mask".into(),
            ));
        }
        for (c, name) in part.names.iter().enumerate() {
            out.push_channel(name, part.channel_at(c).to_owned())?;
        }
    }
    Ok(out)
}
