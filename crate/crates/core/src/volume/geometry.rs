//! Voxel grid geometry restricted to axis-aligned (signed permutation)
//! orientations.
//!
//! World space is RAS+: world axis 0 points Right, 1 Anterior, 2 Superior.
//! Voxel `(i, j, k)` is stored at linear index `i + nx * (j + ny * k)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where one voxel axis points in world space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AxisDirection {
    /// World axis (0 = R/L, 1 = A/P, 2 = S/I).
    pub world_axis: u8,
    /// `true` when increasing voxel index moves toward L, P or I.
    pub flipped: bool,
}

impl AxisDirection {
    pub const fn new(world_axis: u8, flipped: bool) -> Self {
        Self {
            world_axis,
            flipped,
        }
    }

    pub fn sign(self) -> f64 {
        if self.flipped {
            -1.0
        } else {
            1.0
        }
    }

    pub fn letter(self) -> char {
        match (self.world_axis, self.flipped) {
            (0, false) => 'R',
            (0, true) => 'L',
            (1, false) => 'A',
            (1, true) => 'P',
            (2, false) => 'S',
            (2, true) => 'I',
            _ => '?',
        }
    }

    fn from_letter(c: char) -> Option<Self> {
        Some(match c.to_ascii_uppercase() {
            'R' => Self::new(0, false),
            'L' => Self::new(0, true),
            'A' => Self::new(1, false),
            'P' => Self::new(1, true),
            'S' => Self::new(2, false),
            'I' => Self::new(2, true),
            _ => return None,
        })
    }
}

/// Orientation code: one [`AxisDirection`] per voxel axis. Exactly the 48
/// signed axis permutations are representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Orientation(pub [AxisDirection; 3]);

impl Orientation {
    pub const RAS: Orientation = Orientation([
        AxisDirection::new(0, false),
        AxisDirection::new(1, false),
        AxisDirection::new(2, false),
    ]);

    pub fn new(axes: [AxisDirection; 3]) -> Result<Self> {
        let o = Orientation(axes);
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; 3];
        for a in self.0 {
            if a.world_axis > 2 || seen[a.world_axis as usize] {
                return Err(Error::InvalidGeometry(format!(
                    "orientation {self} is not a signed axis permutation"
                )));
            }
            seen[a.world_axis as usize] = true;
        }
        Ok(())
    }

    pub fn is_canonical(&self) -> bool {
        *self == Self::RAS
    }

    /// Voxel axis that maps onto `world_axis`.
    pub fn voxel_axis_for(&self, world_axis: u8) -> usize {
        self.0
            .iter()
            .position(|a| a.world_axis == world_axis)
            .expect("validated orientation covers every world axis")
    }

    /// All 48 signed axis permutations.
    pub fn all() -> Vec<Orientation> {
        const PERMS: [[u8; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let mut out = Vec::with_capacity(48);
        for p in PERMS {
            for flips in 0..8u8 {
                out.push(Orientation([
                    AxisDirection::new(p[0], flips & 1 != 0),
                    AxisDirection::new(p[1], flips & 2 != 0),
                    AxisDirection::new(p[2], flips & 4 != 0),
                ]));
            }
        }
        out
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in self.0 {
            write!(f, "{}", a.letter())?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let letters: Vec<char> = s.chars().collect();
        if letters.len() != 3 {
            return Err(Error::InvalidGeometry(format!("bad orientation code `{s}`")));
        }
        let mut axes = [AxisDirection::new(0, false); 3];
        for (slot, c) in axes.iter_mut().zip(letters) {
            *slot = AxisDirection::from_letter(c)
                .ok_or_else(|| Error::InvalidGeometry(format!("bad orientation code `{s}`")))?;
        }
        Orientation::new(axes)
    }
}

impl TryFrom<String> for Orientation {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Orientation> for String {
    fn from(o: Orientation) -> String {
        o.to_string()
    }
}

/// Physical layout of a voxel grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    /// Millimeters per voxel along each voxel axis.
    pub spacing: [f64; 3],
    /// World position (mm, RAS+) of the center of voxel `(0, 0, 0)`.
    pub origin: [f64; 3],
    pub orientation: Orientation,
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], orientation: Orientation) -> Result<Self> {
        let g = Geometry {
            dims,
            spacing,
            origin,
            orientation,
        };
        g.validate()?;
        Ok(g)
    }

    /// Canonical grid with its first voxel at the world origin.
    pub fn canonical(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::new(dims, spacing, [0.0; 3], Orientation::RAS)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidGeometry(format!("zero-sized dims {:?}", self.dims)));
        }
        if self.spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidSpacing(format!("{:?}", self.spacing)));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGeometry(format!("non-finite origin {:?}", self.origin)));
        }
        self.orientation.validate()
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    /// World coordinate (mm) of a continuous voxel index.
    pub fn index_to_world(&self, idx: [f64; 3]) -> [f64; 3] {
        let mut w = self.origin;
        for (d, axis) in self.orientation.0.iter().enumerate() {
            w[axis.world_axis as usize] += axis.sign() * self.spacing[d] * idx[d];
        }
        w
    }

    /// Continuous voxel index of a world coordinate.
    pub fn world_to_index(&self, world: [f64; 3]) -> [f64; 3] {
        let mut idx = [0.0; 3];
        for (d, axis) in self.orientation.0.iter().enumerate() {
            let w = axis.world_axis as usize;
            idx[d] = (world[w] - self.origin[w]) / (axis.sign() * self.spacing[d]);
        }
        idx
    }

    /// Volume of one voxel in milliliters.
    pub fn voxel_volume_ml(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2] / 1000.0
    }

    pub fn same_grid(&self, other: &Geometry) -> bool {
        self == other
    }

    pub fn ensure_same(&self, other: &Geometry, what: &str) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{what}: dims {:?}/{:?}, spacing {:?}/{:?}, origin {:?}/{:?}, orientation {}/{}",
                self.dims,
                other.dims,
                self.spacing,
                other.spacing,
                self.origin,
                other.origin,
                self.orientation,
                other.orientation
            )))
        }
    }

    /// Per-axis affine map from voxel indices of `self` to continuous voxel
    /// indices of `source`: `source_index[axis] = scale * self_index[d] + offset`.
    /// Exact identity (`scale == 1`, `offset == 0`) when the grids coincide.
    pub fn index_map_into(&self, source: &Geometry) -> [AxisMap; 3] {
        let mut maps = [AxisMap::default(); 3];
        for (d, axis) in self.orientation.0.iter().enumerate() {
            let w = axis.world_axis;
            let sd = source.orientation.voxel_axis_for(w);
            let src_axis = source.orientation.0[sd];
            let src_step = src_axis.sign() * source.spacing[sd];
            let (scale, offset) = if self.spacing[d] == source.spacing[sd]
                && axis.flipped == src_axis.flipped
                && self.origin[w as usize] == source.origin[w as usize]
            {
                (1.0, 0.0)
            } else {
                (
                    axis.sign() * self.spacing[d] / src_step,
                    (self.origin[w as usize] - source.origin[w as usize]) / src_step,
                )
            };
            maps[d] = AxisMap {
                source_axis: sd,
                scale,
                offset,
            };
        }
        maps
    }
}

/// One axis of a grid-to-grid index map.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AxisMap {
    pub source_axis: usize,
    pub scale: f64,
    pub offset: f64,
}

impl AxisMap {
    #[inline]
    pub fn apply(&self, i: usize) -> f64 {
        self.scale * i as f64 + self.offset
    }
}

/// Rearranges `data` laid out on `geometry` into canonical RAS order.
/// World positions of all voxel centers are preserved.
pub fn reorient_data<V: Copy>(geometry: &Geometry, data: &[V]) -> (Geometry, Vec<V>) {
    if geometry.orientation.is_canonical() {
        return (geometry.clone(), data.to_vec());
    }
    let o = geometry.orientation;
    let mut dims = [0usize; 3];
    let mut spacing = [0.0; 3];
    let mut origin = geometry.origin;
    // source voxel axis feeding each canonical axis
    let mut src_axis = [0usize; 3];
    for w in 0..3u8 {
        let d = o.voxel_axis_for(w);
        src_axis[w as usize] = d;
        dims[w as usize] = geometry.dims[d];
        spacing[w as usize] = geometry.spacing[d];
        if o.0[d].flipped {
            origin[w as usize] -= geometry.spacing[d] * (geometry.dims[d] - 1) as f64;
        }
    }
    let out_geom = Geometry {
        dims,
        spacing,
        origin,
        orientation: Orientation::RAS,
    };
    let mut out = Vec::with_capacity(data.len());
    let mut src = [0usize; 3];
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                for (w, &c) in [i, j, k].iter().enumerate() {
                    let d = src_axis[w];
                    src[d] = if o.0[d].flipped { geometry.dims[d] - 1 - c } else { c };
                }
                out.push(data[geometry.linear_index(src[0], src[1], src[2])]);
            }
        }
    }
    (out_geom, out)
}
