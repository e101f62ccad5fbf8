//! Voxel lattices, the repair pipeline that turns a CPPN hull into a
//! building, the entrance constraint and per-building structural statistics.
//!
//! Cells are stored with `x` fastest, then `z`, then `y` (vertical), which is
//! also the byte order of the lattice JSON format.

use std::collections::VecDeque;
use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VoxelError {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("invalid lattice field `{field}`: {reason}")]
    Format { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Dims {
    pub const fn new(x: usize, y: usize, z: usize) -> Self {
        Self { x, y, z }
    }

    pub const fn cube(n: usize) -> Self {
        Self::new(n, n, n)
    }

    pub const fn len(&self) -> usize {
        self.x * self.y * self.z
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.x * (z + self.z * y)
    }

    #[inline]
    pub const fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.x;
        let rest = i / self.x;
        (x, rest / self.z, rest % self.z)
    }

    pub fn contains(&self, x: isize, y: isize, z: isize) -> bool {
        x >= 0 && y >= 0 && z >= 0 && (x as usize) < self.x && (y as usize) < self.y && (z as usize) < self.z
    }

    pub fn on_boundary(&self, x: usize, y: usize, z: usize) -> bool {
        x == 0 || y == 0 || z == 0 || x + 1 == self.x || y + 1 == self.y || z + 1 == self.z
    }

    /// In-lattice face neighbours of cell `i`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (x, y, z) = self.coords(i);
        FACES.iter().filter_map(move |&(dx, dy, dz)| {
            let (nx, ny, nz) = (x as isize + dx, y as isize + dy, z as isize + dz);
            self.contains(nx, ny, nz)
                .then(|| self.index(nx as usize, ny as usize, nz as usize))
        })
    }

    fn as_vec(&self) -> Vec<usize> {
        vec![self.x, self.y, self.z]
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.x, self.y, self.z)
    }
}

pub const FACES: [(isize, isize, isize); 6] = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];

/// Raw filled/empty hull emitted by a CPPN.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BooleanLattice {
    dims: Dims,
    cells: Vec<bool>,
}

impl BooleanLattice {
    pub fn empty(dims: Dims) -> Self {
        Self {
            dims,
            cells: vec![false; dims.len()],
        }
    }

    pub fn full(dims: Dims) -> Self {
        Self {
            dims,
            cells: vec![true; dims.len()],
        }
    }

    pub fn from_cells(dims: Dims, cells: Vec<bool>) -> Result<Self, VoxelError> {
        if cells.len() != dims.len() {
            return Err(VoxelError::DimensionMismatch {
                expected: vec![dims.len()],
                got: vec![cells.len()],
            });
        }
        Ok(Self { dims, cells })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let cells = (0..dims.len())
            .map(|i| {
                let (x, y, z) = dims.coords(i);
                f(x, y, z)
            })
            .collect();
        Self { dims, cells }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.cells[self.dims.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, filled: bool) {
        let i = self.dims.index(x, y, z);
        self.cells[i] = filled;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
#[repr(u8)]
pub enum Material {
    #[default]
    ExteriorAir = 0,
    InteriorAir = 1,
    Floor = 2,
    Wall = 3,
    Roof = 4,
}

impl Material {
    pub const COUNT: usize = 5;
    pub const ALL: [Material; 5] = [
        Material::ExteriorAir,
        Material::InteriorAir,
        Material::Floor,
        Material::Wall,
        Material::Roof,
    ];
    pub const NAMES: [&'static str; 5] = ["exterior_air", "interior_air", "floor", "wall", "roof"];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self as usize]
    }

    pub fn is_solid(self) -> bool {
        matches!(self, Material::Floor | Material::Wall | Material::Roof)
    }
}

/// A building: one material per voxel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaterialLattice {
    dims: Dims,
    cells: Vec<Material>,
}

impl MaterialLattice {
    pub fn filled(dims: Dims, material: Material) -> Self {
        Self {
            dims,
            cells: vec![material; dims.len()],
        }
    }

    pub fn from_cells(dims: Dims, cells: Vec<Material>) -> Result<Self, VoxelError> {
        if cells.len() != dims.len() {
            return Err(VoxelError::DimensionMismatch {
                expected: vec![dims.len()],
                got: vec![cells.len()],
            });
        }
        Ok(Self { dims, cells })
    }

    pub fn from_ids(dims: Dims, ids: &[u8]) -> Result<Self, VoxelError> {
        let cells = ids
            .iter()
            .map(|&id| {
                Material::from_id(id).ok_or_else(|| VoxelError::Format {
                    field: "cells",
                    reason: format!("material id {id} out of range 0..5"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_cells(dims, cells)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn cells(&self) -> &[Material] {
        &self.cells
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> Material {
        self.cells[self.dims.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, m: Material) {
        let i = self.dims.index(x, y, z);
        self.cells[i] = m;
    }

    pub fn ids(&self) -> Vec<u8> {
        self.cells.iter().map(|m| m.id()).collect()
    }

    pub fn count(&self, m: Material) -> usize {
        self.cells.iter().filter(|&&c| c == m).count()
    }

    pub fn solid_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_solid()).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("lattice serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, VoxelError> {
        let raw: LatticeJson = serde_json::from_str(s).map_err(|e| VoxelError::Format {
            field: "document",
            reason: e.to_string(),
        })?;
        raw.try_into()
    }

    /// `x,y,z,material` with one row per voxel in index order; `material` is
    /// the numeric id.
    pub fn to_csv_voxels(&self) -> String {
        let mut out = String::with_capacity(16 * self.cells.len());
        out.push_str("x,y,z,material\n");
        for (i, m) in self.cells.iter().enumerate() {
            let (x, y, z) = self.dims.coords(i);
            out.push_str(&format!("{x},{y},{z},{}\n", m.id()));
        }
        out
    }

    /// Inverse of [`MaterialLattice::to_csv_voxels`]. Rows may come in any
    /// order but must cover every voxel exactly once; dims are inferred.
    pub fn from_csv_voxels(s: &str) -> Result<Self, VoxelError> {
        let bad = |reason: String| VoxelError::Format { field: "csv", reason };
        let mut lines = s.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == "x,y,z,material" => {}
            _ => return Err(bad("missing header x,y,z,material".into())),
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(bad(format!("row {}: expected 4 fields", n + 1)));
            }
            let num = |v: &str| v.parse::<usize>().map_err(|e| bad(format!("row {}: {e}", n + 1)));
            let id = num(f[3])?;
            let m = u8::try_from(id)
                .ok()
                .and_then(Material::from_id)
                .ok_or_else(|| bad(format!("row {}: material id {id} out of range 0..5", n + 1)))?;
            rows.push((num(f[0])?, num(f[1])?, num(f[2])?, m));
        }
        let extent = |f: fn(&(usize, usize, usize, Material)) -> usize| rows.iter().map(f).max().map_or(0, |v| v + 1);
        let dims = Dims::new(extent(|r| r.0), extent(|r| r.1), extent(|r| r.2));
        if rows.len() != dims.len() {
            return Err(bad(format!("{} rows for dims {dims}", rows.len())));
        }
        let mut cells = vec![None; dims.len()];
        for (x, y, z, m) in rows {
            let slot = &mut cells[dims.index(x, y, z)];
            if slot.replace(m).is_some() {
                return Err(bad(format!("voxel ({x},{y},{z}) listed twice")));
            }
        }
        Self::from_cells(dims, cells.into_iter().map(|c| c.expect("every voxel listed")).collect())
    }
}

/// Wire form: `{"dims":[x,y,z],"materials":[...],"cells":"<base64 ids>"}`.
#[derive(Serialize, Deserialize)]
struct LatticeJson {
    dims: [usize; 3],
    materials: Vec<String>,
    cells: String,
}

impl From<&MaterialLattice> for LatticeJson {
    fn from(l: &MaterialLattice) -> Self {
        Self {
            dims: [l.dims.x, l.dims.y, l.dims.z],
            materials: Material::NAMES.iter().map(|s| s.to_string()).collect(),
            cells: B64.encode(l.ids()),
        }
    }
}

impl TryFrom<LatticeJson> for MaterialLattice {
    type Error = VoxelError;

    fn try_from(raw: LatticeJson) -> Result<Self, VoxelError> {
        if raw.materials != Material::NAMES {
            return Err(VoxelError::Format {
                field: "materials",
                reason: format!("expected {:?}", Material::NAMES),
            });
        }
        let bytes = B64.decode(raw.cells.as_bytes()).map_err(|e| VoxelError::Format {
            field: "cells",
            reason: e.to_string(),
        })?;
        let dims = Dims::new(raw.dims[0], raw.dims[1], raw.dims[2]);
        if bytes.len() != dims.len() {
            return Err(VoxelError::Format {
                field: "cells",
                reason: format!("{} bytes for dims {dims}", bytes.len()),
            });
        }
        MaterialLattice::from_ids(dims, &bytes)
    }
}

impl Serialize for MaterialLattice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        LatticeJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for MaterialLattice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        LatticeJson::deserialize(d)?.try_into().map_err(serde::de::Error::custom)
    }
}

/// Per-voxel channel vectors, channel-major: `data[c * N + cell]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotLattice<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Scalar> OneHotLattice<T> {
    pub fn from_data(dims: Dims, data: Vec<T>) -> Result<Self, VoxelError> {
        if data.len() != Material::COUNT * dims.len() {
            return Err(VoxelError::DimensionMismatch {
                expected: vec![Material::COUNT, dims.y, dims.z, dims.x],
                got: vec![data.len()],
            });
        }
        Ok(Self { dims, data })
    }

    /// Reads a `[1, 5, y, z, x]` or `[5, y, z, x]` tensor (decoder output).
    pub fn from_tensor(dims: Dims, t: &Tensor<T>) -> Result<Self, VoxelError> {
        let s = t.shape();
        let ok = s == [1, 5, dims.y, dims.z, dims.x] || s == [5, dims.y, dims.z, dims.x];
        if !ok {
            return Err(VoxelError::DimensionMismatch {
                expected: vec![1, 5, dims.y, dims.z, dims.x],
                got: s.to_vec(),
            });
        }
        Self::from_data(dims, t.data().to_vec())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn channel(&self, m: Material) -> &[T] {
        let n = self.dims.len();
        &self.data[m as usize * n..(m as usize + 1) * n]
    }

    /// `[1, 5, y, z, x]` tensor for the encoder.
    pub fn to_tensor(&self) -> Tensor<T> {
        let d = self.dims;
        Tensor::from_vec(&[1, 5, d.y, d.z, d.x], self.data.clone()).expect("length checked")
    }
}

pub fn to_onehot<T: Scalar>(lattice: &MaterialLattice) -> OneHotLattice<T> {
    let n = lattice.dims.len();
    let mut data = vec![T::zero(); Material::COUNT * n];
    for (i, m) in lattice.cells.iter().enumerate() {
        data[*m as usize * n + i] = T::one();
    }
    OneHotLattice {
        dims: lattice.dims,
        data,
    }
}

/// Per-voxel argmax over channels; ties go to the lowest material id.
pub fn from_onehot<T: Scalar>(oh: &OneHotLattice<T>) -> MaterialLattice {
    let n = oh.dims.len();
    let cells = (0..n)
        .map(|i| {
            let mut best = 0;
            for c in 1..Material::COUNT {
                if oh.data[c * n + i] > oh.data[best * n + i] {
                    best = c;
                }
            }
            Material::ALL[best]
        })
        .collect();
    MaterialLattice { dims: oh.dims, cells }
}

/// Keeps only filled voxels face-connected to a filled `y = 0` voxel.
pub fn flood_fill_filter(hull: &BooleanLattice) -> BooleanLattice {
    let d = hull.dims;
    let mut keep = vec![false; d.len()];
    let mut queue = VecDeque::new();
    for z in 0..d.z {
        for x in 0..d.x {
            let i = d.index(x, 0, z);
            if hull.cells[i] {
                keep[i] = true;
                queue.push_back(i);
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        for n in d.neighbors(i) {
            if hull.cells[n] && !keep[n] {
                keep[n] = true;
                queue.push_back(n);
            }
        }
    }
    BooleanLattice { dims: d, cells: keep }
}

/// Keeps only the largest face-connected component. Among equally large
/// components, the one whose first voxel in `(x, y, z)` lexicographic order
/// comes earliest wins.
pub fn largest_component(hull: &BooleanLattice) -> BooleanLattice {
    let d = hull.dims;
    let mut label = vec![usize::MAX; d.len()];
    let mut best: Option<(usize, usize)> = None; // (label, size)
    let mut next = 0;
    let mut queue = VecDeque::new();
    for x in 0..d.x {
        for y in 0..d.y {
            for z in 0..d.z {
                let seed = d.index(x, y, z);
                if !hull.cells[seed] || label[seed] != usize::MAX {
                    continue;
                }
                let mut size = 0;
                label[seed] = next;
                queue.push_back(seed);
                while let Some(i) = queue.pop_front() {
                    size += 1;
                    for n in d.neighbors(i) {
                        if hull.cells[n] && label[n] == usize::MAX {
                            label[n] = next;
                            queue.push_back(n);
                        }
                    }
                }
                if best.is_none_or(|(_, s)| size > s) {
                    best = Some((next, size));
                }
                next += 1;
            }
        }
    }
    let cells = match best {
        Some((keep, _)) => label.iter().map(|&l| l == keep).collect(),
        None => vec![false; d.len()],
    };
    BooleanLattice { dims: d, cells }
}

/// Empty voxels reachable from the lattice boundary through empty voxels.
pub fn boundary_reachable_empty(hull: &BooleanLattice) -> Vec<bool> {
    let d = hull.dims;
    let mut seen = vec![false; d.len()];
    let mut queue = VecDeque::new();
    for i in 0..d.len() {
        let (x, y, z) = d.coords(i);
        if !hull.cells[i] && d.on_boundary(x, y, z) {
            seen[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for n in d.neighbors(i) {
            if !hull.cells[n] && !seen[n] {
                seen[n] = true;
                queue.push_back(n);
            }
        }
    }
    seen
}

/// Rule-based material assignment, first matching rule wins:
///
/// 1. filled, `y = 0` → Floor
/// 2. filled, empty (or nothing) directly above → Roof
/// 3. filled with all six neighbours inside the lattice and filled → InteriorAir
///    (carves the inside of solid masses); empty and not reachable from the
///    lattice boundary through empty voxels → InteriorAir
/// 4. remaining empty → ExteriorAir
/// 5. remaining filled → Wall
pub fn assign_materials(hull: &BooleanLattice) -> MaterialLattice {
    let d = hull.dims;
    let outside = boundary_reachable_empty(hull);
    let cells = (0..d.len())
        .map(|i| {
            let (x, y, z) = d.coords(i);
            if hull.cells[i] {
                if y == 0 {
                    Material::Floor
                } else if y + 1 == d.y || !hull.cells[d.index(x, y + 1, z)] {
                    Material::Roof
                } else if !d.on_boundary(x, y, z) && d.neighbors(i).all(|n| hull.cells[n]) {
                    Material::InteriorAir
                } else {
                    Material::Wall
                }
            } else if outside[i] {
                Material::ExteriorAir
            } else {
                Material::InteriorAir
            }
        })
        .collect();
    MaterialLattice { dims: d, cells }
}

const HORIZONTAL: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// True iff some Floor voxel has InteriorAir directly above it and, in one of
/// the four horizontal directions, a neighbouring column that is Wall at
/// heights +1, +2 and +3.
pub fn check_entrance(lattice: &MaterialLattice) -> bool {
    find_entrance(lattice).is_some()
}

/// The first entrance site found as `(x, y, z, (dx, dz))`.
pub fn find_entrance(lattice: &MaterialLattice) -> Option<(usize, usize, usize, (isize, isize))> {
    let d = lattice.dims;
    for i in 0..d.len() {
        if lattice.cells[i] != Material::Floor {
            continue;
        }
        let (x, y, z) = d.coords(i);
        if y + 3 >= d.y || lattice.get(x, y + 1, z) != Material::InteriorAir {
            continue;
        }
        for &(dx, dz) in &HORIZONTAL {
            let (nx, nz) = (x as isize + dx, z as isize + dz);
            if !d.contains(nx, y as isize, nz) {
                continue;
            }
            let (nx, nz) = (nx as usize, nz as usize);
            if (1..=3).all(|h| lattice.get(nx, y + h, nz) == Material::Wall) {
                return Some((x, y, z, (dx, dz)));
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RepairOutcome {
    pub lattice: MaterialLattice,
    pub feasible: bool,
}

/// Flood-fill filter, largest component, material assignment, entrance check.
pub fn repair_pipeline(hull: &BooleanLattice) -> RepairOutcome {
    let grounded = flood_fill_filter(hull);
    let main = largest_component(&grounded);
    let lattice = assign_materials(&main);
    let feasible = check_entrance(&lattice);
    RepairOutcome { lattice, feasible }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralStats {
    /// Extent `(w, h, d)` along x, y, z of the tight box around solid voxels.
    pub bounding_box: (usize, usize, usize),
    pub symmetry: f64,
    pub instability: f64,
    pub surface_area: usize,
}

/// Statistics over solid (Floor, Wall, Roof) voxels.
///
/// * symmetry: best over the mirror planes through the x and z centres of the
///   fraction of solid voxels whose mirror image is also solid;
/// * instability: fraction of solid voxels above `y = 0` resting on a
///   non-solid voxel;
/// * surface area: solid faces touching a non-solid voxel or the boundary.
pub fn structural_stats(lattice: &MaterialLattice) -> StructuralStats {
    let d = lattice.dims;
    let solid = |x: usize, y: usize, z: usize| lattice.get(x, y, z).is_solid();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut count = 0usize;
    let (mut mirrored_x, mut mirrored_z) = (0usize, 0usize);
    let (mut elevated, mut unsupported) = (0usize, 0usize);
    let mut surface = 0usize;
    for i in 0..d.len() {
        if !lattice.cells[i].is_solid() {
            continue;
        }
        let (x, y, z) = d.coords(i);
        count += 1;
        for (a, v) in [x, y, z].into_iter().enumerate() {
            lo[a] = lo[a].min(v);
            hi[a] = hi[a].max(v);
        }
        if solid(d.x - 1 - x, y, z) {
            mirrored_x += 1;
        }
        if solid(x, y, d.z - 1 - z) {
            mirrored_z += 1;
        }
        if y > 0 {
            elevated += 1;
            if !solid(x, y - 1, z) {
                unsupported += 1;
            }
        }
        for &(dx, dy, dz) in &FACES {
            let (nx, ny, nz) = (x as isize + dx, y as isize + dy, z as isize + dz);
            if !d.contains(nx, ny, nz) || !solid(nx as usize, ny as usize, nz as usize) {
                surface += 1;
            }
        }
    }
    if count == 0 {
        return StructuralStats {
            bounding_box: (0, 0, 0),
            symmetry: 0.0,
            instability: 0.0,
            surface_area: 0,
        };
    }
    StructuralStats {
        bounding_box: (hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1),
        symmetry: mirrored_x.max(mirrored_z) as f64 / count as f64,
        instability: if elevated == 0 {
            0.0
        } else {
            unsupported as f64 / elevated as f64
        },
        surface_area: surface,
    }
}

pub(crate) fn dims_error(expected: Dims, got: Dims) -> VoxelError {
    VoxelError::DimensionMismatch {
        expected: expected.as_vec(),
        got: got.as_vec(),
    }
}
