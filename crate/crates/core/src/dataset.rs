//! Random grounded cuboid buildings.

use rand::Rng;

use crate::voxel::{repair_pipeline, BooleanLattice, Dims, MaterialLattice};

pub const CUBOID_MIN: usize = 4;
pub const CUBOID_MAX: usize = 18;

/// A solid box with each side drawn from `CUBOID_MIN..=CUBOID_MAX` (clamped to
/// the lattice), standing on the ground at a random horizontal offset.
pub fn random_cuboid<R: Rng + ?Sized>(dims: Dims, rng: &mut R) -> BooleanLattice {
    let mut side = |limit: usize| rng.random_range(CUBOID_MIN.min(limit)..=CUBOID_MAX.min(limit));
    let (w, h, d) = (side(dims.x), side(dims.y), side(dims.z));
    let x0 = rng.random_range(0..=dims.x - w);
    let z0 = rng.random_range(0..=dims.z - d);
    BooleanLattice::from_fn(dims, |x, y, z| (x0..x0 + w).contains(&x) && y < h && (z0..z0 + d).contains(&z))
}

/// `count` repaired cuboids; infeasible draws are rejected and redrawn.
///
/// Panics if the lattice is too small for any cuboid to hold an entrance.
pub fn gen_cubes<R: Rng + ?Sized>(count: usize, dims: Dims, rng: &mut R) -> Vec<MaterialLattice> {
    let mut out = Vec::with_capacity(count);
    let mut misses = 0usize;
    while out.len() < count {
        let repaired = repair_pipeline(&random_cuboid(dims, rng));
        if repaired.feasible {
            out.push(repaired.lattice);
            misses = 0;
        } else {
            misses += 1;
            assert!(misses < 10_000, "no feasible cuboid fits lattice {dims}");
        }
    }
    out
}
