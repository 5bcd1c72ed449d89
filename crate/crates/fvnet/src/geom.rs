//! Shared geometric types and exact oriented-box geometry.
//!
//! Everything here is a pure function on immutable values; all operations are
//! safe to call concurrently. Distances are meters, angles radians. The
//! sensor frame is right-handed with X forward, Y left, Z up.

use std::f64::consts::TAU;

/// A single LiDAR return: position in meters plus a unitless intensity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Reflectance in `[0, 1]`.
    pub intensity: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    /// Radial distance in the XY plane, `sqrt(x^2 + y^2)`.
    pub fn radial(&self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    /// Full 3D range from the sensor origin.
    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// An ordered collection of points in the sensor frame.
///
/// Order is preserved end-to-end; indices into `points` identify points
/// across the whole pipeline (projection provenance, extrusion results).
#[derive(Clone, Debug, Default, PartialEq)]
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

/// An amodal oriented 3D box.
///
/// `heading` is measured counter-clockwise from +X about +Z and is stored
/// normalized to `[0, 2pi)`. `l` spans the heading axis, `w` its horizontal
/// perpendicular, `h` the Z axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub heading: f64,
}

impl Box3D {
    pub fn new(cx: f64, cy: f64, cz: f64, h: f64, w: f64, l: f64, heading: f64) -> Self {
        Self {
            cx,
            cy,
            cz,
            h,
            w,
            l,
            heading: normalize_angle(heading),
        }
    }

    pub fn volume(&self) -> f64 {
        self.h * self.w * self.l
    }

    pub fn center(&self) -> [f64; 3] {
        [self.cx, self.cy, self.cz]
    }
}

/// Wrap an angle into `[0, 2pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Object categories. `Pedestrian` and `Cyclist` merge into
/// [`Stage1Class::Person`] for proposal generation and are told apart again
/// in the parameter-estimation stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClassId {
    Car,
    Pedestrian,
    Cyclist,
}

impl ClassId {
    pub fn stage1(&self) -> Stage1Class {
        match self {
            ClassId::Car => Stage1Class::Car,
            ClassId::Pedestrian | ClassId::Cyclist => Stage1Class::Person,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ClassId::Car => "Car",
            ClassId::Pedestrian => "Pedestrian",
            ClassId::Cyclist => "Cyclist",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "Car" => Some(ClassId::Car),
            "Pedestrian" => Some(ClassId::Pedestrian),
            "Cyclist" => Some(ClassId::Cyclist),
            _ => None,
        }
    }
}

/// The two classes the proposal stage detects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage1Class {
    Car,
    Person,
}

impl Stage1Class {
    /// Channel index in the class-score layout.
    pub fn index(&self) -> usize {
        match self {
            Stage1Class::Car => 0,
            Stage1Class::Person => 1,
        }
    }
}

/// Rotate a point counter-clockwise about +Z. Z and intensity are unchanged.
pub fn rotate_about_z(p: &Point3, angle: f64) -> Point3 {
    let (s, c) = angle.sin_cos();
    Point3 {
        x: c * p.x - s * p.y,
        y: s * p.x + c * p.y,
        z: p.z,
        intensity: p.intensity,
    }
}

/// The 8 corners of an oriented box.
///
/// Ordering is fixed: corners 0..4 are the bottom face (z = cz - h/2)
/// counter-clockwise viewed from +Z, starting at the (+l/2, +w/2) local
/// corner; corners 4..8 repeat the same XY order on the top face. The corner
/// loss and the rotated IoU both rely on this ordering being stable.
pub fn box_corners(b: &Box3D) -> [Point3; 8] {
    let (s, c) = b.heading.sin_cos();
    let hl = b.l / 2.0;
    let hw = b.w / 2.0;
    let hh = b.h / 2.0;
    // Local XY offsets, CCW from +Z.
    let local = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
    let mut out = [Point3::new(0.0, 0.0, 0.0, 0.0); 8];
    for (i, &(lx, ly)) in local.iter().enumerate() {
        let x = b.cx + c * lx - s * ly;
        let y = b.cy + s * lx + c * ly;
        out[i] = Point3::new(x, y, b.cz - hh, 0.0);
        out[i + 4] = Point3::new(x, y, b.cz + hh, 0.0);
    }
    out
}

/// Footprint of the box in the XY plane: the 4 bottom corners as `(x, y)`
/// pairs, counter-clockwise.
pub fn box_footprint(b: &Box3D) -> [(f64, f64); 4] {
    let cs = box_corners(b);
    [
        (cs[0].x, cs[0].y),
        (cs[1].x, cs[1].y),
        (cs[2].x, cs[2].y),
        (cs[3].x, cs[3].y),
    ]
}

/// True iff the point lies inside the oriented box. Boundary counts as
/// inside, so surface-sampled points are members of their own box.
pub fn point_in_box(p: &Point3, b: &Box3D) -> bool {
    // Inverse-rotate the offset into the box frame, then test axis-aligned.
    let dx = p.x - b.cx;
    let dy = p.y - b.cy;
    let dz = p.z - b.cz;
    let (s, c) = b.heading.sin_cos();
    let lx = c * dx + s * dy;
    let ly = -s * dx + c * dy;
    lx.abs() <= b.l / 2.0 && ly.abs() <= b.w / 2.0 && dz.abs() <= b.h / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rotate_oracle(p: &Point3, angle: f64) -> Point3 {
        // Direct 2x2 rotation-matrix evaluation, independent of the
        // implementation path.
        let m = [[angle.cos(), -angle.sin()], [angle.sin(), angle.cos()]];
        Point3::new(
            m[0][0] * p.x + m[0][1] * p.y,
            m[1][0] * p.x + m[1][1] * p.y,
            p.z,
            p.intensity,
        )
    }

    #[test]
    fn rotate_identity() {
        let p = Point3::new(1.0, 0.0, 0.0, 0.0);
        let r = rotate_about_z(&p, 0.0);
        assert_eq!(r, p);
    }

    #[test]
    fn rotate_quarter_turn() {
        let p = Point3::new(1.0, 0.0, 0.0, 0.0);
        let r = rotate_about_z(&p, FRAC_PI_2);
        assert!((r.x - 0.0).abs() < 1e-15);
        assert!((r.y - 1.0).abs() < 1e-15);
        assert_eq!(r.z, 0.0);
    }

    #[test]
    fn rotate_matches_matrix_oracle() {
        let p = Point3::new(0.3, -1.2, 2.0, 0.7);
        let got = rotate_about_z(&p, 0.7);
        let want = rotate_oracle(&p, 0.7);
        assert!((got.x - want.x).abs() < 1e-15);
        assert!((got.y - want.y).abs() < 1e-15);
        assert_eq!(got.z, want.z);
        assert_eq!(got.intensity, want.intensity);
    }

    #[test]
    fn rotate_preserves_norm_and_composes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let p = Point3::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(0.0..1.0),
            );
            let a = rng.random_range(-PI..PI);
            let b = rng.random_range(-PI..PI);
            let r = rotate_about_z(&p, a);
            let n0 = (p.x * p.x + p.y * p.y).sqrt();
            let n1 = (r.x * r.x + r.y * r.y).sqrt();
            assert!((n0 - n1).abs() < 1e-12);
            let ab = rotate_about_z(&rotate_about_z(&p, a), b);
            let sum = rotate_about_z(&p, a + b);
            assert!((ab.x - sum.x).abs() < 1e-12);
            assert!((ab.y - sum.y).abs() < 1e-12);
        }
    }

    fn corners_oracle(b: &Box3D) -> Vec<Point3> {
        // Brute force: rotate the 8 local offsets, translate.
        let mut out = Vec::new();
        for dz in [-1.0, 1.0] {
            for (dx, dy) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
                let local = Point3::new(dx * b.l / 2.0, dy * b.w / 2.0, dz * b.h / 2.0, 0.0);
                let r = rotate_about_z(&local, b.heading);
                out.push(Point3::new(r.x + b.cx, r.y + b.cy, r.z + b.cz, 0.0));
            }
        }
        out
    }

    #[test]
    fn corners_axis_aligned_unit_cube() {
        let b = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let cs = box_corners(&b);
        for c in &cs {
            assert!((c.x.abs() - 0.5).abs() < 1e-15);
            assert!((c.y.abs() - 0.5).abs() < 1e-15);
            assert!((c.z.abs() - 0.5).abs() < 1e-15);
        }
        // All 8 sign combinations present exactly once.
        let mut seen = std::collections::HashSet::new();
        for c in &cs {
            seen.insert((c.x > 0.0, c.y > 0.0, c.z > 0.0));
        }
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn corners_quarter_turn_same_point_set() {
        let b0 = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let b1 = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, FRAC_PI_2);
        let c0 = box_corners(&b0);
        let c1 = box_corners(&b1);
        for a in &c1 {
            assert!(c0
                .iter()
                .any(|b| (a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12 && a.z == b.z));
        }
    }

    #[test]
    fn corners_match_offset_oracle() {
        let b = Box3D::new(1.0, 2.0, 3.0, 2.0, 1.0, 4.0, 0.5);
        let got = box_corners(&b);
        let want = corners_oracle(&b);
        // Oracle enumerates bottom face then top face in the same XY order.
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g.x - w.x).abs() < 1e-12);
            assert!((g.y - w.y).abs() < 1e-12);
            assert!((g.z - w.z).abs() < 1e-12);
        }
    }

    #[test]
    fn corners_mean_is_center_and_edges_reproduce_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let b = Box3D::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..6.0),
                rng.random_range(0.0..TAU),
            );
            let cs = box_corners(&b);
            let mx = cs.iter().map(|c| c.x).sum::<f64>() / 8.0;
            let my = cs.iter().map(|c| c.y).sum::<f64>() / 8.0;
            let mz = cs.iter().map(|c| c.z).sum::<f64>() / 8.0;
            assert!((mx - b.cx).abs() < 1e-12);
            assert!((my - b.cy).abs() < 1e-12);
            assert!((mz - b.cz).abs() < 1e-12);

            // The 12 box edges: each of h, w, l appears exactly 4 times.
            let edges = [
                (0, 1),
                (1, 2),
                (2, 3),
                (3, 0),
                (4, 5),
                (5, 6),
                (6, 7),
                (7, 4),
                (0, 4),
                (1, 5),
                (2, 6),
                (3, 7),
            ];
            let mut counts = [0usize; 3]; // h, w, l
            for &(i, j) in &edges {
                let d = ((cs[i].x - cs[j].x).powi(2)
                    + (cs[i].y - cs[j].y).powi(2)
                    + (cs[i].z - cs[j].z).powi(2))
                .sqrt();
                if (d - b.h).abs() < 1e-9 {
                    counts[0] += 1;
                } else if (d - b.w).abs() < 1e-9 {
                    counts[1] += 1;
                } else if (d - b.l).abs() < 1e-9 {
                    counts[2] += 1;
                }
            }
            assert_eq!(counts, [4, 4, 4]);
        }
    }

    #[test]
    fn point_in_box_center_and_height() {
        let b = Box3D::new(1.0, -2.0, 0.5, 2.0, 1.0, 4.0, 1.1);
        assert!(point_in_box(&Point3::new(b.cx, b.cy, b.cz, 0.0), &b));
        let above = Point3::new(b.cx, b.cy, b.cz + b.h, 0.0);
        assert!(!point_in_box(&above, &b));
    }

    #[test]
    fn point_in_box_matches_inverse_rotation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let b = Box3D::new(2.0, 1.0, -0.5, 1.5, 1.8, 4.2, 0.0);
        let heading = 0.9;
        let rotated = Box3D::new(b.cx, b.cy, b.cz, b.h, b.w, b.l, heading);
        for _ in 0..1000 {
            let p = Point3::new(
                rng.random_range(-4.0..8.0),
                rng.random_range(-4.0..6.0),
                rng.random_range(-3.0..2.0),
                0.0,
            );
            // Oracle: rotate the point's offset about the box center by
            // -heading, then test against the axis-aligned box.
            let off = Point3::new(p.x - b.cx, p.y - b.cy, p.z - b.cz, 0.0);
            let back = rotate_about_z(&off, -heading);
            let unrot = Point3::new(back.x + b.cx, back.y + b.cy, back.z + b.cz, 0.0);
            let want = point_in_box(&unrot, &b);
            assert_eq!(point_in_box(&p, &rotated), want);
        }
    }

    #[test]
    fn point_in_box_invariant_under_simultaneous_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let b = Box3D::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                0.0,
                1.5,
                1.8,
                4.0,
                rng.random_range(0.0..TAU),
            );
            let p = Point3::new(
                b.cx + rng.random_range(-3.0..3.0),
                b.cy + rng.random_range(-3.0..3.0),
                rng.random_range(-1.0..1.0),
                0.0,
            );
            let a = rng.random_range(0.0..TAU);
            let before = point_in_box(&p, &b);
            let pr = rotate_about_z(&p, a);
            let cr = rotate_about_z(&Point3::new(b.cx, b.cy, b.cz, 0.0), a);
            let br = Box3D::new(cr.x, cr.y, cr.z, b.h, b.w, b.l, b.heading + a);
            assert_eq!(point_in_box(&pr, &br), before);
        }
    }

    #[test]
    fn heading_normalized() {
        let b = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, -0.5);
        assert!(b.heading >= 0.0 && b.heading < TAU);
        assert!((b.heading - (TAU - 0.5)).abs() < 1e-12);
        let c = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, TAU + 1.0);
        assert!((c.heading - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stage1_merging() {
        assert_eq!(ClassId::Car.stage1(), Stage1Class::Car);
        assert_eq!(ClassId::Pedestrian.stage1(), Stage1Class::Person);
        assert_eq!(ClassId::Cyclist.stage1(), Stage1Class::Person);
    }
}
