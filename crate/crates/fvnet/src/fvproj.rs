//! Cylindrical front-view projection of LiDAR scans into dense feature maps.
//!
//! A point is mapped through
//!   theta = arcsin(z / sqrt(x^2 + y^2 + z^2)),  phi = arcsin(y / sqrt(x^2 + y^2))
//! and binned into an H x W grid over a fixed angular window. Each occupied
//! cell stores the contributing point's height (z), radial distance
//! (sqrt(x^2 + y^2)) and intensity. Maps are built at base resolution
//! (default 48 x 192) and upscaled with nearest-neighbor interpolation
//! (default 128 x 512) before entering the proposal network.

use crate::geom::{box_corners, box_footprint, Box3D, Point3, PointCloud};
use std::fmt;
use std::fs;
use std::io::{self, Write as _};
use std::path::Path;

/// Angular window and resolution of the projection.
///
/// `fov_limit`, when set, drops points whose azimuth `atan2(y, x)` exceeds
/// the half-angle. This matters because phi = arcsin(y / radial) folds
/// points behind the sensor (x < 0) into the frontal window; the limit is
/// what actually restricts the map to the forward field of view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionConfig {
    pub theta_min: f64,
    pub delta_theta: f64,
    pub phi_min: f64,
    pub delta_phi: f64,
    pub base_height: usize,
    pub base_width: usize,
    pub upscaled_height: usize,
    pub upscaled_width: usize,
    /// Maximum radial distance in meters; normalizes the truncated-distance
    /// regression targets downstream.
    pub r_max: f64,
    /// Horizontal half-angle in radians, or None for the full window.
    pub fov_limit: Option<f64>,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        let theta_lo = (-24.8f64).to_radians();
        let theta_hi = 2.0f64.to_radians();
        let phi_half = 45.0f64.to_radians();
        Self {
            theta_min: theta_lo,
            delta_theta: (theta_hi - theta_lo) / 48.0,
            phi_min: -phi_half,
            delta_phi: 2.0 * phi_half / 192.0,
            base_height: 48,
            base_width: 192,
            upscaled_height: 128,
            upscaled_width: 512,
            r_max: 80.0,
            fov_limit: Some(std::f64::consts::FRAC_PI_4),
        }
    }
}

impl ProjectionConfig {
    pub fn theta_max(&self) -> f64 {
        self.theta_min + self.base_height as f64 * self.delta_theta
    }

    pub fn phi_max(&self) -> f64 {
        self.phi_min + self.base_width as f64 * self.delta_phi
    }

    /// Rows scale factor base -> upscaled.
    pub fn row_scale(&self) -> f64 {
        self.upscaled_height as f64 / self.base_height as f64
    }

    /// Columns scale factor base -> upscaled.
    pub fn col_scale(&self) -> f64 {
        self.upscaled_width as f64 / self.base_width as f64
    }

    /// Azimuth of a continuous column coordinate on the upscaled map.
    pub fn azimuth_of_upscaled_col(&self, col: f64) -> f64 {
        self.phi_min + col / self.col_scale() * self.delta_phi
    }

    /// Elevation of a continuous row coordinate on the upscaled map.
    pub fn elevation_of_upscaled_row(&self, row: f64) -> f64 {
        self.theta_min + row / self.row_scale() * self.delta_theta
    }
}

/// Integer cell index: `u` along rows (elevation), `v` along columns
/// (azimuth).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelCoord {
    pub u: usize,
    pub v: usize,
}

#[derive(Debug, PartialEq, Eq)]
pub enum ProjectError {
    /// x = y = 0: azimuth and both arcsin arguments are undefined.
    DegeneratePoint,
}

impl fmt::Display for ProjectError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProjectError::DegeneratePoint => {
                write!(f, "point has x = y = 0; projection angles undefined")
            }
        }
    }
}

impl std::error::Error for ProjectError {}

/// Elevation and azimuth of a point, in radians.
pub fn angles_of_point(p: &Point3) -> Result<(f64, f64), ProjectError> {
    let radial = p.radial();
    if radial == 0.0 {
        return Err(ProjectError::DegeneratePoint);
    }
    Ok(((p.z / p.range()).asin(), (p.y / radial).asin()))
}

/// Cell index of a point, or None when it falls outside the window or the
/// horizontal field-of-view limit.
pub fn project_point(
    p: &Point3,
    cfg: &ProjectionConfig,
) -> Result<Option<PixelCoord>, ProjectError> {
    let (theta, phi) = angles_of_point(p)?;
    if let Some(limit) = cfg.fov_limit {
        if p.y.atan2(p.x).abs() > limit {
            return Ok(None);
        }
    }
    let uf = ((theta - cfg.theta_min) / cfg.delta_theta).floor();
    let vf = ((phi - cfg.phi_min) / cfg.delta_phi).floor();
    if uf < 0.0 || vf < 0.0 || uf >= cfg.base_height as f64 || vf >= cfg.base_width as f64 {
        return Ok(None);
    }
    Ok(Some(PixelCoord {
        u: uf as usize,
        v: vf as usize,
    }))
}

/// One grid cell. Channels are meaningful only when `occupied`; `source` is
/// the index of the contributing point within the originating cloud.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapCell {
    pub height: f64,
    pub radial: f64,
    pub intensity: f64,
    pub occupied: bool,
    pub source: Option<usize>,
}

impl MapCell {
    pub const EMPTY: MapCell = MapCell {
        height: 0.0,
        radial: 0.0,
        intensity: 0.0,
        occupied: false,
        source: None,
    };
}

/// Dense projection grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontViewMap {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<MapCell>,
}

impl FrontViewMap {
    pub fn unoccupied(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![MapCell::EMPTY; height * width],
        }
    }

    pub fn cell(&self, u: usize, v: usize) -> &MapCell {
        &self.cells[u * self.width + v]
    }

    pub fn cell_mut(&mut self, u: usize, v: usize) -> &mut MapCell {
        &mut self.cells[u * self.width + v]
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|c| c.occupied).count()
    }
}

/// Per-build bookkeeping; `in_window + out_of_window + degenerate` equals
/// the input cloud size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    pub in_window: usize,
    pub out_of_window: usize,
    pub degenerate: usize,
}

/// Collision rule shared by the sequential path and the worker merge: the
/// smaller radial wins, ties broken by lower source index. Order-independent
/// by construction, which is what makes the threaded build bit-identical to
/// the sequential one.
fn claim(slot: &mut MapCell, candidate: MapCell) {
    if !slot.occupied
        || candidate.radial < slot.radial
        || (candidate.radial == slot.radial && candidate.source < slot.source)
    {
        *slot = candidate;
    }
}

fn build_partial(
    points: &[Point3],
    base_index: usize,
    cfg: &ProjectionConfig,
) -> (FrontViewMap, ProjectionStats) {
    let mut map = FrontViewMap::unoccupied(cfg.base_height, cfg.base_width);
    let mut stats = ProjectionStats::default();
    for (i, p) in points.iter().enumerate() {
        match project_point(p, cfg) {
            Err(ProjectError::DegeneratePoint) => stats.degenerate += 1,
            Ok(None) => stats.out_of_window += 1,
            Ok(Some(px)) => {
                stats.in_window += 1;
                claim(
                    map.cell_mut(px.u, px.v),
                    MapCell {
                        height: p.z,
                        radial: p.radial(),
                        intensity: p.intensity,
                        occupied: true,
                        source: Some(base_index + i),
                    },
                );
            }
        }
    }
    (map, stats)
}

/// Project a whole cloud. Degenerate points are skipped and counted, never
/// fatal.
pub fn build_front_view_map(
    cloud: &PointCloud,
    cfg: &ProjectionConfig,
) -> (FrontViewMap, ProjectionStats) {
    build_partial(&cloud.points, 0, cfg)
}

/// Multi-worker build. The cloud is split into contiguous chunks, each
/// projected independently, then merged in fixed chunk order under the same
/// collision rule; the result is bit-identical for any worker count.
pub fn build_front_view_map_threaded(
    cloud: &PointCloud,
    cfg: &ProjectionConfig,
    workers: usize,
) -> (FrontViewMap, ProjectionStats) {
    assert!(workers >= 1, "worker count must be positive");
    if workers == 1 || cloud.len() < workers {
        return build_front_view_map(cloud, cfg);
    }
    let chunk = cloud.len().div_ceil(workers);
    let parts: Vec<(FrontViewMap, ProjectionStats)> = std::thread::scope(|s| {
        let handles: Vec<_> = cloud
            .points
            .chunks(chunk)
            .enumerate()
            .map(|(k, pts)| s.spawn(move || build_partial(pts, k * chunk, cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("projection worker panicked"))
            .collect()
    });
    let mut map = FrontViewMap::unoccupied(cfg.base_height, cfg.base_width);
    let mut stats = ProjectionStats::default();
    for (part, ps) in parts {
        stats.in_window += ps.in_window;
        stats.out_of_window += ps.out_of_window;
        stats.degenerate += ps.degenerate;
        for (i, cell) in part.cells.iter().enumerate() {
            if cell.occupied {
                claim(&mut map.cells[i], *cell);
            }
        }
    }
    (map, stats)
}

/// Nearest-neighbor upscale; target cell (u, v) copies source cell
/// (floor(u*H_src/H_dst), floor(v*W_src/W_dst)). Identity at equal dims.
pub fn upscale_nearest(map: &FrontViewMap, target_h: usize, target_w: usize) -> FrontViewMap {
    assert!(
        target_h >= map.height && target_w >= map.width,
        "upscale target must not shrink the map"
    );
    let mut out = FrontViewMap::unoccupied(target_h, target_w);
    for u in 0..target_h {
        let su = u * map.height / target_h;
        for v in 0..target_w {
            let sv = v * map.width / target_w;
            out.cells[u * target_w + v] = *map.cell(su, sv);
        }
    }
    out
}

/// Interleaved RGB bytes, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// Visualize the three channels as RGB: each channel min-max normalized to
/// [0, 255] over occupied cells; unoccupied cells black. A channel with zero
/// spread renders at full brightness so lone points stay visible.
pub fn render_map(map: &FrontViewMap) -> RgbImage {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in &map.cells {
        if !c.occupied {
            continue;
        }
        for (k, val) in [c.height, c.radial, c.intensity].into_iter().enumerate() {
            lo[k] = lo[k].min(val);
            hi[k] = hi[k].max(val);
        }
    }
    let mut data = vec![0u8; map.height * map.width * 3];
    for (i, c) in map.cells.iter().enumerate() {
        if !c.occupied {
            continue;
        }
        for (k, val) in [c.height, c.radial, c.intensity].into_iter().enumerate() {
            data[i * 3 + k] = if hi[k] > lo[k] {
                ((val - lo[k]) / (hi[k] - lo[k]) * 255.0).round() as u8
            } else {
                255
            };
        }
    }
    RgbImage {
        width: map.width,
        height: map.height,
        data,
    }
}

/// Binary PPM (P6) writer.
pub fn write_ppm(img: &RgbImage, path: &Path) -> io::Result<()> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    write!(f, "P6\n{} {}\n255\n", img.width, img.height)?;
    f.write_all(&img.data)?;
    f.flush()
}

pub const MAP_MAGIC: [u8; 4] = *b"FVM1";
/// height, radial, intensity, occupancy.
pub const MAP_CHANNELS: u32 = 4;

#[derive(Debug)]
pub enum MapIoError {
    Io(io::Error),
    BadMagic([u8; 4]),
    BadChannelCount(u32),
    Truncated { expected: usize, got: usize },
}

impl fmt::Display for MapIoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapIoError::Io(e) => write!(f, "map io: {e}"),
            MapIoError::BadMagic(m) => write!(f, "map file has bad magic {m:?}"),
            MapIoError::BadChannelCount(c) => write!(f, "map file declares {c} channels"),
            MapIoError::Truncated { expected, got } => {
                write!(f, "map file truncated: expected {expected} bytes, got {got}")
            }
        }
    }
}

impl std::error::Error for MapIoError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            MapIoError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for MapIoError {
    fn from(e: io::Error) -> Self {
        MapIoError::Io(e)
    }
}

/// Serialize a map: 16-byte header (magic, H, W, C as little-endian u32),
/// then H*W*C little-endian float32 values, row-major, channel-interleaved
/// as (height, radial, intensity, occupancy). Point provenance is not
/// persisted.
pub fn write_map(map: &FrontViewMap, path: &Path) -> Result<(), MapIoError> {
    let mut buf = Vec::with_capacity(16 + map.cells.len() * 16);
    buf.extend_from_slice(&MAP_MAGIC);
    buf.extend_from_slice(&(map.height as u32).to_le_bytes());
    buf.extend_from_slice(&(map.width as u32).to_le_bytes());
    buf.extend_from_slice(&MAP_CHANNELS.to_le_bytes());
    for c in &map.cells {
        let occ = if c.occupied { 1.0 } else { 0.0 };
        for val in [c.height, c.radial, c.intensity, occ] {
            buf.extend_from_slice(&(val as f32).to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_map(path: &Path) -> Result<FrontViewMap, MapIoError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 {
        return Err(MapIoError::Truncated {
            expected: 16,
            got: bytes.len(),
        });
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic != MAP_MAGIC {
        return Err(MapIoError::BadMagic(magic));
    }
    let word = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let h = word(4) as usize;
    let w = word(8) as usize;
    let c = word(12);
    if c != MAP_CHANNELS {
        return Err(MapIoError::BadChannelCount(c));
    }
    let expected = 16 + h * w * MAP_CHANNELS as usize * 4;
    if bytes.len() != expected {
        return Err(MapIoError::Truncated {
            expected,
            got: bytes.len(),
        });
    }
    let mut map = FrontViewMap::unoccupied(h, w);
    for (i, cell) in map.cells.iter_mut().enumerate() {
        let o = 16 + i * 16;
        let f = |k: usize| {
            f32::from_le_bytes([
                bytes[o + 4 * k],
                bytes[o + 4 * k + 1],
                bytes[o + 4 * k + 2],
                bytes[o + 4 * k + 3],
            ]) as f64
        };
        *cell = MapCell {
            height: f(0),
            radial: f(1),
            intensity: f(2),
            occupied: f(3) != 0.0,
            source: None,
        };
    }
    Ok(map)
}

/// Axis-aligned rectangle on the upscaled map in continuous pixels. `cx`
/// runs along columns (azimuth), `cy` along rows (elevation).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapRect {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Bounding rectangle of a 3D box on the upscaled map: project all 8
/// corners to continuous pixel coordinates and take extents. None when a
/// corner is degenerate or the box center lies outside the horizontal
/// field-of-view limit.
pub fn map_rect_of_box(b: &Box3D, cfg: &ProjectionConfig) -> Option<MapRect> {
    if let Some(limit) = cfg.fov_limit {
        if b.cy.atan2(b.cx).abs() > limit {
            return None;
        }
    }
    let (mut lo_u, mut hi_u) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lo_v, mut hi_v) = (f64::INFINITY, f64::NEG_INFINITY);
    for corner in box_corners(b) {
        let (theta, phi) = angles_of_point(&corner).ok()?;
        let uf = (theta - cfg.theta_min) / cfg.delta_theta * cfg.row_scale();
        let vf = (phi - cfg.phi_min) / cfg.delta_phi * cfg.col_scale();
        lo_u = lo_u.min(uf);
        hi_u = hi_u.max(uf);
        lo_v = lo_v.min(vf);
        hi_v = hi_v.max(vf);
    }
    Some(MapRect {
        cx: (lo_v + hi_v) / 2.0,
        cy: (lo_u + hi_u) / 2.0,
        w: hi_v - lo_v,
        h: hi_u - lo_u,
    })
}

fn dist_origin_segment(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = b.0 - a.0;
    let dy = b.1 - a.1;
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (-(a.0 * dx + a.1 * dy) / len2).clamp(0.0, 1.0)
    };
    let px = a.0 + t * dx;
    let py = a.1 + t * dy;
    (px * px + py * py).sqrt()
}

/// Near and far radial bounds of a box footprint: distance from the sensor
/// origin to the nearest footprint point (0 if the origin is inside) and to
/// the farthest footprint corner.
pub fn radial_interval_of_box(b: &Box3D) -> (f64, f64) {
    let fp = box_footprint(b);
    let r2 = fp
        .iter()
        .map(|&(x, y)| (x * x + y * y).sqrt())
        .fold(0.0f64, f64::max);
    let (s, c) = b.heading.sin_cos();
    let lx = c * -b.cx + s * -b.cy;
    let ly = -s * -b.cx + c * -b.cy;
    if lx.abs() <= b.l / 2.0 && ly.abs() <= b.w / 2.0 {
        return (0.0, r2);
    }
    let r1 = (0..4)
        .map(|i| dist_origin_segment(fp[i], fp[(i + 1) % 4]))
        .fold(f64::INFINITY, f64::min);
    (r1, r2)
}
