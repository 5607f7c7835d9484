//! Occupancy grids: storage, file formats, clearance and disc collision.
//!
//! Cell `(i, j)` covers `[origin.x + i*res, origin.x + (i+1)*res) x
//! [origin.y + j*res, origin.y + (j+1)*res)`; `j` grows with `y`. In the ASCII
//! format the first text line is the top row (largest `j`).

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Sidecar metadata stored next to a `.grid` / `.pgm` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub resolution: f64,
    #[serde(default)]
    pub origin: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: [f64; 2],
    occupied: Vec<bool>,
}

impl OccupancyGrid {
    /// An all-free grid.
    pub fn new(width: usize, height: usize, resolution: f64, origin: [f64; 2]) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidParams(format!("grid must be at least 2x2, got {width}x{height}")));
        }
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(Error::InvalidParams("grid resolution must be > 0".into()));
        }
        if !(origin[0].is_finite() && origin[1].is_finite()) {
            return Err(Error::NonFinite("grid origin"));
        }
        Ok(OccupancyGrid { width, height, resolution, origin, occupied: vec![false; width * height] })
    }

    /// An empty room of the given size in meters, walled on its border.
    pub fn room(width_m: f64, height_m: f64, resolution: f64) -> Result<Self> {
        let w = (width_m / resolution).round() as usize;
        let h = (height_m / resolution).round() as usize;
        let mut g = Self::new(w, h, resolution, [0.0, 0.0])?;
        for i in 0..w {
            g.set(i, 0, true);
            g.set(i, h - 1, true);
        }
        for j in 0..h {
            g.set(0, j, true);
            g.set(w - 1, j, true);
        }
        Ok(g)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn cell_of_index(&self, idx: usize) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.occupied[self.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, occupied: bool) {
        let k = self.index(i, j);
        self.occupied[k] = occupied;
    }

    pub fn cells(&self) -> &[bool] {
        &self.occupied
    }

    pub fn free_fraction(&self) -> f64 {
        self.occupied.iter().filter(|o| !**o).count() as f64 / self.len() as f64
    }

    /// World extent `[xmin, ymin, xmax, ymax]`.
    pub fn bounds(&self) -> [f64; 4] {
        [
            self.origin[0],
            self.origin[1],
            self.origin[0] + self.width as f64 * self.resolution,
            self.origin[1] + self.height as f64 * self.resolution,
        ]
    }

    /// Signed cell coordinates of a world point (may lie outside the grid).
    pub fn world_to_cell_signed(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((x - self.origin[0]) / self.resolution).floor() as i64,
            ((y - self.origin[1]) / self.resolution).floor() as i64,
        )
    }

    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (i, j) = self.world_to_cell_signed(x, y);
        self.in_bounds(i, j).then(|| (i as usize, j as usize))
    }

    pub fn in_bounds(&self, i: i64, j: i64) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.resolution,
            self.origin[1] + (j as f64 + 0.5) * self.resolution,
        ]
    }

    /// Occupancy of a signed cell; anything outside the grid is occupied.
    pub fn occupied_signed(&self, i: i64, j: i64) -> bool {
        !self.in_bounds(i, j) || self.get(i as usize, j as usize)
    }

    /// World query; points outside the grid report occupied.
    pub fn occupied_at(&self, x: f64, y: f64) -> bool {
        let (i, j) = self.world_to_cell_signed(x, y);
        self.occupied_signed(i, j)
    }

    /// True when a disc of radius `r` at `(x, y)` overlaps any occupied cell
    /// or leaves the grid.
    pub fn disc_collides(&self, x: f64, y: f64, r: f64) -> bool {
        let (i0, j0) = self.world_to_cell_signed(x - r, y - r);
        let (i1, j1) = self.world_to_cell_signed(x + r, y + r);
        let r2 = r * r;
        for j in j0..=j1 {
            for i in i0..=i1 {
                if !self.occupied_signed(i, j) {
                    continue;
                }
                let cx0 = self.origin[0] + i as f64 * self.resolution;
                let cy0 = self.origin[1] + j as f64 * self.resolution;
                let dx = (cx0 - x).max(0.0).max(x - (cx0 + self.resolution));
                let dy = (cy0 - y).max(0.0).max(y - (cy0 + self.resolution));
                if dx * dx + dy * dy < r2 {
                    return true;
                }
            }
        }
        false
    }

    /// Distance (m) from every cell center to the nearest occupied cell
    /// center, counting the ring just outside the grid as occupied.
    pub fn clearance(&self) -> Vec<f64> {
        let pw = self.width + 2;
        let ph = self.height + 2;
        let inf = f64::INFINITY;
        let mut grid = vec![inf; pw * ph];
        for j in 0..ph {
            for i in 0..pw {
                let border = i == 0 || j == 0 || i == pw - 1 || j == ph - 1;
                if border || self.get(i - 1, j - 1) {
                    grid[j * pw + i] = 0.0;
                }
            }
        }
        squared_edt(&mut grid, pw, ph);
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.height {
            for i in 0..self.width {
                out.push(grid[(j + 1) * pw + i + 1].sqrt() * self.resolution);
            }
        }
        out
    }

    /// Parses the ASCII format: `.` free, `#` occupied, first line on top.
    pub fn parse_ascii(text: &str, meta: &GridMeta) -> Result<Self> {
        let rows: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        let height = rows.len();
        let width = rows.first().map(|r| r.chars().count()).unwrap_or(0);
        let mut g = Self::new(width, height, meta.resolution, meta.origin)?;
        for (r, line) in rows.iter().enumerate() {
            if line.chars().count() != width {
                return Err(Error::Parse(format!("grid row {r} has length {} (expected {width})", line.len())));
            }
            let j = height - 1 - r;
            for (i, ch) in line.chars().enumerate() {
                match ch {
                    '.' => {}
                    '#' => g.set(i, j, true),
                    other => return Err(Error::Parse(format!("unexpected grid character {other:?}"))),
                }
            }
        }
        Ok(g)
    }

    pub fn to_ascii(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for j in (0..self.height).rev() {
            for i in 0..self.width {
                s.push(if self.get(i, j) { '#' } else { '.' });
            }
            s.push('\n');
        }
        s
    }

    /// Parses a binary PGM (P5); pixels darker than 128 are occupied.
    pub fn parse_pgm(bytes: &[u8], meta: &GridMeta) -> Result<Self> {
        let mut pos = 0usize;
        let mut tokens = Vec::new();
        while tokens.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Parse("truncated PGM header".into()));
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        pos += 1;
        if tokens[0] != "P5" {
            return Err(Error::Parse(format!("expected P5 PGM, got {}", tokens[0])));
        }
        let parse = |t: &str| t.parse::<usize>().map_err(|_| Error::Parse(format!("bad PGM number {t}")));
        let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(Error::Parse("only 8-bit PGM is supported".into()));
        }
        let data = bytes.get(pos..pos + width * height).ok_or_else(|| Error::Parse("truncated PGM data".into()))?;
        let mut g = Self::new(width, height, meta.resolution, meta.origin)?;
        for r in 0..height {
            for i in 0..width {
                if data[r * width + i] < 128 {
                    g.set(i, height - 1 - r, true);
                }
            }
        }
        Ok(g)
    }

    /// Loads `<stem>.grid` or a `.pgm`, with the `.json` sidecar next to it.
    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = path.with_extension("json");
        let meta: GridMeta = if meta_path.exists() {
            serde_json::from_slice(&std::fs::read(&meta_path)?)?
        } else {
            return Err(Error::Parse(format!("missing map metadata {}", meta_path.display())));
        };
        match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") => Self::parse_pgm(&std::fs::read(path)?, &meta),
            _ => Self::parse_ascii(&std::fs::read_to_string(path)?, &meta),
        }
    }

    /// Writes `<stem>.grid` and `<stem>.json`.
    pub fn save(&self, grid_path: &Path) -> Result<()> {
        crate::io::write_atomic(grid_path, self.to_ascii().as_bytes())?;
        let meta = GridMeta { resolution: self.resolution, origin: self.origin };
        crate::io::write_atomic(&grid_path.with_extension("json"), &serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    /// Nearest free cell to a world point (breadth-first over the grid).
    pub fn nearest_free_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (ci, cj) = self.world_to_cell_signed(x, y);
        let ci = ci.clamp(0, self.width as i64 - 1);
        let cj = cj.clamp(0, self.height as i64 - 1);
        let max_r = self.width.max(self.height) as i64;
        for r in 0..=max_r {
            let mut best: Option<((usize, usize), f64)> = None;
            for j in (cj - r)..=(cj + r) {
                for i in (ci - r)..=(ci + r) {
                    if (i - ci).abs() != r && (j - cj).abs() != r {
                        continue;
                    }
                    if self.occupied_signed(i, j) {
                        continue;
                    }
                    let c = self.cell_center(i as usize, j as usize);
                    let d = (c[0] - x).hypot(c[1] - y);
                    if best.is_none_or(|(_, bd)| d < bd) {
                        best = Some(((i as usize, j as usize), d));
                    }
                }
            }
            if let Some((c, _)) = best {
                return Some(c);
            }
        }
        None
    }
}

/// Exact squared Euclidean distance transform (in cells) of a grid whose
/// feature cells hold 0 and all others +inf.
pub(crate) fn squared_edt(grid: &mut [f64], width: usize, height: usize) {
    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for i in 0..width {
        for j in 0..height {
            f[j] = grid[j * width + i];
        }
        edt_1d(&f[..height], &mut d[..height], &mut v, &mut z);
        for j in 0..height {
            grid[j * width + i] = d[j];
        }
    }
    for j in 0..height {
        f[..width].copy_from_slice(&grid[j * width..(j + 1) * width]);
        edt_1d(&f[..width], &mut d[..width], &mut v, &mut z);
        grid[j * width..(j + 1) * width].copy_from_slice(&d[..width]);
    }
}

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher).
fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let first = match f.iter().position(|x| x.is_finite()) {
        Some(p) => p,
        None => {
            d.iter_mut().for_each(|x| *x = f64::INFINITY);
            return;
        }
    };
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates everywhere
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}

/// Parameters of the random desk-map generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapGenConfig {
    pub width_m: f64,
    pub height_m: f64,
    pub resolution: f64,
    pub n_boxes: usize,
    pub box_min_m: f64,
    pub box_max_m: f64,
    /// Probability of adding an interior wall with a door gap.
    pub wall_probability: f64,
    pub door_width_m: f64,
}

impl Default for MapGenConfig {
    fn default() -> Self {
        MapGenConfig {
            width_m: 8.0,
            height_m: 8.0,
            resolution: 0.1,
            n_boxes: 5,
            box_min_m: 0.3,
            box_max_m: 1.0,
            wall_probability: 0.5,
            door_width_m: 1.0,
        }
    }
}

impl MapGenConfig {
    /// Random room with boxes and an optional partition wall with a door.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<OccupancyGrid> {
        let mut g = OccupancyGrid::room(self.width_m, self.height_m, self.resolution)?;
        let res = self.resolution;
        let (w, h) = (g.width(), g.height());
        if rng.random::<f64>() < self.wall_probability {
            let vertical = rng.random::<bool>();
            let span = if vertical { w } else { h };
            let along = if vertical { h } else { w };
            let pos = rng.random_range(span / 3..(2 * span / 3).max(span / 3 + 1));
            let door = ((self.door_width_m / res).round() as usize).max(1);
            let door_start = rng.random_range(2..(along - door - 2).max(3));
            for k in 0..along {
                if k >= door_start && k < door_start + door {
                    continue;
                }
                if vertical {
                    g.set(pos, k, true);
                } else {
                    g.set(k, pos, true);
                }
            }
        }
        for _ in 0..self.n_boxes {
            let bw = ((rng.random_range(self.box_min_m..=self.box_max_m)) / res).round() as usize;
            let bh = ((rng.random_range(self.box_min_m..=self.box_max_m)) / res).round() as usize;
            let bw = bw.clamp(1, w - 2);
            let bh = bh.clamp(1, h - 2);
            let i0 = rng.random_range(1..(w - bw).max(2));
            let j0 = rng.random_range(1..(h - bh).max(2));
            for j in j0..(j0 + bh).min(h - 1) {
                for i in i0..(i0 + bw).min(w - 1) {
                    g.set(i, j, true);
                }
            }
        }
        Ok(g)
    }
}
