//! Instance masks built from rotated, non-overlapping ellipses.
//!
//! A preset is a table of sampling rows. Each synthesized image draws one
//! row uniformly, a nucleus count from the row's count range, then places
//! nuclei by rejection sampling of their centers.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, InstanceMask};

/// Consecutive rejected placements before a nucleus is skipped.
pub const DEFAULT_MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseParams {
    pub center_row: f64,
    pub center_col: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Degrees, counter-clockwise from the column axis.
    pub rotation_deg: f64,
}

impl EllipseParams {
    pub fn eccentricity(&self) -> f64 {
        let ratio = self.semi_minor / self.semi_major;
        (1.0 - ratio * ratio).max(0.0).sqrt()
    }
}

/// `b = a·sqrt(1 - e²)`.
pub fn minor_axis(a: f64, e: f64) -> Result<f64> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::param("semi_major", format!("{a} must be > 0")));
    }
    if !(0.0..1.0).contains(&e) {
        return Err(Error::param("eccentricity", format!("{e} is outside [0, 1)")));
    }
    Ok(a * (1.0 - e * e).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T> Interval<T> {
    pub const fn new(lo: T, hi: T) -> Self {
        Interval { lo, hi }
    }
}

impl Interval<f64> {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }
}

/// One line of a parameter table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetRow {
    pub semi_major: Interval<f64>,
    pub count: Interval<u32>,
    pub eccentricity: Interval<f64>,
}

impl PresetRow {
    pub const fn new(a: (f64, f64), count: (u32, u32), e: (f64, f64)) -> Self {
        PresetRow {
            semi_major: Interval::new(a.0, a.1),
            count: Interval::new(count.0, count.1),
            eccentricity: Interval::new(e.0, e.1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Interval { lo: a_lo, hi: a_hi } = self.semi_major;
        if !(a_lo > 0.0 && a_lo <= a_hi && a_hi.is_finite()) {
            return Err(Error::param(
                "semi_major",
                format!("({a_lo}, {a_hi}) is not a positive interval"),
            ));
        }
        if !(self.count.lo >= 1 && self.count.lo <= self.count.hi) {
            return Err(Error::param(
                "count",
                format!("({}, {}) is not a positive interval", self.count.lo, self.count.hi),
            ));
        }
        let Interval { lo: e_lo, hi: e_hi } = self.eccentricity;
        if !(e_lo >= 0.0 && e_lo <= e_hi && e_hi < 1.0) {
            return Err(Error::param(
                "eccentricity",
                format!("({e_lo}, {e_hi}) is not inside [0, 1)"),
            ));
        }
        Ok(())
    }
}

/// DSB 2018 rows.
pub const DSB_ROWS: [PresetRow; 6] = [
    PresetRow::new((5.0, 10.0), (1, 150), (0.4, 0.9)),
    PresetRow::new((10.0, 15.0), (1, 40), (0.4, 0.9)),
    PresetRow::new((15.0, 20.0), (1, 40), (0.4, 0.9)),
    PresetRow::new((20.0, 25.0), (1, 40), (0.4, 0.9)),
    PresetRow::new((25.0, 30.0), (1, 20), (0.4, 0.9)),
    PresetRow::new((30.0, 35.0), (1, 20), (0.4, 0.9)),
];

/// BBBC039v1 rows.
pub const BBBC039_ROWS: [PresetRow; 2] = [
    PresetRow::new((10.0, 20.0), (20, 60), (0.6, 0.9)),
    PresetRow::new((20.0, 40.0), (20, 30), (0.6, 0.9)),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisPreset {
    pub rows: Vec<PresetRow>,
    pub canvas: (usize, usize),
}

impl SynthesisPreset {
    pub const DEFAULT_CANVAS: (usize, usize) = (256, 256);

    pub fn new(rows: Vec<PresetRow>, canvas: (usize, usize)) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::param("rows", "preset has no rows"));
        }
        if canvas.0 == 0 || canvas.1 == 0 {
            return Err(Error::Dimensions(format!("{}x{} canvas", canvas.0, canvas.1)));
        }
        for row in &rows {
            row.validate()?;
        }
        Ok(SynthesisPreset { rows, canvas })
    }

    pub fn dsb() -> Self {
        SynthesisPreset {
            rows: DSB_ROWS.to_vec(),
            canvas: Self::DEFAULT_CANVAS,
        }
    }

    pub fn bbbc039() -> Self {
        SynthesisPreset {
            rows: BBBC039_ROWS.to_vec(),
            canvas: Self::DEFAULT_CANVAS,
        }
    }

    pub fn with_canvas(mut self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimensions(format!("{height}x{width} canvas")));
        }
        self.canvas = (height, width);
        Ok(self)
    }

    /// Parses `a_lo a_hi n_lo n_hi e_lo e_hi` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let malformed = |reason: String| Error::MalformedPreset { line: idx + 1, reason };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(malformed(format!("expected 6 fields, found {}", fields.len())));
            }
            let float = |s: &str| s.parse::<f64>().map_err(|e| malformed(format!("`{s}`: {e}")));
            let int = |s: &str| s.parse::<u32>().map_err(|e| malformed(format!("`{s}`: {e}")));
            let row = PresetRow::new(
                (float(fields[0])?, float(fields[1])?),
                (int(fields[2])?, int(fields[3])?),
                (float(fields[4])?, float(fields[5])?),
            );
            row.validate().map_err(|e| malformed(e.to_string()))?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::MalformedPreset {
                line: 0,
                reason: "no rows".into(),
            });
        }
        Ok(SynthesisPreset {
            rows,
            canvas: Self::DEFAULT_CANVAS,
        })
    }
}

/// Resolves a built-in preset name (`dsb`, `bbbc039`) or reads a preset file.
pub fn load_preset(source: &str) -> Result<SynthesisPreset> {
    match source {
        "dsb" => Ok(SynthesisPreset::dsb()),
        "bbbc039" => Ok(SynthesisPreset::bbbc039()),
        other => {
            let path = Path::new(other);
            if !path.is_file() {
                return Err(Error::UnknownPreset(other.to_string()));
            }
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
            SynthesisPreset::parse(&text)
        }
    }
}

/// Samples shape and rotation from `row`; the center is drawn uniformly over
/// the canvas.
pub fn sample_ellipse<R: Rng + ?Sized>(row: &PresetRow, canvas: (usize, usize), rng: &mut R) -> EllipseParams {
    let a = row.semi_major.sample(rng);
    let e = row.eccentricity.sample(rng);
    let rotation_deg = rng.random_range(0.0..=179.0);
    let (center_row, center_col) = sample_center(canvas, rng);
    EllipseParams {
        center_row,
        center_col,
        semi_major: a,
        semi_minor: minor_axis(a, e).expect("validated preset row"),
        rotation_deg,
    }
}

fn sample_center<R: Rng + ?Sized>(canvas: (usize, usize), rng: &mut R) -> (f64, f64) {
    (
        rng.random_range(0.0..canvas.0 as f64),
        rng.random_range(0.0..canvas.1 as f64),
    )
}

/// sin/cos of an angle in degrees, exact at multiples of 90°.
fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let quarter = deg / 90.0;
    if quarter.fract() == 0.0 {
        match (quarter as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        deg.to_radians().sin_cos()
    }
}

/// Flat indices of the canvas pixels whose centers fall inside the ellipse.
pub fn ellipse_pixels(e: &EllipseParams, canvas: (usize, usize)) -> Vec<usize> {
    let (h, w) = canvas;
    let (sin, cos) = sin_cos_deg(e.rotation_deg);
    let (a2, b2) = (e.semi_major * e.semi_major, e.semi_minor * e.semi_minor);
    let reach = e.semi_major.max(e.semi_minor).ceil();
    let r_lo = (e.center_row - reach).floor().max(0.0) as usize;
    let r_hi = ((e.center_row + reach).ceil().max(-1.0) as i64).min(h as i64 - 1);
    let c_lo = (e.center_col - reach).floor().max(0.0) as usize;
    let c_hi = ((e.center_col + reach).ceil().max(-1.0) as i64).min(w as i64 - 1);
    let mut out = Vec::new();
    if r_hi < 0 || c_hi < 0 {
        return out;
    }
    for r in r_lo..=r_hi as usize {
        let dy = r as f64 - e.center_row;
        for c in c_lo..=c_hi as usize {
            let dx = c as f64 - e.center_col;
            // Rotate the offset by -θ into the ellipse frame.
            let x = dx * cos + dy * sin;
            let y = -dx * sin + dy * cos;
            if x * x / a2 + y * y / b2 <= 1.0 {
                out.push(r * w + c);
            }
        }
    }
    out
}

pub fn rasterize_ellipse(e: &EllipseParams, canvas: (usize, usize)) -> BinaryMask {
    let mut bits = vec![false; canvas.0 * canvas.1];
    for p in ellipse_pixels(e, canvas) {
        bits[p] = true;
    }
    BinaryMask::new(canvas.0, canvas.1, bits).expect("canvas validated by caller")
}

/// Whether placed nuclei may share a boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Placement {
    /// Pixel-disjoint, 8-adjacency allowed.
    #[default]
    AllowTouching,
    /// No pixel of a new nucleus may be 8-adjacent to an existing one.
    Separated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthesisOptions {
    pub max_attempts: usize,
    pub placement: Placement,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            placement: Placement::AllowTouching,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedMask {
    pub mask: InstanceMask,
    /// Parameters of every placed nucleus; label `k` is `ellipses[k - 1]`.
    pub ellipses: Vec<EllipseParams>,
    pub row_index: usize,
    pub requested: u32,
    pub warnings: Vec<String>,
}

pub fn synthesize_mask<R: Rng + ?Sized>(preset: &SynthesisPreset, rng: &mut R) -> SynthesizedMask {
    synthesize_mask_with(preset, &SynthesisOptions::default(), rng)
}

pub fn synthesize_mask_with<R: Rng + ?Sized>(
    preset: &SynthesisPreset,
    opts: &SynthesisOptions,
    rng: &mut R,
) -> SynthesizedMask {
    let (h, w) = preset.canvas;
    let row_index = rng.random_range(0..preset.rows.len());
    let row = preset.rows[row_index];
    let requested = rng.random_range(row.count.lo..=row.count.hi);

    let mut labels = vec![0u32; h * w];
    let mut ellipses = Vec::new();
    let mut warnings = Vec::new();
    for nucleus in 0..requested {
        // Shape is fixed per nucleus; only the position is retried.
        let mut candidate = sample_ellipse(&row, preset.canvas, rng);
        let mut placed = None;
        for attempt in 0..opts.max_attempts.max(1) {
            if attempt > 0 {
                (candidate.center_row, candidate.center_col) = sample_center(preset.canvas, rng);
            }
            let pixels = ellipse_pixels(&candidate, preset.canvas);
            if !pixels.is_empty() && fits(&pixels, &labels, (h, w), opts.placement) {
                placed = Some(pixels);
                break;
            }
        }
        match placed {
            Some(pixels) => {
                let label = ellipses.len() as u32 + 1;
                for p in pixels {
                    labels[p] = label;
                }
                ellipses.push(candidate);
            }
            None => warnings.push(format!(
                "nucleus {} of {requested} skipped after {} rejected placements",
                nucleus + 1,
                opts.max_attempts.max(1)
            )),
        }
    }
    let mask = InstanceMask::new(h, w, labels).expect("labels assigned contiguously");
    SynthesizedMask {
        mask,
        ellipses,
        row_index,
        requested,
        warnings,
    }
}

fn fits(pixels: &[usize], labels: &[u32], (h, w): (usize, usize), placement: Placement) -> bool {
    match placement {
        Placement::AllowTouching => pixels.iter().all(|&p| labels[p] == 0),
        Placement::Separated => pixels.iter().all(|&p| {
            let (r, c) = (p / w, p % w);
            let rows = r.saturating_sub(1)..=(r + 1).min(h - 1);
            rows.into_iter()
                .all(|rr| (c.saturating_sub(1)..=(c + 1).min(w - 1)).all(|cc| labels[rr * w + cc] == 0))
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn minor_axis_values() {
        assert_eq!(minor_axis(10.0, 0.0).unwrap(), 10.0);
        assert!((minor_axis(10.0, 0.9).unwrap() - 4.358_898_943_5).abs() < 1e-9);
        assert!((minor_axis(5.0, 0.4).unwrap() - 4.582_575_695).abs() < 1e-9);
        assert!(minor_axis(10.0, 1.0).is_err());
        assert!(minor_axis(0.0, 0.5).is_err());
    }

    #[test]
    fn unit_circle_is_a_plus() {
        let e = EllipseParams {
            center_row: 2.0,
            center_col: 2.0,
            semi_major: 1.0,
            semi_minor: 1.0,
            rotation_deg: 0.0,
        };
        let mut px = ellipse_pixels(&e, (5, 5));
        px.sort();
        assert_eq!(px, vec![7, 11, 12, 13, 17]);
    }

    #[test]
    fn quarter_turn_swaps_axes() {
        let base = EllipseParams {
            center_row: 20.3,
            center_col: 17.6,
            semi_major: 9.0,
            semi_minor: 4.0,
            rotation_deg: 90.0,
        };
        let swapped = EllipseParams {
            semi_major: 4.0,
            semi_minor: 9.0,
            rotation_deg: 0.0,
            ..base
        };
        assert_eq!(
            rasterize_ellipse(&base, (40, 40)),
            rasterize_ellipse(&swapped, (40, 40))
        );
    }

    #[test]
    fn outside_canvas_is_empty() {
        let e = EllipseParams {
            center_row: -50.0,
            center_col: 300.0,
            semi_major: 10.0,
            semi_minor: 5.0,
            rotation_deg: 33.0,
        };
        assert_eq!(rasterize_ellipse(&e, (64, 64)).count(), 0);
    }

    #[test]
    fn point_interval_is_exact() {
        let row = PresetRow::new((7.5, 7.5), (1, 1), (0.5, 0.5));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = sample_ellipse(&row, (64, 64), &mut rng);
        assert_eq!(e.semi_major, 7.5);
        assert_eq!(e.semi_minor, minor_axis(7.5, 0.5).unwrap());
    }

    #[test]
    fn presets_match_published_ranges() {
        let dsb = load_preset("dsb").unwrap();
        assert_eq!(dsb.rows.len(), 6);
        assert_eq!(dsb.rows[0], PresetRow::new((5.0, 10.0), (1, 150), (0.4, 0.9)));
        let bbbc = load_preset("bbbc039").unwrap();
        assert_eq!(bbbc.rows.len(), 2);
        assert_eq!(bbbc.rows[1], PresetRow::new((20.0, 40.0), (20, 30), (0.6, 0.9)));
        assert!(matches!(load_preset("foo"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn preset_file_format() {
        let text = "# custom\n 4 6  2 3  0.1 0.2 # small\n\n8 9 1 1 0 0.5\n";
        let p = SynthesisPreset::parse(text).unwrap();
        assert_eq!(
            p.rows,
            vec![
                PresetRow::new((4.0, 6.0), (2, 3), (0.1, 0.2)),
                PresetRow::new((8.0, 9.0), (1, 1), (0.0, 0.5)),
            ]
        );
        assert!(matches!(
            SynthesisPreset::parse("1 2 3\n"),
            Err(Error::MalformedPreset { line: 1, .. })
        ));
        assert!(SynthesisPreset::parse("5 10 1 2 0.4 1.2\n").is_err());
        assert!(SynthesisPreset::parse("# only comments\n").is_err());
    }

    #[test]
    fn forced_single_nucleus() {
        let preset = SynthesisPreset::new(vec![PresetRow::new((8.0, 12.0), (1, 1), (0.4, 0.9))], (128, 128)).unwrap();
        let out = synthesize_mask(&preset, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(out.mask.instance_count(), 1);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn tiny_canvas_skips_with_warnings() {
        let preset = SynthesisPreset::new(vec![PresetRow::new((5.0, 6.0), (50, 50), (0.0, 0.1))], (8, 8)).unwrap();
        let out = synthesize_mask(&preset, &mut ChaCha8Rng::seed_from_u64(9));
        assert!(out.mask.instance_count() < 10);
        assert_eq!(out.warnings.len() as u32, 50 - out.mask.instance_count());
    }

    #[test]
    fn separated_placement_leaves_gaps() {
        let preset = SynthesisPreset::bbbc039().with_canvas(128, 128).unwrap();
        let opts = SynthesisOptions {
            placement: Placement::Separated,
            ..Default::default()
        };
        let out = synthesize_mask_with(&preset, &opts, &mut ChaCha8Rng::seed_from_u64(21));
        let m = &out.mask;
        for r in 0..m.height() {
            for c in 0..m.width() {
                let l = m.get(r, c);
                if l == 0 {
                    continue;
                }
                for (dr, dc) in [(0, 1), (1, -1), (1, 0), (1, 1)] {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < m.height() as i64 && cc >= 0 && cc < m.width() as i64 {
                        let o = m.get(rr as usize, cc as usize);
                        assert!(o == 0 || o == l, "labels {l} and {o} touch");
                    }
                }
            }
        }
    }
}
