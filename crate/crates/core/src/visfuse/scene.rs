use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Rendered image side length in pixels.
pub const IMAGE_SIZE: usize = 64;
/// Row of the horizon line.
pub const HORIZON: usize = 28;
pub const MIN_DISTANCE: f64 = 0.5;
pub const MAX_DISTANCE: f64 = 5.0;
/// Color of the target object.
pub const TARGET_COLOR: [u8; 3] = [230, 26, 26];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bearing {
    Front,
    Left,
    Back,
    Right,
}

impl Bearing {
    pub const ALL: [Bearing; 4] = [Bearing::Front, Bearing::Left, Bearing::Back, Bearing::Right];

    pub fn name(self) -> &'static str {
        match self {
            Bearing::Front => "front",
            Bearing::Left => "left",
            Bearing::Back => "back",
            Bearing::Right => "right",
        }
    }

    /// Counter-clockwise angle from the facing direction, in radians.
    pub fn azimuth(self) -> f64 {
        match self {
            Bearing::Front => 0.0,
            Bearing::Left => FRAC_PI_2,
            Bearing::Back => PI,
            Bearing::Right => -FRAC_PI_2,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Bearing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Bearing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown bearing `{s}`")))
    }
}

/// Ground truth stored next to each image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneAnnotation {
    pub bearing: Bearing,
    pub distance: f64,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
}

/// An RGB image with intensities in `[0, 1]` (stored at 8-bit precision),
/// row-major `height x width x 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
    pub annotation: SceneAnnotation,
}

impl SceneImage {
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Pixels exactly matching the target color.
    pub fn target_pixels(&self) -> Vec<(usize, usize)> {
        let t = TARGET_COLOR.map(|c| c as f64 / 255.0);
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&(r, c)| self.pixel(r, c) == t)
            .collect()
    }
}

/// Panoramic egocentric view: the full circle of azimuths maps onto the image
/// width with the facing direction at the center column, so an object behind
/// the viewer wraps around the left and right edges. Nearer objects sit lower
/// and appear larger (pixel area inversely proportional to distance).
/// A handful of seeded clutter rectangles are drawn under the target.
pub fn render_scene(bearing: Bearing, distance: f64, seed: u64) -> Result<SceneImage> {
    if !(MIN_DISTANCE..=MAX_DISTANCE).contains(&distance) {
        return Err(Error::InvalidArgument(format!(
            "distance {distance} outside [{MIN_DISTANCE}, {MAX_DISTANCE}] m"
        )));
    }
    let n = IMAGE_SIZE;
    let mut img = vec![[0u8; 3]; n * n];
    for r in 0..n {
        let px = if r < HORIZON {
            let k = r as f64 / HORIZON as f64;
            [140.0 + 20.0 * k, 180.0 + 10.0 * k, 230.0]
        } else {
            let k = (r - HORIZON) as f64 / (n - HORIZON) as f64;
            [90.0 - 30.0 * k, 115.0 - 35.0 * k, 75.0 - 25.0 * k]
        };
        for c in 0..n {
            img[r * n + c] = px.map(|v| v as u8);
        }
    }

    const PALETTE: [[u8; 3]; 5] = [[40, 90, 200], [60, 160, 70], [200, 200, 60], [120, 120, 120], [170, 90, 200]];
    let mut rnd = rng::rng(seed);
    for _ in 0..rnd.random_range(3..=6) {
        let (h, w) = (rnd.random_range(2..=5), rnd.random_range(2..=5));
        let r0 = rnd.random_range(HORIZON - 4..n - h);
        let c0 = rnd.random_range(0..n - w);
        let color = PALETTE[rnd.random_range(0..PALETTE.len())];
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                img[r * n + c] = color;
            }
        }
    }

    let cx = (n as f64 / 2.0 - bearing.azimuth() / TAU * n as f64).rem_euclid(n as f64);
    let cy = HORIZON as f64 + 24.0 / (1.0 + distance);
    let radius = 7.0 / distance.sqrt();
    for r in 0..n {
        for c in 0..n {
            let raw = (c as f64 + 0.5 - cx).abs();
            let dx = raw.min(n as f64 - raw);
            let dy = r as f64 + 0.5 - cy;
            if dx * dx + dy * dy <= radius * radius {
                img[r * n + c] = TARGET_COLOR;
            }
        }
    }

    Ok(SceneImage {
        width: n,
        height: n,
        pixels: img.iter().flatten().map(|&v| v as f64 / 255.0).collect(),
        annotation: SceneAnnotation { bearing, distance, seed, width: n, height: n },
    })
}

pub fn encode_ppm(img: &SceneImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

/// Parses a binary PPM with maxval 255. Returns `(width, height, pixels)`.
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
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
            return Err(Error::Truncated("PPM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    pos += 1;
    if fields[0] != "P6" {
        return Err(Error::Malformed(format!("expected a P6 image, found `{}`", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Malformed(format!("bad PPM header value `{s}`")));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 {
        return Err(Error::Malformed(format!("PPM maxval {max} unsupported")));
    }
    let data = bytes.get(pos..).unwrap_or(&[]);
    if data.len() < w * h * 3 {
        return Err(Error::Truncated(format!("PPM pixels: need {} bytes, got {}", w * h * 3, data.len())));
    }
    Ok((w, h, data[..w * h * 3].iter().map(|&v| v as f64 / 255.0).collect()))
}

/// Writes `<stem>.ppm` and `<stem>.json`.
pub fn save_scene(dir: &Path, stem: &str, img: &SceneImage) -> Result<()> {
    std::fs::write(dir.join(format!("{stem}.ppm")), encode_ppm(img))?;
    let mut f = std::fs::File::create(dir.join(format!("{stem}.json")))?;
    serde_json::to_writer_pretty(&mut f, &img.annotation)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn load_scene(dir: &Path, stem: &str) -> Result<SceneImage> {
    let ppm = dir.join(format!("{stem}.ppm"));
    let json = dir.join(format!("{stem}.json"));
    for p in [&ppm, &json] {
        if !p.exists() {
            return Err(Error::MissingArtifact(p.clone()));
        }
    }
    let (width, height, pixels) = decode_ppm(&std::fs::read(&ppm)?)?;
    let annotation: SceneAnnotation = serde_json::from_slice(&std::fs::read(&json)?)?;
    if (annotation.width, annotation.height) != (width, height) {
        return Err(Error::Malformed(format!("{stem}: annotation size does not match the image")));
    }
    Ok(SceneImage { width, height, pixels, annotation })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centroid_col(img: &SceneImage) -> f64 {
        let px = img.target_pixels();
        px.iter().map(|&(_, c)| c as f64).sum::<f64>() / px.len() as f64
    }

    #[test]
    fn bearing_sets_horizontal_position() {
        let left = render_scene(Bearing::Left, 2.0, 1).unwrap();
        let right = render_scene(Bearing::Right, 2.0, 1).unwrap();
        let front = render_scene(Bearing::Front, 2.0, 1).unwrap();
        assert!(centroid_col(&left) < 32.0);
        assert!(centroid_col(&right) > 32.0);
        assert!((centroid_col(&front) - 32.0).abs() < 1.0);
        let back = render_scene(Bearing::Back, 2.0, 1).unwrap();
        let cols: Vec<usize> = back.target_pixels().iter().map(|&(_, c)| c).collect();
        assert!(cols.contains(&0) && cols.contains(&63) && !cols.contains(&32));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(render_scene(Bearing::Left, 1.5, 9).unwrap(), render_scene(Bearing::Left, 1.5, 9).unwrap());
        assert_ne!(
            render_scene(Bearing::Left, 1.5, 9).unwrap().pixels,
            render_scene(Bearing::Left, 1.5, 10).unwrap().pixels
        );
    }

    #[test]
    fn farther_objects_cover_fewer_pixels() {
        for seed in 0..5 {
            let near = render_scene(Bearing::Front, 0.5, seed).unwrap().target_pixels().len();
            let far = render_scene(Bearing::Front, 5.0, seed).unwrap().target_pixels().len();
            assert!(far < near, "seed {seed}: {far} vs {near}");
        }
    }

    #[test]
    fn distance_out_of_range_rejected() {
        assert!(render_scene(Bearing::Front, 0.4, 0).is_err());
        assert!(render_scene(Bearing::Front, 5.1, 0).is_err());
        assert!(render_scene(Bearing::Front, f64::NAN, 0).is_err());
        assert!("up".parse::<Bearing>().is_err());
        assert_eq!("back".parse::<Bearing>().unwrap(), Bearing::Back);
    }

    #[test]
    fn ppm_round_trip() {
        let img = render_scene(Bearing::Right, 3.0, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_scene(dir.path(), "s0", &img).unwrap();
        assert_eq!(load_scene(dir.path(), "s0").unwrap(), img);
        assert!(matches!(load_scene(dir.path(), "s1"), Err(Error::MissingArtifact(_))));
        assert!(decode_ppm(b"P3\n1 1\n255\n").is_err());
        assert!(matches!(decode_ppm(b"P6\n2 2\n255\nabc"), Err(Error::Truncated(_))));
    }
}
