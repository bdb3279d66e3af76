//! Spectral abstraction: every signal window becomes a 3×128×128 image.
//!
//! Pipeline per window: short-time Fourier transform → dB magnitude with a
//! floor → min-max normalization → corner-aligned bilinear resize of the
//! scalar map to 128×128 → colormap lookup to RGB.
//!
//! Resize convention: output pixel `(y, x)` samples the source at
//! `(y·(F−1)/127, x·(T−1)/127)` (coordinate 0 when a source axis has length
//! 1), interpolating linearly between the four neighbouring cells.

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::ingest::Window;
use crate::nn::Tensor;

pub const IMAGE_SIZE: usize = 128;
pub const IMAGE_CHANNELS: usize = 3;

const LOG_EPS: f64 = 1e-12;
const DEFAULT_COLORMAP: &str = include_str!("../data/colormap.txt");
const IMAGE_MAGIC: &[u8; 4] = b"LSFI";

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("frame length {frame_len} exceeds window length {window_len}")]
    FrameTooLong { frame_len: usize, window_len: usize },
    #[error("frame length must be even and positive, got {0}")]
    BadFrameLength(usize),
    #[error("hop must be at least 1")]
    ZeroHop,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("colormap line {line}: {reason}")]
    BadColormap { line: usize, reason: String },
    #[error("unknown taper `{0}` (expected hann or rect)")]
    UnknownTaper(String),
    #[error("windows for one image must be non-empty and of equal length")]
    MismatchedWindows,
    #[error("image file: {0}")]
    BadImageFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SpectralError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Taper {
    /// Periodic Hann, `w[n] = 0.5 − 0.5·cos(2πn/N)`.
    Hann,
    Rectangular,
}

impl Taper {
    pub fn weights(self, n: usize) -> Vec<f64> {
        match self {
            Taper::Rectangular => vec![1.0; n],
            Taper::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

impl FromStr for Taper {
    type Err = SpectralError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hann" => Ok(Taper::Hann),
            "rect" | "rectangular" => Ok(Taper::Rectangular),
            _ => Err(SpectralError::UnknownTaper(s.to_string())),
        }
    }
}

impl std::fmt::Display for Taper {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Taper::Hann => "hann",
            Taper::Rectangular => "rect",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub taper: Taper,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_len: 64,
            hop: 1,
            taper: Taper::Hann,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralConfig {
    pub stft: StftConfig,
    pub floor_db: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            floor_db: -80.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn norm(self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// Complex STFT bins, rows = frequency, columns = frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    bins: Vec<Complex>,
    freq_bins: usize,
    frames: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub taper: Taper,
}

impl Spectrogram {
    pub fn freq_bins(&self) -> usize {
        self.freq_bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bin(&self, f: usize, t: usize) -> Complex {
        self.bins[f * self.frames + t]
    }

    pub fn bins(&self) -> &[Complex] {
        &self.bins
    }

    /// `|X[f][t]|` as an `F×T` matrix.
    pub fn magnitudes(&self) -> Tensor<f64> {
        Tensor::from_vec(
            vec![self.freq_bins, self.frames],
            self.bins.iter().map(|c| c.norm()).collect(),
        )
        .expect("spectrogram shape")
    }
}

/// One-sided STFT with `frame_len/2 + 1` bins:
/// `X[f][t] = Σₙ x[t·hop + n]·w[n]·e^{−i2πfn/N}`, by direct summation.
pub fn stft(values: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    stft_bins(values, cfg, cfg.frame_len / 2 + 1)
}

/// Same transform keeping all `frame_len` bins.
pub fn stft_two_sided(values: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    stft_bins(values, cfg, cfg.frame_len)
}

fn stft_bins(values: &[f64], cfg: &StftConfig, freq_bins: usize) -> Result<Spectrogram> {
    let n = cfg.frame_len;
    if n == 0 || n % 2 != 0 {
        return Err(SpectralError::BadFrameLength(n));
    }
    if cfg.hop == 0 {
        return Err(SpectralError::ZeroHop);
    }
    if n > values.len() {
        return Err(SpectralError::FrameTooLong {
            frame_len: n,
            window_len: values.len(),
        });
    }
    let frames = (values.len() - n) / cfg.hop + 1;
    let taper = cfg.taper.weights(n);
    // e^{−i2πm/N} for m = (f·n) mod N.
    let twiddle: Vec<(f64, f64)> = (0..n)
        .map(|m| {
            let a = 2.0 * std::f64::consts::PI * m as f64 / n as f64;
            (a.cos(), -a.sin())
        })
        .collect();
    let mut bins = vec![Complex::default(); freq_bins * frames];
    let mut frame = vec![0.0; n];
    for t in 0..frames {
        let start = t * cfg.hop;
        for (i, slot) in frame.iter_mut().enumerate() {
            *slot = values[start + i] * taper[i];
        }
        for f in 0..freq_bins {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &x) in frame.iter().enumerate() {
                let (c, s) = twiddle[(f * i) % n];
                re += x * c;
                im += x * s;
            }
            bins[f * frames + t] = Complex { re, im };
        }
    }
    Ok(Spectrogram {
        bins,
        freq_bins,
        frames,
        frame_len: n,
        hop: cfg.hop,
        taper: cfg.taper,
    })
}

/// `max(20·log10(|X| + 1e−12), floor_db)` elementwise.
pub fn magnitude_db(spec: &Spectrogram, floor_db: f64) -> Tensor<f64> {
    to_db(&spec.magnitudes(), floor_db)
}

fn to_db(mag: &Tensor<f64>, floor_db: f64) -> Tensor<f64> {
    mag.map(|m| (20.0 * (m + LOG_EPS).log10()).max(floor_db))
}

/// 256-entry RGB lookup table, sampled piecewise-linearly on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Colormap {
    table: Vec<[f64; 3]>,
}

impl Colormap {
    pub const ENTRIES: usize = 256;

    /// Parses 256 lines of `r g b` reals in `[0, 1]`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = Vec::with_capacity(Self::ENTRIES);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: &str| SpectralError::BadColormap {
                line: i + 1,
                reason: reason.to_string(),
            };
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| bad("not a number")))
                .collect::<Result<_>>()?;
            match vals[..] {
                [r, g, b] if [r, g, b].iter().all(|v| (0.0..=1.0).contains(v)) => {
                    table.push([r, g, b])
                }
                [_, _, _] => return Err(bad("component outside [0, 1]")),
                _ => return Err(bad("expected three components")),
            }
        }
        if table.len() != Self::ENTRIES {
            return Err(SpectralError::BadColormap {
                line: table.len(),
                reason: format!("expected {} entries, found {}", Self::ENTRIES, table.len()),
            });
        }
        Ok(Self { table })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn lookup(&self, v: f64) -> [f64; 3] {
        let pos = v.clamp(0.0, 1.0) * (Self::ENTRIES - 1) as f64;
        let i = (pos.floor() as usize).min(Self::ENTRIES - 2);
        let frac = pos - i as f64;
        let (a, b) = (self.table[i], self.table[i + 1]);
        [
            a[0] + (b[0] - a[0]) * frac,
            a[1] + (b[1] - a[1]) * frac,
            a[2] + (b[2] - a[2]) * frac,
        ]
    }
}

impl Default for Colormap {
    fn default() -> Self {
        Self::parse(DEFAULT_COLORMAP).expect("bundled colormap is valid")
    }
}

/// Where an image came from.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ImageSource {
    pub name: String,
    pub start_index: usize,
}

/// A 3×128×128 image with every pixel in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralImage {
    pixels: Tensor<f32>,
    pub source: ImageSource,
}

impl SpectralImage {
    /// Validates shape and range.
    pub fn new(pixels: Tensor<f32>, source: ImageSource) -> Result<Self> {
        if pixels.shape() != [IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE] {
            return Err(SpectralError::BadImageFile(format!(
                "expected shape 3×128×128, got {:?}",
                pixels.shape()
            )));
        }
        if !pixels.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(SpectralError::NonFinite("image pixels outside [0, 1]"));
        }
        Ok(Self { pixels, source })
    }

    pub fn pixels(&self) -> &Tensor<f32> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Tensor<f32> {
        self.pixels
    }

    /// Writes the debug format: `LSFI`, u32 width, u32 height, then
    /// channel-major f32 little-endian pixels.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(IMAGE_MAGIC)?;
        w.write_all(&(IMAGE_SIZE as u32).to_le_bytes())?;
        w.write_all(&(IMAGE_SIZE as u32).to_le_bytes())?;
        for v in self.pixels.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() < 12 || &buf[..4] != IMAGE_MAGIC {
            return Err(SpectralError::BadImageFile("bad magic".into()));
        }
        let width = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let count = IMAGE_CHANNELS * width * height;
        if buf.len() != 12 + 4 * count {
            return Err(SpectralError::BadImageFile("truncated payload".into()));
        }
        let data = buf[12..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let pixels = Tensor::from_vec(vec![IMAGE_CHANNELS, height, width], data)
            .map_err(|e| SpectralError::BadImageFile(e.to_string()))?;
        Self::new(pixels, ImageSource::default())
    }
}

/// Min-max normalization to `[0, 1]`; a constant matrix maps to 0.5.
pub fn normalize(mag: &Tensor<f64>) -> Result<Tensor<f64>> {
    if !mag.is_finite() {
        return Err(SpectralError::NonFinite("magnitude matrix"));
    }
    let (lo, hi) = mag
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return Ok(mag.map(|_| 0.5));
    }
    let span = hi - lo;
    Ok(mag.map(|v| ((v - lo) / span).clamp(0.0, 1.0)))
}

/// Corner-aligned bilinear resize of a `rows×cols` scalar map.
pub fn resize_bilinear(src: &Tensor<f64>, out_rows: usize, out_cols: usize) -> Tensor<f64> {
    let (rows, cols) = (src.shape()[0], src.shape()[1]);
    let d = src.data();
    let coord = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        if n_in == 1 || n_out == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (pos.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let col_coords: Vec<_> = (0..out_cols).map(|x| coord(x, cols, out_cols)).collect();
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for y in 0..out_rows {
        let (y0, y1, fy) = coord(y, rows, out_rows);
        for &(x0, x1, fx) in &col_coords {
            let top = d[y0 * cols + x0] * (1.0 - fx) + d[y0 * cols + x1] * fx;
            let bottom = d[y1 * cols + x0] * (1.0 - fx) + d[y1 * cols + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Tensor::from_vec(vec![out_rows, out_cols], out).expect("resize shape")
}

/// Normalizes, resizes and colorizes an `F×T` magnitude matrix.
pub fn render_image(mag: &Tensor<f64>, colormap: &Colormap) -> Result<SpectralImage> {
    let norm = normalize(mag)?;
    let resized = resize_bilinear(&norm, IMAGE_SIZE, IMAGE_SIZE);
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    let mut pixels = vec![0.0f32; IMAGE_CHANNELS * plane];
    for (i, &v) in resized.data().iter().enumerate() {
        let rgb = colormap.lookup(v);
        for c in 0..IMAGE_CHANNELS {
            pixels[c * plane + i] = rgb[c] as f32;
        }
    }
    SpectralImage::new(
        Tensor::from_vec(vec![IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE], pixels)
            .expect("image shape"),
        ImageSource::default(),
    )
}

/// dB magnitude of one or more index-aligned windows. Several windows (the
/// accelerometer axes) combine as the vector magnitude `√(Σₐ|Xₐ|²)`.
pub fn window_magnitude_db(windows: &[&Window], cfg: &SpectralConfig) -> Result<Tensor<f64>> {
    let first = windows.first().ok_or(SpectralError::MismatchedWindows)?;
    if windows.iter().any(|w| w.values.len() != first.values.len()) {
        return Err(SpectralError::MismatchedWindows);
    }
    let mut power: Option<Tensor<f64>> = None;
    for w in windows {
        if w.values.iter().any(|v| !v.is_finite()) {
            return Err(SpectralError::NonFinite("window samples"));
        }
        let spec = stft(&w.values, &cfg.stft)?;
        let p = Tensor::from_vec(
            vec![spec.freq_bins(), spec.frames()],
            spec.bins().iter().map(|c| c.norm_sqr()).collect(),
        )
        .expect("spectrogram shape");
        match power.as_mut() {
            Some(acc) => acc.add_assign(&p).expect("same shape"),
            None => power = Some(p),
        }
    }
    let mag = power.expect("non-empty").map(f64::sqrt);
    Ok(to_db(&mag, cfg.floor_db))
}

/// Window → STFT → dB → image.
pub fn spectral_image(window: &Window, cfg: &SpectralConfig, colormap: &Colormap) -> Result<SpectralImage> {
    spectral_image_multi(&[window], &window.channel_name, cfg, colormap)
}

/// Image of several index-aligned windows of one modality.
pub fn spectral_image_multi(
    windows: &[&Window],
    name: &str,
    cfg: &SpectralConfig,
    colormap: &Colormap,
) -> Result<SpectralImage> {
    let db = window_magnitude_db(windows, cfg)?;
    let mut img = render_image(&db, colormap)?;
    img.source = ImageSource {
        name: name.to_string(),
        start_index: windows[0].start_index,
    };
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seed_rng;
    use std::f64::consts::PI;

    fn rect(frame_len: usize, hop: usize) -> StftConfig {
        StftConfig {
            frame_len,
            hop,
            taper: Taper::Rectangular,
        }
    }

    fn window(values: Vec<f64>) -> Window {
        Window {
            channel_name: "ECG".into(),
            start_index: 0,
            values,
            label: 0,
        }
    }

    #[test]
    fn dc_signal_concentrates_in_bin_zero() {
        let s = stft(&[1.0; 128], &rect(64, 1)).unwrap();
        assert_eq!(s.freq_bins(), 33);
        assert_eq!(s.frames(), 65);
        for t in 0..s.frames() {
            assert!((s.bin(0, t).norm() - 64.0).abs() < 1e-9);
            for f in 1..s.freq_bins() {
                assert!(s.bin(f, t).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn cosine_at_bin_four() {
        let x: Vec<f64> = (0..128).map(|n| (2.0 * PI * 4.0 * n as f64 / 64.0).cos()).collect();
        let s = stft(&x, &rect(64, 1)).unwrap();
        for t in 0..s.frames() {
            assert!((s.bin(4, t).norm() - 32.0).abs() < 1e-9);
            for f in (0..s.freq_bins()).filter(|&f| f != 4) {
                assert!(s.bin(f, t).norm() <= 1e-9, "bin {f} frame {t}");
            }
        }
    }

    #[test]
    fn zero_window_gives_zero_spectrogram() {
        let s = stft(&[0.0; 128], &StftConfig::default()).unwrap();
        assert!(s.bins().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn stft_parameter_errors() {
        assert!(matches!(
            stft(&[0.0; 32], &rect(64, 1)),
            Err(SpectralError::FrameTooLong { .. })
        ));
        assert!(matches!(
            stft(&[0.0; 128], &rect(63, 1)),
            Err(SpectralError::BadFrameLength(63))
        ));
        assert!(matches!(stft(&[0.0; 128], &rect(64, 0)), Err(SpectralError::ZeroHop)));
    }

    #[test]
    fn magnitude_db_examples() {
        let spec = Spectrogram {
            bins: vec![
                Complex { re: 1.0, im: 0.0 },
                Complex::default(),
                Complex { re: 6.0, im: 8.0 },
            ],
            freq_bins: 3,
            frames: 1,
            frame_len: 4,
            hop: 1,
            taper: Taper::Rectangular,
        };
        let db = magnitude_db(&spec, -80.0);
        assert!(db.data()[0].abs() < 1e-9);
        assert_eq!(db.data()[1], -80.0);
        assert!((db.data()[2] - 20.0).abs() < 1e-6);
    }

    #[test]
    fn constant_matrix_renders_uniform_mid_color() {
        let cm = Colormap::default();
        let img = render_image(&Tensor::filled(&[33, 65], -12.0), &cm).unwrap();
        let mid = cm.lookup(0.5);
        let plane = IMAGE_SIZE * IMAGE_SIZE;
        for c in 0..3 {
            assert!(img.pixels().data()[c * plane..(c + 1) * plane]
                .iter()
                .all(|&v| v == mid[c] as f32));
        }
    }

    #[test]
    fn full_size_input_is_not_resampled() {
        let mut rng = seed_rng(11);
        let m = Tensor::from_fn(&[128, 128], |_| rng.uniform(-50.0, 10.0));
        let cm = Colormap::default();
        let img = render_image(&m, &cm).unwrap();
        let norm = normalize(&m).unwrap();
        let plane = IMAGE_SIZE * IMAGE_SIZE;
        for i in (0..plane).step_by(97) {
            let rgb = cm.lookup(norm.data()[i]);
            for c in 0..3 {
                assert_eq!(img.pixels().data()[c * plane + i], rgb[c] as f32);
            }
        }
    }

    #[test]
    fn checkerboard_center_is_mid_color() {
        let m = Tensor::from_vec(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let cm = Colormap::default();
        let img = render_image(&m, &cm).unwrap();
        // Oracle: scalar bilinear value at the centre pixel, then colormap.
        let u = 64.0 / 127.0;
        let scalar = u * (1.0 - u) + (1.0 - u) * u;
        let want = cm.lookup(scalar);
        let mid = cm.lookup(0.5);
        let plane = IMAGE_SIZE * IMAGE_SIZE;
        let idx = 64 * IMAGE_SIZE + 64;
        for c in 0..3 {
            let got = img.pixels().data()[c * plane + idx] as f64;
            assert!((got - want[c]).abs() < 1e-6);
            assert!((got - mid[c]).abs() < 0.02);
        }
    }

    #[test]
    fn render_rejects_non_finite() {
        let m = Tensor::from_vec(vec![1, 2], vec![0.0, f64::NAN]).unwrap();
        assert!(matches!(
            render_image(&m, &Colormap::default()),
            Err(SpectralError::NonFinite(_))
        ));
    }

    #[test]
    fn zero_filled_tail_renders_constant() {
        let cfg = SpectralConfig::default();
        let img = spectral_image(&window(vec![0.0; 128]), &cfg, &Colormap::default()).unwrap();
        let first = img.pixels().data()[0];
        let plane = IMAGE_SIZE * IMAGE_SIZE;
        assert!(img.pixels().data()[..plane].iter().all(|&v| v == first));
    }

    #[test]
    fn spectral_image_is_deterministic() {
        let mut rng = seed_rng(4);
        let w = window((0..128).map(|_| rng.normal()).collect());
        let cfg = SpectralConfig::default();
        let a = spectral_image(&w, &cfg, &Colormap::default()).unwrap();
        let b = spectral_image(&w, &cfg, &Colormap::default()).unwrap();
        let bits = |i: &SpectralImage| -> Vec<u32> { i.pixels().data().iter().map(|v| v.to_bits()).collect() };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn tone_window_brightest_row_is_its_bin() {
        let w = window((0..128).map(|n| (2.0 * PI * 4.0 * n as f64 / 64.0).cos()).collect());
        let cfg = SpectralConfig::default();
        let norm = normalize(&window_magnitude_db(&[&w], &cfg).unwrap()).unwrap();
        let cols = norm.shape()[1];
        let brightest = (0..norm.shape()[0])
            .max_by(|&a, &b| {
                let sa: f64 = norm.data()[a * cols..(a + 1) * cols].iter().sum();
                let sb: f64 = norm.data()[b * cols..(b + 1) * cols].iter().sum();
                sa.partial_cmp(&sb).unwrap()
            })
            .unwrap();
        assert_eq!(brightest, 4);
    }

    #[test]
    fn colormap_parse_errors() {
        assert!(Colormap::parse("0 0 0\n").is_err());
        let mut bad = "0.1 0.2 0.3\n".repeat(255);
        bad.push_str("0.1 2.0 0.3\n");
        assert!(matches!(
            Colormap::parse(&bad),
            Err(SpectralError::BadColormap { line: 256, .. })
        ));
    }

    #[test]
    fn image_file_round_trip() {
        let mut rng = seed_rng(9);
        let w = window((0..128).map(|_| rng.normal()).collect());
        let img = spectral_image(&w, &SpectralConfig::default(), &Colormap::default()).unwrap();
        let mut buf = Vec::new();
        img.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"LSFI");
        let back = SpectralImage::read_from(&buf[..]).unwrap();
        assert_eq!(back.pixels(), img.pixels());
        assert!(SpectralImage::read_from(&buf[..100]).is_err());
    }

    #[test]
    fn taper_parses() {
        assert_eq!("hann".parse::<Taper>().unwrap(), Taper::Hann);
        assert_eq!("rect".parse::<Taper>().unwrap(), Taper::Rectangular);
        assert!("kaiser".parse::<Taper>().is_err());
    }
}
