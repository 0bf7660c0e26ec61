//! Per-view feature-map provisioning.
//!
//! Feature maps either arrive as FMAP tensor files computed offline by an
//! external backbone, or are produced by the built-in handcrafted
//! extractor, which stands in for a frozen image model with multi-scale,
//! edge-aware channels.
//!
//! FMAP format (little-endian): magic "FMAP", u32 version = 1, u32 H,
//! u32 W, u32 C, then H*W*C float32 row-major, channel-innermost.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

/// Dense H x W x C feature image, row-major, channel-innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        FeatureMap {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    #[inline]
    pub fn texel(&self, x: usize, y: usize) -> &[f32] {
        let base = (y * self.width + x) * self.channels;
        &self.data[base..base + self.channels]
    }

    #[inline]
    pub fn texel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let base = (y * self.width + x) * self.channels;
        &mut self.data[base..base + self.channels]
    }

    pub fn validate_finite(&self) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite feature value at flat index {pos}"
            )));
        }
        Ok(())
    }
}

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            pixels: vec![[0, 0, 0]; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }
}

const FMAP_MAGIC: &[u8; 4] = b"FMAP";
const FMAP_VERSION: u32 = 1;

pub fn write_fmap(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let r: std::io::Result<()> = (|| {
        w.write_all(FMAP_MAGIC)?;
        w.write_all(&FMAP_VERSION.to_le_bytes())?;
        w.write_all(&(map.height as u32).to_le_bytes())?;
        w.write_all(&(map.width as u32).to_le_bytes())?;
        w.write_all(&(map.channels as u32).to_le_bytes())?;
        for &v in &map.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    })();
    r.map_err(|e| Error::io(path, e))
}

pub fn read_fmap(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let mut data = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut data)
        .map_err(|e| Error::io(path, e))?;
    if data.len() < 20 {
        return Err(Error::format(path, data.len() as u64, "truncated header"));
    }
    if &data[0..4] != FMAP_MAGIC {
        return Err(Error::format(path, 0, "bad magic (expected \"FMAP\")"));
    }
    let u32_at = |off: usize| u32::from_le_bytes(data[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FMAP_VERSION {
        return Err(Error::format(path, 4, format!("unsupported version {version}")));
    }
    let height = u32_at(8) as usize;
    let width = u32_at(12) as usize;
    let channels = u32_at(16) as usize;
    if width == 0 || height == 0 || channels == 0 {
        return Err(Error::format(path, 8, "zero dimension"));
    }
    let expected = 20 + width * height * channels * 4;
    if data.len() != expected {
        return Err(Error::format(
            path,
            data.len().min(expected) as u64,
            format!("payload is {} bytes, expected {}", data.len() - 20, expected - 20),
        ));
    }
    let values: Vec<f32> = data[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeatureMap {
        width,
        height,
        channels,
        data: values,
    })
}

/// Read an 8-bit RGB image from PNG or PPM (P6, maxval 255), chosen by
/// file extension.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => read_png(path),
        _ => read_ppm(path),
    }
}

fn read_png(path: &Path) -> Result<Image> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::parse(path, "header", e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::parse(path, "frame", e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::parse(
            path,
            "header",
            format!("unsupported bit depth {:?} (8-bit only)", info.bit_depth),
        ));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut img = Image::new(width, height);
    match info.color_type {
        png::ColorType::Rgb => {
            for (i, px) in buf[..width * height * 3].chunks_exact(3).enumerate() {
                img.pixels[i] = [px[0], px[1], px[2]];
            }
        }
        png::ColorType::Rgba => {
            for (i, px) in buf[..width * height * 4].chunks_exact(4).enumerate() {
                img.pixels[i] = [px[0], px[1], px[2]];
            }
        }
        png::ColorType::Grayscale => {
            for (i, px) in buf[..width * height].iter().enumerate() {
                img.pixels[i] = [*px, *px, *px];
            }
        }
        other => {
            return Err(Error::parse(
                path,
                "header",
                format!("unsupported PNG color type {other:?}"),
            ))
        }
    }
    Ok(img)
}

fn read_ppm(path: &Path) -> Result<Image> {
    let mut data = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut data)
        .map_err(|e| Error::io(path, e))?;
    // header: "P6" <ws> width <ws> height <ws> maxval <single ws> payload
    let mut off = 0usize;
    let token = |off: &mut usize| -> Result<String> {
        while *off < data.len() && (data[*off].is_ascii_whitespace() || data[*off] == b'#') {
            if data[*off] == b'#' {
                while *off < data.len() && data[*off] != b'\n' {
                    *off += 1;
                }
            } else {
                *off += 1;
            }
        }
        let start = *off;
        while *off < data.len() && !data[*off].is_ascii_whitespace() {
            *off += 1;
        }
        if start == *off {
            return Err(Error::parse(path, format!("byte {start}"), "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&data[start..*off]).into_owned())
    };
    if token(&mut off)? != "P6" {
        return Err(Error::parse(path, "byte 0", "not a P6 PPM"));
    }
    let parse_dim = |s: String| -> Result<usize> {
        s.parse()
            .map_err(|e| Error::parse(path, "header", format!("bad dimension: {e}")))
    };
    let width = parse_dim(token(&mut off)?)?;
    let height = parse_dim(token(&mut off)?)?;
    let maxval = parse_dim(token(&mut off)?)?;
    if maxval != 255 {
        return Err(Error::parse(
            path,
            "header",
            format!("maxval {maxval} unsupported (8-bit only)"),
        ));
    }
    off += 1; // single whitespace after maxval
    let need = width * height * 3;
    if data.len() < off + need {
        return Err(Error::format(path, data.len() as u64, "truncated pixel data"));
    }
    let mut img = Image::new(width, height);
    for (i, px) in data[off..off + need].chunks_exact(3).enumerate() {
        img.pixels[i] = [px[0], px[1], px[2]];
    }
    Ok(img)
}

pub fn write_ppm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(img.pixels.len() * 3 + 32);
    out.extend_from_slice(format!("P6\n{} {}\n255\n", img.width, img.height).as_bytes());
    for px in &img.pixels {
        out.extend_from_slice(px);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Number of channels produced by [`handcrafted_features`].
pub const HANDCRAFTED_CHANNELS: usize = 12;

/// Handcrafted stand-in for a frozen backbone. 12 channels:
/// RGB (3), Gaussian-blurred RGB at sigma = 2 px and sigma = 8 px (6),
/// Sobel gradient magnitude of luma (1), local luma standard deviation in
/// a 5x5 window (1), constant bias 1.0 (1). All channels lie in [0, 1];
/// the gradient channel is divided by its maximum theoretical response
/// and clamped. Convolutions clamp to the image edge.
pub fn handcrafted_features(img: &Image) -> FeatureMap {
    let (w, h) = (img.width, img.height);
    let mut map = FeatureMap::new(w, h, HANDCRAFTED_CHANNELS);

    // channel planes in f64 to keep the filters simple
    let mut rgb = vec![[0.0f64; 3]; w * h];
    let mut luma = vec![0.0f64; w * h];
    for (i, px) in img.pixels.iter().enumerate() {
        let r = px[0] as f64 / 255.0;
        let g = px[1] as f64 / 255.0;
        let b = px[2] as f64 / 255.0;
        rgb[i] = [r, g, b];
        luma[i] = 0.299 * r + 0.587 * g + 0.114 * b;
    }

    let blur2 = gaussian_blur_rgb(&rgb, w, h, 2.0);
    let blur8 = gaussian_blur_rgb(&rgb, w, h, 8.0);
    let sobel = sobel_magnitude(&luma, w, h);
    let local_sd = local_std(&luma, w, h, 2);

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let t = map.texel_mut(x, y);
            for c in 0..3 {
                t[c] = rgb[i][c] as f32;
                t[3 + c] = blur2[i][c] as f32;
                t[6 + c] = blur8[i][c] as f32;
            }
            t[9] = sobel[i] as f32;
            t[10] = local_sd[i] as f32;
            t[11] = 1.0;
        }
    }
    map
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

#[inline]
fn clamp_idx(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

/// Separable Gaussian blur with clamp-to-edge borders.
fn gaussian_blur_rgb(rgb: &[[f64; 3]], w: usize, h: usize, sigma: f64) -> Vec<[f64; 3]> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let mut tmp = vec![[0.0f64; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (j, &kv) in kernel.iter().enumerate() {
                let sx = clamp_idx(x as i64 + j as i64 - radius, w);
                let s = rgb[y * w + sx];
                for c in 0..3 {
                    acc[c] += kv * s[c];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![[0.0f64; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (j, &kv) in kernel.iter().enumerate() {
                let sy = clamp_idx(y as i64 + j as i64 - radius, h);
                let s = tmp[sy * w + x];
                for c in 0..3 {
                    acc[c] += kv * s[c];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Sobel gradient magnitude of a [0,1] plane, normalized by the largest
/// response the operator can produce on such inputs (4 per axis).
fn sobel_magnitude(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; w * h];
    let at = |x: i64, y: i64| plane[clamp_idx(y, h) * w + clamp_idx(x, w)];
    let max_response = (4.0f64 * 4.0 + 4.0 * 4.0).sqrt();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let gx = -at(x - 1, y - 1) - 2.0 * at(x - 1, y) - at(x - 1, y + 1)
                + at(x + 1, y - 1)
                + 2.0 * at(x + 1, y)
                + at(x + 1, y + 1);
            let gy = -at(x - 1, y - 1) - 2.0 * at(x, y - 1) - at(x + 1, y - 1)
                + at(x - 1, y + 1)
                + 2.0 * at(x, y + 1)
                + at(x + 1, y + 1);
            out[(y as usize) * w + x as usize] =
                ((gx * gx + gy * gy).sqrt() / max_response).clamp(0.0, 1.0);
        }
    }
    out
}

/// Standard deviation of a (2r+1)^2 clamp-to-edge window.
fn local_std(plane: &[f64], w: usize, h: usize, r: i64) -> Vec<f64> {
    let mut out = vec![0.0f64; w * h];
    let at = |x: i64, y: i64| plane[clamp_idx(y, h) * w + clamp_idx(x, w)];
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut s = 0.0;
            let mut s2 = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let v = at(x + dx, y + dy);
                    s += v;
                    s2 += v * v;
                }
            }
            let mean = s / n;
            out[(y as usize) * w + x as usize] = (s2 / n - mean * mean).max(0.0).sqrt();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_map(w: usize, h: usize, c: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut m = FeatureMap::new(w, h, c);
        for v in &mut m.data {
            *v = rng.gen_range(-10.0..10.0);
        }
        m
    }

    #[test]
    fn fmap_round_trip_bitwise() {
        let dir = crate::testutil::tmpdir("fmap");
        let m = random_map(8, 8, 4, 1);
        let p = dir.join("a.fmap");
        write_fmap(&m, &p).unwrap();
        let back = read_fmap(&p).unwrap();
        assert_eq!(m, back);
        for (a, b) in m.data.iter().zip(&back.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn fmap_bad_magic() {
        let dir = crate::testutil::tmpdir("fmap-magic");
        let p = dir.join("x.fmap");
        let m = random_map(2, 2, 1, 2);
        write_fmap(&m, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0..4].copy_from_slice(b"XMAP");
        std::fs::write(&p, bytes).unwrap();
        let err = read_fmap(&p).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn fmap_truncation_detected() {
        let dir = crate::testutil::tmpdir("fmap-trunc");
        let p = dir.join("t.fmap");
        write_fmap(&random_map(4, 4, 2, 3), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        let err = read_fmap(&p).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn ppm_known_bytes() {
        let dir = crate::testutil::tmpdir("ppm");
        let p = dir.join("k.ppm");
        std::fs::write(&p, b"P6\n2 2\n255\n\x01\x02\x03\x04\x05\x06\x07\x08\x09\x0a\x0b\x0c").unwrap();
        let img = read_image(&p).unwrap();
        assert_eq!(img.get(0, 0), [1, 2, 3]);
        assert_eq!(img.get(1, 0), [4, 5, 6]);
        assert_eq!(img.get(0, 1), [7, 8, 9]);
        assert_eq!(img.get(1, 1), [10, 11, 12]);
    }

    #[test]
    fn truncated_ppm_errors() {
        let dir = crate::testutil::tmpdir("ppm-trunc");
        let p = dir.join("t.ppm");
        std::fs::write(&p, b"P6\n4 4\n255\nshort").unwrap();
        assert!(read_image(&p).is_err());
    }

    /// Cross-decoder oracle: the same pixels through PNG and PPM agree.
    #[test]
    fn png_and_ppm_agree() {
        let dir = crate::testutil::tmpdir("png");
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut img = Image::new(9, 7);
        for px in &mut img.pixels {
            *px = [rng.gen(), rng.gen(), rng.gen()];
        }
        let ppm = dir.join("i.ppm");
        write_ppm(&img, &ppm).unwrap();

        let png_path = dir.join("i.png");
        let file = std::fs::File::create(&png_path).unwrap();
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), 9, 7);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().unwrap();
        let flat: Vec<u8> = img.pixels.iter().flatten().cloned().collect();
        writer.write_image_data(&flat).unwrap();
        writer.finish().unwrap();

        let a = read_image(&ppm).unwrap();
        let b = read_image(&png_path).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_image_features() {
        let mut img = Image::new(16, 16);
        for px in &mut img.pixels {
            *px = [100, 150, 200];
        }
        let f = handcrafted_features(&img);
        let expect = [100.0 / 255.0, 150.0 / 255.0, 200.0 / 255.0];
        for y in 0..16 {
            for x in 0..16 {
                let t = f.texel(x, y);
                for c in 0..3 {
                    assert!((t[c] as f64 - expect[c]).abs() < 1e-6);
                    assert!((t[3 + c] as f64 - expect[c]).abs() < 1e-6, "blur2 == rgb");
                    assert!((t[6 + c] as f64 - expect[c]).abs() < 1e-6, "blur8 == rgb");
                }
                assert!(t[9].abs() < 1e-7, "no gradient on constant input");
                assert!(t[10].abs() < 1e-7, "no local std on constant input");
                assert!((t[11] - 1.0).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn step_edge_sobel_response() {
        let mut img = Image::new(32, 16);
        for y in 0..16 {
            for x in 0..32 {
                img.set(x, y, if x < 16 { [0, 0, 0] } else { [255, 255, 255] });
            }
        }
        let f = handcrafted_features(&img);
        // maximal response on the edge columns, zero far away
        let on_edge = f.texel(15, 8)[9].max(f.texel(16, 8)[9]);
        assert!(on_edge > 0.7, "edge response {on_edge}");
        assert!(f.texel(2, 8)[9] < 1e-7);
        assert!(f.texel(29, 8)[9] < 1e-7);
    }

    /// Dense convolution oracle for the blur channels.
    #[test]
    fn blur_matches_direct_convolution() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut img = Image::new(20, 14);
        for px in &mut img.pixels {
            *px = [rng.gen(), rng.gen(), rng.gen()];
        }
        let f = handcrafted_features(&img);
        let sigma = 2.0;
        let kernel = gaussian_kernel(sigma);
        let radius = (kernel.len() / 2) as i64;
        for y in 0..14i64 {
            for x in 0..20i64 {
                let mut acc = [0.0f64; 3];
                for (jy, &ky) in kernel.iter().enumerate() {
                    for (jx, &kx) in kernel.iter().enumerate() {
                        let sx = clamp_idx(x + jx as i64 - radius, 20);
                        let sy = clamp_idx(y + jy as i64 - radius, 14);
                        let px = img.get(sx, sy);
                        for c in 0..3 {
                            acc[c] += ky * kx * px[c] as f64 / 255.0;
                        }
                    }
                }
                let t = f.texel(x as usize, y as usize);
                for c in 0..3 {
                    assert!(
                        (t[3 + c] as f64 - acc[c]).abs() < 1e-5,
                        "({x},{y}) c{c}: {} vs {}",
                        t[3 + c],
                        acc[c]
                    );
                }
            }
        }
    }

    /// Interior translation equivariance of the extractor.
    #[test]
    fn translation_equivariance_away_from_borders() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let (w, h) = (96usize, 80usize);
        let mut img = Image::new(w, h);
        for px in &mut img.pixels {
            *px = [rng.gen(), rng.gen(), rng.gen()];
        }
        let (dx, dy) = (3usize, 2usize);
        let mut shifted = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let sx = (x + w - dx) % w;
                let sy = (y + h - dy) % h;
                shifted.set(x, y, img.get(sx, sy));
            }
        }
        let fa = handcrafted_features(&img);
        let fb = handcrafted_features(&shifted);
        // margin > blur8 radius (24) + shift
        let margin = 28usize;
        for y in margin..h - margin {
            for x in margin..w - margin {
                let a = fa.texel(x, y);
                let b = fb.texel(x + dx, y + dy);
                for c in 0..HANDCRAFTED_CHANNELS {
                    assert!(
                        (a[c] - b[c]).abs() <= 1e-6,
                        "({x},{y}) channel {c}: {} vs {}",
                        a[c],
                        b[c]
                    );
                }
            }
        }
    }

    #[test]
    fn extreme_inputs_stay_finite() {
        let mut img = Image::new(8, 8);
        for (i, px) in img.pixels.iter_mut().enumerate() {
            *px = if i % 2 == 0 { [0, 0, 0] } else { [255, 255, 255] };
        }
        let f = handcrafted_features(&img);
        f.validate_finite().unwrap();
        assert!(f.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
