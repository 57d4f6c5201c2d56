//! Image containers, color conversion and resampling.
//!
//! Coordinates follow the pixel-center convention everywhere: pixel `(x, y)`
//! covers the unit square centered on the continuous point `(x, y)`.

use std::io::{Read, Write};

use image::RgbImage;

use crate::error::{Error, Result};

/// Dense single-channel float image in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("plane dimensions must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "plane data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample with edge clamping.
    pub fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        self.bilinear_inside(x, y)
    }

    /// Bilinear sample with mirror reflection outside `[0, w-1] x [0, h-1]`.
    pub fn sample_reflect(&self, x: f64, y: f64) -> f64 {
        let x = reflect_coord(x, self.width);
        let y = reflect_coord(y, self.height);
        self.bilinear_inside(x, y)
    }

    fn bilinear_inside(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Crop `[x0, x0 + w) x [y0, y0 + h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Plane> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid("crop rectangle outside plane"));
        }
        Plane::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }
}

/// Mirror a continuous coordinate into `[0, n-1]` (edge pixel not repeated).
pub(crate) fn reflect_coord(mut c: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let max = (n - 1) as f64;
    let period = 2.0 * max;
    c = c.rem_euclid(period);
    if c > max {
        c = period - c;
    }
    c
}

/// Mirror an integer index into `[0, n)` (edge pixel not repeated).
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Per-patch standardized grayscale image.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage(Plane);

impl GrayImage {
    /// Standardize a luminance plane to zero mean and unit (population)
    /// standard deviation. Constant inputs become all zeros.
    pub fn standardize(plane: Plane) -> GrayImage {
        let n = plane.data.len() as f64;
        let mean = plane.data.iter().sum::<f64>() / n;
        let var = plane.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        let data = if std < 1e-12 {
            vec![0.0; plane.data.len()]
        } else {
            plane.data.iter().map(|v| (v - mean) / std).collect()
        };
        let g = GrayImage(Plane { data, ..plane });
        g.debug_check();
        g
    }

    /// Wrap an already normalized plane (e.g. one read back from disk).
    pub fn from_normalized(plane: Plane) -> GrayImage {
        GrayImage(plane)
    }

    fn debug_check(&self) {
        if cfg!(debug_assertions) {
            let n = self.0.data.len() as f64;
            let mean = self.0.mean();
            let var = self.0.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let zero = self.0.data.iter().all(|&v| v == 0.0);
            debug_assert!(zero || (mean.abs() < 1e-6 && (var.sqrt() - 1.0).abs() < 1e-6));
        }
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn into_plane(self) -> Plane {
        self.0
    }
}

/// HSV image with `h` in degrees `[0, 360)` and `s, v` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsvImage {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl HsvImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }
}

fn check_rgb(rgb: &RgbImage) -> Result<()> {
    if rgb.width() == 0 || rgb.height() == 0 {
        return Err(Error::invalid("empty image"));
    }
    Ok(())
}

/// BT.601 luminance of an 8-bit RGB image, unnormalized.
pub fn luminance(rgb: &RgbImage) -> Result<Plane> {
    check_rgb(rgb)?;
    let data = rgb
        .pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    Plane::new(rgb.width() as usize, rgb.height() as usize, data)
}

/// Luminance followed by per-patch standardization.
pub fn rgb_to_gray_normalized(rgb: &RgbImage) -> Result<GrayImage> {
    Ok(GrayImage::standardize(luminance(rgb)?))
}

/// Hexcone HSV of one 8-bit pixel. Hue is 0 when saturation is 0.
pub fn rgb_pixel_to_hsv(r: u8, g: u8, b: u8) -> [f64; 3] {
    let r = r as f64 / 255.0;
    let g = g as f64 / 255.0;
    let b = b as f64 / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let h = if h >= 360.0 { h - 360.0 } else { h };
    [h, s, v]
}

/// Inverse hexcone map back to `[0, 1]` RGB.
pub fn hsv_to_rgb(hsv: [f64; 3]) -> [f64; 3] {
    let [h, s, v] = hsv;
    let c = v * s;
    let hp = (h / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

pub fn rgb_to_hsv(rgb: &RgbImage) -> Result<HsvImage> {
    check_rgb(rgb)?;
    Ok(HsvImage {
        width: rgb.width() as usize,
        height: rgb.height() as usize,
        data: rgb.pixels().map(|p| rgb_pixel_to_hsv(p[0], p[1], p[2])).collect(),
    })
}

#[inline]
fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> f64 {
    (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5
}

/// Bilinear resampling with pixel-center alignment. Same-size requests
/// return an exact copy.
pub fn resample_bilinear(img: &Plane, out_width: usize, out_height: usize) -> Result<Plane> {
    if out_width == 0 || out_height == 0 {
        return Err(Error::invalid("resample target must have positive size"));
    }
    if out_width == img.width && out_height == img.height {
        return Ok(img.clone());
    }
    Plane::from_fn(out_width, out_height, |x, y| {
        img.sample_clamped(
            source_coord(x, img.width, out_width),
            source_coord(y, img.height, out_height),
        )
    })
}

/// Per-axis resampling weights: bilinear when enlarging, box-area coverage
/// when shrinking.
fn axis_weights(src_len: usize, dst_len: usize) -> Vec<Vec<(usize, f64)>> {
    let f = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|d| {
            if f <= 1.0 {
                let c = source_coord(d, src_len, dst_len).clamp(0.0, (src_len - 1) as f64);
                let i = c.floor() as usize;
                let t = c - i as f64;
                if i + 1 < src_len && t > 0.0 {
                    vec![(i, 1.0 - t), (i + 1, t)]
                } else {
                    vec![(i, 1.0)]
                }
            } else {
                let (lo, hi) = (d as f64 * f, (d + 1) as f64 * f);
                let mut w = Vec::new();
                let mut i = lo.floor() as usize;
                while (i as f64) < hi && i < src_len {
                    let cover = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    if cover > 0.0 {
                        w.push((i, cover / f));
                    }
                    i += 1;
                }
                w
            }
        })
        .collect()
}

/// Separable resampling that averages source pixels when shrinking (no
/// aliasing) and interpolates bilinearly when enlarging. Same-size requests
/// return an exact copy.
pub fn resample(img: &Plane, out_width: usize, out_height: usize) -> Result<Plane> {
    if out_width == 0 || out_height == 0 {
        return Err(Error::invalid("resample target must have positive size"));
    }
    if out_width == img.width && out_height == img.height {
        return Ok(img.clone());
    }
    let wx = axis_weights(img.width, out_width);
    let wy = axis_weights(img.height, out_height);
    let horiz = Plane::from_fn(out_width, img.height, |x, y| {
        wx[x].iter().map(|&(i, w)| w * img.get(i, y)).sum()
    })?;
    Plane::from_fn(out_width, out_height, |x, y| {
        wy[y].iter().map(|&(j, w)| w * horiz.get(x, j)).sum()
    })
}

/// Split a color image into three float planes in `[0, 255]`.
pub fn rgb_planes(rgb: &RgbImage) -> Result<[Plane; 3]> {
    check_rgb(rgb)?;
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut chans = [Vec::with_capacity(w * h), Vec::with_capacity(w * h), Vec::with_capacity(w * h)];
    for p in rgb.pixels() {
        for c in 0..3 {
            chans[c].push(p[c] as f64);
        }
    }
    let [r, g, b] = chans;
    Ok([Plane::new(w, h, r)?, Plane::new(w, h, g)?, Plane::new(w, h, b)?])
}

/// Recombine three planes into an 8-bit color image, rounding and clamping.
pub fn planes_to_rgb(planes: &[Plane; 3]) -> RgbImage {
    let (w, h) = (planes[0].width, planes[0].height);
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| planes[c].get(x as usize, y as usize).round().clamp(0.0, 255.0) as u8;
        image::Rgb([px(0), px(1), px(2)])
    })
}

/// Resampling of an 8-bit color image (see `resample`).
pub fn resample_rgb(rgb: &RgbImage, out_width: usize, out_height: usize) -> Result<RgbImage> {
    if out_width == 0 || out_height == 0 {
        return Err(Error::invalid("resample target must have positive size"));
    }
    if out_width == rgb.width() as usize && out_height == rgb.height() as usize {
        return Ok(rgb.clone());
    }
    let planes = rgb_planes(rgb)?;
    let out = [
        resample(&planes[0], out_width, out_height)?,
        resample(&planes[1], out_width, out_height)?,
        resample(&planes[2], out_width, out_height)?,
    ];
    Ok(planes_to_rgb(&out))
}

/// Crop `[x0, x0 + w) x [y0, y0 + h)` from a color image.
pub fn crop_rgb(rgb: &RgbImage, x0: u32, y0: u32, w: u32, h: u32) -> Result<RgbImage> {
    if w == 0 || h == 0 || x0 + w > rgb.width() || y0 + h > rgb.height() {
        return Err(Error::invalid(format!(
            "crop {}x{}+{}+{} outside {}x{} image",
            w,
            h,
            x0,
            y0,
            rgb.width(),
            rgb.height()
        )));
    }
    Ok(image::imageops::crop_imm(rgb, x0, y0, w, h).to_image())
}

const GRAY_MAGIC: &[u8; 8] = b"GMGRAY01";

/// Write a normalized gray image: 8-byte magic, u32 width, u32 height, then
/// little-endian f32 samples row-major.
pub fn write_gray<W: Write>(img: &GrayImage, mut out: W) -> std::io::Result<()> {
    out.write_all(GRAY_MAGIC)?;
    out.write_all(&(img.width() as u32).to_le_bytes())?;
    out.write_all(&(img.height() as u32).to_le_bytes())?;
    for &v in img.plane().data() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_gray<R: Read>(mut input: R) -> Result<GrayImage> {
    let mut header = [0u8; 16];
    input
        .read_exact(&mut header)
        .map_err(|e| Error::format("gray image", e.to_string()))?;
    if &header[..8] != GRAY_MAGIC {
        return Err(Error::format("gray image", "bad magic"));
    }
    let w = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let data = crate::binio::read_f32_vec(&mut input, w * h)
        .map_err(|e| Error::format("gray image", e.to_string()))?;
    Ok(GrayImage::from_normalized(Plane::new(w, h, data)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn rgb_from(w: u32, h: u32, f: impl Fn(u32, u32) -> [u8; 3]) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb(f(x, y)))
    }

    #[test]
    fn constant_image_normalizes_to_zero() {
        let img = rgb_from(7, 5, |_, _| [90, 12, 200]);
        let g = rgb_to_gray_normalized(&img).unwrap();
        assert!(g.plane().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_pixel_standardization() {
        let img = rgb_from(2, 1, |x, _| if x == 0 { [0, 0, 0] } else { [255, 255, 255] });
        let g = rgb_to_gray_normalized(&img).unwrap();
        assert!((g.plane().get(0, 0) + 1.0).abs() < 1e-12);
        assert!((g.plane().get(1, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_is_affine_invariant() {
        let base = rgb_from(9, 8, |x, y| {
            let v = ((x * 13 + y * 7) % 50) as u8;
            [v, v, v]
        });
        let mapped = rgb_from(9, 8, |x, y| {
            let v = ((x * 13 + y * 7) % 50) as u8;
            let m = 3 * v + 20;
            [m, m, m]
        });
        let a = rgb_to_gray_normalized(&base).unwrap();
        let b = rgb_to_gray_normalized(&mapped).unwrap();
        for (p, q) in a.plane().data().iter().zip(b.plane().data()) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_image_rejected() {
        let img = RgbImage::new(0, 0);
        assert!(matches!(rgb_to_gray_normalized(&img), Err(Error::InvalidInput(_))));
        assert!(rgb_to_hsv(&img).is_err());
    }

    #[test]
    fn hsv_reference_pixels() {
        assert_eq!(rgb_pixel_to_hsv(255, 0, 0), [0.0, 1.0, 1.0]);
        let gray = rgb_pixel_to_hsv(128, 128, 128);
        assert_eq!(gray[0], 0.0);
        assert_eq!(gray[1], 0.0);
        assert!((gray[2] - 128.0 / 255.0).abs() < 1e-15);
        // h = 60 * ((r - g) / delta + 4) with delta = 1, g = 128/255
        let azure = rgb_pixel_to_hsv(0, 128, 255);
        let expected = 60.0 * (4.0 - 128.0 / 255.0);
        assert!((azure[0] - expected).abs() < 1e-9);
        assert!((azure[0] - 209.9).abs() < 0.05);
        assert_eq!(azure[1], 1.0);
        assert_eq!(azure[2], 1.0);
    }

    #[test]
    fn resample_identity_and_constant() {
        let p = Plane::from_fn(6, 4, |x, y| (x * 3 + y) as f64 * 0.37).unwrap();
        assert_eq!(resample_bilinear(&p, 6, 4).unwrap(), p);
        let c = Plane::filled(5, 5, 2.5).unwrap();
        let r = resample_bilinear(&c, 13, 3).unwrap();
        assert!(r.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn resample_checkerboard_to_single_pixel() {
        let p = Plane::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let r = resample_bilinear(&p, 1, 1).unwrap();
        assert!((r.get(0, 0) - 0.5).abs() < 1e-12);
        assert!(resample_bilinear(&p, 0, 3).is_err());
    }

    #[test]
    fn upsample_then_downsample_smooth_gradient() {
        let (w, h) = (40, 30);
        let p = Plane::from_fn(w, h, |x, y| {
            let u = x as f64 / w as f64;
            let v = y as f64 / h as f64;
            0.5 + 0.3 * (2.0 * u).sin() * (1.5 * v).cos()
        })
        .unwrap();
        let up = resample_bilinear(&p, 2 * w, 2 * h).unwrap();
        let back = resample_bilinear(&up, w, h).unwrap();
        let err = p
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.05, "max error {err}");
    }

    #[test]
    fn area_resample_averages_when_shrinking() {
        let p = Plane::from_fn(8, 4, |x, y| (x + 10 * y) as f64).unwrap();
        let r = resample(&p, 2, 1).unwrap();
        let block = |x0: usize| (0..4).flat_map(|y| (x0..x0 + 4).map(move |x| (x + 10 * y) as f64)).sum::<f64>() / 16.0;
        assert!((r.get(0, 0) - block(0)).abs() < 1e-12);
        assert!((r.get(1, 0) - block(4)).abs() < 1e-12);
        assert_eq!(resample(&p, 8, 4).unwrap(), p);
        let c = Plane::filled(9, 7, 1.5).unwrap();
        assert!(resample(&c, 4, 11).unwrap().data().iter().all(|&v| (v - 1.5).abs() < 1e-12));
        // Enlarging matches bilinear, and a 2x shrink equals the 2x2 mean.
        assert_eq!(resample(&p, 16, 9).unwrap(), resample_bilinear(&p, 16, 9).unwrap());
        let half = resample(&p, 4, 2).unwrap();
        let bil = resample_bilinear(&p, 4, 2).unwrap();
        for (a, b) in half.data().iter().zip(bil.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reflect_helpers() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(2, 5), 2);
        assert!((reflect_coord(-0.5, 5) - 0.5).abs() < 1e-12);
        assert!((reflect_coord(4.5, 5) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn gray_binary_roundtrip() {
        let img = rgb_from(4, 3, |x, y| [(x * 40) as u8, (y * 60) as u8, 7]);
        let g = rgb_to_gray_normalized(&img).unwrap();
        let mut buf = Vec::new();
        write_gray(&g, &mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 4 * 12);
        let back = read_gray(&buf[..]).unwrap();
        for (a, b) in g.plane().data().iter().zip(back.plane().data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    proptest::proptest! {
        #[test]
        fn hsv_inverse_roundtrip(r in 0u8..=255, g in 0u8..=255, b in 0u8..=255) {
            let hsv = rgb_pixel_to_hsv(r, g, b);
            proptest::prop_assert!(hsv[0] >= 0.0 && hsv[0] < 360.0);
            proptest::prop_assert!((0.0..=1.0).contains(&hsv[1]));
            proptest::prop_assert!((0.0..=1.0).contains(&hsv[2]));
            let back = hsv_to_rgb(hsv);
            for (c, orig) in back.iter().zip([r, g, b]) {
                proptest::prop_assert!((c * 255.0 - orig as f64).abs() <= 1.0);
            }
        }
    }
}
