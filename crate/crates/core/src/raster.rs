//! Minimal RGB raster type and the pixel transforms the pipeline needs.
//!
//! The quarter-turn rotations are exact pixel permutations: an image rotated
//! by 90/180/270 degrees and rotated back is bit-identical to the original.
//! That property is what lets a rotated query score 1.0 against the matching
//! database entry. Arbitrary-angle rotation, perspective warp and color
//! jitter are implemented so that zero-magnitude parameters are exact
//! identities (u8 -> f32 -> u8 round-trips losslessly on integral values).

use crate::error::{Error, Result};

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Rgb8Image {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        let expect = width as usize * height as usize * 3;
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be nonzero"));
        }
        if data.len() != expect {
            return Err(Error::invalid(format!(
                "image buffer is {} bytes, expected {} for {}x{} RGB",
                data.len(),
                expect,
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

    /// Solid-color image, mostly for tests.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Exact counter-clockwise quarter-turn rotations. `turns` is the number
    /// of 90-degree steps; the output pixel (x, y) is a permutation of the
    /// input, with no resampling.
    pub fn rotate_quarter(&self, turns: u8) -> Rgb8Image {
        let turns = turns % 4;
        if turns == 0 {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        let (ow, oh) = if turns % 2 == 0 { (w, h) } else { (h, w) };
        let mut out = Rgb8Image {
            width: ow,
            height: oh,
            data: vec![0; self.data.len()],
        };
        for y in 0..h {
            for x in 0..w {
                let (nx, ny) = match turns {
                    1 => (y, w - 1 - x),
                    2 => (w - 1 - x, h - 1 - y),
                    _ => (h - 1 - y, x),
                };
                out.set_pixel(nx, ny, self.pixel(x, y));
            }
        }
        out
    }

    /// Crop a sub-window. Fails if the window exceeds the image bounds.
    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> Result<Rgb8Image> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(Error::OutOfRange(format!(
                "crop {}x{}+{}+{} exceeds {}x{} image",
                w, h, x0, y0, self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w as usize * h as usize * 3);
        for y in y0..y0 + h {
            let row = (y as usize * self.width as usize + x0 as usize) * 3;
            data.extend_from_slice(&self.data[row..row + w as usize * 3]);
        }
        Ok(Rgb8Image {
            width: w,
            height: h,
            data,
        })
    }

    /// Bilinear resize. Identity when the target size equals the source size.
    pub fn resize_bilinear(&self, w: u32, h: u32) -> Rgb8Image {
        if w == self.width && h == self.height {
            return self.clone();
        }
        let mut out = Rgb8Image {
            width: w,
            height: h,
            data: vec![0; w as usize * h as usize * 3],
        };
        let sx = self.width as f32 / w as f32;
        let sy = self.height as f32 / h as f32;
        for y in 0..h {
            for x in 0..w {
                let src_x = (x as f32 + 0.5) * sx - 0.5;
                let src_y = (y as f32 + 0.5) * sy - 0.5;
                out.set_pixel(x, y, self.sample_bilinear(src_x, src_y));
            }
        }
        out
    }

    /// Rotate by an arbitrary angle (degrees, counter-clockwise) about the
    /// image center with reflect padding. An angle of exactly 0 is the
    /// identity.
    pub fn rotate_bilinear(&self, angle_deg: f32) -> Rgb8Image {
        if angle_deg == 0.0 {
            return self.clone();
        }
        let theta = (angle_deg as f64).to_radians();
        let (cos_t, sin_t) = (theta.cos(), theta.sin());
        let cx = (self.width as f64 - 1.0) / 2.0;
        let cy = (self.height as f64 - 1.0) / 2.0;
        let mut out = Rgb8Image {
            width: self.width,
            height: self.height,
            data: vec![0; self.data.len()],
        };
        for y in 0..self.height {
            for x in 0..self.width {
                // inverse map: rotate the output coordinate by -theta
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let sx = cos_t * dx - sin_t * dy + cx;
                let sy = sin_t * dx + cos_t * dy + cy;
                out.set_pixel(x, y, self.sample_bilinear(sx as f32, sy as f32));
            }
        }
        out
    }

    /// Perspective warp. `corners` are the source-image positions (in pixels)
    /// that map to the four output corners, in order top-left, top-right,
    /// bottom-right, bottom-left. The output has size `out_w` x `out_h` and
    /// uses reflect padding. Corners equal to the image corners with output
    /// size equal to the input size is the identity.
    pub fn warp_perspective(&self, corners: [[f64; 2]; 4], out_w: u32, out_h: u32) -> Rgb8Image {
        let identity = out_w == self.width
            && out_h == self.height
            && corners
                == [
                    [0.0, 0.0],
                    [(self.width - 1) as f64, 0.0],
                    [(self.width - 1) as f64, (self.height - 1) as f64],
                    [0.0, (self.height - 1) as f64],
                ];
        if identity {
            return self.clone();
        }
        let dst = [
            [0.0, 0.0],
            [(out_w - 1) as f64, 0.0],
            [(out_w - 1) as f64, (out_h - 1) as f64],
            [0.0, (out_h - 1) as f64],
        ];
        let h = homography_from_points(dst, corners);
        let mut out = Rgb8Image {
            width: out_w,
            height: out_h,
            data: vec![0; out_w as usize * out_h as usize * 3],
        };
        for y in 0..out_h {
            for x in 0..out_w {
                let (sx, sy) = apply_homography(&h, x as f64, y as f64);
                out.set_pixel(x, y, self.sample_bilinear(sx as f32, sy as f32));
            }
        }
        out
    }

    /// Channel-affine color jitter. Deltas are fractional: brightness and
    /// contrast scale around mid-gray, saturation scales the chroma about the
    /// per-pixel luma, hue rotates in the YIQ plane by `hue` turns. All-zero
    /// deltas are the identity.
    pub fn color_jitter(&self, brightness: f32, contrast: f32, saturation: f32, hue: f32) -> Rgb8Image {
        if brightness == 0.0 && contrast == 0.0 && saturation == 0.0 && hue == 0.0 {
            return self.clone();
        }
        let bf = 1.0 + brightness;
        let cf = 1.0 + contrast;
        let sf = 1.0 + saturation;
        let hue_rad = hue as f64 * std::f64::consts::TAU;
        let (hc, hs) = (hue_rad.cos() as f32, hue_rad.sin() as f32);
        let mut out = self.clone();
        for px in out.data.chunks_exact_mut(3) {
            let mut r = px[0] as f32 / 255.0;
            let mut g = px[1] as f32 / 255.0;
            let mut b = px[2] as f32 / 255.0;
            // brightness then contrast about mid-gray
            r = (r * bf - 0.5) * cf + 0.5;
            g = (g * bf - 0.5) * cf + 0.5;
            b = (b * bf - 0.5) * cf + 0.5;
            // saturation about luma
            let luma = 0.299 * r + 0.587 * g + 0.114 * b;
            r = luma + (r - luma) * sf;
            g = luma + (g - luma) * sf;
            b = luma + (b - luma) * sf;
            // hue rotation in the YIQ chroma plane
            if hue != 0.0 {
                let i = 0.595716 * r - 0.274453 * g - 0.321263 * b;
                let q = 0.211456 * r - 0.522591 * g + 0.311135 * b;
                let i2 = hc * i - hs * q;
                let q2 = hs * i + hc * q;
                let y = 0.299 * r + 0.587 * g + 0.114 * b;
                r = y + 0.9563 * i2 + 0.6210 * q2;
                g = y - 0.2721 * i2 - 0.6474 * q2;
                b = y - 1.1070 * i2 + 1.7046 * q2;
            }
            px[0] = to_u8(r);
            px[1] = to_u8(g);
            px[2] = to_u8(b);
        }
        out
    }

    /// Bilinear sample with symmetric reflect padding.
    fn sample_bilinear(&self, x: f32, y: f32) -> [u8; 3] {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as i64;
        let y0 = y0 as i64;
        let p00 = self.pixel_reflect(x0, y0);
        if fx == 0.0 && fy == 0.0 {
            return p00;
        }
        let p10 = self.pixel_reflect(x0 + 1, y0);
        let p01 = self.pixel_reflect(x0, y0 + 1);
        let p11 = self.pixel_reflect(x0 + 1, y0 + 1);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let top = p00[c] as f32 * (1.0 - fx) + p10[c] as f32 * fx;
            let bot = p01[c] as f32 * (1.0 - fx) + p11[c] as f32 * fx;
            out[c] = to_u8((top * (1.0 - fy) + bot * fy) / 255.0);
        }
        out
    }

    fn pixel_reflect(&self, x: i64, y: i64) -> [u8; 3] {
        let rx = reflect_index(x, self.width as i64);
        let ry = reflect_index(y, self.height as i64);
        self.pixel(rx as u32, ry as u32)
    }
}

#[inline]
fn to_u8(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Symmetric reflection (edge pixels mirrored): -1 -> 0, n -> n-1.
fn reflect_index(mut i: i64, n: i64) -> i64 {
    debug_assert!(n > 0);
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i;
        }
    }
}

/// Solve for the 3x3 homography taking `from` points to `to` points.
/// Returned row-major with h22 = 1.
fn homography_from_points(from: [[f64; 2]; 4], to: [[f64; 2]; 4]) -> [f64; 9] {
    // 8x8 linear system in the 8 unknown homography coefficients
    let mut a = [[0.0f64; 9]; 8];
    for k in 0..4 {
        let [x, y] = from[k];
        let [u, v] = to[k];
        a[2 * k] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * k + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    // Gaussian elimination with partial pivoting
    for col in 0..8 {
        let mut piv = col;
        for row in col + 1..8 {
            if a[row][col].abs() > a[piv][col].abs() {
                piv = row;
            }
        }
        a.swap(col, piv);
        let d = a[col][col];
        debug_assert!(d.abs() > 1e-12, "degenerate homography points");
        for j in col..9 {
            a[col][j] /= d;
        }
        for row in 0..8 {
            if row != col && a[row][col] != 0.0 {
                let f = a[row][col];
                for j in col..9 {
                    a[row][j] -= f * a[col][j];
                }
            }
        }
    }
    [
        a[0][8], a[1][8], a[2][8], a[3][8], a[4][8], a[5][8], a[6][8], a[7][8], 1.0,
    ]
}

#[inline]
fn apply_homography(h: &[f64; 9], x: f64, y: f64) -> (f64, f64) {
    let w = h[6] * x + h[7] * y + h[8];
    (
        (h[0] * x + h[1] * y + h[2]) / w,
        (h[3] * x + h[4] * y + h[5]) / w,
    )
}
