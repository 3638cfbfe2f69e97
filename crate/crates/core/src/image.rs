//! Real-valued raster images, bilinear resampling and PGM/PPM/PNG codecs.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Channel-major image with samples nominally in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// Round-half-up to the nearest integer.
pub fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor().max(0.0) as usize
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("images have 1 or 3 channels, got {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!("image dimensions must be positive, got {height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(Error::InvalidArgument(format!(
                "{channels}x{height}x{width} image needs {} samples, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("image samples must be finite".into()));
        }
        Ok(Image { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Image::new(channels, height, width, vec![value; channels * height * width]).expect("valid dimensions")
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Image::new(channels, height, width, data).expect("valid dimensions")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn min_dim(&self) -> usize {
        self.height.min(self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = (c * self.height + y) * self.width + x;
        self.data[i] = v;
    }

    /// Luma `0.299 R + 0.587 G + 0.114 B`; grayscale images are returned as is.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.height * self.width;
        let (r, rest) = self.data.split_at(n);
        let (g, b) = rest.split_at(n);
        let data = (0..n).map(|i| (0.299 * r[i] as f64 + 0.587 * g[i] as f64 + 0.114 * b[i] as f64) as f32).collect();
        Image::new(1, self.height, self.width, data).expect("same dimensions")
    }

    /// Converts to the channel count a network expects (gray by luma, or
    /// gray replicated to three channels).
    pub fn with_channels(&self, channels: usize) -> Result<Image> {
        match (self.channels, channels) {
            (a, b) if a == b => Ok(self.clone()),
            (3, 1) => Ok(self.to_gray()),
            (1, 3) => {
                let mut data = Vec::with_capacity(3 * self.data.len());
                for _ in 0..3 {
                    data.extend_from_slice(&self.data);
                }
                Image::new(3, self.height, self.width, data)
            }
            (_, n) => Err(Error::InvalidArgument(format!("cannot convert image to {n} channels"))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape::new(self.channels, self.height, self.width), self.data.clone())
            .expect("image dims are positive")
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.width) {
            row.reverse();
        }
        out
    }

    /// Bilinear resize by `factor`: output dims are `round(dim * factor)`
    /// and destination pixel `d` samples source coordinate
    /// `(d + 0.5) / factor - 0.5`, clamped to the image.
    pub fn resize_bilinear(&self, factor: f64) -> Result<Image> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::InvalidArgument(format!("resize factor must be positive, got {factor}")));
        }
        let out_h = round_half_up(self.height as f64 * factor);
        let out_w = round_half_up(self.width as f64 * factor);
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidArgument(format!(
                "resizing {}x{} by {factor} gives an empty image",
                self.height, self.width
            )));
        }
        if factor == 1.0 {
            return Ok(self.clone());
        }
        let inv = 1.0 / factor;
        Ok(self.resample(out_h, out_w, |d| (d as f64 + 0.5) * inv - 0.5, |d| (d as f64 + 0.5) * inv - 0.5))
    }

    /// Resamples the square region with top-left `(x, y)` and side `side`
    /// (original pixels) onto an `out x out` grid, using the same sample
    /// mapping as [`Image::resize_bilinear`].
    pub fn resample_square(&self, x: f64, y: f64, side: f64, out: usize) -> Image {
        self.resample_rect(x, y, side, side, out, out)
    }

    /// Rectangular variant of [`Image::resample_square`].
    pub fn resample_rect(&self, x: f64, y: f64, width: f64, height: f64, out_w: usize, out_h: usize) -> Image {
        let sx = width / out_w as f64;
        let sy = height / out_h as f64;
        self.resample(out_h, out_w, |d| y + (d as f64 + 0.5) * sy - 0.5, |d| x + (d as f64 + 0.5) * sx - 0.5)
    }

    fn resample(
        &self,
        out_h: usize,
        out_w: usize,
        map_y: impl Fn(usize) -> f64,
        map_x: impl Fn(usize) -> f64,
    ) -> Image {
        let taps = |src: f64, len: usize| -> (usize, usize, f64) {
            let s = src.clamp(0.0, (len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, s - i0 as f64)
        };
        let xt: Vec<_> = (0..out_w).map(|d| taps(map_x(d), self.width)).collect();
        let yt: Vec<_> = (0..out_h).map(|d| taps(map_y(d), self.height)).collect();
        let mut data = Vec::with_capacity(self.channels * out_h * out_w);
        for c in 0..self.channels {
            let plane = &self.data[c * self.height * self.width..(c + 1) * self.height * self.width];
            for &(y0, y1, fy) in &yt {
                let r0 = &plane[y0 * self.width..(y0 + 1) * self.width];
                let r1 = &plane[y1 * self.width..(y1 + 1) * self.width];
                for &(x0, x1, fx) in &xt {
                    let top = (1.0 - fx) * r0[x0] as f64 + fx * r0[x1] as f64;
                    let bottom = (1.0 - fx) * r1[x0] as f64 + fx * r1[x1] as f64;
                    data.push(((1.0 - fy) * top + fy * bottom) as f32);
                }
            }
        }
        Image { channels: self.channels, height: out_h, width: out_w, data }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let bytes = std::fs::read(path)?;
        Image::decode(&bytes)
    }

    /// Decodes binary PGM (P5), binary PPM (P6) or PNG, chosen by magic bytes.
    pub fn decode(bytes: &[u8]) -> Result<Image> {
        if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
            decode_pnm(bytes)
        } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
            decode_png(bytes)
        } else {
            Err(Error::Decode("unrecognised image format (expected P5, P6 or PNG)".into()))
        }
    }

    /// Writes PGM/PPM or PNG depending on the extension (`.pgm`, `.ppm`, `.pnm`, `.png`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).unwrap_or_default();
        let bytes = match ext.as_str() {
            "png" => self.encode_png()?,
            "pgm" | "ppm" | "pnm" => self.encode_pnm(),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unsupported image extension `{other}` (use pgm, ppm or png)"
                )))
            }
        };
        std::fs::write(path, bytes)?;
        Ok(())
    }

    /// Samples rounded half-up and clamped to `0..=255`, interleaved.
    pub fn to_bytes_interleaved(&self) -> Vec<u8> {
        let n = self.height * self.width;
        let mut out = Vec::with_capacity(n * self.channels);
        for i in 0..n {
            for c in 0..self.channels {
                out.push(round_half_up(self.data[c * n + i].clamp(0.0, 255.0) as f64).min(255) as u8);
            }
        }
        out
    }

    pub fn encode_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_bytes_interleaved());
        out
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(if self.channels == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(|e| Error::Decode(e.to_string()))?;
            writer.write_image_data(&self.to_bytes_interleaved()).map_err(|e| Error::Decode(e.to_string()))?;
        }
        Ok(out)
    }
}

fn from_interleaved(channels: usize, height: usize, width: usize, samples: impl Iterator<Item = f32>) -> Result<Image> {
    let n = height * width;
    let mut data = vec![0f32; channels * n];
    for (i, v) in samples.enumerate().take(channels * n) {
        data[(i % channels) * n + i / channels] = v;
    }
    Image::new(channels, height, width, data)
}

fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let channels = if bytes[1] == b'5' { 1 } else { 3 };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Decode("truncated PNM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Decode("bad PNM header field".into()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::Decode("PNM header not terminated by whitespace".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Decode(format!("unsupported PNM geometry {width}x{height} maxval {maxval}")));
    }
    let count = width * height * channels;
    let raster = &bytes[pos..];
    let scale = 255.0 / maxval as f32;
    if maxval < 256 {
        if raster.len() < count {
            return Err(Error::Decode("truncated PNM raster".into()));
        }
        from_interleaved(channels, height, width, raster[..count].iter().map(|&b| b as f32 * scale))
    } else {
        if raster.len() < 2 * count {
            return Err(Error::Decode("truncated PNM raster".into()));
        }
        from_interleaved(
            channels,
            height,
            width,
            raster[..2 * count].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 * scale),
        )
    }
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let err = |e: png::DecodingError| Error::Decode(e.to_string());
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(err)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Decode("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let buf = &buf[..info.line_size * h];
    let samples_per_px = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::Decode("unexpanded palette PNG".into())),
    };
    let channels = if samples_per_px <= 2 { 1 } else { 3 };
    let pixels = buf.chunks(info.line_size).flat_map(|row| {
        row[..w * samples_per_px]
            .chunks_exact(samples_per_px)
            .flat_map(move |px| px[..channels].iter().map(|&b| b as f32))
    });
    from_interleaved(channels, h, w, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_identity_and_constant() {
        let img = Image::from_fn(3, 5, 7, |c, y, x| (c * 50 + y * 7 + x) as f32);
        assert_eq!(img.resize_bilinear(1.0).unwrap(), img);
        let flat = Image::filled(1, 9, 13, 77.5);
        for f in [0.3, 0.79, 1.7, 5.0] {
            let r = flat.resize_bilinear(f).unwrap();
            assert!(r.data().iter().all(|&v| v == 77.5), "factor {f}");
        }
    }

    #[test]
    fn resize_checkerboard_by_hand() {
        let img = Image::new(1, 2, 2, vec![0.0, 255.0, 255.0, 0.0]).unwrap();
        let r = img.resize_bilinear(2.0).unwrap();
        assert_eq!((r.height(), r.width()), (4, 4));
        // dst 1 -> src 0.25, dst 2 -> src 0.75, dst 0 and 3 clamp to 0 and 1.
        // (1,1): 0.75*0.25*255 + 0.25*0.75*255 = 0.375*255
        assert!((r.get(0, 1, 1) - 95.625).abs() < 1e-4);
        // (1,2): 0.75*0.75*255 + 0.25*0.25*255 = 0.625*255
        assert!((r.get(0, 1, 2) - 159.375).abs() < 1e-4);
        assert!((r.get(0, 2, 2) - 95.625).abs() < 1e-4);
        assert_eq!(r.get(0, 0, 0), 0.0);
        assert_eq!(r.get(0, 0, 3), 255.0);
    }

    #[test]
    fn resize_rejects_empty_output() {
        let img = Image::filled(1, 3, 3, 1.0);
        assert!(img.resize_bilinear(0.1).is_err());
        assert!(img.resize_bilinear(0.0).is_err());
        assert!(img.resize_bilinear(-1.0).is_err());
    }

    #[test]
    fn resample_square_matches_resize() {
        let img = Image::from_fn(1, 40, 40, |_, y, x| ((x * 13 + y * 7) % 255) as f32);
        let factor = 0.8;
        let r = img.resize_bilinear(factor).unwrap();
        // window of 10 level pixels at level offset (8, 4)
        let crop = img.resample_square(8.0 / factor, 4.0 / factor, 10.0 / factor, 10);
        for y in 0..10 {
            for x in 0..10 {
                assert!((crop.get(0, y, x) - r.get(0, y + 4, x + 8)).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn luma() {
        let img = Image::new(3, 1, 1, vec![100.0, 200.0, 50.0]).unwrap();
        let g = img.to_gray();
        assert!((g.get(0, 0, 0) - (29.9 + 117.4 + 5.7)).abs() < 1e-4);
        assert_eq!(g.with_channels(3).unwrap().channels(), 3);
    }

    #[test]
    fn pnm_roundtrip_and_comments() {
        let img = Image::from_fn(3, 4, 5, |c, y, x| ((c * 40 + y * 11 + x * 3) % 256) as f32);
        let back = Image::decode(&img.encode_pnm()).unwrap();
        assert_eq!(back, img);
        let mut with_comment = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        with_comment.extend([10u8, 250]);
        let g = Image::decode(&with_comment).unwrap();
        assert_eq!(g.data(), &[10.0, 250.0]);
        assert!(Image::decode(b"P5\n2 2\n255\n\x01").is_err());
        assert!(Image::decode(b"GIF89a").is_err());
    }

    #[test]
    fn png_roundtrip() {
        let img = Image::from_fn(1, 6, 3, |_, y, x| (y * 30 + x) as f32);
        let back = Image::decode(&img.encode_png().unwrap()).unwrap();
        assert_eq!(back, img);
        let rgb = Image::from_fn(3, 2, 2, |c, y, x| (c * 60 + y * 2 + x) as f32);
        assert_eq!(Image::decode(&rgb.encode_png().unwrap()).unwrap(), rgb);
    }
}
