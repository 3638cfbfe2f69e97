//! Raster overlays: box outlines and scores in a fixed 5x7 digit font.

use crate::bbox::BBox;
use crate::detector::Detection;
use crate::error::Result;
use crate::image::Image;

/// Rows of each glyph, most significant of the low five bits on the left.
const DIGITS: [[u8; 7]; 10] = [
    [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
    [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
    [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
    [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
    [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
    [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
    [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
    [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
    [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
];
const DOT: [u8; 7] = [0, 0, 0, 0, 0, 0x0C, 0x0C];

pub const GLYPH_WIDTH: usize = 5;
pub const GLYPH_HEIGHT: usize = 7;

fn glyph(c: char) -> Option<&'static [u8; 7]> {
    match c {
        '0'..='9' => Some(&DIGITS[c as usize - '0' as usize]),
        '.' => Some(&DOT),
        _ => None,
    }
}

fn put(img: &mut Image, x: i64, y: i64, color: &[f32]) {
    if x < 0 || y < 0 || x >= img.width() as i64 || y >= img.height() as i64 {
        return;
    }
    for (c, &v) in color.iter().enumerate().take(img.channels()) {
        img.set(c, y as usize, x as usize, v);
    }
}

/// Draws digits and dots with a one-pixel gap; other characters are blank.
pub fn draw_text(img: &mut Image, x: i64, y: i64, text: &str, color: &[f32]) {
    for (i, ch) in text.chars().enumerate() {
        let Some(rows) = glyph(ch) else { continue };
        let x0 = x + i as i64 * (GLYPH_WIDTH as i64 + 1);
        for (ry, bits) in rows.iter().enumerate() {
            for rx in 0..GLYPH_WIDTH {
                if bits >> (GLYPH_WIDTH - 1 - rx) & 1 == 1 {
                    put(img, x0 + rx as i64, y + ry as i64, color);
                }
            }
        }
    }
}

/// One-pixel outline on the rounded box edges.
pub fn draw_box(img: &mut Image, b: &BBox, color: &[f32]) {
    let x0 = b.x.round() as i64;
    let y0 = b.y.round() as i64;
    let x1 = b.right().round() as i64 - 1;
    let y1 = b.bottom().round() as i64 - 1;
    for x in x0..=x1 {
        put(img, x, y0, color);
        put(img, x, y1, color);
    }
    for y in y0..=y1 {
        put(img, x0, y, color);
        put(img, x1, y, color);
    }
}

/// RGB copy of `img` with every detection outlined in red and its score
/// (two decimals) printed above the box, or inside when there is no room.
pub fn render_overlay(img: &Image, dets: &[Detection]) -> Result<Image> {
    let mut out = img.with_channels(3)?;
    let red = [255.0, 0.0, 0.0];
    for d in dets {
        draw_box(&mut out, &d.bbox, &red);
        let ty = if d.bbox.y >= (GLYPH_HEIGHT + 1) as f64 {
            d.bbox.y.round() as i64 - GLYPH_HEIGHT as i64 - 1
        } else {
            d.bbox.y.round() as i64 + 2
        };
        draw_text(&mut out, d.bbox.x.round() as i64 + 1, ty, &format!("{:.2}", d.score), &red);
    }
    Ok(out)
}
