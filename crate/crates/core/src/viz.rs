//! Overlay images: decoded boxes and their labels drawn onto the line.

use image::{GrayImage, Rgb, RgbImage};

use crate::alphabet::Alphabet;
use crate::geometry::CharBox;
use crate::sample::LineInput;

const BOX_COLOURS: [[u8; 3]; 4] = [[220, 30, 30], [30, 150, 30], [30, 60, 220], [200, 120, 0]];

/// 3x5 pixel glyphs, one row per entry with the high bit on the left.
fn glyph_rows(c: char) -> Option<[u8; 5]> {
    Some(match c {
        'a' => [0b010, 0b101, 0b111, 0b101, 0b101],
        'b' => [0b110, 0b101, 0b110, 0b101, 0b110],
        'c' => [0b011, 0b100, 0b100, 0b100, 0b011],
        'd' => [0b110, 0b101, 0b101, 0b101, 0b110],
        'e' => [0b111, 0b100, 0b110, 0b100, 0b111],
        'f' => [0b111, 0b100, 0b110, 0b100, 0b100],
        'g' => [0b011, 0b100, 0b101, 0b101, 0b011],
        'h' => [0b101, 0b101, 0b111, 0b101, 0b101],
        'i' => [0b111, 0b010, 0b010, 0b010, 0b111],
        'j' => [0b001, 0b001, 0b001, 0b101, 0b010],
        'k' => [0b101, 0b110, 0b100, 0b110, 0b101],
        'l' => [0b100, 0b100, 0b100, 0b100, 0b111],
        'm' => [0b101, 0b111, 0b111, 0b101, 0b101],
        'n' => [0b110, 0b101, 0b101, 0b101, 0b101],
        'o' => [0b010, 0b101, 0b101, 0b101, 0b010],
        'p' => [0b110, 0b101, 0b110, 0b100, 0b100],
        'q' => [0b010, 0b101, 0b101, 0b110, 0b011],
        'r' => [0b110, 0b101, 0b110, 0b101, 0b101],
        's' => [0b011, 0b100, 0b010, 0b001, 0b110],
        't' => [0b111, 0b010, 0b010, 0b010, 0b010],
        'u' => [0b101, 0b101, 0b101, 0b101, 0b111],
        'v' => [0b101, 0b101, 0b101, 0b101, 0b010],
        'w' => [0b101, 0b101, 0b111, 0b111, 0b101],
        'x' => [0b101, 0b101, 0b010, 0b101, 0b101],
        'y' => [0b101, 0b101, 0b010, 0b010, 0b010],
        'z' => [0b111, 0b001, 0b010, 0b100, 0b111],
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b110, 0b001, 0b010, 0b100, 0b111],
        '3' => [0b110, 0b001, 0b010, 0b001, 0b110],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b110, 0b001, 0b110],
        '6' => [0b011, 0b100, 0b110, 0b101, 0b010],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b010, 0b101, 0b010, 0b101, 0b010],
        '9' => [0b010, 0b101, 0b011, 0b001, 0b110],
        _ => return None,
    })
}

/// Grayscale view of a line. Signature maps show their presence channel.
pub fn line_image(input: &LineInput) -> Option<GrayImage> {
    match input {
        LineInput::Raster(r) => Some(r.to_gray_image()),
        LineInput::Signature(m) => Some(GrayImage::from_fn(m.width() as u32, m.height() as u32, |x, y| {
            image::Luma([if m.get(0, y as usize, x as usize) > 0.0 { 0 } else { 255 }])
        })),
        LineInput::Trajectory(_) => None,
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(c));
    }
}

fn draw_label(img: &mut RgbImage, x: i64, y: i64, c: char, colour: [u8; 3]) {
    let Some(rows) = glyph_rows(c) else { return };
    for (dy, row) in rows.iter().enumerate() {
        for dx in 0..3 {
            if row & (0b100 >> dx) != 0 {
                put(img, x + dx, y + dy as i64, colour);
            }
        }
    }
}

/// Draws each box outline with its class label in the top-left corner.
/// Without boxes the grayscale line comes back untouched.
pub fn overlay(base: &GrayImage, boxes: &[CharBox], alphabet: &Alphabet) -> image::DynamicImage {
    if boxes.is_empty() {
        return image::DynamicImage::ImageLuma8(base.clone());
    }
    let mut img = image::DynamicImage::ImageLuma8(base.clone()).to_rgb8();
    for (k, b) in boxes.iter().enumerate() {
        let colour = BOX_COLOURS[k % BOX_COLOURS.len()];
        let x0 = b.rect.x_min.round() as i64;
        let y0 = b.rect.y_min.round() as i64;
        let x1 = (b.rect.x_max.round() as i64 - 1).max(x0);
        let y1 = (b.rect.y_max.round() as i64 - 1).max(y0);
        for x in x0..=x1 {
            put(&mut img, x, y0, colour);
            put(&mut img, x, y1, colour);
        }
        for y in y0..=y1 {
            put(&mut img, x0, y, colour);
            put(&mut img, x1, y, colour);
        }
        if b.class_id < alphabet.len() {
            draw_label(&mut img, x0 + 2, y0 + 2, alphabet.label(b.class_id), colour);
        }
    }
    image::DynamicImage::ImageRgb8(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;

    #[test]
    fn every_latin_label_has_a_glyph() {
        let a = Alphabet::latin(36).unwrap();
        for i in 0..a.len() {
            assert!(glyph_rows(a.label(i)).is_some());
        }
    }

    #[test]
    fn box_outline_is_coloured() {
        let base = GrayImage::from_pixel(20, 10, image::Luma([255]));
        let a = Alphabet::latin(3).unwrap();
        let out = overlay(&base, &[CharBox::new(Rect::new(2.0, 1.0, 12.0, 9.0), 0, 1.0)], &a).to_rgb8();
        assert_eq!(out.get_pixel(2, 1).0, BOX_COLOURS[0]);
        assert_eq!(out.get_pixel(15, 5).0, [255, 255, 255]);
    }
}
