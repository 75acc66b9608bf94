use font8x8::UnicodeFonts;

use crate::geometry::BBox;
use crate::raster::Raster;

/// Horizontal advance and nominal glyph cell of the built-in bitmap font.
pub const ADVANCE: usize = 8;
pub const GLYPH_HEIGHT: usize = 8;
/// Margin between the ink and the annotated text box.
pub const BOX_PAD: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weight {
    Regular,
    Bold,
}

fn glyph(c: char) -> [u8; 8] {
    font8x8::BASIC_FONTS.get(c).or_else(|| font8x8::BASIC_FONTS.get('?')).unwrap_or([0; 8])
}

/// Pixel width and height of the box around `n` characters.
pub fn box_extent(n: usize) -> (usize, usize) {
    (ADVANCE * n + 2 * BOX_PAD, GLYPH_HEIGHT - 1 + 2 * BOX_PAD)
}

/// Annotated box for text whose first glyph cell starts at `(x, y)`.
pub fn text_box(x: usize, y: usize, n: usize) -> BBox {
    let (w, h) = box_extent(n);
    let (x0, y0) = (x - BOX_PAD, y - BOX_PAD);
    BBox::new(x0 as f32, y0 as f32, (x0 + w) as f32, (y0 + h) as f32)
}

/// Draws `text` in ink value `ink` with the glyph cell origin at `(x, y)`.
/// Bold text is double-struck one pixel to the right.
pub fn draw_text(r: &mut Raster, x: usize, y: usize, text: &str, weight: Weight, ink: f32) {
    let offsets: &[usize] = match weight {
        Weight::Regular => &[0],
        Weight::Bold => &[0, 1],
    };
    for (i, c) in text.chars().enumerate() {
        let g = glyph(c);
        let gx = x + i * ADVANCE;
        for (row, bits) in g.iter().enumerate() {
            for col in 0..8 {
                if bits >> col & 1 == 0 {
                    continue;
                }
                for &dx in offsets {
                    let (px, py) = (gx + col + dx, y + row);
                    if px < r.width() && py < r.height() {
                        for ch in 0..r.channels() {
                            r.set(ch, px, py, ink);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ink_stays_inside_the_text_box() {
        let mut r = Raster::filled(64, 20, 1, 1.0);
        let text = "A1:.-W";
        draw_text(&mut r, 4, 4, text, Weight::Bold, 0.0);
        let b = text_box(4, 4, text.chars().count());
        for y in 0..r.height() {
            for x in 0..r.width() {
                if r.get(0, x, y) < 0.5 {
                    assert!((x as f32) >= b.x0 && (x as f32) < b.x1 && (y as f32) >= b.y0 && (y as f32) < b.y1);
                }
            }
        }
    }

    #[test]
    fn bold_adds_ink() {
        let mut a = Raster::filled(16, 10, 1, 1.0);
        let mut b = a.clone();
        draw_text(&mut a, 1, 1, "8", Weight::Regular, 0.0);
        draw_text(&mut b, 1, 1, "8", Weight::Bold, 0.0);
        let ink = |r: &Raster| r.data().iter().filter(|&&v| v < 0.5).count();
        assert!(ink(&b) > ink(&a));
    }
}
