//! Synthetic camera frames: a seeded color pattern with the capture time
//! stamped in the bottom-left corner.

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FRAME_WIDTH: u32 = 160;
pub const FRAME_HEIGHT: u32 = 120;

const GLYPH_W: usize = 3;
const GLYPH_H: usize = 5;
const SCALE: usize = 2;

// 3x5 bitmaps, one row per u8 (low three bits, MSB on the left)
fn glyph(c: char) -> [u8; GLYPH_H] {
    match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        ':' => [0b000, 0b010, 0b000, 0b010, 0b000],
        _ => [0; GLYPH_H],
    }
}

/// Timestamp caption drawn into each frame.
pub fn caption(timestamp_utc_ms: i64) -> String {
    Utc.timestamp_millis_opt(timestamp_utc_ms)
        .single()
        .map(|t| t.format("%Y-%m-%d %H:%M:%S").to_string())
        .unwrap_or_default()
}

fn frame_seed(seed: u64, count: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ count.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Raw RGB8 pixels for one frame.
pub fn render_rgb(seed: u64, count: u64, timestamp_utc_ms: i64) -> Vec<u8> {
    let (w, h) = (FRAME_WIDTH as usize, FRAME_HEIGHT as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(seed, count));
    let top: [u8; 3] = rng.random();
    let bottom: [u8; 3] = rng.random();
    let mut px = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) * 3;
            for c in 0..3 {
                let a = top[c] as usize;
                let b = bottom[c] as usize;
                px[i + c] = ((a * (h - y) + b * y) / h) as u8 ^ ((x as u8) & 0x0f);
            }
        }
    }
    for _ in 0..6 {
        let x0 = rng.random_range(0..w - 8);
        let y0 = rng.random_range(0..h - 30);
        let rw = rng.random_range(8..=(w - x0).min(60));
        let rh = rng.random_range(8..=(h - 20 - y0).min(40));
        let color: [u8; 3] = rng.random();
        fill(&mut px, w, x0, y0, rw, rh, color);
    }

    let text = caption(timestamp_utc_ms);
    let band_h = GLYPH_H * SCALE + 6;
    fill(&mut px, w, 0, h - band_h, w, band_h, [0, 0, 0]);
    let mut pen_x = 4;
    let pen_y = h - band_h + 3;
    for ch in text.chars() {
        let rows = glyph(ch);
        for (gy, row) in rows.iter().enumerate() {
            for gx in 0..GLYPH_W {
                if row & (1 << (GLYPH_W - 1 - gx)) != 0 {
                    fill(
                        &mut px,
                        w,
                        pen_x + gx * SCALE,
                        pen_y + gy * SCALE,
                        SCALE,
                        SCALE,
                        [255, 255, 255],
                    );
                }
            }
        }
        pen_x += (GLYPH_W + 1) * SCALE;
    }
    px
}

fn fill(px: &mut [u8], w: usize, x0: usize, y0: usize, rw: usize, rh: usize, color: [u8; 3]) {
    let h = px.len() / (w * 3);
    for y in y0..(y0 + rh).min(h) {
        for x in x0..(x0 + rw).min(w) {
            let i = (y * w + x) * 3;
            px[i..i + 3].copy_from_slice(&color);
        }
    }
}

/// PNG-encoded frame. Deterministic in all three inputs.
pub fn render_png(seed: u64, count: u64, timestamp_utc_ms: i64) -> Vec<u8> {
    let rgb = render_rgb(seed, count, timestamp_utc_ms);
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, FRAME_WIDTH, FRAME_HEIGHT);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory png header");
        writer.write_image_data(&rgb).expect("in-memory png data");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decode(bytes: &[u8]) -> (u32, u32, Vec<u8>) {
        let mut reader = png::Decoder::new(std::io::Cursor::new(bytes))
            .read_info()
            .unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        buf.truncate(info.buffer_size());
        (info.width, info.height, buf)
    }

    #[test]
    fn decodes_at_fixed_size() {
        let (w, h, px) = decode(&render_png(0, 1, 0));
        assert_eq!((w, h), (160, 120));
        assert_eq!(px, render_rgb(0, 1, 0));
    }

    #[test]
    fn deterministic_and_sensitive_to_each_input() {
        let base = render_png(7, 1, 1_700_000_000_000);
        assert_eq!(base, render_png(7, 1, 1_700_000_000_000));
        assert_ne!(base, render_png(8, 1, 1_700_000_000_000));
        assert_ne!(base, render_png(7, 2, 1_700_000_000_000));
        assert_ne!(base, render_png(7, 1, 1_700_000_001_000));
    }

    #[test]
    fn caption_format() {
        assert_eq!(caption(0), "1970-01-01 00:00:00");
        assert_eq!(caption(1_700_000_000_000), "2023-11-14 22:13:20");
    }
}
