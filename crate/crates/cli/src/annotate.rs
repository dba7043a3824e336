//! Side-by-side match visualisation for `servo match`.

use image::{imageops, Rgb, RgbImage};
use imageproc::drawing::{draw_hollow_circle_mut, draw_line_segment_mut};
use serde::Serialize;
use servo_core::descriptors::{grid_cell_to_pixel, DescriptorGrid};
use servo_core::matching::CorrespondenceSet;

#[derive(Debug, Clone, Serialize)]
pub struct MatchLine {
    pub desired_cell: [usize; 2],
    pub current_cell: [usize; 2],
    /// Patch centres in the respective source images, pixels.
    pub desired_px: [f64; 2],
    pub current_px: [f64; 2],
    pub cosine: f64,
    pub cyclical_distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MatchSummary {
    pub provider: String,
    pub grid: [usize; 2],
    pub usable: usize,
    pub eligible: usize,
    pub threshold: f64,
    pub k: usize,
    pub mean_cosine: f64,
    pub matches: Vec<MatchLine>,
}

/// Maps every correspondence to pixel coordinates in both source images.
pub fn match_lines(
    set: &CorrespondenceSet,
    desired: &DescriptorGrid,
    current: &DescriptorGrid,
    desired_size: (u32, u32),
    current_size: (u32, u32),
) -> anyhow::Result<Vec<MatchLine>> {
    set.pairs
        .iter()
        .map(|p| {
            let a = grid_cell_to_pixel(desired, p.desired_cell, desired_size)?;
            let b = grid_cell_to_pixel(current, p.current_cell, current_size)?;
            Ok(MatchLine {
                desired_cell: [p.desired_cell.row, p.desired_cell.col],
                current_cell: [p.current_cell.row, p.current_cell.col],
                desired_px: [a.x, a.y],
                current_px: [b.x, b.y],
                cosine: p.cosine,
                cyclical_distance: p.cyclical_distance,
            })
        })
        .collect()
}

/// Green for cosine 1 fading to red at cosine 0 or below.
fn line_colour(cosine: f64) -> Rgb<u8> {
    let t = cosine.clamp(0.0, 1.0);
    Rgb([(255.0 * (1.0 - t)) as u8, (255.0 * t) as u8, 40])
}

/// Desired image on the left, current on the right, one line per match.
pub fn side_by_side(desired: &RgbImage, current: &RgbImage, lines: &[MatchLine]) -> RgbImage {
    let w = desired.width() + current.width();
    let h = desired.height().max(current.height());
    let mut canvas = RgbImage::from_pixel(w, h, Rgb([0, 0, 0]));
    imageops::replace(&mut canvas, desired, 0, 0);
    imageops::replace(&mut canvas, current, desired.width() as i64, 0);
    let dx = desired.width() as f32;
    for l in lines {
        let colour = line_colour(l.cosine);
        let a = (l.desired_px[0] as f32, l.desired_px[1] as f32);
        let b = (l.current_px[0] as f32 + dx, l.current_px[1] as f32);
        draw_line_segment_mut(&mut canvas, a, b, colour);
        draw_hollow_circle_mut(&mut canvas, (a.0 as i32, a.1 as i32), 4, colour);
        draw_hollow_circle_mut(&mut canvas, (b.0 as i32, b.1 as i32), 4, colour);
    }
    canvas
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canvas_holds_both_images() {
        let a = RgbImage::from_pixel(10, 8, Rgb([255, 0, 0]));
        let b = RgbImage::from_pixel(6, 12, Rgb([0, 0, 255]));
        let out = side_by_side(&a, &b, &[]);
        assert_eq!(out.dimensions(), (16, 12));
        assert_eq!(out.get_pixel(0, 0), &Rgb([255, 0, 0]));
        assert_eq!(out.get_pixel(15, 11), &Rgb([0, 0, 255]));
        assert_eq!(out.get_pixel(0, 11), &Rgb([0, 0, 0]));
    }

    #[test]
    fn lines_are_drawn_across_the_seam() {
        let a = RgbImage::from_pixel(20, 20, Rgb([0, 0, 0]));
        let line = MatchLine {
            desired_cell: [0, 0],
            current_cell: [0, 0],
            desired_px: [5.0, 10.0],
            current_px: [5.0, 10.0],
            cosine: 1.0,
            cyclical_distance: 0.0,
        };
        let out = side_by_side(&a, &a, &[line]);
        assert_eq!(out.get_pixel(20, 10), &Rgb([0, 255, 40]));
    }
}
