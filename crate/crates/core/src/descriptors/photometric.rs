//! Built-in descriptor: a 14×14 grayscale sample of each cell's
//! neighbourhood, mean-subtracted and L2-normalised. Needs no model and is
//! fully deterministic.
//!
//! With `context = 1` the sample is the cell's own patch. Larger values
//! box-average a window of `context` patches per side, centred on the cell,
//! down to 14×14, which trades resolution for tolerance to sub-cell shifts.

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma, RgbImage};

use super::{grid_extent, DescriptorError, DescriptorGrid, DescriptorProvider, PATCH_SIZE};

#[derive(Debug, Clone)]
pub struct PhotometricProvider {
    input_resolution: u32,
    context: u32,
}

impl PhotometricProvider {
    pub const NAME: &'static str = "photometric";

    pub fn new(input_resolution: u32) -> Self {
        Self {
            input_resolution,
            context: 1,
        }
    }

    pub fn with_context(mut self, context: u32) -> Self {
        self.context = context.max(1);
        self
    }
}

/// Converts to luma in [0, 1], then resizes (ignoring aspect ratio) to a
/// square with a triangle filter.
pub fn square_luma(image: &RgbImage, resolution: u32) -> Vec<f32> {
    let (w, h) = image.dimensions();
    let luma: Vec<f32> = image
        .as_raw()
        .chunks_exact(3)
        .map(|p| (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0)
        .collect();
    if (w, h) == (resolution, resolution) {
        return luma;
    }
    let buf = ImageBuffer::<Luma<f32>, Vec<f32>>::from_raw(w, h, luma).expect("buffer size matches");
    imageops::resize(&buf, resolution, resolution, FilterType::Triangle).into_raw()
}

impl DescriptorProvider for PhotometricProvider {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn extract_raw(&self, image: &RgbImage) -> Result<DescriptorGrid, DescriptorError> {
        if image.width() == 0 || image.height() == 0 {
            return Err(DescriptorError::EmptyImage);
        }
        let res = self.input_resolution;
        let luma = square_luma(image, res);
        let n = grid_extent(res, PATCH_SIZE, PATCH_SIZE);
        let p = PATCH_SIZE as usize;
        let c = self.context as usize;
        let r = res as usize;
        let dim = p * p;
        let mut data = vec![0.0f32; n * n * dim];
        // Summed-area table over a replicate-padded copy, so every window
        // block is four lookups.
        let pad = c * p / 2;
        let side = r + 2 * pad;
        let mut sat = vec![0.0f64; (side + 1) * (side + 1)];
        for y in 0..side {
            let sy = y.saturating_sub(pad).min(r - 1);
            let mut row_sum = 0.0f64;
            for x in 0..side {
                let sx = x.saturating_sub(pad).min(r - 1);
                row_sum += luma[sy * r + sx] as f64;
                sat[(y + 1) * (side + 1) + x + 1] = sat[y * (side + 1) + x + 1] + row_sum;
            }
        }
        let block = |x: usize, y: usize| -> f32 {
            let (x1, y1) = (x + c, y + c);
            let v = sat[y1 * (side + 1) + x1] - sat[y * (side + 1) + x1] - sat[y1 * (side + 1) + x] + sat[y * (side + 1) + x];
            (v / (c * c) as f64) as f32
        };
        for row in 0..n {
            for col in 0..n {
                let out = &mut data[(row * n + col) * dim..(row * n + col + 1) * dim];
                // Window origin in padded coordinates.
                let x0 = col * p + p / 2 + pad - c * p / 2;
                let y0 = row * p + p / 2 + pad - c * p / 2;
                for j in 0..p {
                    for i in 0..p {
                        out[j * p + i] = block(x0 + c * i, y0 + c * j);
                    }
                }
                let mean = out.iter().sum::<f32>() / dim as f32;
                out.iter_mut().for_each(|v| *v -= mean);
                let norm = out.iter().map(|v| v * v).sum::<f32>().sqrt();
                // Flat patches carry no structure; leave them as zero vectors.
                if norm > 1e-4 {
                    out.iter_mut().for_each(|v| *v /= norm);
                } else {
                    out.iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        Ok(DescriptorGrid::new(n, n, dim, data, PATCH_SIZE, PATCH_SIZE, res))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn grid_sizes() {
        let img = RgbImage::from_fn(640, 480, |x, y| Rgb([(x % 251) as u8, (y % 241) as u8, 7]));
        let g = PhotometricProvider::new(308).extract_raw(&img).unwrap();
        assert_eq!((g.rows(), g.cols(), g.dim()), (22, 22, 196));
        let g = PhotometricProvider::new(224).extract_raw(&img).unwrap();
        assert_eq!((g.rows(), g.cols()), (16, 16));
    }

    #[test]
    fn uniform_image_is_degenerate() {
        let img = RgbImage::from_pixel(320, 240, Rgb([90, 90, 90]));
        let g = PhotometricProvider::new(308).extract_raw(&img).unwrap();
        assert!(g.data().iter().all(|v| *v == 0.0));
        assert_eq!(g.eligible_count(), 0);
    }

    #[test]
    fn descriptors_are_unit_and_zero_mean() {
        let img = RgbImage::from_fn(308, 308, |x, y| Rgb([((x * 7 + y * 3) % 256) as u8, (y % 200) as u8, 0]));
        let g = PhotometricProvider::new(308).extract_raw(&img).unwrap();
        for i in 0..g.len() {
            let d = g.descriptor_at(i);
            let norm: f32 = d.iter().map(|v| v * v).sum::<f32>().sqrt();
            let mean: f32 = d.iter().sum::<f32>() / d.len() as f32;
            assert!((norm - 1.0).abs() < 1e-4);
            assert!(mean.abs() < 1e-4);
        }
    }

    #[test]
    fn empty_image_errors() {
        let img = RgbImage::new(0, 0);
        assert!(matches!(
            PhotometricProvider::new(308).extract_raw(&img),
            Err(DescriptorError::EmptyImage)
        ));
    }
}
