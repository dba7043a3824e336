//! Dense descriptor grids, hierarchical binning and the provider registry.
//!
//! Providers turn an RGB image into a raw [`DescriptorGrid`]; an [`Extractor`]
//! wraps a provider with its [`ProviderConfig`] (binning, mask) so callers
//! only deal with the finished grid. Providers are registered by name in a
//! [`ProviderRegistry`] and selected at runtime from configuration.

pub mod bridge;
pub mod photometric;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;

pub use bridge::{BridgeConfig, BridgeProvider};
pub use photometric::PhotometricProvider;

/// Patch edge and stride shared by the built-in providers and the ViT bridge.
pub const PATCH_SIZE: u32 = 14;
pub const MIN_INPUT_RESOLUTION: u32 = 224;
pub const MAX_INPUT_RESOLUTION: u32 = 518;
/// Default photometric window, in patches per side.
pub const DEFAULT_CONTEXT: u32 = 4;

/// Squared norm below which a descriptor counts as degenerate.
const DEGENERATE_NORM2: f32 = 1e-12;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("image is empty")]
    EmptyImage,
    #[error("feature bridge unavailable: {0}")]
    BridgeUnavailable(String),
    #[error("feature bridge returned status {code}: {message}")]
    BridgeStatus { code: u32, message: String },
    #[error("cell ({row}, {col}) outside {rows}×{cols} grid")]
    CellOutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown descriptor provider '{0}'")]
    UnknownProvider(String),
    #[error("failed to load mask {path}: {message}")]
    Mask { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn distance(&self, other: &Cell) -> f64 {
        let dr = self.row as f64 - other.row as f64;
        let dc = self.col as f64 - other.col as f64;
        (dr * dr + dc * dc).sqrt()
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// `rows × cols` cells of `dim`-dimensional descriptors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorGrid {
    rows: usize,
    cols: usize,
    dim: usize,
    data: Vec<f32>,
    eligible: Vec<bool>,
    pub patch_size: u32,
    pub stride: u32,
    /// Square side of the image the grid was computed from.
    pub input_resolution: u32,
}

/// Number of patch positions along one axis.
pub fn grid_extent(resolution: u32, patch_size: u32, stride: u32) -> usize {
    if resolution < patch_size || stride == 0 {
        return 0;
    }
    ((resolution - patch_size) / stride + 1) as usize
}

impl DescriptorGrid {
    /// Builds a grid; cells with a (near) zero descriptor are marked ineligible.
    pub fn new(
        rows: usize,
        cols: usize,
        dim: usize,
        data: Vec<f32>,
        patch_size: u32,
        stride: u32,
        input_resolution: u32,
    ) -> Self {
        assert_eq!(data.len(), rows * cols * dim, "descriptor payload size");
        let eligible = data
            .chunks(dim.max(1))
            .map(|d| d.iter().all(|v| v.is_finite()) && d.iter().map(|v| v * v).sum::<f32>() > DEGENERATE_NORM2)
            .collect();
        Self {
            rows,
            cols,
            dim,
            data,
            eligible,
            patch_size,
            stride,
            input_resolution,
        }
    }

    /// Convenience constructor for tests and synthetic grids (patch/stride 14).
    pub fn from_cells(rows: usize, cols: usize, dim: usize, data: Vec<f32>) -> Self {
        let res = PATCH_SIZE * rows.max(cols) as u32;
        Self::new(rows, cols, dim, data, PATCH_SIZE, PATCH_SIZE, res)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.cols + cell.col
    }

    pub fn cell(&self, index: usize) -> Cell {
        Cell::new(index / self.cols, index % self.cols)
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.row < self.rows && cell.col < self.cols
    }

    pub fn descriptor(&self, cell: Cell) -> &[f32] {
        let i = self.index(cell) * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn descriptor_at(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn is_eligible(&self, cell: Cell) -> bool {
        self.eligible[self.index(cell)]
    }

    pub fn eligible_mask(&self) -> &[bool] {
        &self.eligible
    }

    pub fn eligible_count(&self) -> usize {
        self.eligible.iter().filter(|e| **e).count()
    }

    pub fn set_eligible(&mut self, cell: Cell, eligible: bool) {
        let i = self.index(cell);
        self.eligible[i] = eligible && self.eligible[i];
    }

    /// Multiplies every descriptor by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// Clears eligibility of cells whose centre falls outside `mask`.
    pub fn apply_mask(&mut self, mask: &Mask) {
        let res = self.input_resolution as f64;
        for index in 0..self.len() {
            let cell = self.cell(index);
            let centre_u = cell.col as f64 * self.stride as f64 + self.patch_size as f64 * 0.5;
            let centre_v = cell.row as f64 * self.stride as f64 + self.patch_size as f64 * 0.5;
            let mu = (centre_u / res * mask.width as f64).floor() as usize;
            let mv = (centre_v / res * mask.height as f64).floor() as usize;
            let inside = mask.get(mu.min(mask.width - 1), mv.min(mask.height - 1));
            if !inside {
                self.eligible[index] = false;
            }
        }
    }
}

/// Foreground mask; `true` marks pixels that may be matched.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Any non-zero luma counts as foreground.
    pub fn from_file(path: &std::path::Path) -> Result<Self, DescriptorError> {
        let img = image::open(path)
            .map_err(|e| DescriptorError::Mask {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
            .to_luma8();
        let (w, h) = img.dimensions();
        if w == 0 || h == 0 {
            return Err(DescriptorError::Mask {
                path: path.display().to_string(),
                message: "empty mask".into(),
            });
        }
        Ok(Self::new(
            w as usize,
            h as usize,
            img.pixels().map(|p| p.0[0] > 0).collect(),
        ))
    }
}

/// Appends, for each ring `r = 1..=beta` around every cell, the average
/// descriptor of the in-bounds cells in that ring. Output dimension is
/// `(beta + 1) · dim`; eligibility is carried over from the input.
pub fn bin_features(grid: &DescriptorGrid, beta: usize) -> DescriptorGrid {
    if beta == 0 {
        return grid.clone();
    }
    let (rows, cols, dim) = (grid.rows, grid.cols, grid.dim);
    // Summed-area table per dimension, (rows + 1) × (cols + 1) × dim, in f64.
    let stride_r = (cols + 1) * dim;
    let mut sat = vec![0.0f64; (rows + 1) * stride_r];
    for r in 0..rows {
        for c in 0..cols {
            let src = grid.descriptor(Cell::new(r, c));
            for k in 0..dim {
                let above = sat[r * stride_r + (c + 1) * dim + k];
                let left = sat[(r + 1) * stride_r + c * dim + k];
                let diag = sat[r * stride_r + c * dim + k];
                sat[(r + 1) * stride_r + (c + 1) * dim + k] = src[k] as f64 + above + left - diag;
            }
        }
    }
    let out_dim = (beta + 1) * dim;
    let mut data = vec![0.0f32; rows * cols * out_dim];
    let mut outer = vec![0.0f64; dim];
    let mut inner = vec![0.0f64; dim];
    let window = |r: usize, c: usize, radius: usize, acc: &mut [f64]| -> usize {
        let r0 = r.saturating_sub(radius);
        let c0 = c.saturating_sub(radius);
        let r1 = (r + radius + 1).min(rows);
        let c1 = (c + radius + 1).min(cols);
        for k in 0..dim {
            acc[k] = sat[r1 * stride_r + c1 * dim + k] - sat[r0 * stride_r + c1 * dim + k]
                - sat[r1 * stride_r + c0 * dim + k]
                + sat[r0 * stride_r + c0 * dim + k];
        }
        (r1 - r0) * (c1 - c0)
    };
    for r in 0..rows {
        for c in 0..cols {
            let base = (r * cols + c) * out_dim;
            data[base..base + dim].copy_from_slice(grid.descriptor(Cell::new(r, c)));
            for ring in 1..=beta {
                let n_outer = window(r, c, ring, &mut outer);
                let n_inner = window(r, c, ring - 1, &mut inner);
                let n = n_outer - n_inner;
                let dst = &mut data[base + ring * dim..base + (ring + 1) * dim];
                if n == 0 {
                    continue;
                }
                for k in 0..dim {
                    dst[k] = ((outer[k] - inner[k]) / n as f64) as f32;
                }
            }
        }
    }
    DescriptorGrid {
        rows,
        cols,
        dim: out_dim,
        data,
        eligible: grid.eligible.clone(),
        patch_size: grid.patch_size,
        stride: grid.stride,
        input_resolution: grid.input_resolution,
    }
}

/// Centre of `cell`'s patch in camera pixels, given the camera resolution
/// `(width, height)` the extractor input was resized from.
pub fn grid_cell_to_pixel(
    grid: &DescriptorGrid,
    cell: Cell,
    camera_resolution: (u32, u32),
) -> Result<Vec2, DescriptorError> {
    if !grid.contains(cell) {
        return Err(DescriptorError::CellOutOfBounds {
            row: cell.row,
            col: cell.col,
            rows: grid.rows,
            cols: grid.cols,
        });
    }
    let half = grid.patch_size as f64 / 2.0;
    let res = grid.input_resolution as f64;
    let u = (cell.col as f64 * grid.stride as f64 + half) * camera_resolution.0 as f64 / res;
    let v = (cell.row as f64 * grid.stride as f64 + half) * camera_resolution.1 as f64 / res;
    Ok(Vec2::new(u, v))
}

fn default_kind() -> String {
    PhotometricProvider::NAME.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    /// Registered provider name ("photometric" or "bridge" by default).
    #[serde(default = "default_kind")]
    pub kind: String,
    pub input_resolution: u32,
    /// Binning hierarchy depth β.
    pub binning: usize,
    /// Transformer layer requested from the bridge.
    pub layer: u32,
    /// Photometric window size in patches per side.
    pub context: u32,
    /// Optional foreground mask image (non-zero = foreground).
    pub mask: Option<PathBuf>,
    /// Apply the mask to the current image as well as the desired one.
    pub mask_current: bool,
    pub bridge: BridgeConfig,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            input_resolution: 308,
            binning: 1,
            layer: 11,
            context: DEFAULT_CONTEXT,
            mask: None,
            mask_current: false,
            bridge: BridgeConfig::default(),
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), DescriptorError> {
        if !(MIN_INPUT_RESOLUTION..=MAX_INPUT_RESOLUTION).contains(&self.input_resolution) {
            return Err(DescriptorError::InvalidConfig(format!(
                "input_resolution {} outside [{MIN_INPUT_RESOLUTION}, {MAX_INPUT_RESOLUTION}]",
                self.input_resolution
            )));
        }
        if self.context == 0 {
            return Err(DescriptorError::InvalidConfig("context must be at least 1".into()));
        }
        Ok(())
    }
}

/// A backend that maps an image to a raw (unbinned) descriptor grid.
pub trait DescriptorProvider: Send + Sync {
    fn name(&self) -> &str;

    fn extract_raw(&self, image: &RgbImage) -> Result<DescriptorGrid, DescriptorError>;
}

pub type ProviderFactory =
    fn(&ProviderConfig) -> Result<Box<dyn DescriptorProvider>, DescriptorError>;

#[derive(Clone)]
pub struct ProviderRegistry {
    factories: BTreeMap<String, ProviderFactory>,
}

impl fmt::Debug for ProviderRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Default for ProviderRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ProviderRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register(PhotometricProvider::NAME, |cfg| {
            Ok(Box::new(
                PhotometricProvider::new(cfg.input_resolution).with_context(cfg.context),
            ))
        });
        reg.register(BridgeProvider::NAME, |cfg| {
            Ok(Box::new(BridgeProvider::connect(cfg)?))
        });
        reg
    }

    /// Registers (or replaces) a provider factory under `name`.
    pub fn register(&mut self, name: &str, factory: ProviderFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn create(&self, cfg: &ProviderConfig) -> Result<Box<dyn DescriptorProvider>, DescriptorError> {
        let factory = self
            .factories
            .get(&cfg.kind)
            .ok_or_else(|| DescriptorError::UnknownProvider(cfg.kind.clone()))?;
        factory(cfg)
    }
}

/// A configured provider: extraction followed by binning and masking.
#[derive(Clone)]
pub struct Extractor {
    provider: Arc<dyn DescriptorProvider>,
    config: ProviderConfig,
    mask: Option<Arc<Mask>>,
}

impl fmt::Debug for Extractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Extractor")
            .field("provider", &self.provider.name())
            .field("config", &self.config)
            .finish()
    }
}

impl Extractor {
    pub fn from_config(cfg: &ProviderConfig, registry: &ProviderRegistry) -> Result<Self, DescriptorError> {
        cfg.validate()?;
        let provider: Arc<dyn DescriptorProvider> = Arc::from(registry.create(cfg)?);
        let mask = match &cfg.mask {
            Some(path) => Some(Arc::new(Mask::from_file(path)?)),
            None => None,
        };
        Ok(Self {
            provider,
            config: cfg.clone(),
            mask,
        })
    }

    pub fn photometric(input_resolution: u32, binning: usize) -> Self {
        let config = ProviderConfig {
            input_resolution,
            binning,
            ..ProviderConfig::default()
        };
        Self {
            provider: Arc::new(PhotometricProvider::new(input_resolution).with_context(config.context)),
            config,
            mask: None,
        }
    }

    pub fn with_mask(mut self, mask: Option<Mask>) -> Self {
        self.mask = mask.map(Arc::new);
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    /// Grid for the desired (reference) image: the mask always applies.
    pub fn extract_desired(&self, image: &RgbImage) -> Result<DescriptorGrid, DescriptorError> {
        self.extract_with(image, true)
    }

    /// Grid for a current image: the mask applies only with `mask_current`.
    pub fn extract_current(&self, image: &RgbImage) -> Result<DescriptorGrid, DescriptorError> {
        self.extract_with(image, self.config.mask_current)
    }

    pub fn extract(&self, image: &RgbImage) -> Result<DescriptorGrid, DescriptorError> {
        self.extract_with(image, false)
    }

    fn extract_with(&self, image: &RgbImage, masked: bool) -> Result<DescriptorGrid, DescriptorError> {
        if image.width() == 0 || image.height() == 0 {
            return Err(DescriptorError::EmptyImage);
        }
        let raw = self.provider.extract_raw(image)?;
        let mut grid = bin_features(&raw, self.config.binning);
        if masked {
            if let Some(mask) = &self.mask {
                grid.apply_mask(mask);
            }
        }
        Ok(grid)
    }
}
