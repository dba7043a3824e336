//! Image-based visual servoing control.
//!
//! Point features `s = (x, y)` in normalised image coordinates drive the
//! classical law `v = -λ L⁺ (s − s*)`, where `L` stacks the per-point
//! interaction matrices built from the current depth. Commands are smoothed
//! by an exponential moving average. Before the loop starts, a coarse in-plane
//! rotation (multiples of 90°) is chosen by comparing mean match similarity.

use image::{Rgb, RgbImage};
use nalgebra::{DMatrix, DVector, Vector6};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::{grid_cell_to_pixel, Cell, DescriptorError, DescriptorGrid, Extractor};
use crate::geometry::{so3_exp, so3_log, CameraIntrinsics, Pose, Twist, Vec2};
use crate::matching::{cyclical_distance_map, select_correspondences, MatchError, MatcherConfig, MIN_CORRESPONDENCES};
use crate::simenv::{RenderedView, DEFAULT_BACKGROUND};

/// Relative cut-off for singular values in the pseudoinverse.
pub const PINV_RCOND: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("feature {index} has non-positive depth {depth}")]
    NonPositiveDepth { index: usize, depth: f64 },
    #[error("interaction matrix is {rows}×{cols} but error vector has {len} entries")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("only {valid} correspondences have valid depth (need {MIN_CORRESPONDENCES})")]
    InvalidDepth { valid: usize },
    #[error(transparent)]
    Matching(#[from] MatchError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl ControlError {
    /// Failures that leave the trial alive (no usable features this frame).
    pub fn is_feature_starvation(&self) -> bool {
        matches!(
            self,
            ControlError::InvalidDepth { .. }
                | ControlError::Matching(MatchError::InsufficientMatches { .. })
                | ControlError::Matching(MatchError::NoEligibleCells)
        )
    }
}

/// One matched point: current normalised position, its depth, and the paired
/// desired position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureObservation {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
    pub desired_x: f64,
    pub desired_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// λ, 1/s.
    pub gain: f64,
    /// EMA weight of the newest command.
    pub alpha: f64,
    /// Control period, s.
    pub dt: f64,
    /// Linear speed (m/s) below which the camera counts as settled.
    pub linear_threshold: f64,
    /// Angular speed (rad/s) below which the camera counts as settled.
    pub angular_threshold: f64,
    /// Consecutive settled iterations required.
    pub sustain_iterations: usize,
    pub max_iterations: usize,
    /// Fraction of the initial translation and rotation error that must be removed.
    pub required_reduction: f64,
    pub rotation_compensation: bool,
    /// Spacing of the compensation candidates, degrees; must divide 360.
    pub rotation_step_deg: u32,
    /// Consecutive frames without usable features before a trial is abandoned.
    pub failure_streak: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            gain: 0.5,
            alpha: 0.8,
            dt: 0.05,
            linear_threshold: 1e-4,
            angular_threshold: 1e-3,
            sustain_iterations: 10,
            max_iterations: 1500,
            required_reduction: 0.9,
            rotation_compensation: true,
            rotation_step_deg: 90,
            failure_streak: 25,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |m: &str| Err(ControlError::InvalidArgument(m.to_string()));
        if !(self.gain > 0.0) {
            return bad("gain must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.required_reduction) {
            return bad("required_reduction must lie in [0, 1]");
        }
        if self.rotation_step_deg == 0 || 360 % self.rotation_step_deg != 0 {
            return bad("rotation_step_deg must be a positive divisor of 360");
        }
        Ok(())
    }

    pub fn is_settled(&self, twist: &Twist) -> bool {
        twist.linear.norm() < self.linear_threshold && twist.angular.norm() < self.angular_threshold
    }
}

/// Stacked `(x − x*, y − y*)` per observation.
pub fn feature_error(observations: &[FeatureObservation]) -> DVector<f64> {
    DVector::from_iterator(
        2 * observations.len(),
        observations
            .iter()
            .flat_map(|o| [o.x - o.desired_x, o.y - o.desired_y]),
    )
}

/// Stacked 2×6 point interaction matrices at the current features.
pub fn interaction_matrix(observations: &[FeatureObservation]) -> Result<DMatrix<f64>, ControlError> {
    let mut l = DMatrix::zeros(2 * observations.len(), 6);
    for (i, o) in observations.iter().enumerate() {
        if !(o.depth > 0.0 && o.depth.is_finite()) {
            return Err(ControlError::NonPositiveDepth {
                index: i,
                depth: o.depth,
            });
        }
        let (x, y, iz) = (o.x, o.y, 1.0 / o.depth);
        let r = 2 * i;
        l[(r, 0)] = -iz;
        l[(r, 2)] = x * iz;
        l[(r, 3)] = x * y;
        l[(r, 4)] = -(1.0 + x * x);
        l[(r, 5)] = y;
        l[(r + 1, 1)] = -iz;
        l[(r + 1, 2)] = y * iz;
        l[(r + 1, 3)] = 1.0 + y * y;
        l[(r + 1, 4)] = -x * y;
        l[(r + 1, 5)] = -x;
    }
    Ok(l)
}

/// Moore–Penrose pseudoinverse through the SVD, dropping singular values
/// below `PINV_RCOND · σ_max`. Returns the pseudoinverse and the kept rank.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = PINV_RCOND * sigma_max;
    let u = svd.u.as_ref().expect("svd u");
    let v_t = svd.v_t.as_ref().expect("svd v_t");
    let mut pinv = DMatrix::zeros(m.ncols(), m.nrows());
    let mut rank = 0;
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s <= cutoff || *s == 0.0 {
            continue;
        }
        rank += 1;
        pinv += (v_t.row(k).transpose() / *s) * u.column(k).transpose();
    }
    (pinv, rank)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityCommand {
    pub twist: Twist,
    /// Numerical rank of the interaction matrix; below 6 the command comes
    /// from the truncated pseudoinverse.
    pub rank: usize,
}

impl VelocityCommand {
    pub fn rank_deficient(&self) -> bool {
        self.rank < 6
    }
}

/// `v = -λ L⁺ e`.
pub fn velocity_command(error: &DVector<f64>, l: &DMatrix<f64>, gain: f64) -> Result<VelocityCommand, ControlError> {
    if l.ncols() != 6 || l.nrows() != error.len() {
        return Err(ControlError::ShapeMismatch {
            rows: l.nrows(),
            cols: l.ncols(),
            len: error.len(),
        });
    }
    let (pinv, rank) = pseudo_inverse(l);
    let v = -(pinv * error) * gain;
    if rank < 6 {
        tracing::debug!(rank, "rank-deficient interaction matrix");
    }
    Ok(VelocityCommand {
        twist: Twist::from_vector(&Vector6::from_iterator(v.iter().cloned())),
        rank,
    })
}

/// `α · new + (1 − α) · previous`, per component.
pub fn ema_filter(previous: &Twist, new: &Twist, alpha: f64) -> Twist {
    Twist {
        linear: new.linear * alpha + previous.linear * (1.0 - alpha),
        angular: new.angular * alpha + previous.angular * (1.0 - alpha),
    }
}

/// EMA state; seeded with the first raw command.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityFilter {
    alpha: f64,
    state: Option<Twist>,
}

impl VelocityFilter {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, state: None }
    }

    pub fn update(&mut self, raw: &Twist) -> Twist {
        let next = match &self.state {
            None => *raw,
            Some(prev) => ema_filter(prev, raw, self.alpha),
        };
        self.state = Some(next);
        next
    }

    pub fn state(&self) -> Option<Twist> {
        self.state
    }

    pub fn reset(&mut self) {
        self.state = None;
    }
}

/// Rotates image content by `angle_deg` about the image centre (nearest
/// neighbour, canvas size kept, uncovered pixels set to `fill`). Positive
/// angles turn +u towards +v.
pub fn rotate_image(image: &RgbImage, angle_deg: f64, fill: [u8; 3]) -> RgbImage {
    let (w, h) = image.dimensions();
    let cu = (w as f64 - 1.0) * 0.5;
    let cv = (h as f64 - 1.0) * 0.5;
    let (s, c) = angle_deg.to_radians().sin_cos();
    // Snap to exact values for quarter turns so the pixel map is a permutation.
    let (s, c) = (snap(s), snap(c));
    RgbImage::from_fn(w, h, |u, v| {
        let du = u as f64 - cu;
        let dv = v as f64 - cv;
        // Inverse map: rotate the output offset by -angle.
        let su = c * du + s * dv + cu;
        let sv = -s * du + c * dv + cv;
        let (iu, iv) = (su.round(), sv.round());
        if iu < 0.0 || iv < 0.0 || iu >= w as f64 || iv >= h as f64 {
            Rgb(fill)
        } else {
            *image.get_pixel(iu as u32, iv as u32)
        }
    })
}

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-12 {
        r
    } else {
        x
    }
}

/// Candidate in-plane rotations in tie-break order.
pub const ROTATION_CANDIDATES_DEG: [i32; 4] = [0, 90, 180, -90];

/// Multiples of `step_deg` wrapped to (−180, 180], starting at 0.
/// A step of 90 gives [`ROTATION_CANDIDATES_DEG`].
pub fn rotation_candidates(step_deg: u32) -> Vec<i32> {
    let step = step_deg.clamp(1, 360) as i32;
    (0..360 / step)
        .map(|k| {
            let a = k * step;
            if a > 180 {
                a - 360
            } else {
                a
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationEstimate {
    /// Estimated rotation of the current image relative to the desired one.
    pub angle_deg: i32,
    /// Mean cosine similarity per candidate; `None` where matching failed.
    pub scores: Vec<(i32, Option<f64>)>,
}

impl RotationEstimate {
    /// Pose correction that undoes the estimated image rotation.
    pub fn apply(&self, pose: &Pose) -> Pose {
        pose.rolled((self.angle_deg as f64).to_radians())
    }
}

/// Scores each candidate rotation by undoing it on the current image and
/// taking the mean cosine over the selected correspondences.
pub fn compensate_rotation<R: Rng + ?Sized>(
    desired: &DescriptorGrid,
    current_image: &RgbImage,
    extractor: &Extractor,
    matcher: &MatcherConfig,
    candidates: &[i32],
    rng: &mut R,
) -> Result<RotationEstimate, ControlError> {
    if candidates.is_empty() {
        return Err(ControlError::InvalidArgument("no rotation candidates".into()));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    let mut best: Option<(i32, f64)> = None;
    let mut last_err = None;
    for &theta in candidates {
        let undone = rotate_image(current_image, -(theta as f64), DEFAULT_BACKGROUND);
        let grid = extractor.extract_current(&undone)?;
        let score = cyclical_distance_map(desired, &grid)
            .and_then(|m| select_correspondences(&m, matcher.k, matcher.threshold, rng))
            .map(|set| set.mean_cosine());
        match score {
            Ok(s) => {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((theta, s));
                }
                scores.push((theta, Some(s)));
            }
            Err(e) => {
                last_err = Some(e);
                scores.push((theta, None));
            }
        }
    }
    match best {
        Some((angle_deg, _)) => Ok(RotationEstimate { angle_deg, scores }),
        None => Err(last_err.expect("every candidate failed").into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub raw: Twist,
    /// Pairs that survived depth lookup.
    pub k_used: usize,
    pub mean_cosine: f64,
    pub error_norm: f64,
    pub rank: usize,
}

/// Per-trial controller state: the EMA filter and, when correspondences are
/// not resampled every iteration, the fixed desired cells.
#[derive(Debug, Clone)]
pub struct IbvsController {
    pub config: ControllerConfig,
    filter: VelocityFilter,
    fixed_cells: Option<Vec<Cell>>,
}

impl IbvsController {
    pub fn new(config: ControllerConfig) -> Self {
        let filter = VelocityFilter::new(config.alpha);
        Self {
            config,
            filter,
            fixed_cells: None,
        }
    }

    pub fn filter_state(&self) -> Option<Twist> {
        self.filter.state()
    }
}

/// Everything the controller sees in one frame.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    /// Image fed to the extractor (possibly perturbed).
    pub image: &'a RgbImage,
    /// Depth source for the current features.
    pub view: &'a RenderedView,
    pub intrinsics: &'a CameraIntrinsics,
}

/// One control iteration: match, build observations, solve, smooth.
pub fn servo_step<R: Rng + ?Sized>(
    desired: &DescriptorGrid,
    frame: Frame<'_>,
    extractor: &Extractor,
    matcher: &MatcherConfig,
    rng: &mut R,
    controller: &mut IbvsController,
) -> Result<(Twist, StepDiagnostics), ControlError> {
    let current = extractor.extract_current(frame.image)?;
    let matches = cyclical_distance_map(desired, &current)?;
    let selection = match (&controller.fixed_cells, matcher.resample_each_iteration) {
        (Some(cells), false) => {
            let pairs: Vec<_> = select_correspondences(&matches, usize::MAX, matcher.threshold, rng)?
                .pairs
                .into_iter()
                .filter(|p| cells.contains(&p.desired_cell))
                .collect();
            if pairs.len() >= MIN_CORRESPONDENCES {
                crate::matching::CorrespondenceSet { pairs }
            } else {
                select_correspondences(&matches, matcher.k, matcher.threshold, rng)?
            }
        }
        _ => select_correspondences(&matches, matcher.k, matcher.threshold, rng)?,
    };
    if !matcher.resample_each_iteration && controller.fixed_cells.is_none() {
        controller.fixed_cells = Some(selection.pairs.iter().map(|p| p.desired_cell).collect());
    }

    let res = frame.intrinsics.resolution();
    let mut obs = Vec::with_capacity(selection.len());
    let mut cos_sum = 0.0;
    for pair in &selection.pairs {
        let cur_px = grid_cell_to_pixel(&current, pair.current_cell, res)?;
        let Some(depth) = frame.view.depth_at(cur_px.x, cur_px.y) else {
            continue;
        };
        let des_px = grid_cell_to_pixel(desired, pair.desired_cell, res)?;
        let cur = frame.intrinsics.pixel_to_normalized(&cur_px);
        let des = frame.intrinsics.pixel_to_normalized(&des_px);
        obs.push(FeatureObservation {
            x: cur.x,
            y: cur.y,
            depth,
            desired_x: des.x,
            desired_y: des.y,
        });
        cos_sum += pair.cosine;
    }
    if obs.len() < MIN_CORRESPONDENCES {
        return Err(ControlError::InvalidDepth { valid: obs.len() });
    }
    let e = feature_error(&obs);
    let l = interaction_matrix(&obs)?;
    let cmd = velocity_command(&e, &l, controller.config.gain)?;
    let smoothed = controller.filter.update(&cmd.twist);
    Ok((
        smoothed,
        StepDiagnostics {
            raw: cmd.twist,
            k_used: obs.len(),
            mean_cosine: cos_sum / obs.len() as f64,
            error_norm: e.norm(),
            rank: cmd.rank,
        },
    ))
}

/// Ideal position-based path: straight-line translation and geodesic
/// rotation, `steps` poses including both ends.
pub fn pbvs_reference(initial: &Pose, desired: &Pose, steps: usize) -> Result<Vec<Pose>, ControlError> {
    if steps < 2 {
        return Err(ControlError::InvalidArgument(format!("steps must be ≥ 2, got {steps}")));
    }
    let delta = so3_log(&(initial.rotation.transpose() * desired.rotation));
    Ok((0..steps)
        .map(|i| {
            let s = i as f64 / (steps - 1) as f64;
            if i == steps - 1 {
                return *desired;
            }
            Pose::new(
                initial.rotation * so3_exp(&(delta * s)),
                initial.translation + (desired.translation - initial.translation) * s,
            )
        })
        .collect())
}

/// Normalised image coordinates of the pixel centre of `cell`.
pub fn cell_to_normalized(grid: &DescriptorGrid, cell: Cell, intrinsics: &CameraIntrinsics) -> Result<Vec2, ControlError> {
    let px = grid_cell_to_pixel(grid, cell, intrinsics.resolution())?;
    Ok(intrinsics.pixel_to_normalized(&px))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pose_error, Vec3};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(x: f64, y: f64, z: f64) -> FeatureObservation {
        FeatureObservation {
            x,
            y,
            depth: z,
            desired_x: 0.0,
            desired_y: 0.0,
        }
    }

    #[test]
    fn feature_error_examples() {
        let o = [FeatureObservation {
            x: 0.3,
            y: -0.2,
            depth: 1.0,
            desired_x: 0.3,
            desired_y: -0.2,
        }];
        assert_eq!(feature_error(&o).norm(), 0.0);
        let e = feature_error(&[obs(0.1, 0.0, 1.0)]);
        assert_eq!(e.as_slice(), &[0.1, 0.0]);
        assert_eq!(feature_error(&[obs(0.0, 0.0, 1.0); 3]).len(), 6);
    }

    #[test]
    fn interaction_matrix_examples() {
        let l = interaction_matrix(&[obs(0.0, 0.0, 1.0)]).unwrap();
        let expected = [[-1.0, 0.0, 0.0, 0.0, -1.0, 0.0], [0.0, -1.0, 0.0, 1.0, 0.0, 0.0]];
        for r in 0..2 {
            for c in 0..6 {
                assert_eq!(l[(r, c)], expected[r][c]);
            }
        }
        let l = interaction_matrix(&[obs(1.0, 1.0, 2.0)]).unwrap();
        let expected = [[-0.5, 0.0, 0.5, 1.0, -2.0, 1.0], [0.0, -0.5, 0.5, 2.0, -1.0, -1.0]];
        for r in 0..2 {
            for c in 0..6 {
                assert_eq!(l[(r, c)], expected[r][c]);
            }
        }
        assert!(matches!(
            interaction_matrix(&[obs(0.0, 0.0, 0.0)]),
            Err(ControlError::NonPositiveDepth { index: 0, .. })
        ));
    }

    fn random_obs(rng: &mut ChaCha8Rng, n: usize) -> Vec<FeatureObservation> {
        (0..n)
            .map(|_| FeatureObservation {
                x: rng.gen_range(-0.5..0.5),
                y: rng.gen_range(-0.4..0.4),
                depth: rng.gen_range(0.3..1.5),
                desired_x: rng.gen_range(-0.5..0.5),
                desired_y: rng.gen_range(-0.4..0.4),
            })
            .collect()
    }

    #[test]
    fn zero_error_gives_zero_twist_and_gain_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let o = random_obs(&mut rng, 8);
        let l = interaction_matrix(&o).unwrap();
        let zero = velocity_command(&DVector::zeros(16), &l, 0.5).unwrap();
        assert_eq!(zero.twist.norm(), 0.0);
        let e = feature_error(&o);
        let a = velocity_command(&e, &l, 0.5).unwrap().twist;
        let b = velocity_command(&e, &l, 1.0).unwrap().twist;
        assert!((a.to_vector() * 2.0 - b.to_vector()).norm() < 1e-12);
        assert!(matches!(
            velocity_command(&DVector::zeros(4), &l, 0.5),
            Err(ControlError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn command_is_least_squares_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let o = random_obs(&mut rng, 24);
        let l = interaction_matrix(&o).unwrap();
        let e = DVector::from_fn(48, |_, _| rng.gen_range(-0.01..0.01));
        let gain = 0.7;
        let v = velocity_command(&e, &l, gain).unwrap();
        assert_eq!(v.rank, 6);
        let x = v.twist.to_vector() / -gain;
        // Normal-equations oracle.
        let lt = l.transpose();
        let x_ne = (&lt * &l).try_inverse().unwrap() * (&lt * &e);
        assert!((DVector::from_iterator(6, x.iter().cloned()) - &x_ne).norm() < 1e-9 * x_ne.norm().max(1.0));
        let resid = (&l * DVector::from_iterator(6, x.iter().cloned()) - &e).norm();
        let (pinv, _) = pseudo_inverse(&l);
        let proj = (DMatrix::identity(48, 48) - &l * pinv) * &e;
        assert!(resid <= proj.norm() + 1e-12);
    }

    #[test]
    fn rank_deficient_command_still_returned() {
        // Three identical points: rank ≤ 2.
        let o = vec![obs(0.1, 0.2, 1.0); 3];
        let l = interaction_matrix(&o).unwrap();
        let e = DVector::from_element(6, 0.01);
        let v = velocity_command(&e, &l, 0.5).unwrap();
        assert!(v.rank_deficient());
        assert!(v.twist.is_finite());
    }

    #[test]
    fn ema_examples() {
        let prev = Twist::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.0, 0.5));
        let new = Twist::new(Vec3::new(0.5, 0.0, -1.0), Vec3::new(2.0, 2.0, 2.0));
        assert_eq!(ema_filter(&prev, &new, 1.0), new);
        let out = ema_filter(&Twist::zero(), &Twist::new(Vec3::new(1.0, 0.0, 0.0), Vec3::zeros()), 0.8);
        assert_abs_diff_eq!(out.linear.x, 0.8, epsilon = 1e-15);
    }

    #[test]
    fn filter_starts_from_first_command() {
        let mut f = VelocityFilter::new(0.5);
        let a = Twist::new(Vec3::new(1.0, 0.0, 0.0), Vec3::zeros());
        assert_eq!(f.update(&a), a);
        let b = f.update(&Twist::zero());
        assert_abs_diff_eq!(b.linear.x, 0.5);
        f.reset();
        assert_eq!(f.state(), None);
    }

    #[test]
    fn quarter_turn_rotation_is_a_permutation() {
        let img = RgbImage::from_fn(8, 6, |x, y| Rgb([x as u8, y as u8, 0]));
        let r = rotate_image(&img, 180.0, [1, 2, 3]);
        assert_eq!(r.get_pixel(0, 0), img.get_pixel(7, 5));
        let back = rotate_image(&r, 180.0, [1, 2, 3]);
        assert_eq!(back, img);
        // 90° then -90° recovers the central square exactly.
        let q = rotate_image(&rotate_image(&img, 90.0, [0, 0, 0]), -90.0, [0, 0, 0]);
        for v in 0..6 {
            for u in 1..7 {
                assert_eq!(q.get_pixel(u, v), img.get_pixel(u, v));
            }
        }
    }

    #[test]
    fn pbvs_examples() {
        let a = Pose::from_translation(Vec3::new(0.1, 0.2, 0.6));
        let same = pbvs_reference(&a, &a, 5).unwrap();
        assert!(same.iter().all(|p| pose_error(p, &a) == (0.0, 0.0)));

        let b = Pose::from_translation(Vec3::new(0.3, 0.0, 0.4));
        let path = pbvs_reference(&a, &b, 3).unwrap();
        assert!((path[1].translation - Vec3::new(0.2, 0.1, 0.5)).norm() < 1e-12);

        let c = Pose::new(crate::geometry::rot_z(std::f64::consts::FRAC_PI_2), a.translation);
        let path = pbvs_reference(&a, &c, 3).unwrap();
        assert_abs_diff_eq!(pose_error(&path[1], &a).1, 45.0, epsilon = 1e-9);
        assert!(pbvs_reference(&a, &b, 1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ControllerConfig::default().validate().is_ok());
        for cfg in [
            ControllerConfig { alpha: 0.0, ..Default::default() },
            ControllerConfig { alpha: 1.5, ..Default::default() },
            ControllerConfig { gain: 0.0, ..Default::default() },
            ControllerConfig { dt: -1.0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
