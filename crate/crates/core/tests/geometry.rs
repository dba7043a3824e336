use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use servo_core::geometry::*;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn pose() -> impl Strategy<Value = Pose> {
    (vec3(3.0), vec3(2.0)).prop_map(|(w, t)| Pose::new(so3_exp(&w), t))
}

fn twist() -> impl Strategy<Value = Twist> {
    (vec3(1.0), vec3(1.0)).prop_map(|(v, w)| Twist::new(v, w))
}

proptest! {
    #[test]
    fn so3_log_inverts_exp(w in vec3(1.7)) {
        prop_assume!(w.norm() < std::f64::consts::PI - 1e-3);
        let back = so3_log(&so3_exp(&w));
        prop_assert!((back - w).norm() < 1e-9, "{w:?} -> {back:?}");
    }

    #[test]
    fn exp_is_a_rotation(w in vec3(5.0)) {
        let r = so3_exp(&w);
        prop_assert!((r.transpose() * r - Mat3::identity()).norm() < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compose_with_inverse_is_identity(p in pose(), x in vec3(2.0)) {
        let id = p.compose(&p.inverse());
        prop_assert!((id.rotation - Mat3::identity()).norm() < 1e-12);
        prop_assert!(id.translation.norm() < 1e-12);
        let back = p.inverse_transform_point(&p.transform_point(&x));
        prop_assert!((back - x).norm() < 1e-12);
    }

    #[test]
    fn integration_stays_orthonormal(p in pose(), xi in twist(), steps in 1usize..200) {
        let mut q = p;
        for _ in 0..steps {
            q = integrate_twist(&q, &xi, 0.05);
        }
        prop_assert!(q.orthonormality_error() < 1e-12);
    }

    #[test]
    fn integration_splits_additively(p in pose(), xi in twist()) {
        let once = integrate_twist(&p, &xi, 0.2);
        let twice = integrate_twist(&integrate_twist(&p, &xi, 0.1), &xi, 0.1);
        let (dt, dr) = pose_error(&once, &twice);
        prop_assert!(dt < 1e-12 && dr < 1e-9, "{dt} {dr}");
    }

    #[test]
    fn pure_translation_moves_along_camera_axes(p in pose(), v in vec3(1.0)) {
        let q = integrate_twist(&p, &Twist::new(v, Vec3::zeros()), 0.3);
        prop_assert!((q.translation - (p.translation + p.rotation * v * 0.3)).norm() < 1e-12);
        prop_assert!((q.rotation - p.rotation).norm() < 1e-12);
    }

    #[test]
    fn roll_is_invertible(p in pose(), a in -3.0f64..3.0) {
        let q = p.rolled(a).rolled(-a);
        prop_assert!((q.rotation - p.rotation).norm() < 1e-12);
        let (_, dr) = pose_error(&p.rolled(a), &p);
        let expected = a.abs().to_degrees();
        prop_assert!((dr - expected).abs() < 1e-6, "{dr} vs {expected}");
    }

    #[test]
    fn look_at_points_the_optical_axis(eye in vec3(1.0), target in vec3(1.0), roll in -3.0f64..3.0) {
        prop_assume!((target - eye).norm() > 1e-3);
        let p = look_at(&eye, &target, roll).unwrap();
        let z = p.rotation.column(2).into_owned();
        prop_assert!((z - (target - eye).normalize()).norm() < 1e-9);
        let c = p.inverse_transform_point(&target);
        prop_assert!(c.x.abs() < 1e-9 && c.y.abs() < 1e-9 && c.z > 0.0);
        prop_assert!(p.orthonormality_error() < 1e-12);
    }

    #[test]
    fn pose_error_is_symmetric(a in pose(), b in pose()) {
        let (t1, r1) = pose_error(&a, &b);
        let (t2, r2) = pose_error(&b, &a);
        prop_assert!((t1 - t2).abs() < 1e-12 && (r1 - r2).abs() < 1e-7);
        prop_assert!((0.0..=180.0 + 1e-9).contains(&r1));
    }

    #[test]
    fn projection_round_trips(x in -1.0f64..1.0, y in -1.0f64..1.0, z in 0.05f64..5.0) {
        let k = CameraIntrinsics::default();
        let (px, depth) = k.project(&Vec3::new(x, y, z)).unwrap();
        prop_assert_eq!(depth, z);
        let n = k.pixel_to_normalized(&px);
        prop_assert!((n - Vec2::new(x / z, y / z)).norm() < 1e-12);
        prop_assert!((k.normalized_to_pixel(&n) - px).norm() < 1e-9);
    }
}

#[test]
fn point_behind_camera_is_rejected() {
    let k = CameraIntrinsics::default();
    assert!(k.project(&Vec3::new(0.0, 0.0, -1.0)).is_err());
    assert!(k.project(&Vec3::new(0.0, 0.0, 0.0)).is_err());
}

#[test]
fn rolling_rotates_image_content_the_other_way() {
    let k = CameraIntrinsics::default();
    let p = look_at(&Vec3::new(0.0, 0.0, 1.0), &Vec3::zeros(), 0.0).unwrap();
    let world = Vec3::new(0.1, 0.0, 0.0);
    let before = k.pixel_to_normalized(&k.project(&p.inverse_transform_point(&world)).unwrap().0);
    let after = k.pixel_to_normalized(&k.project(&p.rolled(0.3).inverse_transform_point(&world)).unwrap().0);
    let angle = after.y.atan2(after.x) - before.y.atan2(before.x);
    assert_abs_diff_eq!(angle, -0.3, epsilon = 1e-12);
}
