use armdance_core::kinematics::{forward_kinematics, ik_point_c};
use armdance_core::{JointConfigF32, JointConfigF64, RobotModelF32, RobotModelF64};

#[test]
fn single_and_double_precision_agree() {
    let (m32, m64) = (RobotModelF32::canonical(), RobotModelF64::canonical());
    assert_eq!(m64.cast::<f32>(), m32);
    let q64 = JointConfigF64::from_arm_and_wrist([0.4, -0.7, 1.1], [0.0; 3]);
    let q32: JointConfigF32 = q64.cast();
    let (c32, c64) = (forward_kinematics(&m32, &q32).c, forward_kinematics(&m64, &q64).c);
    assert!((c32.cast::<f64>() - c64).norm() < 1e-6);

    let sol = ik_point_c(&m32, c32).unwrap();
    assert!(sol
        .candidates
        .iter()
        .any(|c| (0..3).all(|j| (c[j] - q32.0[j]).abs() < 1e-3)));
}
