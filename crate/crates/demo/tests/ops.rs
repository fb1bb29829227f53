use matchforge_demo::{run_detection, run_hardnet, run_scene, DETECT_CELLS};

#[test]
fn scene_view_is_consistent() {
    let v = run_scene(4, 0.5, 0.5).unwrap();
    let n = v.kept().len();
    assert_eq!(v.segments().len(), 4 * n);
    assert_eq!(v.correct().len(), n);
    assert!(v.precision() >= 0.9 && v.recall() >= 0.8);
    let clean = run_scene(4, 0.0, 0.0).unwrap();
    assert!(clean.kept().iter().all(|&k| k == 1));
    assert!(run_scene(4, 1.0, 0.5).is_err());
}

#[test]
fn detection_finds_planted_peaks() {
    let v = run_detection(1, 5, 0.2, 4).unwrap();
    assert_eq!(v.width(), DETECT_CELLS * 8);
    assert_eq!(v.heatmap().len(), v.width() * v.height());
    let kps = v.keypoints();
    assert!(!kps.is_empty() && kps.len() <= 15 && kps.len().is_multiple_of(3));
    assert_eq!(run_detection(1, 5, 0.2, 4).unwrap().keypoints(), kps);
}

#[test]
fn hardnet_worked_matrix() {
    let v = run_hardnet(&[1.0, 1.2, 0.9, 1.0]).unwrap();
    assert!((v.loss() - 1.1).abs() < 1e-12);
    assert_eq!(v.per_sample().len(), 2);
    assert!(run_hardnet(&[1.0, 2.0, 3.0]).is_err());
    assert!(run_hardnet(&[1.0]).is_err());
}
