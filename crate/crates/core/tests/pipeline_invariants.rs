use proptest::prelude::*;
use tinytrack::config::PipelineConfig;
use tinytrack::detector::{MockConfig, MockDetector};
use tinytrack::geometry::DetectionMode;
use tinytrack::pipeline::{Mode, Pipeline};
use tinytrack::synth::{Scene, SceneSpec, TargetPath};

fn small_scene(seed: u64, frames: usize) -> Scene {
    Scene::new(SceneSpec {
        width: 320,
        height: 240,
        frame_count: frames,
        target: Some(TargetPath {
            start: (60.0, 120.0),
            velocity: (2.0, 0.2),
            wiggle_amplitude: (0.0, 15.0),
            ..TargetPath::default()
        }),
        seed,
        ..SceneSpec::default()
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn emissions_stay_inside_frame_and_roi(
        scene_seed in 0u64..1000,
        mock_seed in 0u64..1000,
        dropout in 0.0f64..0.6,
    ) {
        let scene = small_scene(scene_seed, 60);
        let mut det = MockDetector::new(
            scene.ground_truth_all(),
            MockConfig { dropout, seed: mock_seed, ..MockConfig::default() },
        ).unwrap();
        let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
        for frame in scene.frames() {
            let out = p.step(frame, &mut det).unwrap();
            if out.mode == Mode::Local {
                prop_assert!(out.roi.is_some());
            }
            if let Some(roi) = out.roi {
                prop_assert!(roi.x() >= 0.0 && roi.y() >= 0.0);
                prop_assert!(roi.right() <= 320.0 && roi.bottom() <= 240.0);
                prop_assert_eq!(roi.x().fract(), 0.0);
                prop_assert_eq!(roi.y().fract(), 0.0);
            }
            if let Some(d) = out.detection {
                let b = d.bbox;
                prop_assert!(b.x() >= 0.0 && b.y() >= 0.0);
                prop_assert!(b.right() <= 320.0 + 1e-9 && b.bottom() <= 240.0 + 1e-9);
                prop_assert!((0.0..=1.0).contains(&d.score()));
                let local = matches!(d.mode, DetectionMode::LocalYolo | DetectionMode::LocalMotion);
                prop_assert_eq!(local, out.mode == Mode::Local);
                if local {
                    prop_assert!(out.roi.unwrap().contains_box(&b, 1e-9));
                }
            }
        }
    }

    #[test]
    fn identical_inputs_give_identical_outputs(scene_seed in 0u64..1000, mock_seed in 0u64..1000) {
        let scene = small_scene(scene_seed, 40);
        let run = || {
            let mut det = MockDetector::new(
                scene.ground_truth_all(),
                MockConfig { dropout: 0.3, seed: mock_seed, ..MockConfig::default() },
            ).unwrap();
            let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
            scene
                .frames()
                .map(|f| {
                    let o = p.step(f, &mut det).unwrap();
                    (o.mode, o.detection.map(|d| (d.bbox, d.score().to_bits(), d.mode)))
                })
                .collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn empty_scene_never_emits() {
    let scene = Scene::new(SceneSpec {
        width: 320,
        height: 240,
        frame_count: 30,
        target: None,
        ..SceneSpec::default()
    })
    .unwrap();
    let mut det = MockDetector::new(scene.ground_truth_all(), MockConfig::default()).unwrap();
    let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
    for frame in scene.frames() {
        let out = p.step(frame, &mut det).unwrap();
        assert!(out.detection.is_none());
        assert_eq!(out.mode, Mode::Global);
    }
}

#[test]
fn out_of_order_frames_are_rejected() {
    let scene = small_scene(3, 5);
    let mut det = MockDetector::new(scene.ground_truth_all(), MockConfig::default()).unwrap();
    let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
    let frames: Vec<_> = scene.frames().collect();
    p.step(frames[2].clone(), &mut det).unwrap();
    assert!(p.step(frames[1].clone(), &mut det).is_err());
}
