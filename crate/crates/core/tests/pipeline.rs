//! Cross-module pipeline tests: generated scenes feed real (briefly trained)
//! networks through the full cascade, checking structural invariants that
//! hold regardless of detection quality.

use std::sync::OnceLock;

use fingercascade::cascade::{
    ahd_detect, build_network_spec, finger_predict, run_cascade, train_finger_detector,
    train_hand_detector, FingerStrategy, HandStrategy, InputGeometry, KeypointAugment,
    TrainedModels,
};
use fingercascade::datagen::{
    dataset_mean, frame_name, generate_frame, Sample, SceneParams,
};
use fingercascade::eval::{cross_table, evaluate_frames, zone_metrics};
use fingercascade::geometry::{BBox, Point2, Translation};
use fingercascade::image::{translate_image, Image};
use fingercascade::nn::TrainConfig;

const FRAME: (usize, usize) = (32, 32);

fn tiny_geometry() -> InputGeometry {
    InputGeometry { train_size: (16, 16), crop_size: (16, 16), mfd_patch_size: (16, 16) }
}

fn train_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.02,
        momentum: 0.9,
        batch_size: 4,
        epochs,
        seed,
        weight_init_scale: 1.0,
    }
}

fn scene_params(seed: u64) -> SceneParams {
    let mut params = SceneParams::desk_default(FRAME);
    params.seed = seed;
    params
}

fn make_samples(seed: u64, count: usize) -> Vec<Sample> {
    let params = scene_params(seed);
    (0..count)
        .map(|i| {
            let frame = generate_frame(&params, i as u64).expect("frame generation");
            Sample::from_labeled(&frame, frame_name(i))
        })
        .collect()
}

fn build_models(samples: &[Sample], hand_seed: u64, finger_seed: u64) -> TrainedModels {
    let geometry = tiny_geometry();
    let fill_mean = dataset_mean(samples).unwrap();
    let hand_spec = build_network_spec(geometry.crop_size, &[4], &[8], 4);
    let rough =
        train_hand_detector(samples, &hand_spec, &geometry, &train_config(2, hand_seed)).unwrap();
    let finger_spec = build_network_spec(geometry.mfd_patch_size, &[4], &[8], 4);
    let augment = KeypointAugment::default();
    let mfd = train_finger_detector(
        samples,
        FingerStrategy::Mfd,
        &finger_spec,
        &geometry,
        0.15,
        &augment,
        fill_mean,
        &train_config(2, finger_seed),
    )
    .unwrap();
    let spd_spec = build_network_spec(geometry.mfd_patch_size, &[4], &[8], 2);
    let spd = train_finger_detector(
        samples,
        FingerStrategy::Spd,
        &spd_spec,
        &geometry,
        0.15,
        &augment,
        fill_mean,
        &train_config(2, finger_seed ^ 1),
    )
    .unwrap();
    TrainedModels {
        rough_hand: (rough.spec.clone(), rough.weights.clone()),
        // The fine-tuned net only needs valid weights here; reusing the
        // rough ones keeps the fixture cheap.
        attention_hand: (rough.spec, rough.weights),
        finger_multi: (mfd.spec, mfd.weights),
        finger_single: (spd.spec, spd.weights),
        fill_mean,
        input_geometry: geometry,
        margin: 0.15,
        bias_max: 2.0,
    }
}

fn fixture() -> &'static (TrainedModels, Vec<Sample>) {
    static FIXTURE: OnceLock<(TrainedModels, Vec<Sample>)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let samples = make_samples(21, 10);
        let models = build_models(&samples, 100, 200);
        (models, samples)
    })
}

fn in_frame(b: &BBox, w: f64, h: f64) -> bool {
    b.is_valid() && b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= w && b.y2 <= h
}

#[test]
fn every_strategy_combination_yields_an_in_frame_detection() {
    let (models, samples) = fixture();
    let frame = samples[0].to_labeled();
    let (w, h) = (frame.image.width() as f64, frame.image.height() as f64);
    for hand in HandStrategy::ALL {
        for finger in [FingerStrategy::Mfd, FingerStrategy::Spd] {
            let gt = (hand == HandStrategy::Gt).then_some(&frame.hand_box);
            let d = run_cascade(models, &frame.image, hand, finger, gt).unwrap();
            assert!(in_frame(&d.hand_box, w, h), "{hand}+{finger} box {:?}", d.hand_box);
            assert!((0.0..=w).contains(&d.fingertip.x) && (0.0..=h).contains(&d.fingertip.y));
            assert_eq!(d.joint.is_some(), finger == FingerStrategy::Mfd);
            if let Some(j) = d.joint {
                assert!((0.0..=w).contains(&j.x) && (0.0..=h).contains(&j.y));
            }
            assert_eq!(d.hand_strategy, hand);
            assert_eq!(d.finger_strategy, finger);
            assert!(d.timings.total_ms >= 0.0);
        }
    }
}

#[test]
fn ground_truth_strategy_passes_the_label_through_unchanged() {
    let (models, samples) = fixture();
    let frame = samples[1].to_labeled();
    let d = run_cascade(
        models,
        &frame.image,
        HandStrategy::Gt,
        FingerStrategy::Mfd,
        Some(&frame.hand_box),
    )
    .unwrap();
    assert_eq!(d.hand_box, frame.hand_box);
    assert!(!d.hand_repaired);
}

#[test]
fn gt_box_presence_must_match_the_strategy() {
    let (models, samples) = fixture();
    let frame = samples[2].to_labeled();
    let missing =
        run_cascade(models, &frame.image, HandStrategy::Gt, FingerStrategy::Mfd, None);
    assert!(missing.is_err());
    let spurious = run_cascade(
        models,
        &frame.image,
        HandStrategy::Rhd,
        FingerStrategy::Mfd,
        Some(&frame.hand_box),
    );
    assert!(spurious.is_err());
}

#[test]
fn cascade_hand_stage_equals_the_standalone_redetection() {
    let (models, samples) = fixture();
    let frame = samples[3].to_labeled();
    let (expected, _) = ahd_detect(models, &frame.image).unwrap();
    let d = run_cascade(models, &frame.image, HandStrategy::Ahd, FingerStrategy::Mfd, None)
        .unwrap();
    assert_eq!(d.hand_box, expected);
}

#[test]
fn detections_are_deterministic_across_repeated_runs() {
    let (models, samples) = fixture();
    let frame = samples[4].to_labeled();
    for hand in [HandStrategy::Rhd, HandStrategy::Redetect, HandStrategy::Ahd] {
        let a = run_cascade(models, &frame.image, hand, FingerStrategy::Mfd, None).unwrap();
        let b = run_cascade(models, &frame.image, hand, FingerStrategy::Mfd, None).unwrap();
        assert_eq!(a.hand_box, b.hand_box);
        assert_eq!(a.fingertip, b.fingertip);
        assert_eq!(a.joint, b.joint);
    }
}

#[test]
fn ground_truth_path_is_independent_of_the_hand_weights() {
    let (_, samples) = fixture();
    let a = build_models(samples, 7, 300);
    let mut b = build_models(samples, 8, 300);
    // Same finger nets, different hand nets.
    b.finger_multi = a.finger_multi.clone();
    let frame = samples[5].to_labeled();
    let da = run_cascade(
        &a,
        &frame.image,
        HandStrategy::Gt,
        FingerStrategy::Mfd,
        Some(&frame.hand_box),
    )
    .unwrap();
    let db = run_cascade(
        &b,
        &frame.image,
        HandStrategy::Gt,
        FingerStrategy::Mfd,
        Some(&frame.hand_box),
    )
    .unwrap();
    assert_eq!(da.hand_box, db.hand_box);
    assert_eq!(da.fingertip, db.fingertip);
    assert_eq!(da.joint, db.joint);
}

/// Shifting the image and the ground-truth box by the same whole-pixel
/// offset must shift the predicted fingertip by that offset, up to crop
/// boundary resampling.
#[test]
fn gt_detection_is_covariant_under_integer_translation() {
    let (models, samples) = fixture();
    // Pick a frame whose inflated hand box stays interior after the shift.
    let shift = Translation::new(3, 2);
    let frame = samples
        .iter()
        .map(|s| s.to_labeled())
        .find(|f| {
            let inflated = f.hand_box.inflate(models.margin);
            let moved = shift.apply_box(&inflated);
            in_frame(&inflated, FRAME.0 as f64, FRAME.1 as f64)
                && in_frame(&moved, FRAME.0 as f64, FRAME.1 as f64)
        })
        .expect("fixture contains an interior hand");
    let moved_img = translate_image(&frame.image, shift, models.fill_mean);
    let moved_box = shift.apply_box(&frame.hand_box);
    let (tip, _) =
        finger_predict(models, &frame.image, &frame.hand_box, FingerStrategy::Mfd).unwrap();
    let (moved_tip, _) =
        finger_predict(models, &moved_img, &moved_box, FingerStrategy::Mfd).unwrap();
    let expected = shift.apply_point(tip);
    assert!(
        moved_tip.distance(expected) < 2.0,
        "tip {tip:?} moved to {moved_tip:?}, expected {expected:?}"
    );
}

/// Training the multi-point finger net to convergence on a single frame
/// must localize that frame's fingertip. Augmentation is frozen to the
/// identity so the optimum is the label itself.
#[test]
fn single_frame_overfit_recovers_the_fingertip_label() {
    let samples = make_samples(33, 4);
    let one = &samples[..1];
    let geometry = tiny_geometry();
    let fill_mean = dataset_mean(one).unwrap();
    let spec = build_network_spec(geometry.mfd_patch_size, &[4], &[8], 4);
    let identity = KeypointAugment { scale_range: (1.0, 1.0), rotation_range_deg: (0.0, 0.0) };
    let outcome = train_finger_detector(
        one,
        FingerStrategy::Mfd,
        &spec,
        &geometry,
        0.15,
        &identity,
        fill_mean,
        &TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 1,
            epochs: 300,
            seed: 9,
            weight_init_scale: 1.0,
        },
    )
    .unwrap();
    let first = outcome.loss_trace[0];
    let last = *outcome.loss_trace.last().unwrap();
    assert!(last < first * 0.01, "loss barely moved: {first} -> {last}");
    let models = {
        let mut m = build_models(&samples, 1, 2);
        m.finger_multi = (outcome.spec, outcome.weights);
        m.fill_mean = fill_mean;
        m
    };
    let frame = one[0].to_labeled();
    let (tip, joint) =
        finger_predict(&models, &frame.image, &frame.hand_box, FingerStrategy::Mfd).unwrap();
    assert!(
        tip.distance(frame.fingertip) < 2.0,
        "tip {tip:?} vs label {:?}",
        frame.fingertip
    );
    assert!(joint.unwrap().distance(frame.joint) < 2.0);
}

#[test]
fn evaluation_covers_every_frame_and_fills_the_cross_table() {
    let (models, samples) = fixture();
    let (records, failures) = evaluate_frames(models, samples).unwrap();
    assert_eq!(records.len(), samples.len());
    assert_eq!(failures, 0);
    for r in &records {
        for iou in [r.iou_rhd, r.iou_redetect, r.iou_ahd] {
            assert!((0.0..=1.0).contains(&iou));
        }
        for row in &r.errors {
            for e in row {
                assert!(e.is_finite() && *e >= 0.0);
            }
        }
    }
    let table = cross_table(&records, failures).unwrap();
    for row in &table.mean_error_px {
        for e in row {
            assert!(e.is_finite() && *e >= 0.0);
        }
    }
    let zones = zone_metrics(&records, &BBox::new(0.25, 0.25, 0.75, 0.75));
    let focus = zones.focus.map_or(0, |z| z.frames);
    let surrounding = zones.surrounding.map_or(0, |z| z.frames);
    assert_eq!(focus + surrounding, records.len());
}

/// Every image operation the cascade performs keeps pixel values finite;
/// a frame of extremes must not poison the detection with NaN.
#[test]
fn saturated_frames_still_produce_finite_detections() {
    let (models, _) = fixture();
    for fill in [0.0f32, 1.0] {
        let img = Image::filled(FRAME.0, FRAME.1, [fill; 3]);
        let d = run_cascade(models, &img, HandStrategy::Ahd, FingerStrategy::Mfd, None).unwrap();
        assert!(d.hand_box.is_valid());
        assert!(d.fingertip.x.is_finite() && d.fingertip.y.is_finite());
        let p = Point2::new(d.fingertip.x, d.fingertip.y);
        assert!((0.0..=FRAME.0 as f64).contains(&p.x));
    }
}
