mod common;

use common::*;
use filagauge::acquisition::{load_frame, scan_sequence, Frame};
use filagauge::calibration::scale_for;
use filagauge::measurement::{build_log, measure_frame, read_log_csv, write_log_csv, Flag};
use filagauge::synth::{render_frame, render_sequence, GroundTruth, SurfacePit, SynthScene};
use filagauge::texture::BAND_SAMPLES;
use filagauge::Projection;

#[test]
fn circular_frame_recovers_diameter() {
    let rig = rig_for(1.75);
    let calib = calibrate(&rig, 1.75, &CALIBRATION_DISTANCES);
    let s = scene(1.75, 50.0);
    let (frame, _) = render_frame(&s, 7).unwrap();
    let fm = measure_frame(&frame, &rig, &calib).unwrap();
    assert!((fm.pooled_mean_mm.unwrap() - 1.75).abs() <= 0.01, "{:?}", fm.pooled_mean_mm);
    assert!(fm.mean_ovality_pct.unwrap() < 0.5);
    assert!(fm.flags.is_empty(), "{:?}", fm.flags);
    assert!(!fm.extrapolated);

    // the three views agree within two pixels' worth of millimetres
    let scales = s.true_scales();
    let means = Projection::ALL.map(|p| fm.projection_mean(p).unwrap());
    let spread =
        means.iter().copied().fold(f64::NEG_INFINITY, f64::max) - means.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(spread <= 2.0 * scales.main.min(scales.upper).min(scales.lower), "{means:?}");
}

#[test]
fn blank_frame_is_sparse_without_diameters() {
    let rig = rig_for(1.75);
    let calib = calibrate(&rig, 1.75, &CALIBRATION_DISTANCES);
    let blank = Frame::filled(640, 480, 200, 3, 1.0);
    let fm = measure_frame(&blank, &rig, &calib).unwrap();
    assert!(fm.flags.contains(&Flag::SparseData));
    assert_eq!(fm.pooled_mean_mm, None);
    assert!(fm.slices.iter().all(|s| Projection::ALL.iter().all(|&p| s.diameter(p).is_none())));
    assert_eq!(fm.sparse.len(), 3);
}

#[test]
fn held_out_distance_is_predicted() {
    let rig = rig_for(1.75);
    let calib = calibrate(&rig, 1.75, &[45.0, 50.0, 55.0]);
    let held_out = scene(1.75, 52.0);
    let (frame, truth) = render_frame(&held_out, 0).unwrap();
    let fm = measure_frame(&frame, &rig, &calib).unwrap();
    let x = fm.separation_px.unwrap();
    assert!((x - truth.separation_px.unwrap()).abs() < 0.5);
    let truths = held_out.true_scales();
    for p in Projection::ALL {
        let est = scale_for(calib.model(p), x);
        assert!(!est.extrapolated);
        assert!((est.distance_mm - 52.0).abs() / 52.0 < 0.02, "{p}: {}", est.distance_mm);
        let want = *truths.get(p);
        assert!((est.scale_mm_per_px - want).abs() / want < 0.02, "{p}: {} vs {want}", est.scale_mm_per_px);
    }
}

#[test]
fn far_distance_is_flagged_as_extrapolated() {
    let rig = rig_for(1.75);
    let calib = calibrate(&rig, 1.75, &CALIBRATION_DISTANCES);
    let (frame, _) = render_frame(&scene(1.75, 56.0), 0).unwrap();
    assert!(measure_frame(&frame, &rig, &calib).unwrap().extrapolated);
}

#[test]
fn pit_shows_in_exactly_one_patch_band() {
    let rig = rig_for(1.75);
    let calib = calibrate(&rig, 1.75, &CALIBRATION_DISTANCES);
    let pit = SurfacePit { frame: 0, view: Projection::Upper, column: 320.0, across: 0.0, radius_px: 6.0, depth: 50.0 };
    let pitted = SynthScene { texture_amplitude: 0.0, pits: vec![pit], ..scene(1.75, 50.0) };
    let clean = SynthScene { pits: Vec::new(), ..pitted.clone() };
    let a = measure_frame(&render_frame(&pitted, 0).unwrap().0, &rig, &calib).unwrap().patch.unwrap();
    let b = measure_frame(&render_frame(&clean, 0).unwrap().0, &rig, &calib).unwrap().patch.unwrap();
    assert_eq!(a.rows(), 3 * BAND_SAMPLES);

    // bands are stacked upper, main, lower
    let mut changed = [0usize; 3];
    for c in 0..a.columns() {
        for r in 0..a.rows() {
            if (a.map.get(c, r) - b.map.get(c, r)).abs() > 10.0 {
                changed[r / BAND_SAMPLES] += 1;
            }
        }
    }
    assert!(changed[0] > 0, "{changed:?}");
    assert_eq!(changed[1..], [0, 0], "{changed:?}");
}

#[test]
fn rendered_sequence_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let s = SynthScene { noise_sigma: 2.0, ..scene(1.75, 50.0) };
    let truth = render_sequence(&s, 12, dir.path()).unwrap();
    let stored: GroundTruth =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ground_truth.json")).unwrap()).unwrap();
    assert_eq!(stored, truth);

    let paths = scan_sequence(dir.path()).unwrap();
    assert_eq!(paths.len(), 12);
    let rig = rig_for(1.75);
    let calib = calibrate(&rig, 1.75, &CALIBRATION_DISTANCES);
    let measured: Vec<_> = paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let frame = load_frame(p, i as u64, 1.0).unwrap();
            assert_eq!(frame, render_frame(&s, i as u64).unwrap().0);
            measure_frame(&frame, &rig, &calib).unwrap()
        })
        .collect();

    let log = build_log(measured, rig.feed_rate_mm_s, rig.period_s).unwrap();
    let rows = log.rows();
    assert_eq!(rows.last().unwrap().length_mm, 110.0);
    // ten patches warm the baseline, the rest are scored
    assert!(rows[..10].iter().all(|r| r.anomaly_score.is_none()));
    assert!(rows[10..].iter().all(|r| r.anomaly_score.is_some()));

    let mut csv = Vec::new();
    write_log_csv(&rows, &mut csv).unwrap();
    let back = read_log_csv(csv.as_slice()).unwrap();
    assert_eq!(back.len(), rows.len());
    for (a, b) in back.iter().zip(&rows) {
        assert_eq!(a.frame, b.frame);
        assert!((a.d_mean_mm.unwrap() - b.d_mean_mm.unwrap()).abs() <= 5e-7);
    }
}

#[test]
fn stepped_profile_flags_match_truth_frames() {
    let rig = rig_for(1.75);
    let calib = calibrate(&rig, 1.75, &CALIBRATION_DISTANCES);
    let s = SynthScene {
        profile: vec![
            filagauge::synth::ProfileSegment::circular(0, 1.75),
            filagauge::synth::ProfileSegment::circular(4, 1.65),
            filagauge::synth::ProfileSegment::circular(9, 1.75),
        ],
        ..scene(1.75, 50.0)
    };
    let log = build_log(measure_scene(&s, 14, &rig, &calib), 10.0, 1.0).unwrap();
    assert_eq!(log.defects.len(), 1);
    let d = &log.defects[0];
    assert_eq!((d.reason, d.start_mm, d.end_mm), (Flag::UnderTolerance, 40.0, 80.0));
}
