//! Runs the tracker over synthetic scenarios and reports CLEAR-MOT scores.
//!
//! Usage: `cargo run --example track_demo [seeds]`

use std::collections::BTreeMap;

use srtrack_core::geometry::SrtsParams;
use srtrack_core::lmb::{FilterConfig, Label, LmbFilter};
use srtrack_core::metrics::{clear_mot, Annotation, FrameAnnotations, Matcher};
use srtrack_core::sim::{generate, ScenarioConfig};

fn main() {
    let seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(20);
    let mut motas = Vec::new();
    let mut card_errors = Vec::new();
    for seed in 0..seeds {
        let sc = ScenarioConfig {
            seed,
            ..Default::default()
        };
        let scenario = generate(&sc).expect("default scenario is valid");
        let mut filter = LmbFilter::new(FilterConfig::default()).expect("default config");
        // labels are (birth step, index) pairs; flatten to sequential ids so
        // distinct tracks never share a reported id
        let mut ids: BTreeMap<Label, i64> = BTreeMap::new();
        let mut hyp = Vec::new();
        let mut card_err = 0.0;
        for (frame, ms) in scenario.measurements.iter().enumerate() {
            let tracks = filter.step(ms, sc.dt).expect("step");
            card_err +=
                (tracks.len() as f64 - scenario.truth[frame].objects.len() as f64).abs();
            hyp.push(FrameAnnotations {
                frame,
                objects: tracks
                    .iter()
                    .map(|t| {
                        let next = ids.len() as i64;
                        Annotation {
                            track_id: Some(*ids.entry(t.label).or_insert(next)),
                            class: t.class.clone(),
                            bbox: t.bbox(),
                            score: Some(t.existence),
                        }
                    })
                    .collect(),
            });
        }
        card_err /= scenario.measurements.len() as f64;
        let report = clear_mot(
            &scenario.truth,
            &hyp,
            &Matcher::Srts(SrtsParams::default()),
            0.7,
        )
        .expect("aligned sequences");
        println!(
            "seed {seed:2}: MOTA {:+.3}  MOTP {:.3}  card_err {:.3}  fp {:3}  miss {:3}  idsw {:2}",
            report.mota, report.motp, card_err, report.false_positives, report.misses,
            report.id_switches
        );
        motas.push(report.mota);
        card_errors.push(card_err);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "mean over {seeds} seeds: MOTA {:.4}  card_err {:.4}",
        mean(&motas),
        mean(&card_errors)
    );
}
