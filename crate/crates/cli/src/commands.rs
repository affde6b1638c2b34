//! Implementations of the six subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::hint::black_box;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use srtrack_core::geometry::{rotated_iou_3d, srts as srts_score, OrientedBox3D, SrtsParams};
use srtrack_core::kitti::{
    annotations_from_records, read_calibration, read_labels, read_point_cloud,
    records_from_annotations, write_calibration, write_labels, LabelFlavor,
};
use srtrack_core::lmb::{FilterConfig, Label, LmbFilter};
use srtrack_core::metrics::{average_precision, clear_mot, Annotation, FrameAnnotations, Matcher};
use srtrack_core::sim::{
    annotations_to_measurements, generate, measurements_to_annotations, ScenarioConfig,
};
use srtrack_core::voxel::{
    paint_semantics, voxelize as voxelize_cloud, write_svxl, Calibration, FeatureMode, GridSpec,
    SemanticMap, VoxelizeOptions,
};

use crate::manifest::{write_atomic, RunManifest, StageClock};
use crate::{
    BenchArgs, CliError, EvalArgs, EvalModeArg, FlavorArg, MatcherArg, MetricArg, ModeArg,
    SimulateArgs, SrtsArgs, TrackArgs, VoxelizeArgs,
};

/// Parses `x,y,z,l,w,h,yaw` into an oriented box.
fn parse_box(text: &str) -> Result<OrientedBox3D, CliError> {
    let fields: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Input(format!("bad box '{text}': {e}")))?;
    if fields.len() != 7 {
        return Err(CliError::Input(format!(
            "bad box '{text}': expected 7 comma-separated values, got {}",
            fields.len()
        )));
    }
    Ok(OrientedBox3D::new(
        [fields[0], fields[1], fields[2]],
        [fields[3], fields[4], fields[5]],
        fields[6],
    )?)
}

/// Loads a JSON config file, or the type's defaults when no path is given.
fn load_json_or_default<T: serde::de::DeserializeOwned + Default>(
    path: Option<&Path>,
) -> Result<T, CliError> {
    match path {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
        }
        None => Ok(T::default()),
    }
}

fn load_calibration(path: Option<&Path>) -> Result<Calibration, CliError> {
    match path {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            Ok(read_calibration(&text)?)
        }
        None => Ok(Calibration::sensor_default()),
    }
}

fn read_annotation_file(
    path: &Path,
    flavor: LabelFlavor,
    calib: &Calibration,
) -> Result<Vec<FrameAnnotations>, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let records = read_labels(&text, flavor)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(annotations_from_records(&records, calib))
}

/// Pads missing frames with empty annotation sets so sequences align.
fn densify(frames: Vec<FrameAnnotations>, num_frames: usize) -> Vec<FrameAnnotations> {
    let mut out: Vec<FrameAnnotations> = (0..num_frames)
        .map(|frame| FrameAnnotations {
            frame,
            objects: Vec::new(),
        })
        .collect();
    for fa in frames {
        if fa.frame >= out.len() {
            out.resize_with(fa.frame + 1, || FrameAnnotations {
                frame: 0,
                objects: Vec::new(),
            });
            for (i, slot) in out.iter_mut().enumerate() {
                slot.frame = i;
            }
        }
        let frame = fa.frame;
        out[frame] = fa;
    }
    out
}

pub fn voxelize(args: VoxelizeArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("voxelize");
    let mut clock = StageClock::start();

    let cloud_bytes = fs::read(&args.cloud)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.cloud.display())))?;
    let cloud = read_point_cloud(&cloud_bytes)?;
    let calib_text = fs::read_to_string(&args.calib)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.calib.display())))?;
    let calib = read_calibration(&calib_text)?;
    let spec: GridSpec = load_json_or_default(args.grid.as_deref())?;
    let mode = match args.mode {
        ModeArg::Occupancy => FeatureMode::Occupancy,
        ModeArg::Intensity => FeatureMode::Intensity,
        ModeArg::Semantic => FeatureMode::Semantic,
    };
    let labels = if mode == FeatureMode::Semantic {
        let semantic = args.semantic.as_ref().ok_or_else(|| {
            CliError::Input("semantic mode needs --semantic <png>".to_string())
        })?;
        let png = fs::read(semantic)
            .map_err(|e| CliError::Input(format!("{}: {e}", semantic.display())))?;
        let map = SemanticMap::from_png_bytes(&png, args.num_classes)?;
        Some(paint_semantics(&cloud, &map, &calib))
    } else {
        None
    };
    clock.lap(&mut manifest, "read");

    let opts = VoxelizeOptions {
        mode,
        num_classes: args.num_classes,
        ..VoxelizeOptions::default()
    };
    let grid = voxelize_cloud(&cloud, labels.as_deref(), &spec, &opts)?;
    clock.lap(&mut manifest, "voxelize");

    let mut payload = Vec::new();
    write_svxl(&grid, &mut payload).map_err(CliError::from)?;
    write_atomic(&args.out, &payload)?;
    clock.lap(&mut manifest, "write");

    manifest.input("cloud", &args.cloud);
    manifest.input("calib", &args.calib);
    if let Some(semantic) = &args.semantic {
        manifest.input("semantic", semantic);
    }
    manifest.output("grid", &args.out);
    manifest.config = json!({
        "grid": spec,
        "mode": format!("{:?}", mode).to_lowercase(),
        "num_classes": args.num_classes,
        "unlabeled_as_occupied": opts.unlabeled_as_occupied,
    });
    let manifest_path = args
        .manifest
        .unwrap_or_else(|| sibling_manifest(&args.out));
    manifest.write(&manifest_path)?;

    let [nx, ny, nz] = grid.spec.dims;
    println!(
        "voxelized {} points into {nx}x{ny}x{nz} grid, {} occupied cells -> {}",
        cloud.len(),
        grid.occupied_cells(),
        args.out.display()
    );
    Ok(())
}

fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub fn srts(args: SrtsArgs) -> Result<(), CliError> {
    let box_a = parse_box(&args.box_a)?;
    let box_b = parse_box(&args.box_b)?;
    let params: SrtsParams = load_json_or_default(args.params.as_deref())?;
    params.validate()?;
    let value = match args.metric {
        MetricArg::Srts => srts_score(&box_a, &box_b, &params),
        MetricArg::Iou => rotated_iou_3d(&box_a, &box_b),
    };
    println!("{value:.6}");

    if let Some(path) = args.manifest {
        let mut manifest = RunManifest::new("srts");
        manifest.config = json!({
            "box_a": args.box_a,
            "box_b": args.box_b,
            "metric": format!("{:?}", args.metric).to_lowercase(),
            "params": params,
            "value": value,
        });
        manifest.write(&path)?;
    }
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("simulate");
    let mut clock = StageClock::start();

    let mut config: ScenarioConfig = load_json_or_default(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let scenario = generate(&config)?;
    clock.lap(&mut manifest, "generate");

    fs::create_dir_all(&args.out_dir)?;
    let calib = Calibration::sensor_default();

    let truth_path = args.out_dir.join("truth.txt");
    let truth_records = records_from_annotations(&scenario.truth, &calib);
    write_atomic(
        &truth_path,
        write_labels(&truth_records, LabelFlavor::Tracking)?.as_bytes(),
    )?;

    let detections_path = args.out_dir.join("detections.txt");
    let detection_frames = measurements_to_annotations(&scenario.measurements);
    let detection_records = records_from_annotations(&detection_frames, &calib);
    write_atomic(
        &detections_path,
        write_labels(&detection_records, LabelFlavor::Tracking)?.as_bytes(),
    )?;

    let calib_path = args.out_dir.join("calib.txt");
    write_atomic(&calib_path, write_calibration(&calib).as_bytes())?;

    let config_path = args.out_dir.join("config.json");
    let mut config_text = serde_json::to_string_pretty(&config)?;
    config_text.push('\n');
    write_atomic(&config_path, config_text.as_bytes())?;
    clock.lap(&mut manifest, "write");

    if let Some(path) = &args.config {
        manifest.input("config", path);
    }
    manifest.output("truth", &truth_path);
    manifest.output("detections", &detections_path);
    manifest.output("calib", &calib_path);
    manifest.output("config", &config_path);
    manifest.seed = Some(config.seed);
    manifest.config = serde_json::to_value(&config)?;
    let manifest_path = args
        .manifest
        .unwrap_or_else(|| args.out_dir.join("manifest.json"));
    manifest.write(&manifest_path)?;

    let truth_boxes: usize = scenario.truth.iter().map(|fa| fa.objects.len()).sum();
    let detections: usize = scenario.measurements.iter().map(|ms| ms.len()).sum();
    println!(
        "simulated {} frames: {truth_boxes} truth boxes, {detections} detections -> {}",
        scenario.truth.len(),
        args.out_dir.display()
    );
    Ok(())
}

pub fn track(args: TrackArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("track");
    let mut clock = StageClock::start();

    let config: FilterConfig = load_json_or_default(args.config.as_deref())?;
    let calib = load_calibration(args.calib.as_deref())?;
    let detection_frames = read_annotation_file(&args.detections, LabelFlavor::Tracking, &calib)?;
    let measurements = annotations_to_measurements(&detection_frames, args.frames);
    clock.lap(&mut manifest, "read");

    let mut filter = LmbFilter::new(config.clone())?;
    // Labels carry (birth step, index); flatten them into stable sequential
    // ids so the output stream never reuses an id across distinct tracks.
    let mut ids: BTreeMap<Label, i64> = BTreeMap::new();
    let mut output = Vec::with_capacity(measurements.len());
    let mut extracted_total = 0usize;
    for (frame, frame_measurements) in measurements.iter().enumerate() {
        let tracks = filter.step(frame_measurements, args.dt)?;
        extracted_total += tracks.len();
        let objects = tracks
            .iter()
            .map(|t| {
                let next = ids.len() as i64;
                let id = *ids.entry(t.label).or_insert(next);
                Annotation {
                    track_id: Some(id),
                    class: t.class.clone(),
                    bbox: t.bbox(),
                    score: Some(t.existence),
                }
            })
            .collect();
        output.push(FrameAnnotations { frame, objects });
    }
    clock.lap(&mut manifest, "track");

    let records = records_from_annotations(&output, &calib);
    write_atomic(
        &args.out,
        write_labels(&records, LabelFlavor::Tracking)?.as_bytes(),
    )?;
    clock.lap(&mut manifest, "write");

    manifest.input("detections", &args.detections);
    if let Some(calib_path) = &args.calib {
        manifest.input("calib", calib_path);
    }
    manifest.output("tracks", &args.out);
    manifest.config = json!({
        "filter": config,
        "dt": args.dt,
        "frames": args.frames,
    });
    let manifest_path = args
        .manifest
        .unwrap_or_else(|| sibling_manifest(&args.out));
    manifest.write(&manifest_path)?;

    println!(
        "tracked {} frames: {} track boxes, {} distinct tracks -> {}",
        measurements.len(),
        extracted_total,
        ids.len(),
        args.out.display()
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("eval");
    let mut clock = StageClock::start();

    let calib = load_calibration(args.calib.as_deref())?;
    let flavor = match args.flavor {
        FlavorArg::Object => LabelFlavor::Object,
        FlavorArg::Tracking => LabelFlavor::Tracking,
    };
    let gt = read_annotation_file(&args.gt, flavor, &calib)?;
    let hyp = read_annotation_file(&args.hyp, flavor, &calib)?;
    let span = gt
        .iter()
        .chain(hyp.iter())
        .map(|fa| fa.frame + 1)
        .max()
        .unwrap_or(0);
    let gt = densify(gt, span);
    let hyp = densify(hyp, span);
    clock.lap(&mut manifest, "read");

    let params: SrtsParams = load_json_or_default(args.params.as_deref())?;
    let matcher = match args.matcher {
        MatcherArg::Iou => Matcher::Iou,
        MatcherArg::Srts => Matcher::Srts(params),
    };

    let (report_json, report_text) = match args.mode {
        EvalModeArg::Mot => {
            let report = clear_mot(&gt, &hyp, &matcher, args.threshold)?;
            (serde_json::to_value(&report)?, report.to_string())
        }
        EvalModeArg::Ap => {
            let report = average_precision(&hyp, &gt, &matcher, args.threshold)?;
            if let Some(curve_path) = &args.curve {
                let mut csv = String::from("score,recall,precision\n");
                for p in &report.curve {
                    csv.push_str(&format!("{},{},{}\n", p.score, p.recall, p.precision));
                }
                write_atomic(curve_path, csv.as_bytes())?;
            }
            let text = format!(
                "AP                 {:>10.4}\ncurve points       {:>10}",
                report.ap,
                report.curve.len()
            );
            (serde_json::to_value(&report)?, text)
        }
    };
    clock.lap(&mut manifest, "evaluate");

    if let Some(out) = &args.out {
        let mut text = serde_json::to_string_pretty(&report_json)?;
        text.push('\n');
        write_atomic(out, text.as_bytes())?;
        println!("{report_text}");
    } else {
        println!("{report_json}");
        println!();
        println!("{report_text}");
    }

    manifest.input("gt", &args.gt);
    manifest.input("hyp", &args.hyp);
    if let Some(calib_path) = &args.calib {
        manifest.input("calib", calib_path);
    }
    if let Some(out) = &args.out {
        manifest.output("report", out);
    }
    if let Some(curve) = &args.curve {
        manifest.output("curve", curve);
    }
    manifest.config = json!({
        "mode": format!("{:?}", args.mode).to_lowercase(),
        "matcher": format!("{:?}", args.matcher).to_lowercase(),
        "threshold": args.threshold,
        "params": params,
        "flavor": format!("{:?}", args.flavor).to_lowercase(),
    });
    let manifest_path = args
        .manifest
        .or_else(|| args.out.as_ref().map(|out| sibling_manifest(out)));
    if let Some(path) = manifest_path {
        manifest.write(&path)?;
    }
    Ok(())
}

/// Draws a box pair with correlated centers so overlaps are common.
fn random_pair(rng: &mut ChaCha8Rng) -> (OrientedBox3D, OrientedBox3D) {
    let mut center = [0.0f64; 3];
    for c in &mut center {
        *c = rng.random_range(-10.0..10.0);
    }
    let mut offset = [0.0f64; 3];
    for o in &mut offset {
        *o = rng.random_range(-3.0..3.0);
    }
    let mut size = || {
        [
            rng.random_range(0.5..4.0),
            rng.random_range(0.5..4.0),
            rng.random_range(0.5..4.0),
        ]
    };
    let size_a = size();
    let size_b = size();
    let yaw_a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let yaw_b = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let a = OrientedBox3D::new(center, size_a, yaw_a).expect("valid box");
    let b = OrientedBox3D::new(
        [
            center[0] + offset[0],
            center[1] + offset[1],
            center[2] + offset[2],
        ],
        size_b,
        yaw_b,
    )
    .expect("valid box");
    (a, b)
}

pub fn bench(args: BenchArgs) -> Result<(), CliError> {
    if args.pairs == 0 {
        return Err(CliError::Input("--pairs must be positive".to_string()));
    }
    let mut manifest = RunManifest::new("bench");
    let params = SrtsParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);

    // Time in chunks over pregenerated pairs so generation cost stays out of
    // the per-metric figures.
    let chunk_len = 10_000.min(args.pairs);
    let mut remaining = args.pairs;
    let mut srts_ns = 0u128;
    let mut iou_ns = 0u128;
    let mut srts_sum = 0.0f64;
    let mut iou_sum = 0.0f64;
    let mut pairs = Vec::with_capacity(chunk_len);
    while remaining > 0 {
        let n = chunk_len.min(remaining);
        remaining -= n;
        pairs.clear();
        for _ in 0..n {
            pairs.push(random_pair(&mut rng));
        }

        let start = Instant::now();
        for (a, b) in &pairs {
            srts_sum += srts_score(black_box(a), black_box(b), &params);
        }
        srts_ns += start.elapsed().as_nanos();

        let start = Instant::now();
        for (a, b) in &pairs {
            iou_sum += rotated_iou_3d(black_box(a), black_box(b));
        }
        iou_ns += start.elapsed().as_nanos();
    }
    black_box((srts_sum, iou_sum));

    let srts_mean = srts_ns as f64 / args.pairs as f64;
    let iou_mean = iou_ns as f64 / args.pairs as f64;
    let speedup = iou_mean / srts_mean;

    let csv = format!(
        "metric,pairs,total_ns,mean_ns_per_pair,speedup_vs_iou,checksum\n\
         srts,{pairs},{srts_ns},{srts_mean:.3},{speedup:.4},{srts_sum:.6}\n\
         rotated_iou_3d,{pairs},{iou_ns},{iou_mean:.3},1.0000,{iou_sum:.6}\n",
        pairs = args.pairs,
    );
    write_atomic(&args.out, csv.as_bytes())?;

    manifest.output("csv", &args.out);
    manifest.seed = Some(args.seed);
    manifest.config = json!({ "pairs": args.pairs, "seed": args.seed });
    manifest
        .timings_ms
        .insert("srts", srts_ns as f64 / 1e6);
    manifest
        .timings_ms
        .insert("rotated_iou_3d", iou_ns as f64 / 1e6);
    let manifest_path = args
        .manifest
        .unwrap_or_else(|| sibling_manifest(&args.out));
    manifest.write(&manifest_path)?;

    println!("srts            {srts_mean:>10.1} ns/pair");
    println!("rotated_iou_3d  {iou_mean:>10.1} ns/pair");
    println!("speedup         {speedup:>10.2}x -> {}", args.out.display());
    Ok(())
}
