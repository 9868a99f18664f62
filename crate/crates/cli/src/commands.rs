use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use filagauge::acquisition::{load_frame, scan_sequence};
use filagauge::calibration::CalibrationSample;
use filagauge::measurement::{
    build_log, calibration_samples, histogram, measure_frame, read_log_csv, write_log_csv, DiameterStats, LogRow,
};
use filagauge::spool::{speed_schedule, total_length, SpoolSpec};
use filagauge::synth::{default_rig, render_sequence, SynthError, SynthScene};
use filagauge::{CalibrationSet, PerProjection, Projection, RigConfig};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::{CalibrateArgs, MeasureArgs, ReportArgs, SpoolArgs, SynthArgs};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_DEFECTS: u8 = 3;

/// An error together with the process exit code it maps to.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

trait Classify<T> {
    fn or_exit<C: Display + Send + Sync + 'static>(self, code: u8, context: C) -> Result<T, Failure>;

    fn config_err<C: Display + Send + Sync + 'static>(self, context: C) -> Result<T, Failure>
    where
        Self: Sized,
    {
        self.or_exit(EXIT_CONFIG, context)
    }

    fn io_err<C: Display + Send + Sync + 'static>(self, context: C) -> Result<T, Failure>
    where
        Self: Sized,
    {
        self.or_exit(EXIT_IO, context)
    }
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn or_exit<C: Display + Send + Sync + 'static>(self, code: u8, context: C) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into().context(context) })
    }
}

fn fail<T>(code: u8, error: anyhow::Error) -> Result<T, Failure> {
    Err(Failure { code, error })
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

/// Provenance of one measurement run, written before any frame is read.
#[derive(Debug, Serialize)]
struct RunManifest {
    config: PathBuf,
    input: PathBuf,
    output: PathBuf,
    calibration: PathBuf,
    version: &'static str,
    timestamp: String,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).io_err(format!("writing {}", path.display()))
}

pub fn measure(args: &MeasureArgs) -> Result<u8, Failure> {
    let rig = RigConfig::load(&args.config).config_err(format!("rig config {}", args.config.display()))?;
    let calib = CalibrationSet::load(&args.calibration).config_err("calibration")?;
    fs::create_dir_all(&args.out).io_err(format!("creating {}", args.out.display()))?;
    let manifest = RunManifest {
        config: absolute(&args.config),
        input: absolute(&args.input),
        output: absolute(&args.out),
        calibration: absolute(&args.calibration),
        version: env!("CARGO_PKG_VERSION"),
        timestamp: chrono::Utc::now().to_rfc3339(),
    };
    write_file(&args.out.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("manifest") + "\n")?;

    let paths = scan_sequence(&args.input).io_err(format!("frame directory {}", args.input.display()))?;
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(args.workers.unwrap_or(0)).build().config_err("worker pool")?;
    info!("measuring {} frames", paths.len());
    // indexed parallel collect keeps frame order regardless of completion order
    let results: Vec<_> = pool.install(|| {
        paths
            .par_iter()
            .enumerate()
            .map(|(i, path)| match load_frame(path, i as u64, rig.period_s) {
                Ok(frame) => Some(measure_frame(&frame, &rig, &calib)),
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    None
                }
            })
            .collect()
    });
    let measurements = results
        .into_iter()
        .flatten()
        .collect::<Result<Vec<_>, _>>()
        .config_err("rig config does not fit the frames")?;

    if args.patches {
        let dir = args.out.join("patches");
        fs::create_dir_all(&dir).io_err(format!("creating {}", dir.display()))?;
        for patch in measurements.iter().filter_map(|m| m.patch.as_ref()) {
            let path = dir.join(format!("patch_{:05}.pgm", patch.index));
            patch.write_pgm(&path).io_err(format!("writing {}", path.display()))?;
        }
    }

    let log = build_log(measurements, rig.feed_rate_mm_s, rig.period_s).config_err("measurement log")?;
    let mut csv = Vec::new();
    write_log_csv(&log.rows(), &mut csv).io_err("formatting log")?;
    write_file(&args.out.join("log.csv"), csv)?;
    write_file(&args.out.join("defects.json"), log.defects_json() + "\n")?;
    info!("{} frames logged, {} defect intervals", log.entries.len(), log.defects.len());
    for d in &log.defects {
        info!("{} over [{:.1}, {:.1}] mm", d.reason, d.start_mm, d.end_mm);
    }
    Ok(if log.defects.is_empty() { EXIT_OK } else { EXIT_DEFECTS })
}

/// One `--sample` argument.
#[derive(Debug, Clone, PartialEq)]
struct SampleSpec {
    dir: PathBuf,
    diameter_mm: f64,
    distance_mm: Option<f64>,
}

fn parse_sample(text: &str) -> anyhow::Result<SampleSpec> {
    let number = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite() && *v > 0.0);
    let parts: Vec<&str> = text.rsplitn(3, ':').collect();
    if let [distance, diameter, dir] = parts[..] {
        if let (Some(d), Some(l)) = (number(diameter), number(distance)) {
            return Ok(SampleSpec { dir: dir.into(), diameter_mm: d, distance_mm: Some(l) });
        }
    }
    let (dir, diameter) = text.rsplit_once(':').ok_or_else(|| anyhow!("expected DIR:DIAMETER[:DISTANCE]"))?;
    let diameter_mm = number(diameter).ok_or_else(|| anyhow!("diameter {diameter:?} is not a positive number"))?;
    Ok(SampleSpec { dir: dir.into(), diameter_mm, distance_mm: None })
}

fn sample_distance(spec: &SampleSpec) -> Result<f64, Failure> {
    if let Some(l) = spec.distance_mm {
        return Ok(l);
    }
    let path = spec.dir.join("scene.json");
    let text = fs::read_to_string(&path).config_err(format!(
        "no distance given for {} and no readable {}",
        spec.dir.display(),
        path.display()
    ))?;
    let scene: SynthScene = serde_json::from_str(&text).config_err(format!("parsing {}", path.display()))?;
    Ok(scene.distance_mm)
}

pub fn calibrate(args: &CalibrateArgs) -> Result<u8, Failure> {
    let rig = RigConfig::load(&args.config).config_err(format!("rig config {}", args.config.display()))?;
    let specs = args
        .samples
        .iter()
        .map(|s| parse_sample(s).with_context(|| format!("sample {s:?}")))
        .collect::<anyhow::Result<Vec<_>>>()
        .config_err("calibration samples")?;
    if specs.len() < 2 {
        return fail(EXIT_CONFIG, anyhow!("need at least 2 sample sets, got {}", specs.len()));
    }

    let mut samples: PerProjection<Vec<CalibrationSample>> = PerProjection::default();
    for spec in &specs {
        let distance = sample_distance(spec)?;
        let paths = scan_sequence(&spec.dir).io_err(format!("sample directory {}", spec.dir.display()))?;
        let frames = paths
            .iter()
            .enumerate()
            .map(|(i, p)| load_frame(p, i as u64, rig.period_s))
            .collect::<Result<Vec<_>, _>>()
            .io_err(format!("reading {}", spec.dir.display()))?;
        let observed = calibration_samples(&frames, &rig, spec.diameter_mm, distance)
            .config_err(format!("sample set {}", spec.dir.display()))?;
        info!("{}: separation {:.3} px at {distance} mm", spec.dir.display(), observed.main.x);
        for (p, sample) in observed.iter() {
            samples.get_mut(p).push(*sample);
        }
    }

    let set = CalibrationSet::fit(&samples).config_err("fitting calibration")?;
    set.save(&args.out).io_err("saving calibration")?;
    let mut stdout = std::io::stdout().lock();
    for p in Projection::ALL {
        let m = set.model(p);
        let _ = writeln!(
            stdout,
            "{p:<6} residual_rms {:.3e} mm/px  x range [{:.3}, {:.3}] px",
            m.residual_rms, m.valid_x_range[0], m.valid_x_range[1]
        );
    }
    if set.max_residual_rms() > args.max_residual {
        return fail(
            EXIT_CONFIG,
            anyhow!("residual RMS {:.3e} mm/px exceeds {:.3e}", set.max_residual_rms(), args.max_residual),
        );
    }
    Ok(EXIT_OK)
}

pub fn synth(args: &SynthArgs) -> Result<u8, Failure> {
    let mut scene = match &args.scene {
        Some(path) => {
            let text = fs::read_to_string(path).config_err(format!("scene {}", path.display()))?;
            serde_json::from_str::<SynthScene>(&text).config_err(format!("parsing {}", path.display()))?
        }
        None => SynthScene::default(),
    };
    if let Some(seed) = args.seed {
        scene.seed = seed;
    }
    let code = |e: &SynthError| if matches!(e, SynthError::IoFailure(_)) { EXIT_IO } else { EXIT_CONFIG };
    render_sequence(&scene, args.count, &args.out).map_err(|e| Failure { code: code(&e), error: e.into() })?;
    write_file(&args.out.join("scene.json"), serde_json::to_string_pretty(&scene).expect("scene") + "\n")?;
    let rig = RigConfig { nominal_diameter_mm: scene.nominal_diameter_mm, period_s: scene.period_s, ..default_rig() };
    write_file(&args.out.join("rig.json"), serde_json::to_string_pretty(&rig).expect("rig") + "\n")?;
    info!("wrote {} frames to {}", args.count, args.out.display());
    Ok(EXIT_OK)
}

pub fn spool(args: &SpoolArgs) -> Result<u8, Failure> {
    let spec = SpoolSpec::new(args.radius_mm, args.turns, args.layers, args.diameter_mm).config_err("spool")?;
    let steps = speed_schedule(&spec, args.feed_mm_s).config_err("spool")?;
    let mut out = String::new();
    out += &format!("total length: {:.3} mm\n", total_length(&spec));
    out += &format!("feed rate: {} mm/s\n", args.feed_mm_s);
    out += "layer  length_mm  rev_per_s  duration_s  switch_time_s\n";
    for s in &steps {
        out += &format!(
            "{:>5}  {:>9.3}  {:>9.5}  {:>10.3}  {:>13.3}\n",
            s.layer, s.length_mm, s.rev_per_s, s.duration_s, s.switch_time_s
        );
    }
    print!("{out}");
    Ok(EXIT_OK)
}

fn column(rows: &[LogRow], pick: impl Fn(&LogRow) -> Option<f64>) -> Vec<f64> {
    rows.iter().filter_map(pick).collect()
}

pub fn report(args: &ReportArgs) -> Result<u8, Failure> {
    let (nominal, tolerance) = match &args.config {
        Some(path) => {
            let rig = RigConfig::load(path).config_err(format!("rig config {}", path.display()))?;
            (rig.nominal_diameter_mm, rig.tolerance_mm)
        }
        None => (args.nominal, args.tolerance),
    };
    let file = fs::File::open(&args.input).io_err(format!("opening {}", args.input.display()))?;
    let rows = read_log_csv(file).config_err(format!("log {}", args.input.display()))?;
    if rows.is_empty() {
        return fail(EXIT_CONFIG, anyhow!("log {} has no rows", args.input.display()));
    }

    let series: Vec<(&str, Vec<f64>)> = Projection::ALL
        .iter()
        .map(|&p| (p.name(), column(&rows, |r| r.diameter(p))))
        .chain(std::iter::once(("pooled", column(&rows, |r| r.d_mean_mm))))
        .collect();
    let mut out = format!("frames: {}  nominal {nominal} mm  tolerance ±{tolerance} mm\n", rows.len());
    out += "view    count   mean_mm    std_mm    min_mm    max_mm  in_tol_pct\n";
    for (name, values) in &series {
        match DiameterStats::of(values, nominal, tolerance) {
            Some(s) => {
                out += &format!(
                    "{name:<6} {:>6}  {:>8.4}  {:>8.5}  {:>8.4}  {:>8.4}  {:>10.2}\n",
                    s.count, s.mean_mm, s.std_mm, s.min_mm, s.max_mm, s.in_tolerance_pct
                )
            }
            None => out += &format!("{name:<6} {:>6}\n", 0),
        }
    }
    print!("{out}");

    if let Some(dir) = &args.out {
        let all: Vec<f64> = series.iter().flat_map(|(_, v)| v.iter().copied()).collect();
        let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if all.is_empty() {
            (nominal - tolerance, nominal + tolerance)
        } else if hi > lo {
            (lo, hi)
        } else {
            (lo - tolerance, hi + tolerance)
        };
        let bins = args.bins.max(1);
        let width = (hi - lo) / bins as f64;
        fs::create_dir_all(dir).io_err(format!("creating {}", dir.display()))?;
        let path = dir.join("histogram.csv");
        let mut w = csv::Writer::from_path(&path).io_err(format!("creating {}", path.display()))?;
        w.write_record(["view", "bin_start_mm", "bin_end_mm", "count"]).io_err("writing histogram")?;
        for (name, values) in &series {
            for (i, count) in histogram(values, lo, hi, bins).into_iter().enumerate() {
                let start = lo + width * i as f64;
                w.write_record([
                    name.to_string(),
                    format!("{start:.6}"),
                    format!("{:.6}", start + width),
                    count.to_string(),
                ])
                .io_err("writing histogram")?;
            }
        }
        w.flush().io_err("writing histogram")?;
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_specs() {
        assert_eq!(
            parse_sample("cal/a:1.75:50").unwrap(),
            SampleSpec { dir: "cal/a".into(), diameter_mm: 1.75, distance_mm: Some(50.0) }
        );
        assert_eq!(
            parse_sample("cal/a:3.0").unwrap(),
            SampleSpec { dir: "cal/a".into(), diameter_mm: 3.0, distance_mm: None }
        );
        assert!(parse_sample("cal/a").is_err());
        assert!(parse_sample("cal/a:-1").is_err());
    }
}
