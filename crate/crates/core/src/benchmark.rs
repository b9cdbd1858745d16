//! RTF, latency-to-first-frame and MAC accounting across model variants.
//!
//! Timed passes run on the calling thread only; nothing here spawns
//! threads. MAC counts come from a separate instrumented pass so counting
//! never perturbs the clock.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::config::ModelConfig;
use crate::decoder::{DiscardFrames, SinkError};
use crate::error::{Error, Result};
use crate::features::{synth_utterance, ContextTree, SpectrumFrame, FRAMES_PER_SECOND};
use crate::model::{Model, ModelKind, SynthCost};
use crate::weights::weights_init;

pub const CSV_HEADER: &str = "model,audio_s,synth_s,rtf,first_frame_ms,per_frame_macs,encoder_macs,repeats";

/// A timed sample must span at least this many timer ticks.
const MIN_TICKS: u32 = 1000;
/// Upper bound on back-to-back runs folded into one sample.
const MAX_BATCH: usize = 1 << 12;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub model: ModelKind,
    /// `L_f / 80`
    pub audio_seconds: f64,
    /// Median wall time of one synthesis.
    pub synth_seconds: f64,
    pub rtf: f64,
    pub first_frame_latency_ms: f64,
    pub per_frame_macs: u64,
    pub encoder_macs: u64,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub seed: u64,
    /// Samples per record; the reported time is their median.
    pub repeats: usize,
    /// Each sample is the fastest of this many runs taken in separate
    /// rounds, which filters out transient slowdowns from other load.
    pub best_of: usize,
    pub config: ModelConfig,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            repeats: 3,
            best_of: 3,
            config: ModelConfig::default(),
        }
    }
}

static RUNNING: AtomicBool = AtomicBool::new(false);

/// Held for the duration of a benchmark; a second concurrent run in the
/// same process is refused.
#[derive(Debug)]
pub struct BenchGuard(());

impl BenchGuard {
    pub fn acquire() -> Result<Self> {
        RUNNING
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map(|_| BenchGuard(()))
            .map_err(|_| Error::Bench("a benchmark is already running in this process".into()))
    }
}

impl Drop for BenchGuard {
    fn drop(&mut self) {
        RUNNING.store(false, Ordering::Release);
    }
}

/// Smallest observable step of the monotonic clock.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..64 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug)]
struct FirstFrame;

impl std::fmt::Display for FirstFrame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("stopped after first frame")
    }
}

impl std::error::Error for FirstFrame {}

/// Cold time from start of synthesis to the first emitted frame, in
/// milliseconds: all encoders plus one decode step (for the self-attention
/// baseline, the whole encoder stack plus one output frame).
pub fn first_frame_latency(model: &Model, tree: &ContextTree) -> Result<f64> {
    let start = Instant::now();
    let mut at = None;
    let mut sink = |_: usize, f: &SpectrumFrame| -> std::result::Result<(), SinkError> {
        std::hint::black_box(f);
        at = Some(start.elapsed());
        Err(Box::new(FirstFrame))
    };
    match model.synthesize(tree, &mut sink, None) {
        Err(Error::SinkAborted { emitted: 0, source }) if source.is::<FirstFrame>() => {}
        Err(e) => return Err(e),
        Ok(_) => {}
    }
    at.map(|d| d.as_secs_f64() * 1e3)
        .ok_or_else(|| Error::Bench("model emitted no frames".into()))
}

/// One full synthesis; returns (total, first frame) wall time.
fn timed_run(model: &Model, tree: &ContextTree) -> Result<(Duration, Duration)> {
    let start = Instant::now();
    let mut first = None;
    let mut sink = |_: usize, f: &SpectrumFrame| -> std::result::Result<(), SinkError> {
        std::hint::black_box(f);
        if first.is_none() {
            first = Some(start.elapsed());
        }
        Ok(())
    };
    model.synthesize(tree, &mut sink, None)?;
    let total = start.elapsed();
    Ok((total, first.unwrap_or(total)))
}

/// MAC counts for one synthesis, gathered outside any timed region.
pub fn instrumented_cost(model: &Model, tree: &ContextTree) -> Result<SynthCost> {
    let mut cost = SynthCost::default();
    model.synthesize(tree, &mut DiscardFrames, Some(&mut cost))?;
    Ok(cost)
}

/// Warm-up run plus batch sizing: samples too short for the clock fold
/// several back-to-back runs together. Fails if even the largest batch is
/// too short to resolve.
pub fn calibrate(model: &Model, tree: &ContextTree, resolution: Duration) -> Result<usize> {
    let (warm, _) = timed_run(model, tree)?;
    let floor = resolution * MIN_TICKS;
    let mut batch = 1usize;
    while warm * (batch as u32) < floor {
        batch *= 2;
        if batch > MAX_BATCH {
            return Err(Error::Bench(format!(
                "one run takes {warm:?}, below what a {resolution:?} timer can resolve"
            )));
        }
    }
    Ok(batch)
}

/// One timed sample: seconds per synthesis and seconds to first frame.
fn sample(model: &Model, tree: &ContextTree, batch: usize) -> Result<(f64, f64)> {
    let start = Instant::now();
    let mut first_sum = Duration::ZERO;
    for _ in 0..batch {
        let (_, f) = timed_run(model, tree)?;
        first_sum += f;
    }
    Ok((
        start.elapsed().as_secs_f64() / batch as f64,
        first_sum.as_secs_f64() / batch as f64,
    ))
}

fn check_repeats(repeats: usize) -> Result<()> {
    if repeats < 3 {
        return Err(Error::Bench(format!("repeats must be at least 3, got {repeats}")));
    }
    Ok(())
}

/// Median synthesis seconds and median first-frame milliseconds of
/// `model` on `tree`, after a warm-up.
pub fn measure(model: &Model, tree: &ContextTree, repeats: usize, resolution: Duration) -> Result<(f64, f64)> {
    check_repeats(repeats)?;
    let batch = calibrate(model, tree, resolution)?;
    let mut synth = Vec::with_capacity(repeats);
    let mut first = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let (s, f) = sample(model, tree, batch)?;
        synth.push(s);
        first.push(f);
    }
    Ok((median(&mut synth), median(&mut first) * 1e3))
}

/// Runs every model at every target length. One synthetic utterance per
/// length is shared by all models.
///
/// Runs are taken in `repeats * best_of` rounds that each visit every
/// (model, length) cell once, so drift in machine speed is shared by all
/// cells rather than landing on one model or one length.
pub fn run_bench(models: &[ModelKind], lengths: &[f64], opts: &BenchOptions) -> Result<Vec<BenchRecord>> {
    let _guard = BenchGuard::acquire()?;
    if models.is_empty() || lengths.is_empty() {
        return Err(Error::Bench("need at least one model and one length".into()));
    }
    if let Some(l) = lengths.iter().find(|&&l| !(l >= 1.0) || !l.is_finite()) {
        return Err(Error::Bench(format!("length {l} s is below the 1 s minimum")));
    }
    check_repeats(opts.repeats)?;
    if opts.best_of == 0 {
        return Err(Error::Bench("best_of must be at least 1".into()));
    }
    let weights = weights_init(opts.seed, &opts.config)?;
    let built: Vec<Model> = models
        .iter()
        .map(|&k| Model::build(k, &weights))
        .collect::<Result<_>>()?;
    let trees: Vec<ContextTree> = lengths
        .iter()
        .enumerate()
        .map(|(i, &s)| synth_utterance(opts.seed.wrapping_add(1 + i as u64), s))
        .collect::<Result<_>>()?;
    let resolution = timer_resolution();

    struct Cell<'a> {
        model: &'a Model,
        tree: &'a ContextTree,
        cost: SynthCost,
        batch: usize,
        runs: Vec<(f64, f64)>,
    }
    let rounds = opts.repeats * opts.best_of;
    let mut cells = Vec::with_capacity(built.len() * trees.len());
    for model in &built {
        for tree in &trees {
            cells.push(Cell {
                model,
                tree,
                cost: instrumented_cost(model, tree)?,
                batch: calibrate(model, tree, resolution)?,
                runs: Vec::with_capacity(rounds),
            });
        }
    }
    for _ in 0..rounds {
        for cell in cells.iter_mut() {
            cell.runs.push(sample(cell.model, cell.tree, cell.batch)?);
        }
    }
    Ok(cells
        .into_iter()
        .map(|cell| {
            let (mut synth, mut first): (Vec<f64>, Vec<f64>) = cell
                .runs
                .chunks(opts.best_of)
                .map(|group| {
                    let best = |f: fn(&(f64, f64)) -> f64| {
                        group.iter().map(f).fold(f64::INFINITY, f64::min)
                    };
                    (best(|r| r.0), best(|r| r.1))
                })
                .unzip();
            let audio_seconds = cell.tree.frame_count() as f64 / FRAMES_PER_SECOND;
            let synth_seconds = median(&mut synth);
            BenchRecord {
                model: cell.model.kind(),
                audio_seconds,
                synth_seconds,
                rtf: synth_seconds / audio_seconds,
                first_frame_latency_ms: median(&mut first) * 1e3,
                per_frame_macs: cell.cost.per_frame_macs(),
                encoder_macs: cell.cost.encoder.macs,
                repeats: opts.repeats,
            }
        })
        .collect())
}

#[derive(Serialize)]
struct CsvRow<'a> {
    model: &'a str,
    audio_s: f64,
    synth_s: f64,
    rtf: f64,
    first_frame_ms: f64,
    per_frame_macs: u64,
    encoder_macs: u64,
    repeats: usize,
}

pub fn write_csv<W: Write>(records: &[BenchRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(CsvRow {
            model: r.model.name(),
            audio_s: r.audio_seconds,
            synth_s: r.synth_seconds,
            rtf: r.rtf,
            first_frame_ms: r.first_frame_latency_ms,
            per_frame_macs: r.per_frame_macs,
            encoder_macs: r.encoder_macs,
            repeats: r.repeats,
        })
        .map_err(|e| Error::Bench(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Bench(e.to_string()))?;
    Ok(())
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Self-contained SVG line chart of RTF against audio seconds, one
/// polyline per model.
pub fn render_svg(records: &[BenchRecord]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 170.0, 30.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let max_x = records.iter().map(|r| r.audio_seconds).fold(1.0, f64::max);
    let max_y = records.iter().map(|r| r.rtf).fold(f64::MIN_POSITIVE, f64::max) * 1.1;
    let sx = |x: f64| left + x / max_x * pw;
    let sy = |y: f64| top + ph - y / max_y * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{left},{top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    for i in 0..=4 {
        let (xv, yv) = (max_x * i as f64 / 4.0, max_y * i as f64 / 4.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.0}</text>"#,
            sx(xv),
            top + ph + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#,
            left - 6.0,
            sy(yv) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">audio length (s)</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">RTF</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );

    let mut kinds: Vec<ModelKind> = records.iter().map(|r| r.model).collect();
    kinds.sort();
    kinds.dedup();
    for (i, kind) in kinds.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut pts: Vec<&BenchRecord> = records.iter().filter(|r| r.model == *kind).collect();
        pts.sort_by(|a, b| a.audio_seconds.total_cmp(&b.audio_seconds));
        let path: Vec<String> = pts
            .iter()
            .map(|r| format!("{:.1},{:.1}", sx(r.audio_seconds), sy(r.rtf)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for r in &pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                sx(r.audio_seconds),
                sy(r.rtf)
            );
        }
        let ly = top + 10.0 + 20.0 * i as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, kind.name());
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub svg: PathBuf,
}

/// Writes `bench.csv` and `rtf.svg` into `dir`, creating it if needed.
pub fn emit_report(records: &[BenchRecord], dir: &Path) -> Result<ReportPaths> {
    if records.is_empty() {
        return Err(Error::Bench("no records to report".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = ReportPaths {
        csv: dir.join("bench.csv"),
        svg: dir.join("rtf.svg"),
    };
    let file = fs::File::create(&paths.csv).map_err(|e| Error::io(&paths.csv, e))?;
    write_csv(records, std::io::BufWriter::new(file))?;
    fs::write(&paths.svg, render_svg(records)).map_err(|e| Error::io(&paths.svg, e))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(model: ModelKind, audio: f64, rtf: f64) -> BenchRecord {
        BenchRecord {
            model,
            audio_seconds: audio,
            synth_seconds: rtf * audio,
            rtf,
            first_frame_latency_ms: 1.5,
            per_frame_macs: 10,
            encoder_macs: 20,
            repeats: 3,
        }
    }

    #[test]
    fn csv_header_is_fixed() {
        let mut buf = Vec::new();
        write_csv(&[record(ModelKind::MultiRate, 10.0, 0.1)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert!(lines.next().unwrap().starts_with("multirate,10.0,"));
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn empty_report_is_bench_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_report(&[], dir.path()), Err(Error::Bench(_))));
    }

    #[test]
    fn sixteen_records_sixteen_rows() {
        let recs: Vec<_> = ModelKind::ALL
            .iter()
            .flat_map(|&k| [10.0, 20.0, 40.0, 60.0].map(|a| record(k, a, 0.01 * a)))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_report(&recs, dir.path()).unwrap();
        let csv = fs::read_to_string(&paths.csv).unwrap();
        assert_eq!(csv.lines().count(), 17);
        let svg = fs::read_to_string(&paths.svg).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert!(!svg.contains("href"));
    }

    #[test]
    fn guard_refuses_reentry() {
        let g = BenchGuard::acquire().unwrap();
        assert!(matches!(
            run_bench(&[ModelKind::MultiRate], &[1.0], &BenchOptions::default()),
            Err(Error::Bench(_))
        ));
        drop(g);
    }

    #[test]
    fn too_few_repeats_rejected() {
        let w = weights_init(0, &ModelConfig::default()).unwrap();
        let m = Model::build(ModelKind::PlainRecurrent, &w).unwrap();
        let tree = synth_utterance(0, 0.1).unwrap();
        assert!(measure(&m, &tree, 2, timer_resolution()).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn first_frame_latency_stops_early() {
        let w = weights_init(0, &ModelConfig::default()).unwrap();
        let m = Model::build(ModelKind::MultiRate, &w).unwrap();
        let tree = synth_utterance(1, 2.0).unwrap();
        let ms = first_frame_latency(&m, &tree).unwrap();
        assert!(ms > 0.0 && ms.is_finite());
    }
}
