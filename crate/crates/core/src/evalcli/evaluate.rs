//! Anchor versus enhanced coding over a QP ladder.

use std::path::PathBuf;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bdrate::{bd_rate_with, BdMethod, MetricId};
use super::quality::{sequence_quality, ExternalMetric};
use super::report::{BdRow, EvalReport, EvalRow, ANCHOR};
use crate::error::{invalid, Result};
use crate::nnarch::{Checkpoint, CveNet};
use crate::trainer::Tool;
use crate::videopipe::{codec_run, degrade, enhance_decoded, read_y4m, read_yuv, CodecAdapter, PlanarFrame, RawFormat};

/// Where to read one test sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub name: String,
    pub path: PathBuf,
    /// Raw YUV geometry; Y4M files carry their own.
    pub format: Option<RawFormat>,
    pub max_frames: Option<usize>,
}

/// A loaded test sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<PlanarFrame>,
}

impl Sequence {
    pub fn load(spec: &SequenceSpec) -> Result<Self> {
        let mut frames = match spec.format {
            Some(fmt) => read_yuv(&spec.path, fmt)?,
            None => read_y4m(&spec.path)?.frames,
        };
        if let Some(n) = spec.max_frames {
            frames.truncate(n);
        }
        if frames.is_empty() {
            return Err(invalid(format!("{} holds no frames", spec.path.display())));
        }
        Ok(Sequence {
            name: spec.name.clone(),
            frames,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub tool: Tool,
    pub codec: CodecAdapter,
    pub checkpoint: Option<PathBuf>,
    pub sequences: Vec<SequenceSpec>,
    pub external_metric: Option<ExternalMetric>,
    pub bd_method: BdMethod,
    /// Sequence-level workers; 0 uses the global pool (one per core).
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tool: Tool::Pp,
            codec: CodecAdapter::default(),
            checkpoint: None,
            sequences: Vec::new(),
            external_metric: None,
            bd_method: BdMethod::Cubic,
            workers: 0,
        }
    }
}

fn row(seq: &str, tool: &str, qp: u32, kbps: f64, src: &[PlanarFrame], out: &[PlanarFrame], ext: Option<f64>) -> Result<EvalRow> {
    let q = sequence_quality(src, out)?;
    Ok(EvalRow {
        sequence: seq.to_string(),
        tool: tool.to_string(),
        qp,
        bitrate_kbps: kbps,
        psnr: q.psnr,
        ssim: q.ssim,
        msssim: q.msssim,
        external_metric: ext,
    })
}

fn external(
    report: &mut EvalReport,
    metric: Option<&ExternalMetric>,
    seq: &str,
    src: &[PlanarFrame],
    out: &[PlanarFrame],
) -> Option<f64> {
    let m = metric?;
    match m.score(src, out) {
        Ok(v) => Some(v),
        Err(e) => {
            report.push_error(seq, &format!("external metric {}", m.name), e);
            None
        }
    }
}

fn bitrate(bytes: u64, fps: f64, frames: usize) -> f64 {
    bytes as f64 * 8.0 * fps / frames as f64 / 1000.0
}

/// Evaluates one sequence into `report`. Anchor rows are kept even when
/// the enhanced path fails.
fn evaluate_sequence(
    report: &mut EvalReport,
    seq: &Sequence,
    generator: std::result::Result<&CveNet, &str>,
    cfg: &EvalConfig,
) -> Result<()> {
    let tool = cfg.tool.name();
    let fps = cfg.codec.fps;
    let n = seq.frames.len();
    let mut enhanced_ok = true;
    for &qp in &cfg.codec.qps {
        let anchor = codec_run(&seq.frames, &cfg.codec, qp)?;
        let ext = external(report, cfg.external_metric.as_ref(), &seq.name, &seq.frames, &anchor.frames);
        let a = row(&seq.name, ANCHOR, qp, bitrate(anchor.bytes, fps, n), &seq.frames, &anchor.frames, ext)?;
        info!("{} anchor QP {qp}: {:.1} kbps, {:.3} dB", seq.name, a.bitrate_kbps, a.psnr);
        report.rows.push(a);
        let gen = match generator {
            Ok(g) if enhanced_ok => g,
            Ok(_) => continue,
            Err(msg) => {
                if enhanced_ok {
                    report.push_error(&seq.name, "generator", msg);
                    enhanced_ok = false;
                }
                continue;
            }
        };
        let result = (|| {
            let coded = match cfg.tool {
                Tool::Pp => (anchor.frames.clone(), anchor.bytes),
                Tool::Sra => {
                    let d = degrade(&seq.frames, &cfg.codec, qp, Tool::Sra)?;
                    (d.coded, d.bytes)
                }
            };
            let out = enhance_decoded(&coded.0, gen, cfg.tool)?;
            Ok::<_, crate::error::Error>((out, coded.1))
        })();
        match result {
            Ok((out, bytes)) => {
                let ext = external(report, cfg.external_metric.as_ref(), &seq.name, &seq.frames, &out);
                let e = row(&seq.name, tool, qp, bitrate(bytes, fps, n), &seq.frames, &out, ext)?;
                info!("{} {tool} QP {qp}: {:.1} kbps, {:.3} dB", seq.name, e.bitrate_kbps, e.psnr);
                report.rows.push(e);
            }
            Err(e) => {
                report.push_error(&seq.name, "enhancement", e);
                enhanced_ok = false;
            }
        }
    }
    if !enhanced_ok {
        return Ok(());
    }
    for metric in MetricId::ALL {
        let (Some(a), Some(t)) = (report.curve(&seq.name, ANCHOR, metric), report.curve(&seq.name, tool, metric)) else {
            continue;
        };
        match a.and_then(|a| t.and_then(|t| bd_rate_with(&a, &t, cfg.bd_method))) {
            Ok(v) => report.bd_rates.push(BdRow {
                sequence: seq.name.clone(),
                tool: tool.to_string(),
                metric,
                bd_rate_percent: v,
            }),
            Err(e) => report.push_error(&seq.name, &format!("bd-rate {metric}"), e),
        }
    }
    Ok(())
}

/// Evaluates in-memory sequences on a bounded worker pool. `generator`
/// carries the reason when no model is available; failures are recorded
/// per sequence.
pub fn evaluate_sequences(
    sequences: &[Sequence],
    generator: std::result::Result<&CveNet, &str>,
    cfg: &EvalConfig,
) -> EvalReport {
    let mut report = EvalReport::default();
    if let Err(e) = cfg.codec.validate() {
        for s in sequences {
            report.push_error(&s.name, "codec", &e);
        }
        return report;
    }
    let one = |s: &Sequence| {
        let mut part = EvalReport::default();
        if let Err(e) = evaluate_sequence(&mut part, s, generator, cfg) {
            part.push_error(&s.name, "pipeline", e);
        }
        part
    };
    let run = || sequences.par_iter().map(one).collect::<Vec<_>>();
    let parts = match cfg.workers {
        0 => run(),
        n => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                log::warn!("worker pool of {n}: {e}; using the global pool");
                run()
            }
        },
    };
    // merged in input order whatever the completion order
    for p in parts {
        report.rows.extend(p.rows);
        report.bd_rates.extend(p.bd_rates);
        report.errors.extend(p.errors);
    }
    report
}

/// Loads the checkpoint and sequences named in `cfg` and evaluates them.
pub fn evaluate_tool(cfg: &EvalConfig) -> EvalReport {
    let generator = match &cfg.checkpoint {
        None => Err("no generator checkpoint configured".to_string()),
        Some(p) => Checkpoint::load(p)
            .and_then(|c| CveNet::from_checkpoint(&c))
            .map_err(|e| format!("loading {}: {e}", p.display())),
    };
    let mut loaded = Vec::new();
    let mut report = EvalReport::default();
    for spec in &cfg.sequences {
        match Sequence::load(spec) {
            Ok(s) => loaded.push(s),
            Err(e) => report.push_error(&spec.name, "load", e),
        }
    }
    let inner = evaluate_sequences(&loaded, generator.as_ref().map_err(|s| s.as_str()), cfg);
    report.rows.extend(inner.rows);
    report.bd_rates.extend(inner.bd_rates);
    report.errors.extend(inner.errors);
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnarch::NetConfig;
    use crate::videopipe::{write_y4m, ChromaFormat, Plane, Y4mVideo};

    fn sequence(name: &str, seed: u64) -> Sequence {
        let mut frames = Vec::new();
        for t in 0..2 {
            let mut f = PlanarFrame::new(64, 48, 8, ChromaFormat::Yuv420).unwrap();
            for y in 0..48 {
                for x in 0..64 {
                    let v = 120.0 + 50.0 * ((x + t * 3) as f64 / (6.0 + seed as f64)).sin() * (y as f64 / 7.0).cos();
                    f.set(Plane::Y, x, y, v.round() as u16);
                }
            }
            frames.push(f);
        }
        Sequence {
            name: name.into(),
            frames,
        }
    }

    #[test]
    fn identity_generator_gives_zero_bd_rate() {
        let g = CveNet::zeroed(&NetConfig::desk(4, 32)).unwrap();
        let cfg = EvalConfig::default();
        let r = evaluate_sequences(&[sequence("a", 1)], Ok(&g), &cfg);
        assert!(r.errors.is_empty(), "{:?}", r.errors);
        assert_eq!(r.rows.len(), 8);
        let anchor: Vec<_> = r.rows.iter().filter(|x| x.tool == ANCHOR).collect();
        for w in anchor.windows(2) {
            assert!(w[0].psnr > w[1].psnr && w[0].bitrate_kbps > w[1].bitrate_kbps);
        }
        for m in [MetricId::Psnr, MetricId::Ssim, MetricId::MsSsim] {
            assert!(r.bd_rate("a", "pp", m).unwrap().abs() < 1e-9);
        }
        assert!(r.rows.iter().all(|x| x.external_metric.is_none()));
    }

    #[test]
    fn worker_count_does_not_change_the_report() {
        let g = CveNet::zeroed(&NetConfig::desk(4, 32)).unwrap();
        let seqs = [sequence("a", 1), sequence("b", 2), sequence("c", 3)];
        let serial = evaluate_sequences(&seqs, Ok(&g), &EvalConfig { workers: 1, ..EvalConfig::default() });
        let pooled = evaluate_sequences(&seqs, Ok(&g), &EvalConfig { workers: 3, ..EvalConfig::default() });
        assert_eq!(serial, pooled);
        let order: Vec<&str> = pooled.rows.iter().map(|r| r.sequence.as_str()).collect();
        assert_eq!(order, [["a"; 8], ["b"; 8], ["c"; 8]].concat());
    }

    #[test]
    fn missing_checkpoint_keeps_anchor_rows() {
        let dir = tempfile::tempdir().unwrap();
        let s = sequence("b", 2);
        let path = dir.path().join("b.y4m");
        write_y4m(
            &path,
            &Y4mVideo {
                frames: s.frames.clone(),
                fps_num: 30,
                fps_den: 1,
            },
        )
        .unwrap();
        let cfg = EvalConfig {
            checkpoint: Some(dir.path().join("missing.ckpt")),
            sequences: vec![
                SequenceSpec {
                    name: "b".into(),
                    path,
                    format: None,
                    max_frames: Some(1),
                },
                SequenceSpec {
                    name: "gone".into(),
                    path: dir.path().join("gone.y4m"),
                    format: None,
                    max_frames: None,
                },
            ],
            ..EvalConfig::default()
        };
        let r = evaluate_tool(&cfg);
        assert_eq!(r.rows.len(), 4);
        assert!(r.rows.iter().all(|x| x.tool == ANCHOR));
        assert!(r.bd_rates.is_empty());
        let seqs: Vec<_> = r.errors.iter().map(|e| (e.sequence.as_str(), e.stage.as_str())).collect();
        assert_eq!(seqs, vec![("gone", "load"), ("b", "generator")]);
        let csv = dir.path().join("report.csv");
        r.write_csv(&csv).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("sequence,tool,qp,bitrate_kbps,psnr,ssim,msssim,external_metric\n"));
        assert_eq!(EvalReport::read_csv(&csv).unwrap(), r.rows);
    }

    #[test]
    fn external_scores_are_marked() {
        let g = CveNet::zeroed(&NetConfig::desk(4, 32)).unwrap();
        let cfg = EvalConfig {
            external_metric: Some(ExternalMetric {
                name: "size".into(),
                command: "wc -c < {distorted}".into(),
            }),
            codec: CodecAdapter {
                qps: vec![22, 27, 32, 37],
                ..CodecAdapter::stub()
            },
            ..EvalConfig::default()
        };
        let r = evaluate_sequences(&[sequence("c", 3)], Ok(&g), &cfg);
        let yuv_bytes = 2.0 * (64.0 * 48.0 * 1.5);
        assert!(r.rows.iter().all(|x| x.external_metric == Some(yuv_bytes)));
        // a constant external score has no overlapping range to integrate
        assert!(r.errors.iter().any(|e| e.stage == "bd-rate external"));
    }
}
