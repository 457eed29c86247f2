//! Calibration of a linear combination of transformed single losses
//! against subjective scores, and the resulting perceptual loss.
//!
//! A [`LossSpec`] pairs one elementary transform `f` with six weights and
//! scores a [`LossVector`] as `sum_i a_i f(L_i)`. [`grid_search`] picks
//! the spec whose scores rank-correlate best with subjective opinion,
//! [`cross_validate`] repeats that in a leave-one-database-out protocol and
//! [`finalize`] merges the per-split winners.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metrics::{
    feature_loss, gradient_loss, l1_loss, l2_loss, msssim_loss, srocc, ssim_loss, FeatureExtractor,
    LossVector, QualityRecord, LOSS_NAMES,
};
use crate::tensor::{Real, Tensor};

/// Floor applied before the logarithm.
pub const LOG_EPS: f64 = 1e-8;

/// Scores within this distance count as tied during the search.
const TIE_TOL: f64 = 1e-12;

/// Elementary transform applied to every single loss. The declaration
/// order is the tie-break order of [`grid_search`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    Identity,
    Square,
    Sqrt,
    /// `(e^v - 1) / (e - 1)`
    Expm1,
    Ln,
    /// `sin(pi v / 2)`
    Sin,
    Asin,
    Tanh,
    Asinh,
}

impl Transform {
    pub const ALL: [Transform; 9] = [
        Transform::Identity,
        Transform::Square,
        Transform::Sqrt,
        Transform::Expm1,
        Transform::Ln,
        Transform::Sin,
        Transform::Asin,
        Transform::Tanh,
        Transform::Asinh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Square => "square",
            Transform::Sqrt => "sqrt",
            Transform::Expm1 => "expm1",
            Transform::Ln => "ln",
            Transform::Sin => "sin",
            Transform::Asin => "asin",
            Transform::Tanh => "tanh",
            Transform::Asinh => "asinh",
        }
    }

    /// Transform of a loss value; inputs are clamped to `[0, 1]`, and to
    /// `[LOG_EPS, 1]` for the logarithm.
    pub fn apply(self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        match self {
            Transform::Identity => v,
            Transform::Square => v * v,
            Transform::Sqrt => v.sqrt(),
            Transform::Expm1 => v.exp_m1() / 1f64.exp_m1(),
            Transform::Ln => v.max(LOG_EPS).ln(),
            Transform::Sin => (std::f64::consts::FRAC_PI_2 * v).sin(),
            Transform::Asin => v.asin(),
            Transform::Tanh => v.tanh(),
            Transform::Asinh => v.asinh(),
        }
    }

    /// Differentiable counterpart of [`Transform::apply`].
    pub fn apply_tensor<T: Real>(self, v: &Tensor<T>) -> Tensor<T> {
        let v = match self {
            Transform::Ln => v.clamp(LOG_EPS, 1.0),
            _ => v.clamp(0.0, 1.0),
        };
        match self {
            Transform::Identity => v,
            Transform::Square => v.sqr(),
            Transform::Sqrt => v.sqrt(),
            Transform::Expm1 => v.expm1().scale(1.0 / 1f64.exp_m1()),
            Transform::Ln => v.ln(),
            Transform::Sin => v.scale(std::f64::consts::FRAC_PI_2).sin(),
            Transform::Asin => v.asin(),
            Transform::Tanh => v.tanh(),
            Transform::Asinh => v.asinh(),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Transform::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| invalid(format!("unknown transform `{s}`")))
    }
}

/// A transform plus six combination weights, in [`LossVector`] order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub transform: Transform,
    pub weights: [f64; 6],
}

impl LossSpec {
    pub fn new(transform: Transform, weights: [f64; 6]) -> Self {
        LossSpec { transform, weights }
    }

    /// The calibrated perceptual loss: `0.3 ln l1 + 0.1 ln l2 + 0.2 ln
    /// ssim_loss + 0.4 ln msssim_loss`.
    pub fn perceptual() -> Self {
        LossSpec::new(Transform::Ln, [0.3, 0.1, 0.0, 0.0, 0.2, 0.4])
    }

    /// `sum_i a_i f(L_i)`
    pub fn combined(&self, lv: &LossVector) -> f64 {
        self.weights
            .iter()
            .zip(lv.to_array())
            .map(|(a, l)| a * self.transform.apply(l))
            .sum()
    }
}

/// Free-function form of [`LossSpec::combined`].
pub fn combined_loss(spec: &LossSpec, lv: &LossVector) -> f64 {
    spec.combined(lv)
}

/// Differentiable combined loss between two `(B, 3, H, W)` batches.
/// Components with zero weight are skipped; a positive feature weight
/// needs an extractor and normalizer.
pub fn combined_loss_tensor<T: Real>(
    spec: &LossSpec,
    a: &Tensor<T>,
    b: &Tensor<T>,
    features: Option<(&dyn FeatureExtractor<T>, f64)>,
) -> Result<Tensor<T>> {
    let mut total: Option<Tensor<T>> = None;
    for (i, &w) in spec.weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let l = match i {
            0 => l1_loss(a, b)?,
            1 => l2_loss(a, b)?,
            2 => gradient_loss(a, b)?,
            3 => {
                let (ext, norm) = features
                    .ok_or_else(|| invalid("feature-loss weight set but no extractor given"))?;
                feature_loss(a, b, ext, norm)?
            }
            4 => ssim_loss(a, b)?,
            _ => msssim_loss(a, b)?,
        };
        let term = spec.transform.apply_tensor(&l).scale(w);
        total = Some(match total {
            None => term,
            Some(t) => t.add(&term)?,
        });
    }
    total.ok_or_else(|| invalid("loss spec with all-zero weights"))
}

/// The calibrated perceptual loss between two batches.
pub fn perceptual_loss_lp<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    combined_loss_tensor(&LossSpec::perceptual(), a, b, None)
}

/// Direction of the subjective scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreOrientation {
    /// Mean opinion scores: higher is better, so a good loss correlates
    /// negatively with the score.
    #[default]
    Mos,
    /// Difference scores: higher is worse.
    Dmos,
}

/// Search space of [`grid_search`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    /// Weight grid spacing; must divide 1.
    pub step: f64,
    pub transforms: Vec<Transform>,
    pub orientation: ScoreOrientation,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            step: 0.1,
            transforms: Transform::ALL.to_vec(),
            orientation: ScoreOrientation::Mos,
        }
    }
}

impl GridConfig {
    fn levels(&self) -> Result<usize> {
        let k = (1.0 / self.step).round();
        if !(self.step > 0.0 && self.step <= 1.0) || ((k * self.step) - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("grid step {} does not divide 1", self.step)));
        }
        if self.transforms.is_empty() {
            return Err(invalid("empty transform set"));
        }
        Ok(k as usize)
    }
}

/// Winner of a search together with its mean per-database SROCC.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchOutcome {
    pub spec: LossSpec,
    pub srocc: f64,
}

/// One database prepared for fast repeated rank correlation.
struct Prepared {
    /// transformed losses, `[transform][record][component]`
    table: Vec<Vec<[f64; 6]>>,
    /// centred score ranks and their norm
    score_dev: Vec<f64>,
    score_norm: f64,
}

fn centred_ranks(v: &[f64]) -> (Vec<f64>, f64) {
    let r = crate::metrics::average_ranks(v);
    let m = (v.len() as f64 + 1.0) / 2.0;
    let dev: Vec<f64> = r.iter().map(|x| x - m).collect();
    let norm = dev.iter().map(|d| d * d).sum::<f64>().sqrt();
    (dev, norm)
}

fn prepare(db: &[QualityRecord], cfg: &GridConfig, index: usize) -> Result<Prepared> {
    if db.len() < 2 {
        return Err(Error::Calibration(format!(
            "database {index} has {} record(s); rank correlation is undefined",
            db.len()
        )));
    }
    for r in db {
        r.losses.validate()?;
        if !r.subjective_score.is_finite() {
            return Err(invalid(format!("non-finite score for `{}`", r.sequence_id)));
        }
    }
    let sign = match cfg.orientation {
        ScoreOrientation::Mos => -1.0,
        ScoreOrientation::Dmos => 1.0,
    };
    let scores: Vec<f64> = db.iter().map(|r| sign * r.subjective_score).collect();
    let (score_dev, score_norm) = centred_ranks(&scores);
    if score_norm == 0.0 {
        return Err(Error::Calibration(format!(
            "database {index} has constant scores; rank correlation is undefined"
        )));
    }
    let table = cfg
        .transforms
        .iter()
        .map(|t| db.iter().map(|r| r.losses.to_array().map(|l| t.apply(l))).collect())
        .collect();
    Ok(Prepared {
        table,
        score_dev,
        score_norm,
    })
}

/// Reusable buffers for rank correlation of one candidate.
#[derive(Default)]
struct Scratch {
    values: Vec<f64>,
    order: Vec<usize>,
    ranks: Vec<f64>,
}

impl Prepared {
    /// Rank correlation between the combined loss and the oriented score.
    fn srocc(&self, t: usize, w: &[f64; 6], s: &mut Scratch) -> Option<f64> {
        let rows = &self.table[t];
        let n = rows.len();
        s.values.clear();
        s.values
            .extend(rows.iter().map(|f| f.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()));
        s.order.clear();
        s.order.extend(0..n);
        let v = &s.values;
        s.order.sort_unstable_by(|&i, &j| v[i].total_cmp(&v[j]).then(i.cmp(&j)));
        s.ranks.resize(n, 0.0);
        let mid = (n as f64 + 1.0) / 2.0;
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && v[s.order[j + 1]] == v[s.order[i]] {
                j += 1;
            }
            let r = (i + j) as f64 / 2.0 + 1.0 - mid;
            for &k in &s.order[i..=j] {
                s.ranks[k] = r;
            }
            i = j + 1;
        }
        let (mut dot, mut nn) = (0.0, 0.0);
        for (r, d) in s.ranks.iter().zip(&self.score_dev) {
            dot += r * d;
            nn += r * r;
        }
        (nn > 0.0).then(|| (dot / (nn.sqrt() * self.score_norm)).clamp(-1.0, 1.0))
    }
}

fn mean_srocc(dbs: &[Prepared], t: usize, w: &[f64; 6], s: &mut Scratch) -> Option<f64> {
    let mut acc = 0.0;
    for db in dbs {
        acc += db.srocc(t, w, s)?;
    }
    Some(acc / dbs.len() as f64)
}

/// Best = highest mean SROCC; near-ties keep the earlier candidate, which
/// is the lexicographically smaller one in enumeration order.
fn better(candidate: f64, incumbent: Option<f64>) -> bool {
    match incumbent {
        None => true,
        Some(b) => candidate > b + TIE_TOL,
    }
}

/// Exhaustive search over `transform x {0, step, .., 1}^5` with the last
/// weight fixed at 1, maximizing the mean per-database SROCC.
///
/// Candidates whose combined loss is constant on some database have an
/// undefined correlation and are skipped. The result is independent of
/// the number of worker threads.
pub fn grid_search(databases: &[Vec<QualityRecord>], cfg: &GridConfig) -> Result<SearchOutcome> {
    if databases.is_empty() {
        return Err(Error::Calibration("no training databases".into()));
    }
    let k = cfg.levels()?;
    let prepared: Vec<Prepared> = databases
        .iter()
        .enumerate()
        .map(|(i, db)| prepare(db, cfg, i))
        .collect::<Result<_>>()?;
    let levels = k + 1;
    // weights are kept as exact multiples of the step
    let value = |i: usize| i as f64 / k as f64;
    let chunks: Vec<(usize, usize)> = (0..cfg.transforms.len())
        .flat_map(|t| (0..levels).map(move |a1| (t, a1)))
        .collect();
    let best_per_chunk: Vec<Option<(f64, usize, [f64; 6])>> = chunks
        .par_iter()
        .map(|&(t, a1)| {
            let mut s = Scratch::default();
            let mut best: Option<(f64, usize, [f64; 6])> = None;
            for code in 0..levels.pow(4) {
                let mut c = code;
                let mut w = [value(a1), 0.0, 0.0, 0.0, 0.0, 1.0];
                for slot in (1..5).rev() {
                    w[slot] = value(c % levels);
                    c /= levels;
                }
                if let Some(score) = mean_srocc(&prepared, t, &w, &mut s) {
                    if better(score, best.map(|b| b.0)) {
                        best = Some((score, t, w));
                    }
                }
            }
            best
        })
        .collect();
    let mut best: Option<(f64, usize, [f64; 6])> = None;
    for c in best_per_chunk.into_iter().flatten() {
        if better(c.0, best.map(|b| b.0)) {
            best = Some(c);
        }
    }
    let (score, t, w) = best.ok_or_else(|| {
        Error::Calibration("every candidate has an undefined rank correlation".into())
    })?;
    Ok(SearchOutcome {
        spec: LossSpec::new(cfg.transforms[t], w),
        srocc: score,
    })
}

/// Mean SROCC of a fixed spec over the given databases.
pub fn evaluate_spec(
    spec: &LossSpec,
    databases: &[Vec<QualityRecord>],
    orientation: ScoreOrientation,
) -> Option<f64> {
    if databases.is_empty() {
        return None;
    }
    let sign = match orientation {
        ScoreOrientation::Mos => -1.0,
        ScoreOrientation::Dmos => 1.0,
    };
    let mut acc = 0.0;
    for db in databases {
        let l: Vec<f64> = db.iter().map(|r| spec.combined(&r.losses)).collect();
        let s: Vec<f64> = db.iter().map(|r| sign * r.subjective_score).collect();
        acc += srocc(&l, &s)?;
    }
    Some(acc / databases.len() as f64)
}

/// Median of each weight across specs, normalized to sum to one.
pub fn finalize(specs: &[LossSpec]) -> Result<LossSpec> {
    let first = specs
        .first()
        .ok_or_else(|| Error::Calibration("no specs to finalize".into()))?;
    if let Some(other) = specs.iter().find(|s| s.transform != first.transform) {
        return Err(Error::Calibration(format!(
            "splits disagree on the transform ({} vs {})",
            first.transform, other.transform
        )));
    }
    let mut weights = [0.0; 6];
    for (i, w) in weights.iter_mut().enumerate() {
        let mut col: Vec<f64> = specs.iter().map(|s| s.weights[i]).collect();
        col.sort_by(f64::total_cmp);
        let n = col.len();
        *w = if n % 2 == 1 {
            col[n / 2]
        } else {
            (col[n / 2 - 1] + col[n / 2]) / 2.0
        };
    }
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Calibration("median weights sum to zero".into()));
    }
    weights.iter_mut().for_each(|w| *w /= sum);
    Ok(LossSpec::new(first.transform, weights))
}

/// Outcome of leave-one-database-out calibration.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationResult {
    pub per_split_specs: Vec<LossSpec>,
    /// mean SROCC on each split's training databases
    pub per_split_train_srocc: Vec<f64>,
    /// SROCC on each split's held-out database
    pub per_split_srocc: Vec<f64>,
    pub final_spec: LossSpec,
}

impl CalibrationResult {
    pub fn mean_test_srocc(&self) -> f64 {
        self.per_split_srocc.iter().sum::<f64>() / self.per_split_srocc.len() as f64
    }

    /// `split,transform,a1..a6,train_srocc,test_srocc` with a trailing
    /// `final` row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["split", "transform", "a1", "a2", "a3", "a4", "a5", "a6", "train_srocc", "test_srocc"])?;
        let spec_fields = |s: &LossSpec| {
            let mut f = vec![s.transform.to_string()];
            f.extend(s.weights.iter().map(|w| format!("{w}")));
            f
        };
        for (i, s) in self.per_split_specs.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(spec_fields(s));
            row.push(self.per_split_train_srocc[i].to_string());
            row.push(self.per_split_srocc[i].to_string());
            w.write_record(&row)?;
        }
        let mut row = vec!["final".to_string()];
        row.extend(spec_fields(&self.final_spec));
        row.push(String::new());
        row.push(self.mean_test_srocc().to_string());
        w.write_record(&row)?;
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} splits, mean held-out SROCC {:.4}\nfinal loss: ",
            self.per_split_specs.len(),
            self.mean_test_srocc()
        );
        let terms: Vec<String> = self
            .final_spec
            .weights
            .iter()
            .zip(LOSS_NAMES)
            .filter(|(w, _)| **w != 0.0)
            .map(|(w, n)| format!("{w:.4}*{}({n})", self.final_spec.transform))
            .collect();
        s.push_str(&terms.join(" + "));
        s.push('\n');
        s
    }
}

/// Leave-one-database-out calibration: each split searches on all but one
/// database and is scored on the held-out one; the final spec is the
/// normalized median of the split winners.
pub fn cross_validate(databases: &[Vec<QualityRecord>], cfg: &GridConfig) -> Result<CalibrationResult> {
    let k = databases.len();
    if k < 2 {
        return Err(Error::Calibration(format!("cross-validation needs at least 2 databases, got {k}")));
    }
    let mut specs = Vec::with_capacity(k);
    let mut train = Vec::with_capacity(k);
    let mut test = Vec::with_capacity(k);
    for held in 0..k {
        let training: Vec<Vec<QualityRecord>> = databases
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != held)
            .map(|(_, d)| d.clone())
            .collect();
        let out = grid_search(&training, cfg)?;
        let t = evaluate_spec(&out.spec, &databases[held..held + 1], cfg.orientation).ok_or_else(|| {
            Error::Calibration(format!("held-out database {held} has an undefined rank correlation"))
        })?;
        specs.push(out.spec);
        train.push(out.srocc);
        test.push(t);
    }
    let final_spec = finalize(&specs)?;
    Ok(CalibrationResult {
        per_split_specs: specs,
        per_split_train_srocc: train,
        per_split_srocc: test,
        final_spec,
    })
}

#[derive(Serialize, Deserialize)]
struct RecordRow {
    sequence_id: String,
    l1: f64,
    l2: f64,
    grad: f64,
    feat: f64,
    ssim_loss: f64,
    msssim_loss: f64,
    score: f64,
}

/// Reads `sequence_id,l1,l2,grad,feat,ssim_loss,msssim_loss,score`.
pub fn read_records(path: &Path) -> Result<Vec<QualityRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: RecordRow = row?;
        let rec = QualityRecord {
            sequence_id: row.sequence_id,
            losses: LossVector::from_array([row.l1, row.l2, row.grad, row.feat, row.ssim_loss, row.msssim_loss]),
            subjective_score: row.score,
        };
        rec.losses.validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[QualityRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        let l = r.losses;
        w.serialize(RecordRow {
            sequence_id: r.sequence_id.clone(),
            l1: l.l1,
            l2: l.l2,
            grad: l.grad,
            feat: l.feat,
            ssim_loss: l.ssim_loss,
            msssim_loss: l.msssim_loss,
            score: r.subjective_score,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// A database of `n` random loss vectors whose MOS falls strictly with
/// component `driver`, for demonstrations and recovery checks.
pub fn synthetic_database(seed: u64, n: usize, driver: usize) -> Result<Vec<QualityRecord>> {
    if driver >= 6 {
        return Err(invalid(format!("loss index {driver} out of range")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|i| {
            let l: [f64; 6] = std::array::from_fn(|_| rng.gen_range(0.01..0.99));
            QualityRecord {
                sequence_id: format!("db{seed}_{i}"),
                losses: LossVector::from_array(l),
                subjective_score: 5.0 - 4.0 * l[driver],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::{check_grad, rand_leaf};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EM1: f64 = 0.36787944117144233;

    fn lv(v: f64) -> LossVector {
        LossVector::from_array([v; 6])
    }

    fn synthetic(seed: u64, n: usize, driver: usize, map: impl Fn(f64) -> f64) -> Vec<QualityRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let l: [f64; 6] = std::array::from_fn(|_| rng.gen_range(0.01..0.99));
                QualityRecord {
                    sequence_id: format!("s{seed}_{i}"),
                    losses: LossVector::from_array(l),
                    subjective_score: map(l[driver]),
                }
            })
            .collect()
    }

    #[test]
    fn transform_examples() {
        assert_eq!(Transform::Ln.apply(1.0), 0.0);
        assert_eq!(Transform::Identity.apply(0.37), 0.37);
        assert!((Transform::Ln.apply(EM1) + 1.0).abs() < 1e-15);
        assert_eq!(Transform::Ln.apply(0.0), LOG_EPS.ln());
        assert!((Transform::Expm1.apply(1.0) - 1.0).abs() < 1e-14);
        assert!((Transform::Sin.apply(1.0) - 1.0).abs() < 1e-15);
        assert!((Transform::Asin.apply(1.0) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!("arsinh".parse::<Transform>().ok(), None);
        for t in Transform::ALL {
            assert_eq!(t.name().parse::<Transform>().unwrap(), t);
            // every member is increasing on [0, 1]
            let mut prev = t.apply(0.0);
            for i in 1..=20 {
                let v = t.apply(i as f64 / 20.0);
                assert!(v > prev, "{t} not increasing");
                prev = v;
            }
        }
    }

    #[test]
    fn tensor_transforms_agree_with_scalar() {
        let x = Tensor::<f64>::from_vec(&[5], vec![0.0, 0.1, 0.5, 0.9, 1.0]).unwrap();
        for t in Transform::ALL {
            let y = t.apply_tensor(&x);
            for (a, &b) in x.data().iter().zip(y.data()) {
                assert!((t.apply(*a) - b).abs() < 1e-14, "{t}");
            }
        }
    }

    #[test]
    fn combined_loss_examples() {
        let only6 = LossSpec::new(Transform::Ln, [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let mut v = LossVector::default();
        v.msssim_loss = EM1;
        assert!((combined_loss(&only6, &v) + 1.0).abs() < 1e-15);
        let only1 = LossSpec::new(Transform::Identity, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        v.l1 = 0.2;
        assert_eq!(combined_loss(&only1, &v), 0.2);
        assert!((combined_loss(&LossSpec::perceptual(), &lv(EM1)) + 1.0).abs() < 1e-15);
        assert!((LossSpec::perceptual().weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn perceptual_loss_floor_and_gradient() {
        let a = Tensor::<f64>::full(&[1, 3, 96, 96], 0.4);
        let lp = perceptual_loss_lp(&a, &a).unwrap().item().unwrap();
        assert!((lp - LOG_EPS.ln()).abs() < 1e-9);
        let a = rand_leaf(&[1, 3, 24, 24], 1, 0.1, 0.9);
        let b = rand_leaf(&[1, 3, 24, 24], 2, 0.1, 0.9);
        let spec = LossSpec::new(Transform::Ln, [0.3, 0.1, 0.15, 0.0, 0.45, 0.0]);
        check_grad(&[a, b], |v| combined_loss_tensor(&spec, &v[0], &v[1], None).unwrap(), 1e-4);
        let feat = LossSpec::new(Transform::Ln, [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let z = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        assert!(combined_loss_tensor(&feat, &z, &z, None).is_err());
    }

    #[test]
    fn grid_search_recovers_single_driver() {
        let db = synthetic(1, 25, 5, |m| 1.0 - m);
        let cfg = GridConfig::default();
        let out = grid_search(&[db], &cfg).unwrap();
        assert_eq!(out.spec.weights, [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(out.spec.transform, Transform::Identity);
        assert!((out.srocc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_search_l1_driver_across_maps() {
        // MS-SSIM held fixed so the forced a6 = 1 term cannot reorder
        let flat = |mut db: Vec<QualityRecord>| {
            db.iter_mut().for_each(|r| r.losses.msssim_loss = 0.3);
            db
        };
        let a = flat(synthetic(2, 20, 0, |l| 5.0 - 4.0 * l));
        let b = flat(synthetic(3, 20, 0, |l| (-3.0 * l).exp()));
        let cfg = GridConfig {
            step: 0.25,
            ..GridConfig::default()
        };
        let out = grid_search(&[a.clone(), b.clone()], &cfg).unwrap();
        assert!((out.srocc - 1.0).abs() < 1e-12);
        // l1 carries the only varying weight; the smallest such grid value wins
        assert_eq!(out.spec, LossSpec::new(Transform::Identity, [0.25, 0.0, 0.0, 0.0, 0.0, 1.0]));
        // exhaustive re-scan: nothing beats the winner
        let k = 4;
        for t in &cfg.transforms {
            for code in 0..(k + 1usize).pow(5) {
                let mut c = code;
                let mut w = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
                for slot in (0..5).rev() {
                    w[slot] = (c % (k + 1)) as f64 / k as f64;
                    c /= k + 1;
                }
                let s = evaluate_spec(&LossSpec::new(*t, w), &[a.clone(), b.clone()], ScoreOrientation::Mos);
                if let Some(s) = s {
                    assert!(s <= out.srocc + 1e-12);
                }
            }
        }
    }

    #[test]
    fn grid_search_rejections_and_determinism() {
        let cfg = GridConfig::default();
        assert!(grid_search(&[], &cfg).is_err());
        let single = synthetic(4, 1, 0, |l| l);
        assert!(matches!(grid_search(&[single], &cfg), Err(Error::Calibration(_))));
        let bad_step = GridConfig {
            step: 0.3,
            ..GridConfig::default()
        };
        assert!(grid_search(&[synthetic(5, 5, 0, |l| l)], &bad_step).is_err());
        let mut db = synthetic(6, 12, 2, |l| l * l);
        db.iter_mut().for_each(|r| r.losses.msssim_loss = 0.5);
        let cfg = GridConfig {
            step: 0.5,
            orientation: ScoreOrientation::Dmos,
            ..GridConfig::default()
        };
        let a = grid_search(&[db.clone()], &cfg).unwrap();
        let b = grid_search(&[db], &cfg).unwrap();
        assert_eq!(a, b);
        assert!((a.srocc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn finalize_examples() {
        let s = LossSpec::new(Transform::Ln, [0.6, 0.2, 0.0, 0.0, 0.4, 0.8]);
        let f = finalize(&[s, s, s]).unwrap();
        let want = [0.3, 0.1, 0.0, 0.0, 0.2, 0.4];
        for (a, b) in f.weights.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let unit = LossSpec::perceptual();
        assert_eq!(finalize(&[unit]).unwrap(), unit);
        // per-component medians [0.2, 0.1, 0, 0.5, 0, 1] sum to 1.8
        let specs = [
            LossSpec::new(Transform::Ln, [0.1, 0.0, 0.0, 0.5, 0.0, 1.0]),
            LossSpec::new(Transform::Ln, [0.2, 0.1, 0.0, 0.9, 0.3, 1.0]),
            LossSpec::new(Transform::Ln, [0.7, 0.3, 0.0, 0.2, 0.0, 1.0]),
        ];
        let f = finalize(&specs).unwrap();
        let med = [0.2, 0.1, 0.0, 0.5, 0.0, 1.0];
        for (a, m) in f.weights.iter().zip(med) {
            assert!((a - m / 1.8).abs() < 1e-15);
        }
        assert!((f.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mixed = [specs[0], LossSpec::new(Transform::Sqrt, specs[1].weights)];
        assert!(finalize(&mixed).is_err());
        assert!(finalize(&[]).is_err());
    }

    #[test]
    fn cross_validation_symmetry_and_rerun() {
        let cfg = GridConfig {
            step: 0.5,
            ..GridConfig::default()
        };
        let db = synthetic(7, 10, 4, |l| 1.0 - l);
        let res = cross_validate(&vec![db; 4], &cfg).unwrap();
        assert!(res.per_split_specs.windows(2).all(|w| w[0] == w[1]));
        assert!(cross_validate(&[synthetic(8, 5, 0, |l| l)], &cfg).is_err());

        let dbs = vec![
            synthetic(9, 10, 1, |l| -l),
            synthetic(10, 10, 1, |l| 1.0 / (1.0 + l)),
            synthetic(11, 10, 3, |l| -l),
        ];
        let cfg = GridConfig {
            transforms: vec![Transform::Ln],
            ..cfg
        };
        let res = cross_validate(&dbs, &cfg).unwrap();
        for held in 0..3 {
            let train: Vec<_> = (0..3).filter(|&i| i != held).map(|i| dbs[i].clone()).collect();
            let rerun = grid_search(&train, &cfg).unwrap();
            assert_eq!(rerun.spec, res.per_split_specs[held]);
            let t = evaluate_spec(&rerun.spec, &dbs[held..held + 1], cfg.orientation).unwrap();
            assert_eq!(t, res.per_split_srocc[held]);
        }
    }

    #[test]
    fn record_and_result_csv() {
        let dir = tempfile::tempdir().unwrap();
        let recs = synthetic(12, 4, 0, |l| l);
        let p = dir.path().join("db.csv");
        write_records(&p, &recs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("sequence_id,l1,l2,grad,feat,ssim_loss,msssim_loss,score\n"));
        assert_eq!(read_records(&p).unwrap(), recs);

        let cfg = GridConfig {
            step: 1.0,
            transforms: vec![Transform::Ln],
            ..GridConfig::default()
        };
        let dbs = vec![synthetic(13, 6, 5, |l| -l), synthetic(14, 6, 5, |l| -l)];
        let res = cross_validate(&dbs, &cfg).unwrap();
        let out = dir.path().join("cal.csv");
        res.write_csv(&out).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().last().unwrap().starts_with("final,ln,"));
        assert!(res.summary().contains("ln(msssim_loss)"));
    }
}
