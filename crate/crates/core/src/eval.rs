//! Angular errors, summary statistics, cross-validation folds and benchmark reports.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::{minkowski_estimate, MinkowskiSpec};
use crate::detect::{Amount, Detector, DetectorParams};
use crate::error::{Error, Result};
use crate::gpnet::{self, LossConfig, NetParams, TrainConfig, TrainSample};
use crate::imageio::{self, Dataset, Illuminant, LinearImage, Mask};

fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Angle between two illuminant directions, in degrees.
pub fn recovery_error(a: &Illuminant, b: &Illuminant) -> f64 {
    angle_deg(a.rgb(), b.rgb())
}

/// Angle between `gt / est` (componentwise) and the achromatic axis, in degrees.
pub fn reproduction_error(est: &Illuminant, gt: &Illuminant) -> Result<f64> {
    let (e, g) = (est.rgb(), gt.rgb());
    if e.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Metric("estimate has a non-positive component"));
    }
    Ok(angle_deg([g[0] / e[0], g[1] / e[1], g[2] / e[2]], [1.0; 3]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub median: f64,
    pub mean: f64,
    pub trimean: f64,
    pub best25_mean: f64,
    pub worst25_mean: f64,
}

/// Linearly interpolated quantile of sorted values at position `q (n - 1)`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Best and worst 25% use the `ceil(n / 4)` smallest and largest values.
pub fn summarize(errors: &[f64]) -> Result<ErrorStats> {
    if errors.is_empty() || errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::Stats("need a non-empty list of finite errors"));
    }
    let mut s = errors.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let quarter = n.div_ceil(4);
    let mean_of = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let median = quantile(&s, 0.5);
    Ok(ErrorStats {
        median,
        mean: mean_of(&s),
        trimean: (quantile(&s, 0.25) + 2.0 * median + quantile(&s, 0.75)) / 4.0,
        best25_mean: mean_of(&s[..quarter]),
        worst25_mean: mean_of(&s[n - quarter..]),
    })
}

/// Disjoint folds covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Every index outside fold `f`, ascending.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != f)
            .flat_map(|(_, fold)| fold.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }
}

/// Seeded shuffle of `0..n`, then round-robin assignment to `k` folds.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<FoldSplit> {
    if k == 0 || k > n {
        return Err(Error::Split { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, idx) in order.into_iter().enumerate() {
        folds[i % k].push(idx);
    }
    Ok(FoldSplit { folds })
}

pub fn kfold(data: &Dataset, k: usize, seed: u64) -> Result<FoldSplit> {
    kfold_indices(data.len(), k, seed)
}

/// Where a GPNet estimator's parameters come from.
#[derive(Debug, Clone)]
pub enum GpNetModel {
    Trained(NetParams),
    /// Trained per fold on the remaining folds.
    Learn {
        train: TrainConfig,
        loss: LossConfig,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub enum Method {
    Minkowski {
        id: &'static str,
        spec: MinkowskiSpec,
    },
    Detector {
        detector: Detector,
        amount: Amount,
        params: DetectorParams,
    },
    GpNet {
        /// Top-K count at the reference area; scaled by image size.
        k_ref: usize,
        model: GpNetModel,
    },
}

pub const METHOD_IDS: [&str; 10] = [
    "gray-world",
    "white-patch",
    "shades-of-gray",
    "general-gray-world",
    "gray-edge1",
    "gray-edge2",
    "gray-pixel-edge",
    "gray-pixel-std",
    "grayness-index",
    "gpnet",
];

/// Fraction of valid pixels the detectors keep by default.
pub const DEFAULT_TOP_FRAC: f64 = 0.001;

impl Method {
    /// Method with default settings; `gpnet` is trained per fold.
    pub fn from_id(id: &str) -> Result<Method> {
        let mink = |id: &'static str, spec: MinkowskiSpec| Method::Minkowski { id, spec };
        let det = |detector| Method::Detector {
            detector,
            amount: Amount::TopFrac(DEFAULT_TOP_FRAC),
            params: DetectorParams::default(),
        };
        Ok(match id {
            "gray-world" => mink("gray-world", MinkowskiSpec::gray_world()),
            "white-patch" => mink("white-patch", MinkowskiSpec::white_patch()),
            "shades-of-gray" => mink("shades-of-gray", MinkowskiSpec::shades_of_gray()),
            "general-gray-world" => mink("general-gray-world", MinkowskiSpec::general_gray_world(6.0, 1.0)?),
            "gray-edge1" => mink("gray-edge1", MinkowskiSpec::gray_edge1(1.0, 1.0)?),
            "gray-edge2" => mink("gray-edge2", MinkowskiSpec::gray_edge2(1.0, 1.0)?),
            "gray-pixel-edge" => det(Detector::GrayPixelEdge),
            "gray-pixel-std" => det(Detector::GrayPixelStd),
            "grayness-index" => det(Detector::GraynessIndex),
            "gpnet" => Method::GpNet {
                k_ref: TrainConfig::default().top_k,
                model: GpNetModel::Learn {
                    train: TrainConfig::default(),
                    loss: LossConfig::default(),
                    seed: 0,
                },
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown method '{other}' (expected one of {})",
                    METHOD_IDS.join(", ")
                )))
            }
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            Method::Minkowski { id, .. } => id,
            Method::Detector { detector, .. } => match detector {
                Detector::GrayPixelEdge => "gray-pixel-edge",
                Detector::GrayPixelStd => "gray-pixel-std",
                Detector::GraynessIndex => "grayness-index",
            },
            Method::GpNet { .. } => "gpnet",
        }
    }

    /// Needs per-fold training before it can estimate.
    pub fn is_learned(&self) -> bool {
        matches!(
            self,
            Method::GpNet {
                model: GpNetModel::Learn { .. },
                ..
            }
        )
    }

    pub fn estimate(&self, img: &LinearImage, mask: &Mask) -> Result<Illuminant> {
        match self {
            Method::Minkowski { spec, .. } => minkowski_estimate(img, spec, mask),
            Method::Detector {
                detector,
                amount,
                params,
            } => detector.estimate(img, mask, *amount, params),
            Method::GpNet {
                k_ref,
                model: GpNetModel::Trained(params),
            } => gpnet::gpnet_estimate(img, params, gpnet::scaled_k(*k_ref, img.width(), img.height()), mask),
            Method::GpNet { .. } => Err(Error::Config("gpnet needs trained parameters".into())),
        }
    }
}

/// How dataset images are read and masked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub black_level: f64,
    pub dark_frac: f64,
    pub sat_frac: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            black_level: 0.0,
            dark_frac: imageio::DEFAULT_DARK_FRAC,
            sat_frac: imageio::DEFAULT_SAT_FRAC,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub image: String,
    /// NaN when the image could not be evaluated.
    pub recovery: f64,
    pub reproduction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub method: String,
    pub rows: Vec<ReportRow>,
    pub recovery: Option<ErrorStats>,
    pub reproduction: Option<ErrorStats>,
    pub failures: usize,
}

pub const REPORT_HEADER: &str = "image,method,recovery_deg,reproduction_deg";
pub const STATS_HEADER: &str = "#STATS,metric,median,mean,trimean,best25,worst25,failures";

impl Report {
    /// Builds the statistics from the rows; NaN rows are counted as failures.
    pub fn from_rows(method: &str, rows: Vec<ReportRow>) -> Report {
        let ok: Vec<&ReportRow> = rows.iter().filter(|r| r.recovery.is_finite()).collect();
        let rec: Vec<f64> = ok.iter().map(|r| r.recovery).collect();
        let rep: Vec<f64> = ok.iter().map(|r| r.reproduction).collect();
        Report {
            method: method.to_string(),
            failures: rows.len() - ok.len(),
            recovery: summarize(&rec).ok(),
            reproduction: summarize(&rep).ok(),
            rows,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(REPORT_HEADER);
        out.push('\n');
        let fmt = |v: f64| if v.is_nan() { "NaN".to_string() } else { format!("{v:.4}") };
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.image, self.method, fmt(r.recovery), fmt(r.reproduction));
        }
        out.push_str(STATS_HEADER);
        out.push('\n');
        for (name, stats) in [("recovery_deg", &self.recovery), ("reproduction_deg", &self.reproduction)] {
            let vals = match stats {
                Some(s) => [s.median, s.mean, s.trimean, s.best25_mean, s.worst25_mean].map(fmt),
                None => std::array::from_fn(|_| "NaN".to_string()),
            };
            let _ = writeln!(out, "#STATS,{name},{},{}", vals.join(","), self.failures);
        }
        out
    }
}

fn load_entry(data: &Dataset, i: usize, cfg: &BenchConfig) -> Result<(LinearImage, Mask)> {
    let e = &data.entries[i];
    let img = imageio::load_image(data.resolve(e), cfg.black_level)?;
    let mask = imageio::valid_mask(&img, &e.polygons, cfg.dark_frac, cfg.sat_frac)?;
    Ok((img, mask))
}

fn evaluate(data: &Dataset, indices: &[usize], method: &Method, cfg: &BenchConfig) -> Vec<(usize, ReportRow)> {
    indices
        .par_iter()
        .map(|&i| {
            let entry = &data.entries[i];
            let errors = load_entry(data, i, cfg)
                .and_then(|(img, mask)| method.estimate(&img, &mask))
                .and_then(|est| Ok((recovery_error(&est, &entry.gt), reproduction_error(&est, &entry.gt)?)));
            let (recovery, reproduction) = errors.unwrap_or((f64::NAN, f64::NAN));
            (
                i,
                ReportRow {
                    image: entry.image_path.clone(),
                    recovery,
                    reproduction,
                },
            )
        })
        .collect()
}

/// Per-image errors in dataset order. Learned methods train on `k - 1` folds
/// and are tested on the held-out fold; other methods ignore `folds`.
pub fn run_benchmark(data: &Dataset, method: &Method, folds: Option<&FoldSplit>, cfg: &BenchConfig) -> Result<Report> {
    let mut rows: Vec<(usize, ReportRow)> = Vec::with_capacity(data.len());
    match method {
        Method::GpNet {
            k_ref,
            model: GpNetModel::Learn { train, loss, seed },
        } => {
            let folds = folds.ok_or_else(|| Error::Config("gpnet training needs cross-validation folds".into()))?;
            if folds.folds.iter().flatten().any(|&i| i >= data.len()) {
                return Err(Error::Config("fold index outside the dataset".into()));
            }
            for f in 0..folds.k() {
                let samples = folds
                    .train_indices(f)
                    .into_iter()
                    .map(|i| {
                        let (image, mask) = load_entry(data, i, cfg)?;
                        Ok(TrainSample {
                            image,
                            gt: data.entries[i].gt,
                            mask,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let outcome = gpnet::train_samples(&samples, train, loss, seed.wrapping_add(f as u64), None, |_, _| {})?;
                let trained = Method::GpNet {
                    k_ref: *k_ref,
                    model: GpNetModel::Trained(outcome.params),
                };
                rows.extend(evaluate(data, &folds.folds[f], &trained, cfg));
            }
        }
        _ => {
            let all: Vec<usize> = (0..data.len()).collect();
            rows = evaluate(data, &all, method, cfg);
        }
    }
    rows.sort_by_key(|(i, _)| *i);
    Ok(Report::from_rows(method.id(), rows.into_iter().map(|(_, r)| r).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ill(v: [f64; 3]) -> Illuminant {
        Illuminant::new(v).unwrap()
    }

    #[test]
    fn recovery_examples() {
        let a = ill([0.3, 0.5, 0.2]);
        assert_eq!(recovery_error(&a, &a), 0.0);
        let e = 1e-9;
        assert!(recovery_error(&ill([1.0, e, e]), &ill([e, 1.0, e])) > 89.99);
        assert!((recovery_error(&ill([1.0, 1.0, e]), &ill([1.0, e, e])) - 45.0).abs() < 1e-4);
    }

    #[test]
    fn reproduction_examples() {
        let gt = ill([2.0, 1.0, 1.0]);
        assert!(reproduction_error(&gt, &gt).unwrap() < 1e-6);
        let r = reproduction_error(&ill([1.0, 1.0, 1.0]), &gt).unwrap();
        assert!((r - (4.0 / 18f64.sqrt()).acos().to_degrees()).abs() < 1e-9);
        assert!((r - 19.4712).abs() < 1e-3);
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((s.median, s.mean, s.trimean), (3.0, 3.0, 3.0));
        assert_eq!((s.best25_mean, s.worst25_mean), (1.5, 4.5));
        let s = summarize(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!([s.median, s.mean, s.trimean, s.best25_mean, s.worst25_mean], [2.0; 5]);
        assert_eq!(summarize(&[5.0, 1.0, 4.0, 2.0, 3.0]).unwrap(), summarize(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
        assert!(matches!(summarize(&[]), Err(Error::Stats(_))));
        assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
    }

    #[test]
    fn fold_examples() {
        let f = kfold_indices(6, 3, 1).unwrap();
        assert!(f.folds.iter().all(|x| x.len() == 2));
        assert_eq!(f, kfold_indices(6, 3, 1).unwrap());
        let mut sizes: Vec<usize> = kfold_indices(7, 3, 5).unwrap().folds.iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![2, 2, 3]);
        assert!(matches!(kfold_indices(2, 3, 0), Err(Error::Split { n: 2, k: 3 })));
        let t = f.train_indices(0);
        assert_eq!(t.len(), 4);
        assert!(t.iter().all(|i| !f.folds[0].contains(i)));
    }

    #[test]
    fn method_ids_round_trip() {
        for id in METHOD_IDS {
            assert_eq!(Method::from_id(id).unwrap().id(), id);
        }
        assert!(matches!(Method::from_id("gray-magic"), Err(Error::Config(_))));
        assert!(Method::from_id("gpnet").unwrap().is_learned());
    }

    #[test]
    fn csv_layout() {
        let rows = vec![
            ReportRow {
                image: "a.png".into(),
                recovery: 1.0,
                reproduction: 2.0,
            },
            ReportRow {
                image: "b.png".into(),
                recovery: f64::NAN,
                reproduction: f64::NAN,
            },
        ];
        let r = Report::from_rows("gray-world", rows);
        assert_eq!(r.failures, 1);
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], REPORT_HEADER);
        assert_eq!(lines[1], "a.png,gray-world,1.0000,2.0000");
        assert_eq!(lines[2], "b.png,gray-world,NaN,NaN");
        assert_eq!(lines[3], STATS_HEADER);
        assert_eq!(lines[4], "#STATS,recovery_deg,1.0000,1.0000,1.0000,1.0000,1.0000,1");
        assert!(lines[5].starts_with("#STATS,reproduction_deg,2.0000"));
    }
}
