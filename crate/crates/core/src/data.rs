//! Labeled datasets: the synthetic logistic generator, binary MNIST, CSV
//! export/import and seeded splits.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{sigmoid, BasisSpec};
use crate::error::{KanError, Result};
use crate::idx::{IdxTensor, MAGIC_IMAGES, MAGIC_LABELS};

/// Slack allowed on `‖x‖₂ ≤ 1`.
pub const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub d: usize,
    pub s: f64,
    pub sigma_xi2: f64,
    pub k: usize,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(KanError::Config(msg.to_string()));
        if self.n == 0 {
            return bad("synthetic n must be >= 1");
        }
        if self.d == 0 {
            return bad("synthetic d must be >= 1");
        }
        if self.k < 2 {
            return bad("synthetic k must be >= 2");
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return bad("synthetic s must be positive");
        }
        if !(self.sigma_xi2 >= 0.0 && self.sigma_xi2.is_finite()) {
            return bad("synthetic sigma_xi2 must be non-negative");
        }
        Ok(())
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic(SyntheticConfig),
    Mnist {
        images_sha256: String,
        labels_sha256: String,
        positive_digit: u8,
        negative_digit: u8,
    },
    Csv {
        path: PathBuf,
    },
    Split {
        parent: Box<Provenance>,
        seed: u64,
        fraction: f64,
        part: usize,
    },
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    x: Vec<Vec<f64>>,
    y: Vec<i8>,
    pub meta: Provenance,
}

impl SampleSet {
    /// Validates labels (±1), consistent dimensions and `‖x_i‖₂ ≤ 1`.
    pub fn new(x: Vec<Vec<f64>>, y: Vec<i8>, meta: Provenance) -> Result<Self> {
        if x.len() != y.len() {
            return Err(KanError::Input(format!(
                "{} inputs but {} labels",
                x.len(),
                y.len()
            )));
        }
        if let Some(first) = x.first() {
            let d = first.len();
            if d == 0 {
                return Err(KanError::Input("inputs must have d >= 1".into()));
            }
            for (i, xi) in x.iter().enumerate() {
                if xi.len() != d {
                    return Err(KanError::Input(format!(
                        "row {i} has dimension {}, expected {d}",
                        xi.len()
                    )));
                }
                let norm = crate::params::l2(xi);
                if !(norm <= 1.0 + NORM_TOL) {
                    return Err(KanError::Input(format!("row {i} has norm {norm} > 1")));
                }
            }
        }
        if let Some(i) = y.iter().position(|&v| v != 1 && v != -1) {
            return Err(KanError::Input(format!("label {} at row {i} is not ±1", y[i])));
        }
        Ok(SampleSet { x, y, meta })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn labels(&self) -> &[i8] {
        &self.y
    }

    #[inline]
    pub fn label(&self, i: usize) -> f64 {
        self.y[i] as f64
    }

    pub fn positive_fraction(&self) -> f64 {
        self.y.iter().filter(|&&v| v == 1).count() as f64 / self.len().max(1) as f64
    }

    /// Same samples with every label negated.
    pub fn flipped(&self) -> SampleSet {
        SampleSet {
            x: self.x.clone(),
            y: self.y.iter().map(|v| -v).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Samples at `idx`, in that order.
    pub fn select(&self, idx: &[usize], meta: Provenance) -> SampleSet {
        SampleSet {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            meta,
        }
    }

    /// Concatenation of `self` and `other` (same dimension).
    pub fn concat(&self, other: &SampleSet) -> Result<SampleSet> {
        if !self.is_empty() && !other.is_empty() && self.dim() != other.dim() {
            return Err(KanError::Input("cannot concatenate different dimensions".into()));
        }
        let mut x = self.x.clone();
        x.extend_from_slice(&other.x);
        let mut y = self.y.clone();
        y.extend_from_slice(&other.y);
        Ok(SampleSet {
            x,
            y,
            meta: Provenance::Manual,
        })
    }

    /// Copy with sample `i` replaced by `(x, y)`.
    pub fn with_replaced(&self, i: usize, x: Vec<f64>, y: i8) -> Result<SampleSet> {
        let mut xs = self.x.clone();
        let mut ys = self.y.clone();
        xs[i] = x;
        ys[i] = y;
        SampleSet::new(xs, ys, Provenance::Manual)
    }

    /// Writes `y,x_0,…` rows plus a `<path>.meta.json` provenance sidecar.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["y".to_string()];
        header.extend((0..self.dim()).map(|j| format!("x_{j}")));
        w.write_record(&header)?;
        for (xi, yi) in self.x.iter().zip(&self.y) {
            let mut row = vec![yi.to_string()];
            row.extend(xi.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| KanError::io(path, e))?;
        let side = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(&side, json).map_err(|e| KanError::io(&side, e))
    }

    /// Reads a CSV written by [`SampleSet::write_csv`]. Provenance comes
    /// from the sidecar when present.
    pub fn read_csv(path: &Path) -> Result<SampleSet> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        if header.get(0) != Some("y") {
            return Err(KanError::Format(format!(
                "{}: first CSV column must be `y`",
                path.display()
            )));
        }
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|_| {
                    KanError::Format(format!("{}: bad number `{s}` in row {line}", path.display()))
                })
            };
            let label = parse(&rec[0])?;
            y.push(if label > 0.0 { 1 } else if label < 0.0 { -1 } else { 0 });
            x.push(rec.iter().skip(1).map(parse).collect::<Result<Vec<_>>>()?);
        }
        let side = sidecar_path(path);
        let meta = if side.exists() {
            let s = std::fs::read_to_string(&side).map_err(|e| KanError::io(&side, e))?;
            serde_json::from_str(&s)?
        } else {
            Provenance::Csv {
                path: path.to_path_buf(),
            }
        };
        SampleSet::new(x, y, meta)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Latent score of the synthetic generator: `h(x) = Σ_j Σ_ℓ θ_{jℓ} b_ℓ(x_j)`
/// with a hat basis of `k` knots on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLatent {
    pub theta: Vec<Vec<f64>>,
    basis: BasisSpec,
}

impl SyntheticLatent {
    pub fn new(theta: Vec<Vec<f64>>, k: usize) -> Result<Self> {
        let basis = BasisSpec::hat(k)?;
        if theta.iter().any(|row| row.len() != k) {
            return Err(KanError::Input("latent coefficient rows must have k entries".into()));
        }
        Ok(SyntheticLatent { theta, basis })
    }

    pub fn draw<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Result<Self> {
        let theta = (0..d)
            .map(|_| (0..k).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        Self::new(theta, k)
    }

    /// Score on unscaled coordinates in `[-1, 1]^d`.
    pub fn score(&self, x_raw: &[f64]) -> f64 {
        x_raw
            .iter()
            .zip(&self.theta)
            .map(|(&v, th)| self.basis.span_jet(v).dot_values(th))
            .sum()
    }

    /// One `±1` label with `P(+1) = sigmoid(s·h(x) + ξ)`.
    pub fn draw_label<R: Rng + ?Sized>(&self, x_raw: &[f64], s: f64, noise: &Normal<f64>, rng: &mut R) -> i8 {
        let xi = noise.sample(rng);
        let prob = sigmoid(s * self.score(x_raw) + xi);
        if rng.random::<f64>() < prob {
            1
        } else {
            -1
        }
    }
}

/// Draws `θ` once, then `n` samples; inputs are stored scaled by `1/√d`.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<SampleSet> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let latent = SyntheticLatent::draw(cfg.d, cfg.k, &mut rng)?;
    let noise = Normal::new(0.0, cfg.sigma_xi2.sqrt())
        .map_err(|e| KanError::Config(format!("label noise: {e}")))?;
    let scale = 1.0 / (cfg.d as f64).sqrt();
    let mut x = Vec::with_capacity(cfg.n);
    let mut y = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let raw: Vec<f64> = (0..cfg.d).map(|_| rng.random_range(-1.0..=1.0)).collect();
        y.push(latent.draw_label(&raw, cfg.s, &noise, &mut rng));
        x.push(raw.iter().map(|v| v * scale).collect());
    }
    SampleSet::new(x, y, Provenance::Synthetic(cfg.clone()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Parsed MNIST images and labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistRaw {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl MnistRaw {
    pub fn parse(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Self> {
        let img = IdxTensor::parse_expect(image_bytes, MAGIC_IMAGES)?;
        let lab = IdxTensor::parse_expect(label_bytes, MAGIC_LABELS)?;
        if img.dims[0] != lab.dims[0] {
            return Err(KanError::Format(format!(
                "{} images but {} labels",
                img.dims[0], lab.dims[0]
            )));
        }
        Ok(MnistRaw {
            rows: img.dims[1],
            cols: img.dims[2],
            images: img.data,
            labels: lab.data,
        })
    }

    pub fn to_idx(&self) -> (Vec<u8>, Vec<u8>) {
        let n = self.labels.len();
        let img = IdxTensor {
            dims: vec![n, self.rows, self.cols],
            data: self.images.clone(),
        };
        let lab = IdxTensor {
            dims: vec![n],
            data: self.labels.clone(),
        };
        (img.to_bytes(), lab.to_bytes())
    }

    /// Keeps two digits; `positive` maps to +1 and `negative` to −1. Pixels
    /// are scaled to `[0, 1]` and each image divided by `max(1, ‖x‖₂)`.
    pub fn binary(&self, positive: u8, negative: u8, meta: Provenance) -> Result<SampleSet> {
        let d = self.rows * self.cols;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (i, &lab) in self.labels.iter().enumerate() {
            let label = if lab == positive {
                1
            } else if lab == negative {
                -1
            } else {
                continue;
            };
            let mut v: Vec<f64> = self.images[i * d..(i + 1) * d]
                .iter()
                .map(|&px| px as f64 / 255.0)
                .collect();
            let norm = crate::params::l2(&v).max(1.0);
            v.iter_mut().for_each(|t| *t /= norm);
            x.push(v);
            y.push(label);
        }
        SampleSet::new(x, y, meta)
    }
}

/// Binary MNIST from IDX files; `classes.0 → +1`, `classes.1 → −1`.
pub fn load_mnist_binary(image_path: &Path, label_path: &Path, classes: (u8, u8)) -> Result<SampleSet> {
    let ib = std::fs::read(image_path).map_err(|e| KanError::io(image_path, e))?;
    let lb = std::fs::read(label_path).map_err(|e| KanError::io(label_path, e))?;
    let raw = MnistRaw::parse(&ib, &lb)?;
    let meta = Provenance::Mnist {
        images_sha256: sha256_hex(&ib),
        labels_sha256: sha256_hex(&lb),
        positive_digit: classes.0,
        negative_digit: classes.1,
    };
    raw.binary(classes.0, classes.1, meta)
}

/// Standard MNIST file names inside a directory.
pub fn mnist_paths(dir: &Path, train: bool) -> (PathBuf, PathBuf) {
    let stem = if train { "train" } else { "t10k" };
    (
        dir.join(format!("{stem}-images-idx3-ubyte")),
        dir.join(format!("{stem}-labels-idx1-ubyte")),
    )
}

/// Size of the first part of a split: `⌈fraction·n⌉`, robust to rounding
/// in `fraction` itself.
pub fn split_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Shuffled split into parts of size `⌈fraction·n⌉` and the remainder.
pub fn split(data: &SampleSet, fraction: f64, seed: u64) -> Result<(SampleSet, SampleSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(KanError::Input(format!("split fraction {fraction} not in (0, 1)")));
    }
    let n = data.len();
    let k = split_size(n, fraction);
    if k == 0 || k == n {
        return Err(KanError::Input(format!(
            "split of n={n} at {fraction} leaves an empty part"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let meta = |part| Provenance::Split {
        parent: Box::new(data.meta.clone()),
        seed,
        fraction,
        part,
    };
    Ok((data.select(&idx[..k], meta(0)), data.select(&idx[k..], meta(1))))
}
