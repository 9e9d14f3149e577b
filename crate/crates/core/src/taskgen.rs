//! Synthetic teacher-labelled classification task.
//!
//! Features are standard normal. A frozen random MLP labels them; a fraction
//! `label_noise` of labels is then flipped to a uniformly chosen other class.
//! Each split is filled class by class up to an equal quota, so class counts
//! within a split differ by at most one.

use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{read_tensors, write_tensors, Tensor2};
use crate::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub seed: u64,
    pub n: usize,
    pub width: usize,
    pub classes: usize,
    pub teacher_depth: usize,
    pub teacher_hidden: usize,
    /// Std of teacher weights is `teacher_gain / sqrt(fan_in)`.
    pub teacher_gain: f64,
    pub label_noise: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 6000,
            width: 16,
            classes: 4,
            teacher_depth: 4,
            teacher_hidden: 5,
            teacher_gain: 3.0,
            label_noise: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    features: Tensor2,
    labels: Vec<usize>,
    classes: usize,
    train: Range<usize>,
    valid: Range<usize>,
    test: Range<usize>,
}

/// The frozen labelling network.
#[derive(Clone, Debug)]
pub struct Teacher {
    layers: Vec<(Tensor2, Tensor2)>,
    logit_shift: Tensor2,
}

impl Teacher {
    fn random(cfg: &TaskConfig, rng: &mut SeededRng) -> Self {
        let mut dims = vec![cfg.width];
        dims.extend(std::iter::repeat_n(cfg.teacher_hidden, cfg.teacher_depth));
        dims.push(cfg.classes);
        let layers = dims
            .windows(2)
            .map(|d| {
                let std = cfg.teacher_gain / (d[0] as f64).sqrt();
                let w: Vec<f64> = (0..d[0] * d[1])
                    .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let b: Vec<f64> = (0..d[1])
                    .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                (
                    Tensor2::from_vec(d[0], d[1], w).unwrap(),
                    Tensor2::from_vec(1, d[1], b).unwrap(),
                )
            })
            .collect();
        Self {
            layers,
            logit_shift: Tensor2::zeros(1, cfg.classes),
        }
    }

    pub fn logits(&self, x: &Tensor2) -> Tensor2 {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(w).and_then(|h| h.add_row(b)).expect("teacher shapes");
            if i < last {
                h = h.map(f64::tanh);
            }
        }
        h.add_row(&self.logit_shift).expect("teacher shapes")
    }

    pub fn labels(&self, x: &Tensor2) -> Vec<usize> {
        self.logits(x).argmax_rows()
    }
}

fn normal_rows(rng: &mut SeededRng, n: usize, width: usize) -> Tensor2 {
    let data = (0..n * width).map(|_| rng.sample(StandardNormal)).collect();
    Tensor2::from_vec(n, width, data).unwrap()
}

const MAX_TEACHER_ATTEMPTS: usize = 10;
const CALIBRATION_ROWS: usize = 4000;

/// Draws teachers until one labels a calibration sample with every class
/// within ±10% of its even share (after centering its logits).
fn balanced_teacher(cfg: &TaskConfig, rng: &mut SeededRng) -> Result<Teacher> {
    for _ in 0..MAX_TEACHER_ATTEMPTS {
        let mut teacher = Teacher::random(cfg, rng);
        let calib = normal_rows(rng, CALIBRATION_ROWS, cfg.width);
        let logits = teacher.logits(&calib);
        // Center each class logit so argmax frequencies start near even.
        let mut shift = Tensor2::zeros(1, cfg.classes);
        for r in 0..logits.rows() {
            for c in 0..cfg.classes {
                shift.set(0, c, shift.get(0, c) - logits.get(r, c) / logits.rows() as f64);
            }
        }
        teacher.logit_shift = shift;
        // A few multiplicative rounds of frequency matching on the bias.
        for _ in 0..20 {
            let labels = teacher.labels(&calib);
            let mut counts = vec![0usize; cfg.classes];
            labels.iter().for_each(|&y| counts[y] += 1);
            let share = CALIBRATION_ROWS as f64 / cfg.classes as f64;
            if counts.iter().all(|&c| (c as f64 - share).abs() <= 0.05 * share) {
                break;
            }
            for (c, &k) in counts.iter().enumerate() {
                let adj = 0.5 * (share / (k.max(1) as f64)).ln();
                teacher.logit_shift.set(0, c, teacher.logit_shift.get(0, c) + adj);
            }
        }
        let labels = teacher.labels(&calib);
        let mut counts = vec![0usize; cfg.classes];
        labels.iter().for_each(|&y| counts[y] += 1);
        let share = CALIBRATION_ROWS as f64 / cfg.classes as f64;
        let distinct = counts.iter().filter(|&&c| c > 0).count();
        if distinct >= 2 && counts.iter().all(|&c| (c as f64 - share).abs() <= 0.1 * share) {
            return Ok(teacher);
        }
    }
    Err(Error::DegenerateTeacher(MAX_TEACHER_ATTEMPTS))
}

/// Builds the task. Splits are 2/3 train, 1/6 valid, 1/6 test.
pub fn make_teacher_task(cfg: &TaskConfig) -> Result<Dataset> {
    Ok(make_teacher_task_with_teacher(cfg)?.0)
}

pub fn make_teacher_task_with_teacher(cfg: &TaskConfig) -> Result<(Dataset, Teacher)> {
    if cfg.n < 300 {
        return Err(Error::InvalidTask(format!("n must be at least 300, got {}", cfg.n)));
    }
    if cfg.classes < 2 {
        return Err(Error::InvalidTask("at least 2 classes required".into()));
    }
    if !(0.0..1.0).contains(&cfg.label_noise) || cfg.width == 0 || cfg.teacher_hidden == 0 {
        return Err(Error::InvalidTask("label_noise must lie in [0, 1) and widths must be positive".into()));
    }
    let mut rng = SeededRng::seed_from_u64(cfg.seed);
    let teacher = balanced_teacher(cfg, &mut rng)?;

    let n_valid = cfg.n / 6;
    let n_test = cfg.n / 6;
    let n_train = cfg.n - n_valid - n_test;

    let mut features = Vec::with_capacity(cfg.n * cfg.width);
    let mut labels = Vec::with_capacity(cfg.n);
    for split_n in [n_train, n_valid, n_test] {
        let mut quota: Vec<usize> = (0..cfg.classes)
            .map(|c| split_n / cfg.classes + usize::from(c < split_n % cfg.classes))
            .collect();
        let mut remaining = split_n;
        while remaining > 0 {
            let x = normal_rows(&mut rng, 256, cfg.width);
            let clean = teacher.labels(&x);
            for (r, &t) in clean.iter().enumerate() {
                let y = if rng.random::<f64>() < cfg.label_noise {
                    let other = rng.random_range(0..cfg.classes - 1);
                    if other >= t {
                        other + 1
                    } else {
                        other
                    }
                } else {
                    t
                };
                if quota[y] > 0 {
                    quota[y] -= 1;
                    remaining -= 1;
                    features.extend_from_slice(x.row(r));
                    labels.push(y);
                    if remaining == 0 {
                        break;
                    }
                }
            }
        }
    }
    let dataset = Dataset {
        features: Tensor2::from_vec(cfg.n, cfg.width, features)?,
        labels,
        classes: cfg.classes,
        train: 0..n_train,
        valid: n_train..n_train + n_valid,
        test: n_train + n_valid..cfg.n,
    };
    Ok((dataset, teacher))
}

impl Dataset {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Valid => self.valid.clone(),
            Split::Test => self.test.clone(),
        }
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.range(split).len()
    }

    pub fn features(&self) -> &Tensor2 {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Features and labels of the given absolute row indices.
    pub fn batch(&self, rows: &[usize]) -> (Tensor2, Vec<usize>) {
        (
            self.features.select_rows(rows),
            rows.iter().map(|&r| self.labels[r]).collect(),
        )
    }

    pub fn split_data(&self, split: Split) -> (Tensor2, Vec<usize>) {
        let rows: Vec<usize> = self.range(split).collect();
        self.batch(&rows)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let labels = Tensor2::from_vec(
            self.len(),
            1,
            self.labels.iter().map(|&y| y as f64).collect(),
        )?;
        let meta = Tensor2::from_vec(
            1,
            4,
            vec![
                self.classes as f64,
                self.train.len() as f64,
                self.valid.len() as f64,
                self.test.len() as f64,
            ],
        )?;
        write_tensors(
            path,
            &[("meta", &meta), ("features", &self.features), ("labels", &labels)],
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let tensors = read_tensors(path)?;
        let get = |name: &str| {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| bad(&format!("missing tensor `{name}`")))
        };
        let meta = get("meta")?;
        let features = get("features")?.clone();
        let labels: Vec<usize> = get("labels")?.data().iter().map(|&y| y as usize).collect();
        if meta.shape() != (1, 4) || labels.len() != features.rows() {
            return Err(bad("inconsistent shapes"));
        }
        let m = meta.data();
        let (classes, tr, va, te) = (m[0] as usize, m[1] as usize, m[2] as usize, m[3] as usize);
        if tr + va + te != labels.len() || labels.iter().any(|&y| y >= classes) {
            return Err(bad("inconsistent split sizes or labels"));
        }
        Ok(Self {
            features,
            labels,
            classes,
            train: 0..tr,
            valid: tr..tr + va,
            test: tr + va..tr + va + te,
        })
    }
}
