//! Cell search space: operations, token encoding, validity, and parameter
//! counting.
//!
//! A cell has `num_nodes` intermediate nodes. Node `i` reads one input,
//! either the stem output (index 0) or node `j` (index `j + 1`, `j < i`), and
//! applies one operation. The architecture is the flat token sequence
//! `[in_0, op_0, in_1, op_1, ...]`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperationKind {
    Identity,
    Zeroize,
    LinearRelu,
    LinearTanh,
    /// `w -> w/2 -> w`, ReLU after each projection.
    Bottleneck,
}

impl OperationKind {
    pub fn param_count(self, width: usize) -> u64 {
        let w = width as u64;
        match self {
            OperationKind::Identity | OperationKind::Zeroize => 0,
            OperationKind::LinearRelu | OperationKind::LinearTanh => w * w + w,
            OperationKind::Bottleneck => {
                let h = bottleneck_width(width) as u64;
                2 * w * h + h + w
            }
        }
    }

    pub fn is_parameterized(self) -> bool {
        !matches!(self, OperationKind::Identity | OperationKind::Zeroize)
    }

    pub fn name(self) -> &'static str {
        match self {
            OperationKind::Identity => "identity",
            OperationKind::Zeroize => "zeroize",
            OperationKind::LinearRelu => "linear_relu",
            OperationKind::LinearTanh => "linear_tanh",
            OperationKind::Bottleneck => "bottleneck",
        }
    }
}

pub fn bottleneck_width(width: usize) -> usize {
    (width / 2).max(1)
}

/// Search space definition. `stem_params`/`head_params` are the fixed
/// parameter counts outside the cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpaceSpec {
    pub num_nodes: usize,
    pub op_set: Vec<OperationKind>,
    pub input_width: usize,
    pub num_classes: usize,
    pub stem_params: u64,
    pub head_params: u64,
}

impl SearchSpaceSpec {
    /// Space with the given shape; the stem is a `width x width` affine map
    /// and the head a `width x classes` affine map.
    pub fn new(num_nodes: usize, op_set: Vec<OperationKind>, input_width: usize, num_classes: usize) -> Self {
        let w = input_width as u64;
        let c = num_classes as u64;
        Self {
            num_nodes,
            op_set,
            input_width,
            num_classes,
            stem_params: w * w + w,
            head_params: w * c + c,
        }
    }

    pub fn default_ops() -> Vec<OperationKind> {
        vec![
            OperationKind::Identity,
            OperationKind::Zeroize,
            OperationKind::LinearRelu,
            OperationKind::LinearTanh,
            OperationKind::Bottleneck,
        ]
    }

    /// Four nodes over the five default operations.
    pub fn with_defaults(input_width: usize, num_classes: usize) -> Self {
        Self::new(4, Self::default_ops(), input_width, num_classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_nodes == 0 {
            return Err(Error::InvalidSpace("num_nodes must be at least 1".into()));
        }
        if self.op_set.len() < 2 {
            return Err(Error::InvalidSpace("op_set needs at least 2 operations".into()));
        }
        if !self.op_set.iter().any(|o| !o.is_parameterized()) {
            return Err(Error::InvalidSpace("op_set needs a parameter-free operation".into()));
        }
        if !self.op_set.iter().any(|o| o.is_parameterized()) {
            return Err(Error::InvalidSpace("op_set needs a parameterized operation".into()));
        }
        if self.stem_params + self.head_params == 0 {
            return Err(Error::InvalidSpace("stem_params + head_params must be positive".into()));
        }
        if self.input_width == 0 || self.num_classes < 2 {
            return Err(Error::InvalidSpace("input_width >= 1 and num_classes >= 2 required".into()));
        }
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        2 * self.num_nodes
    }

    /// Number of valid values at token position `pos`.
    pub fn vocab_at(&self, pos: usize) -> usize {
        if pos % 2 == 0 {
            pos / 2 + 1
        } else {
            self.op_set.len()
        }
    }

    /// Short stable hash over every field.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&bytes))[..16].to_string()
    }

    pub fn min_size(&self) -> u64 {
        let min_op = self.op_set.iter().map(|o| o.param_count(self.input_width)).min().unwrap_or(0);
        self.stem_params + self.head_params + self.num_nodes as u64 * min_op
    }

    pub fn max_size(&self) -> u64 {
        let max_op = self.op_set.iter().map(|o| o.param_count(self.input_width)).max().unwrap_or(0);
        self.stem_params + self.head_params + self.num_nodes as u64 * max_op
    }

    /// Every valid architecture, in lexicographic token order. Intended for
    /// small spaces (the default space has 3000 members).
    pub fn enumerate(&self) -> Vec<Architecture> {
        let len = self.seq_len();
        let mut out = Vec::new();
        let mut tokens = vec![0usize; len];
        loop {
            out.push(Architecture(tokens.clone()));
            let mut pos = len;
            loop {
                if pos == 0 {
                    return out;
                }
                pos -= 1;
                tokens[pos] += 1;
                if tokens[pos] < self.vocab_at(pos) {
                    break;
                }
                tokens[pos] = 0;
            }
        }
    }
}

/// Token sequence `[in_0, op_0, in_1, op_1, ...]`. Equality is sequence equality.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Architecture(Vec<usize>);

impl Architecture {
    /// Checks every token against `spec`.
    pub fn new(tokens: Vec<usize>, spec: &SearchSpaceSpec) -> Result<Self> {
        let arch = Architecture(tokens);
        arch.check(spec)?;
        Ok(arch)
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn num_nodes(&self) -> usize {
        self.0.len() / 2
    }

    /// Input index of node `i`: 0 is the stem, `j + 1` is node `j`.
    pub fn input_of(&self, i: usize) -> usize {
        self.0[2 * i]
    }

    pub fn op_of(&self, i: usize) -> usize {
        self.0[2 * i + 1]
    }

    /// Nodes whose output no later node consumes. The last node always is one.
    pub fn loose_ends(&self) -> Vec<usize> {
        let n = self.num_nodes();
        let mut used = vec![false; n];
        for i in 0..n {
            let inp = self.input_of(i);
            if inp > 0 {
                used[inp - 1] = true;
            }
        }
        (0..n).filter(|&i| !used[i]).collect()
    }

    pub fn check(&self, spec: &SearchSpaceSpec) -> Result<()> {
        if self.0.len() != spec.seq_len() {
            return Err(Error::WrongLength {
                expected: spec.seq_len(),
                got: self.0.len(),
            });
        }
        for (pos, &t) in self.0.iter().enumerate() {
            let vocab = spec.vocab_at(pos);
            if t >= vocab {
                return Err(Error::InvalidToken {
                    position: pos,
                    value: t as i64,
                    max: vocab - 1,
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|t| t.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// Trainable parameter count of a stand-alone instantiation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelSize(pub u64);

pub fn random_architecture(spec: &SearchSpaceSpec, rng: &mut impl Rng) -> Architecture {
    let tokens = (0..spec.seq_len())
        .map(|pos| rng.random_range(0..spec.vocab_at(pos)))
        .collect();
    Architecture(tokens)
}

pub fn model_size(arch: &Architecture, spec: &SearchSpaceSpec) -> Result<ModelSize> {
    arch.check(spec)?;
    let cell: u64 = (0..arch.num_nodes())
        .map(|i| spec.op_set[arch.op_of(i)].param_count(spec.input_width))
        .sum();
    Ok(ModelSize(spec.stem_params + spec.head_params + cell))
}

pub const DEFAULT_REJECTION_DRAWS: usize = 100_000;

/// Rejection-samples an architecture whose size lies within
/// `target·(1 ± tolerance)`.
pub fn random_architecture_with_size(
    spec: &SearchSpaceSpec,
    rng: &mut impl Rng,
    target: ModelSize,
    tolerance: f64,
    max_draws: usize,
) -> Result<Architecture> {
    let lo = target.0 as f64 * (1.0 - tolerance);
    let hi = target.0 as f64 * (1.0 + tolerance);
    let fail = || Error::RejectionBudget {
        target: target.0,
        tolerance,
        draws: max_draws,
    };
    if hi < spec.min_size() as f64 || lo > spec.max_size() as f64 {
        return Err(fail());
    }
    for _ in 0..max_draws {
        let arch = random_architecture(spec, rng);
        let size = model_size(&arch, spec)?.0 as f64;
        if size >= lo && size <= hi {
            return Ok(arch);
        }
    }
    Err(fail())
}

/// Clamps every token into its position's valid range.
pub fn validate_and_repair(tokens: &[i64], spec: &SearchSpaceSpec) -> Result<Architecture> {
    if tokens.len() != spec.seq_len() {
        return Err(Error::WrongLength {
            expected: spec.seq_len(),
            got: tokens.len(),
        });
    }
    let repaired = tokens
        .iter()
        .enumerate()
        .map(|(pos, &t)| t.clamp(0, spec.vocab_at(pos) as i64 - 1) as usize)
        .collect();
    Ok(Architecture(repaired))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchitectureFile {
    fingerprint: String,
    tokens: Vec<usize>,
}

pub fn architecture_to_json(arch: &Architecture, spec: &SearchSpaceSpec) -> String {
    serde_json::to_string(&ArchitectureFile {
        fingerprint: spec.fingerprint(),
        tokens: arch.0.clone(),
    })
    .expect("serializable")
}

/// Parses an architecture, rejecting ones recorded against a different space.
pub fn architecture_from_json(s: &str, spec: &SearchSpaceSpec) -> Result<Architecture> {
    let file: ArchitectureFile = serde_json::from_str(s)?;
    if file.fingerprint != spec.fingerprint() {
        return Err(Error::InvalidSpace(format!(
            "architecture belongs to space {}, expected {}",
            file.fingerprint,
            spec.fingerprint()
        )));
    }
    Architecture::new(file.tokens, spec)
}
