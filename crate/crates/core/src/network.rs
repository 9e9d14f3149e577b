//! Forward computation of a cell network from named parameter slots.
//!
//! Slot names depend only on `(node, op)`, never on the architecture, so a
//! supernet store holding every slot and a stand-alone store holding one
//! path's slots are read the same way.

use rand::Rng;

use crate::archspace::{bottleneck_width, Architecture, OperationKind, SearchSpaceSpec};
use crate::error::Result;
use crate::numerics::{glorot, ParamStore, Tape, Tensor2, Var};

/// Names and shapes of the tensors backing one operation at one node.
pub fn op_slots(spec: &SearchSpaceSpec, node: usize, op: usize) -> Vec<(String, usize, usize)> {
    let w = spec.input_width;
    let prefix = format!("node{node}.op{op}");
    match spec.op_set[op] {
        OperationKind::Identity | OperationKind::Zeroize => vec![],
        OperationKind::LinearRelu | OperationKind::LinearTanh => vec![
            (format!("{prefix}.w"), w, w),
            (format!("{prefix}.b"), 1, w),
        ],
        OperationKind::Bottleneck => {
            let h = bottleneck_width(w);
            vec![
                (format!("{prefix}.w1"), w, h),
                (format!("{prefix}.b1"), 1, h),
                (format!("{prefix}.w2"), h, w),
                (format!("{prefix}.b2"), 1, w),
            ]
        }
    }
}

pub fn stem_head_slots(spec: &SearchSpaceSpec) -> Vec<(String, usize, usize)> {
    let w = spec.input_width;
    let c = spec.num_classes;
    vec![
        ("stem.w".into(), w, w),
        ("stem.b".into(), 1, w),
        ("head.w".into(), w, c),
        ("head.b".into(), 1, c),
    ]
}

/// Every slot on `arch`'s path: stem, head, and each parameterized op used.
pub fn path_slots(spec: &SearchSpaceSpec, arch: &Architecture) -> Vec<(String, usize, usize)> {
    let mut out = stem_head_slots(spec);
    for i in 0..arch.num_nodes() {
        out.extend(op_slots(spec, i, arch.op_of(i)));
    }
    out
}

/// Slots of the whole supernet.
pub fn all_slots(spec: &SearchSpaceSpec) -> Vec<(String, usize, usize)> {
    let mut out = stem_head_slots(spec);
    for i in 0..spec.num_nodes {
        for k in 0..spec.op_set.len() {
            out.extend(op_slots(spec, i, k));
        }
    }
    out
}

/// Glorot weights, zero biases.
pub fn init_slots(store: &mut ParamStore, slots: &[(String, usize, usize)], rng: &mut impl Rng) {
    for (name, r, c) in slots {
        let t = if *r == 1 {
            Tensor2::zeros(1, *c)
        } else {
            glorot(rng, *r, *c)
        };
        store.insert(name.clone(), t);
    }
}

/// Logits of `arch` on `x`, recorded on `tape`.
pub fn forward_tape(
    tape: &mut Tape,
    store: &ParamStore,
    spec: &SearchSpaceSpec,
    arch: &Architecture,
    x: Tensor2,
) -> Result<Var> {
    let affine = |tape: &mut Tape, h: Var, w: &str, b: &str| -> Result<Var> {
        let w = tape.param(store, w)?;
        let b = tape.param(store, b)?;
        let z = tape.matmul(h, w)?;
        tape.add_bias(z, b)
    };
    let rows = x.rows();
    let x = tape.leaf(x);
    let stem = affine(tape, x, "stem.w", "stem.b")?;
    let mut outputs: Vec<Var> = Vec::with_capacity(arch.num_nodes());
    for i in 0..arch.num_nodes() {
        let input = match arch.input_of(i) {
            0 => stem,
            j => outputs[j - 1],
        };
        let p = format!("node{i}.op{}", arch.op_of(i));
        let out = match spec.op_set[arch.op_of(i)] {
            OperationKind::Identity => input,
            OperationKind::Zeroize => tape.leaf(Tensor2::zeros(rows, spec.input_width)),
            OperationKind::LinearRelu => {
                let z = affine(tape, input, &format!("{p}.w"), &format!("{p}.b"))?;
                tape.relu(z)?
            }
            OperationKind::LinearTanh => {
                let z = affine(tape, input, &format!("{p}.w"), &format!("{p}.b"))?;
                tape.tanh(z)?
            }
            OperationKind::Bottleneck => {
                let z = affine(tape, input, &format!("{p}.w1"), &format!("{p}.b1"))?;
                let z = tape.relu(z)?;
                let z = affine(tape, z, &format!("{p}.w2"), &format!("{p}.b2"))?;
                tape.relu(z)?
            }
        };
        outputs.push(out);
    }
    let ends: Vec<Var> = arch.loose_ends().into_iter().map(|i| outputs[i]).collect();
    let cell = tape.mean_of(&ends)?;
    affine(tape, cell, "head.w", "head.b")
}

/// Tape-free forward pass, used for evaluation.
pub fn forward_plain(
    store: &ParamStore,
    spec: &SearchSpaceSpec,
    arch: &Architecture,
    x: &Tensor2,
) -> Result<Tensor2> {
    let affine = |h: &Tensor2, w: &str, b: &str| -> Result<Tensor2> {
        h.matmul(store.value(w)?)?.add_row(store.value(b)?)
    };
    let stem = affine(x, "stem.w", "stem.b")?;
    let mut outputs: Vec<Tensor2> = Vec::with_capacity(arch.num_nodes());
    for i in 0..arch.num_nodes() {
        let input = match arch.input_of(i) {
            0 => &stem,
            j => &outputs[j - 1],
        };
        let p = format!("node{i}.op{}", arch.op_of(i));
        let out = match spec.op_set[arch.op_of(i)] {
            OperationKind::Identity => input.clone(),
            OperationKind::Zeroize => Tensor2::zeros(x.rows(), spec.input_width),
            OperationKind::LinearRelu => {
                affine(input, &format!("{p}.w"), &format!("{p}.b"))?.map(|v| v.max(0.0))
            }
            OperationKind::LinearTanh => affine(input, &format!("{p}.w"), &format!("{p}.b"))?.map(f64::tanh),
            OperationKind::Bottleneck => {
                let z = affine(input, &format!("{p}.w1"), &format!("{p}.b1"))?.map(|v| v.max(0.0));
                affine(&z, &format!("{p}.w2"), &format!("{p}.b2"))?.map(|v| v.max(0.0))
            }
        };
        outputs.push(out);
    }
    let ends = arch.loose_ends();
    let mut cell = Tensor2::zeros(x.rows(), spec.input_width);
    for &i in &ends {
        cell.add_assign(&outputs[i]);
    }
    cell.scale_assign(1.0 / ends.len() as f64);
    affine(&cell, "head.w", "head.b")
}

/// Fraction of rows whose argmax logit equals the label.
pub fn accuracy(logits: &Tensor2, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = logits
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    correct as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::random_architecture;
    use crate::SeededRng;
    use rand::SeedableRng;

    #[test]
    fn tape_and_plain_forward_agree() {
        let spec = SearchSpaceSpec::with_defaults(6, 3);
        let mut rng = SeededRng::seed_from_u64(5);
        let mut store = ParamStore::new();
        init_slots(&mut store, &all_slots(&spec), &mut rng);
        let x = glorot(&mut rng, 10, 6);
        for _ in 0..30 {
            let arch = random_architecture(&spec, &mut rng);
            let plain = forward_plain(&store, &spec, &arch, &x).unwrap();
            let mut tape = Tape::new();
            let v = forward_tape(&mut tape, &store, &spec, &arch, x.clone()).unwrap();
            let taped = tape.value(v).unwrap();
            for (a, b) in plain.data().iter().zip(taped.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn path_slot_params_match_model_size() {
        let spec = SearchSpaceSpec::with_defaults(16, 4);
        let mut rng = SeededRng::seed_from_u64(6);
        for _ in 0..50 {
            let arch = random_architecture(&spec, &mut rng);
            let n: u64 = path_slots(&spec, &arch).iter().map(|(_, r, c)| (r * c) as u64).sum();
            assert_eq!(n, crate::archspace::model_size(&arch, &spec).unwrap().0);
        }
    }
}
