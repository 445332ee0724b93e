//! Multinomial logistic regression over sparse hashed features.
//!
//! Layout: `W` as `C × V` row-major, followed by the bias `b` of length `C`.

use super::{Batch, Input, SoftmaxSpec};
use crate::autodiff::{cross_entropy_of, softmax_in_place};
use crate::features::FeatureVector;

pub(super) fn logits(spec: &SoftmaxSpec, params: &[f64], x: &FeatureVector) -> Vec<f64> {
    let v = spec.vocab_size;
    let bias = &params[spec.num_classes * v..];
    (0..spec.num_classes)
        .map(|c| {
            let row = &params[c * v..(c + 1) * v];
            bias[c] + x.iter().map(|(i, w)| row[i] * w).sum::<f64>()
        })
        .collect()
}

pub(super) fn loss_and_gradient(spec: &SoftmaxSpec, params: &[f64], batch: &Batch) -> (f64, Vec<f64>) {
    let v = spec.vocab_size;
    let c_count = spec.num_classes;
    let mut grad = vec![0.0; params.len()];
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for ex in batch.iter() {
        let Input::Bag(x) = &ex.input else {
            unreachable!("checked by ModelSpec::check_example")
        };
        let z = logits(spec, params, x);
        total += cross_entropy_of(&z, ex.label);
        let mut p = z;
        softmax_in_place(&mut p);
        p[ex.label] -= 1.0;
        for (c, &residual) in p.iter().enumerate() {
            let r = residual * scale;
            let row = &mut grad[c * v..(c + 1) * v];
            for (i, w) in x.iter() {
                row[i] += r * w;
            }
            grad[c_count * v + c] += r;
        }
    }
    (total / batch.len() as f64, grad)
}
