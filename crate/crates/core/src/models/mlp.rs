use rand_chacha::ChaCha8Rng;

use super::{dense, Forward, MlpSpec, RunningStats, BN_EPS};
use crate::error::Result;
use crate::tensor::{CsrMatrix, ParamId, ParamStore, Tape};

#[derive(Clone, Debug, PartialEq)]
struct Hidden {
    w: ParamId,
    b: ParamId,
    /// `(gamma, beta)` when batch-normalised.
    bn: Option<(ParamId, ParamId)>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct MlpLayout {
    hidden: Vec<Hidden>,
    out_w: ParamId,
    out_b: ParamId,
}

pub(crate) fn build(
    spec: &MlpSpec,
    n_labels: usize,
    params: &mut ParamStore,
    running: &mut Vec<RunningStats>,
    rng: &mut ChaCha8Rng,
) -> Result<MlpLayout> {
    let mut hidden = Vec::with_capacity(spec.hidden.len());
    let mut prev = spec.input_dim;
    for (i, &h) in spec.hidden.iter().enumerate() {
        let w = params.add_glorot(&format!("hidden{i}.w"), prev, h, rng)?;
        let b = params.add_constant(&format!("hidden{i}.b"), &[h], 0.0)?;
        let bn = if spec.batchnorm {
            let gamma = params.add_constant(&format!("hidden{i}.gamma"), &[h], 1.0)?;
            let beta = params.add_constant(&format!("hidden{i}.beta"), &[h], 0.0)?;
            running.push(RunningStats::new(h));
            Some((gamma, beta))
        } else {
            None
        };
        hidden.push(Hidden { w, b, bn });
        prev = h;
    }
    let out_w = params.add_glorot("out.w", prev, n_labels, rng)?;
    let out_b = params.add_constant("out.b", &[n_labels], 0.0)?;
    Ok(MlpLayout {
        hidden,
        out_w,
        out_b,
    })
}

/// Linear → [batch norm] → ReLU → dropout per hidden layer, then a linear
/// output layer.
#[allow(clippy::too_many_arguments)]
pub(crate) fn forward<'p>(
    layout: &MlpLayout,
    spec: &MlpSpec,
    params: &'p ParamStore,
    running: &[RunningStats],
    tape: &mut Tape<'p>,
    x: &CsrMatrix,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Forward> {
    // batch statistics need two samples; smaller training batches fall back
    // to the running averages and leave them untouched
    let batch_stats = train && x.rows() >= 2;
    let mut bn_stats = Vec::new();
    let mut h = None;
    for (i, layer) in layout.hidden.iter().enumerate() {
        let w = tape.param(params, layer.w);
        let b = tape.param(params, layer.b);
        let z = match h {
            None => {
                let z = tape.sparse_matmul(x, w)?;
                tape.add_bias(z, b)?
            }
            Some(prev) => dense(tape, prev, w, b)?,
        };
        let z = match layer.bn {
            Some((g, be)) => {
                let gamma = tape.param(params, g);
                let beta = tape.param(params, be);
                if batch_stats {
                    let (y, stats) = tape.batchnorm_train(z, gamma, beta, BN_EPS)?;
                    bn_stats.push(stats);
                    y
                } else {
                    let r = &running[running_index(layout, i)];
                    tape.batchnorm_eval(z, gamma, beta, &r.mean, &r.var, BN_EPS)?
                }
            }
            None => z,
        };
        let a = tape.relu(z);
        h = Some(tape.dropout(a, spec.keep, train, rng)?);
    }
    let w = tape.param(params, layout.out_w);
    let b = tape.param(params, layout.out_b);
    let logits = dense(tape, h.expect("at least one hidden layer"), w, b)?;
    Ok(Forward { logits, bn_stats })
}

/// Position of layer `i`'s running statistics.
fn running_index(layout: &MlpLayout, i: usize) -> usize {
    layout.hidden[..i].iter().filter(|l| l.bn.is_some()).count()
}
