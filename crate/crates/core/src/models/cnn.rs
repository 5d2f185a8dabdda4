use rand_chacha::ChaCha8Rng;

use super::{dense, embed_padded, real_tokens, CnnSpec};
use crate::error::{Error, Result};
use crate::features::TokenSequence;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct CnnLayout {
    embedding: ParamId,
    /// `(filters w × d × f, bias f)` per window size.
    convs: Vec<(ParamId, ParamId)>,
    bottleneck_w: ParamId,
    bottleneck_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

pub(crate) fn build(
    spec: &CnnSpec,
    n_labels: usize,
    embeddings: Option<&Tensor>,
    params: &mut ParamStore,
    rng: &mut ChaCha8Rng,
) -> Result<CnnLayout> {
    let d = spec.embedding_dim;
    let embedding = add_embedding(params, spec.vocab_size, d, embeddings, rng)?;
    let mut convs = Vec::with_capacity(spec.windows.len());
    for &w in &spec.windows {
        let limit = (6.0 / (w * d + spec.filters) as f64).sqrt();
        let k = params.add_uniform(&format!("conv{w}.k"), &[w, d, spec.filters], limit, rng)?;
        let b = params.add_constant(&format!("conv{w}.b"), &[spec.filters], 0.0)?;
        convs.push((k, b));
    }
    let bottleneck_w = params.add_glorot("bottleneck.w", spec.pooled_width(), spec.bottleneck, rng)?;
    let bottleneck_b = params.add_constant("bottleneck.b", &[spec.bottleneck], 0.0)?;
    let out_w = params.add_glorot("out.w", spec.bottleneck, n_labels, rng)?;
    let out_b = params.add_constant("out.b", &[n_labels], 0.0)?;
    Ok(CnnLayout {
        embedding,
        convs,
        bottleneck_w,
        bottleneck_b,
        out_w,
        out_b,
    })
}

/// Embedding table parameter, copied from `init` or uniform in ±0.05.
pub(super) fn add_embedding(
    params: &mut ParamStore,
    vocab: usize,
    dim: usize,
    init: Option<&Tensor>,
    rng: &mut ChaCha8Rng,
) -> Result<ParamId> {
    match init {
        Some(t) => {
            if t.shape() != [vocab, dim] {
                return Err(Error::Shape(format!(
                    "embedding matrix {:?} for a {vocab} × {dim} table",
                    t.shape()
                )));
            }
            params.add("embedding", t.clone())
        }
        None => params.add_uniform("embedding", &[vocab, dim], 0.05, rng),
    }
}

/// Per document: embed, convolve with every window size, ReLU, chunked
/// max-pool, concatenate. The batch then passes a ReLU bottleneck with
/// dropout and a linear output layer.
///
/// Sequences shorter than `chunks + max_window - 1` get zero rows appended
/// so every chunk of every window size sees at least one position; trailing
/// `PAD` ids are ignored.
pub(crate) fn forward<'p>(
    layout: &CnnLayout,
    spec: &CnnSpec,
    params: &'p ParamStore,
    tape: &mut Tape<'p>,
    seqs: &[TokenSequence],
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let table = tape.param(params, layout.embedding);
    let convs: Vec<(Var, Var)> = layout
        .convs
        .iter()
        .map(|&(k, b)| (tape.param(params, k), tape.param(params, b)))
        .collect();
    let mut rows = Vec::with_capacity(seqs.len());
    for seq in seqs {
        let ids = real_tokens(seq);
        let x = embed_padded(tape, table, ids, spec.chunks + spec.max_window() - 1)?;
        let mut pooled = Vec::with_capacity(convs.len());
        for &(k, b) in &convs {
            let c = tape.conv1d(x, k, b)?;
            let c = tape.relu(c);
            let p = tape.chunked_maxpool(c, spec.chunks)?;
            pooled.push(tape.reshape(p, &[1, spec.chunks * spec.filters])?);
        }
        rows.push(tape.concat(&pooled, 1)?);
    }
    let features = tape.concat(&rows, 0)?;
    let w = tape.param(params, layout.bottleneck_w);
    let b = tape.param(params, layout.bottleneck_b);
    let z = dense(tape, features, w, b)?;
    let z = tape.relu(z);
    let z = tape.dropout(z, spec.keep, train, rng)?;
    let w = tape.param(params, layout.out_w);
    let b = tape.param(params, layout.out_b);
    dense(tape, z, w, b)
}
