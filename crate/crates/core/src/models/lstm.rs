use rand_chacha::ChaCha8Rng;

use super::cnn::add_embedding;
use super::{dense, embed_padded, real_tokens, LstmSpec};
use crate::error::Result;
use crate::features::TokenSequence;
use crate::tensor::{
    lstm_cell, orthogonal_blocks, LstmCellWeights, ParamId, ParamStore, Tape, Tensor, Var,
};

#[derive(Clone, Debug, PartialEq)]
struct Direction {
    input: ParamId,
    recurrent: ParamId,
    bias: ParamId,
    peephole: Option<(ParamId, ParamId, ParamId)>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct LstmLayout {
    embedding: ParamId,
    forward: Direction,
    backward: Direction,
    att_w: ParamId,
    att_b: ParamId,
    context: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

fn add_direction(
    params: &mut ParamStore,
    prefix: &str,
    spec: &LstmSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Direction> {
    let (d, h) = (spec.embedding_dim, spec.hidden);
    let input = params.add_glorot(&format!("{prefix}.input"), d, 4 * h, rng)?;
    let recurrent = params.add(format!("{prefix}.recurrent"), orthogonal_blocks(h, 4 * h, rng))?;
    // forget gate starts open
    let mut b = vec![0.0; 4 * h];
    b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
    let bias = params.add(format!("{prefix}.bias"), Tensor::new(vec![4 * h], b)?)?;
    let peephole = if spec.peephole {
        let mut p = |gate: &str| params.add_uniform(&format!("{prefix}.peep_{gate}"), &[1, h], 0.05, rng);
        Some((p("i")?, p("f")?, p("o")?))
    } else {
        None
    };
    Ok(Direction {
        input,
        recurrent,
        bias,
        peephole,
    })
}

pub(crate) fn build(
    spec: &LstmSpec,
    n_labels: usize,
    embeddings: Option<&Tensor>,
    params: &mut ParamStore,
    rng: &mut ChaCha8Rng,
) -> Result<LstmLayout> {
    let embedding = add_embedding(params, spec.vocab_size, spec.embedding_dim, embeddings, rng)?;
    let forward = add_direction(params, "fwd", spec, rng)?;
    let backward = add_direction(params, "bwd", spec, rng)?;
    let (h2, u) = (2 * spec.hidden, spec.attention_width());
    let att_w = params.add_glorot("attention.w", h2, u, rng)?;
    let att_b = params.add_constant("attention.b", &[u], 0.0)?;
    let context = params.add_uniform("attention.context", &[u, 1], 0.05, rng)?;
    let out_w = params.add_glorot("out.w", h2, n_labels, rng)?;
    let out_b = params.add_constant("out.b", &[n_labels], 0.0)?;
    Ok(LstmLayout {
        embedding,
        forward,
        backward,
        att_w,
        att_b,
        context,
        out_w,
        out_b,
    })
}

fn cell_weights<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParamStore,
    dir: &Direction,
    hidden: usize,
) -> LstmCellWeights {
    LstmCellWeights {
        input: tape.param(params, dir.input),
        recurrent: tape.param(params, dir.recurrent),
        bias: tape.param(params, dir.bias),
        peephole: dir
            .peephole
            .map(|(i, f, o)| (tape.param(params, i), tape.param(params, f), tape.param(params, o))),
        hidden,
    }
}

/// Runs one direction over the rows of `x` (`T × d`) and returns the hidden
/// states in time order, `T × h`.
fn run(tape: &mut Tape<'_>, x: Var, w: &LstmCellWeights, reverse: bool) -> Result<Var> {
    let steps = tape.value(x).rows();
    let mut h = tape.constant(Tensor::zeros(&[1, w.hidden]));
    let mut c = tape.constant(Tensor::zeros(&[1, w.hidden]));
    let mut states = Vec::with_capacity(steps);
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..steps).rev())
    } else {
        Box::new(0..steps)
    };
    for t in order {
        let xt = tape.slice_rows(x, t, t + 1)?;
        (h, c) = lstm_cell(tape, xt, h, c, w)?;
        states.push(h);
    }
    if reverse {
        states.reverse();
    }
    tape.concat(&states, 0)
}

/// Parameters of one forward pass, bound to the tape.
struct Bound {
    table: Var,
    fw: LstmCellWeights,
    bw: LstmCellWeights,
    att_w: Var,
    att_b: Var,
    context: Var,
}

fn bind<'p>(tape: &mut Tape<'p>, params: &'p ParamStore, layout: &LstmLayout, hidden: usize) -> Bound {
    Bound {
        table: tape.param(params, layout.embedding),
        fw: cell_weights(tape, params, &layout.forward, hidden),
        bw: cell_weights(tape, params, &layout.backward, hidden),
        att_w: tape.param(params, layout.att_w),
        att_b: tape.param(params, layout.att_b),
        context: tape.param(params, layout.context),
    }
}

/// Attention weights `1 × T` and bidirectional states `T × 2h` of one document.
fn encode(tape: &mut Tape<'_>, b: &Bound, seq: &TokenSequence) -> Result<(Var, Var)> {
    let x = embed_padded(tape, b.table, real_tokens(seq), 1)?;
    let hf = run(tape, x, &b.fw, false)?;
    let hb = run(tape, x, &b.bw, true)?;
    let states = tape.concat(&[hf, hb], 1)?;
    let steps = tape.value(states).rows();
    let u = dense(tape, states, b.att_w, b.att_b)?;
    let u = tape.tanh(u);
    let scores = tape.matmul(u, b.context)?;
    let scores = tape.reshape(scores, &[1, steps])?;
    Ok((tape.softmax_rows(scores)?, states))
}

/// Bidirectional LSTM over each document, additive attention pooling
/// `α = softmax(tanh(H·W + b)·u)`, `s = α·H`, then dropout and a linear
/// output layer. An empty document is read as one zero vector.
pub(crate) fn forward<'p>(
    layout: &LstmLayout,
    spec: &LstmSpec,
    params: &'p ParamStore,
    tape: &mut Tape<'p>,
    seqs: &[TokenSequence],
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let bound = bind(tape, params, layout, spec.hidden);
    let mut pooled = Vec::with_capacity(seqs.len());
    for seq in seqs {
        let (alpha, states) = encode(tape, &bound, seq)?;
        pooled.push(tape.matmul(alpha, states)?);
    }
    let s = tape.concat(&pooled, 0)?;
    let s = tape.dropout(s, spec.keep, train, rng)?;
    let w = tape.param(params, layout.out_w);
    let b = tape.param(params, layout.out_b);
    dense(tape, s, w, b)
}

/// Attention weights over the tokens of one document.
pub(crate) fn attention_weights(
    layout: &LstmLayout,
    spec: &LstmSpec,
    params: &ParamStore,
    seq: &TokenSequence,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params, layout, spec.hidden);
    let (alpha, _) = encode(&mut tape, &bound, seq)?;
    Ok(tape.value(alpha).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Architecture, ModelConfig};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn build_small(seed: u64) -> (LstmSpec, ParamStore, LstmLayout) {
        let spec = LstmSpec {
            vocab_size: 9,
            embedding_dim: 4,
            hidden: 3,
            attention_dim: None,
            keep: 1.0,
            peephole: false,
        };
        ModelConfig::new(Architecture::Lstm(spec.clone()), 2, seed)
            .validate()
            .unwrap();
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = build(&spec, 2, None, &mut params, &mut rng).unwrap();
        (spec, params, layout)
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let (_, params, _) = build_small(0);
        let b = params.value(params.id("fwd.bias").unwrap()).data();
        assert!(b[..3].iter().all(|&v| v == 0.0));
        assert!(b[3..6].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn step_outputs_are_twice_the_cell_size() {
        let (spec, params, layout) = build_small(1);
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &params, &layout, spec.hidden);
        let (_, states) = encode(&mut tape, &bound, &TokenSequence(vec![1, 2, 3])).unwrap();
        assert_eq!(tape.value(states).shape(), &[3, 6]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pooled_state_is_a_convex_combination(
            ids in prop::collection::vec(0usize..9, 1..7),
            seed in 0u64..50,
        ) {
            let (spec, params, layout) = build_small(seed);
            let mut tape = Tape::new();
            let bound = bind(&mut tape, &params, &layout, spec.hidden);
            let (alpha, states) = encode(&mut tape, &bound, &TokenSequence(ids)).unwrap();
            let s = tape.matmul(alpha, states).unwrap();
            let h = tape.value(states);
            for (j, &v) in tape.value(s).data().iter().enumerate() {
                let col = (0..h.rows()).map(|t| h.get(t, j));
                let lo = col.clone().fold(f64::INFINITY, f64::min);
                let hi = col.fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }

        #[test]
        fn single_step_pools_to_that_step(id in 0usize..9, seed in 0u64..50) {
            let (spec, params, layout) = build_small(seed);
            let mut tape = Tape::new();
            let bound = bind(&mut tape, &params, &layout, spec.hidden);
            let (alpha, states) = encode(&mut tape, &bound, &TokenSequence(vec![id])).unwrap();
            let s = tape.matmul(alpha, states).unwrap();
            prop_assert_eq!(tape.value(s).data(), tape.value(states).data());
        }
    }
}
