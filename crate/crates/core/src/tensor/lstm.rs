use super::{Tape, Var};
use crate::error::Result;

/// Weights of one LSTM direction. Gate blocks are laid out `[i | f | g | o]`
/// along the columns of `input`, `recurrent` and `bias`.
#[derive(Clone, Copy, Debug)]
pub struct LstmCellWeights {
    /// `d × 4h`
    pub input: Var,
    /// `h × 4h`
    pub recurrent: Var,
    /// `4h`
    pub bias: Var,
    /// Optional peephole vectors `(p_i, p_f, p_o)`, each `1 × h`.
    pub peephole: Option<(Var, Var, Var)>,
    pub hidden: usize,
}

/// One step of a vanilla LSTM on `1 × d` input and `1 × h` state.
///
/// ```text
/// i = σ(x·Wᵢ + h·Uᵢ + bᵢ)    f = σ(x·W_f + h·U_f + b_f)
/// g = tanh(x·W_g + h·U_g + b_g)
/// c' = f ∘ c + i ∘ g
/// o = σ(x·W_o + h·U_o + b_o) h' = o ∘ tanh(c')
/// ```
/// With peepholes, `i` and `f` also see `c` and `o` sees `c'`.
pub fn lstm_cell(
    tape: &mut Tape<'_>,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    w: &LstmCellWeights,
) -> Result<(Var, Var)> {
    let hs = w.hidden;
    let xi = tape.matmul(x, w.input)?;
    let hh = tape.matmul(h_prev, w.recurrent)?;
    let pre = tape.add(xi, hh)?;
    let pre = tape.add_bias(pre, w.bias)?;

    let mut pre_i = tape.slice_cols(pre, 0, hs)?;
    let mut pre_f = tape.slice_cols(pre, hs, 2 * hs)?;
    let pre_g = tape.slice_cols(pre, 2 * hs, 3 * hs)?;
    let mut pre_o = tape.slice_cols(pre, 3 * hs, 4 * hs)?;

    if let Some((p_i, p_f, _)) = w.peephole {
        let ci = tape.mul(c_prev, p_i)?;
        pre_i = tape.add(pre_i, ci)?;
        let cf = tape.mul(c_prev, p_f)?;
        pre_f = tape.add(pre_f, cf)?;
    }
    let i = tape.sigmoid(pre_i);
    let f = tape.sigmoid(pre_f);
    let g = tape.tanh(pre_g);

    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;

    if let Some((_, _, p_o)) = w.peephole {
        let co = tape.mul(c, p_o)?;
        pre_o = tape.add(pre_o, co)?;
    }
    let o = tape.sigmoid(pre_o);
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn zero_weights(tape: &mut Tape<'_>, d: usize, hs: usize, forget_bias: f64) -> LstmCellWeights {
        let mut bias = vec![0.0; 4 * hs];
        bias[hs..2 * hs].iter_mut().for_each(|b| *b = forget_bias);
        LstmCellWeights {
            input: tape.constant(Tensor::zeros(&[d, 4 * hs])),
            recurrent: tape.constant(Tensor::zeros(&[hs, 4 * hs])),
            bias: tape.constant(Tensor::new(vec![4 * hs], bias).unwrap()),
            peephole: None,
            hidden: hs,
        }
    }

    #[test]
    fn forget_bias_only_decays_cell_state() {
        let mut tape = Tape::new();
        let w = zero_weights(&mut tape, 2, 3, 1.0);
        let x = tape.constant(Tensor::new(vec![1, 2], vec![0.7, -0.2]).unwrap());
        let h = tape.constant(Tensor::zeros(&[1, 3]));
        let c = tape.constant(Tensor::new(vec![1, 3], vec![1.0, -2.0, 0.5]).unwrap());
        let (_, c1) = lstm_cell(&mut tape, x, h, c, &w).unwrap();
        let decay = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((decay - 0.7311).abs() < 1e-4);
        for (new, old) in tape.value(c1).data().iter().zip([1.0, -2.0, 0.5]) {
            assert!((new - decay * old).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_input_and_state_give_zero_output() {
        let mut tape = Tape::new();
        let w = zero_weights(&mut tape, 2, 3, 1.0);
        let x = tape.constant(Tensor::zeros(&[1, 2]));
        let h = tape.constant(Tensor::zeros(&[1, 3]));
        let c = tape.constant(Tensor::zeros(&[1, 3]));
        let (h1, c1) = lstm_cell(&mut tape, x, h, c, &w).unwrap();
        assert!(tape.value(h1).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(c1).data().iter().all(|&v| v == 0.0));
    }
}
