use crate::numcore::{NumError, Var};
use crate::scalar::Scalar;

/// One GRU step. `w_zr: [I+H, 2H]` holds the update and reset gates side by
/// side, `w_h: [I+H, H]` the candidate.
pub fn gru_cell<'t, T: Scalar>(
    x: Var<'t, T>,
    h: Var<'t, T>,
    w_zr: Var<'t, T>,
    b_zr: Var<'t, T>,
    w_h: Var<'t, T>,
    b_h: Var<'t, T>,
) -> Result<Var<'t, T>, NumError> {
    let hidden = h.shape()[1];
    let xh = Var::concat(&[x, h], 1)?;
    let zr = xh.linear(&w_zr, &b_zr)?.sigmoid()?;
    let z = zr.slice(1, 0, hidden)?;
    let r = zr.slice(1, hidden, hidden)?;
    let xrh = Var::concat(&[x, r.mul(&h)?], 1)?;
    let candidate = xrh.linear(&w_h, &b_h)?.tanh()?;
    z.one_minus()?.mul(&h)?.add(&z.mul(&candidate)?)
}

/// One LSTM step with gates `[f, i, o, g]` stacked in `w: [I+H, 4H]`.
pub fn lstm_cell<'t, T: Scalar>(
    x: Var<'t, T>,
    h: Var<'t, T>,
    c: Var<'t, T>,
    w: Var<'t, T>,
    b: Var<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>), NumError> {
    let hidden = h.shape()[1];
    let gates = Var::concat(&[x, h], 1)?.linear(&w, &b)?;
    let f = gates.slice(1, 0, hidden)?.sigmoid()?;
    let i = gates.slice(1, hidden, hidden)?.sigmoid()?;
    let o = gates.slice(1, 2 * hidden, hidden)?.sigmoid()?;
    let g = gates.slice(1, 3 * hidden, hidden)?.tanh()?;
    let c_next = f.mul(&c)?.add(&i.mul(&g)?)?;
    let h_next = o.mul(&c_next.tanh()?)?;
    Ok((h_next, c_next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{Tape, Tensor};

    #[test]
    fn gru_zero_params_halves_state() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2]));
        let h = tape.constant(Tensor::full(&[1, 3], 1.0f64));
        let w_zr = tape.constant(Tensor::zeros(&[5, 6]));
        let b_zr = tape.constant(Tensor::zeros(&[6]));
        let w_h = tape.constant(Tensor::zeros(&[5, 3]));
        let b_h = tape.constant(Tensor::zeros(&[3]));
        let out = gru_cell(x, h, w_zr, b_zr, w_h, b_h).unwrap();
        assert_eq!(out.value().data(), &[0.5, 0.5, 0.5]);

        let h0 = tape.constant(Tensor::zeros(&[1, 3]));
        assert_eq!(gru_cell(x, h0, w_zr, b_zr, w_h, b_h).unwrap().value().data(), &[0.0; 3]);
    }

    #[test]
    fn lstm_zero_params_closed_form() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2]));
        let h = tape.constant(Tensor::zeros(&[1, 1]));
        let w = tape.constant(Tensor::zeros(&[3, 4]));
        let b = tape.constant(Tensor::zeros(&[4]));
        let c0 = tape.constant(Tensor::zeros(&[1, 1]));
        let (h1, c1) = lstm_cell(x, h, c0, w, b).unwrap();
        assert_eq!((h1.value().data()[0], c1.value().data()[0]), (0.0, 0.0));

        let c2 = tape.constant(Tensor::full(&[1, 1], 2.0f64));
        let (h2, c2) = lstm_cell(x, h, c2, w, b).unwrap();
        assert_eq!(c2.value().data()[0], 1.0);
        assert!((h2.value().data()[0] - 0.5 * 1f64.tanh()).abs() < 1e-15);
        assert!((h2.value().data()[0] - 0.3808).abs() < 1e-4);
    }
}
