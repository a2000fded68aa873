//! Token embedding, recurrent cells and the output head.
//!
//! Gate weights are fused column-wise: an LSTM keeps `W: [e, 4d]`,
//! `R: [d, 4d]` and `b: [4d]` with gate blocks ordered `i, f, o, g`; a GRU
//! keeps `W: [e, 3d]` (blocks `z, r, h`), `R_zr: [d, 2d]`, `R_h: [d, d]` and
//! `b: [3d]`. Inputs are batched row-wise.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    #[serde(rename = "gru")]
    Gru,
    #[serde(rename = "lstm")]
    Lstm,
    #[serde(rename = "lstm-p")]
    LstmP,
}

impl CellKind {
    pub fn has_memory(self) -> bool {
        !matches!(self, CellKind::Gru)
    }

    fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm | CellKind::LstmP => 4,
        }
    }
}

impl FromStr for CellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            "lstm-p" => Ok(CellKind::LstmP),
            other => Err(Error::InvalidArgument(format!(
                "unknown cell kind `{other}`"
            ))),
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
            CellKind::LstmP => "lstm-p",
        })
    }
}

pub const START_TOKEN: &str = "<s>";
pub const END_TOKEN: &str = "</s>";

/// Task alphabet followed by the reserved start and end tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn from_alphabet(alphabet: &[String]) -> Result<Self> {
        if let Some(bad) = alphabet
            .iter()
            .find(|a| *a == START_TOKEN || *a == END_TOKEN)
        {
            return Err(Error::InvalidArgument(format!("`{bad}` is reserved")));
        }
        let mut tokens = alphabet.to_vec();
        tokens.push(START_TOKEN.to_string());
        tokens.push(END_TOKEN.to_string());
        Ok(Vocabulary { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Task symbols only.
    pub fn alphabet(&self) -> &[String] {
        &self.tokens[..self.tokens.len() - 2]
    }

    pub fn start(&self) -> usize {
        self.tokens.len() - 2
    }

    pub fn end(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn is_reserved(&self, id: usize) -> bool {
        id >= self.start()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }
}

/// Rows of the embedding matrix for `ids`, tape-connected.
pub fn embed(tape: &mut Tape<'_>, embedding: Var, ids: &[usize]) -> Result<Var> {
    let size = tape.value(embedding).rows();
    if let Some(&id) = ids.iter().find(|&&id| id >= size) {
        return Err(Error::UnknownToken { id, size });
    }
    tape.gather_rows(embedding, ids)
}

/// Parameter handles of one recurrent cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellParams {
    pub kind: CellKind,
    pub hidden: usize,
    pub embed: usize,
    pub w: ParamId,
    pub r: ParamId,
    /// GRU candidate recurrence `R_h`.
    pub r_h: Option<ParamId>,
    pub b: ParamId,
    /// `p_i, p_f, p_o` for peephole LSTMs.
    pub peep: Option<[ParamId; 3]>,
}

fn uniform(n: usize, bound: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

impl CellParams {
    /// Weights `U[-0.1, 0.1] / √d`, forget-gate bias 1, other biases and
    /// peepholes 0.
    pub fn init(
        kind: CellKind,
        hidden: usize,
        embed: usize,
        params: &mut ParamSet,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if hidden == 0 || embed == 0 {
            return Err(Error::InvalidArgument("cell sizes must be positive".into()));
        }
        let d = hidden;
        let g = kind.gates();
        let bound = 0.1 / (d as f64).sqrt();
        let w = params.add(
            "cell.W",
            Tensor::new(vec![embed, g * d], uniform(embed * g * d, bound, rng))?,
        );
        let (r, r_h) = match kind {
            CellKind::Gru => {
                let r = params.add(
                    "cell.R_zr",
                    Tensor::new(vec![d, 2 * d], uniform(2 * d * d, bound, rng))?,
                );
                let rh = params.add(
                    "cell.R_h",
                    Tensor::new(vec![d, d], uniform(d * d, bound, rng))?,
                );
                (r, Some(rh))
            }
            _ => (
                params.add(
                    "cell.R",
                    Tensor::new(vec![d, g * d], uniform(g * d * d, bound, rng))?,
                ),
                None,
            ),
        };
        let mut bias = vec![0.0; g * d];
        if kind.has_memory() {
            bias[d..2 * d].iter_mut().for_each(|v| *v = 1.0);
        }
        let b = params.add("cell.b", Tensor::vector(bias)?);
        let peep = if kind == CellKind::LstmP {
            Some([
                params.add("cell.p_i", Tensor::zeros(&[d])),
                params.add("cell.p_f", Tensor::zeros(&[d])),
                params.add("cell.p_o", Tensor::zeros(&[d])),
            ])
        } else {
            None
        };
        Ok(CellParams {
            kind,
            hidden,
            embed,
            w,
            r,
            r_h,
            b,
            peep,
        })
    }

    /// Finds the blocks created by [`CellParams::init`] in a loaded set and
    /// checks their shapes.
    pub fn locate(kind: CellKind, hidden: usize, embed: usize, params: &ParamSet) -> Result<Self> {
        let d = hidden;
        let g = kind.gates();
        let get = |name: &str, shape: &[usize]| -> Result<ParamId> {
            let id = params
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if params.value(id).shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, expected {shape:?}",
                    params.value(id).shape()
                )));
            }
            Ok(id)
        };
        let w = get("cell.W", &[embed, g * d])?;
        let (r, r_h) = match kind {
            CellKind::Gru => (
                get("cell.R_zr", &[d, 2 * d])?,
                Some(get("cell.R_h", &[d, d])?),
            ),
            _ => (get("cell.R", &[d, g * d])?, None),
        };
        let b = get("cell.b", &[g * d])?;
        let peep = match kind {
            CellKind::LstmP => Some([
                get("cell.p_i", &[d])?,
                get("cell.p_f", &[d])?,
                get("cell.p_o", &[d])?,
            ]),
            _ => None,
        };
        Ok(CellParams {
            kind,
            hidden,
            embed,
            w,
            r,
            r_h,
            b,
            peep,
        })
    }

    pub fn vars(&self, tape: &mut Tape<'_>) -> Result<CellVars> {
        Ok(CellVars {
            kind: self.kind,
            hidden: self.hidden,
            w: tape.param(self.w)?,
            r: tape.param(self.r)?,
            r_h: self.r_h.map(|id| tape.param(id)).transpose()?,
            b: tape.param(self.b)?,
            peep: match self.peep {
                Some([i, f, o]) => Some([tape.param(i)?, tape.param(f)?, tape.param(o)?]),
                None => None,
            },
        })
    }
}

/// Tape nodes of a cell's parameters.
#[derive(Debug, Clone, Copy)]
pub struct CellVars {
    pub kind: CellKind,
    pub hidden: usize,
    pub w: Var,
    pub r: Var,
    pub r_h: Option<Var>,
    pub b: Var,
    pub peep: Option<[Var; 3]>,
}

/// One recurrent step `u_t = f(h, c, x)` for any cell kind; `c` is ignored
/// (and `None` returned) for GRUs.
pub fn cell_step(
    tape: &mut Tape<'_>,
    cv: &CellVars,
    x: Var,
    h: Var,
    c: Option<Var>,
) -> Result<(Var, Option<Var>)> {
    match cv.kind {
        CellKind::Gru => Ok((gru_step(tape, cv, x, h)?, None)),
        CellKind::Lstm | CellKind::LstmP => {
            let c =
                c.ok_or_else(|| Error::InvalidArgument("LSTM step needs a cell state".into()))?;
            let (u, c) = if cv.kind == CellKind::Lstm {
                lstm_step(tape, cv, x, h, c)?
            } else {
                lstm_p_step(tape, cv, x, h, c)?
            };
            Ok((u, Some(c)))
        }
    }
}

/// `z = σ(xW_z + hR_z + b_z)`, `r = σ(xW_r + hR_r + b_r)`,
/// `h̃ = tanh(xW_h + (r⊙h)R_h + b_h)`, `u = h + z⊙(h̃ - h)`.
pub fn gru_step(tape: &mut Tape<'_>, cv: &CellVars, x: Var, h: Var) -> Result<Var> {
    let d = cv.hidden;
    let r_h = cv
        .r_h
        .ok_or_else(|| Error::InvalidArgument("GRU step needs R_h".into()))?;
    let xw = tape.matmul(x, cv.w)?;
    let xw = tape.add_bias(xw, cv.b)?;
    let hr = tape.matmul(h, cv.r)?;
    let x_zr = tape.slice_cols(xw, 0, 2 * d)?;
    let zr = tape.add(x_zr, hr)?;
    let zr = tape.sigmoid(zr)?;
    let z = tape.slice_cols(zr, 0, d)?;
    let r = tape.slice_cols(zr, d, d)?;
    let rh = tape.mul(r, h)?;
    let rh = tape.matmul(rh, r_h)?;
    let x_h = tape.slice_cols(xw, 2 * d, d)?;
    let cand = tape.add(x_h, rh)?;
    let cand = tape.tanh(cand)?;
    let delta = tape.sub(cand, h)?;
    let gated = tape.mul(z, delta)?;
    tape.add(h, gated)
}

/// Standard LSTM: `c' = f⊙c + i⊙g`, `u = o⊙tanh(c')`.
pub fn lstm_step(tape: &mut Tape<'_>, cv: &CellVars, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    lstm_inner(tape, cv, x, h, c, None)
}

/// Peephole LSTM: `p_i⊙c` and `p_f⊙c` enter the input and forget gates,
/// `p_o⊙c'` the output gate.
pub fn lstm_p_step(
    tape: &mut Tape<'_>,
    cv: &CellVars,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let peep = cv
        .peep
        .ok_or_else(|| Error::InvalidArgument("peephole LSTM step needs p_i, p_f, p_o".into()))?;
    lstm_inner(tape, cv, x, h, c, Some(peep))
}

fn lstm_inner(
    tape: &mut Tape<'_>,
    cv: &CellVars,
    x: Var,
    h: Var,
    c: Var,
    peep: Option<[Var; 3]>,
) -> Result<(Var, Var)> {
    let d = cv.hidden;
    let xw = tape.matmul(x, cv.w)?;
    let hr = tape.matmul(h, cv.r)?;
    let pre = tape.add(xw, hr)?;
    let pre = tape.add_bias(pre, cv.b)?;
    let mut i = tape.slice_cols(pre, 0, d)?;
    let mut f = tape.slice_cols(pre, d, d)?;
    let mut o = tape.slice_cols(pre, 2 * d, d)?;
    let g = tape.slice_cols(pre, 3 * d, d)?;
    if let Some([pi, pf, _]) = peep {
        let ci = tape.mul_row(c, pi)?;
        i = tape.add(i, ci)?;
        let cf = tape.mul_row(c, pf)?;
        f = tape.add(f, cf)?;
    }
    let i = tape.sigmoid(i)?;
    let f = tape.sigmoid(f)?;
    let g = tape.tanh(g)?;
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_new = tape.add(keep, write)?;
    if let Some([_, _, po]) = peep {
        let co = tape.mul_row(c_new, po)?;
        o = tape.add(o, co)?;
    }
    let o = tape.sigmoid(o)?;
    let squashed = tape.tanh(c_new)?;
    let u = tape.mul(o, squashed)?;
    Ok((u, c_new))
}

/// Affine output layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadParams {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl HeadParams {
    pub fn init(
        inputs: usize,
        outputs: usize,
        hidden: usize,
        params: &mut ParamSet,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = 0.1 / (hidden as f64).sqrt();
        let w = params.add(
            "head.W",
            Tensor::new(vec![inputs, outputs], uniform(inputs * outputs, bound, rng))?,
        );
        let b = params.add("head.b", Tensor::zeros(&[outputs]));
        Ok(HeadParams {
            w,
            b,
            inputs,
            outputs,
        })
    }

    pub fn locate(inputs: usize, outputs: usize, params: &ParamSet) -> Result<Self> {
        let w = params
            .find("head.W")
            .ok_or_else(|| Error::Checkpoint("missing parameter `head.W`".into()))?;
        let b = params
            .find("head.b")
            .ok_or_else(|| Error::Checkpoint("missing parameter `head.b`".into()))?;
        if params.value(w).shape() != [inputs, outputs] || params.value(b).shape() != [outputs] {
            return Err(Error::Checkpoint(
                "head shape does not match the architecture".into(),
            ));
        }
        Ok(HeadParams {
            w,
            b,
            inputs,
            outputs,
        })
    }
}

/// `logits = [u ; c] W + b`, or `u W + b` when `c` is absent.
pub fn classify(tape: &mut Tape<'_>, head: &HeadParams, u: Var, c: Option<Var>) -> Result<Var> {
    let input = match c {
        Some(c) => tape.concat_cols(&[u, c])?,
        None => u,
    };
    if tape.value(input).cols() != head.inputs {
        return Err(Error::shape(
            "classify",
            format!(
                "head expects {} inputs, got {}",
                head.inputs,
                tape.value(input).cols()
            ),
        ));
    }
    let w = tape.param(head.w)?;
    let b = tape.param(head.b)?;
    let z = tape.matmul(input, w)?;
    tape.add_bias(z, b)
}
