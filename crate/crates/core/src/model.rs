//! The state-regularized recurrent network: embedding, cell, centroids and
//! head, with the start/end token protocol.

use std::cmp::Reverse;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamSet, Tape, Tensor, Var};
use crate::cells::{
    cell_step, classify, embed, CellKind, CellParams, CellVars, HeadParams, Vocabulary,
};
use crate::error::{Error, Result};
use crate::state_reg::{argmax, tape_mix, tape_transition, CentroidSet, Similarity};

/// What the output layer predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// Accept/reject from the end-token state.
    Classify,
    /// One alphabet symbol per input step, from the raw cell output.
    PerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub cell: CellKind,
    pub hidden: usize,
    pub embed: usize,
    /// Number of centroids; `None` builds the unregularized baseline.
    pub centroids: Option<usize>,
    pub tau: f64,
    pub similarity: Similarity,
    pub head: HeadKind,
    pub vocabulary: Vocabulary,
}

impl Architecture {
    /// Classifier with `e = d`, dot similarity and `τ = 1`.
    pub fn classifier(
        cell: CellKind,
        hidden: usize,
        centroids: Option<usize>,
        alphabet: &[String],
    ) -> Result<Self> {
        Ok(Architecture {
            cell,
            hidden,
            embed: hidden,
            centroids,
            tau: 1.0,
            similarity: Similarity::Dot,
            head: HeadKind::Classify,
            vocabulary: Vocabulary::from_alphabet(alphabet)?,
        })
    }

    pub fn head_inputs(&self) -> usize {
        match (self.head, self.cell.has_memory()) {
            (HeadKind::Classify, true) => 2 * self.hidden,
            _ => self.hidden,
        }
    }

    pub fn head_outputs(&self) -> usize {
        match self.head {
            HeadKind::Classify => 2,
            HeadKind::PerStep => self.vocabulary.alphabet().len(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embed == 0 {
            return Err(Error::InvalidArgument(
                "hidden and embedding sizes must be positive".into(),
            ));
        }
        if let Some(k) = self.centroids {
            if k < 2 {
                return Err(Error::InvalidArgument(format!(
                    "need at least 2 centroids, got {k}"
                )));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.tau
            )));
        }
        if self.vocabulary.alphabet().is_empty() {
            return Err(Error::InvalidArgument("empty vocabulary".into()));
        }
        Ok(())
    }
}

/// How the next hidden state is chosen from `α`.
pub enum Selection<'r> {
    /// `h = Σ α_i s_i`.
    Mixture,
    /// `h = s_argmax`.
    Hard,
    /// `h = s_j`, `j ~ α`. Not allowed on a recording tape.
    Sample(&'r mut dyn RngCore),
}

/// Per-step record of one sequence run; step 0 is the start token.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRun {
    /// One `α` per step (start token plus each input token); empty for the
    /// unregularized baseline.
    pub alphas: Vec<Vec<f64>>,
    /// Selected centroid per step (the argmax under mixture selection).
    pub states: Vec<usize>,
    /// Hidden state after selection, per step.
    pub hidden: Vec<Vec<f64>>,
    /// Cell state per step (empty vectors for GRUs).
    pub cells: Vec<Vec<f64>>,
    pub u_end: Vec<f64>,
    pub c_end: Vec<f64>,
    /// Head output (class logits, or per-step logits flattened row-wise).
    pub logits: Vec<f64>,
}

/// Output of one plain (non-batched) step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub u: Vec<f64>,
    pub c: Vec<f64>,
    pub alpha: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrRnn {
    arch: Architecture,
    params: ParamSet,
    embedding: ParamId,
    cell: CellParams,
    centroids: Option<ParamId>,
    head: HeadParams,
}

#[derive(Debug, Clone, Copy)]
struct ModelVars {
    embedding: Var,
    cell: CellVars,
    centroids: Option<Var>,
}

struct Recurrent {
    h: Var,
    c: Option<Var>,
}

impl SrRnn {
    /// Fresh model with seeded initialization: embedding `U[-0.1, 0.1]`,
    /// cell and head per [`CellParams::init`], centroids `U[-0.5, 0.5]`.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let v = arch.vocabulary.len();
        let emb = (0..v * arch.embed)
            .map(|_| rand::Rng::gen_range(&mut rng, -0.1..=0.1))
            .collect();
        let embedding = params.add("embedding", Tensor::new(vec![v, arch.embed], emb)?);
        let cell = CellParams::init(arch.cell, arch.hidden, arch.embed, &mut params, &mut rng)?;
        let centroids = match arch.centroids {
            Some(k) => {
                let set = CentroidSet::init(k, arch.hidden, arch.tau, arch.similarity, &mut rng)?;
                Some(params.add("centroids", set.matrix().clone()))
            }
            None => None,
        };
        let head = HeadParams::init(
            arch.head_inputs(),
            arch.head_outputs(),
            arch.hidden,
            &mut params,
            &mut rng,
        )?;
        Ok(SrRnn {
            arch,
            params,
            embedding,
            cell,
            centroids,
            head,
        })
    }

    /// Reassembles a model from named parameter blocks.
    pub fn from_parts(arch: Architecture, params: ParamSet) -> Result<Self> {
        arch.validate()?;
        let find = |name: &str, shape: &[usize]| -> Result<ParamId> {
            let id = params
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if params.value(id).shape() != shape {
                return Err(Error::Checkpoint(format!("`{name}` has the wrong shape")));
            }
            Ok(id)
        };
        let embedding = find("embedding", &[arch.vocabulary.len(), arch.embed])?;
        let cell = CellParams::locate(arch.cell, arch.hidden, arch.embed, &params)?;
        let centroids = match arch.centroids {
            Some(k) => Some(find("centroids", &[arch.hidden, k])?),
            None => None,
        };
        let head = HeadParams::locate(arch.head_inputs(), arch.head_outputs(), &params)?;
        if params.len() != 1 + usize::from(centroids.is_some()) + 2 + cell_param_count(arch.cell) {
            return Err(Error::Checkpoint("unexpected parameter blocks".into()));
        }
        Ok(SrRnn {
            arch,
            params,
            embedding,
            cell,
            centroids,
            head,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.arch.vocabulary
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn is_regularized(&self) -> bool {
        self.centroids.is_some()
    }

    pub fn k(&self) -> Option<usize> {
        self.arch.centroids
    }

    pub fn set_tau(&mut self, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {tau}"
            )));
        }
        self.arch.tau = tau;
        Ok(())
    }

    /// Snapshot of the centroids, if any.
    pub fn centroid_set(&self) -> Option<CentroidSet> {
        self.centroids.map(|id| {
            CentroidSet::new(
                self.params.value(id).clone(),
                self.arch.tau,
                self.arch.similarity,
            )
            .expect("validated architecture")
        })
    }

    fn vars(&self, tape: &mut Tape<'_>) -> Result<ModelVars> {
        Ok(ModelVars {
            embedding: tape.param(self.embedding)?,
            cell: self.cell.vars(tape)?,
            centroids: self.centroids.map(|id| tape.param(id)).transpose()?,
        })
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        let size = self.arch.vocabulary.alphabet().len();
        match tokens.iter().find(|&&t| t >= size) {
            Some(&id) => Err(Error::UnknownToken { id, size }),
            None => Ok(()),
        }
    }

    fn zeros(&self, tape: &mut Tape<'_>, rows: usize) -> Result<Recurrent> {
        let d = self.arch.hidden;
        let h = tape.constant(Tensor::zeros(&[rows, d]))?;
        let c = if self.arch.cell.has_memory() {
            Some(tape.constant(Tensor::zeros(&[rows, d]))?)
        } else {
            None
        };
        Ok(Recurrent { h, c })
    }

    /// Cell application on a batch of token ids; returns `(u, c, α)` with
    /// `α` only when centroids exist and `regularize` is set.
    fn cell_and_alpha(
        &self,
        tape: &mut Tape<'_>,
        mv: &ModelVars,
        ids: &[usize],
        state: &Recurrent,
        regularize: bool,
    ) -> Result<(Var, Option<Var>, Option<Var>)> {
        let x = embed(tape, mv.embedding, ids)?;
        let (u, c) = cell_step(tape, &mv.cell, x, state.h, state.c)?;
        let alpha = match (regularize, mv.centroids) {
            (true, Some(s)) => Some(tape_transition(
                tape,
                u,
                s,
                self.arch.tau,
                self.arch.similarity,
            )?),
            _ => None,
        };
        Ok((u, c, alpha))
    }

    /// Mixture step used by the batched training paths.
    fn soft_step(
        &self,
        tape: &mut Tape<'_>,
        mv: &ModelVars,
        ids: &[usize],
        state: &Recurrent,
    ) -> Result<(Var, Recurrent)> {
        let (u, c, alpha) = self.cell_and_alpha(tape, mv, ids, state, true)?;
        let h = match (alpha, mv.centroids) {
            (Some(a), Some(s)) => tape_mix(tape, a, s)?,
            _ => u,
        };
        Ok((u, Recurrent { h, c }))
    }

    /// Batched accept/reject logits for `seqs`.
    ///
    /// Sequences are packed by decreasing length, so row `r` of the result
    /// belongs to `seqs[order[r]]`.
    pub fn classify_on_tape(
        &self,
        tape: &mut Tape<'_>,
        seqs: &[&[usize]],
    ) -> Result<(Var, Vec<usize>)> {
        if self.arch.head != HeadKind::Classify {
            return Err(Error::InvalidArgument("model has a per-step head".into()));
        }
        if seqs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for s in seqs {
            self.check_tokens(s)?;
        }
        let n = seqs.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by_key(|&i| Reverse(seqs[i].len()));
        let lens: Vec<usize> = idx.iter().map(|&i| seqs[i].len()).collect();
        let mv = self.vars(tape)?;
        let vocab = &self.arch.vocabulary;

        let zero = self.zeros(tape, n)?;
        let (_, mut state) = self.soft_step(tape, &mv, &vec![vocab.start(); n], &zero)?;
        let mut rows = n;
        let (mut us, mut cs, mut order) = (Vec::new(), Vec::new(), Vec::with_capacity(n));
        for t in 0..=lens[0] {
            let active = lens.iter().take_while(|&&l| l > t).count();
            if active < rows {
                let ending = Recurrent {
                    h: self.rows(tape, state.h, active, rows)?,
                    c: state
                        .c
                        .map(|c| self.rows(tape, c, active, rows))
                        .transpose()?,
                };
                let (u, c, _) = self.cell_and_alpha(
                    tape,
                    &mv,
                    &vec![vocab.end(); rows - active],
                    &ending,
                    false,
                )?;
                us.push(u);
                if let Some(c) = c {
                    cs.push(c);
                }
                order.extend_from_slice(&idx[active..rows]);
            }
            if active == 0 {
                break;
            }
            if active < rows {
                state = Recurrent {
                    h: self.rows(tape, state.h, 0, active)?,
                    c: state.c.map(|c| self.rows(tape, c, 0, active)).transpose()?,
                };
                rows = active;
            }
            let ids: Vec<usize> = idx[..active].iter().map(|&i| seqs[i][t]).collect();
            state = self.soft_step(tape, &mv, &ids, &state)?.1;
        }
        let u = stack(tape, &us)?;
        let c = if cs.is_empty() {
            None
        } else {
            Some(stack(tape, &cs)?)
        };
        let logits = classify(tape, &self.head, u, c)?;
        Ok((logits, order))
    }

    /// Batched per-step logits for equal-length sequences; row `t * n + i`
    /// holds step `t` of `seqs[i]`.
    pub fn per_step_on_tape(&self, tape: &mut Tape<'_>, seqs: &[&[usize]]) -> Result<Var> {
        if self.arch.head != HeadKind::PerStep {
            return Err(Error::InvalidArgument(
                "model has a classification head".into(),
            ));
        }
        if seqs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let len = seqs[0].len();
        if len == 0 || seqs.iter().any(|s| s.len() != len) {
            return Err(Error::InvalidArgument(
                "per-step batches need equal, non-zero lengths".into(),
            ));
        }
        for s in seqs {
            self.check_tokens(s)?;
        }
        let n = seqs.len();
        let mv = self.vars(tape)?;
        let zero = self.zeros(tape, n)?;
        let (_, mut state) =
            self.soft_step(tape, &mv, &vec![self.arch.vocabulary.start(); n], &zero)?;
        let mut us = Vec::with_capacity(len);
        for t in 0..len {
            let ids: Vec<usize> = seqs.iter().map(|s| s[t]).collect();
            let (u, next) = self.soft_step(tape, &mv, &ids, &state)?;
            us.push(u);
            state = next;
        }
        let u = stack(tape, &us)?;
        classify(tape, &self.head, u, None)
    }

    fn rows(&self, tape: &mut Tape<'_>, x: Var, start: usize, end: usize) -> Result<Var> {
        if start == 0 && end == tape.value(x).rows() {
            return Ok(x);
        }
        tape.slice_rows(x, start, end - start)
    }

    /// Runs one sequence through the start/token/end protocol, recording
    /// every step.
    pub fn run_sequence(
        &self,
        tokens: &[usize],
        selection: &mut Selection<'_>,
    ) -> Result<SequenceRun> {
        let mut tape = Tape::inference(&self.params);
        self.run_on_tape(&mut tape, tokens, selection)
    }

    /// Like [`SrRnn::run_sequence`] on a caller-provided tape.
    pub fn run_on_tape(
        &self,
        tape: &mut Tape<'_>,
        tokens: &[usize],
        selection: &mut Selection<'_>,
    ) -> Result<SequenceRun> {
        if matches!(selection, Selection::Sample(_)) && tape.is_recording() {
            return Err(Error::SamplingWhileRecording);
        }
        self.check_tokens(tokens)?;
        let mv = self.vars(tape)?;
        let vocab = &self.arch.vocabulary;
        let mut state = self.zeros(tape, 1)?;
        let mut run = SequenceRun {
            alphas: Vec::new(),
            states: Vec::new(),
            hidden: Vec::new(),
            cells: Vec::new(),
            u_end: Vec::new(),
            c_end: Vec::new(),
            logits: Vec::new(),
        };
        let mut us = Vec::new();
        let steps = std::iter::once(vocab.start()).chain(tokens.iter().copied());
        for (t, id) in steps.enumerate() {
            let (u, c, alpha) = self.cell_and_alpha(tape, &mv, &[id], &state, true)?;
            if t > 0 {
                us.push(u);
            }
            let h = match (alpha, mv.centroids) {
                (Some(a), Some(s)) => {
                    let probs = tape.value(a).data().to_vec();
                    let j = match selection {
                        Selection::Mixture | Selection::Hard => argmax(&probs),
                        Selection::Sample(rng) => {
                            let set = self.centroid_set().expect("regularized");
                            set.sample_state(&probs, rng)?.0
                        }
                    };
                    run.alphas.push(probs);
                    run.states.push(j);
                    match selection {
                        Selection::Mixture => tape_mix(tape, a, s)?,
                        _ => {
                            let col = self.centroid_set().expect("regularized").column(j);
                            tape.constant(Tensor::matrix(1, col.len(), col)?)?
                        }
                    }
                }
                _ => u,
            };
            run.hidden.push(tape.value(h).data().to_vec());
            run.cells
                .push(c.map(|c| tape.value(c).data().to_vec()).unwrap_or_default());
            state = Recurrent { h, c };
        }
        match self.arch.head {
            HeadKind::Classify => {
                let (u, c, _) = self.cell_and_alpha(tape, &mv, &[vocab.end()], &state, false)?;
                let logits = classify(tape, &self.head, u, c)?;
                run.u_end = tape.value(u).data().to_vec();
                run.c_end = c.map(|c| tape.value(c).data().to_vec()).unwrap_or_default();
                run.logits = tape.value(logits).data().to_vec();
            }
            HeadKind::PerStep => {
                if !us.is_empty() {
                    let u = stack(tape, &us)?;
                    let logits = classify(tape, &self.head, u, None)?;
                    run.logits = tape.value(logits).data().to_vec();
                }
            }
        }
        Ok(run)
    }

    /// One token step from an explicit configuration `(h, c)`; `c` defaults
    /// to zeros for cells with memory.
    pub fn step_from(&self, h: &[f64], c: Option<&[f64]>, token: usize) -> Result<StepOutput> {
        let size = self.arch.vocabulary.len();
        if token >= size {
            return Err(Error::UnknownToken { id: token, size });
        }
        let mut tape = Tape::inference(&self.params);
        let mv = self.vars(&mut tape)?;
        let state = self.state_from(&mut tape, h, c)?;
        let regularize = token != self.arch.vocabulary.end();
        let (u, c, alpha) = self.cell_and_alpha(&mut tape, &mv, &[token], &state, regularize)?;
        Ok(StepOutput {
            u: tape.value(u).data().to_vec(),
            c: c.map(|c| tape.value(c).data().to_vec()).unwrap_or_default(),
            alpha: alpha.map(|a| tape.value(a).data().to_vec()),
        })
    }

    /// Accept/reject logits after applying the end token to `(h, c)`.
    pub fn end_logits(&self, h: &[f64], c: Option<&[f64]>) -> Result<Vec<f64>> {
        if self.arch.head != HeadKind::Classify {
            return Err(Error::InvalidArgument("model has a per-step head".into()));
        }
        let mut tape = Tape::inference(&self.params);
        let mv = self.vars(&mut tape)?;
        let state = self.state_from(&mut tape, h, c)?;
        let (u, c, _) =
            self.cell_and_alpha(&mut tape, &mv, &[self.arch.vocabulary.end()], &state, false)?;
        let logits = classify(&mut tape, &self.head, u, c)?;
        Ok(tape.value(logits).data().to_vec())
    }

    fn state_from(&self, tape: &mut Tape<'_>, h: &[f64], c: Option<&[f64]>) -> Result<Recurrent> {
        let d = self.arch.hidden;
        if h.len() != d || c.is_some_and(|c| c.len() != d) {
            return Err(Error::shape("state", format!("expected {d} entries")));
        }
        let h = tape.constant(Tensor::matrix(1, d, h.to_vec())?)?;
        let c = if self.arch.cell.has_memory() {
            let c = c.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; d]);
            Some(tape.constant(Tensor::matrix(1, d, c)?)?)
        } else {
            None
        };
        Ok(Recurrent { h, c })
    }

    /// Accept/reject logits for each sequence, in input order.
    pub fn predict(&self, seqs: &[&[usize]]) -> Result<Vec<[f64; 2]>> {
        let mut out = vec![[0.0; 2]; seqs.len()];
        for chunk_start in (0..seqs.len()).step_by(256) {
            let chunk = &seqs[chunk_start..(chunk_start + 256).min(seqs.len())];
            let mut tape = Tape::inference(&self.params);
            let (logits, order) = self.classify_on_tape(&mut tape, chunk)?;
            let l = tape.value(logits);
            for (r, &i) in order.iter().enumerate() {
                out[chunk_start + i] = [l.row(r)[0], l.row(r)[1]];
            }
        }
        Ok(out)
    }
}

fn cell_param_count(kind: CellKind) -> usize {
    match kind {
        CellKind::Gru => 4,
        CellKind::Lstm => 3,
        CellKind::LstmP => 6,
    }
}

fn stack(tape: &mut Tape<'_>, parts: &[Var]) -> Result<Var> {
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        tape.concat_rows(parts)
    }
}
