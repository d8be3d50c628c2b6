use rand::Rng;

use super::{centroid_of_ids, DecoderMode};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softmax, DenseParams, Matrix, Parameterized, PROB_EPS};

/// Layer sizes of a decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DecoderDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    /// Length of the exam embedding fed as conditioning.
    pub visual: usize,
}

/// Weights of the conditioned LSTM.
///
/// Each gate acts on `[x_s, V_j, E_j, h_{s-1}]`; the `V_j` and `E_j` blocks
/// exist only when the mode conditions the gates. The `init` map turns the
/// exam embedding into `h_0` and is absent in gate-conditioned mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedDecoderParams {
    pub mode: DecoderMode,
    pub dims: DecoderDims,
    pub embedding: Matrix,
    pub gate_i: DenseParams,
    pub gate_f: DenseParams,
    pub gate_o: DenseParams,
    pub gate_q: DenseParams,
    pub init: Option<DenseParams>,
    pub output: DenseParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub step: usize,
}

impl DecoderState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
            step: 0,
        }
    }
}

/// Gate activations of one step, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct GateValues {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub q: Vec<f64>,
}

/// Per-exam conditioning inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub visual: Vec<f64>,
    /// Vocabulary ids of the exam's tags.
    pub tag_ids: Vec<usize>,
}

/// One teacher-forced training sequence. `targets[s]` is the token predicted
/// after consuming `inputs[s]`; `None` positions carry no loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSequence {
    pub conditioning: Conditioning,
    pub inputs: Vec<usize>,
    pub targets: Vec<Option<usize>>,
}

impl ConditionedDecoderParams {
    pub fn gate_input_width(mode: DecoderMode, dims: &DecoderDims) -> usize {
        let extra = if mode.gate_conditioned() {
            dims.visual + dims.embed
        } else {
            0
        };
        dims.embed + extra + dims.hidden
    }

    /// Glorot-initialized weights with the output projection set to zero, so
    /// the initial next-token distribution is uniform.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, mode: DecoderMode, dims: DecoderDims) -> Self {
        let width = Self::gate_input_width(mode, &dims);
        let mut gate_f = DenseParams::glorot(rng, dims.hidden, width);
        gate_f.bias.iter_mut().for_each(|b| *b = 1.0);
        Self {
            mode,
            dims,
            embedding: Matrix::glorot(rng, dims.vocab, dims.embed),
            gate_i: DenseParams::glorot(rng, dims.hidden, width),
            gate_f,
            gate_o: DenseParams::glorot(rng, dims.hidden, width),
            gate_q: DenseParams::glorot(rng, dims.hidden, width),
            init: (!mode.gate_conditioned()).then(|| DenseParams::glorot(rng, dims.hidden, dims.visual)),
            output: DenseParams::zeros(dims.vocab, dims.hidden),
        }
    }

    pub fn zeros(mode: DecoderMode, dims: DecoderDims) -> Self {
        let width = Self::gate_input_width(mode, &dims);
        Self {
            mode,
            dims,
            embedding: Matrix::zeros(dims.vocab, dims.embed),
            gate_i: DenseParams::zeros(dims.hidden, width),
            gate_f: DenseParams::zeros(dims.hidden, width),
            gate_o: DenseParams::zeros(dims.hidden, width),
            gate_q: DenseParams::zeros(dims.hidden, width),
            init: (!mode.gate_conditioned()).then(|| DenseParams::zeros(dims.hidden, dims.visual)),
            output: DenseParams::zeros(dims.vocab, dims.hidden),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.mode, self.dims)
    }

    pub fn gates(&self) -> [&DenseParams; 4] {
        [&self.gate_i, &self.gate_f, &self.gate_o, &self.gate_q]
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        let width = Self::gate_input_width(self.mode, d);
        let check = |what: &str, p: &DenseParams, rows: usize, cols: usize| -> Result<()> {
            if p.out_dim() != rows {
                return Err(Error::dim(format!("{what} rows"), rows, p.out_dim()));
            }
            if p.in_dim() != cols {
                return Err(Error::dim(format!("{what} columns"), cols, p.in_dim()));
            }
            if p.bias.len() != rows {
                return Err(Error::dim(format!("{what} bias"), rows, p.bias.len()));
            }
            if !p.is_finite() {
                return Err(Error::NonFinite(what.to_string()));
            }
            Ok(())
        };
        if self.embedding.rows() != d.vocab || self.embedding.cols() != d.embed {
            return Err(Error::dim(
                "embedding table",
                d.vocab * d.embed,
                self.embedding.rows() * self.embedding.cols(),
            ));
        }
        if self.embedding.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding table".into()));
        }
        for (name, g) in ["gate_i", "gate_f", "gate_o", "gate_q"].iter().zip(self.gates()) {
            check(name, g, d.hidden, width)?;
        }
        match (&self.init, self.mode.gate_conditioned()) {
            (Some(p), false) => check("init", p, d.hidden, d.visual)?,
            (None, true) => {}
            (Some(_), true) => return Err(Error::Checkpoint("gate-conditioned decoder has an init map".into())),
            (None, false) => return Err(Error::Checkpoint(format!("{} decoder lacks an init map", self.mode))),
        }
        check("output", &self.output, d.vocab, d.hidden)
    }

    /// `h_0` and `c_0` for an exam.
    pub fn initial_state(&self, visual: &[f64]) -> Result<DecoderState> {
        if visual.len() != self.dims.visual {
            return Err(Error::dim("visual embedding", self.dims.visual, visual.len()));
        }
        let mut state = DecoderState::zeros(self.dims.hidden);
        if let Some(init) = &self.init {
            let mut pre = init.bias.clone();
            init.weight.matvec_acc(visual, 0, &mut pre);
            state.h = pre.iter().map(|v| v.tanh()).collect();
        }
        Ok(state)
    }
}

impl Parameterized for ConditionedDecoderParams {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = vec![("embedding".to_string(), self.embedding.as_slice())];
        for (name, g) in ["gate_i", "gate_f", "gate_o", "gate_q"].iter().zip(self.gates()) {
            out.push((format!("{name}.weight"), g.weight.as_slice()));
            out.push((format!("{name}.bias"), g.bias.as_slice()));
        }
        if let Some(init) = &self.init {
            out.push(("init.weight".into(), init.weight.as_slice()));
            out.push(("init.bias".into(), init.bias.as_slice()));
        }
        out.push(("output.weight".into(), self.output.weight.as_slice()));
        out.push(("output.bias".into(), self.output.bias.as_slice()));
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = vec![("embedding".to_string(), self.embedding.as_mut_slice())];
        for (name, g) in ["gate_i", "gate_f", "gate_o", "gate_q"].iter().zip([
            &mut self.gate_i,
            &mut self.gate_f,
            &mut self.gate_o,
            &mut self.gate_q,
        ]) {
            out.push((format!("{name}.weight"), g.weight.as_mut_slice()));
            out.push((format!("{name}.bias"), g.bias.as_mut_slice()));
        }
        if let Some(init) = &mut self.init {
            out.push(("init.weight".into(), init.weight.as_mut_slice()));
            out.push(("init.bias".into(), init.bias.as_mut_slice()));
        }
        out.push(("output.weight".into(), self.output.weight.as_mut_slice()));
        out.push(("output.bias".into(), self.output.bias.as_mut_slice()));
        out
    }
}

struct StepCache {
    token_x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: GateValues,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

/// Column offsets of the centroid and hidden-state blocks in the gate input.
fn offsets(params: &ConditionedDecoderParams) -> (usize, usize) {
    let d = &params.dims;
    if params.mode.gate_conditioned() {
        let e_off = d.embed + d.visual;
        (e_off, e_off + d.embed)
    } else {
        (d.embed, d.embed)
    }
}

/// Gate biases plus the exam-embedding contribution, which is constant over
/// a sequence and therefore computed once.
fn gate_bases(params: &ConditionedDecoderParams, visual: Option<&[f64]>) -> [Vec<f64>; 4] {
    params.gates().map(|g| {
        let mut base = g.bias.clone();
        if let Some(v) = visual {
            g.weight.matvec_acc(v, params.dims.embed, &mut base);
        }
        base
    })
}

fn cell(
    params: &ConditionedDecoderParams,
    bases: &[Vec<f64>; 4],
    x: &[f64],
    centroid: Option<&[f64]>,
    h_prev: &[f64],
    c_prev: &[f64],
) -> StepCache {
    let (e_off, h_off) = offsets(params);
    let pre = |k: usize| -> Vec<f64> {
        let w = &params.gates()[k].weight;
        let mut a = bases[k].clone();
        w.matvec_acc(x, 0, &mut a);
        if let Some(e) = centroid {
            w.matvec_acc(e, e_off, &mut a);
        }
        w.matvec_acc(h_prev, h_off, &mut a);
        a
    };
    let i: Vec<f64> = pre(0).into_iter().map(sigmoid).collect();
    let f: Vec<f64> = pre(1).into_iter().map(sigmoid).collect();
    let o: Vec<f64> = pre(2).into_iter().map(sigmoid).collect();
    let q: Vec<f64> = pre(3).into_iter().map(f64::tanh).collect();
    let c: Vec<f64> = (0..c_prev.len()).map(|k| f[k] * c_prev[k] + i[k] * q[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
    StepCache {
        token_x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates: GateValues { i, f, o, q },
        c,
        tanh_c,
        h,
    }
}

fn logits_of(params: &ConditionedDecoderParams, h: &[f64]) -> Vec<f64> {
    let mut out = params.output.bias.clone();
    params.output.weight.matvec_acc(h, 0, &mut out);
    out
}

fn check_conditioning(
    params: &ConditionedDecoderParams,
    visual: Option<&[f64]>,
    centroid: Option<&[f64]>,
) -> Result<()> {
    let d = &params.dims;
    match (params.mode.gate_conditioned(), visual, centroid) {
        (true, Some(v), Some(e)) => {
            if v.len() != d.visual {
                return Err(Error::dim("visual embedding", d.visual, v.len()));
            }
            if e.len() != d.embed {
                return Err(Error::dim("tag centroid", d.embed, e.len()));
            }
            Ok(())
        }
        (false, None, None) => Ok(()),
        (true, ..) => Err(Error::InvalidParameter(
            "gate-conditioned step needs both the exam embedding and the tag centroid".into(),
        )),
        (false, ..) => Err(Error::InvalidParameter(format!(
            "{} steps take no per-step conditioning",
            params.mode
        ))),
    }
}

/// One recurrence step, also returning the gate activations.
pub fn lstm_step_traced(
    params: &ConditionedDecoderParams,
    state: &DecoderState,
    x: &[f64],
    visual: Option<&[f64]>,
    centroid: Option<&[f64]>,
) -> Result<(DecoderState, Vec<f64>, GateValues)> {
    let d = &params.dims;
    if x.len() != d.embed {
        return Err(Error::dim("word embedding", d.embed, x.len()));
    }
    if state.h.len() != d.hidden || state.c.len() != d.hidden {
        return Err(Error::dim("decoder state", d.hidden, state.h.len().max(state.c.len())));
    }
    check_conditioning(params, visual, centroid)?;
    let bases = gate_bases(params, visual);
    let cache = cell(params, &bases, x, centroid, &state.h, &state.c);
    let logits = logits_of(params, &cache.h);
    let next = DecoderState {
        h: cache.h,
        c: cache.c,
        step: state.step + 1,
    };
    Ok((next, logits, cache.gates))
}

/// `(next state, logits)` for one step.
pub fn lstm_step(
    params: &ConditionedDecoderParams,
    state: &DecoderState,
    x: &[f64],
    visual: Option<&[f64]>,
    centroid: Option<&[f64]>,
) -> Result<(DecoderState, Vec<f64>)> {
    lstm_step_traced(params, state, x, visual, centroid).map(|(s, l, _)| (s, l))
}

/// A decoder bound to one exam's conditioning, stepping token by token.
pub(crate) struct Stepper<'a> {
    params: &'a ConditionedDecoderParams,
    bases: [Vec<f64>; 4],
    centroid: Option<Vec<f64>>,
    pub state: DecoderState,
}

impl<'a> Stepper<'a> {
    pub fn new(params: &'a ConditionedDecoderParams, cond: &Conditioning) -> Result<Self> {
        if params.mode.uses_tags() && cond.tag_ids.is_empty() {
            return Err(Error::Empty(format!("{} decoding needs at least one tag", params.mode)));
        }
        let state = params.initial_state(&cond.visual)?;
        let gated = params.mode.gate_conditioned();
        let centroid = if gated {
            Some(centroid_of_ids(&params.embedding, &cond.tag_ids)?)
        } else {
            None
        };
        Ok(Self {
            params,
            bases: gate_bases(params, gated.then_some(cond.visual.as_slice())),
            centroid,
            state,
        })
    }

    /// Consumes a token and returns the next-token logits.
    pub fn feed(&mut self, token: usize) -> Vec<f64> {
        let cache = self.advance(token);
        logits_of(self.params, &cache.h)
    }

    fn advance(&mut self, token: usize) -> StepCache {
        let x = self.params.embedding.row(token);
        let cache = cell(
            self.params,
            &self.bases,
            x,
            self.centroid.as_deref(),
            &self.state.h,
            &self.state.c,
        );
        self.state.h.clone_from(&cache.h);
        self.state.c.clone_from(&cache.c);
        self.state.step += 1;
        cache
    }
}

fn check_sequence(params: &ConditionedDecoderParams, seq: &TrainingSequence) -> Result<()> {
    if seq.inputs.len() != seq.targets.len() {
        return Err(Error::dim("sequence targets", seq.inputs.len(), seq.targets.len()));
    }
    let vocab = params.dims.vocab;
    let mut ids = seq
        .inputs
        .iter()
        .chain(seq.targets.iter().flatten())
        .chain(&seq.conditioning.tag_ids);
    if let Some(&t) = ids.find(|&&t| t >= vocab) {
        return Err(Error::InvalidParameter(format!(
            "token id {t} outside vocabulary of {vocab}"
        )));
    }
    Ok(())
}

struct Forward {
    h0: Vec<f64>,
    centroid: Option<Vec<f64>>,
    steps: Vec<StepCache>,
    probs: Vec<Option<Vec<f64>>>,
    loss: f64,
    count: usize,
}

fn forward(params: &ConditionedDecoderParams, seq: &TrainingSequence) -> Result<Forward> {
    check_sequence(params, seq)?;
    let mut stepper = Stepper::new(params, &seq.conditioning)?;
    let h0 = stepper.state.h.clone();
    let mut steps = Vec::with_capacity(seq.inputs.len());
    let mut probs = Vec::with_capacity(seq.inputs.len());
    let (mut loss, mut count) = (0.0, 0);
    for (&tok, target) in seq.inputs.iter().zip(&seq.targets) {
        let cache = stepper.advance(tok);
        match target {
            Some(t) => {
                let p = softmax(&logits_of(params, &cache.h));
                loss -= p[*t].max(PROB_EPS * PROB_EPS).ln();
                count += 1;
                probs.push(Some(p));
            }
            None => probs.push(None),
        }
        steps.push(cache);
    }
    Ok(Forward {
        h0,
        centroid: stepper.centroid,
        steps,
        probs,
        loss,
        count,
    })
}

/// Summed cross-entropy over the supervised positions and their count.
pub fn sequence_loss(params: &ConditionedDecoderParams, seq: &TrainingSequence) -> Result<(f64, usize)> {
    forward(params, seq).map(|f| (f.loss, f.count))
}

/// Like [`sequence_loss`], additionally accumulating `scale ·` the gradient
/// of the summed loss into `grads` by backpropagation through time.
pub fn sequence_loss_and_grad(
    params: &ConditionedDecoderParams,
    seq: &TrainingSequence,
    scale: f64,
    grads: &mut ConditionedDecoderParams,
) -> Result<(f64, usize)> {
    let fwd = forward(params, seq)?;
    let d = params.dims;
    let (e_off, h_off) = offsets(params);

    let mut dh_next = vec![0.0; d.hidden];
    let mut dc_next = vec![0.0; d.hidden];
    let mut d_centroid = vec![0.0; d.embed];
    let mut d_visual_pre: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; d.hidden]);

    for s in (0..fwd.steps.len()).rev() {
        let st = &fwd.steps[s];
        let mut dh = std::mem::replace(&mut dh_next, vec![0.0; d.hidden]);
        if let (Some(p), Some(t)) = (&fwd.probs[s], seq.targets[s]) {
            let mut dl: Vec<f64> = p.iter().map(|v| v * scale).collect();
            dl[t] -= scale;
            grads.output.weight.add_outer(&dl, &st.h, 0);
            grads.output.bias.iter_mut().zip(&dl).for_each(|(b, g)| *b += g);
            params.output.weight.matvec_t_acc(&dl, &mut dh);
        }
        let g = &st.gates;
        let mut da: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; d.hidden]);
        for k in 0..d.hidden {
            let dc = dc_next[k] + dh[k] * g.o[k] * (1.0 - st.tanh_c[k] * st.tanh_c[k]);
            let d_o = dh[k] * st.tanh_c[k];
            da[0][k] = dc * g.q[k] * g.i[k] * (1.0 - g.i[k]);
            da[1][k] = dc * st.c_prev[k] * g.f[k] * (1.0 - g.f[k]);
            da[2][k] = d_o * g.o[k] * (1.0 - g.o[k]);
            da[3][k] = dc * g.i[k] * (1.0 - g.q[k] * g.q[k]);
            dc_next[k] = dc * g.f[k];
        }

        let mut dx = vec![0.0; d.embed];
        let grad_gates = [
            &mut grads.gate_i,
            &mut grads.gate_f,
            &mut grads.gate_o,
            &mut grads.gate_q,
        ];
        for (k, (gp, pp)) in grad_gates.into_iter().zip(params.gates()).enumerate() {
            let a = &da[k];
            gp.weight.add_outer(a, &st.token_x, 0);
            gp.weight.add_outer(a, &st.h_prev, h_off);
            gp.bias.iter_mut().zip(a).for_each(|(b, g)| *b += g);
            pp.weight.matvec_t_range_acc(a, 0, &mut dx);
            pp.weight.matvec_t_range_acc(a, h_off, &mut dh_next);
            if let Some(e) = &fwd.centroid {
                gp.weight.add_outer(a, e, e_off);
                pp.weight.matvec_t_range_acc(a, e_off, &mut d_centroid);
                d_visual_pre[k].iter_mut().zip(a).for_each(|(acc, g)| *acc += g);
            }
        }
        let tok = seq.inputs[s];
        grads
            .embedding
            .row_mut(tok)
            .iter_mut()
            .zip(&dx)
            .for_each(|(w, g)| *w += g);
    }

    if let Some(init) = grads.init.as_mut() {
        let da: Vec<f64> = dh_next.iter().zip(&fwd.h0).map(|(g, h)| g * (1.0 - h * h)).collect();
        init.weight.add_outer(&da, &seq.conditioning.visual, 0);
        init.bias.iter_mut().zip(&da).for_each(|(b, g)| *b += g);
    }
    if fwd.centroid.is_some() {
        let grad_gates = [
            &mut grads.gate_i,
            &mut grads.gate_f,
            &mut grads.gate_o,
            &mut grads.gate_q,
        ];
        for (gp, a) in grad_gates.into_iter().zip(&d_visual_pre) {
            gp.weight.add_outer(a, &seq.conditioning.visual, d.embed);
        }
        let n = seq.conditioning.tag_ids.len() as f64;
        for &t in &seq.conditioning.tag_ids {
            grads
                .embedding
                .row_mut(t)
                .iter_mut()
                .zip(&d_centroid)
                .for_each(|(w, g)| *w += g / n);
        }
    }
    Ok((fwd.loss, fwd.count))
}
