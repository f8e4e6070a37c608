//! Encoders, the triplet message-passing processor, decoders and the
//! step loop. Activations are batched as `[B, n, ...]`.
//!
//! Every edge input is a scalar per pair, so its encoding is the rank-one
//! map `v_ij * w + b`. A layer applied to an edge encoding is therefore
//! evaluated as `v_ij * (w W) + b W` without forming `[B, n, n, d]` inputs.

use nar_autodiff::nn::{linear, mlp};
use nar_autodiff::{ParamVars, Scalar, Tensor, Var, LAYER_NORM_EPS};

use super::inputs::BatchInputs;
use super::{Mode, ModelConfig};
use crate::error::{Error, Result};
use crate::task::{Kind, ProblemInstance};

/// A sum of scalar pair features, each with its own rank-one encoder.
#[derive(Clone)]
pub struct EdgeTerms<'t, T: Scalar> {
    /// `([B, n, n, 1] values, [1, d] encoder weight)`.
    terms: Vec<(Var<'t, T>, Var<'t, T>)>,
    /// Sum of the encoder biases, `[1, d]`.
    bias: Option<Var<'t, T>>,
}

impl<'t, T: Scalar> EdgeTerms<'t, T> {
    pub fn empty() -> Self {
        EdgeTerms { terms: Vec::new(), bias: None }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty() && self.bias.is_none()
    }

    /// Adds the encoding `values * w + b` of one scalar feature.
    pub fn push(&mut self, values: Var<'t, T>, w: &Var<'t, T>, b: &Var<'t, T>) -> Result<()> {
        let b = b.reshape(vec![1, b.shape()[0]])?;
        self.bias = Some(match self.bias.take() {
            Some(acc) => acc.add(&b)?,
            None => b,
        });
        self.terms.push((values, w.clone()));
        Ok(())
    }

    /// The encoding times `w` (`[d, k]`): a `[B, n, n, k]` pair part and
    /// the `[1, k]` part shared by every pair.
    pub fn project(&self, w: &Var<'t, T>) -> Result<Projection<'t, T>> {
        let mut pair: Option<Var<'t, T>> = None;
        for (values, enc) in &self.terms {
            let term = values.mul(&enc.matmul(w)?)?;
            pair = add_opt(pair, Some(term))?;
        }
        let shared = match &self.bias {
            Some(b) => Some(b.matmul(w)?),
            None => None,
        };
        Ok(Projection { pair, shared })
    }

    /// The encoding itself, `[B, n, n, d]`.
    pub fn materialize(&self) -> Result<Option<Var<'t, T>>> {
        let mut acc: Option<Var<'t, T>> = None;
        for (values, enc) in &self.terms {
            let term = values.mul(enc)?;
            acc = Some(match acc {
                Some(a) => a.add(&term)?,
                None => term,
            });
        }
        match (acc, self.bias.as_ref()) {
            (Some(a), Some(b)) => Ok(Some(a.add(b)?)),
            (a, _) => Ok(a),
        }
    }
}

/// An edge encoding after a linear map.
#[derive(Clone)]
pub struct Projection<'t, T: Scalar> {
    /// `[B, n, n, k]`.
    pub pair: Option<Var<'t, T>>,
    /// `[1, k]`, identical for every pair.
    pub shared: Option<Var<'t, T>>,
}

impl<'t, T: Scalar> Projection<'t, T> {
    fn none() -> Self {
        Projection { pair: None, shared: None }
    }

    fn plus(&self, other: &Self) -> Result<Self> {
        Ok(Projection {
            pair: add_opt(self.pair.clone(), other.pair.clone())?,
            shared: add_opt(self.shared.clone(), other.shared.clone())?,
        })
    }
}

/// Encoded inputs of a batch.
#[derive(Clone)]
pub struct Encoded<'t, T: Scalar> {
    pub batch: usize,
    pub n: usize,
    pub d: usize,
    /// `[B, n, d]`.
    pub x_enc: Var<'t, T>,
    pub e_enc: EdgeTerms<'t, T>,
    /// `[B, d]`.
    pub g_enc: Option<Var<'t, T>>,
}

/// Hint decoder outputs for one step.
#[derive(Clone)]
pub struct HintLogits<'t, T: Scalar> {
    /// `[B, n, n]`.
    pub pred_h: Var<'t, T>,
    /// `[B, n]`.
    pub i: Var<'t, T>,
    /// `[B, n]`.
    pub j: Var<'t, T>,
}

/// What a processor step receives from the previous step's decoders.
#[derive(Clone)]
pub struct Feedback<'t, T: Scalar> {
    /// `[B, n, d]`, added to the node encodings.
    pub node: Option<Var<'t, T>>,
    /// Added to the edge encodings.
    pub edge: EdgeTerms<'t, T>,
}

impl<'t, T: Scalar> Feedback<'t, T> {
    pub fn none() -> Self {
        Feedback { node: None, edge: EdgeTerms::empty() }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RolloutOptions {
    /// Decode the output after every step, for probes.
    pub trace_outputs: bool,
    /// Overrides the step count of the policy.
    pub steps: Option<usize>,
}

/// Result of a rollout.
pub struct Rollout<'t, T: Scalar> {
    /// Output logits after the last step.
    pub output: Var<'t, T>,
    /// `h^1 .. h^T`, each `[B, n, d]`.
    pub hs: Vec<Var<'t, T>>,
    /// Output logits after every step when traced.
    pub step_outputs: Vec<Var<'t, T>>,
    /// Hint logits decoded from `h^1 .. h^T` (supervised mode).
    pub hints: Vec<HintLogits<'t, T>>,
    /// Channel probabilities consumed by steps `1 .. T` (latent mode).
    pub channels: Vec<Var<'t, T>>,
    pub encoded: Encoded<'t, T>,
}

fn constant<'t, T: Scalar>(like: &Var<'t, T>, t: &Tensor) -> Var<'t, T> {
    like.tape().constant(t.cast())
}

fn add_opt<'t, T: Scalar>(a: Option<Var<'t, T>>, b: Option<Var<'t, T>>) -> Result<Option<Var<'t, T>>> {
    Ok(match (a, b) {
        (Some(a), Some(b)) => Some(a.add(&b)?),
        (a, None) => a,
        (None, b) => b,
    })
}

pub fn encode_inputs<'t, T: Scalar>(
    p: &ParamVars<'t, T>,
    inputs: &BatchInputs,
    cfg: &ModelConfig,
) -> Result<Encoded<'t, T>> {
    let (b, n, d) = (inputs.batch, inputs.n, cfg.hidden_dim);
    let anchor = p.get("proc.ln.gamma")?;
    let mut x: Option<Var<'t, T>> = None;
    for (path, values) in &inputs.node {
        let e = linear(p, path, &constant(anchor, values))?;
        x = add_opt(x, Some(e))?;
    }
    let x_enc = match x {
        Some(x) => x,
        None => anchor.tape().constant(Tensor::zeros(vec![b, n, d])),
    };
    let mut e_enc = EdgeTerms::empty();
    for (path, values) in &inputs.edge {
        e_enc.push(
            constant(anchor, values),
            p.get(&format!("{path}.w"))?,
            p.get(&format!("{path}.b"))?,
        )?;
    }
    let mut g = None;
    for (path, values) in &inputs.graph {
        g = add_opt(g, Some(linear(p, path, &constant(anchor, values))?))?;
    }
    Ok(Encoded { batch: b, n, d, x_enc, e_enc, g_enc: g })
}

/// Projections of the fixed encodings, shared by every step of a rollout.
struct Cache<'t, T: Scalar> {
    /// Graph term plus bias of the message layer, `[B, 1, d]` or `[d]`.
    msg_const: Var<'t, T>,
    msg_edge: Projection<'t, T>,
    tri_const: Var<'t, T>,
    tri_edge: [Projection<'t, T>; 3],
    /// `l1.b + out.b` of the fused message readout.
    readout_bias: Var<'t, T>,
    dec_out_edge: Projection<'t, T>,
    dec_channel_edge: Projection<'t, T>,
}

struct Net<'a, 't, T: Scalar> {
    p: &'a ParamVars<'t, T>,
    cfg: &'a ModelConfig,
    enc: &'a Encoded<'t, T>,
    kind: Kind,
    cache: Cache<'t, T>,
}

fn graph_term<'t, T: Scalar>(
    p: &ParamVars<'t, T>,
    enc: &Encoded<'t, T>,
    w: &str,
    b: &str,
) -> Result<Var<'t, T>> {
    let bias = p.get(b)?;
    match &enc.g_enc {
        Some(g) => {
            let k = bias.shape()[0];
            Ok(g.matmul(p.get(w)?)?.add(bias)?.reshape(vec![enc.batch, 1, k])?)
        }
        None => Ok(bias.clone()),
    }
}

fn project_if<'t, T: Scalar>(p: &ParamVars<'t, T>, e: &EdgeTerms<'t, T>, w: &str) -> Result<Projection<'t, T>> {
    if !p.contains(w) || e.is_empty() {
        return Ok(Projection::none());
    }
    e.project(p.get(w)?)
}

/// `x W + c` where `c` is a bias vector or a per-graph `[B, 1, k]` term,
/// plus an optional shared `[1, k]` edge term.
fn node_term<'t, T: Scalar>(
    x: &Var<'t, T>,
    w: &Var<'t, T>,
    c: &Var<'t, T>,
    shared: Option<&Var<'t, T>>,
) -> Result<Var<'t, T>> {
    let mut y = if c.shape().len() == 1 {
        x.linear(w, Some(c))?
    } else {
        x.matmul(w)?.add(c)?
    };
    if let Some(s) = shared {
        y = y.add(s)?;
    }
    Ok(y)
}

impl<'a, 't, T: Scalar> Net<'a, 't, T> {
    fn new(p: &'a ParamVars<'t, T>, cfg: &'a ModelConfig, enc: &'a Encoded<'t, T>, kind: Kind) -> Result<Self> {
        let e = &enc.e_enc;
        let cache = Cache {
            msg_const: graph_term(p, enc, "proc.msg.l0.graph.w", "proc.msg.l0.b")?,
            msg_edge: project_if(p, e, "proc.msg.l0.edge.w")?,
            tri_const: graph_term(p, enc, "proc.tri.graph.w", "proc.tri.b")?,
            tri_edge: [
                project_if(p, e, "proc.tri.e1.w")?,
                project_if(p, e, "proc.tri.e2.w")?,
                project_if(p, e, "proc.tri.e3.w")?,
            ],
            readout_bias: p.get("proc.msg.l1.b")?.add(p.get("proc.tri.out.b")?)?,
            dec_out_edge: project_if(p, e, "dec.out.l0.edge.w")?,
            dec_channel_edge: project_if(p, e, "dec.channel.l0.edge.w")?,
        };
        Ok(Net { p, cfg, enc, kind, cache })
    }

    fn shape4(&self, k: usize) -> Vec<usize> {
        vec![self.enc.batch, self.enc.n, self.enc.n, k]
    }

    /// Broadcasts `[B, n, k]` node terms to pairs: `a_i + s_j`.
    fn pairs(&self, a: &Var<'t, T>, s: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (b, n, k) = (self.enc.batch, self.enc.n, a.shape()[2]);
        Ok(a.reshape(vec![b, n, 1, k])?.add(&s.reshape(vec![b, 1, n, k])?)?)
    }

    fn step(&self, fb: &Feedback<'t, T>, h_prev: &Var<'t, T>) -> Result<Var<'t, T>> {
        let p = self.p;
        let (d, t) = (self.cfg.hidden_dim, self.cfg.triplet_dim);
        let x = match &fb.node {
            Some(f) => self.enc.x_enc.add(f)?,
            None => self.enc.x_enc.clone(),
        };
        let z = Var::concat(&[&x, h_prev])?;

        let edge = self.cache.msg_edge.plus(&project_if(p, &fb.edge, "proc.msg.l0.edge.w")?)?;
        let recv = node_term(&z, p.get("proc.msg.l0.recv.w")?, &self.cache.msg_const, edge.shared.as_ref())?;
        let send = z.matmul(p.get("proc.msg.l0.send.w")?)?;
        let mut pre = self.pairs(&recv, &send)?;
        if let Some(e) = &edge.pair {
            pre = pre.add(e)?;
        }

        let mut te = Vec::with_capacity(3);
        for (k, base) in self.cache.tri_edge.iter().enumerate() {
            te.push(base.plus(&project_if(p, &fb.edge, &format!("proc.tri.e{}.w", k + 1))?)?);
        }
        // shared edge terms are constant over k and j, so they fold into t1
        let mut tri_shared: Option<Var<'t, T>> = None;
        for e in &te {
            tri_shared = add_opt(tri_shared, e.shared.clone())?;
        }
        let t1 = node_term(&z, p.get("proc.tri.z1.w")?, &self.cache.tri_const, tri_shared.as_ref())?;
        let t2 = z.matmul(p.get("proc.tri.z2.w")?)?;
        let t3 = z.matmul(p.get("proc.tri.z3.w")?)?;
        let zeros = || z.tape().constant(Tensor::zeros(self.shape4(t)));
        let te2 = te[1].pair.clone().unwrap_or_else(zeros);
        let te3 = te[2].pair.clone().unwrap_or_else(zeros);
        let mut tri = t3.maxplus_triplet(&te2, &te3)?.add(&self.pairs(&t1, &t2)?)?;
        if let Some(e1) = &te[0].pair {
            tri = tri.add(e1)?;
        }
        // message MLP output layer and triplet readout in one product
        let hidden = pre.relu()?;
        let agg = Var::affine(
            &[(&hidden, p.get("proc.msg.l1.w")?), (&tri, p.get("proc.tri.out.w")?)],
            Some(&self.cache.readout_bias),
        )?
        .max_axis(2)?;

        let u = Var::concat(&[&z, &agg])?;
        let cand = mlp(p, "proc.upd", &u, &[3 * d, d, d])?;
        let gate = linear(p, "proc.gate", &u)?.sigmoid()?;
        let mixed = h_prev.add(&gate.mul(&cand.sub(h_prev)?)?)?;
        Ok(mixed.layer_norm(p.get("proc.ln.gamma")?, p.get("proc.ln.beta")?, LAYER_NORM_EPS)?)
    }

    /// `[B, n, n]` logits of a pairwise MLP over `[h_i, h_j, e_ij]`.
    fn pair_logits(&self, name: &str, h: &Var<'t, T>, edge: &Projection<'t, T>) -> Result<Var<'t, T>> {
        let p = self.p;
        let recv = node_term(
            h,
            p.get(&format!("{name}.l0.recv.w"))?,
            p.get(&format!("{name}.l0.b"))?,
            edge.shared.as_ref(),
        )?;
        let send = h.matmul(p.get(&format!("{name}.l0.send.w"))?)?;
        let mut pre = self.pairs(&recv, &send)?;
        if let Some(e) = &edge.pair {
            pre = pre.add(e)?;
        }
        let logits = linear(p, &format!("{name}.l1"), &pre.relu()?)?;
        Ok(logits.reshape(vec![self.enc.batch, self.enc.n, self.enc.n])?)
    }

    fn similarity(&self, name: &str, hx: &Var<'t, T>) -> Result<Var<'t, T>> {
        let q = linear(self.p, &format!("{name}.q"), hx)?;
        let k = linear(self.p, &format!("{name}.k"), hx)?;
        Ok(q.matmul_t(&k)?.scale(1.0 / (self.cfg.hidden_dim as f64).sqrt())?)
    }

    fn node_head(&self, name: &str, hx: &Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(linear(self.p, name, hx)?.reshape(vec![self.enc.batch, self.enc.n])?)
    }

    fn output(&self, h: &Var<'t, T>) -> Result<Var<'t, T>> {
        match self.kind {
            Kind::Pointer => self.similarity("dec.out", &Var::concat(&[h, &self.enc.x_enc])?),
            Kind::MaskOne => self.node_head("dec.out.score", &Var::concat(&[h, &self.enc.x_enc])?),
            Kind::Mask => {
                let l = self.pair_logits("dec.out", h, &self.cache.dec_out_edge)?;
                Ok(l.add(&l.swap_axes(1, 2)?)?.scale(0.5)?)
            }
            Kind::Scalar => Err(Error::Config("scalar outputs are not supported".into())),
        }
    }

    fn channel(&self, h: &Var<'t, T>) -> Result<Var<'t, T>> {
        if self.cfg.mode != Mode::NohintLatent {
            return Err(Error::Config(format!("no latent channel in {} mode", self.cfg.mode)));
        }
        Ok(self
            .pair_logits("dec.channel", h, &self.cache.dec_channel_edge)?
            .sigmoid()?)
    }

    fn hints(&self, h: &Var<'t, T>) -> Result<HintLogits<'t, T>> {
        if self.cfg.mode != Mode::HintsSupervised {
            return Err(Error::Config(format!("no hint decoders in {} mode", self.cfg.mode)));
        }
        let hx = Var::concat(&[h, &self.enc.x_enc])?;
        Ok(HintLogits {
            pred_h: self.similarity("dec.hint", &hx)?,
            i: self.node_head("dec.hint.i", &hx)?,
            j: self.node_head("dec.hint.j", &hx)?,
        })
    }

    /// Re-encodes `[B, n, n]` probabilities as an edge feature.
    fn edge_feedback(&self, probs: &Var<'t, T>, enc: &str) -> Result<EdgeTerms<'t, T>> {
        let mut e = EdgeTerms::empty();
        e.push(
            probs.reshape(self.shape4(1))?,
            self.p.get(&format!("{enc}.w"))?,
            self.p.get(&format!("{enc}.b"))?,
        )?;
        Ok(e)
    }

    fn feedback(&self, h: &Var<'t, T>) -> Result<(Feedback<'t, T>, Option<Var<'t, T>>, Option<HintLogits<'t, T>>)> {
        match self.cfg.mode {
            Mode::NohintPlain => Ok((Feedback::none(), None, None)),
            Mode::NohintLatent => {
                let ch = self.channel(h)?;
                let edge = self.edge_feedback(&ch, "enc.channel")?;
                Ok((Feedback { node: None, edge }, Some(ch), None))
            }
            Mode::HintsSupervised => {
                let hl = self.hints(h)?;
                let edge = self.edge_feedback(&hl.pred_h.softmax()?, "enc.hint.pred_h")?;
                let (b, n) = (self.enc.batch, self.enc.n);
                let mut node = None;
                for (logits, enc) in [(&hl.i, "enc.hint.i"), (&hl.j, "enc.hint.j")] {
                    let probs = logits.softmax()?.reshape(vec![b, n, 1])?;
                    node = add_opt(node, Some(linear(self.p, enc, &probs)?))?;
                }
                Ok((Feedback { node, edge }, None, Some(hl)))
            }
        }
    }
}

fn net<'a, 't, T: Scalar>(
    p: &'a ParamVars<'t, T>,
    cfg: &'a ModelConfig,
    enc: &'a Encoded<'t, T>,
    kind: Kind,
) -> Result<Net<'a, 't, T>> {
    Net::new(p, cfg, enc, kind)
}

/// One processor step from `h_prev` (`[B, n, d]`).
pub fn processor_step<'t, T: Scalar>(
    p: &ParamVars<'t, T>,
    cfg: &ModelConfig,
    enc: &Encoded<'t, T>,
    fb: &Feedback<'t, T>,
    h_prev: &Var<'t, T>,
) -> Result<Var<'t, T>> {
    net(p, cfg, enc, Kind::MaskOne)?.step(fb, h_prev)
}

/// Latent edge-mask probabilities `[B, n, n]`.
pub fn decode_channel<'t, T: Scalar>(
    p: &ParamVars<'t, T>,
    cfg: &ModelConfig,
    enc: &Encoded<'t, T>,
    h: &Var<'t, T>,
) -> Result<Var<'t, T>> {
    net(p, cfg, enc, Kind::MaskOne)?.channel(h)
}

pub fn decode_hints<'t, T: Scalar>(
    p: &ParamVars<'t, T>,
    cfg: &ModelConfig,
    enc: &Encoded<'t, T>,
    h: &Var<'t, T>,
) -> Result<HintLogits<'t, T>> {
    net(p, cfg, enc, Kind::Pointer)?.hints(h)
}

/// Output logits: `[B, n, n]` for pointers and edge masks, `[B, n]` for
/// mask_one.
pub fn decode_output<'t, T: Scalar>(
    p: &ParamVars<'t, T>,
    cfg: &ModelConfig,
    enc: &Encoded<'t, T>,
    kind: Kind,
    h: &Var<'t, T>,
) -> Result<Var<'t, T>> {
    net(p, cfg, enc, kind)?.output(h)
}

pub fn forward_rollout_batch<'t, T: Scalar>(
    p: &ParamVars<'t, T>,
    inputs: &BatchInputs,
    cfg: &ModelConfig,
    opts: &RolloutOptions,
) -> Result<Rollout<'t, T>> {
    cfg.validate(inputs.task)?;
    let enc = encode_inputs(p, inputs, cfg)?;
    let net = net(p, cfg, &enc, inputs.task.output().kind)?;
    let steps = opts.steps.unwrap_or_else(|| cfg.steps(inputs.task, inputs.n));
    let tape = enc.x_enc.tape();

    let mut h = tape.constant(Tensor::zeros(vec![enc.batch, enc.n, enc.d]));
    let (mut fb, ch, _) = net.feedback(&h)?;
    let mut channels: Vec<Var<'t, T>> = ch.into_iter().collect();
    let mut hs = Vec::with_capacity(steps);
    let mut hints = Vec::new();
    let mut step_outputs = Vec::new();
    for t in 0..steps {
        h = net.step(&fb, &h)?;
        let last = t + 1 == steps;
        match cfg.mode {
            Mode::NohintPlain => {}
            Mode::NohintLatent => {
                if !last {
                    let (next, ch, _) = net.feedback(&h)?;
                    fb = next;
                    channels.extend(ch);
                }
            }
            Mode::HintsSupervised => {
                let (next, _, hl) = net.feedback(&h)?;
                fb = next;
                hints.extend(hl);
            }
        }
        if opts.trace_outputs {
            step_outputs.push(net.output(&h)?);
        }
        hs.push(h.clone());
    }
    let output = match step_outputs.last() {
        Some(o) => o.clone(),
        None => net.output(&h)?,
    };
    drop(net);
    Ok(Rollout { output, hs, step_outputs, hints, channels, encoded: enc })
}

/// Rollout of a single instance (batch of one).
pub fn forward_rollout<'t, T: Scalar>(
    p: &ParamVars<'t, T>,
    instance: &ProblemInstance,
    cfg: &ModelConfig,
    opts: &RolloutOptions,
) -> Result<Rollout<'t, T>> {
    let inputs = BatchInputs::new(&[instance], cfg.use_positions)?;
    forward_rollout_batch(p, &inputs, cfg, opts)
}
