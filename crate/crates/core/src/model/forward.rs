use super::params::Gradients;
use super::tape::{Tape, Var};
use super::{BackboneParams, EstModel, Mlp2, ScorerKind};
use crate::data::{EntityId, HistoryWindow, Quadruple, RelationId, TemporalKG, Time};
use crate::error::{EstError, Result};
use crate::memory::DualStateMemory;

const ROTATE_EPS: f64 = 1e-9;

/// Where the perceiver reads entity states from.
#[derive(Clone, Copy)]
pub enum StateSource<'a> {
    Memory(&'a DualStateMemory),
    /// Every state reads as the zero vector.
    Zeros,
}

/// Tape handles for one query's context.
#[derive(Debug, Clone)]
pub struct QueryForward {
    /// `1 x d` context vector.
    pub context: Var,
    pub attention: Vec<f64>,
    pub gate_means: Vec<f64>,
    pub window_objects: Vec<EntityId>,
    /// False when the query fell back to the subject/relation path.
    pub used_history: bool,
}

/// Plain-value result of a query forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryContext {
    pub context: Vec<f64>,
    pub attention: Vec<f64>,
    pub gate_means: Vec<f64>,
    pub window_objects: Vec<EntityId>,
}

/// Loss of one training query together with its severed context.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryLoss {
    pub loss: f64,
    pub context: QueryContext,
}

fn log_gap(gap: u64) -> f64 {
    (gap as f64).ln_1p()
}

impl EstModel {
    fn mlp(&self, tape: &mut Tape<'_>, x: Var, p: Mlp2) -> Var {
        let h = tape.linear(x, p.w1, Some(p.b1));
        let h = tape.tanh(h);
        tape.linear(h, p.w2, Some(p.b2))
    }

    fn time_features(&self, tape: &mut Tape<'_>, gaps: &[u64]) -> Var {
        let feats = gaps.iter().map(|g| log_gap(*g)).collect();
        let x = tape.constant(gaps.len(), 1, feats);
        tape.linear(x, self.ids.time_w, Some(self.ids.time_b))
    }

    /// Gated interpolation between embeddings `e` and states `s` (both `n x d`).
    /// Returns `(fused, gate)`.
    pub(crate) fn tape_fuse(&self, tape: &mut Tape<'_>, e: Var, s: Var) -> (Var, Var) {
        let es = tape.concat_cols(&[e, s]);
        let z = tape.linear(es, self.ids.gate_w, Some(self.ids.gate_b));
        let gate = tape.sigmoid(z);
        let diff = tape.sub(e, s);
        let scaled = tape.mul(gate, diff);
        (tape.add(s, scaled), gate)
    }

    pub(crate) fn tape_encode(&self, tape: &mut Tape<'_>, fused: Var, rel: Var) -> Var {
        let x = tape.concat_cols(&[fused, rel]);
        self.mlp(tape, x, self.ids.structural)
    }

    pub(crate) fn tape_calibrate(&self, tape: &mut Tape<'_>, x: Var, rel: Var, gaps: &[u64]) -> Var {
        let tf = self.time_features(tape, gaps);
        let inp = tape.concat_cols(&[x, rel, tf]);
        self.mlp(tape, inp, self.ids.calib)
    }

    /// Sequence encoder plus projection head, `steps x d -> steps x d`.
    pub(crate) fn tape_backbone(&self, tape: &mut Tape<'_>, u: Var) -> Var {
        let (steps, d) = tape.shape(u);
        let h = match self.ids.backbone {
            BackboneParams::Rnn { wu, wh } => {
                let mut h = tape.constant(1, d, vec![0.0; d]);
                let mut outs = Vec::with_capacity(steps);
                for k in 0..steps {
                    let uk = tape.row(u, k);
                    let a = tape.linear(uk, wu, None);
                    let b = tape.linear(h, wh, None);
                    let z = tape.add(a, b);
                    h = tape.tanh(z);
                    outs.push(h);
                }
                tape.stack_rows(&outs)
            }
            BackboneParams::Lstm { wx, wh, b } => {
                let mut h = tape.constant(1, d, vec![0.0; d]);
                let mut c = tape.constant(1, d, vec![0.0; d]);
                let mut outs = Vec::with_capacity(steps);
                for k in 0..steps {
                    let uk = tape.row(u, k);
                    let zx = tape.linear(uk, wx, Some(b));
                    let zh = tape.linear(h, wh, None);
                    let z = tape.add(zx, zh);
                    let i = tape.slice_cols(z, 0, d);
                    let i = tape.sigmoid(i);
                    let f = tape.slice_cols(z, d, d);
                    let f = tape.sigmoid(f);
                    let o = tape.slice_cols(z, 2 * d, d);
                    let o = tape.sigmoid(o);
                    let g = tape.slice_cols(z, 3 * d, d);
                    let g = tape.tanh(g);
                    let keep = tape.mul(f, c);
                    let write = tape.mul(i, g);
                    c = tape.add(keep, write);
                    let tc = tape.tanh(c);
                    h = tape.mul(o, tc);
                    outs.push(h);
                }
                tape.stack_rows(&outs)
            }
            BackboneParams::Transformer {
                pos,
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
            } => {
                let positions: Vec<usize> = (0..steps).collect();
                let p = tape.rows(pos, &positions);
                let z = tape.add(u, p);
                let q = tape.linear(z, wq, Some(bq));
                let k = tape.linear(z, wk, Some(bk));
                let v = tape.linear(z, wv, Some(bv));
                let heads = self.config.heads;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut outs = Vec::with_capacity(heads);
                for hd in 0..heads {
                    let (qh, kh, vh) = if heads == 1 {
                        (q, k, v)
                    } else {
                        (
                            tape.slice_cols(q, hd * dh, dh),
                            tape.slice_cols(k, hd * dh, dh),
                            tape.slice_cols(v, hd * dh, dh),
                        )
                    };
                    let logits = tape.matmul_t(qh, kh);
                    let logits = tape.scale(logits, scale);
                    let att = tape.softmax_rows(logits, true);
                    outs.push(tape.matmul(att, vh));
                }
                let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
                tape.linear(cat, wo, Some(bo))
            }
            BackboneParams::Mamba {
                dt_w,
                dt_b,
                b_w,
                c_w,
                a_raw,
            } => {
                let z = tape.linear(u, dt_w, Some(dt_b));
                let delta = tape.softplus(z);
                let b = tape.linear(u, b_w, None);
                let c = tape.linear(u, c_w, None);
                let a = tape.param(a_raw);
                let a = tape.softplus(a);
                let a = tape.scale(a, -1.0);
                tape.selective_scan(u, delta, b, c, a)
            }
        };
        tape.linear(h, self.ids.proj_w, Some(self.ids.proj_b))
    }

    /// Query-aware pooling of `y: steps x d`. Returns `(context 1 x d, weights 1 x steps)`.
    pub(crate) fn tape_attend(&self, tape: &mut Tape<'_>, y: Var, rel: Var, time: Var) -> (Var, Var) {
        let steps = tape.shape(y).0;
        let r = tape.repeat_rows(rel, steps);
        let t = tape.repeat_rows(time, steps);
        let inp = tape.concat_cols(&[y, r, t]);
        let h = tape.linear(inp, self.ids.att_w, Some(self.ids.att_b));
        let h = tape.tanh(h);
        let logits = tape.linear(h, self.ids.att_v, None);
        let logits = tape.transpose(logits);
        let alpha = tape.softmax_rows(logits, false);
        (tape.matmul(alpha, y), alpha)
    }

    /// Context from subject and relation embeddings alone.
    pub(crate) fn tape_query_only(&self, tape: &mut Tape<'_>, subject: EntityId, relation: RelationId) -> Var {
        let s = tape.rows(self.ids.entity, &[subject]);
        let r = tape.rows(self.ids.relation, &[relation]);
        let x = tape.concat_cols(&[s, r]);
        self.mlp(tape, x, self.ids.query)
    }

    /// Builds the query context on `tape`. Empty windows and `wo_context`
    /// route through [`Self::tape_query_only`].
    pub(crate) fn tape_context(
        &self,
        tape: &mut Tape<'_>,
        subject: EntityId,
        relation: RelationId,
        window: &HistoryWindow,
        states: StateSource<'_>,
        wo_context: bool,
    ) -> Result<QueryForward> {
        if wo_context || window.is_empty() {
            return Ok(QueryForward {
                context: self.tape_query_only(tape, subject, relation),
                attention: Vec::new(),
                gate_means: Vec::new(),
                window_objects: Vec::new(),
                used_history: false,
            });
        }
        let d = self.config.dim;
        let objects: Vec<EntityId> = window.entries.iter().map(|e| e.object).collect();
        let relations: Vec<RelationId> = window.entries.iter().map(|e| e.relation).collect();
        let mut gaps = Vec::with_capacity(window.len());
        for e in &window.entries {
            if e.time >= window.query_time {
                return Err(EstError::Contract(format!(
                    "history entry at time {} is not before query time {}",
                    e.time, window.query_time
                )));
            }
            gaps.push(u64::from(window.query_time - e.time));
        }
        let mut state_rows = Vec::with_capacity(objects.len() * d);
        match states {
            StateSource::Memory(m) => {
                if m.dim() != d {
                    return Err(EstError::Validation(format!("memory dim {} vs model dim {d}", m.dim())));
                }
                for &o in &objects {
                    state_rows.extend_from_slice(m.read_slow(o)?);
                }
            }
            StateSource::Zeros => state_rows.resize(objects.len() * d, 0.0),
        }
        let e = tape.rows(self.ids.entity, &objects);
        let s = tape.constant(objects.len(), d, state_rows);
        let (fused, gate) = self.tape_fuse(tape, e, s);
        let rel = tape.rows(self.ids.relation, &relations);
        let x = self.tape_encode(tape, fused, rel);
        let u = self.tape_calibrate(tape, x, rel, &gaps);
        let y = self.tape_backbone(tape, u);
        let latest = window.latest_time().expect("non-empty window");
        let gap = u64::from(window.query_time - latest);
        let qrel = tape.rows(self.ids.relation, &[relation]);
        let qtime = self.time_features(tape, &[gap]);
        let (context, alpha) = self.tape_attend(tape, y, qrel, qtime);
        let gate_means = tape.value(gate).chunks(d).map(|r| r.iter().sum::<f64>() / d as f64).collect();
        Ok(QueryForward {
            context,
            attention: tape.value(alpha).to_vec(),
            gate_means,
            window_objects: objects,
            used_history: true,
        })
    }

    /// Logits for `candidates` as a `1 x n` row.
    pub(crate) fn tape_scores(&self, tape: &mut Tape<'_>, context: Var, relation: RelationId, candidates: &[EntityId]) -> Var {
        let d = self.config.dim;
        let r = tape.rows(self.ids.relation, &[relation]);
        let o = tape.rows(self.ids.entity, candidates);
        match self.config.scorer {
            ScorerKind::DistMult => {
                let q = tape.mul(context, r);
                tape.matmul_t(q, o)
            }
            ScorerKind::ComplEx => {
                let h = d / 2;
                let (cr, ci) = (tape.slice_cols(context, 0, h), tape.slice_cols(context, h, h));
                let (rr, ri) = (tape.slice_cols(r, 0, h), tape.slice_cols(r, h, h));
                let a = tape.mul(cr, rr);
                let b = tape.mul(ci, ri);
                let pr = tape.sub(a, b);
                let a = tape.mul(cr, ri);
                let b = tape.mul(ci, rr);
                let pi = tape.add(a, b);
                let q = tape.concat_cols(&[pr, pi]);
                tape.matmul_t(q, o)
            }
            ScorerKind::RotatE => {
                let h = d / 2;
                let (cr, ci) = (tape.slice_cols(context, 0, h), tape.slice_cols(context, h, h));
                let raw = tape.slice_cols(r, 0, h);
                let t = tape.tanh(raw);
                let angle = tape.scale(t, std::f64::consts::PI);
                let cos = tape.cos(angle);
                let sin = tape.sin(angle);
                let a = tape.mul(cr, cos);
                let b = tape.mul(ci, sin);
                let rot_r = tape.sub(a, b);
                let a = tape.mul(cr, sin);
                let b = tape.mul(ci, cos);
                let rot_i = tape.add(a, b);
                let rot = tape.concat_cols(&[rot_r, rot_i]);
                let rot = tape.repeat_rows(rot, candidates.len());
                let diff = tape.sub(rot, o);
                let sq = tape.square(diff);
                let dist = tape.sum_cols(sq);
                let dist = tape.add_scalar(dist, ROTATE_EPS);
                let dist = tape.sqrt(dist);
                let neg = tape.scale(dist, -1.0);
                tape.transpose(neg)
            }
            ScorerKind::Mlp => {
                let p = self.ids.scorer_mlp.expect("mlp scorer parameters");
                let cr = tape.concat_cols(&[context, r]);
                let cr = tape.repeat_rows(cr, candidates.len());
                let x = tape.concat_cols(&[cr, o]);
                let s = self.mlp(tape, x, p);
                tape.transpose(s)
            }
        }
    }

    fn check_dim(&self, what: &str, v: &[f64], want: usize) -> Result<()> {
        if v.len() != want {
            return Err(EstError::Validation(format!("{what} has length {}, expected {want}", v.len())));
        }
        Ok(())
    }

    /// Gated perceiver on single vectors. Returns `(fused, gate)`.
    pub fn fuse_state(&self, e_obj: &[f64], s_obj: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.config.dim;
        self.check_dim("e_obj", e_obj, d)?;
        self.check_dim("s_obj", s_obj, d)?;
        let mut tape = Tape::new(&self.params);
        let e = tape.constant(1, d, e_obj.to_vec());
        let s = tape.constant(1, d, s_obj.to_vec());
        let (f, g) = self.tape_fuse(&mut tape, e, s);
        Ok((tape.value(f).to_vec(), tape.value(g).to_vec()))
    }

    pub fn encode_event(&self, fused: &[f64], e_rel: &[f64]) -> Result<Vec<f64>> {
        let d = self.config.dim;
        self.check_dim("fused", fused, d)?;
        self.check_dim("e_rel", e_rel, d)?;
        let mut tape = Tape::new(&self.params);
        let f = tape.constant(1, d, fused.to_vec());
        let r = tape.constant(1, d, e_rel.to_vec());
        let x = self.tape_encode(&mut tape, f, r);
        Ok(tape.value(x).to_vec())
    }

    pub fn calibrate(&self, x: &[f64], e_rel: &[f64], delta_t: i64) -> Result<Vec<f64>> {
        let d = self.config.dim;
        self.check_dim("x", x, d)?;
        self.check_dim("e_rel", e_rel, d)?;
        if delta_t < 0 {
            return Err(EstError::Contract(format!("negative time difference {delta_t}")));
        }
        let mut tape = Tape::new(&self.params);
        let xv = tape.constant(1, d, x.to_vec());
        let r = tape.constant(1, d, e_rel.to_vec());
        let u = self.tape_calibrate(&mut tape, xv, r, &[delta_t as u64]);
        Ok(tape.value(u).to_vec())
    }

    /// `time_proj(log(1 + gap))`.
    pub fn time_embedding(&self, gap: u64) -> Vec<f64> {
        let mut tape = Tape::new(&self.params);
        let t = self.time_features(&mut tape, &[gap]);
        tape.value(t).to_vec()
    }

    pub fn run_backbone(&self, u: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let d = self.config.dim;
        if u.is_empty() {
            return Err(EstError::Contract("backbone input sequence is empty".into()));
        }
        if u.len() > self.config.history_len {
            return Err(EstError::Contract(format!(
                "sequence length {} exceeds history_len {}",
                u.len(),
                self.config.history_len
            )));
        }
        let mut flat = Vec::with_capacity(u.len() * d);
        for row in u {
            self.check_dim("backbone input", row, d)?;
            flat.extend_from_slice(row);
        }
        let mut tape = Tape::new(&self.params);
        let uv = tape.constant(u.len(), d, flat);
        let y = self.tape_backbone(&mut tape, uv);
        Ok(tape.value(y).chunks(d).map(<[f64]>::to_vec).collect())
    }

    /// Returns `(context, weights)`.
    pub fn attend(&self, y: &[Vec<f64>], e_rel: &[f64], e_time: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.config.dim;
        if y.is_empty() {
            return Err(EstError::Contract("attention over an empty sequence".into()));
        }
        self.check_dim("e_rel", e_rel, d)?;
        self.check_dim("e_time", e_time, self.config.time_dim)?;
        let mut flat = Vec::with_capacity(y.len() * d);
        for row in y {
            self.check_dim("y", row, d)?;
            flat.extend_from_slice(row);
        }
        let mut tape = Tape::new(&self.params);
        let yv = tape.constant(y.len(), d, flat);
        let r = tape.constant(1, d, e_rel.to_vec());
        let t = tape.constant(1, self.config.time_dim, e_time.to_vec());
        let (c, a) = self.tape_attend(&mut tape, yv, r, t);
        Ok((tape.value(c).to_vec(), tape.value(a).to_vec()))
    }

    fn check_ids(&self, relation: RelationId, objects: &[EntityId]) -> Result<()> {
        if relation >= self.config.relation_count {
            return Err(EstError::Lookup(format!("relation {relation} out of range")));
        }
        if let Some(o) = objects.iter().find(|o| **o >= self.config.entity_count) {
            return Err(EstError::Lookup(format!("entity {o} out of range")));
        }
        Ok(())
    }

    pub fn score(&self, context: &[f64], relation: RelationId, object: EntityId) -> Result<f64> {
        Ok(self.score_candidates(context, relation, &[object])?[0])
    }

    pub fn score_candidates(&self, context: &[f64], relation: RelationId, objects: &[EntityId]) -> Result<Vec<f64>> {
        let d = self.config.dim;
        self.check_dim("context", context, d)?;
        self.check_ids(relation, objects)?;
        let mut tape = Tape::new(&self.params);
        let c = tape.constant(1, d, context.to_vec());
        let s = self.tape_scores(&mut tape, c, relation, objects);
        Ok(tape.value(s).to_vec())
    }

    pub fn score_all(&self, context: &[f64], relation: RelationId) -> Result<Vec<f64>> {
        let all: Vec<EntityId> = (0..self.config.entity_count).collect();
        self.score_candidates(context, relation, &all)
    }

    /// Scores every entity for `(subject, relation, ?, time)`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_query(
        &self,
        kg: &TemporalKG,
        states: StateSource<'_>,
        subject: EntityId,
        relation: RelationId,
        time: Time,
        history_len: usize,
        wo_context: bool,
    ) -> Result<(Vec<f64>, QueryContext)> {
        self.check_ids(relation, &[subject])?;
        let window = kg.get_history(subject, time, history_len)?;
        let mut tape = Tape::new(&self.params);
        let q = self.tape_context(&mut tape, subject, relation, &window, states, wo_context)?;
        let all: Vec<EntityId> = (0..self.config.entity_count).collect();
        let s = self.tape_scores(&mut tape, q.context, relation, &all);
        let ctx = QueryContext {
            context: tape.value(q.context).to_vec(),
            attention: q.attention,
            gate_means: q.gate_means,
            window_objects: q.window_objects,
        };
        Ok((tape.value(s).to_vec(), ctx))
    }

    /// Softmax loss of `query.object` against `negatives`. With `grads`, adds
    /// `grad_scale * d(loss)/d(param)` into it.
    #[allow(clippy::too_many_arguments)]
    pub fn query_loss(
        &self,
        kg: &TemporalKG,
        states: StateSource<'_>,
        query: &Quadruple,
        negatives: &[EntityId],
        history_len: usize,
        wo_context: bool,
        grads: Option<(&mut Gradients, f64)>,
    ) -> Result<QueryLoss> {
        let mut candidates = Vec::with_capacity(1 + negatives.len());
        candidates.push(query.object);
        candidates.extend_from_slice(negatives);
        self.check_ids(query.relation, &candidates)?;
        let window = kg.get_history(query.subject, query.time, history_len)?;
        let mut tape = Tape::new(&self.params);
        let fwd = self.tape_context(&mut tape, query.subject, query.relation, &window, states, wo_context)?;
        let scores = self.tape_scores(&mut tape, fwd.context, query.relation, &candidates);
        let lse = tape.logsumexp(scores);
        let gold = tape.pick(scores, 0);
        let loss = tape.sub(lse, gold);
        if let Some((g, scale)) = grads {
            tape.backward(loss, scale, g);
        }
        Ok(QueryLoss {
            loss: tape.scalar(loss),
            context: QueryContext {
                context: tape.value(fwd.context).to_vec(),
                attention: fwd.attention,
                gate_means: fwd.gate_means,
                window_objects: fwd.window_objects,
            },
        })
    }
}
