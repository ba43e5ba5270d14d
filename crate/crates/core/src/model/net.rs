use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ehr::EncodedVisit;
use crate::rng::{stream, Domain};
use crate::tensor::{Arr, Tape, Var};

use super::config::{FusionVariant, ModelConfig, ModelError};
use super::params::{embedding_init, xavier, ParamStore};

const LN_EPS: f64 = 1e-5;
const NORM_EPS_SQ: f64 = 1e-12;
const MASK_NEG: f64 = -1e30;

/// Every named intermediate of one forward pass over one record: the
/// distillation surface. Per-visit arrays are `[input_visits, hidden]`; the
/// final logits are `[1, category_count]` and each parental head is
/// `[1, typing_count]`.
#[derive(Debug, Clone)]
pub struct BundleVars {
    pub r_demo: Var,
    pub r_note: Var,
    pub r_code: Var,
    pub c_dn: Var,
    pub c_cn: Var,
    pub s_dn: Var,
    pub s_cn: Var,
    pub s_c: Var,
    pub fusion: Var,
    pub y_hat: Var,
    pub o_demo: Var,
    pub o_note: Var,
    pub o_code: Var,
    /// Gated-shift scale per visit, exposed for inspection.
    pub fusion_lambda: Var,
    pub valid_visit_mask: Vec<bool>,
}

/// Plain-array snapshot of a bundle (teacher side, test oracles).
#[derive(Debug, Clone)]
pub struct Bundle {
    pub r_demo: Arr,
    pub r_note: Arr,
    pub r_code: Arr,
    pub c_dn: Arr,
    pub c_cn: Arr,
    pub s_dn: Arr,
    pub s_cn: Arr,
    pub s_c: Arr,
    pub fusion: Arr,
    pub y_hat: Arr,
    pub o_demo: Arr,
    pub o_note: Arr,
    pub o_code: Arr,
    pub valid_visit_mask: Vec<bool>,
}

impl BundleVars {
    pub fn values(&self, tape: &Tape) -> Bundle {
        Bundle {
            r_demo: tape.value(self.r_demo).clone(),
            r_note: tape.value(self.r_note).clone(),
            r_code: tape.value(self.r_code).clone(),
            c_dn: tape.value(self.c_dn).clone(),
            c_cn: tape.value(self.c_cn).clone(),
            s_dn: tape.value(self.s_dn).clone(),
            s_cn: tape.value(self.s_cn).clone(),
            s_c: tape.value(self.s_c).clone(),
            fusion: tape.value(self.fusion).clone(),
            y_hat: tape.value(self.y_hat).clone(),
            o_demo: tape.value(self.o_demo).clone(),
            o_note: tape.value(self.o_note).clone(),
            o_code: tape.value(self.o_code).clone(),
            valid_visit_mask: self.valid_visit_mask.clone(),
        }
    }
}

impl Bundle {
    /// Field-wise shapes; teacher and student bundles must agree on all of
    /// them for every distillation loss to be well-posed.
    pub fn shape_signature(&self) -> Vec<(usize, usize)> {
        [
            &self.r_demo,
            &self.r_note,
            &self.r_code,
            &self.c_dn,
            &self.c_cn,
            &self.s_dn,
            &self.s_cn,
            &self.s_c,
            &self.fusion,
            &self.y_hat,
            &self.o_demo,
            &self.o_note,
            &self.o_code,
        ]
        .iter()
        .map(|a| a.dim())
        .collect()
    }
}

#[derive(Debug)]
struct LayerIdx {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln1: (usize, usize),
    lnkv: Option<(usize, usize)>,
    ln2: (usize, usize),
    ff_w1: usize,
    ff_b1: usize,
    ff_w2: usize,
    ff_b2: usize,
}

#[derive(Debug)]
struct StackIdx {
    pos: usize,
    layers: Vec<LayerIdx>,
    out_ln: (usize, usize),
    dim: usize,
    heads: usize,
    cross: bool,
}

#[derive(Debug)]
struct FusionIdx {
    gate_w: usize,
    gate_b: usize,
    shift_w: usize,
    shift_b: usize,
    ln: (usize, usize),
    anchor_logits: Option<usize>,
}

#[derive(Debug)]
struct Layout {
    demo_embeds: Vec<usize>,
    demo_proj: (usize, usize),
    note_token: usize,
    note_stack: StackIdx,
    note_proj: (usize, usize),
    code_embed: usize,
    code_proj: (usize, usize),
    cmt_dn: StackIdx,
    cmt_cn: StackIdx,
    sat_dn: StackIdx,
    sat_cn: StackIdx,
    sat_c: StackIdx,
    fusion: FusionIdx,
    head_final: (usize, usize),
    head_demo: (usize, usize),
    head_note: (usize, usize),
    head_code: (usize, usize),
}

/// The modified sequential-diagnosis network: per-visit modality encoders,
/// two cross-modal transformer stacks (demo->note, code->note), three
/// self-attention stacks, a gated fusion (CMAG for the teacher, MAG for the
/// student), and dual-level prediction heads.
#[derive(Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
}

/// Forward-pass mode: evaluation is deterministic; training applies dropout
/// driven by the supplied stream.
pub enum Mode<'a> {
    Eval,
    Train { rng: &'a mut ChaCha8Rng },
}

struct Dropper<'a, 'b> {
    p: f64,
    rng: Option<&'a mut &'b mut ChaCha8Rng>,
}

impl Dropper<'_, '_> {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        let Some(rng) = self.rng.as_mut() else {
            return x;
        };
        if self.p == 0.0 {
            return x;
        }
        let keep = 1.0 - self.p;
        let dim = tape.value(x).dim();
        let mask = Arr::from_shape_fn(dim, |_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        tape.mul_const(x, &mask)
    }
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model, ModelError> {
        config.validate()?;
        let mut rng = stream(seed, Domain::Init, 0);
        let mut store = ParamStore::new();
        let d = config.hidden_dim;
        let nd = config.note_dim;

        let demo_embeds = config
            .demo_cardinalities
            .iter()
            .enumerate()
            .map(|(f, &card)| {
                store.insert(
                    format!("demo.field{f}.embed"),
                    embedding_init(card + 1, d, &mut rng),
                )
            })
            .collect();
        let demo_proj = insert_linear(&mut store, "demo.proj", d, d, &mut rng);

        let note_token = store.insert(
            "note.token_embed",
            embedding_init(config.note_vocab + 1, nd, &mut rng),
        );
        let note_stack = insert_stack(
            &mut store,
            "note",
            nd,
            config.note_heads,
            config.note_layers,
            config.ff_multiplier,
            config.max_note_len,
            false,
            &mut rng,
        );
        let note_proj = insert_linear(&mut store, "note.proj", nd, d, &mut rng);

        let code_embed = store.insert(
            "code.embed",
            embedding_init(config.unique_count + 1, d, &mut rng),
        );
        let code_proj = insert_linear(&mut store, "code.proj", d, d, &mut rng);

        let visit_stack = |store: &mut ParamStore, name: &str, cross: bool, rng: &mut ChaCha8Rng| {
            insert_stack(
                store,
                name,
                d,
                config.attention_heads,
                config.transformer_layers,
                config.ff_multiplier,
                config.max_visits,
                cross,
                rng,
            )
        };
        let cmt_dn = visit_stack(&mut store, "tf.cmt_dn", true, &mut rng);
        let cmt_cn = visit_stack(&mut store, "tf.cmt_cn", true, &mut rng);
        let sat_dn = visit_stack(&mut store, "tf.sat_dn", false, &mut rng);
        let sat_cn = visit_stack(&mut store, "tf.sat_cn", false, &mut rng);
        let sat_c = visit_stack(&mut store, "tf.sat_c", false, &mut rng);

        let gate = insert_linear(&mut store, "fusion.gate", 3 * d, d, &mut rng);
        let shift = insert_linear(&mut store, "fusion.shift", 2 * d, d, &mut rng);
        let fusion_ln = insert_ln(&mut store, "fusion.ln", d);
        let anchor_logits = match config.fusion {
            FusionVariant::Cmag => None,
            FusionVariant::Mag => Some(store.insert("fusion.anchor_logits", Arr::zeros((1, 3)))),
        };

        let head_final = insert_linear(&mut store, "head.final", d, config.category_count, &mut rng);
        let head_demo = insert_linear(&mut store, "head.parent_demo", d, config.typing_count, &mut rng);
        let head_note = insert_linear(&mut store, "head.parent_note", d, config.typing_count, &mut rng);
        let head_code = insert_linear(&mut store, "head.parent_code", d, config.typing_count, &mut rng);

        let layout = Layout {
            demo_embeds,
            demo_proj,
            note_token,
            note_stack,
            note_proj,
            code_embed,
            code_proj,
            cmt_dn,
            cmt_cn,
            sat_dn,
            sat_cn,
            sat_c,
            fusion: FusionIdx {
                gate_w: gate.0,
                gate_b: gate.1,
                shift_w: shift.0,
                shift_b: shift.1,
                ln: fusion_ln,
                anchor_logits,
            },
            head_final,
            head_demo,
            head_note,
            head_code,
        };
        Ok(Model {
            config,
            params: store,
            layout,
        })
    }

    /// Parameter names in the note-encoder learning-rate group.
    pub fn is_note_encoder_param(name: &str) -> bool {
        name.starts_with("note.")
    }

    fn validate_visits(&self, visits: &[EncodedVisit]) -> Result<(), ModelError> {
        if visits.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if visits.len() > self.config.max_visits {
            return Err(ModelError::TooManyVisits {
                got: visits.len(),
                max: self.config.max_visits,
            });
        }
        for (t, v) in visits.iter().enumerate() {
            if v.demo.len() != self.config.demo_cardinalities.len() {
                return Err(ModelError::Invalid(format!(
                    "visit {t}: expected {} demographic fields, got {}",
                    self.config.demo_cardinalities.len(),
                    v.demo.len()
                )));
            }
            for (f, (&id, &card)) in v.demo.iter().zip(&self.config.demo_cardinalities).enumerate()
            {
                if id > card {
                    return Err(ModelError::DemoOutOfRange {
                        visit: t,
                        field: f,
                        id,
                        sentinel: card,
                    });
                }
            }
            if v.note.is_empty() {
                return Err(ModelError::EmptyNote { visit: t });
            }
            if v.note.len() > self.config.max_note_len {
                return Err(ModelError::NoteTooLong {
                    got: v.note.len(),
                    max: self.config.max_note_len,
                });
            }
            if let Some(&id) = v.note.iter().find(|&&id| id > self.config.note_vocab) {
                return Err(ModelError::TokenOutOfRange {
                    visit: t,
                    id,
                    unk: self.config.note_vocab,
                });
            }
            if v.codes.is_empty() {
                return Err(ModelError::EmptyCodes { visit: t });
            }
            if let Some(&id) = v.codes.iter().find(|&&id| id > self.config.unique_count) {
                return Err(ModelError::CodeOutOfRange {
                    visit: t,
                    id,
                    sentinel: self.config.unique_count,
                });
            }
        }
        Ok(())
    }

    /// Run the full network over one record's input visits.
    ///
    /// `pv` must come from `self.params.leaves(tape)` on the same tape.
    pub fn forward(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        visits: &[EncodedVisit],
        mode: Mode<'_>,
    ) -> Result<BundleVars, ModelError> {
        self.validate_visits(visits)?;
        let t_in = visits.len();
        let mut rng_holder = match mode {
            Mode::Eval => None,
            Mode::Train { rng } => Some(rng),
        };
        let mut drop = Dropper {
            p: self.config.dropout,
            rng: rng_holder.as_mut(),
        };

        let r_demo = self.encode_demo(tape, pv, visits, &mut drop);
        let r_note = self.encode_notes(tape, pv, visits, &mut drop);
        let r_code = self.encode_codes(tape, pv, visits, &mut drop);

        let mask = causal_mask(t_in);
        let c_dn = run_stack(tape, pv, &self.layout.cmt_dn, r_note, Some(r_demo), Some(&mask), &mut drop);
        let c_cn = run_stack(tape, pv, &self.layout.cmt_cn, r_note, Some(r_code), Some(&mask), &mut drop);
        let s_dn = run_stack(tape, pv, &self.layout.sat_dn, c_dn, None, Some(&mask), &mut drop);
        let s_cn = run_stack(tape, pv, &self.layout.sat_cn, c_cn, None, Some(&mask), &mut drop);
        let s_c = run_stack(tape, pv, &self.layout.sat_c, r_code, None, Some(&mask), &mut drop);

        let (fusion, fusion_lambda) = self.fuse(tape, pv, s_dn, s_cn, s_c);

        let last = t_in - 1;
        let fused_last = tape.slice_rows(fusion, last, 1);
        let y_hat = linear(tape, pv, self.layout.head_final, fused_last);
        let demo_last = tape.slice_rows(r_demo, last, 1);
        let note_last = tape.slice_rows(r_note, last, 1);
        let code_last = tape.slice_rows(r_code, last, 1);
        let o_demo = linear(tape, pv, self.layout.head_demo, demo_last);
        let o_note = linear(tape, pv, self.layout.head_note, note_last);
        let o_code = linear(tape, pv, self.layout.head_code, code_last);

        Ok(BundleVars {
            r_demo,
            r_note,
            r_code,
            c_dn,
            c_cn,
            s_dn,
            s_cn,
            s_c,
            fusion,
            y_hat,
            o_demo,
            o_note,
            o_code,
            fusion_lambda,
            valid_visit_mask: vec![true; t_in],
        })
    }

    /// Sum of per-field embeddings, projected to the hidden width. Sentinel
    /// ids select the dedicated last row of each field table.
    fn encode_demo(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        visits: &[EncodedVisit],
        drop: &mut Dropper,
    ) -> Var {
        let mut acc: Option<Var> = None;
        for (f, &table_idx) in self.layout.demo_embeds.iter().enumerate() {
            let ids: Vec<usize> = visits.iter().map(|v| v.demo[f]).collect();
            let rows = tape.gather_rows(pv[table_idx], &ids);
            acc = Some(match acc {
                None => rows,
                Some(a) => tape.add(a, rows),
            });
        }
        let summed = acc.expect("at least one demographic field");
        let projected = linear(tape, pv, self.layout.demo_proj, summed);
        drop.apply(tape, projected)
    }

    /// Mean-pooled output of the small trainable note transformer, projected
    /// to the hidden width.
    fn encode_notes(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        visits: &[EncodedVisit],
        drop: &mut Dropper,
    ) -> Var {
        let mut pooled = Vec::with_capacity(visits.len());
        for v in visits {
            let tokens = tape.gather_rows(pv[self.layout.note_token], &v.note);
            let encoded = run_stack(tape, pv, &self.layout.note_stack, tokens, None, None, drop);
            let len = v.note.len();
            let pool = tape.leaf(Arr::from_elem((1, len), 1.0 / len as f64));
            pooled.push(tape.matmul(pool, encoded));
        }
        let stacked = tape.concat_rows(&pooled);
        let projected = linear(tape, pv, self.layout.note_proj, stacked);
        drop.apply(tape, projected)
    }

    /// Embedding-sum over the (multi-hot) code set, projected.
    fn encode_codes(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        visits: &[EncodedVisit],
        drop: &mut Dropper,
    ) -> Var {
        let mut rows = Vec::with_capacity(visits.len());
        for v in visits {
            let embeds = tape.gather_rows(pv[self.layout.code_embed], &v.codes);
            let pool = tape.leaf(Arr::ones((1, v.codes.len())));
            rows.push(tape.matmul(pool, embeds));
        }
        let stacked = tape.concat_rows(&rows);
        let projected = linear(tape, pv, self.layout.code_proj, stacked);
        drop.apply(tape, projected)
    }

    /// Gated-shift fusion. CMAG anchors on the code stream; MAG mixes the
    /// three streams by a learned softmax before the same machinery.
    fn fuse(&self, tape: &mut Tape, pv: &[Var], s_dn: Var, s_cn: Var, s_c: Var) -> (Var, Var) {
        let fx = &self.layout.fusion;
        let anchor = match fx.anchor_logits {
            None => s_c,
            Some(w_idx) => {
                let mix = tape.softmax_rows(pv[w_idx]);
                let m_c = tape.slice_cols(mix, 0, 1);
                let m_dn = tape.slice_cols(mix, 1, 1);
                let m_cn = tape.slice_cols(mix, 2, 1);
                let a = tape.mul_scalar_var(s_c, m_c);
                let b = tape.mul_scalar_var(s_dn, m_dn);
                let c = tape.mul_scalar_var(s_cn, m_cn);
                let ab = tape.add(a, b);
                tape.add(ab, c)
            }
        };
        let gate_in = tape.concat_cols(&[anchor, s_dn, s_cn]);
        let gate_lin = tape.matmul(gate_in, pv[fx.gate_w]);
        let gate_aff = tape.add_row(gate_lin, pv[fx.gate_b]);
        let gate = tape.sigmoid(gate_aff);
        let shift_in = tape.concat_cols(&[s_dn, s_cn]);
        let shift_lin = tape.matmul(shift_in, pv[fx.shift_w]);
        let shift_aff = tape.add_row(shift_lin, pv[fx.shift_b]);
        let shift = tape.mul(gate, shift_aff);

        let anchor_norm = safe_row_norm(tape, anchor);
        let shift_norm = safe_row_norm(tape, shift);
        let ratio = tape.div(anchor_norm, shift_norm);
        let lambda = tape.clamp_max_one(ratio);
        let scaled_shift = tape.mul_col(shift, lambda);
        let shifted = tape.add(anchor, scaled_shift);
        let fused = tape.layer_norm(shifted, pv[fx.ln.0], pv[fx.ln.1], LN_EPS);
        (fused, lambda)
    }
}

fn insert_linear(
    store: &mut ParamStore,
    name: &str,
    rows: usize,
    cols: usize,
    rng: &mut ChaCha8Rng,
) -> (usize, usize) {
    let w = store.insert(format!("{name}.w"), xavier(rows, cols, rng));
    let b = store.insert(format!("{name}.b"), Arr::zeros((1, cols)));
    (w, b)
}

fn insert_ln(store: &mut ParamStore, name: &str, dim: usize) -> (usize, usize) {
    let g = store.insert(format!("{name}.gamma"), Arr::ones((1, dim)));
    let b = store.insert(format!("{name}.beta"), Arr::zeros((1, dim)));
    (g, b)
}

#[allow(clippy::too_many_arguments)]
fn insert_stack(
    store: &mut ParamStore,
    name: &str,
    dim: usize,
    heads: usize,
    layers: usize,
    ff_mult: usize,
    max_len: usize,
    cross: bool,
    rng: &mut ChaCha8Rng,
) -> StackIdx {
    let pos = store.insert(format!("{name}.pos_embed"), embedding_init(max_len, dim, rng));
    let layer_idx = (0..layers)
        .map(|l| {
            let p = format!("{name}.layer{l}");
            let (wq, bq) = insert_linear(store, &format!("{p}.attn.q"), dim, dim, rng);
            let (wk, bk) = insert_linear(store, &format!("{p}.attn.k"), dim, dim, rng);
            let (wv, bv) = insert_linear(store, &format!("{p}.attn.v"), dim, dim, rng);
            let (wo, bo) = insert_linear(store, &format!("{p}.attn.o"), dim, dim, rng);
            let ln1 = insert_ln(store, &format!("{p}.ln1"), dim);
            let lnkv = cross.then(|| insert_ln(store, &format!("{p}.lnkv"), dim));
            let ln2 = insert_ln(store, &format!("{p}.ln2"), dim);
            let (ff_w1, ff_b1) = insert_linear(store, &format!("{p}.ff.1"), dim, dim * ff_mult, rng);
            let (ff_w2, ff_b2) = insert_linear(store, &format!("{p}.ff.2"), dim * ff_mult, dim, rng);
            LayerIdx {
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln1,
                lnkv,
                ln2,
                ff_w1,
                ff_b1,
                ff_w2,
                ff_b2,
            }
        })
        .collect();
    let out_ln = insert_ln(store, &format!("{name}.out_ln"), dim);
    StackIdx {
        pos,
        layers: layer_idx,
        out_ln,
        dim,
        heads,
        cross,
    }
}

fn linear(tape: &mut Tape, pv: &[Var], (w, b): (usize, usize), x: Var) -> Var {
    let y = tape.matmul(x, pv[w]);
    tape.add_row(y, pv[b])
}

fn causal_mask(t: usize) -> Arr {
    Arr::from_shape_fn((t, t), |(i, j)| if j > i { MASK_NEG } else { 0.0 })
}

/// Pre-norm transformer stack. Queries evolve from `query`; keys/values come
/// from `kv` when given (cross-modal) or from the evolving stream otherwise.
/// Positions are added once, to every input stream, from the stack's table.
fn run_stack(
    tape: &mut Tape,
    pv: &[Var],
    stack: &StackIdx,
    query: Var,
    kv: Option<Var>,
    mask: Option<&Arr>,
    drop: &mut Dropper,
) -> Var {
    let t_q = tape.value(query).nrows();
    let pos_q = tape.gather_rows(pv[stack.pos], &(0..t_q).collect::<Vec<_>>());
    let mut x = tape.add(query, pos_q);
    let src = kv.map(|k| {
        let t_k = tape.value(k).nrows();
        let pos_k = tape.gather_rows(pv[stack.pos], &(0..t_k).collect::<Vec<_>>());
        tape.add(k, pos_k)
    });
    debug_assert!(stack.cross == src.is_some());

    let dh = stack.dim / stack.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    for layer in &stack.layers {
        let q_norm = tape.layer_norm(x, pv[layer.ln1.0], pv[layer.ln1.1], LN_EPS);
        let kv_norm = match (src, layer.lnkv) {
            (Some(s), Some(ln)) => tape.layer_norm(s, pv[ln.0], pv[ln.1], LN_EPS),
            _ => q_norm,
        };
        let q = linear(tape, pv, (layer.wq, layer.bq), q_norm);
        let k = linear(tape, pv, (layer.wk, layer.bk), kv_norm);
        let v = linear(tape, pv, (layer.wv, layer.bv), kv_norm);
        let mut head_outs = Vec::with_capacity(stack.heads);
        for h in 0..stack.heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let scores = tape.matmul_nt(qh, kh);
            let scaled = tape.scale(scores, scale);
            let masked = match mask {
                Some(m) => tape.add_const(scaled, m),
                None => scaled,
            };
            let probs = tape.softmax_rows(masked);
            head_outs.push(tape.matmul(probs, vh));
        }
        let concat = tape.concat_cols(&head_outs);
        let attn_out = linear(tape, pv, (layer.wo, layer.bo), concat);
        let attn_out = drop.apply(tape, attn_out);
        x = tape.add(x, attn_out);

        let ff_norm = tape.layer_norm(x, pv[layer.ln2.0], pv[layer.ln2.1], LN_EPS);
        let ff_hidden = linear(tape, pv, (layer.ff_w1, layer.ff_b1), ff_norm);
        let ff_act = tape.relu(ff_hidden);
        let ff_out = linear(tape, pv, (layer.ff_w2, layer.ff_b2), ff_act);
        let ff_out = drop.apply(tape, ff_out);
        x = tape.add(x, ff_out);
    }
    tape.layer_norm(x, pv[stack.out_ln.0], pv[stack.out_ln.1], LN_EPS)
}

/// `sqrt(rowsum(x^2) + eps^2)`: strictly positive row norms safe to divide
/// and differentiate through even at zero rows.
fn safe_row_norm(tape: &mut Tape, x: Var) -> Var {
    let cols = tape.value(x).ncols();
    let sq = tape.mul(x, x);
    let ones = tape.leaf(Arr::ones((cols, 1)));
    let rowsum = tape.matmul(sq, ones);
    let shifted = tape.add_scalar(rowsum, NORM_EPS_SQ);
    tape.sqrt(shifted)
}
