//! The modified diagnosis-prediction network used as both teacher and
//! student: modality encoders, cross-modal and self-attention transformer
//! stacks over visit positions, gated fusion, and dual-level heads.

mod config;
mod input;
mod net;
mod params;

pub use config::{FusionVariant, ModelConfig, ModelError};
pub use input::{multi_hot, prepare_record, PreparedRecord};
pub use net::{Bundle, BundleVars, Mode, Model};
pub use params::{ParamStore, embedding_init, xavier};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::{DatasetConfig, EncodedVisit, Presence};
    use crate::rng::{stream, Domain};
    use crate::tensor::{Arr, Tape};

    fn test_data_config() -> DatasetConfig {
        DatasetConfig {
            typing_count: 3,
            category_count: 7,
            unique_count: 20,
            demo_cardinalities: vec![2, 4],
            note_vocab: 30,
            max_note_len: 6,
            max_visits: 5,
            patient_count: 4,
            ..DatasetConfig::default()
        }
    }

    fn small_model(fusion: FusionVariant) -> Model {
        let data = test_data_config();
        let cfg = ModelConfig {
            hidden_dim: 16,
            attention_heads: 4,
            transformer_layers: 2,
            note_layers: 1,
            note_dim: 8,
            note_heads: 2,
            ..ModelConfig::for_dataset(&data, fusion)
        };
        Model::new(cfg, 11).unwrap()
    }

    fn visit(seed: usize) -> EncodedVisit {
        EncodedVisit {
            demo: vec![seed % 2, seed % 4],
            note: vec![(seed * 3) % 30, (seed * 7 + 1) % 30, (seed + 2) % 30],
            codes: vec![seed % 20, (seed * 5 + 3) % 20],
            present: Presence::ALL,
        }
    }

    fn visits(n: usize) -> Vec<EncodedVisit> {
        (0..n).map(visit).collect()
    }

    fn eval_bundle(model: &Model, vs: &[EncodedVisit]) -> Bundle {
        let mut tape = Tape::new(false);
        let pv = model.params.leaves(&mut tape);
        let b = model.forward(&mut tape, &pv, vs, Mode::Eval).unwrap();
        b.values(&tape)
    }

    #[test]
    fn bundle_shapes_match_contract() {
        let model = small_model(FusionVariant::Cmag);
        for t in 1..=4 {
            let b = eval_bundle(&model, &visits(t));
            for arr in [&b.r_demo, &b.r_note, &b.r_code, &b.c_dn, &b.c_cn, &b.s_dn, &b.s_cn, &b.s_c, &b.fusion] {
                assert_eq!(arr.dim(), (t, 16));
            }
            assert_eq!(b.y_hat.dim(), (1, 7));
            for o in [&b.o_demo, &b.o_note, &b.o_code] {
                assert_eq!(o.dim(), (1, 3));
            }
            assert_eq!(b.valid_visit_mask.len(), t);
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let model = small_model(FusionVariant::Mag);
        let vs = visits(3);
        let a = eval_bundle(&model, &vs);
        let b = eval_bundle(&model, &vs);
        assert_eq!(a.y_hat, b.y_hat);
        assert_eq!(a.fusion, b.fusion);
    }

    #[test]
    fn teacher_student_bundles_are_shape_isomorphic() {
        let teacher = small_model(FusionVariant::Cmag);
        let student = small_model(FusionVariant::Mag);
        let vs = visits(3);
        let tb = eval_bundle(&teacher, &vs);
        let sb = eval_bundle(&student, &vs);
        assert_eq!(tb.shape_signature(), sb.shape_signature());
    }

    #[test]
    fn causality_over_visit_positions() {
        // perturbing visit t+1's inputs must not change outputs at visits <= t
        let model = small_model(FusionVariant::Cmag);
        let base = visits(4);
        let mut perturbed = base.clone();
        perturbed[3] = visit(9);
        let a = eval_bundle(&model, &base);
        let b = eval_bundle(&model, &perturbed);
        for (x, y) in [
            (&a.c_dn, &b.c_dn),
            (&a.c_cn, &b.c_cn),
            (&a.s_dn, &b.s_dn),
            (&a.s_cn, &b.s_cn),
            (&a.s_c, &b.s_c),
            (&a.fusion, &b.fusion),
        ] {
            for t in 0..3 {
                for j in 0..16 {
                    assert_eq!(x[(t, j)], y[(t, j)], "leak at visit {t}");
                }
            }
            assert_ne!(x.row(3), y.row(3), "perturbation had no effect at the changed visit");
        }
    }

    #[test]
    fn single_visit_forward_works() {
        let model = small_model(FusionVariant::Cmag);
        let b = eval_bundle(&model, &visits(1));
        assert!(b.y_hat.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn empty_input_is_rejected() {
        let model = small_model(FusionVariant::Cmag);
        let mut tape = Tape::new(false);
        let pv = model.params.leaves(&mut tape);
        let err = model.forward(&mut tape, &pv, &[], Mode::Eval).unwrap_err();
        assert!(matches!(err, ModelError::EmptyInput));
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        let model = small_model(FusionVariant::Cmag);
        let mut tape = Tape::new(false);
        let pv = model.params.leaves(&mut tape);
        let mut bad = visits(2);
        bad[0].codes = vec![21]; // sentinel is 20
        assert!(matches!(
            model.forward(&mut tape, &pv, &bad, Mode::Eval),
            Err(ModelError::CodeOutOfRange { .. })
        ));
        let mut bad = visits(2);
        bad[1].demo = vec![3, 0]; // sentinel for field 0 is 2
        assert!(matches!(
            model.forward(&mut tape, &pv, &bad, Mode::Eval),
            Err(ModelError::DemoOutOfRange { .. })
        ));
        let mut bad = visits(2);
        bad[0].note = vec![];
        assert!(matches!(
            model.forward(&mut tape, &pv, &bad, Mode::Eval),
            Err(ModelError::EmptyNote { .. })
        ));
    }

    #[test]
    fn all_presence_patterns_give_finite_outputs_and_grads() {
        let data = test_data_config();
        let model = small_model(FusionVariant::Mag);
        for id in 1..8 {
            let p = Presence::from_pattern_id(id);
            let raw = crate::ehr::Visit {
                demographics: vec![1, 2],
                note: vec![3, 4, 5],
                codes: vec![2, 11],
                present: p,
            };
            let enc = crate::ehr::encode_missing(&raw, &data);
            let vs = vec![visit(0), enc];
            let mut tape = Tape::new(true);
            let pv = model.params.leaves(&mut tape);
            let b = model.forward(&mut tape, &pv, &vs, Mode::Eval).unwrap();
            let values = b.values(&tape);
            assert!(values.y_hat.iter().all(|x| x.is_finite()), "pattern {id}");
            let loss = tape.mean_all(b.y_hat);
            let grads = tape.backward(loss);
            for (i, v) in pv.iter().enumerate() {
                if let Some(g) = grads.get(*v) {
                    assert!(
                        g.iter().all(|x| x.is_finite()),
                        "non-finite grad for {} under pattern {id}",
                        model.params.name(i)
                    );
                }
            }
        }
    }

    #[test]
    fn sentinel_demo_maps_to_learned_missing_row() {
        // direct lookup oracle: proj(sum of sentinel rows) == encoder output
        let model = small_model(FusionVariant::Cmag);
        let data = test_data_config();
        let raw = crate::ehr::Visit {
            demographics: vec![0, 1],
            note: vec![1],
            codes: vec![0],
            present: Presence {
                demo: false,
                note: true,
                codes: true,
            },
        };
        let enc = crate::ehr::encode_missing(&raw, &data);
        assert_eq!(enc.demo, vec![2, 4]);
        let b = eval_bundle(&model, &[enc]);

        let t0 = model.params.value(model.params.index_of("demo.field0.embed").unwrap());
        let t1 = model.params.value(model.params.index_of("demo.field1.embed").unwrap());
        let w = model.params.value(model.params.index_of("demo.proj.w").unwrap());
        let bias = model.params.value(model.params.index_of("demo.proj.b").unwrap());
        let summed = &t0.row(2).to_owned().insert_axis(ndarray::Axis(0))
            + &t1.row(4).to_owned().insert_axis(ndarray::Axis(0));
        let expected = summed.dot(w) + bias;
        for j in 0..16 {
            assert!((b.r_demo[(0, j)] - expected[(0, j)]).abs() < 1e-12);
        }
    }

    #[test]
    fn code_set_order_is_irrelevant() {
        let model = small_model(FusionVariant::Cmag);
        let mut a = visits(2);
        let mut b = visits(2);
        a[0].codes = vec![3, 7];
        b[0].codes = vec![7, 3];
        let ba = eval_bundle(&model, &a);
        let bb = eval_bundle(&model, &b);
        assert_eq!(ba.r_code, bb.r_code);
    }

    #[test]
    fn permuting_note_tokens_changes_the_encoding() {
        let model = small_model(FusionVariant::Cmag);
        let mut a = visits(2);
        let mut b = visits(2);
        a[0].note = vec![1, 2, 3];
        b[0].note = vec![3, 2, 1];
        let ba = eval_bundle(&model, &a);
        let bb = eval_bundle(&model, &b);
        assert_ne!(ba.r_note, bb.r_note, "position encodings inactive");
    }

    #[test]
    fn mag_with_degenerate_parameters_equals_cmag_anchor() {
        // softmax weights forced to (1,0,0) and a zeroed gated-shift branch
        // reduce both variants to LayerNorm(S_c)
        let data = test_data_config();
        let cfg = ModelConfig {
            hidden_dim: 16,
            attention_heads: 4,
            transformer_layers: 1,
            note_layers: 1,
            note_dim: 8,
            note_heads: 2,
            ..ModelConfig::for_dataset(&data, FusionVariant::Mag)
        };
        let mut mag = Model::new(cfg.clone(), 3).unwrap();
        let logits_idx = mag.params.index_of("fusion.anchor_logits").unwrap();
        mag.params.value_mut(logits_idx).assign(&ndarray::arr2(&[[1000.0, 0.0, 0.0]]));
        for name in ["fusion.gate.w", "fusion.gate.b", "fusion.shift.w", "fusion.shift.b"] {
            let idx = mag.params.index_of(name).unwrap();
            mag.params.value_mut(idx).fill(0.0);
        }

        let cmag_cfg = ModelConfig {
            fusion: FusionVariant::Cmag,
            ..cfg
        };
        let mut cmag = Model::new(cmag_cfg, 3).unwrap();
        for name in ["fusion.gate.w", "fusion.gate.b", "fusion.shift.w", "fusion.shift.b"] {
            let idx = cmag.params.index_of(name).unwrap();
            cmag.params.value_mut(idx).fill(0.0);
        }
        // align every shared parameter so the two nets differ only in fusion
        for i in 0..cmag.params.len() {
            let name = cmag.params.name(i).to_string();
            let src = cmag.params.value(i).clone();
            if let Some(j) = mag.params.index_of(&name) {
                mag.params.value_mut(j).assign(&src);
            }
        }

        let vs = visits(3);
        let bm = eval_bundle(&mag, &vs);
        let bc = eval_bundle(&cmag, &vs);
        assert_eq!(bm.fusion, bc.fusion, "degenerate MAG must equal CMAG");

        // and both equal LayerNorm(S_c) with unit gamma, zero beta
        let s_c = &bm.s_c;
        for t in 0..3 {
            let row = s_c.row(t);
            let mean = row.mean().unwrap();
            let var = row.mapv(|x| (x - mean) * (x - mean)).mean().unwrap();
            let denom = (var + 1e-5).sqrt();
            for j in 0..16 {
                let expect = (row[j] - mean) / denom;
                assert!((bm.fusion[(t, j)] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fusion_lambda_never_exceeds_one() {
        // 1000 random parameter draws across both fusion variants
        let data = test_data_config();
        for trial in 0..1000u64 {
            let cfg = ModelConfig {
                hidden_dim: 8,
                attention_heads: 2,
                transformer_layers: 1,
                note_layers: 1,
                note_dim: 4,
                note_heads: 1,
                ..ModelConfig::for_dataset(
                    &data,
                    if trial % 2 == 0 { FusionVariant::Cmag } else { FusionVariant::Mag },
                )
            };
            let model = Model::new(cfg, trial).unwrap();
            let mut tape = Tape::new(false);
            let pv = model.params.leaves(&mut tape);
            let b = model
                .forward(&mut tape, &pv, &visits(1 + (trial as usize % 4)), Mode::Eval)
                .unwrap();
            let lambda = tape.value(b.fusion_lambda);
            assert!(lambda.iter().all(|&l| l <= 1.0 + 1e-12 && l > 0.0));
        }
    }

    #[test]
    fn gradients_reach_every_parameter_group() {
        // no dead paths: a task-style loss must touch demo, note, code,
        // every transformer, fusion, and all four heads
        let model = small_model(FusionVariant::Mag);
        let mut tape = Tape::new(true);
        let pv = model.params.leaves(&mut tape);
        let mut rng = stream(5, Domain::Dropout, 0);
        let b = model
            .forward(&mut tape, &pv, &visits(3), Mode::Train { rng: &mut rng })
            .unwrap();
        let cat_targets = multi_hot(&[1, 4], 7);
        let typ_targets = multi_hot(&[0, 2], 3);
        let l_cat = tape.bce_with_logits(b.y_hat, &cat_targets);
        let l_d = tape.bce_with_logits(b.o_demo, &typ_targets);
        let l_n = tape.bce_with_logits(b.o_note, &typ_targets);
        let l_c = tape.bce_with_logits(b.o_code, &typ_targets);
        let s1 = tape.add(l_cat, l_d);
        let s2 = tape.add(l_n, l_c);
        let loss = tape.add(s1, s2);
        let grads = tape.backward(loss);
        let mut groups: std::collections::HashMap<&str, f64> = Default::default();
        for (i, v) in pv.iter().enumerate() {
            let name = model.params.name(i);
            let prefix = name.split('.').next().unwrap();
            let norm = grads
                .get(*v)
                .map(|g| g.iter().map(|x| x * x).sum::<f64>())
                .unwrap_or(0.0);
            *groups.entry(prefix).or_insert(0.0) += norm;
        }
        for prefix in ["demo", "note", "code", "tf", "fusion", "head"] {
            assert!(
                groups.get(prefix).copied().unwrap_or(0.0) > 0.0,
                "no gradient reached group {prefix}"
            );
        }
    }

    #[test]
    fn paper_scale_head_widths() {
        let data = DatasetConfig {
            typing_count: 17,
            category_count: 126,
            unique_count: 3882,
            patient_count: 1,
            ..DatasetConfig::default()
        };
        let cfg = ModelConfig::teacher(&data);
        assert_eq!(cfg.hidden_dim, 128);
        assert_eq!(cfg.dropout, 0.1);
        assert_eq!(cfg.attention_heads, 4);
        assert_eq!(cfg.transformer_layers, 3);
        let model = Model::new(cfg, 0).unwrap();
        let mut tape = Tape::new(false);
        let pv = model.params.leaves(&mut tape);
        let vs: Vec<EncodedVisit> = (0..2)
            .map(|i| EncodedVisit {
                demo: vec![i % 2, i % 9, i % 5],
                note: vec![1, 2, 3],
                codes: vec![10 * i + 1, 20 * i + 2],
                present: Presence::ALL,
            })
            .collect();
        let b = model.forward(&mut tape, &pv, &vs, Mode::Eval).unwrap();
        assert_eq!(tape.value(b.y_hat).dim(), (1, 126));
        assert_eq!(tape.value(b.o_demo).dim(), (1, 17));
    }

    #[test]
    fn note_lr_group_is_exactly_the_note_prefix() {
        let model = small_model(FusionVariant::Cmag);
        let note_params: Vec<&str> = (0..model.params.len())
            .map(|i| model.params.name(i))
            .filter(|n| Model::is_note_encoder_param(n))
            .collect();
        assert!(note_params.iter().all(|n| n.starts_with("note.")));
        assert!(note_params.iter().any(|n| n.contains("token_embed")));
        assert!(note_params.iter().any(|n| n.contains("proj")));
        assert!(!Model::is_note_encoder_param("tf.cmt_dn.layer0.attn.q.w"));
    }

    #[test]
    fn zero_stream_inputs_give_position_constant_outputs() {
        // a transformer fed identical all-zero streams twice produces the
        // same bias-driven constants each time
        let model = small_model(FusionVariant::Cmag);
        let run = || {
            let mut tape = Tape::new(false);
            let pv = model.params.leaves(&mut tape);
            let zero = tape.leaf(Arr::zeros((3, 16)));
            // reach into the sat_c stack through the public forward path is
            // not possible with a leaf, so compare full forwards on a fixed
            // all-sentinel record instead
            let _ = zero;
            let data = test_data_config();
            let raw = crate::ehr::Visit {
                demographics: vec![0, 0],
                note: vec![0],
                codes: vec![0],
                present: Presence {
                    demo: false,
                    note: false,
                    codes: false,
                },
            };
            // all-missing is not storable; emulate with per-modality sentinels
            let enc = EncodedVisit {
                demo: data.demo_cardinalities.clone(),
                note: vec![data.unk_token(); data.max_note_len],
                codes: vec![data.code_sentinel()],
                present: raw.present,
            };
            let b = model.forward(&mut tape, &pv, &[enc.clone(), enc], Mode::Eval).unwrap();
            b.values(&tape)
        };
        let a = run();
        let b = run();
        assert_eq!(a.s_c, b.s_c);
        assert_eq!(a.fusion, b.fusion);
    }
}
