use serde::{Deserialize, Serialize};

use super::types::{DatasetConfig, Presence, Visit};

/// A visit with missing modalities replaced by sentinel values, ready for the
/// model's embedding layers.
///
/// Sentinels sit one past each valid range: a missing code set becomes the
/// single id `unique_count`, a missing demographic field becomes its
/// cardinality, and a missing note becomes a max-length run of the UNK token
/// id `note_vocab`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedVisit {
    pub demo: Vec<usize>,
    pub note: Vec<usize>,
    pub codes: Vec<usize>,
    pub present: Presence,
}

pub fn encode_missing(visit: &Visit, config: &DatasetConfig) -> EncodedVisit {
    let demo = if visit.present.demo {
        visit.demographics.clone()
    } else {
        config.demo_cardinalities.clone()
    };
    let note = if visit.present.note {
        visit.note.clone()
    } else {
        vec![config.unk_token(); config.max_note_len]
    };
    let codes = if visit.present.codes {
        visit.codes.clone()
    } else {
        vec![config.code_sentinel()]
    };
    EncodedVisit {
        demo,
        note,
        codes,
        present: visit.present,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn visit(present: Presence) -> Visit {
        Visit {
            demographics: vec![1, 3, 0],
            note: vec![5, 6, 7],
            codes: vec![2, 9],
            present,
        }
    }

    #[test]
    fn missing_codes_become_one_past_last_id() {
        // 3882 codes -> sentinel 3882, the "3883rd" value zero-indexed
        let cfg = DatasetConfig {
            unique_count: 3882,
            category_count: 126,
            typing_count: 17,
            ..DatasetConfig::default()
        };
        let v = visit(Presence {
            demo: true,
            note: true,
            codes: false,
        });
        let e = encode_missing(&v, &cfg);
        assert_eq!(e.codes, vec![3882]);
    }

    #[test]
    fn complete_visit_is_unchanged() {
        let cfg = DatasetConfig::default();
        let v = visit(Presence::ALL);
        let e = encode_missing(&v, &cfg);
        assert_eq!(e.demo, v.demographics);
        assert_eq!(e.note, v.note);
        assert_eq!(e.codes, v.codes);
    }

    #[test]
    fn missing_demo_uses_per_field_cardinality() {
        let cfg = DatasetConfig {
            demo_cardinalities: vec![2, 9, 5],
            ..DatasetConfig::default()
        };
        let v = visit(Presence {
            demo: false,
            note: true,
            codes: true,
        });
        let e = encode_missing(&v, &cfg);
        assert_eq!(e.demo, vec![2, 9, 5]);
    }

    #[test]
    fn missing_note_is_max_length_unk() {
        let cfg = DatasetConfig::default();
        let v = visit(Presence {
            demo: true,
            note: false,
            codes: true,
        });
        let e = encode_missing(&v, &cfg);
        assert_eq!(e.note.len(), cfg.max_note_len);
        assert!(e.note.iter().all(|&t| t == cfg.unk_token()));
    }

    #[test]
    fn sentinels_appear_iff_flag_is_false() {
        let cfg = DatasetConfig::default();
        for id in 1..8 {
            let p = Presence::from_pattern_id(id);
            let e = encode_missing(&visit(p), &cfg);
            assert_eq!(e.codes.contains(&cfg.code_sentinel()), !p.codes);
            assert_eq!(e.note.contains(&cfg.unk_token()), !p.note);
            assert_eq!(e.demo[0] == cfg.demo_cardinalities[0], !p.demo);
        }
    }
}
