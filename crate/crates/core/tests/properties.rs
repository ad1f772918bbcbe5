use proptest::prelude::*;

use tbtm_core::cipher::{decrypt_field, encrypt_field, KeySet};
use tbtm_core::control::{classify_entity, mining_difficulty, EntityStatus, ReplayKey, ReplayWindow, Thresholds};
use tbtm_core::tokenchain::{AccessServiceRecord, FixedClock, Ledger};
use tbtm_core::trust::{split_offset, update_trust, OffsetRatio, TrustState, WeightParams};

fn keyset() -> impl Strategy<Value = KeySet> {
    (any::<[u8; 8]>(), any::<[u8; 8]>(), any::<[u8; 8]>()).prop_map(|(a, b, c)| KeySet::new_allow_degenerate(a, b, c))
}

fn small_ledger() -> Ledger {
    let keys = KeySet::from_hex_list("0123456789abcdef,23456789abcdef01,456789abcdef0123").unwrap();
    let recs: Vec<AccessServiceRecord> =
        (0..9).map(|i| AccessServiceRecord::new(format!("s{i}"), "o", format!("e{}", i % 2), 1.0 + i as f64, 10.0)).collect();
    let mut l = Ledger::new(4).unwrap();
    l.append_records(&recs, &keys, 3, &FixedClock(1_000)).unwrap();
    l
}

/// The update rule evaluated directly over the full history.
fn batch_next(history: &[f64], offset: f64, p: &WeightParams) -> f64 {
    let n = history.len() as f64;
    let mean = history.iter().sum::<f64>() / n;
    let var = history.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    p.alpha * offset + p.beta * history[history.len() - 1] + p.gamma * mean + p.delta * var.sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn cipher_roundtrip(plain in proptest::collection::vec(any::<u8>(), 1..80), keys in keyset()) {
        let tok = encrypt_field(&plain, &keys).unwrap();
        prop_assert_eq!(tok.as_bytes().len() % 8, 0);
        prop_assert_eq!(decrypt_field(&tok, &keys).unwrap(), plain);
    }

    #[test]
    fn running_sums_match_batch(
        offsets in proptest::collection::vec(0.0f64..=1.0, 1..1000),
        t0 in 0.0f64..1.0,
        beta in 0.05f64..0.95,
        alpha in 0.001f64..0.2,
        delta in -2.0f64..-0.01,
    ) {
        let p = WeightParams::new(alpha, beta, 1.0 - beta, delta, t0).unwrap();
        let mut state = TrustState::seeded(t0);
        let mut history = vec![t0];
        for s in offsets {
            let expected = batch_next(&history, s, &p);
            let got = update_trust(&mut state, s, &p);
            // absolute on the trust scale, relative once a divergent run leaves it
            prop_assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0), "{got} vs {expected}");
            history.push(got);
        }
    }

    #[test]
    fn offsets_sum_to_normalized_score(score in 0.0f64..=24.0, rs in 1u32..10, ro in 1u32..10, re in 1u32..10) {
        let split = split_offset(score, 24.0, OffsetRatio::new(rs, ro, re).unwrap()).unwrap();
        prop_assert!((split.total() - score / 24.0).abs() <= 1e-12);
    }

    #[test]
    fn any_single_bit_flip_is_detected(block in 0usize..3, record in 0usize..3, field in 0usize..6, bit in 0usize..64) {
        let mut l = small_ledger();
        prop_assert!(l.validate().valid());
        let b = &mut l.blocks_mut()[block];
        let r = &mut b.records[record];
        match field {
            0 => { let n = r.cs.as_bytes().len(); r.cs.bytes_mut()[bit / 8 % n] ^= 1 << (bit % 8); }
            1 => { let n = r.co.as_bytes().len(); r.co.bytes_mut()[bit / 8 % n] ^= 1 << (bit % 8); }
            2 => { let n = r.ce.as_bytes().len(); r.ce.bytes_mut()[bit / 8 % n] ^= 1 << (bit % 8); }
            3 => r.score = f64::from_bits(r.score.to_bits() ^ (1 << (bit % 63))),
            4 => b.header.merkle_root.0[bit % 32] ^= 1 << (bit % 8),
            _ => b.header.prev_hash.0[bit % 32] ^= 1 << (bit % 8),
        }
        prop_assert!(!l.validate().valid());
    }

    #[test]
    fn replay_filtering_is_idempotent(tuples in proptest::collection::vec(0u8..4, 1..300), tau in 1usize..40) {
        let tok = |i: u8| tbtm_core::cipher::CipherToken::from_bytes(vec![i; 8]).unwrap();
        let key = |i: u8| ReplayKey::new(&tok(i), &tok(0), &tok(1), 5.0);
        let mut first = ReplayWindow::new(tau);
        let kept: Vec<(usize, u8)> =
            tuples.iter().enumerate().filter(|(seq, t)| !first.observe(key(**t), *seq)).map(|(s, t)| (s, *t)).collect();
        let mut second = ReplayWindow::new(tau);
        let again: Vec<(usize, u8)> = kept.iter().copied().filter(|(seq, t)| !second.observe(key(*t), *seq)).collect();
        prop_assert_eq!(kept, again);
    }

    #[test]
    fn classification_partitions_the_line(t in -1.0f64..2.0, nu in 0.0f64..0.5, gap in 0.001f64..0.5, eps in -0.1f64..-0.0001) {
        let th = Thresholds::new(nu + gap, nu, eps, 10).unwrap();
        let (status, adjusted) = classify_entity(t, &th);
        match status {
            EntityStatus::Normal => prop_assert!(t > th.mu && adjusted == t),
            EntityStatus::Warning => prop_assert!(t > th.nu && t <= th.mu && adjusted < t),
            EntityStatus::Malicious => prop_assert!(t <= th.nu && adjusted == t),
        }
    }

    #[test]
    fn difficulty_is_clamped_and_monotone(t1 in 0.0f64..1.0, t2 in 0.0f64..1.0, base in 0u32..32, floor_frac in 0.0f64..=1.0, scale in 0.0f64..64.0) {
        let floor = (f64::from(base) * floor_frac) as u32;
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let d_lo = mining_difficulty(lo, base, scale, floor);
        let d_hi = mining_difficulty(hi, base, scale, floor);
        prop_assert!(d_lo >= d_hi);
        prop_assert!((floor..=base).contains(&d_lo) && (floor..=base).contains(&d_hi));
    }
}
