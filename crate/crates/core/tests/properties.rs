use std::sync::OnceLock;

use num_bigint::BigUint;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use xfl_core::crypto::paillier::default_djn_exp_bits;
use xfl_core::crypto::{
    ct_add, ct_mul_scalar, pack_pair, paillier_decrypt, paillier_encrypt_pk, paillier_keygen, unpack_pair, PackParams,
    PaillierPrivateKey, PaillierPublicKey,
};
use xfl_core::data::{
    auc, bin_index, data_split, dirichlet_partition, equal_frequency_binning, ks_statistic, PartitionKind,
    PartitionSpec, Table,
};
use xfl_core::numeric::{FixedPointParams, RingVector};
use xfl_core::secagg::{aggregate_masked, local_mask_plans, mask_update, PartyId};
use xfl_core::vertical::{goss_select, GossSpec};

fn keys() -> &'static (PaillierPublicKey, PaillierPrivateKey) {
    static KEYS: OnceLock<(PaillierPublicKey, PaillierPrivateKey)> = OnceLock::new();
    KEYS.get_or_init(|| paillier_keygen(512, default_djn_exp_bits(512), &mut ChaCha20Rng::seed_from_u64(1)).unwrap())
}

fn table(rows: &[Vec<f64>], labels: Vec<f64>) -> Table {
    let ids = (0..rows.len()).map(|i| format!("r{i}")).collect();
    let names = (0..rows[0].len()).map(|j| format!("x{j}")).collect();
    Table::from_rows(ids, names, rows, Some(labels)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fixed_point_error_is_at_most_half_a_step(x in -1e6f64..1e6) {
        let fp = FixedPointParams::default();
        prop_assert!((fp.decode(fp.encode(x).unwrap()) - x).abs() <= fp.resolution() / 2.0);
    }

    #[test]
    fn ring_sum_of_encodings_decodes_to_the_sum(a in prop::collection::vec(-1e4f64..1e4, 1..50), seed in any::<u64>()) {
        let fp = FixedPointParams::default();
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x * 0.5 - (seed % 97) as f64 + i as f64).collect();
        let mut s = RingVector::encode(&a, fp).unwrap();
        s.add_assign(&RingVector::encode(&b, fp).unwrap()).unwrap();
        for ((x, y), z) in a.iter().zip(&b).zip(s.decode()) {
            prop_assert!((x + y - z).abs() <= fp.resolution());
        }
    }

    #[test]
    fn packed_pairs_add_slotwise(pairs in prop::collection::vec((-1.0f64..1.0, 0.0f64..0.25), 1..40)) {
        let (pp, fp) = (PackParams::default(), FixedPointParams::default());
        let sum: BigUint = pairs.iter().map(|&(g, h)| pack_pair(g, h, &pp, &fp).unwrap()).sum();
        let (g, h) = unpack_pair(&sum, pairs.len() as u64, &pp, &fp).unwrap();
        let eg: f64 = pairs.iter().map(|p| fp.quantize(p.0).unwrap()).sum();
        let eh: f64 = pairs.iter().map(|p| fp.quantize(p.1).unwrap()).sum();
        prop_assert_eq!((g, h), (eg, eh));
    }

    #[test]
    fn paillier_is_additively_homomorphic(a in any::<u64>(), b in any::<u64>(), k in any::<u32>(), seed in any::<u64>()) {
        let (pk, sk) = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (a, b, k) = (BigUint::from(a), BigUint::from(b), BigUint::from(k));
        let ca = paillier_encrypt_pk(pk, &a, &mut rng).unwrap();
        let cb = paillier_encrypt_pk(pk, &b, &mut rng).unwrap();
        prop_assert_eq!(paillier_decrypt(sk, &ct_add(pk, &ca, &cb).unwrap()).unwrap(), &a + &b);
        prop_assert_eq!(paillier_decrypt(sk, &ct_mul_scalar(pk, &ca, &k).unwrap()).unwrap(), &a * &k);
    }

    #[test]
    fn dirichlet_partition_covers_every_row_once(
        labels in prop::collection::vec(0u8..4, 20..300),
        parties in 2usize..6,
        beta in 0.05f64..5.0,
        seed in any::<u64>(),
    ) {
        let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        let spec = PartitionSpec { kind: PartitionKind::Dirichlet, beta, n_parties: parties, seed };
        let parts = dirichlet_partition(&y, &spec).unwrap();
        prop_assert_eq!(parts.len(), parties);
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..y.len()).collect::<Vec<_>>());
    }

    #[test]
    fn data_split_is_a_disjoint_cover(n in 5usize..200, ratio in 0.1f64..0.9, seed in any::<u64>()) {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let t = table(&rows, vec![0.0; n]);
        let (train, valid) = data_split(&t, ratio, seed).unwrap();
        prop_assert_eq!(train.n_rows() + valid.n_rows(), n);
        let mut ids: Vec<&String> = train.ids().iter().chain(valid.ids()).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
    }

    #[test]
    fn ks_is_invariant_under_monotone_score_maps(scores in prop::collection::vec(0.0f64..1.0, 10..200), seed in any::<u64>()) {
        let labels: Vec<f64> = scores.iter().enumerate().map(|(i, _)| f64::from(((seed >> (i % 64)) & 1) as u8)).collect();
        prop_assume!(labels.contains(&0.0) && labels.contains(&1.0));
        let ks = ks_statistic(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp()).collect();
        prop_assert_eq!(ks, ks_statistic(&mapped, &labels).unwrap());
        prop_assert!((0.0..=1.0).contains(&ks));
        let flipped: Vec<f64> = labels.iter().map(|l| 1.0 - l).collect();
        let a = auc(&scores, &labels).unwrap();
        prop_assert!((a + auc(&scores, &flipped).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bins_are_monotone_in_the_value(column in prop::collection::vec(-100.0f64..100.0, 2..300), bins in 2usize..40) {
        let splits = equal_frequency_binning(&column, bins).unwrap();
        prop_assert!(splits.len() < bins);
        prop_assert!(splits.windows(2).all(|w| w[0] < w[1]));
        let mut sorted = column.clone();
        sorted.sort_by(f64::total_cmp);
        let idx: Vec<usize> = sorted.iter().map(|&x| bin_index(&splits, x)).collect();
        prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn goss_keeps_the_requested_counts(g in prop::collection::vec(-1.0f64..1.0, 100..400), seed in any::<u64>()) {
        let spec = GossSpec { top_rate: 0.1, other_rate: 0.2, seed };
        let s = goss_select(&g, &spec).unwrap();
        let n = g.len() as f64;
        let top = s.multipliers.iter().filter(|&&m| m == 1.0).count();
        prop_assert_eq!(top, (0.1 * n - 1e-9).ceil() as usize);
        prop_assert_eq!(s.indices.len() - top, (0.2 * n - 1e-9).ceil() as usize);
        prop_assert!(s.indices.windows(2).all(|w| w[0] < w[1]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn pairwise_masks_cancel(parties in 2u32..6, len in 1usize..64, seed in any::<u64>(), round in any::<u64>()) {
        let fp = FixedPointParams::default();
        let ids: Vec<PartyId> = (0..parties).map(|i| PartyId::new(i, format!("p{i}"))).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (plans, exchanges) = local_mask_plans(&ids, b"props", &mut rng).unwrap();
        prop_assert_eq!(exchanges, (parties * (parties - 1) / 2) as usize);
        let vectors: Vec<RingVector> = (0..parties)
            .map(|p| RingVector::encode(&(0..len).map(|j| (p as f64) - j as f64 * 0.25).collect::<Vec<_>>(), fp).unwrap())
            .collect();
        let masked: Vec<_> = vectors.iter().zip(&plans).map(|(v, pl)| mask_update(v, pl, round).unwrap()).collect();
        for (m, v) in masked.iter().zip(&vectors) {
            prop_assert_ne!(&m.to_bytes(), &v.to_bytes());
        }
        let mut plain = RingVector::zeros(len, fp);
        for v in &vectors {
            plain.add_assign(v).unwrap();
        }
        prop_assert_eq!(aggregate_masked(&masked, &ids, round).unwrap(), plain);
    }
}
