use aria_core::alignment::axis_channel_alignment;
use aria_core::embedding::{cosine_embedding_scores, EmbeddingTable};
use aria_core::features::{FeatureData, FeatureSet, FeatureSpec};
use aria_core::homogeneity::{channel_z, top_k_group, NullModel};
use aria_core::io::{read_asm1_from, write_asm1_to, SegmentMap};
use aria_core::linalg::{SvdMethod, SvdOptions};
use aria_core::matrix::MatrixData;
use aria_core::normalize::{aggregate_to_tracks, normalize_per_query, NormalizationMode};
use aria_core::reliability::{diagnose, mean_abs_inter_query_correlation, DiagnoseConfig};
use aria_core::{Precision, ScoreMatrix};
use proptest::prelude::*;

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = ScoreMatrix> {
    prop::collection::vec(-5.0f64..5.0, rows * cols)
        .prop_map(move |v| ScoreMatrix::from_rows_f64(rows, cols, v).unwrap())
}

fn map_columns(s: &ScoreMatrix, f: impl Fn(usize, f64) -> f64) -> ScoreMatrix {
    let t = s.ncols();
    let v = s.to_f64_vec().iter().enumerate().map(|(i, &x)| f(i % t, x)).collect();
    s.with_values(v, Precision::F64).unwrap()
}

fn vector_set(n: usize, dim: usize, values: &[f64]) -> FeatureSet {
    let data = (0..n).map(|i| Some(values[i * dim..(i + 1) * dim].to_vec())).collect();
    FeatureSet::new(
        ids("t", n),
        vec![FeatureSpec::vector("f", "c", dim, "f")],
        vec![FeatureData::Vector(data)],
        Vec::<String>::new(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn asm1_round_trip_is_bitwise(rows in 1usize..8, cols in 1usize..6, f32_mode: bool, seed in any::<u64>()) {
        let mut x = seed | 1;
        let mut next = || { x ^= x << 13; x ^= x >> 7; x ^= x << 17; f64::from_bits((x >> 12) | 0x3FF0_0000_0000_0000) - 1.5 };
        let vals: Vec<f64> = (0..rows * cols).map(|_| next()).collect();
        let data = if f32_mode {
            MatrixData::F32(vals.iter().map(|&v| v as f32).collect())
        } else {
            MatrixData::F64(vals)
        };
        let s = ScoreMatrix::new(rows, cols, data, ids("seg-", rows), ids("q é", cols)).unwrap();
        let mut buf = Vec::new();
        write_asm1_to(&mut buf, &s).unwrap();
        let back = read_asm1_from(&mut buf.as_slice(), "mem").unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn rank_mode_ignores_increasing_transforms(s in matrix(12, 4), pow in 1u32..4, shift in -3.0f64..3.0) {
        let t = map_columns(&s, |j, x| match j % 3 {
            0 => x.exp(),
            1 => (x + shift).powi(2 * pow as i32 - 1),
            _ => 3.0 * x + shift,
        });
        let a = normalize_per_query(&s, NormalizationMode::Rank).unwrap().matrix.to_f64_vec();
        let b = normalize_per_query(&t, NormalizationMode::Rank).unwrap().matrix.to_f64_vec();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn zscore_mode_ignores_positive_affine_maps(s in matrix(15, 3), scale in 0.1f64..10.0, shift in -10.0f64..10.0) {
        let t = map_columns(&s, |j, x| scale * (j + 1) as f64 * x + shift);
        let a = normalize_per_query(&s, NormalizationMode::Zscore).unwrap().matrix.to_f64_vec();
        let b = normalize_per_query(&t, NormalizationMode::Zscore).unwrap().matrix.to_f64_vec();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn kappa_ignores_affine_maps(s in matrix(20, 5), scales in prop::collection::vec(prop_oneof![-4.0f64..-0.25, 0.25f64..4.0], 5), shift in -5.0f64..5.0) {
        let t = map_columns(&s, |j, x| scales[j] * x + shift);
        let a = mean_abs_inter_query_correlation(&s, 1024, 7).unwrap().kappa;
        let b = mean_abs_inter_query_correlation(&t, 1024, 7).unwrap().kappa;
        prop_assert!((a - b).abs() <= 1e-10);
    }

    #[test]
    fn energy_ratios_are_scale_free_and_sum_to_one(s in matrix(10, 6), c in 0.01f64..100.0) {
        let cfg = DiagnoseConfig { svd: SvdOptions { k: 6, method: SvdMethod::Exact, ..SvdOptions::default() }, ..DiagnoseConfig::default() };
        let a = diagnose(&s, &cfg).unwrap();
        let b = diagnose(&map_columns(&s, |_, x| c * x), &cfg).unwrap();
        prop_assert!((a.energy_ratios.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for (x, y) in a.energy_ratios.iter().zip(&b.energy_ratios) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn aggregation_preserves_weighted_column_sums(s in matrix(14, 3), cuts in prop::collection::vec(0usize..5, 14)) {
        let pairs: Vec<(String, String)> = s.row_ids().iter().zip(&cuts).map(|(r, c)| (r.clone(), format!("t{c}"))).collect();
        let map = SegmentMap::from_pairs(pairs).unwrap();
        let track = aggregate_to_tracks(&s, &map).unwrap();
        for j in 0..s.ncols() {
            let seg: f64 = s.column(j).iter().sum();
            let tr: f64 = (0..track.nrows()).map(|i| map.track_sizes()[i] as f64 * track.get(i, j)).sum();
            prop_assert!((seg - tr).abs() <= 1e-9 * seg.abs().max(1.0));
        }
        let ones = s.with_values(vec![2.5; 42], Precision::F64).unwrap();
        prop_assert!(aggregate_to_tracks(&ones, &map).unwrap().to_f64_vec().iter().all(|&x| x == 2.5));
    }

    #[test]
    fn top_k_ignores_increasing_transforms(scores in prop::collection::vec(-3i32..3, 25), k in 1usize..25) {
        let fs = vector_set(25, 1, &(0..25).map(f64::from).collect::<Vec<_>>());
        let col: Vec<f64> = scores.iter().map(|&x| f64::from(x)).collect();
        let s = ScoreMatrix::from_f64(25, 1, col.clone(), ids("t", 25), ids("q", 1)).unwrap();
        let t = s.with_values(col.iter().map(|x| x.powi(3) + 1.0).collect(), Precision::F64).unwrap();
        let a = top_k_group(&s, &fs, "q0", k).unwrap();
        let b = top_k_group(&t, &fs, "q0", k).unwrap();
        prop_assert_eq!(a.track_ids, b.track_ids);
    }

    #[test]
    fn z_is_free_of_feature_rescaling(vals in prop::collection::vec(-2.0f64..2.0, 30 * 3), scale in prop_oneof![-5.0f64..-0.2, 0.2f64..5.0], shift in -10.0f64..10.0, col in prop::collection::vec(-1.0f64..1.0, 30)) {
        let fs = vector_set(30, 3, &vals);
        let moved: Vec<f64> = vals.iter().enumerate().map(|(i, &x)| if i % 3 == 0 { scale * x + shift } else { x }).collect();
        let gs = vector_set(30, 3, &moved);
        let s = ScoreMatrix::from_f64(30, 1, col, ids("t", 30), ids("q", 1)).unwrap();
        let ch = vec!["c".to_string()];
        let za = channel_z(&top_k_group(&s, &fs, "q0", 6).unwrap(), "c", &fs, &NullModel::build(&fs, &ch, 6, 40, 3).unwrap()).unwrap();
        let zb = channel_z(&top_k_group(&s, &gs, "q0", 6).unwrap(), "c", &gs, &NullModel::build(&gs, &ch, 6, 40, 3).unwrap()).unwrap();
        prop_assert!((za - zb).abs() <= 1e-8 * za.abs().max(1.0), "{za} vs {zb}");
    }

    #[test]
    fn alignment_ignores_sign_and_feature_affine_maps(vals in prop::collection::vec(-2.0f64..2.0, 40 * 3), u in prop::collection::vec(-1.0f64..1.0, 40), scales in prop::collection::vec(prop_oneof![-3.0f64..-0.3, 0.3f64..3.0], 3), shift in -5.0f64..5.0) {
        let fs = vector_set(40, 3, &vals);
        let moved: Vec<f64> = vals.iter().enumerate().map(|(i, &x)| scales[i % 3] * x + shift).collect();
        let gs = vector_set(40, 3, &moved);
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        let tracks = ids("t", 40);
        let a = axis_channel_alignment(&u, &tracks, &fs, "c").unwrap();
        let b = axis_channel_alignment(&neg, &tracks, &gs, "c").unwrap();
        let close = |x: Option<f64>, y: Option<f64>| (x.unwrap() - y.unwrap()).abs() <= 1e-9;
        prop_assert!(close(a.alpha_max, b.alpha_max));
        prop_assert!(close(a.alpha_reg, b.alpha_reg));
        prop_assert!(a.alpha_reg.unwrap() >= a.alpha_max.unwrap() - 1e-12);
    }

    #[test]
    fn self_cosine_is_symmetric_with_unit_diagonal(vals in prop::collection::vec(0.1f64..3.0, 6 * 4)) {
        let e = EmbeddingTable::new(ids("x", 6), 4, vals).unwrap();
        let s = cosine_embedding_scores(&e, &e).unwrap();
        for i in 0..6 {
            prop_assert!((s.get(i, i) - 1.0).abs() <= 1e-12);
            for j in 0..6 {
                prop_assert!((s.get(i, j) - s.get(j, i)).abs() <= 1e-12);
            }
        }
    }
}
