use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mmdit_align::autograd::Tape;
use mmdit_align::flow::{fm_loss, interpolate};
use mmdit_align::metrics::{
    alignment_score, dominates, fit_gaussian, frechet_distance, pareto_report, GridResult, ScoringHead,
};
use mmdit_align::model::{FeatureTap, MmDit, ModelConfig};
use mmdit_align::supervision::{alignment_distance, decode_temb, encode_temb, TeacherEmbedding, TeacherSet};
use mmdit_align::tensor::Tensor;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |d| Tensor::new([rows, cols], d).unwrap())
}

fn sized_matrix() -> impl Strategy<Value = Tensor> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| matrix(r, c))
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        depth: 2,
        hidden_dim: 8,
        heads: 2,
        latent_channels: 1,
        latent_height: 4,
        latent_width: 4,
        text_tokens: 2,
        text_embed_dim: 4,
        time_embed_dim: 4,
        mlp_ratio: 1,
        ..ModelConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(x in sized_matrix()) {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let s = tape.softmax(v, 1).unwrap();
        let cols = x.shape()[1];
        for row in tape.value(s).data().chunks(cols) {
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fm_loss_is_non_negative_and_zero_at_target(
        z0 in matrix(3, 4),
        z1 in matrix(3, 4),
        pred in matrix(3, 4),
    ) {
        let mut tape = Tape::new();
        let v = tape.constant(pred);
        let l = fm_loss(&mut tape, v, &z0, &z1).unwrap();
        prop_assert!(tape.value(l).item() >= 0.0);

        let u = z1.zip_map(&z0, "u", |a, b| a - b).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(u);
        let l = fm_loss(&mut tape, v, &z0, &z1).unwrap();
        prop_assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn interpolation_endpoints_are_exact(z0 in sized_matrix(), seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let z1 = Tensor::randn(z0.shape().to_vec(), &mut r);
        prop_assert!(interpolate(&z0, &z1, 0.0).unwrap().bit_eq(&z0));
        prop_assert!(interpolate(&z0, &z1, 1.0).unwrap().bit_eq(&z1));
    }

    #[test]
    fn alignment_distance_bounded_and_scale_invariant(
        projected in matrix(3, 5),
        teacher in matrix(2, 5),
        row_scales in prop::collection::vec(0.01f64..100.0, 3),
        teacher_scale in 0.01f64..100.0,
    ) {
        let emb = TeacherEmbedding::new(0, teacher.clone()).unwrap();
        let d = alignment_distance(&emb, &projected).unwrap();
        prop_assert!((0.0..=2.0 + 1e-12).contains(&d), "{d}");

        let mut scaled = projected.clone();
        for (row, s) in scaled.data_mut().chunks_mut(5).zip(&row_scales) {
            row.iter_mut().for_each(|x| *x *= s);
        }
        let emb_scaled = TeacherEmbedding::new(0, teacher.map(|x| x * teacher_scale)).unwrap();
        let d2 = alignment_distance(&emb_scaled, &scaled).unwrap();
        prop_assert!((d - d2).abs() < 1e-9, "{d} vs {d2}");
    }

    #[test]
    fn frechet_is_symmetric_and_zero_on_self(a in matrix(6, 3), b in matrix(6, 3)) {
        let fa = fit_gaussian(&a).unwrap();
        let fb = fit_gaussian(&b).unwrap();
        let ab = frechet_distance(&fa, &fb).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, frechet_distance(&fb, &fa).unwrap());
        prop_assert_eq!(frechet_distance(&fa, &fa).unwrap(), 0.0);
    }

    #[test]
    fn alignment_score_ignores_positive_rescale(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let teachers = TeacherSet::synthetic([0, 1, 2], 4, 2, seed).unwrap();
        let head = ScoringHead::new(12, 4, &mut r).unwrap();
        let scored: Vec<(u64, Tensor)> = (0..6).map(|i| (i % 3, Tensor::randn([3, 2, 2], &mut r))).collect();
        let rescaled: Vec<(u64, Tensor)> = scored.iter().map(|(id, z)| (*id, z.map(|x| x * scale))).collect();
        let a = alignment_score(&teachers, &scored, &head).unwrap();
        let b = alignment_score(&teachers, &rescaled, &head).unwrap();
        prop_assert!((-1.0..=1.0).contains(&a));
        prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn pareto_flags_match_brute_force(points in prop::collection::vec((0u8..6, 0u8..6), 1..12)) {
        let grid: Vec<GridResult> = points
            .iter()
            .enumerate()
            .map(|(i, &(f, s))| GridResult { label: format!("c{i}"), fid: f as f64, score: s as f64 / 5.0 })
            .collect();
        let report = pareto_report(&grid);
        prop_assert_eq!(report.rows.len(), grid.len());
        for row in &report.rows {
            let beaten = grid.iter().any(|other| {
                (other.fid <= row.result.fid && other.score >= row.result.score)
                    && (other.fid < row.result.fid || other.score > row.result.score)
            });
            prop_assert_eq!(row.non_dominated, !beaten);
            prop_assert_eq!(beaten, grid.iter().any(|o| dominates(o, &row.result)));
        }
    }

    #[test]
    fn temb_round_trips_f32_values(
        ids in prop::collection::btree_set(any::<u64>(), 1..5),
        k in 1usize..4,
        e in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let set = TeacherSet::new(ids.iter().map(|&id| {
            let t = Tensor::randn([k, e], &mut r).map(|x| x as f32 as f64);
            TeacherEmbedding::new(id, t).unwrap()
        }))
        .unwrap();
        let bytes = encode_temb(&set);
        prop_assert_eq!(bytes.len(), 20 + set.len() * (8 + 4 * k * e));
        let back = decode_temb(&bytes).unwrap();
        prop_assert!(back.bit_eq(&set));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn feature_tap_never_changes_the_velocity(seed in any::<u64>(), t in 0.0f64..1.0, depth_n in 1usize..=2) {
        let cfg = tiny_model();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (model, mut params) = MmDit::new(cfg.clone(), &mut r).unwrap();
        for v in params.values_mut() {
            *v = Tensor::rand_uniform(v.shape().to_vec(), -0.5, 0.5, &mut r);
        }
        let z = Tensor::randn(cfg.latent_shape().to_vec(), &mut r);
        let text = Tensor::randn([2, 4], &mut r);
        let (plain, none) = model.predict(&params, &z, t, &text, None).unwrap();
        let tap = FeatureTap::new(depth_n, cfg.depth).unwrap();
        let (tapped, feats) = model.predict(&params, &z, t, &text, Some(tap)).unwrap();
        prop_assert!(none.is_none());
        prop_assert!(plain.bit_eq(&tapped));
        let feats = feats.unwrap();
        prop_assert_eq!(feats.shape(), &[cfg.num_patches(), cfg.hidden_dim][..]);
    }
}
