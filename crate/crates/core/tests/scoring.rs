use pepr_core::model::{build_regressor, GroupScheme};
use pepr_core::nn::softmax_rows;
use pepr_core::scoring::{
    ensemble_score, score_cpepr, score_epow, score_klm_counted, score_max_logit, score_msp, score_pepr, KlmTemplates,
    DEFAULT_PSI,
};
use pepr_core::Tensor2;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Tensor2> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |v| Tensor2::from_vec(rows, cols, v).unwrap())
}

/// Random-width logits with a matching batch of embeddings.
fn logits_and_embeddings() -> impl Strategy<Value = (Tensor2, Tensor2)> {
    (1usize..12, 2usize..8).prop_flat_map(|(rows, c)| (matrix(rows, c, 4.0), matrix(rows, 5, 3.0)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pepr_is_non_negative_and_cpepr_adds_epow(
        (logits, z) in logits_and_embeddings(),
        seed in 0u64..1000,
        psi in 0.0f64..1.0,
    ) {
        let (rows, c) = logits.shape();
        let y = softmax_rows(&logits);
        let reg = build_regressor(c, 5, 1.0 / 32.0, seed).unwrap();
        let pepr = score_pepr(&y, &reg).unwrap();
        prop_assert!(pepr.values.iter().all(|&v| v >= 0.0));
        let epow = score_epow(&z, psi).unwrap();
        let cpepr = score_cpepr(&y, &z, &reg, psi).unwrap();
        for i in 0..rows {
            prop_assert_eq!(cpepr.values[i], pepr.values[i] + epow.values[i]);
        }
        let plain = score_cpepr(&y, &z, &reg, 0.0).unwrap();
        prop_assert_eq!(plain.values, pepr.values);
    }

    #[test]
    fn logit_shift_moves_max_logit_and_keeps_msp(logits in matrix(6, 5, 5.0), shift in -10.0f64..10.0) {
        let shifted = logits.map(|v| v + shift);
        let (a, b) = (score_max_logit(&logits).unwrap(), score_max_logit(&shifted).unwrap());
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((y - x - shift).abs() < 1e-12);
        }
        let (p, q) = (score_msp(&softmax_rows(&logits)).unwrap(), score_msp(&softmax_rows(&shifted)).unwrap());
        for (x, y) in p.values.iter().zip(&q.values) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn msp_is_at_least_one_over_c(logits in matrix(5, 7, 6.0)) {
        let s = score_msp(&softmax_rows(&logits)).unwrap();
        prop_assert!(s.values.iter().all(|&v| (1.0 / 7.0 - 1e-15..=1.0).contains(&v)));
    }

    #[test]
    fn klm_is_maximal_on_templates(logits in matrix(12, 4, 3.0)) {
        let y = softmax_rows(&logits);
        let labels: Vec<usize> = (0..12).map(|i| i % 4).collect();
        let t = KlmTemplates::fit(&y, &labels).unwrap();
        let rows: Vec<&[f64]> = t.templates.iter().map(|(_, d)| d.as_slice()).collect();
        let (on, n) = score_klm_counted(&Tensor2::from_rows(&rows).unwrap(), &t).unwrap();
        prop_assert!(on.values.iter().all(|&v| v == 0.0));
        prop_assert_eq!(n, 16);
        let (off, _) = score_klm_counted(&y, &t).unwrap();
        prop_assert!(off.values.iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn grouped_rows_sum_to_group_count(logits in matrix(4, 15, 5.0), groups in 1usize..6) {
        let scheme = GroupScheme::even_split(10, groups).unwrap();
        let block = logits.column_block(0, scheme.logit_width());
        let p = scheme.grouped_softmax(&block).unwrap();
        for row in p.iter_rows() {
            prop_assert!((row.iter().sum::<f64>() - groups as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn cpepr_uses_the_documented_psi() {
    let z = Tensor2::from_vec(1, 4, vec![1.0, -1.0, 2.0, 0.0]).unwrap();
    let e = score_epow(&z, DEFAULT_PSI).unwrap();
    assert!((e.values[0] - 0.01 * 1.5).abs() < 1e-15);
}

#[test]
fn ensemble_of_equal_members_is_that_member() {
    let y = softmax_rows(&Tensor2::from_vec(3, 3, vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0, -1.0, 5.0, 2.0]).unwrap());
    let reg = build_regressor(3, 4, 1.0 / 32.0, 9).unwrap();
    let one = score_pepr(&y, &reg).unwrap();
    let avg = ensemble_score(&[one.clone(), one.clone(), one.clone()]).unwrap();
    for (a, b) in avg.values.iter().zip(&one.values) {
        assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
    }
    assert_eq!(avg.method.members, 3);
}
