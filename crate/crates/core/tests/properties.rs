use std::collections::BTreeSet;

use proptest::prelude::*;

use picrel_core::classify::{
    mean_std, sample_episode, train, ClassifierKind, ClassifierSpec, EvalReport, FewShotConfig,
};
use picrel_core::corpus::Label;
use picrel_core::embedding::JointVector;
use picrel_core::filtering::{rank_with_vectors, select_top_bottom, FilterSpec};
use picrel_core::focused_areas::select_focused_areas;
use picrel_core::regions::{iou, nms, BoundingBox, ScoredBox};
use picrel_core::relevance::{image_to_texts_match, text_to_images_match, RelevanceMatrix};
use picrel_core::subimage::pairwise_separation;
use picrel_core::viz::accumulate_heatmap;

fn bbox(w: u32, h: u32) -> impl Strategy<Value = BoundingBox> {
    (0..w, 0..h).prop_flat_map(move |(x0, y0)| {
        (x0 + 1..=w, y0 + 1..=h).prop_map(move |(x1, y1)| BoundingBox::new(x0, y0, x1, y1).unwrap())
    })
}

fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6, 1usize..6)
        .prop_flat_map(|(m, n)| prop::collection::vec(prop::collection::vec(-50.0f64..50.0, n), m))
}

fn labelled_vectors() -> impl Strategy<Value = Vec<(Vec<f64>, Label)>> {
    (2usize..8, 1usize..6).prop_flat_map(|(n, d)| {
        prop::collection::vec(
            (
                prop::collection::vec(-1.0f64..1.0, d)
                    .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3)),
                any::<bool>().prop_map(|b| if b { Label::Hc } else { Label::Ad }),
            ),
            n,
        )
        .prop_filter("both labels", |v| {
            v.iter().any(|(_, l)| *l == Label::Hc) && v.iter().any(|(_, l)| *l == Label::Ad)
        })
    })
}

proptest! {
    #[test]
    fn softmax_views_are_distributions(rows in matrix(), shift in -100.0f64..100.0) {
        let m = RelevanceMatrix::from_rows(rows.clone()).unwrap();
        let shifted = RelevanceMatrix::from_rows(
            rows.iter().map(|r| r.iter().map(|v| v + shift).collect()).collect(),
        )
        .unwrap();
        for i in 0..m.rows() {
            let p = image_to_texts_match(&m, i).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let q = image_to_texts_match(&shifted, i).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
        for j in 0..m.cols() {
            let p = text_to_images_match(&m, j).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn filter_keeps_sorted_bounded_subset(
        scores in prop::collection::vec(-5.0f64..5.0, 1..15),
        k_t in 0usize..8,
        k_b in 0usize..8,
    ) {
        let ranked: Vec<(usize, f64)> = {
            let mut r: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
            r.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            r
        };
        let spec = FilterSpec::new(k_t, k_b);
        let kept = select_top_bottom(&ranked, spec);
        let n = scores.len();
        if spec.is_passthrough() {
            prop_assert_eq!(kept.len(), n);
        } else {
            prop_assert!(kept.len() <= n.min(k_t + k_b));
            let wider = select_top_bottom(&ranked, FilterSpec::new(k_t + 1, k_b));
            prop_assert!(kept.is_subset(&wider));
        }
        prop_assert!(kept.iter().all(|&i| i < n));
    }

    #[test]
    fn separation_is_scale_and_order_free(items in labelled_vectors(), lambda in 0.1f64..10.0) {
        let base: Vec<(&[f64], Label)> = items.iter().map(|(v, l)| (v.as_slice(), *l)).collect();
        let d = pairwise_separation(&base).unwrap();
        let scaled: Vec<(Vec<f64>, Label)> =
            items.iter().map(|(v, l)| (v.iter().map(|x| x * lambda).collect(), *l)).collect();
        let s: Vec<(&[f64], Label)> = scaled.iter().map(|(v, l)| (v.as_slice(), *l)).collect();
        prop_assert!((pairwise_separation(&s).unwrap() - d).abs() < 1e-9);
        let mut rev = base.clone();
        rev.reverse();
        prop_assert!((pairwise_separation(&rev).unwrap() - d).abs() < 1e-9);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(64, 64), b in bbox(64, 64)) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn nms_output_is_spread_and_stable(
        boxes in prop::collection::vec((bbox(50, 50), 0.0f64..1.0), 1..20),
        thr in 0.1f64..0.9,
    ) {
        let scored: Vec<ScoredBox> = boxes.iter().map(|(b, s)| ScoredBox { bbox: *b, score: *s }).collect();
        let kept = nms(&scored, thr);
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(iou(&a.bbox, &b.bbox) <= thr);
            }
        }
        prop_assert_eq!(nms(&kept, thr), kept.clone());
        let best = scored.iter().map(|s| s.score).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(kept[0].score, best);
        if let Ok(areas) = select_focused_areas(&scored, kept.len(), thr) {
            prop_assert!(areas.summed_scores.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn heatmap_total_and_order(boxes in prop::collection::vec(bbox(30, 20), 0..12)) {
        let g = accumulate_heatmap(&boxes, 30, 20).unwrap();
        prop_assert_eq!(g.total(), boxes.iter().map(|b| b.area()).sum::<u64>());
        let mut rev = boxes.clone();
        rev.reverse();
        prop_assert_eq!(accumulate_heatmap(&rev, 30, 20).unwrap(), g);
    }

    #[test]
    fn episodes_partition_correctly(
        n_hc in 5usize..20,
        n_ad in 5usize..20,
        k in 1usize..3,
        t in 1usize..3,
        seed in any::<u64>(),
        round in 0usize..1000,
    ) {
        let labels: Vec<Label> = (0..n_hc).map(|_| Label::Hc).chain((0..n_ad).map(|_| Label::Ad)).collect();
        let cfg = FewShotConfig { k, test_per_class: t, rounds: 1, rng_seed: seed };
        let ep = sample_episode(&labels, &cfg, round);
        let train: BTreeSet<usize> = ep.train.iter().copied().collect();
        let test: BTreeSet<usize> = ep.test.iter().copied().collect();
        prop_assert_eq!(train.len(), 2 * k);
        prop_assert_eq!(test.len(), 2 * t);
        prop_assert!(train.is_disjoint(&test));
        for label in Label::ALL {
            prop_assert_eq!(ep.train.iter().filter(|&&i| labels[i] == label).count(), k);
            prop_assert_eq!(ep.test.iter().filter(|&&i| labels[i] == label).count(), t);
        }
        prop_assert_eq!(sample_episode(&labels, &cfg, round), ep);
    }

    #[test]
    fn report_mean_matches_rounds(accs in prop::collection::vec(0.0f64..=1.0, 1..50)) {
        let r = EvalReport::from_rounds(accs.clone(), FewShotConfig::new(1), "p");
        prop_assert!((r.mean - accs.iter().sum::<f64>() / accs.len() as f64).abs() < 1e-12);
        let (m, s) = mean_std(&accs);
        prop_assert_eq!((r.mean, r.std), (m, s));
    }

    #[test]
    fn label_swap_mirrors_predictions(items in labelled_vectors(), query in prop::collection::vec(-1.0f64..1.0, 5)) {
        let swapped: Vec<(Vec<f64>, Label)> = items.iter().map(|(v, l)| (v.clone(), l.other())).collect();
        let spec = ClassifierSpec { kind: ClassifierKind::NearestCentroid, ..Default::default() };
        let a = train(&items, &spec).unwrap();
        let b = train(&swapped, &spec).unwrap();
        let q = &query[..items[0].0.len()];
        prop_assert!((a.decision(q) + b.decision(q)).abs() < 1e-9);
    }

    #[test]
    fn ranking_is_a_permutation(scores in prop::collection::vec(-1.0f64..1.0, 1..10)) {
        let target = JointVector::normalized(vec![1.0, 0.0]).unwrap();
        let sentences: Vec<JointVector> = scores
            .iter()
            .map(|&s| JointVector::normalized(vec![s, (1.0 - s * s).sqrt().max(1e-3)]).unwrap())
            .collect();
        let ranked = rank_with_vectors(&sentences, &target, 100.0);
        let idx: BTreeSet<usize> = ranked.iter().map(|r| r.0).collect();
        prop_assert_eq!(idx.len(), scores.len());
        prop_assert!(ranked.windows(2).all(|w| w[0].1 >= w[1].1));
    }
}

#[test]
fn svm_label_swap_keeps_training_accuracy() {
    let mut data = Vec::new();
    for i in 0..12 {
        let t = i as f64 / 12.0;
        data.push((vec![t.cos(), t.sin()], Label::Hc));
        data.push((vec![1.5 * t.cos() + 0.2, 1.5 * t.sin() - 0.1], Label::Ad));
    }
    let swapped: Vec<(Vec<f64>, Label)> =
        data.iter().map(|(v, l)| (v.clone(), l.other())).collect();
    for kind in [
        ClassifierKind::MaxMarginRbf,
        ClassifierKind::MaxMarginLinear,
    ] {
        let spec = ClassifierSpec {
            kind,
            ..Default::default()
        };
        let a = picrel_core::classify::accuracy(&train(&data, &spec).unwrap(), &data).unwrap();
        let b =
            picrel_core::classify::accuracy(&train(&swapped, &spec).unwrap(), &swapped).unwrap();
        assert!((a - b).abs() < 1e-12, "{kind}: {a} vs {b}");
    }
}
