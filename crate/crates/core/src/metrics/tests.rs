use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

// ---------------------------------------------------------------------
// Independent definitional oracles. These deliberately avoid the library
// code paths (full-matrix DP, joined-string n-gram maps, direct sums).
// ---------------------------------------------------------------------

pub(crate) fn oracle_edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

pub(crate) fn oracle_wer(r: &str, h: &str) -> f64 {
    let rt = crate::text::tokenize(r);
    let ht = crate::text::tokenize(h);
    oracle_edit_distance(&rt, &ht) as f64 / rt.len().max(1) as f64
}

pub(crate) fn oracle_cer(r: &str, h: &str) -> f64 {
    let rc: Vec<char> = r.to_lowercase().chars().collect();
    let hc: Vec<char> = h.to_lowercase().chars().collect();
    oracle_edit_distance(&rc, &hc) as f64 / rc.len().max(1) as f64
}

pub(crate) fn oracle_bleu(r: &str, h: &str, max_n: usize) -> f64 {
    use std::collections::HashMap;
    let rt = crate::text::tokenize(r);
    let ht = crate::text::tokenize(h);
    if ht.is_empty() {
        return 0.0;
    }
    let grams = |toks: &[String], n: usize| -> HashMap<String, usize> {
        let mut m = HashMap::new();
        if toks.len() >= n {
            for i in 0..=(toks.len() - n) {
                *m.entry(toks[i..i + n].join("\x1f")).or_insert(0) += 1;
            }
        }
        m
    };
    let mut product = 1.0f64;
    for n in 1..=max_n {
        let rg = grams(&rt, n);
        let hg = grams(&ht, n);
        let total: usize = hg.values().sum();
        let matched: usize =
            hg.iter().map(|(g, &c)| c.min(rg.get(g).copied().unwrap_or(0))).sum();
        let p = if matched == 0 {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        } else {
            matched as f64 / total as f64
        };
        product *= p.powf(1.0 / max_n as f64);
    }
    let bp =
        if ht.len() < rt.len() { (1.0 - rt.len() as f64 / ht.len() as f64).exp() } else { 1.0 };
    bp * product
}

pub(crate) fn oracle_f1(
    truths: &[BTreeSet<u32>],
    preds: &[BTreeSet<u32>],
    universe: &BTreeSet<u32>,
) -> (f64, f64) {
    let f1_of = |tp: f64, fp: f64, fneg: f64| -> f64 {
        let p = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let r = if tp + fneg == 0.0 { 0.0 } else { tp / (tp + fneg) };
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    };
    let mut gtp = 0.0;
    let mut gfp = 0.0;
    let mut gfn = 0.0;
    let mut per_label = Vec::new();
    for &l in universe {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fneg = 0.0;
        for (t, p) in truths.iter().zip(preds) {
            if t.contains(&l) && p.contains(&l) {
                tp += 1.0;
            }
            if !t.contains(&l) && p.contains(&l) {
                fp += 1.0;
            }
            if t.contains(&l) && !p.contains(&l) {
                fneg += 1.0;
            }
        }
        gtp += tp;
        gfp += fp;
        gfn += fneg;
        per_label.push(f1_of(tp, fp, fneg));
    }
    let micro = f1_of(gtp, gfp, gfn);
    let macro_f1 = per_label.iter().sum::<f64>() / per_label.len() as f64;
    (micro, macro_f1)
}

pub(crate) fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let sx = (x.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>() / n).sqrt();
    let sy = (y.iter().map(|b| (b - my) * (b - my)).sum::<f64>() / n).sqrt();
    cov / (sx * sy)
}

pub(crate) fn oracle_spearman(x: &[f64], y: &[f64]) -> f64 {
    // Ranks via sorted position averaging; independent of average_ranks.
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut sorted: Vec<f64> = v.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.iter()
            .map(|&x| {
                let first = sorted.iter().position(|&s| s == x).unwrap();
                let count = sorted.iter().filter(|&&s| s == x).count();
                // average of 1-based ranks first+1 ..= first+count
                (2 * first + count + 1) as f64 / 2.0
            })
            .collect()
    };
    oracle_pearson(&rank(x), &rank(y))
}

fn random_sentence(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    const WORDS: &[&str] = &[
        "patient", "has", "ards", "arts", "breath", "pain", "chest", "the", "and", "severe",
        "mild", "left", "arm", "dizzy", "nausea",
    ];
    let n = rng.gen_range(0..=max_words);
    (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------------
// Frozen examples.
// ---------------------------------------------------------------------

#[test]
fn wer_examples() {
    assert!((wer("patient has ards", "patient has arts") - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(wer("same text", "same text"), 0.0);
    assert_eq!(wer("", ""), 0.0);
}

#[test]
fn cer_examples() {
    assert!((cer("patient has ards", "patient has arts") - 0.0625).abs() < 1e-12);
    assert_eq!(cer("identical", "identical"), 0.0);
    assert_eq!(cer("abcd", ""), 1.0);
}

#[test]
fn exact_match_examples() {
    assert_eq!(exact_match("shortness of breath ards", "shortness of breath ards"), 1);
    assert_eq!(exact_match("shortness of breath ards ", "shortness  of breath ards"), 1);
    assert_eq!(exact_match("ards", "arts"), 0);
}

#[test]
fn bleu_examples() {
    assert!((bleu("the patient has chest pain", "the patient has chest pain", 4) - 1.0).abs() < 1e-12);
    assert_eq!(bleu("anything here", "", 4), 0.0);
    let b = bleu("the patient has chest pain", "the patient has pain", 4);
    assert!(b > 0.0 && b < 1.0);
}

#[test]
fn bleu_is_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let r = random_sentence(&mut rng, 8);
        let h = random_sentence(&mut rng, 8);
        let b = bleu(&r, &h, 4);
        assert!((0.0..=1.0 + 1e-12).contains(&b), "bleu out of range: {b} for {r:?} vs {h:?}");
    }
    assert_eq!(bleu("a b c", "a b c", 4), 1.0);
}

#[test]
fn topk_examples() {
    let rankings = vec![vec![2u32, 0, 1]];
    assert_eq!(topk_accuracy(&rankings, &[0], 1).unwrap(), 0.0);
    assert_eq!(topk_accuracy(&rankings, &[0], 3).unwrap(), 1.0);

    let all_first = vec![vec![4u32, 1, 2], vec![7, 0, 3]];
    for k in 1..=3 {
        assert_eq!(topk_accuracy(&all_first, &[4, 7], k).unwrap(), 1.0);
    }
    assert!(matches!(
        topk_accuracy(&[vec![1u32]], &[1], 2),
        Err(MetricError::RangeError { .. })
    ));
}

#[test]
fn topk_monotone_in_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..50 {
        let n = rng.gen_range(1..20);
        let rankings: Vec<Vec<u32>> = (0..n)
            .map(|_| {
                let mut classes: Vec<u32> = (0..8).collect();
                for i in (1..classes.len()).rev() {
                    classes.swap(i, rng.gen_range(0..=i));
                }
                classes
            })
            .collect();
        let truths: Vec<u32> = (0..n).map(|_| rng.gen_range(0..8)).collect();
        let t1 = topk_accuracy(&rankings, &truths, 1).unwrap();
        let t3 = topk_accuracy(&rankings, &truths, 3).unwrap();
        let t5 = topk_accuracy(&rankings, &truths, 5).unwrap();
        assert!(t1 <= t3 && t3 <= t5);
    }
}

#[test]
fn f1_example_from_confusion_counts() {
    let truths = vec![BTreeSet::from([0u32]), BTreeSet::from([1u32])];
    let preds = vec![BTreeSet::from([0u32, 1]), BTreeSet::new()];
    let universe = BTreeSet::from([0u32, 1]);
    let (micro, macro_f1) = f1_scores(&truths, &preds, &universe).unwrap();
    assert!((micro - 0.5).abs() < 1e-12);
    assert!((macro_f1 - 0.5).abs() < 1e-12);
}

#[test]
fn f1_perfect_and_empty() {
    let truths = vec![BTreeSet::from([0u32, 2]), BTreeSet::from([1u32])];
    let universe = BTreeSet::from([0u32, 1, 2]);
    let (micro, macro_f1) = f1_scores(&truths, &truths.clone(), &universe).unwrap();
    assert_eq!((micro, macro_f1), (1.0, 1.0));

    let empty_preds = vec![BTreeSet::new(), BTreeSet::new()];
    let (micro, _) = f1_scores(&truths, &empty_preds, &universe).unwrap();
    assert_eq!(micro, 0.0);

    assert!(matches!(
        f1_scores(&truths, &empty_preds, &BTreeSet::new()),
        Err(MetricError::EmptyUniverse)
    ));
}

#[test]
fn f1_single_label_micro_equals_macro() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let universe = BTreeSet::from([0u32]);
    for _ in 0..30 {
        let n = rng.gen_range(1..10);
        let truths: Vec<BTreeSet<u32>> = (0..n)
            .map(|_| if rng.gen_bool(0.5) { BTreeSet::from([0]) } else { BTreeSet::new() })
            .collect();
        let preds: Vec<BTreeSet<u32>> = (0..n)
            .map(|_| if rng.gen_bool(0.5) { BTreeSet::from([0]) } else { BTreeSet::new() })
            .collect();
        let (micro, macro_f1) = f1_scores(&truths, &preds, &universe).unwrap();
        assert!((micro - macro_f1).abs() < 1e-12);
    }
}

#[test]
fn mse_examples() {
    assert_eq!(mse(&[1.0, 2.0], &[1.0, 4.0]).unwrap(), 2.0);
    assert_eq!(mse(&[3.5, -1.0], &[3.5, -1.0]).unwrap(), 0.0);
    assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(MetricError::LengthError { .. })));
}

#[test]
fn pearson_spearman_examples() {
    assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);

    let x = [1.0, 2.0, 3.0];
    let y = [1.0, 4.0, 9.0];
    assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-12);
    assert!(pearson(&x, &y).unwrap() < 1.0);

    assert!(matches!(
        pearson(&[1.0, 2.0], &[5.0, 5.0]),
        Err(MetricError::DegenerateVariance { side: "y" })
    ));
}

#[test]
fn correlation_invariance_under_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let n = rng.gen_range(3..20);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let p = match pearson(&x, &y) {
            Ok(p) => p,
            Err(_) => continue,
        };
        // positive affine transform leaves pearson unchanged
        let x2: Vec<f64> = x.iter().map(|v| 3.0 * v + 7.0).collect();
        assert!((pearson(&x2, &y).unwrap() - p).abs() < 1e-9);

        // strictly monotone transform leaves spearman unchanged
        let s = spearman(&x, &y).unwrap();
        let x3: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        assert!((spearman(&x3, &y).unwrap() - s).abs() < 1e-9);
        assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&p));
        assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
    }
}

// ---------------------------------------------------------------------
// Oracle agreement on seeded random cases.
// ---------------------------------------------------------------------

#[test]
fn string_metrics_match_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..200 {
        let r = random_sentence(&mut rng, 10);
        let h = random_sentence(&mut rng, 10);
        assert!((wer(&r, &h) - oracle_wer(&r, &h)).abs() < 1e-12);
        assert!((cer(&r, &h) - oracle_cer(&r, &h)).abs() < 1e-12);
        assert!(
            (bleu(&r, &h, 4) - oracle_bleu(&r, &h, 4)).abs() < 1e-9,
            "bleu mismatch for {r:?} vs {h:?}"
        );
        // wer/cer are zero iff normalized strings are equal
        if crate::text::normalize_ws(&r) == crate::text::normalize_ws(&h) {
            assert_eq!(wer(&r, &h), 0.0);
            assert_eq!(cer(&r, &h), 0.0);
        } else {
            assert!(wer(&r, &h) > 0.0 || cer(&r, &h) > 0.0);
        }
    }
}

#[test]
fn set_and_regression_metrics_match_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let universe: BTreeSet<u32> = (0..6).collect();
    for _ in 0..200 {
        let n = rng.gen_range(1..15);
        let rand_set = |rng: &mut ChaCha8Rng| -> BTreeSet<u32> {
            (0..6).filter(|_| rng.gen_bool(0.3)).collect()
        };
        let truths: Vec<BTreeSet<u32>> = (0..n).map(|_| rand_set(&mut rng)).collect();
        let preds: Vec<BTreeSet<u32>> = (0..n).map(|_| rand_set(&mut rng)).collect();
        let (micro, macro_f1) = f1_scores(&truths, &preds, &universe).unwrap();
        let (omicro, omacro) = oracle_f1(&truths, &preds, &universe);
        assert!((micro - omicro).abs() < 1e-9);
        assert!((macro_f1 - omacro).abs() < 1e-9);

        let m = rng.gen_range(2..20);
        let x: Vec<f64> = (0..m).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..m).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let direct: f64 =
            x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / m as f64;
        assert!((mse(&x, &y).unwrap() - direct).abs() < 1e-12);
        if let Ok(p) = pearson(&x, &y) {
            assert!((p - oracle_pearson(&x, &y)).abs() < 1e-9);
        }
        if let Ok(s) = spearman(&x, &y) {
            assert!((s - oracle_spearman(&x, &y)).abs() < 1e-9);
        }
    }
}
