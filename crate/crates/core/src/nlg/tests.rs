use proptest::prelude::*;

use super::*;

fn toks(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

#[test]
fn bleu_examples() {
    let r = toks("the lung is clear .");
    let s = bleu(&r, &[r.clone()]).unwrap();
    assert_eq!(s.scores, [1.0; 4]);

    let s = bleu(&toks("the cat"), &[toks("the cat sat")]).unwrap();
    let want = (1.0f64 - 3.0 / 2.0).exp();
    assert!((s.scores[0] - want).abs() < 1e-12);
    assert!((s.scores[0] - 0.6065).abs() < 1e-4);
    assert!((s.scores[1] - want).abs() < 1e-12);
    assert_eq!(s.scores[2], 0.0);

    assert_eq!(bleu(&toks("a b c"), &[toks("d e f")]).unwrap().scores, [0.0; 4]);

    // Clipping: "the" counts at most once.
    let s = bleu(&toks("the the the the"), &[toks("the cat")]).unwrap();
    assert!((s.scores[0] - 0.25).abs() < 1e-12);

    let empty: Vec<&str> = Vec::new();
    let s = bleu(&empty, &[toks("a")]).unwrap();
    assert!(s.empty_candidate);
    assert_eq!(s.scores, [0.0; 4]);
    assert!(bleu(&toks("a"), &Vec::<Vec<&str>>::new()).is_err());
}

#[test]
fn bleu_uses_closest_reference_length() {
    // Lengths 2 and 6 around a 3-token candidate: r = 2, no penalty.
    let s = bleu(&toks("a b c"), &[toks("a b"), toks("a b c d e f")]).unwrap();
    assert!((s.scores[0] - 1.0).abs() < 1e-12);
    // Equidistant (2 and 4): the shorter wins.
    let s = bleu(&toks("a b c"), &[toks("a b c d"), toks("a b")]).unwrap();
    assert!((s.scores[0] - 1.0).abs() < 1e-12);
}

/// Clipped precision by direct enumeration of n-gram positions.
fn precision_oracle(c: &[u8], refs: &[Vec<u8>], n: usize) -> (usize, usize) {
    if c.len() < n {
        return (0, 0);
    }
    let grams: Vec<&[u8]> = (0..=c.len() - n).map(|i| &c[i..i + n]).collect();
    let mut distinct: Vec<&[u8]> = grams.clone();
    distinct.sort();
    distinct.dedup();
    let mut matched = 0;
    for g in distinct {
        let in_cand = grams.iter().filter(|x| **x == g).count();
        let mut best = 0;
        for r in refs {
            if r.len() >= n {
                best = best.max((0..=r.len() - n).filter(|&i| &r[i..i + n] == g).count());
            }
        }
        matched += in_cand.min(best);
    }
    (matched, grams.len())
}

fn bleu_oracle(c: &[u8], refs: &[Vec<u8>]) -> [f64; 4] {
    let mut out = [0.0; 4];
    if c.is_empty() {
        return out;
    }
    let mut r = refs[0].len();
    for x in refs {
        let (d, best) = (x.len().abs_diff(c.len()), r.abs_diff(c.len()));
        if d < best || (d == best && x.len() < r) {
            r = x.len();
        }
    }
    let bp = if c.len() >= r { 1.0 } else { (1.0 - r as f64 / c.len() as f64).exp() };
    let mut logs = Vec::new();
    for n in 1..=4 {
        let (m, t) = precision_oracle(c, refs, n);
        if m == 0 {
            break;
        }
        logs.push((m as f64 / t as f64).ln());
        out[n - 1] = bp * (logs.iter().sum::<f64>() / n as f64).exp();
    }
    out
}

fn sequence() -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(0u8..5, 1..12)
}

proptest! {
    #[test]
    fn bleu_matches_enumeration(c in sequence(), refs in proptest::collection::vec(sequence(), 1..4)) {
        let got = bleu(&c, &refs).unwrap().scores;
        let want = bleu_oracle(&c, &refs);
        for k in 0..4 {
            prop_assert!((got[k] - want[k]).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&got[k]));
        }
        // An added order with precision at most the previous minimum cannot raise the score.
        let mut min_p = f64::INFINITY;
        for k in 0..3 {
            let (m, t) = precision_oracle(&c, &refs, k + 1);
            if t == 0 { break; }
            min_p = min_p.min(m as f64 / t as f64);
            let (m2, t2) = precision_oracle(&c, &refs, k + 2);
            if t2 > 0 && (m2 as f64 / t2 as f64) <= min_p {
                prop_assert!(got[k + 1] <= got[k] + 1e-12);
            }
        }
    }

    #[test]
    fn lcs_matches_subsequence_search(a in proptest::collection::vec(0u8..3, 0..8), b in proptest::collection::vec(0u8..3, 0..8)) {
        // Longest subsequence of `a` (by bitmask) that is also a subsequence of `b`.
        let is_sub = |s: &[u8], t: &[u8]| {
            let mut it = t.iter();
            s.iter().all(|x| it.any(|y| y == x))
        };
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let s: Vec<u8> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
            if is_sub(&s, &b) {
                best = best.max(s.len());
            }
        }
        prop_assert_eq!(lcs_len(&a, &b), best);
    }

    #[test]
    fn sentence_metrics_are_bounded(c in sequence(), r in sequence()) {
        let scores = [rouge_l(&c, &r), meteor_lite(&c, &r)];
        for s in scores {
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }
}

#[test]
fn rouge_examples() {
    let a = toks("the heart size is within limits .");
    assert_eq!(rouge_l(&a, &a), 1.0);
    assert_eq!(rouge_l(&toks("a b"), &toks("c d")), 0.0);
    let f = rouge_l(&toks("a b c d"), &toks("a c d e"));
    assert!((f - 0.75).abs() < 1e-12);
    // P = 1, R = 1/2: F = 2.44·0.5 / (0.5 + 1.44).
    let f = rouge_l(&toks("a b"), &toks("a x b y"));
    assert!((f - 2.44 * 0.5 / 1.94).abs() < 1e-12);
}

#[test]
fn meteor_examples() {
    for m in 1..8 {
        let s: Vec<usize> = (0..m).collect();
        let want = 1.0 - 0.5 * (1.0 / m as f64).powi(3);
        assert!((meteor_lite(&s, &s) - want).abs() < 1e-12);
    }
    assert_eq!(meteor_lite(&toks("a b"), &toks("c d")), 0.0);
    assert!((meteor_lite(&toks("b a"), &toks("a b")) - 0.5).abs() < 1e-12);
}

type Gram = Vec<String>;

/// TF-IDF cosine with n-grams spelled out as owned string vectors.
fn cider_oracle(cands: &[Vec<&str>], refs: &[Vec<&str>], clipped: bool) -> Vec<f64> {
    let grams = |t: &[&str], n: usize| -> Vec<Gram> {
        if t.len() < n {
            return vec![];
        }
        (0..=t.len() - n).map(|i| t[i..i + n].iter().map(|s| s.to_string()).collect()).collect()
    };
    let count = |list: &[Gram], g: &Gram| list.iter().filter(|x| *x == g).count() as f64;
    let big_n = cands.len() as f64;
    let mut scores = vec![0.0; cands.len()];
    for n in 1..=4 {
        for i in 0..cands.len() {
            let cg = grams(&cands[i], n);
            let rg = grams(&refs[i], n);
            let idf = |g: &Gram| {
                let df = refs.iter().filter(|r| grams(r, n).contains(g)).count().max(1) as f64;
                (big_n / df).ln()
            };
            let mut vocab: Vec<Gram> = cg.iter().chain(rg.iter()).cloned().collect();
            vocab.sort();
            vocab.dedup();
            let (mut dot, mut nc, mut nr) = (0.0, 0.0, 0.0);
            for g in &vocab {
                let c = count(&cg, g) * idf(g);
                let r = count(&rg, g) * idf(g);
                dot += if clipped { c.min(r) * r } else { c * r };
                nc += c * c;
                nr += r * r;
            }
            if nc > 0.0 && nr > 0.0 {
                let mut s = dot / (nc.sqrt() * nr.sqrt());
                if clipped {
                    let d = cands[i].len() as f64 - refs[i].len() as f64;
                    s *= (-d * d / 72.0).exp();
                }
                scores[i] += s * 2.5;
            }
        }
    }
    scores
}

#[test]
fn cider_matches_brute_force() {
    let cands = vec![
        toks("the lung shows opacity ."),
        toks("the heart size is within limits ."),
        toks("normal study . the lung is clear ."),
    ];
    let refs = vec![
        toks("the lung shows opacity and edema ."),
        toks("the heart shows cardiomegaly ."),
        toks("normal study . the lung is clear . the pleural space is clear ."),
    ];
    let ref_sets: Vec<Vec<Vec<&str>>> = refs.iter().map(|r| vec![r.clone()]).collect();
    for (variant, clipped) in [(CiderVariant::D, true), (CiderVariant::Plain, false)] {
        let got = cider(&cands, &ref_sets, variant).unwrap();
        let want = cider_oracle(&cands, &refs, clipped);
        for (g, w) in got.per_sample.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{variant:?}: {g} vs {w}");
        }
        assert!((got.mean - want.iter().sum::<f64>() / 3.0).abs() < 1e-9);
    }
}

#[test]
fn cider_self_similarity_and_edges() {
    let refs = vec![toks("a b c d e"), toks("f g h i j"), toks("k l m n o")];
    let ref_sets: Vec<Vec<Vec<&str>>> = refs.iter().map(|r| vec![r.clone()]).collect();
    let s = cider(&refs, &ref_sets, CiderVariant::D).unwrap();
    for v in &s.per_sample {
        assert!((v - 10.0).abs() < 1e-9);
    }
    let disjoint = vec![toks("x y"), toks("f g h i j"), toks("k l m n o")];
    let s = cider(&disjoint, &ref_sets, CiderVariant::D).unwrap();
    assert_eq!(s.per_sample[0], 0.0);
    assert!(s.per_sample.iter().all(|v| (0.0..=10.0 + 1e-9).contains(v)));

    assert!(cider(&refs[..1], &ref_sets[..1], CiderVariant::D).is_err());
    assert!(cider(&refs, &ref_sets[..2], CiderVariant::D).is_err());
}

#[test]
fn corpus_order_does_not_matter() {
    let cands = vec![toks("a b c"), toks("b c d e"), toks("a a b"), toks("e d c")];
    let refs: Vec<Vec<Vec<&str>>> =
        vec![vec![toks("a b c d")], vec![toks("b c d")], vec![toks("a b b")], vec![toks("c d e")]];
    let order = [2, 0, 3, 1];
    let pc: Vec<_> = order.iter().map(|&i| cands[i].clone()).collect();
    let pr: Vec<_> = order.iter().map(|&i| refs[i].clone()).collect();

    let a = corpus_bleu(&cands, &refs).unwrap();
    let b = corpus_bleu(&pc, &pr).unwrap();
    for k in 0..4 {
        assert!((a[k] - b[k]).abs() < 1e-12);
    }
    let a = cider(&cands, &refs, CiderVariant::D).unwrap();
    let b = cider(&pc, &pr, CiderVariant::D).unwrap();
    for (k, &i) in order.iter().enumerate() {
        assert!((a.per_sample[i] - b.per_sample[k]).abs() < 1e-12);
    }
}

#[test]
fn corpus_bleu_pools_counts() {
    // Two halves of one sentence score like the whole when lengths match.
    let cands = vec![toks("a b"), toks("c d")];
    let refs = vec![vec![toks("a b")], vec![toks("c x")]];
    let s = corpus_bleu(&cands, &refs).unwrap();
    assert!((s[0] - 0.75).abs() < 1e-12);
    assert!((s[1] - (0.75f64 * 0.5).sqrt()).abs() < 1e-12);
    assert!(corpus_bleu(&cands, &refs[..1]).is_err());
}

#[test]
fn ngram_counter_totals() {
    let t = toks("a b a b");
    for n in 1..=5 {
        let c = NGramCounter::new(&t, n);
        assert_eq!(c.total(), (t.len() + 1).saturating_sub(n));
        assert_eq!(c.order(), n);
    }
    assert_eq!(NGramCounter::new(&t, 2).get(&["a", "b"]), 2);
    assert_eq!(NGramCounter::new(&t, 2).distinct(), 2);
}
