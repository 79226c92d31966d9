use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::{grad_check, Tape};

fn unit_rows(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::new();
    for _ in 0..rows {
        let r: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        data.extend(r.iter().map(|x| x / n));
    }
    Tensor::new([rows, cols], data).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Plain loops over the softmax expression for both directions.
fn itc_oracle(img: &Tensor, txt: &Tensor, img_m: &Tensor, txt_m: &Tensor, tau: f64, state: &ContrastiveState) -> f64 {
    let b = img.rows();
    let one_direction = |anchor: &Tensor, batch: &Tensor, queue: Vec<&[f64]>| {
        let mut total = 0.0;
        for i in 0..b {
            let mut cands: Vec<&[f64]> = (0..b).map(|j| batch.row(j)).collect();
            cands.extend(queue.iter().copied());
            let logits: Vec<f64> = cands.iter().map(|c| dot(anchor.row(i), c) / tau).collect();
            let lse = logits.iter().map(|l| l.exp()).sum::<f64>().ln();
            total += lse - logits[i];
        }
        total / b as f64
    };
    0.5 * (one_direction(img, txt_m, state.text_queue().collect())
        + one_direction(txt, img_m, state.image_queue().collect()))
}

fn itc_value(img: &Tensor, txt: &Tensor, img_m: &Tensor, txt_m: &Tensor, tau: f64, state: &ContrastiveState) -> Result<f64> {
    let tape = Tape::new();
    let loss = itc_loss(
        tape.constant(img.clone()),
        tape.constant(txt.clone()),
        img_m,
        txt_m,
        tape.constant(Tensor::scalar(tau)),
        state,
    )?;
    Ok(loss.item())
}

#[test]
fn itc_single_pair_empty_queue_is_zero() {
    let a = unit_rows(1, 4, 1);
    let b = unit_rows(1, 4, 2);
    let state = ContrastiveState::new(8);
    assert!(itc_value(&a, &b, &a, &b, 0.07, &state).unwrap().abs() < 1e-12);
}

#[test]
fn itc_equal_similarities_give_ln_n() {
    // Every candidate equals the anchor direction, so all logits tie.
    let v = Tensor::from_rows(&vec![vec![1.0, 0.0, 0.0]; 3]).unwrap();
    let mut state = ContrastiveState::new(8);
    state.enqueue(&Tensor::from_rows(&vec![vec![1.0, 0.0, 0.0]; 2]).unwrap(), &Tensor::from_rows(&vec![vec![1.0, 0.0, 0.0]; 2]).unwrap()).unwrap();
    let loss = itc_value(&v, &v, &v, &v, 0.1, &state).unwrap();
    assert!((loss - 5f64.ln()).abs() < 1e-12);
}

#[test]
fn itc_matches_loop_oracle() {
    for seed in 0..5 {
        let (img, txt, img_m, txt_m) = (
            unit_rows(4, 6, seed),
            unit_rows(4, 6, seed + 10),
            unit_rows(4, 6, seed + 20),
            unit_rows(4, 6, seed + 30),
        );
        let mut state = ContrastiveState::new(5);
        let tau = 0.07 + 0.05 * seed as f64;
        for step in 0..3 {
            let got = itc_value(&img, &txt, &img_m, &txt_m, tau, &state).unwrap();
            let want = itc_oracle(&img, &txt, &img_m, &txt_m, tau, &state);
            assert!((got - want).abs() < 1e-10, "seed {seed} step {step}: {got} vs {want}");
            state.enqueue(&unit_rows(2, 6, 100 + step), &unit_rows(2, 6, 200 + step)).unwrap();
        }
    }
}

#[test]
fn itc_rejects_non_positive_temperature() {
    let a = unit_rows(2, 4, 1);
    let state = ContrastiveState::new(0);
    for tau in [0.0, -0.1] {
        assert!(matches!(itc_value(&a, &a, &a, &a, tau, &state), Err(Error::Contract(_))));
    }
}

fn random_orthogonal(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let m = unit_rows(n, n, seed);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        let mut v = m.row(i).to_vec();
        for b in &basis {
            let d = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = dot(&v, &v).sqrt();
        basis.push(v.iter().map(|x| x / norm).collect());
    }
    basis
}

fn rotate(t: &Tensor, q: &[Vec<f64>]) -> Tensor {
    let rows: Vec<Vec<f64>> = (0..t.rows()).map(|i| q.iter().map(|qr| dot(qr, t.row(i))).collect()).collect();
    Tensor::from_rows(&rows).unwrap()
}

#[test]
fn itc_is_rotation_invariant() {
    let q = random_orthogonal(5, 3);
    let parts = [unit_rows(3, 5, 1), unit_rows(3, 5, 2), unit_rows(3, 5, 3), unit_rows(3, 5, 4)];
    let (qi, qt) = (unit_rows(4, 5, 5), unit_rows(4, 5, 6));
    let mut state = ContrastiveState::new(4);
    state.enqueue(&qi, &qt).unwrap();
    let mut rotated = ContrastiveState::new(4);
    rotated.enqueue(&rotate(&qi, &q), &rotate(&qt, &q)).unwrap();
    let base = itc_value(&parts[0], &parts[1], &parts[2], &parts[3], 0.07, &state).unwrap();
    let r: Vec<Tensor> = parts.iter().map(|p| rotate(p, &q)).collect();
    let turned = itc_value(&r[0], &r[1], &r[2], &r[3], 0.07, &rotated).unwrap();
    assert!((base - turned).abs() < 1e-9);
}

#[test]
fn itc_decreases_as_positive_similarity_rises() {
    // Candidates are e0..e3; the first image swings from e4 towards e0, which
    // raises only its positive similarity.
    let e = |k: usize| {
        let mut v = vec![0.0; 6];
        v[k] = 1.0;
        v
    };
    let targets = Tensor::from_rows(&[e(0), e(1), e(2), e(3)]).unwrap();
    let others = [e(1), e(2), e(3)];
    let state = ContrastiveState::new(0);
    let mut previous = f64::INFINITY;
    for step in 0..=10 {
        let theta = step as f64 * std::f64::consts::FRAC_PI_2 / 10.0;
        let mut first = vec![0.0; 6];
        first[4] = theta.cos();
        first[0] = theta.sin();
        let mut rows = vec![first];
        rows.extend(others.iter().cloned());
        let img = Tensor::from_rows(&rows).unwrap();
        let loss = itc_value(&img, &targets, &targets, &targets, 0.1, &state).unwrap();
        assert!(loss < previous, "step {step}: {loss} !< {previous}");
        previous = loss;
    }
}

#[test]
fn itc_gradients_pass_grad_check() {
    let img = unit_rows(3, 4, 1);
    let txt = unit_rows(3, 4, 2);
    let img_m = unit_rows(3, 4, 5);
    let mut state = ContrastiveState::new(4);
    state.enqueue(&unit_rows(2, 4, 3), &unit_rows(2, 4, 4)).unwrap();
    let err = grad_check(
        |tape, x| {
            let img = x.l2_normalize_rows();
            itc_loss(img, tape.constant(txt.clone()), &img_m, &txt, tape.constant(Tensor::scalar(0.2)), &state)
        },
        &img,
        1e-5,
    );
    assert!(err < 1e-4, "{err}");
    let err = grad_check(
        |tape, t| itc_loss(tape.constant(img.clone()), tape.constant(txt.clone()), &img, &txt, t, &state),
        &Tensor::scalar(0.15),
        1e-6,
    );
    assert!(err < 1e-4, "{err}");
}

proptest! {
    #[test]
    fn queue_keeps_most_recent_in_fifo_order(capacity in 0usize..10, batches in 1usize..6, n in 1usize..4) {
        let mut state = ContrastiveState::new(capacity);
        let mut pushed = Vec::new();
        for b in 0..batches {
            let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![(b * n + i) as f64, 0.0]).collect();
            let t = Tensor::from_rows(&rows).unwrap();
            state.enqueue(&t, &t).unwrap();
            pushed.extend((0..n).map(|i| (b * n + i) as f64));
        }
        let expected: Vec<f64> = pushed[pushed.len() - capacity.min(batches * n)..].to_vec();
        let got: Vec<f64> = state.image_queue().map(|r| r[0]).collect();
        prop_assert_eq!(state.len(), capacity.min(batches * n));
        prop_assert_eq!(got, expected.clone());
        let got_text: Vec<f64> = state.text_queue().map(|r| r[0]).collect();
        prop_assert_eq!(got_text, expected);
    }
}

fn itm_value(logits: Vec<Vec<f64>>, matches: &[bool]) -> (f64, bool) {
    let tape = Tape::new();
    let out = itm_loss(tape.constant(Tensor::from_rows(&logits).unwrap()), matches).unwrap();
    (out.loss.item(), out.positives_only)
}

#[test]
fn itm_examples() {
    let (l, _) = itm_value(vec![vec![-60.0, 60.0]], &[true]);
    assert!(l < 1e-12);
    let (l, _) = itm_value(vec![vec![0.3, 0.3], vec![-1.0, -1.0]], &[true, false]);
    assert!((l - 2f64.ln()).abs() < 1e-12);

    // Hand case: P(match) = sigmoid(z1 - z0).
    let (l, flag) = itm_value(vec![vec![0.0, 1.0], vec![0.5, -0.5]], &[true, false]);
    let p1 = 1.0 / (1.0 + (-1.0f64).exp());
    let p2 = 1.0 / (1.0 + (-(-1.0f64)).exp());
    let want = (-(p1.ln()) - (1.0 - p2).ln()) / 2.0;
    assert!((l - want).abs() < 1e-10);
    assert!(!flag);

    let (_, flag) = itm_value(vec![vec![0.0, 1.0]], &[true]);
    assert!(flag);
}

#[test]
fn itm_negative_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(sample_itm_negatives(1, None, |_, _| false, &mut rng).is_none());
    for n in 2..8 {
        let neg = sample_itm_negatives(n, None, |_, _| false, &mut rng).unwrap();
        assert!(neg.iter().enumerate().all(|(i, &j)| i != j && j < n));
    }
    // 0 and 1 are equivalent, so 0 must pick 2.
    let neg = sample_itm_negatives(3, None, |i, j| i.min(j) == 0 && i.max(j) == 1, &mut rng).unwrap();
    assert_eq!(neg[0], 2);
    assert_eq!(neg[1], 2);
    // Everything equivalent: still a mismatch by index.
    let neg = sample_itm_negatives(2, None, |_, _| true, &mut rng).unwrap();
    assert_eq!(neg, vec![1, 0]);

    // Hard negatives concentrate on the most similar partner.
    let sim = Tensor::from_rows(&[vec![1.0, 0.9, -1.0], vec![0.9, 1.0, -1.0], vec![-1.0, 0.8, 1.0]]).unwrap();
    let mut hits = 0;
    for _ in 0..200 {
        let neg = sample_itm_negatives(3, Some((&sim, 0.05)), |_, _| false, &mut rng).unwrap();
        hits += usize::from(neg[0] == 1);
    }
    assert!(hits > 190, "{hits}");
}

fn lm_value(logits: Vec<Vec<f64>>, targets: &[usize]) -> Result<f64> {
    let tape = Tape::new();
    Ok(lm_loss(tape.constant(Tensor::from_rows(&logits).unwrap()), targets)?.item())
}

#[test]
fn lm_examples() {
    let l = lm_value(vec![vec![0.2; 7]; 3], &[3, 4, 5]).unwrap();
    assert!((l - 7f64.ln()).abs() < 1e-12);

    let mut sharp = vec![vec![0.0; 5]; 2];
    sharp[0][3] = 60.0;
    sharp[1][4] = 60.0;
    assert!(lm_value(sharp, &[3, 4]).unwrap() < 1e-20);

    let logits = vec![vec![1.0, 2.0, 0.5], vec![0.0, -1.0, 3.0], vec![2.0, 2.0, 2.0]];
    let targets = [1, 2, 1];
    let step = |row: &[f64], t: usize| {
        let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
        lse - row[t]
    };
    let want = (0..3).map(|i| step(&logits[i], targets[i])).sum::<f64>() / 3.0;
    assert!((lm_value(logits.clone(), &targets).unwrap() - want).abs() < 1e-10);

    // [PAD] positions drop out of the average.
    let padded = lm_value(logits.clone(), &[1, 2, PAD]).unwrap();
    let want = (step(&logits[0], 1) + step(&logits[1], 2)) / 2.0;
    assert!((padded - want).abs() < 1e-10);

    assert!(matches!(lm_value(logits.clone(), &[PAD, PAD, PAD]), Err(Error::Contract(_))));
    assert!(lm_value(logits, &[1, 2]).is_err());
}

fn bce_value(p: Vec<f64>, y: Vec<f64>) -> f64 {
    let tape = Tape::new();
    bce_loss(tape.constant(Tensor::vector(p)), &Tensor::vector(y)).unwrap().item()
}

#[test]
fn bce_examples() {
    let y: Vec<f64> = (0..27).map(|i| f64::from(i % 3 == 0)).collect();
    assert!(bce_value(y.clone(), y.clone()) <= 1.01e-7);
    assert!((bce_value(vec![0.5; 27], y) - 2f64.ln()).abs() < 1e-12);
    let want = (-(0.9f64.ln()) - 0.9f64.ln() - 0.5f64.ln()) / 3.0;
    assert!((bce_value(vec![0.9, 0.1, 0.5], vec![1.0, 0.0, 1.0]) - want).abs() < 1e-12);
    let tape = Tape::new();
    assert!(bce_loss(tape.constant(Tensor::vector(vec![0.5; 3])), &Tensor::vector(vec![1.0; 2])).is_err());
}

#[test]
fn bce_and_lm_gradients_pass_grad_check() {
    let y = Tensor::vector(vec![1.0, 0.0, 1.0, 0.0]);
    let z = Tensor::vector(vec![0.3, -1.2, 2.0, 0.1]);
    assert!(grad_check(|_, x| bce_loss(x.sigmoid(), &y), &z, 1e-5) < 1e-4);
    let logits = unit_rows(3, 5, 9);
    assert!(grad_check(|_, x| lm_loss(x, &[1, 4, 2]), &logits, 1e-5) < 1e-4);
    let itm = unit_rows(4, 2, 10);
    assert!(grad_check(|_, x| Ok(itm_loss(x, &[true, false, true, false])?.loss), &itm, 1e-5) < 1e-4);
}

#[test]
fn total_is_the_plain_sum() {
    let tape = Tape::new();
    let s = |v: f64| tape.constant(Tensor::scalar(v));
    let (t, b) = total_loss(s(0.0), s(0.0), s(0.0)).unwrap();
    assert_eq!(t.item(), 0.0);
    assert_eq!(b.total, 0.0);
    let (t, b) = total_loss(s(0.25), s(1.5), s(3.125)).unwrap();
    assert!((t.item() - 4.875).abs() < 1e-12);
    assert!((b.total - (b.l_itc + b.l_itm + b.l_lm)).abs() < 1e-9);
}
