use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::SyntheticImage;
use crate::error::Error;
use crate::tensor::{grad_check, Mask, ParamStore, Tape, Tensor};

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn tiny() -> ModelConfig {
    ModelConfig {
        width: 8,
        layers: 1,
        heads: 2,
        ffn_mult: 2,
        patch: 4,
        image_side: 8,
        channels: 1,
        proj_dim: 4,
        max_len: 12,
        ..ModelConfig::default()
    }
}

fn random_image(side: usize, seed: u64) -> SyntheticImage {
    let t = random(&[side, side, 1], seed);
    SyntheticImage::new(side, side, 1, t.into_data()).unwrap()
}

fn lin(store: &ParamStore, l: &Linear, x: &[f64]) -> Vec<f64> {
    let w = store.value(l.weight);
    let b = store.value(l.bias).data();
    (0..w.cols())
        .map(|j| b[j] + x.iter().enumerate().map(|(i, xi)| xi * w.at(i, j)).sum::<f64>())
        .collect()
}

/// Direct per-query, per-key loop evaluation of multi-head attention.
fn oracle_attention(store: &ParamStore, a: &AttentionBlock, xq: &Tensor, xkv: &Tensor, mask: Option<&Mask>) -> Tensor {
    let q: Vec<Vec<f64>> = (0..xq.rows()).map(|i| lin(store, &a.query, xq.row(i))).collect();
    let k: Vec<Vec<f64>> = (0..xkv.rows()).map(|i| lin(store, &a.key, xkv.row(i))).collect();
    let v: Vec<Vec<f64>> = (0..xkv.rows()).map(|i| lin(store, &a.value, xkv.row(i))).collect();
    let dk = a.d_k();
    let mut rows = Vec::new();
    for i in 0..q.len() {
        let mut merged = vec![0.0; a.width];
        for h in 0..a.heads {
            let cols = h * dk..(h + 1) * dk;
            let mut scores = Vec::new();
            for j in 0..k.len() {
                if mask.map_or(true, |m| m.allows(i, j)) {
                    let s: f64 = cols.clone().map(|c| q[i][c] * k[j][c]).sum();
                    scores.push((j, s / (dk as f64).sqrt()));
                }
            }
            let top = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s.1 - top).exp()).sum();
            for &(j, s) in &scores {
                let w = (s - top).exp() / z;
                for c in cols.clone() {
                    merged[c] += w * v[j][c];
                }
            }
        }
        rows.push(lin(store, &a.output, &merged));
    }
    Tensor::from_rows(&rows).unwrap()
}

#[test]
fn attention_matches_loop_oracle() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let block = AttentionBlock::new(&mut store, "a", 8, 4, &mut rng).unwrap();
        let len = 1 + (seed as usize % 8);
        let x = random(&[len, 8], seed + 100);
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let got = block.forward(&tape, &store, xv, xv, None).unwrap().value();
        assert!(got.max_abs_diff(&oracle_attention(&store, &block, &x, &x, None)) <= 1e-10);

        let mask = Mask::causal(len);
        let got = block.forward(&tape, &store, xv, xv, Some(&mask)).unwrap().value();
        assert!(got.max_abs_diff(&oracle_attention(&store, &block, &x, &x, Some(&mask))) <= 1e-10);

        let kv = random(&[3, 8], seed + 200);
        let got = block.forward(&tape, &store, xv, tape.constant(kv.clone()), None).unwrap().value();
        assert!(got.max_abs_diff(&oracle_attention(&store, &block, &x, &kv, None)) <= 1e-10);
    }
}

#[test]
fn attention_rows_are_distributions_under_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let block = AttentionBlock::new(&mut store, "a", 8, 2, &mut rng).unwrap();
    let tape = Tape::new();
    let x = tape.constant(random(&[6, 8], 4));
    let allow: Vec<bool> = (0..36).map(|i| i % 6 == 0 || rng.gen_bool(0.5)).collect();
    let mask = Mask::new(6, 6, allow).unwrap();
    for m in [None, Some(&mask), Some(&Mask::causal(6))] {
        let (_, weights) = block.forward_with_weights(&tape, &store, x, x, m).unwrap();
        for w in weights {
            let w = w.value();
            for i in 0..6 {
                assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
                if let Some(m) = m {
                    for j in 0..6 {
                        if !m.allows(i, j) {
                            assert_eq!(w.at(i, j), 0.0);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn single_key_and_identical_keys() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let block = AttentionBlock::new(&mut store, "a", 8, 4, &mut rng).unwrap();
    let tape = Tape::new();
    let one = random(&[1, 8], 6);
    let out = block.forward(&tape, &store, tape.constant(one.clone()), tape.constant(one.clone()), None).unwrap();
    let v = lin(&store, &block.value, one.row(0));
    let expected = lin(&store, &block.output, &v);
    for (a, b) in out.value().data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }

    // Identical keys give uniform weights, so every query sees mean(V) = V.
    let queries = random(&[3, 8], 7);
    let same = Tensor::from_rows(&[one.row(0).to_vec(), one.row(0).to_vec(), one.row(0).to_vec()]).unwrap();
    let out = block.forward(&tape, &store, tape.constant(queries), tape.constant(same), None).unwrap().value();
    for i in 0..3 {
        for (a, b) in out.row(i).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn indivisible_width_is_a_config_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    assert!(matches!(AttentionBlock::new(&mut store, "a", 10, 4, &mut rng), Err(Error::Config(_))));
    let bad = ModelConfig { width: 10, heads: 4, ..ModelConfig::default() };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}

#[test]
fn image_encoder_shapes_and_projection_norm() {
    let cfg = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let enc = VisionEncoder::new(&mut store, "vision", &cfg, &mut rng).unwrap();
    let tape = Tape::new();
    let a = random_image(32, 2);
    let fa = enc.encode_image(&tape, &store, &a).unwrap();
    assert_eq!(fa.f_i.shape(), vec![17, 64]);
    assert_eq!(fa.cls_projection.shape(), vec![1, 32]);
    let norm: f64 = fa.cls_projection.value().data().iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-6);
    assert!(fa.f_i.value().is_finite());

    let mut b = a.clone();
    for y in 0..8 {
        for x in 0..8 {
            b.pixels_mut()[y * 32 + x] += 0.5;
        }
    }
    let fb = enc.encode_image(&tape, &store, &b).unwrap();
    assert_eq!(fb.f_i.shape(), fa.f_i.shape());
    assert!(fb.f_i.value().max_abs_diff(&fa.f_i.value()) > 1e-6);
}

#[test]
fn indivisible_patching_is_a_config_error() {
    let cfg = ModelConfig { image_side: 30, ..ModelConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    assert!(matches!(VisionEncoder::new(&mut store, "v", &cfg, &mut rng), Err(Error::Config(_))));
    assert!(matches!(patch_index(30, 8, 1), Err(Error::Config(_))));

    let enc = VisionEncoder::new(&mut store, "v", &ModelConfig::default(), &mut rng).unwrap();
    let tape = Tape::new();
    assert!(matches!(enc.encode_image(&tape, &store, &random_image(24, 1)), Err(Error::Config(_))));
}

#[test]
fn patch_index_layout() {
    let idx = patch_index(4, 2, 1).unwrap();
    // Patch (0,1) covers pixels (0,2),(0,3),(1,2),(1,3).
    assert_eq!(&idx[4..8], &[2, 3, 6, 7]);
    let mut sorted = idx.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..16).collect::<Vec<_>>());
}

#[test]
fn permuting_patches_changes_output() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let enc = VisionEncoder::new(&mut store, "v", &cfg, &mut rng).unwrap();
    let img = random_image(8, 10);
    // Swap the top-left and bottom-right 4x4 patches.
    let mut swapped = img.clone();
    for y in 0..4 {
        for x in 0..4 {
            let a = y * 8 + x;
            let b = (y + 4) * 8 + x + 4;
            swapped.pixels_mut().swap(a, b);
        }
    }
    let tape = Tape::new();
    let a = enc.encode_image(&tape, &store, &img).unwrap();
    let b = enc.encode_image(&tape, &store, &swapped).unwrap();
    assert!(a.cls_projection.value().max_abs_diff(&b.cls_projection.value()) > 1e-8);
}

fn text_setup(cfg: &ModelConfig) -> (ParamStore, VisionEncoder, TextEncoder, KnowledgeEncoder, KnowledgeFusion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let vision = VisionEncoder::new(&mut store, "vision", cfg, &mut rng).unwrap();
    let text = TextEncoder::new(&mut store, "text", cfg, 20, &mut rng).unwrap();
    let knowledge = KnowledgeEncoder::sharing(&text, &mut store, "knowledge", &mut rng).unwrap();
    let fusion = KnowledgeFusion::new(&mut store, "fusion", cfg.width, cfg.heads, &mut rng).unwrap();
    (store, vision, text, knowledge, fusion)
}

#[test]
fn text_encoder_is_bidirectional_and_cross_is_live() {
    let cfg = tiny();
    let (store, vision, text, _, _) = text_setup(&cfg);
    let tape = Tape::new();
    let a = text.encode_text(&tape, &store, &[4, 9, 10, 11], TextMode::Bidirectional).unwrap();
    assert_eq!(a.h_t.shape(), vec![4, 8]);
    let b = text.encode_text(&tape, &store, &[4, 9, 10, 12], TextMode::Bidirectional).unwrap();
    let first = |v: &crate::tensor::Var| v.value().row(0).to_vec();
    assert_ne!(first(&a.h_t), first(&b.h_t));

    let vis = vision.encode_image(&tape, &store, &random_image(8, 3)).unwrap();
    let live = EnhancedVisualFeatures { features: vis.f_i };
    let zero = EnhancedVisualFeatures { features: tape.constant(Tensor::zeros(vis.f_i.shape())) };
    let c = text.encode_text(&tape, &store, &[5, 9, 10], TextMode::WithImageCross(&live)).unwrap();
    let d = text.encode_text(&tape, &store, &[5, 9, 10], TextMode::WithImageCross(&zero)).unwrap();
    assert!(c.h_t.value().max_abs_diff(&d.h_t.value()) > 1e-8);
}

#[test]
fn overlong_text_is_a_contract_error() {
    let cfg = tiny();
    let (store, _, text, _, _) = text_setup(&cfg);
    let tape = Tape::new();
    let tokens = vec![9; cfg.max_len + 1];
    assert!(matches!(
        text.encode_text(&tape, &store, &tokens, TextMode::Bidirectional),
        Err(Error::Contract(_))
    ));
    assert!(text.encode_text(&tape, &store, &tokens[..cfg.max_len], TextMode::Bidirectional).is_ok());
}

#[test]
fn knowledge_sharing_is_exactly_the_non_attention_params() {
    let cfg = ModelConfig { layers: 2, ..tiny() };
    let (_, _, text, knowledge, _) = text_setup(&cfg);
    let text_params: std::collections::HashMap<_, _> = text.named_params().into_iter().collect();
    let mut shared = 0;
    for (role, id) in knowledge.named_params() {
        let text_id = text_params[&role];
        if is_attention_role(&role) {
            assert_ne!(id, text_id, "{role} should be separate");
        } else {
            assert_eq!(id, text_id, "{role} should be shared");
            shared += 1;
        }
    }
    // tok_embed, pos, 2 ln_embed, 2 ln_final, per layer 4 ln + 4 ffn.
    assert_eq!(shared, 6 + 2 * 8);
    let knowledge_ids: std::collections::HashSet<_> = knowledge.named_params().into_iter().map(|p| p.1).collect();
    for (role, id) in text.named_params() {
        if is_attention_role(&role) {
            assert!(!knowledge_ids.contains(&id), "{role} leaked into the knowledge encoder");
        }
    }
}

#[test]
fn knowledge_aliasing_and_independence() {
    let cfg = tiny();
    let (mut store, _, text, knowledge, _) = text_setup(&cfg);
    let tokens = [9, 6, 10];
    let run = |store: &ParamStore| {
        let tape = Tape::new();
        let t = text.encode_text(&tape, store, &tokens, TextMode::Bidirectional).unwrap().h_t.value();
        let k = knowledge.encode_knowledge(&tape, store, &tokens).unwrap().h_k.value();
        (t, k)
    };
    let (t0, k0) = run(&store);

    let ffn = text.stack.layers[0].feed_forward.up.weight;
    store.value_mut(ffn).data_mut()[0] += 0.5;
    let (t1, k1) = run(&store);
    assert!(t1.max_abs_diff(&t0) > 1e-9);
    assert!(k1.max_abs_diff(&k0) > 1e-9);

    let ksa = knowledge.stack.layers[0].self_attention.value.weight;
    store.value_mut(ksa).data_mut()[0] += 0.5;
    let (t2, k2) = run(&store);
    assert_eq!(t2, t1);
    assert!(k2.max_abs_diff(&k1) > 1e-9);

    let tape = Tape::new();
    let empty = knowledge.encode_knowledge(&tape, &store, &[crate::corpus::NONE]).unwrap();
    assert_eq!(empty.h_k.shape(), vec![1, cfg.width]);
}

#[test]
fn fusion_single_token_and_duplicates() {
    let cfg = tiny();
    let (store, _, _, _, fusion) = text_setup(&cfg);
    let tape = Tape::new();
    let f = random(&[5, 8], 1);
    let k = random(&[1, 8], 2);
    let fv = tape.constant(f.clone());
    let out = fusion.fuse_raw(&tape, &store, fv, tape.constant(k.clone())).unwrap();
    assert_eq!(out.shape(), vec![5, 8]);

    // One key: every row adds o(v(k)) and is then layer-normed.
    let added = lin(&store, &fusion.attention.output, &lin(&store, &fusion.attention.value, k.row(0)));
    let g = store.value(fusion.norm.gain).data();
    let b = store.value(fusion.norm.bias).data();
    for i in 0..5 {
        let pre: Vec<f64> = f.row(i).iter().zip(&added).map(|(x, a)| x + a).collect();
        let mean = pre.iter().sum::<f64>() / 8.0;
        let var = pre.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 8.0;
        for j in 0..8 {
            let want = g[j] * (pre[j] - mean) / (var + 1e-5).sqrt() + b[j];
            assert!((out.value().at(i, j) - want).abs() < 1e-10);
        }
    }

    let pair = random(&[2, 8], 3);
    let doubled = Tensor::from_rows(&[pair.row(0).to_vec(), pair.row(0).to_vec()]).unwrap();
    let single = Tensor::from_rows(&[pair.row(0).to_vec()]).unwrap();
    let a = fusion.fuse_raw(&tape, &store, fv, tape.constant(doubled.clone())).unwrap().value();
    let s = fusion.fuse_raw(&tape, &store, fv, tape.constant(single)).unwrap().value();
    assert!(a.max_abs_diff(&s) < 1e-12);
    let attn = oracle_attention(&store, &fusion.attention, &f, &doubled, None);
    let direct = fusion.attention.forward(&tape, &store, fv, tape.constant(doubled), None).unwrap().value();
    assert!(direct.max_abs_diff(&attn) < 1e-10);

    let wrong = tape.constant(random(&[2, 6], 4));
    assert!(matches!(fusion.fuse_raw(&tape, &store, fv, wrong), Err(Error::Config(_))));
}

#[test]
fn fused_pipeline_passes_grad_check() {
    let cfg = tiny();
    let (store, vision, _, knowledge, fusion) = text_setup(&cfg);
    let image = random(&[8, 8, 1], 21);
    let probe = random(&[5, 8], 22);
    let err = grad_check(
        |tape, x| {
            let vis = vision.encode(tape, &store, x)?;
            let k = knowledge.encode_knowledge(tape, &store, &[9, 6, 10])?;
            let fused = fusion.fuse(tape, &store, &vis, &k)?;
            fused.features.mul(tape.constant(probe.clone()))?.sum().add(vis.cls_projection.sum())
        },
        &image,
        1e-5,
    );
    assert!(err < 1e-4, "grad check error {err}");
}
