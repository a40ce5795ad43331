mod common;

use cbir_core::encoder::silu;
use cbir_core::encoder::{
    tokenize, tokenize_with_pe, ConvMsa, ConvMsaConfig, Darf, Decoder, FeatureMap, KanLayer,
    MsaLayer, ToyConfig, ToyEncoder, DECODER_SCALES,
};
use cbir_core::image::Image;
use cbir_core::Matrix;
use common::{de_boor, rng};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn fill(v: &mut [f64], r: &mut ChaCha8Rng, scale: f64) {
    for x in v {
        *x = r.random_range(-scale..scale);
    }
}

fn random_map(r: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap<f64> {
    FeatureMap::from_fn(1, c, h, w, |_, _, _, _| r.random_range(-1.0..1.0))
}

fn random_msa(r: &mut ChaCha8Rng, cfg: ConvMsaConfig) -> ConvMsa<f64> {
    let mut m = ConvMsa::zeros(cfg);
    for conv in [&mut m.query, &mut m.key, &mut m.value] {
        fill(&mut conv.weight, r, 0.5);
        fill(&mut conv.bias, r, 0.1);
    }
    m
}

#[test]
fn conv_msa_preserves_shape_and_normalises_rows() {
    let mut r = rng(1);
    let cfg = ConvMsaConfig {
        window: (4, 2),
        heads: 2,
        head_dim: 3,
    };
    let msa = random_msa(&mut r, cfg);
    let input = random_map(&mut r, 6, 8, 6);
    let (out, att) = msa.forward_with_attention(&input).unwrap();
    assert_eq!(out.shape(), input.shape());
    assert_eq!(att.len(), (8 / 4) * (6 / 2) * 2);
    for a in &att {
        assert_eq!((a.weights.rows(), a.weights.cols()), (8, 8));
        for row in a.weights.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            assert!(row.iter().all(|&w| w >= 0.0));
        }
    }
}

#[test]
fn conv_msa_rejects_indivisible_windows() {
    let msa = ConvMsa::<f64>::zeros(ConvMsaConfig {
        window: (3, 3),
        heads: 1,
        head_dim: 2,
    });
    assert!(msa.forward(&FeatureMap::zeros(1, 2, 4, 6)).is_err());
}

#[test]
fn zeroed_query_key_gives_window_means() {
    let mut r = rng(2);
    let c = 4;
    let mut msa = ConvMsa::zeros(ConvMsaConfig {
        window: (2, 3),
        heads: 2,
        head_dim: 2,
    });
    for o in 0..c {
        msa.value.weight[o * c + o] = 1.0;
    }
    let input = random_map(&mut r, c, 4, 6);
    let (out, att) = msa.forward_with_attention(&input).unwrap();
    for a in &att {
        assert!(a
            .weights
            .as_slice()
            .iter()
            .all(|&w| (w - 1.0 / 6.0).abs() < 1e-12));
    }
    for ch in 0..c {
        for y in 0..4 {
            for x in 0..6 {
                let (wy, wx) = (y / 2 * 2, x / 3 * 3);
                let mut mean = 0.0;
                for yy in wy..wy + 2 {
                    for xx in wx..wx + 3 {
                        mean += input.get(0, ch, yy, xx);
                    }
                }
                mean /= 6.0;
                assert!((out.get(0, ch, y, x) - mean).abs() < 1e-12);
            }
        }
    }
}

fn random_layer(r: &mut ChaCha8Rng, heads: usize, dh: usize) -> MsaLayer<f64> {
    let mut l = MsaLayer::zeros(heads, dh);
    for conv in [&mut l.query, &mut l.key, &mut l.value, &mut l.output] {
        fill(&mut conv.weight, r, 0.4);
        fill(&mut conv.bias, r, 0.1);
    }
    l
}

#[test]
fn msa_layer_is_permutation_equivariant_without_positions() {
    let mut r = rng(3);
    let layer = random_layer(&mut r, 2, 4);
    let fm = random_map(&mut r, 8, 3, 3);
    let cls: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
    let tokens = tokenize(&fm, &cls).unwrap();
    let perm: Vec<usize> = vec![0, 5, 3, 9, 1, 7, 2, 8, 4, 6];
    let permuted = Matrix::from_fn(10, 8, |t, d| tokens[(perm[t], d)]);
    let a = layer.forward(&tokens).unwrap();
    let b = layer.forward(&permuted).unwrap();
    for t in 0..10 {
        for d in 0..8 {
            assert!((b[(t, d)] - a[(perm[t], d)]).abs() < 1e-12);
        }
    }
}

#[test]
fn positional_embedding_breaks_equivariance() {
    let mut r = rng(4);
    let layer = random_layer(&mut r, 2, 4);
    let fm = random_map(&mut r, 8, 2, 2);
    let swapped = FeatureMap::from_fn(1, 8, 2, 2, |b, c, y, x| fm.get(b, c, 1 - y, 1 - x));
    let cls = vec![0.0; 8];
    let a = layer
        .forward(&tokenize_with_pe(&fm, &cls).unwrap().tokens)
        .unwrap();
    let b = layer
        .forward(&tokenize_with_pe(&swapped, &cls).unwrap().tokens)
        .unwrap();
    // token 1 of the swapped map holds the pixel of token 4 of the original
    let diff: f64 = (0..8).map(|d| (a[(4, d)] - b[(1, d)]).abs()).sum();
    assert!(diff > 1e-6);
}

#[test]
fn tokenisation_counts_and_embeds_positions() {
    let fm = FeatureMap::<f64>::zeros(1, 6, 3, 5);
    let seq = tokenize_with_pe(&fm, &[0.0; 6]).unwrap();
    assert_eq!(seq.tokens.rows(), 3 * 5 + 1);
    assert_eq!(seq.tokens, seq.pe);
    assert!(tokenize(&FeatureMap::<f64>::zeros(2, 6, 3, 5), &[0.0; 6]).is_err());
}

#[test]
fn kan_without_spline_is_base_activation_sum() {
    let mut r = rng(5);
    let mut kan = KanLayer::<f64>::zeros(5, 3, 8).unwrap();
    fill(&mut kan.base_weight, &mut r, 1.0);
    fill(&mut kan.coefficients, &mut r, 1.0);
    let x: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
    let out = kan.forward(&x).unwrap();
    for (q, &got) in out.iter().enumerate() {
        let want: f64 = (0..5)
            .map(|p| kan.base_weight[p * 3 + q] * silu(x[p]))
            .sum();
        assert_eq!(got, want);
    }
}

#[test]
fn kan_spline_matches_de_boor() {
    let mut r = rng(6);
    let mut kan = KanLayer::<f64>::zeros(2, 2, 8).unwrap();
    fill(&mut kan.coefficients, &mut r, 1.0);
    for &x in &[-1.0, -0.8, -0.31, 0.0, 0.25, 0.5, 0.77, 0.999, 1.0] {
        for p in 0..2 {
            for q in 0..2 {
                let want = de_boor(kan.edge_coefficients(p, q), 8, x);
                assert!((kan.spline(p, q, x) - want).abs() < 1e-12, "x={x}");
            }
        }
    }
    let b = kan.basis(0.25);
    assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // at a knot the cubic basis has three non-zero values 1/6, 2/3, 1/6
    let nz: Vec<f64> = b.into_iter().filter(|v| *v > 1e-15).collect();
    assert_eq!(nz.len(), 3);
    assert!((nz[0] - 1.0 / 6.0).abs() < 1e-12 && (nz[1] - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn decoder_restores_full_resolution() {
    let dec = Decoder::<f64>::zeros(128, &[32, 16, 8], &DECODER_SCALES, 1).unwrap();
    assert_eq!(dec.upscale(), 32);
    let out = dec.forward(&FeatureMap::filled(1, 128, 7, 7, 0.3)).unwrap();
    assert_eq!(out.shape(), [1, 1, 224, 224]);
    assert!(out.data().iter().all(|&v| v == 0.5));
}

#[test]
fn darf_with_zeroed_projections_averages_uniformly() {
    let mut r = rng(7);
    let darf = Darf::<f64>::zeros(4, 6, 5, 3);
    // 6 splits evenly into 3 pooling bins
    let shallow = random_map(&mut r, 4, 6, 6);
    let deep = random_map(&mut r, 6, 2, 2);
    let att = darf.attend(&shallow, &deep).unwrap();
    assert!(att
        .weights
        .as_slice()
        .iter()
        .all(|&w| (w - 1.0 / 9.0).abs() < 1e-12));
    let overall: Vec<f64> = (0..4)
        .map(|c| shallow.plane(0, c).iter().sum::<f64>() / 36.0)
        .collect();
    for row in att.fused.iter_rows() {
        for c in 0..4 {
            assert!((row[c] - overall[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn darf_output_is_a_convex_combination() {
    let mut r = rng(8);
    let mut darf = Darf::<f64>::zeros(3, 4, 5, 3);
    fill(&mut darf.query.weight, &mut r, 1.0);
    fill(&mut darf.key.weight, &mut r, 1.0);
    let shallow = random_map(&mut r, 3, 6, 6);
    let deep = random_map(&mut r, 4, 3, 3);
    let att = darf.attend(&shallow, &deep).unwrap();
    for c in 0..3 {
        let plane = shallow.plane(0, c);
        let lo = plane.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for row in att.fused.iter_rows() {
            assert!(row[c] >= lo - 1e-12 && row[c] <= hi + 1e-12);
        }
    }
    let constant = FeatureMap::filled(1, 3, 6, 6, 0.42);
    let att = darf.attend(&constant, &deep).unwrap();
    assert!(att
        .fused
        .as_slice()
        .iter()
        .all(|&v| (v - 0.42).abs() < 1e-12));
}

fn test_image(side: usize) -> Image<f64> {
    Image::from_fn(side, side, 1, |y, x, _| {
        ((x * 7 + y * 3) % 23) as f64 / 22.0
    })
}

#[test]
fn toy_encoder_produces_expected_shapes() {
    let enc = ToyEncoder::<f64>::seeded(ToyConfig::with_bits(16), 3).unwrap();
    let out = enc.encode(&test_image(224)).unwrap();
    assert_eq!(out.embedding.bits(), 16);
    assert!(out.embedding.values().iter().all(|v| v.abs() < 1.0));
    let dims: Vec<usize> = out.levels.iter().map(Vec::len).collect();
    assert_eq!(dims, vec![16, 32, 64, 128]);
    assert_eq!(out.deep.shape(), [1, 128, 7, 7]);
    let rec = enc.reconstruct(&out.deep, (224, 224)).unwrap();
    assert_eq!((rec.height(), rec.width(), rec.channels()), (224, 224, 1));
    assert!(rec.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn toy_encoder_is_deterministic_per_seed() {
    let img = test_image(64);
    let a = ToyEncoder::<f64>::seeded(ToyConfig::with_bits(16), 11).unwrap();
    let b = ToyEncoder::<f64>::seeded(ToyConfig::with_bits(16), 11).unwrap();
    let c = ToyEncoder::<f64>::seeded(ToyConfig::with_bits(16), 12).unwrap();
    let ea = a.encode(&img).unwrap();
    assert_eq!(ea, b.encode(&img).unwrap());
    assert_ne!(ea.embedding, c.encode(&img).unwrap().embedding);
}

#[test]
fn toy_encoder_rejects_bad_sides() {
    let enc = ToyEncoder::<f64>::seeded(ToyConfig::with_bits(8), 0).unwrap();
    assert!(enc.encode(&test_image(48)).is_err());
}

#[test]
fn flat_weights_round_trip() {
    let a = ToyEncoder::<f32>::seeded(ToyConfig::with_bits(8), 5).unwrap();
    let mut b = ToyEncoder::<f32>::zeros(ToyConfig::with_bits(8)).unwrap();
    b.load_flat(&a.to_flat()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_flat().len(), a.parameter_count());
    assert!(b.load_flat(&[0.0; 3]).is_err());
}
