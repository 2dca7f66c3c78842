use eend_core::model::{backward_from_logits, export_attention, forward, forward_logits, init_params};
use eend_core::numerics::finite_diff_grad;
use eend_core::training::pit_loss_logits;
use eend_core::{FeatureSequence, FrameLabels, Matrix, ModelConfig, ModelParams, Rng};

fn tiny(t_blocks: usize, d: usize, h: usize, f: usize) -> ModelConfig {
    ModelConfig {
        n_blocks: t_blocks,
        d_model: d,
        n_heads: h,
        d_ff: 2 * d,
        n_speakers: 2,
        input_dim: f,
    }
}

fn random_input(t: usize, f: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(t, f, (0..t * f).map(|_| rng.normal()).collect()).unwrap()
}

/// Perturbs every parameter so layer-norm gains and biases are not trivial.
fn jitter(p: &mut ModelParams, rng: &mut Rng, s: f64) {
    for t in p.tensors_mut() {
        for v in t.data.iter_mut() {
            *v += s * rng.normal();
        }
    }
}

// Plain nested-vector transcription of the forward pass.
type M = Vec<Vec<f64>>;

fn mm(a: &M, b: &Matrix) -> M {
    a.iter()
        .map(|row| {
            (0..b.cols())
                .map(|j| row.iter().enumerate().map(|(k, x)| x * b.get(k, j)).sum())
                .collect()
        })
        .collect()
}

fn plus_bias(a: &M, b: &[f64]) -> M {
    a.iter().map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
}

fn ln(a: &M, g: &[f64], b: &[f64]) -> M {
    a.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(i, x)| g[i] * (x - mean) / (var + 1e-5).sqrt() + b[i])
                .collect()
        })
        .collect()
}

fn oracle_forward(p: &ModelParams, cfg: &ModelConfig, x: &Matrix) -> (M, Vec<Vec<M>>) {
    let xs: M = (0..x.rows()).map(|t| x.row(t).to_vec()).collect();
    let mut e = plus_bias(&mm(&xs, &p.input_w), &p.input_b);
    let mut attn_all = Vec::new();
    let t_len = xs.len();
    let dh = cfg.head_dim() as f64;
    for b in &p.blocks {
        let en = ln(&e, &b.ln1_gain, &b.ln1_bias);
        let mut concat: M = vec![Vec::new(); t_len];
        let mut attn_block = Vec::new();
        for h in 0..cfg.n_heads {
            let q = mm(&en, &b.query[h]);
            let k = mm(&en, &b.key[h]);
            let v = mm(&en, &b.value[h]);
            let mut a: M = vec![vec![0.0; t_len]; t_len];
            for i in 0..t_len {
                for j in 0..t_len {
                    a[i][j] = q[i].iter().zip(&k[j]).map(|(x, y)| x * y).sum::<f64>() / dh.sqrt();
                }
                let mx = a[i].iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = a[i].iter().map(|v| (v - mx).exp()).sum();
                for j in 0..t_len {
                    a[i][j] = (a[i][j] - mx).exp() / z;
                }
            }
            for i in 0..t_len {
                for c in 0..v[0].len() {
                    concat[i].push((0..t_len).map(|j| a[i][j] * v[j][c]).sum());
                }
            }
            attn_block.push(a);
        }
        attn_all.push(attn_block);
        let sa = mm(&concat, &b.out);
        let resid: M = en.iter().zip(&sa).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect();
        let esa = ln(&resid, &b.ln2_gain, &b.ln2_bias);
        let hid: M = plus_bias(&mm(&esa, &b.ff1_w), &b.ff1_b)
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
            .collect();
        let ff = plus_bias(&mm(&hid, &b.ff2_w), &b.ff2_b);
        e = esa.iter().zip(&ff).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect();
    }
    let out = plus_bias(&mm(&ln(&e, &p.out_ln_gain, &p.out_ln_bias), &p.output_w), &p.output_b);
    let z = out
        .into_iter()
        .map(|r| r.into_iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect())
        .collect();
    (z, attn_all)
}

#[test]
fn forward_matches_straight_line_oracle() {
    let cfg = tiny(2, 4, 2, 5);
    let mut rng = Rng::new(11);
    let mut p = init_params(&cfg, &mut rng).unwrap();
    jitter(&mut p, &mut rng, 0.3);
    let x = random_input(3, 5, &mut rng);
    let (z, cache) = forward(&p, &cfg, &FeatureSequence::new(x.clone(), 0.1)).unwrap();
    let (oz, oattn) = oracle_forward(&p, &cfg, &x);
    for t in 0..3 {
        for c in 0..2 {
            assert!((z.get(t, c) - oz[t][c]).abs() < 1e-12);
        }
    }
    for (b, heads) in oattn.iter().enumerate() {
        for (h, a) in heads.iter().enumerate() {
            let got = export_attention(&cache, b, h).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((got.get(i, j) - a[i][j]).abs() < 1e-12);
                }
            }
        }
    }
    assert!(export_attention(&cache, 2, 0).is_err());
    assert!(export_attention(&cache, 0, 2).is_err());
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let cfg = tiny(2, 8, 2, 6);
    let mut rng = Rng::new(5);
    let mut p = init_params(&cfg, &mut rng).unwrap();
    jitter(&mut p, &mut rng, 0.1);
    let x = random_input(6, 6, &mut rng);
    let labels = FrameLabels::from_bits(6, 2, (0..12).map(|_| rng.uniform() < 0.5).collect()).unwrap();

    let cache = forward_logits(&p, &cfg, &x).unwrap();
    let pit = pit_loss_logits(&cache.logits, &labels).unwrap();
    let g = backward_from_logits(&p, &cfg, &cache, &pit.d_logits).unwrap();

    // Hold the permutation fixed so the loss is smooth in the parameters.
    let perm = pit.perm.clone();
    let fixed = labels.permute_columns(&perm).unwrap();
    let loss = |flat: &[f64]| {
        let q = ModelParams::from_flat(&cfg, flat).unwrap();
        let c = forward_logits(&q, &cfg, &x).unwrap();
        let l = pit_loss_logits(&c.logits, &fixed).unwrap();
        assert_eq!(l.perm, vec![0, 1]);
        l.loss
    };
    let fd = finite_diff_grad(loss, &p.to_flat(), 1e-5).unwrap();
    let mut offset = 0;
    for t in g.tensors() {
        let n = t.data.len();
        let num = &fd[offset..offset + n];
        let diff: f64 = t.data.iter().zip(num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = t.data.iter().map(|a| a * a).sum::<f64>().sqrt().max(num.iter().map(|b| b * b).sum::<f64>().sqrt());
        assert!(scale == 0.0 || diff / scale <= 1e-4, "{}: {}", t.name, diff / scale);
        offset += n;
    }
}

#[test]
fn time_permutation_equivariance() {
    let cfg = tiny(2, 8, 4, 7);
    for trial in 0..5u64 {
        let mut rng = Rng::new(100 + trial);
        let p = init_params(&cfg, &mut rng).unwrap();
        let x = random_input(12, 7, &mut rng);
        let mut pi: Vec<usize> = (0..12).collect();
        rng.shuffle(&mut pi);
        let xp = x.select_rows(&pi);
        let z = forward(&p, &cfg, &FeatureSequence::new(x, 0.1)).unwrap().0;
        let zp = forward(&p, &cfg, &FeatureSequence::new(xp, 0.1)).unwrap().0;
        assert!(zp.max_abs_diff(&z.select_rows(&pi)) < 1e-6);
    }
}

#[test]
fn attention_rows_are_stochastic() {
    let cfg = tiny(2, 8, 2, 4);
    let mut rng = Rng::new(9);
    let p = init_params(&cfg, &mut rng).unwrap();
    let x = random_input(20, 4, &mut rng);
    let cache = forward_logits(&p, &cfg, &x).unwrap();
    for b in 0..2 {
        for h in 0..2 {
            let a = export_attention(&cache, b, h).unwrap();
            assert_eq!(a.shape(), (20, 20));
            for t in 0..20 {
                assert!((a.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
