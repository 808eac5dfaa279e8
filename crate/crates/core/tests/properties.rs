use half::f16;
use proptest::prelude::*;

use mpqad::alloc_analysis::{
    alignment, kh_bound, plan_discrepancy, surrogate_loss, SalienceProfile,
};
use mpqad::container::{decode_tensor, encode_tensor, Tensor};
use mpqad::eakld::{eakld_grad, eakld_loss, mismatch_rate, mixing_lambda, KldConfig, LogitBatch};
use mpqad::lafd::{adaptive_feature_loss, layer_cosine_scores, select_layers, FeatureStack};
use mpqad::layout::{build_plan, effective_bitwidth, super_group_period, AllocationPlan, Scheme};
use mpqad::manifest::{LayerRole, LayerSpec, ModelManifest};
use mpqad::mpgemm::{fake_quant_forward, mp_matmul, ActivationBits};
use mpqad::packing::{decode_blob, encode_blob, pack, unpack};
use mpqad::quantizer::{
    fake_quantize_rows, quantize_activations, quantize_group, quantize_matrix, quantize_rows,
    BitMode, GroupQuantConfig, QuantizedActivations, QuantizedGroupMatrix,
};
use mpqad::{DenseMatrix, Matrix};

fn mode() -> impl Strategy<Value = BitMode> {
    prop_oneof![
        Just(BitMode::Ternary),
        Just(BitMode::Int4),
        Just(BitMode::Int8)
    ]
}

fn int_mode() -> impl Strategy<Value = BitMode> {
    prop_oneof![Just(BitMode::Int4), Just(BitMode::Int8)]
}

/// `(rows, cols, data)` with entries in `[-r, r]`.
fn matrix_f64(max_rows: usize, max_cols: usize, r: f64) -> impl Strategy<Value = Matrix<f64>> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(move |(m, n)| {
        prop::collection::vec(-r..r, m * n).prop_map(move |d| Matrix::new(m, n, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ternary_codes_keep_sign(values in prop::collection::vec(-10.0f64..10.0, 1..64)) {
        let cfg = GroupQuantConfig::with_group_size(values.len()).unwrap();
        let g = quantize_group(&values, BitMode::Ternary, &cfg).unwrap();
        prop_assert!(g.scale >= cfg.epsilon);
        for (&c, &v) in g.codes.iter().zip(&values) {
            prop_assert!((-1..=1).contains(&c));
            if c != 0 {
                prop_assert_eq!(c.signum() as f64, v.signum());
            }
        }
    }

    #[test]
    fn int_round_trip_within_half_scale(
        values in prop::collection::vec(-100.0f64..100.0, 1..64),
        m in int_mode(),
    ) {
        let cfg = GroupQuantConfig::with_group_size(values.len()).unwrap();
        let g = quantize_group(&values, m, &cfg).unwrap();
        prop_assert!(g.scale >= cfg.epsilon);
        for (&c, &v) in g.codes.iter().zip(&values) {
            prop_assert!(m.contains(c));
            prop_assert!((v - g.scale * c as f64).abs() <= g.scale / 2.0 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn int_fake_quantize_is_idempotent(w in matrix_f64(6, 40, 5.0), m in int_mode(), g in 1usize..20) {
        let cfg = GroupQuantConfig::with_group_size(g).unwrap();
        let modes = vec![m; w.rows()];
        let once = fake_quantize_rows(&w, &modes, &cfg).unwrap();
        let twice = fake_quantize_rows(&once, &modes, &cfg).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn ternary_codes_are_a_fixed_point(w in matrix_f64(6, 40, 5.0), g in 1usize..20) {
        let cfg = GroupQuantConfig::with_group_size(g).unwrap();
        let modes = vec![BitMode::Ternary; w.rows()];
        let q1 = quantize_rows(&w, &modes, &cfg).unwrap();
        let q2 = quantize_rows(&q1.dequantize::<f64>(), &modes, &cfg).unwrap();
        prop_assert_eq!(q1.codes(), q2.codes());
    }

    #[test]
    fn quantize_matrix_splits_by_rows(w in matrix_f64(12, 20, 3.0), cut in 1usize..12, rho in 0.0f64..=1.0) {
        prop_assume!(cut < w.rows());
        let cfg = GroupQuantConfig::with_group_size(8).unwrap();
        let plan = build_plan(w.rows(), rho, Scheme::SuperGroup).unwrap();
        let whole = quantize_matrix(&w, &plan, &cfg).unwrap();
        let top = Matrix::from_fn(cut, w.cols(), |i, j| w.get(i, j));
        let bot = Matrix::from_fn(w.rows() - cut, w.cols(), |i, j| w.get(i + cut, j));
        let a = &plan.assignment();
        let pt = AllocationPlan::from_assignment(a[..cut].to_vec(), Scheme::SuperGroup).unwrap();
        let pb = AllocationPlan::from_assignment(a[cut..].to_vec(), Scheme::SuperGroup).unwrap();
        let parts = [
            quantize_matrix(&top, &pt, &cfg).unwrap(),
            quantize_matrix(&bot, &pb, &cfg).unwrap(),
        ];
        prop_assert_eq!(QuantizedGroupMatrix::vstack(&parts).unwrap(), whole);
    }

    #[test]
    fn activation_round_trip(x in matrix_f64(40, 5, 50.0), g in 1usize..16) {
        let cfg = GroupQuantConfig::with_group_size(g).unwrap();
        let q = quantize_activations(&x, &cfg).unwrap();
        // error bound against the full-precision group scale
        for l in 0..x.cols() {
            let col = x.column(l);
            for j in 0..cfg.groups(col.len()) {
                let r = cfg.group_range(col.len(), j);
                let gq = quantize_group(&col[r.clone()], BitMode::Int8, &cfg).unwrap();
                prop_assert_eq!(&gq.codes[..], q.inner().group_codes(l, j));
                for (&c, &v) in gq.codes.iter().zip(&col[r]) {
                    prop_assert!((v - gq.scale * c as f64).abs() <= gq.scale / 2.0 * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn pack_unpack_is_exact(
        (rows, cols, modes) in (1usize..8, 1usize..40).prop_flat_map(|(r, c)| {
            (Just(r), Just(c), prop::collection::vec(mode(), r))
        }),
        g in 1usize..17,
        seed in any::<u64>(),
    ) {
        let mut rng = mpqad::rng::SeededRng::new(seed);
        let w = Matrix::<f64>::from_fn(rows, cols, |_, _| rng.uniform(-4.0, 4.0));
        let cfg = GroupQuantConfig::with_group_size(g).unwrap();
        let q = quantize_rows(&w, &modes, &cfg).unwrap();
        let blob = pack(&q).unwrap();
        prop_assert_eq!(unpack(&blob).unwrap(), q.clone());
        let bytes = encode_blob(&blob);
        let back = decode_blob(&bytes).unwrap();
        prop_assert_eq!(&back, &blob);
        prop_assert_eq!(encode_blob(&back), bytes);
    }

    #[test]
    fn tensor_container_round_trip(w in matrix_f64(10, 10, 1e6)) {
        let m: DenseMatrix = w.cast();
        let bytes = encode_tensor(&Tensor::from(&m));
        let back = decode_tensor(&bytes).unwrap();
        prop_assert_eq!(encode_tensor(&back), bytes);
        prop_assert_eq!(back.into_matrix().unwrap(), m);
    }

    #[test]
    fn manifest_counts_every_listed_layer(
        dims in prop::collection::vec((1u64..5000, 1u64..5000, 0usize..5), 1..20),
        tied in any::<bool>(),
    ) {
        let roles = [LayerRole::Decoder, LayerRole::Embedding, LayerRole::LmHead, LayerRole::Norm, LayerRole::Other];
        let layers: Vec<LayerSpec> = dims.iter().enumerate().map(|(i, &(o, n, r))| LayerSpec {
            name: format!("l{i}"), d_out: o, d_in: n, role: roles[r], quantize: r != 3,
        }).collect();
        let want: u64 = layers.iter()
            .filter(|l| !(tied && l.role == LayerRole::LmHead))
            .map(|l| l.d_out * l.d_in).sum();
        let m = ModelManifest { tied_embedding: tied, layers };
        prop_assert_eq!(m.total_params(), want);
    }

    #[test]
    fn super_group_is_periodic(d_out in 1usize..300, rho in 0.01f64..=1.0) {
        let p = build_plan(d_out, rho, Scheme::SuperGroup).unwrap();
        let period = super_group_period(rho);
        let a = p.assignment();
        for i in 0..d_out.saturating_sub(period) {
            prop_assert_eq!(a[i], a[i + period]);
        }
    }

    #[test]
    fn schemes_agree_on_count_when_divisible(k in 1usize..40, inv in prop::sample::select(vec![1usize, 2, 4, 8]), seed in any::<u64>()) {
        let d_out = k * inv;
        let rho = 1.0 / inv as f64;
        let counts: Vec<usize> = [Scheme::SuperGroup, Scheme::Stacked, Scheme::Random { seed }]
            .iter()
            .map(|&s| build_plan(d_out, rho, s).unwrap().high_precision_count())
            .collect();
        prop_assert!(counts.iter().all(|&c| c == k));
        let b: Vec<f64> = [Scheme::SuperGroup, Scheme::Stacked, Scheme::Random { seed }]
            .iter()
            .map(|&s| effective_bitwidth(&build_plan(d_out, rho, s).unwrap()))
            .collect();
        prop_assert!(b.iter().all(|&x| x == b[0]));
    }

    #[test]
    fn bitwidth_monotone_in_rho(d_out in 1usize..200, r1 in 0.0f64..=1.0, r2 in 0.0f64..=1.0) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        for s in [Scheme::Stacked, Scheme::Random { seed: 7 }] {
            let a = effective_bitwidth(&build_plan(d_out, lo, s).unwrap());
            let b = effective_bitwidth(&build_plan(d_out, hi, s).unwrap());
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn koksma_hlawka_holds(
        s in prop::collection::vec(0.0f64..10.0, 2..200),
        rho in 0.05f64..=1.0,
        scheme_id in 0usize..3,
        seed in any::<u64>(),
    ) {
        let scheme = [Scheme::SuperGroup, Scheme::Stacked, Scheme::Random { seed }][scheme_id];
        let plan = build_plan(s.len(), rho, scheme).unwrap();
        prop_assume!(plan.high_precision_count() > 0);
        let sal = SalienceProfile::new(s).unwrap();
        let kh = kh_bound(&plan, &sal).unwrap();
        prop_assert!(kh.empirical_gap <= kh.bound + 1e-9);
        let n = plan.high_precision_count() as f64;
        let d = plan_discrepancy(&plan).unwrap();
        prop_assert!(d >= 1.0 / (2.0 * n) - 1e-12 && d <= 1.0);
    }

    #[test]
    fn surrogate_is_affine_in_alignment(
        s in prop::collection::vec(0.0f64..10.0, 1..50),
        bits in prop::collection::vec(any::<bool>(), 50),
        e_h in 0.0f64..1.0,
        gap in 0.0f64..1.0,
    ) {
        let plan = AllocationPlan::from_assignment(bits[..s.len()].to_vec(), Scheme::Stacked).unwrap();
        let total: f64 = s.iter().sum();
        let sal = SalienceProfile::new(s).unwrap();
        let e_l = e_h + gap;
        let l = surrogate_loss(&plan, &sal, e_l, e_h).unwrap();
        let a = alignment(&plan, &sal).unwrap();
        prop_assert!((l - (e_l * total - (e_l - e_h) * a)).abs() <= 1e-9 * (1.0 + e_l * total));
    }
}

fn stack_from(data: &[f64], layers: usize, t: usize, d: usize, mask: Vec<bool>) -> FeatureStack {
    FeatureStack::new(
        (0..layers)
            .map(|l| Matrix::new(t, d, data[l * t * d..(l + 1) * t * d].to_vec()).unwrap())
            .collect(),
        mask,
    )
    .unwrap()
}

fn feature_case() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<bool>)> {
    (2usize..6, 1usize..6, 1usize..5).prop_flat_map(|(l, t, d)| {
        (
            Just(l),
            Just(t),
            Just(d),
            prop::collection::vec(-3.0f64..3.0, l * t * d),
            prop::collection::vec(any::<bool>(), t)
                .prop_filter("one valid", |m| m.iter().any(|&b| b)),
        )
    })
}

/// Lexicographically smallest index set of minimum score sum.
fn brute_force_select(scores: &[f64], k: usize) -> Vec<usize> {
    let l = scores.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for bits in 0u32..(1 << l) {
        if bits.count_ones() as usize != k {
            continue;
        }
        let set: Vec<usize> = (0..l)
            .filter(|i| bits >> i & 1 == 1)
            .map(|i| i + 1)
            .collect();
        let sum: f64 = set.iter().map(|&i| scores[i - 1]).sum();
        let better = match &best {
            None => true,
            Some((s, b)) => sum < *s || (sum == *s && set < *b),
        };
        if better {
            best = Some((sum, set));
        }
    }
    best.unwrap().1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cosine_scores_bounded_and_scale_invariant((l, t, d, data, mask) in feature_case(), c in 0.01f64..100.0, which in 0usize..6) {
        let s = stack_from(&data, l, t, d, mask.clone());
        let scores = layer_cosine_scores(&s);
        prop_assert!(scores.iter().all(|&v| (-1.0..=1.0).contains(&v)));
        let mut layers = s.layers().to_vec();
        let w = which % l;
        layers[w] = layers[w].map(|v| v * c);
        let scaled = layer_cosine_scores(&FeatureStack::new(layers, mask).unwrap());
        for (a, b) in scores.iter().zip(&scaled) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn selection_matches_brute_force(
        scores in prop::collection::vec((0i32..8).prop_map(|q| q as f64 / 4.0 - 1.0), 1..=10),
        k_seed in any::<usize>(),
        shift in (-8i32..8).prop_map(|q| q as f64 / 4.0),
    ) {
        let k = 1 + k_seed % scores.len();
        let sel = select_layers(&scores, k).unwrap();
        prop_assert_eq!(sel.len(), k);
        prop_assert_eq!(&sel, &brute_force_select(&scores, k));
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        prop_assert_eq!(select_layers(&shifted, k).unwrap(), sel);
    }

    #[test]
    fn masked_positions_never_matter((l, t, d, data, mask) in feature_case(), noise in prop::collection::vec(-5.0f64..5.0, 150)) {
        prop_assume!(mask.iter().any(|&m| !m));
        let teacher = stack_from(&data, l, t, d, mask.clone());
        let student_data: Vec<f64> = data.iter().map(|v| v * 0.5 + 0.1).collect();
        let student = stack_from(&student_data, l, t, d, mask.clone());
        let sel: Vec<usize> = (1..l).collect();
        let base = adaptive_feature_loss(&teacher, &student, &sel).unwrap();
        prop_assert!(base >= 0.0);
        let mut perturbed = student_data.clone();
        for (i, v) in perturbed.iter_mut().enumerate() {
            let pos = (i / d) % t;
            if !mask[pos] {
                *v += noise[i % noise.len()];
            }
        }
        let moved = stack_from(&perturbed, l, t, d, mask.clone());
        prop_assert_eq!(adaptive_feature_loss(&teacher, &moved, &sel).unwrap().to_bits(), base.to_bits());
        prop_assert_eq!(layer_cosine_scores(&teacher), layer_cosine_scores(&teacher));
    }
}

fn logit_case() -> impl Strategy<Value = (Matrix<f64>, Matrix<f64>, Vec<bool>, Vec<usize>)> {
    (1usize..4, 2usize..5, 2usize..12).prop_flat_map(|(samples, seq, v)| {
        let n = samples * seq;
        (
            prop::collection::vec(-4.0f64..4.0, n * v),
            prop::collection::vec(-4.0f64..4.0, n * v),
            prop::collection::vec(any::<bool>(), n)
                .prop_filter("one valid", |m| m.iter().any(|&b| b)),
            prop::collection::vec(0..v, n),
        )
            .prop_map(move |(t, s, m, y)| {
                (
                    Matrix::new(n, v, t).unwrap(),
                    Matrix::new(n, v, s).unwrap(),
                    m,
                    y,
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lambda_bounded_teacher_only_and_nonincreasing_in_k((t, s, m, y) in logit_case(), k in 2usize..64) {
        let b = LogitBatch::single(t.clone(), s, Some(y.clone()), m.clone()).unwrap();
        let cfg = KldConfig::new(k).unwrap();
        let lam = mixing_lambda(&b, &cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&lam));
        let other = b.with_student_logits(t.map(|v| -v * 3.0)).unwrap();
        prop_assert_eq!(mixing_lambda(&other, &cfg).unwrap().to_bits(), lam.to_bits());
        let bigger = KldConfig::new(k + 5).unwrap();
        // min(H, ln K) / ln K = min(H / ln K, 1) can only fall as K grows
        prop_assert!(mixing_lambda(&b, &bigger).unwrap() <= lam + 1e-15);
    }

    #[test]
    fn loss_nonnegative_and_gradient_shift_invariant((t, s, m, y) in logit_case()) {
        let b = LogitBatch::single(t.clone(), s, Some(y), m).unwrap();
        let cfg = KldConfig::default();
        prop_assert!(eakld_loss(&b, &cfg).unwrap() >= -1e-15);
        let g = eakld_grad(&b, &cfg).unwrap();
        for i in 0..g.rows() {
            let row_sum: f64 = g.row(i).iter().sum();
            prop_assert!(row_sum.abs() < 1e-12);
        }
        let same = b.with_student_logits(t).unwrap();
        prop_assert!(eakld_loss(&same, &cfg).unwrap().abs() < 1e-12);
        prop_assert!(eakld_grad(&same, &cfg).unwrap().data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn high_confidence_fraction_falls_with_threshold((t, s, m, y) in logit_case(), a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let batch = LogitBatch::single(t, s, Some(y), m).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(mismatch_rate(&batch, hi).unwrap().0 <= mismatch_rate(&batch, lo).unwrap().0);
    }
}

/// `|y - ref| <= tol * (|W| |X|)` elementwise.
fn within_relative(y: &Matrix<f32>, w: &Matrix<f64>, x: &Matrix<f64>, tol: f64) -> bool {
    let r = w.matmul(x).unwrap();
    let mag = w.map(f64::abs).matmul(&x.map(f64::abs)).unwrap();
    y.data()
        .iter()
        .zip(r.data())
        .zip(mag.data())
        .all(|((&a, &b), &m)| (a as f64 - b).abs() <= tol * m + 1e-30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn integer_gemm_matches_dequantized_reference(
        (rows, cols, tokens) in (1usize..32, 1usize..96, 1usize..24),
        rho in 0.0f64..=1.0,
        g in 1usize..40,
        seed in any::<u64>(),
    ) {
        let mut rng = mpqad::rng::SeededRng::new(seed);
        let w = Matrix::<f64>::from_fn(rows, cols, |_, _| rng.normal());
        let x = Matrix::<f64>::from_fn(cols, tokens, |_, _| 3.0 * rng.normal());
        let cfg = GroupQuantConfig::with_group_size(g).unwrap();
        let plan = build_plan(rows, rho, Scheme::SuperGroup).unwrap();
        let wq = quantize_matrix(&w, &plan, &cfg).unwrap();
        let xq = quantize_activations(&x, &cfg).unwrap();
        let y = mp_matmul(&wq, &xq).unwrap().y;
        let (wd, xd) = (wq.dequantize::<f64>(), xq.dequantize::<f64>());
        prop_assert!(within_relative(&y, &wd, &xd, 1e-5));
        let fq = fake_quant_forward(&w, &x, &plan, &cfg, ActivationBits::Eight).unwrap().y;
        prop_assert!(within_relative(&fq.cast(), &wd, &xd, 1e-5));
    }

    #[test]
    fn activation_scale_factor_is_linear(
        (rows, cols, tokens) in (1usize..8, 1usize..40, 1usize..8),
        seed in any::<u64>(),
    ) {
        let mut rng = mpqad::rng::SeededRng::new(seed);
        let w = Matrix::<f64>::from_fn(rows, cols, |_, _| rng.normal());
        let x = Matrix::<f64>::from_fn(cols, tokens, |_, _| rng.normal());
        let cfg = GroupQuantConfig::with_group_size(8).unwrap();
        let wq = quantize_matrix(&w, &AllocationPlan::all_int4(rows), &cfg).unwrap();
        let xq = quantize_activations(&x, &cfg).unwrap();
        let inner = xq.inner();
        let doubled = QuantizedGroupMatrix::from_parts(
            inner.rows(),
            inner.cols(),
            *inner.config(),
            inner.row_modes().to_vec(),
            inner.codes().to_vec(),
            inner.scales().iter().map(|s| f16::from_f32(s.to_f32() * 2.0)).collect(),
        ).unwrap();
        let y1 = mp_matmul(&wq, &xq).unwrap().y;
        let y2 = mp_matmul(&wq, &QuantizedActivations::from_token_major(doubled).unwrap()).unwrap().y;
        prop_assert_eq!(y1.map(|v| v * 2.0), y2);
    }
}
