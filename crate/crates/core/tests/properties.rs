use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use jbplda::eval::{compute_eer, compute_min_dcf, det_points, ScoreSet};
use jbplda::jb::{
    covariances_are_psd, jb_em_step, jb_loglik, jb_score_full, jb_score_sd, make_pair_scorer,
    make_sd_transform, JbModel, RankPolicy, SdOrdering,
};
use jbplda::lda::cosine_score;
use jbplda::linalg::{gaussian_logpdf_dense, gen_eig_simdiag, spd_logdet_solve};
use jbplda::plda::{
    kaldi_em_step, kaldi_loglik, splda_em_step, splda_loglik, twocov_em_step, KaldiPldaModel,
    SpldaModel, TwoCovModel,
};
use jbplda::synth::{oracle_set_loglik, sample_spd};
use jbplda::{Dataset, EmMode, SpdMatrix, SpeakerGroup};

fn rows(m: usize, d: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(m, d, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn spectrum(d: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(lo..hi)).collect()
}

fn random_model(d: usize, rng: &mut ChaCha8Rng) -> JbModel {
    let s_mu = sample_spd(d, &spectrum(d, 0.0, 3.0, rng), rng.random()).unwrap();
    let s_eps = sample_spd(d, &spectrum(d, 0.2, 2.0, rng), rng.random()).unwrap();
    JbModel::centered(s_mu, s_eps).unwrap()
}

/// Speakers with random session counts in `1..=max_m`, drawn from a random
/// two-covariance model.
fn random_dataset(d: usize, speakers: usize, max_m: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let groups = (0..speakers)
        .map(|i| {
            let m = rng.random_range(1..=max_m);
            let mu = rows(1, d, 1.2, rng);
            let mut x = rows(m, d, 0.8, rng);
            for mut r in x.row_iter_mut() {
                r += &mu;
            }
            SpeakerGroup::from_vectors(format!("s{i}"), x).unwrap()
        })
        .collect();
    Dataset::new(d, groups).unwrap().center()
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b) / b.abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn logdet_solve_multiplies_back(d in 1usize..8, log_cond in 0.0f64..8.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // eigenvalues spread log-uniformly over the requested condition number
        let spec: Vec<f64> = (0..d)
            .map(|k| 10f64.powf(-log_cond * k as f64 / (d.max(2) - 1) as f64))
            .collect();
        let m = sample_spd(d, &spec, rng.random()).unwrap();
        let b = rows(d, 3, 1.0, &mut rng);
        let (logdet, x) = spd_logdet_solve(&m, &b).unwrap();
        let back = m.as_matrix() * &x;
        // backward-stable solve: residual bounded relative to |M| |x|
        prop_assert!((&back - &b).norm() <= 1e-12 * m.as_matrix().norm() * x.norm());
        let expected: f64 = spec.iter().map(|v| v.ln()).sum();
        prop_assert!((logdet - expected).abs() <= 1e-8 * expected.abs().max(1.0));
    }

    #[test]
    fn simdiag_postconditions(d in 1usize..9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s_b = sample_spd(d, &spectrum(d, 0.0, 5.0, &mut rng), rng.random()).unwrap();
        let s_w = sample_spd(d, &spectrum(d, 0.1, 3.0, &mut rng), rng.random()).unwrap();
        let (phi, kappa) = gen_eig_simdiag(&s_b, &s_w).unwrap();
        let tol = 1e-8 * s_b.norm().max(1.0);
        let w = phi.transpose() * s_w.as_matrix() * &phi;
        let b = phi.transpose() * s_b.as_matrix() * &phi;
        for i in 0..d {
            for j in 0..d {
                let id = if i == j { 1.0 } else { 0.0 };
                prop_assert!((w[(i, j)] - id).abs() <= tol);
                let diag = if i == j { kappa.values()[i] } else { 0.0 };
                prop_assert!((b[(i, j)] - diag).abs() <= tol);
            }
        }
    }

    #[test]
    fn dense_logpdf_permutation_invariant(d in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = sample_spd(d, &spectrum(d, 0.2, 3.0, &mut rng), rng.random()).unwrap();
        let x = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut perm: Vec<usize> = (0..d).collect();
        for k in (1..d).rev() {
            perm.swap(k, rng.random_range(0..=k));
        }
        let xp = DVector::from_fn(d, |i, _| x[perm[i]]);
        let sp = DMatrix::from_fn(d, d, |i, j| sigma[(perm[i], perm[j])]);
        let a = gaussian_logpdf_dense(&x, &sigma).unwrap();
        let b = gaussian_logpdf_dense(&xp, &sp).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn structured_loglik_matches_dense(d in 1usize..=8, m in 1usize..=6, seed in any::<u64>()) {
        prop_assume!(m * d <= 64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(d, &mut rng);
        let x = rows(m, d, 1.5, &mut rng);
        let data = Dataset::new(d, vec![SpeakerGroup::from_vectors("s", x.clone()).unwrap()]).unwrap();
        let dense = oracle_set_loglik(&x, model.s_mu(), model.s_eps()).unwrap();
        prop_assert!((jb_loglik(&data, &model).unwrap() - dense).abs() <= 1e-8);
    }

    #[test]
    fn loglik_invariant_to_speaker_and_session_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_dataset(4, 12, 4, &mut rng);
        let model = random_model(4, &mut rng);
        let reversed: Vec<SpeakerGroup> = data
            .speakers()
            .iter()
            .rev()
            .map(|g| {
                let m = g.len();
                let flipped = DMatrix::from_fn(m, 4, |i, j| g.vectors()[(m - 1 - i, j)]);
                SpeakerGroup::from_vectors(g.speaker_id(), flipped).unwrap()
            })
            .collect();
        let permuted = Dataset::new(4, reversed).unwrap();
        let a = jb_loglik(&data, &model).unwrap();
        let b = jb_loglik(&permuted, &model).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs());
    }

    #[test]
    fn scoring_paths_agree(d in 1usize..=8, m1 in 1usize..=4, m2 in 1usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(d, &mut rng);
        let x1 = rows(m1, d, 1.5, &mut rng);
        let x2 = rows(m2, d, 1.5, &mut rng);
        let full = jb_score_full(&x1, &x2, &model).unwrap();
        prop_assert_eq!(full, jb_score_full(&x2, &x1, &model).unwrap());

        let sd = make_sd_transform(&model, RankPolicy::Full, SdOrdering::default()).unwrap();
        let (y1, y2) = (sd.transform_vectors(&x1).unwrap(), sd.transform_vectors(&x2).unwrap());
        prop_assert!((jb_score_sd(&sd, &y1, &y2).unwrap() - full).abs() <= 1e-8);

        let (v1, v2) = (x1.rows(0, 1).into_owned(), x2.rows(0, 1).into_owned());
        let pair = make_pair_scorer(&model, RankPolicy::Full).unwrap();
        let single = jb_score_full(&v1, &v2, &model).unwrap();
        prop_assert!((pair.score_sets(&v1, &v2).unwrap() - single).abs() <= 1e-8);

        let splda = SpldaModel::from_covariances(DVector::zeros(d), model.s_mu(), model.s_eps().clone()).unwrap();
        prop_assert!((jbplda::plda::splda_score(&x1, &x2, &splda).unwrap() - full).abs() <= 1e-9);
    }

    #[test]
    fn em_trainers_are_monotone(seed in any::<u64>(), d in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_dataset(d, 30, 5, &mut rng);
        let tol = |v: f64| 1e-8 * v.abs();

        let mut jb = JbModel::initialize(&data).unwrap();
        let mut tc = TwoCovModel::initialize(&data).unwrap();
        let mut sp = SpldaModel::initialize(&data, d).unwrap();
        let mut kd = KaldiPldaModel::initialize(&data).unwrap();
        let (mut l_jb, mut l_sp, mut l_kd) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for _ in 0..8 {
            let (next, before) = jb_em_step(&data, &jb, EmMode::Exact).unwrap();
            prop_assert!(before >= l_jb - tol(before));
            prop_assert!(covariances_are_psd(&next, 1e-10));
            l_jb = before;
            jb = next;

            let (next_tc, _) = twocov_em_step(&data, &tc).unwrap();
            tc = next_tc;
            prop_assert!((tc.0.s_mu().as_matrix() - jb.s_mu().as_matrix()).amax() <= 1e-10);
            prop_assert!((tc.0.s_eps().as_matrix() - jb.s_eps().as_matrix()).amax() <= 1e-10);

            let (next, before) = splda_em_step(&data, &sp).unwrap();
            prop_assert!(before >= l_sp - tol(before));
            l_sp = before;
            sp = next;

            let (next, before) = kaldi_em_step(&data, &kd).unwrap();
            prop_assert!(before >= l_kd - tol(before));
            l_kd = before;
            kd = next;
        }
        prop_assert!(jb_loglik(&data, &jb).unwrap() >= l_jb - tol(l_jb));
        prop_assert!(splda_loglik(&data, &sp).unwrap() >= l_sp - tol(l_sp));
        prop_assert!(kaldi_loglik(&data, &kd).unwrap() >= l_kd - tol(l_kd));
    }

    #[test]
    fn splda_stalls_under_tiny_noise(d in 1usize..=6, log_sigma in -12.0f64..-8.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_dataset(d, 25, 4, &mut rng);
        let loading = rows(d, d, 1.0, &mut rng);
        // keep F comfortably away from singular
        prop_assume!(loading.clone().svd(false, false).singular_values.min() > 0.05);
        let model = SpldaModel::new(
            DVector::zeros(d),
            loading.clone(),
            SpdMatrix::identity(d).scaled(10f64.powf(log_sigma)),
        ).unwrap();
        let (next, _) = splda_em_step(&data, &model).unwrap();
        prop_assert!((next.loading() - &loading).norm() / loading.norm() <= 1e-3);
    }

    #[test]
    fn cosine_invariants(
        u in prop::collection::vec(-10.0f64..10.0, 3),
        v in prop::collection::vec(-10.0f64..10.0, 3),
        alpha in 1e-3f64..1e3,
        beta in 1e-3f64..1e3,
    ) {
        let (u, v) = (DVector::from_vec(u), DVector::from_vec(v));
        prop_assume!(u.norm() > 1e-6 && v.norm() > 1e-6);
        let c = cosine_score(&u, &v).unwrap();
        prop_assert_eq!(c, cosine_score(&v, &u).unwrap());
        prop_assert!((c - cosine_score(&(&u * alpha), &(&v * beta)).unwrap()).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&c));
    }

    #[test]
    fn metrics_invariants(
        targets in prop::collection::vec(-20i32..20, 1..40),
        nontargets in prop::collection::vec(-20i32..20, 1..40),
    ) {
        // integer-valued scores produce plenty of ties
        let t: Vec<f64> = targets.iter().map(|&v| v as f64 / 4.0).collect();
        let n: Vec<f64> = nontargets.iter().map(|&v| v as f64 / 4.0).collect();
        let set = ScoreSet::from_labeled(&t, &n).unwrap();
        let eer = compute_eer(&set).unwrap();
        let points = det_points(&set).unwrap();
        prop_assert!((0.0..=1.0).contains(&eer));
        prop_assert!(points.len() <= t.len() + n.len() + 1);
        for w in points.windows(2) {
            prop_assert!(w[1].p_fa <= w[0].p_fa && w[1].p_miss >= w[0].p_miss);
        }
        let dcf = compute_min_dcf(&set, 0.01, 10.0, 1.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&dcf));

        // strictly increasing transform
        let warp = |s: f64| s.atan() * 3.0 + s * 0.5 - 7.0;
        let tw: Vec<f64> = t.iter().map(|&s| warp(s)).collect();
        let nw: Vec<f64> = n.iter().map(|&s| warp(s)).collect();
        let warped = ScoreSet::from_labeled(&tw, &nw).unwrap();
        prop_assert_eq!(compute_eer(&warped).unwrap(), eer);
        prop_assert_eq!(det_points(&warped).unwrap(), points);
        prop_assert_eq!(compute_min_dcf(&warped, 0.01, 10.0, 1.0).unwrap(), dcf);

        // swapped labels with negated scores
        let nt: Vec<f64> = n.iter().map(|&s| -s).collect();
        let nn: Vec<f64> = t.iter().map(|&s| -s).collect();
        let swapped = ScoreSet::from_labeled(&nt, &nn).unwrap();
        prop_assert_eq!(compute_eer(&swapped).unwrap(), eer);
    }

    #[test]
    fn center_is_idempotent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups = (0..5)
            .map(|i| SpeakerGroup::from_vectors(format!("s{i}"), rows(3, 4, 5.0, &mut rng).add_scalar(2.0)).unwrap())
            .collect();
        let once = Dataset::new(4, groups).unwrap().center();
        let twice = once.center();
        for (a, b) in once.speakers().iter().zip(twice.speakers()) {
            prop_assert!((a.vectors() - b.vectors()).amax() <= 1e-12);
        }
    }

    #[test]
    fn approx_mode_shrinks_below_exact(seed in any::<u64>()) {
        // the exact update adds posterior covariances, which are PSD
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_dataset(3, 20, 3, &mut rng);
        let init = JbModel::initialize(&data).unwrap();
        let (exact, _) = jb_em_step(&data, &init, EmMode::Exact).unwrap();
        let (approx, _) = jb_em_step(&data, &init, EmMode::Approx).unwrap();
        let gap = exact.s_mu().as_matrix() - approx.s_mu().as_matrix();
        let min_eig = gap.symmetric_eigenvalues().min();
        prop_assert!(min_eig >= -1e-10);
        prop_assert!(rel_gap(jb_loglik(&data, &exact).unwrap(), jb_loglik(&data, &init).unwrap()) >= -1e-8);
    }
}
