//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero when any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use morphogate::atlas::{build_masks, procedural_parcellation, region_means, RegionMasks};
use morphogate::clinical::{Embedder, EmbedderSpec};
use morphogate::dbm::{dbm_pipeline, DbmConfig};
use morphogate::metrics::{classification_metrics, ConfusionCounts};
use morphogate::model::{
    backward, bce_loss, forward_features, forward_volumes, ModelConfig, ModelParams, SubjectFeatures, TrainConfig,
};
use morphogate::pipeline::{
    evaluate, fit_model, predict_all, predictions_csv, run_ablation, synthetic_features, FitOptions, ModelState,
    PredictionRow, RawFeatures,
};
use morphogate::pswm::{gates, pswm_forward, GateParams, PriorWeights};
use morphogate::synthcohort::{analytic_warp, cohort_template, AnalyticWarp, CohortSpec};
use morphogate::volume::{read_labels, write_volume, GridGeometry, LabelVolume, ScalarVolume};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 1. Jacobian oracle suite

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn cofactor(m: &[[f64; 3]; 3], a: usize, b: usize) -> f64 {
    let (r0, r1) = ((a + 1) % 3, (a + 2) % 3);
    let (c0, c1) = ((b + 1) % 3, (b + 2) % 3);
    m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
}

/// Max |exp(lJ) - J| over interior voxels, with sigma = 0.
fn interior_error(warp: &AnalyticWarp, g: GridGeometry) -> f64 {
    let field = analytic_warp(warp, g).unwrap();
    let (lj, _) = dbm_pipeline(&field, &DbmConfig::with_sigma(0.0)).unwrap();
    let [s, h, w] = g.dims();
    let mut err: f64 = 0.0;
    for i in 1..s - 1 {
        for j in 1..h - 1 {
            for k in 1..w - 1 {
                let exact = warp.jacobian_det(g.position(i, j, k));
                err = err.max((lj.get(i, j, k).exp() - exact).abs());
            }
        }
    }
    err
}

/// Leading-order central-difference bound on the determinant error:
/// each entry errs by at most `h^2/6 * max|d^3 u_a / dx_b^3|`, propagated
/// through the cofactors. Third derivatives come from second differences of
/// the analytic Jacobian matrix.
fn bump_error_bound(warp: &AnalyticWarp, g: GridGeometry) -> f64 {
    let eta = 1e-3;
    let [s, h, w] = g.dims();
    let sp = g.spacing();
    let mut d3 = [[0.0f64; 3]; 3];
    let mut cof = [[0.0f64; 3]; 3];
    for i in 1..s - 1 {
        for j in 1..h - 1 {
            for k in 1..w - 1 {
                let x = g.position(i, j, k);
                let jm = warp.jacobian_matrix(x);
                for b in 0..3 {
                    let (mut xp, mut xm) = (x, x);
                    xp[b] += eta;
                    xm[b] -= eta;
                    let (jp, jn) = (warp.jacobian_matrix(xp), warp.jacobian_matrix(xm));
                    for a in 0..3 {
                        let v = (jp[a][b] - 2.0 * jm[a][b] + jn[a][b]) / (eta * eta);
                        d3[a][b] = d3[a][b].max(v.abs());
                        cof[a][b] = cof[a][b].max(cofactor(&jm, a, b).abs());
                    }
                }
            }
        }
    }
    let mut bound = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            bound += cof[a][b] * sp[b] * sp[b] / 6.0 * d3[a][b];
        }
    }
    // second-order terms in the entry errors
    1.1 * bound
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let g = GridGeometry::cube(32);
    let fine = GridGeometry::new([63, 63, 63], [0.5; 3]).unwrap();
    let mut notes = Vec::new();
    let mut ok = true;

    let affines = [
        [[1.2, 0.0, 0.0], [0.0, 0.9, 0.0], [0.0, 0.0, 1.0]],
        [[1.05, 0.1, 0.0], [-0.05, 0.95, 0.02], [0.03, 0.0, 1.1]],
        [[0.8, 0.0, 0.15], [0.1, 1.25, 0.0], [0.0, -0.2, 0.9]],
    ];
    let mut affine_err: f64 = interior_error(&AnalyticWarp::Identity, g);
    for a in affines {
        assert!(det3(&a) > 0.0);
        let warp = AnalyticWarp::Affine { a, b: [0.3, -0.2, 0.1] };
        affine_err = affine_err.max(interior_error(&warp, g));
    }
    ok &= affine_err <= 1e-12;
    notes.push(format!("identity/affine max err {affine_err:.2e}"));

    let bumps = [
        ([16.0, 16.0, 16.0], 4.0, 0.05),
        ([14.0, 17.0, 15.5], 3.0, 0.2),
        ([17.5, 15.0, 16.5], 5.0, -0.15),
    ];
    for (center, radius, amplitude) in bumps {
        let warp = AnalyticWarp::RadialBump { center, radius, amplitude };
        let (e1, e2) = (interior_error(&warp, g), interior_error(&warp, fine));
        let bound = bump_error_bound(&warp, g);
        let ratio = e1 / e2;
        ok &= e1 <= bound && ratio >= 3.5;
        notes.push(format!("bump a={amplitude} rho={radius}: err {e1:.2e} (bound {bound:.2e}), halved ratio {ratio:.2}"));
    }
    // the halved-spacing grids are not part of the timed suite
    let t_base = {
        let t = Instant::now();
        for a in affines {
            interior_error(&AnalyticWarp::Affine { a, b: [0.0; 3] }, g);
        }
        interior_error(&AnalyticWarp::Identity, g);
        for (center, radius, amplitude) in bumps {
            interior_error(&AnalyticWarp::RadialBump { center, radius, amplitude }, g);
        }
        t.elapsed()
    };
    ok &= t_base < Duration::from_secs(5);
    notes.push(format!("32^3 suite {:.2}s (total {:.2}s)", t_base.as_secs_f64(), t0.elapsed().as_secs_f64()));
    check(ok, notes.join("; "))
}

// ---------------------------------------------------------------------------
// 2. Partition of unity

fn partition_exact(masks: &RegionMasks, labels: &LabelVolume) -> bool {
    let hot: Vec<Vec<u8>> = (1..=masks.m()).map(|r| masks.one_hot(r)).collect();
    labels.labels().iter().enumerate().all(|(v, &l)| {
        let sum: u32 = hot.iter().map(|h| u32::from(h[v])).sum();
        sum == u32::from(l > 0)
    })
}

fn criterion_2() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut checked = 0;
    let mut ok = true;
    let geometries = [
        GridGeometry::cube(16),
        GridGeometry::new([32, 40, 32], [1.0; 3]).unwrap(),
        GridGeometry::new([20, 24, 18], [1.5, 1.0, 2.0]).unwrap(),
    ];
    for (gi, g) in geometries.iter().enumerate() {
        for (m, seed) in [(4, 1), (8, 7), (12, 3)] {
            let labels = procedural_parcellation(g, m, seed).unwrap();
            let masks = build_masks(&labels, m).unwrap();
            ok &= partition_exact(&masks, &labels);
            // imported: written to disk and read back
            let path = dir.path().join(format!("atlas_{gi}_{m}.vol"));
            write_volume(&labels.clone().into(), &path).unwrap();
            let imported = read_labels(&path).unwrap();
            let masks = build_masks(&imported, m).unwrap();
            ok &= partition_exact(&masks, &imported);
            checked += 2;
        }
    }
    let tpl = cohort_template(&CohortSpec::default()).unwrap();
    ok &= partition_exact(&tpl.masks, &tpl.atlas);
    // hand-made atlas with background slabs
    let g = GridGeometry::cube(10);
    let lab: Vec<u16> = (0..g.len())
        .map(|idx| {
            let [i, j, _] = g.coords(idx);
            if i < 2 {
                0
            } else {
                1 + (j % 3) as u16
            }
        })
        .collect();
    let hand = LabelVolume::new(g, lab).unwrap();
    ok &= partition_exact(&build_masks(&hand, 3).unwrap(), &hand);
    checked += 2;
    check(ok, format!("{checked} atlases, sum of masks equals in-brain indicator exactly"))
}

// ---------------------------------------------------------------------------
// 3. Gate contract

fn criterion_3() -> Outcome {
    let gp = GateParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut in_range, mut monotone) = (true, true);
    for _ in 0..10_000 {
        let p: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..5.0)).collect();
        let d: Vec<f64> = (0..4).map(|_| rng.random_range(-10.0..10.0)).collect();
        let prior = PriorWeights::new(p.clone()).unwrap();
        let w = gates(&prior, &d, &gp);
        in_range &= w.iter().all(|&v| v > 0.0 && v < 1.0);
        let eps = rng.random_range(1e-6..1.0);
        let r = rng.random_range(0..4);
        let mut d2 = d.clone();
        d2[r] += eps;
        monotone &= gates(&prior, &d2, &gp)[r] >= w[r];
        let mut p2 = p.clone();
        p2[r] += eps;
        monotone &= gates(&PriorWeights::new(p2).unwrap(), &d, &gp)[r] >= w[r];
    }
    let prior = PriorWeights::new(vec![1.0, 1.0]).unwrap();
    let extreme = gates(&prior, &[1e4, -1e4], &gp);
    let no_overflow = extreme.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v));
    let one = gates(&PriorWeights::new(vec![1.0]).unwrap(), &[0.0], &gp)[0];
    let sigma1 = 1.0 / (1.0 + (-1.0f64).exp());
    let sig_ok = (one - 0.7310586).abs() < 1e-6 && (one - sigma1).abs() < 1e-15;
    check(
        in_range && monotone && no_overflow && sig_ok,
        format!(
            "in (0,1): {in_range}, monotone: {monotone}, |delta|=1e4 -> {extreme:?}, sigma(1) = {one:.7}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. End-to-end gradient check

struct GradInstance {
    masks: RegionMasks,
    images: Vec<ScalarVolume>,
    ljs: Vec<ScalarVolume>,
    embeddings: Vec<Vec<f64>>,
    labels: Vec<u8>,
    prior: PriorWeights,
    params: ModelParams,
    cfg: ModelConfig,
}

fn grad_instance(seed: u64) -> GradInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = GridGeometry::cube(8);
    let lab: Vec<u16> = (0..g.len())
        .map(|idx| {
            let [i, j, k] = g.coords(idx);
            if i == 0 && j == 0 {
                0
            } else {
                1 + (4 * (i / 4) + 2 * (j / 4) + k / 4) as u16
            }
        })
        .collect();
    let masks = build_masks(&LabelVolume::new(g, lab).unwrap(), 8).unwrap();
    let cfg = ModelConfig {
        hidden: 8,
        ..ModelConfig::new(8, 16)
    };
    let mut params = ModelParams::init(&cfg, 1.0, &mut rng);
    params.head.v = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    params.head.b = rng.random_range(-0.5..0.5);
    let batch = 3;
    // z-scored-like volumes: a per-region level plus voxel noise
    let vol = |rng: &mut ChaCha8Rng| {
        let level: Vec<f64> = (0..=8).map(|_| rng.random_range(-1.5..1.5)).collect();
        let data = masks
            .labels()
            .labels()
            .iter()
            .map(|&l| level[l as usize] + rng.random_range(-1.0..1.0))
            .collect();
        ScalarVolume::new(g, data).unwrap()
    };
    let images = (0..batch).map(|_| vol(&mut rng)).collect();
    let ljs = (0..batch).map(|_| vol(&mut rng)).collect();
    let embeddings = (0..batch)
        .map(|_| {
            let v: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let labels = (0..batch).map(|n| (n % 2) as u8).collect();
    let prior = PriorWeights::new((0..8).map(|_| rng.random_range(0.1..3.0)).collect()).unwrap();
    GradInstance {
        masks,
        images,
        ljs,
        embeddings,
        labels,
        prior,
        params,
        cfg,
    }
}

/// Mean BCE evaluated through the voxel grid.
fn volume_loss(inst: &GradInstance, params: &ModelParams) -> f64 {
    let logits: Vec<f64> = (0..inst.labels.len())
        .map(|n| {
            forward_volumes(&inst.images[n], &inst.ljs[n], &inst.masks, &inst.embeddings[n], params, &inst.prior, &inst.cfg)
                .unwrap()
                .0
        })
        .collect();
    bce_loss(&logits, &inst.labels).unwrap()
}

fn criterion_4() -> Outcome {
    let t0 = Instant::now();
    let step = 1e-5;
    // (max relative error, max absolute error, components compared, violators, largest violating |grad|)
    let stats = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let inst = grad_instance(100 + seed);
            let caches: Vec<_> = (0..inst.labels.len())
                .map(|n| {
                    let feat = SubjectFeatures {
                        subject_id: format!("g{n}"),
                        image_means: region_means(&inst.images[n], &inst.masks).unwrap(),
                        dbm_means: region_means(&inst.ljs[n], &inst.masks).unwrap(),
                        embedding: inst.embeddings[n].clone(),
                        label: Some(inst.labels[n]),
                    };
                    forward_features(&feat, &inst.params, &inst.prior, &inst.cfg).unwrap()
                })
                .collect();
            let analytic = backward(&caches, &inst.labels, &inst.params, &inst.cfg).unwrap().flatten();
            let flat = inst.params.flatten();
            let mut p = inst.params.clone();
            let mut st = (0.0f64, 0.0f64, 0usize, 0usize, 0.0f64);
            for i in 0..flat.len() {
                let mut f = flat.clone();
                f[i] = flat[i] + step;
                p.load_flat(&f);
                let lp = volume_loss(&inst, &p);
                f[i] = flat[i] - step;
                p.load_flat(&f);
                let lm = volume_loss(&inst, &p);
                let numeric = (lp - lm) / (2.0 * step);
                let diff = (analytic[i] - numeric).abs();
                let scale = analytic[i].abs().max(numeric.abs());
                st.1 = st.1.max(diff);
                if scale > 1e-8 {
                    let rel = diff / scale;
                    st.0 = st.0.max(rel);
                    st.2 += 1;
                    if rel >= 1e-6 {
                        st.3 += 1;
                        st.4 = st.4.max(scale);
                    }
                }
            }
            st
        })
        .reduce(
            || (0.0, 0.0, 0, 0, 0.0),
            |a, b| (a.0.max(b.0), a.1.max(b.1), a.2 + b.2, a.3 + b.3, a.4.max(b.4)),
        );
    let elapsed = t0.elapsed();
    let (worst, abs, compared, bad, bad_scale) = stats;
    check(
        worst < 1e-6 && elapsed < Duration::from_secs(30),
        format!(
            "20 instances, {compared} components with |grad| > 1e-8, max relative error {worst:.2e}, max absolute error {abs:.2e}; {bad} components >= 1e-6, all with |grad| <= {bad_scale:.1e}; {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Loss stability

fn criterion_5() -> Outcome {
    // 1 - sigmoid(s) written as 1 / (1 + e^s) so the oracle stays accurate.
    let naive = |s: f64, y: u8| {
        let y = y as f64;
        -(y * (1.0 / (1.0 + (-s).exp())).ln() + (1.0 - y) * (1.0 / (1.0 + s.exp())).ln())
    };
    let mut worst: f64 = 0.0;
    for k in 0..=600 {
        let s = -30.0 + 0.1 * k as f64;
        for y in [0u8, 1] {
            worst = worst.max((bce_loss(&[s], &[y]).unwrap() - naive(s, y)).abs());
        }
    }
    let logits = [-30.0, -2.5, 0.0, 0.7, 12.0, 30.0];
    let labels = [0u8, 1, 1, 0, 1, 0];
    let mean = logits.iter().zip(&labels).map(|(&s, &y)| naive(s, y)).sum::<f64>() / 6.0;
    worst = worst.max((bce_loss(&logits, &labels).unwrap() - mean).abs());
    let extremes: Vec<f64> = [(1e4, 0u8), (1e4, 1), (-1e4, 0), (-1e4, 1)]
        .iter()
        .map(|&(s, y)| bce_loss(&[s], &[y]).unwrap())
        .collect();
    let finite = extremes.iter().all(|v| v.is_finite());
    check(
        worst <= 1e-12 && finite && (extremes[0] - 1e4).abs() < 1e-9,
        format!("max |diff| {worst:.2e} on |s| <= 30; s = +-1e4 -> {extremes:?}"),
    )
}

// ---------------------------------------------------------------------------
// 6. Metric reconstruction

fn criterion_6() -> Outcome {
    let m = classification_metrics(&ConfusionCounts::new(16, 1, 4, 13)).unwrap();
    let round2 = |x: f64| (x * 10_000.0).round() / 100.0;
    let got = (round2(m.acc.value()), round2(m.tpr.value()), round2(m.fpr.value()));
    let oracle = (round2(29.0 / 34.0), round2(16.0 / 17.0), round2(4.0 / 17.0));
    let strings = (m.acc.percent(), m.tpr.percent(), m.fpr.percent());
    check(
        got == (85.29, 94.12, 23.53) && got == oracle && strings == ("85.29".into(), "94.12".into(), "23.53".into()),
        format!("ACC {} TPR {} FPR {}", strings.0, strings.1, strings.2),
    )
}

// ---------------------------------------------------------------------------
// 7-11. Synthetic cohort

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn internal_spec() -> CohortSpec {
    CohortSpec {
        n_subjects: 200,
        effect_size: 0.15,
        clinical_coupling: true,
        seed: 1,
        ..CohortSpec::default()
    }
}

fn external_spec() -> CohortSpec {
    CohortSpec {
        n_subjects: 60,
        seed: 2,
        age_shift: 5.0,
        id_prefix: "ext".into(),
        ..internal_spec()
    }
}

fn prior(spec: &CohortSpec) -> PriorWeights {
    let mut p = vec![0.01; spec.m];
    for &r in &spec.effect_regions {
        p[r - 1] = 2.0;
    }
    PriorWeights::new(p).unwrap()
}

fn fit_options(seed: u64) -> FitOptions {
    let embedder = EmbedderSpec::Hashing { dim: 64, seed: 0 };
    FitOptions {
        model: ModelConfig {
            hidden: 8,
            ..ModelConfig::new(8, 64)
        },
        train: TrainConfig {
            lr: 1e-2,
            max_epochs: 800,
            early_stop_patience: 100,
            mlp_init_scale: 1.0,
            seed,
            ..TrainConfig::default()
        },
        embedder,
        dbm: DbmConfig::default(),
        tau: 0.3,
    }
}

struct Data {
    masks: RegionMasks,
    prior: PriorWeights,
    train: Vec<RawFeatures>,
    test: Vec<RawFeatures>,
    external: Vec<RawFeatures>,
}

/// Generates both cohorts and splits the internal one into train and test
/// exactly as the on-disk generator does.
fn build_data() -> Data {
    let (ispec, espec) = (internal_spec(), external_spec());
    let template = cohort_template(&ispec).unwrap();
    let opts = fit_options(1);
    let embedder = Embedder::from_spec(&opts.embedder).unwrap();
    let internal = synthetic_features(&ispec, &template, &opts.dbm, &embedder, opts.tau).unwrap();
    let external = synthetic_features(&espec, &template, &opts.dbm, &embedder, opts.tau).unwrap();
    let labels: Vec<u8> = internal.iter().map(|(r, _)| r.label.unwrap()).collect();
    let (tr, te) = morphogate::model::stratified_split(
        &labels,
        ispec.test_fraction,
        morphogate::seed::child_seed(ispec.seed, "test-split"),
    );
    Data {
        masks: template.masks,
        prior: prior(&ispec),
        train: tr.iter().map(|&i| internal[i].0.clone()).collect(),
        test: te.iter().map(|&i| internal[i].0.clone()).collect(),
        external: external.into_iter().map(|(r, _)| r).collect(),
    }
}

struct Run {
    state: ModelState,
    test_preds: Vec<PredictionRow>,
    ext_preds: Vec<PredictionRow>,
}

fn run_seed(data: &Data, seed: u64) -> Run {
    let (state, _) = fit_model(&data.train, &data.prior, &data.masks, &fit_options(seed)).unwrap();
    Run {
        test_preds: predict_all(&state, &data.test).unwrap(),
        ext_preds: predict_all(&state, &data.external).unwrap(),
        state,
    }
}

fn acc(rows: &[PredictionRow], set: &[RawFeatures]) -> f64 {
    let correct = rows.iter().zip(set).filter(|(r, s)| Some(r.class) == s.label).count();
    correct as f64 / set.len() as f64
}

struct Synth {
    data: Data,
    runs: Vec<Run>,
    c7_elapsed: Duration,
}

fn synth() -> Synth {
    let t0 = Instant::now();
    let data = build_data();
    let first = run_seed(&data, SEEDS[0]);
    let c7_elapsed = t0.elapsed();
    let mut runs = vec![first];
    runs.extend(SEEDS[1..].par_iter().map(|&s| run_seed(&data, s)).collect::<Vec<_>>());
    Synth { data, runs, c7_elapsed }
}

fn criterion_7(s: &Synth) -> Outcome {
    let r = &s.runs[0];
    let (ai, ae) = (acc(&r.test_preds, &s.data.test), acc(&r.ext_preds, &s.data.external));
    check(
        ai >= 0.90 && ae >= 0.85 && s.c7_elapsed < Duration::from_secs(600),
        format!(
            "internal-test ACC {ai:.4} (n={}), external ACC {ae:.4} (n={}), {:.1}s",
            s.data.test.len(),
            s.data.external.len(),
            s.c7_elapsed.as_secs_f64()
        ),
    )
}

fn criterion_8(s: &Synth) -> Outcome {
    let rows = run_ablation(
        &s.data.train,
        &[&s.data.test, &s.data.external],
        &s.data.prior,
        &s.data.masks,
        &fit_options(1),
        &SEEDS,
    )
    .unwrap();
    let mean = |name: &str, k: usize| rows.iter().find(|r| r.name == name).unwrap().mean_acc[k];
    let (full, patient, prior, dbm, no_dbm) =
        (mean("full", 0), mean("dbm_patient", 0), mean("dbm_prior", 0), mean("dbm_only", 0), mean("no_dbm", 0));
    let ordered = full >= patient && patient >= prior && prior >= dbm && no_dbm < dbm.min(prior).min(patient).min(full);
    let ext: Vec<String> = rows.iter().map(|r| format!("{} {:.4}", r.name, r.mean_acc[1])).collect();
    check(
        ordered,
        format!(
            "mean internal-test ACC full {full:.4}, patient {patient:.4}, prior {prior:.4}, dbm_only {dbm:.4}, no_dbm {no_dbm:.4} (external: {})",
            ext.join(", ")
        ),
    )
}

fn criterion_9(s: &Synth) -> Outcome {
    let planted = internal_spec().effect_regions;
    let m = s.data.masks.m();
    let top = m.div_ceil(4);
    let subjects: Vec<&RawFeatures> = s.data.test.iter().chain(&s.data.external).collect();
    let mut hits = 0;
    let mut ranks = Vec::new();
    for run in &s.runs {
        let st = &run.state;
        let mut wbar = vec![0.0; m];
        for f in &subjects {
            let fw = pswm_forward(&f.embedding, &st.prior, &st.params.mlp, &st.model.gate, st.model.ablation.gate).unwrap();
            for r in 0..m {
                wbar[r] += fw.w[r] / subjects.len() as f64;
            }
        }
        let contrib: Vec<f64> = (0..m).map(|r| st.params.head.v[r].abs() * wbar[r]).collect();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| contrib[b].total_cmp(&contrib[a]));
        let best: Vec<usize> = order[..top].iter().map(|r| r + 1).collect();
        hits += usize::from(planted.iter().all(|r| best.contains(r)));
        ranks.push(format!("{best:?}"));
    }
    check(hits >= 4, format!("planted {planted:?} in top {top} for {hits}/5 seeds (top per seed: {})", ranks.join(" ")))
}

/// Equal-width 10-bin ECE.
fn ece(probs: &[f64], labels: &[u8]) -> f64 {
    let mut bins = vec![(0.0, 0.0, 0usize); 10];
    for (&p, &y) in probs.iter().zip(labels) {
        let b = ((p * 10.0).floor() as usize).min(9);
        bins[b].0 += p;
        bins[b].1 += y as f64;
        bins[b].2 += 1;
    }
    bins.iter()
        .filter(|b| b.2 > 0)
        .map(|&(sp, sy, n)| (n as f64 / probs.len() as f64) * (sp / n as f64 - sy / n as f64).abs())
        .sum()
}

fn net_benefit(probs: &[f64], labels: &[u8], t: f64) -> (f64, f64) {
    let n = probs.len() as f64;
    let tp = probs.iter().zip(labels).filter(|(&p, &y)| p >= t && y == 1).count() as f64;
    let fp = probs.iter().zip(labels).filter(|(&p, &y)| p >= t && y == 0).count() as f64;
    let pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let odds = t / (1.0 - t);
    (tp / n - fp / n * odds, pos / n - (n - pos) / n * odds)
}

fn criterion_10(s: &Synth) -> Outcome {
    let r = &s.runs[0];
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, rows, set) in [("internal", &r.test_preds, &s.data.test), ("external", &r.ext_preds, &s.data.external)] {
        let probs: Vec<f64> = rows.iter().map(|p| p.prob).collect();
        let classes: Vec<u8> = rows.iter().map(|p| p.class).collect();
        let labels: Vec<u8> = set.iter().map(|f| f.label.unwrap()).collect();
        let report = evaluate(&probs, &classes, &labels).unwrap();
        let e = ece(&probs, &labels);
        ok &= (e - report.calibration.ece).abs() < 1e-12 && e <= 0.10;
        let mut nb_ok = true;
        for k in 4..=10 {
            let t = k as f64 / 20.0;
            let (model, all) = net_benefit(&probs, &labels, t);
            let lib = report.net_benefit.iter().find(|row| (row.threshold - t).abs() < 1e-12).unwrap();
            ok &= (lib.model - model).abs() < 1e-12 && (lib.treat_all - all).abs() < 1e-12;
            nb_ok &= model > all && model > 0.0;
        }
        ok &= nb_ok;
        notes.push(format!("{name}: ECE {e:.4}, net benefit beats treat-all/none on [0.2, 0.5]: {nb_ok}"));
    }
    check(ok, notes.join("; "))
}

fn criterion_11(s: &Synth) -> Outcome {
    // independent repeat on a different thread count
    let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
    let again = pool.install(|| {
        let data = build_data();
        run_seed(&data, SEEDS[0])
    });
    let first = &s.runs[0];
    let same_ckpt = first.state.to_bytes().unwrap() == again.state.to_bytes().unwrap();
    let same_preds = predictions_csv(&first.test_preds) == predictions_csv(&again.test_preds)
        && predictions_csv(&first.ext_preds) == predictions_csv(&again.ext_preds);
    // and through the file round trip
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    again.state.save(&path).unwrap();
    let reloaded = ModelState::load(Path::new(&path)).unwrap();
    let same_reload = predict_all(&reloaded, &s.data.external).unwrap() == first.ext_preds;
    check(
        same_ckpt && same_preds && same_reload,
        format!("checkpoint identical: {same_ckpt}, prediction files identical: {same_preds}, reload identical: {same_reload}"),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: std::thread::Result<Outcome>| {
        let (tag, detail) = match outcome {
            Ok(Ok(d)) => ("PASS", d),
            Ok(Err(d)) => ("FAIL", d),
            Err(_) => ("FAIL", "panicked".to_string()),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("criterion {n:>2} [{name}]: {tag} - {detail}");
    };
    let quick: [(&str, fn() -> Outcome); 6] = [
        ("jacobian oracle", criterion_1),
        ("partition of unity", criterion_2),
        ("gate contract", criterion_3),
        ("gradient check", criterion_4),
        ("loss stability", criterion_5),
        ("metric reconstruction", criterion_6),
    ];
    for (i, (name, f)) in quick.into_iter().enumerate() {
        report(i + 1, name, catch_unwind(f));
    }
    match catch_unwind(synth) {
        Ok(s) => {
            let slow: [(&str, fn(&Synth) -> Outcome); 5] = [
                ("responder recovery", criterion_7),
                ("ablation ordering", criterion_8),
                ("planted regions", criterion_9),
                ("calibration and net benefit", criterion_10),
                ("determinism", criterion_11),
            ];
            for (i, (name, f)) in slow.into_iter().enumerate() {
                report(i + 7, name, catch_unwind(AssertUnwindSafe(|| f(&s))));
            }
        }
        Err(_) => {
            for n in 7..=11 {
                report(n, "synthetic cohort", Ok(Err("cohort generation or training panicked".into())));
            }
        }
    }
    println!("acceptance: {} of 11 criteria passed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
