//! One pass/fail line per acceptance criterion; exits non-zero if any fails.
//!
//! `cargo test -p writerid --test acceptance`

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use writerid::cnn::{CnnConfig, CnnModel, TrainSchedule};
use writerid::encoding::{
    encode_fisher, encode_supervector, encode_vlad, map_adapt_means, posteriors, supervector, EncoderKind,
    EncoderParams, GlobalDescriptor, Normalization,
};
use writerid::gmm::{fit_gmm, GmmModel, GmmOptions, KmeansModel};
use writerid::pipeline::{Pipeline, PipelineConfig};
use writerid::retrieval::{average_precision, evaluate, hard_top_k, RankedList};
use writerid::synth::{corpus, write_dataset, PageLayout};
use writerid::whitening::{fit_whitening, sample_covariance, WhiteningMode};

type Verdict = Result<String, String>;

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn within(elapsed: Duration, budget: Duration) -> Result<(), String> {
    check(elapsed < budget, || format!("took {elapsed:.1?}, budget {budget:?}"))
}

fn gradient_correctness() -> Verdict {
    let t = Instant::now();
    let config = CnnConfig::config_a(32, 5).with_filters(8, 16);
    let model = CnnModel::init(config, &mut ChaCha8Rng::seed_from_u64(4)).map_err(|e| e.to_string())?;
    let verdict = gradient_verdict(&gradient_check(&model, &random_batch(3, 5, 5), 300))?;
    within(t.elapsed(), Duration::from_secs(60))?;
    Ok(verdict)
}

fn shape_chains() -> Verdict {
    let a = CnnConfig::config_a(64, 1).shapes().map_err(|e| e.to_string())?;
    let b = CnnConfig::config_b(64, 1).shapes().map_err(|e| e.to_string())?;
    // valid convolutions and non-overlapping pools on a 32x32 input
    let chain = |c: usize, p: usize, c2: usize, p2: usize, f2: usize| {
        let s1 = (32 - c + 1) / p;
        let s2 = (s1 - c2 + 1) / p2;
        s2 * s2 * f2
    };
    let (fa, fb) = (chain(5, 2, 5, 2, 256), chain(7, 2, 5, 3, 256));
    check(a.flatten == 6400 && a.flatten == fa, || format!("config A flattens to {}", a.flatten))?;
    check(b.flatten == 2304 && b.flatten == fb, || format!("config B flattens to {}", b.flatten))?;
    Ok(format!("A {a:?}, B {b:?}"))
}

fn em_recovery() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let x = Array2::from_shape_fn((1000, 1), |(i, _)| if i % 2 == 0 { 5.0 } else { -5.0 } + noise.sample(&mut rng));
    let opts = GmmOptions {
        components: 2,
        seed: 3,
        // no early stop: every one of the iterations is checked
        max_iters: 50,
        tol: f64::NEG_INFINITY,
        ..GmmOptions::default()
    };
    let fit = fit_gmm(x.view(), &opts).map_err(|e| e.to_string())?;
    let mut comps: Vec<(f64, f64)> = (0..2).map(|k| (fit.model.means[[k, 0]], fit.model.weights[k])).collect();
    comps.sort_by(|a, b| a.0.total_cmp(&b.0));
    check((comps[0].0 + 5.0).abs() < 0.1 && (comps[1].0 - 5.0).abs() < 0.1, || format!("means {comps:?}"))?;
    check(comps.iter().all(|c| (c.1 - 0.5).abs() < 0.05), || format!("weights {comps:?}"))?;
    let ll = &fit.log_likelihoods;
    // rounding in the log-sum-exp is the only allowed slack
    let dip = ll.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    check(dip <= 1e-12 * ll[0].abs(), || format!("log-likelihood fell by {dip:e}"))?;
    within(t.elapsed(), Duration::from_secs(5))?;
    Ok(format!(
        "means {:.4} / {:.4}, weights {:.4} / {:.4}, {} iterations",
        comps[0].0,
        comps[1].0,
        comps[0].1,
        comps[1].1,
        ll.len() - 1
    ))
}

fn map_algebra() -> Verdict {
    let gmm = GmmModel::new(
        array![0.6, 0.4],
        array![[0.0, 0.0], [50.0, 50.0]],
        array![[1.0, 1.0], [1.0, 1.0]],
    )
    .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Array2::from_shape_fn((40, 2), |_| rng.gen_range(-1.0..1.5));
    // top-1 truncation gives the far component exactly zero mass
    let gamma = posteriors(&gmm, x.view(), 1, true).map_err(|e| e.to_string())?;
    let tau = 7.0;
    let m = map_adapt_means(&gmm, x.view(), &gamma, tau).map_err(|e| e.to_string())?;
    for k in 0..2 {
        let n = m.counts[k];
        check(m.alphas[k] == n / (n + tau), || format!("alpha_{k} = {} for n = {n}", m.alphas[k]))?;
    }
    check(m.counts[1] == 0.0, || format!("n_1 = {}", m.counts[1]))?;
    check(m.means.row(1) == gmm.means.row(1), || format!("unvisited component moved to {}", m.means.row(1)))?;

    let half = map_adapt_means(&gmm, x.view(), &gamma, m.counts[0]).map_err(|e| e.to_string())?;
    check(half.alphas[0] == 0.5, || format!("n = tau gives alpha {}", half.alphas[0]))?;

    let rigid = map_adapt_means(&gmm, x.view(), &gamma, 1e12).map_err(|e| e.to_string())?;
    let drift = (&rigid.means - &gmm.means).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    check(drift < 1e-6, || format!("tau = 1e12 still moves the means by {drift:e}"))?;
    Ok(format!("n_0 = {}, tau = 1e12 drift {drift:.1e}", m.counts[0]))
}

fn kl_formula() -> Verdict {
    let kl = EncoderParams::default();
    assert_eq!(kl.normalization, Normalization::Kl);
    let gmm = GmmModel::new(array![0.25, 0.75], array![[0.0], [1.0]], array![[4.0], [4.0]]).map_err(|e| e.to_string())?;
    let v = supervector(&array![[8.0], [1.0]], &gmm, &kl).map_err(|e| e.to_string())?;
    // sqrt(0.25) * 8 / sqrt(4)
    check((v[0] - 2.0).abs() < 1e-9, || format!("hand case gives {}", v[0]))?;

    let unit = GmmModel::new(array![1.0], array![[0.0, 0.0, 0.0]], array![[1.0, 1.0, 1.0]]).map_err(|e| e.to_string())?;
    let means = array![[0.3, -2.5, 7.0]];
    let v = supervector(&means, &unit, &kl).map_err(|e| e.to_string())?;
    let err = max_abs_diff(&v, means.as_slice().unwrap());
    check(err < 1e-9, || format!("identity case off by {err:e}"))?;
    Ok("hand case 2.0, identity case exact".into())
}

fn encoder_oracles() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    let cases = 60;
    for case in 0..cases {
        let (tn, k, d) = (rng.gen_range(1..=200), rng.gen_range(1..=8), rng.gen_range(1..=16));
        let inst = instance(tn, k, d, rng.gen());
        let g = gmm(&inst);
        let kl = EncoderParams {
            tau: rng.gen_range(0.0..100.0),
            top_c: rng.gen_range(1..=k),
            renormalize_truncated: rng.gen(),
            ..EncoderParams::default()
        };
        let ssr = EncoderParams {
            normalization: Normalization::SsrL2,
            ..kl
        };
        let km = KmeansModel::new(inst.mu.clone()).map_err(|e| e.to_string())?;
        let pairs = [
            ("supervector KL", encode_supervector(&g, inst.x.view(), &kl), naive_supervector(&inst, &kl)),
            ("supervector SSR", encode_supervector(&g, inst.x.view(), &ssr), naive_supervector(&inst, &ssr)),
            ("VLAD", encode_vlad(&km, inst.x.view(), 0.5), naive_vlad(&inst.x, &inst.mu)),
            ("FV", encode_fisher(&g, inst.x.view(), 0.5), naive_fisher(&inst)),
        ];
        for (name, got, want) in pairs {
            let got = got.map_err(|e| format!("{name}: {e}"))?;
            check(got.len() == want.len(), || format!("{name}: length {} vs {}", got.len(), want.len()))?;
            let err = max_abs_diff(&got, &want);
            check(err < 1e-8, || format!("{name} case {case} (T={tn}, K={k}, D={d}): error {err:e}"))?;
            worst = worst.max(err);
        }
    }
    within(t.elapsed(), Duration::from_secs(10))?;
    Ok(format!("{cases} instances x 4 encoders, worst error {worst:.1e}"))
}

fn descriptor(writer: usize, doc: usize, vector: Vec<f64>) -> GlobalDescriptor {
    GlobalDescriptor {
        vector,
        doc_id: format!("{writer}_{doc}"),
        writer_id: writer.to_string(),
        encoder: EncoderKind::SupervectorKl,
    }
}

fn metric_oracle() -> Verdict {
    // relevant at ranks 1, 3, 4: precisions 1/1, 2/3, 3/4
    let ap = average_precision(&RankedList::from_relevance(&[true, false, true, true])).ok_or("no relevant")?;
    let oracle = (1.0 + 2.0 / 3.0 + 3.0 / 4.0) / 3.0;
    check((ap - oracle).abs() < 1e-9 && (ap - 0.80556).abs() < 5e-6, || format!("aP = {ap}"))?;

    // each writer owns one axis, so same-writer documents are at distance 0
    let docs: Vec<GlobalDescriptor> = (0..5)
        .flat_map(|w| (0..4).map(move |d| descriptor(w, d, (0..5).map(|j| f64::from(u8::from(j == w)) * (d + 1) as f64).collect())))
        .collect();
    let (report, _) = evaluate(&docs).map_err(|e| e.to_string())?;
    check(report.map == 1.0, || format!("perfect ranking gives mAP {}", report.map))?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noisy: Vec<GlobalDescriptor> = (0..6)
        .flat_map(|w| (0..4).map(move |d| (w, d)))
        .map(|(w, d)| descriptor(w, d, (0..6).map(|j| f64::from(u8::from(j == w)) + rng.gen_range(-0.8..0.8)).collect()))
        .collect();
    let (_, rankings) = evaluate(&noisy).map_err(|e| e.to_string())?;
    let tops: Vec<f64> = (1..=3).map(|k| hard_top_k(&rankings, k).unwrap_or(f64::NAN)).collect();
    check(tops.windows(2).all(|w| w[0] >= w[1]), || format!("TOP-k {tops:?}"))?;
    Ok(format!("aP {ap:.9}, TOP-1..3 {tops:?}"))
}

fn whitening_identity() -> Verdict {
    let (t, d) = (5000, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mix = Array2::from_shape_fn((d, d), |(i, j)| f64::from(u8::from(i == j)) + 0.3 * rng.gen_range(-1.0..1.0));
    let z = Array2::from_shape_fn((t, d), |_| normal.sample(&mut rng));
    let shift = Array1::from_shape_fn(d, |j| j as f64);
    let x = z.dot(&mix) + &shift;
    let tf = fit_whitening(x.view(), WhiteningMode::Zca, 1e-8).map_err(|e| e.to_string())?;
    let y = tf.project(x.view()).map_err(|e| e.to_string())?;
    let (_, cov) = sample_covariance(y.view()).map_err(|e| e.to_string())?;
    let err = cov
        .indexed_iter()
        .map(|((i, j), v)| (v - f64::from(u8::from(i == j))).abs())
        .fold(0.0, f64::max);
    check(err < 1e-4, || format!("covariance off identity by {err:e}"))?;
    Ok(format!("max |C - I| = {err:.1e}"))
}

fn report_line<'a>(report: &'a str, key: &str) -> Option<&'a str> {
    report.lines().find_map(|l| l.strip_prefix(&format!("{key}=")))
}

fn metric(report: &str, key: &str) -> Result<f64, String> {
    report_line(report, key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("{key} missing from report"))
}

fn end_to_end(root: &Path) -> Verdict {
    let t = Instant::now();
    let layout = PageLayout::default();
    let err = |e: writerid::Error| e.to_string();
    let train = write_dataset(&root.join("background"), &corpus(20, 4, 100, &layout, 7).map_err(err)?).map_err(err)?;
    let test = write_dataset(&root.join("eval"), &corpus(20, 4, 0, &layout, 7).map_err(err)?).map_err(err)?;
    let text = format!(
        r#"
seed = 1
out_dir = "out"
[dataset]
train_manifest = "{train}"
test_manifest = "{test}"
[patches]
stride = 2
max_patches = 200
[cnn]
c1_filters = 8
c2_filters = 24
hidden_nodes = 32
[gmm]
components = 16
"#,
        train = train.display(),
        test = test.display(),
    );
    let config = PipelineConfig::from_toml_str(&text, &[], root).map_err(err)?;
    let schedule = TrainSchedule::default();
    check(
        (config.train.epochs, config.train.learning_rate, config.train.nesterov_momentum, config.train.momentum_epochs)
            == (20, 0.01, 0.9, 5)
            && schedule.epochs == 20,
        || format!("training schedule {:?}", config.train),
    )?;
    let pipeline = Pipeline::new(config).map_err(err)?;
    let report = pipeline.run_all().map_err(err)?;
    let top1 = report.hard_top_k.get(&1).copied().ok_or("no TOP-1")?;
    check(report.map >= 0.9, || format!("mAP {:.4}", report.map))?;
    check(top1 >= 0.95, || format!("TOP-1 {top1:.4}"))?;
    within(t.elapsed(), Duration::from_secs(15 * 60))?;
    Ok(format!("mAP {:.4}, TOP-1 {top1:.4} in {:.0?}", report.map, t.elapsed()))
}

fn cross_dataset(root: &Path) -> Verdict {
    let err = |e: writerid::Error| e.to_string();
    let model = root.join("out/model");
    check(model.join("gmm.sgmm").is_file(), || "no trained models to reuse".into())?;
    let other = write_dataset(&root.join("other"), &corpus(10, 3, 300, &PageLayout::default(), 9).map_err(err)?)
        .map_err(err)?;
    let text = format!(
        r#"
seed = 1
out_dir = "cross"
[dataset]
test_manifest = "{other}"
[patches]
stride = 2
max_patches = 200
[gmm]
components = 16
[reuse]
cnn = "{m}/cnn.scnn"
whitening = "{m}/whitening.swht"
gmm = "{m}/gmm.sgmm"
"#,
        other = other.display(),
        m = model.display(),
    );
    let pipeline = Pipeline::new(PipelineConfig::from_toml_str(&text, &[], root).map_err(err)?).map_err(err)?;
    pipeline.run_all().map_err(err)?;
    check(!root.join("cross/model").exists(), || "reuse run trained its own models".into())?;
    let report = std::fs::read_to_string(pipeline.report_path()).map_err(|e| e.to_string())?;
    check(report_line(&report, "documents") == Some("30"), || format!("report:\n{report}"))?;
    let values: Vec<f64> = ["map", "hard_top_1", "hard_top_2"]
        .iter()
        .map(|k| metric(&report, k))
        .collect::<Result<_, _>>()?;
    check(values.iter().all(|v| (0.0..=1.0).contains(v)), || format!("metrics {values:?}"))?;
    Ok(format!("30 unseen documents, mAP {:.4}, TOP-1 {:.4}, TOP-2 {:.4}", values[0], values[1], values[2]))
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let root = dir.path();
    let criteria: [(&str, Box<dyn Fn() -> Verdict>); 10] = [
        ("gradient correctness", Box::new(gradient_correctness)),
        ("shape chains", Box::new(shape_chains)),
        ("EM recovery", Box::new(em_recovery)),
        ("MAP adaptation algebra", Box::new(map_algebra)),
        ("KL normalization", Box::new(kl_formula)),
        ("encoder oracles", Box::new(encoder_oracles)),
        ("metric oracle", Box::new(metric_oracle)),
        ("whitening", Box::new(whitening_identity)),
        ("end-to-end synthetic benchmark", Box::new(|| end_to_end(root))),
        ("cross-dataset reuse protocol", Box::new(|| cross_dataset(root))),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let t = Instant::now();
        let verdict = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".into()));
        match verdict {
            Ok(detail) => println!("PASS {name}: {detail} [{:.1?}]", t.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{:.1?}]", t.elapsed());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
