//! Acceptance criteria 1-9. Each test prints one `criterion N ... PASS|FAIL`
//! line; run with `--nocapture` to see them all.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mchsr::colorspace::{clamp_to_srgb, linear_to_srgb};
use mchsr::compositor::{compose_final, RenderLayerSet, ADDITIVE, COMPONENTS};
use mchsr::data::{
    avg_spp, decode_pfm, encode_pfm, generate_dataset, DatasetManifest, ManifestEntry, PfmWriteOptions, Split, SppPair,
    SynthConfig,
};
use mchsr::gradcheck::{run_suite, NETWORK_TOLERANCE, OP_TOLERANCE};
use mchsr::harness::{load_split, mean_relmse, read_log, train, upsampled_lrhs, with_threads, LogRecord, TrainConfig};
use mchsr::network::{read_checkpoint, write_checkpoint};
use mchsr::objective::{relmse, robust_loss, LossConfig, RelMseConfig};
use mchsr::pixel_ops::{deshuffle, shuffle};
use mchsr::{NetworkConfig, NetworkParams, Shape, Tensor};

fn report(n: u32, name: &str, pass: bool, detail: impl AsRef<str>) -> bool {
    println!("criterion {n} {name}: {} ({})", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    pass
}

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e < limit, format!("{:.2}s of {}s", e.as_secs_f64(), limit.as_secs()))
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn criterion_1_gradient_suite() {
    let t = Instant::now();
    let rep = with_threads(1, || run_suite(0)).unwrap().unwrap();
    let (fast, time) = within(t, Duration::from_secs(60));
    let worst = |network: bool| {
        rep.results
            .iter()
            .filter(|r| r.name.starts_with("network") == network)
            .map(|r| r.max_rel_err)
            .fold(0.0, f64::max)
    };
    let ops_ok = worst(false) < OP_TOLERANCE;
    let net_ok = worst(true) < NETWORK_TOLERANCE;
    let pass = rep.passed() && ops_ok && net_ok && fast;
    let detail = format!(
        "{} checks, worst op {:.2e} < {OP_TOLERANCE:.0e}, worst network {:.2e} < {NETWORK_TOLERANCE:.0e}, {time}",
        rep.results.len(),
        worst(false),
        worst(true)
    );
    if !pass {
        print!("{rep}");
    }
    assert!(report(1, "gradient suite", pass, detail));
}

#[test]
fn criterion_2_permutation_identities() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = 0;
    for alpha in [2usize, 4, 8] {
        for i in 0..200 {
            let (n, h, w) = (rng.gen_range(1..3), alpha * rng.gen_range(1..4), alpha * rng.gen_range(1..4));
            // half the draws use the deshuffle-then-shuffle direction, half the other
            let c = if i % 2 == 0 { rng.gen_range(1..4) } else { alpha * alpha * rng.gen_range(1..3) };
            let x = Tensor::<f32>::random_uniform(Shape::new(n, c, h, w), -1e3, 1e3, &mut rng).unwrap();
            let round = shuffle(&deshuffle(&x, alpha).unwrap(), alpha).unwrap();
            failures += usize::from(bits(&round) != bits(&x));
            if c % (alpha * alpha) == 0 {
                let back = deshuffle(&shuffle(&x, alpha).unwrap(), alpha).unwrap();
                failures += usize::from(bits(&back) != bits(&x));
            }
        }
    }
    let (fast, time) = within(t, Duration::from_secs(5));
    let pass = failures == 0 && fast;
    assert!(report(2, "permutation identities", pass, format!("600 tensors, {failures} mismatches, {time}")));
}

fn brute_force_final(layers: &BTreeMap<&str, Vec<f64>>, len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let at = |name: &str| layers[name][i];
            at("DiffCol") * (at("DiffDir") + at("DiffInd"))
                + at("GlossCol") * (at("GlossDir") + at("GlossInd"))
                + at("SubsurfaceCol") * (at("SubsurfaceDir") + at("SubsurfaceInd"))
                + at("TransCol") * (at("TransDir") + at("TransInd"))
                + at("Env")
                + at("Emit")
        })
        .collect()
}

#[test]
fn criterion_3_composition_oracle() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let names: Vec<&str> = COMPONENTS.iter().flatten().chain(ADDITIVE.iter()).copied().collect();
    let mut mismatches = 0;
    for _ in 0..100 {
        let shape = Shape::new(1, 3, rng.gen_range(1..12), rng.gen_range(1..12));
        let mut set = RenderLayerSet::<f64>::new();
        let mut raw = BTreeMap::new();
        for &name in &names {
            // long-tailed HDR values, some exactly zero
            let data: Vec<f64> = (0..shape.len())
                .map(|_| if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0f64..1.0).powi(4) * 50.0 })
                .collect();
            raw.insert(name, data.clone());
            set.insert(name, Tensor::from_vec(shape, data).unwrap());
        }
        let got = compose_final(&set).unwrap();
        let want = brute_force_final(&raw, shape.len());
        mismatches += got.data().iter().zip(&want).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    }
    let (fast, time) = within(t, Duration::from_secs(5));
    let pass = mismatches == 0 && fast;
    assert!(report(3, "composition oracle", pass, format!("100 layer sets, {mismatches} differing pixels, {time}")));
}

#[test]
fn criterion_4_metric_constants() {
    let one = |v: f64| Tensor::<f64>::full(Shape::new(1, 1, 1, 1), v).unwrap();
    let bcr = relmse(&one(2.0), &one(1.0), RelMseConfig::BCR).unwrap();
    let gharbi = relmse(&one(2.0), &one(1.0), RelMseConfig::GHARBI).unwrap();
    let (robust, _) = robust_loss(&one(0.1), &one(0.0), LossConfig { beta: 0.1 }).unwrap();
    let pass = (bcr - 0.49505).abs() <= 1e-6 && (gharbi - 0.99990).abs() <= 1e-6 && (robust - 0.5).abs() <= 1e-9;
    assert!(report(
        4,
        "metric constants",
        pass,
        format!("BCR {bcr:.8} vs 0.49505, Gharbi {gharbi:.8} vs 0.99990, robust {robust:.12} vs 0.5")
    ));
}

#[test]
fn criterion_5_color_conversion() {
    let eps = 1e-12;
    let knee = 0.0031308f64;
    let gap_knee = (linear_to_srgb(knee - eps) - linear_to_srgb(knee + eps)).abs();
    let gap_one = (linear_to_srgb(1.0f64 - eps) - linear_to_srgb(1.0 + eps)).abs();
    let n = 1_000_000;
    let mut prev = f64::NEG_INFINITY;
    let mut monotone = true;
    for i in 0..=n {
        let v = linear_to_srgb(-0.25 + 1.75 * i as f64 / n as f64);
        monotone &= v >= prev;
        prev = v;
    }
    let cases: [(f64, f64); 9] = [
        (-1.0, 0.0),
        (-0.0, 0.0),
        (0.0, 0.0),
        (f64::MIN_POSITIVE, f64::MIN_POSITIVE),
        (0.5, 0.5),
        (1.0, 1.0),
        (1.0 + f64::EPSILON, 1.0),
        (f64::INFINITY, 1.0),
        (f64::NEG_INFINITY, 0.0),
    ];
    let clamp_ok = cases.iter().all(|&(x, want)| clamp_to_srgb(x) == want) && clamp_to_srgb(f64::NAN).is_nan();
    let pass = gap_knee <= 1e-6 && gap_one <= 1e-6 && monotone && clamp_ok;
    assert!(report(
        5,
        "colour conversion",
        pass,
        format!(
            "gap at knee {gap_knee:.2e}, gap at 1 {gap_one:.2e}, monotone on {n} steps: {monotone}, clamp cases: {clamp_ok}"
        )
    ));
}

#[test]
fn criterion_6_spp_accounting() {
    let table: [(usize, u32, u32, f64); 9] = [
        (2, 4, 1, 2.0),
        (2, 8, 2, 4.0),
        (2, 16, 4, 8.0),
        (4, 16, 1, 2.0),
        (4, 32, 2, 4.0),
        (4, 64, 4, 8.0),
        (8, 64, 1, 2.0),
        (8, 128, 2, 4.0),
        (8, 250, 4, 7.90625),
    ];
    let wrong: Vec<String> = table
        .iter()
        .filter_map(|&(s, l, h, want)| {
            let got = avg_spp(&SppPair::new(s, l, h).unwrap());
            (got != want).then(|| format!("x{s} {l}-{h}: {got}"))
        })
        .collect();
    let pass = wrong.is_empty();
    let detail = if pass { "9 pairs exact, x8 250-4 = 7.90625".to_string() } else { wrong.join(", ") };
    assert!(report(6, "spp accounting", pass, detail));
}

fn train_losses(log: &Path) -> Vec<f64> {
    read_log(log)
        .unwrap()
        .into_iter()
        .filter_map(|r| match r {
            LogRecord::Train { loss, .. } => Some(loss),
            _ => None,
        })
        .collect()
}

#[test]
fn criterion_7_toy_training() {
    let t = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let synth = SynthConfig { noise: 0.2, ..SynthConfig::default() };
    let manifest = generate_dataset(&data, &synth).unwrap();
    assert_eq!(manifest.entries.len(), 16);

    let mut cfg = TrainConfig::new(data.join("manifest.json"), tmp.path().join("run"), 2, 1);
    cfg.net = NetworkConfig { scale: 2, feat_ch: 8, groups: 1, blocks: 2, ..NetworkConfig::default() };
    cfg.max_steps = Some(200);
    cfg.lr = 0.05;
    cfg.batch = 8;
    cfg.patch = Some(48);
    cfg.tile = 48;
    let summary = with_threads(1, || train(&cfg)).unwrap().unwrap();
    assert_eq!(summary.steps, 200);

    let losses = train_losses(&summary.log);
    let step0 = losses[0];
    let last: f64 = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
    let reduction = 1.0 - last / step0;

    let best = mchsr::network::load_checkpoint(summary.best_checkpoint.as_ref().unwrap()).unwrap();
    let pair = SppPair::new(2, 4, 1).unwrap();
    let val = load_split(&manifest, &data, Split::Val, &cfg.net, &[4], &[1], None).unwrap();
    let net_relmse = mean_relmse(&best, &val, pair, RelMseConfig::BCR).unwrap();
    let baseline = val
        .iter()
        .map(|img| relmse(&upsampled_lrhs(img, 2, 4).unwrap(), &img.gt, RelMseConfig::BCR).unwrap())
        .sum::<f64>()
        / val.len() as f64;

    let (fast, time) = within(t, Duration::from_secs(600));
    let descent = reduction >= 0.5;
    let beats = net_relmse < baseline;
    let pass = descent && beats && fast;
    assert!(report(
        7,
        "toy training descent",
        pass,
        format!(
            "robust loss {step0:.4} -> {last:.4} (mean of last 10 steps), reduction {:.1}% (need >= 50%); \
             val RelMSE {net_relmse:.4} vs upsampled LRHS {baseline:.4}; {time}",
            100.0 * reduction
        )
    ));
}

fn records_without_time(log: &Path) -> Vec<LogRecord> {
    read_log(log).unwrap().iter().map(LogRecord::without_wall_time).collect()
}

#[test]
fn criterion_8_determinism_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let synth = SynthConfig { width: 16, height: 16, train: 3, val: 1, test: 1, ..SynthConfig::default() };
    generate_dataset(&data, &synth).unwrap();
    let cfg = |out: &str, steps: u64, resume: bool| {
        let mut c = TrainConfig::new(data.join("manifest.json"), tmp.path().join(out), 2, 11);
        c.net = NetworkConfig { scale: 2, feat_ch: 4, groups: 1, blocks: 1, ..NetworkConfig::default() };
        c.max_steps = Some(steps);
        c.lr = 0.01;
        c.batch = 2;
        c.patch = Some(16);
        c.tile = 16;
        c.resume = resume;
        c
    };
    let run = |c: TrainConfig| with_threads(1, move || train(&c)).unwrap().unwrap();
    let k = 5;
    let a = run(cfg("a", 2 * k, false));
    let b = run(cfg("b", 2 * k, false));
    run(cfg("c", k, false));
    let c = run(cfg("c", 2 * k, true));

    let same_logs = records_without_time(&a.log) == records_without_time(&b.log);
    let read = |p: &Path| std::fs::read(p).unwrap();
    let same_ckpt = read(&a.last_checkpoint) == read(&b.last_checkpoint);
    let resumed_logs = records_without_time(&a.log) == records_without_time(&c.log);
    let resumed_ckpt = read(&a.last_checkpoint) == read(&c.last_checkpoint)
        && read(a.best_checkpoint.as_ref().unwrap()) == read(c.best_checkpoint.as_ref().unwrap());
    let pass = same_logs && same_ckpt && resumed_logs && resumed_ckpt;
    assert!(report(
        8,
        "determinism and resume",
        pass,
        format!(
            "same seed: logs equal {same_logs}, checkpoints equal {same_ckpt}; \
             {k}+{k} resumed vs {}: logs equal {resumed_logs}, checkpoints equal {resumed_ckpt}",
            2 * k
        )
    ));
}

fn scenes_by_split(m: &DatasetManifest) -> [BTreeSet<String>; 3] {
    [Split::Train, Split::Val, Split::Test].map(|s| m.split(s).map(|e| e.scene_id.clone()).collect())
}

fn disjoint(m: &DatasetManifest) -> bool {
    let [a, b, c] = scenes_by_split(m);
    a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c)
}

#[test]
fn criterion_9_io_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pfm_bad = 0;
    let mut above_100 = 0usize;
    for _ in 0..1000 {
        let c = if rng.gen_bool(0.5) { 3 } else { 1 };
        let shape = Shape::new(1, c, rng.gen_range(1..20), rng.gen_range(1..20));
        let data: Vec<f32> = (0..shape.len())
            .map(|_| {
                let v = (rng.gen_range(-2.0f64..4.0) * std::f64::consts::LN_10).exp() as f32;
                if rng.gen_bool(0.05) {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        above_100 += data.iter().filter(|&&v| v > 100.0).count();
        let img = Tensor::from_vec(shape, data).unwrap();
        let back = decode_pfm(&encode_pfm(&img, PfmWriteOptions::default()).unwrap()).unwrap();
        pfm_bad += usize::from(back.shape() != shape || bits(&back) != bits(&img));
    }

    let cfg = NetworkConfig { scale: 4, feat_ch: 6, groups: 2, blocks: 2, ..NetworkConfig::default() };
    let params = NetworkParams::<f32>::init(&cfg, 9).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &params).unwrap();
    let loaded = read_checkpoint(bytes.as_slice()).unwrap();
    let mut again = Vec::new();
    write_checkpoint(&mut again, &loaded).unwrap();
    let ckpt_ok = loaded == params && again == bytes;

    let mut manifest = DatasetManifest::default();
    for i in 0..30 {
        let split = [Split::Train, Split::Val, Split::Test][i % 3];
        for view in 0..rng.gen_range(1..4) {
            let e = ManifestEntry::with_default_paths(
                &format!("scene{i}"),
                &view.to_string(),
                split,
                (64, 48),
                &[1, 4, 4000],
            );
            manifest.add_entry(e).unwrap();
        }
    }
    manifest.move_scene("scene4", Split::Train).unwrap();
    manifest.remove_scene("scene5");
    let reread = DatasetManifest::from_json(&manifest.to_json().unwrap()).unwrap();
    let manifest_ok = reread == manifest
        && reread.validate().is_ok()
        && disjoint(&reread)
        && scenes_by_split(&reread) == scenes_by_split(&manifest);

    let pass = pfm_bad == 0 && above_100 > 0 && ckpt_ok && manifest_ok;
    assert!(report(
        9,
        "I/O round trips",
        pass,
        format!(
            "PFM 1000 images ({above_100} values > 100), {pfm_bad} mismatches; checkpoint exact {ckpt_ok}; \
             manifest round trip and disjoint splits {manifest_ok}"
        )
    ));
}
