//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per
//! criterion and exits non-zero if any criterion fails. Arguments select
//! criteria by name substring.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sirep::cost::per_second_cost;
use sirep::data::{
    augment_clip, resample_indices, sample_fewshot, square_padding, synthetic_exercise_manifest, AugmentConfig,
    ManifestPolicy, Split, SplitManifest, Taxonomy, CROP_LEN,
};
use sirep::netspec::{
    build_reference_backbone, inflate, random_network, shape_trace, InflationMode, InflationSpec, InflationTarget,
    LayerRole, NetworkSpec, REFERENCE_TABLE,
};
use sirep::pose::{build_adjacency, build_layout, map_to_openpose, BlazePose33, PoseSequence, POSE_FPS};
use sirep::repcount::{decode_labels, densify, random_track, Scheme};
use sirep::tensor::{DType, Frames, HeadKind};
use sirep::train::{
    gradient_check, synthetic_dataset, tiny_counting_network, train_counting_head, BarVideoConfig, LossSpec,
    SyntheticSplit, TrainConfig,
};
use sirep::{LayerStats, Model, Result, StreamSession};

type Check = fn() -> Result<Outcome>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_clip(net: &NetworkSpec, len: usize, rng: &mut impl Rng) -> Frames {
    let (c, h, w) = (net.input.channels, net.input.height, net.input.width);
    let mut clip = Frames::new(c, h, w);
    for _ in 0..len {
        clip.push((0..c * h * w).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    }
    clip
}

fn relative(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn max_relative(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len(), "step counts differ");
    a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| relative(*p, *q))).fold(0.0, f64::max)
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Streaming equals offline inference on random networks and clips.
fn ac1() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst32, mut worst64) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let net = random_network(&mut rng);
        let clip = random_clip(&net, rng.gen_range(1..=128), &mut rng);
        for dtype in [DType::F32, DType::F64] {
            let model = Model::init(net.clone(), dtype, i)?;
            let offline = model.run_offline(&clip, None)?;
            let mut session = StreamSession::open(&model)?;
            let streamed: Vec<_> = session.push_clip(&clip)?.into_iter().map(|o| o.probabilities).collect();
            let dev = max_relative(&streamed, &offline);
            match dtype {
                DType::F32 => worst32 = worst32.max(dev),
                DType::F64 => worst64 = worst64.max(dev),
            }
        }
    }
    let elapsed = start.elapsed();
    Ok(outcome(
        worst32 <= 1e-5 && worst64 <= 1e-10 && elapsed < Duration::from_secs(120),
        format!("100 pairs; max rel dev f32 {worst32:.2e}, f64 {worst64:.2e}; {:.1}s", secs(elapsed)),
    ))
}

/// The SI-EN recipe decimates by exactly four.
fn ac2() -> Result<Outcome> {
    let net = inflate(&build_reference_backbone(REFERENCE_TABLE)?, &InflationSpec::si_en())?;
    let mut inflated = Vec::new();
    for l in net.layers() {
        if let Some(g) = l.conv().filter(|g| g.kt > 1) {
            inflated.push((l.block.unwrap_or(usize::MAX), l.role, g.kt, g.temporal_stride));
        }
    }
    let expected: Vec<_> = [3, 7, 11, 14, 17, 20, 23, 25]
        .into_iter()
        .map(|b| (b, LayerRole::Expand, 3, if b == 7 || b == 14 { 2 } else { 1 }))
        .collect();
    let trace = shape_trace(&net, 63)?;
    let last = trace.iter().rfind(|s| s.role == LayerRole::HeadConv).expect("head conv");
    let decimation = net.temporal_decimation();
    let out_steps = net.output_len(63);
    let pass = inflated == expected
        && decimation == 4
        && out_steps == 16
        && last.output.1 == 16
        && last.rate_out == net.input.fps / 4.0
        && net.input.fps == 16.0;
    Ok(outcome(
        pass,
        format!(
            "decimation {decimation}, output rate {} fps from {} fps, T=63 -> {out_steps} steps",
            last.rate_out, net.input.fps
        ),
    ))
}

/// Identity-tap inflation at stride 1 leaves outputs unchanged.
fn ac3() -> Result<Outcome> {
    let mut base = build_reference_backbone(REFERENCE_TABLE)?;
    // a smaller frame keeps 20 full-network passes quick; every layer still runs
    base.input.height = 64;
    base.input.width = 64;
    let spec = InflationSpec {
        mode: InflationMode::ByBlockIndex {
            targets: [3, 7, 11, 14, 17, 20, 23, 25]
                .into_iter()
                .map(|b| InflationTarget { block_index: b, temporal_kernel: 3, temporal_stride: 1 })
                .collect(),
        },
        ..InflationSpec::empty()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Model::init(base.clone(), DType::F64, 3)?;
    let inflated = model.inflate(&spec)?;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let clip = random_clip(&base, rng.gen_range(1..=4), &mut rng);
        worst = worst.max(max_relative(&inflated.run_offline(&clip, None)?, &model.run_offline(&clip, None)?));
    }
    Ok(outcome(worst <= 1e-6, format!("20 inputs; max rel dev {worst:.2e}")))
}

/// Analytic MAC counts equal instrumented counts.
fn ac4a() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = Vec::new();
    let mut total = 0u64;
    for i in 0..20 {
        let net = random_network(&mut rng);
        // With the input rate equal to the total decimation and a whole
        // number of seconds, every layer runs an integral number of times.
        let decimation = net.temporal_decimation();
        let seconds = rng.gen_range(1..=3);
        let clip = random_clip(&net, decimation * seconds, &mut rng);
        let model = Model::init(net.clone(), DType::F64, i)?;
        let mut stats = LayerStats::new(model.layers().len());
        model.run_offline(&clip, Some(&mut stats))?;
        let report = per_second_cost(&net, decimation as f64)?;
        for l in &report.layers {
            let analytic = l.macs_per_second * seconds as f64;
            if analytic != stats.macs[l.id] as f64 {
                mismatches.push(format!("net {i} {}: {analytic} vs {}", l.name, stats.macs[l.id]));
            }
            total += stats.macs[l.id];
        }
    }
    Ok(outcome(mismatches.is_empty(), format!("20 networks, {total} MACs counted, mismatches {mismatches:?}")))
}

/// SI-EN reference cost at 16 fps against the published 4.0 GMACs/s.
fn ac4b() -> Result<Outcome> {
    let net = inflate(&build_reference_backbone(REFERENCE_TABLE)?, &InflationSpec::si_en())?;
    let report = per_second_cost(&net, 16.0)?;
    let g = report.gmacs_per_second;
    Ok(outcome(
        (3.0..=5.0).contains(&g),
        format!("{g:.2} GMACs/s vs band [3.0, 5.0] (reference figure {:.1})", report.reference.si_en_gmacs_per_second),
    ))
}

/// Analytic gradients of every trainable layer match finite differences.
fn ac5() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut roles = BTreeSet::new();
    let mut unchecked = Vec::new();
    for head in [HeadKind::TemporalClassifier, HeadKind::ClipSoftmax] {
        let mut net = tiny_counting_network(3)?;
        if let Some(sirep::netspec::BlockSpec::Head { classifier, .. }) = net.blocks.last_mut() {
            *classifier = head;
        }
        let mut model = Model::init(net.clone(), DType::F64, 5)?;
        let clip = random_clip(&net, 24, &mut rng);
        let steps = net.output_len(clip.len());
        let labels: Vec<usize> = (0..steps).map(|_| rng.gen_range(0..3)).collect();
        let n = model.layers().len();
        for id in 0..n {
            model.set_trainable((0..n).map(|i| i == id).collect())?;
            let r = gradient_check(&model, &clip, &labels, &LossSpec::uniform(3), 1e-5, 24, id as u64)?;
            if r.checked == 0 {
                unchecked.push(format!("{head:?}/{}", model.layers()[id].name()));
            }
            checked += r.checked;
            worst = worst.max(r.max_relative_error);
            let l = &model.layers()[id];
            let temporal = l.conv().is_some_and(|g| g.kt > 1);
            roles.insert(format!("{:?}{}", l.role, if temporal { "(kt>1)" } else { "" }));
        }
    }
    let elapsed = start.elapsed();
    Ok(outcome(
        worst <= 1e-4 && unchecked.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{checked} params over {} layer types, both heads; max rel err {worst:.2e}; {:.1}s{}",
            roles.len(),
            secs(elapsed),
            if unchecked.is_empty() { String::new() } else { format!("; no sample survived in {unchecked:?}") }
        ),
    ))
}

/// decode(densify(track)) recovers the end-event count.
fn ac6() -> Result<Outcome> {
    let mut failures = 0;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let steps = rng.gen_range(1..=200);
        let track = random_track(seed, 4.0, steps, rng.gen_range(1..=12));
        let truth = track.end_count()?;
        for n in 1..=3 {
            let scheme = Scheme::from_number(n)?;
            if decode_labels(&densify(&track, scheme, steps)?)?.predicted_count != truth {
                failures += 1;
            }
        }
    }
    Ok(outcome(failures == 0, format!("1000 tracks x 3 schemes, {failures} mismatches")))
}

/// Train the tiny inflated network per scheme and compare held-out MAPE.
fn ac7() -> Result<Outcome> {
    let start = Instant::now();
    let seed = 0;
    let net = tiny_counting_network(2)?;
    let cfg = BarVideoConfig {
        size: net.input.height,
        fps: net.input.fps,
        decimation: net.temporal_decimation(),
        ..BarVideoConfig::default()
    };
    let (train, held_out) = synthetic_dataset(&cfg, &SyntheticSplit::default(), seed)?;
    let mut mape = [0.0; 4];
    let mut params = 0;
    for n in [3u8, 2, 1] {
        let scheme = Scheme::from_number(n)?;
        let mut model = Model::init(tiny_counting_network(scheme.num_classes())?, DType::F64, seed)?;
        params = params.max(model.param_count());
        let k = model.layers().len();
        let report =
            train_counting_head(&mut model, &train, &held_out, &TrainConfig::new(scheme, k, 500, seed), |_| {})?;
        mape[n as usize] = report.eval.mape;
    }
    let elapsed = start.elapsed();
    Ok(outcome(
        params <= 50_000
            && mape[3] < 15.0
            && mape[3] <= mape[2]
            && mape[2] <= mape[1]
            && elapsed < Duration::from_secs(600),
        format!(
            "{params} params; held-out MAPE scheme 3 {:.1}%, 2 {:.1}%, 1 {:.1}%; {:.0}s",
            mape[3],
            mape[2],
            mape[1],
            secs(elapsed)
        ),
    ))
}

/// Resampling, padding, cropping, few-shot sampling and manifest totals.
fn ac8() -> Result<Outcome> {
    let mut problems = Vec::new();

    // 30 -> 16 fps keeps source frame floor(j * 30 / 16)
    for len in [1, 29, 30, 31, 150] {
        let idx = resample_indices(len, 30.0, 16.0);
        let want: Vec<usize> = (0..).map(|j| j * 30 / 16).take_while(|i| *i < len).collect();
        if idx != want {
            problems.push(format!("index map for {len} frames"));
        }
    }
    // symmetric padding to the longer side
    for (h, w) in [(720, 1280), (1280, 720), (5, 2), (3, 3), (1, 8)] {
        let (top, bottom, left, right) = square_padding(h, w);
        let side = h.max(w);
        let ok = top + h + bottom == side
            && left + w + right == side
            && top <= bottom
            && bottom - top <= 1
            && left <= right
            && right - left <= 1;
        if !ok {
            problems.push(format!("padding of {h}x{w}"));
        }
    }
    // 63-frame crops are contiguous windows of the source
    let mut clip = Frames::new(1, 1, 1);
    for t in 0..100 {
        clip.push(vec![t as f64 / 100.0]).unwrap();
    }
    let flat = AugmentConfig { multiplicative: (1.0, 1.0), additive: (0.0, 0.0), ..AugmentConfig::default() };
    for seed in 0..20 {
        let (crop, _) = augment_clip(&clip, &flat, seed)?;
        let first = (crop.frames[0][0] * 100.0).round() as usize;
        let contiguous = crop.frames.iter().enumerate().all(|(i, f)| f[0] == clip.frames[first + i][0]);
        if crop.len() != CROP_LEN || !contiguous || augment_clip(&clip, &flat, seed)?.0 != crop {
            problems.push(format!("crop with seed {seed}"));
        }
    }
    // manifest totals and few-shot sampling
    let manifest = SplitManifest::validate(
        synthetic_exercise_manifest(8),
        Taxonomy::reference(),
        &ManifestPolicy::exercise_videos(),
    )?;
    let s = manifest.summary();
    let sizes: Vec<usize> = Split::ALL.iter().map(|sp| s.splits[sp].videos).collect();
    if sizes != [4000, 711, 800] || s.total_videos != 5511 {
        problems.push(format!("split sizes {sizes:?} / {}", s.total_videos));
    }
    for n in [5, 10, 20, 50, 100] {
        let a = sample_fewshot(&manifest, n, 11)?;
        let again = sample_fewshot(&manifest, n, 11)?;
        let classes = manifest.taxonomy.num_classes();
        let train: Vec<_> = a.split(Split::Train).collect();
        let counts_ok = a.class_counts(Some(Split::Train)).values().all(|c| *c == n) && train.len() == n * classes;
        let train_workers: BTreeSet<_> = train.iter().map(|e| e.worker_id.as_str()).collect();
        let disjoint =
            a.entries.iter().filter(|e| e.split != Split::Train).all(|e| !train_workers.contains(e.worker_id.as_str()));
        let held_out_kept = a.split(Split::Test).count() == 800 && a.split(Split::Validation).count() == 711;
        if a != again || !counts_ok || !disjoint || !held_out_kept {
            problems.push(format!("few-shot n={n}"));
        }
    }
    Ok(outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!("index maps, padding, {CROP_LEN}-frame crops, few-shot 5..100, totals {sizes:?}/5511")
        } else {
            format!("failed: {problems:?}")
        },
    ))
}

/// Neck midpoint, partition supports and joint counts.
fn ac9() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let frames: Vec<Vec<[f64; 3]>> = (0..50)
        .map(|_| (0..33).map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect())
        .collect();
    let seq = PoseSequence::<BlazePose33>::new(frames.clone(), POSE_FPS)?;
    let mapped = map_to_openpose(&seq);
    // neck = midpoint of the two shoulders (source joints 11 and 12), lower confidence
    let neck_ok = mapped
        .frames()
        .iter()
        .zip(&frames)
        .all(|(o, s)| o[1] == [(s[11][0] + s[12][0]) / 2.0, (s[11][1] + s[12][1]) / 2.0, s[11][2].min(s[12][2])]);
    let counts_ok = frames[0].len() == 33 && mapped.frames().iter().all(|f| f.len() == 18);

    let mut partition_ok = true;
    for name in ["blazepose33", "openpose18"] {
        let layout = build_layout(name)?;
        let n = layout.num_nodes();
        let adj = build_adjacency(&layout, 1)?;
        let mut a_plus_i = vec![false; n * n];
        for i in 0..n {
            a_plus_i[i * n + i] = true;
        }
        for &(x, y) in &layout.edges {
            a_plus_i[x * n + y] = true;
            a_plus_i[y * n + x] = true;
        }
        let supports: Vec<Vec<bool>> = (0..adj.partitions.len()).map(|p| adj.support(p)).collect();
        partition_ok &= (0..n * n).all(|k| supports.iter().filter(|s| s[k]).count() == usize::from(a_plus_i[k]));
    }
    Ok(outcome(
        neck_ok && counts_ok && partition_ok,
        format!("neck exact {neck_ok}; supports partition A+I {partition_ok}; joints 33 -> 18 {counts_ok}"),
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 10] = [
        ("AC1 streaming/offline equivalence", ac1),
        ("AC2 SI-EN rate reduction", ac2),
        ("AC3 identity-inflation fidelity", ac3),
        ("AC4a analytic MACs = instrumented MACs", ac4a),
        ("AC4b SI-EN cost in [3.0, 5.0] GMACs/s", ac4b),
        ("AC5 gradient checks", ac5),
        ("AC6 counting round-trip", ac6),
        ("AC7 end-to-end synthetic counting", ac7),
        ("AC8 data pipeline", ac8),
        ("AC9 pose toolkit", ac9),
    ];
    // optional name filters, e.g. `cargo test --test acceptance -- AC4`
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
