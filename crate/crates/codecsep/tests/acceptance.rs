//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The end-to-end criteria drive the real command line (synth, train-codec,
//! train-sep, eval) on synthetic data in a temporary directory.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use codecsep::archive;
use codecsep::cli::run;
use codecsep::wav::{read_wav, write_wav};
use codecsep_core::autodiff::gradcheck::{grad_check, CHECKED_OPS};
use codecsep_core::macprof::{
    self, macs_attention, macs_conv1d, macs_conv1d_transposed, macs_linear, ProfileModel, MAC_CONVENTION,
};
use codecsep_core::metrics::{codec_si_sdr, si_sdr, IdentityCodec};
use codecsep_core::rng::Rng;
use codecsep_core::trainer::LrSchedule;
use codecsep_core::{Codec, Separator, Transmit, Waveform};

const CODEC_EPOCHS: &str = "12";
const SEP_EPOCHS: &str = "15";

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Check {
    Check { pass, detail }
}

fn cli(args: &[&str]) -> Result<String, String> {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(std::iter::once("codecsep").chain(args.iter().copied()), &mut out, &mut err);
    if code == 0 {
        Ok(String::from_utf8_lossy(&out).into_owned())
    } else {
        Err(format!("`codecsep {}` exited {code}: {}", args.join(" "), String::from_utf8_lossy(&err)))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn random_signal(rng: &mut Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.range(-1.0, 1.0) as f32).collect()
}

/// SI-SDR written out directly in f64, mean removal included.
fn brute_si_sdr(est: &[f32], reference: &[f32]) -> f64 {
    let n = est.len() as f64;
    let me = est.iter().map(|&v| v as f64).sum::<f64>() / n;
    let ms = reference.iter().map(|&v| v as f64).sum::<f64>() / n;
    let e: Vec<f64> = est.iter().map(|&v| v as f64 - me).collect();
    let s: Vec<f64> = reference.iter().map(|&v| v as f64 - ms).collect();
    let alpha = e.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / s.iter().map(|v| v * v).sum::<f64>();
    let target: f64 = s.iter().map(|v| (alpha * v).powi(2)).sum();
    let noise: f64 = e.iter().zip(&s).map(|(a, b)| (a - alpha * b).powi(2)).sum();
    10.0 * (target / noise).log10()
}

fn c1_metric_oracle() -> Check {
    let mut rng = Rng::new(101);
    let mut max_err = 0.0f64;
    let mut scale_exact = true;
    for _ in 0..100 {
        let n = 16 + rng.below(1000);
        let (e, s) = (random_signal(&mut rng, n), random_signal(&mut rng, n));
        let v = si_sdr(&e, &s).unwrap();
        max_err = max_err.max((v.value_db - brute_si_sdr(&e, &s)).abs());
        for k in -6..=6 {
            let c = 2f32.powi(k);
            let scaled: Vec<f32> = e.iter().map(|x| x * c).collect();
            scale_exact &= si_sdr(&scaled, &s).unwrap() == v;
        }
    }
    let worked = si_sdr(&[1.0, 0.0, 0.0, 0.0], &[1.0, -1.0, 1.0, -1.0]).unwrap().value_db;
    let ok = max_err < 1e-6 && scale_exact && (worked + 3.0103).abs() < 1e-3;
    check(ok, format!("max |si_sdr - brute force| {max_err:.2e} dB over 100 pairs; scaling exact: {scale_exact}; worked example {worked:.4} dB"))
}

fn c2_codec_identity() -> Check {
    let mut rng = Rng::new(202);
    let mut identical = 0;
    for _ in 0..100 {
        let n = 16 + rng.below(1000);
        let (e, s) = (random_signal(&mut rng, n), random_signal(&mut rng, n));
        let w = Waveform::new(s.clone(), 8000).unwrap();
        identical += (codec_si_sdr(&e, &w, &IdentityCodec).unwrap() == si_sdr(&e, &s).unwrap()) as usize;
    }
    check(identical == 100, format!("{identical}/100 pairs identical under the identity codec"))
}

fn shapes_for(op: &str) -> Vec<Vec<usize>> {
    match op {
        "matmul" => vec![vec![3, 4], vec![4, 5]],
        "conv1d" => vec![vec![2, 9], vec![3, 2, 3]],
        "conv1d_transposed" => vec![vec![3, 5], vec![3, 2, 4]],
        "attention" => vec![vec![5, 4]],
        "si_sdr_loss" => vec![vec![16]],
        "scale_by" | "sum" | "mean" | "center" | "log10" => vec![vec![3, 4]],
        _ => vec![vec![4, 8]],
    }
}

fn c3_gradients() -> Check {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for op in CHECKED_OPS {
        for seed in 0..5 {
            match grad_check(op, &shapes_for(op), 1e-3, seed) {
                Ok(r) if r.passed() => worst = worst.max(r.max_rel_error),
                Ok(r) => failures.push(format!("{op}/{seed} rel {:.1e}", r.max_rel_error)),
                Err(e) => failures.push(format!("{op}/{seed}: {e}")),
            }
        }
    }
    check(
        failures.is_empty(),
        format!("{} ops x 5 seeds, worst relative error {worst:.1e}{}", CHECKED_OPS.len(), fail_list(&failures)),
    )
}

fn fail_list(f: &[String]) -> String {
    if f.is_empty() {
        String::new()
    } else {
        format!("; failed: {}", f.join(", "))
    }
}

struct Pipeline {
    dir: tempfile::TempDir,
    train: PathBuf,
    valid: PathBuf,
    test: PathBuf,
    codec_path: PathBuf,
    codec: Codec,
    probe: Vec<Waveform>,
    codec_time: Duration,
}

fn setup() -> Result<Pipeline, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t = Instant::now();
    let synth = |name: &str, num: &str, seed: &str| -> Result<PathBuf, String> {
        let out = dir.path().join(name);
        cli(&["synth", "--out", p(&out), "--num", num, "--seed", seed])?;
        Ok(out.join("manifest.tsv"))
    };
    let train = synth("train", "200", "11")?;
    let valid = synth("valid", "10", "12")?;
    let test = synth("test", "50", "13")?;
    let codec_path = dir.path().join("codec.ntar");
    cli(&["train-codec", "--data", p(&train), "--out", p(&codec_path), "--epochs", CODEC_EPOCHS, "--seed", "0"])?;
    let codec = Codec::from_checkpoint(&archive::load(&codec_path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let examples = codecsep::dataset::load_manifest(&test).map_err(|e| e.to_string())?;
    let probe = examples.iter().flat_map(|e| std::iter::once(e.mixture.clone()).chain(e.sources.iter().cloned())).collect();
    Ok(Pipeline { codec_time: t.elapsed(), dir, train, valid, test, codec_path, codec, probe })
}

fn c4_rvq(pl: &Pipeline) -> Check {
    let codec = &pl.codec;
    let rvq = codec.rvq.as_ref().unwrap();
    let (q, dim) = (codec.config.num_codebooks, codec.config.embedding_dim);
    let (mut sum_ok, mut nn_ok, mut monotone, mut frames) = (true, true, 0usize, 0usize);
    let mixtures: Vec<&Waveform> = pl.probe.iter().step_by(3).collect();
    for w in &mixtures {
        let e = codec.encode(w).unwrap();
        let out = codec.quantize(&e).unwrap();
        let residuals = codec.stage_residuals(&e).unwrap();
        for f in 0..e.frames {
            frames += 1;
            let mut sum = vec![0.0f32; dim];
            for stage in 0..q {
                let code = out.codes.get(f, stage) as usize;
                let book = &rvq.codebooks[stage];
                for (i, s) in sum.iter_mut().enumerate() {
                    *s += book[code * dim + i];
                }
                let r = &residuals[stage][f * dim..(f + 1) * dim];
                let d = |c: usize| -> f32 { r.iter().zip(&book[c * dim..(c + 1) * dim]).map(|(a, b)| (a - b) * (a - b)).sum() };
                let best = (0..codec.config.codebook_size).fold(0, |b, c| if d(c) < d(b) { c } else { b });
                nn_ok &= best == code;
            }
            sum_ok &= sum.as_slice() == out.quantized.row(f);
        }
        let errors: Vec<f64> = (1..=q).map(|n| e.squared_distance(&codec.quantize_stages(&e, n).unwrap().quantized)).collect();
        monotone += errors.windows(2).all(|w| w[1] <= w[0]) as usize;
    }
    let n = mixtures.len();
    check(
        sum_ok && nn_ok && monotone == n,
        format!("{frames} frames: sum identity {sum_ok}, nearest neighbour {nn_ok}; error non-increasing over {q} stages on {monotone}/{n} probe mixtures"),
    )
}

fn c5_codec(pl: &Pipeline) -> Check {
    let (mut on_sum, mut off_wins) = (0.0, 0usize);
    for w in &pl.probe {
        let on = si_sdr(&pl.codec.transmit(w, true).unwrap().samples, &w.samples).unwrap().value_db;
        let off = si_sdr(&pl.codec.transmit(w, false).unwrap().samples, &w.samples).unwrap().value_db;
        on_sum += on;
        off_wins += (off > on) as usize;
    }
    let n = pl.probe.len();
    let mean_on = on_sum / n as f64;
    check(
        mean_on > 5.0 && off_wins * 10 >= n * 9,
        format!(
            "{CODEC_EPOCHS} epochs on 200 examples ({:.0} s incl. synth); held-out mean si_sdr with rvq {mean_on:.2} dB; rvq off better on {off_wins}/{n}",
            pl.codec_time.as_secs_f64()
        ),
    )
}

/// Mean over finite values of `column` and the count of strictly positive entries.
fn report_column(path: &Path, column: &str) -> (f64, usize, usize) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|c| c == column).unwrap();
    let values: Vec<f64> = lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect();
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let mean = finite.iter().sum::<f64>() / finite.len() as f64;
    (mean, values.iter().filter(|&&v| v > 0.0).count(), values.len())
}

fn train_sep(pl: &Pipeline, target: &str) -> Result<PathBuf, String> {
    let out = pl.dir.path().join(format!("sep-{target}.ntar"));
    cli(&[
        "train-sep", "--codec", p(&pl.codec_path), "--data", p(&pl.train), "--valid", p(&pl.valid), "--target", target,
        "--rvq", "off", "--preset", "toy", "--epochs", SEP_EPOCHS, "--seed", "0", "--out", p(&out),
    ])?;
    Ok(out)
}

fn eval(pl: &Pipeline, sep: &Path, comparison: &str) -> Result<PathBuf, String> {
    let report = sep.with_extension(format!("{comparison}.csv"));
    cli(&[
        "eval", "--codec", p(&pl.codec_path), "--sep", p(sep), "--data", p(&pl.test), "--scenario", "codecspace",
        "--comparison", comparison, "--rvq", "off", "--report", p(&report),
    ])?;
    Ok(report)
}

struct SepRuns {
    transmission: PathBuf,
    c6_time: Duration,
}

fn c6_separation(pl: &Pipeline) -> Result<(Check, SepRuns), String> {
    let t = Instant::now();
    let sep = train_sep(pl, "transmission")?;
    let report = eval(pl, &sep, "transmission")?;
    let (mean, positive, n) = report_column(&report, "cSI-SDRi");
    let c = check(
        mean > 3.0 && positive * 10 >= n * 8,
        format!("target transmission, rvq off, {SEP_EPOCHS} epochs: held-out cSI-SDRi {mean:.2} dB, positive on {positive}/{n}"),
    );
    Ok((c, SepRuns { transmission: sep, c6_time: t.elapsed() }))
}

fn c7_ablation(pl: &Pipeline, runs: &SepRuns) -> Result<Check, String> {
    let gt = train_sep(pl, "ground-truth")?;
    let (gt_gt, _, _) = report_column(&eval(pl, &gt, "ground-truth")?, "SI-SDRi");
    let (gt_c, _, _) = report_column(&eval(pl, &gt, "transmission")?, "cSI-SDRi");
    let (tx_gt, _, _) = report_column(&eval(pl, &runs.transmission, "ground-truth")?, "SI-SDRi");
    let (tx_c, _, _) = report_column(&runs.transmission.with_extension("transmission.csv"), "cSI-SDRi");
    Ok(check(
        gt_gt > 0.0 && tx_c - tx_gt >= 3.0,
        format!(
            "ground-truth run: SI-SDRi {gt_gt:.2}, cSI-SDRi {gt_c:.2}; transmission run: cSI-SDRi {tx_c:.2}, SI-SDRi {tx_gt:.2} (gap {:.2} dB)",
            tx_c - tx_gt
        ),
    ))
}

fn naive_linear(n: usize, i: usize, o: usize) -> u64 {
    let mut m = 0;
    for _ in 0..n {
        for _ in 0..o {
            for _ in 0..i {
                m += 1;
            }
        }
    }
    m
}

fn naive_conv(out_len: usize, ci: usize, co: usize, k: usize) -> u64 {
    (0..out_len).map(|_| naive_linear(1, ci * k, co)).sum()
}

fn naive_conv_t(in_len: usize, ci: usize, co: usize, k: usize) -> u64 {
    let mut m = 0;
    for _t in 0..in_len {
        for _c in 0..ci {
            for _o in 0..co {
                for _j in 0..k {
                    m += 1;
                }
            }
        }
    }
    m
}

fn naive_attention(l: usize, d: usize) -> u64 {
    4 * naive_linear(l, d, d) + naive_linear(l, d, l) + naive_linear(l, l, d)
}

fn c8_macs() -> Check {
    let mut rng = Rng::new(808);
    let mut exact = true;
    for _ in 0..5 {
        let r = |rng: &mut Rng| 1 + rng.below(9);
        let (a, b, c, k) = (r(&mut rng), r(&mut rng), r(&mut rng), r(&mut rng));
        let u = |x: usize| x as u64;
        exact &= macs_linear(u(a), u(b), u(c)) == naive_linear(a, b, c);
        exact &= macs_conv1d(u(a), u(b), u(c), u(k)) == naive_conv(a, b, c, k);
        exact &= macs_conv1d_transposed(u(a), u(b), u(c), u(k)) == naive_conv_t(a, b, c, k);
        exact &= macs_attention(u(a), u(b), 1) == naive_attention(a, b);
    }
    let profile = macprof::profile(ProfileModel::Pipeline, "paper", 2.0, 8000).unwrap();
    let ratio = profile.comparison.unwrap().total.ratio.unwrap();
    check(
        exact && ratio > 50.0,
        format!("formulas match naive counts: {exact}; paper preset, 2 s at 8 kHz: waveform-rate / frame-rate total {ratio:.1}x ({MAC_CONVENTION})"),
    )
}

fn c9_schedule(pl: &Pipeline) -> Result<Check, String> {
    let mut s = LrSchedule::new(1.5e-4, 2, 5);
    let halved: Vec<usize> = (1..=14).filter(|&e| s.observe(e, 1.0)).collect();
    let mut s = LrSchedule::new(1.0, 2, 5);
    let scores = [1.0, 2.0, 2.0, 3.0, 2.5, 2.9, 3.5, 3.0, 3.0, 3.6, 3.0, f64::NAN, 1.0];
    let trace: Vec<f64> = scores.iter().enumerate().map(|(i, &v)| { s.observe(i + 1, v); s.lr }).collect();
    let trace_ok = trace == [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.25, 0.25];

    let dir = pl.dir.path().join("determinism");
    cli(&["synth", "--out", p(&dir.join("train")), "--num", "8", "--seed", "21", "--duration", "0.512"])?;
    cli(&["synth", "--out", p(&dir.join("valid")), "--num", "2", "--seed", "22", "--duration", "0.512"])?;
    let run_once = |name: &str| -> Result<Vec<u8>, String> {
        let out = dir.join(format!("{name}.ntar"));
        cli(&[
            "train-sep", "--codec", p(&pl.codec_path), "--data", p(&dir.join("train/manifest.tsv")),
            "--valid", p(&dir.join("valid/manifest.tsv")), "--epochs", "3", "--seed", "5", "--out", p(&out),
        ])?;
        std::fs::read(out.with_extension("log.csv")).map_err(|e| e.to_string())
    };
    let (a, b) = (run_once("a")?, run_once("b")?);
    let rows = String::from_utf8_lossy(&a).lines().count() - 1;
    Ok(check(
        halved == [7, 9, 11, 13] && trace_ok && a == b && rows == 3,
        format!("frozen score halves at {halved:?}; scripted trace matches: {trace_ok}; two seeded runs give identical {rows}-epoch logs: {}", a == b),
    ))
}

fn c10_formats(pl: &Pipeline) -> Result<Check, String> {
    let dir = pl.dir.path().join("formats");
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let grid: Vec<f32> = (-32768..32768).map(|v| v as f32 / 32768.0).collect();
    let w = Waveform::new(grid, 8000).unwrap();
    write_wav(&dir.join("grid.wav"), &w).map_err(|e| e.to_string())?;
    let wav_exact = read_wav(&dir.join("grid.wav")).map_err(|e| e.to_string())? == w;
    let mix = &pl.probe[0];
    write_wav(&dir.join("mix.wav"), mix).map_err(|e| e.to_string())?;
    let back = read_wav(&dir.join("mix.wav")).map_err(|e| e.to_string())?;
    let wav_bound = back.samples.iter().zip(&mix.samples).all(|(a, b)| (a - b).abs() <= 0.5 / 32768.0);

    let ckpt = archive::load(&pl.codec_path).map_err(|e| e.to_string())?;
    let again = dir.join("codec.ntar");
    archive::save(&again, &ckpt).map_err(|e| e.to_string())?;
    let bytes_equal = std::fs::read(&again).ok() == std::fs::read(&pl.codec_path).ok();
    let codec = Codec::from_checkpoint(&archive::load(&again).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let codec_same = codec.transmit(mix, true).unwrap() == pl.codec.transmit(mix, true).unwrap();
    let sep_path = pl.dir.path().join("determinism/a.ntar");
    let sep = Separator::from_checkpoint(&archive::load(&sep_path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let sep_again = dir.join("sep.ntar");
    archive::save(&sep_again, &sep.to_checkpoint()).map_err(|e| e.to_string())?;
    let reloaded = Separator::from_checkpoint(&archive::load(&sep_again).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let sep_same = reloaded.separate_waveforms(&codec, mix, false).unwrap() == sep.separate_waveforms(&codec, mix, false).unwrap();
    Ok(check(
        wav_exact && wav_bound && bytes_equal && codec_same && sep_same,
        format!(
            "wav grid exact {wav_exact}, within half a step {wav_bound}; NTAR1 re-save byte-identical {bytes_equal}, codec output identical {codec_same}, separator output identical {sep_same}"
        ),
    ))
}

fn report(id: usize, name: &str, budget: Duration, elapsed: Duration, c: Result<Check, String>) -> bool {
    let (pass, detail) = match c {
        Ok(c) => (c.pass, c.detail),
        Err(e) => (false, e),
    };
    let in_budget = elapsed <= budget;
    let status = if pass && in_budget { "PASS" } else { "FAIL" };
    let over = if in_budget { String::new() } else { format!("; over the {} s budget", budget.as_secs()) };
    println!("{status} {id:>2} {name}: {detail} [{:.1} s{over}]", elapsed.as_secs_f64());
    pass && in_budget
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let secs = Duration::from_secs;
    let mut all = true;
    println!("acceptance run (toy scale, CPU)");

    let (c, t) = timed(c1_metric_oracle);
    all &= report(1, "metric oracle suite", secs(1), t, Ok(c));
    let (c, t) = timed(c2_codec_identity);
    all &= report(2, "cSI-SDR identity", secs(1), t, Ok(c));
    let (c, t) = timed(c3_gradients);
    all &= report(3, "gradient suite", secs(60), t, Ok(c));

    let pipeline = setup();
    match &pipeline {
        Ok(pl) => {
            let (c, t) = timed(|| c4_rvq(pl));
            all &= report(4, "RVQ property suite", secs(30), t, Ok(c));
            let (c, t) = timed(|| c5_codec(pl));
            all &= report(5, "toy codec fidelity", secs(30 * 60), t + pl.codec_time, Ok(c));
            match c6_separation(pl) {
                Ok((c, runs)) => {
                    all &= report(6, "end-to-end separation", secs(60 * 60), runs.c6_time, Ok(c));
                    let (c, t) = timed(|| c7_ablation(pl, &runs));
                    all &= report(7, "ablation direction", secs(60 * 60), t + runs.c6_time, c);
                }
                Err(e) => {
                    all &= report(6, "end-to-end separation", secs(60 * 60), Duration::ZERO, Err(e.clone()));
                    all &= report(7, "ablation direction", secs(60 * 60), Duration::ZERO, Err(e));
                }
            }
        }
        Err(e) => {
            for (id, name) in [(4, "RVQ property suite"), (5, "toy codec fidelity"), (6, "end-to-end separation"), (7, "ablation direction")] {
                all &= report(id, name, secs(1), Duration::ZERO, Err(format!("pipeline setup failed: {e}")));
            }
        }
    }
    let (c, t) = timed(c8_macs);
    all &= report(8, "MAC profiler", secs(5), t, Ok(c));
    match &pipeline {
        Ok(pl) => {
            let (c, t) = timed(|| c9_schedule(pl));
            all &= report(9, "schedule and determinism", secs(120), t, c);
            let (c, t) = timed(|| c10_formats(pl));
            all &= report(10, "format round trips", secs(5), t, c);
        }
        Err(e) => {
            all &= report(9, "schedule and determinism", secs(120), Duration::ZERO, Err(e.clone()));
            all &= report(10, "format round trips", secs(5), Duration::ZERO, Err(e.clone()));
        }
    }
    if !all {
        std::process::exit(1);
    }
}
