use std::path::{Path, PathBuf};
use std::process::Command;

use codecsep::archive;
use codecsep::cli::run;
use codecsep::log::read_epoch_logs;
use codecsep_core::{Codec, CodecConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_codecsep"))
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("codecsep").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, num: usize, seed: u64, duration: &str) -> PathBuf {
    let out = dir.join(name);
    let (code, _, err) = cli(&["synth", "--out", s(&out), "--num", &num.to_string(), "--seed", &seed.to_string(), "--duration", duration]);
    assert_eq!(code, 0, "{err}");
    out.join("manifest.tsv")
}

fn untrained_codec(dir: &Path) -> PathBuf {
    let path = dir.join("codec.ntar");
    archive::save(&path, &Codec::new(CodecConfig::toy(), 0).unwrap().to_checkpoint()).unwrap();
    path
}

#[test]
fn help_matches_golden_files() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for cmd in ["", "synth", "train-codec", "train-sep", "eval", "profile", "info"] {
        let mut c = bin();
        if !cmd.is_empty() {
            c.arg(cmd);
        }
        let output = c.arg("--help").output().unwrap();
        assert!(output.status.success());
        let text = String::from_utf8(output.stdout).unwrap();
        let file = golden.join(format!("help{}{cmd}.txt", if cmd.is_empty() { "" } else { "_" }));
        if update {
            std::fs::write(&file, &text).unwrap();
        }
        assert_eq!(text, std::fs::read_to_string(&file).unwrap(), "help for `{cmd}` drifted from {}", file.display());
    }
}

#[test]
fn every_help_flag_shows_a_default_or_is_required() {
    for cmd in ["synth", "profile", "eval"] {
        let out = bin().args([cmd, "--help"]).output().unwrap();
        let text = String::from_utf8(out.stdout).unwrap();
        for line in text.lines().filter(|l| l.trim_start().starts_with("--") && !l.contains("--help")) {
            let opt = line.split_whitespace().next().unwrap();
            let usage = text.lines().find(|l| l.starts_with("Usage:")).unwrap();
            let documented = text.split(opt).nth(1).unwrap().split("\n  -").next().unwrap();
            assert!(
                documented.contains("[default:") || usage.contains(opt) || ["--report", "--csv"].contains(&opt),
                "{cmd} {opt} shows no default"
            );
        }
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(bin().args(["synth", "--bogus"]).output().unwrap().status.code(), Some(1));
    assert_eq!(bin().args(["eval", "--scenario", "nowhere"]).output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("transcode").output().unwrap().status.code(), Some(1));
    let missing = dir.path().join("none.tsv");
    let codec = untrained_codec(dir.path());
    let out = bin().args(["eval", "--codec", s(&codec), "--sep", "identity", "--data", s(&missing)]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("not found"));
    let (code, _, _) = cli(&["synth", "--out", s(&dir.path().join("x")), "--snr-low", "6", "--snr-high", "5"]);
    assert_eq!(code, 1);
    let (code, _, _) = cli(&["info", "--ckpt", s(&missing)]);
    assert_eq!(code, 2);
}

#[test]
fn synth_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a", 3, 7, "0.5");
    let b = synth(dir.path(), "b", 3, 7, "0.5");
    let c = synth(dir.path(), "c", 3, 8, "0.5");
    let files = |m: &Path| {
        let mut names: Vec<_> = std::fs::read_dir(m.parent().unwrap()).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        names.iter().map(|p| (p.file_name().unwrap().to_owned(), std::fs::read(p).unwrap())).collect::<Vec<_>>()
    };
    assert_eq!(files(&a).len(), 10);
    assert_eq!(files(&a), files(&b));
    assert_ne!(files(&a), files(&c));
    let manifest = std::fs::read_to_string(&a).unwrap();
    assert!(manifest.starts_with("id\tmix\ts1\ts2\tsnr_db\nex00000\tex00000_mix.wav\tex00000_s1.wav\tex00000_s2.wav\t"));
}

#[test]
fn resolved_config_comes_first() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = cli(&["profile", "--model", "sep"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("# codecsep profile: resolved config\nmodel = sep\npreset = toy\nduration = 2\nsr = 8000\n\n"), "{out}");
    let (_, out, _) = cli(&["synth", "--out", s(&dir.path().join("d")), "--num", "1"]);
    assert!(out.starts_with("# codecsep synth: resolved config\n"));
    assert!(out.contains("seed = 0\n"));
}

#[test]
fn identity_separator_improves_nothing_in_any_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d", 3, 1, "0.512");
    let codec = untrained_codec(dir.path());
    for (scenario, comparison) in [("oracle", "ground-truth"), ("oracle", "transmission"), ("cloud", "transmission"), ("codecspace", "ground-truth")] {
        let report = dir.path().join(format!("{scenario}-{comparison}.csv"));
        let (code, out, err) = cli(&[
            "eval", "--codec", s(&codec), "--sep", "identity", "--data", s(&data), "--scenario", scenario,
            "--comparison", comparison, "--report", s(&report),
        ]);
        assert_eq!(code, 0, "{err}");
        let csv = std::fs::read_to_string(&report).unwrap();
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        let prefix = if comparison == "transmission" { "c" } else { "" };
        assert_eq!(header, format!("id,permutation,{prefix}SI-SDR,{prefix}SI-SDRi,{prefix}SDR,{prefix}SDRi"));
        if scenario != "cloud" {
            for line in lines {
                let f: Vec<&str> = line.split(',').collect();
                assert_eq!(f[3].parse::<f64>().unwrap(), 0.0, "{scenario} {line}");
                assert_eq!(f[5].parse::<f64>().unwrap(), 0.0, "{scenario} {line}");
            }
            let row = out.lines().find(|l| l.starts_with(&format!("{prefix}SI-SDRi "))).unwrap();
            assert_eq!(row.split_whitespace().nth(1), Some("0.000"), "{out}");
        }
    }
}

#[test]
fn train_sep_applies_config_then_flags_and_logs_every_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(dir.path(), "train", 4, 1, "0.256");
    let valid = synth(dir.path(), "valid", 1, 2, "0.256");
    let codec = untrained_codec(dir.path());
    let cfg = dir.path().join("sep.cfg");
    std::fs::write(&cfg, "# short run\nepochs = 1\nsegment_s = 0.256\ntarget = ground-truth\n").unwrap();
    let run_once = |name: &str| {
        let out = dir.path().join(format!("{name}.ntar"));
        let (code, stdout, err) = cli(&[
            "train-sep", "--codec", s(&codec), "--data", s(&train), "--valid", s(&valid), "--out", s(&out),
            "--config", s(&cfg), "--epochs", "2", "--seed", "3",
        ]);
        assert_eq!(code, 0, "{err}");
        assert!(stdout.contains("target = ground-truth\n") && stdout.contains("epochs = 2\n"), "{stdout}");
        (out.clone(), std::fs::read(out.with_extension("log.csv")).unwrap())
    };
    let (ckpt, log_a) = run_once("a");
    let (_, log_b) = run_once("b");
    assert_eq!(log_a, log_b);
    let logs = read_epoch_logs(&ckpt.with_extension("log.csv")).unwrap();
    assert_eq!(logs.iter().map(|l| l.epoch).collect::<Vec<_>>(), vec![1, 2]);
    let (code, out, _) = cli(&["info", "--ckpt", s(&ckpt)]);
    assert_eq!(code, 0);
    assert!(out.contains("train.target = ground-truth") && out.contains("adam.m.input.weight"), "{out}");

    std::fs::write(&cfg, "epochs = 1\nlearning_rate = 3\n").unwrap();
    let (code, _, err) = cli(&[
        "train-sep", "--codec", s(&codec), "--data", s(&train), "--valid", s(&valid), "--out", s(&dir.path().join("c.ntar")),
        "--config", s(&cfg),
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("sep.cfg:2:"), "{err}");
}

#[test]
fn profile_writes_csv_for_both_rates() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("macs.csv");
    let (code, out, _) = cli(&["profile", "--model", "pipeline", "--preset", "paper", "--csv", s(&csv)]);
    assert_eq!(code, 0);
    assert!(out.contains("MAC = 1 multiply + 1 accumulate"));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("report,layer,kind,input,output,macs\nframe_rate,input,linear,100x1024,100x256,"));
    assert!(text.contains("\nwaveform_rate,blocks.0.attn,attention,16000x256,16000x256,"));
}
