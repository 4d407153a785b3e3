use std::path::Path;
use std::process::{Command, Output};

use sts_core::vocoder::write_wav;

fn sts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sts")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tone(path: &Path, seconds: f32) {
    let n = (16_000.0 * seconds) as usize;
    let x: Vec<f32> = (0..n).map(|i| 0.3 * (i as f32 * 0.09).sin()).collect();
    write_wav(path, &x, 16_000).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_documents_every_flag() {
    let top = sts(&["--help"]);
    assert_eq!(top.status.code(), Some(0));
    for sub in ["analyze", "convert", "init", "quantize", "bench", "selftest", "--config"] {
        assert!(stdout(&top).contains(sub), "{sub} missing from top-level help");
    }
    let cases: [(&str, &[&str]); 5] = [
        ("analyze", &["--arch", "--hop-ms"]),
        (
            "convert",
            &["--in", "--out", "--arch", "--weights", "--seed", "--vocoder", "--max-frames", "--chunk-ms"],
        ),
        ("init", &["--arch", "--vocoder", "--seed", "--out"]),
        ("quantize", &["--weights", "--out", "--bits", "--scope"]),
        (
            "bench",
            &["--part", "--arch", "--weights", "--seed", "--vocoder", "--iters", "--warmup", "--chunk-ms", "--report", "--svg"],
        ),
    ];
    for (sub, flags) in cases {
        let o = sts(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0));
        for f in flags {
            assert!(stdout(&o).contains(f), "{sub} help lacks {f}");
        }
    }
}

#[test]
fn analyze_named_layouts() {
    let o = sts(&["analyze", "--arch", "lsa_ls2"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for line in ["lookahead_frames 99", "subsample 8", "cb_count 17", "delay_ms 990"] {
        assert!(out.lines().any(|l| l == line), "missing {line:?} in\n{out}");
    }
    let o = sts(&["analyze", "--arch", "causal"]);
    assert!(stdout(&o).lines().any(|l| l == "delay_ms 0"));
    let o = sts(&["analyze", "--arch", "CB_R2 SL_R1", "--hop-ms", "20"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().any(|l| l == "delay_ms 60"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(sts(&[]).status.code(), Some(1));
    assert_eq!(sts(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(sts(&["analyze"]).status.code(), Some(1));
    assert_eq!(sts(&["analyze", "--arch", "CB_X"]).status.code(), Some(1));
    assert_eq!(sts(&["analyze", "--arch", "ls1", "--hop-ms", "-1"]).status.code(), Some(1));
    assert_eq!(sts(&["bench", "--part", "postnet"]).status.code(), Some(1));
    let o = sts(&["convert", "--in", "a.wav", "--out", "b.wav", "--arch", "ls1", "--vocoder", "wavenet"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("wavenet"));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.wav");
    let o = sts(&["convert", "--in", s(&dir.path().join("missing.wav")), "--out", s(&out), "--arch", "ls1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.wav"));

    let wrong_rate = dir.path().join("r.wav");
    write_wav(&wrong_rate, &[0.0; 800], 8_000).unwrap();
    let o = sts(&["convert", "--in", s(&wrong_rate), "--out", s(&out), "--arch", "ls1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("8000 Hz"));
}

#[test]
fn convert_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.wav");
    tone(&input, 0.5);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = sts(&[
            "convert", "--in", s(&input), "--out", s(&out), "--arch", "lsa_ls2", "--seed", "7", "--max-frames", "40",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read(out).unwrap()
    };
    let (a, b) = (run("a.wav"), run("b.wav"));
    assert!(a.len() > 44);
    assert_eq!(a, b);
}

#[test]
fn config_file_supplies_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("sts.conf");
    std::fs::write(&conf, "# delay settings\narch = ls2\nhop-ms = 20\n").unwrap();
    let o = sts(&["--config", s(&conf), "analyze"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l == "delay_ms 740"));
    let o = sts(&["--config", s(&conf), "analyze", "--hop-ms", "10"]);
    assert!(stdout(&o).lines().any(|l| l == "delay_ms 370"));

    std::fs::write(&conf, "arch = ls2\nvocoder = mg\n").unwrap();
    let o = sts(&["--config", s(&conf), "analyze"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("vocoder"));
}

#[test]
fn init_quantize_and_convert_with_weights() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.stsw");
    let q = dir.path().join("q.stsw");
    let o = sts(&["init", "--arch", "lsa1", "--seed", "3", "--out", s(&w)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = sts(&["quantize", "--weights", s(&w), "--out", s(&q), "--bits", "4", "--scope", "all"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(std::fs::metadata(&q).unwrap().len() < std::fs::metadata(&w).unwrap().len() / 3);
    assert_eq!(
        sts(&["quantize", "--weights", s(&w), "--out", s(&q), "--bits", "5"]).status.code(),
        Some(1)
    );

    let input = dir.path().join("in.wav");
    tone(&input, 0.3);
    let out = dir.path().join("out.wav");
    let o = sts(&["convert", "--in", s(&input), "--out", s(&out), "--arch", "lsa1", "--weights", s(&q), "--max-frames", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    // weights for another layout do not load
    let o = sts(&["convert", "--in", s(&input), "--out", s(&out), "--arch", "ls1", "--weights", s(&q)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let csv = dir.path().join(format!("{tag}.csv"));
        let svg = dir.path().join(format!("{tag}.svg"));
        let o = sts(&["bench", "--part", "all", "--iters", "2", "--warmup", "0", "--report", s(&csv), "--svg", s(&svg)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        (std::fs::read_to_string(csv).unwrap(), std::fs::read(svg).unwrap())
    };
    let (csv, svg) = run("a");
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "name,component,chunk_ms,mean_ms,p95_ms,rtf,size_bytes,lookahead_frames,delay_ms,perceived_delay_ms,reference_wer"
    );
    assert!(csv.lines().any(|l| l.starts_with("LSA_LS2,,") && l.ends_with(",15.3")));
    for part in ["encoder", "decoder", "vocoder", "pipeline"] {
        assert!(csv.contains(&format!(",{part},")), "{part}");
    }
    let text = String::from_utf8(svg.clone()).unwrap();
    assert_eq!(text.matches("<circle").count(), 5);
    assert_eq!(run("b").1, svg);
}

#[test]
fn selftest_passes() {
    let o = sts(&["selftest"]);
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("criterion ")).count(), 9, "{out}");
    assert_eq!(o.status.code(), Some(0), "{out}");
}
