use std::fs;
use std::path::{Path, PathBuf};

use microforge::pipeline::{self, AblationMode, RunOptions};
use microforge::tables::trace_from_csv;
use microforge::{ablation_compare, run_pipeline, ConfigMap, PipelineConfig, PipelineError};

const TOY: &str = "
synthetic.size = 64
cut.patch_size = 16
cut.patch_count = 64
net.latent_dim = 8
net.mapping_depth = 2
net.channels = 8:8,16:4,32:4
train.iterations = 4
train.fade_images = 32
train.checkpoint_every = 2
generate.count = 8
generate.batch = 4
quilt.rows = 2
quilt.cols = 2
metrology.bins = 5
homog.enabled = true
homog.count = 3
";

fn toy(out: &Path, extra: &[(&str, &str)]) -> PipelineConfig {
    let mut map = ConfigMap::parse(TOY).unwrap();
    map.set("out", &out.to_string_lossy()).unwrap();
    for (k, v) in extra {
        map.set(k, v).unwrap();
    }
    PipelineConfig::from_map(map).unwrap()
}

fn opts(threads: usize) -> RunOptions {
    RunOptions { threads, ..RunOptions::default() }
}

fn read(p: PathBuf) -> Vec<u8> {
    fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn toy_run_populates_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let rep = run_pipeline(&toy(dir.path(), &[]), &opts(2)).unwrap();
    for m in ["area", "perimeter", "euler"] {
        let c = &rep.minkowski[m];
        assert_eq!((c.real.n(), c.generated.n()), (8, 8));
        assert_eq!(rep.json["minkowski"][m]["generated"]["n"], 8);
    }
    let elastic = rep.elastic.as_ref().unwrap();
    assert_eq!(elastic["E"].real.n(), 3);
    assert!(rep.json["elastic"]["nu"]["real"]["mean"].is_f64());
    assert_eq!(rep.json["tool"], pipeline::TOOL);
    assert!(rep.json["config"].get("out").is_none());
    assert_eq!(rep.timings.iter().map(|t| t.stage).collect::<Vec<_>>(), pipeline::STAGES);

    let trace = trace_from_csv(&read(dir.path().join(pipeline::LOSS_TRACE))).unwrap();
    // two phases (8 and 16) of four iterations
    assert_eq!(trace.iter().map(|r| r.phase).collect::<Vec<_>>(), [8, 8, 8, 8, 16, 16, 16, 16]);
    assert!(!dir.path().join(pipeline::PARTIAL_CHECKPOINT).exists());
    assert!(!dir.path().join(pipeline::LOCK).exists());

    let listed = rep.json["artifacts"].as_array().unwrap();
    assert_eq!(pipeline::verify_manifest(dir.path()).unwrap(), listed.len());
    for a in listed {
        assert!(dir.path().join(a.as_str().unwrap()).is_file());
    }
    let mosaic = microforge::io::read_image(&dir.path().join("mosaics/mosaic_00.png")).unwrap();
    assert_eq!((mosaic.width(), mosaic.height()), (30, 30));

    // frozen output of the toy run; set MICROFORGE_BLESS=1 to refresh
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy_minkowski.json");
    let got = read(dir.path().join(pipeline::MINKOWSKI_JSON));
    if std::env::var_os("MICROFORGE_BLESS").is_some() {
        fs::write(&golden, &got).unwrap();
    }
    assert_eq!(String::from_utf8(got).unwrap(), fs::read_to_string(&golden).unwrap());
}

#[test]
fn reports_are_identical_across_directories_and_thread_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(&toy(a.path(), &[]), &opts(1)).unwrap();
    run_pipeline(&toy(b.path(), &[]), &opts(3)).unwrap();
    assert_eq!(read(a.path().join(pipeline::REPORT)), read(b.path().join(pipeline::REPORT)));
    assert_eq!(read(a.path().join(pipeline::MANIFEST)), read(b.path().join(pipeline::MANIFEST)));
}

#[test]
fn deleted_artifacts_are_rebuilt_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy(dir.path(), &[]);
    run_pipeline(&cfg, &opts(2)).unwrap();
    let report = read(dir.path().join(pipeline::REPORT));
    let manifest = read(dir.path().join(pipeline::MANIFEST));

    let rerun = run_pipeline(&cfg, &opts(2)).unwrap();
    assert!(rerun.timings.iter().filter(|t| t.stage != "report").all(|t| t.skipped));

    for victim in ["checkpoint.mgck", "generated/sample_0005.png", "binary/real_0002.png", "histogram.csv"] {
        fs::remove_file(dir.path().join(victim)).unwrap();
    }
    fs::remove_dir_all(dir.path().join("mosaics")).unwrap();
    let rebuilt = run_pipeline(&cfg, &opts(2)).unwrap();
    let ran: Vec<&str> = rebuilt.timings.iter().filter(|t| !t.skipped).map(|t| t.stage).collect();
    assert_eq!(ran, ["train", "generate", "quilt", "postprocess", "characterize", "report"]);
    assert_eq!(read(dir.path().join(pipeline::REPORT)), report);
    assert_eq!(read(dir.path().join(pipeline::MANIFEST)), manifest);

    // a tampered artifact is detected and regenerated
    fs::write(dir.path().join("minkowski_real.csv"), "id,area\n").unwrap();
    assert!(pipeline::verify_manifest(dir.path()).is_err());
    run_pipeline(&cfg, &opts(2)).unwrap();
    assert_eq!(read(dir.path().join(pipeline::REPORT)), report);
}

#[test]
fn interrupted_training_resumes_from_the_partial_checkpoint() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(&toy(a.path(), &[]), &opts(1)).unwrap();

    let cfg = toy(b.path(), &[]);
    let interrupted = RunOptions { interrupt_training_at: Some(5), ..opts(1) };
    match run_pipeline(&cfg, &interrupted) {
        Err(PipelineError::Stage { stage: "train", .. }) => {}
        other => panic!("expected a train stage error, got {other:?}"),
    }
    assert!(b.path().join(pipeline::PARTIAL_CHECKPOINT).is_file());
    assert!(!b.path().join(pipeline::LOCK).exists());
    run_pipeline(&cfg, &opts(1)).unwrap();
    for f in [pipeline::CHECKPOINT, pipeline::LOSS_TRACE, pipeline::REPORT] {
        assert_eq!(read(a.path().join(f)), read(b.path().join(f)), "{f}");
    }
}

#[test]
fn missing_exemplar_fails_validation_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut map = ConfigMap::parse(TOY).unwrap();
    map.set("out", &out.to_string_lossy()).unwrap();
    map.set("exemplar", &dir.path().join("nope.png").to_string_lossy()).unwrap();
    let err = PipelineConfig::from_map(map).unwrap_err();
    assert!(err.0.contains("does not exist"), "{err}");
    assert!(!out.exists());
}

#[test]
fn zero_iterations_with_a_checkpoint_generates_from_it() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(&toy(a.path(), &[]), &opts(1)).unwrap();
    let ckpt = a.path().join(pipeline::CHECKPOINT);
    let ckpt_s = ckpt.to_string_lossy().into_owned();
    let cfg = toy(b.path(), &[("train.iterations", "0"), ("train.checkpoint", &ckpt_s)]);
    run_pipeline(&cfg, &opts(1)).unwrap();
    assert_eq!(read(b.path().join(pipeline::CHECKPOINT)), read(ckpt));
    assert!(trace_from_csv(&read(b.path().join(pipeline::LOSS_TRACE))).unwrap().is_empty());
    for i in 0..8 {
        let f = format!("generated/sample_{i:04}.png");
        assert_eq!(read(a.path().join(&f)), read(b.path().join(&f)), "{f}");
    }

    // a checkpoint of another size is refused up front
    let c = toy(b.path(), &[("cut.patch_size", "32"), ("train.iterations", "0"), ("train.checkpoint", &ckpt_s)]);
    assert!(matches!(run_pipeline(&c, &opts(1)), Err(PipelineError::Validation(_))));
}

#[test]
fn a_held_lock_blocks_the_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(pipeline::LOCK), "").unwrap();
    assert!(matches!(run_pipeline(&toy(dir.path(), &[]), &opts(1)), Err(PipelineError::Validation(_))));
    assert!(dir.path().join(pipeline::LOCK).exists());
}

#[test]
fn ablation_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy(dir.path(), &[("homog.enabled", "false")]);
    assert!(matches!(
        ablation_compare(&cfg, &[AblationMode::Progressive], &opts(1)),
        Err(PipelineError::Validation(_))
    ));

    let rows = ablation_compare(&cfg, &[AblationMode::Progressive, AblationMode::Progressive], &opts(1)).unwrap();
    assert_eq!(rows[0].minkowski, rows[1].minkowski);

    let rows = ablation_compare(
        &cfg,
        &[AblationMode::Progressive, AblationMode::SingleResolution, AblationMode::ResolutionIncrease],
        &opts(1),
    )
    .unwrap();
    let labels: Vec<&str> = rows.iter().map(|r| r.label).collect();
    assert_eq!(labels, ["With progressive growing", "Without progressive growing", "With resolution increase"]);
    let csv = String::from_utf8(read(dir.path().join(pipeline::ABLATION_CSV))).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("single_resolution,Without progressive growing,area,")));
    let json: serde_json::Value = serde_json::from_slice(&read(dir.path().join(pipeline::ABLATION_JSON))).unwrap();
    assert_eq!(json["rows"][2]["run"], "ablation/2_resolution_increase");
    // the resolution-increase run emits 32×32 samples from 16×16 training patches
    let s = microforge::io::read_image(&dir.path().join("ablation/2_resolution_increase/generated/sample_0000.png")).unwrap();
    assert_eq!(s.width(), 32);
}
