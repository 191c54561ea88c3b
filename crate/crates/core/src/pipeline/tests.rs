use super::*;
use crate::doc_io::SynthConfig;
use crate::nn::TrainConfig;

fn small_config(run_dir: &Path) -> RunConfig {
    RunConfig {
        seed: 5,
        run_dir: run_dir.to_path_buf(),
        patch_size: 8,
        central_window: 4,
        corpus: CorpusSection { pages: 3, holdout_pages: 2 },
        synth: SynthConfig {
            height: 64,
            width: 80,
            margin: 6,
            line_count: [2, 3],
            ..SynthConfig::default()
        },
        model: ModelSection { arch: ArchKind::Tiny },
        train: TrainConfig {
            learning_rate: 1e-2,
            max_epochs: 2,
            patience: 2,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    }
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn par_map_keeps_order() {
    let items: Vec<usize> = (0..37).collect();
    let seq = par_map(&items, 1, |x| x * x);
    let par = par_map(&items, 4, |x| x * x);
    assert_eq!(seq, par);
}

#[test]
fn synth_writes_triples_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    cmd_synth(&cfg, &a).unwrap();
    cmd_synth(&cfg, &b).unwrap();
    let train = a.join("train");
    let m = Manifest::load(&train).unwrap();
    assert_eq!(m.files.len(), 3 * cfg.corpus.pages);
    assert_eq!(list_images(&train).unwrap().len(), cfg.corpus.pages);
    assert!(m.verify(&train).unwrap().is_empty());
    assert_eq!(Manifest::load(&a.join("holdout")).unwrap().files.len(), 3 * cfg.corpus.holdout_pages);
    for e in &m.files {
        assert_eq!(read(&train.join(&e.path)), read(&b.join("train").join(&e.path)), "{}", e.path);
    }
    std::fs::write(train.join(&m.files[0].path), b"tampered").unwrap();
    assert_eq!(m.verify(&train).unwrap(), vec![m.files[0].path.clone()]);
    assert!(a.join("config.toml").is_file());
}

#[test]
fn synth_fails_on_unwritable_target() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("file");
    std::fs::write(&file, b"x").unwrap();
    assert!(cmd_synth(&small_config(tmp.path()), &file.join("corpus")).is_err());
}

#[test]
fn train_segment_eval_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(&tmp.path().join("run"));
    let corpus = tmp.path().join("corpus");
    cmd_synth(&cfg, &corpus).unwrap();

    assert!(matches!(
        cmd_segment(&cfg, &corpus.join("holdout"), &tmp.path().join("x")),
        Err(Error::Checkpoint(_))
    ));

    cmd_train(&cfg, &corpus.join("train"), false).unwrap();
    let log_path = cfg.run_dir.join("train_log_p8.csv");
    let log = std::fs::read_to_string(&log_path).unwrap();
    assert_eq!(log.lines().next().unwrap(), "epoch,train_loss,train_acc,val_acc");
    assert_eq!(log.lines().count(), 3);

    cmd_train(&cfg, &corpus.join("train"), true).unwrap();
    let log = std::fs::read_to_string(&log_path).unwrap();
    let epochs: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["1", "2", "3", "4"]);
    assert!(cfg.run_dir.join("config.toml").is_file());

    let out1 = tmp.path().join("seg1");
    let out2 = tmp.path().join("seg2");
    assert_eq!(cmd_segment(&cfg, &corpus.join("holdout"), &out1).unwrap().exit_code(), 0);
    let mut par = cfg.clone();
    par.jobs = 2;
    par.segment.save_intermediate = false;
    cmd_segment(&par, &corpus.join("holdout"), &out2).unwrap();
    for i in 3..5 {
        let id = page_id(i);
        for f in [
            "pseudo_rgb.png",
            "ink.png",
            "blobs.png",
            "blob_labels.png",
            "labels.png",
            "lines.json",
            "lines.xml",
        ] {
            assert_eq!(read(&out1.join(&id).join(f)), read(&out2.join(&id).join(f)), "{id}/{f}");
        }
        assert!(out1.join(&id).join("grid.lwgr").is_file());
        assert!(!out2.join(&id).join("grid.lwgr").exists());
        let grid = EmbeddingGrid::load(&out1.join(&id).join("grid.lwgr")).unwrap();
        assert_eq!(grid.page_id, id);
    }

    let holdout = corpus.join("holdout");
    let (rows, missing) = evaluate_dirs(&cfg, &holdout, &holdout).unwrap();
    assert!(missing.is_empty());
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.liu == 1.0 && r.piu == 1.0));

    let (rows, _) = evaluate_dirs(&cfg, &out1, &holdout).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.liu) && (0.0..=1.0).contains(&r.piu)));

    std::fs::remove_dir_all(out1.join(page_id(4))).unwrap();
    let ev = tmp.path().join("eval");
    let outcome = cmd_eval(&cfg, &out1, &holdout, &ev).unwrap();
    assert_eq!(outcome.skipped, vec![page_id(4)]);
    assert_eq!(outcome.exit_code(), 2);
    assert!(ev.join("metrics.csv").is_file());

    let rows = run_sweep(&cfg, SweepAxis::CentralWindow, &[4, 2], &holdout, &holdout).unwrap();
    assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), [4, 2]);
    assert!(rows.iter().all(|r| r.pages == 2 && r.skipped == 0));
    assert!(matches!(
        run_sweep(&cfg, SweepAxis::PatchSize, &[8, 10], &holdout, &holdout),
        Err(Error::Checkpoint(m)) if m.contains("model_p10")
    ));

    let vis = tmp.path().join("vis");
    cmd_visualize(&cfg, &holdout.join("images").join("page_0003.png"), &vis, 2).unwrap();
    assert!(vis.join("page_0003").join("saliency_1.png").is_file());
}

#[test]
fn eval_reads_page_xml_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let corpus = tmp.path().join("c");
    synth_corpus(&cfg, &corpus, 0, 1).unwrap();
    std::fs::remove_dir_all(corpus.join("labels")).unwrap();
    let page = generate_synthetic_page(&cfg.synth_config(0)).unwrap();
    let pred = tmp.path().join("pred");
    std::fs::create_dir_all(pred.join(page_id(0))).unwrap();
    save_label_png(&page.labels, pred.join(page_id(0)).join("labels.png")).unwrap();
    let (rows, missing) = evaluate_dirs(&cfg, &pred, &corpus).unwrap();
    assert!(missing.is_empty());
    assert!(rows[0].liu == 1.0, "{:?}", rows[0]);
    assert!(rows[0].piu > 0.95, "{:?}", rows[0]);
}
