use gaitcast_core::ingest::{parse_record, synth_gait, write_record};
use gaitcast_core::pipeline::{run_pipeline, PipelineConfig};
use gaitcast_core::tensor_io::{load_features, load_targets, save_tensor};

#[test]
fn synth_csv_pipeline_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let rec = synth_gait(3, 3, 1926.0).unwrap();
    let csv = dir.path().join("trial.csv");
    write_record(&rec, &csv).unwrap();
    let back = parse_record(&csv).unwrap();
    assert_eq!(back.semg, rec.semg);
    assert_eq!(back.angles, rec.angles);

    let cfg = PipelineConfig::default();
    let out = run_pipeline(&back, &cfg).unwrap();
    let w = cfg.window.window_count(rec.semg_len());
    assert_eq!(out.features.data.dim(), (w, 9, 6));
    assert!(out.features.data.iter().all(|v| v.is_finite()));

    let fp = dir.path().join("features.bin");
    let tp = dir.path().join("targets.bin");
    save_tensor(&fp, out.features.data.view().into_dyn()).unwrap();
    save_tensor(&tp, out.targets.data.view().into_dyn()).unwrap();
    assert_eq!(load_features(&fp).unwrap(), out.features);
    assert_eq!(load_targets(&tp).unwrap(), out.targets);
    assert!(load_features(&tp).is_err());

    let again = run_pipeline(&back, &cfg).unwrap();
    assert_eq!(again.features, out.features);
}
