mod common;

use neurotext::autodiff::Tape;
use neurotext::checkpoint::Checkpoint;
use neurotext::objectives::StepPos;
use neurotext::trainer::{load_model, make_batch, prepare_data, train};

#[test]
fn round_trip_restores_model_and_optimizer() {
    let dir = tempfile::tempdir().unwrap();
    common::tiny_dataset(&dir.path().join("data"));
    let mut cfg = common::tiny_config();
    cfg.epochs = 1;
    let data = prepare_data(&cfg, &dir.path().join("data")).unwrap();
    let out = train::<f32>(&cfg, &data, None).unwrap();
    let ck = Checkpoint::capture(&out.model, &out.opt, &cfg, 1);
    let path = dir.path().join("ck.bin");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ck);
    assert_eq!(loaded.config().unwrap(), cfg);
    assert_eq!(loaded.step, out.steps as u64);

    let (_, model, opt) = load_model::<f32>(&loaded, data.dims).unwrap();
    assert_eq!(opt.step, out.opt.step);
    assert_eq!(opt.m, out.opt.m);
    for (a, b) in model.store.iter().zip(out.model.store.iter()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
    let batch = make_batch::<f32>(&cfg, &data, &data.test, None).unwrap();
    let run = |m: &neurotext::model::Model<f32>| {
        let mut t = Tape::new();
        let f = m.forward(&mut t, &batch, StepPos::default()).unwrap();
        t.value(f.total).item()
    };
    assert_eq!(run(&model), run(&out.model));

    // An f32 checkpoint also loads at f64.
    let (_, m64, _) = load_model::<f64>(&loaded, data.dims).unwrap();
    let p = m64.store.iter().next().unwrap();
    assert_eq!(p.value.data()[0], out.model.store.iter().next().unwrap().value.data()[0] as f64);
}

#[test]
fn corrupt_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config();
    let model = neurotext::model::Model::<f32>::new(&cfg, common::DESK_DIMS).unwrap();
    let opt = neurotext::optim::AdamWState::new(&model.store);
    let bytes = Checkpoint::capture(&model, &opt, &cfg, 0).to_bytes();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).unwrap_err().contains("magic"));
    let mut bad = bytes.clone();
    bad[8] = 9;
    assert!(Checkpoint::from_bytes(&bad).unwrap_err().contains("version"));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..40]).is_err());

    let mut ck = Checkpoint::from_bytes(&bytes).unwrap();
    ck.config_text = ck.config_text.replace("seed = 0", "seed = 1");
    assert!(ck.config().is_err());

    let p = dir.path().join("junk.bin");
    std::fs::write(&p, b"hello").unwrap();
    let msg = Checkpoint::load(&p).unwrap_err().to_string();
    assert!(msg.contains("junk.bin"), "{msg}");
}
