//! End-to-end paths through the public API: simulate, persist, load, train,
//! predict and score.

use std::io::Write;
use std::path::Path;

use crossnet::dataio::{self, SplitSpec, IHDP_COVARIATES};
use crossnet::evalx::{pehe, policy_risk, PolicySpec};
use crossnet::synthgen::{simulate, Setting, SynthConfig};
use crossnet::trainer::{
    predict_cate, train, train_with_validation, LossKind, ModelKind, TrainConfig,
};

fn small_cfg(kind: ModelKind) -> TrainConfig {
    TrainConfig {
        model_kind: kind,
        rep_layers: vec![16, 4],
        head_layers: vec![16],
        max_epochs: 8,
        batch_size: 64,
        lambda: 0.1,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn synthetic_round_trip_then_train_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(&SynthConfig::new(Setting::S2, 300, 8)).unwrap();
    let path = dir.path().join("s2.csv");
    dataio::write_potential_outcomes(&path, &data).unwrap();
    let back = dataio::read_potential_outcomes(&path, data.dim(), true).unwrap();
    assert_eq!(back.x, data.x);
    assert_eq!(back.cate, data.cate);

    for kind in ModelKind::ALL {
        let (params, hist) = train(&back, &small_cfg(kind)).unwrap();
        assert!(hist.epochs() >= 1 && hist.best_epoch < hist.epochs());
        let tau = predict_cate(&params, back.x.view()).unwrap();
        let err = pehe(tau.view(), back.cate.as_ref().unwrap().view()).unwrap();
        assert!(err.is_finite() && err > 0.0, "{kind}: {err}");
    }
}

fn write_ihdp_file(path: &Path, rows: usize, treated: usize, offset: f64) {
    let mut f = std::fs::File::create(path).unwrap();
    let xs: Vec<String> = (1..=IHDP_COVARIATES).map(|j| format!("x{j}")).collect();
    writeln!(f, "t,y_factual,y_cfactual,mu0,mu1,{}", xs.join(",")).unwrap();
    for i in 0..rows {
        let t = u8::from(i < treated);
        let x: Vec<String> = (0..IHDP_COVARIATES)
            .map(|j| {
                if j < 6 {
                    format!("{}", ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0 + offset)
                } else {
                    format!("{}", (i + j) % 2)
                }
            })
            .collect();
        let mu0 = 1.0 + (i % 5) as f64 * 0.1;
        let mu1 = mu0 + 4.0;
        let (yf, ycf) = if t == 1 { (mu1, mu0) } else { (mu0, mu1) };
        writeln!(f, "{t},{yf},{ycf},{mu0},{mu1},{}", x.join(",")).unwrap();
    }
}

#[test]
fn ihdp_layout_loads_and_trains() {
    let dir = tempfile::tempdir().unwrap();
    let (train_path, test_path) = dataio::ihdp_paths(dir.path(), 2);
    write_ihdp_file(&train_path, 672, 125, 0.0);
    write_ihdp_file(&test_path, 75, 14, 0.3);
    let (tr, te) = dataio::load_ihdp(dir.path(), 2).unwrap();
    assert_eq!(tr.len() + te.len(), 747);
    assert_eq!(tr.n_treated() + te.n_treated(), 139);
    let (params, _) = train(&tr, &small_cfg(ModelKind::CrossNet)).unwrap();
    let tau = predict_cate(&params, te.x.view()).unwrap();
    assert!(pehe(tau.view(), te.cate.as_ref().unwrap().view())
        .unwrap()
        .is_finite());

    let missing = dataio::load_ihdp(dir.path(), 3).unwrap_err();
    assert!(matches!(
        missing,
        crossnet::Error::NotFound {
            replication: Some(3),
            ..
        }
    ));
}

#[test]
fn jobs_layout_splits_trains_and_scores_policy() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("jobs.csv");
    let mut f = std::fs::File::create(&path).unwrap();
    let xs: Vec<String> = (1..=dataio::JOBS_COVARIATES)
        .map(|j| format!("x{j}"))
        .collect();
    writeln!(f, "t,y,e,{}", xs.join(",")).unwrap();
    for i in 0..400usize {
        let e = u8::from(i < 200);
        let t = u8::from(e == 1 && i % 3 == 0);
        let unemployed = u8::from((i * 13) % 7 < 2 + usize::from(t == 0));
        let x: Vec<String> = (0..dataio::JOBS_COVARIATES)
            .map(|j| format!("{}", ((i + 3 * j) % 9) as f64))
            .collect();
        writeln!(f, "{t},{unemployed},{e},{}", x.join(",")).unwrap();
    }
    drop(f);
    let load = dataio::load_jobs(&path).unwrap();
    assert!(load.warnings.is_empty());
    let data = load.data;
    let (tr, va, te) = dataio::split(&data, &SplitSpec::standard(4)).unwrap();
    assert_eq!(tr.len() + va.len() + te.len(), 400);
    let cfg = TrainConfig {
        loss_kind: LossKind::Bce,
        ..small_cfg(ModelKind::CrossNet)
    };
    let (params, _) = train_with_validation(&tr, &va, &cfg, &mut |_| {}).unwrap();
    let within = tr.concat(&va).unwrap();
    let tau = predict_cate(&params, within.x.view()).unwrap();
    assert!(tau.iter().all(|v| v.abs() <= 1.0));
    let risk = policy_risk(
        tau.view(),
        within.y.view(),
        &within.t,
        within.randomized.as_ref().unwrap(),
        &PolicySpec::default(),
    )
    .unwrap();
    assert!((0.0..=1.0).contains(&risk));
}
