use mpdpd::fxp::{CordicConfig, FxpImage};
use mpdpd::nn::{Checkpoint, GruDims};
use mpdpd::pa::{PaSimModel, DEFAULT_DRIVE};
use mpdpd::quant::QuantError;
use mpdpd::signal::{split_dataset, DatasetSplit, OfdmConfig, OfdmReference};
use mpdpd::train::*;
use num_complex::Complex64;

const FS: f64 = 640e6;

fn small(pa: &PaSimModel) -> (DatasetSplit, OfdmReference) {
    let ofdm = OfdmConfig {
        n_symbols: 8,
        ..Default::default()
    };
    let (pair, reference) = synthetic_dataset(&ofdm, FS, DEFAULT_DRIVE, pa).unwrap();
    (split_dataset(&pair, [0.6, 0.2, 0.2]).unwrap(), reference)
}

fn cfg(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        lr,
        ..Default::default()
    }
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad = [
        TrainConfig { epochs: 0, ..Default::default() },
        TrainConfig { frame_length: 1, ..Default::default() },
        TrainConfig { batch_size_samples: 3100, ..Default::default() },
        TrainConfig { lr: -1.0, ..Default::default() },
        TrainConfig { target_gain: Some(0.0), ..Default::default() },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(TrainError::Config(_))), "{c:?}");
    }
    let d = TrainConfig::default();
    assert_eq!((d.epochs, d.lr, d.batch_size_samples, d.frame_length, d.early_stop_patience), (100, 1e-3, 3200, 200, 10));
}

#[test]
fn ls_gain_recovers_a_scalar() {
    let x: Vec<Complex64> = (0..50).map(|k| Complex64::from_polar(0.1 + 0.01 * k as f64, k as f64)).collect();
    let g = Complex64::new(0.8, -0.3);
    let y: Vec<Complex64> = x.iter().map(|v| g * v).collect();
    assert!((ls_gain(&x, &y) - g).norm() < 1e-12);
}

#[test]
fn qat_run_is_deterministic_snapped_and_leaves_pa_alone() {
    let (split, _) = small(&PaSimModel::default());
    let dims = GruDims::new(4, 4);
    let pa = train_pa_model(&split, dims, &cfg(4, 1e-2)).unwrap();
    assert!(pa.best_val_loss <= pa.history[0].val_loss);
    let frozen = pa.model.clone();
    let c = cfg(3, 1e-2);
    let g = target_gain(&c, &split.train);
    let a = train_dpd(&pa.model, &split, dims, &c, Some((8, 12)), g).unwrap();
    let b = train_dpd(&pa.model, &split, dims, &TrainConfig { threads: 1, ..c.clone() }, Some((8, 12)), g).unwrap();
    assert_eq!(pa.model, frozen);
    assert_eq!(a, b);
    let q = a.quant.as_ref().unwrap();
    assert!(q.is_snapped());
    assert_eq!(q.tag(), "W8A12");
    assert!(a.best_val_loss <= a.history[0].val_loss);
    assert_eq!(a.history.len(), 3);
}

#[test]
fn unsupported_width_rejected() {
    let (split, _) = small(&PaSimModel::identity());
    let dims = GruDims::new(4, 2);
    let pa = mpdpd::nn::GruModel::init(dims, 0);
    let err = train_dpd(&pa, &split, dims, &cfg(1, 1e-3), Some((4, 8)), Complex64::new(1.0, 0.0)).unwrap_err();
    assert!(matches!(err, TrainError::Quant(QuantError::UnsupportedWidth(4))));
}

#[test]
fn divergence_is_reported() {
    let (split, _) = small(&PaSimModel::default());
    let err = train_pa_model(&split, GruDims::new(4, 3), &cfg(3, 1e300)).unwrap_err();
    assert!(matches!(err, TrainError::Diverged { .. }), "{err}");
}

#[test]
fn early_stopping_and_history() {
    let (split, _) = small(&PaSimModel::default());
    let c = TrainConfig {
        early_stop_patience: 2,
        ..cfg(60, 5e-1)
    };
    let out = train_pa_model(&split, GruDims::new(4, 3), &c).unwrap();
    let best = out.history.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_val_loss, best);
    assert!(out.history.len() <= 60);
    if out.history.len() < 60 {
        assert_eq!(out.history.len(), out.best_epoch + 2);
    }
    let csv = out.history_csv();
    assert!(csv.starts_with("epoch,train_loss,val_loss\n"));
    assert_eq!(csv.lines().count(), out.history.len() + 1);
}

#[test]
fn identity_plant_gives_identity_cascade() {
    let (split, _) = small(&PaSimModel::identity());
    let dims = GruDims::new(4, 10);
    // small batches give enough steps on the short dataset
    let c = TrainConfig {
        batch_size_samples: 400,
        ..cfg(150, 1e-2)
    };
    let pa = train_pa_model(&split, dims, &c).unwrap();
    let g = target_gain(&c, &split.train);
    assert!((g - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    let dpd = train_dpd(&pa.model, &split, dims, &c, None, g).unwrap();
    let p = split.validation.input.mean_power();
    let nmse = 10.0 * (2.0 * dpd.best_val_loss / p).log10();
    assert!(nmse < -40.0, "cascade NMSE {nmse:.1} dB");
}

#[test]
fn evaluation_and_run_directory() {
    let sim = PaSimModel::default();
    let (split, reference) = small(&sim);
    let dims = GruDims::new(4, 3);
    let pa = train_pa_model(&split, dims, &cfg(2, 1e-2)).unwrap();
    let c = cfg(2, 1e-2);
    let g = target_gain(&c, &split.train);
    let dpd = train_dpd(&pa.model, &split, dims, &c, Some((16, 16)), g).unwrap();
    let x = &split.test.input;
    let start = split.test.start;
    let base = evaluate(Predistorter::Bypass, &sim, x, g, &reference, start).unwrap();
    assert!(base.is_finite());
    let q = dpd.quant.as_ref().unwrap();
    let img = FxpImage::lower(&dpd.model, q, CordicConfig::default()).unwrap();
    let fake = predistort(Predistorter::FakeQuant(&dpd.model, q), x).unwrap();
    let fixed = predistort(Predistorter::FixedPoint(&img), x).unwrap();
    let float = predistort(Predistorter::Float(&dpd.model), x).unwrap();
    for u in [&fake, &fixed, &float] {
        assert_eq!(u.len(), x.len());
        assert!(u.peak_amplitude() <= 1.0 + 1e-12);
    }
    let gap = fake.samples().iter().zip(fixed.samples()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(gap < 1e-3, "{gap}");
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dpd.checkpoint();
    write_run_dir(dir.path(), "[train]\nepochs = 2\n", &dpd, &ckpt, Some(&base)).unwrap();
    for f in ["config.toml", "loss_history.csv", "checkpoint.json", "metrics.txt"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let back = Checkpoint::load(&dir.path().join("checkpoint.json")).unwrap();
    assert_eq!(back.model().unwrap(), dpd.model);
    assert_eq!(back.quant.as_ref(), Some(q));
}
