//! Acceptance checks. Each test prints one PASS/FAIL line and asserts.
//! Run with `cargo test -p mpdpd --test acceptance -- --nocapture`.

use mpdpd::energy::{cost_rows, count_ops, estimate_power, CountConfig, EnergyTable, OpKind, Precision};
use mpdpd::fxp::{cordic_eval, fxp_gru_infer, lower_checkpoint, CordicConfig, CordicMode, Fxp, FxpImage, FxpOp, FxpOptions};
use mpdpd::metrics::{compute_evm, compute_psd, Window};
use mpdpd::nn::{Checkpoint, FrozenResiduals, GruDims, GruModel, QuantMode, Site};
use mpdpd::pa::PaSimModel;
use mpdpd::quant::{apply_mixed_precision, quantize, quantize_backward, QuantSpec};
use mpdpd::signal::{generate_ofdm, split_dataset, FeatureVector, OfdmConfig};
use mpdpd::train::{default_dataset, evaluate, target_gain, train_dpd, train_pa_model, Predistorter, TrainConfig};
use num_complex::Complex64;
use std::sync::atomic::{AtomicBool, Ordering};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FS: f64 = 640e6;
const GRU: GruDims = GruDims::new(4, 10);

static REPORTED_FAILURE: AtomicBool = AtomicBool::new(false);

fn report(ok: bool, what: &str, detail: String) {
    println!("{} {what}: {detail}", if ok { "PASS" } else { "FAIL" });
    if !ok {
        REPORTED_FAILURE.store(true, Ordering::SeqCst);
        panic!("{what}: {detail}");
    }
}

fn power_is_energy_times_sample_rate() {
    // (nJ, W) pairs printed together; the 45 nm W16A16 pair (4.02 nJ, 1.93 W) disagrees with itself
    let pairs = [
        (11.44, 7.32),
        (6.20, 3.97),
        (3.38, 2.16),
        (3.32, 2.12),
        (4.28, 2.74),
        (3.60, 2.30),
        (5.66, 3.62),
        (3.09, 1.98),
        (1.11, 0.71),
        (2.29, 1.46),
        (0.85, 0.54),
        (2.19, 1.40),
        (0.82, 0.52),
        (1.56, 1.00),
        (0.74, 0.47),
        (1.49, 0.95),
        (0.72, 0.46),
        (1.42, 0.90),
        (0.69, 0.44),
    ];
    let worst = pairs
        .iter()
        .map(|&(e, p)| (estimate_power(e, FS).unwrap() - p).abs())
        .fold(0.0, f64::max);
    report(
        worst <= 0.01,
        "power = energy x 640 MHz",
        format!("{} pairs, max |error| {worst:.4} W (tol 0.01 W)", pairs.len()),
    );
}

fn memory_access_count() {
    let m502 = count_ops(GRU, Precision::Fp32, &CountConfig::default()).total(OpKind::Mem);
    // 3*4*(38+4) + 8*4 + 2 = 538 parameters
    let dims538 = GruDims::new(38, 4);
    let m538 = count_ops(dims538, Precision::Fp32, &CountConfig::default()).total(OpKind::Mem);
    report(
        m502 == 506 && m538 == 542 && dims538.parameter_count() == 538,
        "memory accesses = params + 2 window + 2",
        format!("502 params -> {m502} (want 506), 538 params -> {m538} (want 542)"),
    );
}

fn parameter_count() {
    let n = GruModel::zeros(GRU).parameter_count();
    report(n == 502, "GRU(4 -> 10) + FC(2) parameter count", format!("{n} (want 502)"));
}

fn op_counts_near_reference() {
    let r = count_ops(GRU, Precision::Fp32, &CountConfig::default());
    let (mul, add) = (r.total(OpKind::Mul), r.total(OpKind::Add));
    let dm = (mul as f64 / 502.0 - 1.0).abs();
    let da = (add as f64 / 1417.0 - 1.0).abs();
    report(
        dm <= 0.05 && da <= 0.05,
        "MUL/ADD counts",
        format!("MUL {mul} vs 502 ({:.1}%), ADD {add} vs 1417 ({:.1}%), tol 5%", 100.0 * dm, 100.0 * da),
    );
}

fn quantizer_laws() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = Vec::new();
    for bits in [8, 12, 16] {
        for _ in 0..10_000 {
            let signed = rng.gen_bool(0.5);
            let spec = QuantSpec::new(bits, signed, rng.gen_range(-16..4)).unwrap();
            let s = spec.scale();
            let span = s * spec.q_max() as f64 * 1.5;
            let (a, b) = (rng.gen_range(-span..span), rng.gen_range(-span..span));
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (ql, qh) = (quantize(lo, &spec).unwrap(), quantize(hi, &spec).unwrap());
            let code = ql / s;
            let bound = s * (spec.q_min().unsigned_abs().max(spec.q_max() as u64)) as f64;
            if quantize(ql, &spec).unwrap() != ql {
                failures.push(format!("idempotence {bits} {lo}"));
            }
            if ql > qh {
                failures.push(format!("monotonicity {bits} {lo} {hi}"));
            }
            if ql.abs() > bound {
                failures.push(format!("saturation {bits} {lo}"));
            }
            if code.fract() != 0.0 || code < spec.q_min() as f64 || code > spec.q_max() as f64 {
                failures.push(format!("grid {bits} {lo}"));
            }
        }
    }
    let s8 = QuantSpec::new(8, true, -1).unwrap();
    let examples = [(0.0, 0.0), (3.14, 3.0), (100.0, 63.5)];
    for (x, want) in examples {
        if quantize(x, &s8).unwrap() != want {
            failures.push(format!("worked example {x}"));
        }
    }
    report(
        failures.is_empty(),
        "quantizer laws (3 x 10000 cases + worked examples)",
        if failures.is_empty() { "idempotent, monotone, saturating, on grid".into() } else { failures[..failures.len().min(5)].join("; ") },
    );
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn loss_and_grads(m: &GruModel, x: &[f64], targets: &[[f64; 2]], mode: QuantMode) -> (f64, mpdpd::nn::Gradients) {
    let tr = m.forward_flat(x, None, mode).unwrap();
    let mut loss = 0.0;
    let dy: Vec<[f64; 2]> = tr
        .outputs()
        .iter()
        .zip(targets)
        .map(|(y, t)| {
            let e = [y[0] - t[0], y[1] - t[1]];
            loss += 0.5 * (e[0] * e[0] + e[1] * e[1]);
            e
        })
        .collect();
    (loss, m.backward(&tr, &dy, mode).unwrap())
}

fn gradients_match_finite_differences() {
    // worst relative error per group: params, inputs, site scales, weight scales, scalar STE
    let mut worst = [0.0f64; 5];
    let mut checked = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (h, steps) in [(1, 1), (2, 4), (3, 6), (5, 8)] {
        let m = GruModel::init(GruDims::new(4, h), 100 + h as u64);
        let feats: Vec<FeatureVector> = (0..steps)
            .map(|_| FeatureVector::of(Complex64::from_polar(rng.gen_range(0.05..0.9), rng.gen_range(-3.1..3.1))))
            .collect();
        let x: Vec<f64> = feats.iter().flat_map(|f| f.0).collect();
        let targets: Vec<[f64; 2]> = (0..steps).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();

        // float BPTT: parameters and inputs
        let (_, g) = loss_and_grads(&m, &x, &targets, QuantMode::Float);
        let eps = 1e-5;
        for k in 0..m.parameter_count() {
            let (mut mp, mut mm) = (m.clone(), m.clone());
            mp.params_mut()[k] += eps;
            mm.params_mut()[k] -= eps;
            let fd = (loss_and_grads(&mp, &x, &targets, QuantMode::Float).0 - loss_and_grads(&mm, &x, &targets, QuantMode::Float).0) / (2.0 * eps);
            worst[0] = worst[0].max(rel_err(fd, g.params[k]));
            checked += 1;
        }
        for k in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[k] += eps;
            xm[k] -= eps;
            let fd = (loss_and_grads(&m, &xp, &targets, QuantMode::Float).0 - loss_and_grads(&m, &xm, &targets, QuantMode::Float).0) / (2.0 * eps);
            worst[1] = worst[1].max(rel_err(fd, g.inputs[k]));
            checked += 1;
        }

        // STE / scale gradients on the rounding-frozen surrogate
        let q = apply_mixed_precision(&m, 8, 8, &feats).unwrap();
        let res = m.forward_flat(&x, None, QuantMode::Fake(&q)).unwrap().residuals(&m, &q);
        let (_, g) = loss_and_grads(&m, &x, &targets, QuantMode::Surrogate(&q, &res));
        let at = |r: &FrozenResiduals| loss_and_grads(&m, &x, &targets, QuantMode::Surrogate(&q, r)).0;
        for k in 0..res.site_scales.len() {
            let e = 1e-6 * res.site_scales[k];
            let (mut rp, mut rm) = (res.clone(), res.clone());
            rp.site_scales[k] += e;
            rm.site_scales[k] -= e;
            worst[2] = worst[2].max(rel_err((at(&rp) - at(&rm)) / (2.0 * e), g.site_scales[k]));
            checked += 1;
        }
        for k in 0..res.weight_scales.len() {
            let e = 1e-6 * res.weight_scales[k];
            let (mut rp, mut rm) = (res.clone(), res.clone());
            rp.weight_scales[k] += e;
            rm.weight_scales[k] -= e;
            worst[3] = worst[3].max(rel_err((at(&rp) - at(&rm)) / (2.0 * e), g.weight_scales[k]));
            checked += 1;
        }
    }
    // scalar quantizer: dq/ds against the fake-quant output, away from rounding and clipping edges
    for _ in 0..2000 {
        let spec = QuantSpec::new(8, true, -4).unwrap();
        let s = spec.scale();
        let x = rng.gen_range(-10.0..10.0);
        let v = x / s;
        let near_round = (v - v.floor() - 0.5).abs() < 1e-3;
        let near_clip = (v - spec.q_min() as f64).abs() < 1e-3 || (v - spec.q_max() as f64).abs() < 1e-3;
        if near_round || near_clip {
            continue;
        }
        let (_, ds) = quantize_backward(x, &spec, 1.0);
        // surrogate q(s) = s * (clip(x/s) + delta) with delta frozen at s
        let c = v.clamp(spec.q_min() as f64, spec.q_max() as f64);
        let delta = c.round_ties_even() - c;
        let f = |s2: f64| s2 * ((x / s2).clamp(spec.q_min() as f64, spec.q_max() as f64) + delta);
        // the surrogate is linear in s between clip crossings
        let e = s / 1024.0;
        let clipped = |s2: f64| ((x / s2) < spec.q_min() as f64, (x / s2) > spec.q_max() as f64);
        if clipped(s + e) != clipped(s - e) {
            continue;
        }
        let fd = (f(s + e) - f(s - e)) / (2.0 * e);
        worst[4] = worst[4].max(rel_err(fd, ds));
        checked += 1;
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    report(
        max < 1e-4,
        "BPTT and STE/scale gradients vs central differences",
        format!(
            "{checked} partials, max rel err: params {:.1e}, inputs {:.1e}, site scales {:.1e}, weight scales {:.1e}, quantizer {:.1e} (tol 1e-4)",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    );
}

/// W16A16 DPD trained by the default pipeline (seed 0, PA 200 epochs and DPD
/// 100 epochs at lr 1e-2).
const W16A16_FIXTURE: &str = include_str!("data/dpd_w16a16.json");

fn fixed_point_matches_fake_quant() {
    let ckpt = Checkpoint::from_json(W16A16_FIXTURE).unwrap();
    let m = ckpt.model().unwrap();
    let q = ckpt.quant.clone().unwrap();
    let (pair, _) = default_dataset().unwrap();
    let split = split_dataset(&pair, [0.6, 0.2, 0.2]).unwrap();
    let feats = split.test.input.features();
    let img = lower_checkpoint(&ckpt, CordicConfig::default()).unwrap();
    let out = fxp_gru_infer(&img, &feats, FxpOptions { trace: true, ..Default::default() }).unwrap();
    let tr = m.forward_features(&feats, QuantMode::Fake(&q));
    let ys = q.site(Site::Y).scale();
    let mut worst = 0i64;
    for (t, c) in out.codes.iter().enumerate() {
        let y = tr.output(t);
        for k in 0..2 {
            worst = worst.max(((y[k] / ys).round() as i64 - c[k]).abs());
        }
    }
    let floats = out.ops.iter().filter(|o| o.touches_float()).count();
    let ingests = out.ops.iter().filter(|o| matches!(o, FxpOp::Ingest { .. })).count();
    let audit = floats == 2 * feats.len() && ingests == feats.len();
    report(
        worst <= 2 && audit && img.weights.len() == m.parameter_count(),
        "W16A16 integer inference vs fake-quant forward",
        format!("{} test samples, max {worst} LSB (tol 2); float ops only at ingest/descale: {audit}", feats.len()),
    );
}

fn cordic_accuracy() {
    let mut wt = 0.0f64;
    let mut ws = 0.0f64;
    let tanh = CordicConfig { mode: CordicMode::HyperbolicTanh, ..Default::default() };
    let sig = CordicConfig { mode: CordicMode::HyperbolicSigmoid, ..Default::default() };
    let n = 10_000;
    for i in 0..n {
        let x = -8.0 + 16.0 * i as f64 / (n - 1) as f64;
        let fx = Fxp::new((x * 2f64.powi(20)).round() as i64, -20);
        let xr = fx.to_f64();
        wt = wt.max((cordic_eval(&tanh, fx, -24).to_f64() - xr.tanh()).abs());
        ws = ws.max((cordic_eval(&sig, fx, -24).to_f64() - 1.0 / (1.0 + (-xr).exp())).abs());
    }
    let tol = 2f64.powi(-8);
    report(
        wt <= tol && ws <= tol && tanh.iterations == 15,
        "CORDIC tanh/sigmoid over [-8, 8], 15 iterations",
        format!("max error tanh {wt:.2e}, sigmoid {ws:.2e} (tol {tol:.2e})"),
    );
}

fn end_to_end_linearization() {
    let (pair, reference) = default_dataset().unwrap();
    let split = split_dataset(&pair, [0.6, 0.2, 0.2]).unwrap();
    let pa_cfg = TrainConfig {
        epochs: 200,
        lr: 1e-2,
        ..Default::default()
    };
    let dpd_cfg = TrainConfig {
        epochs: 100,
        lr: 1e-2,
        ..Default::default()
    };
    let pa_model = train_pa_model(&split, GRU, &pa_cfg).unwrap();
    let gain = target_gain(&dpd_cfg, &split.train);
    let sim = PaSimModel::default();
    let x = &split.test.input;
    let start = split.test.start;
    let run = |q: Option<(u32, u32)>| {
        let d = train_dpd(&pa_model.model, &split, GRU, &dpd_cfg, q, gain).unwrap();
        let r = match &d.quant {
            Some(qs) => evaluate(Predistorter::FakeQuant(&d.model, qs), &sim, x, gain, &reference, start).unwrap(),
            None => evaluate(Predistorter::Float(&d.model), &sim, x, gain, &reference, start).unwrap(),
        };
        (d, r)
    };
    let base = evaluate(Predistorter::Bypass, &sim, x, gain, &reference, start).unwrap();
    let (_, fp) = run(None);
    let (d16, w16) = run(Some((16, 16)));
    let (_, w8) = run(Some((8, 8)));
    let img = FxpImage::lower(&d16.model, d16.quant.as_ref().unwrap(), CordicConfig::default()).unwrap();
    let fx = evaluate(Predistorter::FixedPoint(&img), &sim, x, gain, &reference, start).unwrap();
    let acpr = |r: &mpdpd::metrics::MetricsReport| r.acpr_left_dbc.max(r.acpr_right_dbc);
    for (name, r) in [("no DPD", &base), ("FP32", &fp), ("W16A16", &w16), ("W16A16 integer", &fx), ("W8A8", &w8)] {
        println!(
            "     {name:<15} ACPR {:7.2} / {:7.2} dBc  EVM {:7.2} dB  NMSE {:7.2} dB",
            r.acpr_left_dbc, r.acpr_right_dbc, r.evm_db, r.nmse_db
        );
    }
    let acpr_gain_l = base.acpr_left_dbc - fp.acpr_left_dbc;
    let acpr_gain_r = base.acpr_right_dbc - fp.acpr_right_dbc;
    let evm_gain = base.evm_db - fp.evm_db;
    let d_acpr = (w16.acpr_left_dbc - fp.acpr_left_dbc).abs().max((w16.acpr_right_dbc - fp.acpr_right_dbc).abs());
    let d_evm = (w16.evm_db - fp.evm_db).abs();
    let ordered = acpr(&w8) > acpr(&w16) && w8.evm_db > w16.evm_db;
    report(
        acpr_gain_l >= 8.0 && acpr_gain_r >= 8.0 && evm_gain >= 6.0 && d_acpr <= 1.5 && d_evm <= 1.5 && ordered,
        "end-to-end DPD on the synthetic PA",
        format!(
            "FP32 ACPR gain {acpr_gain_l:.2}/{acpr_gain_r:.2} dB (>= 8), EVM gain {evm_gain:.2} dB (>= 6); \
             W16A16 vs FP32 ACPR {d_acpr:.2} dB, EVM {d_evm:.2} dB (<= 1.5); W8A8 worse than W16A16: {ordered}"
        ),
    );
}

fn power_reduction_ordering() {
    let rows = cost_rows(GRU, &Precision::sweep(), &EnergyTable::default(), &CountConfig::default(), FS).unwrap();
    let ordered = rows.windows(2).all(|w| w[0].power_w_7 > w[1].power_w_7);
    let w16 = rows.iter().find(|r| r.precision.tag() == "W16A16").unwrap().reduction;
    let within = (w16 / 2.8 - 1.0).abs() <= 0.25;
    let listing: Vec<String> = rows.iter().map(|r| format!("{} {:.3} W", r.precision.tag(), r.power_w_7)).collect();
    report(
        ordered && within,
        "7 nm power ordering and W16A16 reduction",
        format!("{}; W16A16 reduction {w16:.2}x (2.8x +- 25%)", listing.join(" > ")),
    );
}

fn signal_round_trip() {
    let (x, reference) = generate_ofdm(&OfdmConfig::default(), FS).unwrap();
    let evm = compute_evm(&x, &reference, 0).unwrap().evm_db;
    let psd = compute_psd(&x, 4096, 0.5, Window::Hann).unwrap();
    let rel = (psd.total_power() / x.mean_power() - 1.0).abs();
    report(
        evm <= -60.0 && rel <= 1e-6,
        "generate -> demodulate and PSD Parseval",
        format!("EVM {evm:.1} dB (<= -60), Parseval rel error {rel:.1e} (<= 1e-6)"),
    );
}

/// Runs every criterion (or those whose name contains the first non-flag
/// argument) and prints one PASS/FAIL line each.
fn main() {
    let criteria: [(&str, fn()); 11] = [
        ("power_is_energy_times_sample_rate", power_is_energy_times_sample_rate),
        ("memory_access_count", memory_access_count),
        ("parameter_count", parameter_count),
        ("op_counts_near_reference", op_counts_near_reference),
        ("quantizer_laws", quantizer_laws),
        ("gradients_match_finite_differences", gradients_match_finite_differences),
        ("fixed_point_matches_fake_quant", fixed_point_matches_fake_quant),
        ("cordic_accuracy", cordic_accuracy),
        ("end_to_end_linearization", end_to_end_linearization),
        ("power_reduction_ordering", power_reduction_ordering),
        ("signal_round_trip", signal_round_trip),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let (mut passed, mut failed) = (0, 0);
    for (name, f) in criteria {
        if filter.as_deref().is_some_and(|p| !name.contains(p)) {
            continue;
        }
        REPORTED_FAILURE.store(false, Ordering::SeqCst);
        if std::panic::catch_unwind(f).is_ok() {
            passed += 1;
        } else {
            failed += 1;
            if !REPORTED_FAILURE.load(Ordering::SeqCst) {
                println!("FAIL {name}: aborted before reporting");
            }
        }
    }
    println!("\nacceptance: {passed} passed, {failed} failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
