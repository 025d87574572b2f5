use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mpdpd::energy::{cost_rows, format_cost_table, CountConfig, EnergyTable, Precision};
use mpdpd::fxp::{lower_checkpoint, CordicConfig, FxpImage};
use mpdpd::metrics::{compute_acpr, compute_evm, compute_nmse, compute_psd, evaluate_signal, ChannelPlan, MetricsReport, Window, DEFAULT_OVERLAP, DEFAULT_SEGMENT};
use mpdpd::nn::{Checkpoint, GruDims, GruModel};
use mpdpd::pa::{simulate_pa, NoiseSpec, PaSimModel};
use mpdpd::quant::QuantState;
use mpdpd::signal::{generate_ofdm, load_dataset, save_dataset, sidecar_path, split_dataset, OfdmReference, SignalPair};
use mpdpd::train::{ls_gain, predistort, synthetic_dataset, target_gain, train_dpd, train_pa_model, Predistorter, TrainOutcome};
use num_complex::Complex64;

use crate::config::RunConfig;
use crate::error::{config, data, Result};
use crate::output::OutputDir;
use crate::{Cli, Command, TrainArgs};

/// Model input width: I, Q, |x| and |x|^3.
const INPUT_DIM: usize = 4;

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = cli.global.out {
        cfg.output_dir = o;
    }
    if let Some(s) = cli.global.seed {
        cfg.seed = Some(s);
    }
    match cli.command {
        Command::GenSignal {
            n_symbols,
            n_channels,
            qam_order,
        } => {
            let o = &mut cfg.signal.ofdm;
            o.n_symbols = n_symbols.unwrap_or(o.n_symbols);
            o.n_channels = n_channels.unwrap_or(o.n_channels);
            o.qam_order = qam_order.unwrap_or(o.qam_order);
            gen_signal(&prepare(cfg)?)
        }
        Command::Simulate { input, pa, noise_dbc } => {
            cfg.signal.dataset = input.or(cfg.signal.dataset);
            cfg.signal.pa_coefficients = pa.or(cfg.signal.pa_coefficients);
            cfg.signal.noise_dbc = noise_dbc.or(cfg.signal.noise_dbc);
            simulate(&prepare(cfg)?)
        }
        Command::TrainPa { train } => {
            apply_train_args(&mut cfg, &train, true);
            train_pa(&prepare(cfg)?)
        }
        Command::TrainDpd {
            train,
            precision,
            pa_checkpoint,
        } => {
            apply_train_args(&mut cfg, &train, false);
            if let Some(p) = precision {
                cfg.quant.precision = p;
            }
            cfg.model.pa_checkpoint = pa_checkpoint.or(cfg.model.pa_checkpoint);
            train_dpd_cmd(&prepare(cfg)?)
        }
        Command::Infer {
            checkpoint,
            fixed_point,
            image,
            float,
            input,
        } => {
            let cfg = prepare(cfg)?;
            let model = match (image, checkpoint) {
                (Some(img), _) => Loaded::Image(FxpImage::load(&img)?),
                (None, Some(ck)) => Loaded::Checkpoint(load_checkpoint(&ck)?),
                (None, None) => return Err(config("infer: --checkpoint or --image is required")),
            };
            infer(&cfg, model, fixed_point, float, &input)
        }
        Command::Metrics {
            received,
            reference,
            start,
            ideal,
        } => {
            cfg.signal.reference = reference.or(cfg.signal.reference);
            metrics(&prepare(cfg)?, &received, start, ideal.as_deref())
        }
        Command::Cost {
            checkpoint,
            precision,
            hidden_dim,
            table,
        } => {
            if let Some(ck) = &checkpoint {
                let ck = load_checkpoint(ck)?;
                cfg.model.hidden_dim = ck.dims.hidden_dim;
                cfg.quant.precision = ck.quant.as_ref().map_or("fp32".into(), QuantState::tag);
            }
            if let Some(p) = precision {
                cfg.quant.precision = p;
            }
            cfg.model.hidden_dim = hidden_dim.unwrap_or(cfg.model.hidden_dim);
            cfg.energy.table = table.or(cfg.energy.table);
            cost(&prepare(cfg)?)
        }
        Command::Sweep {
            train,
            pa_checkpoint,
            precisions,
        } => {
            apply_train_args(&mut cfg, &train, false);
            cfg.model.pa_checkpoint = pa_checkpoint.or(cfg.model.pa_checkpoint);
            let cfg = prepare(cfg)?;
            let list = match precisions {
                Some(v) => v
                    .iter()
                    .map(|s| Precision::parse(s).ok_or_else(|| config(format!("--precisions: bad entry {s:?}"))))
                    .collect::<Result<Vec<_>>>()?,
                None => Precision::sweep(),
            };
            sweep(&cfg, &list)
        }
    }
}

fn apply_train_args(cfg: &mut RunConfig, a: &TrainArgs, pa_stage: bool) {
    cfg.signal.dataset = a.dataset.clone().or(cfg.signal.dataset.take());
    cfg.model.hidden_dim = a.hidden_dim.unwrap_or(cfg.model.hidden_dim);
    let t = if pa_stage {
        cfg.train_pa.get_or_insert_with(|| cfg.train.clone())
    } else {
        &mut cfg.train
    };
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.lr = a.lr.unwrap_or(t.lr);
    t.threads = a.threads.unwrap_or(t.threads);
}

fn prepare(mut cfg: RunConfig) -> Result<RunConfig> {
    cfg.apply_seed();
    cfg.validate()?;
    Ok(cfg)
}

fn dims(cfg: &RunConfig) -> GruDims {
    GruDims::new(INPUT_DIM, cfg.model.hidden_dim)
}

fn pa_sim(cfg: &RunConfig) -> Result<PaSimModel> {
    Ok(match &cfg.signal.pa_coefficients {
        Some(p) => PaSimModel::load_csv(p)?,
        None => PaSimModel::default(),
    })
}

fn load_checkpoint(p: &Path) -> Result<Checkpoint> {
    let ck = Checkpoint::load(p)?;
    ck.model()?;
    Ok(ck)
}

fn energy_table(cfg: &RunConfig) -> Result<EnergyTable> {
    Ok(match &cfg.energy.table {
        Some(p) => EnergyTable::load_csv(p)?,
        None => EnergyTable::default(),
    })
}

fn reference(cfg: &RunConfig) -> Result<Option<OfdmReference>> {
    cfg.signal.reference.as_deref().map(OfdmReference::load_json).transpose().map_err(Into::into)
}

/// Training data: the configured dataset, or the OFDM block through the PA.
/// The sample rate of a loaded dataset replaces `sample_rate_hz`.
fn training_data(cfg: &mut RunConfig) -> Result<(SignalPair, Option<OfdmReference>)> {
    match cfg.signal.dataset.clone() {
        Some(p) => {
            let ds = load_dataset(&p)?;
            let pair = ds
                .pair()
                .ok_or_else(|| data(format!("{}: no PA output columns; run `simulate` first", p.display())))?;
            cfg.sample_rate_hz = pair.input.sample_rate_hz();
            Ok((pair, reference(cfg)?))
        }
        None => {
            let (pair, r) = synthetic_dataset(&cfg.signal.ofdm, cfg.sample_rate_hz, cfg.signal.drive, &pa_sim(cfg)?)?;
            Ok((pair, Some(r)))
        }
    }
}

fn plan(cfg: &RunConfig, reference: &OfdmReference) -> ChannelPlan {
    cfg.channel_plan.unwrap_or_else(|| ChannelPlan::for_ofdm(&reference.config))
}

/// Claims a dataset CSV and its sidecar.
fn claim_dataset(out: &mut OutputDir, name: &str) -> PathBuf {
    let csv = out.claim(name);
    let side = sidecar_path(&csv);
    out.claim(&side.file_name().unwrap().to_string_lossy());
    csv
}

fn gen_signal(cfg: &RunConfig) -> Result<()> {
    let (x, r) = generate_ofdm(&cfg.signal.ofdm, cfg.sample_rate_hz)?;
    let x = x.scaled(Complex64::new(cfg.signal.drive, 0.0));
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let csv = claim_dataset(&mut out, "signal.csv");
    save_dataset(&csv, &x, None)?;
    r.save_json(&out.claim("reference.json"))?;
    out.write("config.toml", cfg.snapshot())?;
    println!("wrote {} samples to {}", x.len(), csv.display());
    out.commit();
    Ok(())
}

fn simulate(cfg: &RunConfig) -> Result<()> {
    let input = cfg
        .signal
        .dataset
        .as_ref()
        .ok_or_else(|| config("simulate: --input or signal.dataset is required"))?;
    let x = load_dataset(input)?.input;
    let noise = cfg.signal.noise_dbc.map(|level_dbc| NoiseSpec {
        level_dbc,
        seed: cfg.seed.unwrap_or(cfg.train.seed),
    });
    let y = simulate_pa(&pa_sim(cfg)?, &x, noise)?;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let csv = claim_dataset(&mut out, "dataset.csv");
    save_dataset(&csv, &x, Some(&y))?;
    out.write("config.toml", cfg.snapshot())?;
    println!("wrote {}", csv.display());
    out.commit();
    Ok(())
}

fn fit_pa(cfg: &RunConfig, pair: &SignalPair) -> Result<TrainOutcome> {
    let split = split_dataset(pair, cfg.signal.split)?;
    let o = train_pa_model(&split, dims(cfg), cfg.pa_train())?;
    Ok(o)
}

fn pa_checkpoint(o: &TrainOutcome, cfg: &RunConfig) -> Checkpoint {
    o.checkpoint()
        .with_attribute("role", "pa")
        .with_attribute("seed", cfg.pa_train().seed)
}

fn train_pa(cfg: &RunConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    let (pair, _) = training_data(&mut cfg)?;
    let o = fit_pa(&cfg, &pair)?;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    out.write("config.toml", cfg.snapshot())?;
    out.write("loss_history.csv", o.history_csv())?;
    pa_checkpoint(&o, &cfg).save(&out.claim("checkpoint.json"))?;
    println!(
        "PA model: best epoch {} val loss {:.6e} ({} epochs run)",
        o.best_epoch,
        o.best_val_loss,
        o.history.len()
    );
    out.commit();
    Ok(())
}

/// Loads the configured PA model or trains one on `pair`.
fn pa_model(cfg: &RunConfig, pair: &SignalPair) -> Result<(GruModel, Option<Checkpoint>)> {
    match &cfg.model.pa_checkpoint {
        Some(p) => Ok((load_checkpoint(p)?.model()?, None)),
        None => {
            let o = fit_pa(cfg, pair)?;
            let ck = pa_checkpoint(&o, cfg);
            Ok((o.model, Some(ck)))
        }
    }
}

fn widths(p: Precision) -> Option<(u32, u32)> {
    match p {
        Precision::Fp32 => None,
        Precision::Mixed { weight_bits, act_bits } => Some((weight_bits, act_bits)),
    }
}

struct DpdRun {
    outcome: TrainOutcome,
    checkpoint: Checkpoint,
    metrics: Option<MetricsReport>,
}

fn fit_dpd(cfg: &RunConfig, pair: &SignalPair, r: Option<&OfdmReference>, pa: &GruModel, precision: Precision) -> Result<DpdRun> {
    let split = split_dataset(pair, cfg.signal.split)?;
    let gain = target_gain(&cfg.train, &split.train);
    let outcome = train_dpd(pa, &split, dims(cfg), &cfg.train, widths(precision), gain)?;
    let checkpoint = outcome
        .checkpoint()
        .with_attribute("role", "dpd")
        .with_attribute("precision", precision.tag())
        .with_attribute("seed", cfg.train.seed)
        .with_attribute("target_gain_re", gain.re)
        .with_attribute("target_gain_im", gain.im);
    let metrics = match r {
        Some(r) => {
            let dpd = match &outcome.quant {
                Some(q) => Predistorter::FakeQuant(&outcome.model, q),
                None => Predistorter::Float(&outcome.model),
            };
            let x = &split.test.input;
            let u = predistort(dpd, x)?;
            let y = simulate_pa(&pa_sim(cfg)?, &u, None)?;
            let ideal: Vec<Complex64> = x.samples().iter().map(|&v| gain * v).collect();
            Some(evaluate_signal(&y, &ideal, r, split.test.start, &plan(cfg, r))?)
        }
        None => None,
    };
    Ok(DpdRun {
        outcome,
        checkpoint,
        metrics,
    })
}

fn train_dpd_cmd(cfg: &RunConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    let precision = cfg.precision()?;
    let (pair, r) = training_data(&mut cfg)?;
    let (pa, pa_ck) = pa_model(&cfg, &pair)?;
    let run = fit_dpd(&cfg, &pair, r.as_ref(), &pa, precision)?;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    out.write("config.toml", cfg.snapshot())?;
    out.write("loss_history.csv", run.outcome.history_csv())?;
    run.checkpoint.save(&out.claim("checkpoint.json"))?;
    if let Some(ck) = pa_ck {
        ck.save(&out.claim("pa_checkpoint.json"))?;
    }
    if run.outcome.quant.is_some() {
        lower_checkpoint(&run.checkpoint, CordicConfig::default())?.save(&out.claim("fxp_image.json"))?;
    }
    match &run.metrics {
        Some(m) => {
            out.write("metrics.txt", m.to_text())?;
            print!("{}", m.to_text());
        }
        None => println!("no reference symbols configured; metrics skipped"),
    }
    out.commit();
    Ok(())
}

enum Loaded {
    Checkpoint(Checkpoint),
    Image(FxpImage),
}

fn infer(cfg: &RunConfig, model: Loaded, fixed_point: bool, float: bool, input: &Path) -> Result<()> {
    let x = load_dataset(input)?.input;
    let u = match model {
        Loaded::Image(img) => predistort(Predistorter::FixedPoint(&img), &x)?,
        Loaded::Checkpoint(ck) if fixed_point => {
            let img = lower_checkpoint(&ck, CordicConfig::default())?;
            predistort(Predistorter::FixedPoint(&img), &x)?
        }
        Loaded::Checkpoint(ck) => {
            let m = ck.model()?;
            match (&ck.quant, float) {
                (Some(q), false) => predistort(Predistorter::FakeQuant(&m, q), &x)?,
                _ => predistort(Predistorter::Float(&m), &x)?,
            }
        }
    };
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let csv = claim_dataset(&mut out, "predistorted.csv");
    save_dataset(&csv, &u, None)?;
    out.write("config.toml", cfg.snapshot())?;
    println!("wrote {} samples to {}", u.len(), csv.display());
    out.commit();
    Ok(())
}

fn metrics(cfg: &RunConfig, received: &Path, start: usize, ideal: Option<&Path>) -> Result<()> {
    let r = reference(cfg)?.ok_or_else(|| config("metrics: --reference or signal.reference is required"))?;
    let ds = load_dataset(received)?;
    let y = ds.output.unwrap_or(ds.input);
    let ideal: Vec<Complex64> = match ideal {
        Some(p) => load_dataset(p)?.input.into_samples(),
        None => {
            // clean frame over the overlap, scaled by the least-squares gain
            let w = r.waveform();
            let n = y.len().min(w.len().saturating_sub(start));
            if n == 0 {
                return Err(data(format!("--start {start} is past the reference frame")));
            }
            let clean = &w[start..start + n];
            let g = ls_gain(clean, &y.samples()[..n]);
            clean.iter().map(|&v| g * v).collect()
        }
    };
    let n = ideal.len().min(y.len());
    let seg = DEFAULT_SEGMENT.min(y.len());
    let psd = compute_psd(&y, seg, DEFAULT_OVERLAP, Window::Hann)?;
    let acpr = compute_acpr(&psd, &plan(cfg, &r))?;
    let evm = compute_evm(&y, &r, start)?;
    let nmse = compute_nmse(&y.samples()[..n], &ideal[..n])?;
    let report = MetricsReport {
        acpr_left_dbc: acpr.left_dbc,
        acpr_right_dbc: acpr.right_dbc,
        acpr_floor_limited: acpr.floor_limited,
        evm_db: evm.evm_db,
        nmse_db: nmse,
        psd: psd.db_pairs(),
    };
    let mut out = OutputDir::create(&cfg.output_dir)?;
    out.write("metrics.txt", report.to_text())?;
    out.write("psd.csv", psd.to_csv())?;
    out.write("constellation.csv", evm.constellation_csv())?;
    out.write("config.toml", cfg.snapshot())?;
    print!("{}", report.to_text());
    out.commit();
    Ok(())
}

fn cost(cfg: &RunConfig) -> Result<()> {
    let rows = cost_rows(dims(cfg), &[cfg.precision()?], &energy_table(cfg)?, &CountConfig::default(), cfg.sample_rate_hz)?;
    let table = format_cost_table(&rows);
    let mut out = OutputDir::create(&cfg.output_dir)?;
    out.write("cost.txt", &table)?;
    out.write("config.toml", cfg.snapshot())?;
    print!("{table}");
    out.commit();
    Ok(())
}

pub const SWEEP_HEADER: &str =
    "precision,acpr_left_dbc,acpr_right_dbc,evm_db,nmse_db,muls,adds,mems,energy_nj_45,energy_nj_7,power_w_7";

fn sweep(cfg: &RunConfig, precisions: &[Precision]) -> Result<()> {
    let mut cfg = cfg.clone();
    let (pair, r) = training_data(&mut cfg)?;
    let r = r.ok_or_else(|| config("sweep: reference symbols are required (signal.reference)"))?;
    let (pa, pa_ck) = pa_model(&cfg, &pair)?;
    let costs = cost_rows(dims(&cfg), precisions, &energy_table(&cfg)?, &CountConfig::default(), cfg.sample_rate_hz)?;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    out.write("config.toml", cfg.snapshot())?;
    if let Some(ck) = pa_ck {
        ck.save(&out.claim("pa_checkpoint.json"))?;
    }
    let mut csv = format!("{SWEEP_HEADER}\n");
    for (&p, c) in precisions.iter().zip(&costs) {
        let run = fit_dpd(&cfg, &pair, Some(&r), &pa, p)?;
        let m = run.metrics.expect("reference present");
        if !m.is_finite() {
            return Err(crate::error::CliError::Numeric(format!("{}: non-finite metrics", p.tag())));
        }
        run.checkpoint.save(&out.claim(&format!("checkpoint_{}.json", p.tag())))?;
        writeln!(
            csv,
            "{},{:.4},{:.4},{:.4},{:.4},{},{},{},{:.4},{:.4},{:.6}",
            p.tag(),
            m.acpr_left_dbc,
            m.acpr_right_dbc,
            m.evm_db,
            m.nmse_db,
            c.muls,
            c.adds,
            c.mems,
            c.energy_nj_45,
            c.energy_nj_7,
            c.power_w_7
        )
        .unwrap();
        eprintln!("{}: ACPR {:.2}/{:.2} dBc, EVM {:.2} dB", p.tag(), m.acpr_left_dbc, m.acpr_right_dbc, m.evm_db);
    }
    let path: PathBuf = out.write("sweep.csv", &csv)?;
    print!("{csv}");
    println!("wrote {}", path.display());
    out.commit();
    Ok(())
}
