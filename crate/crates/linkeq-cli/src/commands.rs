//! Command implementations. Every command writes only under the configured
//! output directory and finishes with a manifest describing the run.

use std::fmt::Write as _;
use std::path::Path;

use linkeq::baseline::{DfeTaps, FfeTaps};
use linkeq::eye::{
    accumulate_eye, ber, centered_phase_offset, render_eye as render_eye_file, write_eye_csv,
};
use linkeq::io::{
    read_waveform_csv, write_bits_csv, write_eye_rows_csv, write_train_report_csv,
    write_waveform_csv, EyeReportRow,
};
use linkeq::pipeline::{
    baseline_pipeline, fit_baseline as fit_baseline_taps, lstm_pipeline, raw_pipeline,
    windows_from_run, Experiment as Pipeline, PipelineOutput, SimRun,
};
use linkeq::rng::derive_seed;
use linkeq::rom;
use linkeq::signal::Waveform;
use linkeq::train::{init_stack, train as train_model};

use crate::config::{BaselineSpec, Experiment};
use crate::manifest::Manifest;
use crate::CliError;

fn pipeline_of(exp: &Experiment) -> Pipeline {
    Pipeline {
        link: exp.link.clone(),
        channel: exp.channel.clone(),
        noise_sigma: exp.noise_sigma,
    }
}

fn test_run(exp: &Experiment) -> Result<SimRun, CliError> {
    Ok(pipeline_of(exp).simulate(
        exp.test_bits,
        exp.bit_kind,
        exp.seeds.test_bits,
        exp.seeds.test_noise,
    )?)
}

fn resolve_baseline_taps(exp: &Experiment) -> Result<(FfeTaps, DfeTaps, Option<f64>), CliError> {
    match &exp.baseline {
        BaselineSpec::Explicit { ffe, dfe } => Ok((ffe.clone(), dfe.clone(), None)),
        BaselineSpec::Fit {
            n_pre,
            n_post,
            n_dfe,
        } => {
            let (ffe, dfe, residual) =
                fit_baseline_taps(&exp.link, &exp.channel, *n_pre, *n_post, *n_dfe)?;
            Ok((ffe, dfe, Some(residual)))
        }
    }
}

pub fn simulate(exp: &Experiment) -> Result<(), CliError> {
    let run =
        pipeline_of(exp).simulate(exp.test_bits, exp.bit_kind, exp.seeds.bits, exp.seeds.noise)?;

    let mut manifest = Manifest::new("simulate", exp);
    manifest.record_value("latency_ticks", run.latency_ticks);
    manifest.record_value("trim_ticks", run.trim_ticks);

    write_bits_csv(
        &run.tx,
        exp.link.bit_period(),
        exp.out_dir.join("tx_bits.csv"),
    )?;
    manifest.record_output("tx_bits.csv");
    write_waveform_csv(&run.rx, exp.out_dir.join("rx.csv"))?;
    manifest.record_output("rx.csv");
    write_waveform_csv(&run.rx_ticks, exp.out_dir.join("rx_ticks.csv"))?;
    manifest.record_output("rx_ticks.csv");

    let spb = exp.link.samples_per_bit;
    let eye = accumulate_eye(
        &run.rx,
        &exp.link,
        centered_phase_offset(spb, exp.span_ui),
        exp.span_ui,
    )?;
    render_eye_file(&eye, exp.out_dir.join("eye_rx.pgm"))?;
    manifest.record_output("eye_rx.pgm");
    write_eye_csv(&eye, exp.out_dir.join("eye_rx.csv"))?;
    manifest.record_output("eye_rx.csv");

    manifest.write(&exp.out_dir.join("manifest-simulate.txt"))?;
    println!(
        "simulated {} bits -> {}",
        exp.test_bits,
        exp.out_dir.display()
    );
    Ok(())
}

pub fn fit_baseline(exp: &Experiment) -> Result<(), CliError> {
    let (ffe, dfe, residual) = resolve_baseline_taps(exp)?;

    let mut text = String::new();
    let _ = writeln!(text, "# fitted FFE-DFE settings");
    if let Some(residual) = residual {
        let _ = writeln!(text, "# least-squares residual {residual:.6e}");
    }
    let _ = writeln!(text, "[baseline]");
    let _ = writeln!(text, "precursors = {:?}", ffe.precursors);
    let _ = writeln!(text, "main = {}", ffe.main);
    let _ = writeln!(text, "postcursors = {:?}", ffe.postcursors);
    let _ = writeln!(text, "dfe = {:?}", dfe.taps);
    let _ = writeln!(text, "threshold = {}", dfe.threshold);
    std::fs::write(exp.out_dir.join("baseline.toml"), text)?;

    let mut manifest = Manifest::new("fit-baseline", exp);
    manifest.record_output("baseline.toml");
    if let Some(residual) = residual {
        manifest.record_value("ffe_residual", format!("{residual:.6e}"));
    }
    manifest.write(&exp.out_dir.join("manifest-fit-baseline.txt"))?;
    println!(
        "baseline taps -> {}",
        exp.out_dir.join("baseline.toml").display()
    );
    Ok(())
}

pub fn train(exp: &Experiment) -> Result<(), CliError> {
    let pipeline = pipeline_of(exp);
    let train_run = pipeline.simulate(
        exp.train_bits,
        exp.bit_kind,
        exp.seeds.bits,
        exp.seeds.noise,
    )?;
    let valid_run = pipeline.simulate(
        exp.valid_bits,
        exp.bit_kind,
        derive_seed(exp.seeds.bits, 50, 1),
        derive_seed(exp.seeds.noise, 50, 1),
    )?;
    let train_ds = windows_from_run(&train_run, &exp.link)?;
    let valid_ds = windows_from_run(&valid_run, &exp.link)?;

    let m0 = init_stack(
        exp.link.delay_depth,
        &exp.hidden,
        exp.dropout,
        exp.post_fir_len,
        exp.seeds.init,
    )?;
    let report = train_model(&m0, &train_ds, &valid_ds, &exp.training)?;

    rom::save_model(&report.model, exp.out_dir.join("model.rom"))?;
    write_train_report_csv(&report, exp.out_dir.join("train_report.csv"))?;

    let mut manifest = Manifest::new("train", exp);
    manifest.record_output("model.rom");
    manifest.record_output("train_report.csv");
    manifest.record_value("steps", report.step_losses.len());
    manifest.record_value("stop_reason", &report.stop_reason);
    if let Some(best) = report.best_valid_loss {
        manifest.record_value("best_valid_loss", format!("{best:.6e}"));
    }
    manifest.write(&exp.out_dir.join("manifest-train.txt"))?;
    println!(
        "trained {} steps ({}), best validation loss {:.3e} -> {}",
        report.step_losses.len(),
        report.stop_reason,
        report.best_valid_loss.unwrap_or(f64::NAN),
        exp.out_dir.join("model.rom").display()
    );
    Ok(())
}

fn report_row(
    exp: &Experiment,
    name: &str,
    out: &PipelineOutput,
    run: &SimRun,
) -> Result<EyeReportRow, CliError> {
    let (rate, lag) = ber(&run.tx, &out.bits, exp.max_lag_bits)?;
    let report = out.eye_report(&exp.link, exp.span_ui)?;
    Ok(EyeReportRow {
        pipeline: name.to_string(),
        report,
        ber: rate,
        ber_lag: lag,
    })
}

pub fn evaluate(exp: &Experiment, rom_path: &Path) -> Result<(), CliError> {
    let model = rom::load_model(rom_path)?;
    let run = test_run(exp)?;
    let out = lstm_pipeline(&model, &run, &exp.link)?;
    let row = report_row(exp, "lstm", &out, &run)?;

    write_eye_rows_csv(std::slice::from_ref(&row), exp.out_dir.join("eval.csv"))?;
    write_waveform_csv(&out.wave_ticks, exp.out_dir.join("equalized_ticks.csv"))?;
    let eye = out.eye(&exp.link, exp.span_ui)?;
    render_eye_file(&eye, exp.out_dir.join("eye_lstm.pgm"))?;

    let mut manifest = Manifest::new("evaluate", exp);
    manifest.record_value("model", rom_path.display());
    manifest.record_output("eval.csv");
    manifest.record_output("equalized_ticks.csv");
    manifest.record_output("eye_lstm.pgm");
    manifest.record_value("ber", format!("{:.6e}", row.ber));
    manifest.write(&exp.out_dir.join("manifest-evaluate.txt"))?;
    println!(
        "BER {:.3e} (lag {} bits), eye height {:.3} V",
        row.ber, row.ber_lag, row.report.eye_height
    );
    Ok(())
}

pub fn compare(exp: &Experiment, rom_path: &Path) -> Result<(), CliError> {
    let model = rom::load_model(rom_path)?;
    let (ffe, dfe, _) = resolve_baseline_taps(exp)?;
    let run = test_run(exp)?;

    let raw = raw_pipeline(&run, &exp.link)?;
    let base = baseline_pipeline(&ffe, &dfe, &exp.channel, &run, &exp.link)?;
    let lstm = lstm_pipeline(&model, &run, &exp.link)?;

    let rows = vec![
        report_row(exp, "none", &raw, &run)?,
        report_row(exp, "ffe-dfe", &base, &run)?,
        report_row(exp, "lstm", &lstm, &run)?,
    ];
    write_eye_rows_csv(&rows, exp.out_dir.join("compare.csv"))?;

    for (name, out) in [("none", &raw), ("ffe-dfe", &base), ("lstm", &lstm)] {
        let eye = out.eye(&exp.link, exp.span_ui)?;
        render_eye_file(&eye, exp.out_dir.join(format!("eye_{name}.pgm")))?;
    }

    // Waveform overlay at the tick cadence (streams keep their own lags).
    let tpb = exp.link.ticks_per_bit()?;
    let len = raw
        .wave_ticks
        .len()
        .min(base.wave_ticks.len())
        .min(lstm.wave_ticks.len())
        .min(run.tx.len() * tpb);
    let mut overlay = String::from("tick,tx_ideal,raw,ffe_dfe,lstm\n");
    for k in 0..len {
        let _ = writeln!(
            overlay,
            "{k},{},{},{},{}",
            exp.link.level(run.tx[k / tpb]),
            raw.wave_ticks.samples[k],
            base.wave_ticks.samples[k],
            lstm.wave_ticks.samples[k]
        );
    }
    std::fs::write(exp.out_dir.join("overlay.csv"), overlay)?;

    let mut manifest = Manifest::new("compare", exp);
    manifest.record_value("model", rom_path.display());
    for name in [
        "compare.csv",
        "overlay.csv",
        "eye_none.pgm",
        "eye_ffe-dfe.pgm",
        "eye_lstm.pgm",
    ] {
        manifest.record_output(name);
    }
    for row in &rows {
        manifest.record_value(&format!("ber {}", row.pipeline), format!("{:.6e}", row.ber));
    }
    manifest.write(&exp.out_dir.join("manifest-compare.txt"))?;
    for row in &rows {
        println!(
            "{:>8}: BER {:.3e}, eye height {:.3} V, width {:.2} UI, jitter {:.4} UI",
            row.pipeline,
            row.ber,
            row.report.eye_height,
            row.report.eye_width_ui,
            row.report.rms_jitter_ui
        );
    }
    Ok(())
}

pub fn render_eye(exp: &Experiment, input: &Path, output: &Path) -> Result<(), CliError> {
    let w: Waveform = read_waveform_csv(input).map_err(|e| CliError {
        message: format!("{}: {e}", input.display()),
        usage: true,
    })?;
    let ratio = exp.link.bit_period() / w.sample_period;
    let ui = ratio.round() as usize;
    let eye = accumulate_eye(
        &w,
        &exp.link,
        centered_phase_offset(ui.max(1), exp.span_ui),
        exp.span_ui,
    )?;
    render_eye_file(&eye, output)?;
    let grid = output.with_extension("csv");
    write_eye_csv(&eye, &grid)?;

    let mut manifest = Manifest::new("render-eye", exp);
    manifest.record_value("input", input.display());
    manifest.record_output(&output.display().to_string());
    manifest.record_output(&grid.display().to_string());
    manifest.write(&exp.out_dir.join("manifest-render-eye.txt"))?;
    println!("eye -> {}", output.display());
    Ok(())
}
