//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Runs without the libtest harness so the lines are always
//! printed.

use std::fs;
use std::time::Instant;

use dartclean::config::{CliConfig, SERIES_FILE};
use dartclean::{cmd_clean, cmd_synth};
use dartclean_core::detector::{rolling_stats, AnomalyMasks, DetectConfig};
use dartclean_core::matrix::Matrix;
use dartclean_core::metrics::{baseline_rolling_median, residual_stats, rmse, spike_f1, SPIKE_MATCH_TOLERANCE};
use dartclean_core::pipeline::{clean_series, clean_series_observed, CleanConfig, CleanRun};
use dartclean_core::postprocess::{denormalize, gaussian_smooth, SmoothConfig};
use dartclean_core::preprocess::{fill_gaps, make_windows, zscore_normalize, NormStats};
use dartclean_core::refiner::{refine, windows_to_series, RefineConfig};
use dartclean_core::series_io::{save_checkpoint, Checkpoint, RawSeries};
use dartclean_core::synth::{generate, GroundTruth, SpikeSpec, StepSpec, SynthSpec};
use dartclean_core::trainer::{early_stop_check, train, StopDecision, StopReason, StopRules, TrainConfig, TrainLog};
use dartclean_core::vae::{
    composite_loss, kl_divergence, Architecture, LatentState, LossConfig, Mode, ModelParams, SkipSettings,
    TensorKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

// Benchmark training and refinement settings. Library defaults are kept for
// the loss-reduction criterion; the cleaning benchmarks use a shorter warm-up,
// a larger step size and a slow KL ramp, which keeps the latent code
// informative on this 20,000-sample series, and hold detection thresholds
// fixed across refinement iterations.
const BENCH_LR: f64 = 1e-3;
const BENCH_WARMUP: usize = 100;
const BENCH_ANNEAL: usize = 100_000;
const BENCH_THRESHOLD_DECAY: f64 = 1.0;
const BENCH_SEED: u64 = 7;

const GRAD_TOLERANCE: f64 = 1e-4;
const REDUCTION_REQUIRED: f64 = 0.35;
const TRAIN_BUDGET_SECONDS: f64 = 15.0 * 60.0;
const SPIKE_F1_REQUIRED: f64 = 0.90;
const BASELINE_SLACK: f64 = 0.02;
const STEP_TOLERANCE: usize = 240;
const STEP_RMSE_RATIO: f64 = 0.5;
const RESIDUAL_BOUND_M: f64 = 0.5;
const RESIDUAL_FRACTION: f64 = 0.95;
const MAX_RESIDUAL_RELATIVE: f64 = 0.20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn benchmark_spec() -> SynthSpec {
    SynthSpec {
        spikes: SpikeSpec { count: 40, ..SpikeSpec::default() },
        seed: BENCH_SEED,
        ..SynthSpec::default()
    }
}

struct Trained {
    params: ModelParams<f64>,
    stats: NormStats<f64>,
    log: TrainLog,
    seconds: f64,
}

/// Trains the reduced-width model on the spike benchmark series.
fn train_on_benchmark(config: &TrainConfig) -> Trained {
    let truth = generate(&benchmark_spec()).expect("benchmark spec");
    let filled = fill_gaps(&truth.to_raw_series().unwrap()).unwrap();
    let normalized = zscore_normalize(&filled, None).unwrap();
    let x: Vec<f32> = normalized.values.iter().map(|&v| v as f32).collect();
    let batch = make_windows(&x, 48, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = ModelParams::<f32>::init(Architecture::reduced(), SkipSettings::default(), &mut rng).unwrap();
    let start = Instant::now();
    let (trained, log) = train(params, &batch.windows, config).expect("training");
    Trained {
        params: trained.cast(),
        stats: normalized.stats,
        log,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn bench_train_config() -> TrainConfig {
    let mut config = TrainConfig { seed: BENCH_SEED, ..TrainConfig::default() };
    config.schedule.base_lr = BENCH_LR;
    config.schedule.warmup_steps = BENCH_WARMUP;
    config.loss.anneal_steps = BENCH_ANNEAL;
    config
}

fn bench_clean_config() -> CleanConfig {
    let mut config = CleanConfig::default();
    config.refine.threshold_decay = BENCH_THRESHOLD_DECAY;
    config
}

fn clean(model: &Trained, truth: &GroundTruth) -> CleanRun<f64> {
    let raw = truth.to_raw_series().unwrap();
    clean_series(&model.params, &raw, Some(&model.stats), &bench_clean_config()).expect("cleaning")
}

// 1. Gradients against central differences on a 6-5-4 network.

fn toy_model(seed: u64) -> ModelParams<f64> {
    let arch = Architecture {
        window: 6,
        encoder_hidden: vec![5],
        latent_dim: 4,
        decoder_hidden: vec![5],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::init(arch, SkipSettings::default(), &mut rng).unwrap();
    for (_, kind, t) in p.tensors_mut() {
        if kind == TensorKind::Trainable {
            t.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
    }
    p.global_beta = 0.6;
    p
}

fn toy_loss(p: &ModelParams<f64>, x: &Matrix<f64>, noise_seed: u64) -> f64 {
    let fwd = p.forward(x, Mode::TRAIN, &mut ChaCha8Rng::seed_from_u64(noise_seed)).unwrap();
    composite_loss(x, &fwd.reconstruction, &fwd.latent, 2500, &LossConfig::default()).unwrap().0.total
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let p = toy_model(11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = Matrix::from_vec(5, 6, (0..30).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
    let noise_seed = 13;
    let fwd = p.forward(&x, Mode::TRAIN, &mut ChaCha8Rng::seed_from_u64(noise_seed)).unwrap();
    let (_, lg) = composite_loss(&x, &fwd.reconstruction, &fwd.latent, 2500, &LossConfig::default()).unwrap();
    let grads = p.backward(&fwd, &lg).unwrap();
    let analytic: Vec<(String, TensorKind, Vec<f64>)> =
        grads.tensors().into_iter().map(|(n, k, t)| (n, k, t.to_vec())).collect();

    let h = 1e-5;
    let mut probe = p.clone();
    let mut worst = 0.0f64;
    let mut classes = Vec::new();
    for (k, (name, kind, grad)) in analytic.iter().enumerate() {
        if *kind == TensorKind::Running {
            continue;
        }
        classes.push(name.clone());
        for i in 0..grad.len() {
            let original = probe.tensors()[k].2[i];
            probe.tensors_mut()[k].2[i] = original + h;
            let up = toy_loss(&probe, &x, noise_seed);
            probe.tensors_mut()[k].2[i] = original - h;
            let down = toy_loss(&probe, &x, noise_seed);
            probe.tensors_mut()[k].2[i] = original;
            let numeric = (up - down) / (2.0 * h);
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    let covered = ["weight", "bias", "bn.gamma", "bn.shift", "skip_alpha", "global_beta"]
        .iter()
        .all(|c| classes.iter().any(|n| n.ends_with(c)));
    let seconds = start.elapsed().as_secs_f64();
    outcome(
        worst <= GRAD_TOLERANCE && covered && seconds < 10.0,
        format!("worst relative error {worst:.2e} over {} tensors, all classes covered {covered}, {seconds:.2} s", classes.len()),
    )
}

// 2. KL divergence properties.

fn latent(mu: Vec<f64>, logvar: Vec<f64>, d: usize) -> LatentState<f64> {
    let rows = mu.len() / d;
    let mu = Matrix::from_vec(rows, d, mu).unwrap();
    LatentState {
        z: mu.clone(),
        eps: Matrix::zeros(rows, d),
        logvar: Matrix::from_vec(rows, d, logvar).unwrap(),
        mu,
    }
}

fn criterion_kl() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let normal = Normal::new(0.0, 3.0).unwrap();
    let mut min = f64::INFINITY;
    for _ in 0..10_000 {
        let mu: Vec<f64> = (0..16).map(|_| normal.sample(&mut rng)).collect();
        let lv: Vec<f64> = (0..16).map(|_| normal.sample(&mut rng).clamp(-10.0, 10.0)).collect();
        min = min.min(kl_divergence(&latent(mu, lv, 16)));
    }
    let zero = kl_divergence(&latent(vec![0.0; 16], vec![0.0; 16], 16));
    let unit = kl_divergence(&latent(vec![1.0], vec![0.0], 1));
    outcome(
        min >= 0.0 && zero == 0.0 && (unit - 0.5).abs() <= 1e-12,
        format!("min over 10000 draws {min:.3e}, KL(0,0) = {zero}, KL(mu=1, sigma=1) = {unit}"),
    )
}

// 3. Validation reconstruction loss reduction under default training settings.

fn criterion_reduction() -> Outcome {
    let model = train_on_benchmark(&TrainConfig { seed: BENCH_SEED, ..TrainConfig::default() });
    let first = model.log.records[0].validation.recon;
    let best = model.log.records[model.log.best_epoch.unwrap_or(0)].validation.recon;
    let reduction = 1.0 - best / first;
    outcome(
        reduction >= REDUCTION_REQUIRED && model.seconds < TRAIN_BUDGET_SECONDS,
        format!(
            "validation recon {first:.4} -> {best:.4} ({:.1}% reduction) over {} epochs, stop {:?}, {:.0} s",
            100.0 * reduction,
            model.log.records.len(),
            model.log.stop_reason,
            model.seconds
        ),
    )
}

// 4. Spike benchmark against the rolling-median baseline.

fn criterion_spikes(model: &Trained) -> Outcome {
    let truth = generate(&benchmark_spec()).unwrap();
    let run = clean(model, &truth);
    let truth_ranges = truth.spike_ranges();
    let pipeline = spike_f1(&run.output.spike, &truth_ranges, SPIKE_MATCH_TOLERANCE);
    let (_, base_mask) = baseline_rolling_median(&truth.contaminated, &DetectConfig::default()).unwrap();
    let baseline = spike_f1(&base_mask, &truth_ranges, SPIKE_MATCH_TOLERANCE);
    outcome(
        pipeline.f1 >= SPIKE_F1_REQUIRED && pipeline.f1 >= baseline.f1 - BASELINE_SLACK,
        format!(
            "pipeline F1 {:.3} (precision {:.3}, recall {:.3}); rolling-median baseline F1 {:.3} (precision {:.3}, recall {:.3})",
            pipeline.f1, pipeline.precision, pipeline.recall, baseline.f1, baseline.precision, baseline.recall
        ),
    )
}

// 5. Step benchmark.

fn criterion_steps(model: &Trained) -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();
    for seed in [7u64, 8, 9] {
        let spec = SynthSpec {
            steps: StepSpec {
                count: 3,
                magnitude_min: 0.3 * model.stats.std,
                magnitude_max: 1.0 * model.stats.std,
                min_separation: 3001,
                ..StepSpec::default()
            },
            seed,
            ..SynthSpec::default()
        };
        let truth = generate(&spec).unwrap();
        let run = clean(model, &truth);
        let detected: Vec<usize> = run.applied_steps.iter().map(|s| s.index).collect();
        let found = truth
            .steps
            .iter()
            .filter(|t| detected.iter().any(|&d| d.abs_diff(t.index) <= STEP_TOLERANCE))
            .count();
        let (base, _) = baseline_rolling_median(&truth.contaminated, &DetectConfig::default()).unwrap();
        let ours = rmse(&run.output.cleaned, &truth.clean).unwrap();
        let theirs = rmse(&base, &truth.clean).unwrap();
        pass &= found == 3 && ours <= STEP_RMSE_RATIO * theirs;
        details.push(format!(
            "seed {seed}: {found}/3 found ({} applied), RMSE {ours:.4} vs baseline {theirs:.4}",
            detected.len()
        ));
    }
    outcome(pass, details.join("; "))
}

// 6. Residual containment on a meters-scale spike benchmark.

fn criterion_residuals(model: &Trained) -> Outcome {
    let spec = SynthSpec {
        spikes: SpikeSpec {
            count: 40,
            unit_sigma: Some(0.1),
            ..SpikeSpec::default()
        },
        seed: 8,
        ..SynthSpec::default()
    };
    let truth = generate(&spec).unwrap();
    let largest = truth.spikes.iter().map(|s| s.amplitude.abs()).fold(0.0, f64::max);
    let run = clean(model, &truth);
    let stats = residual_stats(&run.output.raw, &run.output.cleaned, RESIDUAL_BOUND_M, 20).unwrap();
    let relative = (stats.max_abs - largest).abs() / largest;
    outcome(
        largest <= 2.5
            && stats.nonzero_fraction_within >= RESIDUAL_FRACTION
            && relative <= MAX_RESIDUAL_RELATIVE,
        format!(
            "{:.2}% of {} nonzero corrections within {RESIDUAL_BOUND_M} m; max residual {:.3} m vs largest spike {largest:.3} m ({:.1}% apart)",
            100.0 * stats.nonzero_fraction_within,
            stats.nonzero,
            stats.max_abs,
            100.0 * relative
        ),
    )
}

// 7. Refinement gating.

fn criterion_gating(model: &Trained) -> Outcome {
    let truth = generate(&benchmark_spec()).unwrap();
    let raw = truth.to_raw_series().unwrap();
    let mut iterations = 0;
    let mut violations = 0usize;
    let mut checked = 0usize;
    clean_series_observed(&model.params, &raw, Some(&model.stats), &bench_clean_config(), |view| {
        iterations += 1;
        for i in 0..view.current.len() {
            if !view.mask[i] {
                checked += 1;
                if view.current[i].to_bits() != view.previous[i].to_bits() {
                    violations += 1;
                }
            }
        }
    })
    .unwrap();

    let filled = fill_gaps(&raw).unwrap();
    let x = zscore_normalize(&filled, Some(model.stats)).unwrap().values;
    let no_refresh = RefineConfig {
        refresh_masks: false,
        ..RefineConfig::default()
    };
    let out = refine(&model.params, &x, &AnomalyMasks::empty(x.len()), &DetectConfig::default(), &no_refresh).unwrap();
    let identity = out.series.iter().zip(&x).all(|(a, b)| a.to_bits() == b.to_bits());
    outcome(
        iterations == 10 && violations == 0 && identity,
        format!("{iterations} iterations, {checked} unmasked sample checks, {violations} changed; empty-mask refinement identical {identity}"),
    )
}

// 8. Oracle equivalences.

fn criterion_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x: Vec<f64> = (0..10_000).map(|_| rng.random_range(-3.0..3.0)).collect();

    let width = 48;
    let stats = rolling_stats(&x, width).unwrap();
    let mut rolling_exact = true;
    let mut std_naive_err = 0.0f64;
    for i in 0..x.len() {
        let start = i.saturating_sub(width / 2).min(x.len() - width);
        let w = &x[start..start + width];
        let mut sorted = w.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = (sorted[width / 2 - 1] + sorted[width / 2]) / 2.0;
        let (_, var) = dartclean_core::scalar::population_moments(w);
        rolling_exact &= median == stats.median[i] && var.sqrt().max(1e-8) == stats.std[i];
        let naive_mean = w.iter().sum::<f64>() / width as f64;
        let naive_var = w.iter().map(|v| (v - naive_mean).powi(2)).sum::<f64>() / width as f64;
        std_naive_err = std_naive_err.max((naive_var.sqrt() - stats.std[i]).abs());
    }

    let smooth = SmoothConfig::default();
    let smoothed = gaussian_smooth(&x, &smooth).unwrap();
    let half = (smooth.window / 2) as isize;
    let mut smooth_err = 0.0f64;
    for i in 0..x.len() as isize {
        let (mut acc, mut norm) = (0.0, 0.0);
        for o in -half..smooth.window as isize - half {
            let j = i + o;
            if j >= 0 && (j as usize) < x.len() {
                let w = (-((o * o) as f64) / (2.0 * smooth.sigma * smooth.sigma)).exp();
                acc += w * x[j as usize];
                norm += w;
            }
        }
        smooth_err = smooth_err.max((acc / norm - smoothed[i as usize]).abs());
    }

    let len = 1000;
    let origins: Vec<usize> = (0..=len - 48).step_by(7).chain(std::iter::once(len - 48)).collect();
    let windows = Matrix::from_vec(
        origins.len(),
        48,
        (0..origins.len() * 48).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap();
    let assembled = windows_to_series(&windows, &origins, len).unwrap();
    let overlap_exact = (0..len).all(|i| {
        let (mut sum, mut count) = (0.0, 0usize);
        for (r, &o) in origins.iter().enumerate() {
            if o <= i && i < o + 48 {
                sum += windows.get(r, i - o);
                count += 1;
            }
        }
        sum / count as f64 == assembled[i]
    });

    let meters: Vec<f64> = x.iter().map(|v| 2584.0 + v).collect();
    let raw = RawSeries::from_values((0..meters.len() as i64).map(|t| 900 * t).collect(), meters.clone()).unwrap();
    let normalized = zscore_normalize(&fill_gaps(&raw).unwrap(), None).unwrap();
    let back = denormalize(&normalized.values, Some(&normalized.stats)).unwrap();
    let round_trip = back.iter().zip(&meters).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    outcome(
        rolling_exact && std_naive_err < 1e-12 && smooth_err <= 1e-12 && overlap_exact && round_trip <= 1e-9,
        format!(
            "rolling median/std exact {rolling_exact} (naive std within {std_naive_err:.1e}); smoothing error {smooth_err:.1e}; overlap-add exact {overlap_exact}; round trip error {round_trip:.1e} m"
        ),
    )
}

// 9. Determinism of cleaning output files and of training.

fn criterion_determinism(model: &Trained) -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let mut config = CliConfig::default();
    config.paths.output = dir.path().to_path_buf();
    config.paths.input = Some(dir.path().join(SERIES_FILE));
    config.synth = benchmark_spec();
    config.clean = bench_clean_config();
    config.seed = Some(BENCH_SEED);
    cmd_synth(&config).unwrap();
    let checkpoint = Checkpoint {
        params: model.params.clone(),
        stats: model.stats,
        hyperparameters: serde_json::Value::Null,
        cadence_seconds: Some(900),
    };
    save_checkpoint(&checkpoint, fs::File::create(config.paths.checkpoint()).unwrap()).unwrap();
    let read = |paths: &[std::path::PathBuf]| paths.iter().map(|p| fs::read(p).unwrap()).collect::<Vec<_>>();
    let first = read(&cmd_clean(&config).unwrap());
    let second = read(&cmd_clean(&config).unwrap());
    let clean_identical = first == second;

    let small = SynthSpec { length: 4000, seed: 3, ..SynthSpec::default() };
    let truth = generate(&small).unwrap();
    let x: Vec<f32> = zscore_normalize(&fill_gaps(&truth.to_raw_series().unwrap()).unwrap(), None)
        .unwrap()
        .values
        .iter()
        .map(|&v| v as f32)
        .collect();
    let batch = make_windows(&x, 48, 1).unwrap();
    let train_once = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ModelParams::<f32>::init(Architecture::reduced(), SkipSettings::default(), &mut rng).unwrap();
        train(p, &batch.windows, &TrainConfig { epochs: 3, seed: 5, ..TrainConfig::default() }).unwrap()
    };
    let (pa, la) = train_once();
    let (pb, lb) = train_once();
    let train_identical = la.numeric_rows() == lb.numeric_rows() && la.stop_reason == lb.stop_reason && pa == pb;
    outcome(
        clean_identical && train_identical,
        format!(
            "clean outputs byte-identical {clean_identical} ({} files); training log and parameters identical {train_identical}",
            first.len()
        ),
    )
}

// 10. Early-stopping rules on constructed traces.

/// Feeds the traces epoch by epoch and returns the first stop and its epoch count.
fn first_stop(val: &[f64], kl: &[f64], grad: &[f64], rules: &StopRules) -> Option<(usize, StopReason)> {
    (1..=val.len()).find_map(|n| match early_stop_check(&val[..n], &kl[..n], grad[n - 1], rules) {
        StopDecision::Stop(r) => Some((n, r)),
        StopDecision::Continue => None,
    })
}

fn criterion_early_stopping() -> Outcome {
    let rules = StopRules::default();
    let mut lines = Vec::new();
    let mut pass = rules.patience == 10 && rules.max_epochs == 1000;

    // Improves for 5 epochs, then flat: the patience rule fires once 10 flat epochs follow.
    let val: Vec<f64> = (0..40).map(|k| 1.0 - 0.1 * k.min(4) as f64).collect();
    let kl: Vec<f64> = (0..40).map(|k| k as f64).collect();
    let grad = vec![1.0; 40];
    let got = first_stop(&val, &kl, &grad, &rules);
    pass &= got == Some((15, StopReason::Patience));
    lines.push((got, "patience"));

    // Still improving, but KL settles after epoch 20 while gradients are small.
    let val: Vec<f64> = (0..40).map(|k| 1.0 - 0.01 * k as f64).collect();
    let kl: Vec<f64> = (0..40).map(|k| if k < 20 { k as f64 } else { 20.0 + 1e-7 * k as f64 }).collect();
    let grad = vec![0.05; 40];
    let got = first_stop(&val, &kl, &grad, &rules);
    pass &= got == Some((22, StopReason::KlStabilized));
    lines.push((got, "kl"));

    // Improving throughout with moving KL: only the cap applies.
    let val: Vec<f64> = (0..1200).map(|k| 10.0 - 1e-3 * k as f64).collect();
    let kl: Vec<f64> = (0..1200).map(|k| k as f64).collect();
    let grad = vec![1.0; 1200];
    let got = first_stop(&val, &kl, &grad, &rules);
    pass &= got == Some((1000, StopReason::EpochLimit));
    lines.push((got, "cap"));

    let names = [
        (StopReason::Patience, "primary"),
        (StopReason::KlStabilized, "secondary"),
        (StopReason::EpochLimit, "epoch limit"),
    ];
    let named = names.iter().all(|(r, word)| r.to_string().contains(word));
    pass &= named;
    let detail = lines
        .iter()
        .map(|(got, label)| match got {
            Some((n, r)) => format!("{label} trace stops after {n} epochs: \"{r}\""),
            None => format!("{label} trace never stops"),
        })
        .collect::<Vec<_>>()
        .join("; ");
    outcome(pass, detail)
}

fn main() {
    let mut all = true;
    let mut report = |id: usize, name: &str, result: Outcome| {
        all &= result.pass;
        println!("[{}] criterion {id:>2} {name}: {}", if result.pass { "PASS" } else { "FAIL" }, result.detail);
    };
    report(1, "gradient correctness", criterion_gradients());
    report(2, "KL properties", criterion_kl());
    report(3, "loss reduction", criterion_reduction());

    let model = train_on_benchmark(&bench_train_config());
    println!(
        "benchmark model: {} epochs, best epoch {:?}, {:.0} s",
        model.log.records.len(),
        model.log.best_epoch,
        model.seconds
    );
    report(4, "spike benchmark", criterion_spikes(&model));
    report(5, "step benchmark", criterion_steps(&model));
    report(6, "residual containment", criterion_residuals(&model));
    report(7, "refinement gating", criterion_gating(&model));
    report(8, "oracle equivalences", criterion_oracles());
    report(9, "determinism", criterion_determinism(&model));
    report(10, "early stopping", criterion_early_stopping());
    if !all {
        std::process::exit(1);
    }
}
