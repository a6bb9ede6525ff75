//! Wall-clock cost tracking around a unit of work: fixed average watts, or
//! a power sampler polled from a dedicated thread and integrated by
//! trapezoid.

use std::process::Command;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use anyhow::{anyhow, Result};
use lrqa_core::cost::{CostReport, PowerModel};

use crate::config::CostConfig;

/// Instantaneous watts as a function of elapsed seconds. Must be
/// thread-safe: the sampler thread polls it while the run executes.
pub type SamplerHook = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub enum PowerSource {
    Fixed(f64),
    Sampled { hook: SamplerHook, cadence_s: f64 },
}

impl PowerSource {
    pub fn from_config(cost: &CostConfig) -> Self {
        match &cost.power.sampler_cmd {
            Some(cmd) => {
                let cmd = cmd.clone();
                PowerSource::Sampled {
                    hook: Arc::new(move |_elapsed| sample_command(&cmd).unwrap_or(0.0)),
                    cadence_s: cost.power.sampler_cadence_s,
                }
            }
            None => PowerSource::Fixed(cost.power.avg_watts),
        }
    }
}

/// Run the sampler command once and parse the first float on stdout.
fn sample_command(cmd: &str) -> Result<f64> {
    let output = Command::new("sh").arg("-c").arg(cmd).output()?;
    let text = String::from_utf8_lossy(&output.stdout);
    text.split_whitespace()
        .next()
        .and_then(|w| w.parse::<f64>().ok())
        .ok_or_else(|| anyhow!("sampler command produced no number: {text:?}"))
}

/// Wrap a unit of work, measure its wall clock, and integrate power into a
/// `CostReport`. The report is produced even when the run's result is an
/// error (pass a `Result` through as `T`).
pub fn track<T>(source: &PowerSource, intensity_g_per_kwh: f64, run: impl FnOnce() -> T) -> (T, CostReport) {
    match source {
        PowerSource::Fixed(watts) => {
            let start = Instant::now();
            let value = run();
            let duration_s = start.elapsed().as_secs_f64();
            let report = CostReport::from_fixed_power(duration_s, *watts, intensity_g_per_kwh)
                .expect("nonnegative tracked inputs");
            (value, report)
        }
        PowerSource::Sampled { hook, cadence_s } => {
            let stop = Arc::new(AtomicBool::new(false));
            let samples = Arc::new(Mutex::new(Vec::<(f64, f64)>::new()));
            let start = Instant::now();
            let sampler = {
                let stop = Arc::clone(&stop);
                let samples = Arc::clone(&samples);
                let hook = Arc::clone(hook);
                let cadence = Duration::from_secs_f64(cadence_s.max(1e-4));
                std::thread::spawn(move || {
                    samples.lock().unwrap().push((0.0, hook(0.0)));
                    while !stop.load(Ordering::Relaxed) {
                        std::thread::sleep(cadence);
                        let t = start.elapsed().as_secs_f64();
                        samples.lock().unwrap().push((t, hook(t)));
                    }
                })
            };
            let value = run();
            let duration_s = start.elapsed().as_secs_f64();
            stop.store(true, Ordering::Relaxed);
            let _ = sampler.join();
            let mut samples = Arc::try_unwrap(samples)
                .expect("sampler thread joined")
                .into_inner()
                .unwrap();
            // the sampler may slip one poll past the end of the run; clamp
            // the series to the measured window and close it at the boundary
            samples.retain(|(t, _)| *t < duration_s);
            samples.push((duration_s, hook(duration_s)));
            let report = CostReport::from_samples(&samples, intensity_g_per_kwh)
                .expect("monotone samples by construction");
            (value, report)
        }
    }
}

/// Timing fields live apart from the deterministic artifacts so reruns stay
/// byte-comparable.
#[derive(serde::Serialize)]
pub struct CostFile {
    pub report: CostReport,
    pub epoch_wall_clock_s: Vec<f64>,
}

pub fn power_model_label(model: &PowerModel) -> String {
    match model {
        PowerModel::AvgWatts(w) => format!("fixed {w} W (configured estimate)"),
        PowerModel::Sampled { samples } => format!("sampled power, {samples} samples"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_power_energy_consistent_with_duration() {
        let source = PowerSource::Fixed(100.0);
        let ((), report) = track(&source, 294.32, || {
            std::thread::sleep(Duration::from_millis(50));
        });
        assert!(report.duration_s >= 0.05);
        let expected = 100.0 * report.duration_s / 3.6e6;
        assert_eq!(report.energy_kwh, expected);
        assert_eq!(report.co2_g, report.energy_kwh * 294.32);
    }

    #[test]
    fn sequential_runs_add_up_within_one_percent() {
        let source = PowerSource::Fixed(50.0);
        let outer = Instant::now();
        let ((), r1) = track(&source, 294.32, || {
            std::thread::sleep(Duration::from_millis(300));
        });
        let ((), r2) = track(&source, 294.32, || {
            std::thread::sleep(Duration::from_millis(300));
        });
        let outer_s = outer.elapsed().as_secs_f64();
        let inner_s = r1.duration_s + r2.duration_s;
        assert!(
            (outer_s - inner_s).abs() / outer_s < 0.01,
            "outer {outer_s}, inner {inner_s}"
        );
    }

    #[test]
    fn triangle_profile_integral_matches_analytic_area() {
        // 0 -> 200 W at 0.1 s -> 0 W at 0.2 s, zero afterwards: 20 J total
        let hook: SamplerHook = Arc::new(|t| {
            if t < 0.1 {
                2000.0 * t
            } else if t < 0.2 {
                2000.0 * (0.2 - t)
            } else {
                0.0
            }
        });
        let source = PowerSource::Sampled {
            hook,
            cadence_s: 0.002,
        };
        let ((), report) = track(&source, 294.32, || {
            std::thread::sleep(Duration::from_millis(250));
        });
        let analytic_kwh = 20.0 / 3.6e6;
        let rel = (report.energy_kwh - analytic_kwh).abs() / analytic_kwh;
        assert!(rel < 0.01, "trapezoid off by {rel}: {} kWh", report.energy_kwh);
        assert!(matches!(report.power_model, PowerModel::Sampled { .. }));
    }

    #[test]
    fn failing_run_still_yields_a_report() {
        let source = PowerSource::Fixed(75.0);
        let (result, report) = track(&source, 294.32, || -> Result<(), String> {
            std::thread::sleep(Duration::from_millis(10));
            Err("boom".into())
        });
        assert!(result.is_err());
        assert!(report.duration_s > 0.0);
        assert!(report.energy_kwh > 0.0);
    }
}
