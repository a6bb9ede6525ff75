//! Energy and CO2 accounting arithmetic for training runs. Energy comes
//! from a user-configured power model (fixed average watts, or integrated
//! samples); emissions are energy times a carbon intensity.

use alloc::format;
use alloc::string::String;
use core::fmt;

use serde::Serialize;

/// Grams of CO2 per kWh. Back-derived from the reference accounting row
/// (317.87 g over 1.08 kWh); override through configuration.
pub const DEFAULT_INTENSITY_G_PER_KWH: f64 = 294.32;

pub const JOULES_PER_KWH: f64 = 3.6e6;

#[derive(Debug, Clone, PartialEq)]
pub enum CostError {
    NegativeInput { what: &'static str },
    NonMonotonicSamples,
    NoSamples,
}

impl fmt::Display for CostError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostError::NegativeInput { what } => write!(f, "{what} must be nonnegative"),
            CostError::NonMonotonicSamples => {
                write!(f, "power samples must have non-decreasing timestamps")
            }
            CostError::NoSamples => write!(f, "no power samples recorded"),
        }
    }
}

/// How the energy figure was produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerModel {
    AvgWatts(f64),
    Sampled { samples: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub duration_s: f64,
    pub energy_kwh: f64,
    pub co2_g: f64,
    pub intensity_g_per_kwh: f64,
    pub power_model: PowerModel,
}

/// kWh from a constant power draw: watts × seconds / 3.6e6.
pub fn estimate_energy(duration_s: f64, avg_power_watts: f64) -> Result<f64, CostError> {
    if duration_s < 0.0 {
        return Err(CostError::NegativeInput { what: "duration" });
    }
    if avg_power_watts < 0.0 {
        return Err(CostError::NegativeInput { what: "power" });
    }
    Ok(avg_power_watts * duration_s / JOULES_PER_KWH)
}

/// Exact product; the emissions invariant `co2 == energy × intensity` is
/// this function.
pub fn co2_from_energy(kwh: f64, intensity_g_per_kwh: f64) -> Result<f64, CostError> {
    if kwh < 0.0 {
        return Err(CostError::NegativeInput { what: "energy" });
    }
    if intensity_g_per_kwh < 0.0 {
        return Err(CostError::NegativeInput { what: "intensity" });
    }
    Ok(kwh * intensity_g_per_kwh)
}

/// Trapezoid integration over `(seconds, watts)` samples, in kWh.
pub fn integrate_power(samples: &[(f64, f64)]) -> Result<f64, CostError> {
    if samples.is_empty() {
        return Err(CostError::NoSamples);
    }
    let mut joules = 0.0;
    for pair in samples.windows(2) {
        let (t0, w0) = pair[0];
        let (t1, w1) = pair[1];
        if t1 < t0 {
            return Err(CostError::NonMonotonicSamples);
        }
        if w0 < 0.0 || w1 < 0.0 {
            return Err(CostError::NegativeInput { what: "power" });
        }
        joules += (t1 - t0) * (w0 + w1) / 2.0;
    }
    Ok(joules / JOULES_PER_KWH)
}

impl CostReport {
    pub fn from_fixed_power(
        duration_s: f64,
        avg_power_watts: f64,
        intensity_g_per_kwh: f64,
    ) -> Result<Self, CostError> {
        let energy_kwh = estimate_energy(duration_s, avg_power_watts)?;
        Ok(CostReport {
            duration_s,
            energy_kwh,
            co2_g: co2_from_energy(energy_kwh, intensity_g_per_kwh)?,
            intensity_g_per_kwh,
            power_model: PowerModel::AvgWatts(avg_power_watts),
        })
    }

    pub fn from_samples(
        samples: &[(f64, f64)],
        intensity_g_per_kwh: f64,
    ) -> Result<Self, CostError> {
        let energy_kwh = integrate_power(samples)?;
        let duration_s = samples.last().unwrap().0 - samples.first().unwrap().0;
        Ok(CostReport {
            duration_s,
            energy_kwh,
            co2_g: co2_from_energy(energy_kwh, intensity_g_per_kwh)?,
            intensity_g_per_kwh,
            power_model: PowerModel::Sampled {
                samples: samples.len(),
            },
        })
    }

    /// `Time (s) | Energy (kWh) | CO2 (g)` row.
    pub fn table_row(&self) -> String {
        format!(
            "{:>10.0} {:>12.2} {:>10.2}",
            self.duration_s, self.energy_kwh, self.co2_g
        )
    }

    pub fn table_header() -> String {
        format!("{:>10} {:>12} {:>10}", "Time (s)", "Energy (kWh)", "CO2 (g)")
    }
}

/// Published fine-tuning accounting rows the arithmetic must reproduce,
/// labeled by parameter count: (label, seconds, kWh, grams CO2). The first
/// row pins the default intensity.
pub const REFERENCE_COST_ROWS: [(&str, f64, f64, f64); 8] = [
    ("mono-base-110m", 7207.0, 1.08, 317.87),
    ("mono-large-335m", 19445.0, 3.10, 914.27),
    ("compact-12m", 3816.0, 0.57, 167.80),
    ("multi-base-278m", 7676.0, 1.14, 337.70),
    ("multi-large-559m", 21137.0, 3.30, 973.29),
    ("multi-base-177m", 7333.0, 1.07, 317.02),
    ("multi-small-111m", 7190.0, 1.09, 321.42),
    ("multi-distil-134m", 6466.0, 1.06, 314.17),
];
