//! Pseudo-random reference trajectories for the tracking experiment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEAD_IN: f64 = 2.0;
pub const DEFAULT_DURATION: f64 = 25.0;

/// Difficulty mix, chosen from `seed % 3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileStyle {
    /// Gentle drifts plus one short fast segment.
    Slow,
    /// Contains a 90 → 30 drop in 2.5 s.
    FastDrop,
    /// Several brisk changes.
    Mixed,
}

impl ProfileStyle {
    pub fn for_seed(seed: u64) -> Self {
        match seed % 3 {
            1 => ProfileStyle::Slow,
            2 => ProfileStyle::FastDrop,
            _ => ProfileStyle::Mixed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceProfile {
    pub label: String,
    pub seed: u64,
    pub style: ProfileStyle,
    pub duration: f64,
    pub rate_hz: f64,
    /// `(t, value)` knots of the cubic after the lead-in.
    pub knots: Vec<(f64, f64)>,
    /// Knot derivatives, units/s.
    slopes: Vec<f64>,
    /// `(t, value)` at the sample rate, `t` in `[0, duration)`.
    pub samples: Vec<(f64, f64)>,
}

/// Monotone (Fritsch–Butland) knot slopes; zero at the first knot so the
/// curve leaves the flat lead-in with C¹ continuity.
fn monotone_slopes(knots: &[(f64, f64)]) -> Vec<f64> {
    let n = knots.len();
    let h: Vec<f64> = knots.windows(2).map(|w| w[1].0 - w[0].0).collect();
    let d: Vec<f64> = knots.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
    let mut m = vec![0.0; n];
    for k in 1..n - 1 {
        if d[k - 1] * d[k] > 0.0 {
            let (h0, h1) = (h[k - 1], h[k]);
            m[k] = 3.0 * (h0 + h1) / ((2.0 * h1 + h0) / d[k - 1] + (h1 + 2.0 * h0) / d[k]);
        }
    }
    m[n - 1] = d[n - 2];
    m
}

impl ReferenceProfile {
    pub fn value_at(&self, t: f64) -> f64 {
        let first = self.knots[0];
        if t <= first.0 {
            return first.1;
        }
        let last = *self.knots.last().expect("profile has knots");
        if t >= last.0 {
            return last.1;
        }
        let k = self.knots.partition_point(|p| p.0 <= t) - 1;
        let (t0, v0) = self.knots[k];
        let (t1, v1) = self.knots[k + 1];
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (s2, s3) = (s * s, s * s * s);
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * v0
            + (s3 - 2.0 * s2 + s) * h * self.slopes[k]
            + (-2.0 * s3 + 3.0 * s2) * v1
            + (s3 - s2) * h * self.slopes[k + 1];
        v.clamp(0.0, 100.0)
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.1).collect()
    }

    /// Largest chord slope between consecutive knots, units/s.
    pub fn max_chord_slope(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
            .fold(0.0, f64::max)
    }
}

/// Profile for `seed`: a flat 2 s lead-in, then a C¹ monotone piecewise cubic
/// through 6–10 knots in [5, 95], containing at least one segment steeper
/// than 20 units/s.
pub fn generate_profile(seed: u64, duration: f64, rate_hz: f64) -> Result<ReferenceProfile> {
    if !(duration > LEAD_IN + 3.0) {
        return Err(Error::InvalidArgument(format!(
            "profile duration must exceed {} s, got {duration}",
            LEAD_IN + 3.0
        )));
    }
    if !(rate_hz > 0.0) {
        return Err(Error::InvalidArgument(format!("rate must be > 0, got {rate_hz}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let style = ProfileStyle::for_seed(seed);
    // (knot count, drift slope cap, fast length, fast change)
    let (n_knots, drift, fast_len, fast_delta) = match style {
        ProfileStyle::Slow => (rng.gen_range(6..=7), 4.0, 1.5, 33.0),
        ProfileStyle::FastDrop => (rng.gen_range(7..=9), 8.0, 2.5, 60.0),
        ProfileStyle::Mixed => (rng.gen_range(8..=10), 10.0, 1.5, 45.0),
    };
    let segments = n_knots - 1;
    let fast = rng.gen_range(1..segments - 1);
    let weights: Vec<f64> = (0..segments).map(|_| rng.gen_range(1.0..2.0)).collect();
    let rest: f64 = weights.iter().enumerate().filter(|(k, _)| *k != fast).map(|(_, w)| w).sum();
    let span = duration - LEAD_IN;
    let lengths: Vec<f64> = weights
        .iter()
        .enumerate()
        .map(|(k, w)| if k == fast { fast_len } else { w / rest * (span - fast_len) })
        .collect();

    let lead = match style {
        ProfileStyle::FastDrop => rng.gen_range(50.0..75.0),
        _ => rng.gen_range(30.0..70.0),
    };
    let mut knots = vec![(LEAD_IN, lead)];
    let mut t = LEAD_IN;
    for (k, len) in lengths.iter().enumerate() {
        let v = knots.last().unwrap().1;
        let next = if k + 1 == fast && style == ProfileStyle::FastDrop {
            90.0
        } else if k == fast {
            match style {
                ProfileStyle::FastDrop => 30.0,
                _ if v + fast_delta <= 95.0 && (v - fast_delta < 5.0 || rng.gen_bool(0.5)) => v + fast_delta,
                _ => v - fast_delta,
            }
        } else {
            (v + rng.gen_range(-1.0..1.0) * drift * len).clamp(5.0, 95.0)
        };
        t = if k + 1 == segments { duration } else { t + len };
        knots.push((t, next));
    }
    let slopes = monotone_slopes(&knots);
    let mut p = ReferenceProfile {
        label: format!("traj-{seed}"),
        seed,
        style,
        duration,
        rate_hz,
        knots,
        slopes,
        samples: Vec::new(),
    };
    let n = (duration * rate_hz).round() as usize;
    p.samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate_hz;
            (t, p.value_at(t))
        })
        .collect();
    Ok(p)
}
