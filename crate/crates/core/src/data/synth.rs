use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClipRecord, Condition};
use crate::dsp::AudioClip;
use crate::error::{invalid, Error, Result};

const HARMONICS: usize = 8;
const HARMONIC_DECAY: f64 = 0.7;
const NOISE_LEVEL: f64 = 0.05;
const PINK_GENERATORS: usize = 8;
const OUTPUT_GAIN: f64 = 0.4;
const EVENT_RATE_HZ: f64 = 4.0;
const BURST_SECS: f64 = 0.04;

/// How an anomalous clip departs from its machine's normal sound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnomalyKind {
    /// Random phase offsets on every harmonic at Poisson instants; the
    /// long-term magnitude spectrum is unchanged.
    PhaseJump,
    /// Fundamental scaled by `1 + strength`.
    Detune,
    /// Short white-noise gusts at Poisson instants.
    Burst,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 3] = [
        AnomalyKind::PhaseJump,
        AnomalyKind::Detune,
        AnomalyKind::Burst,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::PhaseJump => "phase_jump",
            AnomalyKind::Detune => "detune",
            AnomalyKind::Burst => "burst",
        }
    }

    pub fn default_strength(self) -> f64 {
        match self {
            AnomalyKind::PhaseJump => 1.0,
            AnomalyKind::Detune => 0.02,
            AnomalyKind::Burst => 0.5,
        }
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnomalyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                invalid(format!(
                    "unknown anomaly kind {s:?}; valid kinds: phase_jump, detune, burst"
                ))
            })
    }
}

/// Parameters of the synthetic benchmark. Machine `i` hums at
/// `fundamentals[i]` with eight harmonics decaying by 0.7, over pink noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub fundamentals: Vec<f64>,
    pub duration_secs: f64,
    pub sample_rate: u32,
    pub anomaly_kind: AnomalyKind,
    pub anomaly_strength: f64,
    pub machine_type: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            fundamentals: vec![100.0, 130.0, 170.0, 210.0],
            duration_secs: 3.0,
            sample_rate: 16000,
            anomaly_kind: AnomalyKind::PhaseJump,
            anomaly_strength: AnomalyKind::PhaseJump.default_strength(),
            machine_type: "synth".into(),
        }
    }
}

impl SynthSpec {
    /// Switches the anomaly kind and resets its strength to the kind's default.
    pub fn with_anomaly(mut self, kind: AnomalyKind) -> Self {
        self.anomaly_kind = kind;
        self.anomaly_strength = kind.default_strength();
        self
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_secs * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self, min_samples: usize) -> Result<()> {
        if self.fundamentals.is_empty() {
            return Err(invalid("synth spec needs at least one fundamental"));
        }
        for (i, a) in self.fundamentals.iter().enumerate() {
            if !(a.is_finite() && *a > 0.0) {
                return Err(invalid(format!("fundamental {a} must be positive")));
            }
            if self.fundamentals[..i].contains(a) {
                return Err(invalid(format!("fundamental {a} Hz is listed twice")));
            }
        }
        if self.sample_rate == 0 || !self.anomaly_strength.is_finite() {
            return Err(invalid("sample rate must be positive and strength finite"));
        }
        if self.num_samples() < min_samples.max(1) {
            return Err(Error::TooShort {
                what: "synthetic clip".into(),
                needed: min_samples,
                got: self.num_samples(),
            });
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one clip; independent of generation order.
pub fn clip_seed(seed: u64, condition: Condition, machine_id: usize, index: usize) -> u64 {
    let tag = match condition {
        Condition::Normal => 1,
        Condition::Anomaly => 2,
        Condition::Unknown => 3,
    };
    [tag, machine_id as u64, index as u64]
        .into_iter()
        .fold(splitmix(seed), |h, v| splitmix(h ^ v))
}

/// Poisson event times in seconds.
fn poisson_times(rng: &mut ChaCha8Rng, rate: f64, duration: f64) -> Vec<f64> {
    let mut times = Vec::new();
    let mut t = 0.0;
    loop {
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / rate;
        if t >= duration {
            return times;
        }
        times.push(t);
    }
}

/// Voss-McCartney pink noise scaled to unit variance.
fn pink_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut gens: [f64; PINK_GENERATORS] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let scale = (3.0 / PINK_GENERATORS as f64).sqrt();
    (0..n)
        .map(|i| {
            if i > 0 {
                let k = i.trailing_zeros() as usize;
                if k < PINK_GENERATORS {
                    gens[k] = rng.random_range(-1.0..1.0);
                }
            }
            gens.iter().sum::<f64>() * scale
        })
        .collect()
}

/// One clip of machine `machine_id`. Anomalous clips apply
/// `spec.anomaly_kind`.
pub fn synth_clip(
    spec: &SynthSpec,
    machine_id: usize,
    condition: Condition,
    index: usize,
) -> Result<AudioClip> {
    let f0 = *spec
        .fundamentals
        .get(machine_id)
        .ok_or_else(|| invalid(format!("machine id {machine_id} has no fundamental")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(clip_seed(spec.seed, condition, machine_id, index));
    let n = spec.num_samples();
    let sr = spec.sample_rate as f64;
    let duration = n as f64 / sr;
    let anomaly = (condition == Condition::Anomaly).then_some(spec.anomaly_kind);

    let phases: [f64; HARMONICS] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
    let f0 = if anomaly == Some(AnomalyKind::Detune) {
        f0 * (1.0 + spec.anomaly_strength)
    } else {
        f0
    };
    // Each phase-jump event shifts every harmonic by its own random offset.
    let jumps: Vec<(usize, [f64; HARMONICS])> = if anomaly == Some(AnomalyKind::PhaseJump) {
        poisson_times(&mut rng, EVENT_RATE_HZ, duration)
            .into_iter()
            .map(|t| {
                let offsets =
                    std::array::from_fn(|_| rng.random_range(-PI..PI) * spec.anomaly_strength);
                ((t * sr) as usize, offsets)
            })
            .collect()
    } else {
        Vec::new()
    };
    let bursts: Vec<usize> = if anomaly == Some(AnomalyKind::Burst) {
        poisson_times(&mut rng, EVENT_RATE_HZ, duration)
            .into_iter()
            .map(|t| (t * sr) as usize)
            .collect()
    } else {
        Vec::new()
    };

    let pink = pink_noise(&mut rng, n);
    let mut offsets = [0.0; HARMONICS];
    let mut next_jump = 0;
    let mut samples = Vec::with_capacity(n);
    for (i, noise) in pink.iter().enumerate() {
        while next_jump < jumps.len() && jumps[next_jump].0 == i {
            for (o, d) in offsets.iter_mut().zip(&jumps[next_jump].1) {
                *o += d;
            }
            next_jump += 1;
        }
        let t = i as f64 / sr;
        let mut x = 0.0;
        let mut amp = 1.0;
        for h in 0..HARMONICS {
            amp *= HARMONIC_DECAY;
            x += amp * (2.0 * PI * (h + 1) as f64 * f0 * t + phases[h] + offsets[h]).sin();
        }
        samples.push(x + NOISE_LEVEL * noise);
    }

    let burst_len = ((BURST_SECS * sr) as usize).max(2);
    for &start in &bursts {
        for j in 0..burst_len.min(n.saturating_sub(start)) {
            let envelope = (PI * j as f64 / burst_len as f64).sin().powi(2);
            samples[start + j] += spec.anomaly_strength * envelope * rng.random_range(-1.0..1.0);
        }
    }

    for s in &mut samples {
        *s = (*s * OUTPUT_GAIN).clamp(-1.0, 1.0);
    }
    AudioClip::new(samples, spec.sample_rate)
}

/// `count_per_id` clips for every machine id, ordered by id then index.
pub fn synth_generate(
    spec: &SynthSpec,
    count_per_id: usize,
    condition: Condition,
) -> Result<Vec<ClipRecord>> {
    synth_generate_range(spec, 0..count_per_id, condition)
}

/// Clips with per-id indices in `indices`; disjoint ranges give disjoint
/// clips, which is how train and test sets are kept apart.
pub fn synth_generate_range(
    spec: &SynthSpec,
    indices: Range<usize>,
    condition: Condition,
) -> Result<Vec<ClipRecord>> {
    spec.validate(1)?;
    let mut out = Vec::new();
    for id in 0..spec.fundamentals.len() {
        for index in indices.clone() {
            let anomaly_kind = (condition == Condition::Anomaly).then_some(spec.anomaly_kind);
            out.push(ClipRecord {
                clip: synth_clip(spec, id, condition, index)?,
                machine_type: spec.machine_type.clone(),
                machine_id: id,
                condition,
                anomaly_kind,
                source: format!(
                    "synth:seed={}:id={id}:{condition}:{}{index}",
                    spec.seed,
                    anomaly_kind.map(|k| format!("{k}:")).unwrap_or_default()
                ),
            });
        }
    }
    Ok(out)
}
